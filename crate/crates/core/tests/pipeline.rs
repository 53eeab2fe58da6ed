use funnel_hoi::dataset_eval::{Dataset, DatasetConfig, SplitSetting};
use funnel_hoi::detr_lite::{encode_checkpoint, ModelParams, StackConfig};
use funnel_hoi::pipeline::{evaluate, gradcheck, train, Pipeline, RunConfig};

fn tiny() -> (Dataset, RunConfig) {
    let ds = Dataset::generate(&DatasetConfig {
        c1: 8,
        grid: 2,
        train_scenes: 12,
        test_scenes: 8,
        ..DatasetConfig::default()
    })
    .unwrap();
    let cfg = RunConfig {
        stack: StackConfig {
            c1: 8,
            c2: 4,
            d: 16,
            grid: 2,
            n_q: 4,
            heads: 2,
            enc_layers: 1,
            inst_dec_layers: 1,
            inter_dec_layers: 1,
            ffn_dim: 8,
        },
        epochs: 2,
        ..RunConfig::toy()
    };
    (ds, cfg)
}

#[test]
fn training_is_deterministic() {
    let (ds, cfg) = tiny();
    let pipe = Pipeline::new(ds, cfg).unwrap();
    let init = || ModelParams::init(&pipe.config.stack, pipe.dataset.taxonomy.n_objects(), pipe.config.seed).unwrap();
    let a = train(&pipe, init(), |_| {}).unwrap();
    let b = train(&pipe, init(), |_| {}).unwrap();
    assert_eq!(a.epochs, b.epochs);
    assert_eq!(a.epochs.len(), 2);
    assert!(a.epochs.iter().all(|e| e.loss.total.is_finite()));
    assert_eq!(encode_checkpoint(&a.params.flatten()).unwrap(), encode_checkpoint(&b.params.flatten()).unwrap());
    assert_ne!(a.params, init());

    let (r1, d1) = evaluate(&pipe, &a.params, &pipe.dataset.test).unwrap();
    let (r2, d2) = evaluate(&pipe, &a.params, &pipe.dataset.test).unwrap();
    assert_eq!((r1.clone(), d1), (r2, d2));
    for m in [r1.map_seen, r1.map_unseen, r1.map_full] {
        assert!((0.0..=1.0).contains(&m));
    }
}

#[test]
fn tiny_stack_passes_gradcheck() {
    let (ds, cfg) = tiny();
    let pipe = Pipeline::new(ds, cfg).unwrap();
    let params = ModelParams::init(&pipe.config.stack, pipe.dataset.taxonomy.n_objects(), 3).unwrap();
    let r = gradcheck(&pipe, &params, 1e-5, 1e-4).unwrap();
    assert!(r.passed, "max rel err {} at {:?}", r.max_rel_err, r.worst.first());
    assert_eq!(r.tensors, params.flatten().len());
    assert_eq!(r.scalars, params.flatten().iter().map(|(_, t)| t.numel()).sum::<usize>());
}

#[test]
fn split_override_and_shape_checks() {
    let (ds, cfg) = tiny();
    let over = Pipeline::new(ds.clone(), RunConfig { split: Some(SplitSetting::Uc), ..cfg.clone() }).unwrap();
    assert_eq!(over.split.setting, SplitSetting::Uc);
    assert!(over.train.iter().flat_map(|s| &s.gts).all(|g| over.seen_mask[g.class]));
    let mut wrong = cfg;
    wrong.stack.grid = 3;
    assert!(Pipeline::new(ds, wrong).is_err());
}
