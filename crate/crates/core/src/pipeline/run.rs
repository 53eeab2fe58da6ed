use super::{scene_forward, AdamW, GridTransform, Pipeline, RunConfig, SceneInput};
use crate::dataset_eval::rng::{seeded, Stream};
use crate::dataset_eval::{hoi_map, Dataset, Detection, EvalReport, Scene};
use crate::detr_lite::{postprocess, Model, ModelParams};
use crate::error::{Error, Result};
use crate::matching_losses::{gt_targets, scene_context, scene_loss, FactorMask, Normalizers, Weighting};
use crate::numerics::{check_leaf, Graph, Tensor, Var};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub l_b: f64,
    pub l_u: f64,
    pub l_o: f64,
    pub l_ordis: f64,
}

impl LossBreakdown {
    fn add(&mut self, o: &LossBreakdown) {
        self.total += o.total;
        self.l_b += o.l_b;
        self.l_u += o.l_u;
        self.l_o += o.l_o;
        self.l_ordis += o.l_ordis;
    }

    fn scaled(&self, k: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.total * k,
            l_b: self.l_b * k,
            l_u: self.l_u * k,
            l_o: self.l_o * k,
            l_ordis: self.l_ordis * k,
        }
    }
}

struct BatchGraph {
    g: Graph,
    params: Model<Var>,
    total: Var,
    losses: LossBreakdown,
}

/// One graph for the whole batch: matching and Ω are computed from forward
/// values and enter as constants; normalizers count the batch's ground truths.
fn batch_graph(pipe: &Pipeline, params: &ModelParams, batch: &[(&SceneInput, &Scene)], weighting: Weighting) -> Result<BatchGraph> {
    let cfg = &pipe.config;
    let mut g = Graph::new();
    let pv = params.bind(&mut g);
    let mode = pipe.train_mode();
    let (pos, embed) = pipe.constants(&mut g, mode);
    let counts: Vec<usize> = batch.iter().map(|(_, s)| s.gts.len()).collect();
    let norm = Normalizers::for_batch(&counts, cfg.stack.n_q, cfg.loss.no_object_weight)?;
    let column_classes = &pipe.split.seen;
    let mut total: Option<Var> = None;
    let mut parts = Vec::new();
    for (input, scene) in batch {
        let fwd = scene_forward(&mut g, &pv, input, pos, embed, &cfg.stack, mode)?;
        let values = fwd.preds.values(&g);
        let gts = gt_targets(&scene.gts, &pipe.dataset.taxonomy, &pipe.train_columns)?;
        let ctx = scene_context(
            &values,
            gts,
            &pipe.over,
            &pipe.dataset.taxonomy,
            &pipe.seen_mask,
            column_classes,
            weighting,
            &cfg.loss,
        )?;
        let lv = scene_loss(&mut g, &fwd.preds, &ctx, &norm, pipe.dataset.taxonomy.n_objects(), &cfg.loss)?;
        total = Some(match total {
            None => lv.total,
            Some(t) => g.add(t, lv.total)?,
        });
        parts.push(lv);
    }
    let total = total.ok_or_else(|| Error::Data("empty batch".into()))?;
    let mut losses = LossBreakdown::default();
    for lv in &parts {
        losses.add(&LossBreakdown {
            total: g.value(lv.total).item()?,
            l_b: g.value(lv.l_b).item()?,
            l_u: g.value(lv.l_u).item()?,
            l_o: g.value(lv.l_o).item()?,
            l_ordis: g.value(lv.l_ordis).item()?,
        });
    }
    Ok(BatchGraph {
        g,
        params: pv,
        total,
        losses,
    })
}

/// Rescales all gradients together so their joint L2 norm is at most `max`.
/// A non-positive `max` disables clipping.
fn clip_global_norm(grads: &mut [Vec<f64>], max: f64) {
    if max <= 0.0 {
        return;
    }
    let norm = grads.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    if norm > max {
        let k = max / norm;
        grads.iter_mut().flatten().for_each(|x| *x *= k);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean over the epoch's batches.
    pub loss: LossBreakdown,
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub epochs: Vec<EpochRecord>,
}

/// Minibatch training with AdamW. Scene order is reshuffled every epoch
/// from the run seed.
pub fn train(pipe: &Pipeline, init: ModelParams, mut on_epoch: impl FnMut(&EpochRecord)) -> Result<TrainOutcome> {
    let cfg = &pipe.config;
    let weighting = cfg.weighting();
    let inputs = pipe.train.iter().map(|s| pipe.scene_input(s)).collect::<Result<Vec<_>>>()?;
    let mut params = init;
    let sizes: Vec<usize> = params.flatten().iter().map(|(_, t)| t.numel()).collect();
    let mut opt = AdamW::new(cfg.optim, &sizes);
    let mut rng = seeded(cfg.seed, Stream::Shuffle);
    let mut aug_rng = seeded(cfg.seed, Stream::Augment);
    let grid = cfg.stack.grid;
    let mut order: Vec<usize> = (0..inputs.len()).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lr = cfg.optim.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut views: Vec<(SceneInput, Scene)> = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (mut input, mut scene) = (inputs[i].clone(), pipe.train[i].clone());
                if cfg.augment {
                    let t = GridTransform::sample(&mut aug_rng, &scene.gts, grid);
                    input.v_b = t.apply_features(&input.v_b, grid);
                    scene.gts = t.apply_gts(&scene.gts, grid);
                }
                views.push((input, scene));
            }
            let batch: Vec<(&SceneInput, &Scene)> = views.iter().map(|(a, b)| (a, b)).collect();
            let mut bg = batch_graph(pipe, &params, &batch, weighting)?;
            if !bg.losses.total.is_finite() {
                return Err(Error::Numeric {
                    op: "train",
                    index: epoch,
                    detail: format!("non-finite loss in epoch {epoch}"),
                });
            }
            let grads = bg.g.backward(bg.total)?;
            let mut flat: Vec<Vec<f64>> = bg
                .params
                .flatten()
                .iter()
                .zip(&sizes)
                .map(|((_, v), &n)| grads.get(*v).map_or_else(|| vec![0.0; n], |g| g.data().to_vec()))
                .collect();
            clip_global_norm(&mut flat, cfg.optim.clip_norm);
            opt.begin_step();
            let mut k = 0;
            let mut failed = None;
            params.visit_mut(&mut |_, t| {
                if failed.is_none() {
                    failed = opt.update(k, t, &flat[k], lr).err();
                }
                k += 1;
            });
            if let Some(e) = failed {
                return Err(e);
            }
            sum.add(&bg.losses);
            batches += 1;
        }
        let rec = EpochRecord {
            epoch,
            lr,
            loss: sum.scaled(1.0 / batches as f64),
        };
        on_epoch(&rec);
        records.push(rec);
    }
    Ok(TrainOutcome {
        params,
        epochs: records,
    })
}

/// Eval-mode detections over `scenes` (full classifier) and their mAP.
pub fn evaluate(pipe: &Pipeline, params: &ModelParams, scenes: &[Scene]) -> Result<(EvalReport, Vec<Detection>)> {
    let cfg = &pipe.config;
    let mode = pipe.eval_mode();
    let mut dets = Vec::new();
    for (i, scene) in scenes.iter().enumerate() {
        let input = pipe.scene_input(scene)?;
        let mut g = Graph::new();
        let pv = params.bind(&mut g);
        let (pos, embed) = pipe.constants(&mut g, mode);
        let fwd = scene_forward(&mut g, &pv, &input, pos, embed, &cfg.stack, mode)?;
        let preds = fwd.preds.values(&g);
        dets.extend(postprocess(&preds, &pipe.dataset.taxonomy, i, cfg.top_n)?);
    }
    let gts: Vec<_> = scenes.iter().map(|s| s.gts.clone()).collect();
    let report = hoi_map(&dets, &gts, &pipe.seen_mask)?;
    Ok((report, dets))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamError {
    pub name: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub loss: f64,
    pub tensors: usize,
    pub scalars: usize,
    pub max_rel_err: f64,
    pub tol: f64,
    pub passed: bool,
    /// Worst coordinate of each tensor, largest error first.
    pub worst: Vec<ParamError>,
}

/// Compares the gradient of one batch loss with central differences for
/// every scalar of every parameter tensor.
pub fn gradcheck(pipe: &Pipeline, params: &ModelParams, h: f64, tol: f64) -> Result<GradcheckReport> {
    let cfg = &pipe.config;
    let n = cfg.gradcheck_scenes.min(pipe.train.len());
    let mut rng = seeded(cfg.seed, Stream::Gradcheck);
    let mut picked: Vec<usize> = Vec::with_capacity(n);
    while picked.len() < n {
        let i = rng.gen_range(0..pipe.train.len());
        if !picked.contains(&i) {
            picked.push(i);
        }
    }
    let inputs = picked.iter().map(|&i| pipe.scene_input(&pipe.train[i])).collect::<Result<Vec<_>>>()?;
    let batch: Vec<(&SceneInput, &Scene)> = inputs.iter().zip(picked.iter().map(|&i| &pipe.train[i])).collect();
    let mut bg = batch_graph(pipe, params, &batch, cfg.weighting())?;
    let grads = bg.g.backward(bg.total)?;
    let mut worst = Vec::new();
    let mut scalars = 0;
    let mut passed = tol > 0.0;
    for (name, var) in bg.params.flatten() {
        let value = bg.g.value(var);
        let analytic = match grads.get(var) {
            Some(t) => t.clone(),
            None => Tensor::zeros(value.shape())?,
        };
        let r = check_leaf(&bg.g, var, bg.total, &analytic, h, tol)?;
        scalars += analytic.numel();
        passed &= r.passed;
        worst.push(ParamError {
            name,
            index: r.worst_index,
            analytic: analytic.data()[r.worst_index],
            numeric: r.numeric[r.worst_index],
            rel_err: r.max_rel_err,
        });
    }
    worst.sort_by(|a, b| b.rel_err.total_cmp(&a.rel_err).then_with(|| a.name.cmp(&b.name)));
    Ok(GradcheckReport {
        loss: bg.losses.total,
        tensors: worst.len(),
        scalars,
        max_rel_err: worst.first().map_or(0.0, |w| w.rel_err),
        tol,
        passed,
        worst,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub factors: String,
    pub unseen: f64,
    pub seen: f64,
    pub full: f64,
}

/// One training run per non-empty factor subset, then the Ω ≡ 1 baseline,
/// all from the same initialization.
pub fn ablate(
    dataset: &Dataset,
    config: &RunConfig,
    masks: &[FactorMask],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut runs: Vec<(String, RunConfig)> = masks
        .iter()
        .map(|&m| {
            let mut c = config.clone();
            c.factors = m;
            c.focal_baseline = false;
            (m.label(), c)
        })
        .collect();
    let mut base = config.clone();
    base.focal_baseline = true;
    runs.push(("focal".into(), base));
    let mut rows = Vec::with_capacity(runs.len());
    for (label, cfg) in runs {
        let pipe = Pipeline::new(dataset.clone(), cfg)?;
        let init = ModelParams::init(&pipe.config.stack, dataset.taxonomy.n_objects(), pipe.config.seed)?;
        let out = train(&pipe, init, |_| {})?;
        let (report, _) = evaluate(&pipe, &out.params, &pipe.dataset.test)?;
        let row = AblationRow {
            factors: label,
            unseen: report.map_unseen,
            seen: report.map_seen,
            full: report.map_full,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}
