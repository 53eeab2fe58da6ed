//! The full detector: nominations, the two co-attention probes, the
//! encoder/decoder stack and the heads, wired to the loss for training,
//! evaluation, gradient checking and factor ablation.

mod augment;
mod optim;
mod run;

pub use augment::GridTransform;
pub use optim::{AdamW, OptimConfig};
pub use run::{
    ablate, evaluate, gradcheck, train, AblationRow, EpochRecord, GradcheckReport, LossBreakdown, ParamError,
    TrainOutcome,
};

use crate::coattention::{osaca, ovaca, reshape_guide, ProbeVars};
use crate::dataset_eval::{zs_split, Dataset, Scene, SplitSetting, ZsSplit};
use crate::detr_lite::{decode, encode, predict, sinusoidal_positions, HeadMode, Model, PredictionVars, StackConfig};
use crate::error::{Error, Result};
use crate::matching_losses::{FactorMask, LossConfig, Weighting};
use crate::nominators::{nominate, NominationConfig, Nominations};
use crate::numerics::{Graph, Tensor, Var};
use crate::semantics::{hoi_class_embedding, over_matrix, OverMatrix};
use serde::{Deserialize, Serialize};

/// Everything a command needs besides the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub stack: StackConfig,
    pub k_o: usize,
    pub k_a: usize,
    /// Verbs related to each nominated object.
    pub k: usize,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Overrides the split stored with the dataset.
    #[serde(default)]
    pub split: Option<SplitSetting>,
    pub factors: FactorMask,
    /// Train with Ω ≡ 1.
    #[serde(default)]
    pub focal_baseline: bool,
    pub top_n: usize,
    /// Scenes in the gradient-check batch.
    pub gradcheck_scenes: usize,
    /// Random grid flips and shifts of training scenes.
    #[serde(default)]
    pub augment: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            stack: StackConfig {
                c1: 256,
                c2: 64,
                d: 512,
                grid: 16,
                n_q: 64,
                heads: 8,
                enc_layers: 6,
                inst_dec_layers: 3,
                inter_dec_layers: 3,
                ffn_dim: 2048,
            },
            k_o: 5,
            k_a: 5,
            k: 10,
            loss: LossConfig::default(),
            optim: OptimConfig::default(),
            epochs: 90,
            batch_size: 8,
            seed: 7,
            split: None,
            factors: FactorMask::ALL,
            focal_baseline: false,
            top_n: 100,
            gradcheck_scenes: 1,
            augment: true,
        }
    }
}

impl RunConfig {
    /// Desk-scale settings for the synthetic toy dataset.
    pub fn toy() -> Self {
        Self {
            stack: StackConfig::toy(),
            optim: OptimConfig::toy(),
            epochs: 30,
            batch_size: 4,
            ..Self::default()
        }
    }

    pub fn weighting(&self) -> Weighting {
        if self.focal_baseline {
            Weighting::Focal
        } else {
            Weighting::Ordis(self.factors)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.stack.validate()?;
        for (f, v) in [
            ("k_o", self.k_o),
            ("k_a", self.k_a),
            ("k", self.k),
            ("batch_size", self.batch_size),
            ("top_n", self.top_n),
            ("gradcheck_scenes", self.gradcheck_scenes),
        ] {
            if v == 0 {
                return Err(Error::config(f, "must be positive"));
            }
        }
        self.optim.validate()?;
        let l = &self.loss;
        for (f, v) in [
            ("loss.lambda_b", l.lambda_b),
            ("loss.lambda_u", l.lambda_u),
            ("loss.lambda_o", l.lambda_o),
            ("loss.lambda_c", l.lambda_c),
            ("loss.gamma", l.gamma),
            ("loss.kappa", l.kappa),
            ("loss.no_object_weight", l.no_object_weight),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(f, "must be finite and non-negative"));
            }
        }
        if !(0.0..=1.0).contains(&l.alpha) {
            return Err(Error::config("loss.alpha", "must lie in [0, 1]"));
        }
        if !(l.eps1 > 0.0) || !(l.eps2 >= 0.0) {
            return Err(Error::config("loss.eps1", "eps1 must be positive and eps2 non-negative"));
        }
        Ok(())
    }

    fn nomination(&self, person_idx: usize) -> NominationConfig {
        NominationConfig {
            k_o: self.k_o,
            k_a: self.k_a,
            k: self.k,
            person_idx,
        }
    }
}

/// Per-scene constants: the grid features, the reshaped guide and the
/// nominated candidates.
#[derive(Clone, Debug)]
pub struct SceneInput {
    pub v_b: Tensor,
    /// C1×2.
    pub v_c2: Tensor,
    pub nominations: Nominations,
    pub objects: Vec<Tensor>,
    pub verbs: Vec<Tensor>,
}

/// Dataset-level constants shared by every forward pass.
pub struct Pipeline {
    pub dataset: Dataset,
    pub config: RunConfig,
    pub split: ZsSplit,
    pub seen_mask: Vec<bool>,
    pub over: OverMatrix,
    /// C×d.
    pub class_embed: Tensor,
    /// S×d, rows in seen-class order.
    pub seen_embed: Tensor,
    /// Classifier column of each class in training mode.
    pub train_columns: Vec<Option<usize>>,
    pub positions: Tensor,
    /// Training scenes restricted to the seen classes of `split`.
    pub train: Vec<Scene>,
}

impl Pipeline {
    pub fn new(dataset: Dataset, config: RunConfig) -> Result<Self> {
        config.validate()?;
        let dc = &dataset.config;
        if dc.c1 != config.stack.c1 || dc.grid != config.stack.grid {
            return Err(Error::Data(format!(
                "dataset has c1={} grid={}, model expects c1={} grid={}",
                dc.c1, dc.grid, config.stack.c1, config.stack.grid
            )));
        }
        let n_classes = dataset.taxonomy.n_classes();
        let split = match config.split {
            Some(s) if s != dataset.split.setting => zs_split(&dataset.taxonomy, s, dc.seed, &dc.split_lists)?,
            _ => dataset.split.clone(),
        };
        let seen_mask = split.seen_mask(n_classes);
        let train: Vec<Scene> = dataset
            .train
            .iter()
            .filter_map(|s| {
                let gts: Vec<_> = s.gts.iter().copied().filter(|g| seen_mask[g.class]).collect();
                (!gts.is_empty()).then(|| Scene {
                    v_b: s.v_b.clone(),
                    v_c: s.v_c.clone(),
                    gts,
                })
            })
            .collect();
        if train.is_empty() {
            return Err(Error::Data("no training scene has a seen class".into()));
        }
        let over = over_matrix(&dataset.objects, &dataset.actions)?;
        let class_embed = hoi_class_embedding(&dataset.taxonomy, &dataset.objects, &dataset.actions)?;
        let d = class_embed.cols();
        let mut seen = Vec::with_capacity(split.n_seen() * d);
        let mut train_columns = vec![None; n_classes];
        for (j, &c) in split.seen.iter().enumerate() {
            seen.extend_from_slice(class_embed.row(c));
            train_columns[c] = Some(j);
        }
        let seen_embed = Tensor::new(&[split.n_seen(), d], seen)?;
        let positions = sinusoidal_positions(config.stack.grid, config.stack.c1)?;
        Ok(Self {
            dataset,
            config,
            split,
            seen_mask,
            over,
            class_embed,
            seen_embed,
            train_columns,
            positions,
            train,
        })
    }

    pub fn scene_input(&self, scene: &Scene) -> Result<SceneInput> {
        let c1 = self.config.stack.c1;
        let ds = &self.dataset;
        let nominations = nominate(
            &ds.objects,
            &ds.actions,
            &self.over,
            scene.v_c.data(),
            self.config.nomination(ds.taxonomy.person_object_idx),
        )?;
        let objects = nominations
            .objects
            .indices
            .iter()
            .map(|&o| reshape_guide(ds.objects.vector(o), c1))
            .collect::<Result<_>>()?;
        let verbs = nominations
            .actions
            .indices
            .iter()
            .map(|&a| reshape_guide(ds.actions.vector(a), c1))
            .collect::<Result<_>>()?;
        Ok(SceneInput {
            v_b: scene.v_b.clone(),
            v_c2: reshape_guide(scene.v_c.data(), c1)?,
            nominations,
            objects,
            verbs,
        })
    }

    pub fn train_mode(&self) -> HeadMode {
        HeadMode::Train {
            seen: self.split.n_seen(),
        }
    }

    pub fn eval_mode(&self) -> HeadMode {
        HeadMode::Eval {
            classes: self.dataset.taxonomy.n_classes(),
        }
    }

    /// Constant handles for the positions and the classifier of `mode`.
    pub fn constants(&self, g: &mut Graph, mode: HeadMode) -> (Var, Var) {
        let pos = g.constant(self.positions.clone());
        let embed = match mode {
            HeadMode::Train { .. } => self.seen_embed.clone(),
            HeadMode::Eval { .. } => self.class_embed.clone(),
        };
        (pos, g.constant(embed))
    }
}

/// Graph handles of one scene's forward pass.
pub struct SceneForward {
    pub f_o: ProbeVars,
    pub f_a: ProbeVars,
    pub f_e: Var,
    pub f_d: Var,
    pub preds: PredictionVars,
}

/// `F_o = OSACA(v_b)`, `F_a = OVACA(v_b + F_o)`, `F_i = F_a + F_e`, then the
/// decoders and heads.
pub fn scene_forward(
    g: &mut Graph,
    params: &Model<Var>,
    input: &SceneInput,
    pos: Var,
    class_embed: Var,
    stack: &StackConfig,
    mode: HeadMode,
) -> Result<SceneForward> {
    let v_b = g.constant(input.v_b.clone());
    let v_c2 = g.constant(input.v_c2.clone());
    let objects: Vec<Var> = input.objects.iter().map(|t| g.constant(t.clone())).collect();
    let verbs: Vec<Var> = input.verbs.iter().map(|t| g.constant(t.clone())).collect();
    let f_o = osaca(g, v_b, v_c2, &objects, &params.osaca)?;
    let f_a = ovaca(g, v_b, f_o.map, v_c2, &verbs, &params.ovaca)?;
    let enc = encode(g, v_b, Some(pos), &params.encoder, stack.heads)?;
    let f_i = g.add(f_a.map, enc.f_e)?;
    let dec = decode(g, f_i, Some(pos), params, stack.heads)?;
    let preds = predict(g, dec.f_d, class_embed, params, mode)?;
    Ok(SceneForward {
        f_o,
        f_a,
        f_e: enc.f_e,
        f_d: dec.f_d,
        preds,
    })
}
