//! A small DETR-style stack: sinusoidal 2-D positions, a post-norm encoder,
//! an instance decoder chained into an interaction decoder, and heads for
//! HOI logits, object logits and the two boxes.

mod checkpoint;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, FHCK_MAGIC, FHCK_VERSION};

use crate::coattention::{CoAttention, CoAttentionParams};
use crate::dataset_eval::rng::{gaussian, seeded, SeededRng, Stream};
use crate::dataset_eval::{BBox, Detection, Taxonomy};
use crate::error::{Error, Result};
use crate::numerics::{sigmoid, Elementwise, Graph, ReduceKind, Tensor, Var, LN_EPS};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// CLIP-style multiplier on cosine HOI logits.
pub const LOGIT_SCALE: f64 = 1.0 / 0.07;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StackConfig {
    pub c1: usize,
    pub c2: usize,
    pub d: usize,
    /// Grid side; the encoder sees `grid²` tokens.
    pub grid: usize,
    pub n_q: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub inst_dec_layers: usize,
    pub inter_dec_layers: usize,
    pub ffn_dim: usize,
}

impl StackConfig {
    pub fn toy() -> Self {
        Self {
            c1: 32,
            c2: 16,
            d: 64,
            grid: 4,
            n_q: 8,
            heads: 4,
            enc_layers: 2,
            inst_dec_layers: 1,
            inter_dec_layers: 1,
            ffn_dim: 64,
        }
    }

    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            ("c1", self.c1),
            ("c2", self.c2),
            ("d", self.d),
            ("grid", self.grid),
            ("n_q", self.n_q),
            ("heads", self.heads),
            ("ffn_dim", self.ffn_dim),
        ];
        if let Some((f, _)) = all.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*f, "must be positive"));
        }
        if self.d != 2 * self.c1 {
            return Err(Error::config("d", format!("must equal 2*c1 = {}", 2 * self.c1)));
        }
        if self.c1 % self.heads != 0 {
            return Err(Error::config("heads", format!("{} does not divide c1 = {}", self.heads, self.c1)));
        }
        if self.c1 % 2 != 0 {
            return Err(Error::config("c1", "must be even for the positional encoding"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Linear<T> {
    /// in×out.
    pub w: T,
    pub b: T,
}

impl<T> Linear<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> Linear<U> {
        Linear {
            w: f(format!("{p}.w"), &self.w),
            b: f(format!("{p}.b"), &self.b),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        f(format!("{p}.w"), &mut self.w);
        f(format!("{p}.b"), &mut self.b);
    }
}

impl Linear<Tensor> {
    fn init(rng: &mut SeededRng, input: usize, output: usize) -> Result<Self> {
        let a = (6.0 / (input + output) as f64).sqrt();
        let w = (0..input * output).map(|_| rng.gen_range(-a..a)).collect();
        Ok(Self {
            w: Tensor::new(&[input, output], w)?,
            b: Tensor::zeros(&[output])?,
        })
    }
}

impl Linear<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let rows = g.shape(x)[0];
        let xw = g.matmul(x, self.w)?;
        let b = g.repeat(self.b, rows)?;
        g.add(xw, b)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Attention<T> {
    pub q: Linear<T>,
    pub k: Linear<T>,
    pub v: Linear<T>,
    pub o: Linear<T>,
}

impl<T> Attention<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> Attention<U> {
        Attention {
            q: self.q.map(&format!("{p}.q"), f),
            k: self.k.map(&format!("{p}.k"), f),
            v: self.v.map(&format!("{p}.v"), f),
            o: self.o.map(&format!("{p}.o"), f),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        self.q.visit_mut(&format!("{p}.q"), f);
        self.k.visit_mut(&format!("{p}.k"), f);
        self.v.visit_mut(&format!("{p}.v"), f);
        self.o.visit_mut(&format!("{p}.o"), f);
    }
}

impl Attention<Tensor> {
    fn init(rng: &mut SeededRng, c: usize) -> Result<Self> {
        Ok(Self {
            q: Linear::init(rng, c, c)?,
            k: Linear::init(rng, c, c)?,
            v: Linear::init(rng, c, c)?,
            o: Linear::init(rng, c, c)?,
        })
    }
}

impl Attention<Var> {
    /// Multi-head scaled dot-product attention. Returns the output and the
    /// per-head attention matrices (rows sum to one).
    pub fn forward(&self, g: &mut Graph, query: Var, key: Var, value: Var, heads: usize) -> Result<(Var, Vec<Var>)> {
        let q = self.q.forward(g, query)?;
        let k = self.k.forward(g, key)?;
        let v = self.v.forward(g, value)?;
        let c = g.shape(q)[1];
        let dh = c / heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut maps = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = g.slice(q, 1, h * dh, dh)?;
            let kh = g.slice(k, 1, h * dh, dh)?;
            let vh = g.slice(v, 1, h * dh, dh)?;
            let kt = g.transpose(kh)?;
            let s = g.matmul(qh, kt)?;
            let s = g.scale(s, scale)?;
            let a = g.softmax(s, 1)?;
            outs.push(g.matmul(a, vh)?);
            maps.push(a);
        }
        let cat = if heads == 1 { outs[0] } else { g.concat(&outs, 1)? };
        Ok((self.o.forward(g, cat)?, maps))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Ffn<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
}

impl<T> Ffn<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> Ffn<U> {
        Ffn {
            l1: self.l1.map(&format!("{p}.l1"), f),
            l2: self.l2.map(&format!("{p}.l2"), f),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        self.l1.visit_mut(&format!("{p}.l1"), f);
        self.l2.visit_mut(&format!("{p}.l2"), f);
    }
}

impl Ffn<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.relu(h)?;
        self.l2.forward(g, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<T> {
    pub attn: Attention<T>,
    pub ffn: Ffn<T>,
}

impl<T> EncoderLayer<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> EncoderLayer<U> {
        EncoderLayer {
            attn: self.attn.map(&format!("{p}.attn"), f),
            ffn: self.ffn.map(&format!("{p}.ffn"), f),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        self.attn.visit_mut(&format!("{p}.attn"), f);
        self.ffn.visit_mut(&format!("{p}.ffn"), f);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoderLayer<T> {
    pub self_attn: Attention<T>,
    pub cross_attn: Attention<T>,
    pub ffn: Ffn<T>,
}

impl<T> DecoderLayer<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> DecoderLayer<U> {
        DecoderLayer {
            self_attn: self.self_attn.map(&format!("{p}.self_attn"), f),
            cross_attn: self.cross_attn.map(&format!("{p}.cross_attn"), f),
            ffn: self.ffn.map(&format!("{p}.ffn"), f),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        self.self_attn.visit_mut(&format!("{p}.self_attn"), f);
        self.cross_attn.visit_mut(&format!("{p}.cross_attn"), f);
        self.ffn.visit_mut(&format!("{p}.ffn"), f);
    }
}

/// Three-layer perceptron with a sigmoid output.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxHead<T> {
    pub l1: Linear<T>,
    pub l2: Linear<T>,
    pub l3: Linear<T>,
}

impl<T> BoxHead<T> {
    pub fn map<U>(&self, p: &str, f: &mut impl FnMut(String, &T) -> U) -> BoxHead<U> {
        BoxHead {
            l1: self.l1.map(&format!("{p}.l1"), f),
            l2: self.l2.map(&format!("{p}.l2"), f),
            l3: self.l3.map(&format!("{p}.l3"), f),
        }
    }

    pub fn visit_mut(&mut self, p: &str, f: &mut impl FnMut(String, &mut T)) {
        self.l1.visit_mut(&format!("{p}.l1"), f);
        self.l2.visit_mut(&format!("{p}.l2"), f);
        self.l3.visit_mut(&format!("{p}.l3"), f);
    }
}

impl BoxHead<Var> {
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let h = self.l1.forward(g, x)?;
        let h = g.relu(h)?;
        let h = self.l2.forward(g, h)?;
        let h = g.relu(h)?;
        let o = self.l3.forward(g, h)?;
        g.sigmoid(o)
    }
}

/// Every trainable weight of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub osaca: CoAttention<T>,
    pub ovaca: CoAttention<T>,
    pub encoder: Vec<EncoderLayer<T>>,
    pub inst_decoder: Vec<DecoderLayer<T>>,
    pub inter_decoder: Vec<DecoderLayer<T>>,
    /// N_q×C1 learned query slots.
    pub queries: T,
    /// C1×d projection into the text space.
    pub w_proj: T,
    pub obj_head: Linear<T>,
    pub human_box: BoxHead<T>,
    pub object_box: BoxHead<T>,
}

pub type ModelParams = Model<Tensor>;

impl<T> Model<T> {
    pub fn map<U>(&self, f: &mut impl FnMut(String, &T) -> U) -> Model<U> {
        Model {
            osaca: self.osaca.map("osaca", f),
            ovaca: self.ovaca.map("ovaca", f),
            encoder: self.encoder.iter().enumerate().map(|(i, l)| l.map(&format!("encoder.{i}"), f)).collect(),
            inst_decoder: self
                .inst_decoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("inst_decoder.{i}"), f))
                .collect(),
            inter_decoder: self
                .inter_decoder
                .iter()
                .enumerate()
                .map(|(i, l)| l.map(&format!("inter_decoder.{i}"), f))
                .collect(),
            queries: f("queries".into(), &self.queries),
            w_proj: f("w_proj".into(), &self.w_proj),
            obj_head: self.obj_head.map("obj_head", f),
            human_box: self.human_box.map("human_box", f),
            object_box: self.object_box.map("object_box", f),
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(String, &mut T)) {
        self.osaca.visit_mut("osaca", f);
        self.ovaca.visit_mut("ovaca", f);
        for (i, l) in self.encoder.iter_mut().enumerate() {
            l.visit_mut(&format!("encoder.{i}"), f);
        }
        for (i, l) in self.inst_decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("inst_decoder.{i}"), f);
        }
        for (i, l) in self.inter_decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("inter_decoder.{i}"), f);
        }
        f("queries".into(), &mut self.queries);
        f("w_proj".into(), &mut self.w_proj);
        self.obj_head.visit_mut("obj_head", f);
        self.human_box.visit_mut("human_box", f);
        self.object_box.visit_mut("object_box", f);
    }

    /// Leaves in canonical order with their names.
    pub fn flatten(&self) -> Vec<(String, T)>
    where
        T: Clone,
    {
        let mut out = Vec::new();
        self.map(&mut |n, t| out.push((n, t.clone())));
        out
    }
}

impl ModelParams {
    pub fn init(cfg: &StackConfig, n_objects: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded(seed, Stream::Params);
        let c = cfg.c1;
        let osaca = CoAttentionParams::init(c, cfg.c2, &mut rng)?;
        let ovaca = CoAttentionParams::init(c, cfg.c2, &mut rng)?;
        let ffn = |rng: &mut SeededRng| -> Result<Ffn<Tensor>> {
            Ok(Ffn {
                l1: Linear::init(rng, c, cfg.ffn_dim)?,
                l2: Linear::init(rng, cfg.ffn_dim, c)?,
            })
        };
        let mut encoder = Vec::new();
        for _ in 0..cfg.enc_layers {
            encoder.push(EncoderLayer {
                attn: Attention::init(&mut rng, c)?,
                ffn: ffn(&mut rng)?,
            });
        }
        let dec = |n: usize, rng: &mut SeededRng| -> Result<Vec<DecoderLayer<Tensor>>> {
            (0..n)
                .map(|_| {
                    Ok(DecoderLayer {
                        self_attn: Attention::init(rng, c)?,
                        cross_attn: Attention::init(rng, c)?,
                        ffn: ffn(rng)?,
                    })
                })
                .collect()
        };
        let inst_decoder = dec(cfg.inst_dec_layers, &mut rng)?;
        let inter_decoder = dec(cfg.inter_dec_layers, &mut rng)?;
        let queries = Tensor::new(&[cfg.n_q, c], (0..cfg.n_q * c).map(|_| gaussian(&mut rng)).collect())?;
        let a = (1.0 / c as f64).sqrt();
        let w_proj = Tensor::new(&[c, cfg.d], (0..c * cfg.d).map(|_| rng.gen_range(-a..a)).collect())?;
        let obj_head = Linear::init(&mut rng, c, n_objects + 1)?;
        let boxes = |rng: &mut SeededRng| -> Result<BoxHead<Tensor>> {
            Ok(BoxHead {
                l1: Linear::init(rng, c, c)?,
                l2: Linear::init(rng, c, c)?,
                l3: Linear::init(rng, c, 4)?,
            })
        };
        let human_box = boxes(&mut rng)?;
        let object_box = boxes(&mut rng)?;
        Ok(Self {
            osaca,
            ovaca,
            encoder,
            inst_decoder,
            inter_decoder,
            queries,
            w_proj,
            obj_head,
            human_box,
            object_box,
        })
    }

    pub fn bind(&self, g: &mut Graph) -> Model<Var> {
        self.map(&mut |_, t| g.param(t.clone()))
    }

    pub fn num_scalars(&self) -> usize {
        let mut n = 0;
        self.map(&mut |_, t| n += t.numel());
        n
    }

    /// Rebuilds parameters from named tensors, checking names and shapes
    /// against `template`.
    pub fn from_named(template: &ModelParams, tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let expected = template.flatten();
        if expected.len() != tensors.len() {
            return Err(Error::Data(format!(
                "checkpoint holds {} tensors, model needs {}",
                tensors.len(),
                expected.len()
            )));
        }
        for ((en, et), (n, t)) in expected.iter().zip(&tensors) {
            if en != n || et.shape() != t.shape() {
                return Err(Error::Data(format!(
                    "checkpoint tensor `{n}` {:?} does not match `{en}` {:?}",
                    t.shape(),
                    et.shape()
                )));
            }
        }
        let mut it = tensors.into_iter().map(|(_, t)| t);
        Ok(template.map(&mut |_, _| it.next().expect("length checked")))
    }
}

/// Fixed 2-D sinusoidal positions, L×C1 with tokens in row-major grid order.
/// The first half of the channels encodes the row, the second half the column.
pub fn sinusoidal_positions(grid: usize, c1: usize) -> Result<Tensor> {
    if c1 < 2 || c1 % 2 != 0 {
        return Err(Error::config("c1", "must be even for the positional encoding"));
    }
    let half = c1 / 2;
    let mut data = Vec::with_capacity(grid * grid * c1);
    for t in 0..grid * grid {
        let coords = [(t / grid) as f64 + 1.0, (t % grid) as f64 + 1.0];
        for ch in 0..c1 {
            let (pos, i) = (coords[ch / half], ch % half);
            let freq = 10000f64.powf((2 * (i / 2)) as f64 / half as f64);
            data.push(if i % 2 == 0 { (pos / freq).sin() } else { (pos / freq).cos() });
        }
    }
    Tensor::new(&[grid * grid, c1], data)
}

/// Encoder output and its attention matrices.
pub struct Encoded {
    /// C1×L.
    pub f_e: Var,
    pub attention: Vec<Var>,
}

/// Post-norm self-attention encoder over the tokens of `v_b` (C1×L).
/// `pos` (L×C1) is added to the tokens once, at the input.
pub fn encode(g: &mut Graph, v_b: Var, pos: Option<Var>, layers: &[EncoderLayer<Var>], heads: usize) -> Result<Encoded> {
    let mut x = g.transpose(v_b)?;
    if let Some(p) = pos {
        x = g.add(x, p)?;
    }
    let mut attention = Vec::new();
    for l in layers {
        let (a, maps) = l.attn.forward(g, x, x, x, heads)?;
        attention.extend(maps);
        let r = g.add(x, a)?;
        x = g.layer_norm(r, 1, LN_EPS)?;
        let f = l.ffn.forward(g, x)?;
        let r = g.add(x, f)?;
        x = g.layer_norm(r, 1, LN_EPS)?;
    }
    Ok(Encoded {
        f_e: g.transpose(x)?,
        attention,
    })
}

fn decoder_stack(
    g: &mut Graph,
    mut t: Var,
    memory: Var,
    mem_keys: Var,
    layers: &[DecoderLayer<Var>],
    heads: usize,
    attention: &mut Vec<Var>,
) -> Result<Var> {
    for l in layers {
        let (a, maps) = l.self_attn.forward(g, t, t, t, heads)?;
        attention.extend(maps);
        let r = g.add(t, a)?;
        t = g.layer_norm(r, 1, LN_EPS)?;
        let (a, maps) = l.cross_attn.forward(g, t, mem_keys, memory, heads)?;
        attention.extend(maps);
        let r = g.add(t, a)?;
        t = g.layer_norm(r, 1, LN_EPS)?;
        let f = l.ffn.forward(g, t)?;
        let r = g.add(t, f)?;
        t = g.layer_norm(r, 1, LN_EPS)?;
    }
    Ok(t)
}

pub struct Decoded {
    /// N_q×C1 interaction embeddings.
    pub f_d: Var,
    /// Instance decoder output, N_q×C1.
    pub instance: Var,
    pub attention: Vec<Var>,
}

/// Query slots attend to `f_i` (C1×L) through the instance decoder; its
/// outputs then seed the interaction decoder over the same memory.
pub fn decode(g: &mut Graph, f_i: Var, pos: Option<Var>, params: &Model<Var>, heads: usize) -> Result<Decoded> {
    let memory = g.transpose(f_i)?;
    let mem_keys = match pos {
        Some(p) => g.add(memory, p)?,
        None => memory,
    };
    let mut attention = Vec::new();
    let inst = decoder_stack(g, params.queries, memory, mem_keys, &params.inst_decoder, heads, &mut attention)?;
    let f_d = decoder_stack(g, inst, memory, mem_keys, &params.inter_decoder, heads, &mut attention)?;
    Ok(Decoded {
        f_d,
        instance: inst,
        attention,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadMode {
    /// Classifier restricted to the seen classes.
    Train { seen: usize },
    /// Classifier over every class.
    Eval { classes: usize },
}

impl HeadMode {
    pub fn width(self) -> usize {
        match self {
            HeadMode::Train { seen } => seen,
            HeadMode::Eval { classes } => classes,
        }
    }
}

/// Graph handles of the prediction heads.
#[derive(Clone, Copy, Debug)]
pub struct PredictionVars {
    pub hoi_logits: Var,
    pub obj_logits: Var,
    pub human_box: Var,
    pub object_box: Var,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub hoi_logits: Tensor,
    pub obj_logits: Tensor,
    pub human_box: Tensor,
    pub object_box: Tensor,
}

impl PredictionVars {
    pub fn values(&self, g: &Graph) -> Predictions {
        Predictions {
            hoi_logits: g.value(self.hoi_logits).clone(),
            obj_logits: g.value(self.obj_logits).clone(),
            human_box: g.value(self.human_box).clone(),
            object_box: g.value(self.object_box).clone(),
        }
    }
}

/// Row-wise L2 normalization.
fn normalize_rows(g: &mut Graph, x: Var) -> Result<Var> {
    let (rows, cols) = (g.shape(x)[0], g.shape(x)[1]);
    let sq = g.elementwise(x, Elementwise::Square)?;
    let ss = g.reduce(sq, 1, ReduceKind::Sum)?;
    let ss = g.shift(ss, 1e-12)?;
    let n = g.elementwise(ss, Elementwise::Sqrt)?;
    let rep = g.repeat(n, cols)?;
    let rep = g.transpose(rep)?;
    debug_assert_eq!(g.shape(rep), &[rows, cols]);
    g.div(x, rep)
}

/// HOI logits are `LOGIT_SCALE · cos(f_d W_proj, class row)`; object logits
/// come from a linear head with a trailing no-object column; boxes from two
/// sigmoid perceptrons.
pub fn predict(g: &mut Graph, f_d: Var, class_embed: Var, params: &Model<Var>, mode: HeadMode) -> Result<PredictionVars> {
    let rows = g.shape(class_embed)[0];
    if rows != mode.width() {
        return Err(Error::Data(format!(
            "classifier has {rows} rows, {mode:?} needs {}",
            mode.width()
        )));
    }
    let proj = g.matmul(f_d, params.w_proj)?;
    let proj = normalize_rows(g, proj)?;
    let et = g.transpose(class_embed)?;
    let cos = g.matmul(proj, et)?;
    let hoi_logits = g.scale(cos, LOGIT_SCALE)?;
    let obj_logits = params.obj_head.forward(g, f_d)?;
    let human_box = params.human_box.forward(g, f_d)?;
    let object_box = params.object_box.forward(g, f_d)?;
    Ok(PredictionVars {
        hoi_logits,
        obj_logits,
        human_box,
        object_box,
    })
}

fn softmax_row(row: &[f64]) -> Vec<f64> {
    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = row.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Scores every (slot, class) pair as `sigmoid(hoi) · P(object of class)`
/// and keeps the best `top_n`. Ties go to the lower slot, then class.
pub fn postprocess(preds: &Predictions, taxonomy: &Taxonomy, scene: usize, top_n: usize) -> Result<Vec<Detection>> {
    let (n_q, c) = (preds.hoi_logits.rows(), preds.hoi_logits.cols());
    if c != taxonomy.n_classes() {
        return Err(Error::Data(format!("postprocess needs {} class columns, got {c}", taxonomy.n_classes())));
    }
    if preds.obj_logits.cols() != taxonomy.n_objects() + 1 {
        return Err(Error::Data("object head width does not match the taxonomy".into()));
    }
    let mut all = Vec::with_capacity(n_q * c);
    for s in 0..n_q {
        let p_obj = softmax_row(preds.obj_logits.row(s));
        for k in 0..c {
            let score = sigmoid(preds.hoi_logits.at(s, k)) * p_obj[taxonomy.hoi_classes[k].object_idx];
            all.push((s, k, score));
        }
    }
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then(a.0.cmp(&b.0)).then(a.1.cmp(&b.1)));
    all.truncate(top_n);
    Ok(all
        .into_iter()
        .map(|(s, k, score)| Detection {
            scene,
            human: BBox::from_slice(preds.human_box.row(s)),
            object: BBox::from_slice(preds.object_box.row(s)),
            class: k,
            score,
        })
        .collect())
}
