//! Asymmetric co-attention: one visual grid probed by several semantic
//! candidates with shared weights.
//!
//! Shapes: `v_b` is C1×L, the global guide and every candidate are reshaped
//! to C1×2, and each candidate yields a C1×L fused map. The probe output is
//! the mean of the per-candidate maps.

use crate::dataset_eval::rng::SeededRng;
use crate::error::{Error, Result};
use crate::numerics::{Graph, ReduceKind, Tensor, Var, LN_EPS};
use rand::Rng;
use std::cmp::Ordering;

/// Weights of one co-attention block.
#[derive(Clone, Debug, PartialEq)]
pub struct CoAttention<T> {
    pub w_v: T,
    pub w_l: T,
    pub w1: T,
    pub w2: T,
    pub w3: T,
    pub w4: T,
    pub w5: T,
    pub w6: T,
}

pub type CoAttentionParams = CoAttention<Tensor>;

impl<T> CoAttention<T> {
    pub fn map<U>(&self, prefix: &str, f: &mut impl FnMut(String, &T) -> U) -> CoAttention<U> {
        CoAttention {
            w_v: f(format!("{prefix}.w_v"), &self.w_v),
            w_l: f(format!("{prefix}.w_l"), &self.w_l),
            w1: f(format!("{prefix}.w1"), &self.w1),
            w2: f(format!("{prefix}.w2"), &self.w2),
            w3: f(format!("{prefix}.w3"), &self.w3),
            w4: f(format!("{prefix}.w4"), &self.w4),
            w5: f(format!("{prefix}.w5"), &self.w5),
            w6: f(format!("{prefix}.w6"), &self.w6),
        }
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut impl FnMut(String, &mut T)) {
        f(format!("{prefix}.w_v"), &mut self.w_v);
        f(format!("{prefix}.w_l"), &mut self.w_l);
        f(format!("{prefix}.w1"), &mut self.w1);
        f(format!("{prefix}.w2"), &mut self.w2);
        f(format!("{prefix}.w3"), &mut self.w3);
        f(format!("{prefix}.w4"), &mut self.w4);
        f(format!("{prefix}.w5"), &mut self.w5);
        f(format!("{prefix}.w6"), &mut self.w6);
    }
}

/// Shapes of the eight matrices, in field order.
pub fn coattention_shapes(c1: usize, c2: usize) -> [[usize; 2]; 8] {
    [[c1, c2], [c1, c2], [2, c2], [c1, c2], [c1, c2], [2, c2], [c1, c2], [c1, c2]]
}

impl CoAttentionParams {
    /// Uniform in ±sqrt(1/C1).
    pub fn init(c1: usize, c2: usize, rng: &mut SeededRng) -> Result<Self> {
        let a = (1.0 / c1 as f64).sqrt();
        let mut mats = coattention_shapes(c1, c2).into_iter().map(|s| {
            let data = (0..s[0] * s[1]).map(|_| rng.gen_range(-a..a)).collect();
            Tensor::new(&s, data)
        });
        let mut next = || mats.next().expect("eight shapes");
        Ok(Self {
            w_v: next()?,
            w_l: next()?,
            w1: next()?,
            w2: next()?,
            w3: next()?,
            w4: next()?,
            w5: next()?,
            w6: next()?,
        })
    }

    pub fn zeros(c1: usize, c2: usize) -> Result<Self> {
        let z = |s: [usize; 2]| Tensor::zeros(&s);
        let s = coattention_shapes(c1, c2);
        Ok(Self {
            w_v: z(s[0])?,
            w_l: z(s[1])?,
            w1: z(s[2])?,
            w2: z(s[3])?,
            w3: z(s[4])?,
            w4: z(s[5])?,
            w5: z(s[6])?,
            w6: z(s[7])?,
        })
    }

    /// Records the weights as trainable leaves.
    pub fn bind(&self, g: &mut Graph) -> CoAttention<Var> {
        self.map("", &mut |_, t| g.param(t.clone()))
    }

    /// Records the weights as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> CoAttention<Var> {
        self.map("", &mut |_, t| g.constant(t.clone()))
    }
}

/// Element `i` of `v` goes to row `i mod C1`, column `i div C1`.
pub fn reshape_guide(v: &[f64], c1: usize) -> Result<Tensor> {
    if c1 == 0 || v.len() != 2 * c1 {
        return Err(Error::config("c1", format!("vector of length {} cannot be reshaped to {c1}x2", v.len())));
    }
    let mut data = vec![0.0; 2 * c1];
    for (i, &x) in v.iter().enumerate() {
        data[(i % c1) * 2 + i / c1] = x;
    }
    Tensor::new(&[c1, 2], data)
}

/// Inverse of [`reshape_guide`].
pub fn flatten_guide(t: &Tensor) -> Vec<f64> {
    let c1 = t.rows();
    (0..2 * c1).map(|i| t.at(i % c1, i / c1)).collect()
}

/// Candidate-independent products of one probe.
struct ProbeContext {
    v_b: Var,
    v_bt: Var,
    /// (W_vᵀ v_b)ᵀ, L×C2.
    vis_proj: Var,
    /// v_bᵀ v_c2, L×2.
    guide_aff: Var,
    /// v_c2ᵀ, 2×C1.
    v_c2t: Var,
}

impl ProbeContext {
    fn new(g: &mut Graph, v_b: Var, v_c2: Var, p: &CoAttention<Var>) -> Result<Self> {
        let v_bt = g.transpose(v_b)?;
        let vis_proj = g.matmul(v_bt, p.w_v)?;
        let guide_aff = g.matmul(v_bt, v_c2)?;
        let v_c2t = g.transpose(v_c2)?;
        Ok(Self {
            v_b,
            v_bt,
            vis_proj,
            guide_aff,
            v_c2t,
        })
    }
}

/// Intermediate maps of one candidate.
#[derive(Clone, Copy, Debug)]
pub struct CandidateMaps {
    /// L×2 affinity.
    pub gamma: Var,
    /// C1×L, rows sum to one.
    pub f1: Var,
    pub f2: Var,
    /// Channel-normalized `f1 + f2`, C1×L.
    pub fused: Var,
}

fn check2(op: &'static str, g: &Graph, v: Var, rows: usize, cols: usize) -> Result<()> {
    if g.shape(v) != [rows, cols] {
        return Err(Error::shape(op, g.shape(v), &[rows, cols]));
    }
    Ok(())
}

/// `Γ = (W_vᵀ v_b)ᵀ (W_lᵀ cand)`, L×2.
pub fn affinity(g: &mut Graph, v_b: Var, cand: Var, p: &CoAttention<Var>) -> Result<Var> {
    let v_bt = g.transpose(v_b)?;
    let vis = g.matmul(v_bt, p.w_v)?;
    affinity_from(g, vis, cand, p)
}

fn affinity_from(g: &mut Graph, vis_proj: Var, cand: Var, p: &CoAttention<Var>) -> Result<Var> {
    let w_lt = g.transpose(p.w_l)?;
    let sem = g.matmul(w_lt, cand)?;
    g.matmul(vis_proj, sem)
}

fn candidate_maps(g: &mut Graph, ctx: &ProbeContext, cand: Var, p: &CoAttention<Var>) -> Result<CandidateMaps> {
    let c1 = g.shape(ctx.v_b)[0];
    check2("coattend_candidate", g, cand, c1, 2)?;
    let gamma = affinity_from(g, ctx.vis_proj, cand, p)?;

    let s = g.add(ctx.guide_aff, gamma)?;
    let p1 = g.matmul(s, p.w1)?;
    let gv = g.matmul(gamma, ctx.v_c2t)?;
    let s2 = g.add(ctx.v_bt, gv)?;
    let p2 = g.matmul(s2, p.w2)?;
    let cand_t = g.transpose(cand)?;
    let ct_w3 = g.matmul(cand_t, p.w3)?;
    let q1 = g.matmul(gamma, ct_w3)?;
    let vc = g.matmul(ctx.v_c2t, cand)?;
    let vc_t = g.transpose(vc)?;
    let gvc = g.matmul(gamma, vc_t)?;
    let q2 = g.matmul(gvc, p.w4)?;

    let f1 = summarize(g, p1, q1, p.w5)?;
    let f2 = summarize(g, p2, q2, p.w6)?;
    let sum = g.add(f1, f2)?;
    let fused = g.layer_norm(sum, 0, LN_EPS)?;
    Ok(CandidateMaps { gamma, f1, f2, fused })
}

/// `softmax(W · tanh(P + Q)ᵀ)` over the spatial axis.
fn summarize(g: &mut Graph, pm: Var, qm: Var, w: Var) -> Result<Var> {
    let pq = g.add(pm, qm)?;
    let r = g.tanh(pq)?;
    let rt = g.transpose(r)?;
    let logits = g.matmul(w, rt)?;
    g.softmax(logits, 1)
}

/// Fused C1×L map of a single candidate.
pub fn coattend_candidate(g: &mut Graph, v_b: Var, v_c2: Var, cand: Var, p: &CoAttention<Var>) -> Result<CandidateMaps> {
    let c1 = g.shape(v_b).first().copied().unwrap_or(0);
    check2("coattend_candidate", g, v_c2, c1, 2)?;
    let ctx = ProbeContext::new(g, v_b, v_c2, p)?;
    candidate_maps(g, &ctx, cand, p)
}

/// Graph handles of a probe.
#[derive(Clone, Debug)]
pub struct ProbeVars {
    pub map: Var,
    pub candidates: Vec<CandidateMaps>,
}

/// Tensor form of a probe.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbeOutput {
    /// C1×L.
    pub map: Tensor,
    /// N×C1×L.
    pub per_candidate_maps: Tensor,
}

impl ProbeVars {
    pub fn output(&self, g: &Graph) -> Result<ProbeOutput> {
        let first = g.value(self.candidates[0].fused);
        let mut data = Vec::with_capacity(first.numel() * self.candidates.len());
        for c in &self.candidates {
            data.extend_from_slice(g.value(c.fused).data());
        }
        let shape = [self.candidates.len(), first.rows(), first.cols()];
        Ok(ProbeOutput {
            map: g.value(self.map).clone(),
            per_candidate_maps: Tensor::new(&shape, data)?,
        })
    }
}

/// Mean of the per-candidate fused maps.
pub fn probe(g: &mut Graph, v_b: Var, v_c2: Var, candidates: &[Var], p: &CoAttention<Var>) -> Result<ProbeVars> {
    if candidates.is_empty() {
        return Err(Error::Data("probe needs at least one candidate".into()));
    }
    let c1 = g.shape(v_b).first().copied().unwrap_or(0);
    check2("probe", g, v_c2, c1, 2)?;
    let ctx = ProbeContext::new(g, v_b, v_c2, p)?;
    let maps = candidates
        .iter()
        .map(|&c| candidate_maps(g, &ctx, c, p))
        .collect::<Result<Vec<_>>>()?;
    // Averaged in a canonical candidate order so the mean is bit-for-bit
    // invariant to how the candidates were listed.
    let mut order: Vec<usize> = (0..candidates.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (g.value(candidates[a]).data(), g.value(candidates[b]).data());
        x.iter().zip(y).map(|(p, q)| p.total_cmp(q)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
    });
    let fused: Vec<Var> = order.iter().map(|&i| maps[i].fused).collect();
    let stacked = g.stack(&fused)?;
    let map = g.reduce(stacked, 0, ReduceKind::Mean)?;
    Ok(ProbeVars { map, candidates: maps })
}

/// Reshaped candidate constants for the rows of an embedding table.
pub fn candidate_tensors(vectors: &[&[f64]], c1: usize) -> Result<Vec<Tensor>> {
    vectors.iter().map(|v| reshape_guide(v, c1)).collect()
}

/// Object-specific probe: `v_b` against the nominated objects.
pub fn osaca(g: &mut Graph, v_b: Var, v_c2: Var, objects: &[Var], p: &CoAttention<Var>) -> Result<ProbeVars> {
    probe(g, v_b, v_c2, objects, p)
}

/// Object-conditional verb probe: `(v_b + F_o)` against the nominated verbs.
pub fn ovaca(g: &mut Graph, v_b: Var, f_o: Var, v_c2: Var, verbs: &[Var], p: &CoAttention<Var>) -> Result<ProbeVars> {
    let v_oc = g.add(v_b, f_o)?;
    probe(g, v_oc, v_c2, verbs, p)
}

/// `F_i = F_a + F_e`.
pub fn interaction_encoding(g: &mut Graph, f_a: Var, f_e: Var) -> Result<Var> {
    g.add(f_a, f_e)
}

/// Runs a probe on plain tensors with frozen weights.
pub fn probe_values(v_b: &Tensor, v_c2: &Tensor, candidates: &[Tensor], p: &CoAttentionParams) -> Result<ProbeOutput> {
    let mut g = Graph::new();
    let w = p.bind_frozen(&mut g);
    let vb = g.constant(v_b.clone());
    let vc = g.constant(v_c2.clone());
    let cands: Vec<Var> = candidates.iter().map(|c| g.constant(c.clone())).collect();
    probe(&mut g, vb, vc, &cands, &w)?.output(&g)
}
