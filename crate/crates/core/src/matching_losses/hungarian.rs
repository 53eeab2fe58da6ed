use crate::error::{Error, Result};
use crate::numerics::Tensor;
use serde::Serialize;

/// Slot-to-ground-truth assignment of one scene.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MatchResult {
    /// `(slot, gt)` ordered by ground truth.
    pub pairs: Vec<(usize, usize)>,
    /// `η` of each pair, aligned with `pairs`.
    pub slot_cost: Vec<f64>,
    /// `η_I`, summed in ground-truth order.
    pub total: f64,
}

impl MatchResult {
    pub fn slot_of(&self, gt: usize) -> usize {
        self.pairs[gt].0
    }

    /// Matched ground truth per slot.
    pub fn gt_per_slot(&self, n_slots: usize) -> Vec<Option<usize>> {
        let mut out = vec![None; n_slots];
        for &(s, g) in &self.pairs {
            out[s] = Some(g);
        }
        out
    }
}

/// Minimum-cost assignment of every row to a distinct column (rows ≤ cols),
/// shortest augmenting paths with potentials. Returns the column per row.
fn solve(cost: &dyn Fn(usize, usize) -> f64, n: usize, m: usize) -> Vec<usize> {
    if n == 0 {
        return Vec::new();
    }
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=m {
                if !used[j] {
                    let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut row_to_col = vec![0; n];
    for j in 1..=m {
        if p[j] != 0 {
            row_to_col[p[j] - 1] = j - 1;
        }
    }
    row_to_col
}

fn optimum(cost: &Tensor, gts: &[usize], slots: &[usize]) -> f64 {
    let f = |i: usize, j: usize| cost.at(slots[j], gts[i]);
    let a = solve(&f, gts.len(), slots.len());
    a.iter().enumerate().map(|(i, &j)| f(i, j)).sum()
}

/// Optimal injective assignment of the G columns (ground truths) of an
/// N_q×G cost matrix to its rows (slots).
///
/// Among optimal assignments, ground truths are visited in order and each
/// takes the smallest slot that still admits an optimal completion.
pub fn hungarian(cost: &Tensor) -> Result<MatchResult> {
    if cost.rank() != 2 {
        return Err(Error::shape("hungarian", cost.shape(), &[0, 0]));
    }
    let (n_q, g) = (cost.rows(), cost.cols());
    if g > n_q {
        return Err(Error::Data(format!("{g} ground truths exceed {n_q} slots")));
    }
    if let Some(i) = cost.data().iter().position(|x| !x.is_finite()) {
        return Err(Error::Numeric {
            op: "hungarian",
            index: i,
            detail: "non-finite cost".into(),
        });
    }
    let all_gts: Vec<usize> = (0..g).collect();
    let all_slots: Vec<usize> = (0..n_q).collect();
    let best = optimum(cost, &all_gts, &all_slots);
    let tol = 1e-9 * (1.0 + best.abs());

    let mut free = all_slots;
    let mut fixed = 0.0;
    let mut pairs = Vec::with_capacity(g);
    for gt in 0..g {
        let rest_gts: Vec<usize> = (gt + 1..g).collect();
        let mut chosen = None;
        for (pos, &s) in free.iter().enumerate() {
            let others: Vec<usize> = free.iter().copied().filter(|&x| x != s).collect();
            let here = fixed + cost.at(s, gt) + optimum(cost, &rest_gts, &others);
            if here <= best + tol {
                chosen = Some(pos);
                break;
            }
        }
        let pos = chosen.expect("an optimal completion always exists");
        let s = free.remove(pos);
        fixed += cost.at(s, gt);
        pairs.push((s, gt));
    }
    let slot_cost: Vec<f64> = pairs.iter().map(|&(s, gt)| cost.at(s, gt)).collect();
    let total = slot_cost.iter().sum();
    Ok(MatchResult { pairs, slot_cost, total })
}
