//! Frozen top-down nomination of scene objects and the verbs they afford.

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::semantics::{EmbeddingTable, OverMatrix};
use serde::Serialize;
use std::cmp::Ordering;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ObjectNomination {
    /// The `k_o` nominated objects by descending score, then the person index.
    pub indices: Vec<usize>,
    /// Scores of the nominated objects; the person entry has none.
    pub scores: Vec<f64>,
}

impl ObjectNomination {
    /// Nominated objects without the forced person entry.
    pub fn nominated(&self) -> &[usize] {
        &self.indices[..self.scores.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ActionNomination {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
    /// Object whose row gave each verb its score.
    pub provenance: Vec<usize>,
}

/// Descending score; `+ 0.0` folds −0 into +0 so equal scores tie.
fn desc(a: f64, b: f64) -> Ordering {
    (b + 0.0).total_cmp(&(a + 0.0))
}

fn by_score_then_index(a: &(usize, f64), b: &(usize, f64)) -> Ordering {
    desc(a.1, b.1).then(a.0.cmp(&b.0))
}

fn check_vc(table: &EmbeddingTable, v_c: &[f64]) -> Result<()> {
    if v_c.len() != table.dim() {
        return Err(Error::shape("nominate", &[table.dim()], &[v_c.len()]));
    }
    Ok(())
}

/// `S_os = L_oᵀ v_c` over every non-person object; the top `k_o` are kept
/// and the person index is appended.
pub fn nominate_objects(table: &EmbeddingTable, v_c: &[f64], k_o: usize, person_idx: usize) -> Result<ObjectNomination> {
    check_vc(table, v_c)?;
    let n = table.len();
    if person_idx >= n {
        return Err(Error::config("person_object_idx", format!("{person_idx} out of range for {n} objects")));
    }
    if k_o == 0 || k_o + 1 > n {
        return Err(Error::config("k_o", format!("{k_o} out of range for {n} objects")));
    }
    let mut scored: Vec<(usize, f64)> = (0..n).filter(|&i| i != person_idx).map(|i| (i, table.dot(i, v_c))).collect();
    scored.sort_by(by_score_then_index);
    scored.truncate(k_o);
    let mut indices: Vec<usize> = scored.iter().map(|s| s.0).collect();
    indices.push(person_idx);
    Ok(ObjectNomination {
        indices,
        scores: scored.iter().map(|s| s.1).collect(),
    })
}

/// For each object, the `k` verbs with the largest relatedness.
pub fn related_verbs(over: &OverMatrix, objects: &[usize], k: usize) -> Result<Vec<Vec<usize>>> {
    let (n, m) = over.shape();
    if k == 0 || k > m {
        return Err(Error::config("k", format!("{k} out of range for {m} actions")));
    }
    objects
        .iter()
        .map(|&o| {
            if o >= n {
                return Err(Error::Data(format!("object {o} out of range")));
            }
            let mut row: Vec<(usize, f64)> = over.row(o).iter().copied().enumerate().collect();
            row.sort_by(by_score_then_index);
            Ok(row.into_iter().take(k).map(|r| r.0).collect())
        })
        .collect()
}

/// `S_as[p, q] = exp(S_os[p]) · <v_c, l_a(related[p][q])>`.
pub fn action_scene_scores(
    nom: &ObjectNomination,
    related: &[Vec<usize>],
    actions: &EmbeddingTable,
    v_c: &[f64],
) -> Result<Tensor> {
    check_vc(actions, v_c)?;
    let k_o = nom.scores.len();
    let k = related.first().map_or(0, Vec::len);
    if related.len() != k_o || k == 0 || related.iter().any(|r| r.len() != k) {
        return Err(Error::shape("action_scene_scores", &[k_o, k], &[related.len()]));
    }
    let mut data = Vec::with_capacity(k_o * k);
    for (p, row) in related.iter().enumerate() {
        let conf = nom.scores[p].exp();
        for &a in row {
            data.push(conf * actions.dot(a, v_c));
        }
    }
    Tensor::new(&[k_o, k], data)
}

/// Keeps each verb's best score across objects, then the top `k_a`.
/// Ties prefer the lower verb index, and for provenance the lower object index.
pub fn nominate_actions(scores: &Tensor, related: &[Vec<usize>], objects: &[usize], k_a: usize) -> Result<ActionNomination> {
    let (rows, k) = (scores.rows(), scores.cols());
    if scores.rank() != 2 || related.len() != rows || objects.len() != rows || related.iter().any(|r| r.len() != k) {
        return Err(Error::shape("nominate_actions", scores.shape(), &[related.len(), objects.len()]));
    }
    let mut best: Vec<(usize, f64, usize)> = Vec::new();
    for p in 0..rows {
        for (q, &verb) in related[p].iter().enumerate() {
            let s = scores.at(p, q);
            match best.iter_mut().find(|b| b.0 == verb) {
                Some(b) => {
                    if s > b.1 || (s == b.1 && objects[p] < b.2) {
                        *b = (verb, s, objects[p]);
                    }
                }
                None => best.push((verb, s, objects[p])),
            }
        }
    }
    if k_a == 0 || k_a > best.len() {
        return Err(Error::config(
            "k_a",
            format!("{k_a} verbs requested but only {} distinct verbs were related", best.len()),
        ));
    }
    best.sort_by(|a, b| desc(a.1, b.1).then(a.0.cmp(&b.0)));
    best.truncate(k_a);
    Ok(ActionNomination {
        indices: best.iter().map(|b| b.0).collect(),
        scores: best.iter().map(|b| b.1).collect(),
        provenance: best.iter().map(|b| b.2).collect(),
    })
}

/// Both nominations for one scene.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Nominations {
    pub objects: ObjectNomination,
    pub actions: ActionNomination,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NominationConfig {
    pub k_o: usize,
    pub k_a: usize,
    pub k: usize,
    pub person_idx: usize,
}

pub fn nominate(
    objects: &EmbeddingTable,
    actions: &EmbeddingTable,
    over: &OverMatrix,
    v_c: &[f64],
    cfg: NominationConfig,
) -> Result<Nominations> {
    let obj = nominate_objects(objects, v_c, cfg.k_o, cfg.person_idx)?;
    let related = related_verbs(over, obj.nominated(), cfg.k)?;
    let scores = action_scene_scores(&obj, &related, actions, v_c)?;
    let act = nominate_actions(&scores, &related, obj.nominated(), cfg.k_a)?;
    Ok(Nominations { objects: obj, actions: act })
}
