use super::boxes::{iou, BBox};
use super::scene::Interaction;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use std::path::Path;

pub const IOU_THRESHOLD: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub scene: usize,
    pub human: BBox,
    pub object: BBox,
    pub class: usize,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `None` for classes without ground truth; they are left out of every mean.
    pub per_class_ap: Vec<Option<f64>>,
    pub map_seen: f64,
    pub map_unseen: f64,
    pub map_full: f64,
}

impl EvalReport {
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }
}

fn canonical(a: &Detection, b: &Detection) -> Ordering {
    b.score
        .total_cmp(&a.score)
        .then(a.scene.cmp(&b.scene))
        .then_with(|| {
            let ka = a.human.to_array().into_iter().chain(a.object.to_array());
            let kb = b.human.to_array().into_iter().chain(b.object.to_array());
            ka.zip(kb).map(|(x, y)| x.total_cmp(&y)).find(|o| o.is_ne()).unwrap_or(Ordering::Equal)
        })
}

/// True-positive flags in rank order, plus the ground-truth count.
///
/// Each detection takes the unconsumed ground truth of its class whose
/// smaller IoU (human or object) is largest, provided both reach 0.5.
pub fn match_class(dets: &[Detection], gts: &[Vec<Interaction>], class: usize) -> (Vec<bool>, usize) {
    let mut ranked: Vec<&Detection> = dets.iter().filter(|d| d.class == class).collect();
    ranked.sort_by(|a, b| canonical(a, b));
    let npos = gts.iter().flatten().filter(|g| g.class == class).count();
    let mut used: Vec<Vec<bool>> = gts.iter().map(|s| vec![false; s.len()]).collect();
    let mut tp = Vec::with_capacity(ranked.len());
    for d in ranked {
        let mut best: Option<(usize, f64)> = None;
        if let Some(scene) = gts.get(d.scene) {
            for (j, g) in scene.iter().enumerate() {
                if g.class != class || used[d.scene][j] {
                    continue;
                }
                let q = iou(&d.human, &g.human).min(iou(&d.object, &g.object));
                if q >= IOU_THRESHOLD && best.is_none_or(|(_, b)| q > b) {
                    best = Some((j, q));
                }
            }
        }
        match best {
            Some((j, _)) => {
                used[d.scene][j] = true;
                tp.push(true);
            }
            None => tp.push(false),
        }
    }
    (tp, npos)
}

/// All-point interpolated area under the precision-recall curve.
pub fn average_precision(tp: &[bool], npos: usize) -> f64 {
    if npos == 0 {
        return 0.0;
    }
    let mut rec = vec![0.0];
    let mut prec = vec![0.0];
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        rec.push(hits as f64 / npos as f64);
        prec.push(hits as f64 / (k + 1) as f64);
    }
    rec.push(1.0);
    prec.push(0.0);
    for i in (0..prec.len() - 1).rev() {
        prec[i] = prec[i].max(prec[i + 1]);
    }
    (1..rec.len()).map(|i| (rec[i] - rec[i - 1]) * prec[i]).sum()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Per-class AP and the seen, unseen and full means. A group with no
/// evaluable class reports 0.
pub fn hoi_map(dets: &[Detection], gts: &[Vec<Interaction>], seen_mask: &[bool]) -> Result<EvalReport> {
    let c = seen_mask.len();
    if let Some(d) = dets.iter().find(|d| d.class >= c || d.scene >= gts.len() || !d.score.is_finite()) {
        return Err(Error::Data(format!(
            "detection for class {} in scene {} with score {} is out of range",
            d.class, d.scene, d.score
        )));
    }
    if let Some(g) = gts.iter().flatten().find(|g| g.class >= c) {
        return Err(Error::Data(format!("ground truth class {} out of range", g.class)));
    }
    let per_class_ap: Vec<Option<f64>> = (0..c)
        .map(|k| {
            let (tp, npos) = match_class(dets, gts, k);
            (npos > 0).then(|| average_precision(&tp, npos))
        })
        .collect();
    let pick = |want: Option<bool>| {
        mean(
            per_class_ap
                .iter()
                .enumerate()
                .filter(|(k, _)| want.is_none_or(|w| seen_mask[*k] == w))
                .filter_map(|(_, ap)| *ap),
        )
    };
    Ok(EvalReport {
        map_seen: pick(Some(true)),
        map_unseen: pick(Some(false)),
        map_full: pick(None),
        per_class_ap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit() -> BBox {
        BBox::from_corners(0.0, 0.0, 0.5, 0.5)
    }

    fn gt(class: usize) -> Interaction {
        Interaction {
            human: unit(),
            object: unit(),
            class,
        }
    }

    fn det(class: usize, score: f64, off: f64) -> Detection {
        Detection {
            scene: 0,
            human: BBox::from_corners(off, 0.0, off + 0.5, 0.5),
            object: unit(),
            class,
            score,
        }
    }

    #[test]
    fn exact_hit_is_ap_one() {
        let r = hoi_map(&[det(0, 0.9, 0.0)], &[vec![gt(0)]], &[true]).unwrap();
        assert_eq!(r.per_class_ap[0], Some(1.0));
        assert_eq!(r.map_full, 1.0);
    }

    #[test]
    fn wrong_then_right_is_half() {
        let dets = [det(0, 0.9, 0.4), det(0, 0.5, 0.0)];
        let r = hoi_map(&dets, &[vec![gt(0)]], &[true]).unwrap();
        assert_eq!(r.per_class_ap[0], Some(0.5));
    }

    #[test]
    fn duplicate_detections_cannot_share_a_gt() {
        let dets = [det(0, 0.9, 0.0), det(0, 0.8, 0.0)];
        let (tp, npos) = match_class(&dets, &[vec![gt(0)]], 0);
        assert_eq!(tp, vec![true, false]);
        assert_eq!(npos, 1);
    }

    #[test]
    fn classes_without_gt_are_excluded() {
        let r = hoi_map(&[det(1, 0.9, 0.0)], &[vec![gt(0)]], &[true, false]).unwrap();
        assert_eq!(r.per_class_ap[1], None);
        assert_eq!(r.map_unseen, 0.0);
        assert_eq!(r.map_seen, 0.0);
    }

    #[test]
    fn out_of_range_class_is_an_error() {
        assert!(hoi_map(&[det(3, 0.9, 0.0)], &[vec![gt(0)]], &[true]).is_err());
    }
}
