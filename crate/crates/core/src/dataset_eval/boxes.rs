use serde::{Deserialize, Serialize};

/// Axis-aligned box in normalized center format.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_corners(x0: f64, y0: f64, x1: f64, y1: f64) -> Self {
        Self::new((x0 + x1) / 2.0, (y0 + y1) / 2.0, x1 - x0, y1 - y0)
    }

    pub fn corners(&self) -> [f64; 4] {
        [
            self.cx - self.w / 2.0,
            self.cy - self.h / 2.0,
            self.cx + self.w / 2.0,
            self.cy + self.h / 2.0,
        ]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let [x0, y0, x1, y1] = self.corners();
        x >= x0 && x < x1 && y >= y0 && y < y1
    }

    pub fn l1(&self, other: &BBox) -> f64 {
        self.to_array()
            .iter()
            .zip(other.to_array())
            .map(|(a, b)| (a - b).abs())
            .sum()
    }
}

fn intersection_union(a: &BBox, b: &BBox) -> (f64, f64) {
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let iw = (ax1.min(bx1) - ax0.max(bx0)).max(0.0);
    let ih = (ay1.min(by1) - ay0.max(by0)).max(0.0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = intersection_union(a, b);
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

/// IoU minus the empty fraction of the smallest enclosing box.
pub fn giou(a: &BBox, b: &BBox) -> f64 {
    let (inter, union) = intersection_union(a, b);
    let [ax0, ay0, ax1, ay1] = a.corners();
    let [bx0, by0, bx1, by1] = b.corners();
    let enclosing = (ax1.max(bx1) - ax0.min(bx0)) * (ay1.max(by1) - ay0.min(by0));
    if enclosing <= 0.0 {
        return if union > 0.0 { inter / union } else { 0.0 };
    }
    let iou = if union > 0.0 { inter / union } else { 0.0 };
    iou - (enclosing - union) / enclosing
}
