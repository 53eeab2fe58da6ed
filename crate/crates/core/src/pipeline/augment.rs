//! Grid-aligned spatial augmentation of training scenes: flips and
//! whole-cell translations that keep every box inside the image.

use crate::dataset_eval::rng::SeededRng;
use crate::dataset_eval::{BBox, Interaction};
use crate::numerics::Tensor;
use rand::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct GridTransform {
    pub flip_x: bool,
    pub flip_y: bool,
    pub dx: isize,
    pub dy: isize,
}

impl GridTransform {
    pub const IDENTITY: GridTransform = GridTransform {
        flip_x: false,
        flip_y: false,
        dx: 0,
        dy: 0,
    };

    /// Random flips, then a uniform shift among those keeping all boxes in bounds.
    pub fn sample(rng: &mut SeededRng, gts: &[Interaction], grid: usize) -> Self {
        let flip_x = rng.gen_bool(0.5);
        let flip_y = rng.gen_bool(0.5);
        let flipped = GridTransform {
            flip_x,
            flip_y,
            dx: 0,
            dy: 0,
        };
        let g = grid as f64;
        let (mut lo_x, mut hi_x, mut lo_y, mut hi_y) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for b in gts.iter().flat_map(|i| [i.human, i.object]) {
            let [x0, y0, x1, y1] = flipped.apply_box(b, grid).corners();
            lo_x = lo_x.min(x0);
            hi_x = hi_x.max(x1);
            lo_y = lo_y.min(y0);
            hi_y = hi_y.max(y1);
        }
        // Shifts in whole cells; a small slack absorbs f32-rounded coordinates.
        let mut range = |lo: f64, hi: f64| {
            let min = -((lo * g + 1e-6).floor() as isize);
            let max = ((1.0 - hi) * g + 1e-6).floor() as isize;
            if max >= min {
                rng.gen_range(min..=max)
            } else {
                0
            }
        };
        let dx = range(lo_x, hi_x);
        let dy = range(lo_y, hi_y);
        GridTransform { flip_x, flip_y, dx, dy }
    }

    pub fn apply_box(&self, b: BBox, grid: usize) -> BBox {
        let g = grid as f64;
        let mut cx = if self.flip_x { 1.0 - b.cx } else { b.cx };
        let mut cy = if self.flip_y { 1.0 - b.cy } else { b.cy };
        cx += self.dx as f64 / g;
        cy += self.dy as f64 / g;
        BBox::new(cx as f32 as f64, cy as f32 as f64, b.w, b.h)
    }

    /// Moves token features along with the boxes; vacated tokens become zero.
    pub fn apply_features(&self, v_b: &Tensor, grid: usize) -> Tensor {
        let (c1, l) = (v_b.rows(), v_b.cols());
        let mut out = vec![0.0; c1 * l];
        let g = grid as isize;
        for t in 0..l {
            let (row, col) = ((t / grid) as isize, (t % grid) as isize);
            let col = if self.flip_x { g - 1 - col } else { col } + self.dx;
            let row = if self.flip_y { g - 1 - row } else { row } + self.dy;
            if !(0..g).contains(&col) || !(0..g).contains(&row) {
                continue;
            }
            let dst = (row * g + col) as usize;
            for ch in 0..c1 {
                out[ch * l + dst] = v_b.data()[ch * l + t];
            }
        }
        Tensor::new(&[c1, l], out).expect("same shape")
    }

    pub fn apply_gts(&self, gts: &[Interaction], grid: usize) -> Vec<Interaction> {
        gts.iter()
            .map(|i| Interaction {
                human: self.apply_box(i.human, grid),
                object: self.apply_box(i.object, grid),
                class: i.class,
            })
            .collect()
    }
}
