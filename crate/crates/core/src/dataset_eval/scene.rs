use super::boxes::BBox;
use super::rng::{gaussian, seeded, SeededRng, Stream};
use super::taxonomy::Taxonomy;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::semantics::EmbeddingTable;
use crate::wire::{Reader, Writer};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const FHDS_MAGIC: [u8; 4] = *b"FHDS";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    pub human: BBox,
    pub object: BBox,
    pub class: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Scene {
    /// C1×L grid features.
    pub v_b: Tensor,
    /// Global embedding, length d.
    pub v_c: Tensor,
    pub gts: Vec<Interaction>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SceneConfig {
    pub c1: usize,
    /// Grid side; L = grid².
    pub grid: usize,
    pub max_interactions: usize,
    pub sigma: f64,
    /// Chance that a further interaction reuses the previous box pair.
    pub multi_label_prob: f64,
}

impl SceneConfig {
    pub fn tokens(&self) -> usize {
        self.grid * self.grid
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.c1 == 0 || dim != 2 * self.c1 {
            return Err(Error::config("c1", format!("embedding dim {dim} must equal 2*c1 (c1={})", self.c1)));
        }
        if self.grid < 2 {
            return Err(Error::config("grid", "must be at least 2"));
        }
        if self.max_interactions == 0 || self.max_interactions > u16::MAX as usize {
            return Err(Error::config("max_interactions", "must lie in 1..=65535"));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::config("sigma", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.multi_label_prob) {
            return Err(Error::config("multi_label_prob", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Fixed seeded d→C1 map used to paint object identity into grid tokens.
pub fn projection(seed: u64, c1: usize, d: usize) -> Tensor {
    let mut rng = seeded(seed, Stream::Projection);
    let data = (0..c1 * d).map(|_| gaussian(&mut rng)).collect();
    Tensor::new(&[c1, d], data).expect("positive extents")
}

fn f32_round(x: f64) -> f64 {
    x as f32 as f64
}

fn grid_box(rng: &mut SeededRng, g: usize) -> BBox {
    let w = rng.gen_range(1..=g.div_ceil(2));
    let h = rng.gen_range(1..=g.div_ceil(2));
    let x0 = rng.gen_range(0..=g - w);
    let y0 = rng.gen_range(0..=g - h);
    let gf = g as f64;
    BBox::from_corners(x0 as f64 / gf, y0 as f64 / gf, (x0 + w) as f64 / gf, (y0 + h) as f64 / gf)
}

pub struct SceneGenerator<'a> {
    pub taxonomy: &'a Taxonomy,
    pub objects: &'a EmbeddingTable,
    pub actions: &'a EmbeddingTable,
    pub config: &'a SceneConfig,
    pub projection: &'a Tensor,
}

impl SceneGenerator<'_> {
    /// One scene whose interactions are drawn uniformly from `pool`.
    pub fn scene(&self, rng: &mut SeededRng, pool: &[usize]) -> Result<Scene> {
        let cfg = self.config;
        let d = self.objects.dim();
        cfg.validate(d)?;
        if pool.is_empty() {
            return Err(Error::Data("scene class pool is empty".into()));
        }
        let tax = self.taxonomy;
        let g = cfg.grid;
        let n_gt = rng.gen_range(1..=cfg.max_interactions);
        // One person per scene; every interaction shares their box.
        let human = grid_box(rng, g);
        let mut gts: Vec<Interaction> = Vec::with_capacity(n_gt);
        for _ in 0..n_gt {
            if let Some(prev) = gts.last().copied() {
                if rng.gen_bool(cfg.multi_label_prob) {
                    let obj = tax.hoi_classes[prev.class].object_idx;
                    let same: Vec<usize> = pool
                        .iter()
                        .copied()
                        .filter(|&k| tax.hoi_classes[k].object_idx == obj && !gts.iter().any(|x| x.class == k && x.human == prev.human && x.object == prev.object))
                        .collect();
                    if !same.is_empty() {
                        let class = same[rng.gen_range(0..same.len())];
                        gts.push(Interaction { class, ..prev });
                        continue;
                    }
                }
            }
            let class = pool[rng.gen_range(0..pool.len())];
            let object = grid_box(rng, g);
            gts.push(Interaction { human, object, class });
        }

        let l = cfg.tokens();
        let c1 = cfg.c1;
        let mut v_b = vec![0.0; c1 * l];
        let painted: Vec<Vec<f64>> = (0..self.objects.len())
            .map(|o| {
                let v = self.objects.vector(o);
                (0..c1)
                    .map(|r| self.projection.row(r).iter().zip(v).map(|(p, x)| p * x).sum())
                    .collect()
            })
            .collect();
        let mut boxes: Vec<(BBox, usize)> = Vec::new();
        for gt in &gts {
            for b in [(gt.human, tax.person_object_idx), (gt.object, tax.hoi_classes[gt.class].object_idx)] {
                if !boxes.contains(&b) {
                    boxes.push(b);
                }
            }
        }
        for t in 0..l {
            let (row, col) = (t / g, t % g);
            let cx = (col as f64 + 0.5) / g as f64;
            let cy = (row as f64 + 0.5) / g as f64;
            for (b, o) in &boxes {
                if b.contains(cx, cy) {
                    for ch in 0..c1 {
                        v_b[ch * l + t] += painted[*o][ch];
                    }
                }
            }
        }
        for x in v_b.iter_mut() {
            *x = f32_round(*x + cfg.sigma * gaussian(rng));
        }

        let mut objs: Vec<usize> = gts.iter().map(|x| tax.hoi_classes[x.class].object_idx).collect();
        objs.sort_unstable();
        objs.dedup();
        let mut acts: Vec<usize> = gts.iter().map(|x| tax.hoi_classes[x.class].action_idx).collect();
        acts.sort_unstable();
        acts.dedup();
        let mut v_c = vec![0.0; d];
        for &o in &objs {
            for (acc, x) in v_c.iter_mut().zip(self.objects.vector(o)) {
                *acc += x;
            }
        }
        for &a in &acts {
            for (acc, x) in v_c.iter_mut().zip(self.actions.vector(a)) {
                *acc += x;
            }
        }
        for x in v_c.iter_mut() {
            *x += cfg.sigma * gaussian(rng);
        }
        let norm = v_c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let v_c: Vec<f64> = v_c.into_iter().map(|x| f32_round(x / norm)).collect();

        let gts = gts
            .into_iter()
            .map(|x| Interaction {
                human: round_box(x.human),
                object: round_box(x.object),
                class: x.class,
            })
            .collect();
        Ok(Scene {
            v_b: Tensor::new(&[c1, l], v_b)?,
            v_c: Tensor::vector(v_c)?,
            gts,
        })
    }

    pub fn scenes(&self, seed: u64, stream: Stream, count: usize, pool: &[usize]) -> Result<Vec<Scene>> {
        let mut rng = seeded(seed, stream);
        (0..count).map(|_| self.scene(&mut rng, pool)).collect()
    }
}

fn round_box(b: BBox) -> BBox {
    BBox::new(f32_round(b.cx), f32_round(b.cy), f32_round(b.w), f32_round(b.h))
}

/// Scene shapes needed to decode FHDS, which stores none of them.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SceneDims {
    pub c1: usize,
    pub tokens: usize,
    pub dim: usize,
}

pub fn encode_scenes(scenes: &[Scene]) -> Result<Vec<u8>> {
    let mut w = Writer::default();
    w.bytes(&FHDS_MAGIC);
    w.u32(scenes.len() as u32);
    for s in scenes {
        for &x in s.v_b.data() {
            w.f32(x as f32);
        }
        for &x in s.v_c.data() {
            w.f32(x as f32);
        }
        let n = u16::try_from(s.gts.len()).map_err(|_| Error::Data("too many ground truths in a scene".into()))?;
        w.u16(n);
        for gt in &s.gts {
            for x in gt.human.to_array().into_iter().chain(gt.object.to_array()) {
                w.f32(x as f32);
            }
            let c = u16::try_from(gt.class).map_err(|_| Error::Data(format!("class {} exceeds u16", gt.class)))?;
            w.u16(c);
        }
    }
    Ok(w.into_inner())
}

pub fn decode_scenes(bytes: &[u8], dims: SceneDims, path: &Path) -> Result<Vec<Scene>> {
    let mut r = Reader::new(bytes, path);
    r.magic(&FHDS_MAGIC)?;
    let count = r.u32()? as usize;
    let mut out = Vec::with_capacity(count.min(1 << 16));
    for _ in 0..count {
        let mut vb = Vec::with_capacity(dims.c1 * dims.tokens);
        for _ in 0..dims.c1 * dims.tokens {
            vb.push(r.f32()? as f64);
        }
        let mut vc = Vec::with_capacity(dims.dim);
        for _ in 0..dims.dim {
            vc.push(r.f32()? as f64);
        }
        let n = r.u16()? as usize;
        let mut gts = Vec::with_capacity(n);
        for _ in 0..n {
            let mut b = [0.0; 8];
            for x in b.iter_mut() {
                *x = r.f32()? as f64;
            }
            let class = r.u16()? as usize;
            gts.push(Interaction {
                human: BBox::from_slice(&b[..4]),
                object: BBox::from_slice(&b[4..]),
                class,
            });
        }
        out.push(Scene {
            v_b: Tensor::new(&[dims.c1, dims.tokens], vb)?,
            v_c: Tensor::vector(vc)?,
            gts,
        });
    }
    r.finish()?;
    Ok(out)
}

pub fn save_scenes(scenes: &[Scene], path: &Path) -> Result<()> {
    std::fs::write(path, encode_scenes(scenes)?).map_err(|e| Error::io(path, e))
}

pub fn load_scenes(path: &Path, dims: SceneDims) -> Result<Vec<Scene>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_scenes(&bytes, dims, path)
}
