use super::rng::{seeded, unit_vector, Stream};
use crate::error::{Error, Result};
use crate::semantics::EmbeddingTable;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, HashSet};
use std::path::Path;

/// An HOI class: the pair (action, object).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HoiClass {
    pub action_idx: usize,
    pub object_idx: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Taxonomy {
    pub objects: Vec<String>,
    pub actions: Vec<String>,
    pub hoi_classes: Vec<HoiClass>,
    pub rare: Vec<bool>,
    pub person_object_idx: usize,
    /// Training-set instance count per class, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Vec<u32>>,
}

impl Taxonomy {
    pub fn n_objects(&self) -> usize {
        self.objects.len()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_classes(&self) -> usize {
        self.hoi_classes.len()
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.n_classes();
        if self.objects.is_empty() || self.actions.is_empty() || c == 0 {
            return Err(Error::Data("taxonomy needs objects, actions and classes".into()));
        }
        if self.person_object_idx >= self.n_objects() {
            return Err(Error::Data(format!(
                "person_object_idx {} out of range for {} objects",
                self.person_object_idx,
                self.n_objects()
            )));
        }
        if self.rare.len() != c {
            return Err(Error::Data(format!("rare has {} flags for {c} classes", self.rare.len())));
        }
        if let Some(f) = &self.frequency {
            if f.len() != c {
                return Err(Error::Data(format!("frequency has {} entries for {c} classes", f.len())));
            }
        }
        let mut seen = HashSet::new();
        for (i, h) in self.hoi_classes.iter().enumerate() {
            if h.action_idx >= self.n_actions() || h.object_idx >= self.n_objects() {
                return Err(Error::Data(format!("hoi class {i} has a dangling index")));
            }
            if !seen.insert(*h) {
                return Err(Error::Data(format!("hoi class {i} duplicates an earlier pair")));
            }
        }
        Ok(())
    }

    /// Map from (action, object) to class index.
    pub fn class_lookup(&self) -> HashMap<HoiClass, usize> {
        self.hoi_classes.iter().enumerate().map(|(i, h)| (*h, i)).collect()
    }

    pub fn classes_of_object(&self, object: usize) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&c| self.hoi_classes[c].object_idx == object)
            .collect()
    }

    pub fn classes_of_action(&self, action: usize) -> Vec<usize> {
        (0..self.n_classes())
            .filter(|&c| self.hoi_classes[c].action_idx == action)
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let t: Taxonomy = serde_json::from_str(&text).map_err(|e| Error::Json {
            path: path.to_path_buf(),
            source: e,
        })?;
        t.validate()?;
        Ok(t)
    }
}

const OBJECT_NAMES: [&str; 80] = [
    "person", "bicycle", "car", "motorcycle", "airplane", "bus", "train", "truck", "boat",
    "traffic light", "fire hydrant", "stop sign", "parking meter", "bench", "bird", "cat", "dog",
    "horse", "sheep", "cow", "elephant", "bear", "zebra", "giraffe", "backpack", "umbrella",
    "handbag", "tie", "suitcase", "frisbee", "skis", "snowboard", "sports ball", "kite",
    "baseball bat", "baseball glove", "skateboard", "surfboard", "tennis racket", "bottle",
    "wine glass", "cup", "fork", "knife", "spoon", "bowl", "banana", "apple", "sandwich", "orange",
    "broccoli", "carrot", "hot dog", "pizza", "donut", "cake", "chair", "couch", "potted plant",
    "bed", "dining table", "toilet", "tv", "laptop", "mouse", "remote", "keyboard", "cell phone",
    "microwave", "oven", "toaster", "sink", "refrigerator", "book", "clock", "vase", "scissors",
    "teddy bear", "hair drier", "toothbrush",
];

const ACTION_NAMES: [&str; 24] = [
    "ride", "hold", "eat", "cut", "wash", "carry", "throw", "catch", "kick", "hug", "feed", "pet",
    "wear", "fly", "open", "repair", "inspect", "push", "pull", "lift", "drink with", "sit on",
    "stand on", "board",
];

fn object_name(i: usize) -> String {
    OBJECT_NAMES.get(i).map_or_else(|| format!("object {i}"), |s| s.to_string())
}

fn action_name(j: usize) -> String {
    ACTION_NAMES.get(j).map_or_else(|| format!("verb {j}"), |s| s.to_string())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaxonomyConfig {
    pub seed: u64,
    pub objects: usize,
    pub actions: usize,
    pub classes: usize,
    pub rare_fraction: f64,
    pub dim: usize,
}

pub struct GeneratedTaxonomy {
    pub taxonomy: Taxonomy,
    pub objects: EmbeddingTable,
    pub actions: EmbeddingTable,
}

/// Synthetic taxonomy with structured embeddings.
///
/// Object embeddings are random unit vectors. Each action embedding mixes the
/// mean of its paired objects with fresh noise, so object-verb relatedness
/// carries real signal. Object 0 is "person".
pub fn gen_taxonomy(cfg: &TaxonomyConfig) -> Result<GeneratedTaxonomy> {
    let (n, m, c) = (cfg.objects, cfg.actions, cfg.classes);
    if n == 0 || m == 0 {
        return Err(Error::config("objects/actions", "must be positive"));
    }
    if c < n.max(m) || c > n * m {
        return Err(Error::config(
            "classes",
            format!("{c} infeasible for {n} objects and {m} actions (need max(N,M) <= C <= N*M)"),
        ));
    }
    if !(0.0..=1.0).contains(&cfg.rare_fraction) {
        return Err(Error::config("rare_fraction", "must lie in [0, 1]"));
    }
    if cfg.dim == 0 || cfg.dim % 2 != 0 {
        return Err(Error::config("dim", "must be positive and even"));
    }
    let mut rng = seeded(cfg.seed, Stream::Taxonomy);

    let mut pairs: HashSet<HoiClass> = HashSet::new();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    for j in 0..m {
        pairs.insert(HoiClass {
            action_idx: j,
            object_idx: order[j % n],
        });
    }
    for &o in order.iter().skip(m) {
        pairs.insert(HoiClass {
            action_idx: rng.gen_range(0..m),
            object_idx: o,
        });
    }
    while pairs.len() < c {
        pairs.insert(HoiClass {
            action_idx: rng.gen_range(0..m),
            object_idx: rng.gen_range(0..n),
        });
    }
    let mut hoi_classes: Vec<HoiClass> = pairs.into_iter().collect();
    hoi_classes.sort_by_key(|h| (h.object_idx, h.action_idx));

    let object_vecs: Vec<Vec<f64>> = (0..n).map(|_| unit_vector(&mut rng, cfg.dim)).collect();
    let mut action_vecs = Vec::with_capacity(m);
    for j in 0..m {
        let partners: Vec<usize> = hoi_classes
            .iter()
            .filter(|h| h.action_idx == j)
            .map(|h| h.object_idx)
            .collect();
        let noise = unit_vector(&mut rng, cfg.dim);
        let mut v = vec![0.0; cfg.dim];
        for &o in &partners {
            for (acc, x) in v.iter_mut().zip(&object_vecs[o]) {
                *acc += 0.5 * x / partners.len() as f64;
            }
        }
        for (acc, x) in v.iter_mut().zip(&noise) {
            *acc += 0.5 * x;
        }
        action_vecs.push(v);
    }

    // Zipf-like counts over a random ranking of the classes.
    let mut ranking: Vec<usize> = (0..c).collect();
    ranking.shuffle(&mut rng);
    let mut frequency = vec![0u32; c];
    for (rank, &cls) in ranking.iter().enumerate() {
        frequency[cls] = (1000.0 * ((rank + 1) as f64).powf(-1.2)).round().max(1.0) as u32;
    }
    let n_rare = (cfg.rare_fraction * c as f64).round() as usize;
    let mut rare = vec![false; c];
    for &cls in rarity_order(&frequency).iter().take(n_rare) {
        rare[cls] = true;
    }

    let taxonomy = Taxonomy {
        objects: (0..n).map(object_name).collect(),
        actions: (0..m).map(action_name).collect(),
        hoi_classes,
        rare,
        person_object_idx: 0,
        frequency: Some(frequency),
    };
    taxonomy.validate()?;
    let objects = EmbeddingTable::new(taxonomy.objects.clone(), object_vecs)?;
    let actions = EmbeddingTable::new(taxonomy.actions.clone(), action_vecs)?;
    Ok(GeneratedTaxonomy {
        taxonomy,
        objects,
        actions,
    })
}

/// Class indices from least to most frequent; ties by lower index.
pub fn rarity_order(frequency: &[u32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..frequency.len()).collect();
    idx.sort_by_key(|&i| (frequency[i], i));
    idx
}
