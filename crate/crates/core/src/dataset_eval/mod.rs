//! Synthetic taxonomies and scenes, zero-shot splits and HOI mAP.

mod boxes;
mod map;
pub mod rng;
mod scene;
mod split;
mod taxonomy;

pub use boxes::{giou, iou, BBox};
pub use map::{average_precision, hoi_map, match_class, Detection, EvalReport, IOU_THRESHOLD};
pub use scene::{
    decode_scenes, encode_scenes, load_scenes, projection, save_scenes, Interaction, Scene, SceneConfig, SceneDims,
    SceneGenerator, FHDS_MAGIC,
};
pub use split::{default_unseen_count, zs_split, SplitLists, SplitSetting, ZsSplit};
pub use taxonomy::{gen_taxonomy, rarity_order, GeneratedTaxonomy, HoiClass, Taxonomy, TaxonomyConfig};

use crate::error::{Error, Result};
use crate::semantics::{load_table, save_table, EmbeddingTable};
use rng::Stream;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub seed: u64,
    pub objects: usize,
    pub actions: usize,
    pub classes: usize,
    pub rare_fraction: f64,
    pub c1: usize,
    pub grid: usize,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub max_interactions: usize,
    pub sigma: f64,
    pub multi_label_prob: f64,
    pub split: SplitSetting,
    #[serde(default)]
    pub split_lists: SplitLists,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            objects: 12,
            actions: 10,
            classes: 40,
            rare_fraction: 0.25,
            c1: 32,
            grid: 4,
            train_scenes: 200,
            test_scenes: 100,
            max_interactions: 3,
            sigma: 0.1,
            multi_label_prob: 0.25,
            split: SplitSetting::NfUc,
            split_lists: SplitLists::default(),
        }
    }
}

impl DatasetConfig {
    pub fn dim(&self) -> usize {
        2 * self.c1
    }

    pub fn scene_config(&self) -> SceneConfig {
        SceneConfig {
            c1: self.c1,
            grid: self.grid,
            max_interactions: self.max_interactions,
            sigma: self.sigma,
            multi_label_prob: self.multi_label_prob,
        }
    }

    pub fn dims(&self) -> SceneDims {
        SceneDims {
            c1: self.c1,
            tokens: self.grid * self.grid,
            dim: self.dim(),
        }
    }
}

/// Everything the dataset directory holds.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub config: DatasetConfig,
    pub taxonomy: Taxonomy,
    pub objects: EmbeddingTable,
    pub actions: EmbeddingTable,
    pub split: ZsSplit,
    /// Seen classes only.
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

pub const TAXONOMY_FILE: &str = "taxonomy.json";
pub const OBJECTS_FILE: &str = "objects.fheb";
pub const ACTIONS_FILE: &str = "actions.fheb";
pub const TRAIN_FILE: &str = "scenes.fhds";
pub const TEST_FILE: &str = "test_scenes.fhds";
pub const CONFIG_FILE: &str = "config.json";
pub const SPLIT_FILE: &str = "split.json";

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let json = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    std::fs::write(path, json + "\n").map_err(|e| Error::io(path, e))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

impl Dataset {
    pub fn generate(cfg: &DatasetConfig) -> Result<Self> {
        let g = gen_taxonomy(&TaxonomyConfig {
            seed: cfg.seed,
            objects: cfg.objects,
            actions: cfg.actions,
            classes: cfg.classes,
            rare_fraction: cfg.rare_fraction,
            dim: cfg.dim(),
        })?;
        let split = zs_split(&g.taxonomy, cfg.split, cfg.seed, &cfg.split_lists)?;
        let proj = projection(cfg.seed, cfg.c1, cfg.dim());
        let scene_cfg = cfg.scene_config();
        let gen = SceneGenerator {
            taxonomy: &g.taxonomy,
            objects: &g.objects,
            actions: &g.actions,
            config: &scene_cfg,
            projection: &proj,
        };
        let all: Vec<usize> = (0..g.taxonomy.n_classes()).collect();
        let train = gen.scenes(cfg.seed, Stream::TrainScenes, cfg.train_scenes, &split.seen)?;
        let test = gen.scenes(cfg.seed, Stream::TestScenes, cfg.test_scenes, &all)?;
        Ok(Self {
            config: cfg.clone(),
            taxonomy: g.taxonomy,
            objects: g.objects,
            actions: g.actions,
            split,
            train,
            test,
        })
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.taxonomy.save(&dir.join(TAXONOMY_FILE))?;
        save_table(&self.objects, &dir.join(OBJECTS_FILE))?;
        save_table(&self.actions, &dir.join(ACTIONS_FILE))?;
        save_scenes(&self.train, &dir.join(TRAIN_FILE))?;
        save_scenes(&self.test, &dir.join(TEST_FILE))?;
        write_json(&self.config, &dir.join(CONFIG_FILE))?;
        write_json(&self.split, &dir.join(SPLIT_FILE))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let config: DatasetConfig = read_json(&dir.join(CONFIG_FILE))?;
        let taxonomy = Taxonomy::load(&dir.join(TAXONOMY_FILE))?;
        let objects = load_table(&dir.join(OBJECTS_FILE))?;
        let actions = load_table(&dir.join(ACTIONS_FILE))?;
        let split: ZsSplit = read_json(&dir.join(SPLIT_FILE))?;
        if objects.len() != taxonomy.n_objects() || actions.len() != taxonomy.n_actions() {
            return Err(Error::Data("embedding tables disagree with the taxonomy".into()));
        }
        if objects.dim() != config.dim() || actions.dim() != config.dim() {
            return Err(Error::Data(format!("embedding dim differs from 2*c1 = {}", config.dim())));
        }
        if split.n_seen() + split.n_unseen() != taxonomy.n_classes() {
            return Err(Error::Data("split does not cover the taxonomy".into()));
        }
        let train = load_scenes(&dir.join(TRAIN_FILE), config.dims())?;
        let test = load_scenes(&dir.join(TEST_FILE), config.dims())?;
        let seen = split.seen_mask(taxonomy.n_classes());
        for s in train.iter().chain(&test) {
            if let Some(g) = s.gts.iter().find(|g| g.class >= taxonomy.n_classes()) {
                return Err(Error::Data(format!("scene references class {}", g.class)));
            }
        }
        if train.iter().flat_map(|s| &s.gts).any(|g| !seen[g.class]) {
            return Err(Error::Data("training scenes contain an unseen class".into()));
        }
        Ok(Self {
            config,
            taxonomy,
            objects,
            actions,
            split,
            train,
            test,
        })
    }
}
