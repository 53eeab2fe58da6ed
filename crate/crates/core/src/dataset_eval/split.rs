use super::rng::{seeded, Stream};
use super::taxonomy::{rarity_order, Taxonomy};
use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SplitSetting {
    #[serde(rename = "UC")]
    Uc,
    #[serde(rename = "RF-UC")]
    RfUc,
    #[serde(rename = "NF-UC")]
    NfUc,
    #[serde(rename = "UO")]
    Uo,
    #[serde(rename = "UA")]
    Ua,
    #[serde(rename = "UV")]
    Uv,
}

impl SplitSetting {
    pub const ALL: [SplitSetting; 6] = [
        SplitSetting::Uc,
        SplitSetting::RfUc,
        SplitSetting::NfUc,
        SplitSetting::Uo,
        SplitSetting::Ua,
        SplitSetting::Uv,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SplitSetting::Uc => "UC",
            SplitSetting::RfUc => "RF-UC",
            SplitSetting::NfUc => "NF-UC",
            SplitSetting::Uo => "UO",
            SplitSetting::Ua => "UA",
            SplitSetting::Uv => "UV",
        }
    }
}

impl fmt::Display for SplitSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SplitSetting {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config("split", format!("unknown setting `{s}` (expected UC, RF-UC, NF-UC, UO, UA or UV)")))
    }
}

/// Explicit unseen lists. When absent, the generator picks them.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SplitLists {
    #[serde(default)]
    pub unseen_objects: Option<Vec<usize>>,
    #[serde(default)]
    pub unseen_actions: Option<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ZsSplit {
    pub setting: SplitSetting,
    pub seen: Vec<usize>,
    pub unseen: Vec<usize>,
    pub unseen_objects: Vec<usize>,
    pub unseen_actions: Vec<usize>,
}

impl ZsSplit {
    /// Per-class flag, indexed by class.
    pub fn seen_mask(&self, n_classes: usize) -> Vec<bool> {
        let mut m = vec![false; n_classes];
        for &c in &self.seen {
            m[c] = true;
        }
        m
    }

    pub fn n_seen(&self) -> usize {
        self.seen.len()
    }

    pub fn n_unseen(&self) -> usize {
        self.unseen.len()
    }
}

/// Unseen class count for a taxonomy: 20% of the classes.
pub fn default_unseen_count(n_classes: usize) -> usize {
    (0.2 * n_classes as f64).round() as usize
}

fn finish(setting: SplitSetting, tax: &Taxonomy, unseen_flags: Vec<bool>, objs: Vec<usize>, acts: Vec<usize>) -> Result<ZsSplit> {
    let seen: Vec<usize> = (0..tax.n_classes()).filter(|&c| !unseen_flags[c]).collect();
    let unseen: Vec<usize> = (0..tax.n_classes()).filter(|&c| unseen_flags[c]).collect();
    if seen.is_empty() {
        return Err(Error::Data(format!("{setting} split leaves no seen class")));
    }
    Ok(ZsSplit {
        setting,
        seen,
        unseen,
        unseen_objects: objs,
        unseen_actions: acts,
    })
}

/// Picks whole groups (objects or verbs) in random order, adding a group
/// only while the unseen total stays within `target`.
fn greedy_groups(groups: &[Vec<usize>], target: usize, order: &[usize]) -> Vec<usize> {
    let mut picked = Vec::new();
    let mut total = 0;
    for &g in order {
        let n = groups[g].len();
        if n == 0 {
            continue;
        }
        if total + n <= target || picked.is_empty() {
            picked.push(g);
            total += n;
        }
        if total >= target {
            break;
        }
    }
    picked.sort_unstable();
    picked
}

fn check_indices(field: &str, list: &[usize], bound: usize) -> Result<Vec<usize>> {
    let mut v = list.to_vec();
    v.sort_unstable();
    v.dedup();
    if v.len() != list.len() {
        return Err(Error::config(field, "contains duplicates"));
    }
    if let Some(&bad) = v.iter().find(|&&i| i >= bound) {
        return Err(Error::config(field, format!("index {bad} out of range ({bound})")));
    }
    Ok(v)
}

pub fn zs_split(tax: &Taxonomy, setting: SplitSetting, seed: u64, lists: &SplitLists) -> Result<ZsSplit> {
    tax.validate()?;
    let c = tax.n_classes();
    let u = default_unseen_count(c);
    let mut rng = seeded(seed, Stream::Split);
    let mut flags = vec![false; c];
    match setting {
        SplitSetting::Uc => {
            let mut idx: Vec<usize> = (0..c).collect();
            idx.shuffle(&mut rng);
            for &k in &idx[..u] {
                flags[k] = true;
            }
            finish(setting, tax, flags, vec![], vec![])
        }
        SplitSetting::RfUc | SplitSetting::NfUc => {
            let freq = tax
                .frequency
                .as_ref()
                .ok_or_else(|| Error::Data(format!("{setting} needs per-class training frequencies")))?;
            let mut order = rarity_order(freq);
            if setting == SplitSetting::NfUc {
                let mut rev: Vec<usize> = (0..c).collect();
                rev.sort_by_key(|&i| (std::cmp::Reverse(freq[i]), i));
                order = rev;
            }
            for &k in &order[..u] {
                flags[k] = true;
            }
            finish(setting, tax, flags, vec![], vec![])
        }
        SplitSetting::Uo => {
            let objs = match &lists.unseen_objects {
                Some(l) => check_indices("unseen_objects", l, tax.n_objects())?,
                None => {
                    let groups: Vec<Vec<usize>> = (0..tax.n_objects()).map(|o| tax.classes_of_object(o)).collect();
                    let mut order: Vec<usize> = (0..tax.n_objects()).collect();
                    order.shuffle(&mut rng);
                    greedy_groups(&groups, u, &order)
                }
            };
            for &o in &objs {
                for k in tax.classes_of_object(o) {
                    flags[k] = true;
                }
            }
            finish(setting, tax, flags, objs, vec![])
        }
        SplitSetting::Ua | SplitSetting::Uv => {
            let acts = match &lists.unseen_actions {
                Some(l) => check_indices("unseen_actions", l, tax.n_actions())?,
                None => {
                    let groups: Vec<Vec<usize>> = (0..tax.n_actions()).map(|a| tax.classes_of_action(a)).collect();
                    let mut order: Vec<usize> = (0..tax.n_actions()).collect();
                    order.shuffle(&mut rng);
                    greedy_groups(&groups, u, &order)
                }
            };
            for &a in &acts {
                for k in tax.classes_of_action(a) {
                    flags[k] = true;
                }
            }
            finish(setting, tax, flags, vec![], acts)
        }
    }
}
