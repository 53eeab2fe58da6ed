//! Frozen text embeddings for objects, actions and HOI classes.
//!
//! Embeddings are ingested from files, never computed here. Every vector is
//! unit-normalized on ingest so that object-scene scores and object-verb
//! relatedness are cosines bounded by one.

mod io;

pub use io::{load_table, save_table, FHEB_MAGIC, FHEB_VERSION};

use crate::dataset_eval::Taxonomy;
use crate::error::{Error, Result};
use crate::numerics::Tensor;
use std::collections::HashSet;

/// Vectors whose norm is off by more than this are renormalized on ingest.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// "A photo of a/an <name>" with an article picked by the leading letter.
pub fn prompt_object(name: &str) -> Result<String> {
    let first = name
        .chars()
        .next()
        .ok_or_else(|| Error::Usage("object name must not be empty".into()))?;
    let article = if "aeiouAEIOU".contains(first) { "an" } else { "a" };
    Ok(format!("A photo of {article} {name}"))
}

/// "A photo of a person <stem>-ing"; the stem is used verbatim.
pub fn prompt_action(name: &str) -> Result<String> {
    if name.is_empty() {
        return Err(Error::Usage("action name must not be empty".into()));
    }
    Ok(format!("A photo of a person {name}-ing"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TableKind {
    Objects,
    Actions,
}

/// Named unit vectors of a common even dimension.
///
/// Stored components are exactly representable as `f32`, matching the file
/// format, so save/load round trips are bit-exact.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    dim: usize,
    names: Vec<String>,
    vectors: Vec<Vec<f64>>,
}

fn to_f32_grid(v: &mut [f64]) {
    for x in v {
        *x = *x as f32 as f64;
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalizes `v` unless it is already unit within [`NORM_TOLERANCE`].
pub(crate) fn unit_on_ingest(name: &str, v: &mut [f64]) -> Result<()> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return Err(Error::Data(format!("embedding `{name}` has zero or non-finite norm")));
    }
    if (n - 1.0).abs() > NORM_TOLERANCE {
        for x in v.iter_mut() {
            *x /= n;
        }
        to_f32_grid(v);
    }
    Ok(())
}

impl EmbeddingTable {
    /// Validates, rounds to `f32` precision and normalizes the entries.
    pub fn new(names: Vec<String>, vectors: Vec<Vec<f64>>) -> Result<Self> {
        if names.len() != vectors.len() {
            return Err(Error::shape("embedding_table", &[names.len()], &[vectors.len()]));
        }
        let dim = vectors.first().map_or(0, Vec::len);
        if dim == 0 || dim % 2 != 0 {
            return Err(Error::Data(format!("embedding dim must be positive and even, got {dim}")));
        }
        let mut seen = HashSet::new();
        for n in &names {
            if !seen.insert(n.as_str()) {
                return Err(Error::Data(format!("duplicate embedding name `{n}`")));
            }
        }
        let mut out = Vec::with_capacity(vectors.len());
        for (name, mut v) in names.iter().zip(vectors) {
            if v.len() != dim {
                return Err(Error::shape("embedding_table", &[dim], &[v.len()]));
            }
            to_f32_grid(&mut v);
            unit_on_ingest(name, &mut v)?;
            out.push(v);
        }
        Ok(Self {
            dim,
            names,
            vectors: out,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn vector(&self, i: usize) -> &[f64] {
        &self.vectors[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Cosine of entry `i` with an arbitrary vector.
    pub fn dot(&self, i: usize, v: &[f64]) -> f64 {
        self.vectors[i].iter().zip(v).map(|(a, b)| a * b).sum()
    }

    /// Prompt strings the entries stand for.
    pub fn prompts(&self, kind: TableKind) -> Result<Vec<String>> {
        self.names
            .iter()
            .map(|n| match kind {
                TableKind::Objects => prompt_object(n),
                TableKind::Actions => prompt_action(n),
            })
            .collect()
    }

    /// Rows are the embedding vectors: `len × dim`.
    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_rows(&self.vectors)
    }

    /// Selected rows stacked into a `indices.len() × dim` tensor.
    pub fn rows(&self, indices: &[usize]) -> Result<Tensor> {
        let rows: Vec<&[f64]> = indices.iter().map(|&i| self.vectors[i].as_slice()).collect();
        Tensor::from_rows(&rows)
    }
}

/// Object-verb relatedness: `Δ[i, j] = <l_o^i, l_a^j>`.
#[derive(Clone, Debug, PartialEq)]
pub struct OverMatrix {
    objects: usize,
    actions: usize,
    data: Vec<f64>,
}

impl OverMatrix {
    pub fn get(&self, object: usize, action: usize) -> f64 {
        self.data[object * self.actions + action]
    }

    pub fn row(&self, object: usize) -> &[f64] {
        &self.data[object * self.actions..(object + 1) * self.actions]
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.objects, self.actions)
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::new(&[self.objects, self.actions], self.data.clone())
    }
}

pub fn over_matrix(objects: &EmbeddingTable, actions: &EmbeddingTable) -> Result<OverMatrix> {
    if objects.dim() != actions.dim() {
        return Err(Error::shape("over_matrix", &[objects.dim()], &[actions.dim()]));
    }
    let mut data = Vec::with_capacity(objects.len() * actions.len());
    for i in 0..objects.len() {
        for j in 0..actions.len() {
            data.push(objects.dot(i, actions.vector(j)));
        }
    }
    Ok(OverMatrix {
        objects: objects.len(),
        actions: actions.len(),
        data,
    })
}

/// Classifier weights: row `c` is `normalize(l_a(c) + l_o(c))`.
pub fn hoi_class_embedding(taxonomy: &Taxonomy, objects: &EmbeddingTable, actions: &EmbeddingTable) -> Result<Tensor> {
    if objects.dim() != actions.dim() {
        return Err(Error::shape("hoi_class_embedding", &[objects.dim()], &[actions.dim()]));
    }
    let d = objects.dim();
    let mut data = Vec::with_capacity(taxonomy.hoi_classes.len() * d);
    for (c, class) in taxonomy.hoi_classes.iter().enumerate() {
        if class.object_idx >= objects.len() || class.action_idx >= actions.len() {
            return Err(Error::Data(format!(
                "hoi class {c} references object {} / action {} outside the tables",
                class.object_idx, class.action_idx
            )));
        }
        let sum: Vec<f64> = objects
            .vector(class.object_idx)
            .iter()
            .zip(actions.vector(class.action_idx))
            .map(|(a, b)| a + b)
            .collect();
        let n = norm(&sum);
        if n == 0.0 {
            return Err(Error::Data(format!("hoi class {c} has opposite object and action embeddings")));
        }
        data.extend(sum.iter().map(|x| x / n));
    }
    Tensor::new(&[taxonomy.hoi_classes.len(), d], data)
}
