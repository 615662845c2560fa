//! Neighbor groups over normalized patches and their collaboration weights.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::patch::{Patch, PatchSet};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroupingConfig {
    /// Maximum Euclidean distance between unit-norm patches.
    pub epsilon: f64,
    /// Side of the square search window, in pixels. Odd.
    pub window: usize,
    /// Maximum group size, including the reference patch.
    pub max_group: usize,
    /// Regularizer in the inverse-distance weights.
    pub delta: f64,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.35,
            window: 21,
            max_group: 32,
            delta: 0.035,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        if self.window.is_multiple_of(2) {
            return Err(Error::InvalidConfig(format!(
                "search window must be odd, got {}",
                self.window
            )));
        }
        if self.max_group == 0 {
            return Err(Error::InvalidConfig("max group size must be >= 1".into()));
        }
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "weight regularizer must be positive, got {}",
                self.delta
            )));
        }
        Ok(())
    }
}

/// Group of patches similar to patch `k`. `members[0] == k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborSet {
    pub k: usize,
    pub members: Vec<usize>,
    pub distances: Vec<f64>,
    pub weights: Vec<f64>,
}

impl NeighborSet {
    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

pub fn patch_distance(a: &Patch<'_>, b: &Patch<'_>) -> Result<f64> {
    if a.values.len() != b.values.len() {
        return Err(Error::DimensionMismatch(format!(
            "patch lengths {} and {}",
            a.values.len(),
            b.values.len()
        )));
    }
    Ok(euclidean(a.values, b.values))
}

#[inline]
pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Normalized inverse-distance weights `1 / (d + delta)`.
pub fn collab_weights(distances: &[f64], delta: f64) -> Vec<f64> {
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 / (d + delta)).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|w| w / total).collect()
}

/// Builds the neighbor set of every patch.
///
/// Candidates are the patches centered inside the `window`×`window` square
/// around patch `k` (clipped to the image). Members are `k` itself followed by
/// up to `max_group - 1` candidates within `epsilon`, nearest first, ties
/// broken by lower patch index.
pub fn find_neighbors(ps: &PatchSet, cfg: &GroupingConfig) -> Result<Vec<NeighborSet>> {
    cfg.validate()?;
    Ok((0..ps.len())
        .into_par_iter()
        .map(|k| neighbors_of(ps, cfg, k))
        .collect())
}

fn neighbors_of(ps: &PatchSet, cfg: &GroupingConfig, k: usize) -> NeighborSet {
    let (rows, cols) = (ps.rows(), ps.cols());
    let half = cfg.window / 2;
    let (r0, c0) = (k / cols, k % cols);
    let reference = ps.values(k);
    let mut found: Vec<(f64, usize)> = Vec::new();
    for r in r0.saturating_sub(half)..=(r0 + half).min(rows - 1) {
        for c in c0.saturating_sub(half)..=(c0 + half).min(cols - 1) {
            let i = r * cols + c;
            if i == k {
                continue;
            }
            let d = euclidean(reference, ps.values(i));
            if d <= cfg.epsilon {
                found.push((d, i));
            }
        }
    }
    found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    found.truncate(cfg.max_group - 1);

    let mut members = Vec::with_capacity(found.len() + 1);
    let mut distances = Vec::with_capacity(found.len() + 1);
    members.push(k);
    distances.push(0.0);
    for (d, i) in found {
        members.push(i);
        distances.push(d);
    }
    let weights = collab_weights(&distances, cfg.delta);
    NeighborSet {
        k,
        members,
        distances,
        weights,
    }
}
