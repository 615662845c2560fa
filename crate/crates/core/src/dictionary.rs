//! Overcomplete patch dictionary built from 2-D cosine and Haar atoms.
//!
//! The cosine part samples separable cosines at `oversample·N` frequencies
//! per axis on the `N×N` grid. The Haar part is the separable Haar basis on
//! the smallest dyadic grid covering the patch, cropped to its top-left
//! `N×N` corner. Zero columns are discarded, every column is scaled to unit
//! norm, and near-duplicate columns are dropped keeping the first.

use std::f64::consts::PI;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Cosine similarity above which two atoms count as duplicates.
const DUPLICATE_COSINE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AtomKind {
    Dct,
    Wavelet,
}

/// Dense `N² × M` matrix with unit-norm columns, stored column-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dictionary {
    size: usize,
    atoms: Vec<f64>,
    kinds: Vec<AtomKind>,
}

impl Dictionary {
    /// Patch side `N`.
    pub fn patch_size(&self) -> usize {
        self.size
    }

    /// Signal dimension `N²`.
    pub fn dim(&self) -> usize {
        self.size * self.size
    }

    /// Number of atoms `M`.
    pub fn len(&self) -> usize {
        self.kinds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kinds.is_empty()
    }

    #[inline]
    pub fn atom(&self, j: usize) -> &[f64] {
        let d = self.dim();
        &self.atoms[j * d..(j + 1) * d]
    }

    pub fn kind(&self, j: usize) -> AtomKind {
        self.kinds[j]
    }

    pub fn kinds(&self) -> &[AtomKind] {
        &self.kinds
    }

    /// Column-major atom storage.
    pub fn as_slice(&self) -> &[f64] {
        &self.atoms
    }

    /// Builds a dictionary from explicit columns, normalizing each one.
    /// Used for miniature test dictionaries; zero columns are rejected.
    pub fn from_columns(size: usize, columns: Vec<Vec<f64>>) -> Result<Self> {
        let dim = size * size;
        let mut atoms = Vec::with_capacity(dim * columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != dim {
                return Err(Error::DimensionMismatch(format!(
                    "column {j} has length {}, expected {dim}",
                    col.len()
                )));
            }
            let norm = col.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                return Err(Error::InvalidConfig(format!("column {j} is zero")));
            }
            atoms.extend(col.iter().map(|v| v / norm));
        }
        Ok(Self {
            size,
            atoms,
            kinds: vec![AtomKind::Dct; columns.len()],
        })
    }

    /// `A·h`.
    pub fn synthesize(&self, h: &[f64]) -> Result<Vec<f64>> {
        if h.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "coefficient vector has length {}, dictionary has {} atoms",
                h.len(),
                self.len()
            )));
        }
        let mut out = vec![0.0; self.dim()];
        for (j, &w) in h.iter().enumerate() {
            if w != 0.0 {
                for (o, a) in out.iter_mut().zip(self.atom(j)) {
                    *o += w * a;
                }
            }
        }
        Ok(out)
    }

    /// Writes the `N² × M` matrix as text, one row per line.
    pub fn write_text(&self, mut out: impl Write) -> std::io::Result<()> {
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.len())
                .map(|j| format!("{:e}", self.atom(j)[i]))
                .collect();
            writeln!(out, "{}", row.join(" "))?;
        }
        Ok(())
    }

    pub fn save_text(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_text(&mut out)?;
        out.flush()?;
        Ok(())
    }
}

/// Cosine of frequency `freq / (2·period)` sampled at `n` DCT-II points.
fn cosine_1d(freq: usize, period: usize, n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| (PI * freq as f64 * (2 * i + 1) as f64 / (2 * period) as f64).cos())
        .collect()
}

/// Rows of the orthonormal Haar basis of length `len` (a power of two):
/// the constant vector followed by wavelets from coarse to fine.
fn haar_basis_1d(len: usize) -> Vec<Vec<f64>> {
    let mut basis = vec![vec![1.0; len]];
    let mut support = len;
    while support >= 2 {
        let half = support / 2;
        for start in (0..len).step_by(support) {
            let mut v = vec![0.0; len];
            v[start..start + half].fill(1.0);
            v[start + half..start + support].fill(-1.0);
            basis.push(v);
        }
        support = half;
    }
    basis
}

pub fn build_dictionary(size: usize, oversample: usize) -> Result<Dictionary> {
    if size < 3 || size.is_multiple_of(2) {
        return Err(Error::InvalidPatchSize {
            size,
            reason: "dictionary patch side must be odd and >= 3".into(),
        });
    }
    if oversample < 1 {
        return Err(Error::InvalidConfig(
            "oversample factor must be >= 1".into(),
        ));
    }
    let dim = size * size;
    let mut candidates: Vec<(Vec<f64>, AtomKind)> = Vec::new();

    let freqs = oversample * size;
    let cos: Vec<Vec<f64>> = (0..freqs).map(|p| cosine_1d(p, freqs, size)).collect();
    for p in 0..freqs {
        for q in 0..freqs {
            let atom: Vec<f64> = (0..dim)
                .map(|i| cos[p][i / size] * cos[q][i % size])
                .collect();
            candidates.push((atom, AtomKind::Dct));
        }
    }

    let grid = size.next_power_of_two();
    let haar = haar_basis_1d(grid);
    for row_fn in &haar {
        for col_fn in &haar {
            let atom: Vec<f64> = (0..dim)
                .map(|i| row_fn[i / size] * col_fn[i % size])
                .collect();
            candidates.push((atom, AtomKind::Wavelet));
        }
    }

    let mut atoms: Vec<f64> = Vec::new();
    let mut kinds = Vec::new();
    for (mut atom, kind) in candidates {
        let norm = atom.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            continue;
        }
        atom.iter_mut().for_each(|v| *v /= norm);
        let duplicate = atoms.chunks_exact(dim).any(|kept| {
            let dot: f64 = kept.iter().zip(&atom).map(|(a, b)| a * b).sum();
            dot.abs() > DUPLICATE_COSINE
        });
        if !duplicate {
            atoms.extend_from_slice(&atom);
            kinds.push(kind);
        }
    }
    Ok(Dictionary { size, atoms, kinds })
}
