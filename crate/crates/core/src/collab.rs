//! Fusion of active-probability vectors across a neighbor group.

use std::collections::BTreeSet;
use std::io::Write;

use crate::error::{Error, Result};

/// Fused priors are kept inside `[P_FLOOR, 1 - P_FLOOR]` so their log-odds stay finite.
pub const P_FLOOR: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq)]
pub struct FusedPrior {
    pub k: usize,
    pub lambda_prime: Vec<f64>,
}

/// Weighted mean of the group's active-probability vectors, before clipping.
pub fn weighted_mean<L: AsRef<[f64]>>(lambdas: &[L], weights: &[f64]) -> Result<Vec<f64>> {
    if lambdas.is_empty() || lambdas.len() != weights.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} probability vectors with {} weights",
            lambdas.len(),
            weights.len()
        )));
    }
    let m = lambdas[0].as_ref().len();
    let mut out = vec![0.0; m];
    for (lambda, &w) in lambdas.iter().zip(weights) {
        let lambda = lambda.as_ref();
        if lambda.len() != m {
            return Err(Error::DimensionMismatch(format!(
                "probability vectors of lengths {m} and {}",
                lambda.len()
            )));
        }
        for (o, l) in out.iter_mut().zip(lambda) {
            *o += w * l;
        }
    }
    Ok(out)
}

pub fn clip_probability(p: f64) -> f64 {
    p.clamp(P_FLOOR, 1.0 - P_FLOOR)
}

/// Fused prior for patch `k` from its group members' `lambdas` and the
/// normalized collaboration `weights`.
pub fn fuse_lambdas<L: AsRef<[f64]>>(
    k: usize,
    lambdas: &[L],
    weights: &[f64],
) -> Result<FusedPrior> {
    let mut lambda_prime = weighted_mean(lambdas, weights)?;
    lambda_prime
        .iter_mut()
        .for_each(|p| *p = clip_probability(*p));
    Ok(FusedPrior { k, lambda_prime })
}

/// Taps active in some but not all of the supports (union minus intersection).
pub fn outlier_support<S: AsRef<[usize]>>(supports: &[S]) -> Vec<usize> {
    let Some(first) = supports.first() else {
        return Vec::new();
    };
    let mut union: BTreeSet<usize> = BTreeSet::new();
    let mut common: BTreeSet<usize> = first.as_ref().iter().copied().collect();
    for s in supports {
        let set: BTreeSet<usize> = s.as_ref().iter().copied().collect();
        common = common.intersection(&set).copied().collect();
        union.extend(set);
    }
    union.difference(&common).copied().collect()
}

/// Per-patch collaboration summary.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupDiagnostic {
    pub k: usize,
    pub group_size: usize,
    pub outliers: usize,
    pub mean_lambda_prime: f64,
}

pub fn write_diagnostics_csv(rows: &[GroupDiagnostic], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "k,group_size,outliers,mean_lambda_prime")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.6}",
            r.k, r.group_size, r.outliers, r.mean_lambda_prime
        )?;
    }
    Ok(())
}
