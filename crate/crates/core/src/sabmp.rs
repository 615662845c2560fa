//! Support-agnostic Bayesian sparse recovery.
//!
//! A support `S` is scored by
//!
//! ```text
//! score(S) = ‖P_S y‖² / (2σ²) + Σ_{j∈S} ln(p_j / (1 - p_j))
//! ```
//!
//! where `P_S` projects onto the span of the atoms in `S` and `p_j` is the
//! prior probability that tap `j` is active. Only projections enter the
//! score, so nothing is assumed about the amplitude distribution.
//!
//! [`recover`] runs a beam search over supports of growing cardinality and
//! treats every support it scores as a sample of the posterior: weights are
//! the softmax of the scores, the active probability of a tap is the total
//! weight of the supports containing it, and the estimate is the
//! weight-averaged least-squares fit. [`exhaustive_posterior`] enumerates all
//! supports instead and serves as a reference for small dictionaries.

use std::collections::HashMap;

use crate::dictionary::Dictionary;
use crate::error::{Error, Result};

/// Residual norm² below which an added atom is considered linearly dependent.
const RANK_TOL: f64 = 1e-10;

/// Largest dictionary accepted by [`exhaustive_posterior`].
pub const EXHAUSTIVE_MAX_ATOMS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    /// Largest support cardinality explored.
    pub max_support: usize,
    /// Supports kept per cardinality level.
    pub beam_width: usize,
    /// Prior activity probability used when no per-tap priors are given.
    pub prior_p: f64,
    /// Noise standard deviation in the units of `y`.
    pub sigma_w: f64,
}

impl SolverConfig {
    /// Default sparsity for a patch side: `⌈0.15·N²⌉`.
    pub fn default_max_support(patch_size: usize) -> usize {
        (0.15 * (patch_size * patch_size) as f64).ceil() as usize
    }

    /// Defaults for `dict`: `max_support = ⌈0.15·N²⌉`, beam width 8,
    /// `prior_p = max_support / M`.
    pub fn for_dictionary(dict: &Dictionary, sigma_w: f64) -> Self {
        let max_support = Self::default_max_support(dict.patch_size());
        Self {
            max_support,
            beam_width: 8,
            prior_p: max_support as f64 / dict.len() as f64,
            sigma_w,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.max_support == 0 || 2 * self.max_support > dim {
            return Err(Error::InvalidConfig(format!(
                "max support {} must lie in [1, {}]",
                self.max_support,
                dim / 2
            )));
        }
        if self.beam_width == 0 {
            return Err(Error::InvalidConfig("beam width must be >= 1".into()));
        }
        if !(self.prior_p > 0.0 && self.prior_p < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "prior probability {} must lie in (0, 1)",
                self.prior_p
            )));
        }
        if !(self.sigma_w > 0.0 && self.sigma_w.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "noise sigma {} must be positive",
                self.sigma_w
            )));
        }
        Ok(())
    }
}

/// One support visited by the search with its posterior weight.
#[derive(Debug, Clone, PartialEq)]
pub struct ExploredSupport {
    /// Atom indices in ascending order.
    pub support: Vec<usize>,
    pub log_score: f64,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SparseResult {
    /// Posterior-weighted coefficient estimate (length `M`).
    pub h_hat: Vec<f64>,
    /// Posterior probability that each tap is active.
    pub lambda: Vec<f64>,
    /// Taps with `lambda >= 0.5`, ascending.
    pub support: Vec<usize>,
    /// Visited supports, best score first (ties by ascending support).
    pub explored: Vec<ExploredSupport>,
    /// Number of (support, atom) extensions scored.
    pub candidates_scored: usize,
}

impl SparseResult {
    fn empty(m: usize) -> Self {
        Self {
            h_hat: vec![0.0; m],
            lambda: vec![0.0; m],
            support: Vec::new(),
            explored: vec![ExploredSupport {
                support: Vec::new(),
                log_score: 0.0,
                weight: 1.0,
            }],
            candidates_scored: 0,
        }
    }
}

fn log_odds(priors: &[f64]) -> Vec<f64> {
    priors.iter().map(|&p| (p / (1.0 - p)).ln()).collect()
}

fn check_inputs(y: &[f64], dict: &Dictionary, priors: Option<&[f64]>) -> Result<()> {
    if y.len() != dict.dim() {
        return Err(Error::DimensionMismatch(format!(
            "observation has length {}, dictionary atoms have {}",
            y.len(),
            dict.dim()
        )));
    }
    if let Some(p) = priors {
        if p.len() != dict.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} priors for {} atoms",
                p.len(),
                dict.len()
            )));
        }
        if let Some(bad) = p.iter().find(|&&v| !(v > 0.0 && v < 1.0)) {
            return Err(Error::InvalidConfig(format!("prior {bad} outside (0, 1)")));
        }
    }
    Ok(())
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Orthonormal basis of the span of `atoms`, built by Gram-Schmidt with one
/// reorthogonalization pass. Fails if an atom is (numerically) dependent.
fn orthonormal_basis(dict: &Dictionary, atoms: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(atoms.len());
    for &j in atoms {
        let a = dict.atom(j);
        let mut v = a.to_vec();
        for _ in 0..2 {
            for q in &basis {
                let c = dot(q, &v);
                v.iter_mut().zip(q).for_each(|(vi, qi)| *vi -= c * qi);
            }
        }
        let n2 = dot(&v, &v);
        if n2 <= RANK_TOL * dot(a, a) {
            return Err(Error::RankDeficient);
        }
        let n = n2.sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        basis.push(v);
    }
    Ok(basis)
}

/// Log-score of a single support.
pub fn support_score(
    support: &[usize],
    y: &[f64],
    dict: &Dictionary,
    sigma_w: f64,
    priors: &[f64],
) -> Result<f64> {
    check_inputs(y, dict, Some(priors))?;
    if support.is_empty() {
        return Ok(0.0);
    }
    let basis = orthonormal_basis(dict, support)?;
    let energy: f64 = basis.iter().map(|q| dot(q, y).powi(2)).sum();
    let prior: f64 = support
        .iter()
        .map(|&j| (priors[j] / (1.0 - priors[j])).ln())
        .sum();
    Ok(energy / (2.0 * sigma_w * sigma_w) + prior)
}

/// A support kept in the beam, with its QR factorization and the
/// per-atom quantities needed to score extensions in O(1).
struct Node {
    /// Atoms in insertion order.
    atoms: Vec<usize>,
    in_support: Vec<bool>,
    /// Orthonormal basis, one row of length `dim` per atom.
    q: Vec<f64>,
    /// Upper-triangular `s×s` factor, row-major.
    r: Vec<f64>,
    /// Least-squares coefficients in insertion order.
    coef: Vec<f64>,
    /// `Qᵀy`.
    z: Vec<f64>,
    /// `q_iᵀ a_j` for every basis row `i` and atom `j` (`s × M`).
    qta: Vec<f64>,
    /// Squared norm of each atom's component orthogonal to the span.
    perp2: Vec<f64>,
    /// Correlation of each atom with the current residual.
    corr: Vec<f64>,
    energy: f64,
    prior_sum: f64,
}

impl Node {
    fn root(y: &[f64], dict: &Dictionary) -> Self {
        let m = dict.len();
        Self {
            atoms: Vec::new(),
            in_support: vec![false; m],
            q: Vec::new(),
            r: Vec::new(),
            coef: Vec::new(),
            z: Vec::new(),
            qta: Vec::new(),
            perp2: (0..m).map(|j| dot(dict.atom(j), dict.atom(j))).collect(),
            corr: (0..m).map(|j| dot(dict.atom(j), y)).collect(),
            energy: 0.0,
            prior_sum: 0.0,
        }
    }

    fn len(&self) -> usize {
        self.atoms.len()
    }

    /// Least-squares coefficients of the support extended by `j`,
    /// in insertion order with `j` last.
    fn extended_coef(&self, j: usize, m: usize) -> Vec<f64> {
        let s = self.len();
        let x_new = self.corr[j] / self.perp2[j];
        // u = R⁻¹ c_j
        let mut u = vec![0.0; s];
        for i in (0..s).rev() {
            let mut acc = self.qta[i * m + j];
            for k in i + 1..s {
                acc -= self.r[i * s + k] * u[k];
            }
            u[i] = acc / self.r[i * s + i];
        }
        let mut coef: Vec<f64> = self
            .coef
            .iter()
            .zip(&u)
            .map(|(c, ui)| c - ui * x_new)
            .collect();
        coef.push(x_new);
        coef
    }

    fn child(&self, j: usize, y: &[f64], dict: &Dictionary, prior: f64) -> Node {
        let dim = dict.dim();
        let m = dict.len();
        let s = self.len();
        let a = dict.atom(j);

        let mut v = a.to_vec();
        let mut rcol = vec![0.0; s];
        for _ in 0..2 {
            for i in 0..s {
                let qi = &self.q[i * dim..(i + 1) * dim];
                let c = dot(qi, &v);
                rcol[i] += c;
                v.iter_mut().zip(qi).for_each(|(vk, qk)| *vk -= c * qk);
            }
        }
        let rho = dot(&v, &v).sqrt();
        v.iter_mut().for_each(|x| *x /= rho);
        let z_new = dot(&v, y);

        let mut q = Vec::with_capacity((s + 1) * dim);
        q.extend_from_slice(&self.q);
        q.extend_from_slice(&v);

        let n = s + 1;
        let mut r = vec![0.0; n * n];
        for i in 0..s {
            r[i * n..i * n + s].copy_from_slice(&self.r[i * s..(i + 1) * s]);
            r[i * n + s] = rcol[i];
        }
        r[s * n + s] = rho;

        let new_row: Vec<f64> = (0..m).map(|k| dot(&v, dict.atom(k))).collect();
        let mut qta = Vec::with_capacity(n * m);
        qta.extend_from_slice(&self.qta);
        qta.extend_from_slice(&new_row);

        let perp2 = self
            .perp2
            .iter()
            .zip(&new_row)
            .map(|(p, c)| p - c * c)
            .collect();
        let corr = self
            .corr
            .iter()
            .zip(&new_row)
            .map(|(x, c)| x - c * z_new)
            .collect();

        let mut z = self.z.clone();
        z.push(z_new);
        let mut coef = vec![0.0; n];
        for i in (0..n).rev() {
            let mut acc = z[i];
            for k in i + 1..n {
                acc -= r[i * n + k] * coef[k];
            }
            coef[i] = acc / r[i * n + i];
        }

        let mut atoms = self.atoms.clone();
        atoms.push(j);
        let mut in_support = self.in_support.clone();
        in_support[j] = true;
        Node {
            atoms,
            in_support,
            q,
            r,
            coef,
            z,
            qta,
            perp2,
            corr,
            energy: self.energy + z_new * z_new,
            prior_sum: self.prior_sum + prior,
        }
    }
}

/// Scored extension `parent ∪ {atom}`.
struct Candidate {
    parent: usize,
    atom: usize,
    key: Vec<u32>,
    score: f64,
    energy: f64,
}

fn rank_order(a_score: f64, a_key: &[u32], b_score: f64, b_key: &[u32]) -> std::cmp::Ordering {
    b_score.total_cmp(&a_score).then_with(|| a_key.cmp(b_key))
}

/// Beam-search posterior over supports. See the module docs for the model.
///
/// Starting from the empty support, every kept support is extended by each
/// atom not already in it; the `beam_width` best distinct supports of each
/// cardinality are kept. The search stops at `max_support`, or as soon as the
/// smallest residual energy at a level drops to the noise floor `N²·σ²`.
pub fn recover(
    y: &[f64],
    dict: &Dictionary,
    cfg: &SolverConfig,
    priors: Option<&[f64]>,
) -> Result<SparseResult> {
    let m = dict.len();
    if y.is_empty() {
        return Ok(SparseResult::empty(m));
    }
    check_inputs(y, dict, priors)?;
    cfg.validate(dict.dim())?;
    let odds = match priors {
        Some(p) => log_odds(p),
        None => vec![(cfg.prior_p / (1.0 - cfg.prior_p)).ln(); m],
    };
    let two_var = 2.0 * cfg.sigma_w * cfg.sigma_w;
    let total_energy = dot(y, y);
    let floor = dict.dim() as f64 * cfg.sigma_w * cfg.sigma_w;

    let mut nodes = vec![Node::root(y, dict)];
    let mut explored: Vec<Candidate> = Vec::new();
    let mut scored = 0usize;
    let mut beam: Vec<usize> = vec![0];

    let mut level = 0;
    let mut stop = total_energy <= floor;
    while !stop && level < cfg.max_support {
        level += 1;
        let mut seen: HashMap<Vec<u32>, usize> = HashMap::new();
        let level_start = explored.len();
        for &p in &beam {
            let node = &nodes[p];
            for j in 0..m {
                if node.in_support[j] || node.perp2[j] <= RANK_TOL {
                    continue;
                }
                scored += 1;
                let mut key: Vec<u32> = node.atoms.iter().map(|&a| a as u32).collect();
                key.push(j as u32);
                key.sort_unstable();
                if seen.contains_key(&key) {
                    continue;
                }
                let energy = node.energy + node.corr[j] * node.corr[j] / node.perp2[j];
                let score = energy / two_var + node.prior_sum + odds[j];
                seen.insert(key.clone(), explored.len());
                explored.push(Candidate {
                    parent: p,
                    atom: j,
                    key,
                    score,
                    energy,
                });
            }
        }
        let level_slice = &explored[level_start..];
        if level_slice.is_empty() {
            break;
        }
        let best_energy = level_slice
            .iter()
            .map(|c| c.energy)
            .fold(f64::NEG_INFINITY, f64::max);
        stop = total_energy - best_energy <= floor;
        if !stop && level < cfg.max_support {
            let mut order: Vec<usize> = (level_start..explored.len()).collect();
            order.sort_by(|&a, &b| {
                rank_order(
                    explored[a].score,
                    &explored[a].key,
                    explored[b].score,
                    &explored[b].key,
                )
            });
            order.truncate(cfg.beam_width);
            beam = order
                .into_iter()
                .map(|c| {
                    let cand = &explored[c];
                    let child = nodes[cand.parent].child(cand.atom, y, dict, odds[cand.atom]);
                    nodes.push(child);
                    nodes.len() - 1
                })
                .collect();
        }
    }

    // posterior over {∅} ∪ explored
    let max_score = explored.iter().map(|c| c.score).fold(0.0f64, f64::max);
    let empty_w = (-max_score).exp();
    let raw: Vec<f64> = explored
        .iter()
        .map(|c| (c.score - max_score).exp())
        .collect();
    let total = empty_w + raw.iter().sum::<f64>();

    let mut lambda = vec![0.0; m];
    let mut h_hat = vec![0.0; m];
    for (c, r) in explored.iter().zip(&raw) {
        let w = r / total;
        if w == 0.0 {
            continue;
        }
        for &a in &c.key {
            lambda[a as usize] += w;
        }
        let node = &nodes[c.parent];
        let coef = node.extended_coef(c.atom, m);
        for (&a, x) in node.atoms.iter().chain(std::iter::once(&c.atom)).zip(coef) {
            h_hat[a] += w * x;
        }
    }
    lambda.iter_mut().for_each(|l| *l = l.clamp(0.0, 1.0));

    let mut out: Vec<ExploredSupport> = Vec::with_capacity(explored.len() + 1);
    out.push(ExploredSupport {
        support: Vec::new(),
        log_score: 0.0,
        weight: empty_w / total,
    });
    out.extend(explored.iter().zip(&raw).map(|(c, r)| ExploredSupport {
        support: c.key.iter().map(|&a| a as usize).collect(),
        log_score: c.score,
        weight: r / total,
    }));
    sort_explored(&mut out);

    Ok(SparseResult {
        support: (0..m).filter(|&j| lambda[j] >= 0.5).collect(),
        h_hat,
        lambda,
        explored: out,
        candidates_scored: scored,
    })
}

fn sort_explored(list: &mut [ExploredSupport]) {
    list.sort_by(|a, b| {
        b.log_score
            .total_cmp(&a.log_score)
            .then_with(|| a.support.cmp(&b.support))
    });
}

/// Cholesky factor of the Gram matrix of `atoms`, or `None` if a pivot
/// falls below the rank tolerance.
fn gram_cholesky(dict: &Dictionary, atoms: &[usize]) -> Option<Vec<f64>> {
    let s = atoms.len();
    let mut l = vec![0.0; s * s];
    for i in 0..s {
        for j in 0..=i {
            let mut acc = dot(dict.atom(atoms[i]), dict.atom(atoms[j]));
            for k in 0..j {
                acc -= l[i * s + k] * l[j * s + k];
            }
            if i == j {
                if acc <= RANK_TOL {
                    return None;
                }
                l[i * s + i] = acc.sqrt();
            } else {
                l[i * s + j] = acc / l[j * s + j];
            }
        }
    }
    Some(l)
}

/// Reference posterior that scores every support up to `max_support`.
///
/// Uses the normal equations per support and the same stopping rule as
/// [`recover`] (stop once a level reaches the noise floor), so the two agree
/// whenever the beam is wide enough to keep every support.
pub fn exhaustive_posterior(
    y: &[f64],
    dict: &Dictionary,
    cfg: &SolverConfig,
    priors: Option<&[f64]>,
) -> Result<SparseResult> {
    let m = dict.len();
    if m > EXHAUSTIVE_MAX_ATOMS {
        return Err(Error::TooManyAtoms(m));
    }
    if y.is_empty() {
        return Ok(SparseResult::empty(m));
    }
    check_inputs(y, dict, priors)?;
    cfg.validate(dict.dim())?;
    let odds = match priors {
        Some(p) => log_odds(p),
        None => vec![(cfg.prior_p / (1.0 - cfg.prior_p)).ln(); m],
    };
    let two_var = 2.0 * cfg.sigma_w * cfg.sigma_w;
    let total_energy = dot(y, y);
    let floor = dict.dim() as f64 * cfg.sigma_w * cfg.sigma_w;

    // (support, score, coefficients)
    let mut entries: Vec<(Vec<usize>, f64, Vec<f64>)> = vec![(Vec::new(), 0.0, Vec::new())];
    let mut scored = 0;
    let mut stop = total_energy <= floor;
    let mut level = 0;
    while !stop && level < cfg.max_support {
        level += 1;
        let mut best_energy = f64::NEG_INFINITY;
        let mut any = false;
        for support in combinations(m, level) {
            scored += 1;
            let Some(l) = gram_cholesky(dict, &support) else {
                continue;
            };
            let s = support.len();
            let b: Vec<f64> = support.iter().map(|&j| dot(dict.atom(j), y)).collect();
            // L w = b, Lᵀ x = w
            let mut w = vec![0.0; s];
            for i in 0..s {
                let acc = b[i] - (0..i).map(|k| l[i * s + k] * w[k]).sum::<f64>();
                w[i] = acc / l[i * s + i];
            }
            let mut x = vec![0.0; s];
            for i in (0..s).rev() {
                let acc = w[i] - (i + 1..s).map(|k| l[k * s + i] * x[k]).sum::<f64>();
                x[i] = acc / l[i * s + i];
            }
            let energy: f64 = w.iter().map(|v| v * v).sum();
            let score = energy / two_var + support.iter().map(|&j| odds[j]).sum::<f64>();
            best_energy = best_energy.max(energy);
            any = true;
            entries.push((support, score, x));
        }
        if !any {
            break;
        }
        stop = total_energy - best_energy <= floor;
    }

    let max_score = entries
        .iter()
        .map(|e| e.1)
        .fold(f64::NEG_INFINITY, f64::max);
    let raw: Vec<f64> = entries.iter().map(|e| (e.1 - max_score).exp()).collect();
    let total: f64 = raw.iter().sum();
    let mut lambda = vec![0.0; m];
    let mut h_hat = vec![0.0; m];
    let mut explored = Vec::with_capacity(entries.len());
    for ((support, score, x), r) in entries.into_iter().zip(raw) {
        let w = r / total;
        for (&j, xj) in support.iter().zip(&x) {
            lambda[j] += w;
            h_hat[j] += w * xj;
        }
        explored.push(ExploredSupport {
            support,
            log_score: score,
            weight: w,
        });
    }
    lambda.iter_mut().for_each(|l| *l = l.clamp(0.0, 1.0));
    sort_explored(&mut explored);
    Ok(SparseResult {
        support: (0..m).filter(|&j| lambda[j] >= 0.5).collect(),
        h_hat,
        lambda,
        explored,
        candidates_scored: scored,
    })
}

/// All `k`-subsets of `0..n` in lexicographic order.
fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    if k > n {
        return out;
    }
    let mut idx: Vec<usize> = (0..k).collect();
    loop {
        out.push(idx.clone());
        let mut i = k;
        while i > 0 && idx[i - 1] == n - k + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for t in i..k {
            idx[t] = idx[t - 1] + 1;
        }
    }
}
