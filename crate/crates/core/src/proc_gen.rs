//! Source models and block sampling.
//!
//! A [`ProcessSpec`] names a stationary process; [`sample_process`] draws
//! `trials` independent realizations of the block `X^n = (X_1, ..., X_n)`
//! into a [`SampleBatch`]. The models:
//!
//! * `IidMixed { p }`: i.i.d. coordinates, each 0 with probability `1 - p`
//!   and uniform on `[0, 1]` with probability `p` (a mixed
//!   discrete-continuous marginal; the sparse source).
//! * `IidUniform`: i.i.d. uniform on `[0, 1]` (the fully continuous case).
//! * `GaussianStationary { cov }`: a centered Gaussian block with covariance
//!   given by [`CovarianceSpec`], sampled through a symmetric
//!   eigenfactorization with small-eigenvalue clipping.
//! * `MarkovChain { transition, emissions }`: a finite, irreducible,
//!   aperiodic chain started from its stationary law, emitting one real
//!   value per state.
//! * `DigitShared` / `DigitIid { digits, depth }`: binary-digit mixtures.
//!   With `S = digits`, family Y places fair random bits on positions in `S`
//!   and zeros elsewhere, family Z uses the complementary positions, and a
//!   fair indicator picks the family: one indicator per trial for
//!   `DigitShared` (non-ergodic mixture), one per coordinate for `DigitIid`.
//!   Values are truncated at `depth <= 52` binary digits so every sample is
//!   an exact dyadic rational.
//!
//! Each trial owns the derived stream `(seed, label, trial)` from
//! [`crate::seeding`], so batches are bit-identical across thread counts.

use std::collections::BTreeSet;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::seeding;
use crate::{Error, Result};

/// Largest number of f64 samples one batch may hold (memory guard).
const MAX_BATCH_ELEMENTS: usize = 200_000_000;

/// Covariance structure for `GaussianStationary`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum CovarianceSpec {
    /// `Sigma[i][j] = sigma2` for all i, j: one shared Gaussian replicated
    /// across the block (rank at most 1).
    ConstantCorrelation { sigma2: f64 },
    /// `Sigma = sigma2 * I`: independent coordinates.
    WhiteNoise { sigma2: f64 },
    /// Toeplitz covariance from autocovariances `acf[h]` at lag h
    /// (zero beyond the last entry).
    Toeplitz { acf: Vec<f64> },
}

/// Process family plus its parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessKind {
    IidMixed { p: f64 },
    IidUniform,
    GaussianStationary { cov: CovarianceSpec },
    MarkovChain { transition: Vec<Vec<f64>>, emissions: Vec<f64> },
    DigitShared { digits: BTreeSet<u32>, depth: u32 },
    DigitIid { digits: BTreeSet<u32>, depth: u32 },
}

/// A named source model, optionally carrying a caller-declared mean
/// information dimension that overrides the built-in closed forms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessSpec {
    pub kind: ProcessKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<f64>,
}

impl ProcessSpec {
    pub fn new(kind: ProcessKind) -> Self {
        ProcessSpec { kind, ground_truth: None }
    }

    /// Check every parameter invariant, naming the offending config field.
    pub fn validate(&self) -> Result<()> {
        match &self.kind {
            ProcessKind::IidMixed { p } => {
                if !(0.0..=1.0).contains(p) || !p.is_finite() {
                    return Err(Error::parameter("params.p", "must lie in [0, 1]"));
                }
            }
            ProcessKind::IidUniform => {}
            ProcessKind::GaussianStationary { cov } => validate_covariance(cov)?,
            ProcessKind::MarkovChain { transition, emissions } => {
                validate_markov(transition, emissions)?
            }
            ProcessKind::DigitShared { digits, depth }
            | ProcessKind::DigitIid { digits, depth } => {
                if !(1..=52).contains(depth) {
                    return Err(Error::parameter("params.depth", "must lie in [1, 52]"));
                }
                if let Some(&j) = digits.iter().find(|&&j| j < 1 || j > *depth) {
                    return Err(Error::parameter(
                        "params.digits",
                        format!("index {j} outside [1, depth={depth}]"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Closed-form mean information dimension, when the model has one.
    ///
    /// `IidMixed` has mid p (an i.i.d. mixed marginal contributes its
    /// continuous weight), `IidUniform` has mid 1, Gaussian blocks have
    /// mid `lim rank(Sigma_n)/n` (0 for the rank-1 and degenerate cases,
    /// 1 for white noise), and both digit mixtures have mid 1/2: at depth b
    /// the two digit families together always occupy b positions, so the
    /// conditional block entropy is exactly nb/2 bits regardless of which
    /// positions the set S claims. Markov chains and general Toeplitz
    /// covariances return `None`. A `ground_truth` field on the spec takes
    /// precedence.
    pub fn ground_truth_mid(&self) -> Option<f64> {
        if self.ground_truth.is_some() {
            return self.ground_truth;
        }
        match &self.kind {
            ProcessKind::IidMixed { p } => Some(*p),
            ProcessKind::IidUniform => Some(1.0),
            ProcessKind::GaussianStationary { cov } => match cov {
                CovarianceSpec::ConstantCorrelation { .. } => Some(0.0),
                CovarianceSpec::WhiteNoise { sigma2 } => {
                    Some(if *sigma2 > 0.0 { 1.0 } else { 0.0 })
                }
                CovarianceSpec::Toeplitz { acf } => {
                    if acf.iter().all(|&g| g == 0.0) {
                        Some(0.0)
                    } else {
                        None
                    }
                }
            },
            ProcessKind::MarkovChain { .. } => None,
            ProcessKind::DigitShared { .. } | ProcessKind::DigitIid { .. } => Some(0.5),
        }
    }
}

/// `trials` sampled blocks of length `n`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    pub spec: ProcessSpec,
    pub n: usize,
    pub trials: usize,
    pub seed: u64,
    pub data: Vec<f64>,
}

impl SampleBatch {
    pub fn row(&self, trial: usize) -> &[f64] {
        &self.data[trial * self.n..(trial + 1) * self.n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.data.chunks_exact(self.n)
    }

    /// Build a batch directly from rows (for file import and tests).
    pub fn from_rows(spec: ProcessSpec, n: usize, data: Vec<f64>, seed: u64) -> Result<Self> {
        if n == 0 || data.is_empty() || data.len() % n != 0 {
            return Err(Error::Data(format!(
                "data length {} is not a positive multiple of n = {n}",
                data.len()
            )));
        }
        Ok(SampleBatch { spec, n, trials: data.len() / n, seed, data })
    }
}

/// Exact dyadic cell mass `2^{-#(S ∩ [1,b])}`: the probability that the
/// digit family constrained to positions in S hits one fixed depth-`b` cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicMass {
    /// The exponent `#(S ∩ [1, b])`; the mass is `1 / 2^pow`.
    pub pow: u32,
}

impl DyadicMass {
    pub fn value(self) -> f64 {
        (-(self.pow as f64)).exp2()
    }

    /// `(numerator, denominator)` of the exact rational.
    pub fn as_fraction(self) -> (u64, u64) {
        (1, 1u64 << self.pow)
    }
}

/// Mass of a depth-`b` dyadic cell under the digit family with support `S`.
///
/// Requires `1 <= b <= 63` so the denominator is exact in 64 bits.
pub fn dyadic_cell_mass(s: &BTreeSet<u32>, b: u32) -> Result<DyadicMass> {
    if b < 1 {
        return Err(Error::parameter("b", "depth must be >= 1"));
    }
    if b > 63 {
        return Err(Error::Capacity(format!(
            "depth b = {b} exceeds the exact dyadic range (b <= 63)"
        )));
    }
    let pow = s.iter().filter(|&&j| (1..=b).contains(&j)).count() as u32;
    Ok(DyadicMass { pow })
}

/// Draw `trials` blocks of length `n` from `spec`, deterministically in
/// `seed`. Trial `t` consumes only the stream `(seed, "sample", t)`.
pub fn sample_process(
    spec: &ProcessSpec,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<SampleBatch> {
    spec.validate()?;
    if n < 1 {
        return Err(Error::parameter("n", "block length must be >= 1"));
    }
    if trials < 1 {
        return Err(Error::parameter("trials", "must be >= 1"));
    }
    let elements = n
        .checked_mul(trials)
        .filter(|&e| e <= MAX_BATCH_ELEMENTS)
        .ok_or_else(|| {
            Error::Capacity(format!(
                "n * trials = {n} * {trials} exceeds the {MAX_BATCH_ELEMENTS}-sample batch cap"
            ))
        })?;

    let trial_sampler: Box<dyn Fn(&mut rand_chacha::ChaCha8Rng, &mut [f64]) + Sync> =
        match &spec.kind {
            ProcessKind::IidMixed { p } => {
                let p = *p;
                Box::new(move |rng, row| {
                    for v in row.iter_mut() {
                        let keep = rng.gen_bool(p);
                        let u: f64 = rng.gen();
                        *v = if keep { u } else { 0.0 };
                    }
                })
            }
            ProcessKind::IidUniform => Box::new(|rng, row| {
                for v in row.iter_mut() {
                    *v = rng.gen();
                }
            }),
            ProcessKind::GaussianStationary { cov } => {
                let factor = gaussian_factor(cov, n)?;
                Box::new(move |rng, row| {
                    let z: Vec<f64> =
                        (0..n).map(|_| StandardNormal.sample(rng)).collect();
                    for (i, v) in row.iter_mut().enumerate() {
                        *v = (0..n).map(|j| factor[(i, j)] * z[j]).sum();
                    }
                })
            }
            ProcessKind::MarkovChain { transition, emissions } => {
                let pi = stationary_distribution(transition);
                let transition = transition.clone();
                let emissions = emissions.clone();
                Box::new(move |rng, row| {
                    let mut state = sample_categorical(&pi, rng.gen());
                    row[0] = emissions[state];
                    for v in row.iter_mut().skip(1) {
                        state = sample_categorical(&transition[state], rng.gen());
                        *v = emissions[state];
                    }
                })
            }
            ProcessKind::DigitShared { digits, depth } => {
                let digits = digits.clone();
                let depth = *depth;
                Box::new(move |rng, row| {
                    let family_y = rng.gen_bool(0.5);
                    for v in row.iter_mut() {
                        *v = sample_digit_value(&digits, depth, family_y, rng);
                    }
                })
            }
            ProcessKind::DigitIid { digits, depth } => {
                let digits = digits.clone();
                let depth = *depth;
                Box::new(move |rng, row| {
                    for v in row.iter_mut() {
                        let family_y = rng.gen_bool(0.5);
                        *v = sample_digit_value(&digits, depth, family_y, rng);
                    }
                })
            }
        };

    let mut data = vec![0.0f64; elements];
    data.par_chunks_mut(n).enumerate().for_each(|(t, row)| {
        let mut rng = seeding::stream(seed, "sample", t as u64);
        trial_sampler(&mut rng, row);
    });

    Ok(SampleBatch { spec: spec.clone(), n, trials, seed, data })
}

/// One digit-family draw: fair bits on the active positions, zeros on the
/// rest. `family_y` selects positions in `digits`; otherwise the complement
/// within `[1, depth]`. A bit is drawn for every position so the stream
/// layout does not depend on the family.
fn sample_digit_value(
    digits: &BTreeSet<u32>,
    depth: u32,
    family_y: bool,
    rng: &mut rand_chacha::ChaCha8Rng,
) -> f64 {
    let mut v = 0.0;
    for j in 1..=depth {
        let bit = rng.gen_bool(0.5);
        if bit && (digits.contains(&j) == family_y) {
            v += (-(j as f64)).exp2();
        }
    }
    v
}

/// Digits of a sampled value: bit at position j is the coefficient of
/// `2^{-j}`. Exact for values produced by the digit generators.
pub fn binary_digits(value: f64, depth: u32) -> Vec<u8> {
    let mut rest = value;
    (1..=depth)
        .map(|j| {
            let w = (-(j as f64)).exp2();
            if rest >= w {
                rest -= w;
                1
            } else {
                0
            }
        })
        .collect()
}

fn validate_covariance(cov: &CovarianceSpec) -> Result<()> {
    match cov {
        CovarianceSpec::ConstantCorrelation { sigma2 }
        | CovarianceSpec::WhiteNoise { sigma2 } => {
            if !sigma2.is_finite() || *sigma2 < 0.0 {
                return Err(Error::parameter("params.cov.sigma2", "must be finite and >= 0"));
            }
        }
        CovarianceSpec::Toeplitz { acf } => {
            if acf.is_empty() {
                return Err(Error::parameter("params.cov.acf", "must be nonempty"));
            }
            if acf.iter().any(|g| !g.is_finite()) {
                return Err(Error::parameter("params.cov.acf", "entries must be finite"));
            }
            if acf[0] < 0.0 {
                return Err(Error::parameter("params.cov.acf", "lag-0 autocovariance must be >= 0"));
            }
        }
    }
    Ok(())
}

/// Symmetric factor B with `B B^T = Sigma_n`, via eigendecomposition.
/// Eigenvalues below `1e-12 * max` are clipped to zero; eigenvalues below
/// `-1e-8 * max` mean the input is not a covariance.
fn gaussian_factor(cov: &CovarianceSpec, n: usize) -> Result<DMatrix<f64>> {
    let sigma = match cov {
        CovarianceSpec::ConstantCorrelation { sigma2 } => {
            DMatrix::from_element(n, n, *sigma2)
        }
        CovarianceSpec::WhiteNoise { sigma2 } => {
            DMatrix::from_diagonal_element(n, n, *sigma2)
        }
        CovarianceSpec::Toeplitz { acf } => DMatrix::from_fn(n, n, |i, j| {
            let lag = i.abs_diff(j);
            acf.get(lag).copied().unwrap_or(0.0)
        }),
    };
    let eig = sigma.symmetric_eigen();
    let max_ev = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b));
    if max_ev == 0.0 && eig.eigenvalues.iter().all(|&l| l.abs() <= f64::EPSILON) {
        return Ok(DMatrix::zeros(n, n));
    }
    let mut scaled = eig.eigenvectors.clone();
    for (j, &lambda) in eig.eigenvalues.iter().enumerate() {
        if lambda < -1e-8 * max_ev.max(1.0) {
            return Err(Error::parameter(
                "params.cov",
                format!("matrix has negative eigenvalue {lambda:e}: not positive semidefinite"),
            ));
        }
        let root = if lambda <= 1e-12 * max_ev { 0.0 } else { lambda.sqrt() };
        for i in 0..n {
            scaled[(i, j)] *= root;
        }
    }
    Ok(scaled)
}

fn validate_markov(transition: &[Vec<f64>], emissions: &[f64]) -> Result<()> {
    let s = transition.len();
    if s == 0 {
        return Err(Error::parameter("params.transition", "must be nonempty"));
    }
    if emissions.len() != s {
        return Err(Error::parameter(
            "params.emissions",
            format!("needs one emission per state ({s})"),
        ));
    }
    if emissions.iter().any(|e| !e.is_finite()) {
        return Err(Error::parameter("params.emissions", "entries must be finite"));
    }
    for (i, row) in transition.iter().enumerate() {
        if row.len() != s {
            return Err(Error::parameter(
                "params.transition",
                format!("row {i} has length {} != {s}", row.len()),
            ));
        }
        if row.iter().any(|&p| !p.is_finite() || p < 0.0) {
            return Err(Error::parameter(
                "params.transition",
                format!("row {i} has negative or non-finite entries"),
            ));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::parameter(
                "params.transition",
                format!("row {i} sums to {sum}, expected 1"),
            ));
        }
    }
    if !is_irreducible(transition) {
        return Err(Error::parameter("params.transition", "chain is not irreducible"));
    }
    if period(transition) != 1 {
        return Err(Error::parameter("params.transition", "chain is not aperiodic"));
    }
    Ok(())
}

fn reachable(transition: &[Vec<f64>], from: usize, reverse: bool) -> Vec<bool> {
    let s = transition.len();
    let mut seen = vec![false; s];
    let mut stack = vec![from];
    seen[from] = true;
    while let Some(u) = stack.pop() {
        for v in 0..s {
            let edge = if reverse { transition[v][u] } else { transition[u][v] };
            if edge > 0.0 && !seen[v] {
                seen[v] = true;
                stack.push(v);
            }
        }
    }
    seen
}

fn is_irreducible(transition: &[Vec<f64>]) -> bool {
    reachable(transition, 0, false).iter().all(|&r| r)
        && reachable(transition, 0, true).iter().all(|&r| r)
}

/// Period of an irreducible chain: gcd over all edges (u, v) of
/// `level(u) + 1 - level(v)` with BFS levels from state 0. Every cycle
/// length is a multiple of this gcd, so a gcd of 1 means aperiodic.
fn period(transition: &[Vec<f64>]) -> u64 {
    let s = transition.len();
    let mut level = vec![usize::MAX; s];
    let mut queue = std::collections::VecDeque::from([0usize]);
    level[0] = 0;
    while let Some(u) = queue.pop_front() {
        for v in 0..s {
            if transition[u][v] > 0.0 && level[v] == usize::MAX {
                level[v] = level[u] + 1;
                queue.push_back(v);
            }
        }
    }
    let mut g: u64 = 0;
    for u in 0..s {
        for v in 0..s {
            if transition[u][v] > 0.0 {
                let diff = (level[u] as i64 + 1 - level[v] as i64).unsigned_abs();
                g = gcd(g, diff);
            }
        }
    }
    g.max(1)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Stationary row vector of a validated transition matrix, by power
/// iteration (converges for irreducible aperiodic chains).
fn stationary_distribution(transition: &[Vec<f64>]) -> Vec<f64> {
    let s = transition.len();
    let mut pi = vec![1.0 / s as f64; s];
    for _ in 0..100_000 {
        let mut next = vec![0.0; s];
        for (i, row) in transition.iter().enumerate() {
            for j in 0..s {
                next[j] += pi[i] * row[j];
            }
        }
        let delta: f64 = pi.iter().zip(&next).map(|(a, b)| (a - b).abs()).sum();
        pi = next;
        if delta < 1e-14 {
            break;
        }
    }
    pi
}

/// Inverse-CDF draw from a probability row, `u` uniform on [0, 1).
fn sample_categorical(probs: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::ks_statistic;

    fn even_digits(depth: u32) -> BTreeSet<u32> {
        (1..=depth).filter(|j| j % 2 == 0).collect()
    }

    #[test]
    fn iid_mixed_p_zero_is_all_zero() {
        let spec = ProcessSpec::new(ProcessKind::IidMixed { p: 0.0 });
        let batch = sample_process(&spec, 5, 3, 7).unwrap();
        assert!(batch.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn iid_mixed_nonzero_fraction_tracks_p() {
        let spec = ProcessSpec::new(ProcessKind::IidMixed { p: 0.3 });
        let batch = sample_process(&spec, 1000, 1, 11).unwrap();
        let frac = batch.data.iter().filter(|&&v| v != 0.0).count() as f64 / 1000.0;
        assert!((frac - 0.3).abs() <= 0.05, "nonzero fraction {frac}");
    }

    #[test]
    fn rank_one_gaussian_rows_are_constant() {
        let spec = ProcessSpec::new(ProcessKind::GaussianStationary {
            cov: CovarianceSpec::ConstantCorrelation { sigma2: 1.0 },
        });
        let batch = sample_process(&spec, 10, 20, 3).unwrap();
        for row in batch.rows() {
            for &v in row {
                assert!((v - row[0]).abs() <= 1e-9 * (1.0 + row[0].abs()));
            }
        }
        // not all rows the same value
        assert!((batch.row(0)[0] - batch.row(1)[0]).abs() > 1e-12);
    }

    #[test]
    fn digit_shared_trials_stay_in_one_family() {
        let depth = 20;
        let s = even_digits(depth);
        let spec = ProcessSpec::new(ProcessKind::DigitShared { digits: s.clone(), depth });
        let batch = sample_process(&spec, 6, 200, 5).unwrap();
        let mut saw_y = false;
        let mut saw_z = false;
        for row in batch.rows() {
            let mut on_s = false;
            let mut off_s = false;
            for &v in row {
                for (idx, &bit) in binary_digits(v, depth).iter().enumerate() {
                    if bit == 1 {
                        if s.contains(&(idx as u32 + 1)) {
                            on_s = true;
                        } else {
                            off_s = true;
                        }
                    }
                }
            }
            assert!(!(on_s && off_s), "trial mixes digit families");
            saw_y |= on_s;
            saw_z |= off_s;
        }
        assert!(saw_y && saw_z, "both families should appear across 200 trials");
    }

    #[test]
    fn digit_iid_family_indicator_is_balanced() {
        let depth = 20;
        let spec =
            ProcessSpec::new(ProcessKind::DigitIid { digits: even_digits(depth), depth });
        let batch = sample_process(&spec, 100, 100, 13).unwrap();
        // classify each nonzero coordinate by which family its digits use
        let s = even_digits(depth);
        let mut y = 0u64;
        let mut z = 0u64;
        for &v in &batch.data {
            if v == 0.0 {
                continue;
            }
            let digits = binary_digits(v, depth);
            let on_s = digits
                .iter()
                .enumerate()
                .any(|(idx, &b)| b == 1 && s.contains(&(idx as u32 + 1)));
            if on_s {
                y += 1;
            } else {
                z += 1;
            }
        }
        // zero values split between families; nonzero classification should
        // still be near balanced at 10^4 coordinates
        let frac = y as f64 / (y + z) as f64;
        assert!((frac - 0.5).abs() <= 0.02, "family fraction {frac}");
    }

    #[test]
    fn batches_are_deterministic_in_seed() {
        let spec = ProcessSpec::new(ProcessKind::MarkovChain {
            transition: vec![
                vec![0.5, 0.5, 0.0],
                vec![0.1, 0.6, 0.3],
                vec![0.3, 0.0, 0.7],
            ],
            emissions: vec![-1.0, 0.0, 2.0],
        });
        let a = sample_process(&spec, 8, 50, 99).unwrap();
        let b = sample_process(&spec, 8, 50, 99).unwrap();
        assert_eq!(a.data, b.data);
        let c = sample_process(&spec, 8, 50, 100).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn marginals_are_stationary_across_coordinates() {
        let specs = vec![
            ProcessSpec::new(ProcessKind::IidMixed { p: 0.5 }),
            ProcessSpec::new(ProcessKind::IidUniform),
            ProcessSpec::new(ProcessKind::GaussianStationary {
                cov: CovarianceSpec::Toeplitz { acf: vec![1.0, 0.4, 0.1] },
            }),
            ProcessSpec::new(ProcessKind::MarkovChain {
                transition: vec![vec![0.9, 0.1], vec![0.4, 0.6]],
                emissions: vec![0.0, 1.0],
            }),
            ProcessSpec::new(ProcessKind::DigitShared { digits: even_digits(16), depth: 16 }),
            ProcessSpec::new(ProcessKind::DigitIid { digits: even_digits(16), depth: 16 }),
        ];
        for spec in specs {
            let batch = sample_process(&spec, 4, 10_000, 21).unwrap();
            let first: Vec<f64> = batch.rows().map(|r| r[0]).collect();
            let last: Vec<f64> = batch.rows().map(|r| r[3]).collect();
            let d = ks_statistic(&first, &last);
            assert!(d <= 0.05, "KS distance {d} for {:?}", spec.kind);
        }
    }

    #[test]
    fn dyadic_cell_mass_closed_forms() {
        let full: BTreeSet<u32> = (1..=6).collect();
        assert_eq!(dyadic_cell_mass(&full, 6).unwrap().value(), (-6.0f64).exp2());
        assert_eq!(dyadic_cell_mass(&BTreeSet::new(), 10).unwrap().value(), 1.0);
        let s: BTreeSet<u32> = [2, 4].into_iter().collect();
        assert_eq!(dyadic_cell_mass(&s, 3).unwrap().value(), 0.5);
        assert_eq!(dyadic_cell_mass(&s, 3).unwrap().as_fraction(), (1, 2));
        assert!(matches!(dyadic_cell_mass(&s, 64), Err(Error::Capacity(_))));
    }

    #[test]
    fn digit_cell_frequencies_match_exact_mass() {
        // depth-b cell of a fixed Y-family reference point: empirical
        // frequency within binomial 3 sigma of 2^{-#(S ∩ [1,b])}
        let depth = 16;
        let s = even_digits(depth);
        let spec = ProcessSpec::new(ProcessKind::DigitShared { digits: s.clone(), depth });
        let batch = sample_process(&spec, 1, 100_000, 6).unwrap();
        // Y-family trials: digits supported on S (value 0 is ambiguous and
        // excluded; its share is 2^{-8} of the Y family)
        let y_values: Vec<f64> = batch
            .data
            .iter()
            .copied()
            .filter(|&v| {
                v != 0.0
                    && binary_digits(v, depth)
                        .iter()
                        .enumerate()
                        .all(|(idx, &b)| b == 0 || s.contains(&(idx as u32 + 1)))
            })
            .collect();
        for b in [2u32, 4, 8] {
            let mass = dyadic_cell_mass(&s, b).unwrap().value();
            let reference = y_values[0];
            let cell = (reference * (b as f64).exp2()).floor();
            let hits = y_values
                .iter()
                .filter(|&&v| (v * (b as f64).exp2()).floor() == cell)
                .count();
            let n = y_values.len() as f64;
            let p_hat = hits as f64 / n;
            let sigma = (mass * (1.0 - mass) / n).sqrt();
            assert!(
                (p_hat - mass).abs() <= 3.0 * sigma,
                "b={b}: p_hat={p_hat}, mass={mass}, sigma={sigma}"
            );
        }
    }

    #[test]
    fn markov_validation_rejects_bad_chains() {
        let reducible = ProcessSpec::new(ProcessKind::MarkovChain {
            transition: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            emissions: vec![0.0, 1.0],
        });
        assert!(matches!(reducible.validate(), Err(Error::Parameter { .. })));
        let periodic = ProcessSpec::new(ProcessKind::MarkovChain {
            transition: vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            emissions: vec![0.0, 1.0],
        });
        assert!(matches!(periodic.validate(), Err(Error::Parameter { .. })));
        let bad_row = ProcessSpec::new(ProcessKind::MarkovChain {
            transition: vec![vec![0.5, 0.4], vec![0.5, 0.5]],
            emissions: vec![0.0, 1.0],
        });
        assert!(matches!(bad_row.validate(), Err(Error::Parameter { .. })));
    }

    #[test]
    fn parameter_and_capacity_guards() {
        let spec = ProcessSpec::new(ProcessKind::IidMixed { p: 1.5 });
        match spec.validate() {
            Err(Error::Parameter { name, .. }) => assert_eq!(name, "params.p"),
            other => panic!("expected parameter error, got {other:?}"),
        }
        let ok = ProcessSpec::new(ProcessKind::IidUniform);
        assert!(matches!(
            sample_process(&ok, usize::MAX / 2, 4, 0),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn ground_truth_table() {
        let mid = |kind: ProcessKind| ProcessSpec::new(kind).ground_truth_mid();
        assert_eq!(mid(ProcessKind::IidMixed { p: 0.3 }), Some(0.3));
        assert_eq!(mid(ProcessKind::IidUniform), Some(1.0));
        assert_eq!(
            mid(ProcessKind::GaussianStationary {
                cov: CovarianceSpec::ConstantCorrelation { sigma2: 2.0 }
            }),
            Some(0.0)
        );
        assert_eq!(
            mid(ProcessKind::DigitShared { digits: even_digits(16), depth: 16 }),
            Some(0.5)
        );
        assert_eq!(
            mid(ProcessKind::MarkovChain {
                transition: vec![vec![0.5, 0.5], vec![0.5, 0.5]],
                emissions: vec![0.0, 1.0],
            }),
            None
        );
        let mut with_override = ProcessSpec::new(ProcessKind::IidUniform);
        with_override.ground_truth = Some(0.25);
        assert_eq!(with_override.ground_truth_mid(), Some(0.25));
    }
}
