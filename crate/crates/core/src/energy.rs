//! Pairwise s-energies, correlation integrals, and the normalized energy
//! rate, plus the Gamma-function utilities used alongside them.
//!
//! The empirical s-energy of a cloud of N points is the U-statistic mean
//! of `|x_i - x_j|^{-s}` over distinct pairs. Every kernel here works in
//! the log2 domain with tiled, fixed-order reductions: results are
//! bit-identical across thread counts, and quantities like `n^{θn/2}`
//! only ever exist as `(θn/2) log2 n`. Distances come from direct
//! coordinate differences; expanding `|x|^2 + |y|^2 - 2<x,y>` cancels
//! catastrophically for near pairs and is never used.
//!
//! Duplicate points are atoms of the empirical measure: for s > 0 they
//! make the energy infinite, which is reported as a flag value rather
//! than an error so ladder scans can continue past collisions (mixed
//! sources collide at the all-zero block). A running sum that exceeds the
//! divergence cap (default 2^512) is likewise flagged.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::proc_gen::{sample_process, ProcessSpec, SampleBatch};
use crate::seeding::derive_seed;
use crate::stats::ols;
use crate::{Error, Result};

/// Default log2-domain divergence cap (linear 2^512).
pub const DEFAULT_CAP_LOG2: f64 = 512.0;
const TILE: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnergyFlag {
    Finite,
    /// Duplicate points with s > 0: the energy is infinite.
    InfiniteAtom,
    /// The running pair sum exceeded the divergence cap.
    InfiniteCap,
}

impl EnergyFlag {
    pub fn is_finite(self) -> bool {
        matches!(self, EnergyFlag::Finite)
    }
}

impl std::fmt::Display for EnergyFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EnergyFlag::Finite => "finite",
            EnergyFlag::InfiniteAtom => "atom",
            EnergyFlag::InfiniteCap => "cap",
        })
    }
}

/// Result of one s-energy evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergySummary {
    pub s: f64,
    /// `log2` of the U-statistic mean over distinct pairs; infinite when
    /// flagged.
    pub log2_energy: f64,
    /// `log2` of the plain sum over unordered pairs (finite accumulated
    /// value even when the cap flag fires; infinite on atoms).
    pub log2_sum: f64,
    /// Number of unordered distinct pairs.
    pub pairs: u64,
    /// Pairs at exactly zero distance.
    pub zero_pairs: u64,
    pub flag: EnergyFlag,
}

/// Log-domain accumulator for `log2(Σ 2^{t_i})` with a running maximum.
#[derive(Clone, Copy)]
struct LogSum {
    max: f64,
    mantissa: f64,
}

impl LogSum {
    const EMPTY: LogSum = LogSum { max: f64::NEG_INFINITY, mantissa: 0.0 };

    fn push(&mut self, t: f64) {
        if t == f64::NEG_INFINITY {
            return;
        }
        if t > self.max {
            self.mantissa = self.mantissa * (self.max - t).exp2() + 1.0;
            self.max = t;
        } else {
            self.mantissa += (t - self.max).exp2();
        }
    }

    fn merge(self, other: LogSum) -> LogSum {
        if other.max == f64::NEG_INFINITY {
            return self;
        }
        if self.max == f64::NEG_INFINITY {
            return other;
        }
        if self.max >= other.max {
            LogSum {
                max: self.max,
                mantissa: self.mantissa + other.mantissa * (other.max - self.max).exp2(),
            }
        } else {
            LogSum {
                max: other.max,
                mantissa: other.mantissa + self.mantissa * (self.max - other.max).exp2(),
            }
        }
    }

    fn log2(self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            f64::NEG_INFINITY
        } else {
            self.max + self.mantissa.log2()
        }
    }
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Apply `body` to every unordered distinct pair, tiled so tiles can run
/// concurrently; per-tile results are merged in a fixed order.
fn pair_tiles<T, F>(batch: &SampleBatch, per_tile: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize, usize) -> T + Sync,
{
    let tiles = batch.trials.div_ceil(TILE);
    let mut spans = Vec::new();
    for a in 0..tiles {
        for b in a..tiles {
            spans.push((a, b));
        }
    }
    spans.into_par_iter().map(|(a, b)| per_tile(a, b)).collect()
}

fn tile_range(t: usize, trials: usize) -> std::ops::Range<usize> {
    t * TILE..((t + 1) * TILE).min(trials)
}

/// Empirical s-energy `(1/(N(N-1))) Σ_{i≠j} |x_i - x_j|^{-s}` in the log2
/// domain. `cap_log2` bounds the log2 of the running unordered-pair sum;
/// beyond it the energy is flagged divergent.
pub fn energy_sum(batch: &SampleBatch, s: f64, cap_log2: f64) -> Result<EnergySummary> {
    if !(s.is_finite() && s >= 0.0) {
        return Err(Error::parameter("s", "exponent must be finite and >= 0"));
    }
    if batch.trials < 2 {
        return Err(Error::parameter("trials", "pairwise statistics need >= 2 points"));
    }
    let n_pts = batch.trials as u64;
    let pairs = n_pts * (n_pts - 1) / 2;

    if s == 0.0 {
        return Ok(EnergySummary {
            s,
            log2_energy: 0.0,
            log2_sum: (pairs as f64).log2(),
            pairs,
            zero_pairs: 0,
            flag: EnergyFlag::Finite,
        });
    }

    let parts = pair_tiles(batch, |a, b| {
        let mut acc = LogSum::EMPTY;
        let mut zeros = 0u64;
        for i in tile_range(a, batch.trials) {
            let row_i = batch.row(i);
            let js = if a == b {
                (i + 1)..tile_range(b, batch.trials).end
            } else {
                tile_range(b, batch.trials)
            };
            for j in js {
                let d2 = dist2(row_i, batch.row(j));
                if d2 == 0.0 {
                    zeros += 1;
                } else {
                    acc.push(-(s / 2.0) * d2.log2());
                }
            }
        }
        (acc, zeros)
    });

    let mut total = LogSum::EMPTY;
    let mut zero_pairs = 0u64;
    for (acc, zeros) in parts {
        total = total.merge(acc);
        zero_pairs += zeros;
    }
    let log2_sum = total.log2();

    let (flag, log2_energy, log2_sum) = if zero_pairs > 0 {
        (EnergyFlag::InfiniteAtom, f64::INFINITY, f64::INFINITY)
    } else if log2_sum > cap_log2 {
        (EnergyFlag::InfiniteCap, f64::INFINITY, log2_sum)
    } else {
        // ordered-pair mean: 2 Σ_{i<j} / (N(N-1))
        let e = log2_sum + 1.0 - (n_pts as f64).log2() - ((n_pts - 1) as f64).log2();
        (EnergyFlag::Finite, e, log2_sum)
    };
    Ok(EnergySummary { s, log2_energy, log2_sum, pairs, zero_pairs, flag })
}

/// Smallest positive and largest pairwise distance of the cloud.
pub fn distance_extremes(batch: &SampleBatch) -> Result<(f64, f64)> {
    if batch.trials < 2 {
        return Err(Error::parameter("trials", "pairwise statistics need >= 2 points"));
    }
    let parts = pair_tiles(batch, |a, b| {
        let mut min_pos = f64::INFINITY;
        let mut max = 0.0f64;
        for i in tile_range(a, batch.trials) {
            let row_i = batch.row(i);
            let js = if a == b {
                (i + 1)..tile_range(b, batch.trials).end
            } else {
                tile_range(b, batch.trials)
            };
            for j in js {
                let d2 = dist2(row_i, batch.row(j));
                if d2 > 0.0 {
                    min_pos = min_pos.min(d2);
                }
                max = max.max(d2);
            }
        }
        (min_pos, max)
    });
    let (min2, max2) = parts
        .into_iter()
        .fold((f64::INFINITY, 0.0f64), |(mn, mx), (a, b)| (mn.min(a), mx.max(b)));
    if min2 == f64::INFINITY {
        return Err(Error::Data("all points coincide; no positive pair distance".into()));
    }
    Ok((min2.sqrt(), max2.sqrt()))
}

/// Geometric grid of `count` points from `lo` to `hi` inclusive.
pub fn log_spaced_grid(lo: f64, hi: f64, count: usize) -> Result<Vec<f64>> {
    if !(lo.is_finite() && hi.is_finite() && lo > 0.0 && hi > lo) {
        return Err(Error::parameter("grid", "needs 0 < lo < hi, both finite"));
    }
    if count < 2 {
        return Err(Error::parameter("grid", "needs at least 2 points"));
    }
    let step = (hi / lo).ln() / (count - 1) as f64;
    Ok((0..count).map(|m| lo * (step * m as f64).exp()).collect())
}

/// One probed point of the energy identity check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProbeDiscrepancy {
    pub index: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub s: f64,
    pub max_rel_error: f64,
    pub quadrature_error_estimate: f64,
    pub per_probe: Vec<ProbeDiscrepancy>,
}

/// Check the layer-cake identity between pointwise energy and ball
/// masses: `(1/(N-1)) Σ_{j≠i} |x_i - x_j|^{-s}` against the quadrature
/// `s ∫ r^{-s-1} μ̂(B(x_i, r)) dr` with leave-one-out masses, for `probes`
/// points taken at even strides through the cloud.
///
/// The grid must span from at most half the smallest positive pair
/// distance (below which every mass is exactly zero) to at least twice
/// the diameter (above which the analytic tail `r_max^{-s}` finishes the
/// integral). Trapezoid quadrature on the grid; the resolution error is
/// estimated by Richardson halving and must stay under 10%.
pub fn energy_identity_check(
    batch: &SampleBatch,
    s: f64,
    r_grid: &[f64],
    probes: usize,
) -> Result<IdentityReport> {
    if !(s.is_finite() && s > 0.01) {
        return Err(Error::parameter("s", "identity check requires s > 0.01"));
    }
    if probes < 1 {
        return Err(Error::parameter("probes", "must be >= 1"));
    }
    if r_grid.len() < 3 || r_grid.windows(2).any(|w| w[0] >= w[1]) || r_grid[0] <= 0.0 {
        return Err(Error::parameter("r_grid", "must be positive, increasing, length >= 3"));
    }
    let (d_min, diameter) = distance_extremes(batch)?;
    if r_grid[0] > d_min / 2.0 * (1.0 + 1e-9) {
        return Err(Error::parameter(
            "r_grid",
            format!("must start at or below half the smallest pair distance ({:e})", d_min / 2.0),
        ));
    }
    let r_max = *r_grid.last().unwrap();
    if r_max < 2.0 * diameter * (1.0 - 1e-9) {
        return Err(Error::parameter(
            "r_grid",
            format!("must reach at least twice the diameter ({:e})", 2.0 * diameter),
        ));
    }

    let n_pts = batch.trials;
    let stride = (n_pts / probes).max(1);
    let probe_idx: Vec<usize> = (0..n_pts).step_by(stride).take(probes).collect();

    let mut per_probe = Vec::with_capacity(probe_idx.len());
    let mut worst_quad = 0.0f64;
    for &i in &probe_idx {
        let row_i = batch.row(i);
        let mut dists: Vec<f64> = (0..n_pts)
            .filter(|&j| j != i)
            .map(|j| dist2(row_i, batch.row(j)).sqrt())
            .collect();
        if dists.iter().any(|&d| d == 0.0) {
            return Err(Error::Data(
                "cloud has duplicate points; the energy identity needs an atomless cloud".into(),
            ));
        }
        dists.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
        let m = dists.len() as f64;
        let lhs: f64 = dists.iter().map(|&d| d.powf(-s)).sum::<f64>() / m;

        // leave-one-out mass as a function of r, via binary search
        let mass = |r: f64| dists.partition_point(|&d| d <= r) as f64 / m;
        let integrand = |r: f64| s * r.powf(-s - 1.0) * mass(r);
        let trapezoid = |step_by: usize| {
            let pts: Vec<f64> = r_grid.iter().copied().step_by(step_by).collect();
            let mut total = 0.0;
            for w in pts.windows(2) {
                total += 0.5 * (integrand(w[0]) + integrand(w[1])) * (w[1] - w[0]);
            }
            // the caller's grid may not end exactly on r_max after striding
            if let Some(&last) = pts.last() {
                if last < r_max {
                    total += 0.5 * (integrand(last) + integrand(r_max)) * (r_max - last);
                }
            }
            total
        };
        let coarse = trapezoid(2);
        let fine = trapezoid(1);
        let tail = r_max.powf(-s);
        let rhs = fine + (fine - coarse) / 3.0 + tail;
        let quad_est = ((fine - coarse) / 3.0).abs() / rhs.abs().max(f64::MIN_POSITIVE);
        worst_quad = worst_quad.max(quad_est);
        per_probe.push(ProbeDiscrepancy {
            index: i,
            lhs,
            rhs,
            rel_error: (lhs - rhs).abs() / lhs,
        });
    }

    if worst_quad > 0.10 {
        return Err(Error::Resolution(format!(
            "quadrature error estimate {worst_quad:.3} exceeds 10%; refine r_grid"
        )));
    }
    let max_rel_error =
        per_probe.iter().map(|p| p.rel_error).fold(0.0f64, f64::max);
    Ok(IdentityReport { s, max_rel_error, quadrature_error_estimate: worst_quad, per_probe })
}

/// One probe of the ball-to-energy bound.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallBoundProbe {
    pub radius: f64,
    /// Plain empirical mass `c/N` of the ball (diagnostic).
    pub mass: f64,
    /// Pair-frequency mass `sqrt(c(c-1)/(N(N-1)))`, the quantity the
    /// U-statistic energy controls.
    pub pair_mass: f64,
    /// `2^{s/2} r^{s/2} Ê_s^{1/2}`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BallBoundReport {
    pub s: f64,
    pub probes: Vec<BallBoundProbe>,
    pub pass: bool,
}

/// Check `mass(B(z, r)) <= 2^{s/2} r^{s/2} Ê_s^{1/2}` on the given probe
/// balls. Excluding the diagonal from the energy excludes it from the
/// mass too: the left side uses the pair frequency
/// `sqrt(c(c-1)/(N(N-1)))`, which the bound controls exactly (every pair
/// inside the ball has distance at most 2r); the plain mass `c/N` is
/// reported as a diagnostic.
pub fn ball_energy_bound_check(
    batch: &SampleBatch,
    s: f64,
    probes: &[(Vec<f64>, f64)],
) -> Result<BallBoundReport> {
    if probes.is_empty() {
        return Err(Error::parameter("probes", "must be nonempty"));
    }
    let energy = energy_sum(batch, s, DEFAULT_CAP_LOG2)?;
    if !energy.flag.is_finite() {
        return Err(Error::Data(format!(
            "energy is infinite at s = {s} ({}); the ball bound is inconclusive",
            energy.flag
        )));
    }
    let n_pts = batch.trials as f64;
    let mut rows = Vec::with_capacity(probes.len());
    for (z, r) in probes {
        if z.len() != batch.n {
            return Err(Error::parameter("probes", "center dimension must match the batch"));
        }
        if !(r.is_finite() && *r > 0.0) {
            return Err(Error::parameter("probes", "radii must be positive"));
        }
        let c = batch.rows().filter(|row| dist2(row, z).sqrt() <= *r).count() as f64;
        let pair_mass = (c * (c - 1.0) / (n_pts * (n_pts - 1.0))).sqrt();
        let log2_bound = (s / 2.0) * (1.0 + r.log2()) + energy.log2_energy / 2.0;
        let bound = log2_bound.exp2();
        rows.push(BallBoundProbe {
            radius: *r,
            mass: c / n_pts,
            pair_mass,
            bound,
            pass: pair_mass <= bound * (1.0 + 1e-9),
        });
    }
    let pass = rows.iter().all(|p| p.pass);
    Ok(BallBoundReport { s, probes: rows, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CorrelationPoint {
    pub r: f64,
    pub c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorrelationCurve {
    pub points: Vec<CorrelationPoint>,
    /// Log-log slope over the grid points with positive mass.
    pub slope: f64,
    pub pairs: u64,
}

/// Empirical correlation integral `C(r) = 2/(N(N-1)) #{i<j: d_ij <= r}`
/// over an increasing radius grid, with its log-log slope.
pub fn correlation_integral(batch: &SampleBatch, r_grid: &[f64]) -> Result<CorrelationCurve> {
    if r_grid.is_empty() || r_grid.windows(2).any(|w| w[0] >= w[1]) || r_grid[0] <= 0.0 {
        return Err(Error::parameter("r_grid", "must be positive and increasing"));
    }
    if batch.trials < 2 {
        return Err(Error::parameter("trials", "pairwise statistics need >= 2 points"));
    }
    let hists = pair_tiles(batch, |a, b| {
        let mut hist = vec![0u64; r_grid.len()];
        for i in tile_range(a, batch.trials) {
            let row_i = batch.row(i);
            let js = if a == b {
                (i + 1)..tile_range(b, batch.trials).end
            } else {
                tile_range(b, batch.trials)
            };
            for j in js {
                let d = dist2(row_i, batch.row(j)).sqrt();
                // smallest grid radius that still covers this pair
                let slot = r_grid.partition_point(|&r| r < d);
                if slot < r_grid.len() {
                    hist[slot] += 1;
                }
            }
        }
        hist
    });
    let mut counts = vec![0u64; r_grid.len()];
    for hist in hists {
        for (c, h) in counts.iter_mut().zip(hist) {
            *c += h;
        }
    }
    // cumulative pair counts per radius
    for m in 1..counts.len() {
        counts[m] += counts[m - 1];
    }
    let n_pts = batch.trials as u64;
    let pairs = n_pts * (n_pts - 1) / 2;
    if *counts.last().unwrap() == 0 {
        return Err(Error::Range(
            "every pair lies outside the largest grid radius".into(),
        ));
    }
    let points: Vec<CorrelationPoint> = r_grid
        .iter()
        .zip(&counts)
        .map(|(&r, &c)| CorrelationPoint { r, c: c as f64 / pairs as f64 })
        .collect();
    let fit_pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| p.c > 0.0)
        .map(|p| (p.r.log2(), p.c.log2()))
        .collect();
    let (slope, _, _) = ols(&fit_pts);
    Ok(CorrelationCurve { points, slope, pairs })
}

/// One block length of a normalized energy rate curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyRatePoint {
    pub n: usize,
    /// Exponent θn used at this block length.
    pub s: f64,
    pub log2_energy: f64,
    /// `(θn/2) log2 n + log2 Ê_{θn}`, the unnormalized log statistic.
    pub log2_scaled: f64,
    /// The above divided by n.
    pub normalized_rate: f64,
    pub flag: EnergyFlag,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyRateCurve {
    pub theta: f64,
    pub trials: usize,
    pub seed: u64,
    pub cap_log2: f64,
    pub points: Vec<EnergyRatePoint>,
}

fn rate_point(batch: &SampleBatch, n: usize, theta: f64, cap_log2: f64) -> Result<EnergyRatePoint> {
    let s = theta * n as f64;
    let summary = energy_sum(batch, s, cap_log2)?;
    let log2_scaled = if summary.flag.is_finite() {
        (s / 2.0) * (n as f64).log2() + summary.log2_energy
    } else {
        f64::INFINITY
    };
    Ok(EnergyRatePoint {
        n,
        s,
        log2_energy: summary.log2_energy,
        log2_scaled,
        normalized_rate: log2_scaled / n as f64,
        flag: summary.flag,
    })
}

/// Rate curve `(1/n) log2(n^{θn/2} Ê_{θn})` over a block-length ladder,
/// sampling a fresh cloud per block length. Infinite energies (atom
/// collisions, cap overruns) flag their point and the curve continues;
/// boundedness of the finite points over the ladder is the finite-sample
/// surrogate for a finite limsup.
pub fn normalized_energy_rate(
    spec: &ProcessSpec,
    n_ladder: &[usize],
    theta: f64,
    trials: usize,
    seed: u64,
    cap_log2: f64,
) -> Result<EnergyRateCurve> {
    if !(0.0..=1.5).contains(&theta) {
        return Err(Error::parameter("theta", "must lie in [0, 1.5]"));
    }
    if n_ladder.is_empty() || n_ladder.windows(2).any(|w| w[0] >= w[1]) || n_ladder[0] < 1 {
        return Err(Error::parameter("n_ladder", "must be nonempty, strictly increasing, >= 1"));
    }
    if trials < 2 {
        return Err(Error::parameter("trials", "pairwise statistics need >= 2 points"));
    }
    let mut points = Vec::with_capacity(n_ladder.len());
    for &n in n_ladder {
        let batch = sample_process(spec, n, trials, derive_seed(seed, "energy-n", n as u64))?;
        points.push(rate_point(&batch, n, theta, cap_log2)?);
    }
    Ok(EnergyRateCurve { theta, trials, seed, cap_log2, points })
}

/// One block length of the energy comparison check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub n: usize,
    pub s: f64,
    /// `(1/n) log2(n^{s/2} Ê_s)`.
    pub lhs_rate: f64,
    /// `(1/n) log2(n^{θn/2} Ê_{θn}) + 2 log2 max(M, 1)`.
    pub rhs_rate: f64,
    pub lhs_flag: EnergyFlag,
    pub rhs_flag: EnergyFlag,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub theta: f64,
    pub m_bound: f64,
    pub rows: Vec<ComparisonRow>,
    pub pass: bool,
}

/// Check that lower-exponent energies are controlled by the θ-level rate:
/// for each ladder entry with `s_n <= θn`,
/// `(1/n) log2(n^{s_n/2} Ê_{s_n}) <= (1/n) log2(n^{θn/2} Ê_{θn}) + 2 log2 max(M, 1)`.
///
/// For a cloud of diameter at most `M sqrt(n)` this is pairwise algebra:
/// `(d/sqrt(n))^{-s} <= (d/sqrt(n))^{-θn} max(M, 1)^{θn - s}`. An infinite
/// right side passes trivially (and is flagged); `s_n = θn` reduces to an
/// identity.
pub fn energy_comparison_check(
    spec: &ProcessSpec,
    n_ladder: &[usize],
    theta: f64,
    s_n: &[f64],
    m_bound: f64,
    trials: usize,
    seed: u64,
    cap_log2: f64,
) -> Result<ComparisonReport> {
    if s_n.len() != n_ladder.len() {
        return Err(Error::parameter("s_n", "needs one exponent per ladder entry"));
    }
    if !(m_bound.is_finite() && m_bound > 0.0) {
        return Err(Error::parameter("m_bound", "must be finite and > 0"));
    }
    if !(0.0..=1.5).contains(&theta) {
        return Err(Error::parameter("theta", "must lie in [0, 1.5]"));
    }
    if n_ladder.is_empty() || n_ladder.windows(2).any(|w| w[0] >= w[1]) || n_ladder[0] < 1 {
        return Err(Error::parameter("n_ladder", "must be nonempty, strictly increasing, >= 1"));
    }
    let slack = 2.0 * m_bound.max(1.0).log2();
    let mut rows = Vec::with_capacity(n_ladder.len());
    for (&n, &s) in n_ladder.iter().zip(s_n) {
        let theta_s = theta * n as f64;
        if !(0.0..=theta_s).contains(&s) {
            return Err(Error::parameter("s_n", format!("exponent {s} outside [0, θn = {theta_s}]")));
        }
        let batch = sample_process(spec, n, trials, derive_seed(seed, "energy-n", n as u64))?;
        let lhs_summary = energy_sum(&batch, s, cap_log2)?;
        let rhs_point = rate_point(&batch, n, theta, cap_log2)?;
        let lhs_rate = if lhs_summary.flag.is_finite() {
            ((s / 2.0) * (n as f64).log2() + lhs_summary.log2_energy) / n as f64
        } else {
            f64::INFINITY
        };
        let rhs_rate = rhs_point.normalized_rate + slack;
        let pass = rhs_rate.is_infinite() || lhs_rate <= rhs_rate + 1e-9;
        rows.push(ComparisonRow {
            n,
            s,
            lhs_rate,
            rhs_rate,
            lhs_flag: lhs_summary.flag,
            rhs_flag: rhs_point.flag,
            pass,
        });
    }
    let pass = rows.iter().all(|r| r.pass);
    Ok(ComparisonReport { theta, m_bound, rows, pass })
}

/// Energies over an exponent grid at one block length, with the
/// normalized rate at `theta` when given.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnergyProfile {
    pub n: usize,
    pub trials: usize,
    pub theta: Option<f64>,
    pub normalized_rate: Option<f64>,
    /// Total mass of the empirical cloud (always 1 for sampled batches).
    pub mass: f64,
    pub rows: Vec<EnergySummary>,
}

pub fn energy_profile(
    batch: &SampleBatch,
    s_grid: &[f64],
    theta: Option<f64>,
    cap_log2: f64,
) -> Result<EnergyProfile> {
    if s_grid.is_empty() {
        return Err(Error::parameter("s_grid", "must be nonempty"));
    }
    let rows: Vec<EnergySummary> =
        s_grid.iter().map(|&s| energy_sum(batch, s, cap_log2)).collect::<Result<_>>()?;
    let normalized_rate = match theta {
        Some(t) => Some(rate_point(batch, batch.n, t, cap_log2)?.normalized_rate),
        None => None,
    };
    Ok(EnergyProfile {
        n: batch.n,
        trials: batch.trials,
        theta,
        normalized_rate,
        mass: 1.0,
        rows,
    })
}

/// Volume of the n-dimensional Euclidean unit ball,
/// `π^{n/2} / Γ(n/2 + 1)`.
pub fn unit_ball_volume(n: usize) -> Result<f64> {
    if n < 1 {
        return Err(Error::parameter("n", "dimension must be >= 1"));
    }
    let half = n as f64 / 2.0;
    Ok((half * std::f64::consts::PI.ln() - ln_gamma(half + 1.0)).exp())
}

/// Natural log of Γ(z) for z > 0.
pub fn log_gamma(z: f64) -> Result<f64> {
    if !(z.is_finite() && z > 0.0) {
        return Err(Error::parameter("z", "log-gamma needs z > 0"));
    }
    Ok(ln_gamma(z))
}

/// `Γ(z) / Γ(z + 1)`, which the functional equation pins to `1/z`.
pub fn gamma_ratio(z: f64) -> Result<f64> {
    Ok((log_gamma(z)? - log_gamma(z + 1.0)?).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StirlingPoint {
    pub z: f64,
    /// `ln Γ(z) - [(z - 1/2) ln z - z + ln sqrt(2π)]`, which Binet's
    /// bound pins to (0, 1/(12z)).
    pub defect: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StirlingReport {
    pub eps: f64,
    /// Fitted constants of the e^{-z}-free sandwich
    /// `l_lower z^{z-1/2} <= Γ(z) <= l_upper z^{z-1/2}` over the grid.
    pub l_lower: f64,
    pub l_upper: f64,
    pub points: Vec<StirlingPoint>,
    pub pass: bool,
}

/// Check Binet's sandwich `0 < ln Γ(z) - (z - 1/2) ln z + z - ln sqrt(2π)
/// < 1/(12z)` at every grid point with z >= eps, and fit the smallest
/// constants closing the e^{-z}-free form `L_ε z^{z-1/2} <= Γ(z) <=
/// L z^{z-1/2}` on that grid (the lower constant decays like
/// `sqrt(2π) e^{-z_max}`, so it is grid-dependent by nature).
pub fn stirling_bound_check(z_grid: &[f64], eps: f64) -> Result<StirlingReport> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::parameter("eps", "must be finite and > 0"));
    }
    if z_grid.is_empty() {
        return Err(Error::parameter("z_grid", "must be nonempty"));
    }
    if z_grid.iter().any(|&z| !z.is_finite() || z < eps) {
        return Err(Error::parameter("z_grid", "every point must be finite and >= eps"));
    }
    let half_ln_2pi = 0.5 * (2.0 * std::f64::consts::PI).ln();
    let mut points = Vec::with_capacity(z_grid.len());
    let mut l_lower = f64::INFINITY;
    let mut l_upper = 0.0f64;
    for &z in z_grid {
        let defect = ln_gamma(z) - ((z - 0.5) * z.ln() - z + half_ln_2pi);
        let pass = defect > 0.0 && defect < 1.0 / (12.0 * z);
        points.push(StirlingPoint { z, defect, pass });
        // ratio Γ(z) / z^{z-1/2} in log domain
        let log_ratio = ln_gamma(z) - (z - 0.5) * z.ln();
        l_lower = l_lower.min(log_ratio.exp());
        l_upper = l_upper.max(log_ratio.exp());
    }
    let pass = points.iter().all(|p| p.pass);
    Ok(StirlingReport { eps, l_lower, l_upper, points, pass })
}
