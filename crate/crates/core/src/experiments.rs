//! Phase-transition experiments over the measurement-rate grid, threshold
//! detection, and the converse-direction evidence reports.
//!
//! [`run_phase`] draws fresh source blocks and Gaussian matrices per
//! trial, decodes, and scores success as normalized error at most δ,
//! producing a [`PhaseDiagram`] of Wilson-intervaled success
//! probabilities. [`detect_threshold`] fits a logistic curve to a diagram
//! and reads off the empirical critical rate. [`converse_witness`] checks
//! that below the process's ground-truth dimension no decoder in a
//! declared family attains high success, and
//! [`mdimcor_vs_recovery_report`] juxtaposes the energy-rate boundedness
//! region, the estimated dimension, and the phase thresholds in one
//! report.
//!
//! Every trial's randomness is derived from (master seed, purpose label,
//! index), so diagrams are reproducible cell-for-cell regardless of
//! thread count or execution order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dimension::{estimate_mid, DimGrid};
use crate::energy::{normalized_energy_rate, DEFAULT_CAP_LOG2};
use crate::proc_gen::{sample_process, ProcessSpec};
use crate::seeding::derive_seed;
use crate::sensing::{
    decode_min_entropy, decode_sparse_enum, recovery_error, sample_matrix, MinEntropySearch,
    SensingMatrix,
};
use crate::stats::{mann_kendall, wilson_interval};
use crate::{Error, Result};

/// Success tolerance used when a caller does not pick one.
pub const DEFAULT_DELTA: f64 = 0.05;
/// Margin for converse checks: success probabilities must stay at or
/// below `1 - margin`.
pub const DEFAULT_MARGIN: f64 = 0.5;
/// A normalized energy rate above this value counts as unbounded in the
/// combined report.
pub const RATE_BOUND: f64 = 3.0;
/// One-sided 5% normal quantile for trend tests.
const TREND_Z: f64 = 1.645;

fn default_budget() -> u64 {
    30_000_000
}

fn default_tau() -> f64 {
    1e-9
}

fn default_box() -> f64 {
    1.0
}

fn default_search() -> MinEntropySearch {
    MinEntropySearch::Annealing { steps: 20_000, seed: 0 }
}

/// Decoder selection, as it appears in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DecoderConfig {
    /// Support enumeration with least-squares fits.
    SparseEnum {
        s_max: usize,
        #[serde(default = "default_budget")]
        budget: u64,
    },
    /// Lattice search minimizing quantized entropy.
    MinEntropy {
        k: u64,
        #[serde(rename = "box", default = "default_box")]
        box_bound: f64,
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_search")]
        search: MinEntropySearch,
    },
    /// Minimum-norm least squares `Aᵀ(AAᵀ)⁻¹y`.
    LeastSquares,
    /// Always outputs the zero vector.
    Zero,
}

impl DecoderConfig {
    pub fn id(&self) -> String {
        match self {
            DecoderConfig::SparseEnum { s_max, .. } => format!("sparse_enum(s_max={s_max})"),
            DecoderConfig::MinEntropy { k, .. } => format!("min_entropy(k={k})"),
            DecoderConfig::LeastSquares => "least_squares".to_string(),
            DecoderConfig::Zero => "zero".to_string(),
        }
    }

    /// Cap the support bound by the measurement count: supports larger
    /// than m are never identifiable, and the enumeration decoder
    /// rejects them outright.
    fn clamped(&self, m: usize) -> DecoderConfig {
        match self {
            DecoderConfig::SparseEnum { s_max, budget } => DecoderConfig::SparseEnum {
                s_max: (*s_max).min(m),
                budget: *budget,
            },
            other => other.clone(),
        }
    }

    pub fn decode(&self, y: &[f64], a: &SensingMatrix) -> Result<Vec<f64>> {
        match self {
            DecoderConfig::SparseEnum { s_max, budget } => {
                Ok(decode_sparse_enum(y, a, *s_max, *budget)?.x_hat)
            }
            DecoderConfig::MinEntropy { k, box_bound, tau, search } => {
                Ok(decode_min_entropy(y, a, *k, *box_bound, *tau, search)?.x_hat)
            }
            DecoderConfig::LeastSquares => least_squares_decode(y, a),
            DecoderConfig::Zero => Ok(vec![0.0; a.n]),
        }
    }
}

fn least_squares_decode(y: &[f64], a: &SensingMatrix) -> Result<Vec<f64>> {
    let m = a.m;
    let mut gram = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let v: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, z)| x * z).sum();
            gram[i * m + j] = v;
            gram[j * m + i] = v;
        }
    }
    crate::linalg::cholesky(&mut gram, m)?;
    let w = crate::linalg::cholesky_solve(&gram, m, y);
    let mut x = vec![0.0f64; a.n];
    for (i, wi) in w.iter().enumerate() {
        for (xj, aij) in x.iter_mut().zip(a.row(i)) {
            *xj += aij * wi;
        }
    }
    Ok(x)
}

/// One rate cell of a phase diagram. Counts are kept so intervals can be
/// recomputed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseCell {
    pub rate: f64,
    pub m: usize,
    pub trials: usize,
    pub successes: u64,
    pub p_hat: f64,
    pub wilson_lo: f64,
    pub wilson_hi: f64,
    /// Set when the decoder's budget ran out in this cell; counts cover
    /// only the completed trials.
    pub incomplete: bool,
}

/// Empirical success probability as a function of the measurement rate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseDiagram {
    pub spec: ProcessSpec,
    pub n: usize,
    pub delta: f64,
    pub rate_grid: Vec<f64>,
    pub cells: Vec<PhaseCell>,
    pub decoder_id: String,
    pub seed: u64,
}

impl PhaseDiagram {
    /// Largest amount by which a cell's Wilson lower bound exceeds a
    /// higher-rate cell's upper bound. Success should be nondecreasing
    /// in rate, so this stays near zero up to interval noise.
    pub fn monotonicity_violation(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.cells.len() {
            for j in (i + 1)..self.cells.len() {
                if self.cells[i].incomplete || self.cells[j].incomplete {
                    continue;
                }
                worst = worst.max(self.cells[i].wilson_lo - self.cells[j].wilson_hi);
            }
        }
        worst
    }
}

fn cell_from_counts(rate: f64, m: usize, completed: usize, successes: u64, incomplete: bool) -> PhaseCell {
    let (p_hat, wilson_lo, wilson_hi) = if completed == 0 {
        (0.0, 0.0, 1.0)
    } else {
        let (lo, hi) = wilson_interval(successes, completed as u64);
        (successes as f64 / completed as f64, lo, hi)
    };
    PhaseCell { rate, m, trials: completed, successes, p_hat, wilson_lo, wilson_hi, incomplete }
}

/// Run one decoder across the rate grid: per trial, draw a source block
/// and a fresh Gaussian matrix, decode, and count
/// `(1/sqrt(n)) ||x - x_hat|| <= delta` as success. Decoder budget errors
/// mark the cell incomplete instead of aborting the run; all other
/// decoder errors propagate.
pub fn run_phase(
    spec: &ProcessSpec,
    n: usize,
    rate_grid: &[f64],
    delta: f64,
    trials: usize,
    decoder: &DecoderConfig,
    seed: u64,
) -> Result<PhaseDiagram> {
    if n < 1 {
        return Err(Error::parameter("n", "block length must be >= 1"));
    }
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::parameter("delta", "success tolerance must be finite and > 0"));
    }
    if trials < 1 {
        return Err(Error::parameter("trials", "must be >= 1"));
    }
    if rate_grid.is_empty()
        || rate_grid.iter().any(|r| !r.is_finite() || *r < 0.0 || *r > 1.0)
    {
        return Err(Error::parameter("rate_grid", "rates must lie in [0, 1]"));
    }
    spec.validate()?;

    let mut cells = Vec::with_capacity(rate_grid.len());
    for (cell_idx, &rate) in rate_grid.iter().enumerate() {
        let m = ((rate * n as f64).round() as usize).clamp(1, n);
        let batch = sample_process(spec, n, trials, derive_seed(seed, "phase-x", cell_idx as u64))?;
        let eff = decoder.clamped(m);
        let outcomes: Vec<Result<bool>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let x = batch.row(t);
                let a = sample_matrix(
                    m,
                    n,
                    derive_seed(seed, "phase-A", (cell_idx * trials + t) as u64),
                )?;
                let y = a.apply(x);
                let x_hat = eff.decode(&y, &a)?;
                Ok(recovery_error(x, &x_hat)? <= delta)
            })
            .collect();
        let mut successes = 0u64;
        let mut completed = 0usize;
        let mut incomplete = false;
        for outcome in outcomes {
            match outcome {
                Ok(hit) => {
                    completed += 1;
                    if hit {
                        successes += 1;
                    }
                }
                Err(Error::Budget(_)) => incomplete = true,
                Err(other) => return Err(other),
            }
        }
        cells.push(cell_from_counts(rate, m, completed, successes, incomplete));
    }
    Ok(PhaseDiagram {
        spec: spec.clone(),
        n,
        delta,
        rate_grid: rate_grid.to_vec(),
        cells,
        decoder_id: decoder.id(),
        seed,
    })
}

/// Logistic-fit threshold of a phase diagram.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdEstimate {
    /// Rate at fitted success probability 1/2, with the band where the
    /// fitted probability crosses from 0.1 to 0.9.
    Crossing { rate: f64, band_lo: f64, band_hi: f64, slope: f64, intercept: f64 },
    /// The diagram's success probabilities never straddle 1/2.
    NoCrossing,
}

/// Fit success-vs-rate with a two-parameter logistic model by Newton
/// iteration on the binomial likelihood and return the rate at fitted
/// probability 1/2. Diagrams whose cells sit entirely on one side of 1/2
/// yield [`ThresholdEstimate::NoCrossing`]. Perfectly separated data
/// drives the slope toward infinity, so it is clamped at 10^3, which
/// pins the threshold to the separation midpoint at grid resolution.
pub fn detect_threshold(diagram: &PhaseDiagram) -> Result<ThresholdEstimate> {
    let usable: Vec<&PhaseCell> =
        diagram.cells.iter().filter(|c| !c.incomplete && c.trials > 0).collect();
    if usable.len() < 4 {
        return Err(Error::parameter(
            "diagram",
            "threshold detection needs at least 4 complete cells",
        ));
    }
    let below = usable.iter().any(|c| c.p_hat < 0.5);
    let above = usable.iter().any(|c| c.p_hat > 0.5);
    if !(below && above) {
        return Ok(ThresholdEstimate::NoCrossing);
    }

    let mut b0 = 0.0f64;
    let mut b1 = 0.0f64;
    for _ in 0..25 {
        let mut h00 = 0.0;
        let mut h01 = 0.0;
        let mut h11 = 0.0;
        let mut g0 = 0.0;
        let mut g1 = 0.0;
        for cell in &usable {
            let t = cell.trials as f64;
            let eta = b0 + b1 * cell.rate;
            let p = (1.0 / (1.0 + (-eta).exp())).clamp(1e-9, 1.0 - 1e-9);
            let w = t * p * (1.0 - p);
            let r = cell.successes as f64 - t * p;
            h00 += w;
            h01 += w * cell.rate;
            h11 += w * cell.rate * cell.rate;
            g0 += r;
            g1 += r * cell.rate;
        }
        let det = h00 * h11 - h01 * h01;
        if det.abs() <= 1e-30 {
            return Err(Error::Numeric("logistic fit Hessian is singular".into()));
        }
        let d0 = (h11 * g0 - h01 * g1) / det;
        let d1 = (h00 * g1 - h01 * g0) / det;
        b0 += d0;
        b1 += d1;
        if b1.abs() > 1e3 {
            b1 = b1.signum() * 1e3;
            break;
        }
        if d0.abs() + d1.abs() <= 1e-10 * (1.0 + b0.abs() + b1.abs()) {
            break;
        }
    }
    if b1 == 0.0 {
        return Ok(ThresholdEstimate::NoCrossing);
    }
    let rate_at = |p: f64| ((p / (1.0 - p)).ln() - b0) / b1;
    let (band_lo, band_hi) = {
        let a = rate_at(0.1);
        let b = rate_at(0.9);
        (a.min(b), a.max(b))
    };
    Ok(ThresholdEstimate::Crossing {
        rate: -b0 / b1,
        band_lo,
        band_hi,
        slope: b1,
        intercept: b0,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseCell {
    pub decoder_id: String,
    pub n: usize,
    pub m: usize,
    pub delta: f64,
    pub trials: usize,
    pub successes: u64,
    pub p_hat: f64,
}

/// Per-decoder, per-δ verdicts of the converse check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseCheck {
    pub decoder_id: String,
    pub delta: f64,
    pub max_success: f64,
    /// `max_success <= 1 - margin` across the ladder.
    pub below_margin: bool,
    pub trend_z: f64,
    /// Mann-Kendall found no significant increasing trend in n.
    pub no_increasing_trend: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConverseReport {
    pub rate: f64,
    pub ground_truth_mid: f64,
    pub margin: f64,
    pub cells: Vec<ConverseCell>,
    pub checks: Vec<ConverseCheck>,
    pub pass: bool,
}

/// Evidence that a rate strictly below the process's ground-truth
/// dimension does not support recovery: for every decoder in the family
/// and every block length in the ladder, empirical success stays at or
/// below `1 - margin` and shows no significant increasing trend.
///
/// All decoders see identical source blocks and matrices per (n, trial),
/// so the comparison across the family is paired.
pub fn converse_witness(
    spec: &ProcessSpec,
    n_ladder: &[usize],
    rate: f64,
    decoders: &[DecoderConfig],
    delta_grid: &[f64],
    trials: usize,
    margin: f64,
    seed: u64,
) -> Result<ConverseReport> {
    if decoders.is_empty() {
        return Err(Error::parameter("decoders", "decoder family must not be empty"));
    }
    let mid = spec.ground_truth_mid().ok_or_else(|| {
        Error::parameter("spec", "converse check needs a process with known dimension")
    })?;
    if !(rate.is_finite() && rate >= 0.0 && rate < mid) {
        return Err(Error::parameter(
            "rate",
            "rate must be nonnegative and strictly below the ground-truth dimension",
        ));
    }
    if n_ladder.is_empty() || n_ladder.iter().any(|&n| n < 1) {
        return Err(Error::parameter("n_ladder", "block lengths must be >= 1"));
    }
    if delta_grid.is_empty()
        || delta_grid.iter().any(|d| !d.is_finite() || *d <= 0.0)
    {
        return Err(Error::parameter("delta_grid", "tolerances must be finite and > 0"));
    }
    if trials < 1 {
        return Err(Error::parameter("trials", "must be >= 1"));
    }
    if !(margin > 0.0 && margin < 1.0) {
        return Err(Error::parameter("margin", "must lie in (0, 1)"));
    }
    spec.validate()?;

    // errs[d][i][t] = normalized error of decoder d at ladder step i, trial t
    let mut errs: Vec<Vec<Vec<f64>>> =
        vec![vec![Vec::new(); n_ladder.len()]; decoders.len()];
    for (i, &n) in n_ladder.iter().enumerate() {
        let m = ((rate * n as f64).round() as usize).clamp(1, n);
        let batch = sample_process(spec, n, trials, derive_seed(seed, "converse-x", i as u64))?;
        let clamped: Vec<DecoderConfig> = decoders.iter().map(|d| d.clamped(m)).collect();
        let per_trial: Vec<Result<Vec<f64>>> = (0..trials)
            .into_par_iter()
            .map(|t| {
                let x = batch.row(t);
                let a = sample_matrix(
                    m,
                    n,
                    derive_seed(seed, "converse-A", (i * trials + t) as u64),
                )?;
                let y = a.apply(x);
                clamped
                    .iter()
                    .map(|d| recovery_error(x, &d.decode(&y, &a)?))
                    .collect()
            })
            .collect();
        for outcome in per_trial {
            let row = outcome?;
            for (d, err) in row.into_iter().enumerate() {
                errs[d][i].push(err);
            }
        }
    }

    let mut cells = Vec::new();
    let mut checks = Vec::new();
    for (d, decoder) in decoders.iter().enumerate() {
        for &delta in delta_grid {
            let mut ladder_p = Vec::with_capacity(n_ladder.len());
            for (i, &n) in n_ladder.iter().enumerate() {
                let m = ((rate * n as f64).round() as usize).clamp(1, n);
                let successes = errs[d][i].iter().filter(|e| **e <= delta).count() as u64;
                let p_hat = successes as f64 / trials as f64;
                ladder_p.push(p_hat);
                cells.push(ConverseCell {
                    decoder_id: decoder.id(),
                    n,
                    m,
                    delta,
                    trials,
                    successes,
                    p_hat,
                });
            }
            let max_success = ladder_p.iter().cloned().fold(0.0f64, f64::max);
            let trend = mann_kendall(&ladder_p);
            checks.push(ConverseCheck {
                decoder_id: decoder.id(),
                delta,
                max_success,
                below_margin: max_success <= 1.0 - margin,
                trend_z: trend.z,
                no_increasing_trend: trend.z < TREND_Z,
            });
        }
    }
    let pass = checks.iter().all(|c| c.below_margin && c.no_increasing_trend);
    Ok(ConverseReport { rate, ground_truth_mid: mid, margin, cells, checks, pass })
}

/// Boundedness verdict for one θ of the energy ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EnergyBoundedness {
    pub theta: f64,
    /// Largest normalized rate along the ladder; infinite when flagged.
    pub max_rate: f64,
    /// Some ladder point had an infinite energy (atom collision or cap).
    pub flagged: bool,
    pub bounded: bool,
}

/// Joint view of the energy-rate region, the dimension estimate, and the
/// recovery thresholds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CombinedReport {
    /// Largest grid θ whose normalized energy rate stays bounded.
    pub theta_star: f64,
    /// Atoms or cap hits forced the region down to {0}.
    pub region_flagged: bool,
    pub energy: Vec<EnergyBoundedness>,
    pub mid_estimate: f64,
    /// Per decoder: detected threshold rate, when one exists.
    pub thresholds: Vec<(String, Option<f64>)>,
    /// `theta_star <= mid + 0.1`.
    pub ordering_ok: bool,
    pub below_region_max_success: f64,
    /// No decoder succeeds at rates below `theta_star - 0.1`.
    pub below_region_ok: bool,
    pub diagrams: Vec<PhaseDiagram>,
    pub pass: bool,
}

/// Run the energy ladder over `theta_grid`, estimate the process
/// dimension, and run one phase diagram per decoder at the largest
/// ladder length, then check the orderings that tie the three views
/// together: the bounded-energy region must not extend past the
/// estimated dimension (within 0.1), and no decoder may succeed at rates
/// below that region.
///
/// `trials` sizes the energy clouds and phase cells; `mid_trials` sizes
/// the dimension estimate separately, because energy cost is quadratic
/// in the cloud while the entropy grid needs tens of thousands of
/// samples before its finer scales desaturate.
pub fn mdimcor_vs_recovery_report(
    spec: &ProcessSpec,
    theta_grid: &[f64],
    rate_grid: &[f64],
    n_ladder: &[usize],
    decoders: &[DecoderConfig],
    trials: usize,
    mid_trials: usize,
    seed: u64,
) -> Result<CombinedReport> {
    if theta_grid.is_empty() || theta_grid.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::parameter("theta_grid", "must be strictly increasing"));
    }
    if theta_grid[0] != 0.0 {
        return Err(Error::parameter("theta_grid", "must start at 0"));
    }
    if decoders.is_empty() {
        return Err(Error::parameter("decoders", "decoder family must not be empty"));
    }
    spec.validate()?;

    let mut energy = Vec::with_capacity(theta_grid.len());
    let mut region_flagged = false;
    for (j, &theta) in theta_grid.iter().enumerate() {
        let curve = normalized_energy_rate(
            spec,
            n_ladder,
            theta,
            trials,
            derive_seed(seed, "combined-energy", j as u64),
            DEFAULT_CAP_LOG2,
        )?;
        let flagged = curve.points.iter().any(|p| !p.flag.is_finite());
        let max_rate = curve
            .points
            .iter()
            .map(|p| p.normalized_rate)
            .fold(f64::NEG_INFINITY, f64::max);
        if flagged && theta > 0.0 {
            region_flagged = true;
        }
        energy.push(EnergyBoundedness {
            theta,
            max_rate,
            flagged,
            bounded: !flagged && max_rate <= RATE_BOUND,
        });
    }
    let theta_star = if region_flagged {
        0.0
    } else {
        energy.iter().filter(|e| e.bounded).map(|e| e.theta).fold(0.0f64, f64::max)
    };

    let mid_estimate = estimate_mid(
        spec,
        &DimGrid::default(),
        mid_trials,
        derive_seed(seed, "combined-mid", 0),
    )?
    .value;

    let n_phase = *n_ladder.last().ok_or_else(|| {
        Error::parameter("n_ladder", "must not be empty")
    })?;
    let mut diagrams = Vec::with_capacity(decoders.len());
    let mut thresholds = Vec::with_capacity(decoders.len());
    let mut below_region_max_success = 0.0f64;
    for (d, decoder) in decoders.iter().enumerate() {
        let diagram = run_phase(
            spec,
            n_phase,
            rate_grid,
            DEFAULT_DELTA,
            trials,
            decoder,
            derive_seed(seed, "combined-phase", d as u64),
        )?;
        let threshold = match detect_threshold(&diagram)? {
            ThresholdEstimate::Crossing { rate, .. } => Some(rate),
            ThresholdEstimate::NoCrossing => None,
        };
        for cell in &diagram.cells {
            if cell.rate <= theta_star - 0.1 && cell.trials > 0 {
                below_region_max_success = below_region_max_success.max(cell.p_hat);
            }
        }
        thresholds.push((decoder.id(), threshold));
        diagrams.push(diagram);
    }

    let ordering_ok = theta_star <= mid_estimate + 0.1;
    let below_region_ok = below_region_max_success <= 1.0 - DEFAULT_MARGIN;
    Ok(CombinedReport {
        theta_star,
        region_flagged,
        energy,
        mid_estimate,
        thresholds,
        ordering_ok,
        below_region_max_success,
        below_region_ok,
        diagrams,
        pass: ordering_ok && below_region_ok,
    })
}
