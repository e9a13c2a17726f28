//! Dimension estimators built on quantized block entropies.
//!
//! The scalar quantizer is `[v]_k = floor(k v) / k` with floor toward
//! negative infinity, applied coordinatewise to a block. All entropies are
//! plug-in estimates in bits, optionally with the Miller-Madow occupancy
//! correction `(occupied - 1) / (2 N ln 2)` added back.
//!
//! * [`estimate_mid`]: mean information dimension. For the longest block
//!   length in the ladder, fit block entropy per symbol against `log2 k`
//!   across quantization scales; the slope is the estimate. Scales whose
//!   occupied-cell count exceeds 80% of the trial count are saturated
//!   (entropy pinned near `log2 trials`) and are excluded from the fit.
//! * [`estimate_idimr`]: information dimension rate with the limits taken
//!   in the other order. For each scale k, fit block entropy against block
//!   length to get an entropy rate at that resolution, then fit those rates
//!   against `log2 k`; the outer slope removes the resolution-independent
//!   offset that would otherwise bias the ratio at coarse scales.
//! * [`estimate_local_dim`]: pointwise mass-scaling ratios
//!   `log2 mass(B(x, r)) / log2 r` over a radius ladder (Euclidean balls or
//!   dyadic cells), with lower/upper values taken over the finest scales.
//! * [`estimate_info_dim`] and [`estimate_avg_local_dim`]: entropy ratio
//!   `H_b / b` over dyadic depths, and its pointwise counterpart averaged
//!   over the sample. With shared dyadic cells the per-depth average of
//!   pointwise ratios equals the entropy ratio exactly, which makes the
//!   min/max exchange inequalities between the two hold at finite sample
//!   size, not just in the limit.
//! * [`inequality_chain_audit`]: runs all of the above on one shared batch
//!   and checks the ordering (average-local lower) <= (info lower) <=
//!   (info upper) <= (average-local upper) <= ambient n, together with the
//!   rate-level ordering (idimr) <= (mid) <= (average-local upper)/n <= 1.

use serde::{Deserialize, Serialize};

use crate::proc_gen::{sample_process, ProcessSpec, SampleBatch};
use crate::stats::ols;
use crate::{Error, Result};

const LN_2: f64 = core::f64::consts::LN_2;
/// Scales with more occupied cells than this fraction of trials carry no
/// usable entropy information.
const SATURATION_FRACTION: f64 = 0.8;
const MAX_SCALE: u64 = 1 << 52;

/// `floor(k v) / k`, the quantizer underlying every estimator here.
pub fn quantize(value: f64, k: u64) -> f64 {
    quantize_cell(value, k) as f64 / k as f64
}

/// Integer cell index `floor(k v)` of a coordinate.
///
/// The raw product `v * k` can round across a lattice boundary, so the
/// index is nudged until `cell / k <= v < (cell + 1) / k` holds under the
/// same float division that dequantization uses. Quantizing a dequantized
/// value then lands back in the original cell.
pub fn quantize_cell(value: f64, k: u64) -> i64 {
    let kf = k as f64;
    let mut cell = (value * kf).floor();
    if (cell + 1.0) / kf <= value {
        cell += 1.0;
    } else if cell / kf > value {
        cell -= 1.0;
    }
    cell as i64
}

/// Plug-in block entropy at one quantization scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EntropyEstimate {
    /// Plain plug-in entropy in bits.
    pub raw_bits: f64,
    /// Plug-in entropy plus the Miller-Madow occupancy correction.
    pub miller_madow_bits: f64,
    /// Number of distinct occupied cells.
    pub occupied: usize,
    pub trials: usize,
}

impl EntropyEstimate {
    pub fn bits(&self, miller_madow: bool) -> f64 {
        if miller_madow {
            self.miller_madow_bits
        } else {
            self.raw_bits
        }
    }

    /// True when the occupied-cell count exceeds 80% of the trials.
    pub fn saturated(&self) -> bool {
        self.occupied as f64 > SATURATION_FRACTION * self.trials as f64
    }
}

/// Entropy of the first `prefix` coordinates of each trial, quantized at
/// scale `k`.
pub fn quantized_entropy(batch: &SampleBatch, prefix: usize, k: u64) -> Result<EntropyEstimate> {
    if prefix < 1 || prefix > batch.n {
        return Err(Error::parameter("prefix", "must lie in [1, n]"));
    }
    validate_scale(k)?;
    let cells = cell_rows(batch, prefix, k)?;
    Ok(entropy_of_cell_rows(&cells, prefix).expect("batch rows are nonempty"))
}

/// Entropy of pre-quantized cell rows (flat row-major layout).
pub fn entropy_of_cell_rows(cells: &[i64], width: usize) -> Result<EntropyEstimate> {
    if width == 0 || cells.is_empty() || cells.len() % width != 0 {
        return Err(Error::Data(format!(
            "cell buffer length {} is not a positive multiple of width {width}",
            cells.len()
        )));
    }
    let (counts, _) = row_occupancy(cells, width);
    Ok(entropy_from_counts(&counts, cells.len() / width))
}

fn validate_scale(k: u64) -> Result<()> {
    if k < 1 || k > MAX_SCALE {
        return Err(Error::parameter("k", "quantization scale must lie in [1, 2^52]"));
    }
    Ok(())
}

fn cell_rows(batch: &SampleBatch, prefix: usize, k: u64) -> Result<Vec<i64>> {
    let mut cells = Vec::with_capacity(batch.trials * prefix);
    for (t, row) in batch.rows().enumerate() {
        for (i, &v) in row[..prefix].iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::Data(format!("non-finite sample at trial {t}, coordinate {i}")));
            }
            cells.push(quantize_cell(v, k));
        }
    }
    Ok(cells)
}

/// Sort rows lexicographically and return (distinct-cell counts, per-row
/// count of the row's own cell).
fn row_occupancy(cells: &[i64], width: usize) -> (Vec<u64>, Vec<u64>) {
    let rows = cells.len() / width;
    let row = |i: u32| &cells[i as usize * width..(i as usize + 1) * width];
    let mut idx: Vec<u32> = (0..rows as u32).collect();
    idx.sort_unstable_by(|&a, &b| row(a).cmp(row(b)));
    let mut counts = Vec::new();
    let mut per_row = vec![0u64; rows];
    let mut start = 0;
    while start < rows {
        let mut end = start + 1;
        while end < rows && row(idx[end]) == row(idx[start]) {
            end += 1;
        }
        let c = (end - start) as u64;
        counts.push(c);
        for &i in &idx[start..end] {
            per_row[i as usize] = c;
        }
        start = end;
    }
    (counts, per_row)
}

fn entropy_from_counts(counts: &[u64], trials: usize) -> EntropyEstimate {
    let n = trials as f64;
    let sum_c_log_c: f64 = counts.iter().map(|&c| (c as f64) * (c as f64).ln()).sum();
    let raw_bits = (n.ln() - sum_c_log_c / n) / LN_2;
    let occupied = counts.len();
    let miller_madow_bits = raw_bits + (occupied as f64 - 1.0) / (2.0 * n * LN_2);
    EntropyEstimate { raw_bits, miller_madow_bits, occupied, trials }
}

/// Block-length and scale ladders shared by the mid and idimr estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DimGrid {
    /// Block lengths, ascending. Mid reports the slope at the largest one;
    /// idimr fits an entropy rate across all of them.
    pub n_ladder: Vec<usize>,
    /// Quantization scales, ascending, each at least 2.
    pub k_ladder: Vec<u64>,
    /// Apply the Miller-Madow correction before fitting.
    pub miller_madow: bool,
}

impl Default for DimGrid {
    /// Block lengths stop at 4 because on continuous sources the cell
    /// count `k^n` outruns any affordable sample size long before n = 8,
    /// leaving every scale saturated. Callers with discrete or
    /// low-dimensional sources can climb higher explicitly.
    fn default() -> Self {
        DimGrid { n_ladder: vec![1, 2, 4], k_ladder: vec![4, 16, 64, 256], miller_madow: true }
    }
}

impl DimGrid {
    fn validate(&self, need_n_pairs: bool) -> Result<()> {
        if self.n_ladder.is_empty() {
            return Err(Error::parameter("n_ladder", "must be nonempty"));
        }
        if need_n_pairs && self.n_ladder.len() < 2 {
            return Err(Error::parameter(
                "n_ladder",
                "rate fitting needs at least 2 block lengths",
            ));
        }
        if self.n_ladder.windows(2).any(|w| w[0] >= w[1]) || self.n_ladder[0] < 1 {
            return Err(Error::parameter("n_ladder", "must be strictly increasing and >= 1"));
        }
        if self.k_ladder.is_empty() {
            return Err(Error::parameter("k_ladder", "must be nonempty"));
        }
        if self.k_ladder.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::parameter("k_ladder", "must be strictly increasing"));
        }
        if self.k_ladder[0] < 2 || *self.k_ladder.last().unwrap() > MAX_SCALE {
            return Err(Error::parameter("k_ladder", "scales must lie in [2, 2^52]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimFlavor {
    Mid,
    Idimr,
}

impl std::fmt::Display for DimFlavor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            DimFlavor::Mid => "mid",
            DimFlavor::Idimr => "idimr",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FitSummary {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// One fitted point: `scale` is `log2 k`, `statistic` is the quantity the
/// flavor regresses on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderPoint {
    pub scale: f64,
    pub statistic: f64,
}

/// A scale left out of the fit, with the reason.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExcludedScale {
    pub scale: f64,
    pub statistic: f64,
    pub reason: String,
}

/// Per-block-length diagnostic slope (mid flavor only).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StagePoint {
    pub n: usize,
    pub slope: f64,
}

/// A fitted dimension estimate. Refitting a least-squares line through
/// `ladder` reproduces `fit` (and hence `value`) exactly; saturated or
/// otherwise unusable scales are reported in `excluded`, never fitted.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DimensionEstimate {
    pub flavor: DimFlavor,
    pub value: f64,
    /// `value` clamped to [0, 1], the range both rate-level dimensions
    /// inhabit; sampling noise can push the raw slope slightly outside.
    pub value_clipped: f64,
    pub fit: FitSummary,
    pub ladder: Vec<LadderPoint>,
    pub excluded: Vec<ExcludedScale>,
    pub stages: Vec<StagePoint>,
    pub n_max: usize,
    pub trials: usize,
    pub seed: u64,
}

fn fit_points(points: &[LadderPoint]) -> FitSummary {
    let pairs: Vec<(f64, f64)> = points.iter().map(|p| (p.scale, p.statistic)).collect();
    let (slope, intercept, r2) = ols(&pairs);
    FitSummary { slope, intercept, r2 }
}

/// Sample `trials` blocks from `spec` and estimate its mean information
/// dimension on the given grid.
pub fn estimate_mid(
    spec: &ProcessSpec,
    grid: &DimGrid,
    trials: usize,
    seed: u64,
) -> Result<DimensionEstimate> {
    grid.validate(false)?;
    let n_max = *grid.n_ladder.last().unwrap();
    let batch = sample_process(spec, n_max, trials, seed)?;
    estimate_mid_from_batch(&batch, grid)
}

/// Mid estimate from an existing batch; block lengths are prefixes of the
/// batch rows, so `n_ladder` may not exceed `batch.n`.
pub fn estimate_mid_from_batch(batch: &SampleBatch, grid: &DimGrid) -> Result<DimensionEstimate> {
    grid.validate(false)?;
    let n_max = *grid.n_ladder.last().unwrap();
    if n_max > batch.n {
        return Err(Error::parameter("n_ladder", "exceeds the batch block length"));
    }

    let mut stages = Vec::new();
    let mut ladder = Vec::new();
    let mut excluded = Vec::new();
    for &n in &grid.n_ladder {
        let mut points = Vec::new();
        for &k in &grid.k_ladder {
            let e = quantized_entropy(batch, n, k)?;
            let point = LadderPoint {
                scale: (k as f64).log2(),
                statistic: e.bits(grid.miller_madow) / n as f64,
            };
            if e.saturated() {
                if n == n_max {
                    excluded.push(ExcludedScale {
                        scale: point.scale,
                        statistic: point.statistic,
                        reason: format!(
                            "saturated: {} occupied cells over {} trials",
                            e.occupied, e.trials
                        ),
                    });
                }
            } else {
                points.push(point);
            }
        }
        if n == n_max {
            ladder = points.clone();
        }
        if points.len() >= 2 {
            stages.push(StagePoint { n, slope: fit_points(&points).slope });
        }
    }

    if ladder.len() < 2 {
        return Err(Error::Resolution(format!(
            "fewer than 2 usable quantization scales at block length {n_max}; \
             increase trials or add coarser scales"
        )));
    }
    let fit = fit_points(&ladder);
    Ok(DimensionEstimate {
        flavor: DimFlavor::Mid,
        value: fit.slope,
        value_clipped: fit.slope.clamp(0.0, 1.0),
        fit,
        ladder,
        excluded,
        stages,
        n_max,
        trials: batch.trials,
        seed: batch.seed,
    })
}

/// Sample from `spec` and estimate its information dimension rate
/// (block-length limit inside, scale limit outside).
pub fn estimate_idimr(
    spec: &ProcessSpec,
    grid: &DimGrid,
    trials: usize,
    seed: u64,
) -> Result<DimensionEstimate> {
    grid.validate(true)?;
    let n_max = *grid.n_ladder.last().unwrap();
    let batch = sample_process(spec, n_max, trials, seed)?;
    estimate_idimr_from_batch(&batch, grid)
}

/// Idimr estimate from an existing batch (see [`estimate_idimr`]).
pub fn estimate_idimr_from_batch(
    batch: &SampleBatch,
    grid: &DimGrid,
) -> Result<DimensionEstimate> {
    grid.validate(true)?;
    let n_max = *grid.n_ladder.last().unwrap();
    if n_max > batch.n {
        return Err(Error::parameter("n_ladder", "exceeds the batch block length"));
    }

    let mut ladder = Vec::new();
    let mut excluded = Vec::new();
    for &k in &grid.k_ladder {
        let scale = (k as f64).log2();
        let mut points = Vec::new();
        let mut saturated_at = None;
        for &n in &grid.n_ladder {
            let e = quantized_entropy(batch, n, k)?;
            if e.saturated() {
                saturated_at = Some((n, e.occupied, e.trials));
                break;
            }
            points.push((n as f64, e.bits(grid.miller_madow)));
        }
        match saturated_at {
            Some((n, occupied, trials)) => excluded.push(ExcludedScale {
                scale,
                statistic: f64::NAN,
                reason: format!(
                    "saturated at block length {n}: {occupied} occupied cells over {trials} trials"
                ),
            }),
            None => {
                let (rate, _, _) = ols(&points);
                ladder.push(LadderPoint { scale, statistic: rate });
            }
        }
    }

    if ladder.len() < 2 {
        return Err(Error::Resolution(
            "fewer than 2 usable quantization scales for the rate fit; \
             increase trials or add coarser scales"
                .into(),
        ));
    }
    let fit = fit_points(&ladder);
    Ok(DimensionEstimate {
        flavor: DimFlavor::Idimr,
        value: fit.slope,
        value_clipped: fit.slope.clamp(0.0, 1.0),
        fit,
        ladder,
        excluded,
        stages: Vec::new(),
        n_max,
        trials: batch.trials,
        seed: batch.seed,
    })
}

/// Radius ladder for local-dimension ratios: Euclidean balls of the given
/// radii (each in (0, 1)) or dyadic cells at the given depths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleLadder {
    Radii(Vec<f64>),
    DyadicDepths(Vec<u32>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalDimOptions {
    pub scales: ScaleLadder,
    /// Number of finest scales over which the lower/upper values are taken.
    pub window: usize,
    /// Return infinite estimates instead of failing when the point has no
    /// neighbors at any scale.
    pub allow_off_support: bool,
}

impl Default for LocalDimOptions {
    fn default() -> Self {
        LocalDimOptions {
            scales: ScaleLadder::DyadicDepths((2..=8).collect()),
            window: 3,
            allow_off_support: false,
        }
    }
}

/// One scale of a local estimate: `ratio` is `log2 mass / log2 r`, absent
/// when the ball is empty.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalScale {
    pub log2_radius: f64,
    pub mass: f64,
    pub ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalDimEstimate {
    pub lo: f64,
    pub up: f64,
    pub scales: Vec<LocalScale>,
    pub flags: Vec<String>,
}

/// Mass-scaling ratios of the empirical measure around `point`.
///
/// Mass counts samples with distance <= r (Euclidean mode) or samples in
/// the same depth-b dyadic cell as the point (dyadic mode, where
/// r = 2^{-b}). Scales with empty balls are flagged and skipped; a point
/// with no neighbors at any scale is off the empirical support, which is
/// an error unless `allow_off_support` turns it into an infinite estimate.
pub fn estimate_local_dim(
    batch: &SampleBatch,
    point: &[f64],
    opts: &LocalDimOptions,
) -> Result<LocalDimEstimate> {
    if point.len() != batch.n {
        return Err(Error::parameter("point", "dimension must match the batch block length"));
    }
    if opts.window < 1 {
        return Err(Error::parameter("window", "must be >= 1"));
    }
    let trials = batch.trials as f64;

    // (log2 r, mass), ordered from coarsest to finest scale
    let mut scales: Vec<(f64, f64)> = Vec::new();
    match &opts.scales {
        ScaleLadder::Radii(radii) => {
            if radii.is_empty() {
                return Err(Error::parameter("scales", "radius ladder must be nonempty"));
            }
            let mut rs = radii.clone();
            if rs.iter().any(|r| !r.is_finite() || *r <= 0.0 || *r >= 1.0) {
                return Err(Error::parameter("scales", "radii must lie in (0, 1)"));
            }
            rs.sort_by(|a, b| b.partial_cmp(a).unwrap());
            rs.dedup();
            for r in rs {
                let r2 = r * r;
                let count = batch
                    .rows()
                    .filter(|row| {
                        let d2: f64 =
                            row.iter().zip(point).map(|(a, b)| (a - b) * (a - b)).sum();
                        d2 <= r2
                    })
                    .count();
                scales.push((r.log2(), count as f64 / trials));
            }
        }
        ScaleLadder::DyadicDepths(depths) => {
            if depths.is_empty() {
                return Err(Error::parameter("scales", "depth ladder must be nonempty"));
            }
            let mut bs = depths.clone();
            if bs.iter().any(|b| !(1..=52).contains(b)) {
                return Err(Error::parameter("scales", "depths must lie in [1, 52]"));
            }
            bs.sort_unstable();
            bs.dedup();
            for b in bs {
                let k = 1u64 << b;
                let cell: Vec<i64> = point.iter().map(|&v| quantize_cell(v, k)).collect();
                let count = batch
                    .rows()
                    .filter(|row| {
                        row.iter().zip(&cell).all(|(&v, &c)| quantize_cell(v, k) == c)
                    })
                    .count();
                scales.push((-(b as f64), count as f64 / trials));
            }
        }
    }

    let mut flags = Vec::new();
    let mut out_scales = Vec::new();
    let mut ratios = Vec::new();
    for (log2_r, mass) in scales {
        let ratio = if mass > 0.0 { Some(mass.log2() / log2_r) } else { None };
        if ratio.is_none() {
            flags.push(format!("no samples within 2^{log2_r:.3} of the point"));
        } else {
            ratios.push(ratio.unwrap());
        }
        out_scales.push(LocalScale { log2_radius: log2_r, mass, ratio });
    }

    if ratios.is_empty() {
        if opts.allow_off_support {
            flags.push("point lies outside the empirical support at every scale".into());
            return Ok(LocalDimEstimate {
                lo: f64::INFINITY,
                up: f64::INFINITY,
                scales: out_scales,
                flags,
            });
        }
        return Err(Error::Support(
            "point lies outside the empirical support at every requested scale; \
             set allow_off_support to get an infinite estimate"
                .into(),
        ));
    }

    let w = opts.window.min(ratios.len());
    let tail = &ratios[ratios.len() - w..];
    let lo = tail.iter().copied().fold(f64::INFINITY, f64::min);
    let up = tail.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok(LocalDimEstimate { lo, up, scales: out_scales, flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DepthRatio {
    pub depth: u32,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InfoDimEstimate {
    pub lo: f64,
    pub up: f64,
    pub per_depth: Vec<DepthRatio>,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AvgLocalDimEstimate {
    pub lo: f64,
    pub up: f64,
    pub per_depth_avg: Vec<DepthRatio>,
    pub trials: usize,
}

fn validate_depths(depths: &[u32], window: usize) -> Result<Vec<u32>> {
    if depths.is_empty() {
        return Err(Error::parameter("depths", "must be nonempty"));
    }
    if depths.iter().any(|b| !(1..=52).contains(b)) {
        return Err(Error::parameter("depths", "must lie in [1, 52]"));
    }
    if window < 1 {
        return Err(Error::parameter("window", "must be >= 1"));
    }
    let mut bs = depths.to_vec();
    bs.sort_unstable();
    bs.dedup();
    Ok(bs)
}

/// Entropy-ratio dimension of the empirical block measure: raw plug-in
/// `H_b / b` over dyadic depths, lower/upper over the `window` finest.
pub fn estimate_info_dim(
    batch: &SampleBatch,
    depths: &[u32],
    window: usize,
) -> Result<InfoDimEstimate> {
    let bs = validate_depths(depths, window)?;
    let per_depth: Vec<DepthRatio> = bs
        .iter()
        .map(|&b| {
            let e = quantized_entropy(batch, batch.n, 1u64 << b)?;
            Ok(DepthRatio { depth: b, ratio: e.raw_bits / b as f64 })
        })
        .collect::<Result<_>>()?;
    let w = window.min(per_depth.len());
    let tail = &per_depth[per_depth.len() - w..];
    let lo = tail.iter().map(|d| d.ratio).fold(f64::INFINITY, f64::min);
    let up = tail.iter().map(|d| d.ratio).fold(f64::NEG_INFINITY, f64::max);
    Ok(InfoDimEstimate { lo, up, per_depth, trials: batch.trials })
}

/// Sample average of pointwise dyadic mass-scaling ratios. The per-depth
/// average equals the entropy ratio of [`estimate_info_dim`] exactly (same
/// cells, mass inclusive of the point itself); `lo`/`up` average the
/// per-point minimum/maximum over the `window` finest depths, so they
/// bracket the info-dimension values by the min/max exchange.
pub fn estimate_avg_local_dim(
    batch: &SampleBatch,
    depths: &[u32],
    window: usize,
) -> Result<AvgLocalDimEstimate> {
    let bs = validate_depths(depths, window)?;
    let trials = batch.trials;
    let log2_n = (trials as f64).log2();

    // pointwise ratios, one row of per-depth values per trial
    let mut ratio_columns: Vec<Vec<f64>> = Vec::with_capacity(bs.len());
    for &b in &bs {
        let cells = cell_rows(batch, batch.n, 1u64 << b)?;
        let (_, per_row) = row_occupancy(&cells, batch.n);
        ratio_columns
            .push(per_row.iter().map(|&c| (log2_n - (c as f64).log2()) / b as f64).collect());
    }

    let per_depth_avg: Vec<DepthRatio> = bs
        .iter()
        .zip(&ratio_columns)
        .map(|(&b, col)| DepthRatio {
            depth: b,
            ratio: col.iter().sum::<f64>() / trials as f64,
        })
        .collect();

    let w = window.min(bs.len());
    let window_cols = &ratio_columns[bs.len() - w..];
    let mut lo_sum = 0.0;
    let mut up_sum = 0.0;
    for i in 0..trials {
        let mut mn = f64::INFINITY;
        let mut mx = f64::NEG_INFINITY;
        for col in window_cols {
            mn = mn.min(col[i]);
            mx = mx.max(col[i]);
        }
        lo_sum += mn;
        up_sum += mx;
    }
    Ok(AvgLocalDimEstimate {
        lo: lo_sum / trials as f64,
        up: up_sum / trials as f64,
        per_depth_avg,
        trials,
    })
}

/// One inequality in the chain audit; passes when `lhs <= rhs + slack`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainCheck {
    pub label: String,
    pub lhs: f64,
    pub rhs: f64,
    pub slack: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChainAuditOptions {
    pub n: usize,
    pub trials: usize,
    /// Shared dyadic depth ladder, ascending.
    pub depths: Vec<u32>,
    /// Finest-scale window for the lower/upper dimension values.
    pub window: usize,
    /// Additive tolerance on every inequality.
    pub slack: f64,
    pub miller_madow: bool,
}

impl Default for ChainAuditOptions {
    fn default() -> Self {
        ChainAuditOptions {
            n: 2,
            trials: 100_000,
            depths: vec![2, 3, 4, 5, 6],
            window: 3,
            slack: 0.1,
            miller_madow: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainAuditReport {
    pub n: usize,
    pub trials: usize,
    pub depths: Vec<u32>,
    pub window_depths: Vec<u32>,
    pub aldim_lo: f64,
    pub id_lo: f64,
    pub id_up: f64,
    pub aldim_up: f64,
    pub idimr_rate: f64,
    pub mid_rate: f64,
    pub checks: Vec<ChainCheck>,
    pub pass: bool,
}

/// Estimate every dimension quantity on one shared batch and dyadic
/// ladder, then check the ordering chain at block scale
/// (average-local lower <= info lower <= info upper <= average-local
/// upper <= n) and at rate scale (idimr <= mid <= average-local upper / n
/// <= 1), each inequality with additive `slack`.
///
/// Sharing the batch and the cells is what makes the first four links
/// finite-sample exact: the per-depth average of pointwise ratios equals
/// the entropy ratio, so only sampling noise in the rate-level estimates
/// consumes slack.
pub fn inequality_chain_audit(
    spec: &ProcessSpec,
    opts: &ChainAuditOptions,
    seed: u64,
) -> Result<ChainAuditReport> {
    if opts.n < 1 {
        return Err(Error::parameter("n", "block length must be >= 1"));
    }
    if opts.trials < 2 {
        return Err(Error::parameter("trials", "must be >= 2"));
    }
    if !(opts.slack.is_finite() && opts.slack >= 0.0) {
        return Err(Error::parameter("slack", "must be finite and >= 0"));
    }
    let depths = validate_depths(&opts.depths, opts.window)?;
    let batch = sample_process(spec, opts.n, opts.trials, seed)?;

    let info = estimate_info_dim(&batch, &depths, opts.window)?;
    let avg = estimate_avg_local_dim(&batch, &depths, opts.window)?;

    // rate-level fits over depths whose full-block entropy is unsaturated
    let mut mid_points = Vec::new();
    let mut idimr_points = Vec::new();
    for &b in &depths {
        let k = 1u64 << b;
        let full = quantized_entropy(&batch, opts.n, k)?;
        if full.saturated() {
            continue;
        }
        mid_points.push((b as f64, full.bits(opts.miller_madow) / opts.n as f64));
        if opts.n >= 2 {
            let prefix_points: Vec<(f64, f64)> = (1..=opts.n)
                .map(|m| {
                    let e = quantized_entropy(&batch, m, k)?;
                    Ok((m as f64, e.bits(opts.miller_madow)))
                })
                .collect::<Result<_>>()?;
            let (rate, _, _) = ols(&prefix_points);
            idimr_points.push((b as f64, rate));
        }
    }
    if mid_points.len() < 2 {
        return Err(Error::Resolution(
            "fewer than 2 unsaturated depths for the rate-level fits; \
             increase trials or use shallower depths"
                .into(),
        ));
    }
    let (mid_rate, _, _) = ols(&mid_points);
    let idimr_rate = if opts.n >= 2 {
        let (r, _, _) = ols(&idimr_points);
        r
    } else {
        mid_rate
    };

    let n = opts.n as f64;
    let mut checks = Vec::new();
    let mut push = |label: &str, lhs: f64, rhs: f64| {
        checks.push(ChainCheck {
            label: label.to_string(),
            lhs,
            rhs,
            slack: opts.slack,
            pass: lhs <= rhs + opts.slack,
        });
    };
    push("aldim_lo <= id_lo", avg.lo, info.lo);
    push("id_lo <= id_up", info.lo, info.up);
    push("id_up <= aldim_up", info.up, avg.up);
    push("aldim_up <= n", avg.up, n);
    push("idimr <= mid", idimr_rate, mid_rate);
    push("mid <= aldim_up / n", mid_rate, avg.up / n);
    push("aldim_up / n <= 1", avg.up / n, 1.0);

    let pass = checks.iter().all(|c| c.pass);
    let w = opts.window.min(depths.len());
    Ok(ChainAuditReport {
        n: opts.n,
        trials: opts.trials,
        window_depths: depths[depths.len() - w..].to_vec(),
        depths,
        aldim_lo: avg.lo,
        id_lo: info.lo,
        id_up: info.up,
        aldim_up: avg.up,
        idimr_rate,
        mid_rate,
        checks,
        pass,
    })
}
