//! Gaussian measurement ensembles, concentration audits, and desk-scale
//! decoders.
//!
//! A [`SensingMatrix`] holds i.i.d. standard-normal entries, deterministic
//! in its seed. Two Monte-Carlo audits probe the concentration facts the
//! recovery experiments lean on: [`small_ball_audit`] checks the
//! small-ball bound `P(|Au| <= ε sqrt(m) |u|) <= e^m ε^m` for a unit
//! vector u, and [`operator_norm_audit`] estimates the spectral-norm tail
//! `P(||A|| >= K sqrt(n)) <= 2 e^{-n}` empirically.
//!
//! Two decoders realize the measurement-to-estimate map at desk scale:
//! [`decode_sparse_enum`] enumerates supports in (size, lexicographic)
//! order and least-squares-fits each one, and [`decode_min_entropy`]
//! minimizes the per-coordinate quantized entropy over a lattice of
//! candidates, exhaustively or by seeded simulated annealing. Both are
//! deterministic functions of their inputs; wherever a minimizer could be
//! non-unique, ties break lexicographically so repeated runs agree
//! bit-for-bit.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::linalg::{cholesky, cholesky_solve};
use crate::seeding::stream;
use crate::stats::wilson_interval_z;
use crate::{Error, Result};

/// An m×n measurement matrix with i.i.d. N(0,1) entries, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SensingMatrix {
    pub m: usize,
    pub n: usize,
    pub entries: Vec<f64>,
    pub seed: u64,
}

/// On-demand sanity gates for the Gaussian entry law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MatrixSanity {
    pub mean: f64,
    pub variance: f64,
    /// `|mean| <= 4 / sqrt(mn)`.
    pub mean_ok: bool,
    /// `|variance - 1| <= 6 / sqrt(mn)`.
    pub variance_ok: bool,
}

impl SensingMatrix {
    pub fn row(&self, i: usize) -> &[f64] {
        &self.entries[i * self.n..(i + 1) * self.n]
    }

    /// `y = A x`.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.m).map(|i| crate::linalg::dot(self.row(i), x)).collect()
    }

    /// Empirical moment gates, evaluated lazily because most uses never
    /// need them.
    pub fn sanity_check(&self) -> MatrixSanity {
        let count = (self.m * self.n) as f64;
        let mean = self.entries.iter().sum::<f64>() / count;
        let variance =
            self.entries.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / count;
        let gate = count.sqrt().recip();
        MatrixSanity {
            mean,
            variance,
            mean_ok: mean.abs() <= 4.0 * gate,
            variance_ok: (variance - 1.0).abs() <= 6.0 * gate,
        }
    }
}

/// Draw an m×n Gaussian matrix, deterministic in `seed`. The undersampled
/// regime `m <= n` is the only one the experiments use, so `m > n` is
/// rejected.
pub fn sample_matrix(m: usize, n: usize, seed: u64) -> Result<SensingMatrix> {
    if m < 1 {
        return Err(Error::parameter("m", "must be >= 1"));
    }
    if m > n {
        return Err(Error::parameter("m", "measurement count must not exceed n"));
    }
    let mut rng = stream(seed, "matrix", 0);
    let entries: Vec<f64> = (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    Ok(SensingMatrix { m, n, entries, seed })
}

/// `(1/sqrt(n)) ||x - x_hat||_2`.
pub fn recovery_error(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() || x.is_empty() {
        return Err(Error::parameter("x_hat", "length must match x and be nonzero"));
    }
    let ss: f64 = x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((ss / x.len() as f64).sqrt())
}

/// One decoded measurement: the source block, its measurements, the
/// decoder output, and the normalized error against the tolerance δ.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecoveryTrial {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub x_hat: Vec<f64>,
    pub err: f64,
    pub decoder_id: String,
    pub success: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SmallBallRow {
    pub m: usize,
    pub eps: f64,
    pub empirical: f64,
    pub wilson_upper: f64,
    /// `e^m ε^m`.
    pub bound: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SmallBallReport {
    pub m: usize,
    pub trials: usize,
    /// Set when trials < 10^3: the Wilson interval is too wide to read
    /// much into a pass.
    pub power_warning: bool,
    pub rows: Vec<SmallBallRow>,
    pub pass: bool,
}

/// Estimate `P(|A u| <= ε sqrt(m))` for a unit vector u and check the
/// one-sided Wilson 95% upper confidence limit against `e^m ε^m` at every
/// grid point. By rotation invariance `|A u|^2` is a chi-square with m
/// degrees of freedom, so each trial draws m normals once and compares the
/// squared norm against every ε threshold.
pub fn small_ball_audit(
    m: usize,
    eps_grid: &[f64],
    trials: usize,
    seed: u64,
) -> Result<SmallBallReport> {
    if m < 1 {
        return Err(Error::parameter("m", "must be >= 1"));
    }
    if trials < 1 {
        return Err(Error::parameter("trials", "must be >= 1"));
    }
    if eps_grid.is_empty() || eps_grid.iter().any(|e| !(0.0..1.0).contains(e) || *e <= 0.0) {
        return Err(Error::parameter("eps_grid", "thresholds must lie in (0, 1)"));
    }
    let mut hits = vec![0u64; eps_grid.len()];
    for t in 0..trials {
        let mut rng = stream(seed, "smallball", t as u64);
        let chi2: f64 = (0..m)
            .map(|_| {
                let g: f64 = StandardNormal.sample(&mut rng);
                g * g
            })
            .sum();
        for (h, &eps) in hits.iter_mut().zip(eps_grid) {
            if chi2 <= eps * eps * m as f64 {
                *h += 1;
            }
        }
    }
    let rows: Vec<SmallBallRow> = eps_grid
        .iter()
        .zip(&hits)
        .map(|(&eps, &h)| {
            // one-sided claim (P <= bound), so the 95% upper confidence
            // limit uses the one-sided quantile
            let (_, upper) = wilson_interval_z(h, trials as u64, 1.6448536269514722);
            let bound = (m as f64 * (1.0 + eps.ln())).exp();
            SmallBallRow {
                m,
                eps,
                empirical: h as f64 / trials as f64,
                wilson_upper: upper,
                bound,
                pass: upper <= bound,
            }
        })
        .collect();
    let pass = rows.iter().all(|r| r.pass);
    Ok(SmallBallReport { m, trials, power_warning: trials < 1_000, rows, pass })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormPercentile {
    pub percentile: f64,
    /// Value of `||A|| / sqrt(n)` at this percentile.
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OperatorNormReport {
    pub m: usize,
    pub n: usize,
    pub trials: usize,
    pub percentiles: Vec<NormPercentile>,
    /// Smallest empirical K with tail mass at most `2 e^{-n}`.
    pub k_hat: f64,
    /// False when `trials * 2 e^{-n} < 1`: the target quantile is not
    /// resolvable and `k_hat` falls back to the 99.9th percentile.
    pub quantile_resolvable: bool,
}

/// Spectral norm of one matrix by power iteration on `A Aᵀ`, with the
/// start vector drawn from the matrix's own stream.
fn spectral_norm(a: &SensingMatrix, rng: &mut rand_chacha::ChaCha8Rng) -> Result<f64> {
    let m = a.m;
    // B = A Aᵀ (m×m, the smaller Gram side since m <= n)
    let mut b = vec![0.0f64; m * m];
    for i in 0..m {
        for j in i..m {
            let v: f64 = a.row(i).iter().zip(a.row(j)).map(|(x, y)| x * y).sum();
            b[i * m + j] = v;
            b[j * m + i] = v;
        }
    }
    let mut v: Vec<f64> = (0..m).map(|_| StandardNormal.sample(rng)).collect();
    let nv = crate::linalg::norm2(&v);
    if nv == 0.0 {
        return Err(Error::Numeric("power iteration started from a zero vector".into()));
    }
    v.iter_mut().for_each(|t| *t /= nv);
    let mut lambda = 0.0f64;
    for _ in 0..10_000 {
        let mut w = vec![0.0f64; m];
        for i in 0..m {
            w[i] = b[i * m..(i + 1) * m].iter().zip(&v).map(|(x, y)| x * y).sum();
        }
        let new_lambda: f64 = crate::linalg::dot(&v, &w);
        let nw = crate::linalg::norm2(&w);
        if nw == 0.0 {
            return Ok(0.0);
        }
        w.iter_mut().for_each(|t| *t /= nw);
        v = w;
        if (new_lambda - lambda).abs() <= 1e-8 * new_lambda.abs().max(f64::MIN_POSITIVE) {
            return Ok(new_lambda.max(0.0).sqrt());
        }
        lambda = new_lambda;
    }
    Err(Error::Numeric(
        "power iteration did not converge within 10^4 iterations".into(),
    ))
}

/// Distribution of `||A|| / sqrt(n)` over fresh Gaussian matrices, with
/// the empirical constant K̂ for the `2 e^{-n}` tail.
pub fn operator_norm_audit(
    m: usize,
    n: usize,
    trials: usize,
    seed: u64,
) -> Result<OperatorNormReport> {
    if m < 1 || m > n {
        return Err(Error::parameter("m", "needs 1 <= m <= n"));
    }
    if trials < 1 {
        return Err(Error::parameter("trials", "must be >= 1"));
    }
    let mut values = Vec::with_capacity(trials);
    for t in 0..trials {
        let mut rng = stream(seed, "opnorm", t as u64);
        let entries: Vec<f64> =
            (0..m * n).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = SensingMatrix { m, n, entries, seed };
        values.push(spectral_norm(&a, &mut rng)? / (n as f64).sqrt());
    }
    values.sort_unstable_by(|a, b| a.partial_cmp(b).unwrap());
    let order_stat = |q: f64| {
        let rank = ((q * trials as f64).ceil() as usize).clamp(1, trials);
        values[rank - 1]
    };
    let percentiles = [50.0, 90.0, 99.0, 99.9]
        .iter()
        .map(|&p| NormPercentile { percentile: p, value: order_stat(p / 100.0) })
        .collect();
    let tail_target = trials as f64 * 2.0 * (-(n as f64)).exp();
    let quantile_resolvable = tail_target >= 1.0;
    let k_hat = if quantile_resolvable {
        order_stat(1.0 - 2.0 * (-(n as f64)).exp())
    } else {
        order_stat(0.999)
    };
    Ok(OperatorNormReport { m, n, trials, percentiles, k_hat, quantile_resolvable })
}

/// Support-enumeration decode result.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SparseDecode {
    pub x_hat: Vec<f64>,
    pub support: Vec<usize>,
    pub residual_l2: f64,
    /// True when the returned residual is within the zero tolerance
    /// `10^{-10} max(1, ||y||)`.
    pub hit_tolerance: bool,
    /// Supports visited during the search.
    pub nodes: u64,
}

fn binomial_total(n: usize, s: usize) -> f64 {
    let mut total = 0.0f64;
    let mut term = 1.0f64;
    for j in 0..=s {
        if j > 0 {
            term *= (n - j + 1) as f64 / j as f64;
        }
        total += term;
    }
    total
}

/// Least-squares decode by exhaustive support search: every support `T`
/// with `|T| <= s_max` is scored by its projection residual, and the
/// candidate with the smallest residual wins; ties break toward smaller
/// supports, then lexicographically. Residuals at or below
/// `10^{-10} max(1, ||y||)` are indistinguishable from zero, so the
/// search visits supports in (size, lexicographic) order and stops at the
/// first one inside that tolerance: exactly the tie-break winner.
///
/// The enumeration runs on an incrementally extended Cholesky factor of
/// the support Gram matrix, one rank-1 extension per tree edge. The
/// running residual `||y||^2 - ||z||^2` cancels to rounding noise near
/// exact fits, so candidates within `10^{-7} max(1, ||y||)` of zero are
/// re-scored by an explicit matrix-vector product before the tolerance
/// is applied. `budget` caps the total number of supports the ladder may
/// visit (`Σ_{j<=s_max} C(n, j)`), checked before any work happens.
pub fn decode_sparse_enum(
    y: &[f64],
    a: &SensingMatrix,
    s_max: usize,
    budget: u64,
) -> Result<SparseDecode> {
    if y.len() != a.m {
        return Err(Error::parameter("y", "length must equal the measurement count"));
    }
    if s_max > a.m {
        return Err(Error::parameter(
            "s_max",
            "support bound must not exceed the measurement count",
        ));
    }
    let s_cap = s_max.min(a.n);
    let total = binomial_total(a.n, s_cap);
    if total > budget as f64 {
        return Err(Error::Budget(format!(
            "support enumeration needs {total:.3e} candidates, budget is {budget}; reduce s_max"
        )));
    }

    let n = a.n;
    // Gram matrix and correlation vector
    let mut g = vec![0.0f64; n * n];
    for i in 0..n {
        for j in i..n {
            let v: f64 = (0..a.m).map(|r| a.entries[r * n + i] * a.entries[r * n + j]).sum();
            g[i * n + j] = v;
            g[j * n + i] = v;
        }
    }
    let b: Vec<f64> = (0..n)
        .map(|j| (0..a.m).map(|r| a.entries[r * n + j] * y[r]).sum())
        .collect();
    let yy: f64 = y.iter().map(|v| v * v).sum();
    let tol = 1e-10 * yy.sqrt().max(1.0);
    let tol2 = tol * tol;
    let screen = 1e-7 * yy.sqrt().max(1.0);

    // Interleaving width for the batched level scans and the deepest
    // prefix their fixed buffers can hold; deeper prefixes (possible
    // only when the budget admits > C(n, 24) candidates) fall back to
    // the scalar walk.
    const LB: usize = 8;
    const MAXD: usize = 24;

    struct Search<'s> {
        g: &'s [f64],
        b: &'s [f64],
        a: &'s SensingMatrix,
        y: &'s [f64],
        n: usize,
        sel: Vec<usize>,
        lrows: Vec<f64>,
        z: Vec<f64>,
        res2: f64,
        nodes: u64,
        tol2: f64,
        screen2: f64,
        best_res2: f64,
        best_sel: Vec<usize>,
        found: bool,
    }

    impl Search<'_> {
        /// Extend the factor by column c. The new packed row is built in
        /// place at the tail of `lrows`; running sums take the place of
        /// the second pass over it, in the same accumulation order.
        fn push(&mut self, c: usize) {
            let depth = self.sel.len();
            let start = self.lrows.len();
            self.lrows.resize(start + depth + 1, 0.0);
            let (old, fresh) = self.lrows.split_at_mut(start);
            // the Gram matrix is symmetric, so column c is also row c;
            // reading the row keeps the accesses on one cache line
            let gc = &self.g[c * self.n..(c + 1) * self.n];
            let mut ww2 = 0.0f64;
            let mut wz = 0.0f64;
            let mut offset = 0;
            for (i, &si) in self.sel.iter().enumerate() {
                let row = &old[offset..offset + i + 1];
                let (done, rest) = fresh.split_at_mut(i);
                let dot: f64 = row[..i].iter().zip(done.iter()).map(|(l, t)| l * t).sum();
                let wi = (gc[si] - dot) / row[i];
                rest[0] = wi;
                ww2 += wi * wi;
                wz += wi * self.z[i];
                offset += i + 1;
            }
            let gcc = gc[c];
            let pivot2 = gcc - ww2;
            // a numerically dependent column adds nothing to the fit
            let (l_jj, z_j) = if pivot2 <= 1e-12 * gcc.max(f64::MIN_POSITIVE) {
                (1.0, 0.0)
            } else {
                let l = pivot2.sqrt();
                (l, (self.b[c] - wz) / l)
            };
            fresh[depth] = l_jj;
            self.z.push(z_j);
            self.res2 -= z_j * z_j;
            self.sel.push(c);
            self.nodes += 1;
        }

        fn pop(&mut self) {
            let depth = self.sel.len();
            self.sel.pop();
            let z_j = self.z.pop().unwrap();
            self.res2 += z_j * z_j;
            self.lrows.truncate(self.lrows.len() - depth);
        }

        /// Residual by explicit back-substitution and matrix-vector
        /// product, free of the `||y||^2 - ||z||^2` cancellation.
        fn exact_res2(&self) -> f64 {
            let depth = self.sel.len();
            let mut coef = self.z.clone();
            for i in (0..depth).rev() {
                let mut acc = coef[i];
                for j in (i + 1)..depth {
                    acc -= self.lrows[j * (j + 1) / 2 + i] * coef[j];
                }
                coef[i] = acc / self.lrows[i * (i + 1) / 2 + i];
            }
            let mut res2 = 0.0;
            for r in 0..self.a.m {
                let row = self.a.row(r);
                let mut v = self.y[r];
                for (t, c) in self.sel.iter().zip(&coef) {
                    v -= c * row[*t];
                }
                res2 += v * v;
            }
            res2
        }

        fn descend(&mut self, target: usize, first: usize) -> bool {
            if self.sel.len() == target {
                let mut r2 = self.res2;
                if r2 <= self.screen2 {
                    r2 = self.exact_res2();
                }
                if r2 < self.best_res2 {
                    self.best_res2 = r2;
                    self.best_sel = self.sel.clone();
                }
                if r2 <= self.tol2 {
                    self.found = true;
                }
                return self.found;
            }
            let remaining = target - self.sel.len();
            if self.sel.len() < MAXD {
                if remaining == 1 {
                    return self.leaf_scan(first);
                }
                if remaining == 2 {
                    return self.parent_scan(first);
                }
            }
            for c in first..=(self.n - remaining) {
                self.push(c);
                let done = self.descend(target, c + 1);
                self.pop();
                if done {
                    return true;
                }
            }
            false
        }

        /// Forward-substitute the candidate rows for columns `c0..c0+blk`
        /// against the current prefix. The columns are independent, so
        /// their serial multiply-add chains run interleaved; per column
        /// the operations and their order match `push` exactly, making
        /// every stored row entry, pivot, and projection coefficient
        /// bit-identical to what a scalar `push` would produce.
        fn compute_block(
            &self,
            c0: usize,
            blk: usize,
            ws: &mut [f64; LB * MAXD],
            ljs: &mut [f64; LB],
            zs: &mut [f64; LB],
        ) {
            let g = self.g;
            let n = self.n;
            let mut ww2 = [0.0f64; LB];
            let mut wz = [0.0f64; LB];
            let mut dots = [0.0f64; LB];
            let mut offset = 0;
            for (i, &si) in self.sel.iter().enumerate() {
                let row = &self.lrows[offset..offset + i + 1];
                let rii = row[i];
                let zi = self.z[i];
                for d in dots.iter_mut() {
                    *d = 0.0;
                }
                for (j, &lj) in row[..i].iter().enumerate() {
                    let prev = &ws[j * LB..j * LB + LB];
                    for k in 0..blk {
                        dots[k] += lj * prev[k];
                    }
                }
                let fresh = &mut ws[i * LB..i * LB + LB];
                for k in 0..blk {
                    let wi = (g[(c0 + k) * n + si] - dots[k]) / rii;
                    fresh[k] = wi;
                    ww2[k] += wi * wi;
                    wz[k] += wi * zi;
                }
                offset += i + 1;
            }
            for k in 0..blk {
                let c = c0 + k;
                let gcc = g[c * n + c];
                let pivot2 = gcc - ww2[k];
                // a numerically dependent column adds nothing to the fit
                let (l_jj, z_j) = if pivot2 <= 1e-12 * gcc.max(f64::MIN_POSITIVE) {
                    (1.0, 0.0)
                } else {
                    let l = pivot2.sqrt();
                    (l, (self.b[c] - wz[k]) / l)
                };
                ljs[k] = l_jj;
                zs[k] = z_j;
            }
        }

        /// Replay the state changes of `push(c)` from a row `compute_block`
        /// already produced; the copied values are the ones `push` would
        /// recompute, so the resulting state is bit-identical.
        fn materialize(&mut self, c: usize, ws: &[f64; LB * MAXD], k: usize, l_jj: f64, z_j: f64) {
            let depth = self.sel.len();
            self.lrows.extend((0..depth).map(|i| ws[i * LB + k]));
            self.lrows.push(l_jj);
            self.z.push(z_j);
            self.res2 -= z_j * z_j;
            self.sel.push(c);
            self.nodes += 1;
        }

        /// Visit the leaves extending the current prefix by one column
        /// each, block-computing their projections via `compute_block`.
        /// Columns are judged in ascending order, and a leaf is only
        /// materialized when it needs the exact rescore or improves the
        /// best support; any other visit has no effect beyond the node
        /// count and the residual's subtract-then-restore rounding, which
        /// the skip path replays so the state stays bit-identical to a
        /// scalar walk.
        fn leaf_scan(&mut self, first: usize) -> bool {
            let n = self.n;
            let mut ws = [0.0f64; LB * MAXD];
            let mut ljs = [0.0f64; LB];
            let mut zs = [0.0f64; LB];
            let mut c0 = first;
            while c0 < n {
                let blk = (n - c0).min(LB);
                self.compute_block(c0, blk, &mut ws, &mut ljs, &mut zs);
                for k in 0..blk {
                    let z_j = zs[k];
                    let r2 = self.res2 - z_j * z_j;
                    if r2 <= self.screen2 || r2 < self.best_res2 {
                        self.materialize(c0 + k, &ws, k, ljs[k], z_j);
                        let mut r2 = self.res2;
                        if r2 <= self.screen2 {
                            r2 = self.exact_res2();
                        }
                        if r2 < self.best_res2 {
                            self.best_res2 = r2;
                            self.best_sel = self.sel.clone();
                        }
                        if r2 <= self.tol2 {
                            self.found = true;
                        }
                        self.pop();
                        if self.found {
                            return true;
                        }
                    } else {
                        self.res2 = r2 + z_j * z_j;
                        self.nodes += 1;
                    }
                }
                c0 += blk;
            }
            false
        }

        /// Visit the next-to-last level the same way: block-compute the
        /// candidate parent rows, then materialize each in ascending
        /// order (a copy standing in for the scalar recompute) and scan
        /// its leaves. The precomputed rows depend only on the prefix
        /// factor, which subtree visits push and pop in balance, so they
        /// stay valid across the descents.
        fn parent_scan(&mut self, first: usize) -> bool {
            let last = self.n - 2;
            let mut ws = [0.0f64; LB * MAXD];
            let mut ljs = [0.0f64; LB];
            let mut zs = [0.0f64; LB];
            let mut c0 = first;
            while c0 <= last {
                let blk = (last + 1 - c0).min(LB);
                self.compute_block(c0, blk, &mut ws, &mut ljs, &mut zs);
                for k in 0..blk {
                    self.materialize(c0 + k, &ws, k, ljs[k], zs[k]);
                    let done = self.leaf_scan(c0 + k + 1);
                    self.pop();
                    if done {
                        return true;
                    }
                }
                c0 += blk;
            }
            false
        }
    }

    let mut search = Search {
        g: &g,
        b: &b,
        a,
        y,
        n,
        sel: Vec::new(),
        lrows: Vec::new(),
        z: Vec::new(),
        res2: yy,
        nodes: 0,
        tol2,
        screen2: screen * screen,
        best_res2: f64::INFINITY,
        best_sel: Vec::new(),
        found: false,
    };
    for target in 0..=s_cap {
        if search.descend(target, 0) {
            break;
        }
    }

    let support = search.best_sel.clone();
    let nodes = search.nodes + 1; // the empty support is a candidate too

    // clean solve on the winning support
    let mut x_hat = vec![0.0f64; n];
    if !support.is_empty() {
        let k = support.len();
        let mut gs = vec![0.0f64; k * k];
        for (i, &si) in support.iter().enumerate() {
            for (j, &sj) in support.iter().enumerate() {
                gs[i * k + j] = g[si * n + sj];
            }
        }
        let bs: Vec<f64> = support.iter().map(|&si| b[si]).collect();
        cholesky(&mut gs, k)?;
        let coeffs = cholesky_solve(&gs, k, &bs);
        for (&si, &c) in support.iter().zip(&coeffs) {
            x_hat[si] = c;
        }
    }
    let residual_vec = a.apply(&x_hat);
    let residual_l2 = y
        .iter()
        .zip(&residual_vec)
        .map(|(v, w)| (v - w) * (v - w))
        .sum::<f64>()
        .sqrt();
    Ok(SparseDecode {
        x_hat,
        support,
        residual_l2,
        hit_tolerance: residual_l2 <= tol,
        nodes,
    })
}

/// How the lattice search of [`decode_min_entropy`] is driven.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum MinEntropySearch {
    /// Full scan of the candidate lattice, in lexicographic order.
    /// Restricted to n <= 8 and k <= 4, with at most 10^8 candidates.
    Exhaustive,
    /// Seeded simulated annealing over single-coordinate lattice moves
    /// with a fixed geometric temperature schedule from 1 to 10^{-3}.
    Annealing { steps: u64, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DecodeOutcome {
    /// The returned point satisfies the residual constraint.
    Feasible,
    /// Exhaustive scan proved no lattice point satisfies the constraint;
    /// the smallest-residual candidate is returned for diagnosis.
    Infeasible,
    /// The annealing budget ran out before any feasible point appeared;
    /// the smallest-residual candidate seen is returned.
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MinEntropyDecode {
    pub x_hat: Vec<f64>,
    /// Per-coordinate plug-in entropy of the quantized output, in bits.
    pub entropy_bits: f64,
    pub residual_l2: f64,
    pub outcome: DecodeOutcome,
    pub evaluated: u64,
}

/// Per-coordinate empirical entropy of a lattice vector given by its
/// integer digits.
fn digit_entropy_bits(digits: &[u64]) -> f64 {
    let mut sorted = digits.to_vec();
    sorted.sort_unstable();
    let n = digits.len() as f64;
    let mut h = 0.0;
    let mut start = 0;
    while start < sorted.len() {
        let mut end = start + 1;
        while end < sorted.len() && sorted[end] == sorted[start] {
            end += 1;
        }
        let p = (end - start) as f64 / n;
        h -= p * p.log2();
        start = end;
    }
    h
}

/// Decode by entropy minimization over the lattice
/// `{0, 1/k, ..., box_bound}^n`: among candidates with
/// `||A x - y||_2 <= tau sqrt(m)`, return one minimizing the
/// per-coordinate entropy of the quantized vector; ties break toward
/// smaller residual, then lexicographically. Residuals are evaluated by a
/// full matrix-vector product per candidate, so a caller that built `y`
/// with [`SensingMatrix::apply`] gets exact zero residuals even at
/// `tau = 0`.
pub fn decode_min_entropy(
    y: &[f64],
    a: &SensingMatrix,
    k: u64,
    box_bound: f64,
    tau: f64,
    search: &MinEntropySearch,
) -> Result<MinEntropyDecode> {
    if y.len() != a.m {
        return Err(Error::parameter("y", "length must equal the measurement count"));
    }
    if k < 1 {
        return Err(Error::parameter("k", "lattice denominator must be >= 1"));
    }
    if !(box_bound.is_finite() && box_bound > 0.0) {
        return Err(Error::parameter("box", "amplitude bound must be finite and > 0"));
    }
    if !(tau.is_finite() && tau >= 0.0) {
        return Err(Error::parameter("tau", "feasibility tolerance must be finite and >= 0"));
    }
    let levels = (box_bound * k as f64).floor() as u64; // digits run 0..=levels
    let n = a.n;
    let threshold = tau * (a.m as f64).sqrt();

    let eval = |digits: &[u64]| -> (Vec<f64>, f64, f64) {
        let x: Vec<f64> = digits.iter().map(|&d| d as f64 / k as f64).collect();
        let ax = a.apply(&x);
        let res = y
            .iter()
            .zip(&ax)
            .map(|(v, w)| (v - w) * (v - w))
            .sum::<f64>()
            .sqrt();
        let h = digit_entropy_bits(digits);
        (x, res, h)
    };

    match search {
        MinEntropySearch::Exhaustive => {
            if n > 8 || k > 4 {
                return Err(Error::parameter(
                    "search",
                    "exhaustive mode is limited to n <= 8 and k <= 4",
                ));
            }
            let count = ((levels + 1) as f64).powi(n as i32);
            if count > 1e8 {
                return Err(Error::Capacity(format!(
                    "lattice has {count:.3e} candidates; exhaustive mode caps at 10^8"
                )));
            }
            let mut digits = vec![0u64; n];
            let mut evaluated = 0u64;
            let mut best_feasible: Option<(f64, f64, Vec<u64>)> = None;
            let mut best_residual: Option<(f64, Vec<u64>)> = None;
            loop {
                let (_, res, h) = eval(&digits);
                evaluated += 1;
                if res <= threshold {
                    let better = match &best_feasible {
                        None => true,
                        Some((bh, br, _)) => h < *bh || (h == *bh && res < *br),
                    };
                    if better {
                        best_feasible = Some((h, res, digits.clone()));
                    }
                }
                let lower = match &best_residual {
                    None => true,
                    Some((br, _)) => res < *br,
                };
                if lower {
                    best_residual = Some((res, digits.clone()));
                }
                // lexicographic odometer
                let mut pos = n;
                while pos > 0 {
                    if digits[pos - 1] < levels {
                        digits[pos - 1] += 1;
                        digits[pos..].iter_mut().for_each(|d| *d = 0);
                        break;
                    }
                    pos -= 1;
                }
                if pos == 0 {
                    break;
                }
            }
            let (digits, outcome) = match best_feasible {
                Some((_, _, d)) => (d, DecodeOutcome::Feasible),
                None => (best_residual.unwrap().1, DecodeOutcome::Infeasible),
            };
            let (x_hat, residual_l2, entropy_bits) = eval(&digits);
            Ok(MinEntropyDecode { x_hat, entropy_bits, residual_l2, outcome, evaluated })
        }
        MinEntropySearch::Annealing { steps, seed } => {
            if *steps < 1 {
                return Err(Error::parameter("search", "annealing needs at least 1 step"));
            }
            let scale = 1.0 + y.iter().map(|v| v * v).sum::<f64>().sqrt();
            let penalized = |res: f64, h: f64| {
                let excess = ((res - threshold) / scale).max(0.0);
                h + 10.0 * excess * excess
            };
            let mut rng = stream(*seed, "anneal", 0);
            let mut digits = vec![0u64; n];
            let (_, mut cur_res, mut cur_h) = eval(&digits);
            let mut best_feasible: Option<(f64, f64, Vec<u64>)> = None;
            let mut best_residual = (cur_res, digits.clone());
            if cur_res <= threshold {
                best_feasible = Some((cur_h, cur_res, digits.clone()));
            }
            let t0 = 1.0f64;
            let t1 = 1e-3f64;
            for step in 0..*steps {
                let temp = t0 * (t1 / t0).powf(step as f64 / *steps as f64);
                let coord = rng.gen_range(0..n);
                let up = rng.gen_bool(0.5);
                let old = digits[coord];
                let proposed = if up { old.saturating_add(1).min(levels) } else { old.saturating_sub(1) };
                if proposed == old {
                    continue;
                }
                digits[coord] = proposed;
                let (_, res, h) = eval(&digits);
                let delta = penalized(res, h) - penalized(cur_res, cur_h);
                let accept = delta <= 0.0 || rng.gen::<f64>() < (-delta / temp).exp();
                if accept {
                    cur_res = res;
                    cur_h = h;
                    if res < best_residual.0 {
                        best_residual = (res, digits.clone());
                    }
                    if res <= threshold {
                        let better = match &best_feasible {
                            None => true,
                            Some((bh, br, _)) => h < *bh || (h == *bh && res < *br),
                        };
                        if better {
                            best_feasible = Some((h, res, digits.clone()));
                        }
                    }
                } else {
                    digits[coord] = old;
                }
            }
            let (digits, outcome) = match best_feasible {
                Some((_, _, d)) => (d, DecodeOutcome::Feasible),
                None => (best_residual.1, DecodeOutcome::BudgetExhausted),
            };
            let (x_hat, residual_l2, entropy_bits) = eval(&digits);
            Ok(MinEntropyDecode {
                x_hat,
                entropy_bits,
                residual_l2,
                outcome,
                evaluated: *steps,
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    use statrs::function::erf::erf;

    #[test]
    fn matrices_are_deterministic_and_pass_moment_gates() {
        let a = sample_matrix(2, 5_000, 99).unwrap();
        let b = sample_matrix(2, 5_000, 99).unwrap();
        assert_eq!(a.entries, b.entries);
        let sanity = a.sanity_check();
        assert!(sanity.mean_ok, "mean {}", sanity.mean);
        assert!(sanity.variance_ok, "variance {}", sanity.variance);
        assert!(matches!(sample_matrix(5, 4, 0), Err(Error::Parameter { .. })));
    }

    #[test]
    fn single_entry_matrices_average_to_zero() {
        let mean = (0..20_000)
            .map(|s| sample_matrix(1, 1, s).unwrap().entries[0])
            .sum::<f64>()
            / 20_000.0;
        assert!(mean.abs() <= 0.03, "mean over seeds {mean}");
    }

    #[test]
    fn distinct_rows_are_uncorrelated() {
        let mean = (0..10_000)
            .map(|s| {
                let a = sample_matrix(2, 4, s).unwrap();
                a.row(0).iter().zip(a.row(1)).map(|(x, y)| x * y).sum::<f64>() / 4.0
            })
            .sum::<f64>()
            / 10_000.0;
        assert!(mean.abs() <= 0.015, "row correlation {mean}");
    }

    #[test]
    fn small_ball_audit_matches_distribution_oracles() {
        let report = small_ball_audit(1, &[0.1, 0.5], 20_000, 5).unwrap();
        assert!(report.pass);
        assert!(!report.power_warning);
        // P(|g| <= 0.1) = erf(0.1 / sqrt(2))
        let oracle = erf(0.1 / 2.0f64.sqrt());
        assert!((report.rows[0].empirical - oracle).abs() <= 0.006);

        let chi = ChiSquared::new(4.0).unwrap();
        let report4 = small_ball_audit(4, &[0.2], 20_000, 6).unwrap();
        let oracle4 = chi.cdf(4.0 * 0.04);
        assert!((report4.rows[0].empirical - oracle4).abs() <= 1e-3);
        assert!(report4.rows[0].bound > report4.rows[0].wilson_upper);

        assert!(small_ball_audit(2, &[0.1], 500, 7).unwrap().power_warning);
        assert!(matches!(
            small_ball_audit(2, &[1.5], 100, 0),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn operator_norm_tracks_the_half_normal_quantile() {
        let report = operator_norm_audit(1, 1, 20_000, 11).unwrap();
        let p999 = report.percentiles.iter().find(|p| p.percentile == 99.9).unwrap();
        assert!((p999.value - 3.2905).abs() <= 0.25, "p99.9 {}", p999.value);
    }

    #[test]
    fn operator_norm_constant_is_modest_in_the_sensing_regime() {
        let report = operator_norm_audit(4, 8, 10_000, 13).unwrap();
        assert!(report.quantile_resolvable);
        assert!(report.k_hat <= 4.0, "k_hat {}", report.k_hat);
        assert!(report.k_hat >= 1.0, "k_hat {}", report.k_hat);
    }

    #[test]
    fn spectral_norm_dominates_column_norms() {
        let a = sample_matrix(3, 6, 21).unwrap();
        let mut rng = stream(21, "check", 0);
        let norm = spectral_norm(&a, &mut rng).unwrap();
        let max_col = (0..a.n)
            .map(|j| (0..a.m).map(|i| a.entries[i * a.n + j].powi(2)).sum::<f64>().sqrt())
            .fold(0.0f64, f64::max);
        assert!(norm >= max_col - 1e-8);
    }

    #[test]
    fn sparse_enum_recovers_sparse_vectors_exactly() {
        let a = sample_matrix(2, 4, 33).unwrap();
        let mut x = vec![0.0; 4];
        x[2] = 0.7;
        let y = a.apply(&x);
        let decode = decode_sparse_enum(&y, &a, 2, 1_000_000).unwrap();
        assert!(decode.hit_tolerance);
        assert_eq!(decode.support, vec![2]);
        assert!(recovery_error(&x, &decode.x_hat).unwrap() <= 1e-10);

        let zero = decode_sparse_enum(&[0.0, 0.0], &a, 2, 1_000_000).unwrap();
        assert!(zero.x_hat.iter().all(|&v| v == 0.0));
        assert_eq!(zero.support, Vec::<usize>::new());
        assert_eq!(zero.nodes, 1);
    }

    #[test]
    fn sparse_enum_noisy_residual_equals_best_projection() {
        let a = sample_matrix(3, 5, 44).unwrap();
        let mut x = vec![0.0; 5];
        x[1] = 1.0;
        let mut y = a.apply(&x);
        y[0] += 0.3;
        y[2] -= 0.2;
        let decode = decode_sparse_enum(&y, &a, 2, 1_000_000).unwrap();
        assert!(!decode.hit_tolerance);
        assert!(decode.residual_l2 > 0.0);

        // brute-force every support with a dense least-squares solve
        let mut best = f64::INFINITY;
        let yv = nalgebra::DVector::from_vec(y.clone());
        for mask in 0u32..(1 << 5) {
            if mask.count_ones() > 2 {
                continue;
            }
            let cols: Vec<usize> = (0..5).filter(|j| mask & (1 << j) != 0).collect();
            let res = if cols.is_empty() {
                yv.norm()
            } else {
                let at = nalgebra::DMatrix::from_fn(3, cols.len(), |i, jj| {
                    a.entries[i * 5 + cols[jj]]
                });
                let svd = at.clone().svd(true, true);
                let coef = svd.solve(&yv, 1e-12).unwrap();
                (&yv - at * coef).norm()
            };
            best = best.min(res);
        }
        assert!((decode.residual_l2 - best).abs() <= 1e-8);
    }

    #[test]
    fn sparse_enum_guards_budget_and_measurement_count() {
        let a = sample_matrix(14, 24, 1).unwrap();
        let y = vec![0.1; 14];
        assert!(matches!(
            decode_sparse_enum(&y, &a, 14, 1_000),
            Err(Error::Budget(_))
        ));
        assert!(matches!(
            decode_sparse_enum(&y, &a, 15, u64::MAX),
            Err(Error::Parameter { .. })
        ));
    }

    #[test]
    fn min_entropy_exhaustive_solves_square_systems() {
        let a = sample_matrix(4, 4, 55).unwrap();
        let x = vec![0.0, 0.25, 0.0, 0.75];
        let y = a.apply(&x);
        let decode =
            decode_min_entropy(&y, &a, 4, 1.0, 0.0, &MinEntropySearch::Exhaustive).unwrap();
        assert_eq!(decode.outcome, DecodeOutcome::Feasible);
        assert_eq!(decode.x_hat, x);
        assert_eq!(decode.residual_l2, 0.0);

        let zero =
            decode_min_entropy(&[0.0; 4], &a, 4, 1.0, 0.0, &MinEntropySearch::Exhaustive)
                .unwrap();
        assert_eq!(zero.x_hat, vec![0.0; 4]);
        assert_eq!(zero.entropy_bits, 0.0);
    }

    #[test]
    fn min_entropy_reports_infeasibility() {
        let a = sample_matrix(2, 3, 66).unwrap();
        let y = vec![1e6, -1e6];
        let decode =
            decode_min_entropy(&y, &a, 2, 1.0, 1e-9, &MinEntropySearch::Exhaustive).unwrap();
        assert_eq!(decode.outcome, DecodeOutcome::Infeasible);
        assert!(decode.residual_l2 > 0.0);
    }

    #[test]
    fn min_entropy_annealing_is_deterministic_and_feasible() {
        let a = sample_matrix(6, 6, 77).unwrap();
        let x = vec![0.0, 0.5, 0.0, 0.0, 1.0, 0.0];
        let y = a.apply(&x);
        let search = MinEntropySearch::Annealing { steps: 20_000, seed: 9 };
        let d1 = decode_min_entropy(&y, &a, 2, 1.0, 1e-6, &search).unwrap();
        let d2 = decode_min_entropy(&y, &a, 2, 1.0, 1e-6, &search).unwrap();
        assert_eq!(d1, d2);
        if d1.outcome == DecodeOutcome::Feasible {
            assert!(d1.residual_l2 <= 1e-6 * 6.0f64.sqrt());
        }
    }

    #[test]
    fn recovery_error_closed_forms() {
        assert_eq!(recovery_error(&[1.0, 0.0, 0.0, 0.0], &[0.0; 4]).unwrap(), 0.5);
        let x = vec![0.3, -0.4];
        assert_eq!(recovery_error(&x, &x).unwrap(), 0.0);
        let e1 = recovery_error(&[2.0, 0.0], &[0.0, 0.0]).unwrap();
        let e2 = recovery_error(&[4.0, 0.0], &[0.0, 0.0]).unwrap();
        assert!((e2 - 2.0 * e1).abs() <= 1e-12);
        assert!(recovery_error(&[1.0], &[1.0, 2.0]).is_err());
    }
}
