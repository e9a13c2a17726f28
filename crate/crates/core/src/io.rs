//! File formats: CSV for everything human-facing, a small binary format
//! for lossless sample batches.
//!
//! Every CSV has a mandatory header row, `.` as the decimal separator,
//! and LF line endings. Floats are written with Rust's shortest
//! round-trip formatting, so reading a file back recovers the exact
//! bits. The binary batch format is a 16-byte header (magic, version,
//! n, trials) followed by row-major little-endian doubles.

use std::io::{BufRead, Read, Write};

use crate::dimension::DimensionEstimate;
use crate::energy::EnergyRateCurve;
use crate::experiments::PhaseDiagram;
use crate::proc_gen::SampleBatch;
use crate::sensing::{OperatorNormReport, SmallBallReport};
use crate::{Error, Result};

const BATCH_MAGIC: &[u8; 4] = b"MIDS";
const BATCH_VERSION: u32 = 1;

/// A sample batch as recovered from a file: shape and row-major values.
/// Neither format records the seed; reproduction goes through the run
/// manifest, not the data file.
#[derive(Debug, Clone, PartialEq)]
pub struct RawBatch {
    pub n: usize,
    pub trials: usize,
    pub data: Vec<f64>,
}

/// Write `trial,i,value` rows, trial-major.
pub fn write_batch_csv<W: Write>(w: &mut W, batch: &SampleBatch) -> Result<()> {
    writeln!(w, "trial,i,value")?;
    for (t, row) in batch.rows().enumerate() {
        for (i, v) in row.iter().enumerate() {
            writeln!(w, "{t},{i},{v}")?;
        }
    }
    Ok(())
}

fn parse_field<T: std::str::FromStr>(field: &str, line: usize, what: &str) -> Result<T> {
    field
        .parse()
        .map_err(|_| Error::Data(format!("line {line}: cannot parse {what} from `{field}`")))
}

/// Read a batch CSV written by [`write_batch_csv`]. Rows must appear in
/// canonical trial-major order with contiguous indices; anything else is
/// a data error.
pub fn read_batch_csv<R: BufRead>(r: R) -> Result<RawBatch> {
    let mut lines = r.lines().enumerate();
    match lines.next() {
        Some((_, Ok(header))) if header.trim_end() == "trial,i,value" => {}
        Some((_, Ok(header))) => {
            return Err(Error::Data(format!("expected header `trial,i,value`, got `{header}`")))
        }
        Some((_, Err(e))) => return Err(e.into()),
        None => return Err(Error::Data("empty batch file".into())),
    }
    let mut data = Vec::new();
    let mut n = 0usize;
    let mut trials = 0usize;
    for (idx, line) in lines {
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let (a, b, c) = match (fields.next(), fields.next(), fields.next(), fields.next()) {
            (Some(a), Some(b), Some(c), None) => (a, b, c),
            _ => return Err(Error::Data(format!("line {}: expected 3 fields", idx + 1))),
        };
        let t: usize = parse_field(a, idx + 1, "trial")?;
        let i: usize = parse_field(b, idx + 1, "coordinate")?;
        let v: f64 = parse_field(c, idx + 1, "value")?;
        if t == 0 {
            if i != n {
                return Err(Error::Data(format!("line {}: coordinate out of order", idx + 1)));
            }
            n += 1;
        } else {
            if n == 0 || i != data.len() % n {
                return Err(Error::Data(format!("line {}: coordinate out of order", idx + 1)));
            }
            if t != data.len() / n {
                return Err(Error::Data(format!("line {}: trial out of order", idx + 1)));
            }
        }
        trials = trials.max(t + 1);
        data.push(v);
    }
    if n == 0 || data.len() != n * trials {
        return Err(Error::Data(format!(
            "batch shape mismatch: {} values for {} trials of length {}",
            data.len(),
            trials,
            n
        )));
    }
    Ok(RawBatch { n, trials, data })
}

/// Write the lossless binary form: the 16-byte header `MIDS`, version,
/// n, trials (all little-endian u32), then row-major little-endian
/// doubles.
pub fn write_batch_binary<W: Write>(w: &mut W, batch: &SampleBatch) -> Result<()> {
    if batch.n > u32::MAX as usize || batch.trials > u32::MAX as usize {
        return Err(Error::Capacity("batch shape exceeds the binary format's u32 fields".into()));
    }
    w.write_all(BATCH_MAGIC)?;
    w.write_all(&BATCH_VERSION.to_le_bytes())?;
    w.write_all(&(batch.n as u32).to_le_bytes())?;
    w.write_all(&(batch.trials as u32).to_le_bytes())?;
    for v in &batch.data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    r.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

pub fn read_batch_binary<R: Read>(r: &mut R) -> Result<RawBatch> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != BATCH_MAGIC {
        return Err(Error::Data("not a batch file: bad magic".into()));
    }
    let version = read_u32(r)?;
    if version != BATCH_VERSION {
        return Err(Error::Data(format!("unsupported batch version {version}")));
    }
    let n = read_u32(r)? as usize;
    let trials = read_u32(r)? as usize;
    let count = n.checked_mul(trials).ok_or_else(|| Error::Data("batch shape overflow".into()))?;
    let mut data = Vec::with_capacity(count);
    let mut buf = [0u8; 8];
    for _ in 0..count {
        r.read_exact(&mut buf).map_err(|_| Error::Data("batch file truncated".into()))?;
        data.push(f64::from_le_bytes(buf));
    }
    if r.read(&mut buf)? != 0 {
        return Err(Error::Data("trailing bytes after batch payload".into()));
    }
    Ok(RawBatch { n, trials, data })
}

/// One row per fitted ladder point: `flavor,scale,raw,fitted_slope,value`.
pub fn write_estimate_csv<W: Write>(w: &mut W, estimate: &DimensionEstimate) -> Result<()> {
    writeln!(w, "flavor,scale,raw,fitted_slope,value")?;
    for point in &estimate.ladder {
        writeln!(
            w,
            "{},{},{},{},{}",
            estimate.flavor, point.scale, point.statistic, estimate.fit.slope, estimate.value
        )?;
    }
    Ok(())
}

/// `n,s,theta,log2_energy,normalized_rate,flag` per ladder point.
pub fn write_energy_rate_csv<W: Write>(w: &mut W, curve: &EnergyRateCurve) -> Result<()> {
    writeln!(w, "n,s,theta,log2_energy,normalized_rate,flag")?;
    for p in &curve.points {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            p.n, p.s, curve.theta, p.log2_energy, p.normalized_rate, p.flag
        )?;
    }
    Ok(())
}

/// `rate,m,trials,successes,p_hat,wilson_lo,wilson_hi,flag` per cell.
pub fn write_phase_csv<W: Write>(w: &mut W, diagram: &PhaseDiagram) -> Result<()> {
    writeln!(w, "rate,m,trials,successes,p_hat,wilson_lo,wilson_hi,flag")?;
    for c in &diagram.cells {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            c.rate,
            c.m,
            c.trials,
            c.successes,
            c.p_hat,
            c.wilson_lo,
            c.wilson_hi,
            if c.incomplete { "incomplete" } else { "ok" }
        )?;
    }
    Ok(())
}

/// Two-column `rate,p_hat` file for plotting tools.
pub fn write_phase_plot<W: Write>(w: &mut W, diagram: &PhaseDiagram) -> Result<()> {
    writeln!(w, "rate,p_hat")?;
    for c in &diagram.cells {
        writeln!(w, "{},{}", c.rate, c.p_hat)?;
    }
    Ok(())
}

/// `m,eps,empirical,bound,pass` per grid point, across one or more
/// audits (one per measurement count m).
pub fn write_small_ball_csv<W: Write>(w: &mut W, reports: &[SmallBallReport]) -> Result<()> {
    writeln!(w, "m,eps,empirical,bound,pass")?;
    for report in reports {
        for r in &report.rows {
            writeln!(w, "{},{},{},{},{}", r.m, r.eps, r.empirical, r.bound, r.pass)?;
        }
    }
    Ok(())
}

/// `m,n,percentile,value` per percentile.
pub fn write_opnorm_csv<W: Write>(w: &mut W, report: &OperatorNormReport) -> Result<()> {
    writeln!(w, "m,n,percentile,value")?;
    for p in &report.percentiles {
        writeln!(w, "{},{},{},{}", report.m, report.n, p.percentile, p.value)?;
    }
    Ok(())
}
