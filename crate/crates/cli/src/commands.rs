//! Subcommand implementations.
//!
//! Every command computes its artifacts in memory and returns them as
//! named byte buffers; the caller writes the files and the manifest after
//! all work is done, so a run either leaves a complete output set or
//! nothing but an error message.

use std::fmt;
use std::str::FromStr;

use midcs_core::dimension::{
    estimate_idimr, estimate_mid, inequality_chain_audit, ChainAuditReport, DimFlavor,
};
use midcs_core::energy::normalized_energy_rate;
use midcs_core::experiments::{
    converse_witness, detect_threshold, mdimcor_vs_recovery_report, run_phase, CombinedReport,
    ConverseReport, PhaseDiagram, ThresholdEstimate,
};
use midcs_core::io::{
    write_batch_binary, write_batch_csv, write_energy_rate_csv, write_estimate_csv,
    write_opnorm_csv, write_phase_csv, write_phase_plot, write_small_ball_csv,
};
use midcs_core::proc_gen::sample_process;
use midcs_core::seeding::derive_seed;
use midcs_core::sensing::{operator_norm_audit, small_ball_audit};
use midcs_core::Result;
use serde::{Deserialize, Serialize};

use crate::config::{parameter, Config};

/// Batch file format restriction for `generate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Binary,
}

/// The manifest-replayable subcommands (everything except `replay`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SubcommandKind {
    Generate,
    EstimateDim,
    Energy,
    AuditGauss,
    Phase,
    Report,
}

impl fmt::Display for SubcommandKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SubcommandKind::Generate => "generate",
            SubcommandKind::EstimateDim => "estimate-dim",
            SubcommandKind::Energy => "energy",
            SubcommandKind::AuditGauss => "audit-gauss",
            SubcommandKind::Phase => "phase",
            SubcommandKind::Report => "report",
        })
    }
}

impl FromStr for SubcommandKind {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Ok(match s {
            "generate" => SubcommandKind::Generate,
            "estimate-dim" => SubcommandKind::EstimateDim,
            "energy" => SubcommandKind::Energy,
            "audit-gauss" => SubcommandKind::AuditGauss,
            "phase" => SubcommandKind::Phase,
            "report" => SubcommandKind::Report,
            _ => return Err(()),
        })
    }
}

/// One artifact: file name (relative to the output directory) and bytes.
#[derive(Debug)]
pub struct NamedOutput {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl NamedOutput {
    fn new(name: &str, bytes: Vec<u8>) -> Self {
        NamedOutput { name: name.to_string(), bytes }
    }
}

/// Everything a subcommand produces: files plus text for the two streams.
#[derive(Debug)]
pub struct CommandOutput {
    pub files: Vec<NamedOutput>,
    /// Informational lines for stdout.
    pub notes: Vec<String>,
    /// Diagnostic lines for stderr.
    pub warnings: Vec<String>,
}

impl CommandOutput {
    fn new() -> Self {
        CommandOutput { files: Vec::new(), notes: Vec::new(), warnings: Vec::new() }
    }
}

/// Run one subcommand against a validated config.
pub fn execute(
    kind: SubcommandKind,
    config: &Config,
    seed: u64,
    format: Option<OutputFormat>,
) -> Result<CommandOutput> {
    match kind {
        SubcommandKind::Generate => cmd_generate(config, seed, format),
        SubcommandKind::EstimateDim => cmd_estimate_dim(config, seed),
        SubcommandKind::Energy => cmd_energy(config, seed),
        SubcommandKind::AuditGauss => cmd_audit_gauss(config, seed),
        SubcommandKind::Phase => cmd_phase(config, seed),
        SubcommandKind::Report => cmd_report(config, seed),
    }
}

fn missing_section(name: &str) -> midcs_core::Error {
    parameter(name, "config section is required by this subcommand")
}

fn cmd_generate(
    config: &Config,
    seed: u64,
    format: Option<OutputFormat>,
) -> Result<CommandOutput> {
    let section = config.generate.as_ref().ok_or_else(|| missing_section("generate"))?;
    let batch = sample_process(
        &config.process,
        section.n,
        section.trials,
        derive_seed(seed, "generate", 0),
    )?;
    let mut out = CommandOutput::new();
    if format != Some(OutputFormat::Binary) {
        let mut buf = Vec::new();
        write_batch_csv(&mut buf, &batch)?;
        out.files.push(NamedOutput::new("batch.csv", buf));
    }
    if format != Some(OutputFormat::Csv) {
        let mut buf = Vec::new();
        write_batch_binary(&mut buf, &batch)?;
        out.files.push(NamedOutput::new("batch.bin", buf));
    }
    out.notes.push(format!("sampled {} trials of block length {}", batch.trials, batch.n));
    Ok(out)
}

fn cmd_estimate_dim(config: &Config, seed: u64) -> Result<CommandOutput> {
    let section = config.dimension.as_ref().ok_or_else(|| missing_section("dimension"))?;
    let stream = derive_seed(seed, "estimate-dim", 0);
    let estimate = match section.flavor {
        DimFlavor::Mid => estimate_mid(&config.process, &section.grid, section.trials, stream)?,
        DimFlavor::Idimr => {
            estimate_idimr(&config.process, &section.grid, section.trials, stream)?
        }
    };
    let mut out = CommandOutput::new();
    let mut buf = Vec::new();
    write_estimate_csv(&mut buf, &estimate)?;
    out.files.push(NamedOutput::new("estimates.csv", buf));
    for excluded in &estimate.excluded {
        out.warnings.push(format!(
            "scale log2 k = {} excluded: {}",
            excluded.scale, excluded.reason
        ));
    }
    out.notes.push(format!(
        "{} = {} (clipped {}), fit r2 = {}",
        estimate.flavor, estimate.value, estimate.value_clipped, estimate.fit.r2
    ));
    Ok(out)
}

fn cmd_energy(config: &Config, seed: u64) -> Result<CommandOutput> {
    let section = config.energy.as_ref().ok_or_else(|| missing_section("energy"))?;
    let curve = normalized_energy_rate(
        &config.process,
        &section.n_ladder,
        section.theta,
        section.trials,
        derive_seed(seed, "energy", 0),
        section.cap_log2,
    )?;
    let mut out = CommandOutput::new();
    let mut buf = Vec::new();
    write_energy_rate_csv(&mut buf, &curve)?;
    out.files.push(NamedOutput::new("energy.csv", buf));
    for point in &curve.points {
        if !point.flag.is_finite() {
            out.warnings
                .push(format!("energy at n = {} is infinite ({})", point.n, point.flag));
        }
    }
    let max_rate = curve
        .points
        .iter()
        .map(|p| p.normalized_rate)
        .fold(f64::NEG_INFINITY, f64::max);
    out.notes.push(format!("max normalized rate over the ladder = {max_rate}"));
    Ok(out)
}

fn cmd_audit_gauss(config: &Config, seed: u64) -> Result<CommandOutput> {
    let section = config.audit_gauss.as_ref().ok_or_else(|| missing_section("audit_gauss"))?;
    if section.m_grid.is_empty() {
        return Err(parameter("m_grid", "must be nonempty"));
    }
    let mut out = CommandOutput::new();
    let mut reports = Vec::with_capacity(section.m_grid.len());
    for &m in &section.m_grid {
        let report = small_ball_audit(
            m,
            &section.eps_grid,
            section.trials,
            derive_seed(seed, "audit-smallball", m as u64),
        )?;
        if report.power_warning {
            out.warnings.push(format!(
                "small-ball audit at m = {m} ran only {} trials; the Wilson interval is too wide to read much into a pass",
                report.trials
            ));
        }
        for row in report.rows.iter().filter(|r| !r.pass) {
            out.warnings.push(format!(
                "small-ball bound violated at m = {}, eps = {}: Wilson upper {} > bound {}",
                row.m, row.eps, row.wilson_upper, row.bound
            ));
        }
        reports.push(report);
    }
    let pass = reports.iter().all(|r| r.pass);
    let mut buf = Vec::new();
    write_small_ball_csv(&mut buf, &reports)?;
    out.files.push(NamedOutput::new("smallball.csv", buf));
    out.notes.push(format!("small-ball audit: {}", if pass { "all pass" } else { "FAILED" }));

    if let Some(op) = &section.opnorm {
        let report =
            operator_norm_audit(op.m, op.n, op.trials, derive_seed(seed, "audit-opnorm", 0))?;
        if !report.quantile_resolvable {
            out.warnings.push(format!(
                "operator-norm tail quantile not resolvable at {} trials; K estimate falls back to the 99.9th percentile",
                report.trials
            ));
        }
        let mut obuf = Vec::new();
        write_opnorm_csv(&mut obuf, &report)?;
        out.files.push(NamedOutput::new("opnorm.csv", obuf));
        out.notes.push(format!("operator-norm K estimate = {}", report.k_hat));
    }
    Ok(out)
}

fn threshold_csv(decoder_id: &str, estimate: &ThresholdEstimate) -> String {
    let mut text = String::from("decoder,status,rate,band_lo,band_hi,slope,intercept\n");
    match estimate {
        ThresholdEstimate::Crossing { rate, band_lo, band_hi, slope, intercept } => {
            text.push_str(&format!(
                "{decoder_id},crossing,{rate},{band_lo},{band_hi},{slope},{intercept}\n"
            ));
        }
        ThresholdEstimate::NoCrossing => {
            text.push_str(&format!("{decoder_id},no_crossing,,,,,\n"));
        }
    }
    text
}

fn cmd_phase(config: &Config, seed: u64) -> Result<CommandOutput> {
    let section = config.phase.as_ref().ok_or_else(|| missing_section("phase"))?;
    let diagram = run_phase(
        &config.process,
        section.n,
        &section.rate_grid,
        section.delta,
        section.trials,
        &section.decoder,
        derive_seed(seed, "phase", 0),
    )?;
    let mut out = CommandOutput::new();
    for cell in diagram.cells.iter().filter(|c| c.incomplete) {
        out.warnings.push(format!(
            "cell at rate {} is incomplete: decoder budget exhausted in some trials",
            cell.rate
        ));
    }
    let threshold = detect_threshold(&diagram)?;
    match &threshold {
        ThresholdEstimate::Crossing { rate, band_lo, band_hi, .. } => out.notes.push(format!(
            "threshold at rate {rate} (fitted 0.1..0.9 band {band_lo}..{band_hi})"
        )),
        ThresholdEstimate::NoCrossing => {
            out.notes.push("no threshold: success never crosses 1/2 on this grid".into())
        }
    }
    let mut buf = Vec::new();
    write_phase_csv(&mut buf, &diagram)?;
    out.files.push(NamedOutput::new("phase.csv", buf));
    let mut plot = Vec::new();
    write_phase_plot(&mut plot, &diagram)?;
    out.files.push(NamedOutput::new("phase_plot.csv", plot));
    out.files.push(NamedOutput::new(
        "threshold.csv",
        threshold_csv(&diagram.decoder_id, &threshold).into_bytes(),
    ));
    Ok(out)
}

fn push_phase_table(text: &mut String, diagram: &PhaseDiagram) {
    text.push_str(&format!(
        "decoder: {}   n = {}   delta = {}\n",
        diagram.decoder_id, diagram.n, diagram.delta
    ));
    text.push_str("rate        m     trials  successes  p_hat               flag\n");
    for c in &diagram.cells {
        text.push_str(&format!(
            "{:<11} {:<5} {:<7} {:<10} {:<19} {}\n",
            c.rate,
            c.m,
            c.trials,
            c.successes,
            c.p_hat,
            if c.incomplete { "incomplete" } else { "ok" }
        ));
    }
}

fn render_report(
    combined: &CombinedReport,
    chain: Option<&ChainAuditReport>,
    converse: Option<&ConverseReport>,
) -> String {
    let pass = combined.pass
        && chain.map_or(true, |c| c.pass)
        && converse.map_or(true, |c| c.pass);
    let mut text = String::new();
    text.push_str("midcs combined report\n");
    text.push_str("=====================\n\n");
    text.push_str(&format!("verdict: {}\n\n", if pass { "PASS" } else { "FAIL" }));

    text.push_str("[energy region]\n");
    text.push_str(&format!("theta_star = {}\n", combined.theta_star));
    text.push_str(&format!("region_flagged = {}\n", combined.region_flagged));
    text.push_str("theta       max_rate             flagged  bounded\n");
    for row in &combined.energy {
        text.push_str(&format!(
            "{:<11} {:<20} {:<8} {}\n",
            row.theta, row.max_rate, row.flagged, row.bounded
        ));
    }
    text.push('\n');

    text.push_str("[dimension]\n");
    text.push_str(&format!("mid_estimate = {}\n\n", combined.mid_estimate));

    text.push_str("[recovery thresholds]\n");
    for (decoder, threshold) in &combined.thresholds {
        match threshold {
            Some(rate) => text.push_str(&format!("{decoder}: {rate}\n")),
            None => text.push_str(&format!("{decoder}: none\n")),
        }
    }
    text.push('\n');

    text.push_str("[orderings]\n");
    text.push_str(&format!(
        "theta_star <= mid + 0.1: {}\n",
        if combined.ordering_ok { "ok" } else { "VIOLATED" }
    ));
    text.push_str(&format!(
        "max success below the energy region = {} ({})\n\n",
        combined.below_region_max_success,
        if combined.below_region_ok { "ok" } else { "VIOLATED" }
    ));

    text.push_str("[phase diagrams]\n");
    for diagram in &combined.diagrams {
        push_phase_table(&mut text, diagram);
        text.push('\n');
    }

    if let Some(chain) = chain {
        text.push_str("[chain audit]\n");
        text.push_str(&format!(
            "n = {}, trials = {}, depths = {:?}, window depths = {:?}\n",
            chain.n, chain.trials, chain.depths, chain.window_depths
        ));
        text.push_str(&format!(
            "aldim_lo = {}, id_lo = {}, id_up = {}, aldim_up = {}\n",
            chain.aldim_lo, chain.id_lo, chain.id_up, chain.aldim_up
        ));
        text.push_str(&format!(
            "idimr_rate = {}, mid_rate = {}\n",
            chain.idimr_rate, chain.mid_rate
        ));
        for check in &chain.checks {
            text.push_str(&format!(
                "{:<24} {} <= {} + {}: {}\n",
                check.label,
                check.lhs,
                check.rhs,
                check.slack,
                if check.pass { "ok" } else { "VIOLATED" }
            ));
        }
        text.push('\n');
    }

    if let Some(conv) = converse {
        text.push_str("[converse witness]\n");
        text.push_str(&format!(
            "rate = {} (ground-truth dimension {}), margin = {}\n",
            conv.rate, conv.ground_truth_mid, conv.margin
        ));
        text.push_str("decoder                  delta   max_success         trend_z             verdict\n");
        for check in &conv.checks {
            text.push_str(&format!(
                "{:<24} {:<7} {:<19} {:<19} {}\n",
                check.decoder_id,
                check.delta,
                check.max_success,
                check.trend_z,
                if check.below_margin && check.no_increasing_trend { "ok" } else { "VIOLATED" }
            ));
        }
        text.push('\n');
    }

    text
}

fn cmd_report(config: &Config, seed: u64) -> Result<CommandOutput> {
    let section = config.report.as_ref().ok_or_else(|| missing_section("report"))?;
    let combined = mdimcor_vs_recovery_report(
        &config.process,
        &section.theta_grid,
        &section.rate_grid,
        &section.n_ladder,
        &section.decoders,
        section.trials,
        section.mid_trials,
        derive_seed(seed, "report", 0),
    )?;
    let chain = section
        .chain_audit
        .as_ref()
        .map(|opts| inequality_chain_audit(&config.process, opts, derive_seed(seed, "report-chain", 0)))
        .transpose()?;
    let converse = section
        .converse
        .as_ref()
        .map(|c| {
            converse_witness(
                &config.process,
                &section.n_ladder,
                c.rate,
                &section.decoders,
                &c.delta_grid,
                c.trials,
                c.margin,
                derive_seed(seed, "report-converse", 0),
            )
        })
        .transpose()?;

    let mut out = CommandOutput::new();
    if combined.region_flagged {
        out.warnings
            .push("infinite energies collapsed the bounded region to theta = 0".into());
    }
    let text = render_report(&combined, chain.as_ref(), converse.as_ref());
    let pass = text.contains("verdict: PASS");
    out.files.push(NamedOutput::new("report.txt", text.into_bytes()));
    out.notes.push(format!("combined report: {}", if pass { "PASS" } else { "FAIL" }));
    Ok(out)
}
