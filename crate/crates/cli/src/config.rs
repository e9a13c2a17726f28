//! Run configuration: one JSON document holding the schema version, the
//! master seed, the process model, and one section per subcommand.
//!
//! A single file can drive a whole pipeline; each subcommand reads its
//! own section and ignores the rest. Unknown keys anywhere in the
//! document are errors, so typos fail loudly instead of silently falling
//! back to defaults.

use midcs_core::dimension::{ChainAuditOptions, DimFlavor, DimGrid};
use midcs_core::energy::DEFAULT_CAP_LOG2;
use midcs_core::experiments::{DecoderConfig, DEFAULT_DELTA, DEFAULT_MARGIN};
use midcs_core::proc_gen::ProcessSpec;
use midcs_core::{Error, Result};
use serde::{Deserialize, Serialize};

/// Schema version this binary reads and writes.
pub const CONFIG_VERSION: u32 = 1;

/// Build a parameter error from the CLI side.
pub fn parameter(name: &str, reason: impl Into<String>) -> Error {
    Error::Parameter { name: name.to_string(), reason: reason.into() }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub version: u32,
    /// Master seed; every module stream is derived from it by label.
    pub seed: u64,
    pub process: ProcessSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generate: Option<GenerateSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<DimensionSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub energy: Option<EnergySection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub audit_gauss: Option<AuditGaussSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<PhaseSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<ReportSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateSection {
    pub n: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DimensionSection {
    pub flavor: DimFlavor,
    #[serde(default)]
    pub grid: DimGrid,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnergySection {
    pub n_ladder: Vec<usize>,
    pub theta: f64,
    pub trials: usize,
    #[serde(default = "default_cap_log2")]
    pub cap_log2: f64,
}

fn default_cap_log2() -> f64 {
    DEFAULT_CAP_LOG2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditGaussSection {
    /// Measurement counts, one small-ball audit each.
    pub m_grid: Vec<usize>,
    pub eps_grid: Vec<f64>,
    pub trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub opnorm: Option<OpnormSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OpnormSection {
    pub m: usize,
    pub n: usize,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhaseSection {
    pub n: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    pub rate_grid: Vec<f64>,
    pub trials: usize,
    pub decoder: DecoderConfig,
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSection {
    pub theta_grid: Vec<f64>,
    pub rate_grid: Vec<f64>,
    pub n_ladder: Vec<usize>,
    pub decoders: Vec<DecoderConfig>,
    /// Sizes the energy clouds and phase cells.
    pub trials: usize,
    /// Sizes the dimension estimate separately (the entropy grid needs
    /// far more samples than the quadratic-cost energy clouds).
    pub mid_trials: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub chain_audit: Option<ChainAuditOptions>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub converse: Option<ConverseSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConverseSection {
    pub rate: f64,
    pub delta_grid: Vec<f64>,
    #[serde(default = "default_margin")]
    pub margin: f64,
    pub trials: usize,
}

fn default_margin() -> f64 {
    DEFAULT_MARGIN
}

/// Parse and validate a config document.
pub fn parse_config(text: &str) -> Result<Config> {
    let config: Config =
        serde_json::from_str(text).map_err(|e| parameter("config", e.to_string()))?;
    if config.version != CONFIG_VERSION {
        return Err(parameter(
            "version",
            format!(
                "schema version {} is not supported (this binary reads version {CONFIG_VERSION})",
                config.version
            ),
        ));
    }
    config.process.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;
    use midcs_core::proc_gen::ProcessKind;

    fn full_config() -> Config {
        Config {
            version: 1,
            seed: 42,
            process: ProcessSpec::new(ProcessKind::IidMixed { p: 0.3 }),
            generate: Some(GenerateSection { n: 4, trials: 100 }),
            dimension: Some(DimensionSection {
                flavor: DimFlavor::Mid,
                grid: DimGrid::default(),
                trials: 1000,
            }),
            energy: Some(EnergySection {
                n_ladder: vec![2, 4],
                theta: 0.5,
                trials: 200,
                cap_log2: DEFAULT_CAP_LOG2,
            }),
            audit_gauss: Some(AuditGaussSection {
                m_grid: vec![1, 2],
                eps_grid: vec![0.1, 0.5],
                trials: 500,
                opnorm: Some(OpnormSection { m: 2, n: 4, trials: 50 }),
            }),
            phase: Some(PhaseSection {
                n: 8,
                delta: DEFAULT_DELTA,
                rate_grid: vec![0.25, 0.5, 0.75, 1.0],
                trials: 20,
                decoder: DecoderConfig::Zero,
            }),
            report: Some(ReportSection {
                theta_grid: vec![0.0, 0.5],
                rate_grid: vec![0.25, 0.5, 0.75, 1.0],
                n_ladder: vec![2, 4],
                decoders: vec![DecoderConfig::LeastSquares, DecoderConfig::Zero],
                trials: 50,
                mid_trials: 500,
                chain_audit: Some(ChainAuditOptions::default()),
                converse: Some(ConverseSection {
                    rate: 0.1,
                    delta_grid: vec![0.05],
                    margin: DEFAULT_MARGIN,
                    trials: 30,
                }),
            }),
        }
    }

    #[test]
    fn round_trips_through_json_identically() {
        let config = full_config();
        let text = serde_json::to_string_pretty(&config).unwrap();
        let back = parse_config(&text).unwrap();
        assert_eq!(back, config);

        let minimal = r#"{"version":1,"seed":7,"process":{"kind":"iid_uniform"}}"#;
        let parsed = parse_config(minimal).unwrap();
        let again = parse_config(&serde_json::to_string(&parsed).unwrap()).unwrap();
        assert_eq!(again, parsed);
    }

    #[test]
    fn unknown_keys_and_bad_versions_are_rejected() {
        let unknown = r#"{"version":1,"seed":7,"process":{"kind":"iid_uniform"},"extra":1}"#;
        let err = parse_config(unknown).unwrap_err();
        assert!(err.to_string().contains("unknown field"), "{err}");

        let nested =
            r#"{"version":1,"seed":7,"process":{"kind":"iid_uniform"},"generate":{"n":2,"trials":5,"oops":0}}"#;
        assert!(parse_config(nested).unwrap_err().to_string().contains("oops"));

        let version = r#"{"version":2,"seed":7,"process":{"kind":"iid_uniform"}}"#;
        let err = parse_config(version).unwrap_err();
        assert!(matches!(err, Error::Parameter { ref name, .. } if name == "version"), "{err}");
    }

    #[test]
    fn process_parameters_are_validated_by_field_name() {
        let bad_p = r#"{"version":1,"seed":7,"process":{"kind":{"iid_mixed":{"p":1.5}}}}"#;
        let err = parse_config(bad_p).unwrap_err();
        assert!(err.to_string().contains("params.p"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn sections_fill_defaults_from_partial_documents() {
        let text = r#"{
            "version": 1,
            "seed": 7,
            "process": {"kind": "iid_uniform"},
            "dimension": {"flavor": "idimr", "grid": {"k_ladder": [4, 16]}, "trials": 100},
            "phase": {"n": 4, "rate_grid": [0.5, 1.0], "trials": 5, "decoder": "zero"}
        }"#;
        let config = parse_config(text).unwrap();
        let dim = config.dimension.unwrap();
        assert_eq!(dim.grid.k_ladder, vec![4, 16]);
        assert_eq!(dim.grid.n_ladder, DimGrid::default().n_ladder);
        assert_eq!(config.phase.unwrap().delta, DEFAULT_DELTA);
    }
}
