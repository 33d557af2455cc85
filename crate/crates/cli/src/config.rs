//! JSON scenario configuration: schema, defaults, and cross-field checks.

use std::path::PathBuf;

use serde::Deserialize;

use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CongestionCrowd,
    NonlinearDiffusion,
    BinaryCrowd,
    WassersteinAttraction,
    PairwiseAttraction,
    SumCoupling,
}

impl ScenarioKind {
    pub fn density_count(self) -> usize {
        match self {
            ScenarioKind::PairwiseAttraction | ScenarioKind::SumCoupling => 2,
            _ => 1,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ScenarioKind::CongestionCrowd => "congestion_crowd",
            ScenarioKind::NonlinearDiffusion => "nonlinear_diffusion",
            ScenarioKind::BinaryCrowd => "binary_crowd",
            ScenarioKind::WassersteinAttraction => "wasserstein_attraction",
            ScenarioKind::PairwiseAttraction => "pairwise_attraction",
            ScenarioKind::SumCoupling => "sum_coupling",
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DomainConfig {
    Grid {
        width: usize,
        height: usize,
        spacing: f64,
        #[serde(default)]
        mask: Option<PathBuf>,
    },
    Mesh {
        path: PathBuf,
    },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Gaussian {
        gamma: f64,
    },
    Heat {
        gamma: f64,
        #[serde(default = "default_substeps")]
        substeps: usize,
        #[serde(default = "default_solver_tolerance")]
        solver_tolerance: f64,
        #[serde(default)]
        anisotropy: Option<PathBuf>,
    },
}

impl KernelConfig {
    pub fn gamma(&self) -> f64 {
        match self {
            KernelConfig::Gaussian { gamma } | KernelConfig::Heat { gamma, .. } => *gamma,
        }
    }
}

fn default_substeps() -> usize {
    10
}

fn default_solver_tolerance() -> f64 {
    1e-10
}

fn default_eps() -> f64 {
    1e-8
}

fn default_max_inner() -> usize {
    10_000
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowConfig {
    pub tau: f64,
    pub steps: usize,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_max_inner")]
    pub max_inner: usize,
}

/// Congestion ceiling: either a direct value or a multiple of the initial
/// density's maximum.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(untagged)]
pub enum KappaSpec {
    Absolute(f64),
    Relative { relative: f64 },
}

impl KappaSpec {
    pub fn resolve(self, initial_max: f64) -> f64 {
        match self {
            KappaSpec::Absolute(v) => v,
            KappaSpec::Relative { relative } => relative * initial_max,
        }
    }

    fn raw(self) -> f64 {
        match self {
            KappaSpec::Absolute(v) => v,
            KappaSpec::Relative { relative } => relative,
        }
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FunctionalConfig {
    pub kappa: Option<KappaSpec>,
    /// Generalized entropy exponent, m >= 1.
    pub m: Option<f64>,
    /// Entropy weight, default 1.
    pub b: Option<f64>,
    /// Pairwise interaction exponent.
    pub alpha: Option<f64>,
    /// KL weight of attraction couplings.
    pub attraction_weight: Option<f64>,
    pub target: Option<FieldSpec>,
    pub potential: Option<FieldSpec>,
    pub potential2: Option<FieldSpec>,
    pub normalized_exponents: Option<bool>,
}

/// Scalar field over the domain: from a file, a formula, or a seeded draw.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FieldSpec {
    Constant {
        value: f64,
    },
    Raw {
        path: PathBuf,
    },
    Pgm {
        path: PathBuf,
    },
    Linear {
        #[serde(default)]
        gx: f64,
        #[serde(default)]
        gy: f64,
        #[serde(default)]
        offset: f64,
    },
    Gaussian {
        cx: f64,
        cy: f64,
        width: f64,
        #[serde(default = "one")]
        amplitude: f64,
        #[serde(default)]
        floor: f64,
    },
    Rect {
        x0: f64,
        y0: f64,
        x1: f64,
        y1: f64,
        #[serde(default = "one")]
        inside: f64,
        #[serde(default)]
        outside: f64,
    },
    UniformRandom,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioKind,
    pub domain: DomainConfig,
    pub kernel: KernelConfig,
    pub flow: FlowConfig,
    #[serde(default)]
    pub functional: FunctionalConfig,
    pub initial: FieldSpec,
    #[serde(default)]
    pub initial2: Option<FieldSpec>,
    #[serde(default)]
    pub seed: u64,
}

/// Parse and validate a config document. Schema errors carry the JSON path
/// of the offending field.
pub fn parse_config(text: &str) -> Result<ScenarioConfig, CliError> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: ScenarioConfig = serde_path_to_error::deserialize(de)
        .map_err(|e| CliError::Config(format!("at {}: {}", e.path(), e.inner())))?;
    validate(&config)?;
    Ok(config)
}

fn require_positive(name: &str, value: f64) -> Result<(), CliError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(CliError::Config(format!(
            "{name} must be positive and finite, got {value}"
        )))
    }
}

fn validate(config: &ScenarioConfig) -> Result<(), CliError> {
    match &config.domain {
        DomainConfig::Grid {
            width,
            height,
            spacing,
            ..
        } => {
            if *width == 0 || *height == 0 {
                return Err(CliError::Config(format!(
                    "domain.width and domain.height must be positive, got {width}x{height}"
                )));
            }
            require_positive("domain.spacing", *spacing)?;
        }
        DomainConfig::Mesh { .. } => {}
    }

    require_positive("kernel.gamma", config.kernel.gamma())?;
    match &config.kernel {
        KernelConfig::Gaussian { .. } => {
            match &config.domain {
                DomainConfig::Mesh { .. } => {
                    return Err(CliError::Config(
                        "kernel.type gaussian requires a grid domain; meshes need the heat kernel"
                            .into(),
                    ))
                }
                DomainConfig::Grid { mask: Some(_), .. } => {
                    return Err(CliError::Config(
                        "kernel.type gaussian cannot be combined with domain.mask; \
                         the separable form needs the full rectangle (use the heat kernel)"
                            .into(),
                    ))
                }
                DomainConfig::Grid { mask: None, .. } => {}
            }
        }
        KernelConfig::Heat {
            substeps,
            solver_tolerance,
            anisotropy,
            ..
        } => {
            if *substeps == 0 {
                return Err(CliError::Config("kernel.substeps must be at least 1".into()));
            }
            if !(*solver_tolerance > 0.0 && *solver_tolerance <= 1e-6) {
                return Err(CliError::Config(format!(
                    "kernel.solver_tolerance must lie in (0, 1e-6], got {solver_tolerance}"
                )));
            }
            if anisotropy.is_some() && matches!(config.domain, DomainConfig::Mesh { .. }) {
                return Err(CliError::Config(
                    "kernel.anisotropy applies to grid domains only".into(),
                ));
            }
        }
    }

    require_positive("flow.tau", config.flow.tau)?;
    require_positive("flow.eps", config.flow.eps)?;
    if config.flow.max_inner < 2 {
        return Err(CliError::Config(format!(
            "flow.max_inner must be at least 2, got {}",
            config.flow.max_inner
        )));
    }

    let f = &config.functional;
    if let Some(kappa) = f.kappa {
        require_positive("functional.kappa", kappa.raw())?;
    }
    if let Some(m) = f.m {
        if !(m.is_finite() && m >= 1.0) {
            return Err(CliError::Config(format!(
                "functional.m must be at least 1, got {m}"
            )));
        }
    }
    if let Some(b) = f.b {
        require_positive("functional.b", b)?;
    }
    if let Some(alpha) = f.alpha {
        require_positive("functional.alpha", alpha)?;
    }
    if let Some(w) = f.attraction_weight {
        require_positive("functional.attraction_weight", w)?;
    }

    let kind = config.scenario;
    let name = kind.name();
    let need = |field: &str, present: bool| -> Result<(), CliError> {
        if present {
            Ok(())
        } else {
            Err(CliError::Config(format!(
                "scenario {name} requires functional.{field}"
            )))
        }
    };
    let forbid = |field: &str, present: bool| -> Result<(), CliError> {
        if present {
            Err(CliError::Config(format!(
                "functional.{field} is not used by scenario {name}"
            )))
        } else {
            Ok(())
        }
    };

    match kind {
        ScenarioKind::CongestionCrowd | ScenarioKind::BinaryCrowd => {
            need("kappa", f.kappa.is_some())?;
            forbid("m", f.m.is_some())?;
            forbid("b", f.b.is_some())?;
            forbid("alpha", f.alpha.is_some())?;
            forbid("attraction_weight", f.attraction_weight.is_some())?;
            forbid("target", f.target.is_some())?;
            forbid("potential2", f.potential2.is_some())?;
            forbid("normalized_exponents", f.normalized_exponents.is_some())?;
        }
        ScenarioKind::NonlinearDiffusion => {
            need("m", f.m.is_some())?;
            forbid("kappa", f.kappa.is_some())?;
            forbid("alpha", f.alpha.is_some())?;
            forbid("attraction_weight", f.attraction_weight.is_some())?;
            forbid("target", f.target.is_some())?;
            forbid("potential2", f.potential2.is_some())?;
            forbid("normalized_exponents", f.normalized_exponents.is_some())?;
        }
        ScenarioKind::WassersteinAttraction => {
            need("target", f.target.is_some())?;
            // kappa or m optionally add a functional on the evolving density.
            if f.kappa.is_some() && f.m.is_some() {
                return Err(CliError::Config(format!(
                    "scenario {name} accepts functional.kappa or functional.m, not both"
                )));
            }
            forbid("alpha", f.alpha.is_some())?;
            forbid("potential2", f.potential2.is_some())?;
            forbid("normalized_exponents", f.normalized_exponents.is_some())?;
        }
        ScenarioKind::PairwiseAttraction => {
            forbid("m", f.m.is_some())?;
            forbid("b", f.b.is_some())?;
            forbid("target", f.target.is_some())?;
        }
        ScenarioKind::SumCoupling => {
            if f.kappa.is_none() && f.m.is_none() {
                return Err(CliError::Config(format!(
                    "scenario {name} requires functional.kappa or functional.m for the sum"
                )));
            }
            if f.kappa.is_some() && f.m.is_some() {
                return Err(CliError::Config(format!(
                    "scenario {name} accepts functional.kappa or functional.m, not both"
                )));
            }
            forbid("alpha", f.alpha.is_some())?;
            forbid("attraction_weight", f.attraction_weight.is_some())?;
            forbid("target", f.target.is_some())?;
            forbid("normalized_exponents", f.normalized_exponents.is_some())?;
        }
    }

    let two_density = kind.density_count() == 2;
    if two_density && config.initial2.is_none() {
        return Err(CliError::Config(format!(
            "scenario {name} evolves two densities and requires initial2"
        )));
    }
    if !two_density && config.initial2.is_some() {
        return Err(CliError::Config(format!(
            "initial2 is not used by scenario {name}"
        )));
    }

    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal_congestion() -> String {
        r#"{
            "scenario": "congestion_crowd",
            "domain": { "kind": "grid", "width": 50, "height": 50, "spacing": 0.02 },
            "kernel": { "type": "heat", "gamma": 0.0008 },
            "flow": { "tau": 0.0008, "steps": 3 },
            "functional": { "kappa": { "relative": 1.0 } },
            "initial": { "kind": "gaussian", "cx": 0.3, "cy": 0.3, "width": 0.1 }
        }"#
        .to_string()
    }

    #[test]
    fn minimal_config_parses_with_defaults() {
        let config = parse_config(&minimal_congestion()).unwrap();
        assert_eq!(config.flow.eps, 1e-8);
        assert_eq!(config.flow.max_inner, 10_000);
        match config.kernel {
            KernelConfig::Heat {
                substeps,
                solver_tolerance,
                ..
            } => {
                assert_eq!(substeps, 10);
                assert_eq!(solver_tolerance, 1e-10);
            }
            _ => panic!("expected heat kernel"),
        }
        assert_eq!(config.seed, 0);
    }

    #[test]
    fn schema_errors_name_the_json_path() {
        let bad = minimal_congestion().replace("\"tau\": 0.0008", "\"tau\": \"fast\"");
        let err = parse_config(&bad).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("flow.tau"), "got: {message}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = minimal_congestion().replace("\"steps\": 3", "\"steps\": 3, \"stepz\": 4");
        assert!(parse_config(&bad).is_err());
    }

    #[test]
    fn gaussian_kernel_with_mask_is_a_named_cross_field_error() {
        let bad = minimal_congestion()
            .replace(
                r#""kernel": { "type": "heat", "gamma": 0.0008 }"#,
                r#""kernel": { "type": "gaussian", "gamma": 0.0008 }"#,
            )
            .replace(
                r#""spacing": 0.02 }"#,
                r#""spacing": 0.02, "mask": "walls.pgm" }"#,
            );
        let err = parse_config(&bad).unwrap_err();
        let message = err.to_string();
        assert!(message.contains("gaussian") && message.contains("mask"), "got: {message}");
    }

    #[test]
    fn kappa_sweep_values_parse_in_both_forms() {
        for factor in [1.0, 2.0, 4.0] {
            let text = minimal_congestion().replace(
                r#"{ "relative": 1.0 }"#,
                &format!("{{ \"relative\": {factor} }}"),
            );
            let config = parse_config(&text).unwrap();
            match config.functional.kappa.unwrap() {
                KappaSpec::Relative { relative } => assert_eq!(relative, factor),
                other => panic!("expected relative kappa, got {other:?}"),
            }
        }
        let text = minimal_congestion().replace(r#"{ "relative": 1.0 }"#, "0.25");
        match parse_config(&text).unwrap().functional.kappa.unwrap() {
            KappaSpec::Absolute(v) => assert_eq!(v, 0.25),
            other => panic!("expected absolute kappa, got {other:?}"),
        }
    }

    #[test]
    fn scenario_field_requirements_are_enforced() {
        // Congestion without kappa.
        let missing = minimal_congestion().replace(
            r#""functional": { "kappa": { "relative": 1.0 } },"#,
            r#""functional": {},"#,
        );
        assert!(parse_config(&missing).is_err());

        // Diffusion rejects kappa.
        let wrong_field = minimal_congestion().replace("congestion_crowd", "nonlinear_diffusion");
        let err = parse_config(&wrong_field).unwrap_err().to_string();
        assert!(err.contains("functional.m") || err.contains("kappa"), "got: {err}");

        // Two-density scenario without initial2.
        let sum = minimal_congestion()
            .replace("congestion_crowd", "sum_coupling")
            .replace(r#""kappa": { "relative": 1.0 }"#, r#""m": 1.0"#);
        let err = parse_config(&sum).unwrap_err().to_string();
        assert!(err.contains("initial2"), "got: {err}");
    }

    #[test]
    fn negative_parameters_are_rejected() {
        let bad = minimal_congestion().replace("\"gamma\": 0.0008", "\"gamma\": -1.0");
        assert!(parse_config(&bad).is_err());
        let bad = minimal_congestion().replace("\"tau\": 0.0008", "\"tau\": 0.0");
        assert!(parse_config(&bad).is_err());
    }
}
