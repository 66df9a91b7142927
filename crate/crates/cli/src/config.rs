//! Experiment configuration: a TOML file merged with command-line overrides.

use std::path::Path;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use pathflow_core::geometry::ManifoldSpec;
use pathflow_core::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Simulate,
    Flow,
    Qi,
    Ibp,
    Intertwine,
    Skorohod,
    Ito,
    L1bound,
    Convergence,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Self::Simulate => "simulate",
            Self::Flow => "flow",
            Self::Qi => "qi",
            Self::Ibp => "ibp",
            Self::Intertwine => "intertwine",
            Self::Skorohod => "skorohod",
            Self::Ito => "ito",
            Self::L1bound => "l1bound",
            Self::Convergence => "convergence",
        }
    }
}

/// Tolerance constants; each can be overridden by name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    /// Defect allowed in `rᵀr = I` for corrected frames.
    pub orthonormality: f64,
    /// Defect allowed in `oᵀo = I` along the pullback flow.
    pub rotation: f64,
    /// `C` in the quasi-invariance slack `C·Δs^{1/2}`.
    pub qi_slack: f64,
    /// `C` in the Picard/pullback gap bound `C·(Δs^{1/2} + δt)`.
    pub cross_method: f64,
    pub ibp_slack: f64,
    /// `C` in the intertwining bound `max(10⁻³, C·(ε + Δs))`.
    pub intertwining_slack: f64,
    pub fd_eps: f64,
    pub adjoint_slack: f64,
    /// `C` in the Itô-formula bound `C·Δs^{1/2}`.
    pub ito_slack: f64,
    pub l1_stability: f64,
    /// Minimum fitted order of the develop∘roll error.
    pub round_trip_slope: f64,
    /// Largest deviation from 1 of the trace-vs-limits order.
    pub trace_limits_order: f64,
    /// Error below which a solver is taken as exact.
    pub exact: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            orthonormality: 1e-10,
            rotation: 1e-6,
            qi_slack: 0.1,
            cross_method: 0.25,
            ibp_slack: 0.05,
            intertwining_slack: 4.0,
            fd_eps: pathflow_core::malliavin::FD_EPS,
            adjoint_slack: 0.05,
            ito_slack: 4.0,
            l1_stability: pathflow_core::skorohod::L1_STABILITY,
            round_trip_slope: 0.4,
            trace_limits_order: 0.25,
            exact: 1e-8,
        }
    }
}

impl Tolerances {
    /// Applies `name=value`.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (name, value) = assignment.split_once('=').ok_or_else(|| {
            Error::Config(format!(
                "tolerance override '{assignment}' is not name=value"
            ))
        })?;
        let value: f64 = value
            .trim()
            .parse()
            .map_err(|_| Error::Config(format!("tolerance '{name}' needs a number")))?;
        let slot = match name.trim() {
            "orthonormality" => &mut self.orthonormality,
            "rotation" => &mut self.rotation,
            "qi_slack" => &mut self.qi_slack,
            "cross_method" => &mut self.cross_method,
            "ibp_slack" => &mut self.ibp_slack,
            "intertwining_slack" => &mut self.intertwining_slack,
            "fd_eps" => &mut self.fd_eps,
            "adjoint_slack" => &mut self.adjoint_slack,
            "ito_slack" => &mut self.ito_slack,
            "l1_stability" => &mut self.l1_stability,
            "round_trip_slope" => &mut self.round_trip_slope,
            "trace_limits_order" => &mut self.trace_limits_order,
            "exact" => &mut self.exact,
            other => return Err(Error::Config(format!("unknown tolerance '{other}'"))),
        };
        *slot = value;
        Ok(())
    }

    fn validate(&self) -> Result<()> {
        let all = [
            ("orthonormality", self.orthonormality),
            ("rotation", self.rotation),
            ("qi_slack", self.qi_slack),
            ("cross_method", self.cross_method),
            ("ibp_slack", self.ibp_slack),
            ("intertwining_slack", self.intertwining_slack),
            ("fd_eps", self.fd_eps),
            ("adjoint_slack", self.adjoint_slack),
            ("ito_slack", self.ito_slack),
            ("l1_stability", self.l1_stability),
            ("round_trip_slope", self.round_trip_slope),
            ("trace_limits_order", self.trace_limits_order),
            ("exact", self.exact),
        ];
        match all
            .iter()
            .find(|(_, v)| !(v.is_finite() && *v >= f64::EPSILON))
        {
            Some((name, v)) => Err(Error::Config(format!(
                "tolerance '{name}' = {v} must be finite and at least machine epsilon"
            ))),
            None => Ok(()),
        }
    }
}

/// Everything an experiment run needs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    /// `flat` or `sphere`, optionally with a trailing dimension.
    pub manifold: String,
    pub dim: usize,
    pub steps: usize,
    pub paths: usize,
    pub seed: u64,
    /// Flow parameter.
    pub t: f64,
    pub shift: String,
    /// Energy bound on the Cameron–Martin shift.
    pub bound: f64,
    pub formula: Option<String>,
    pub process: Option<String>,
    /// Convergence study: `roundtrip`, `tracelimits` or `flatflow`.
    pub study: String,
    pub grids: Vec<usize>,
    pub tolerances: Tolerances,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            experiment: None,
            manifold: "sphere".into(),
            dim: 2,
            steps: 256,
            paths: 100_000,
            seed: 1,
            t: 0.5,
            shift: "sinusoid".into(),
            bound: 1.0,
            formula: None,
            process: None,
            study: "roundtrip".into(),
            grids: vec![64, 128, 256, 512],
            tolerances: Tolerances::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn manifold_spec(&self) -> Result<ManifoldSpec> {
        ManifoldSpec::parse(&self.manifold, self.dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.paths == 0 || self.dim == 0 {
            return Err(Error::Config(
                "steps, paths and dim must be positive".into(),
            ));
        }
        if self.steps % 4 != 0 {
            return Err(Error::Config("steps must be divisible by 4".into()));
        }
        if !(self.t.is_finite() && self.bound > 0.0) {
            return Err(Error::Config("t must be finite and bound positive".into()));
        }
        if self.grids.iter().any(|&n| n == 0 || n % 4 != 0) {
            return Err(Error::Config(
                "grid sizes must be positive multiples of 4".into(),
            ));
        }
        self.manifold_spec()?;
        self.tolerances.validate()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_with_partial_tolerances() {
        let cfg = ExperimentConfig::from_toml(
            "experiment = \"qi\"\nmanifold = \"sphere3\"\npaths = 10\n[tolerances]\nqi_slack = 0.5\n",
        )
        .unwrap();
        assert_eq!(cfg.experiment, Some(Experiment::Qi));
        assert_eq!(cfg.paths, 10);
        assert_eq!(cfg.tolerances.qi_slack, 0.5);
        assert_eq!(cfg.tolerances.ibp_slack, Tolerances::default().ibp_slack);
        assert_eq!(cfg.manifold_spec().unwrap().dim, 3);
        let again = ExperimentConfig::from_toml(&toml::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(again, cfg);
    }

    #[test]
    fn rejects_bad_values() {
        assert!(ExperimentConfig::from_toml("nope = 1").is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.steps = 30;
        assert!(cfg.validate().is_err());
        let mut cfg = ExperimentConfig::default();
        cfg.tolerances.set("qi_slack=1e-20").unwrap();
        assert!(cfg.validate().is_err());
        assert!(cfg.tolerances.set("missing=1").is_err());
        assert!(cfg.tolerances.set("qi_slack").is_err());
    }
}
