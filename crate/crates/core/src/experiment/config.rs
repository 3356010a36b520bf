use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrate::Integrator;
use crate::mc::{EnsembleConfig, Interpolation, Pairing};
use crate::state::{step_count, GaussianState, Method};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Prototype,
    Nonlinear,
    Bifurcation,
    Convergence,
}

/// Methods selectable from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Analytic,
    NaiveEuler,
    NaiveFlow,
    CorrectedEuler,
    CorrectedFlow,
    Mm,
    PullFull,
    PullNone,
    Mc,
}

impl MethodName {
    pub fn method(self) -> Method {
        match self {
            MethodName::Analytic => Method::Analytic,
            MethodName::NaiveEuler => Method::NaiveEuler,
            MethodName::NaiveFlow => Method::NaiveFlow,
            MethodName::CorrectedEuler => Method::CorrectedEuler,
            MethodName::CorrectedFlow => Method::CorrectedFlow,
            MethodName::Mm => Method::Mm,
            MethodName::PullFull => Method::PullFull,
            MethodName::PullNone => Method::PullNone,
            MethodName::Mc => Method::Mc,
        }
    }

    /// Methods that only make sense for the closed-form linear prototype.
    pub fn prototype_only(self) -> bool {
        matches!(
            self,
            MethodName::Analytic
                | MethodName::NaiveEuler
                | MethodName::NaiveFlow
                | MethodName::CorrectedEuler
                | MethodName::CorrectedFlow
        )
    }
}

/// `x' = -a x + B`, `B ~ N(0, beta)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinearParams {
    pub a: f64,
    pub beta: f64,
}

impl Default for LinearParams {
    fn default() -> Self {
        Self { a: 1.0, beta: 1.0 }
    }
}

/// Training data `y = x cos(x) + eps` on evenly spaced inputs, and the GP
/// hyperparameters used to condition on it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub n_points: usize,
    pub span: (f64, f64),
    /// Observation noise variance, used both for the GP likelihood and for
    /// perturbing the targets when `add_noise` is set.
    pub noise_var: f64,
    pub add_noise: bool,
    /// Seed for the target perturbation, separate from the run seed so the
    /// conditioned GP does not change with `--seed`.
    pub noise_seed: u64,
    pub lengthscale: f64,
    pub amplitude: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            n_points: 9,
            span: (-4.0, 4.0),
            noise_var: 1e-4,
            add_noise: true,
            noise_seed: 0,
            lengthscale: 1.0,
            amplitude: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDist {
    pub mean: f64,
    pub var: f64,
}

impl InitialDist {
    pub fn state(&self) -> Result<GaussianState<f64>> {
        GaussianState::new(self.mean, self.var).map_err(|e| Error::config("initial", e.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McSettings {
    pub n_fields: usize,
    pub n_initial: usize,
    pub pairing: Pairing,
    pub grid_span: (f64, f64),
    pub grid_points: usize,
    pub interpolation: Interpolation,
    pub integrator: Integrator,
    /// Sample count for the linear prototype sampler.
    pub prototype_samples: usize,
}

impl McSettings {
    pub const PAPER_FIELDS: usize = 5000;
    pub const PAPER_INITIAL: usize = 150;

    pub fn ensemble(&self, h: f64, horizon: f64, seed: u64) -> EnsembleConfig<f64> {
        EnsembleConfig {
            n_fields: self.n_fields,
            n_initial: self.n_initial,
            pairing: self.pairing,
            grid_span: self.grid_span,
            grid_points: self.grid_points,
            interpolation: self.interpolation,
            integrator: self.integrator,
            h,
            horizon,
            seed,
        }
    }
}

impl Default for McSettings {
    fn default() -> Self {
        let desk = EnsembleConfig::<f64>::desk(0.1, 1.0, 0);
        Self {
            n_fields: desk.n_fields,
            n_initial: desk.n_initial,
            pairing: desk.pairing,
            grid_span: desk.grid_span,
            grid_points: desk.grid_points,
            interpolation: desk.interpolation,
            integrator: desk.integrator,
            prototype_samples: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistogramSettings {
    pub bins: usize,
    /// Defaults to the MC grid span.
    pub range: Option<(f64, f64)>,
}

impl Default for HistogramSettings {
    fn default() -> Self {
        Self { bins: 40, range: None }
    }
}

/// One experiment, as read from TOML or JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub model: LinearParams,
    #[serde(default)]
    pub dataset: DatasetConfig,
    /// Defaults per experiment, see [`ExperimentConfig::initial_state`].
    #[serde(default)]
    pub initial: Option<InitialDist>,
    pub step_sizes: Vec<f64>,
    #[serde(default)]
    pub horizon: Option<f64>,
    pub methods: Vec<MethodName>,
    #[serde(default)]
    pub mc: McSettings,
    #[serde(default)]
    pub histogram: HistogramSettings,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output")]
    pub output: PathBuf,
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

impl ExperimentConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::config("<toml>", e.to_string()))
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::config("<json>", e.to_string()))
    }

    /// Reads `.json` as JSON and anything else as TOML.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::invalid(format!("reading {}: {e}", path.display())))?;
        let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
        if is_json {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or(match self.experiment {
            ExperimentKind::Prototype => 10.0,
            _ => 8.0,
        })
    }

    pub fn initial_state(&self) -> Result<GaussianState<f64>> {
        match self.initial {
            Some(d) => d.state(),
            None => Ok(match self.experiment {
                ExperimentKind::Prototype => GaussianState { mean: 1.0, var: 0.25 },
                ExperimentKind::Bifurcation => GaussianState { mean: 0.05, var: 0.01 },
                ExperimentKind::Nonlinear | ExperimentKind::Convergence => GaussianState { mean: 0.6, var: 0.005 },
            }),
        }
    }

    pub fn has(&self, m: MethodName) -> bool {
        self.methods.contains(&m)
    }

    /// Switches MC to the 5000 fields x 150 initial values scale.
    pub fn use_paper_scale(&mut self) {
        self.mc.n_fields = McSettings::PAPER_FIELDS;
        self.mc.n_initial = McSettings::PAPER_INITIAL;
    }

    pub fn validate(&self) -> Result<()> {
        if self.methods.is_empty() {
            return Err(Error::config("methods", "at least one method is required"));
        }
        for (i, m) in self.methods.iter().enumerate() {
            if self.methods[..i].contains(m) {
                return Err(Error::config("methods", format!("{m:?} listed twice")));
            }
        }
        if self.step_sizes.is_empty() {
            return Err(Error::config("step_sizes", "at least one step size is required"));
        }
        let horizon = self.horizon();
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::config("horizon", format!("must be positive, got {horizon}")));
        }
        for &h in &self.step_sizes {
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::config("step_sizes", format!("must be positive, got {h}")));
            }
            step_count(horizon, h).map_err(|e| Error::config("step_sizes", e.to_string()))?;
        }
        self.initial_state()?;

        match self.experiment {
            ExperimentKind::Prototype => self.validate_prototype()?,
            kind => {
                if let Some(m) = self.methods.iter().find(|m| m.prototype_only()) {
                    return Err(Error::config(
                        "methods",
                        format!("{m:?} only applies to the prototype experiment"),
                    ));
                }
                self.validate_dataset()?;
                if kind == ExperimentKind::Bifurcation && !self.has(MethodName::Mc) {
                    return Err(Error::config("methods", "bifurcation needs mc for the terminal histogram"));
                }
                if kind == ExperimentKind::Convergence {
                    self.validate_convergence()?;
                }
            }
        }

        if self.has(MethodName::Mc) && self.experiment != ExperimentKind::Prototype {
            self.mc
                .ensemble(self.step_sizes[0], horizon, self.seed)
                .validate()
                .map_err(|e| match e {
                    Error::InvalidConfig { field, message } => Error::config(format!("mc.{field}"), message),
                    other => other,
                })?;
        }
        if self.has(MethodName::Mc) && self.experiment == ExperimentKind::Prototype && self.mc.prototype_samples < 2 {
            return Err(Error::config("mc.prototype_samples", "must be >= 2"));
        }
        if self.histogram.bins == 0 {
            return Err(Error::config("histogram.bins", "must be >= 1"));
        }
        if let Some((lo, hi)) = self.histogram.range {
            if !(lo < hi) {
                return Err(Error::config("histogram.range", "lo must be < hi"));
            }
        }
        Ok(())
    }

    fn validate_prototype(&self) -> Result<()> {
        let LinearParams { a, beta } = self.model;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::config("model.a", format!("must be positive, got {a}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(Error::config("model.beta", format!("must be >= 0, got {beta}")));
        }
        for &h in &self.step_sizes {
            let ah = a * h;
            if ah >= 2.0 {
                return Err(Error::config(
                    "step_sizes",
                    format!("a*h = {ah} for h = {h}; the explicit Euler stability limit requires a*h < 2"),
                ));
            }
        }
        Ok(())
    }

    fn validate_dataset(&self) -> Result<()> {
        let d = &self.dataset;
        if d.n_points == 0 {
            return Err(Error::config("dataset.n_points", "must be >= 1"));
        }
        if !(d.span.0 < d.span.1) {
            return Err(Error::config("dataset.span", "lo must be < hi"));
        }
        if !(d.noise_var >= 0.0) {
            return Err(Error::config("dataset.noise_var", "must be >= 0"));
        }
        if !(d.lengthscale > 0.0) {
            return Err(Error::config("dataset.lengthscale", "must be positive"));
        }
        if !(d.amplitude > 0.0) {
            return Err(Error::config("dataset.amplitude", "must be positive"));
        }
        Ok(())
    }

    fn validate_convergence(&self) -> Result<()> {
        if self.step_sizes.len() < 3 {
            return Err(Error::config("step_sizes", "convergence needs at least 3 step sizes"));
        }
        for m in [MethodName::PullFull, MethodName::Mc] {
            if !self.has(m) {
                return Err(Error::config("methods", format!("convergence needs {m:?}")));
            }
        }
        let h_ref = self.reference_step();
        for &h in &self.step_sizes {
            let r = h / h_ref;
            if (r - r.round()).abs() > 1e-9 * r {
                return Err(Error::config(
                    "step_sizes",
                    format!("h = {h} is not an integer multiple of the reference step {h_ref}"),
                ));
            }
        }
        Ok(())
    }

    /// `min(h) / 10`, the step of the mean reference solution.
    pub fn reference_step(&self) -> f64 {
        self.step_sizes.iter().cloned().fold(f64::INFINITY, f64::min) / 10.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prototype() -> ExperimentConfig {
        ExperimentConfig::from_toml_str(
            r#"
            experiment = "prototype"
            step_sizes = [0.5, 0.1]
            methods = ["analytic", "naive_euler"]
            [model]
            a = 1.0
            beta = 1.0
            "#,
        )
        .unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let cfg = prototype();
        assert_eq!(cfg.horizon(), 10.0);
        assert_eq!(cfg.output, PathBuf::from("out"));
        assert_eq!(cfg.mc.n_fields, 500);
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn stability_limit_is_enforced() {
        let mut cfg = prototype();
        cfg.step_sizes = vec![0.1, 2.0];
        match cfg.validate() {
            Err(Error::InvalidConfig { field, message }) => {
                assert_eq!(field, "step_sizes");
                assert!(message.contains("stability limit"));
            }
            other => panic!("expected config error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = ExperimentConfig::from_toml_str(
            r#"
            experiment = "prototype"
            step_sizes = [0.5]
            methods = ["analytic"]
            stepsize = 3
            "#,
        );
        assert!(err.is_err());
    }

    #[test]
    fn method_scope() {
        let mut cfg = prototype();
        cfg.experiment = ExperimentKind::Nonlinear;
        assert!(cfg.validate().is_err());
        cfg.methods = vec![MethodName::Mm, MethodName::PullFull];
        assert!(cfg.validate().is_ok());
        cfg.methods.clear();
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn convergence_requirements() {
        let mut cfg = prototype();
        cfg.experiment = ExperimentKind::Convergence;
        cfg.methods = vec![MethodName::PullFull, MethodName::Mc];
        cfg.step_sizes = vec![0.2, 0.1];
        assert!(cfg.validate().is_err());
        cfg.step_sizes = vec![0.2, 0.1, 0.05, 0.025];
        assert!(cfg.validate().is_ok());
        assert!((cfg.reference_step() - 0.0025).abs() < 1e-15);
        cfg.step_sizes = vec![0.2, 0.1, 0.03];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        let cfg = prototype();
        let s = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json_str(&s).unwrap(), cfg);
    }
}
