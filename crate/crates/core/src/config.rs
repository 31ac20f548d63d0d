//! Run configuration, read from TOML with one section per library module.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::ansatz::{PathSharing, ShiftKind};
use crate::error::{Error, Result};
use crate::models::{AdeParams, WildfireParams};
use crate::offline::{FitOptions, PathOptions};
use crate::timestep::{IntegratorOptions, NewtonControls};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    Ade,
    Wildfire,
    CustomLti,
}

/// Linear system read from a directory of `E.csv`, `J.csv`, `R.csv`, `Q.csv`, `K.csv`, `B.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CustomLtiConfig {
    pub dir: PathBuf,
    /// Initial state as an `n × 1` matrix CSV; zero when absent.
    #[serde(default)]
    pub x0: Option<PathBuf>,
    /// Constant input vector; zero when empty.
    #[serde(default)]
    pub input: Vec<f64>,
    pub t_end: f64,
    /// Spatial grid origin and spacing, used by shift-based offline fits.
    #[serde(default)]
    pub grid_x0: f64,
    #[serde(default)]
    pub grid_h: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelsConfig {
    pub kind: ModelKind,
    #[serde(default)]
    pub ade: AdeParams,
    #[serde(default)]
    pub wildfire: WildfireParams,
    #[serde(default)]
    pub custom: Option<CustomLtiConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimestepConfig {
    /// Step size; model default when absent.
    pub step: Option<f64>,
    /// Step sizes of the `sweep` command.
    pub sweep_steps: Vec<f64>,
    pub blowup_threshold: f64,
    /// Reuse Jacobian factorizations; model default when absent.
    pub reuse_jacobian: Option<bool>,
    pub newton: NewtonControls,
}

impl Default for TimestepConfig {
    fn default() -> Self {
        TimestepConfig {
            step: None,
            sweep_steps: vec![1e-3, 5e-4, 2e-4],
            blowup_threshold: IntegratorOptions::default().blowup_threshold,
            reuse_jacobian: None,
            newton: NewtonControls::default(),
        }
    }
}

/// Spatial weight of reported reconstruction and online errors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitWeight {
    None,
    /// `E`
    #[default]
    Mass,
    /// `EᵀQ`
    Energy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OfflineConfig {
    pub modes: usize,
    pub waves: usize,
    pub sharing: PathSharing,
    /// Model default (periodic for the fire model, extended otherwise) when absent.
    pub shift: Option<ShiftKind>,
    pub snapshot_stride: usize,
    /// Extended-domain margin relative to the path range or domain length.
    pub margin: f64,
    pub pod_rank: usize,
    pub weight: FitWeight,
    pub paths: PathOptions,
    pub fit: FitOptions,
}

impl Default for OfflineConfig {
    fn default() -> Self {
        OfflineConfig {
            modes: 3,
            waves: 1,
            sharing: PathSharing::Shared,
            shift: None,
            snapshot_stride: 10,
            margin: 0.1,
            pod_rank: 10,
            weight: FitWeight::Mass,
            paths: PathOptions::default(),
            fit: FitOptions::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Selector {
    Lti,
    Ltv,
    Factorizable,
    Separable,
    GalerkinBaseline,
    PodGalerkin,
}

impl Selector {
    pub fn name(self) -> &'static str {
        match self {
            Selector::Lti => "lti",
            Selector::Ltv => "ltv",
            Selector::Factorizable => "factorizable",
            Selector::Separable => "separable",
            Selector::GalerkinBaseline => "galerkin-baseline",
            Selector::PodGalerkin => "pod-galerkin",
        }
    }

    /// Whether the ROM is built from the POD basis rather than the shifted-mode fit.
    pub fn uses_pod(self) -> bool {
        matches!(self, Selector::Lti | Selector::PodGalerkin | Selector::Factorizable)
    }

    pub fn needs_linear_model(self) -> bool {
        matches!(self, Selector::Lti | Selector::Ltv | Selector::PodGalerkin)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReductionConfig {
    pub selector: Selector,
    /// Further selectors built and integrated alongside the main one.
    pub compare: Vec<Selector>,
}

impl Default for ReductionConfig {
    fn default() -> Self {
        ReductionConfig {
            selector: Selector::Separable,
            compare: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsConfig {
    pub power_balance: bool,
    pub error: bool,
    pub certificate: bool,
    /// A-posteriori error bound; linear time-invariant models with `lti` ROMs only.
    pub bound: bool,
    /// Random probes for the stability certificate and structure checks.
    pub probes: usize,
}

impl Default for DiagnosticsConfig {
    fn default() -> Self {
        DiagnosticsConfig {
            power_balance: true,
            error: true,
            certificate: true,
            bound: false,
            probes: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub out: PathBuf,
    pub threads: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            out: PathBuf::from("out"),
            threads: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub models: ModelsConfig,
    #[serde(default)]
    pub timestep: TimestepConfig,
    #[serde(default)]
    pub offline: OfflineConfig,
    #[serde(default)]
    pub reduction: ReductionConfig,
    #[serde(default)]
    pub diagnostics: DiagnosticsConfig,
    #[serde(default)]
    pub cli: CliConfig,
    /// Directory relative paths resolve against; set by [`RunConfig::load`].
    #[serde(skip)]
    pub base_dir: PathBuf,
    /// Raw text the configuration was parsed from.
    #[serde(skip)]
    pub source: String,
}

fn config_err(e: Error) -> Error {
    match e {
        Error::Config(_) | Error::MissingInputs(_) => e,
        other => Error::Config(other.to_string()),
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.source = text.to_string();
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingInputs(vec![path.display().to_string()]));
        }
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.display().to_string(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// SHA-256 over the configuration text and the effective seed and step.
    pub fn hash(&self) -> String {
        let step = self.step().map(|s| format!("{s:e}")).unwrap_or_default();
        crate::io::sha256_hex(format!("{}\nseed={}\nstep={step}\n", self.source, self.seed).as_bytes())
    }

    pub fn t_end(&self) -> f64 {
        match self.models.kind {
            ModelKind::Ade => self.models.ade.t_end,
            ModelKind::Wildfire => self.models.wildfire.t_end,
            ModelKind::CustomLti => self.models.custom.as_ref().map_or(0.0, |c| c.t_end),
        }
    }

    /// Effective step size.
    pub fn step(&self) -> Result<f64> {
        Ok(self.timestep.step.unwrap_or(match self.models.kind {
            ModelKind::Ade => 1e-3,
            ModelKind::Wildfire => 0.1,
            ModelKind::CustomLti => 1e-2,
        }))
    }

    pub fn integrator(&self) -> IntegratorOptions {
        IntegratorOptions {
            newton: self.timestep.newton,
            blowup_threshold: self.timestep.blowup_threshold,
            reuse_jacobian: self.timestep.reuse_jacobian.unwrap_or(self.models.kind == ModelKind::Wildfire),
        }
    }

    pub fn shift_kind(&self) -> ShiftKind {
        self.offline.shift.unwrap_or(if self.models.kind == ModelKind::Wildfire {
            ShiftKind::Periodic
        } else {
            ShiftKind::Extended
        })
    }

    /// Main selector followed by the comparison selectors, deduplicated in order.
    pub fn selectors(&self) -> Vec<Selector> {
        let mut out = vec![self.reduction.selector];
        for s in &self.reduction.compare {
            if !out.contains(s) {
                out.push(*s);
            }
        }
        out
    }

    /// Checks parameters and input files; failures are configuration errors.
    pub fn validate(&self) -> Result<()> {
        match self.models.kind {
            ModelKind::Ade => self.models.ade.validate().map_err(config_err)?,
            ModelKind::Wildfire => self.models.wildfire.validate().map_err(config_err)?,
            ModelKind::CustomLti => {
                let c = self
                    .models
                    .custom
                    .as_ref()
                    .ok_or_else(|| Error::Config("models.kind = \"custom-lti\" needs a [models.custom] section".into()))?;
                if !(c.t_end > 0.0) {
                    return Err(Error::Config(format!("t_end must be positive, got {}", c.t_end)));
                }
                let mut missing = Vec::new();
                for name in ["E", "J", "R", "Q", "K", "B"] {
                    let f = self.resolve(&c.dir).join(format!("{name}.csv"));
                    if !f.exists() {
                        missing.push(f.display().to_string());
                    }
                }
                if let Some(x0) = &c.x0 {
                    let f = self.resolve(x0);
                    if !f.exists() {
                        missing.push(f.display().to_string());
                    }
                }
                if !missing.is_empty() {
                    return Err(Error::MissingInputs(missing));
                }
            }
        }
        let step = self.step()?;
        if !(step > 0.0) || !step.is_finite() {
            return Err(Error::Config(format!("step size must be positive, got {step}")));
        }
        if step > self.t_end() {
            return Err(Error::Config(format!("step size {step} exceeds t_end {}", self.t_end())));
        }
        if let Some(bad) = self.timestep.sweep_steps.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::Config(format!("sweep step sizes must be positive, got {bad}")));
        }
        let o = &self.offline;
        if o.modes == 0 || o.pod_rank == 0 || o.snapshot_stride == 0 {
            return Err(Error::Config("offline.modes, offline.pod_rank and offline.snapshot_stride must be positive".into()));
        }
        if !(1..=2).contains(&o.waves) {
            return Err(Error::Config(format!("offline.waves must be 1 or 2, got {}", o.waves)));
        }
        if o.sharing == PathSharing::PerMode && o.modes != o.waves {
            return Err(Error::Config(format!(
                "per-mode paths need offline.modes == offline.waves, got {} modes and {} waves",
                o.modes, o.waves
            )));
        }
        if o.sharing == PathSharing::Shared && o.waves != 1 {
            return Err(Error::Config("a shared path layout tracks exactly one wave".into()));
        }
        if !(o.margin >= 0.0) {
            return Err(Error::Config(format!("offline.margin must be nonnegative, got {}", o.margin)));
        }
        if self.shift_kind() == ShiftKind::Periodic && self.models.kind != ModelKind::Wildfire {
            return Err(Error::Config("periodic shifts need a periodic model grid".into()));
        }
        let linear = self.models.kind != ModelKind::Wildfire;
        for s in self.selectors() {
            if s.needs_linear_model() && !linear {
                return Err(Error::Config(format!("selector {} needs a linear model", s.name())));
            }
        }
        if self.diagnostics.bound && (!linear || !self.selectors().contains(&Selector::Lti)) {
            return Err(Error::Config("diagnostics.bound needs a linear model and the lti selector".into()));
        }
        if self.cli.threads == 0 {
            return Err(Error::Config("cli.threads must be positive".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = RunConfig::parse("[models]\nkind = \"ade\"\n").unwrap();
        cfg.validate().unwrap();
        assert_eq!(cfg.step().unwrap(), 1e-3);
        assert_eq!(cfg.models.ade.n, 999);
        assert_eq!(cfg.reduction.selector, Selector::Separable);
    }

    #[test]
    fn zero_final_time_rejected() {
        let cfg = RunConfig::parse("[models]\nkind = \"ade\"\n[models.ade]\nt_end = 0.0\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn linear_selector_rejected_for_fire_model() {
        let cfg = RunConfig::parse("[models]\nkind = \"wildfire\"\n[offline]\nwaves = 2\nmodes = 2\nsharing = \"per-mode\"\n[reduction]\nselector = \"lti\"\n").unwrap();
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(RunConfig::parse("[models]\nkind = \"ade\"\nbogus = 1\n"), Err(Error::Config(_))));
    }

    #[test]
    fn hash_depends_on_seed() {
        let mut a = RunConfig::parse("[models]\nkind = \"ade\"\n").unwrap();
        let h0 = a.hash();
        a.seed = 7;
        assert_ne!(h0, a.hash());
    }
}
