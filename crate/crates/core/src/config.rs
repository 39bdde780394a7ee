//! Run configuration: a TOML file with one table per concern. Every key is
//! optional and has the default documented on its field; unknown keys are
//! rejected so a typo cannot silently change the physics.
//!
//! ```toml
//! [model]
//! preset = "general"        # general | div-hd | div2-hd | div-h-grad
//! gamma = 2.0
//!
//! [grid]
//! n = 800
//!
//! [time]
//! t_final = 0.5
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RadialGrid};
use crate::initdata::{InitError, InitSpec, ProfileKind, ProfileTable};
use crate::model::{ModelError, ModelParams, ShallowVariant, ViscousAssembly};
use crate::solver::{Formulation, SolverConfig, SolverError};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {reason}")]
    Read { path: String, reason: String },
    #[error("config syntax: {0}")]
    Syntax(String),
    #[error("override `{0}` must look like key.path=value")]
    Override(String),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Init(#[from] InitError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    /// Parameters taken from the `[model]` keys.
    #[default]
    General,
    #[serde(rename = "div-hd")]
    DivHD,
    #[serde(rename = "div2-hd")]
    Div2HD,
    DivHGrad,
}

impl Preset {
    pub fn variant(self) -> Option<ShallowVariant> {
        match self {
            Preset::General => None,
            Preset::DivHD => Some(ShallowVariant::DivHD),
            Preset::Div2HD => Some(ShallowVariant::Div2HD),
            Preset::DivHGrad => Some(ShallowVariant::DivHGrad),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Default `general`. A shallow-water preset fixes every other key.
    pub preset: Preset,
    /// Entropy constant, default 1.
    pub a_entropy: Option<f64>,
    /// Adiabatic exponent, default 2.
    pub gamma: Option<f64>,
    /// Viscosity constant, default 1.
    pub alpha: Option<f64>,
    /// Second viscosity constant; must be 0.
    pub beta: Option<f64>,
    /// Spatial dimension (2 or 3), default 3.
    pub dim: Option<u32>,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            preset: Preset::General,
            a_entropy: None,
            gamma: None,
            alpha: None,
            beta: None,
            dim: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSection {
    /// Inner radius, default 1.
    pub a: f64,
    /// Truncation radius, default 20.
    pub r_max: f64,
    /// Number of nodes, default 800.
    pub n: usize,
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            a: 1.0,
            r_max: 20.0,
            n: 800,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimeSection {
    /// Courant number, default 0.4.
    pub cfl: f64,
    /// Largest step, default 1e-2.
    pub dt_max: f64,
    /// Fixed step instead of the Courant estimate; unset by default.
    pub fixed_dt: Option<f64>,
    /// Final time, default 0.5.
    pub t_final: f64,
    /// Diagnostics cadence in steps, default 10.
    pub record_every: usize,
}

impl Default for TimeSection {
    fn default() -> Self {
        Self {
            cfl: 0.4,
            dt_max: 1e-2,
            fixed_dt: None,
            t_final: 0.5,
            record_every: 10,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverSection {
    /// `conservative` (default) or `reformulated`.
    pub formulation: Formulation,
    /// Picard increment tolerance, default 1e-10.
    pub picard_tol: f64,
    /// Picard iteration cap, default 50.
    pub picard_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let s = SolverConfig::default();
        Self {
            formulation: s.formulation,
            picard_tol: s.picard_tol,
            picard_max_iter: s.picard_max_iter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitSection {
    /// `power-law` (default), `exponential` or `custom`.
    pub kind: ProfileKind,
    /// Power-law decay exponent, default 2.
    pub sigma: f64,
    /// Velocity bump amplitude, default 0.5.
    pub u_amplitude: f64,
    /// Velocity bump support, default [2, 5].
    pub u_support: [f64; 2],
    /// Two-column CSV `r,rho` for `custom`; relative to the config file.
    pub rho_table: Option<PathBuf>,
    /// Two-column CSV `r,u` replacing the bump.
    pub u_table: Option<PathBuf>,
    /// Enforce the global-theory hypotheses (`sigma > d/2`, `gamma > 3/2`),
    /// default true.
    pub global_regime: bool,
}

impl Default for InitSection {
    fn default() -> Self {
        let s = InitSpec::default();
        Self {
            kind: s.kind,
            sigma: s.sigma,
            u_amplitude: s.u_amplitude,
            u_support: [s.u_support.0, s.u_support.1],
            rho_table: None,
            u_table: None,
            global_regime: s.global_regime,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory, default `out`; `--out` takes precedence.
    pub dir: PathBuf,
    /// Snapshot cadence in steps; 0 (default) writes the initial and final
    /// states only.
    pub snapshot_every: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("out"),
            snapshot_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChecksSection {
    /// Exponent of the `|r^(m/q) psi_0|_q` norm, in (3, 6]; default 4.
    pub validation_q: f64,
    /// Characteristic paths for the effective-velocity cross-check,
    /// default 16.
    pub paths: usize,
    /// RK4 substeps per recorded step along paths, default 2.
    pub path_substeps: usize,
    /// Allowed `|v_closed - v_grid|` relative to `|v_0|_inf`, default 1e-2.
    pub path_tol: f64,
    /// Allowed relative excess of `F(T) + int D` over `F(0)` for the energy
    /// and BD entropy, default 1e-2.
    pub balance_tol: f64,
    /// Mass ledger tolerance relative to the initial mass (conservative
    /// formulation), default 1e-12.
    pub mass_tol: f64,
}

impl Default for ChecksSection {
    fn default() -> Self {
        Self {
            validation_q: 4.0,
            paths: 16,
            path_substeps: 2,
            path_tol: 1e-2,
            balance_tol: 1e-2,
            mass_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySection {
    /// Refinement levels of the convergence study, default 3 (minimum 3).
    pub levels: usize,
    /// Step of level 0; default half the Courant step of the initial state.
    pub dt0: Option<f64>,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { levels: 3, dt0: None }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelSection,
    pub grid: GridSection,
    pub time: TimeSection,
    pub solver: SolverSection,
    pub init: InitSection,
    pub output: OutputSection,
    pub checks: ChecksSection,
    pub study: StudySection,
    /// Directory used to resolve relative table paths; not a config key.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Everything a run needs, validated.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub params: ModelParams,
    pub variant: Option<ShallowVariant>,
    pub grid: RadialGrid,
    pub solver: SolverConfig,
    pub init: InitSpec,
    pub t_final: f64,
    pub record_every: usize,
}

fn set_dotted(table: &mut toml::Table, key: &str, value: toml::Value) -> Result<(), ConfigError> {
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(ConfigError::Override(key.to_string()));
    }
    let mut cur = table;
    for part in &parts[..parts.len() - 1] {
        let entry = cur
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("override `{key}`: `{part}` is not a table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses `value` as a TOML value, falling back to a bare string.
fn parse_value(value: &str) -> toml::Value {
    let doc = format!("v = {value}");
    match doc.parse::<toml::Table>() {
        Ok(mut t) => t.remove("v").unwrap_or_else(|| toml::Value::String(value.to_string())),
        Err(_) => toml::Value::String(value.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::with_overrides(text, &[])
    }

    /// Parses `text` and applies `KEY=VALUE` overrides with dotted keys.
    pub fn with_overrides(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        for o in overrides {
            let (key, value) = o.split_once('=').ok_or_else(|| ConfigError::Override(o.clone()))?;
            set_dotted(&mut table, key.trim(), parse_value(value.trim()))?;
        }
        let cfg: RunConfig = table
            .try_into()
            .map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        Ok(cfg)
    }

    /// Reads `path` (or starts from the defaults when `None`) and applies
    /// the overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| ConfigError::Read {
                path: p.display().to_string(),
                reason: e.to_string(),
            })?,
            None => String::new(),
        };
        let mut cfg = Self::with_overrides(&text, overrides)?;
        cfg.base_dir = path.and_then(|p| p.parent()).map(Path::to_path_buf);
        Ok(cfg)
    }

    pub fn model_params(&self) -> Result<(ModelParams, Option<ShallowVariant>), ConfigError> {
        let m = &self.model;
        if let Some(variant) = m.preset.variant() {
            if m.a_entropy.is_some() || m.gamma.is_some() || m.alpha.is_some() || m.beta.is_some() || m.dim.is_some() {
                return Err(ConfigError::Invalid(format!(
                    "preset `{}` fixes the model parameters; remove the explicit [model] values",
                    variant.label()
                )));
            }
            return Ok((variant.params(), Some(variant)));
        }
        let d = ModelParams::default();
        let mut params = ModelParams::new(
            m.a_entropy.unwrap_or(d.a_entropy),
            m.gamma.unwrap_or(d.gamma),
            m.alpha.unwrap_or(d.alpha),
            m.dim.unwrap_or(d.dim),
        )?;
        params.beta = m.beta.unwrap_or(0.0);
        params.validate()?;
        Ok((params, None))
    }

    fn table_path(&self, p: &Path) -> PathBuf {
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    /// Validates every section and builds the domain objects.
    pub fn resolve(&self) -> Result<Resolved, ConfigError> {
        let (params, variant) = self.model_params()?;
        if self.init.global_regime {
            params.validate_global()?;
        }
        let grid = RadialGrid::new(self.grid.a, self.grid.r_max, self.grid.n)?;
        let solver = SolverConfig {
            formulation: self.solver.formulation,
            cfl: self.time.cfl,
            dt_max: self.time.dt_max,
            fixed_dt: self.time.fixed_dt,
            picard_tol: self.solver.picard_tol,
            picard_max_iter: self.solver.picard_max_iter,
            assembly: variant.map_or(ViscousAssembly::Lame, ShallowVariant::assembly),
            ..SolverConfig::default()
        };
        solver.validate()?;
        if !(self.time.t_final >= 0.0 && self.time.t_final.is_finite()) {
            return Err(ConfigError::Invalid(format!(
                "t_final = {} must be finite and >= 0",
                self.time.t_final
            )));
        }
        if self.time.record_every == 0 {
            return Err(ConfigError::Invalid("record_every must be at least 1".into()));
        }
        let c = &self.checks;
        if !(c.validation_q > 3.0 && c.validation_q <= 6.0) {
            return Err(ConfigError::Invalid(format!(
                "validation_q = {} must lie in (3, 6]",
                c.validation_q
            )));
        }
        if !(c.path_tol > 0.0 && c.balance_tol > 0.0 && c.mass_tol > 0.0) || c.path_substeps == 0 {
            return Err(ConfigError::Invalid(
                "check tolerances and substeps must be positive".into(),
            ));
        }
        if self.study.levels < 3 {
            return Err(ConfigError::Invalid(format!(
                "study.levels = {} must be at least 3",
                self.study.levels
            )));
        }
        if let Some(dt0) = self.study.dt0 {
            if !(dt0 > 0.0) {
                return Err(ConfigError::Invalid(format!("study.dt0 = {dt0} must be positive")));
            }
        }

        let load = |p: &Option<PathBuf>| -> Result<Option<ProfileTable>, ConfigError> {
            p.as_ref()
                .map(|p| ProfileTable::from_csv(&self.table_path(p)))
                .transpose()
                .map_err(ConfigError::from)
        };
        let init = InitSpec {
            kind: self.init.kind,
            sigma: self.init.sigma,
            u_amplitude: self.init.u_amplitude,
            u_support: (self.init.u_support[0], self.init.u_support[1]),
            rho_table: load(&self.init.rho_table)?,
            u_table: load(&self.init.u_table)?,
            global_regime: self.init.global_regime,
        };
        init.validate(&grid, &params)?;

        Ok(Resolved {
            params,
            variant,
            grid,
            solver,
            init,
            t_final: self.time.t_final,
            record_every: self.time.record_every,
        })
    }

    /// The resolved configuration as a single comment line, `# config:`
    /// followed by sorted `key=value` pairs.
    pub fn provenance_line(&self) -> String {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut pairs = Vec::new();
        flatten("", &value, &mut pairs);
        format!("# bdflow {} config: {}", env!("CARGO_PKG_VERSION"), pairs.join("; "))
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix}={other}")),
    }
}
