//! Admissible initial data: power-law and exponential density profiles,
//! tabulated profiles, and a compactly supported smooth velocity bump.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, RadialGrid};
use crate::model::ModelParams;
use crate::solver::{FluidState, SolverError};

#[derive(Debug, Error)]
pub enum InitError {
    #[error("invalid initial data: {0}")]
    Invalid(String),
    #[error("profile table {path}: {reason}")]
    Table { path: String, reason: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Solver(#[from] SolverError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// `rho_0 = 1 / (1 + r^(2 sigma))`
    #[default]
    PowerLaw,
    /// `rho_0 = e^(-r)`
    Exponential,
    /// Tabulated `(r, value)` pairs, linearly interpolated.
    Custom,
}

/// Piecewise-linear profile given by sample points with increasing `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    points: Vec<(f64, f64)>,
}

impl ProfileTable {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self, InitError> {
        if points.len() < 2 {
            return Err(InitError::Invalid("profile table needs at least two rows".into()));
        }
        if points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return Err(InitError::Invalid("profile radii must increase strictly".into()));
        }
        if points.iter().any(|(r, v)| !r.is_finite() || !v.is_finite()) {
            return Err(InitError::Invalid("profile table has non-finite entries".into()));
        }
        Ok(Self { points })
    }

    /// Reads a two-column CSV `r,value`; a non-numeric first line is taken
    /// as a header.
    pub fn from_csv(path: &Path) -> Result<Self, InitError> {
        let table_err = |reason: String| InitError::Table {
            path: path.display().to_string(),
            reason,
        };
        let text = std::fs::read_to_string(path).map_err(|e| table_err(e.to_string()))?;
        let mut points = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let cells: Vec<&str> = line.split(',').map(str::trim).collect();
            if cells.len() != 2 {
                return Err(table_err(format!("line {} has {} columns", k + 1, cells.len())));
            }
            match (cells[0].parse::<f64>(), cells[1].parse::<f64>()) {
                (Ok(r), Ok(v)) => points.push((r, v)),
                _ if points.is_empty() && k == 0 => continue,
                _ => return Err(table_err(format!("line {} is not numeric", k + 1))),
            }
        }
        Self::new(points).map_err(|e| table_err(e.to_string()))
    }

    pub fn eval(&self, r: f64) -> Result<f64, InitError> {
        let pts = &self.points;
        let (lo, hi) = (pts[0].0, pts[pts.len() - 1].0);
        if r < lo - 1e-12 || r > hi + 1e-12 {
            return Err(InitError::Invalid(format!(
                "radius {r} outside the table range [{lo}, {hi}]"
            )));
        }
        let j = pts.partition_point(|p| p.0 <= r).clamp(1, pts.len() - 1);
        let (r0, v0) = pts[j - 1];
        let (r1, v1) = pts[j];
        let w = ((r - r0) / (r1 - r0)).clamp(0.0, 1.0);
        Ok(v0 + w * (v1 - v0))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitSpec {
    pub kind: ProfileKind,
    /// Decay exponent of the power-law family.
    pub sigma: f64,
    pub u_amplitude: f64,
    pub u_support: (f64, f64),
    pub rho_table: Option<ProfileTable>,
    /// Tabulated velocity; replaces the bump when present.
    pub u_table: Option<ProfileTable>,
    /// Enforce the hypotheses of the global theory (`sigma > d/2`).
    pub global_regime: bool,
}

impl Default for InitSpec {
    fn default() -> Self {
        Self {
            kind: ProfileKind::PowerLaw,
            sigma: 2.0,
            u_amplitude: 0.5,
            u_support: (2.0, 5.0),
            rho_table: None,
            u_table: None,
            global_regime: true,
        }
    }
}

/// `amplitude * exp(-1 / (1 - s^2))` with `s` the affine image of `r` in
/// `[-1, 1]`; zero outside the open support.
pub fn bump(r: f64, amplitude: f64, support: (f64, f64)) -> f64 {
    let (r1, r2) = support;
    let s = (2.0 * r - r1 - r2) / (r2 - r1);
    if s.abs() < 1.0 {
        amplitude * (-1.0 / (1.0 - s * s)).exp()
    } else {
        0.0
    }
}

impl InitSpec {
    pub fn validate(&self, grid: &RadialGrid, params: &ModelParams) -> Result<(), InitError> {
        let d = f64::from(params.dim);
        if self.kind == ProfileKind::PowerLaw {
            if !(self.sigma > 0.0) {
                return Err(InitError::Invalid(format!("sigma = {} must be positive", self.sigma)));
            }
            if self.global_regime && !(self.sigma > 0.5 * d) {
                return Err(InitError::Invalid(format!(
                    "power law needs sigma > d/2 = {} in the global regime, got {}",
                    0.5 * d,
                    self.sigma
                )));
            }
        }
        if self.kind == ProfileKind::Custom && self.rho_table.is_none() {
            return Err(InitError::Invalid("custom profile needs a density table".into()));
        }
        if self.u_table.is_none() {
            let (r1, r2) = self.u_support;
            if !(r1 >= grid.a() && r2 > r1 && r2 <= grid.r_max()) || !self.u_amplitude.is_finite() {
                return Err(InitError::Invalid(format!(
                    "velocity support [{r1}, {r2}] must lie inside [{}, {}]",
                    grid.a(),
                    grid.r_max()
                )));
            }
        }
        Ok(())
    }

    pub fn density(&self, r: f64) -> Result<f64, InitError> {
        match self.kind {
            ProfileKind::PowerLaw => Ok(1.0 / (1.0 + r.powf(2.0 * self.sigma))),
            ProfileKind::Exponential => Ok((-r).exp()),
            ProfileKind::Custom => self
                .rho_table
                .as_ref()
                .ok_or_else(|| InitError::Invalid("custom profile needs a density table".into()))?
                .eval(r),
        }
    }

    pub fn velocity(&self, r: f64) -> Result<f64, InitError> {
        match &self.u_table {
            Some(t) => t.eval(r),
            None => Ok(bump(r, self.u_amplitude, self.u_support)),
        }
    }

    pub fn build(&self, grid: &RadialGrid, params: &ModelParams) -> Result<FluidState, InitError> {
        self.validate(grid, params)?;
        let rho = grid
            .nodes()
            .iter()
            .map(|&r| self.density(r))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(i) = rho.iter().position(|&x| !(x > 0.0)) {
            return Err(InitError::Invalid(format!(
                "initial density {} at r = {} is not positive",
                rho[i],
                grid.nodes()[i]
            )));
        }
        let mut u = grid
            .nodes()
            .iter()
            .map(|&r| self.velocity(r))
            .collect::<Result<Vec<_>, _>>()?;
        if u[0] != 0.0 {
            return Err(InitError::Invalid(format!("u_0(a) = {} must vanish", u[0])));
        }
        // far-field no-slip is imposed by the solver; start compatible with it
        let last = u.len() - 1;
        u[last] = 0.0;
        Ok(FluidState::from_primitive(grid, params, 0.0, rho, u)?)
    }
}

pub fn build(spec: &InitSpec, grid: &RadialGrid, params: &ModelParams) -> Result<FluidState, InitError> {
    spec.build(grid, params)
}
