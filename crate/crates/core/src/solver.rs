//! Time integration of the radial system.
//!
//! Two formulations share the same grid, boundary conditions and time step
//! control:
//!
//! * [`Formulation::Conservative`] advances `(rho, u)`. The density is
//!   updated in flux form for `r^m rho` with first-order upwinding, so the
//!   trapezoidal mass changes only by the boundary flux. The velocity is
//!   advanced with explicit upwind convection and a centered pressure
//!   gradient, and the viscous operator is solved implicitly with the
//!   density frozen at the old time level.
//! * [`Formulation::Reformulated`] advances `(phi, u, psi)` with a Picard
//!   loop: the previous velocity iterate is frozen in the two transport
//!   equations and in the source terms, and the constant-coefficient
//!   viscous term `2 alpha u_rr` is implicit.
//!
//! Boundary data: `u(a) = u(R) = 0` for every accepted state.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diagnostics::{Accumulators, DiagnosticsRecord};
use crate::grid::RadialGrid;
use crate::model::{ModelError, ModelParams, ViscousAssembly};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SolverError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("state invalid: {0}")]
    InvalidState(String),
    #[error("invalid solver configuration: {0}")]
    Config(String),
    #[error("density became non-positive ({value:e}) at node {node}, r = {r}")]
    NonPositiveDensity { node: usize, r: f64, value: f64 },
    #[error("tridiagonal solve broke down at row {row}")]
    LinearSolve { row: usize },
    #[error("Picard loop stalled after {iterations} iterations, last increment {increment:e}")]
    PicardNotConverged { iterations: usize, increment: f64 },
    #[error("fixed time step {dt} exceeds the Courant limit {limit}")]
    CourantViolation { dt: f64, limit: f64 },
    #[error("step failed at t = {t}: {source}")]
    AtTime {
        t: f64,
        #[source]
        source: Box<SolverError>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Formulation {
    #[default]
    Conservative,
    Reformulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum FarBoundary {
    /// `u(R) = 0`; the density at `R` carries no imposed value.
    #[default]
    DirichletZeroUExtrapolateRho,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub formulation: Formulation,
    pub cfl: f64,
    pub dt_max: f64,
    /// Use exactly this step (except a shortened final step) instead of
    /// the Courant estimate. Rejected if it exceeds the Courant limit.
    pub fixed_dt: Option<f64>,
    pub picard_tol: f64,
    pub picard_max_iter: usize,
    pub far_bc: FarBoundary,
    pub assembly: ViscousAssembly,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            formulation: Formulation::Conservative,
            cfl: 0.4,
            dt_max: 1e-2,
            fixed_dt: None,
            picard_tol: 1e-10,
            picard_max_iter: 50,
            far_bc: FarBoundary::DirichletZeroUExtrapolateRho,
            assembly: ViscousAssembly::Lame,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.cfl > 0.0 && self.cfl <= 1.0) {
            return Err(SolverError::Config(format!("cfl = {} must lie in (0, 1]", self.cfl)));
        }
        if !(self.dt_max > 0.0) {
            return Err(SolverError::Config(format!(
                "dt_max = {} must be positive",
                self.dt_max
            )));
        }
        if let Some(dt) = self.fixed_dt {
            if !(dt > 0.0) {
                return Err(SolverError::Config(format!("fixed_dt = {dt} must be positive")));
            }
        }
        if !(self.picard_tol > 0.0) {
            return Err(SolverError::Config("picard_tol must be positive".into()));
        }
        if self.picard_max_iter == 0 {
            return Err(SolverError::Config("picard_max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Discrete fields at one time level.
#[derive(Debug, Clone, PartialEq)]
pub struct FluidState {
    pub t: f64,
    pub rho: Vec<f64>,
    pub u: Vec<f64>,
    pub phi: Vec<f64>,
    /// `(ln rho)_r`: derived in the conservative formulation, evolved in the
    /// reformulated one.
    pub psi: Vec<f64>,
    pub v: Vec<f64>,
}

impl FluidState {
    /// Builds a state from density and velocity; `psi = ddr(ln rho)` and
    /// `v = u + 2 alpha ddr(rho) / rho`.
    pub fn from_primitive(
        grid: &RadialGrid,
        params: &ModelParams,
        t: f64,
        rho: Vec<f64>,
        u: Vec<f64>,
    ) -> Result<Self, SolverError> {
        check_lengths(grid, &[&rho, &u])?;
        check_density(grid, &rho)?;
        let phi = rho
            .iter()
            .map(|&r| params.phi_of_rho(r))
            .collect::<Result<Vec<_>, _>>()?;
        let ln_rho: Vec<f64> = rho.iter().map(|r| r.ln()).collect();
        let psi = grid.ddr(&ln_rho);
        let v = params.effective_velocity(grid.nodes(), &rho, &grid.ddr(&rho), &u)?;
        Ok(Self { t, rho, u, phi, psi, v })
    }

    /// Builds a state from the reformulated unknowns; `rho` is recovered
    /// from `phi` and `v = u + 2 alpha psi`.
    pub fn from_reformulated(
        grid: &RadialGrid,
        params: &ModelParams,
        t: f64,
        phi: Vec<f64>,
        u: Vec<f64>,
        psi: Vec<f64>,
    ) -> Result<Self, SolverError> {
        check_lengths(grid, &[&phi, &u, &psi])?;
        let mut rho = Vec::with_capacity(phi.len());
        for (i, &p) in phi.iter().enumerate() {
            if !(p > 0.0) {
                return Err(SolverError::NonPositiveDensity {
                    node: i,
                    r: grid.nodes()[i],
                    value: p,
                });
            }
            rho.push(params.rho_of_phi(p)?);
        }
        check_density(grid, &rho)?;
        let v = u.iter().zip(&psi).map(|(u, s)| u + 2.0 * params.alpha * s).collect();
        Ok(Self { t, rho, u, phi, psi, v })
    }

    /// Checks the invariants every accepted state must satisfy.
    pub fn validate(&self, grid: &RadialGrid) -> Result<(), SolverError> {
        check_lengths(grid, &[&self.rho, &self.u, &self.phi, &self.psi, &self.v])?;
        check_density(grid, &self.rho)?;
        if self.u[0] != 0.0 {
            return Err(SolverError::InvalidState(format!(
                "u(a) = {} violates the no-slip condition",
                self.u[0]
            )));
        }
        for (name, f) in [("u", &self.u), ("phi", &self.phi), ("psi", &self.psi), ("v", &self.v)] {
            if let Some(i) = f.iter().position(|x| !x.is_finite()) {
                return Err(SolverError::InvalidState(format!("{name} is not finite at node {i}")));
            }
        }
        Ok(())
    }
}

fn check_lengths(grid: &RadialGrid, fields: &[&Vec<f64>]) -> Result<(), SolverError> {
    for f in fields {
        if f.len() != grid.len() {
            return Err(SolverError::InvalidState(format!(
                "field has {} values, grid has {} nodes",
                f.len(),
                grid.len()
            )));
        }
    }
    Ok(())
}

fn check_density(grid: &RadialGrid, rho: &[f64]) -> Result<(), SolverError> {
    match rho.iter().position(|&x| !(x > 0.0) || !x.is_finite()) {
        Some(i) => Err(SolverError::NonPositiveDensity {
            node: i,
            r: grid.nodes()[i],
            value: rho[i],
        }),
        None => Ok(()),
    }
}

/// Result of one accepted step.
#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub state: FluidState,
    /// `dt * [r^m rho u]_a^R` over the step (conservative formulation).
    pub boundary_outflow: f64,
    /// Weighted L2 increments of the Picard loop (reformulated formulation).
    pub picard_increments: Vec<f64>,
}

/// Called with every accepted state, including the initial one.
pub trait StepObserver {
    fn observe(&mut self, state: &FluidState);
}

impl StepObserver for () {
    fn observe(&mut self, _state: &FluidState) {}
}

impl<F: FnMut(&FluidState)> StepObserver for F {
    fn observe(&mut self, state: &FluidState) {
        self(state)
    }
}

#[derive(Debug, Clone)]
pub struct Evolution {
    pub final_state: FluidState,
    pub series: Vec<DiagnosticsRecord>,
    pub steps: usize,
    /// Largest Picard iteration count over the run.
    pub max_picard_iterations: usize,
}

/// Solves a tridiagonal system in place (Thomas algorithm). `lower[0]` and
/// `upper[n-1]` are ignored.
pub fn solve_tridiagonal(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>, SolverError> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(SolverError::LinearSolve { row: 0 });
    }
    c[0] = upper[0] / pivot;
    d[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(SolverError::LinearSolve { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        d[i] = (rhs[i] - lower[i] * d[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Ok(d)
}

/// One-sided difference of `f` at node `i` taken from the side the flow
/// comes from.
fn upwind(f: &[f64], vel: f64, i: usize, dr: f64) -> f64 {
    let n = f.len();
    if (vel > 0.0 && i > 0) || i + 1 == n {
        (f[i] - f[i - 1]) / dr
    } else {
        (f[i + 1] - f[i]) / dr
    }
}

pub struct Solver<'a> {
    pub grid: &'a RadialGrid,
    pub params: ModelParams,
    pub config: SolverConfig,
    r_m: Vec<f64>,
}

impl<'a> Solver<'a> {
    pub fn new(grid: &'a RadialGrid, params: ModelParams, config: SolverConfig) -> Result<Self, SolverError> {
        params.validate()?;
        config.validate()?;
        if config.formulation == Formulation::Reformulated && !(params.a_entropy > 0.0) {
            return Err(SolverError::Config(
                "the reformulated formulation needs A > 0 to recover rho from phi".into(),
            ));
        }
        let r_m = grid.powers(params.m());
        Ok(Self {
            grid,
            params,
            config,
            r_m,
        })
    }

    /// Largest characteristic speed `|u| + c(rho)` over the grid.
    pub fn max_speed(&self, state: &FluidState) -> Result<f64, SolverError> {
        let mut s: f64 = 0.0;
        for (&u, &rho) in state.u.iter().zip(&state.rho) {
            s = s.max(u.abs() + self.params.sound_speed(rho)?);
        }
        Ok(s)
    }

    pub fn cfl_dt(&self, state: &FluidState) -> Result<f64, SolverError> {
        let speed = self.max_speed(state)?;
        if speed == 0.0 {
            return Ok(self.config.dt_max);
        }
        Ok((self.config.cfl * self.grid.dr() / speed).min(self.config.dt_max))
    }

    pub fn step(&self, state: &FluidState, dt: f64) -> Result<StepOutcome, SolverError> {
        match self.config.formulation {
            Formulation::Conservative => self.step_conservative(state, dt),
            Formulation::Reformulated => self.step_reformulated(state, dt),
        }
    }

    pub fn step_conservative(&self, state: &FluidState, dt: f64) -> Result<StepOutcome, SolverError> {
        let g = self.grid;
        let n = g.len();
        let dr = g.dr();
        let r = g.nodes();
        let (rho, u) = (&state.rho, &state.u);

        // Mass: upwind flux of r^m rho through the node-centred dual cells.
        let q: Vec<f64> = rho.iter().zip(&self.r_m).map(|(a, b)| a * b).collect();
        let flux: Vec<f64> = (0..n - 1)
            .map(|j| {
                let uh = 0.5 * (u[j] + u[j + 1]);
                if uh >= 0.0 {
                    uh * q[j]
                } else {
                    uh * q[j + 1]
                }
            })
            .collect();
        let flux_a = q[0] * u[0];
        let flux_r = q[n - 1] * u[n - 1];
        let mut rho_new = rho.clone();
        for i in 0..n {
            let left = if i == 0 { flux_a } else { flux[i - 1] };
            let right = if i + 1 == n { flux_r } else { flux[i] };
            let div = right - left;
            if div != 0.0 {
                rho_new[i] = rho[i] - dt * div / (g.weight(i) * self.r_m[i]);
            }
            if !(rho_new[i] > 0.0) {
                return Err(SolverError::NonPositiveDensity {
                    node: i,
                    r: r[i],
                    value: rho_new[i],
                });
            }
        }

        // Momentum in velocity form, viscous part implicit with rho frozen.
        let (coef, mg) = self.config.assembly.coefficients(&self.params);
        let pressure = rho
            .iter()
            .map(|&x| self.params.pressure(x))
            .collect::<Result<Vec<_>, _>>()?;
        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let mut rhs = vec![0.0; n];
        for i in 1..n - 1 {
            let conv = u[i] * upwind(u, u[i], i, dr);
            let grad_p = (pressure[i + 1] - pressure[i - 1]) / (2.0 * dr * rho[i]);
            rhs[i] = u[i] - dt * (conv + grad_p);

            let (rp, rm) = (g.half(i), g.half(i - 1));
            let rho_p = 0.5 * (rho[i] + rho[i + 1]);
            let rho_m = 0.5 * (rho[i] + rho[i - 1]);
            let k = coef / (rho[i] * dr);
            let drho = (rho[i + 1] - rho[i - 1]) / (2.0 * dr);
            let l_up = k * rho_p * (1.0 / dr + mg / (2.0 * rp));
            let l_lo = k * rho_m * (1.0 / dr - mg / (2.0 * rm));
            let l_mid = k * (rho_p * (-1.0 / dr + mg / (2.0 * rp)) - rho_m * (1.0 / dr + mg / (2.0 * rm)))
                - coef * mg * drho / (r[i] * rho[i]);
            lower[i] = -dt * l_lo;
            diag[i] = 1.0 - dt * l_mid;
            upper[i] = -dt * l_up;
        }
        let u_new = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;

        let next = FluidState::from_primitive(g, &self.params, state.t + dt, rho_new, u_new)?;
        Ok(StepOutcome {
            state: next,
            boundary_outflow: dt * (flux_r - flux_a),
            picard_increments: Vec::new(),
        })
    }

    pub fn step_reformulated(&self, state: &FluidState, dt: f64) -> Result<StepOutcome, SolverError> {
        let g = self.grid;
        let n = g.len();
        let dr = g.dr();
        let r = g.nodes();
        let m = self.params.m();
        let gm1 = self.params.gamma - 1.0;
        let (coef, mg) = self.config.assembly.coefficients(&self.params);
        let (phi0, psi0, u0) = (&state.phi, &state.psi, &state.u);

        let mut lower = vec![0.0; n];
        let mut diag = vec![1.0; n];
        let mut upper = vec![0.0; n];
        let s = coef * dt / (dr * dr);
        for i in 1..n - 1 {
            lower[i] = -s;
            diag[i] = 1.0 + 2.0 * s;
            upper[i] = -s;
        }

        // phi is advected as u phi (ln phi)_r so that ln(phi) sees the same
        // upwind difference as psi.
        let ln_phi0: Vec<f64> = phi0.iter().map(|x| x.ln()).collect();
        let mut iterate = u0.clone();
        let mut increments = Vec::new();
        let mut phi = vec![0.0; n];
        let mut psi = vec![0.0; n];
        loop {
            let vel = &iterate;
            let vel_r = g.ddr(vel);
            let vel_rr = g.ddr(&vel_r);
            let over_r: Vec<f64> = vel.iter().zip(r).map(|(v, r)| v / r).collect();
            let over_r_r = g.ddr(&over_r);
            // psi is advected in flux form so that its upwind diffusion is the
            // derivative of the one acting on ln(phi); the two stay consistent
            // to second order in space.
            let psi_flux: Vec<f64> = (0..n - 1)
                .map(|j| {
                    let vh = 0.5 * (vel[j] + vel[j + 1]);
                    vh * if vh >= 0.0 { psi0[j] } else { psi0[j + 1] }
                })
                .collect();
            // At the walls psi has no inflow; its transport there is the
            // one-sided derivative of u psi, with psi averaged onto the upwind
            // half cell to mirror the upwind difference of ln(phi).
            let edge_flux = |i: usize| {
                let v = vel[i];
                if v == 0.0 {
                    0.0
                } else if (v > 0.0 && i > 0) || i + 1 == n {
                    v * 0.5 * (psi0[i - 1] + psi0[i])
                } else {
                    v * 0.5 * (psi0[i] + psi0[i + 1])
                }
            };
            for i in 0..n {
                // phi_t = -X phi with X frozen over the step is integrated
                // exactly, which keeps phi positive and ln(phi) linear in dt.
                let advect = if vel[i] == 0.0 {
                    0.0
                } else {
                    vel[i] * upwind(&ln_phi0, vel[i], i, dr)
                };
                phi[i] = phi0[i] * (-dt * (advect + gm1 * (vel_r[i] + m * over_r[i]))).exp();
                let transport = if i == 0 {
                    (4.0 * edge_flux(1) - edge_flux(2) - 3.0 * edge_flux(0)) / (2.0 * dr)
                } else if i + 1 == n {
                    (3.0 * edge_flux(i) - 4.0 * edge_flux(i - 1) + edge_flux(i - 2)) / (2.0 * dr)
                } else {
                    (psi_flux[i] - psi_flux[i - 1]) / dr
                };
                psi[i] = psi0[i] - dt * (transport + vel_rr[i] + m * over_r_r[i]);
            }
            let phi_r = g.ddr(&phi);
            let mut rhs = vec![0.0; n];
            for i in 1..n - 1 {
                let conv = vel[i] * upwind(vel, vel[i], i, dr);
                let source = coef * psi[i] * vel_r[i] + coef * mg * over_r_r[i];
                rhs[i] = u0[i] - dt * (conv + phi_r[i] - source);
            }
            let next = solve_tridiagonal(&lower, &diag, &upper, &rhs)?;
            let diff: Vec<f64> = next.iter().zip(vel).map(|(a, b)| a - b).collect();
            let increment = g.weighted_norm(&diff, m, 2.0).expect("p = 2 is valid");
            increments.push(increment);
            iterate = next;
            if increment < self.config.picard_tol {
                break;
            }
            if increments.len() >= self.config.picard_max_iter || !increment.is_finite() {
                return Err(SolverError::PicardNotConverged {
                    iterations: increments.len(),
                    increment,
                });
            }
        }

        let next = FluidState::from_reformulated(g, &self.params, state.t + dt, phi, iterate, psi)?;
        Ok(StepOutcome {
            state: next,
            boundary_outflow: 0.0,
            picard_increments: increments,
        })
    }

    /// Advances `state0` to `t_final`, capturing diagnostics at `t = 0`,
    /// every `record_every` steps and at `t_final`.
    pub fn evolve(
        &self,
        state0: FluidState,
        t_final: f64,
        record_every: usize,
        observer: &mut dyn StepObserver,
    ) -> Result<Evolution, SolverError> {
        state0.validate(self.grid)?;
        let record_every = record_every.max(1);
        let mut acc = Accumulators::new(self.grid, &self.params, &state0)?;
        let mut series = vec![acc.capture(&state0)?];
        observer.observe(&state0);

        let t0 = state0.t;
        let mut state = state0;
        let mut steps = 0usize;
        let mut max_picard = 0usize;
        while state.t < t_final {
            let courant = self.cfl_dt(&state)?;
            let mut dt = match self.config.fixed_dt {
                Some(dt) => {
                    let limit = self.grid.dr() / self.max_speed(&state)?.max(f64::MIN_POSITIVE);
                    if dt > limit {
                        return Err(SolverError::CourantViolation { dt, limit });
                    }
                    dt
                }
                None => courant,
            };
            let remaining = t_final - state.t;
            let last = remaining <= dt * (1.0 + 1e-9);
            if last {
                dt = remaining;
            }
            let mut out = self.step(&state, dt).map_err(|e| SolverError::AtTime {
                t: state.t,
                source: Box::new(e),
            })?;
            steps += 1;
            out.state.t = match (last, self.config.fixed_dt) {
                (true, _) => t_final,
                (false, Some(h)) => t0 + steps as f64 * h,
                (false, None) => state.t + dt,
            };
            max_picard = max_picard.max(out.picard_increments.len());
            acc.advance(&state, &out.state, out.boundary_outflow)?;
            state = out.state;
            observer.observe(&state);
            if steps.is_multiple_of(record_every) || last {
                series.push(acc.capture(&state)?);
            }
        }
        Ok(Evolution {
            final_state: state,
            series,
            steps,
            max_picard_iterations: max_picard,
        })
    }
}
