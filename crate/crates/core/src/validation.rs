//! Admissibility report for initial data on the truncated grid.
//!
//! Every norm of the initial regularity class is evaluated with the grid
//! quadrature and difference operators. Finiteness is checked directly;
//! whether a norm would stay finite on the untruncated exterior domain is
//! judged from the log-log slope of its integrand over the outer tenth of
//! the grid (an integrand decaying no faster than `1/r` is tail-dominated).

use std::fmt;

use crate::grid::{sup_norm, RadialGrid};
use crate::model::ModelParams;
use crate::solver::{FluidState, SolverError};

/// Outer fraction of `[a, R]` used for tail slopes.
const TAIL_FRACTION: f64 = 0.1;

/// Truncated mass density `rho_0(R) R^m` above which a warning is issued.
pub const TAIL_MASS_WARNING: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct NormEntry {
    pub name: &'static str,
    pub value: f64,
    pub finite: bool,
    /// Log-log slope of the integrand near `R`; `None` when it vanishes
    /// there or the norm is a sup-norm.
    pub tail_slope: Option<f64>,
    pub tail_flag: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InitialDataReport {
    pub q: f64,
    pub norms: Vec<NormEntry>,
    /// Decay exponent `sigma` estimated from `rho_0 ~ r^(-2 sigma)` near `R`.
    pub sigma_estimate: f64,
    /// `sigma_estimate > d / 2`, the integrability condition of the mass.
    pub decay_ok: bool,
    pub warnings: Vec<String>,
}

impl InitialDataReport {
    pub fn all_finite(&self) -> bool {
        self.norms.iter().all(|n| n.finite)
    }

    pub fn tail_flagged(&self) -> bool {
        self.norms.iter().any(|n| n.tail_flag)
    }

    pub fn passes(&self) -> bool {
        self.all_finite() && !self.tail_flagged() && self.decay_ok
    }

    pub fn norm(&self, name: &str) -> Option<f64> {
        self.norms.iter().find(|n| n.name == name).map(|n| n.value)
    }
}

impl fmt::Display for InitialDataReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "initial data (q = {}):", self.q)?;
        for n in &self.norms {
            let slope = n.tail_slope.map_or("-".to_string(), |s| format!("{s:.3}"));
            writeln!(
                f,
                "  {:<22} {:>24.16e}  finite={} tail_slope={} tail_flag={}",
                n.name, n.value, n.finite, slope, n.tail_flag
            )?;
        }
        writeln!(
            f,
            "  sigma_estimate = {:.6} decay_ok={}",
            self.sigma_estimate, self.decay_ok
        )?;
        for w in &self.warnings {
            writeln!(f, "  warning: {w}")?;
        }
        Ok(())
    }
}

/// Least-squares slope of `ln |f|` against `ln r` over the outer tenth.
fn tail_slope(grid: &RadialGrid, f: &[f64]) -> Option<f64> {
    let cut = grid.r_max() - TAIL_FRACTION * (grid.r_max() - grid.a());
    let pts: Vec<(f64, f64)> = grid
        .nodes()
        .iter()
        .zip(f)
        .filter(|(r, _)| **r >= cut)
        .map(|(r, v)| (r.ln(), v.abs()))
        .collect();
    if pts.len() < 2 || pts.iter().any(|(_, v)| !(*v > 0.0) || !v.is_finite()) {
        return None;
    }
    let pts: Vec<(f64, f64)> = pts.into_iter().map(|(x, v)| (x, v.ln())).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Some(sxy / sxx)
}

/// Evaluates the initial regularity norms of `state` with exponent `q` in
/// `(3, 6]`.
pub fn validate_initial_data(
    state: &FluidState,
    params: &ModelParams,
    grid: &RadialGrid,
    q: f64,
) -> Result<InitialDataReport, SolverError> {
    if !(q > 3.0 && q <= 6.0) {
        return Err(SolverError::Config(format!(
            "validation exponent q = {q} must lie in (3, 6]"
        )));
    }
    let m = params.m();
    let r = grid.nodes();
    let rm = grid.powers(m);
    let half = grid.powers(0.5 * m);
    let n = grid.len();

    let mut norms = Vec::new();
    // integral norm (int integrand)^(1/p), with the integrand already weighted
    let mut integral = |name: &'static str, integrand: Vec<f64>, p: f64| {
        let value = grid.weighted_integral(&integrand, 0.0).powf(1.0 / p);
        let slope = tail_slope(grid, &integrand);
        norms.push(NormEntry {
            name,
            value,
            finite: value.is_finite(),
            tail_slope: slope,
            tail_flag: slope.is_some_and(|s| s >= -1.0),
        });
    };
    let squared = |f: &[f64]| -> Vec<f64> { (0..n).map(|i| f[i] * f[i]).collect() };
    let weighted_sq = |f: &[f64]| -> Vec<f64> { (0..n).map(|i| rm[i] * f[i] * f[i]).collect() };

    integral("mass", (0..n).map(|i| rm[i] * state.rho[i]).collect(), 1.0);

    let head: Vec<f64> = (0..n)
        .map(|i| half[i] * state.rho[i].powf(params.gamma - 1.0))
        .collect();
    let head_r = grid.ddr(&head);
    let head_rr = grid.d2dr2(&head);
    integral("rho_gm1_l2", squared(&head), 2.0);
    integral("rho_gm1_r_l2", squared(&head_r), 2.0);
    integral("rho_gm1_rr_l2", squared(&head_rr), 2.0);

    let psi = &state.psi;
    integral("psi_lq", (0..n).map(|i| rm[i] * psi[i].abs().powf(q)).collect(), q);
    let psi_over_r: Vec<f64> = (0..n).map(|i| psi[i] / r[i]).collect();
    integral("psi_over_r_l2", weighted_sq(&psi_over_r), 2.0);
    integral("psi_r_l2", weighted_sq(&grid.ddr(psi)), 2.0);

    let u_r = grid.ddr(&state.u);
    let u_rr = grid.d2dr2(&state.u);
    integral("u_l2", weighted_sq(&state.u), 2.0);
    integral("u_r_l2", weighted_sq(&u_r), 2.0);
    integral("u_rr_l2", weighted_sq(&u_rr), 2.0);
    integral(
        "sqrt_rho_u_l2",
        (0..n).map(|i| rm[i] * state.rho[i] * state.u[i] * state.u[i]).collect(),
        2.0,
    );

    let psi_sup = sup_norm(psi);
    norms.push(NormEntry {
        name: "psi_sup",
        value: psi_sup,
        finite: psi_sup.is_finite(),
        tail_slope: None,
        tail_flag: false,
    });

    let sigma_estimate = tail_slope(grid, &state.rho).map_or(f64::INFINITY, |s| -0.5 * s);
    let decay_ok = sigma_estimate > 0.5 * f64::from(params.dim);

    let mut warnings = Vec::new();
    let truncated = state.rho[n - 1] * grid.r_max().powf(m);
    if truncated > TAIL_MASS_WARNING {
        warnings.push(format!(
            "rho_0(R) R^m = {truncated:.3e} exceeds {TAIL_MASS_WARNING:e}; mass beyond R is not represented"
        ));
    }
    warnings.push(format!(
        "(ln rho_0)_r is bounded by {psi_sup:.6e} on [a, R] only; behaviour beyond R is not checked"
    ));

    Ok(InitialDataReport {
        q,
        norms,
        sigma_estimate,
        decay_ok,
        warnings,
    })
}
