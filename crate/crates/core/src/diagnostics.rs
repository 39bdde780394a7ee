//! Discrete versions of the a priori functionals: mass, energy, BD entropy,
//! their dissipation rates, sup-bounds and the Gronwall majorant of the
//! effective velocity.
//!
//! Time integrals (dissipation, boundary work, `|rho^(gamma-1) u|_inf`) are
//! accumulated every step with the trapezoidal rule, independently of the
//! record cadence.

use std::io::{self, Write};

use thiserror::Error;

use crate::grid::{sup_norm, RadialGrid};
use crate::model::ModelParams;
use crate::solver::{FluidState, SolverError};

/// Exponent of the `|rho^iota u|_inf` time integral.
pub const IOTA: f64 = 0.75;

/// Exponent `q` used for the `|r^(m/q) psi|_q` regularity norm.
pub const PSI_Q: f64 = 4.0;

pub const CSV_COLUMNS: [&str; 12] = [
    "t",
    "mass",
    "energy",
    "energy_dissipation_rate",
    "bd_entropy",
    "bd_dissipation_rate",
    "sup_rho",
    "sup_v",
    "sup_psi",
    "gronwall_rhs",
    "boundary_flux_cum",
    "psi_consistency",
];

#[derive(Debug, Error)]
pub enum DiagnosticsError {
    #[error("velocity moment exponent {0} must lie in [2, 64]")]
    BadMoment(f64),
    #[error("diagnostics CSV line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Norms from the regularity class of the solution, reported for
/// finiteness and trend only.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RegularityNorms {
    /// `|r^(m/2) u|_2`
    pub u_l2: f64,
    pub u_r_l2: f64,
    pub u_rr_l2: f64,
    /// `|r^(m/2) rho^(gamma-1)|_{H^2}` with derivatives taken of the
    /// weighted function.
    pub rho_gm1_h2: f64,
    /// `|r^(m/q) psi|_q` with `q = PSI_Q`.
    pub psi_lq: f64,
    /// `|r^(m/2) r^-1 psi|_2`
    pub psi_over_r_l2: f64,
    pub psi_r_l2: f64,
    /// `|r^(m/2) u_t|_2` from a backward difference; zero without history.
    pub u_t_l2: f64,
    /// `t^(1/2) |r^(m/2) u_tr|_2`
    pub t_half_u_tr_l2: f64,
    /// `(int r^m rho |u|^4 dr)^(1/4)`
    pub velocity_moment_4: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosticsRecord {
    pub t: f64,
    pub mass: f64,
    pub energy: f64,
    pub energy_dissipation_rate: f64,
    pub bd_entropy: f64,
    pub bd_dissipation_rate: f64,
    pub sup_rho: f64,
    pub sup_v: f64,
    pub sup_psi: f64,
    pub gronwall_rhs: f64,
    pub boundary_flux_cum: f64,
    pub psi_consistency: f64,
    /// `int_0^t` of the energy dissipation rate.
    pub energy_dissipation_cum: f64,
    pub bd_dissipation_cum: f64,
    /// `int_0^t [energy flux]_a^R`; vanishes while `u = 0` at both ends.
    pub energy_boundary_work_cum: f64,
    pub bd_boundary_work_cum: f64,
    /// `int_0^t |rho^iota u|_inf`.
    pub iota_velocity_cum: f64,
    pub regularity: RegularityNorms,
}

impl DiagnosticsRecord {
    pub fn csv_values(&self) -> [f64; 12] {
        [
            self.t,
            self.mass,
            self.energy,
            self.energy_dissipation_rate,
            self.bd_entropy,
            self.bd_dissipation_rate,
            self.sup_rho,
            self.sup_v,
            self.sup_psi,
            self.gronwall_rhs,
            self.boundary_flux_cum,
            self.psi_consistency,
        ]
    }

    /// Bitwise equality over every stored value.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        let bits = |r: &Self| {
            let g = r.regularity;
            let mut v: Vec<u64> = r.csv_values().iter().map(|x| x.to_bits()).collect();
            v.extend(
                [
                    r.energy_dissipation_cum,
                    r.bd_dissipation_cum,
                    r.energy_boundary_work_cum,
                    r.bd_boundary_work_cum,
                    r.iota_velocity_cum,
                    g.u_l2,
                    g.u_r_l2,
                    g.u_rr_l2,
                    g.rho_gm1_h2,
                    g.psi_lq,
                    g.psi_over_r_l2,
                    g.psi_r_l2,
                    g.u_t_l2,
                    g.t_half_u_tr_l2,
                    g.velocity_moment_4,
                ]
                .iter()
                .map(|x| x.to_bits()),
            );
            v
        };
        bits(self) == bits(other)
    }
}

/// Instantaneous rates integrated in time by the accumulators.
#[derive(Debug, Clone, Copy)]
struct Rates {
    energy_dissipation: f64,
    bd_dissipation: f64,
    energy_flux: f64,
    bd_flux: f64,
    sup_rho_gm1_u: f64,
    sup_rho_iota_u: f64,
}

/// Running time integrals for one run. Not shared between runs.
#[derive(Debug, Clone)]
pub struct Accumulators<'a> {
    grid: &'a RadialGrid,
    params: ModelParams,
    r_m: Vec<f64>,
    v0_sup: f64,
    rates: Rates,
    energy_dissipation_cum: f64,
    bd_dissipation_cum: f64,
    energy_work_cum: f64,
    bd_work_cum: f64,
    boundary_flux_cum: f64,
    gronwall_integral: f64,
    iota_integral: f64,
    previous: Option<(f64, Vec<f64>)>,
}

impl<'a> Accumulators<'a> {
    pub fn new(grid: &'a RadialGrid, params: &ModelParams, initial: &FluidState) -> Result<Self, SolverError> {
        let r_m = grid.powers(params.m());
        let mut acc = Self {
            grid,
            params: *params,
            r_m,
            v0_sup: sup_norm(&initial.v),
            rates: Rates {
                energy_dissipation: 0.0,
                bd_dissipation: 0.0,
                energy_flux: 0.0,
                bd_flux: 0.0,
                sup_rho_gm1_u: 0.0,
                sup_rho_iota_u: 0.0,
            },
            energy_dissipation_cum: 0.0,
            bd_dissipation_cum: 0.0,
            energy_work_cum: 0.0,
            bd_work_cum: 0.0,
            boundary_flux_cum: 0.0,
            gronwall_integral: 0.0,
            iota_integral: 0.0,
            previous: None,
        };
        acc.rates = acc.rates_of(initial);
        Ok(acc)
    }

    pub fn initial_v_sup(&self) -> f64 {
        self.v0_sup
    }

    /// Adds the contribution of the step `from -> to`.
    pub fn advance(&mut self, from: &FluidState, to: &FluidState, boundary_outflow: f64) -> Result<(), SolverError> {
        let dt = to.t - from.t;
        let old = self.rates;
        let new = self.rates_of(to);
        let trap = |a: f64, b: f64| 0.5 * dt * (a + b);
        self.energy_dissipation_cum += trap(old.energy_dissipation, new.energy_dissipation);
        self.bd_dissipation_cum += trap(old.bd_dissipation, new.bd_dissipation);
        self.energy_work_cum += trap(old.energy_flux, new.energy_flux);
        self.bd_work_cum += trap(old.bd_flux, new.bd_flux);
        self.gronwall_integral += trap(old.sup_rho_gm1_u, new.sup_rho_gm1_u);
        self.iota_integral += trap(old.sup_rho_iota_u, new.sup_rho_iota_u);
        self.boundary_flux_cum += boundary_outflow;
        self.rates = new;
        self.previous = Some((from.t, from.u.clone()));
        Ok(())
    }

    fn rates_of(&self, s: &FluidState) -> Rates {
        let g = self.grid;
        let p = &self.params;
        let m = p.m();
        let r = g.nodes();
        let n = g.len();
        let two_alpha = 2.0 * p.alpha;
        let u_r = g.ddr(&s.u);
        let rho_r = g.ddr(&s.rho);

        let visc: Vec<f64> = (0..n)
            .map(|i| {
                two_alpha * self.r_m[i] * s.rho[i] * u_r[i] * u_r[i]
                    + two_alpha * m * self.r_m[i] / (r[i] * r[i]) * s.rho[i] * s.u[i] * s.u[i]
            })
            .collect();
        let bd: Vec<f64> = (0..n)
            .map(|i| s.rho[i].powf(p.gamma - 2.0) * rho_r[i] * rho_r[i])
            .collect();
        let bd_rate = 2.0 * p.a_entropy * p.alpha * p.gamma * g.weighted_integral(&bd, m);

        let enthalpy = p.a_entropy * p.gamma / (p.gamma - 1.0);
        let energy_flux = |i: usize| {
            let (rho, u) = (s.rho[i], s.u[i]);
            self.r_m[i]
                * (0.5 * rho * u * u * u + enthalpy * rho.powf(p.gamma) * u
                    - two_alpha * rho * u * (u_r[i] + m * u / r[i]))
                + two_alpha * m * self.r_m[i] / r[i] * rho * u * u
        };
        let bd_flux = |i: usize| {
            let (rho, u, v) = (s.rho[i], s.u[i], s.v[i]);
            self.r_m[i] * (0.5 * rho * u * v * v + enthalpy * rho.powf(p.gamma) * u)
        };

        let mut sup_gm1: f64 = 0.0;
        let mut sup_iota: f64 = 0.0;
        for (rho, u) in s.rho.iter().zip(&s.u) {
            sup_gm1 = sup_gm1.max((rho.powf(p.gamma - 1.0) * u).abs());
            sup_iota = sup_iota.max((rho.powf(IOTA) * u).abs());
        }
        Rates {
            energy_dissipation: g.weighted_integral(&visc, 0.0),
            bd_dissipation: bd_rate,
            energy_flux: energy_flux(n - 1) - energy_flux(0),
            bd_flux: bd_flux(n - 1) - bd_flux(0),
            sup_rho_gm1_u: sup_gm1,
            sup_rho_iota_u: sup_iota,
        }
    }

    /// Evaluates every diagnostic on `state`. The rates are those of the
    /// most recently advanced state, so `state` must be that state (or the
    /// initial one before any step).
    pub fn capture(&self, state: &FluidState) -> Result<DiagnosticsRecord, SolverError> {
        let g = self.grid;
        let p = &self.params;
        let m = p.m();
        let n = g.len();
        let kinetic: Vec<f64> = (0..n).map(|i| 0.5 * state.rho[i] * state.u[i] * state.u[i]).collect();
        let internal: Vec<f64> = state.rho.iter().map(|&x| p.internal_energy(x)).collect();
        let bd_kinetic: Vec<f64> = (0..n).map(|i| 0.5 * state.rho[i] * state.v[i] * state.v[i]).collect();
        let internal_total = g.weighted_integral(&internal, m);

        Ok(DiagnosticsRecord {
            t: state.t,
            mass: g.weighted_integral(&state.rho, m),
            energy: g.weighted_integral(&kinetic, m) + internal_total,
            energy_dissipation_rate: self.rates.energy_dissipation,
            bd_entropy: g.weighted_integral(&bd_kinetic, m) + internal_total,
            bd_dissipation_rate: self.rates.bd_dissipation,
            sup_rho: sup_norm(&state.rho),
            sup_v: sup_norm(&state.v),
            sup_psi: sup_norm(&state.psi),
            gronwall_rhs: self.v0_sup + p.damping_coefficient() * self.gronwall_integral,
            boundary_flux_cum: self.boundary_flux_cum,
            psi_consistency: psi_consistency(g, p, state),
            energy_dissipation_cum: self.energy_dissipation_cum,
            bd_dissipation_cum: self.bd_dissipation_cum,
            energy_boundary_work_cum: self.energy_work_cum,
            bd_boundary_work_cum: self.bd_work_cum,
            iota_velocity_cum: self.iota_integral,
            regularity: self.regularity(state),
        })
    }

    fn regularity(&self, s: &FluidState) -> RegularityNorms {
        let g = self.grid;
        let p = &self.params;
        let m = p.m();
        let l2 = |f: &[f64], k: f64| g.weighted_norm(f, k, 2.0).expect("p = 2");
        let u_r = g.ddr(&s.u);
        let u_rr = g.d2dr2(&s.u);
        let half = g.powers(0.5 * m);
        let weighted: Vec<f64> = s
            .rho
            .iter()
            .zip(&half)
            .map(|(rho, w)| w * rho.powf(p.gamma - 1.0))
            .collect();
        let rho_gm1_h2 =
            (l2(&weighted, 0.0).powi(2) + l2(&g.ddr(&weighted), 0.0).powi(2) + l2(&g.d2dr2(&weighted), 0.0).powi(2))
                .sqrt();
        let psi_over_r: Vec<f64> = s.psi.iter().zip(g.nodes()).map(|(p, r)| p / r).collect();

        let (u_t_l2, t_half_u_tr_l2) = match &self.previous {
            Some((t_prev, u_prev)) if s.t > *t_prev => {
                let dt = s.t - t_prev;
                let u_t: Vec<f64> = s.u.iter().zip(u_prev).map(|(a, b)| (a - b) / dt).collect();
                (l2(&u_t, m), s.t.sqrt() * l2(&g.ddr(&u_t), m))
            }
            _ => (0.0, 0.0),
        };
        RegularityNorms {
            u_l2: l2(&s.u, m),
            u_r_l2: l2(&u_r, m),
            u_rr_l2: l2(&u_rr, m),
            rho_gm1_h2,
            psi_lq: g.weighted_norm(&s.psi, m, PSI_Q).expect("q >= 1"),
            psi_over_r_l2: l2(&psi_over_r, m),
            psi_r_l2: l2(&g.ddr(&s.psi), m),
            u_t_l2,
            t_half_u_tr_l2,
            velocity_moment_4: moment(g, m, s, 4.0),
        }
    }
}

/// `sup |psi - (ln phi)_r / (gamma - 1)|`. Falls back to `ln rho` when the
/// pressure is switched off and `phi` vanishes.
pub fn psi_consistency(grid: &RadialGrid, params: &ModelParams, state: &FluidState) -> f64 {
    let reference = if state.phi.iter().all(|&x| x > 0.0) {
        let ln_phi: Vec<f64> = state.phi.iter().map(|x| x.ln()).collect();
        grid.ddr(&ln_phi)
            .into_iter()
            .map(|d| d / (params.gamma - 1.0))
            .collect::<Vec<_>>()
    } else {
        let ln_rho: Vec<f64> = state.rho.iter().map(|x| x.ln()).collect();
        grid.ddr(&ln_rho)
    };
    state
        .psi
        .iter()
        .zip(&reference)
        .fold(0.0, |acc: f64, (a, b)| acc.max((a - b).abs()))
}

fn moment(grid: &RadialGrid, m: f64, s: &FluidState, q: f64) -> f64 {
    let f: Vec<f64> = s.rho.iter().zip(&s.u).map(|(rho, u)| rho * u.abs().powf(q)).collect();
    grid.weighted_integral(&f, m).powf(1.0 / q)
}

/// `(int r^m rho |u|^q dr)^(1/q)` for `q` in `[2, 64]`.
pub fn weighted_velocity_moment(
    state: &FluidState,
    params: &ModelParams,
    grid: &RadialGrid,
    q: f64,
) -> Result<f64, DiagnosticsError> {
    if !(2.0..=64.0).contains(&q) {
        return Err(DiagnosticsError::BadMoment(q));
    }
    Ok(moment(grid, params.m(), state, q))
}

/// Per-interval residuals of an integrated balance law.
#[derive(Debug, Clone, PartialEq)]
pub struct IdentityResiduals {
    pub per_interval: Vec<f64>,
    pub max_abs: f64,
    /// Sum over all intervals: `F(T) - F(0) + int_0^T (D + boundary work)`.
    pub total: f64,
}

fn identity_residual(
    series: &[DiagnosticsRecord],
    f: impl Fn(&DiagnosticsRecord) -> (f64, f64, f64),
) -> IdentityResiduals {
    let per_interval: Vec<f64> = series
        .windows(2)
        .map(|w| {
            let (e0, d0, b0) = f(&w[0]);
            let (e1, d1, b1) = f(&w[1]);
            (e1 - e0) + (d1 - d0) + (b1 - b0)
        })
        .collect();
    let max_abs = per_interval.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    let total = match (series.first(), series.last()) {
        (Some(a), Some(b)) if series.len() >= 2 => {
            let (e0, d0, b0) = f(a);
            let (e1, d1, b1) = f(b);
            (e1 - e0) + (d1 - d0) + (b1 - b0)
        }
        _ => 0.0,
    };
    IdentityResiduals {
        per_interval,
        max_abs,
        total,
    }
}

/// Residuals of `E(t1) - E(t0) + int D + boundary work = 0`.
pub fn energy_identity_residual(series: &[DiagnosticsRecord]) -> IdentityResiduals {
    identity_residual(series, |r| {
        (r.energy, r.energy_dissipation_cum, r.energy_boundary_work_cum)
    })
}

/// Residuals of the BD-entropy balance.
pub fn bd_identity_residual(series: &[DiagnosticsRecord]) -> IdentityResiduals {
    identity_residual(series, |r| (r.bd_entropy, r.bd_dissipation_cum, r.bd_boundary_work_cum))
}

#[derive(Debug, Clone, PartialEq)]
pub struct VBoundReport {
    pub tolerance: f64,
    /// Smallest `gronwall_rhs + tol - sup_v` over the series.
    pub worst_margin: f64,
    /// `(t, margin)` for every record with negative margin.
    pub violations: Vec<(f64, f64)>,
}

impl VBoundReport {
    pub fn holds(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks `sup_v(t) <= gronwall_rhs(t) + tol` at every record. The default
/// tolerance is `1e-2 |v_0|_inf`.
pub fn v_bound_check(series: &[DiagnosticsRecord], tol: Option<f64>) -> VBoundReport {
    let v0 = series.first().map_or(0.0, |r| r.sup_v);
    let tolerance = tol.unwrap_or(1e-2 * v0);
    let mut worst_margin = f64::INFINITY;
    let mut violations = Vec::new();
    for r in series {
        let margin = r.gronwall_rhs + tolerance - r.sup_v;
        worst_margin = worst_margin.min(margin);
        if margin < 0.0 {
            violations.push((r.t, margin));
        }
    }
    VBoundReport {
        tolerance,
        worst_margin,
        violations,
    }
}

/// `max |mass(t) + boundary_flux_cum(t) - mass(0)| / mass(0)`.
pub fn mass_ledger_defect(series: &[DiagnosticsRecord]) -> f64 {
    let Some(first) = series.first() else {
        return 0.0;
    };
    series
        .iter()
        .map(|r| (r.mass + r.boundary_flux_cum - first.mass).abs() / first.mass)
        .fold(0.0, f64::max)
}

pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes the diagnostics CSV: header row and one row per record.
pub fn emit_series<W: Write>(series: &[DiagnosticsRecord], sink: &mut W) -> io::Result<()> {
    writeln!(sink, "{}", CSV_COLUMNS.join(","))?;
    for r in series {
        let row: Vec<String> = r.csv_values().iter().map(|&x| format_value(x)).collect();
        writeln!(sink, "{}", row.join(","))?;
    }
    sink.flush()
}

/// Parses a diagnostics CSV written by [`emit_series`]. Lines starting with
/// `#` are skipped.
pub fn parse_series(text: &str) -> Result<Vec<[f64; 12]>, DiagnosticsError> {
    let mut rows = Vec::new();
    let mut header_seen = false;
    for (k, line) in text.lines().enumerate() {
        if line.starts_with('#') || line.trim().is_empty() {
            continue;
        }
        if !header_seen {
            if line != CSV_COLUMNS.join(",") {
                return Err(DiagnosticsError::Parse {
                    line: k + 1,
                    reason: "unexpected header".into(),
                });
            }
            header_seen = true;
            continue;
        }
        let mut row = [0.0; 12];
        let mut count = 0;
        for (j, cell) in line.split(',').enumerate() {
            if j >= 12 {
                count = j + 1;
                break;
            }
            row[j] = cell.trim().parse().map_err(|e| DiagnosticsError::Parse {
                line: k + 1,
                reason: format!("column {}: {e}", CSV_COLUMNS[j]),
            })?;
            count = j + 1;
        }
        if count != 12 {
            return Err(DiagnosticsError::Parse {
                line: k + 1,
                reason: format!("expected 12 columns, found {count}"),
            });
        }
        rows.push(row);
    }
    Ok(rows)
}
