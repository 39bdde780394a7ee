//! Effective velocity along particle paths.
//!
//! The effective velocity obeys a damped transport equation
//! `v_t + u v_r + k rho^(gamma-1) (v - u) = 0` with `k = A gamma / (2 alpha)`.
//! Along `dy/dt = u(t, y)` this integrates in closed form, which gives an
//! evaluation of `v` that never differentiates the density. Comparing it
//! with the grid value `u + 2 alpha rho_r / rho` checks the solver.

use thiserror::Error;

use crate::grid::{GridError, RadialGrid};
use crate::model::ModelParams;
use crate::solver::{FluidState, StepObserver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CharacteristicError {
    #[error("solution history is empty")]
    EmptyHistory,
    #[error("time {t} is outside the recorded history [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },
    #[error("path does not reach t = {0}")]
    PathTooShort(f64),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Snapshots `(t, rho, u)` of a run, interpolated linearly in time and
/// space.
#[derive(Debug, Clone)]
pub struct SolutionHistory {
    grid: RadialGrid,
    params: ModelParams,
    times: Vec<f64>,
    rho: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    v0: Vec<f64>,
}

impl SolutionHistory {
    pub fn new(grid: RadialGrid, params: ModelParams) -> Self {
        Self {
            grid,
            params,
            times: Vec::new(),
            rho: Vec::new(),
            u: Vec::new(),
            v0: Vec::new(),
        }
    }

    /// Appends a snapshot. Snapshots must arrive in increasing time; the
    /// first one also fixes the initial effective velocity.
    pub fn push(&mut self, t: f64, rho: Vec<f64>, u: Vec<f64>, v: &[f64]) {
        if let Some(&last) = self.times.last() {
            assert!(t > last, "history times must increase ({t} after {last})");
        } else {
            self.v0 = v.to_vec();
        }
        self.times.push(t);
        self.rho.push(rho);
        self.u.push(u);
    }

    pub fn grid(&self) -> &RadialGrid {
        &self.grid
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn start(&self) -> Option<f64> {
        self.times.first().copied()
    }

    pub fn end(&self) -> Option<f64> {
        self.times.last().copied()
    }

    fn bracket(&self, t: f64) -> Result<(usize, f64), CharacteristicError> {
        let (start, end) = match (self.start(), self.end()) {
            (Some(s), Some(e)) => (s, e),
            _ => return Err(CharacteristicError::EmptyHistory),
        };
        let slack = 1e-12 * (1.0 + end.abs());
        if t < start - slack || t > end + slack {
            return Err(CharacteristicError::TimeOutOfRange { t, start, end });
        }
        if self.times.len() == 1 {
            return Ok((0, 0.0));
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let w = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        Ok((k, w))
    }

    fn bilinear(&self, field: &[Vec<f64>], t: f64, r: f64) -> Result<f64, CharacteristicError> {
        let (k, w) = self.bracket(t)?;
        let lo = self.grid.interpolate(&field[k], r)?;
        if w == 0.0 {
            return Ok(lo);
        }
        let hi = self.grid.interpolate(&field[k + 1], r)?;
        Ok((1.0 - w) * lo + w * hi)
    }

    pub fn velocity(&self, t: f64, r: f64) -> Result<f64, CharacteristicError> {
        self.bilinear(&self.u, t, r)
    }

    pub fn density(&self, t: f64, r: f64) -> Result<f64, CharacteristicError> {
        self.bilinear(&self.rho, t, r)
    }

    /// Initial effective velocity at `r`.
    pub fn initial_v(&self, r: f64) -> Result<f64, CharacteristicError> {
        if self.v0.is_empty() {
            return Err(CharacteristicError::EmptyHistory);
        }
        Ok(self.grid.interpolate(&self.v0, r)?)
    }

    /// Damping rate `A gamma / (2 alpha) rho^(gamma-1)` at `(t, r)`.
    pub fn damping_rate(&self, t: f64, r: f64) -> Result<f64, CharacteristicError> {
        let rho = self.density(t, r)?;
        Ok(self.params.damping_coefficient() * rho.max(0.0).powf(self.params.gamma - 1.0))
    }
}

impl StepObserver for SolutionHistory {
    fn observe(&mut self, state: &FluidState) {
        self.push(state.t, state.rho.clone(), state.u.clone(), &state.v);
    }
}

/// A particle path `dy/dt = u(t, y)` launched at `r0` at the start of the
/// history.
#[derive(Debug, Clone, PartialEq)]
pub struct CharacteristicPath {
    pub r0: f64,
    pub times: Vec<f64>,
    pub positions: Vec<f64>,
    /// Closed-form effective velocity at each path time.
    pub v_values: Vec<f64>,
    /// Cumulative damping integral at each path time.
    damping_integral: Vec<f64>,
    /// The path left `[a, R]` and was truncated at its last interior point.
    pub exited: bool,
}

impl CharacteristicPath {
    pub fn end_time(&self) -> f64 {
        *self.times.last().expect("paths hold at least the launch point")
    }

    pub fn end_position(&self) -> f64 {
        *self.positions.last().expect("paths hold at least the launch point")
    }

    fn locate(&self, t: f64) -> Result<(usize, f64), CharacteristicError> {
        let end = self.end_time();
        if t > end + 1e-12 * (1.0 + end.abs()) || t < self.times[0] {
            return Err(CharacteristicError::PathTooShort(t));
        }
        if self.times.len() == 1 {
            return Ok((0, 0.0));
        }
        let k = self.times.partition_point(|&s| s <= t).clamp(1, self.times.len() - 1) - 1;
        let w = ((t - self.times[k]) / (self.times[k + 1] - self.times[k])).clamp(0.0, 1.0);
        Ok((k, w))
    }

    fn lerp(values: &[f64], k: usize, w: f64) -> f64 {
        if w == 0.0 {
            values[k]
        } else {
            (1.0 - w) * values[k] + w * values[k + 1]
        }
    }

    pub fn position_at(&self, t: f64) -> Result<f64, CharacteristicError> {
        let (k, w) = self.locate(t)?;
        Ok(Self::lerp(&self.positions, k, w))
    }
}

/// Integrates `dy/dt = u(t, y)` with RK4, `substeps` steps per history
/// interval, up to `t_final`.
pub fn trace_characteristic(
    history: &SolutionHistory,
    r0: f64,
    t_final: f64,
    substeps: usize,
) -> Result<CharacteristicPath, CharacteristicError> {
    let start = history.start().ok_or(CharacteristicError::EmptyHistory)?;
    let end = history.end().ok_or(CharacteristicError::EmptyHistory)?;
    if t_final > end + 1e-12 * (1.0 + end.abs()) || t_final < start {
        return Err(CharacteristicError::TimeOutOfRange { t: t_final, start, end });
    }
    history.grid.locate(r0)?;
    let substeps = substeps.max(1);

    let mut breakpoints: Vec<f64> = history.times.iter().copied().filter(|&t| t < t_final).collect();
    if breakpoints.is_empty() || breakpoints[breakpoints.len() - 1] < t_final {
        breakpoints.push(t_final);
    }

    let mut times = vec![breakpoints[0]];
    let mut positions = vec![r0];
    let mut exited = false;
    let u = |t: f64, y: f64| history.velocity(t, y);
    'outer: for w in breakpoints.windows(2) {
        let h = (w[1] - w[0]) / substeps as f64;
        let mut y = *positions.last().unwrap();
        for j in 0..substeps {
            let t = w[0] + j as f64 * h;
            let stage = || -> Result<f64, CharacteristicError> {
                let k1 = u(t, y)?;
                let k2 = u(t + 0.5 * h, y + 0.5 * h * k1)?;
                let k3 = u(t + 0.5 * h, y + 0.5 * h * k2)?;
                let k4 = u(t + h, y + h * k3)?;
                Ok(y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4))
            };
            match stage() {
                Ok(next) if next >= history.grid.a() && next <= history.grid.r_max() => y = next,
                Ok(_) | Err(CharacteristicError::Grid(GridError::OutOfRange(_))) => {
                    exited = true;
                    break 'outer;
                }
                Err(e) => return Err(e),
            }
        }
        times.push(w[1]);
        positions.push(y);
    }

    // Closed-form effective velocity along the path.
    let rates = times
        .iter()
        .zip(&positions)
        .map(|(&t, &y)| history.damping_rate(t, y))
        .collect::<Result<Vec<_>, _>>()?;
    let source = times
        .iter()
        .zip(&positions)
        .zip(&rates)
        .map(|((&t, &y), g)| Ok(g * history.velocity(t, y)?))
        .collect::<Result<Vec<_>, CharacteristicError>>()?;
    let v0 = history.initial_v(r0)?;
    let mut damping_integral = vec![0.0; times.len()];
    let mut source_integral = 0.0;
    let mut v_values = vec![v0; times.len()];
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        damping_integral[k] = damping_integral[k - 1] + 0.5 * dt * (rates[k - 1] + rates[k]);
        source_integral +=
            0.5 * dt * (source[k - 1] * damping_integral[k - 1].exp() + source[k] * damping_integral[k].exp());
        v_values[k] = (v0 + source_integral) * (-damping_integral[k]).exp();
    }

    Ok(CharacteristicPath {
        r0,
        times,
        positions,
        v_values,
        damping_integral,
        exited,
    })
}

/// `exp(-int_0^t A gamma / (2 alpha) rho^(gamma-1) ds)` along `path`.
pub fn damping_factor(path: &CharacteristicPath, t: f64) -> Result<f64, CharacteristicError> {
    let (k, w) = path.locate(t)?;
    Ok((-CharacteristicPath::lerp(&path.damping_integral, k, w)).exp())
}

/// Effective velocity at time `t` on the characteristic launched from `r0`.
pub fn v_closed_form(history: &SolutionHistory, r0: f64, t: f64, substeps: usize) -> Result<f64, CharacteristicError> {
    let path = trace_characteristic(history, r0, t, substeps)?;
    if path.exited {
        return Err(CharacteristicError::PathTooShort(t));
    }
    Ok(*path.v_values.last().unwrap())
}

/// `count` launch radii equispaced in `[a + 0.05 (R - a), a + 0.6 (R - a)]`.
pub fn default_launch_radii(grid: &RadialGrid, count: usize) -> Vec<f64> {
    let span = grid.r_max() - grid.a();
    let lo = grid.a() + 0.05 * span;
    let hi = grid.a() + 0.6 * span;
    if count == 1 {
        return vec![lo];
    }
    (0..count)
        .map(|i| lo + (hi - lo) * i as f64 / (count - 1) as f64)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathComparison {
    pub r0: f64,
    pub position: f64,
    pub v_closed: f64,
    pub v_grid: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossCheck {
    pub t: f64,
    pub paths: Vec<PathComparison>,
    pub exited: usize,
    pub max_gap: f64,
}

/// Compares the closed-form `v` at the end of the history with the grid
/// effective velocity of `state` interpolated at the path end points.
pub fn cross_check(
    history: &SolutionHistory,
    state: &FluidState,
    radii: &[f64],
    substeps: usize,
) -> Result<CrossCheck, CharacteristicError> {
    let t = state.t;
    let mut paths = Vec::with_capacity(radii.len());
    let mut exited = 0;
    for &r0 in radii {
        let path = trace_characteristic(history, r0, t, substeps)?;
        if path.exited {
            exited += 1;
            continue;
        }
        let y = path.end_position();
        paths.push(PathComparison {
            r0,
            position: y,
            v_closed: *path.v_values.last().unwrap(),
            v_grid: history.grid.interpolate(&state.v, y)?,
        });
    }
    let max_gap = paths.iter().fold(0.0, |m: f64, p| m.max((p.v_closed - p.v_grid).abs()));
    Ok(CrossCheck {
        t,
        paths,
        exited,
        max_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::adaptive_simpson;

    fn frozen_history(
        grid: &RadialGrid,
        params: ModelParams,
        rho: impl Fn(f64) -> f64,
        u: impl Fn(f64) -> f64,
        v0: impl Fn(f64) -> f64,
        dt: f64,
        steps: usize,
    ) -> SolutionHistory {
        let mut h = SolutionHistory::new(grid.clone(), params);
        let (rho, u, v0) = (grid.sample(rho), grid.sample(u), grid.sample(v0));
        for k in 0..=steps {
            h.push(k as f64 * dt, rho.clone(), u.clone(), &v0);
        }
        h
    }

    #[test]
    fn static_and_uniform_flows() {
        let g = RadialGrid::new(1.0, 10.0, 91).unwrap();
        let p = ModelParams::default();
        let h = frozen_history(&g, p, |_| 1.0, |_| 0.0, |_| 0.0, 0.1, 10);
        let path = trace_characteristic(&h, 3.3, 1.0, 2).unwrap();
        assert!(path.positions.iter().all(|&y| y == 3.3));
        assert!(!path.exited);

        let h = frozen_history(&g, p, |_| 1.0, |_| 0.7, |_| 0.0, 0.1, 10);
        let path = trace_characteristic(&h, 2.0, 1.0, 1).unwrap();
        for (t, y) in path.times.iter().zip(&path.positions) {
            assert!((y - (2.0 + 0.7 * t)).abs() < 1e-12);
        }
        assert!(path.times.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn linear_field_gives_exponential_path() {
        let g = RadialGrid::new(1.0, 10.0, 181).unwrap();
        let p = ModelParams::default();
        let h = frozen_history(&g, p, |_| 1.0, |r| r, |_| 0.0, 0.01, 100);
        let path = trace_characteristic(&h, 1.5, 1.0, 1).unwrap();
        for (t, y) in path.times.iter().zip(&path.positions) {
            assert!((y - 1.5 * t.exp()).abs() < 1e-8, "t={t}");
        }
    }

    #[test]
    fn leaving_the_domain_flags_exit() {
        let g = RadialGrid::new(1.0, 3.0, 41).unwrap();
        let p = ModelParams::default();
        let h = frozen_history(&g, p, |_| 1.0, |_| 2.0, |_| 0.0, 0.1, 20);
        let path = trace_characteristic(&h, 2.0, 2.0, 1).unwrap();
        assert!(path.exited);
        assert!(path.end_position() <= 3.0);
        assert!(path.end_time() < 2.0);
        assert!(v_closed_form(&h, 2.0, 2.0, 1).is_err());
    }

    #[test]
    fn damping_factor_constant_density() {
        let g = RadialGrid::new(1.0, 3.0, 41).unwrap();
        let p = ModelParams::default();
        let h = frozen_history(&g, p, |_| 1.0, |_| 0.0, |_| 1.0, 0.05, 20);
        let path = trace_characteristic(&h, 2.0, 1.0, 1).unwrap();
        let f = damping_factor(&path, 1.0).unwrap();
        assert!((f - (-1f64).exp()).abs() < 1e-12);
        assert_eq!(damping_factor(&path, 0.0).unwrap(), 1.0);
        // u = 0 removes the source: v = v0 * factor
        let v = v_closed_form(&h, 2.0, 1.0, 1).unwrap();
        assert!((v - (-1f64).exp()).abs() < 1e-12);

        let p0 = ModelParams::new(0.0, 2.0, 1.0, 3).unwrap();
        let h0 = frozen_history(&g, p0, |_| 1.0, |_| 0.3, |r| r, 0.05, 20);
        let path = trace_characteristic(&h0, 1.5, 1.0, 2).unwrap();
        assert!(path.v_values.iter().all(|&v| v == 1.5));
        assert_eq!(damping_factor(&path, 0.7).unwrap(), 1.0);
    }

    #[test]
    fn damping_integral_matches_quadrature_on_moving_path() {
        let g = RadialGrid::new(1.0, 20.0, 19001).unwrap();
        let p = ModelParams::default();
        let rho = |r: f64| 1.0 / (1.0 + r.powi(4));
        let c = 0.8;
        let h = frozen_history(&g, p, rho, |_| c, |_| 0.0, 1e-3, 1000);
        let path = trace_characteristic(&h, 1.5, 1.0, 1).unwrap();
        let want = adaptive_simpson(&|s: f64| rho(1.5 + c * s), 0.0, 1.0, 1e-13);
        let got = -damping_factor(&path, 1.0).unwrap().ln();
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert!(damping_factor(&path, 0.5).unwrap() < 1.0);
    }

    #[test]
    fn closed_form_respects_gronwall_majorant() {
        let g = RadialGrid::new(1.0, 20.0, 400).unwrap();
        let p = ModelParams::default();
        let h = frozen_history(
            &g,
            p,
            |r| 1.0 / (1.0 + r.powi(4)),
            |r| 0.3 * (r - 1.0) * (-(r - 1.0)).exp(),
            |r| -2.0 / r,
            0.01,
            50,
        );
        for r0 in default_launch_radii(&g, 16) {
            let path = trace_characteristic(&h, r0, 0.5, 2).unwrap();
            let v0 = h.initial_v(r0).unwrap().abs();
            let mut integral = 0.0;
            for k in 1..path.times.len() {
                let sup = |t: f64| {
                    g.nodes()
                        .iter()
                        .map(|&r| (h.damping_rate(t, r).unwrap() * h.velocity(t, r).unwrap()).abs())
                        .fold(0.0, f64::max)
                };
                integral += 0.5 * (path.times[k] - path.times[k - 1]) * (sup(path.times[k - 1]) + sup(path.times[k]));
                assert!(path.v_values[k].abs() <= v0 + integral + 1e-12);
            }
        }
    }

    #[test]
    fn launch_radii_default_range() {
        let g = RadialGrid::new(1.0, 21.0, 100).unwrap();
        let radii = default_launch_radii(&g, 16);
        assert_eq!(radii.len(), 16);
        assert!((radii[0] - 2.0).abs() < 1e-12);
        assert!((radii[15] - 13.0).abs() < 1e-12);
    }

    #[test]
    fn empty_history_is_an_error() {
        let g = RadialGrid::new(1.0, 3.0, 41).unwrap();
        let h = SolutionHistory::new(g, ModelParams::default());
        assert_eq!(
            trace_characteristic(&h, 2.0, 0.0, 1),
            Err(CharacteristicError::EmptyHistory)
        );
    }
}
