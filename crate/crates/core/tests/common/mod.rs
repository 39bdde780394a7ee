//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use bdflow::characteristics::SolutionHistory;
use bdflow::config::{Resolved, RunConfig};
use bdflow::solver::{Evolution, FluidState, Solver, SolverConfig};
use bdflow::RadialGrid;

/// The default experiment with dotted-key overrides applied.
pub fn config(overrides: &[&str]) -> RunConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    RunConfig::with_overrides("", &o).expect("valid overrides")
}

pub fn resolved(overrides: &[&str]) -> Resolved {
    config(overrides).resolve().expect("config resolves")
}

/// Evolves the resolved problem on `n` nodes with a fixed step, recording
/// every `record_every` steps.
pub fn evolve_fixed(res: &Resolved, n: usize, dt: f64, t_final: f64, record_every: usize) -> (RadialGrid, Evolution) {
    let grid = RadialGrid::new(res.grid.a(), res.grid.r_max(), n).unwrap();
    let state0 = res.init.build(&grid, &res.params).unwrap();
    let cfg = SolverConfig {
        fixed_dt: Some(dt),
        ..res.solver.clone()
    };
    let solver = Solver::new(&grid, res.params, cfg).unwrap();
    let ev = solver.evolve(state0, t_final, record_every, &mut ()).unwrap();
    (grid, ev)
}

/// Same as [`evolve_fixed`] but keeps the full solution history.
pub fn evolve_with_history(
    res: &Resolved,
    n: usize,
    dt: f64,
    t_final: f64,
) -> (RadialGrid, Evolution, SolutionHistory) {
    let grid = RadialGrid::new(res.grid.a(), res.grid.r_max(), n).unwrap();
    let state0 = res.init.build(&grid, &res.params).unwrap();
    let cfg = SolverConfig {
        fixed_dt: Some(dt),
        ..res.solver.clone()
    };
    let solver = Solver::new(&grid, res.params, cfg).unwrap();
    let mut history = SolutionHistory::new(grid.clone(), res.params);
    let ev = solver.evolve(state0, t_final, 10, &mut history).unwrap();
    (grid, ev, history)
}

/// Composite Simpson rule of `f(r) r^m` on `[a, b]` with `2k` panels.
pub fn simpson(f: impl Fn(f64) -> f64, a: f64, b: f64, m: f64, k: usize) -> f64 {
    let n = 2 * k;
    let h = (b - a) / n as f64;
    let g = |r: f64| f(r) * r.powf(m);
    let mut s = g(a) + g(b);
    for i in 1..n {
        s += if i % 2 == 1 { 4.0 } else { 2.0 } * g(a + i as f64 * h);
    }
    s * h / 3.0
}

/// Weighted L2 distance of `(rho, u)` between a coarse state and the fine
/// state injected onto its nodes.
pub fn injected_pair_distance(coarse: &RadialGrid, c: &FluidState, f: &FluidState, m: f64) -> f64 {
    let dr: Vec<f64> = (0..coarse.len()).map(|i| f.rho[2 * i] - c.rho[i]).collect();
    let du: Vec<f64> = (0..coarse.len()).map(|i| f.u[2 * i] - c.u[i]).collect();
    let a = coarse.weighted_norm(&dr, m, 2.0).unwrap();
    let b = coarse.weighted_norm(&du, m, 2.0).unwrap();
    a.hypot(b)
}

pub fn abs_sum(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}
