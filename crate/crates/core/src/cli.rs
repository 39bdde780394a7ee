//! Batch driver behind the `bdflow` binary: single runs, convergence
//! studies, the shallow-water equivalence check and the characteristic
//! cross-check, each writing CSV and text artifacts into one directory.
//!
//! Every file starts with the provenance line of the resolved config, and
//! nothing depends on wall-clock time, so identical configs produce
//! identical files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use log::info;
use thiserror::Error;

use crate::characteristics::{cross_check, default_launch_radii, CrossCheck, SolutionHistory};
use crate::config::{ConfigError, Resolved, RunConfig};
use crate::diagnostics::{
    bd_identity_residual, emit_series, energy_identity_residual, format_value, mass_ledger_defect, v_bound_check,
    DiagnosticsRecord,
};
use crate::grid::RadialGrid;
use crate::initdata::InitError;
use crate::model::{ShallowVariant, ViscousAssembly};
use crate::solver::{Evolution, FluidState, Formulation, Solver, SolverConfig, SolverError, StepObserver};
use crate::validation::{validate_initial_data, InitialDataReport};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration: {0}")]
    Config(#[from] ConfigError),
    #[error("initial data: {0}")]
    Init(#[from] InitError),
    #[error("{0}")]
    Step(#[from] SolverError),
    #[error("{0}")]
    Check(String),
    #[error("output: {0}")]
    Io(#[from] io::Error),
}

impl CliError {
    /// Process exit status: 2 configuration, 3 step failure, 4 failed
    /// invariant check, 1 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Init(_) => 2,
            CliError::Step(_) => 3,
            CliError::Check(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub validation: InitialDataReport,
    pub steps: usize,
    pub series: Vec<DiagnosticsRecord>,
    pub final_state: FluidState,
    pub characteristics: CrossCheck,
    pub checks: Vec<CheckOutcome>,
    pub files: Vec<PathBuf>,
}

impl RunReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failed_checks(&self) -> Vec<&'static str> {
        self.checks.iter().filter(|c| !c.passed).map(|c| c.name).collect()
    }
}

fn create(path: &Path, provenance: &str) -> io::Result<BufWriter<File>> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "{provenance}")?;
    Ok(w)
}

pub fn snapshot_name(t: f64) -> String {
    format!("snapshot_{t:.6}.csv")
}

pub fn write_snapshot<W: Write>(state: &FluidState, grid: &RadialGrid, sink: &mut W) -> io::Result<()> {
    writeln!(sink, "r,rho,u,phi,psi,v")?;
    for i in 0..grid.len() {
        let row = [
            grid.nodes()[i],
            state.rho[i],
            state.u[i],
            state.phi[i],
            state.psi[i],
            state.v[i],
        ];
        let cells: Vec<String> = row.iter().map(|&x| format_value(x)).collect();
        writeln!(sink, "{}", cells.join(","))?;
    }
    Ok(())
}

/// Keeps the solution history for the characteristic cross-check and
/// writes snapshots at the configured step cadence.
struct RunObserver<'a> {
    history: SolutionHistory,
    grid: &'a RadialGrid,
    dir: &'a Path,
    provenance: &'a str,
    every: usize,
    seen: usize,
    written: Vec<(f64, PathBuf)>,
    error: Option<io::Error>,
}

impl RunObserver<'_> {
    fn snapshot(&mut self, state: &FluidState) {
        if self.error.is_some() || self.written.last().is_some_and(|(t, _)| *t == state.t) {
            return;
        }
        let path = self.dir.join(snapshot_name(state.t));
        let result = create(&path, self.provenance).and_then(|mut w| {
            write_snapshot(state, self.grid, &mut w)?;
            w.flush()
        });
        match result {
            Ok(()) => self.written.push((state.t, path)),
            Err(e) => self.error = Some(e),
        }
    }
}

impl StepObserver for RunObserver<'_> {
    fn observe(&mut self, state: &FluidState) {
        self.history.observe(state);
        if self.seen == 0 || (self.every > 0 && self.seen.is_multiple_of(self.every)) {
            self.snapshot(state);
        }
        self.seen += 1;
    }
}

fn balance_check(
    name: &'static str,
    series: &[DiagnosticsRecord],
    tol: f64,
    pick: impl Fn(&DiagnosticsRecord) -> (f64, f64, f64),
) -> CheckOutcome {
    let (f0, _, _) = pick(&series[0]);
    let last = series.last().expect("series holds the initial record");
    let (f, d, w) = pick(last);
    let excess = (f + d + w - f0) / f0.abs().max(f64::MIN_POSITIVE);
    CheckOutcome {
        name,
        passed: excess <= tol,
        detail: format!("(F(T) + int D + boundary work - F(0)) / F(0) = {excess:.6e}, allowed {tol:e}"),
    }
}

/// Evolves the configured problem once and writes `diagnostics.csv`,
/// snapshots and `summary.txt` into `out`. Failed invariant checks are
/// reported in the result; only configuration and step failures are errors.
pub fn run(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let res = cfg.resolve()?;
    let provenance = cfg.provenance_line();
    fs::create_dir_all(out)?;
    let state0 = res.init.build(&res.grid, &res.params)?;
    let validation = validate_initial_data(&state0, &res.params, &res.grid, cfg.checks.validation_q)?;
    let v0_sup = crate::grid::sup_norm(&state0.v);

    let solver = Solver::new(&res.grid, res.params, res.solver.clone())?;
    let mut obs = RunObserver {
        history: SolutionHistory::new(res.grid.clone(), res.params),
        grid: &res.grid,
        dir: out,
        provenance: &provenance,
        every: cfg.output.snapshot_every,
        seen: 0,
        written: Vec::new(),
        error: None,
    };
    info!(
        "run: {} nodes, t_final = {}, {:?}",
        res.grid.len(),
        res.t_final,
        res.solver.formulation
    );
    let ev = solver.evolve(state0, res.t_final, res.record_every, &mut obs)?;
    obs.snapshot(&ev.final_state);
    if let Some(e) = obs.error.take() {
        return Err(e.into());
    }
    info!("run finished after {} steps", ev.steps);

    let radii = default_launch_radii(&res.grid, cfg.checks.paths.max(1));
    let characteristics = cross_check(&obs.history, &ev.final_state, &radii, cfg.checks.path_substeps)
        .map_err(|e| CliError::Check(format!("characteristics: {e}")))?;

    let mut checks = vec![CheckOutcome {
        name: "initial-data-finite",
        passed: validation.all_finite(),
        detail: format!(
            "all norms finite: {}; tail flags: {}",
            validation.all_finite(),
            validation.tail_flagged()
        ),
    }];
    if res.solver.formulation == Formulation::Conservative {
        let defect = mass_ledger_defect(&ev.series);
        checks.push(CheckOutcome {
            name: "mass-ledger",
            passed: defect <= cfg.checks.mass_tol,
            detail: format!(
                "max |M(t) + outflux - M(0)| / M(0) = {defect:.3e}, allowed {:e}",
                cfg.checks.mass_tol
            ),
        });
    }
    checks.push(balance_check(
        "energy-balance",
        &ev.series,
        cfg.checks.balance_tol,
        |r| (r.energy, r.energy_dissipation_cum, r.energy_boundary_work_cum),
    ));
    checks.push(balance_check(
        "bd-entropy-balance",
        &ev.series,
        cfg.checks.balance_tol,
        |r| (r.bd_entropy, r.bd_dissipation_cum, r.bd_boundary_work_cum),
    ));
    let vb = v_bound_check(&ev.series, None);
    checks.push(CheckOutcome {
        name: "v-bound",
        passed: vb.holds(),
        detail: format!(
            "worst margin {:.6e} with tolerance {:.3e}, {} violations",
            vb.worst_margin,
            vb.tolerance,
            vb.violations.len()
        ),
    });
    let path_allowed = cfg.checks.path_tol * v0_sup.max(1.0);
    checks.push(CheckOutcome {
        name: "characteristics",
        passed: characteristics.max_gap <= path_allowed,
        detail: format!(
            "max |v_closed - v_grid| = {:.6e} over {} paths ({} left the domain), allowed {:.3e}",
            characteristics.max_gap,
            characteristics.paths.len(),
            characteristics.exited,
            path_allowed
        ),
    });

    let mut files: Vec<PathBuf> = obs.written.iter().map(|(_, p)| p.clone()).collect();
    let diag_path = out.join("diagnostics.csv");
    let mut w = create(&diag_path, &provenance)?;
    emit_series(&ev.series, &mut w)?;
    files.push(diag_path);

    let summary_path = out.join("summary.txt");
    let mut s = String::new();
    let _ = writeln!(s, "{provenance}");
    let _ = writeln!(
        s,
        "run: formulation={:?} steps={} t_final={} records={} max_picard_iterations={}",
        res.solver.formulation,
        ev.steps,
        ev.final_state.t,
        ev.series.len(),
        ev.max_picard_iterations
    );
    let _ = write!(s, "{validation}");
    let _ = writeln!(s, "checks:");
    for c in &checks {
        let _ = writeln!(
            s,
            "  [{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    fs::write(&summary_path, s)?;
    files.push(summary_path);

    Ok(RunReport {
        validation,
        steps: ev.steps,
        series: ev.series,
        final_state: ev.final_state,
        characteristics,
        checks,
        files,
    })
}

/// Writes the per-path table of the characteristic cross-check.
pub fn characteristics_study(cfg: &RunConfig, out: &Path) -> Result<RunReport, CliError> {
    let report = run(cfg, out)?;
    let path = out.join("characteristics.csv");
    let mut w = create(&path, &cfg.provenance_line())?;
    writeln!(w, "r0,position,v_closed,v_grid,gap")?;
    for p in &report.characteristics.paths {
        let cells: Vec<String> = [p.r0, p.position, p.v_closed, p.v_grid, (p.v_closed - p.v_grid).abs()]
            .iter()
            .map(|&x| format_value(x))
            .collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    let mut report = report;
    report.files.push(path);
    Ok(report)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LevelResult {
    pub n: usize,
    pub dt: f64,
    pub steps: usize,
    /// Weighted L2 distance of `(rho, u)` to the previous level, by
    /// injection onto the coarser grid.
    pub diff_rho: Option<f64>,
    pub diff_u: Option<f64>,
    pub energy_residual: f64,
    pub bd_residual: f64,
    pub mass_defect: f64,
    pub psi_consistency: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrderReport {
    pub levels: Vec<LevelResult>,
}

fn order(prev: Option<f64>, cur: Option<f64>) -> Option<f64> {
    match (prev, cur) {
        (Some(a), Some(b)) if a > 0.0 && b > 0.0 => Some((a / b).log2()),
        _ => None,
    }
}

impl OrderReport {
    pub fn orders_rho(&self) -> Vec<Option<f64>> {
        self.levels
            .windows(2)
            .map(|w| order(w[0].diff_rho, w[1].diff_rho))
            .collect()
    }

    pub fn orders_u(&self) -> Vec<Option<f64>> {
        self.levels
            .windows(2)
            .map(|w| order(w[0].diff_u, w[1].diff_u))
            .collect()
    }

    pub fn write_csv<W: Write>(&self, provenance: &str, sink: &mut W) -> io::Result<()> {
        writeln!(sink, "{provenance}")?;
        writeln!(
            sink,
            "level,n,dt,steps,diff_rho,diff_u,order_rho,order_u,energy_residual,bd_residual,mass_defect,psi_consistency"
        )?;
        let opt = |x: Option<f64>| x.map(format_value).unwrap_or_default();
        for (k, l) in self.levels.iter().enumerate() {
            let (or, ou) = if k >= 1 {
                (
                    order(self.levels[k - 1].diff_rho, l.diff_rho),
                    order(self.levels[k - 1].diff_u, l.diff_u),
                )
            } else {
                (None, None)
            };
            writeln!(
                sink,
                "{k},{},{},{},{},{},{},{},{},{},{},{}",
                l.n,
                format_value(l.dt),
                l.steps,
                opt(l.diff_rho),
                opt(l.diff_u),
                opt(or),
                opt(ou),
                format_value(l.energy_residual),
                format_value(l.bd_residual),
                format_value(l.mass_defect),
                format_value(l.psi_consistency)
            )?;
        }
        Ok(())
    }
}

/// `(N_0 - 1) 2^k + 1` nodes, so that level `k` nodes are every other node
/// of level `k + 1`.
pub fn level_nodes(n0: usize, k: usize) -> usize {
    (n0 - 1) * (1 << k) + 1
}

/// Runs one refinement level with a fixed step; returns the grid and the
/// evolution.
pub fn run_level(res: &Resolved, n: usize, dt: f64, record_every: usize) -> Result<(RadialGrid, Evolution), CliError> {
    let grid = RadialGrid::new(res.grid.a(), res.grid.r_max(), n).map_err(ConfigError::from)?;
    let state0 = res.init.build(&grid, &res.params)?;
    let config = SolverConfig {
        fixed_dt: Some(dt),
        ..res.solver.clone()
    };
    let solver = Solver::new(&grid, res.params, config)?;
    let ev = solver.evolve(state0, res.t_final, record_every, &mut ())?;
    Ok((grid, ev))
}

fn abs_sum(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

/// Injects the fine field onto the coarse nodes and returns the weighted L2
/// norm of the difference.
pub fn injected_distance(coarse: &RadialGrid, coarse_f: &[f64], fine_f: &[f64], m: f64) -> f64 {
    let diff: Vec<f64> = (0..coarse.len()).map(|i| fine_f[2 * i] - coarse_f[i]).collect();
    coarse.weighted_norm(&diff, m, 2.0).expect("p = 2")
}

/// Successive `(N, dt)` halvings of the configured run. Levels run in
/// parallel; a failing level truncates the report at the last level before
/// it and is returned as the error after `orders.csv` is written.
pub fn convergence_study(cfg: &RunConfig, out: &Path) -> Result<OrderReport, CliError> {
    let res = cfg.resolve()?;
    let provenance = cfg.provenance_line();
    fs::create_dir_all(out)?;
    let levels = cfg.study.levels;
    let n0 = res.grid.len();
    let dt0 = match cfg.study.dt0 {
        Some(dt) => dt,
        None => {
            let state0 = res.init.build(&res.grid, &res.params)?;
            0.5 * Solver::new(&res.grid, res.params, res.solver.clone())?.cfl_dt(&state0)?
        }
    };
    info!("convergence study: {levels} levels from N = {n0}, dt0 = {dt0}");

    let outcomes: Vec<Result<(RadialGrid, Evolution), CliError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..levels)
            .map(|k| {
                let res = &res;
                scope.spawn(move || {
                    run_level(
                        res,
                        level_nodes(n0, k),
                        dt0 / (1u64 << k) as f64,
                        res.record_every * (1 << k),
                    )
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("level thread panicked"))
            .collect()
    });

    let m = res.params.m();
    let mut report = OrderReport { levels: Vec::new() };
    let mut failure = None;
    let mut previous: Option<(RadialGrid, FluidState)> = None;
    for (k, outcome) in outcomes.into_iter().enumerate() {
        let (grid, ev) = match outcome {
            Ok(x) => x,
            Err(e) => {
                failure = Some(e);
                break;
            }
        };
        let (diff_rho, diff_u) = match &previous {
            Some((g, s)) => (
                Some(injected_distance(g, &s.rho, &ev.final_state.rho, m)),
                Some(injected_distance(g, &s.u, &ev.final_state.u, m)),
            ),
            None => (None, None),
        };
        report.levels.push(LevelResult {
            n: grid.len(),
            dt: dt0 / (1u64 << k) as f64,
            steps: ev.steps,
            diff_rho,
            diff_u,
            energy_residual: abs_sum(&energy_identity_residual(&ev.series).per_interval),
            bd_residual: abs_sum(&bd_identity_residual(&ev.series).per_interval),
            mass_defect: mass_ledger_defect(&ev.series),
            psi_consistency: ev.series.last().map_or(0.0, |r| r.psi_consistency),
        });
        previous = Some((grid, ev.final_state));
    }

    let path = out.join("orders.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    report.write_csv(&provenance, &mut w)?;
    w.flush()?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub variant: ShallowVariant,
    pub records: usize,
    /// Index of the first record that differs in any bit.
    pub first_mismatch: Option<usize>,
}

fn evolve_series(res: &Resolved, assembly: ViscousAssembly) -> Result<Vec<DiagnosticsRecord>, CliError> {
    let config = SolverConfig {
        assembly,
        ..res.solver.clone()
    };
    let state0 = res.init.build(&res.grid, &res.params)?;
    let solver = Solver::new(&res.grid, res.params, config)?;
    Ok(solver.evolve(state0, res.t_final, res.record_every, &mut ())?.series)
}

/// Runs the general solver with the variant's parameters and the
/// shallow-water assembly of the same variant, and compares the two
/// diagnostics series bit for bit.
pub fn shallow_equivalence(variant: ShallowVariant, cfg: &RunConfig) -> Result<EquivalenceReport, CliError> {
    let mut general = cfg.clone();
    general.model = crate::config::ModelSection::default();
    let mut res = general.resolve()?;
    res.params = variant.params();
    res.variant = None;
    let reference = evolve_series(&res, ViscousAssembly::Lame)?;
    let shallow = evolve_series(&res, variant.assembly())?;
    let first_mismatch = if reference.len() != shallow.len() {
        Some(reference.len().min(shallow.len()))
    } else {
        reference.iter().zip(&shallow).position(|(a, b)| !a.bitwise_eq(b))
    };
    Ok(EquivalenceReport {
        variant,
        records: reference.len(),
        first_mismatch,
    })
}

/// Equivalence check for the configured preset, or all three variants when
/// the model is general. Writes `summary.txt`.
pub fn shallow_study(cfg: &RunConfig, out: &Path) -> Result<Vec<EquivalenceReport>, CliError> {
    let (_, preset) = cfg.model_params()?;
    let variants: Vec<ShallowVariant> = match preset {
        Some(v) => vec![v],
        None => ShallowVariant::ALL.to_vec(),
    };
    fs::create_dir_all(out)?;
    let mut s = String::new();
    let _ = writeln!(s, "{}", cfg.provenance_line());
    let mut reports = Vec::new();
    for v in variants {
        let r = shallow_equivalence(v, cfg)?;
        let _ = writeln!(
            s,
            "[{}] {}: {} records, {}",
            if r.first_mismatch.is_none() { "PASS" } else { "FAIL" },
            v.label(),
            r.records,
            match r.first_mismatch {
                None => "bitwise identical".to_string(),
                Some(k) => format!("first differing record {k}"),
            }
        );
        reports.push(r);
    }
    fs::write(out.join("summary.txt"), s)?;
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(extra: &[&str]) -> RunConfig {
        let mut o: Vec<String> = vec![
            "grid.n=101".into(),
            "time.t_final=0.05".into(),
            "time.record_every=2".into(),
        ];
        o.extend(extra.iter().map(|s| s.to_string()));
        RunConfig::with_overrides("", &o).unwrap()
    }

    #[test]
    fn exit_codes_are_disjoint() {
        let codes = [
            CliError::Config(ConfigError::Invalid(String::new())).exit_code(),
            CliError::Step(SolverError::LinearSolve { row: 0 }).exit_code(),
            CliError::Check(String::new()).exit_code(),
            CliError::Io(io::Error::other("x")).exit_code(),
        ];
        assert_eq!(codes, [2, 3, 4, 1]);
    }

    #[test]
    fn small_run_writes_all_files() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run(&small(&[]), dir.path()).unwrap();
        assert!(rep.passed(), "{:?}", rep.checks);
        for f in [
            "diagnostics.csv",
            "summary.txt",
            "snapshot_0.000000.csv",
            "snapshot_0.050000.csv",
        ] {
            let text = fs::read_to_string(dir.path().join(f)).unwrap();
            assert!(text.starts_with("# bdflow "), "{f}");
        }
        let snap = fs::read_to_string(dir.path().join("snapshot_0.050000.csv")).unwrap();
        assert_eq!(snap.lines().nth(1), Some("r,rho,u,phi,psi,v"));
        assert_eq!(snap.lines().count(), 2 + 101);
    }

    #[test]
    fn zero_final_time_writes_one_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run(&small(&["time.t_final=0.0"]), dir.path()).unwrap();
        assert_eq!(rep.steps, 0);
        assert_eq!(rep.series.len(), 1);
        let snaps: Vec<_> = fs::read_dir(dir.path())
            .unwrap()
            .filter_map(|e| e.ok())
            .filter(|e| e.file_name().to_string_lossy().starts_with("snapshot_"))
            .collect();
        assert_eq!(snaps.len(), 1);
    }

    #[test]
    fn snapshot_cadence() {
        let dir = tempfile::tempdir().unwrap();
        let rep = run(&small(&["output.snapshot_every=1", "time.fixed_dt=0.01"]), dir.path()).unwrap();
        assert_eq!(rep.steps, 5);
        let count = fs::read_dir(dir.path())
            .unwrap()
            .filter(|e| {
                e.as_ref()
                    .unwrap()
                    .file_name()
                    .to_string_lossy()
                    .starts_with("snapshot_")
            })
            .count();
        assert_eq!(count, 6);
    }

    #[test]
    fn study_levels_nest() {
        assert_eq!(level_nodes(101, 0), 101);
        assert_eq!(level_nodes(101, 2), 401);
        let g = RadialGrid::new(1.0, 2.0, 17).unwrap();
        let fine: Vec<f64> = (0..33).map(|i| if i % 2 == 0 { 1.0 } else { 5.0 }).collect();
        let d = injected_distance(&g, &[1.0; 17], &fine, 0.0);
        assert_eq!(d, 0.0);
    }

    #[test]
    fn shallow_variants_match_bitwise() {
        for v in ShallowVariant::ALL {
            let rep = shallow_equivalence(v, &small(&[])).unwrap();
            assert_eq!(rep.first_mismatch, None, "{}", v.label());
            assert!(rep.records >= 2);
        }
    }
}
