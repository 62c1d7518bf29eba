//! `run` and `verify`: route selection, engine dispatch, report assembly.

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use volterra_core::linalg::{inf_norm, sup_over_matrices, sup_over_vectors};
use volterra_core::ltv::{stm_ode_residual, SemigroupResidual};
use volterra_core::oracle::rk4_solve_from;
use volterra_core::picard::fixed_point_residual;
use volterra_core::{
    commutator_spot_check, convergence_certificates, forced_from_table, lti_forced, matrix_exp, nonuniqueness_probe,
    picard_solve, semigroup_check, Bindings, Error, EvalError, Expr, ImpulseSpec, LtiSystem, LtvSystem,
    NonlinearSystem, OracleConfig, OracleError, PicardOptions, PicardReport, PicardStatus, QuadratureRule,
    SeriesDiagnostics, Solver, StmRoute, TimeGrid, Trajectory, TransitionTable,
};

use crate::config::{ConfigError, Method, Model, RunConfig};
use crate::output::{sci, stm_csv, trajectory_csv, Report};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 1;
pub const EXIT_NONCONVERGENCE: i32 = 2;
pub const EXIT_BLOWUP: i32 = 3;
pub const EXIT_VERIFY_FAILED: i32 = 4;

/// Cross-route agreement, relative to `1 + sup |Phi|` (or `1 + sup |x|`).
pub const ROUTE_TOL: f64 = 1e-6;
/// Agreement between basis solves started from different bases.
pub const BASIS_TOL: f64 = 1e-8;
/// Semigroup and inverse residuals at `(t0, mid, T)`.
pub const SEMIGROUP_TOL: f64 = 1e-8;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Core(#[from] Error),
    #[error("{0}")]
    Oracle(#[from] OracleError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        EXIT_CONFIG
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Options {
    /// Overrides `solver.rtol`.
    pub rtol: Option<f64>,
    pub out_dir: PathBuf,
    pub seed: u64,
}

impl Default for Options {
    fn default() -> Self {
        Self { rtol: None, out_dir: PathBuf::from("."), seed: volterra_core::ltv::DEFAULT_SEED }
    }
}

#[derive(Debug)]
pub struct Outcome {
    pub code: i32,
    pub report: String,
    pub written: Vec<PathBuf>,
}

fn write_file(dir: &Path, name: &Path, contents: &str, written: &mut Vec<PathBuf>) -> Result<(), CliError> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|source| CliError::Io { path: parent.to_path_buf(), source })?;
    }
    std::fs::write(&path, contents).map_err(|source| CliError::Io { path: path.clone(), source })?;
    written.push(path);
    Ok(())
}

fn effective(cfg: &RunConfig, opts: &Options) -> RunConfig {
    let mut cfg = cfg.clone();
    if let Some(r) = opts.rtol {
        cfg.solver.rtol = r;
    }
    cfg
}

fn header(report: &mut Report, cfg: &RunConfig, opts: &Options) {
    report.section("run");
    report.kv("config", cfg.source.display());
    report.kv("kind", cfg.kind.name());
    report.kv("dimension", cfg.dimension);
    report.kv("horizon", format!("[{}, {}]", cfg.grid.t0(), cfg.grid.t_end()));
    report.kv("intervals", cfg.grid.intervals());
    report.kv("rule", cfg.grid.rule().name());
    report.kv("method", cfg.solver.method.name());
    report.kv("rtol", sci(cfg.solver.rtol));
    report.kv("seed", opts.seed);
}

fn status(report: &mut Report, status: &str, code: i32) {
    report.section("status");
    report.kv("status", status);
    report.kv("exit code", code);
}

/// `x' = A(t) x + w(t)` as a field for the oracle and for Picard iteration.
fn linear_field(
    sys: &LtvSystem,
    input: &Option<Vec<Expr>>,
) -> impl Fn(f64, &DVector<f64>) -> Result<DVector<f64>, EvalError> + Send + Sync + Clone + 'static {
    let sys = sys.clone();
    let input = input.clone();
    move |t: f64, x: &DVector<f64>| {
        let mut dx = sys.eval(t)? * x;
        if let Some(w) = &input {
            let env = Bindings::time(t);
            for (k, e) in w.iter().enumerate() {
                dx[k] += e.eval(&env)?;
            }
        }
        Ok(dx)
    }
}

fn jumps(cfg: &RunConfig) -> Vec<(usize, DVector<f64>)> {
    cfg.impulses.iter().filter_map(|(t, v)| cfg.grid.index_of(*t).map(|k| (k, v.clone()))).collect()
}

fn oracle_config() -> OracleConfig {
    OracleConfig { richardson: true, ..OracleConfig::default() }
}

fn linear_oracle(cfg: &RunConfig, sys: &LtvSystem) -> Result<Trajectory, OracleError> {
    rk4_solve_from(linear_field(sys, &cfg.input), &cfg.initial, 0, &cfg.grid, &jumps(cfg), oracle_config())
}

fn richardson(traj: &Trajectory) -> Option<f64> {
    traj.provenance.error_estimates.as_ref().map(|e| e.iter().copied().fold(0.0, f64::max))
}

fn series_table(report: &mut Report, d: &SeriesDiagnostics) {
    let rows: Vec<Vec<String>> = d
        .term_norms
        .iter()
        .enumerate()
        .map(|(k, n)| vec![k.to_string(), sci(*n), d.bound_sequence.get(k).map_or("-".into(), |b| sci(*b))])
        .collect();
    report.table(&["k", "term norm", "envelope"], &rows);
    report.kv("tail bound", sci(d.tail_bound));
}

fn picard_table(report: &mut Report, rep: &PicardReport) {
    let rows: Vec<Vec<String>> = rep
        .successive_distances
        .iter()
        .enumerate()
        .map(|(k, d)| vec![k.to_string(), sci(*d), rep.bound_sequence.get(k).map_or("-".into(), |b| sci(*b))])
        .collect();
    report.table(&["k", "|x_k+1 - x_k|", "envelope"], &rows);
}

fn mid_time(grid: &TimeGrid) -> f64 {
    grid.points()[grid.len() / 2]
}

fn semigroup_times(grid: &TimeGrid) -> (f64, f64, f64) {
    (grid.t0(), mid_time(grid), grid.t_end())
}

/// Picks the transition-matrix route and says why.
fn choose_route(cfg: &RunConfig, sys: &LtvSystem, seed: u64) -> Result<(StmRoute, String), CliError> {
    let identity = StmRoute::BasisSolve {
        basis: DMatrix::identity(cfg.dimension, cfg.dimension),
        oracle: OracleConfig::default(),
    };
    let pb = StmRoute::PeanoBaker { rtol: cfg.solver.rtol, max_terms: cfg.solver.max_terms };
    Ok(match cfg.solver.method {
        Method::Auto => {
            if sys.constant_matrix().is_some() {
                (StmRoute::MatrixExponential, "A is constant".into())
            } else {
                let check = commutator_spot_check(sys, &cfg.grid, seed)?;
                if check.passes() {
                    let why = format!(
                        "commutator spot-check passed (max residual {} <= {})",
                        sci(check.max_residual),
                        sci(check.tolerance)
                    );
                    (StmRoute::Commuting { seed }, why)
                } else {
                    let why = format!(
                        "commutator spot-check failed (residual {} > {})",
                        sci(check.max_residual),
                        sci(check.tolerance)
                    );
                    (pb, why)
                }
            }
        }
        Method::PeanoBaker => (pb, "requested".into()),
        Method::Commuting => (StmRoute::Commuting { seed }, "requested".into()),
        Method::BasisSolve => (identity, "requested".into()),
        Method::Oracle => (identity, "requested; transition matrices by basis solves".into()),
        Method::Picard => unreachable!("picard on linear systems goes through the nonlinear path"),
    })
}

/// Handles route failures that have a defined exit status.
fn route_failure(report: &mut Report, err: Error) -> Result<i32, CliError> {
    match err {
        Error::NonConvergence(d) => {
            report.section("convergence");
            report.kv("converged", false);
            report.kv("terms used", d.terms_used);
            series_table(report, &d);
            status(report, "non-convergence", EXIT_NONCONVERGENCE);
            Ok(EXIT_NONCONVERGENCE)
        }
        Error::NotCommuting { residual, tolerance, s, u } => {
            report.section("route");
            report.line(format!(
                "refused: A(s) A(u) - A(u) A(s) has norm {} at s = {s}, u = {u}, above tolerance {}",
                sci(residual),
                sci(tolerance)
            ));
            status(report, "refused", EXIT_NONCONVERGENCE);
            Ok(EXIT_NONCONVERGENCE)
        }
        other => Err(other.into()),
    }
}

fn lti_with_impulses(cfg: &RunConfig, a: &DMatrix<f64>, w: &[DVector<f64>]) -> Result<Trajectory, Error> {
    let mut traj = lti_forced(&LtiSystem::new(a.clone())?, &cfg.initial, w, &cfg.grid)?;
    for (tau, wbar) in &cfg.impulses {
        let k = cfg.grid.index_of(*tau).expect("validated on grid");
        for i in k..cfg.grid.len() {
            traj.states[i] +=
                matrix_exp(a, cfg.grid.points()[i] - cfg.grid.points()[k], volterra_core::lti::DEFAULT_EXP_RTOL)?
                    * wbar;
        }
    }
    Ok(traj)
}

/// Runs a config and writes its outputs.
pub fn run(cfg: &RunConfig, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = effective(cfg, opts);
    let mut report = Report::new("volterra run report");
    header(&mut report, &cfg, opts);
    let mut written = Vec::new();
    let code = match &cfg.model {
        Model::Linear(sys) if cfg.solver.method != Method::Picard => {
            run_linear(&cfg, sys, opts, &mut report, &mut written)?
        }
        Model::Linear(sys) => {
            let field = NonlinearSystem::from_fn(cfg.dimension, linear_field(sys, &cfg.input));
            run_nonlinear(&cfg, &field, &opts.out_dir, &mut report, &mut written)?
        }
        Model::Nonlinear(sys) => run_nonlinear(&cfg, sys, &opts.out_dir, &mut report, &mut written)?,
    };
    let text = report.into_string();
    write_file(&opts.out_dir, &cfg.outputs.report, &text, &mut written)?;
    Ok(Outcome { code, report: text, written })
}

fn run_linear(
    cfg: &RunConfig,
    sys: &LtvSystem,
    opts: &Options,
    report: &mut Report,
    written: &mut Vec<PathBuf>,
) -> Result<i32, CliError> {
    let w = cfg.sampled_input()?;
    let (route, reason) = choose_route(cfg, sys, opts.seed)?;
    let table = match route.build(sys, cfg.grid.t0(), &cfg.grid) {
        Ok(t) => t,
        Err(e) => return route_failure(report, e),
    };
    let oracle = linear_oracle(cfg, sys)?;
    let traj = match (cfg.solver.method, &route) {
        (Method::Oracle, _) => oracle.clone(),
        (_, StmRoute::MatrixExponential) => {
            lti_with_impulses(cfg, &sys.constant_matrix().expect("constant route"), &w)?
        }
        _ => forced_from_table(&table, &cfg.initial, &w, &ImpulseSpec::new(cfg.impulses.clone())?)?,
    };

    report.section("route");
    report.kv("route", if cfg.solver.method == Method::Oracle { Solver::Oracle.name() } else { table.route.name() });
    report.kv("reason", reason);

    report.section("convergence");
    match &table.series {
        Some(d) => {
            report.kv("terms used", d.terms_used);
            series_table(report, d);
        }
        None => report.line("closed-form route; no series terms"),
    }

    report.section("certificates");
    let sup_a = sup_over_matrices(&sys.sample(&cfg.grid)?);
    let rate = sup_a * cfg.grid.span();
    report.kv("sup |A|", sci(sup_a));
    report.kv("sup |A| * T", sci(rate));
    report.kv("envelope e^(sup |A| T)", sci(rate.exp()));

    report.section("semigroup");
    report.kv("times", format!("({}, {}, {})", cfg.grid.t0(), mid_time(&cfg.grid), cfg.grid.t_end()));
    let r = semigroup_check(&route, sys, semigroup_times(&cfg.grid), &cfg.grid)?;
    report.kv("composition residual", sci(r.composition));
    report.kv("inverse residual", sci(r.inverse));
    report.kv("stm ode residual", sci(stm_ode_residual(&table, sys)?));

    report.section("oracle");
    report.kv("max deviation from rk4", sci(traj.max_deviation(&oracle)));
    if let Some(e) = richardson(&oracle) {
        report.kv("rk4 error estimate", sci(e));
    }

    write_file(&opts.out_dir, &cfg.outputs.trajectory_csv, &trajectory_csv(&traj), written)?;
    if let Some(p) = &cfg.outputs.stm_csv {
        write_file(&opts.out_dir, p, &stm_csv(&table), written)?;
    }
    status(report, "ok", EXIT_OK);
    Ok(EXIT_OK)
}

fn picard_options(cfg: &RunConfig) -> PicardOptions {
    PicardOptions {
        rtol: cfg.solver.rtol,
        max_iters: cfg.solver.max_iters,
        blowup_threshold: cfg.solver.blowup_threshold,
    }
}

fn certificates_section(
    report: &mut Report,
    cfg: &RunConfig,
    sys: &NonlinearSystem,
    rep: Option<&PicardReport>,
) -> Result<(), CliError> {
    report.section("certificates");
    let Some(l) = cfg.lipschitz else {
        report.line("no lipschitz constant given; certificates unavailable");
        if cfg.dimension == 1 {
            match nonuniqueness_probe(sys, &cfg.initial, &cfg.grid) {
                Ok(probe) => {
                    report.kv("non-uniqueness flagged", probe.flagged);
                    report.line(probe.message);
                }
                Err(e) => report.kv("non-uniqueness probe", format!("not run ({e})")),
            }
        }
        return Ok(());
    };
    let c = convergence_certificates(l, cfg.grid.span())?;
    report.kv("lipschitz", l);
    report.kv("contraction factor l*T", sci(c.contraction_factor));
    report.kv("contraction holds", c.contraction_holds);
    report.kv("envelope e^(l T)", sci(c.global_envelope));
    report.kv("envelope peak index", c.peak_index());
    if let Some(rep) = rep {
        if let Some(k) = peak_index(&rep.successive_distances) {
            report.kv("observed peak index", k);
        }
    }
    Ok(())
}

/// Index of the largest entry, the later one on ties.
pub fn peak_index(values: &[f64]) -> Option<usize> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().rposition(|&v| v == max)
}

type Escape = (f64, f64);

fn nonlinear_oracle(cfg: &RunConfig, sys: &NonlinearSystem) -> Result<Result<Trajectory, Escape>, CliError> {
    match volterra_core::rk4_solve(|t, x| sys.eval(t, x), &cfg.initial, &cfg.grid, oracle_config()) {
        Ok(t) => Ok(Ok(t)),
        Err(OracleError::NonFinite { t, last_finite_time }) => Ok(Err((t, last_finite_time))),
        Err(e) => Err(e.into()),
    }
}

fn blowup_section(report: &mut Report, picard_time: Option<f64>, escape: Option<Escape>) {
    report.section("blowup");
    if let Some(t) = picard_time {
        report.kv("picard iterate exceeded threshold at t", t);
    }
    match escape {
        Some((t, last)) => {
            report.kv("rk4 non-finite at t", t);
            report.kv("last finite time", last);
        }
        None => report.line("rk4 stayed finite; the escape is seen by picard only"),
    }
}

fn run_nonlinear(
    cfg: &RunConfig,
    sys: &NonlinearSystem,
    out_dir: &Path,
    report: &mut Report,
    written: &mut Vec<PathBuf>,
) -> Result<i32, CliError> {
    let oracle = nonlinear_oracle(cfg, sys)?;

    if cfg.solver.method == Method::Oracle {
        report.section("route");
        report.kv("route", Solver::Oracle.name());
        report.kv("reason", "requested");
        return match oracle {
            Ok(traj) => {
                report.section("oracle");
                if let Some(e) = richardson(&traj) {
                    report.kv("rk4 error estimate", sci(e));
                }
                write_file(out_dir, &cfg.outputs.trajectory_csv, &trajectory_csv(&traj), written)?;
                status(report, "ok", EXIT_OK);
                Ok(EXIT_OK)
            }
            Err(escape) => {
                blowup_section(report, None, Some(escape));
                status(report, "blowup", EXIT_BLOWUP);
                Ok(EXIT_BLOWUP)
            }
        };
    }

    let (traj, rep) = picard_solve(sys, &cfg.initial, &cfg.grid, picard_options(cfg))?;
    report.section("route");
    report.kv("route", Solver::Picard.name());
    report.kv("reason", if cfg.solver.method == Method::Auto { "nonlinear field" } else { "requested" });

    report.section("convergence");
    report.kv("picard status", rep.status.name());
    report.kv("iterations", rep.iterates_used);
    picard_table(report, &rep);

    certificates_section(report, cfg, sys, Some(&rep))?;

    report.section("oracle");
    match &oracle {
        Ok(o) if rep.status != PicardStatus::Blowup => {
            report.kv("max deviation from rk4", sci(traj.max_deviation(o)));
            if let Some(e) = richardson(o) {
                report.kv("rk4 error estimate", sci(e));
            }
        }
        Ok(_) => report.line("rk4 stayed finite on the whole horizon"),
        Err((t, last)) => report.line(format!("rk4 became non-finite at t = {t}; last finite time = {last}")),
    }

    if rep.status == PicardStatus::Blowup || oracle.is_err() {
        blowup_section(report, rep.blowup_time, oracle.err());
        status(report, "blowup", EXIT_BLOWUP);
        return Ok(EXIT_BLOWUP);
    }
    if rep.status == PicardStatus::MaxIterations {
        status(report, "non-convergence", EXIT_NONCONVERGENCE);
        return Ok(EXIT_NONCONVERGENCE);
    }
    write_file(out_dir, &cfg.outputs.trajectory_csv, &trajectory_csv(&traj), written)?;
    status(report, "ok", EXIT_OK);
    Ok(EXIT_OK)
}

/// One line of the verification table.
#[derive(Clone, Debug, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    fn new(name: impl Into<String>, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), value, tolerance }
    }

    pub fn passes(&self) -> bool {
        self.value <= self.tolerance
    }
}

fn checks_table(report: &mut Report, checks: &[Check]) {
    let rows: Vec<Vec<String>> = checks
        .iter()
        .map(|c| vec![c.name.clone(), sci(c.value), sci(c.tolerance), if c.passes() { "pass" } else { "FAIL" }.into()])
        .collect();
    report.table(&["check", "value", "tolerance", "result"], &rows);
}

/// A signed permutation scaled by powers of two: random, yet inverted and
/// applied without rounding.
pub fn dyadic_basis(n: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng);
    let mut v = DMatrix::zeros(n, n);
    for (col, &row) in perm.iter().enumerate() {
        let sign = if rng.random_bool(0.5) { -1.0 } else { 1.0 };
        v[(row, col)] = sign * 2f64.powi(rng.random_range(-2..=2));
    }
    v
}

/// `h^2` times a crude bound on the third derivative of `Phi`, from
/// differences of the sampled `A`.
fn ode_tolerance(grid: &TimeGrid, a: &[DMatrix<f64>], phi: &TransitionTable) -> f64 {
    let h = grid.max_step();
    let d1 = a.windows(2).map(|w| inf_norm(&(&w[1] - &w[0])) / h).fold(0.0, f64::max);
    let d2 = a.windows(3).map(|w| inf_norm(&(&w[2] - &w[1] * 2.0 + &w[0])) / (h * h)).fold(0.0, f64::max);
    let scale = 1.0 + sup_over_matrices(a) + d1 + d2;
    let order = if grid.rule() == QuadratureRule::Trapezoid { h * h } else { h };
    1e-9 + order * scale.powi(3) * sup_over_matrices(&phi.matrices)
}

fn semigroup_checks(checks: &mut Vec<Check>, label: &str, r: SemigroupResidual) {
    checks.push(Check::new(format!("semigroup composition ({label})"), r.composition, SEMIGROUP_TOL));
    checks.push(Check::new(format!("semigroup inverse ({label})"), r.inverse, SEMIGROUP_TOL));
}

/// Runs the cross-route invariant suite and writes its report.
pub fn verify(cfg: &RunConfig, opts: &Options) -> Result<Outcome, CliError> {
    let cfg = effective(cfg, opts);
    let mut report = Report::new("volterra verification report");
    header(&mut report, &cfg, opts);
    let code = match &cfg.model {
        Model::Linear(sys) => verify_linear(&cfg, sys, opts, &mut report)?,
        Model::Nonlinear(sys) => verify_nonlinear(&cfg, sys, &mut report)?,
    };
    let text = report.into_string();
    let mut written = Vec::new();
    write_file(&opts.out_dir, &cfg.outputs.report.with_extension("verify.txt"), &text, &mut written)?;
    Ok(Outcome { code, report: text, written })
}

fn verify_linear(cfg: &RunConfig, sys: &LtvSystem, opts: &Options, report: &mut Report) -> Result<i32, CliError> {
    let n = cfg.dimension;
    let grid = &cfg.grid;
    let t0 = grid.t0();
    let times = semigroup_times(grid);
    let w = cfg.sampled_input()?;
    let a = sys.sample(grid)?;

    let pb_route = StmRoute::PeanoBaker { rtol: cfg.solver.rtol, max_terms: cfg.solver.max_terms };
    let pb = match pb_route.build(sys, t0, grid) {
        Ok(t) => t,
        Err(e) => return route_failure(report, e),
    };
    let scale = 1.0 + sup_over_matrices(&pb.matrices);
    let identity_route = StmRoute::BasisSolve { basis: DMatrix::identity(n, n), oracle: OracleConfig::default() };
    let basis_i = identity_route.build(sys, t0, grid)?;
    let basis_v = stm_by_basis(sys, t0, grid, &dyadic_basis(n, opts.seed))?;

    let mut checks = Vec::new();
    let mut notes = Vec::new();
    checks.push(Check::new("peano-baker vs basis-solve", pb.max_deviation(&basis_i) / scale, ROUTE_TOL));
    checks.push(Check::new("basis-solve basis independence", basis_i.max_deviation(&basis_v) / scale, BASIS_TOL));

    let commuting_route = StmRoute::Commuting { seed: opts.seed };
    let check = commutator_spot_check(sys, grid, opts.seed)?;
    let commuting = if check.passes() {
        Some(commuting_route.build(sys, t0, grid)?)
    } else if cfg.solver.method == Method::Commuting {
        return route_failure(report, commuting_route.build(sys, t0, grid).unwrap_err());
    } else {
        notes.push(format!(
            "commuting route skipped: commutator residual {} exceeds {}",
            sci(check.max_residual),
            sci(check.tolerance)
        ));
        None
    };
    if let Some(c) = &commuting {
        checks.push(Check::new("commuting vs peano-baker", c.max_deviation(&pb) / scale, ROUTE_TOL));
    }
    let constant = sys.constant_matrix().is_some();
    if constant {
        let e = StmRoute::MatrixExponential.build(sys, t0, grid)?;
        checks.push(Check::new("matrix-exponential vs peano-baker", e.max_deviation(&pb) / scale, ROUTE_TOL));
    }

    semigroup_checks(&mut checks, "peano-baker", semigroup_check(&pb_route, sys, times, grid)?);
    semigroup_checks(&mut checks, "basis-solve", semigroup_check(&identity_route, sys, times, grid)?);
    if commuting.is_some() {
        semigroup_checks(&mut checks, "commuting", semigroup_check(&commuting_route, sys, times, grid)?);
    }
    if constant {
        semigroup_checks(
            &mut checks,
            "matrix-exponential",
            semigroup_check(&StmRoute::MatrixExponential, sys, times, grid)?,
        );
    }
    checks.push(Check::new(
        "stm ode residual (peano-baker)",
        stm_ode_residual(&pb, sys)?,
        ode_tolerance(grid, &a, &pb),
    ));

    let traj = forced_from_table(&pb, &cfg.initial, &w, &ImpulseSpec::new(cfg.impulses.clone())?)?;
    let oracle = linear_oracle(cfg, sys)?;
    let x_scale = 1.0 + sup_over_vectors(&oracle.states);
    checks.push(Check::new("trajectory vs rk4", traj.max_deviation(&oracle) / x_scale, ROUTE_TOL));

    finish_verify(report, &checks, &notes)
}

fn stm_by_basis(sys: &LtvSystem, base: f64, grid: &TimeGrid, basis: &DMatrix<f64>) -> Result<TransitionTable, Error> {
    StmRoute::BasisSolve { basis: basis.clone(), oracle: OracleConfig::default() }.build(sys, base, grid)
}

fn finish_verify(report: &mut Report, checks: &[Check], notes: &[String]) -> Result<i32, CliError> {
    report.section("residuals");
    checks_table(report, checks);
    for note in notes {
        report.line(note);
    }
    let failed = checks.iter().filter(|c| !c.passes()).count();
    let code = if failed == 0 { EXIT_OK } else { EXIT_VERIFY_FAILED };
    status(report, if failed == 0 { "all checks passed" } else { "checks failed" }, code);
    Ok(code)
}

fn verify_nonlinear(cfg: &RunConfig, sys: &NonlinearSystem, report: &mut Report) -> Result<i32, CliError> {
    let grid = &cfg.grid;
    let opts = picard_options(cfg);
    let (traj, rep) = picard_solve(sys, &cfg.initial, grid, opts)?;
    let oracle = nonlinear_oracle(cfg, sys)?;
    if rep.status == PicardStatus::Blowup || oracle.is_err() {
        blowup_section(report, rep.blowup_time, oracle.err());
        status(report, "blowup", EXIT_BLOWUP);
        return Ok(EXIT_BLOWUP);
    }
    if rep.status == PicardStatus::MaxIterations {
        report.section("convergence");
        picard_table(report, &rep);
        status(report, "non-convergence", EXIT_NONCONVERGENCE);
        return Ok(EXIT_NONCONVERGENCE);
    }
    let oracle = oracle.expect("checked above");

    // grid-halving estimate of the quadrature error in the Picard fixed point
    let fine_grid = TimeGrid::make_uniform(grid.t0(), grid.t_end(), 2 * grid.intervals(), grid.rule())?;
    let (fine, _) = picard_solve(sys, &cfg.initial, &fine_grid, opts)?;
    let gap = traj.states.iter().enumerate().map(|(i, x)| (x - &fine.states[2 * i]).amax()).fold(0.0, f64::max);
    let halving = match grid.rule() {
        QuadratureRule::Trapezoid => gap * 4.0 / 3.0,
        QuadratureRule::LeftEndpoint => gap * 2.0,
    };
    let x_scale = 1.0 + sup_over_vectors(&traj.states);
    let oracle_err = richardson(&oracle).unwrap_or(0.0);

    report.section("error estimates");
    report.kv("picard grid-halving estimate", sci(halving));
    report.kv("rk4 error estimate", sci(oracle_err));

    let mut checks = vec![
        Check::new(
            "picard vs rk4",
            traj.max_deviation(&oracle),
            (10.0 * cfg.solver.rtol * x_scale).max(2.0 * halving) + oracle_err,
        ),
        Check::new(
            "fixed-point residual",
            fixed_point_residual(sys, &cfg.initial, &traj, grid)?,
            10.0 * cfg.solver.rtol * x_scale,
        ),
    ];
    if !rep.bound_sequence.is_empty() {
        let worst = rep
            .successive_distances
            .iter()
            .zip(&rep.bound_sequence)
            .map(|(d, b)| {
                if *b > 0.0 {
                    d / b
                } else if *d > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max);
        checks.push(Check::new("distance / envelope", worst, 1.0 + 1e-6));
    }
    let mut notes = Vec::new();
    if cfg.dimension == 1 {
        let probe = nonuniqueness_probe(sys, &cfg.initial, grid)?;
        notes.push(format!("non-uniqueness probe: {}", probe.message));
    }
    finish_verify(report, &checks, &notes)
}
