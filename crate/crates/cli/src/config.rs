//! Run configuration: TOML schema and validation.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Deserialize;
use toml::Spanned;
use volterra_core::{Expr, LtvSystem, NonlinearSystem, QuadratureRule, TimeGrid};

/// A config problem, located by key path and, when known, file position.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigError {
    pub path: String,
    pub line: Option<usize>,
    pub column: Option<usize>,
    pub message: String,
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (self.line, self.column) {
            (Some(l), Some(c)) => write!(f, "{} (line {l}, column {c}): {}", self.path, self.message),
            _ => write!(f, "{}: {}", self.path, self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Kind {
    Lti,
    Ltv,
    Nonlinear,
}

impl Kind {
    pub fn name(self) -> &'static str {
        match self {
            Kind::Lti => "lti",
            Kind::Ltv => "ltv",
            Kind::Nonlinear => "nonlinear",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    Auto,
    PeanoBaker,
    Commuting,
    BasisSolve,
    Picard,
    Oracle,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Auto => "auto",
            Method::PeanoBaker => "peano-baker",
            Method::Commuting => "commuting",
            Method::BasisSolve => "basis-solve",
            Method::Picard => "picard",
            Method::Oracle => "oracle",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum RawRule {
    Trapezoid,
    LeftEndpoint,
}

type Entries = Spanned<Vec<Spanned<String>>>;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    initial: Spanned<Vec<f64>>,
    system: RawSystem,
    horizon: Spanned<RawHorizon>,
    input: Option<RawInput>,
    #[serde(default)]
    solver: RawSolver,
    #[serde(default)]
    outputs: RawOutputs,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    kind: Kind,
    dimension: Spanned<usize>,
    matrix: Option<Spanned<Vec<Entries>>>,
    field: Option<Entries>,
    lipschitz: Option<Spanned<f64>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawHorizon {
    #[serde(default)]
    t0: f64,
    #[serde(alias = "T")]
    t_end: f64,
    n: usize,
    rule: Option<RawRule>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInput {
    w: Option<Entries>,
    #[serde(default)]
    impulses: Vec<Spanned<RawImpulse>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawImpulse {
    time: f64,
    vector: Vec<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSolver {
    #[serde(default)]
    method: Method,
    rtol: Option<Spanned<f64>>,
    max_terms: Option<Spanned<usize>>,
    max_iters: Option<Spanned<usize>>,
    blowup_threshold: Option<Spanned<f64>>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawOutputs {
    trajectory_csv: Option<String>,
    stm_csv: Option<String>,
    report: Option<String>,
}

#[derive(Clone, Debug)]
pub enum Model {
    Linear(LtvSystem),
    Nonlinear(NonlinearSystem),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub method: Method,
    pub rtol: f64,
    pub max_terms: usize,
    pub max_iters: usize,
    pub blowup_threshold: f64,
}

/// Output file names, relative to the output directory unless absolute.
#[derive(Clone, Debug, PartialEq)]
pub struct Outputs {
    pub trajectory_csv: PathBuf,
    pub stm_csv: Option<PathBuf>,
    pub report: PathBuf,
}

/// A validated run configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub source: PathBuf,
    pub kind: Kind,
    pub dimension: usize,
    pub model: Model,
    pub grid: TimeGrid,
    pub initial: DVector<f64>,
    /// Forcing `w(t)`, one expression per component.
    pub input: Option<Vec<Expr>>,
    pub impulses: Vec<(f64, DVector<f64>)>,
    pub solver: SolverSettings,
    pub lipschitz: Option<f64>,
    pub outputs: Outputs,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError {
            path: path.display().to_string(),
            line: None,
            column: None,
            message: format!("cannot read config: {e}"),
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
        let mut cfg = Self::parse(&text, stem)?;
        cfg.source = path.to_path_buf();
        Ok(cfg)
    }

    /// Parses and validates config text; `stem` names default output files.
    pub fn parse(text: &str, stem: &str) -> Result<Self, ConfigError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let (line, column) = e.span().map(|s| line_col(text, s.start)).unzip();
            ConfigError { path: "config".into(), line, column, message: e.message().trim().to_string() }
        })?;
        Validator { text }.validate(raw, stem)
    }

    pub fn is_linear(&self) -> bool {
        matches!(self.model, Model::Linear(_))
    }

    /// Samples the forcing on the grid; zero when there is none.
    pub fn sampled_input(&self) -> Result<Vec<DVector<f64>>, ConfigError> {
        let n = self.dimension;
        let Some(w) = &self.input else {
            return Ok(vec![DVector::zeros(n); self.grid.len()]);
        };
        self.grid
            .points()
            .iter()
            .map(|&t| {
                let env = volterra_core::Bindings::time(t);
                w.iter()
                    .enumerate()
                    .map(|(k, e)| {
                        e.eval(&env).map_err(|err| ConfigError {
                            path: format!("input.w[{k}]"),
                            line: None,
                            column: None,
                            message: format!("evaluation failed at t = {t}: {err}"),
                        })
                    })
                    .collect::<Result<Vec<_>, _>>()
                    .map(DVector::from_vec)
            })
            .collect()
    }
}

/// 1-based line and column of a byte offset.
fn line_col(text: &str, offset: usize) -> (usize, usize) {
    let before = &text[..offset.min(text.len())];
    let line = before.matches('\n').count() + 1;
    let col = before.rfind('\n').map_or(before.len(), |p| before.len() - p - 1) + 1;
    (line, col)
}

struct Validator<'a> {
    text: &'a str,
}

impl Validator<'_> {
    fn err<T>(
        &self,
        path: impl Into<String>,
        span: Option<std::ops::Range<usize>>,
        message: impl Into<String>,
    ) -> Result<T, ConfigError> {
        let (line, column) = span.map(|s| line_col(self.text, s.start)).unzip();
        Err(ConfigError { path: path.into(), line, column, message: message.into() })
    }

    fn expr(&self, path: &str, entry: &Spanned<String>) -> Result<Expr, ConfigError> {
        Expr::parse(entry.get_ref()).or_else(|e| {
            // skip the opening quote so the column points into the expression
            let start = entry.span().start + 1 + e.offset;
            self.err(path, Some(start..start), format!("{e}"))
        })
    }

    fn entries(&self, path: &str, list: &Entries, dim: usize) -> Result<Vec<Expr>, ConfigError> {
        if list.get_ref().len() != dim {
            return self.err(
                path,
                Some(list.span()),
                format!("expected {dim} entries, found {}", list.get_ref().len()),
            );
        }
        list.get_ref().iter().enumerate().map(|(k, e)| self.expr(&format!("{path}[{k}]"), e)).collect()
    }

    fn validate(&self, raw: RawConfig, stem: &str) -> Result<RunConfig, ConfigError> {
        let dim = *raw.system.dimension.get_ref();
        if dim == 0 {
            return self.err("system.dimension", Some(raw.system.dimension.span()), "must be at least 1");
        }
        let kind = raw.system.kind;
        let linear = kind != Kind::Nonlinear;

        let initial = raw.initial.get_ref();
        if initial.len() != dim {
            return self.err(
                "initial",
                Some(raw.initial.span()),
                format!("expected {dim} entries, found {}", initial.len()),
            );
        }
        if initial.iter().any(|v| !v.is_finite()) {
            return self.err("initial", Some(raw.initial.span()), "entries must be finite");
        }
        let initial = DVector::from_column_slice(initial);

        let horizon_span = raw.horizon.span();
        let h = raw.horizon.into_inner();
        if !h.t0.is_finite() || !h.t_end.is_finite() || h.t_end <= h.t0 {
            return self.err("horizon", Some(horizon_span), "need finite t0 < t_end");
        }
        if h.n == 0 {
            return self.err("horizon.n", Some(horizon_span), "need at least one interval");
        }
        let rule = match h.rule.unwrap_or(RawRule::Trapezoid) {
            RawRule::Trapezoid => QuadratureRule::Trapezoid,
            RawRule::LeftEndpoint => QuadratureRule::LeftEndpoint,
        };
        let grid = TimeGrid::make_uniform(h.t0, h.t_end, h.n, rule)
            .or_else(|e| self.err("horizon", Some(horizon_span.clone()), e.to_string()))?;

        let model = if linear {
            if let Some(f) = &raw.system.field {
                return self.err(
                    "system.field",
                    Some(f.span()),
                    format!("not used by kind = \"{}\"; give system.matrix", kind.name()),
                );
            }
            let Some(rows) = &raw.system.matrix else {
                return self.err("system.matrix", None, format!("required for kind = \"{}\"", kind.name()));
            };
            if rows.get_ref().len() != dim {
                return self.err(
                    "system.matrix",
                    Some(rows.span()),
                    format!("expected {dim} rows, found {}", rows.get_ref().len()),
                );
            }
            let mut entries = Vec::with_capacity(dim * dim);
            for (i, row) in rows.get_ref().iter().enumerate() {
                let path = format!("system.matrix[{i}]");
                for (j, e) in self.entries(&path, row, dim)?.into_iter().enumerate() {
                    let at = &row.get_ref()[j];
                    if e.max_state_index() > 0 {
                        return self.err(
                            format!("{path}[{j}]"),
                            Some(at.span()),
                            "matrix entries may depend on t only",
                        );
                    }
                    if kind == Kind::Lti && e.uses_time() {
                        return self.err(
                            format!("{path}[{j}]"),
                            Some(at.span()),
                            "kind = \"lti\" needs constant entries; use kind = \"ltv\"",
                        );
                    }
                    entries.push(e);
                }
            }
            let sys = LtvSystem::from_exprs(dim, entries)
                .or_else(|e| self.err("system.matrix", Some(rows.span()), e.to_string()))?;
            Model::Linear(sys)
        } else {
            if let Some(m) = &raw.system.matrix {
                return self.err(
                    "system.matrix",
                    Some(m.span()),
                    "not used by kind = \"nonlinear\"; give system.field",
                );
            }
            let Some(field) = &raw.system.field else {
                return self.err("system.field", None, "required for kind = \"nonlinear\"");
            };
            let exprs = self.entries("system.field", field, dim)?;
            for (k, e) in exprs.iter().enumerate() {
                if e.max_state_index() > dim {
                    return self.err(
                        format!("system.field[{k}]"),
                        Some(field.get_ref()[k].span()),
                        format!("references x{} but dimension is {dim}", e.max_state_index()),
                    );
                }
            }
            let sys = NonlinearSystem::from_exprs(exprs)
                .or_else(|e| self.err("system.field", Some(field.span()), e.to_string()))?;
            Model::Nonlinear(sys)
        };

        let lipschitz = match &raw.system.lipschitz {
            Some(l) if *l.get_ref() < 0.0 || !l.get_ref().is_finite() => {
                return self.err("system.lipschitz", Some(l.span()), "must be finite and nonnegative");
            }
            Some(l) => Some(*l.get_ref()),
            None => None,
        };
        let model = match model {
            Model::Nonlinear(sys) => Model::Nonlinear(match lipschitz {
                Some(l) => sys.with_lipschitz(l),
                None => sys,
            }),
            m => m,
        };

        let mut input = None;
        let mut impulses = Vec::new();
        if let Some(inp) = &raw.input {
            if !linear && (inp.w.is_some() || !inp.impulses.is_empty()) {
                return self.err(
                    "input",
                    None,
                    "kind = \"nonlinear\" takes no input section; put forcing into system.field",
                );
            }
            if let Some(w) = &inp.w {
                let exprs = self.entries("input.w", w, dim)?;
                for (k, e) in exprs.iter().enumerate() {
                    if e.max_state_index() > 0 {
                        return self.err(
                            format!("input.w[{k}]"),
                            Some(w.get_ref()[k].span()),
                            "input may depend on t only",
                        );
                    }
                }
                input = Some(exprs);
            }
            let mut last: Option<f64> = None;
            for (k, imp) in inp.impulses.iter().enumerate() {
                let path = format!("input.impulses[{k}]");
                let span = Some(imp.span());
                let RawImpulse { time, vector } = imp.get_ref();
                if vector.len() != dim {
                    return self.err(path, span, format!("vector needs {dim} entries, found {}", vector.len()));
                }
                if grid.index_of(*time).is_none() {
                    return self.err(path, span, format!("time {time} is not a grid point"));
                }
                if last.is_some_and(|l| *time <= l) {
                    return self.err(path, span, "impulse times must be strictly increasing");
                }
                last = Some(*time);
                impulses.push((*time, DVector::from_column_slice(vector)));
            }
        }

        let s = &raw.solver;
        let method = s.method;
        match (linear, method) {
            (false, Method::PeanoBaker | Method::Commuting | Method::BasisSolve) => {
                return self.err("solver.method", None, format!("method \"{}\" needs a linear system", method.name()));
            }
            (true, Method::Picard) if !impulses.is_empty() => {
                return self.err("solver.method", None, "method \"picard\" does not support impulses");
            }
            _ => {}
        }
        let rtol = match &s.rtol {
            Some(r) if !(*r.get_ref() > 0.0 && *r.get_ref() < 1.0) => {
                return self.err("solver.rtol", Some(r.span()), "must lie in (0, 1)")
            }
            Some(r) => *r.get_ref(),
            None => volterra_core::ltv::DEFAULT_RTOL,
        };
        let max_terms = match &s.max_terms {
            Some(m) if *m.get_ref() == 0 => return self.err("solver.max_terms", Some(m.span()), "must be at least 1"),
            Some(m) => *m.get_ref(),
            None => volterra_core::ltv::DEFAULT_MAX_TERMS,
        };
        let max_iters = match &s.max_iters {
            Some(m) if *m.get_ref() == 0 => return self.err("solver.max_iters", Some(m.span()), "must be at least 1"),
            Some(m) => *m.get_ref(),
            None => volterra_core::picard::DEFAULT_MAX_ITERS,
        };
        let blowup_threshold = match &s.blowup_threshold {
            Some(b) if b.get_ref().is_nan() || *b.get_ref() <= 0.0 => {
                return self.err("solver.blowup_threshold", Some(b.span()), "must be positive")
            }
            Some(b) => *b.get_ref(),
            None => volterra_core::picard::DEFAULT_BLOWUP_THRESHOLD,
        };

        let o = &raw.outputs;
        if o.stm_csv.is_some() && (!linear || method == Method::Picard) {
            return self.err(
                "outputs.stm_csv",
                None,
                "transition matrices exist only for linear systems with a linear route",
            );
        }
        let outputs = Outputs {
            trajectory_csv: PathBuf::from(o.trajectory_csv.clone().unwrap_or_else(|| format!("{stem}.csv"))),
            stm_csv: o.stm_csv.as_ref().map(PathBuf::from),
            report: PathBuf::from(o.report.clone().unwrap_or_else(|| format!("{stem}.report.txt"))),
        };

        Ok(RunConfig {
            source: PathBuf::from(format!("{stem}.toml")),
            kind,
            dimension: dim,
            model,
            grid,
            initial,
            input,
            impulses,
            solver: SolverSettings { method, rtol, max_terms, max_iters, blowup_threshold },
            lipschitz,
            outputs,
        })
    }
}
