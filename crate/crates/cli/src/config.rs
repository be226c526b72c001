//! Run configuration: flat `key = value` text with dotted keys.
//!
//! ```text
//! # comment
//! benchmark.kind = bang_bang_asc
//! schedule.kind = polynomial
//! [schedule]          # prefixes the keys below it
//! s = 0.5
//! ```
//!
//! Every key is validated before anything is computed and unknown keys are
//! rejected. The full schema is in `docs/config.md`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use bregbox::bregman::{ProblemInstance, Schedule, SolverConfig, StopRule, SubSolver};
use bregbox::operator::OperatorKind;
use bregbox::problems::{BenchmarkKind, BenchmarkSpec, Pattern};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunMode {
    Bregman,
    Ppm,
    Both,
}

impl FromStr for RunMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "bregman" => Ok(RunMode::Bregman),
            "ppm" => Ok(RunMode::Ppm),
            "both" => Ok(RunMode::Both),
            other => Err(format!("expected bregman, ppm or both, got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    /// `10⁻⁸‖z‖`
    Auto,
    Off,
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variant {
    pub label: String,
    pub c_alpha: f64,
    pub s: f64,
    pub schedule: Schedule,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub benchmark: BenchmarkSpec,
    pub schedule: Schedule,
    pub solver: SubSolver,
    pub tol: f64,
    pub pg_max_iters: usize,
    pub pdas_max_iters: usize,
    /// Retry with projected gradient when PDAS does not converge.
    pub fallback: bool,
    pub k_max: usize,
    pub epsilon: Epsilon,
    /// `None` is `auto`: `Θ = 1/‖S‖²`.
    pub theta: Option<f64>,
    pub output: PathBuf,
    pub mode: RunMode,
    /// Inclusive `k` range for the slope fits; `None` uses the last 90% of the run.
    pub fit: Option<(usize, usize)>,
    /// Schedule variants of a sweep; empty for plain runs.
    pub sweep: Vec<Variant>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::io(format!("cannot read config {}", path.display()), e))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut r = Reader::new(text)?;
        let benchmark = read_benchmark(&mut r)?;
        let (schedule, c_alpha, s) = read_schedule(&mut r)?;
        let solver = r.parse::<SubSolver>("solver")?.unwrap_or(SubSolver::Pdas);
        let tol = r.positive("tol")?.unwrap_or(bregbox::subproblem::DEFAULT_TOL);
        let pg_max_iters = r.integer("pg_max_iters")?.unwrap_or(bregbox::subproblem::DEFAULT_PG_MAX_ITERS);
        let pdas_max_iters = r.integer("pdas_max_iters")?.unwrap_or(bregbox::subproblem::DEFAULT_PDAS_MAX_ITERS);
        let fallback = r.parse::<bool>("fallback")?.unwrap_or(true);
        let k_max = r.integer("k_max")?.unwrap_or(StopRule::DEFAULT_K_MAX);
        let epsilon = match r.take("epsilon") {
            None => Epsilon::Auto,
            Some(e) if e.value == "auto" => Epsilon::Auto,
            Some(e) if e.value == "none" => Epsilon::Off,
            Some(e) => Epsilon::Value(positive_value("epsilon", &e.value)?),
        };
        let theta = r.auto_positive("theta")?.flatten();
        let output = r.take("output").map(|e| PathBuf::from(e.value)).unwrap_or_else(|| PathBuf::from("out"));
        let mode = r.parse::<RunMode>("mode")?.unwrap_or(RunMode::Bregman);
        let fit = match (r.integer("fit.k_min")?, r.integer("fit.k_max")?) {
            (None, None) => None,
            (lo, hi) => {
                let lo = lo.unwrap_or(1);
                let hi = hi.unwrap_or(k_max);
                if lo == 0 || hi <= lo {
                    return Err(CliError::config(
                        "fit.k_min",
                        format!("fit range [{lo}, {hi}] must satisfy 1 ≤ k_min < k_max"),
                    ));
                }
                Some((lo, hi))
            }
        };
        let sweep = read_sweep(&mut r, &schedule, c_alpha, s)?;
        r.finish()?;
        Ok(Self {
            benchmark,
            schedule,
            solver,
            tol,
            pg_max_iters,
            pdas_max_iters,
            fallback,
            k_max,
            epsilon,
            theta,
            output,
            mode,
            fit,
            sweep,
        })
    }

    pub fn solver_config(&self) -> SolverConfig {
        SolverConfig {
            pg_max_iters: self.pg_max_iters,
            pdas_max_iters: self.pdas_max_iters,
            fallback_to_pg: self.fallback,
            ..SolverConfig::default().with_solver(self.solver).with_tol(self.tol)
        }
    }

    pub fn stop_rule(&self, p: &ProblemInstance) -> StopRule {
        let epsilon = match self.epsilon {
            Epsilon::Auto => Some((1e-8 * p.z.norm()).max(f64::MIN_POSITIVE)),
            Epsilon::Off => None,
            Epsilon::Value(e) => Some(e),
        };
        StopRule { epsilon, k_max: self.k_max, theta: self.theta }
    }

    /// Builds the benchmark. Rejected parameters are reported as config errors.
    pub fn build_instance(&self) -> Result<ProblemInstance, CliError> {
        self.benchmark.build().map_err(|e| CliError::config("benchmark", e.to_string()))
    }
}

fn read_benchmark(r: &mut Reader) -> Result<BenchmarkSpec, CliError> {
    let kind: BenchmarkKind =
        r.parse("benchmark.kind")?.ok_or_else(|| CliError::config("benchmark.kind", "missing required key"))?;
    let mut spec = BenchmarkSpec::new(kind);
    if let Some(e) = r.take("benchmark.name") {
        spec.name = e.value;
    }
    if let Some(n) = r.integer("benchmark.n")? {
        if n < 3 {
            return Err(CliError::config("benchmark.n", format!("need at least 3 nodes, got {n}")));
        }
        spec.n = n;
    }
    if let Some(op) = r.parse::<OperatorKind>("benchmark.operator")? {
        spec.operator = op;
    }
    if let Some(w) = r.positive("benchmark.kernel_width")? {
        spec.kernel_width = w;
    }
    if let Some(a) = r.number("benchmark.lower")? {
        spec.lower = a;
    }
    if let Some(b) = r.number("benchmark.upper")? {
        spec.upper = b;
    }
    if spec.lower > spec.upper {
        return Err(CliError::config(
            "benchmark.lower",
            format!("lower bound {} exceeds upper bound {}", spec.lower, spec.upper),
        ));
    }
    let amplitude = r.number("benchmark.amplitude")?;
    let frequency = r.number("benchmark.frequency")?;
    let phase = r.number("benchmark.phase")?;
    let pattern = r.take("benchmark.pattern").map(|e| e.value).unwrap_or_else(|| "sine".into());
    spec.pattern = match (pattern.as_str(), spec.pattern) {
        ("sine", Pattern::Sine { amplitude: a0, frequency: f0, phase: p0 }) => Pattern::Sine {
            amplitude: amplitude.unwrap_or(a0),
            frequency: frequency.unwrap_or(f0),
            phase: phase.unwrap_or(p0),
        },
        ("random", _) => {
            if frequency.is_some() || phase.is_some() {
                let key = if frequency.is_some() { "benchmark.frequency" } else { "benchmark.phase" };
                return Err(CliError::config(key, "not used by benchmark.pattern = random"));
            }
            Pattern::Random { amplitude: amplitude.unwrap_or(1.0) }
        }
        (other, _) => {
            return Err(CliError::config("benchmark.pattern", format!("expected sine or random, got '{other}'")))
        }
    };
    if let Some(m) = r.auto_positive("benchmark.amplification")? {
        spec.amplification = m;
    }
    if let Some(e) = r.take("benchmark.plateau") {
        spec.plateau = if e.value == "none" {
            None
        } else {
            match parse_list("benchmark.plateau", &e.value)?.as_slice() {
                &[lo, hi] if lo < hi => Some((lo, hi)),
                _ => {
                    return Err(CliError::config(
                        "benchmark.plateau",
                        format!("expected `lo, hi` with lo < hi or `none`, got '{}'", e.value),
                    ))
                }
            }
        };
    }
    if let Some(e) = r.take("benchmark.interior_value") {
        spec.interior_value = match e.value.as_str() {
            "auto" => None,
            v => Some(finite_value("benchmark.interior_value", v)?),
        };
    }
    if let Some(rank) = r.integer("benchmark.plateau_rank")? {
        spec.plateau_rank = rank;
    }
    if let Some(seed) = r.parse::<u64>("benchmark.seed")? {
        spec.seed = seed;
    }
    Ok(spec)
}

/// Returns the schedule and the polynomial parameters a sweep starts from.
fn read_schedule(r: &mut Reader) -> Result<(Schedule, f64, f64), CliError> {
    let kind = r.take("schedule.kind").map(|e| e.value).unwrap_or_else(|| "constant".into());
    let alpha = r.number("schedule.alpha")?;
    let c_alpha = r.number("schedule.c_alpha")?;
    let s = r.number("schedule.s")?;
    let values = r.list("schedule.values")?;
    let unused = |key: &str| CliError::config(key, format!("not used by schedule.kind = {kind}"));
    let invalid = |key: &str, e: bregbox::Error| CliError::config(key, e.to_string());
    match kind.as_str() {
        "constant" => {
            let set = [
                ("schedule.c_alpha", c_alpha.is_some()),
                ("schedule.s", s.is_some()),
                ("schedule.values", values.is_some()),
            ];
            if let Some((key, _)) = set.into_iter().find(|(_, given)| *given) {
                return Err(unused(key));
            }
            let a = alpha.unwrap_or(1.0);
            let sched = Schedule::constant(a).map_err(|e| invalid("schedule.alpha", e))?;
            Ok((sched, a, 0.0))
        }
        "polynomial" => {
            if alpha.is_some() {
                return Err(unused("schedule.alpha"));
            }
            if values.is_some() {
                return Err(unused("schedule.values"));
            }
            let (c, s) = (c_alpha.unwrap_or(1.0), s.unwrap_or(0.0));
            let key = if c > 0.0 { "schedule.s" } else { "schedule.c_alpha" };
            let sched = Schedule::polynomial(c, s).map_err(|e| invalid(key, e))?;
            Ok((sched, c, s))
        }
        "explicit" => {
            let set = [
                ("schedule.alpha", alpha.is_some()),
                ("schedule.c_alpha", c_alpha.is_some()),
                ("schedule.s", s.is_some()),
            ];
            if let Some((key, _)) = set.into_iter().find(|(_, given)| *given) {
                return Err(unused(key));
            }
            let values =
                values.ok_or_else(|| CliError::config("schedule.values", "missing for schedule.kind = explicit"))?;
            let sched = Schedule::explicit(values).map_err(|e| invalid("schedule.values", e))?;
            Ok((sched, 1.0, 0.0))
        }
        other => {
            Err(CliError::config("schedule.kind", format!("expected constant, polynomial or explicit, got '{other}'")))
        }
    }
}

/// `sweep.s` and `sweep.c_alpha` lists; variants are their product, `α_k = c_α k^{−s}`.
fn read_sweep(r: &mut Reader, schedule: &Schedule, c_alpha: f64, s: f64) -> Result<Vec<Variant>, CliError> {
    let ss = r.list("sweep.s")?;
    let cs = r.list("sweep.c_alpha")?;
    if ss.is_none() && cs.is_none() {
        return Ok(Vec::new());
    }
    if matches!(schedule, Schedule::Explicit(_)) {
        let key = if ss.is_some() { "sweep.s" } else { "sweep.c_alpha" };
        return Err(CliError::config(key, "sweeps vary polynomial schedules; schedule.kind is explicit"));
    }
    let ss = ss.unwrap_or_else(|| vec![s]);
    let cs = cs.unwrap_or_else(|| vec![c_alpha]);
    let mut variants = Vec::with_capacity(ss.len() * cs.len());
    for &c in &cs {
        for &s in &ss {
            let key = if c > 0.0 { "sweep.s" } else { "sweep.c_alpha" };
            let schedule = Schedule::polynomial(c, s).map_err(|e| CliError::config(key, e.to_string()))?;
            variants.push(Variant { label: format!("c{c}_s{s}"), c_alpha: c, s, schedule });
        }
    }
    Ok(variants)
}

#[derive(Debug, Clone)]
struct Entry {
    value: String,
}

/// Key-value pairs that have not been consumed yet.
struct Reader {
    entries: BTreeMap<String, Entry>,
}

fn valid_key(key: &str) -> bool {
    !key.is_empty()
        && key.split('.').all(|seg| !seg.is_empty() && seg.chars().all(|c| c.is_ascii_alphanumeric() || c == '_'))
}

impl Reader {
    fn new(text: &str) -> Result<Self, CliError> {
        let mut entries = BTreeMap::new();
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            if let Some(rest) = content.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .map(str::trim)
                    .filter(|n| valid_key(n))
                    .ok_or_else(|| CliError::Syntax { line, message: format!("bad section header `{content}`") })?;
                section = name.to_string();
                continue;
            }
            let (key, value) = content.split_once('=').ok_or_else(|| CliError::Syntax {
                line,
                message: format!("expected `key = value`, got `{content}`"),
            })?;
            let key = key.trim();
            if !valid_key(key) {
                return Err(CliError::Syntax { line, message: format!("bad key `{key}`") });
            }
            let key = if section.is_empty() { key.to_string() } else { format!("{section}.{key}") };
            let value = value.trim();
            if value.is_empty() {
                return Err(CliError::config(key, format!("empty value (line {line})")));
            }
            if entries.contains_key(&key) {
                return Err(CliError::config(key, format!("duplicate key (line {line})")));
            }
            entries.insert(key, Entry { value: value.to_string() });
        }
        Ok(Self { entries })
    }

    fn take(&mut self, key: &str) -> Option<Entry> {
        self.entries.remove(key)
    }

    fn parse<T>(&mut self, key: &str) -> Result<Option<T>, CliError>
    where
        T: FromStr,
        T::Err: Display,
    {
        self.take(key).map(|e| e.value.parse::<T>().map_err(|err| CliError::config(key, err.to_string()))).transpose()
    }

    fn number(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        self.take(key).map(|e| finite_value(key, &e.value)).transpose()
    }

    fn positive(&mut self, key: &str) -> Result<Option<f64>, CliError> {
        self.take(key).map(|e| positive_value(key, &e.value)).transpose()
    }

    /// `auto` gives `Some(None)`.
    fn auto_positive(&mut self, key: &str) -> Result<Option<Option<f64>>, CliError> {
        self.take(key)
            .map(|e| match e.value.as_str() {
                "auto" => Ok(None),
                v => positive_value(key, v).map(Some),
            })
            .transpose()
    }

    fn integer(&mut self, key: &str) -> Result<Option<usize>, CliError> {
        self.take(key)
            .map(|e| {
                e.value
                    .parse::<usize>()
                    .map_err(|_| CliError::config(key, format!("expected a nonnegative integer, got '{}'", e.value)))
            })
            .transpose()
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<f64>>, CliError> {
        self.take(key).map(|e| parse_list(key, &e.value)).transpose()
    }

    fn finish(self) -> Result<(), CliError> {
        match self.entries.into_keys().next() {
            Some(key) => Err(CliError::config(key, "unknown key")),
            None => Ok(()),
        }
    }
}

fn finite_value(key: &str, v: &str) -> Result<f64, CliError> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(CliError::config(key, format!("expected a finite number, got '{v}'"))),
    }
}

fn positive_value(key: &str, v: &str) -> Result<f64, CliError> {
    let x = finite_value(key, v)?;
    if x > 0.0 {
        Ok(x)
    } else {
        Err(CliError::config(key, format!("must be positive, got {v}")))
    }
}

fn parse_list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    let items: Vec<&str> = v.split(',').map(str::trim).collect();
    if items.iter().any(|s| s.is_empty()) {
        return Err(CliError::config(key, format!("empty entry in list '{v}'")));
    }
    items.into_iter().map(|s| finite_value(key, s)).collect()
}
