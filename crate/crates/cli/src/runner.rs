//! `run` and `sweep`.

use std::path::Path;

use bregbox::bregman::{run, run_ppm, ProblemInstance, RunOutcome};
use rayon::prelude::*;

use crate::config::{RunConfig, RunMode, Variant};
use crate::error::CliError;
use crate::output::{fit_range, history_csv, num, slopes, summary, write_atomic, FITTED};

/// Environment variable capping the number of concurrent sweep runs.
pub const THREADS_ENV: &str = "BREGBOX_THREADS";

/// Runs the configured mode(s) on `p`, Bregman first.
pub fn execute(cfg: &RunConfig, p: &ProblemInstance) -> Result<Vec<(&'static str, RunOutcome)>, CliError> {
    let stop = cfg.stop_rule(p);
    let solver = cfg.solver_config();
    let mut out = Vec::with_capacity(2);
    if matches!(cfg.mode, RunMode::Bregman | RunMode::Both) {
        out.push(("bregman", run(p, &cfg.schedule, &stop, &solver)?));
    }
    if matches!(cfg.mode, RunMode::Ppm | RunMode::Both) {
        out.push(("ppm", run_ppm(p, &cfg.schedule, &stop, &solver)?));
    }
    Ok(out)
}

/// `history.csv` for a single mode, `history.<mode>.csv` for both.
fn write_outputs(dir: &Path, cfg: &RunConfig, runs: &[(&'static str, RunOutcome)]) -> Result<(), CliError> {
    for (mode, o) in runs {
        let name = if runs.len() == 1 { "history.csv".to_string() } else { format!("history.{mode}.csv") };
        write_atomic(&dir.join(name), &history_csv(o.history()))?;
    }
    let refs: Vec<(&str, &RunOutcome)> = runs.iter().map(|(m, o)| (*m, o)).collect();
    write_atomic(&dir.join("summary.txt"), &summary(&cfg.benchmark.name, &refs, cfg.fit))
}

pub fn cmd_run(cfg: &RunConfig) -> Result<(), CliError> {
    let p = cfg.build_instance()?;
    let runs = execute(cfg, &p)?;
    write_outputs(&cfg.output, cfg, &runs)?;
    for (mode, o) in &runs {
        eprintln!("{mode}: k = {}, stop = {}", o.state.k, o.stop.as_str());
    }
    Ok(())
}

fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => n,
            _ => return Err(CliError::config(THREADS_ENV, format!("expected a positive integer, got '{v}'"))),
        },
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::config(THREADS_ENV, e.to_string()))
}

pub fn sweep_header() -> String {
    let mut cols = vec!["variant", "mode", "c_alpha", "s", "final_k", "stop_reason"]
        .into_iter()
        .map(String::from)
        .collect::<Vec<_>>();
    cols.extend(FITTED.iter().map(|m| format!("slope_{}", m.name())));
    cols.join(",")
}

/// One run per schedule variant, each writing into `<output>/<variant>/`, plus an
/// aggregated `<output>/sweep.csv` with one row per variant and mode.
pub fn cmd_sweep(cfg: &RunConfig) -> Result<(), CliError> {
    if cfg.sweep.is_empty() {
        return Err(CliError::config("sweep.s", "sweep needs sweep.s and/or sweep.c_alpha"));
    }
    let p = cfg.build_instance()?;
    let pool = thread_pool()?;
    let results: Vec<Result<Vec<(&'static str, RunOutcome)>, CliError>> = pool.install(|| {
        cfg.sweep
            .par_iter()
            .map(|v: &Variant| {
                let mut c = cfg.clone();
                c.schedule = v.schedule.clone();
                let runs = execute(&c, &p)?;
                write_outputs(&cfg.output.join(&v.label), &c, &runs)?;
                Ok(runs)
            })
            .collect()
    });

    let mut csv = sweep_header();
    csv.push('\n');
    for (v, res) in cfg.sweep.iter().zip(results) {
        for (mode, o) in res? {
            let rows = o.history();
            let mut fields = vec![
                v.label.clone(),
                mode.to_string(),
                num(v.c_alpha),
                num(v.s),
                o.state.k.to_string(),
                o.stop.as_str().into(),
            ];
            fields.extend(
                slopes(rows, fit_range(rows, cfg.fit)).into_iter().map(|(_, s)| s.map(num).unwrap_or_default()),
            );
            csv.push_str(&fields.join(","));
            csv.push('\n');
        }
    }
    write_atomic(&cfg.output.join("sweep.csv"), &csv)?;
    eprintln!("sweep: {} variants", cfg.sweep.len());
    Ok(())
}
