//! CSV histories, run summaries and atomic file writes.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use bregbox::bregman::RunOutcome;
use bregbox::diagnostics::{fit_rate, Metric, MetricRow};

use crate::error::CliError;

pub const HISTORY_HEADER: &str = "k,alpha_k,gamma_k,H_uk,H_gap,stat_res,u_err_L2_sq,u_err_L1_A,breg_dist_ref,v_k_norm,lambda_avg_err_sq,subproblem_iters,wall_ms";

/// Metrics whose log-log slopes go into summaries and sweep tables.
pub const FITTED: [Metric; 6] =
    [Metric::HGap, Metric::StatRes, Metric::UErrL2Sq, Metric::UErrL1A, Metric::BregDistRef, Metric::LambdaAvgErrSq];

/// 17 significant digits, enough to round-trip any `f64`.
pub fn num(x: f64) -> String {
    format!("{x:.16e}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

pub fn history_csv(rows: &[MetricRow]) -> String {
    let mut out = String::with_capacity(64 + rows.len() * 256);
    out.push_str(HISTORY_HEADER);
    out.push('\n');
    for r in rows {
        let fields = [
            r.k.to_string(),
            num(r.alpha_k),
            num(r.gamma_k),
            num(r.h_uk),
            opt(r.h_gap),
            num(r.stat_res),
            opt(r.u_err_l2_sq),
            opt(r.u_err_l1_a),
            opt(r.breg_dist_ref),
            opt(r.v_k_norm),
            opt(r.lambda_avg_err_sq),
            r.subproblem_iters.to_string(),
            num(r.wall_ms),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Default fit window: the last 90% of the iterations.
pub fn fit_range(rows: &[MetricRow], requested: Option<(usize, usize)>) -> (usize, usize) {
    requested.unwrap_or_else(|| {
        let last = rows.last().map_or(0, |r| r.k);
        ((last / 10).max(1), last)
    })
}

/// Slope of each fitted metric, or `None` where the fit is undefined (missing or
/// nonpositive values, fewer than two points).
pub fn slopes(rows: &[MetricRow], range: (usize, usize)) -> Vec<(Metric, Option<f64>)> {
    FITTED.iter().map(|&m| (m, fit_rate(rows, m, range).ok().map(|f| f.slope))).collect()
}

pub fn summary(benchmark: &str, runs: &[(&str, &RunOutcome)], fit: Option<(usize, usize)>) -> String {
    let mut out = format!("benchmark = {benchmark}\n");
    for (mode, o) in runs {
        let rows = o.history();
        let range = fit_range(rows, fit);
        let _ = writeln!(out, "{mode}.final_k = {}", o.state.k);
        let _ = writeln!(out, "{mode}.stop_reason = {}", o.stop.as_str());
        if let Some(last) = rows.last() {
            let _ = writeln!(out, "{mode}.final_H_uk = {}", num(last.h_uk));
            let _ = writeln!(out, "{mode}.final_stat_res = {}", num(last.stat_res));
            if let Some(g) = last.h_gap {
                let _ = writeln!(out, "{mode}.final_H_gap = {}", num(g));
            }
        }
        let _ = writeln!(out, "{mode}.fit_k_min = {}", range.0);
        let _ = writeln!(out, "{mode}.fit_k_max = {}", range.1);
        for (m, s) in slopes(rows, range) {
            let _ = writeln!(out, "{mode}.slope.{} = {}", m.name(), opt(s));
        }
    }
    out
}

/// Writes to a temporary file next to `path` and renames it into place, so readers
/// never see a partial file.
pub fn write_atomic(path: &Path, contents: &str) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(format!("cannot create {}", dir.display()), e))?;
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("output");
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let write = || -> std::io::Result<()> {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(contents.as_bytes())?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    };
    write().map_err(|e| {
        let _ = fs::remove_file(&tmp);
        CliError::io(format!("cannot write {}", path.display()), e)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(k: usize, gap: Option<f64>) -> MetricRow {
        MetricRow {
            k,
            alpha_k: 1.0,
            gamma_k: k as f64,
            h_uk: 0.5,
            h_gap: gap,
            stat_res: 1.0 / k as f64,
            u_err_l2_sq: None,
            u_err_l1_a: None,
            breg_dist_ref: None,
            v_k_norm: None,
            lambda_avg_err_sq: None,
            subproblem_iters: 3,
            wall_ms: 0.25,
        }
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, -2.5e-300, 6.02214076e23, f64::MIN_POSITIVE, 0.0] {
            let s = num(x);
            assert_eq!(s.parse::<f64>().unwrap(), x, "{s}");
            assert_eq!(s.trim_start_matches('-').split('e').next().unwrap().len(), 18);
        }
    }

    #[test]
    fn absent_metrics_are_empty_fields() {
        let csv = history_csv(&[row(1, None), row(2, Some(0.0))]);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], HISTORY_HEADER);
        let f1: Vec<&str> = lines[1].split(',').collect();
        assert_eq!(f1.len(), 13);
        assert_eq!(f1[0], "1");
        assert_eq!(f1[4], "");
        assert_eq!(f1[11], "3");
        let f2: Vec<&str> = lines[2].split(',').collect();
        assert_eq!(f2[4].parse::<f64>().unwrap(), 0.0);
    }

    #[test]
    fn default_fit_window() {
        let rows: Vec<MetricRow> = (1..=200).map(|k| row(k, None)).collect();
        assert_eq!(fit_range(&rows, None), (20, 200));
        assert_eq!(fit_range(&rows[..5], None), (1, 5));
        assert_eq!(fit_range(&rows, Some((3, 9))), (3, 9));
        let s = slopes(&rows, (20, 200));
        let stat = s.iter().find(|(m, _)| *m == Metric::StatRes).unwrap().1.unwrap();
        assert!((stat + 1.0).abs() < 1e-12);
        assert!(s.iter().find(|(m, _)| *m == Metric::HGap).unwrap().1.is_none());
    }

    #[test]
    fn atomic_write_replaces_contents() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("nested").join("a.txt");
        write_atomic(&path, "first").unwrap();
        write_atomic(&path, "second").unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "second");
        let leftovers = fs::read_dir(path.parent().unwrap()).unwrap().count();
        assert_eq!(leftovers, 1);
    }
}
