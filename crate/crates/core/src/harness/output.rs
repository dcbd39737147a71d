//! CSV emission and the summary reader behind `rate_report`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::engine::{RateFit, ReplicationSummary, fit_rate};
use crate::error::{Error, Result};

/// Full-precision float: 17 significant digits, enough to round-trip any `f64`.
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

/// Short column tag for a summary series.
fn tag(name: &str) -> &str {
    match name {
        "err_x_sq" => "x",
        "err_y_sq" => "y",
        "err_track_sq" => "track",
        other => other,
    }
}

pub const TRAJECTORY_HEADER: &str = "rep,n,err_x_sq,err_y_sq,err_track_sq,lyapunov,alpha_n,beta_n";

/// One row per `(replication, checkpoint)`. Replication `r` used seed `base_seed + r`. Absent
/// series leave their cell empty; a `metric` column is appended when a metric was recorded.
pub fn trajectory_csv(summary: &ReplicationSummary) -> String {
    let has_metric = summary.series("metric").is_some();
    let mut out = String::from(TRAJECTORY_HEADER);
    if has_metric {
        out.push_str(",metric");
    }
    out.push('\n');
    let cell = |v: &Option<Vec<f64>>, i: usize| v.as_ref().map_or(String::new(), |v| num(v[i]));
    for (rep, (_, r)) in summary.runs.iter().enumerate() {
        for (i, n) in r.checkpoints.iter().enumerate() {
            let _ = write!(
                out,
                "{rep},{n},{},{},{},{},{},{}",
                cell(&r.err_x_sq, i),
                cell(&r.err_y_sq, i),
                cell(&r.err_track_sq, i),
                cell(&r.lyapunov, i),
                num(r.alpha[i]),
                num(r.beta[i])
            );
            if has_metric {
                let _ = write!(out, ",{}", cell(&r.metric, i));
            }
            out.push('\n');
        }
    }
    out
}

/// `n,mean_err_x_sq,se_x,mean_err_y_sq,se_y` followed by `mean_<s>,se_<s>` for every other
/// recorded series.
pub fn summary_csv(summary: &ReplicationSummary) -> String {
    let mut out = String::from("n");
    for s in &summary.series {
        let _ = write!(out, ",mean_{},se_{}", s.name, tag(s.name));
    }
    out.push('\n');
    for (i, n) in summary.checkpoints.iter().enumerate() {
        out.push_str(&n.to_string());
        for s in &summary.series {
            let _ = write!(out, ",{},{}", num(s.mean[i]), num(s.se[i]));
        }
        out.push('\n');
    }
    out
}

/// A summary CSV read back from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryTable {
    /// Leading `#` lines, verbatim.
    pub comments: Vec<String>,
    pub checkpoints: Vec<usize>,
    /// `(series name, per-checkpoint mean)` for every `mean_*` column.
    pub means: Vec<(String, Vec<f64>)>,
}

pub fn read_summary(path: impl AsRef<Path>) -> Result<SummaryTable> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate().peekable();
    let mut comments = Vec::new();
    while let Some((_, l)) = lines.peek() {
        if l.starts_with('#') {
            comments.push(l.to_string());
            lines.next();
        } else {
            break;
        }
    }
    let (_, header) = lines.next().ok_or_else(|| Error::Parse(format!("{}: no header row", path.display())))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"n") {
        return Err(Error::Parse(format!("{}: first column must be `n`", path.display())));
    }
    let mean_cols: Vec<(usize, String)> = cols
        .iter()
        .enumerate()
        .filter_map(|(i, c)| c.strip_prefix("mean_").map(|s| (i, s.to_string())))
        .collect();
    let mut checkpoints = Vec::new();
    let mut means: Vec<(String, Vec<f64>)> = mean_cols.iter().map(|(_, s)| (s.clone(), Vec::new())).collect();
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != cols.len() {
            return Err(Error::Parse(format!("{}:{}: expected {} cells, found {}", path.display(), lineno + 1, cols.len(), cells.len())));
        }
        let bad = |c: &str| Error::Parse(format!("{}:{}: cannot parse `{c}`", path.display(), lineno + 1));
        checkpoints.push(cells[0].trim().parse().map_err(|_| bad(cells[0]))?);
        for ((i, _), (_, vals)) in mean_cols.iter().zip(means.iter_mut()) {
            vals.push(cells[*i].trim().parse().map_err(|_| bad(cells[*i]))?);
        }
    }
    Ok(SummaryTable { comments, checkpoints, means })
}

/// Fits every mean series of a summary CSV over `window`, writes the fits to
/// `<input stem>.rates.csv` next to the input and returns them with the written path.
pub fn rate_report(summary_path: impl AsRef<Path>, window: (usize, usize)) -> Result<(Vec<(String, RateFit)>, PathBuf)> {
    let summary_path = summary_path.as_ref();
    let table = read_summary(summary_path)?;
    let mut fits = Vec::new();
    for (name, vals) in &table.means {
        fits.push((name.clone(), fit_rate(&table.checkpoints, vals, window)?));
    }
    let mut body = String::new();
    for c in &table.comments {
        body.push_str(c);
        body.push('\n');
    }
    body.push_str(RateFit::CSV_HEADER);
    body.push('\n');
    for (name, f) in &fits {
        body.push_str(&f.csv_row(name));
        body.push('\n');
    }
    let stem = summary_path.file_stem().and_then(|s| s.to_str()).unwrap_or("summary");
    let out = summary_path.with_file_name(format!("{stem}.rates.csv"));
    fs::write(&out, body)?;
    Ok((fits, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seventeen_significant_digits_round_trip() {
        for v in [0.1, 1.0 / 3.0, 2.0f64.sqrt() * 1e-300, 123_456_789.123_456_79] {
            let s = num(v);
            assert_eq!(s.parse::<f64>().unwrap(), v);
            let digits = s.split('e').next().unwrap().replace(['.', '-'], "");
            assert_eq!(digits.len(), 17);
        }
    }

    #[test]
    fn summary_file_round_trip_and_rates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("summary.csv");
        let ns: Vec<usize> = crate::engine::log_checkpoints(10, 10_000, 30);
        let mut text = String::from("# config_hash=abc seed=1\nn,mean_err_x_sq,se_x,mean_err_y_sq,se_y\n");
        for &n in &ns {
            let n_f = n as f64;
            text.push_str(&format!("{n},{},0,{},0\n", num(4.0 / n_f), num(2.0 * n_f.powf(-2.0 / 3.0))));
        }
        fs::write(&path, text).unwrap();
        let table = read_summary(&path).unwrap();
        assert_eq!(table.checkpoints, ns);
        assert_eq!(table.comments, vec!["# config_hash=abc seed=1".to_string()]);
        let (fits, out) = rate_report(&path, (10, 10_000)).unwrap();
        assert!((fits[0].1.slope + 1.0).abs() < 1e-9);
        assert!((fits[1].1.slope + 2.0 / 3.0).abs() < 1e-9);
        let written = fs::read_to_string(out).unwrap();
        assert!(written.starts_with("# config_hash=abc seed=1\nseries,slope"));
    }

    #[test]
    fn too_few_points_in_window() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("s.csv");
        fs::write(&path, "n,mean_err_x_sq,se_x\n10,1,0\n100,0.1,0\n1000,0.01,0\n").unwrap();
        assert!(matches!(rate_report(&path, (1, 1000)), Err(Error::InsufficientPoints { .. })));
    }
}
