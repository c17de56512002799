//! Static SVG + CSV report over a results directory.
//!
//! For every protocol directory holding a `summary.csv`, writes into its
//! `report/` subdirectory:
//! - `metric_<name>.svg/.csv`: per-cell means with 95% CI whiskers;
//! - `signals_<cell>.svg/.csv`: log-scale signal trajectories of the cell's
//!   first trial, survivors coloured above the dashed survival threshold;
//! - `loss_<cell>.svg/.csv`: train/test loss curves of the same trial;
//! - `heatmap_<cell>_<trial>_<kind>.svg/.csv`: fitted ODE coefficient matrices;
//! - `ode_<cell>_<trial>.svg/.csv`: recorded vs ODE-propagated signals.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use csl_core::{Error, Result};

use crate::svg::{heatmap, Chart, Scale, MUTED, PALETTE};

fn corrupt(path: &Path, what: impl std::fmt::Display) -> Error {
    Error::domain(format!("{}: {what}", path.display()))
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str, written: &mut Vec<PathBuf>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))?;
    written.push(path.to_path_buf());
    Ok(())
}

/// Rows of a numeric CSV with the given header; `keep` columns are parsed as
/// text, the rest as `f64`.
struct Table {
    text: Vec<Vec<String>>,
    nums: Vec<Vec<f64>>,
}

fn read_table(path: &Path, header: &[&str], text_cols: &[usize]) -> Result<Table> {
    let body = read(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let got = rdr.headers().map_err(|e| corrupt(path, e))?.clone();
    if got.iter().ne(header.iter().copied()) {
        return Err(corrupt(path, format!("expected header `{}`", header.join(","))));
    }
    let mut table = Table { text: Vec::new(), nums: Vec::new() };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| corrupt(path, e))?;
        let (mut text, mut nums) = (Vec::new(), Vec::new());
        for (i, field) in rec.iter().enumerate() {
            if text_cols.contains(&i) {
                text.push(field.to_string());
            } else {
                let v = match field {
                    "NaN" | "nan" => f64::NAN,
                    "inf" => f64::INFINITY,
                    "-inf" => f64::NEG_INFINITY,
                    f => f.parse().map_err(|_| corrupt(path, format!("row {}: bad number `{f}`", line + 2)))?,
                };
                nums.push(v);
            }
        }
        table.text.push(text);
        table.nums.push(nums);
    }
    Ok(table)
}

fn sorted_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Protocol directories under `dir` (or `dir` itself) that hold a summary.
pub fn protocol_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Err(Error::domain(format!("{}: results directory not found", dir.display())));
    }
    if dir.join("summary.csv").is_file() {
        return Ok(vec![dir.to_path_buf()]);
    }
    let found: Vec<PathBuf> = sorted_dirs(dir)?.into_iter().filter(|d| d.join("summary.csv").is_file()).collect();
    if found.is_empty() {
        return Err(Error::domain(format!("{}: no summary.csv found; nothing to report", dir.display())));
    }
    Ok(found)
}

/// Render every protocol directory under `dir`; returns the written files.
pub fn render_report(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for proto in protocol_dirs(dir)? {
        render_protocol(&proto, &mut written)?;
    }
    Ok(written)
}

fn render_protocol(proto: &Path, written: &mut Vec<PathBuf>) -> Result<()> {
    let out = proto.join("report");
    let name = file_name(proto);
    let summary_path = proto.join("summary.csv");
    let summary = read_table(&summary_path, &["cell", "metric", "n", "mean", "ci_low", "ci_high"], &[0, 1])?;

    // metric -> [(cell, mean, lo, hi)] in summary order.
    let mut metrics: BTreeMap<&str, Vec<(&str, f64, f64, f64)>> = BTreeMap::new();
    for (t, n) in summary.text.iter().zip(&summary.nums) {
        metrics.entry(&t[1]).or_default().push((&t[0], n[1], n[2], n[3]));
    }
    for (metric, rows) in &metrics {
        let (svg, csv) = metric_chart(&name, metric, rows);
        write(&out.join(format!("metric_{metric}.svg")), &svg, written)?;
        write(&out.join(format!("metric_{metric}.csv")), &csv, written)?;
    }

    for cell in sorted_dirs(proto)? {
        let cell_name = file_name(&cell);
        if cell_name == "report" {
            continue;
        }
        let trials = sorted_dirs(&cell)?;
        if let Some(trial) = trials.iter().find(|t| t.join("trajectory.csv").is_file()) {
            let (svg, csv) = signal_chart(&format!("{name} {cell_name} {}", file_name(trial)), trial)?;
            write(&out.join(format!("signals_{cell_name}.svg")), &svg, written)?;
            write(&out.join(format!("signals_{cell_name}.csv")), &csv, written)?;
            if let Some((svg, csv)) = loss_chart(&format!("{name} {cell_name} {} loss", file_name(trial)), trial)? {
                write(&out.join(format!("loss_{cell_name}.svg")), &svg, written)?;
                write(&out.join(format!("loss_{cell_name}.csv")), &csv, written)?;
            }
        }
        for trial in &trials {
            let tag = format!("{cell_name}_{}", file_name(trial));
            for kind in ["dense", "lasso"] {
                let path = trial.join(format!("heatmap_{kind}.csv"));
                if path.is_file() {
                    let (svg, csv) = heatmap_chart(&format!("{kind} A, {cell_name} {}", file_name(trial)), &path)?;
                    write(&out.join(format!("heatmap_{tag}_{kind}.svg")), &svg, written)?;
                    write(&out.join(format!("heatmap_{tag}_{kind}.csv")), &csv, written)?;
                }
            }
            let est = trial.join("estimated.csv");
            if est.is_file() {
                let (svg, csv) = ode_chart(&format!("ODE fit, {cell_name} {}", file_name(trial)), &est)?;
                write(&out.join(format!("ode_{tag}.svg")), &svg, written)?;
                write(&out.join(format!("ode_{tag}.csv")), &csv, written)?;
            }
        }
    }
    Ok(())
}

fn metric_chart(protocol: &str, metric: &str, rows: &[(&str, f64, f64, f64)]) -> (String, String) {
    let values = rows.iter().flat_map(|r| [r.1, r.2, r.3]);
    let positive = rows.iter().all(|r| r.1 > 0.0 && r.2 > 0.0);
    let (lo, hi) = rows
        .iter()
        .filter(|r| r.1.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), r| (a.min(r.1), b.max(r.1)));
    let y = if positive && hi / lo > 100.0 { Scale::log_for(values) } else { Scale::linear_for(values) };
    let x = Scale::Linear { lo: -0.5, hi: rows.len() as f64 - 0.5 };
    let mut chart = Chart::new(&format!("{protocol}: {metric}"), x, y, "cell", metric);
    chart.x_categories(&rows.iter().map(|r| r.0.to_string()).collect::<Vec<_>>());
    let line: Vec<(f64, f64)> = rows.iter().enumerate().map(|(i, r)| (i as f64, r.1)).collect();
    chart.polyline(&line, "mean-line", PALETTE[0], false);
    let mut csv = String::from("cell,mean,ci_low,ci_high\n");
    for (i, r) in rows.iter().enumerate() {
        chart.point_with_whisker(i as f64, r.1, r.2, r.3, PALETTE[0]);
        let _ = writeln!(csv, "{},{:e},{:e},{:e}", r.0, r.1, r.2, r.3);
    }
    (chart.finish(), csv)
}

fn signal_chart(title: &str, trial: &Path) -> Result<(String, String)> {
    let traj_path = trial.join("trajectory.csv");
    let traj = read_table(&traj_path, &["step", "freq", "signal", "train_loss", "test_loss"], &[])?;
    let surv_path = trial.join("survival.csv");
    let surv = read_table(&surv_path, &["freq", "initial_signal", "final_signal", "survived"], &[])?;
    let survived: BTreeMap<usize, bool> = surv.nums.iter().map(|r| (r[0] as usize, r[3] == 1.0)).collect();

    let manifest_path = trial.join("manifest.json");
    let manifest: serde_json::Value =
        serde_json::from_str(&read(&manifest_path)?).map_err(|e| corrupt(&manifest_path, e))?;
    let threshold = manifest.get("survival_threshold").and_then(|v| v.as_f64());

    let mut series: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &traj.nums {
        series.entry(r[1] as usize).or_default().push((r[0], r[2]));
    }
    let max_step = traj.nums.iter().map(|r| r[0]).fold(0.0, f64::max);
    let y = Scale::log_for(traj.nums.iter().map(|r| r[2]).chain(threshold));
    let mut chart = Chart::new(title, Scale::Linear { lo: 0.0, hi: max_step.max(1.0) }, y, "step", "signal");
    chart.x_ticks();
    let mut colour = 0;
    // Dead frequencies first so survivors are drawn on top.
    for alive in [false, true] {
        for (&k, pts) in series.iter().filter(|(k, _)| survived.get(k).copied().unwrap_or(false) == alive) {
            let (class, c) = if alive {
                colour += 1;
                ("survivor", PALETTE[(colour - 1) % PALETTE.len()])
            } else {
                ("dead", MUTED)
            };
            chart.polyline(pts, &format!("freq {class}"), c, false);
            if alive {
                chart.legend(&format!("k = {k}"), c, false);
            }
        }
    }
    if let Some(t) = threshold {
        chart.threshold(t, "survival threshold");
    }

    let mut csv = String::from("step");
    for k in series.keys() {
        let _ = write!(csv, ",k{k}");
    }
    csv.push('\n');
    let n_rows = series.values().map(Vec::len).max().unwrap_or(0);
    for i in 0..n_rows {
        let step = series.values().next().and_then(|s| s.get(i)).map_or(f64::NAN, |p| p.0);
        let _ = write!(csv, "{step}");
        for s in series.values() {
            let _ = write!(csv, ",{:e}", s.get(i).map_or(f64::NAN, |p| p.1));
        }
        csv.push('\n');
    }
    Ok((chart.finish(), csv))
}

fn loss_chart(title: &str, trial: &Path) -> Result<Option<(String, String)>> {
    let path = trial.join("trajectory.csv");
    let traj = read_table(&path, &["step", "freq", "signal", "train_loss", "test_loss"], &[])?;
    let mut points: Vec<(f64, f64, f64)> = traj
        .nums
        .iter()
        .filter(|r| r[1] == 1.0 && (r[3].is_finite() || r[4].is_finite()))
        .map(|r| (r[0], r[3], r[4]))
        .collect();
    points.dedup_by(|a, b| a.0 == b.0);
    if points.is_empty() {
        return Ok(None);
    }
    let max_step = points.iter().map(|p| p.0).fold(0.0, f64::max);
    let y = Scale::log_for(points.iter().flat_map(|p| [p.1, p.2]));
    let mut chart = Chart::new(title, Scale::Linear { lo: 0.0, hi: max_step.max(1.0) }, y, "step", "loss");
    chart.x_ticks();
    chart.polyline(&points.iter().map(|p| (p.0, p.1)).collect::<Vec<_>>(), "train", PALETTE[0], false);
    chart.polyline(&points.iter().map(|p| (p.0, p.2)).collect::<Vec<_>>(), "test", PALETTE[1], true);
    chart.legend("train", PALETTE[0], false);
    chart.legend("test", PALETTE[1], true);
    let mut csv = String::from("step,train_loss,test_loss\n");
    for p in &points {
        let _ = writeln!(csv, "{},{:e},{:e}", p.0, p.1, p.2);
    }
    Ok(Some((chart.finish(), csv)))
}

fn heatmap_chart(title: &str, path: &Path) -> Result<(String, String)> {
    let table = read_table(path, &["i", "j", "alpha"], &[])?;
    let n = table.nums.iter().map(|r| r[0].max(r[1]) as usize).max().unwrap_or(0);
    let mut entries = Vec::with_capacity(table.nums.len());
    for r in &table.nums {
        let (i, j) = (r[0] as usize, r[1] as usize);
        if i == 0 || j == 0 {
            return Err(corrupt(path, "indices are 1-based"));
        }
        entries.push((i - 1, j - 1, r[2]));
    }
    if entries.len() != n * n {
        return Err(corrupt(path, format!("{} entries for a {n}×{n} matrix", entries.len())));
    }
    Ok((heatmap(title, n, &entries), read(path)?))
}

fn ode_chart(title: &str, path: &Path) -> Result<(String, String)> {
    let table = read_table(path, &["step", "freq", "actual", "dense", "lasso"], &[])?;
    let mut actual: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    let mut lasso: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
    for r in &table.nums {
        actual.entry(r[1] as usize).or_default().push((r[0], r[2]));
        lasso.entry(r[1] as usize).or_default().push((r[0], r[4]));
    }
    let (lo, hi) = table.nums.iter().fold((f64::INFINITY, 0.0f64), |(a, b), r| (a.min(r[0]), b.max(r[0])));
    let y = Scale::log_for(table.nums.iter().flat_map(|r| [r[2], r[4]]));
    let mut chart = Chart::new(title, Scale::Linear { lo, hi: hi.max(lo + 1.0) }, y, "step", "signal");
    chart.x_ticks();
    for (i, (k, pts)) in actual.iter().enumerate() {
        let c = PALETTE[i % PALETTE.len()];
        chart.polyline(pts, "actual", c, false);
        chart.polyline(&lasso[k], "estimated", c, true);
    }
    chart.legend("recorded", "#000", false);
    chart.legend("Lasso ODE", "#000", true);
    Ok((chart.finish(), read(path)?))
}
