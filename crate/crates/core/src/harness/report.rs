use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::adapt::Method;
use crate::error::{Error, Result};
use crate::harness::config::RunConfig;
use crate::harness::manifest::{prepare_out_dir, Command, Manifest};
use crate::harness::tasks::task;
use crate::sim::io::read_samples;

pub const REPORT_CSV: &str = "report.csv";
pub const REPORT_TXT: &str = "report.txt";
pub const HIST1D_CSV: &str = "hist1d.csv";
pub const HIST2D_CSV: &str = "hist2d.csv";
pub const HIST1D_BINS: usize = 40;
pub const HIST2D_BINS: usize = 20;

/// Mean metrics of one `(task, method)` cell over its seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct ReportRow {
    pub task: String,
    pub method: String,
    pub wass: f64,
    pub mmd_sq: f64,
    pub seeds: usize,
}

fn method_rank(name: &str) -> usize {
    Method::ALL.iter().position(|m| m.name() == name).unwrap_or(Method::ALL.len())
}

/// Collects evaluation manifests into rows ordered by task, then by method in
/// the order SNPE, TTT, LoRA, GS-TTT, GS-PEA.
pub fn collect_rows(manifests: &[Manifest]) -> Result<Vec<ReportRow>> {
    let mut cells: BTreeMap<(String, usize, String), Vec<(f64, f64)>> = BTreeMap::new();
    for m in manifests {
        let Some(r) = &m.metrics else { continue };
        cells
            .entry((r.task.clone(), method_rank(&r.method), r.method.clone()))
            .or_default()
            .push((r.wass, r.mmd_sq));
    }
    if cells.is_empty() {
        return Err(Error::InvalidConfig("no evaluation manifests to report".into()));
    }
    Ok(cells
        .into_iter()
        .map(|((task, _, method), v)| {
            let n = v.len() as f64;
            ReportRow {
                task,
                method,
                wass: v.iter().map(|x| x.0).sum::<f64>() / n,
                mmd_sq: v.iter().map(|x| x.1).sum::<f64>() / n,
                seeds: v.len(),
            }
        })
        .collect())
}

pub fn render_csv(rows: &[ReportRow]) -> String {
    let mut s = String::from("task,method,wass,mmd_sq\n");
    for r in rows {
        let _ = writeln!(s, "{},{},{},{}", r.task, r.method, r.wass, r.mmd_sq);
    }
    s
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let label = |m: &str| m.parse::<Method>().map(|m| m.label().to_string()).unwrap_or_else(|_| m.to_string());
    let mut s = format!("{:<14} {:<18} {:>10} {:>10} {:>6}\n", "Task", "Method", "WASS", "MMD^2", "Seeds");
    let mut last = "";
    for r in rows {
        let t = if r.task == last { "" } else { r.task.as_str() };
        let _ = writeln!(s, "{:<14} {:<18} {:>10.4} {:>10.4} {:>6}", t, label(&r.method), r.wass, r.mmd_sq, r.seeds);
        last = &r.task;
    }
    s
}

fn bin(v: f64, lo: f64, hi: f64, bins: usize) -> usize {
    (((v - lo) / (hi - lo) * bins as f64).floor().max(0.0) as usize).min(bins - 1)
}

/// Normalized 1-D and 2-D histograms of every estimate and reference in `manifests`
/// over the task's prior box, for external pair plots.
fn histograms(manifests: &[Manifest]) -> Result<(String, String)> {
    let mut h1 = String::from("task,source,param,bin,lower,upper,density\n");
    let mut h2 = String::from("task,source,param_x,param_y,bin_x,bin_y,density\n");
    let mut seen = std::collections::BTreeSet::new();
    for m in manifests {
        let (Some(r), Ok(est), Ok(refp)) = (&m.metrics, m.input("estimate"), m.input("reference")) else {
            continue;
        };
        let Ok(t) = task(&r.task) else { continue };
        for (source, path) in [(r.method.clone(), est), ("reference".to_string(), refp)] {
            let key = (r.task.clone(), source.clone(), path.to_path_buf());
            if !seen.insert(key) {
                continue;
            }
            let pts = read_samples::<f64>(path)?;
            let n = pts.len() as f64;
            let (lo, hi) = (&t.prior_lower, &t.prior_upper);
            for i in 0..lo.len() {
                let mut counts = vec![0usize; HIST1D_BINS];
                for p in &pts {
                    counts[bin(p[i], lo[i], hi[i], HIST1D_BINS)] += 1;
                }
                let w = (hi[i] - lo[i]) / HIST1D_BINS as f64;
                for (b, c) in counts.iter().enumerate() {
                    let a = lo[i] + b as f64 * w;
                    let _ = writeln!(h1, "{},{},{},{},{},{},{}", r.task, source, i, b, a, a + w, *c as f64 / (n * w));
                }
                for j in i + 1..lo.len() {
                    let mut grid = vec![0usize; HIST2D_BINS * HIST2D_BINS];
                    for p in &pts {
                        grid[bin(p[i], lo[i], hi[i], HIST2D_BINS) * HIST2D_BINS + bin(p[j], lo[j], hi[j], HIST2D_BINS)] += 1;
                    }
                    let area = (hi[i] - lo[i]) * (hi[j] - lo[j]) / (HIST2D_BINS * HIST2D_BINS) as f64;
                    for (k, c) in grid.iter().enumerate() {
                        let _ = writeln!(
                            h2,
                            "{},{},{},{},{},{},{}",
                            r.task,
                            source,
                            i,
                            j,
                            k / HIST2D_BINS,
                            k % HIST2D_BINS,
                            *c as f64 / (n * area)
                        );
                    }
                }
            }
        }
    }
    Ok((h1, h2))
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    let p = dir.join(name);
    std::fs::write(&p, text).map_err(|e| Error::io(&p, e))
}

/// Summary table, CSV and histogram data over the evaluation manifests at `paths`.
pub fn cmd_report(paths: &[PathBuf], out_dir: &Path) -> Result<Manifest> {
    let started = Instant::now();
    let manifests = paths.iter().map(|p| Manifest::load(p)).collect::<Result<Vec<_>>>()?;
    let rows = collect_rows(&manifests)?;
    prepare_out_dir(out_dir)?;
    let mut m = Manifest::new(Command::Report, 0, &manifests.first().map(|m| m.config.clone()).unwrap_or_else(RunConfig::default));
    for (k, p) in paths.iter().enumerate() {
        m.inputs.insert(format!("manifest_{k:04}"), std::fs::canonicalize(p).unwrap_or_else(|_| p.clone()));
    }
    write(out_dir, REPORT_CSV, &render_csv(&rows))?;
    write(out_dir, REPORT_TXT, &render_table(&rows))?;
    let (h1, h2) = histograms(&manifests)?;
    write(out_dir, HIST1D_CSV, &h1)?;
    write(out_dir, HIST2D_CSV, &h2)?;
    for (role, f) in [("table_csv", REPORT_CSV), ("table_text", REPORT_TXT), ("hist1d", HIST1D_CSV), ("hist2d", HIST2D_CSV)] {
        m.outputs.insert(role.into(), f.into());
    }
    m.wall_clock_secs = started.elapsed().as_secs_f64();
    m.save(out_dir)?;
    Ok(m)
}
