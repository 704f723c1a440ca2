//! Run metrics, the ratio sweep harness, and stable CSV / Markdown / SVG
//! rendering.
//!
//! All numeric output uses fixed six-decimal formatting with `.` as the
//! separator and `\n` line endings, so equal tables serialize to identical
//! bytes.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{RequestId, RequestOrigin};
use crate::scenario::{generate_scenario, ScenarioConfig};
use crate::sim::{run, Policy, TransferRecord};

/// Environment variable capping sweep parallelism.
pub const THREADS_ENV: &str = "CROWDCHARGE_THREADS";

/// Outcome of one request within a run.
#[derive(Debug, Clone, PartialEq)]
pub struct RequestRecord {
    pub request_id: RequestId,
    pub origin: RequestOrigin,
    pub required_wh: f64,
    pub delivered_wh: f64,
    pub fulfilled: bool,
}

/// Per-run metrics: the per-request records plus their aggregates.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub scenario_id: String,
    pub policy: Policy,
    pub seed: u64,
    pub records: Vec<RequestRecord>,
    pub success_ratio: f64,
    pub mean_energy_per_request_wh: f64,
    pub total_delivered_wh: f64,
    pub unmet_wh: f64,
    /// Wall time measured by the harness around the run; zero for a bare run.
    pub runtime_ms: u64,
}

impl RunReport {
    pub fn from_records(
        scenario_id: String,
        policy: Policy,
        seed: u64,
        records: Vec<RequestRecord>,
    ) -> Self {
        let total_delivered_wh: f64 = records.iter().map(|r| r.delivered_wh).sum();
        let unmet_wh: f64 =
            records.iter().map(|r| (r.required_wh - r.delivered_wh).max(0.0)).sum();
        let n = records.len();
        let fulfilled = records.iter().filter(|r| r.fulfilled).count();
        RunReport {
            scenario_id,
            policy,
            seed,
            success_ratio: if n == 0 { 0.0 } else { fulfilled as f64 / n as f64 },
            mean_energy_per_request_wh: if n == 0 {
                0.0
            } else {
                total_delivered_wh / n as f64
            },
            total_delivered_wh,
            unmet_wh,
            records,
            runtime_ms: 0,
        }
    }

    pub fn fulfilled_count(&self) -> usize {
        self.records.iter().filter(|r| r.fulfilled).count()
    }
}

/// Fraction of fulfilled requests; zero when no request was launched.
pub fn success_ratio(report: &RunReport) -> f64 {
    if report.records.is_empty() {
        0.0
    } else {
        report.fulfilled_count() as f64 / report.records.len() as f64
    }
}

// ---------------------------------------------------------------------------
// Sweep
// ---------------------------------------------------------------------------

/// One cell of a sweep result table.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub ratio: f64,
    pub regime: String,
    pub policy: Policy,
    pub seed: u64,
    pub requests: usize,
    pub fulfilled: usize,
    pub success_ratio: f64,
    pub mean_energy_per_request_wh: f64,
    pub total_delivered_wh: f64,
    pub unmet_wh: f64,
    pub runtime_ms: u64,
}

/// Regime name for a supply/demand ratio, after the scarce/average/high
/// availability settings.
pub fn regime_name(ratio: f64) -> &'static str {
    if (ratio - 1.0).abs() < 1e-9 {
        "scarce"
    } else if (ratio - 3.0).abs() < 1e-9 {
        "average"
    } else if (ratio - 6.0).abs() < 1e-9 {
        "high"
    } else {
        "custom"
    }
}

/// Run the cartesian product of ratios x seeds x policies over scenarios
/// generated from the template. Within one (ratio, seed) cell all policies
/// run on the same generated scenario and the same realization seed, so
/// policy comparisons are paired. Cells execute concurrently; rows come back
/// sorted by (ratio, seed, policy) regardless of completion order.
pub fn sweep(
    template: &ScenarioConfig,
    ratios: &[f64],
    policies: &[Policy],
    seeds: u32,
) -> Result<Vec<SweepRow>> {
    if ratios.is_empty() || policies.is_empty() || seeds == 0 {
        return Err(Error::Config("sweep needs ratios, policies and seeds >= 1".into()));
    }
    let mut cells = Vec::new();
    for &ratio in ratios {
        for s in 0..seeds {
            cells.push((ratio, template.seed.wrapping_add(u64::from(s))));
        }
    }

    let run_cell = |&(ratio, seed): &(f64, u64)| -> Result<Vec<SweepRow>> {
        let config = ScenarioConfig { supply_demand_ratio: ratio, seed, ..template.clone() };
        let scenario = generate_scenario(&config).map_err(|e| {
            Error::Config(format!("sweep cell ratio={ratio} seed={seed}: {e}"))
        })?;
        policies
            .iter()
            .map(|&policy| {
                let started = Instant::now();
                let report = run(&scenario, policy, seed).map_err(|e| {
                    Error::Config(format!(
                        "sweep cell ratio={ratio} seed={seed} policy={policy}: {e}"
                    ))
                })?;
                Ok(SweepRow {
                    ratio,
                    regime: regime_name(ratio).to_string(),
                    policy,
                    seed,
                    requests: report.records.len(),
                    fulfilled: report.fulfilled_count(),
                    success_ratio: report.success_ratio,
                    mean_energy_per_request_wh: report.mean_energy_per_request_wh,
                    total_delivered_wh: report.total_delivered_wh,
                    unmet_wh: report.unmet_wh,
                    runtime_ms: started.elapsed().as_millis() as u64,
                })
            })
            .collect()
    };

    let results: Vec<Vec<SweepRow>> = match thread_cap() {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().map(run_cell).collect::<Result<_>>())?,
        None => cells.par_iter().map(run_cell).collect::<Result<_>>()?,
    };

    let mut rows: Vec<SweepRow> = results.into_iter().flatten().collect();
    rows.sort_by(|a, b| {
        a.ratio
            .total_cmp(&b.ratio)
            .then(a.seed.cmp(&b.seed))
            .then(a.policy.cmp(&b.policy))
    });
    Ok(rows)
}

fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV).ok()?.parse::<usize>().ok().filter(|&n| n > 0)
}

// ---------------------------------------------------------------------------
// Rendering
// ---------------------------------------------------------------------------

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

/// Sweep table header, exactly the columns of the result CSV.
pub const SWEEP_COLUMNS: &str = "ratio,regime,policy,seed,requests,fulfilled,success_ratio,\
mean_energy_per_request_wh,total_delivered_wh,unmet_wh,runtime_ms";

/// Write the sweep table as CSV.
pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], mut w: W) -> Result<()> {
    writeln!(w, "{SWEEP_COLUMNS}")?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{}",
            fmt6(r.ratio),
            r.regime,
            r.policy,
            r.seed,
            r.requests,
            r.fulfilled,
            fmt6(r.success_ratio),
            fmt6(r.mean_energy_per_request_wh),
            fmt6(r.total_delivered_wh),
            fmt6(r.unmet_wh),
            r.runtime_ms,
        )?;
    }
    Ok(())
}

/// Parse a sweep CSV produced by [`write_sweep_csv`].
pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Config("empty sweep table".into()))?;
    if header != SWEEP_COLUMNS {
        return Err(Error::Config(format!("unexpected sweep header: {header}")));
    }
    let mut rows = Vec::new();
    for (n, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 11 {
            return Err(Error::Config(format!("line {}: expected 11 fields", n + 2)));
        }
        let parse_err = |what: &str| Error::Config(format!("line {}: bad {what}", n + 2));
        rows.push(SweepRow {
            ratio: f[0].parse().map_err(|_| parse_err("ratio"))?,
            regime: f[1].to_string(),
            policy: f[2].parse().map_err(Error::Config)?,
            seed: f[3].parse().map_err(|_| parse_err("seed"))?,
            requests: f[4].parse().map_err(|_| parse_err("requests"))?,
            fulfilled: f[5].parse().map_err(|_| parse_err("fulfilled"))?,
            success_ratio: f[6].parse().map_err(|_| parse_err("success_ratio"))?,
            mean_energy_per_request_wh: f[7].parse().map_err(|_| parse_err("mean energy"))?,
            total_delivered_wh: f[8].parse().map_err(|_| parse_err("total delivered"))?,
            unmet_wh: f[9].parse().map_err(|_| parse_err("unmet"))?,
            runtime_ms: f[10].parse().map_err(|_| parse_err("runtime"))?,
        });
    }
    Ok(rows)
}

/// Render the sweep table as an aligned Markdown table.
pub fn sweep_markdown(rows: &[SweepRow]) -> String {
    let headers: Vec<&str> = SWEEP_COLUMNS.split(',').collect();
    let mut table: Vec<Vec<String>> = vec![headers.iter().map(|s| s.to_string()).collect()];
    for r in rows {
        table.push(vec![
            fmt6(r.ratio),
            r.regime.clone(),
            r.policy.to_string(),
            r.seed.to_string(),
            r.requests.to_string(),
            r.fulfilled.to_string(),
            fmt6(r.success_ratio),
            fmt6(r.mean_energy_per_request_wh),
            fmt6(r.total_delivered_wh),
            fmt6(r.unmet_wh),
            r.runtime_ms.to_string(),
        ]);
    }
    let widths: Vec<usize> = (0..table[0].len())
        .map(|c| table.iter().map(|row| row[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, row) in table.iter().enumerate() {
        out.push('|');
        for (c, cell) in row.iter().enumerate() {
            out.push_str(&format!(" {cell:<width$} |", width = widths[c]));
        }
        out.push('\n');
        if i == 0 {
            out.push('|');
            for width in &widths {
                out.push_str(&format!("{}|", "-".repeat(width + 2)));
            }
            out.push('\n');
        }
    }
    out
}

/// Per-request CSV for one run. Contains no volatile fields, so reruns of the
/// same (scenario, policy, seed) produce identical bytes.
pub fn write_run_csv<W: Write>(report: &RunReport, mut w: W) -> Result<()> {
    writeln!(w, "request_id,origin,required_wh,delivered_wh,fulfilled")?;
    for r in &report.records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.request_id,
            r.origin,
            fmt6(r.required_wh),
            fmt6(r.delivered_wh),
            r.fulfilled,
        )?;
    }
    Ok(())
}

/// Transfer ledger CSV: one row per executed transfer.
pub fn write_ledger_csv<W: Write>(ledger: &[TransferRecord], mut w: W) -> Result<()> {
    writeln!(w, "slot,service_id,request_id,delivered_wh,drawn_wh")?;
    for t in ledger {
        writeln!(
            w,
            "{},{},{},{},{}",
            t.slot,
            t.service_id,
            t.request_id,
            fmt6(t.delivered_wh),
            fmt6(t.drawn_wh),
        )?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Plots
// ---------------------------------------------------------------------------

struct Series {
    label: String,
    color: &'static str,
    points: Vec<(f64, f64)>,
}

const POLICY_COLORS: [(&str, &str); 3] =
    [("reactive", "#d62728"), ("proactive", "#1f77b4"), ("bruteforce", "#2ca02c")];

fn policy_color(policy: Policy) -> &'static str {
    POLICY_COLORS
        .iter()
        .find(|(name, _)| *name == policy.to_string())
        .map(|(_, c)| *c)
        .unwrap_or("#000000")
}

fn mean_by_ratio(rows: &[SweepRow], policy: Policy, metric: fn(&SweepRow) -> f64) -> Vec<(f64, f64)> {
    let mut buckets: BTreeMap<u64, (f64, f64, usize)> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.policy == policy) {
        let key = (r.ratio * 1e6).round() as u64;
        let e = buckets.entry(key).or_insert((r.ratio, 0.0, 0));
        e.1 += metric(r);
        e.2 += 1;
    }
    buckets.into_values().map(|(x, sum, n)| (x, sum / n as f64)).collect()
}

fn render_line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let (w, h) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 50.0);
    let (pw, ph) = (w - ml - mr, h - mt - mb);
    let xs: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.0)).collect();
    let ys: Vec<f64> = series.iter().flat_map(|s| s.points.iter().map(|p| p.1)).collect();
    let (xmin, xmax) = bounds(&xs, 1.0);
    let (ymin, ymax) = bounds(&ys, 0.1);
    let sx = |x: f64| ml + (x - xmin) / (xmax - xmin) * pw;
    let sy = |y: f64| mt + ph - (y - ymin) / (ymax - ymin) * ph;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n  <text x=\"{}\" y=\"22\" \
         text-anchor=\"middle\" font-size=\"15\">{title}</text>\n",
        w / 2.0
    ));
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph,
        ml + pw,
        mt + ph
    ));
    svg.push_str(&format!(
        "  <line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{}\" stroke=\"black\"/>\n",
        mt + ph
    ));
    // Ticks.
    for i in 0..=4 {
        let x = xmin + (xmax - xmin) * f64::from(i) / 4.0;
        let y = ymin + (ymax - ymin) * f64::from(i) / 4.0;
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"middle\">{:.1}</text>\n",
            sx(x),
            mt + ph + 18.0,
            x
        ));
        svg.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" text-anchor=\"end\">{:.2}</text>\n",
            ml - 6.0,
            sy(y) + 4.0,
            y
        ));
        svg.push_str(&format!(
            "  <line x1=\"{ml}\" y1=\"{0:.2}\" x2=\"{1}\" y2=\"{0:.2}\" stroke=\"#dddddd\"/>\n",
            sy(y),
            ml + pw
        ));
    }
    svg.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\">supply/demand ratio</text>\n",
        ml + pw / 2.0,
        h - 12.0
    ));
    svg.push_str(&format!(
        "  <text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{y_label}</text>\n",
        mt + ph / 2.0,
        mt + ph / 2.0
    ));
    // Series.
    for (i, s) in series.iter().enumerate() {
        let pts: Vec<String> =
            s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        svg.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            s.color,
            pts.join(" ")
        ));
        for &(x, y) in &s.points {
            svg.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{}\"/>\n",
                sx(x),
                sy(y),
                s.color
            ));
        }
        let ly = mt + 16.0 * i as f64;
        svg.push_str(&format!(
            "  <rect x=\"{}\" y=\"{:.2}\" width=\"12\" height=\"3\" fill=\"{}\"/>\n",
            ml + pw - 110.0,
            ly,
            s.color
        ));
        svg.push_str(&format!(
            "  <text x=\"{}\" y=\"{:.2}\">{}</text>\n",
            ml + pw - 92.0,
            ly + 5.0,
            s.label
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: &[f64], fallback_span: f64) -> (f64, f64) {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !min.is_finite() || !max.is_finite() {
        return (0.0, fallback_span);
    }
    if (max - min).abs() < 1e-12 {
        (min - fallback_span / 2.0, max + fallback_span / 2.0)
    } else {
        (min, max)
    }
}

/// Emit one SVG per metric (success ratio and energy per request), ratio on
/// the x-axis and one series per policy (mean over seeds). Returns the paths.
pub fn write_sweep_plots(rows: &[SweepRow], dir: &Path) -> Result<Vec<PathBuf>> {
    if rows.is_empty() {
        return Err(Error::Config("cannot plot an empty table".into()));
    }
    let mut policies: Vec<Policy> = Vec::new();
    for r in rows {
        if !policies.contains(&r.policy) {
            policies.push(r.policy);
        }
    }
    policies.sort();
    let charts: [(&str, &str, fn(&SweepRow) -> f64); 2] = [
        ("success_ratio", "success ratio", |r| r.success_ratio),
        ("energy_per_request", "energy per request (Wh)", |r| r.mean_energy_per_request_wh),
    ];
    let mut paths = Vec::new();
    for (stem, y_label, metric) in charts {
        let series: Vec<Series> = policies
            .iter()
            .map(|&p| Series {
                label: p.to_string(),
                color: policy_color(p),
                points: mean_by_ratio(rows, p, metric),
            })
            .collect();
        let svg = render_line_chart(stem, y_label, &series);
        let path = dir.join(format!("{stem}.svg"));
        std::fs::write(&path, svg)?;
        paths.push(path);
    }
    Ok(paths)
}
