use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::cell::{CheckpointStage, ExperimentCell};
use super::ledger::TrainRunResult;
use crate::engine::{FinetuneMode, LabelBudget};
use crate::error::{IoContext, Result};
use crate::metrics::mean_std;

/// Mean and sample std of a cell's successful test macro-F1 scores, in [0, 1].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub cell: ExperimentCell,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
    pub failed: usize,
}

impl AggregateRow {
    /// Percent, as printed in the tables.
    pub fn display(&self) -> String {
        format_mean_std(self.mean * 100.0, self.std * 100.0)
    }
}

/// `39.3712, 5.3049` becomes `39.37 ± 5.30`.
pub fn format_mean_std(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

/// Groups results by cell. Cells whose runs all failed get NaN mean and std.
pub fn aggregate(results: &[TrainRunResult]) -> Vec<AggregateRow> {
    let mut groups: BTreeMap<&ExperimentCell, (Vec<(usize, u64, f64)>, usize)> = BTreeMap::new();
    for r in results {
        let g = groups.entry(&r.cell).or_default();
        match r.test_macro_f1() {
            Some(f) => g.0.push((r.fold, r.seed, f)),
            None => g.1 += 1,
        }
    }
    groups
        .into_iter()
        .map(|(cell, (mut scores, failed))| {
            // fixed summation order whatever order the records came in
            scores.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)).then(a.2.total_cmp(&b.2)));
            let values: Vec<f64> = scores.iter().map(|s| s.2).collect();
            let (mean, std) = if values.is_empty() { (f64::NAN, f64::NAN) } else { mean_std(&values) };
            AggregateRow {
                cell: cell.clone(),
                mean,
                std,
                n: values.len(),
                failed,
            }
        })
        .collect()
}

pub const TABLE_COLUMNS: [&str; 5] = ["Baseline", "Frozen Capture", "Frozen Target", "Tuning Capture", "Tuning Target"];

/// Best-stage rows at one budget arranged as dataset x pretext by strategy.
/// The baseline has no pretext, so it is repeated on each pretext row.
fn table_grid(rows: &[AggregateRow], budget: LabelBudget) -> BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanStd>>> {
    let mut grid: BTreeMap<String, BTreeMap<String, BTreeMap<String, MeanStd>>> = BTreeMap::new();
    let selected: Vec<&AggregateRow> = rows
        .iter()
        .filter(|r| r.cell.budget == budget && r.cell.stage == CheckpointStage::Best && r.n > 0)
        .collect();
    for r in &selected {
        if let Some(p) = r.cell.pretext {
            grid.entry(r.cell.dataset_id.clone())
                .or_default()
                .entry(p.name().to_string())
                .or_default()
                .insert(r.cell.strategy(), (r.mean, r.std));
        }
    }
    for r in selected.iter().filter(|r| r.cell.mode == FinetuneMode::Baseline) {
        let pretexts = grid.entry(r.cell.dataset_id.clone()).or_default();
        if pretexts.is_empty() {
            pretexts.insert("none".into(), BTreeMap::new());
        }
        for cols in pretexts.values_mut() {
            cols.insert("Baseline".into(), (r.mean, r.std));
        }
    }
    grid
}

type MeanStd = (f64, f64);

/// Budgets present among the rows, in ascending order with `all` last.
pub fn budgets_of(rows: &[AggregateRow]) -> Vec<LabelBudget> {
    let mut b: Vec<LabelBudget> = rows.iter().map(|r| r.cell.budget).collect();
    b.sort();
    b.dedup();
    b
}

/// CSV with one line per dataset and pretext; empty fields for cells not run.
pub fn render_table_csv(rows: &[AggregateRow], budget: LabelBudget) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["dataset", "pretext"];
    header.extend(TABLE_COLUMNS);
    w.write_record(&header)?;
    for (dataset, pretexts) in table_grid(rows, budget) {
        for (pretext, cols) in pretexts {
            let mut rec = vec![dataset.clone(), pretext];
            for c in TABLE_COLUMNS {
                rec.push(cols.get(c).map_or(String::new(), |&(m, s)| format_mean_std(m * 100.0, s * 100.0)));
            }
            w.write_record(&rec)?;
        }
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf8"))
}

/// Markdown table; the highest mean of each dataset is bolded (ties all bold).
pub fn render_table_markdown(rows: &[AggregateRow], budget: LabelBudget) -> String {
    let mut out = format!("Macro-F1 (%) at label budget `{budget}`\n\n| Dataset | Pretext |");
    for c in TABLE_COLUMNS {
        let _ = write!(out, " {c} |");
    }
    out.push_str("\n|---|---|");
    out.push_str(&"---|".repeat(TABLE_COLUMNS.len()));
    out.push('\n');
    for (dataset, pretexts) in table_grid(rows, budget) {
        let best = pretexts
            .values()
            .flat_map(|c| c.values().map(|v| v.0))
            .fold(f64::NEG_INFINITY, f64::max);
        for (i, (pretext, cols)) in pretexts.iter().enumerate() {
            let name = if i == 0 { dataset.as_str() } else { "" };
            let _ = write!(out, "| {name} | {pretext} |");
            for c in TABLE_COLUMNS {
                let text = match cols.get(c) {
                    Some(&(m, s)) if m == best => format!("**{}**", format_mean_std(m * 100.0, s * 100.0)),
                    Some(&(m, s)) => format_mean_std(m * 100.0, s * 100.0),
                    None => "-".into(),
                };
                let _ = write!(out, " {text} |");
            }
            out.push('\n');
        }
    }
    out
}

/// Per-run differences against the baseline of the same dataset, budget,
/// fold and seed, grouped by pretext and strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSeries {
    pub label: String,
    pub deltas: Vec<f64>,
}

pub fn baseline_deltas(results: &[TrainRunResult]) -> Vec<DeltaSeries> {
    let baseline: BTreeMap<(&str, LabelBudget, usize, u64), f64> = results
        .iter()
        .filter(|r| r.cell.mode == FinetuneMode::Baseline)
        .filter_map(|r| Some(((r.cell.dataset_id.as_str(), r.cell.budget, r.fold, r.seed), r.test_macro_f1()?)))
        .collect();
    let mut series: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    for r in results.iter().filter(|r| r.cell.stage == CheckpointStage::Best) {
        let (Some(score), Some(&base)) = (
            r.test_macro_f1(),
            baseline.get(&(r.cell.dataset_id.as_str(), r.cell.budget, r.fold, r.seed)),
        ) else {
            continue;
        };
        let label = match r.cell.pretext {
            Some(p) => format!("{p} {}", r.cell.strategy()),
            None => "Baseline".into(),
        };
        series.entry(label).or_default().push(score - base);
    }
    series.into_iter().map(|(label, deltas)| DeltaSeries { label, deltas }).collect()
}

const SVG_W: f64 = 720.0;
const MARGIN_L: f64 = 190.0;
const MARGIN_R: f64 = 30.0;
const ROW_H: f64 = 28.0;

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Horizontal box plot of macro-F1 change against the baseline, one row per
/// series, in percentage points.
pub fn render_delta_svg(series: &[DeltaSeries]) -> String {
    let series: Vec<&DeltaSeries> = series.iter().filter(|s| !s.deltas.is_empty()).collect();
    let h = 60.0 + ROW_H * series.len().max(1) as f64;
    let mut svg = svg_open(SVG_W, h);
    let all = series.iter().flat_map(|s| s.deltas.iter().map(|d| d * 100.0));
    let (lo, hi) = all.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let span = (hi - lo).max(1e-9);
    let x = |v: f64| MARGIN_L + (v * 100.0 - lo) / span * (SVG_W - MARGIN_L - MARGIN_R);
    let _ = writeln!(
        svg,
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\">Change in macro-F1 against baseline (points)</text>",
        SVG_W / 2.0
    );
    let zero = x(0.0);
    let _ = writeln!(svg, "<line x1=\"{zero:.1}\" y1=\"28\" x2=\"{zero:.1}\" y2=\"{:.1}\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>", h - 24.0);
    for (i, s) in series.iter().enumerate() {
        let y = 40.0 + ROW_H * i as f64 + ROW_H / 2.0;
        let mut d = s.deltas.clone();
        d.sort_by(f64::total_cmp);
        let (q1, med, q3) = (quantile(&d, 0.25), quantile(&d, 0.5), quantile(&d, 0.75));
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{}</text>", MARGIN_L - 8.0, y + 4.0, s.label);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"black\"/>",
            x(d[0]),
            x(d[d.len() - 1])
        );
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#9ecae1\" stroke=\"black\"/>",
            x(q1),
            y - 8.0,
            (x(q3) - x(q1)).max(1.0),
            16.0
        );
        let _ = writeln!(
            svg,
            "<line x1=\"{0:.1}\" y1=\"{1:.1}\" x2=\"{0:.1}\" y2=\"{2:.1}\" stroke=\"black\" stroke-width=\"2\"/>",
            x(med),
            y - 8.0,
            y + 8.0
        );
    }
    let axis_y = h - 20.0;
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{axis_y:.1}\" text-anchor=\"middle\">{lo:.1}</text>", x(lo / 100.0));
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{axis_y:.1}\" text-anchor=\"middle\">{hi:.1}</text>", x(hi / 100.0));
    svg.push_str("</svg>\n");
    svg
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetPoint {
    pub budget: LabelBudget,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

/// Mean macro-F1 against labels per class for one strategy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BudgetCurve {
    pub label: String,
    pub points: Vec<BudgetPoint>,
}

/// Curves for every (dataset, pretext, strategy) with per-class budgets.
pub fn budget_curves(rows: &[AggregateRow]) -> Vec<BudgetCurve> {
    let mut curves: BTreeMap<String, Vec<BudgetPoint>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.cell.stage == CheckpointStage::Best && r.n > 0) {
        let label = format!("{} {} {}", r.cell.dataset_id, r.cell.pretext_name(), r.cell.strategy());
        curves.entry(label).or_default().push(BudgetPoint {
            budget: r.cell.budget,
            mean: r.mean,
            std: r.std,
            n: r.n,
        });
    }
    curves
        .into_iter()
        .map(|(label, mut points)| {
            points.sort_by_key(|p| p.budget);
            BudgetCurve { label, points }
        })
        .collect()
}

const PALETTE: [&str; 8] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

/// Line chart on a log budget axis; the `all` budget is left out.
pub fn render_budget_svg(curves: &[BudgetCurve]) -> String {
    let (w, h) = (SVG_W, 420.0);
    let (left, right, top, bottom) = (60.0, 230.0, 30.0, 50.0);
    let mut svg = svg_open(w, h);
    let per_class = |p: &BudgetPoint| match p.budget {
        LabelBudget::PerClass(k) => Some(k as f64),
        LabelBudget::All => None,
    };
    let ks: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().filter_map(per_class)).collect();
    let (kmin, kmax) = ks.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &k| (a.min(k), b.max(k)));
    let lspan = if ks.is_empty() { 1.0 } else { (kmax.ln() - kmin.ln()).max(1e-9) };
    let x = |k: f64| left + (k.ln() - kmin.ln()) / lspan * (w - left - right);
    let y = |f: f64| top + (1.0 - f) * (h - top - bottom);
    let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"18\" text-anchor=\"middle\">Macro-F1 against labelled windows per class</text>", (w - right + left) / 2.0);
    let _ = writeln!(
        svg,
        "<rect x=\"{left}\" y=\"{top}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"none\" stroke=\"black\"/>",
        w - left - right,
        h - top - bottom
    );
    for f in [0.0, 0.25, 0.5, 0.75, 1.0] {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{:.0}</text>", left - 6.0, y(f) + 4.0, f * 100.0);
    }
    let mut ticks = ks.clone();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for k in ticks {
        let _ = writeln!(svg, "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{k}</text>", x(k), h - bottom + 16.0);
    }
    for (i, c) in curves.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = c
            .points
            .iter()
            .filter_map(|p| per_class(p).map(|k| format!("{:.1},{:.1}", x(k), y(p.mean))))
            .collect();
        let _ = writeln!(svg, "<polyline points=\"{}\" fill=\"none\" stroke=\"{colour}\" stroke-width=\"2\"/>", pts.join(" "));
        for p in pts {
            let (px, py) = p.split_once(',').unwrap();
            let _ = writeln!(svg, "<circle cx=\"{px}\" cy=\"{py}\" r=\"3\" fill=\"{colour}\"/>");
        }
        let ly = top + 14.0 + 16.0 * i as f64;
        let lx = w - right + 12.0;
        let _ = writeln!(svg, "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{colour}\" stroke-width=\"2\"/>", lx + 18.0);
        let _ = writeln!(svg, "<text x=\"{}\" y=\"{}\">{}</text>", lx + 24.0, ly + 4.0, c.label);
    }
    svg.push_str("</svg>\n");
    svg
}

/// Before / best / last table for tuned runs from capture-corpus encoders.
pub fn render_stopping_table(rows: &[AggregateRow]) -> String {
    let mut grid: BTreeMap<(String, String, LabelBudget), BTreeMap<CheckpointStage, (f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.cell.mode == FinetuneMode::Tuned && r.n > 0) {
        grid.entry((r.cell.dataset_id.clone(), r.cell.pretext_name().to_string(), r.cell.budget))
            .or_default()
            .insert(r.cell.stage, (r.mean, r.std));
    }
    let mut out = String::from("| Dataset | Pretext | Budget | Before pretext | Best validation | Last epoch |\n|---|---|---|---|---|---|\n");
    for ((dataset, pretext, budget), stages) in grid {
        if stages.len() < 2 {
            continue;
        }
        let best = stages.values().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        let _ = write!(out, "| {dataset} | {pretext} | {budget} |");
        for s in CheckpointStage::ALL {
            let text = match stages.get(&s) {
                Some(&(m, sd)) if m == best => format!("**{}**", format_mean_std(m * 100.0, sd * 100.0)),
                Some(&(m, sd)) => format_mean_std(m * 100.0, sd * 100.0),
                None => "-".into(),
            };
            let _ = write!(out, " {text} |");
        }
        out.push('\n');
    }
    out
}

/// Writes every report derivable from `results` into `out_dir` and returns
/// the paths written. Output depends only on the set of records.
pub fn aggregate_and_render(results: &[TrainRunResult], out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).at(out_dir)?;
    let rows = aggregate(results);
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, body).at(&p)?;
        written.push(p);
        Ok(())
    };

    let mut agg = csv::Writer::from_writer(Vec::new());
    agg.write_record(["dataset", "pretext", "source", "mode", "budget", "stage", "mean", "std", "n", "failed"])?;
    for r in &rows {
        let c = &r.cell;
        agg.write_record([
            c.dataset_id.clone(),
            c.pretext_name().into(),
            c.source.name().into(),
            c.mode.to_string(),
            c.budget.to_string(),
            c.stage.name().into(),
            r.mean.to_string(),
            r.std.to_string(),
            r.n.to_string(),
            r.failed.to_string(),
        ])?;
    }
    put("aggregate.csv", String::from_utf8(agg.into_inner().expect("in-memory writer")).expect("utf8"))?;

    let mut md = String::new();
    for budget in budgets_of(&rows) {
        put(&format!("table_budget_{budget}.csv"), render_table_csv(&rows, budget)?)?;
        md.push_str(&render_table_markdown(&rows, budget));
        md.push('\n');
    }
    put("table.md", md)?;
    put("deltas.svg", render_delta_svg(&baseline_deltas(results)))?;
    let curves = budget_curves(&rows);
    put("budget_curves.json", serde_json::to_string_pretty(&curves)?)?;
    put("budget_curves.svg", render_budget_svg(&curves))?;
    put("stopping.md", render_stopping_table(&rows))?;
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::cell::Source;
    use crate::harness::ledger::RunOutcome;
    use crate::objectives::PretextKind;

    fn run(cell: &ExperimentCell, fold: usize, seed: u64, f1: f64) -> TrainRunResult {
        TrainRunResult {
            key: format!("{cell}-{fold}-{seed}"),
            cell: cell.clone(),
            fold,
            seed,
            outcome: RunOutcome::Ok {
                test_macro_f1: f1,
                val_macro_f1: f1,
                best_epoch: 1,
            },
        }
    }

    #[test]
    fn mean_std_format() {
        assert_eq!(format_mean_std(39.3712, 5.3049), "39.37 ± 5.30");
        assert_eq!(format_mean_std(91.05, 4.5749), "91.05 ± 4.57");
    }

    #[test]
    fn constant_scores_and_zero_baseline_delta() {
        let base = ExperimentCell::baseline("d", LabelBudget::All);
        let results: Vec<_> = (0..5).map(|s| run(&base, 0, s, 0.42)).collect();
        let rows = aggregate(&results);
        assert_eq!(rows.len(), 1);
        assert!(rows[0].display().ends_with("± 0.00"));
        let d = baseline_deltas(&results);
        assert_eq!(d[0].label, "Baseline");
        assert!(d[0].deltas.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn table_layout_and_bolding() {
        let base = ExperimentCell::baseline("d", LabelBudget::All);
        let tuned = ExperimentCell::pretrained("d", PretextKind::Cpc, Source::Capture, FinetuneMode::Tuned, LabelBudget::All);
        let frozen = ExperimentCell { mode: FinetuneMode::Frozen, ..tuned.clone() };
        let mut results = Vec::new();
        for s in 0..3 {
            results.push(run(&base, 0, s, 0.5));
            results.push(run(&tuned, 0, s, 0.7 + 0.01 * s as f64));
            results.push(run(&frozen, 0, s, 0.3));
        }
        let rows = aggregate(&results);
        let md = render_table_markdown(&rows, LabelBudget::All);
        assert!(md.contains("| d | cpc | 50.00 ± 0.00 | 30.00 ± 0.00 | - | **71.00 ± 1.00** | - |"), "{md}");
        let csv = render_table_csv(&rows, LabelBudget::All).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "d,cpc,50.00 ± 0.00,30.00 ± 0.00,,71.00 ± 1.00,");
    }

    #[test]
    fn aggregation_ignores_record_order() {
        let cell = ExperimentCell::baseline("d", LabelBudget::All);
        let mut results: Vec<_> = (0..25).map(|i| run(&cell, i / 5, (i % 5) as u64, 0.1 + 0.037 * i as f64)).collect();
        let a = aggregate(&results);
        results.reverse();
        let b = aggregate(&results);
        assert_eq!(a[0].mean.to_bits(), b[0].mean.to_bits());
        assert_eq!(a[0].std.to_bits(), b[0].std.to_bits());
    }
}
