//! Report outputs: CSV tables, markdown tables, and SVG figures.
//!
//! Every figure is written together with a sibling CSV holding exactly the
//! numbers the figure was drawn from, so figures can be regenerated from the
//! CSVs alone. All numeric formatting is fixed-precision with `.` as the
//! decimal separator and no timestamps, keeping reruns byte-identical.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use msa_unet3p::metrics::{AggregateMetrics, MeanStd, MetricsReport};
use msa_unet3p::train::{AblationRow, EpochLog, FoldSummary, GammaAblation, GammaRow};

use crate::AppError;

fn fmt6(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

fn opt6(v: Option<f64>) -> String {
    v.map(fmt6).unwrap_or_default()
}

fn fmt_mean_std(ms: &MeanStd) -> String {
    if ms.count == 0 {
        "—".to_string()
    } else {
        format!("{:.4} ± {:.4}", ms.mean, ms.std)
    }
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), AppError> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| AppError::runtime(format!("serialize {}: {e}", path.display())))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Per-sample validation metrics: `index,dice,recall,f1,asd,acd`.
/// Samples without a defined boundary distance leave those cells empty.
pub fn write_sample_metrics_csv(path: &Path, report: &MetricsReport) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["index", "dice", "recall", "f1", "asd", "acd"])?;
    for s in &report.samples {
        w.write_record([
            s.index.to_string(),
            fmt6(s.dice),
            fmt6(s.recall),
            fmt6(s.f1),
            opt6(s.asd),
            opt6(s.acd),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Aggregate statistics: `metric,mean,std,count`.
pub fn write_summary_csv(path: &Path, agg: &AggregateMetrics) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["metric", "mean", "std", "count"])?;
    for (name, ms) in [
        ("dice", &agg.dice),
        ("recall", &agg.recall),
        ("f1", &agg.f1),
        ("asd", &agg.asd),
        ("acd", &agg.acd),
    ] {
        w.write_record([name.to_string(), fmt6(ms.mean), fmt6(ms.std), ms.count.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Per-epoch training log.
pub fn write_epoch_log_csv(path: &Path, logs: &[EpochLog]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "epoch",
        "lr",
        "bce",
        "dice",
        "sce",
        "pcl",
        "total",
        "sce_skipped",
        "pcl_skipped",
        "batches",
        "val_dice",
    ])?;
    for l in logs {
        w.write_record([
            l.epoch.to_string(),
            format!("{:e}", l.lr),
            fmt6(l.bce),
            fmt6(l.dice),
            fmt6(l.sce),
            fmt6(l.pcl),
            fmt6(l.total),
            l.sce_skipped.to_string(),
            l.pcl_skipped.to_string(),
            l.batches.to_string(),
            opt6(l.val_dice),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fold-level metrics for one or more configurations:
/// `config,fold,dice,recall,f1,asd,acd`.
pub fn write_fold_summaries_csv(
    path: &Path,
    groups: &[(String, Vec<FoldSummary>)],
) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["config", "fold", "dice", "recall", "f1", "asd", "acd"])?;
    for (label, folds) in groups {
        for f in folds {
            w.write_record([
                label.clone(),
                f.fold.to_string(),
                fmt6(f.dice),
                fmt6(f.recall),
                fmt6(f.f1),
                opt6(f.asd),
                opt6(f.acd),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Paired comparison table: one row per metric with the significance marker.
pub fn write_gamma_table_csv(path: &Path, rows: &[GammaRow]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "metric",
        "baseline_mean",
        "baseline_std",
        "spcl_mean",
        "spcl_std",
        "delta",
        "t",
        "p",
        "marker",
    ])?;
    for r in rows {
        w.write_record([
            r.metric.clone(),
            fmt6(r.baseline.mean),
            fmt6(r.baseline.std),
            fmt6(r.with_spcl.mean),
            fmt6(r.with_spcl.std),
            opt6(r.delta),
            opt6(r.t),
            opt6(r.p),
            r.marker.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn gamma_table_markdown(rows: &[GammaRow]) -> String {
    let mut s = String::from(
        "| metric | baseline (γ=0) | with SPCL (γ=1) | Δ (improvement) | t | p | sig |\n\
         |---|---|---|---|---|---|---|\n",
    );
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} |\n",
            r.metric,
            fmt_mean_std(&r.baseline),
            fmt_mean_std(&r.with_spcl),
            r.delta.map(|d| format!("{d:+.4}")).unwrap_or_else(|| "—".into()),
            r.t.map(|t| format!("{t:.3}")).unwrap_or_else(|| "—".into()),
            r.p.map(|p| format!("{p:.4}")).unwrap_or_else(|| "—".into()),
            if r.marker.is_empty() { " " } else { &r.marker },
        ));
    }
    s
}

pub fn config_label(use_spcl: bool, use_cafm: bool, use_msd: bool) -> String {
    format!(
        "spcl{}-cafm{}-msd{}",
        use_spcl as u8, use_cafm as u8, use_msd as u8
    )
}

/// Component-ablation table: one row per on/off configuration.
pub fn write_components_table_csv(path: &Path, rows: &[AblationRow]) -> Result<(), AppError> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "config",
        "spcl",
        "cafm",
        "msd",
        "params",
        "dice_mean",
        "dice_std",
        "recall_mean",
        "recall_std",
        "f1_mean",
        "f1_std",
        "asd_mean",
        "asd_std",
        "acd_mean",
        "acd_std",
    ])?;
    for r in rows {
        w.write_record([
            config_label(r.use_spcl, r.use_cafm, r.use_msd),
            (r.use_spcl as u8).to_string(),
            (r.use_cafm as u8).to_string(),
            (r.use_msd as u8).to_string(),
            r.param_count.to_string(),
            fmt6(r.aggregate.dice.mean),
            fmt6(r.aggregate.dice.std),
            fmt6(r.aggregate.recall.mean),
            fmt6(r.aggregate.recall.std),
            fmt6(r.aggregate.f1.mean),
            fmt6(r.aggregate.f1.std),
            fmt6(r.aggregate.asd.mean),
            fmt6(r.aggregate.asd.std),
            fmt6(r.aggregate.acd.mean),
            fmt6(r.aggregate.acd.std),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn components_table_markdown(rows: &[AblationRow]) -> String {
    let mut s = String::from(
        "| config | SPCL | CAFM | MSD | params | Dice | Recall | F1 | ASD | ACD |\n\
         |---|---|---|---|---|---|---|---|---|---|\n",
    );
    let tick = |b: bool| if b { "✓" } else { "—" };
    for r in rows {
        s.push_str(&format!(
            "| {} | {} | {} | {} | {} | {} | {} | {} | {} | {} |\n",
            config_label(r.use_spcl, r.use_cafm, r.use_msd),
            tick(r.use_spcl),
            tick(r.use_cafm),
            tick(r.use_msd),
            r.param_count,
            fmt_mean_std(&r.aggregate.dice),
            fmt_mean_std(&r.aggregate.recall),
            fmt_mean_std(&r.aggregate.f1),
            fmt_mean_std(&r.aggregate.asd),
            fmt_mean_std(&r.aggregate.acd),
        ));
    }
    s
}

// ---------------------------------------------------------------------------
// Figures
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub label: String,
    pub params: usize,
    pub dice: f64,
    pub asd: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BoxGroup {
    pub label: String,
    pub values: Vec<f64>,
}

const FIG_W: f64 = 640.0;
const FIG_H: f64 = 480.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 30.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 60.0;

fn svg_open(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{FIG_W}\" height=\"{FIG_H}\" \
         viewBox=\"0 0 {FIG_W} {FIG_H}\" font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{FIG_W}\" height=\"{FIG_H}\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n",
        FIG_W / 2.0
    )
}

fn axis_range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if (hi - lo).abs() < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = (hi - lo) * 0.08;
        (lo - pad, hi + pad)
    }
}

fn x_pos(v: f64, lo: f64, hi: f64) -> f64 {
    MARGIN_L + (v - lo) / (hi - lo) * (FIG_W - MARGIN_L - MARGIN_R)
}

fn y_pos(v: f64, lo: f64, hi: f64) -> f64 {
    FIG_H - MARGIN_B - (v - lo) / (hi - lo) * (FIG_H - MARGIN_T - MARGIN_B)
}

fn svg_axes(x_label: &str, y_label: &str, xr: (f64, f64), yr: (f64, f64), x_int: bool) -> String {
    let mut s = String::new();
    let (x0, x1) = (MARGIN_L, FIG_W - MARGIN_R);
    let (y0, y1) = (FIG_H - MARGIN_B, MARGIN_T);
    s.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"black\"/>\n"
    ));
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = xr.0 + f * (xr.1 - xr.0);
        let yv = yr.0 + f * (yr.1 - yr.0);
        let xp = x_pos(xv, xr.0, xr.1);
        let yp = y_pos(yv, yr.0, yr.1);
        let x_text = if x_int {
            format!("{}", xv.round() as i64)
        } else {
            format!("{xv:.3}")
        };
        s.push_str(&format!(
            "<line x1=\"{xp:.1}\" y1=\"{y0}\" x2=\"{xp:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{xp:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_text}</text>\n\
             <line x1=\"{x0}\" y1=\"{yp:.1}\" x2=\"{:.1}\" y2=\"{yp:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.3}</text>\n",
            y0 + 5.0,
            y0 + 20.0,
            x0 - 5.0,
            x0 - 8.0,
            yp + 4.0
        ));
    }
    s.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{x_label}</text>\n\
         <text x=\"18\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{y_label}</text>\n",
        (x0 + x1) / 2.0,
        FIG_H - 15.0,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    ));
    s
}

/// Parameter count vs. mean Dice; marker radius encodes mean surface distance
/// (larger circle = larger ASD, i.e. worse boundaries at similar Dice).
pub fn efficiency_scatter_svg(points: &[ScatterPoint]) -> String {
    let mut s = svg_open("Parameters vs Dice (radius: mean ASD)");
    if points.is_empty() {
        s.push_str("<text x=\"320\" y=\"240\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return s;
    }
    let xs: Vec<f64> = points.iter().map(|p| p.params as f64).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.dice).collect();
    let asds: Vec<f64> = points.iter().filter_map(|p| p.asd).collect();
    let xr = axis_range(&xs);
    let yr = axis_range(&ys);
    let (alo, ahi) = if asds.is_empty() { (0.0, 1.0) } else { axis_range(&asds) };
    s.push_str(&svg_axes("parameters", "mean Dice", xr, yr, true));
    for p in points {
        let cx = x_pos(p.params as f64, xr.0, xr.1);
        let cy = y_pos(p.dice, yr.0, yr.1);
        let r = match p.asd {
            Some(a) => 4.0 + 8.0 * ((a - alo) / (ahi - alo)).clamp(0.0, 1.0),
            None => 4.0,
        };
        s.push_str(&format!(
            "<circle cx=\"{cx:.1}\" cy=\"{cy:.1}\" r=\"{r:.1}\" fill=\"steelblue\" fill-opacity=\"0.7\" stroke=\"black\"/>\n\
             <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            cy - r - 4.0,
            p.label
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Inclusive linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Per-configuration box-and-whisker plot of fold Dice scores.
pub fn dice_boxplot_svg(groups: &[BoxGroup]) -> String {
    let mut s = svg_open("Fold Dice by configuration");
    let all: Vec<f64> = groups.iter().flat_map(|g| g.values.iter().cloned()).collect();
    if all.is_empty() {
        s.push_str("<text x=\"320\" y=\"240\" text-anchor=\"middle\">no data</text>\n</svg>\n");
        return s;
    }
    let yr = axis_range(&all);
    let (y_base, _y_top) = (FIG_H - MARGIN_B, MARGIN_T);
    // y axis only; x positions are categorical.
    s.push_str(&format!(
        "<line x1=\"{MARGIN_L}\" y1=\"{y_base}\" x2=\"{:.1}\" y2=\"{y_base}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN_L}\" y1=\"{y_base}\" x2=\"{MARGIN_L}\" y2=\"{MARGIN_T}\" stroke=\"black\"/>\n",
        FIG_W - MARGIN_R
    ));
    for i in 0..=4 {
        let yv = yr.0 + i as f64 / 4.0 * (yr.1 - yr.0);
        let yp = y_pos(yv, yr.0, yr.1);
        s.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{yp:.1}\" x2=\"{MARGIN_L}\" y2=\"{yp:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{yv:.3}</text>\n",
            MARGIN_L - 5.0,
            MARGIN_L - 8.0,
            yp + 4.0
        ));
    }
    let span = FIG_W - MARGIN_L - MARGIN_R;
    let step = span / groups.len() as f64;
    let box_w = (step * 0.5).min(60.0);
    for (i, g) in groups.iter().enumerate() {
        let cx = MARGIN_L + step * (i as f64 + 0.5);
        let mut vals = g.values.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).unwrap());
        if vals.is_empty() {
            continue;
        }
        let (min, max) = (vals[0], vals[vals.len() - 1]);
        let q1 = quantile(&vals, 0.25);
        let med = quantile(&vals, 0.5);
        let q3 = quantile(&vals, 0.75);
        let y = |v: f64| y_pos(v, yr.0, yr.1);
        s.push_str(&format!(
            "<line x1=\"{cx:.1}\" y1=\"{:.1}\" x2=\"{cx:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <rect x=\"{:.1}\" y=\"{:.1}\" width=\"{box_w:.1}\" height=\"{:.1}\" fill=\"lightsteelblue\" stroke=\"black\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\" stroke-width=\"2\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-size=\"10\">{}</text>\n",
            y(min),
            y(max),
            cx - box_w / 2.0,
            y(q3),
            (y(q1) - y(q3)).max(1.0),
            cx - box_w / 2.0,
            y(med),
            cx + box_w / 2.0,
            y(med),
            cx - box_w / 4.0,
            y(min),
            cx + box_w / 4.0,
            y(min),
            cx - box_w / 4.0,
            y(max),
            cx + box_w / 4.0,
            y(max),
            y_base + 20.0,
            g.label
        ));
    }
    s.push_str("</svg>\n");
    s
}

/// Write `stem.svg` and its data as `stem.csv` (`label,params,dice_mean,asd_mean`).
pub fn write_efficiency_scatter(dir: &Path, stem: &str, points: &[ScatterPoint]) -> Result<(), AppError> {
    fs::write(dir.join(format!("{stem}.svg")), efficiency_scatter_svg(points))?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["label", "params", "dice_mean", "asd_mean"])?;
    for p in points {
        w.write_record([p.label.clone(), p.params.to_string(), fmt6(p.dice), opt6(p.asd)])?;
    }
    w.flush()?;
    Ok(())
}

/// Write `stem.svg` and its data as `stem.csv` (`config,fold,dice`).
pub fn write_dice_boxplot(dir: &Path, stem: &str, groups: &[BoxGroup]) -> Result<(), AppError> {
    fs::write(dir.join(format!("{stem}.svg")), dice_boxplot_svg(groups))?;
    let mut w = csv::Writer::from_path(dir.join(format!("{stem}.csv")))?;
    w.write_record(["config", "fold", "dice"])?;
    for g in groups {
        for (fold, v) in g.values.iter().enumerate() {
            w.write_record([g.label.clone(), fold.to_string(), fmt6(*v)])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter_csv(path: &Path) -> Result<Vec<ScatterPoint>, AppError> {
    #[derive(Deserialize)]
    struct Row {
        label: String,
        params: usize,
        dice_mean: f64,
        asd_mean: Option<f64>,
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut out = Vec::new();
    for rec in r.deserialize::<Row>() {
        let rec = rec?;
        out.push(ScatterPoint {
            label: rec.label,
            params: rec.params,
            dice: rec.dice_mean,
            asd: rec.asd_mean,
        });
    }
    Ok(out)
}

pub fn read_boxplot_csv(path: &Path) -> Result<Vec<BoxGroup>, AppError> {
    #[derive(Deserialize)]
    struct Row {
        config: String,
        #[allow(dead_code)]
        fold: usize,
        dice: f64,
    }
    let mut r = csv::Reader::from_path(path)?;
    let mut groups: Vec<BoxGroup> = Vec::new();
    for rec in r.deserialize::<Row>() {
        let rec = rec?;
        match groups.iter_mut().find(|g| g.label == rec.config) {
            Some(g) => g.values.push(rec.dice),
            None => groups.push(BoxGroup {
                label: rec.config,
                values: vec![rec.dice],
            }),
        }
    }
    Ok(groups)
}

// ---------------------------------------------------------------------------
// Bundles for the two ablation modes
// ---------------------------------------------------------------------------

/// Write all γ-ablation outputs into `dir`; returns the written paths.
pub fn write_gamma_outputs(dir: &Path, ablation: &GammaAblation) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let table = dir.join("gamma_table.csv");
    write_gamma_table_csv(&table, &ablation.rows)?;
    written.push(table);
    let md = dir.join("gamma_table.md");
    fs::write(&md, gamma_table_markdown(&ablation.rows))?;
    written.push(md);
    let folds = dir.join("gamma_folds.csv");
    write_fold_summaries_csv(
        &folds,
        &[
            ("gamma0".to_string(), ablation.baseline.fold_summaries.clone()),
            ("gamma1".to_string(), ablation.with_spcl.fold_summaries.clone()),
        ],
    )?;
    written.push(folds);
    let groups = [
        BoxGroup {
            label: "gamma0".to_string(),
            values: ablation.baseline.fold_summaries.iter().map(|f| f.dice).collect(),
        },
        BoxGroup {
            label: "gamma1".to_string(),
            values: ablation.with_spcl.fold_summaries.iter().map(|f| f.dice).collect(),
        },
    ];
    write_dice_boxplot(dir, "dice_boxplot", &groups)?;
    written.push(dir.join("dice_boxplot.svg"));
    written.push(dir.join("dice_boxplot.csv"));
    let record = dir.join("ablation_record.json");
    write_json(&record, ablation)?;
    written.push(record);
    Ok(written)
}

/// Write all component-ablation outputs into `dir`; returns the written paths.
pub fn write_component_outputs(dir: &Path, rows: &[AblationRow]) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let table = dir.join("components_table.csv");
    write_components_table_csv(&table, rows)?;
    written.push(table);
    let md = dir.join("components_table.md");
    fs::write(&md, components_table_markdown(rows))?;
    written.push(md);
    let folds = dir.join("components_folds.csv");
    let groups: Vec<(String, Vec<FoldSummary>)> = rows
        .iter()
        .map(|r| (config_label(r.use_spcl, r.use_cafm, r.use_msd), r.fold_summaries.clone()))
        .collect();
    write_fold_summaries_csv(&folds, &groups)?;
    written.push(folds);
    let points: Vec<ScatterPoint> = rows
        .iter()
        .map(|r| ScatterPoint {
            label: config_label(r.use_spcl, r.use_cafm, r.use_msd),
            params: r.param_count,
            dice: r.aggregate.dice.mean,
            asd: if r.aggregate.asd.count > 0 { Some(r.aggregate.asd.mean) } else { None },
        })
        .collect();
    write_efficiency_scatter(dir, "efficiency_scatter", &points)?;
    written.push(dir.join("efficiency_scatter.svg"));
    written.push(dir.join("efficiency_scatter.csv"));
    let box_groups: Vec<BoxGroup> = rows
        .iter()
        .map(|r| BoxGroup {
            label: config_label(r.use_spcl, r.use_cafm, r.use_msd),
            values: r.fold_summaries.iter().map(|f| f.dice).collect(),
        })
        .collect();
    write_dice_boxplot(dir, "dice_boxplot", &box_groups)?;
    written.push(dir.join("dice_boxplot.svg"));
    written.push(dir.join("dice_boxplot.csv"));
    let record = dir.join("components_record.json");
    write_json(&record, &rows.to_vec())?;
    written.push(record);
    Ok(written)
}

/// Re-render figures from previously written sibling CSVs. Returns the list
/// of regenerated files; errors if `from` contains no known report inputs.
pub fn rerender_from_csvs(from: &Path, out: &Path) -> Result<Vec<PathBuf>, AppError> {
    fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let scatter_src = from.join("efficiency_scatter.csv");
    if scatter_src.is_file() {
        let points = read_scatter_csv(&scatter_src)?;
        write_efficiency_scatter(out, "efficiency_scatter", &points)?;
        written.push(out.join("efficiency_scatter.svg"));
        written.push(out.join("efficiency_scatter.csv"));
    }
    let box_src = from.join("dice_boxplot.csv");
    if box_src.is_file() {
        let groups = read_boxplot_csv(&box_src)?;
        write_dice_boxplot(out, "dice_boxplot", &groups)?;
        written.push(out.join("dice_boxplot.svg"));
        written.push(out.join("dice_boxplot.csv"));
    }
    if written.is_empty() {
        return Err(AppError::runtime(format!(
            "no report inputs (efficiency_scatter.csv or dice_boxplot.csv) found in {}",
            from.display()
        )));
    }
    Ok(written)
}
