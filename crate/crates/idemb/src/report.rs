//! Text and SVG summaries of exported metrics: per-arm lift table plus a
//! minimal line chart of holdout hit rate vs epoch. The figures here are
//! diagnostic, not presentation-grade.

use crate::error::{Error, Result};
use crate::eval::detect_one_epoch_overfit;
use crate::persistence::MetricRow;
use std::collections::BTreeMap;
use std::fmt::Write as _;

/// Mean holdout hit-rate curve per arm, averaged over seeds: the series
/// behind both the text report and the chart.
pub fn hit_curves(rows: &[MetricRow]) -> BTreeMap<String, Vec<(u32, f64)>> {
    let mut grouped: BTreeMap<(String, u32), (f64, usize)> = BTreeMap::new();
    for r in rows {
        if r.split != "holdout" || !r.metric.starts_with("hit_at_") {
            continue;
        }
        let e = grouped.entry((r.arm.clone(), r.epoch)).or_insert((0.0, 0));
        e.0 += r.value;
        e.1 += 1;
    }
    let mut curves: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
    for ((arm, epoch), (sum, n)) in grouped {
        curves.entry(arm).or_default().push((epoch, sum / n as f64));
    }
    for series in curves.values_mut() {
        series.sort_by_key(|&(e, _)| e);
    }
    curves
}

/// Final-epoch holdout hit rate per (arm, seed).
fn final_hits(rows: &[MetricRow]) -> BTreeMap<String, BTreeMap<u64, f64>> {
    let mut best_epoch: BTreeMap<(String, u64), u32> = BTreeMap::new();
    for r in rows {
        if r.split != "holdout" || !r.metric.starts_with("hit_at_") {
            continue;
        }
        let key = (r.arm.clone(), r.seed);
        let e = best_epoch.entry(key).or_insert(0);
        *e = (*e).max(r.epoch);
    }
    let mut out: BTreeMap<String, BTreeMap<u64, f64>> = BTreeMap::new();
    for r in rows {
        if r.split != "holdout" || !r.metric.starts_with("hit_at_") {
            continue;
        }
        if best_epoch[&(r.arm.clone(), r.seed)] == r.epoch {
            out.entry(r.arm.clone()).or_default().insert(r.seed, r.value);
        }
    }
    out
}

fn mean_stdev(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Text report: per-arm final hit rate with lift vs the `baseline` arm when
/// present, plus a one-epoch-overfit verdict per pre-train series.
pub fn text_report(rows: &[MetricRow], overfit_threshold: f64) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::invalid("no metric rows to report"));
    }
    let finals = final_hits(rows);
    let baseline_mean = finals
        .get("baseline")
        .map(|per_seed| mean_stdev(&per_seed.values().copied().collect::<Vec<_>>()).0);

    let mut out = String::new();
    writeln!(out, "final holdout hit rate by arm").unwrap();
    writeln!(out, "{:<24} {:>10} {:>10} {:>10}", "arm", "mean", "stdev", "lift").unwrap();
    for (arm, per_seed) in &finals {
        let values: Vec<f64> = per_seed.values().copied().collect();
        let (mean, stdev) = mean_stdev(&values);
        let lift = match baseline_mean {
            Some(b) if b != 0.0 && !arm.starts_with("pretrain") => {
                format!("{:+.3}%", 100.0 * (mean - b) / b)
            }
            _ => "-".to_string(),
        };
        writeln!(out, "{arm:<24} {mean:>10.5} {stdev:>10.5} {lift:>10}").unwrap();
    }

    // overfit verdicts for pre-train curves, per seed
    let mut series: BTreeMap<(String, u64), Vec<(u32, f64)>> = BTreeMap::new();
    for r in rows {
        if r.stage == "pretrain" && r.split == "holdout" && r.metric.starts_with("hit_at_") {
            series
                .entry((r.arm.clone(), r.seed))
                .or_default()
                .push((r.epoch, r.value));
        }
    }
    if !series.is_empty() {
        writeln!(out, "\none-epoch overfit detection (pre-train holdout)").unwrap();
        for ((arm, seed), mut s) in series {
            s.sort_by_key(|&(e, _)| e);
            // epoch 0 is the untrained model; the detector looks at trained epochs
            let trained: Vec<(u32, f64)> = s.into_iter().filter(|&(e, _)| e >= 1).collect();
            if trained.len() < 2 {
                continue;
            }
            let rep = detect_one_epoch_overfit(&trained, 2, overfit_threshold)?;
            writeln!(
                out,
                "{arm} seed {seed}: peak epoch {}, degradation {:+.5}, one-epoch overfit: {}",
                rep.peak_epoch, rep.degradation, rep.verdict
            )
            .unwrap();
        }
    }
    Ok(out)
}

/// Minimal SVG line chart: one polyline per arm, linear axes with labels.
pub fn svg_chart(curves: &BTreeMap<String, Vec<(u32, f64)>>, title: &str) -> String {
    const W: f64 = 640.0;
    const H: f64 = 420.0;
    const ML: f64 = 60.0;
    const MR: f64 = 170.0;
    const MT: f64 = 40.0;
    const MB: f64 = 50.0;
    let colors = [
        "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2",
    ];

    let mut max_epoch = 1u32;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for series in curves.values() {
        for &(e, v) in series {
            max_epoch = max_epoch.max(e);
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_max = y_min + 1.0;
    }
    let pad = 0.05 * (y_max - y_min);
    let (y_min, y_max) = (y_min - pad, y_max + pad);

    let x = |e: u32| ML + (W - ML - MR) * e as f64 / max_epoch as f64;
    let y = |v: f64| H - MB - (H - MT - MB) * (v - y_min) / (y_max - y_min);

    let mut svg = String::new();
    write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" \
         viewBox=\"0 0 {W} {H}\">\n<rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n"
    )
    .unwrap();
    write!(
        svg,
        "<text x=\"{}\" y=\"24\" font-size=\"14\" text-anchor=\"middle\">{title}</text>\n",
        (ML + W - MR) / 2.0
    )
    .unwrap();
    // axes
    write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{}\" stroke=\"black\"/>\n",
        H - MB,
        W - MR,
        H - MB,
        H - MB
    )
    .unwrap();
    write!(
        svg,
        "<text x=\"{}\" y=\"{}\" font-size=\"12\" text-anchor=\"middle\">epoch</text>\n",
        (ML + W - MR) / 2.0,
        H - 12.0
    )
    .unwrap();
    write!(
        svg,
        "<text x=\"16\" y=\"{}\" font-size=\"12\" transform=\"rotate(-90 16 {})\" \
         text-anchor=\"middle\">holdout hit rate</text>\n",
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    )
    .unwrap();
    // x ticks at integer epochs, y ticks at 5 levels
    for e in 0..=max_epoch {
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"middle\">{e}</text>\n",
            x(e),
            H - MB + 16.0
        )
        .unwrap();
    }
    for t in 0..=4 {
        let v = y_min + (y_max - y_min) * t as f64 / 4.0;
        write!(
            svg,
            "<text x=\"{}\" y=\"{}\" font-size=\"10\" text-anchor=\"end\">{v:.3}</text>\n",
            ML - 6.0,
            y(v) + 3.0
        )
        .unwrap();
    }
    for (idx, (arm, series)) in curves.iter().enumerate() {
        let color = colors[idx % colors.len()];
        let points: Vec<String> = series
            .iter()
            .map(|&(e, v)| format!("{:.2},{:.2}", x(e), y(v)))
            .collect();
        write!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            points.join(" ")
        )
        .unwrap();
        let ly = MT + 16.0 * idx as f64;
        write!(
            svg,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{}\" y=\"{}\" font-size=\"10\">{arm}</text>\n",
            W - MR + 10.0,
            W - MR + 30.0,
            W - MR + 36.0,
            ly + 3.0
        )
        .unwrap();
    }
    svg.push_str("</svg>\n");
    svg
}
