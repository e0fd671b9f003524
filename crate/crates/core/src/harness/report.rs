use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::{ExperimentReport, SyntheticPoint, METRICS, PUBLISHED_REFERENCE};
use crate::error::{Error, Result};

fn write(path: PathBuf, body: impl AsRef<[u8]>, written: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(&path, body).map_err(|e| Error::io(&path, e))?;
    written.push(path);
    Ok(())
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let to_err = |e: csv::Error| Error::Validation(format!("csv encoding: {e}"));
    w.write_record(header).map_err(to_err)?;
    for r in rows {
        w.write_record(r).map_err(to_err)?;
    }
    w.into_inner().map_err(|e| Error::Validation(format!("csv encoding: {e}")))
}

/// `arm, runs, max_average_accuracy, best_epoch, ci_half_width` per arm.
pub fn summary_rows(report: &ExperimentReport) -> Result<Vec<Vec<String>>> {
    report
        .arms
        .iter()
        .map(|arm| {
            let (best, epoch) = arm.max_average_accuracy()?;
            let hw = arm.curve("val", "accuracy")?[epoch - 1].half_width;
            Ok(vec![arm.name.clone(), arm.runs.len().to_string(), best.to_string(), epoch.to_string(), hw.to_string()])
        })
        .collect()
}

/// Writes `curves.csv`, `summary.csv`, `reference.csv`, `config.txt` and
/// one SVG per split/metric into `dir`. Returns the written paths.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<Vec<PathBuf>> {
    if report.arms.is_empty() || report.arms.iter().any(|a| a.runs.is_empty()) {
        return Err(Error::Validation("report has an arm with zero runs".into()));
    }
    let summary = summary_rows(report)?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();

    let mut rows = Vec::new();
    for arm in &report.arms {
        for (i, run) in arm.runs.iter().enumerate() {
            for e in 0..run.epochs {
                for (split, metric) in METRICS {
                    let value = arm.series(split, metric)[i][e];
                    rows.push(vec![
                        arm.name.clone(),
                        i.to_string(),
                        (e + 1).to_string(),
                        split.to_string(),
                        metric.to_string(),
                        value.to_string(),
                    ]);
                }
            }
        }
    }
    write(dir.join("curves.csv"), csv_bytes(&["arm", "run", "epoch", "split", "metric", "value"], &rows)?, &mut written)?;
    write(
        dir.join("summary.csv"),
        csv_bytes(&["arm", "runs", "max_average_accuracy", "best_epoch", "ci_half_width"], &summary)?,
        &mut written,
    )?;
    let reference: Vec<Vec<String>> = PUBLISHED_REFERENCE
        .iter()
        .map(|(arm, v)| vec!["published".to_string(), arm.to_string(), v.to_string()])
        .collect();
    write(
        dir.join("reference.csv"),
        csv_bytes(&["source", "arm", "max_average_accuracy_percent"], &reference)?,
        &mut written,
    )?;
    let config: String = report.config.iter().map(|(k, v)| format!("{k} = {v}\n")).collect();
    write(dir.join("config.txt"), config, &mut written)?;

    for (split, metric) in METRICS {
        let mut series = Vec::new();
        for arm in &report.arms {
            let curve = arm.curve(split, metric)?;
            series.push(SvgSeries {
                name: arm.name.clone(),
                xs: (1..=curve.len()).map(|e| e as f64).collect(),
                mean: curve.iter().map(|b| b.mean).collect(),
                half_width: curve.iter().map(|b| b.half_width).collect(),
            });
        }
        let title = format!("{split} {metric} (mean and 95% CI over runs)");
        write(dir.join(format!("{split}_{metric}.svg")), render_svg(&title, "epoch", metric, &series), &mut written)?;
    }
    Ok(written)
}

/// Writes `synthetic.csv` and `synthetic.svg`: accuracy on sampled maps
/// per diffusion epoch.
pub fn emit_synthetic(points: &[SyntheticPoint], class_names: &[String], dir: &Path) -> Result<Vec<PathBuf>> {
    if points.is_empty() {
        return Err(Error::Validation("no synthetic evaluation points".into()));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let mut header = vec!["diffusion_epoch".to_string(), "accuracy".to_string()];
    header.extend(class_names.iter().map(|c| format!("recall_{c}")));
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            let mut r = vec![p.epoch.to_string(), p.accuracy.to_string()];
            r.extend(p.per_class.iter().map(f64::to_string));
            r
        })
        .collect();
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write(dir.join("synthetic.csv"), csv_bytes(&header, &rows)?, &mut written)?;
    let series = [SvgSeries {
        name: "synthetic".into(),
        xs: points.iter().map(|p| p.epoch as f64).collect(),
        mean: points.iter().map(|p| p.accuracy).collect(),
        half_width: vec![0.0; points.len()],
    }];
    write(
        dir.join("synthetic.svg"),
        render_svg("classifier accuracy on sampled maps", "diffusion epoch", "accuracy", &series),
        &mut written,
    )?;
    Ok(written)
}

pub struct SvgSeries {
    pub name: String,
    pub xs: Vec<f64>,
    pub mean: Vec<f64>,
    pub half_width: Vec<f64>,
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Line plot with a shaded band of `mean ± half_width` per series.
pub fn render_svg(title: &str, x_label: &str, y_label: &str, series: &[SvgSeries]) -> String {
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 20.0, 40.0, 50.0);
    let finite = |v: &f64| v.is_finite();
    let xs: Vec<f64> = series.iter().flat_map(|s| s.xs.iter().copied()).filter(finite).collect();
    let ys: Vec<f64> = series
        .iter()
        .flat_map(|s| s.mean.iter().zip(&s.half_width).flat_map(|(m, hw)| [m - hw, m + hw]))
        .filter(finite)
        .collect();
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        if !lo.is_finite() {
            (0.0, 1.0)
        } else if hi - lo < 1e-12 {
            (lo - 0.5, hi + 0.5)
        } else {
            (lo, hi)
        }
    };
    let (x0, x1) = range(&xs);
    let (y0, y1) = range(&ys);
    let px = |x: f64| left + (x - x0) / (x1 - x0) * (w - left - right);
    let py = |y: f64| h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#);
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#, w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<path d="M{left} {top} V{} H{}" fill="none" stroke="black"/>"#,
        h - bottom,
        w - right
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="11">{}</text>"#,
            px(xv),
            h - bottom + 16.0,
            tick(xv)
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{}</text>"#,
            left - 6.0,
            py(yv) + 4.0,
            tick(yv)
        );
    }
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#, w / 2.0, h - 12.0, escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
        h / 2.0,
        h / 2.0,
        escape(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<(f64, f64, f64)> = ser
            .xs
            .iter()
            .zip(&ser.mean)
            .zip(&ser.half_width)
            .filter(|((x, m), hw)| x.is_finite() && m.is_finite() && hw.is_finite())
            .map(|((x, m), hw)| (*x, *m, *hw))
            .collect();
        if pts.is_empty() {
            continue;
        }
        if pts.iter().any(|p| p.2 > 0.0) {
            let upper = pts.iter().map(|(x, m, hw)| format!("{:.2},{:.2}", px(*x), py(m + hw)));
            let lower = pts.iter().rev().map(|(x, m, hw)| format!("{:.2},{:.2}", px(*x), py(m - hw)));
            let poly: Vec<String> = upper.chain(lower).collect();
            let _ = writeln!(s, r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#, poly.join(" "));
        }
        let line: Vec<String> = pts.iter().map(|(x, m, _)| format!("{:.2},{:.2}", px(*x), py(*m))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        let ly = top + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{}" width="12" height="3" fill="{color}"/>"#, w - right - 130.0, ly - 4.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{ly}" font-family="sans-serif" font-size="11">{}</text>"#,
            w - right - 112.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    if r == 0.0 {
        "0".into()
    } else {
        format!("{r}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
