//! Sweep reporting: a stable-order metrics table, one SVG line chart per
//! metric, and a manifest. Output is a pure function of the records, so
//! re-running on identical input is byte-identical.

use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::eval::MetricRecord;
use crate::vad::VadAxis;

/// Fixed column order of `metrics.csv`.
pub const METRICS_HEADER: &str = "axis,e_v,e_a,e_d,avr,tsr,mean_len,lex_v,lex_a,lex_d,n_tasks";

/// Everything a report run wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub charts: Vec<PathBuf>,
    pub manifest: PathBuf,
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// One record as a `metrics.csv` row (no trailing newline).
pub fn metrics_row(rec: &MetricRecord, axis: VadAxis) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        axis.name(),
        fmt(rec.vad.e_v),
        fmt(rec.vad.e_a),
        fmt(rec.vad.e_d),
        fmt(rec.avr),
        fmt(rec.tsr),
        fmt(rec.mean_output_length),
        fmt(rec.lexicon_vad.e_v),
        fmt(rec.lexicon_vad.e_a),
        fmt(rec.lexicon_vad.e_d),
        rec.n_tasks,
    )
}

/// `metrics.csv` contents for a sweep along `axis`.
pub fn metrics_csv(records: &[MetricRecord], axis: VadAxis) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for rec in records {
        out.push_str(&metrics_row(rec, axis));
        out.push('\n');
    }
    out
}

const CHART_W: f64 = 640.0;
const CHART_H: f64 = 400.0;
const MARGIN: f64 = 56.0;

/// A simple line chart of (x, y) points; the raw series is embedded in the
/// `<desc>` element so the chart stays self-describing.
fn line_chart_svg(title: &str, x_label: &str, points: &[(f64, f64)]) -> String {
    let (x_min, x_max) = bounds(points.iter().map(|p| p.0));
    let (y_min, y_max) = bounds(points.iter().map(|p| p.1));
    let px = |x: f64| MARGIN + (x - x_min) / (x_max - x_min) * (CHART_W - 2.0 * MARGIN);
    let py = |y: f64| CHART_H - MARGIN - (y - y_min) / (y_max - y_min) * (CHART_H - 2.0 * MARGIN);
    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{CHART_W}\" height=\"{CHART_H}\" \
         viewBox=\"0 0 {CHART_W} {CHART_H}\">\n"
    ));
    svg.push_str("  <desc>");
    svg.push_str(x_label);
    svg.push(',');
    svg.push_str(title);
    for (x, y) in points {
        svg.push_str(&format!("\n{},{}", fmt(*x), fmt(*y)));
    }
    svg.push_str("</desc>\n");
    svg.push_str("  <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // Axes.
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = CHART_H - MARGIN,
        r = CHART_W - MARGIN
    ));
    svg.push_str(&format!(
        "  <line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = CHART_H - MARGIN
    ));
    // Extremal tick labels.
    svg.push_str(&format!(
        "  <text x=\"{m}\" y=\"{y}\" font-size=\"12\" text-anchor=\"middle\">{v}</text>\n",
        m = MARGIN,
        y = CHART_H - MARGIN + 16.0,
        v = fmt(x_min)
    ));
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"middle\">{v}</text>\n",
        x = CHART_W - MARGIN,
        y = CHART_H - MARGIN + 16.0,
        v = fmt(x_max)
    ));
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"end\">{v}</text>\n",
        x = MARGIN - 6.0,
        y = CHART_H - MARGIN,
        v = fmt(y_min)
    ));
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"{y}\" font-size=\"12\" text-anchor=\"end\">{v}</text>\n",
        x = MARGIN - 6.0,
        y = MARGIN + 4.0,
        v = fmt(y_max)
    ));
    // Series.
    let coords: Vec<String> = points
        .iter()
        .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
        .collect();
    svg.push_str(&format!(
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"steelblue\" stroke-width=\"2\"/>\n",
        coords.join(" ")
    ));
    for c in &coords {
        let (cx, cy) = c.split_once(',').unwrap();
        svg.push_str(&format!(
            "  <circle cx=\"{cx}\" cy=\"{cy}\" r=\"3\" fill=\"steelblue\"/>\n"
        ));
    }
    // Labels.
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        x = CHART_W / 2.0
    ));
    svg.push_str(&format!(
        "  <text x=\"{x}\" y=\"{y}\" font-size=\"13\" text-anchor=\"middle\">{x_label}</text>\n",
        x = CHART_W / 2.0,
        y = CHART_H - 12.0
    ));
    svg.push_str("</svg>\n");
    svg
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    // Degenerate span: pad so the projection stays finite.
    if !(hi > lo) {
        lo -= 1.0;
        hi += 1.0;
    }
    (lo, hi)
}

#[derive(Debug, Serialize)]
struct ManifestEntry {
    metric: String,
    file: Option<String>,
    note: Option<String>,
}

#[derive(Debug, Serialize)]
struct ReportManifest {
    axis: String,
    n_records: usize,
    table: String,
    charts: Vec<ManifestEntry>,
}

/// Write `metrics.csv`, one chart per metric (AVR, TSR, mean length, and
/// the swept axis's lexicon score, each against the swept coordinate),
/// and `manifest.json` into `out_dir`. A metric with no finite values gets
/// no chart, only a manifest note.
pub fn emit_report(
    records: &[MetricRecord],
    axis: VadAxis,
    out_dir: &Path,
) -> Result<ReportFiles> {
    if records.is_empty() {
        return Err(Error::EmptyInput("metric records"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir.display().to_string(), e))?;
    let write = |name: &str, contents: &str| -> Result<PathBuf> {
        let path = out_dir.join(name);
        std::fs::write(&path, contents).map_err(|e| Error::io(path.display().to_string(), e))?;
        Ok(path)
    };

    let table = write("metrics.csv", &metrics_csv(records, axis))?;

    let xs: Vec<f64> = records
        .iter()
        .map(|r| r.vad.components()[axis as usize])
        .collect();
    let lex_col = match axis {
        VadAxis::Valence => "lex_v",
        VadAxis::Arousal => "lex_a",
        VadAxis::Dominance => "lex_d",
    };
    let series: [(&str, Vec<f64>); 4] = [
        ("avr", records.iter().map(|r| r.avr).collect()),
        ("tsr", records.iter().map(|r| r.tsr).collect()),
        (
            "mean_len",
            records.iter().map(|r| r.mean_output_length).collect(),
        ),
        (
            lex_col,
            records
                .iter()
                .map(|r| r.lexicon_vad.components()[axis as usize])
                .collect(),
        ),
    ];

    let x_label = format!("target_{}", axis.name());
    let mut charts = Vec::new();
    let mut entries = Vec::new();
    for (metric, ys) in &series {
        let points: Vec<(f64, f64)> = xs
            .iter()
            .zip(ys)
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|(&x, &y)| (x, y))
            .collect();
        if points.is_empty() {
            entries.push(ManifestEntry {
                metric: metric.to_string(),
                file: None,
                note: Some("no finite values; chart omitted".to_string()),
            });
            continue;
        }
        let name = format!("{metric}.svg");
        let path = write(&name, &line_chart_svg(metric, &x_label, &points))?;
        charts.push(path);
        entries.push(ManifestEntry {
            metric: metric.to_string(),
            file: Some(name),
            note: None,
        });
    }

    let manifest_body = serde_json::to_string_pretty(&ReportManifest {
        axis: axis.name().to_string(),
        n_records: records.len(),
        table: "metrics.csv".to_string(),
        charts: entries,
    })
    .expect("manifest serialization cannot fail");
    let manifest = write("manifest.json", &format!("{manifest_body}\n"))?;

    Ok(ReportFiles {
        table,
        charts,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vad::VadVector;

    fn record(e_v: f64, avr: f64, tsr: f64, len: f64, lex_v: f64) -> MetricRecord {
        MetricRecord {
            vad: VadVector::clamped(e_v, 0.0, 0.0),
            avr,
            tsr,
            mean_output_length: len,
            lexicon_vad: VadVector::clamped(lex_v, 0.1, -0.1),
            lexicon_matched_outputs: 3,
            n_tasks: 6,
            outcomes: vec![],
        }
    }

    fn sample_records() -> Vec<MetricRecord> {
        [-9.0, -6.0, -3.0, 0.0, 3.0, 6.0, 9.0]
            .iter()
            .enumerate()
            .map(|(i, &v)| record(v, 0.8 + 0.01 * i as f64, 0.5, 20.0 + i as f64, v * 0.4))
            .collect()
    }

    #[test]
    fn csv_layout_is_exact() {
        let recs = sample_records();
        let csv = metrics_csv(&recs, VadAxis::Valence);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 8);
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(
            lines[1],
            "valence,-9.000000,0.000000,0.000000,0.800000,0.500000,20.000000,\
             -3.600000,0.100000,-0.100000,6"
        );
        assert!(lines.iter().skip(1).all(|l| l.split(',').count() == 11));
    }

    #[test]
    fn report_writes_table_four_charts_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&sample_records(), VadAxis::Valence, dir.path()).unwrap();
        assert!(files.table.ends_with("metrics.csv"));
        assert_eq!(files.charts.len(), 4);
        let names: Vec<String> = files
            .charts
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert_eq!(names, ["avr.svg", "tsr.svg", "mean_len.svg", "lex_v.svg"]);
        for chart in &files.charts {
            let body = std::fs::read_to_string(chart).unwrap();
            assert!(body.starts_with("<svg"));
            assert!(body.contains("<polyline"));
            assert!(body.contains("<desc>"));
        }
        let manifest = std::fs::read_to_string(&files.manifest).unwrap();
        assert!(manifest.contains("\"axis\": \"valence\""));
        assert!(manifest.contains("\"n_records\": 7"));
    }

    #[test]
    fn rerun_is_byte_identical() {
        let recs = sample_records();
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let f1 = emit_report(&recs, VadAxis::Valence, d1.path()).unwrap();
        let f2 = emit_report(&recs, VadAxis::Valence, d2.path()).unwrap();
        let pairs = std::iter::once((&f1.table, &f2.table))
            .chain(f1.charts.iter().zip(&f2.charts))
            .chain(std::iter::once((&f1.manifest, &f2.manifest)));
        for (a, b) in pairs {
            assert_eq!(
                std::fs::read(a).unwrap(),
                std::fs::read(b).unwrap(),
                "{a:?} vs {b:?}"
            );
        }
    }

    #[test]
    fn non_finite_metric_omits_chart_with_note() {
        let mut recs = sample_records();
        for r in &mut recs {
            r.avr = f64::NAN;
        }
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&recs, VadAxis::Valence, dir.path()).unwrap();
        assert_eq!(files.charts.len(), 3);
        assert!(!dir.path().join("avr.svg").exists());
        let manifest = std::fs::read_to_string(&files.manifest).unwrap();
        assert!(manifest.contains("no finite values"));
    }

    #[test]
    fn empty_records_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&[], VadAxis::Valence, dir.path()).is_err());
    }

    #[test]
    fn arousal_sweep_charts_lex_a() {
        let recs: Vec<MetricRecord> = sample_records()
            .into_iter()
            .map(|mut r| {
                r.vad = VadVector::clamped(0.0, r.vad.e_v, 0.0);
                r
            })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(&recs, VadAxis::Arousal, dir.path()).unwrap();
        assert!(files.charts.iter().any(|p| p.ends_with("lex_a.svg")));
        assert!(!dir.path().join("lex_v.svg").exists());
    }
}
