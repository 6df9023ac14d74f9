//! CSV and SVG heatmap renderings of a [`SweepReport`].

use std::fmt::Write as _;
use std::path::Path;

use super::SweepReport;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Csv,
    SvgHeatmap,
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{:.1}", 100.0 * x))
}

/// One row per first transform, one column per second transform plus the
/// row average; weighted F1 in percent with one decimal, `NA` for failures.
pub fn render_csv(report: &SweepReport) -> String {
    let k = report.kinds.len();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["transform_1".to_string()];
    header.extend(report.kinds.iter().map(|k| k.to_string()));
    header.push("row_avg".into());
    w.write_record(&header).expect("in-memory write");
    for r in 0..k {
        let mut rec = vec![report.kinds[r].to_string()];
        rec.extend((0..k).map(|c| pct(report.cell(r, c).mean())));
        rec.push(pct(report.row_average(r)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 fields")
}

// viridis samples at 0, .25, .5, .75, 1
const STOPS: [(f64, f64, f64); 5] = [
    (68.0, 1.0, 84.0),
    (59.0, 82.0, 139.0),
    (33.0, 145.0, 140.0),
    (94.0, 201.0, 98.0),
    (253.0, 231.0, 37.0),
];

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    let (a, b) = (STOPS[i], STOPS[i + 1]);
    let mix = |x: f64, y: f64| (x + (y - x) * f).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(a.0, b.0), mix(a.1, b.1), mix(a.2, b.2))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Self-contained SVG grid colour-mapped over the range of cell means; the
/// row-average column is drawn on the same scale to the right.
pub fn render_svg(report: &SweepReport) -> String {
    const CELL: usize = 56;
    const LEFT: usize = 80;
    const TOP: usize = 70;
    let k = report.kinds.len();
    let means: Vec<f64> = report.cells.iter().filter_map(|c| c.mean()).collect();
    let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let scale = |v: f64| if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
    let width = LEFT + (k + 1) * CELL + CELL / 2 + 10;
    let height = TOP + k * CELL + 30;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="18" font-size="14">Weighted F1 (%), {} protocol, {} run(s) per cell</text>"#,
        report.protocol, report.runs_per_cell
    );
    for (c, kind) in report.kinds.iter().enumerate() {
        let x = LEFT + c * CELL + CELL / 2;
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, TOP - 8, escape(kind.name()));
    }
    let avg_x = LEFT + k * CELL + CELL / 2;
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">avg</text>"#, avg_x + CELL / 2, TOP - 8);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="{}">second transform →</text>"#, TOP - 28);

    let cell = |s: &mut String, x: usize, y: usize, v: Option<f64>| {
        let (fill, label, ink) = match v {
            Some(v) => {
                let t = scale(v);
                (color(t), pct(Some(v)), if t > 0.6 { "black" } else { "white" })
            }
            None => ("#d0d0d0".to_string(), "NA".to_string(), "black"),
        };
        let _ = writeln!(
            s,
            r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="white"/><text x="{}" y="{}" text-anchor="middle" fill="{ink}">{label}</text>"#,
            x + CELL / 2,
            y + CELL / 2 + 4
        );
    };
    for r in 0..k {
        let y = TOP + r * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{}</text>"#,
            LEFT - 6,
            y + CELL / 2 + 4,
            escape(report.kinds[r].name())
        );
        for c in 0..k {
            cell(&mut s, LEFT + c * CELL, y, report.cell(r, c).mean());
        }
        cell(&mut s, avg_x, y, report.row_average(r));
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_report(report: &SweepReport, format: ReportFormat, path: &Path) -> Result<()> {
    let body = match format {
        ReportFormat::Csv => render_csv(report),
        ReportFormat::SvgHeatmap => render_svg(report),
    };
    std::fs::write(path, body).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::super::tests::fake_report;
    use super::*;
    use crate::augment::TransformKind;

    #[test]
    fn csv_shape_and_round_trip() {
        let kinds = TransformKind::ALL.to_vec();
        let vals: Vec<Option<f64>> = (0..81)
            .map(|i| if i == 10 { None } else { Some(0.5 + 0.005 * i as f64) })
            .collect();
        let rep = fake_report(&vals, kinds);
        let text = render_csv(&rep);
        let mut rd = csv::Reader::from_reader(text.as_bytes());
        let header = rd.headers().unwrap().clone();
        assert_eq!(header.len(), 11);
        assert_eq!(&header[0], "transform_1");
        assert_eq!(&header[10], "row_avg");
        let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
        assert_eq!(rows.len(), 9);
        for (r, row) in rows.iter().enumerate() {
            for c in 0..9 {
                match rep.cell(r, c).mean() {
                    Some(m) => {
                        let back: f64 = row[c + 1].parse().unwrap();
                        assert!((back - 100.0 * m).abs() <= 0.05 + 1e-9);
                    }
                    None => assert_eq!(&row[c + 1], "NA"),
                }
            }
        }
    }

    #[test]
    fn uniform_scores_give_uniform_colour() {
        let rep = fake_report(&[Some(0.7); 4], vec![TransformKind::Noise, TransformKind::Scale]);
        let svg = render_svg(&rep);
        let fills: std::collections::BTreeSet<&str> = svg
            .match_indices("fill=\"#")
            .map(|(i, _)| &svg[i + 6..i + 13])
            .collect();
        assert_eq!(fills.len(), 1, "{fills:?}");
        assert!(svg.starts_with("<svg"));
        assert!(!svg.contains("href"));
    }

    #[test]
    fn failed_cells_render_na() {
        let rep = fake_report(&[Some(0.7), None, Some(0.2), Some(0.9)], vec![TransformKind::Noise, TransformKind::Scale]);
        assert!(render_svg(&rep).contains(">NA<"));
        assert!(render_csv(&rep).contains("NA"));
    }

    #[test]
    fn colour_endpoints() {
        assert_eq!(color(0.0), "#440154");
        assert_eq!(color(1.0), "#fde725");
    }
}
