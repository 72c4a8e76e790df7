//! Reliability diagrams as standalone SVG documents.

use std::fmt::Write as _;

use crate::calibration::CalibrationReport;

const SIZE: f64 = 320.0;
const MARGIN: f64 = 40.0;

fn x(v: f64) -> f64 {
    MARGIN + v * SIZE
}

fn y(v: f64) -> f64 {
    MARGIN + (1.0 - v) * SIZE
}

/// Accuracy bars per confidence bin, the gap to each bin's mean confidence
/// shaded red, and the identity line. Output depends only on the report.
pub fn reliability_svg(report: &CalibrationReport, title: &str) -> String {
    let total = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{total}" height="{total}" viewBox="0 0 {total} {total}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="#fafafa" stroke="#333"/>"##);
    for b in report.bins.iter().filter(|b| b.count > 0) {
        let w = (b.upper - b.lower) * SIZE;
        let top = y(b.accuracy);
        let _ = writeln!(
            s,
            r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#4a7bd0" stroke="#24467f"/>"##,
            x(b.lower),
            top,
            w,
            y(0.0) - top
        );
        let (lo, hi) = if b.mean_confidence > b.accuracy {
            (b.accuracy, b.mean_confidence)
        } else {
            (b.mean_confidence, b.accuracy)
        };
        if hi > lo {
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="#d04a4a" fill-opacity="0.35"/>"##,
                x(b.lower),
                y(hi),
                w,
                y(lo) - y(hi)
            );
        }
    }
    let _ = writeln!(
        s,
        r##"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="#888" stroke-dasharray="4 3"/>"##,
        x(0.0),
        y(0.0),
        x(1.0),
        y(1.0)
    );
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{v:.2}</text>"#, x(v), y(0.0) + 14.0);
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.2}</text>"#, x(0.0) - 4.0, y(v) + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">confidence</text>"#,
        x(0.5),
        total - 6.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{}" text-anchor="middle" transform="rotate(-90 12 {})">accuracy</text>"#,
        y(0.5),
        y(0.5)
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{} (ECE {:.4})</text>"#,
        x(0.5),
        MARGIN - 12.0,
        escape(title),
        report.ece
    );
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.chars()
        .map(|c| match c {
            '<' => "&lt;".to_string(),
            '>' => "&gt;".to_string(),
            '&' => "&amp;".to_string(),
            '"' => "&quot;".to_string(),
            c => c.to_string(),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::calibration::{compute_ece, PredictionRecord};

    #[test]
    fn svg_is_deterministic_and_escaped() {
        let recs = vec![
            PredictionRecord::new(vec![0.9, 0.1], 0).unwrap(),
            PredictionRecord::new(vec![0.3, 0.7], 0).unwrap(),
        ];
        let report = compute_ece(&recs, 15).unwrap();
        let a = reliability_svg(&report, "a<b");
        assert_eq!(a, reliability_svg(&report, "a<b"));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert!(a.contains("a&lt;b"));
        assert_eq!(a.matches("fill=\"#4a7bd0\"").count(), 2);
    }
}
