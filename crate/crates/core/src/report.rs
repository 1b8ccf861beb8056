//! Text exports: threshold-sweep CSV, per-condition AP CSV, and SVG PR
//! curves.

use std::fmt::Write as _;

use crate::autolabel::ThresholdReport;
use crate::eval::{ApPair, EvalReport, PrPoint};
use crate::labels::WeatherCondition;

/// Marker written in place of AP values for a condition without frames.
pub const NO_FRAMES: &str = "no frames";

/// `tau,precision,recall,f1` rows at 3 decimals plus a `best_tau=` line.
pub fn sweep_csv(report: &ThresholdReport) -> String {
    let mut out = String::from("tau,precision,recall,f1\n");
    for row in &report.rows {
        let _ = writeln!(out, "{},{:.3},{:.3},{:.3}", row.tau, row.precision, row.recall, row.f1);
    }
    let _ = writeln!(out, "best_tau={}", report.best_tau);
    out
}

fn percent(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

fn ap_row(out: &mut String, name: &str, ap: Option<&ApPair>) {
    let _ = match ap {
        Some(ap) => writeln!(out, "{name},{},{}", percent(ap.ap_bev), percent(ap.ap_3d)),
        None => writeln!(out, "{name},{NO_FRAMES},{NO_FRAMES}"),
    };
}

/// `condition,ap_bev,ap_3d` in percent with one decimal.
///
/// `conditions` lists the rows to print after `overall`; conditions missing
/// from the report get marker rows. When `has_frames` is false the overall row
/// is a marker row as well.
pub fn eval_csv(report: &EvalReport, conditions: &[WeatherCondition], has_frames: bool) -> String {
    let mut out = String::from("condition,ap_bev,ap_3d\n");
    ap_row(&mut out, "overall", has_frames.then_some(&report.overall));
    for w in conditions {
        ap_row(&mut out, w.as_str(), report.per_condition.get(w));
    }
    out
}

/// Parsed row of an eval CSV; `None` cells held the no-frames marker.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalCsvRow {
    pub condition: String,
    pub ap_bev: Option<f64>,
    pub ap_3d: Option<f64>,
}

pub fn parse_eval_csv(text: &str) -> Result<Vec<EvalCsvRow>, String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    match lines.next() {
        Some((_, "condition,ap_bev,ap_3d")) => {}
        _ => return Err("line 1: expected header `condition,ap_bev,ap_3d`".into()),
    }
    let cell = |s: &str, line: usize| -> Result<Option<f64>, String> {
        if s == NO_FRAMES {
            return Ok(None);
        }
        s.parse::<f64>()
            .map(Some)
            .map_err(|_| format!("line {line}: bad value `{s}`"))
    };
    lines
        .map(|(i, l)| {
            let parts: Vec<&str> = l.split(',').collect();
            if parts.len() != 3 {
                return Err(format!("line {}: expected 3 columns", i + 1));
            }
            Ok(EvalCsvRow {
                condition: parts[0].to_owned(),
                ap_bev: cell(parts[1], i + 1)?,
                ap_3d: cell(parts[2], i + 1)?,
            })
        })
        .collect()
}

/// Side-by-side table of several eval CSVs: one row per (model, metric), one
/// column per condition, values in percent.
pub fn comparison_table(models: &[(String, Vec<EvalCsvRow>)]) -> String {
    let mut conditions: Vec<String> = Vec::new();
    for (_, rows) in models {
        for r in rows {
            if !conditions.contains(&r.condition) {
                conditions.push(r.condition.clone());
            }
        }
    }
    let mut out = String::new();
    let _ = writeln!(out, "| model | metric | {} |", conditions.join(" | "));
    let _ = writeln!(out, "|---|---|{}", "---|".repeat(conditions.len()));
    for (name, rows) in models {
        for (metric, pick) in [
            ("AP_BEV", (|r: &EvalCsvRow| r.ap_bev) as fn(&EvalCsvRow) -> Option<f64>),
            ("AP_3D", |r: &EvalCsvRow| r.ap_3d),
        ] {
            let cells: Vec<String> = conditions
                .iter()
                .map(|c| {
                    rows.iter()
                        .find(|r| &r.condition == c)
                        .and_then(pick)
                        .map_or_else(|| "-".to_owned(), |v| format!("{v:.1}"))
                })
                .collect();
            let _ = writeln!(out, "| {name} | {metric} | {} |", cells.join(" | "));
        }
    }
    out
}

/// Minimal SVG plot of a precision/recall curve on unit axes.
pub fn pr_curve_svg(title: &str, points: &[PrPoint]) -> String {
    const SIZE: f64 = 400.0;
    const MARGIN: f64 = 50.0;
    let x = |r: f64| MARGIN + r * SIZE;
    let y = |p: f64| MARGIN + (1.0 - p) * SIZE;

    let mut out = String::new();
    let full = SIZE + 2.0 * MARGIN;
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}">"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="16" text-anchor="middle">{}</text>"#,
        full / 2.0,
        MARGIN / 2.0,
        escape(title)
    );
    let _ = writeln!(
        out,
        r#"<path d="M {x0} {y0} L {x1} {y0} M {x0} {y0} L {x0} {y1}" stroke="black" fill="none"/>"#,
        x0 = x(0.0),
        y0 = y(0.0),
        x1 = x(1.0),
        y1 = y(1.0)
    );
    for t in [0.0, 0.5, 1.0] {
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="middle">{t}</text>"#,
            x(t),
            y(0.0) + 18.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="12" text-anchor="end">{t}</text>"#,
            x(0.0) - 6.0,
            y(t) + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle">recall</text>"#,
        full / 2.0,
        full - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">precision</text>"#,
        full / 2.0,
        full / 2.0
    );
    if !points.is_empty() {
        let mut d = format!("M {:.2} {:.2}", x(0.0), y(points[0].precision));
        for p in points {
            let _ = write!(d, " L {:.2} {:.2}", x(p.recall), y(p.precision));
        }
        let _ = writeln!(
            out,
            r#"<path d="{d}" stroke="steelblue" stroke-width="2" fill="none"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autolabel::ThresholdRow;
    use std::collections::BTreeMap;

    #[test]
    fn sweep_format() {
        let report = ThresholdReport {
            rows: vec![ThresholdRow {
                tau: 0.3,
                precision: 0.8779982,
                recall: 0.593,
                f1: 0.70789,
            }],
            best_tau: 0.3,
        };
        assert_eq!(
            sweep_csv(&report),
            "tau,precision,recall,f1\n0.3,0.878,0.593,0.708\nbest_tau=0.3\n"
        );
    }

    #[test]
    fn eval_format_and_parse() {
        let report = EvalReport {
            per_condition: BTreeMap::from([(
                WeatherCondition::Fog,
                ApPair {
                    ap_bev: 5.0 / 6.0,
                    ap_3d: 1.0,
                },
            )]),
            overall: ApPair {
                ap_bev: 0.5,
                ap_3d: 0.25,
            },
            prf_at_tau: None,
        };
        let csv = eval_csv(&report, &[WeatherCondition::Normal, WeatherCondition::Fog], true);
        assert_eq!(
            csv,
            "condition,ap_bev,ap_3d\noverall,50.0,25.0\nnormal,no frames,no frames\nfog,83.3,100.0\n"
        );
        let rows = parse_eval_csv(&csv).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[1].ap_bev, None);
        assert_eq!(rows[2].ap_bev, Some(83.3));
        assert!(parse_eval_csv("nope\n").is_err());

        let table = comparison_table(&[("a".into(), rows)]);
        assert!(table.contains("| a | AP_BEV | 50.0 | - | 83.3 |"), "{table}");
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = pr_curve_svg(
            "fog <all>",
            &[PrPoint {
                confidence: 0.9,
                precision: 1.0,
                recall: 0.5,
            }],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("fog &lt;all&gt;"));
        assert!(svg.contains("stroke=\"steelblue\""));
    }
}
