//! Self-contained SVG rendering of the training metrics: accuracy on a fixed
//! [0, 1] axis, loss on an auto-scaled axis, train and validation series in
//! both panels. No display server involved; the output is plain XML.

use std::fmt::Write;

use caedet_core::train::EpochMetrics;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 560.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 24.0;
const TRAIN_COLOR: &str = "#1f77b4";
const VAL_COLOR: &str = "#ff7f0e";

struct Panel {
    top: f64,
    bottom: f64,
    y_min: f64,
    y_max: f64,
}

impl Panel {
    fn x(&self, epoch: f64, first: f64, last: f64) -> f64 {
        if last > first {
            MARGIN_LEFT + (epoch - first) / (last - first) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
        } else {
            (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0
        }
    }

    fn y(&self, value: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::MIN_POSITIVE);
        self.bottom - (value - self.y_min) / span * (self.bottom - self.top)
    }
}

fn polyline(
    out: &mut String,
    panel: &Panel,
    rows: &[EpochMetrics],
    value: impl Fn(&EpochMetrics) -> f64,
    color: &str,
    class: &str,
) {
    let first = rows.first().map_or(0.0, |r| r.epoch as f64);
    let last = rows.last().map_or(0.0, |r| r.epoch as f64);
    let points: Vec<String> = rows
        .iter()
        .filter(|r| value(r).is_finite())
        .map(|r| {
            format!(
                "{:.2},{:.2}",
                panel.x(r.epoch as f64, first, last),
                panel.y(value(r))
            )
        })
        .collect();
    if points.is_empty() {
        return;
    }
    writeln!(
        out,
        r#"  <polyline class="{class}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
        points.join(" ")
    )
    .unwrap();
}

fn axes(out: &mut String, panel: &Panel, rows: &[EpochMetrics], title: &str, y_ticks: &[f64]) {
    writeln!(
        out,
        r#"  <text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="14">{title}</text>"#,
        MARGIN_LEFT,
        panel.top - 8.0
    )
    .unwrap();
    // frame
    writeln!(
        out,
        r##"  <rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#999"/>"##,
        MARGIN_LEFT,
        panel.top,
        WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        panel.bottom - panel.top
    )
    .unwrap();
    for &tick in y_ticks {
        let y = panel.y(tick);
        writeln!(
            out,
            r##"  <line x1="{:.2}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##,
            MARGIN_LEFT,
            WIDTH - MARGIN_RIGHT
        )
        .unwrap();
        writeln!(
            out,
            r#"  <text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">{tick:.2}</text>"#,
            MARGIN_LEFT - 6.0,
            y + 4.0
        )
        .unwrap();
    }
    // x tick labels: at most ~10, on integer epochs
    let first = rows.first().map_or(0.0, |r| r.epoch as f64);
    let last = rows.last().map_or(0.0, |r| r.epoch as f64);
    let step = (((last - first) / 10.0).ceil() as usize).max(1);
    for r in rows.iter().step_by(step) {
        let x = panel.x(r.epoch as f64, first, last);
        writeln!(
            out,
            r#"  <text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            panel.bottom + 16.0,
            r.epoch
        )
        .unwrap();
    }
}

fn legend(out: &mut String, x: f64, y: f64) {
    for (i, (color, label)) in [(TRAIN_COLOR, "train"), (VAL_COLOR, "validation")]
        .iter()
        .enumerate()
    {
        let off = x + i as f64 * 110.0;
        writeln!(
            out,
            r#"  <line x1="{off:.0}" y1="{y:.0}" x2="{:.0}" y2="{y:.0}" stroke="{color}" stroke-width="2"/>"#,
            off + 24.0
        )
        .unwrap();
        writeln!(
            out,
            r#"  <text x="{:.0}" y="{:.0}" font-family="sans-serif" font-size="12">{label}</text>"#,
            off + 30.0,
            y + 4.0
        )
        .unwrap();
    }
}

/// Renders the metrics table as a two-panel SVG line chart.
pub fn render_metrics_svg(rows: &[EpochMetrics]) -> String {
    let max_loss = rows
        .iter()
        .flat_map(|r| [r.train_loss, r.val_loss])
        .filter(|v| v.is_finite())
        .fold(0.0f64, f64::max);
    let acc_panel = Panel {
        top: 48.0,
        bottom: 252.0,
        y_min: 0.0,
        y_max: 1.0,
    };
    let loss_panel = Panel {
        top: 326.0,
        bottom: 530.0,
        y_min: 0.0,
        y_max: (max_loss * 1.05).max(1e-6),
    };

    let mut out = String::new();
    writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#).unwrap();
    writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH:.0}" height="{HEIGHT:.0}" viewBox="0 0 {WIDTH:.0} {HEIGHT:.0}">"#
    )
    .unwrap();
    writeln!(
        out,
        r#"  <rect x="0" y="0" width="{WIDTH:.0}" height="{HEIGHT:.0}" fill="white"/>"#
    )
    .unwrap();

    axes(
        &mut out,
        &acc_panel,
        rows,
        "Pixel accuracy over epochs",
        &[0.0, 0.25, 0.5, 0.75, 1.0],
    );
    polyline(&mut out, &acc_panel, rows, |r| r.train_acc, TRAIN_COLOR, "acc-train");
    polyline(&mut out, &acc_panel, rows, |r| r.val_acc, VAL_COLOR, "acc-val");

    let loss_ticks = [0.0, loss_panel.y_max / 2.0, loss_panel.y_max];
    axes(&mut out, &loss_panel, rows, "BCE loss over epochs", &loss_ticks);
    polyline(&mut out, &loss_panel, rows, |r| r.train_loss, TRAIN_COLOR, "loss-train");
    polyline(&mut out, &loss_panel, rows, |r| r.val_loss, VAL_COLOR, "loss-val");

    legend(&mut out, MARGIN_LEFT, 20.0);
    writeln!(out, "</svg>").unwrap();
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rows() -> Vec<EpochMetrics> {
        (1..=10)
            .map(|epoch| EpochMetrics {
                epoch,
                train_loss: 0.5 / epoch as f64,
                train_acc: if epoch == 1 { 0.9968 } else { 0.9978 },
                val_loss: 0.45 / epoch as f64,
                val_acc: 0.9977,
            })
            .collect()
    }

    /// Minimal XML well-formedness check: tags balance and nest.
    fn assert_well_formed(xml: &str) {
        let mut stack: Vec<String> = Vec::new();
        let mut rest = xml;
        while let Some(open) = rest.find('<') {
            rest = &rest[open + 1..];
            let close = rest.find('>').expect("unclosed tag");
            let tag = &rest[..close];
            rest = &rest[close + 1..];
            if tag.starts_with('?') || tag.starts_with('!') {
                continue;
            }
            if let Some(name) = tag.strip_prefix('/') {
                assert_eq!(stack.pop().as_deref(), Some(name), "mismatched closing tag");
            } else if !tag.ends_with('/') {
                let name = tag.split_whitespace().next().unwrap().to_string();
                stack.push(name);
            }
        }
        assert!(stack.is_empty(), "unclosed tags: {stack:?}");
    }

    #[test]
    fn output_is_well_formed_xml_with_both_accuracy_series() {
        let svg = render_metrics_svg(&rows());
        assert!(svg.starts_with(r#"<?xml version="1.0""#));
        assert_well_formed(&svg);
        assert!(svg.contains(r#"class="acc-train""#));
        assert!(svg.contains(r#"class="acc-val""#));
        assert!(svg.contains(r#"class="loss-train""#));
    }

    #[test]
    fn flat_accuracy_series_render_near_horizontal() {
        let svg = render_metrics_svg(&rows());
        for class in ["acc-train", "acc-val"] {
            let marker = format!(r#"class="{class}""#);
            let line = svg.lines().find(|l| l.contains(&marker)).unwrap();
            let points = line.split("points=\"").nth(1).unwrap();
            let points = &points[..points.find('"').unwrap()];
            let ys: Vec<f64> = points
                .split_whitespace()
                .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
                .collect();
            let (min, max) = ys
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &y| {
                    (lo.min(y), hi.max(y))
                });
            // accuracy panel is ~200 px tall; a flat 0.9968..0.9978 series
            // must stay within a couple of pixels
            assert!(max - min < 2.0, "{class} spans {} px", max - min);
        }
    }

    #[test]
    fn nan_validation_series_is_omitted() {
        let rows: Vec<EpochMetrics> = (1..=3)
            .map(|epoch| EpochMetrics {
                epoch,
                train_loss: 0.2,
                train_acc: 0.9,
                val_loss: f64::NAN,
                val_acc: f64::NAN,
            })
            .collect();
        let svg = render_metrics_svg(&rows);
        assert!(svg.contains(r#"class="acc-train""#));
        assert!(!svg.contains(r#"class="acc-val""#));
        assert_well_formed(&svg);
    }
}
