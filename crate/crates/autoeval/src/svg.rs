//! Hand-emitted SVG scatter plots of measure value against accuracy.
//!
//! No plotting dependency: a fixed 800x600 viewBox, deterministic float
//! formatting, circles for the (measure, accuracy) points, the fitted
//! line, and R^2/r/rho annotations. Byte-identical output for identical
//! input makes the plots golden-file testable.

use crate::stats::{CorrelationReport, RegressionModel};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn fmt(v: f64) -> String {
    format!("{v:.3}")
}

/// Renders one scatter plot: x = measure value, y = accuracy in percent,
/// fitted line, and correlation annotations.
pub fn render_scatter(
    title: &str,
    points: &[(f64, f64)],
    model: &RegressionModel,
    report: &CorrelationReport,
) -> String {
    let (mut x_min, mut x_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, _) in points {
        x_min = x_min.min(x);
        x_max = x_max.max(x);
    }
    if points.is_empty() {
        x_min = 0.0;
        x_max = 1.0;
    }
    if x_max - x_min < 1e-12 {
        x_min -= 0.5;
        x_max += 0.5;
    }
    let pad = 0.05 * (x_max - x_min);
    x_min -= pad;
    x_max += pad;
    let (y_min, y_max) = (0.0f64, 100.0f64);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let to_px = |x: f64, y_pct: f64| -> (f64, f64) {
        let px = MARGIN_LEFT + (x - x_min) / (x_max - x_min) * plot_w;
        let py = MARGIN_TOP + (y_max - y_pct) / (y_max - y_min) * plot_h;
        (px, py)
    };

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    // axes
    let (ox, oy) = (MARGIN_LEFT, HEIGHT - MARGIN_BOTTOM);
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(ox),
        fmt(oy),
        fmt(WIDTH - MARGIN_RIGHT),
        fmt(oy)
    ));
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>\n",
        fmt(ox),
        fmt(MARGIN_TOP),
        fmt(ox),
        fmt(oy)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"16\" text-anchor=\"middle\">{title}</text>\n",
        fmt(WIDTH / 2.0),
        fmt(MARGIN_TOP - 15.0)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\">measure value</text>\n",
        fmt(WIDTH / 2.0),
        fmt(HEIGHT - 15.0)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" transform=\"rotate(-90 18 {})\">accuracy (%)</text>\n",
        fmt(HEIGHT / 2.0),
        fmt(HEIGHT / 2.0)
    ));

    // fitted line clipped to the x range
    let (lx1, ly1) = to_px(x_min, (model.predict_clamped(x_min)) * 100.0);
    let (lx2, ly2) = to_px(x_max, (model.predict_clamped(x_max)) * 100.0);
    svg.push_str(&format!(
        "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#d62728\" stroke-width=\"1.5\"/>\n",
        fmt(lx1),
        fmt(ly1),
        fmt(lx2),
        fmt(ly2)
    ));

    for &(x, acc) in points {
        let (px, py) = to_px(x, acc * 100.0);
        svg.push_str(&format!(
            "<circle cx=\"{}\" cy=\"{}\" r=\"4\" fill=\"#1f77b4\" fill-opacity=\"0.7\"/>\n",
            fmt(px),
            fmt(py)
        ));
    }

    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">R\u{b2}={}</text>\n",
        fmt(MARGIN_LEFT + 12.0),
        fmt(MARGIN_TOP + 18.0),
        fmt(report.r_squared)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">r={}</text>\n",
        fmt(MARGIN_LEFT + 12.0),
        fmt(MARGIN_TOP + 36.0),
        fmt(report.pearson_r)
    ));
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"13\">\u{3c1}={}</text>\n",
        fmt(MARGIN_LEFT + 12.0),
        fmt(MARGIN_TOP + 54.0),
        fmt(report.spearman_rho)
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    fn perfect_fixture() -> (Vec<(f64, f64)>, RegressionModel, CorrelationReport) {
        let points: Vec<(f64, f64)> = (0..10).map(|i| (i as f64 / 10.0, i as f64 / 10.0)).collect();
        let model = RegressionModel {
            slope: 1.0,
            intercept: 0.0,
            n_fit_points: 10,
            r_squared_fit: 1.0,
        };
        let report = CorrelationReport {
            pearson_r: 1.0,
            spearman_rho: 1.0,
            r_squared: 1.0,
            mae: None,
        };
        (points, model, report)
    }

    #[test]
    fn perfect_line_annotation() {
        let (points, model, report) = perfect_fixture();
        let svg = render_scatter("mde", &points, &model, &report);
        assert!(svg.contains("R\u{b2}=1.000"));
        assert!(svg.contains("\u{3c1}=1.000"));
    }

    #[test]
    fn circle_count_matches_points() {
        let (points, model, report) = perfect_fixture();
        let svg = render_scatter("mde", &points, &model, &report);
        assert_eq!(svg.matches("<circle").count(), 10);
    }

    #[test]
    fn byte_identical_rerun() {
        let (points, model, report) = perfect_fixture();
        let a = render_scatter("mde", &points, &model, &report);
        let b = render_scatter("mde", &points, &model, &report);
        assert_eq!(a, b);
    }

    #[test]
    fn fixed_viewbox() {
        let (points, model, report) = perfect_fixture();
        let svg = render_scatter("x", &points, &model, &report);
        assert!(svg.contains("viewBox=\"0 0 800 600\""));
    }
}
