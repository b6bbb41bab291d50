//! Self-contained SVG trajectory plot.
//!
//! Mirrors the paper's figures: empty circles for per-orbit point estimates,
//! empty (inverted) triangles for the (lower) upper CI endpoints, one thin
//! grey spline per perturbation, the observed spline in black, filled markers
//! for the extrapolated predictions and uncertainty-interval endpoints, and a
//! vertical line per horizon spanning the symmetric 95 percentiles of the
//! predicted effects across the ensemble.

use std::fmt::Write as _;

use confsens_core::{ExtrapolationResult, TrajectoryEnsemble};

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 78.0;
const MARGIN_RIGHT: f64 = 24.0;
const MARGIN_TOP: f64 = 28.0;
const MARGIN_BOTTOM: f64 = 64.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        MARGIN_LEFT + (v - self.x_min) / (self.x_max - self.x_min) * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        HEIGHT - MARGIN_BOTTOM
            - (v - self.y_min) / (self.y_max - self.y_min) * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let m = sorted.len();
    let rank = ((p * m as f64).ceil() as usize).clamp(1, m);
    sorted[rank - 1]
}

/// Render the trajectory plot for one analysis run.
pub fn render(ensemble: &TrajectoryEnsemble, extrapolation: &ExtrapolationResult) -> String {
    let j = ensemble.n_covariates();
    let q_max = extrapolation.q_values.iter().copied().max().unwrap_or(1);

    // Predicted-effect percentiles per horizon (vertical whiskers).
    let whiskers: Vec<(usize, f64, f64)> = extrapolation
        .q_values
        .iter()
        .enumerate()
        .map(|(qi, q)| {
            let mut effects: Vec<f64> =
                extrapolation.predicted_effects.iter().map(|t| t[qi]).collect();
            effects.sort_by(|a, b| a.partial_cmp(b).unwrap());
            (*q, nearest_rank(&effects, 0.025), nearest_rank(&effects, 0.975))
        })
        .collect();

    // Data ranges.
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    let mut take = |v: f64| {
        y_min = y_min.min(v);
        y_max = y_max.max(v);
    };
    for orbit in &ensemble.observed.orbits {
        take(orbit.ci_lower);
        take(orbit.ci_upper);
    }
    for trajectory in ensemble.trajectories() {
        for orbit in &trajectory.orbits {
            take(orbit.estimate);
        }
    }
    for interval in &extrapolation.uncertainty_intervals {
        take(interval.lower);
        take(interval.upper);
    }
    for (_, lo, hi) in &whiskers {
        take(*lo);
        take(*hi);
    }
    take(0.0);
    let pad = 0.06 * (y_max - y_min).max(1e-12);
    let frame = Frame {
        x_min: -0.5,
        x_max: (j + q_max) as f64 + 0.5,
        y_min: y_min - pad,
        y_max: y_max + pad,
    };

    let mut svg = String::with_capacity(1 << 16);
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    axes(&mut svg, &frame, j, q_max);

    // Zero reference.
    if frame.y_min < 0.0 && frame.y_max > 0.0 {
        let _ = writeln!(
            svg,
            r##"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="#999999" stroke-dasharray="6 4" stroke-width="1"/>"##,
            frame.x(frame.x_min),
            frame.y(0.0),
            frame.x(frame.x_max),
            frame.y(0.0)
        );
    }

    // Perturbed estimate splines (thin grey), then the observed one (black).
    let grid: Vec<f64> = (0..=(4 * j)).map(|i| i as f64 / 4.0).collect();
    for spline in extrapolation.estimate_splines.iter().skip(1) {
        let points: String = grid
            .iter()
            .map(|x| format!("{:.2},{:.2}", frame.x(*x), frame.y(spline.predict(*x))))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            r##"<polyline points="{points}" fill="none" stroke="#bbbbbb" stroke-width="0.6" opacity="0.55"/>"##
        );
    }
    if let Some(observed_spline) = extrapolation.estimate_splines.first() {
        let points: String = grid
            .iter()
            .map(|x| format!("{:.2},{:.2}", frame.x(*x), frame.y(observed_spline.predict(*x))))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            r#"<polyline points="{points}" fill="none" stroke="black" stroke-width="1.6"/>"#
        );
        // Dashed continuation through the extrapolation region.
        let ext: String = (0..=(4 * q_max))
            .map(|i| j as f64 + i as f64 / 4.0)
            .map(|x| format!("{:.2},{:.2}", frame.x(x), frame.y(observed_spline.predict(x))))
            .collect::<Vec<_>>()
            .join(" ");
        let _ = writeln!(
            svg,
            r#"<polyline points="{ext}" fill="none" stroke="black" stroke-width="1.2" stroke-dasharray="4 4"/>"#
        );
    }

    // Observed per-orbit markers: circles for estimates, triangles for CIs.
    for (orbit_index, orbit) in ensemble.observed.orbits.iter().enumerate() {
        let x = frame.x(orbit_index as f64);
        circle(&mut svg, x, frame.y(orbit.estimate), false);
        triangle(&mut svg, x, frame.y(orbit.ci_upper), true, false);
        triangle(&mut svg, x, frame.y(orbit.ci_lower), false, false);
    }

    // Extrapolated predictions, whiskers and uncertainty intervals.
    for (qi, q) in extrapolation.q_values.iter().enumerate() {
        let x = frame.x((j + q) as f64);
        let (_, lo, hi) = whiskers[qi];
        let _ = writeln!(
            svg,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#555555" stroke-width="1.1"/>"##,
            frame.y(lo),
            frame.y(hi)
        );
        let interval = extrapolation.uncertainty_intervals[qi];
        triangle(&mut svg, x, frame.y(interval.upper), true, true);
        triangle(&mut svg, x, frame.y(interval.lower), false, true);
        circle(&mut svg, x, frame.y(extrapolation.predicted_effects[0][qi]), true);
    }

    let _ = writeln!(svg, "</svg>");
    svg
}

fn circle(svg: &mut String, x: f64, y: f64, filled: bool) {
    let fill = if filled { "black" } else { "white" };
    let _ = writeln!(
        svg,
        r#"<circle cx="{x:.2}" cy="{y:.2}" r="4" fill="{fill}" stroke="black" stroke-width="1.1"/>"#
    );
}

/// Upward triangle for upper endpoints, inverted for lower endpoints.
fn triangle(svg: &mut String, x: f64, y: f64, upward: bool, filled: bool) {
    let r = 4.6;
    let (dy1, dy2) = if upward { (-r, r * 0.7) } else { (r, -r * 0.7) };
    let fill = if filled { "black" } else { "white" };
    let _ = writeln!(
        svg,
        r#"<polygon points="{:.2},{:.2} {:.2},{:.2} {:.2},{:.2}" fill="{fill}" stroke="black" stroke-width="1.0"/>"#,
        x,
        y + dy1,
        x - r,
        y + dy2,
        x + r,
        y + dy2
    );
}

fn axes(svg: &mut String, frame: &Frame, j: usize, q_max: usize) {
    let x0 = frame.x(frame.x_min);
    let x1 = frame.x(frame.x_max);
    let y0 = frame.y(frame.y_min);
    let y1 = frame.y(frame.y_max);
    let _ = writeln!(svg, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}" stroke="black" stroke-width="1.2"/>"#);
    let _ = writeln!(svg, r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}" stroke="black" stroke-width="1.2"/>"#);

    let total = j + q_max;
    let step = (total / 12).max(1);
    let mut tick = 0usize;
    while tick <= total {
        let x = frame.x(tick as f64);
        let _ = writeln!(svg, r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black" stroke-width="1"/>"#, y0 + 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{tick}</text>"#,
            y0 + 20.0
        );
        tick += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle">Number of covariates adjusted for</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 16.0
    );

    // Around six y ticks at a power-of-ten-ish spacing.
    let span = frame.y_max - frame.y_min;
    let raw = span / 6.0;
    let magnitude = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 2.5, 5.0, 10.0]
        .iter()
        .map(|m| m * magnitude)
        .find(|s| span / s <= 7.0)
        .unwrap_or(magnitude);
    let mut v = (frame.y_min / step).ceil() * step;
    while v <= frame.y_max {
        let y = frame.y(v);
        let _ = writeln!(svg, r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black" stroke-width="1"/>"#, x0 - 5.0);
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"#,
            x0 - 9.0,
            y + 4.0,
            format_tick(v)
        );
        v += step;
    }
    let _ = writeln!(
        svg,
        r#"<text x="18" y="{:.2}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 18 {:.2})">Average exposure effect</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0
    );
}

fn format_tick(v: f64) -> String {
    let rounded = (v * 1e9).round() / 1e9;
    if rounded == rounded.trunc() && rounded.abs() < 1e6 {
        format!("{}", rounded as i64)
    } else {
        format!("{rounded}")
    }
}
