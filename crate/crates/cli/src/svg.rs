//! Minimal SVG output: line plots and labelled scatter plots.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 150.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 50.0;

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_x: bool,
}

impl Frame {
    fn fit<'a>(pts: impl Iterator<Item = &'a (f64, f64)>, log_x: bool) -> Frame {
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            let x = if log_x { x.log10() } else { x };
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            x0 -= 0.5;
            x1 += 0.5;
        }
        let pad = if y1 - y0 < 1e-12 { 0.5 * y0.abs().max(1.0) } else { 0.05 * (y1 - y0) };
        Frame {
            x0,
            x1,
            y0: y0 - pad,
            y1: y1 + pad,
            log_x,
        }
    }

    fn px(&self, x: f64) -> f64 {
        let x = if self.log_x { x.log10() } else { x };
        MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - MARGIN_L - MARGIN_R)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN_B - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        (WIDTH - MARGIN_R + MARGIN_L) / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, f: &Frame, x_label: &str, y_label: &str, x_ticks: &[f64]) {
    let (l, r) = (MARGIN_L, WIDTH - MARGIN_R);
    let (t, b) = (MARGIN_T, HEIGHT - MARGIN_B);
    let _ = writeln!(
        out,
        r#"<polyline points="{l},{t} {l},{b} {r},{b}" fill="none" stroke="black"/>"#
    );
    for &x in x_ticks {
        let px = f.px(x);
        let _ = writeln!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            b + 16.0,
            escape(&format!("{x}"))
        );
    }
    for k in 0..=4 {
        let y = f.y0 + (f.y1 - f.y0) * k as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            l - 6.0,
            f.py(y) + 4.0,
            y
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (l + r) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (t + b) / 2.0,
        (t + b) / 2.0,
        escape(y_label)
    );
}

fn legend(out: &mut String, labels: &[String]) {
    for (i, label) in labels.iter().enumerate() {
        let y = MARGIN_T + 10.0 + 18.0 * i as f64;
        let x = WIDTH - MARGIN_R + 12.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{}" y="{y:.1}" dominant-baseline="middle">{}</text>"#,
            y - 6.0,
            PALETTE[i % PALETTE.len()],
            x + 18.0,
            escape(label)
        );
    }
}

/// One polyline per series. Non-finite points are dropped, and so are
/// nonpositive x values on a logarithmic axis.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series], log_x: bool) -> String {
    let keep = |&(x, y): &(f64, f64)| x.is_finite() && y.is_finite() && (!log_x || x > 0.0);
    let clean: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| s.points.iter().copied().filter(keep).collect())
        .collect();
    let frame = Frame::fit(clean.iter().flatten(), log_x);
    let mut ticks: Vec<f64> = clean.iter().flatten().map(|p| p.0).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();

    let mut out = String::new();
    open(&mut out, title);
    axes(&mut out, &frame, x_label, y_label, &ticks);
    for (i, pts) in clean.iter().enumerate() {
        let colour = PALETTE[i % PALETTE.len()];
        let coords: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            coords.join(" ")
        );
        for c in &coords {
            let (cx, cy) = c.split_once(',').expect("coordinate pair");
            let _ = writeln!(out, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{colour}"/>"#);
        }
    }
    let labels: Vec<String> = series.iter().map(|s| s.label.clone()).collect();
    legend(&mut out, &labels);
    out.push_str("</svg>\n");
    out
}

/// Points coloured by label.
pub fn scatter(title: &str, points: &[(f64, f64, u32)]) -> String {
    let xy: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y, _)| (x, y))
        .filter(|p| p.0.is_finite() && p.1.is_finite())
        .collect();
    let frame = Frame::fit(xy.iter(), false);
    let mut out = String::new();
    open(&mut out, title);
    let ticks = [frame.x0, (frame.x0 + frame.x1) / 2.0, frame.x1].map(|v| (v * 100.0).round() / 100.0);
    axes(&mut out, &frame, "x0", "x1", &ticks);
    for &(x, y, c) in points {
        if x.is_finite() && y.is_finite() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="1.5" fill="{}" fill-opacity="0.6"/>"#,
                frame.px(x),
                frame.py(y),
                PALETTE[c as usize % PALETTE.len()]
            );
        }
    }
    let mut labels: Vec<u32> = points.iter().map(|p| p.2).collect();
    labels.sort_unstable();
    labels.dedup();
    let names: Vec<String> = labels.iter().map(|c| format!("c = {c}")).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}
