//! Minimal static SVG charts: a labelled heatmap and line/area plots.

use std::fmt::Write as _;

const FONT: &str = "font-family=\"sans-serif\" font-size=\"11\"";

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Blue (-1) to white (0) to red (+1).
fn diverging(v: f64) -> String {
    let v = v.clamp(-1.0, 1.0);
    let (r, g, b) = if v >= 0.0 {
        (255.0, 255.0 * (1.0 - v), 255.0 * (1.0 - v))
    } else {
        (255.0 * (1.0 + v), 255.0 * (1.0 + v), 255.0)
    };
    format!("rgb({},{},{})", r.round(), g.round(), b.round())
}

pub fn heatmap(title: &str, rows: &[String], cols: &[String], values: &[Vec<f64>]) -> String {
    let cell = 48.0;
    let (left, top) = (60.0, 50.0);
    let w = left + cell * cols.len() as f64 + 20.0;
    let h = top + cell * rows.len() as f64 + 20.0;
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" {FONT} font-size=\"14\" text-anchor=\"middle\">{}</text>", w / 2.0, escape(title));
    for (j, c) in cols.iter().enumerate() {
        let x = left + cell * (j as f64 + 0.5);
        let _ = writeln!(s, "<text x=\"{x}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>", top - 8.0, escape(c));
    }
    for (i, r) in rows.iter().enumerate() {
        let y = top + cell * i as f64;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>", left - 8.0, y + cell / 2.0 + 4.0, escape(r));
        for (j, v) in values[i].iter().enumerate() {
            let x = left + cell * j as f64;
            let _ = writeln!(
                s,
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"{}\" stroke=\"#888\" stroke-width=\"0.5\"/>",
                diverging(*v)
            );
            let _ = writeln!(
                s,
                "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{v:.2}</text>",
                x + cell / 2.0,
                y + cell / 2.0 + 4.0
            );
        }
    }
    s.push_str("</svg>\n");
    s
}

pub struct Series {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub color: &'static str,
    pub dashed: bool,
}

/// Shaded band between two curves sharing `x`.
pub struct Band {
    pub x: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub color: &'static str,
}

pub const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e-2 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], bands: &[Band]) -> String {
    let (w, h) = (520.0, 360.0);
    let (l, r, t, b) = (70.0, 20.0, 36.0, 46.0);
    let xs = series.iter().flat_map(|s| s.x.iter()).chain(bands.iter().flat_map(|b| b.x.iter()));
    let ys = series.iter().flat_map(|s| s.y.iter()).chain(bands.iter().flat_map(|b| b.lower.iter().chain(&b.upper)));
    let (mut x0, mut x1) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &v| (a.min(v), c.max(v)));
    let (mut y0, mut y1) = ys.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, c), &v| (a.min(v), c.max(v)));
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    if !(y1 > y0) {
        let pad = 0.05 * y0.abs().max(1e-12);
        y0 -= pad;
        y1 += pad;
    }
    let px = |x: f64| l + (x - x0) / (x1 - x0) * (w - l - r);
    let py = |y: f64| h - b - (y - y0) / (y1 - y0) * (h - t - b);
    let mut s = header(w, h);
    let _ = writeln!(s, "<text x=\"{}\" y=\"20\" {FONT} font-size=\"13\" text-anchor=\"middle\">{}</text>", w / 2.0, escape(title));
    let _ = writeln!(s, "<rect x=\"{l}\" y=\"{t}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>", w - l - r, h - t - b);
    for k in 0..=4 {
        let fx = x0 + (x1 - x0) * k as f64 / 4.0;
        let fy = y0 + (y1 - y0) * k as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>", px(fx), h - b + 16.0, fmt_tick(fx));
        let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"end\">{}</text>", l - 4.0, py(fy) + 4.0, fmt_tick(fy));
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\" {FONT} text-anchor=\"middle\">{}</text>", (l + w - r) / 2.0, h - 8.0, escape(xlabel));
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" {FONT} text-anchor=\"middle\" transform=\"rotate(-90 14 {})\">{}</text>",
        h / 2.0,
        h / 2.0,
        escape(ylabel)
    );
    for band in bands {
        let mut pts: Vec<String> = band.x.iter().zip(&band.upper).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        pts.extend(band.x.iter().zip(&band.lower).rev().map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))));
        let _ = writeln!(s, "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>", pts.join(" "), band.color);
    }
    for (k, se) in series.iter().enumerate() {
        let pts: Vec<String> = se.x.iter().zip(&se.y).map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y))).collect();
        let dash = if se.dashed { " stroke-dasharray=\"5,3\"" } else { "" };
        let _ = writeln!(s, "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{dash}/>", pts.join(" "), se.color);
        let ly = t + 14.0 + 14.0 * k as f64;
        let _ = writeln!(s, "<line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{}\"{dash}/>", w - r - 120.0, ly - 4.0, w - r - 100.0, ly - 4.0, se.color);
        let _ = writeln!(s, "<text x=\"{}\" y=\"{ly}\" {FONT}>{}</text>", w - r - 96.0, escape(&se.label));
    }
    s.push_str("</svg>\n");
    s
}
