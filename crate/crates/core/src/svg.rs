//! Minimal static SVG emitters for curves, bars and heatmaps.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 360.0;
const MARGIN: f64 = 48.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

fn open(out: &mut String, width: f64, height: f64, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        width / 2.0,
        escape(title)
    );
}

fn axes(out: &mut String, x_label: &str, y_label: &str) {
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{x0} {y1} L{x0} {y0} L{x1} {y0}" fill="none" stroke="black"/>"#
    );
    for i in 0..=5 {
        let t = i as f64 / 5.0;
        let x = x0 + t * (x1 - x0);
        let y = y0 - t * (y0 - y1);
        let _ = writeln!(
            out,
            r#"<text x="{x:.1}" y="{}" text-anchor="middle">{t:.1}</text>"#,
            y0 + 14.0
        );
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{:.1}" text-anchor="end">{t:.1}</text>"#,
            x0 - 4.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        (x0 + x1) / 2.0,
        H - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );
}

/// Curves in the unit square, e.g. ROC curves. Each series is `(name, points)`.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    open(&mut out, W, H, title);
    axes(&mut out, x_label, y_label);
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN);
    let map = |(x, y): (f64, f64)| (x0 + x.clamp(0.0, 1.0) * (x1 - x0), y0 - y.clamp(0.0, 1.0) * (y0 - y1));
    let _ = writeln!(
        out,
        r##"<path d="M{x0} {y0} L{x1} {y1}" stroke="#aaaaaa" stroke-dasharray="4 4"/>"##
    );
    for (k, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let mut d = String::new();
        for (i, &p) in pts.iter().enumerate() {
            let (x, y) = map(p);
            let _ = write!(d, "{}{x:.2} {y:.2} ", if i == 0 { "M" } else { "L" });
        }
        let _ = writeln!(
            out,
            r#"<path d="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
            d.trim_end()
        );
        let ly = y1 + 14.0 * (k as f64 + 1.0);
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            x1 - 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

/// Vertical bars with heights in [0, 1].
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let mut out = String::new();
    open(&mut out, W, H, title);
    axes(&mut out, "", y_label);
    let (x0, y0, x1, y1) = (MARGIN, H - MARGIN, W - MARGIN / 2.0, MARGIN);
    let slot = (x1 - x0) / bars.len().max(1) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let h = v.clamp(0.0, 1.0) * (y0 - y1);
        let x = x0 + slot * (i as f64 + 0.15);
        let _ = writeln!(
            out,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{h:.2}" fill="{}"/>"#,
            y0 - h,
            slot * 0.7,
            PALETTE[0]
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x + slot * 0.35,
            y0 - h - 4.0,
            escape(name)
        );
    }
    out.push_str("</svg>\n");
    out
}

fn diverging(v: f64) -> String {
    let t = v.clamp(-1.0, 1.0);
    let (r, g, b) = if t >= 0.0 {
        (255.0, 255.0 * (1.0 - t), 255.0 * (1.0 - t))
    } else {
        (255.0 * (1.0 + t), 255.0 * (1.0 + t), 255.0)
    };
    format!("#{:02x}{:02x}{:02x}", r.round() as u8, g.round() as u8, b.round() as u8)
}

/// Square heatmap of values in [-1, 1], with an optional block boundary line.
pub fn heatmap(title: &str, n: usize, value: impl Fn(usize, usize) -> f64, boundary: Option<usize>) -> String {
    let side = 400.0;
    let cell = side / n.max(1) as f64;
    let mut out = String::new();
    open(&mut out, side + 2.0 * MARGIN, side + 2.0 * MARGIN, title);
    for i in 0..n {
        for j in 0..n {
            let _ = writeln!(
                out,
                r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{}"/>"#,
                MARGIN + j as f64 * cell,
                MARGIN + i as f64 * cell,
                cell,
                cell,
                diverging(value(i, j))
            );
        }
    }
    if let Some(b) = boundary {
        let p = MARGIN + b as f64 * cell;
        let end = MARGIN + side;
        let _ = writeln!(
            out,
            r#"<path d="M{p:.3} {MARGIN} L{p:.3} {end} M{MARGIN} {p:.3} L{end} {p:.3}" stroke="black"/>"#
        );
    }
    out.push_str("</svg>\n");
    out
}
