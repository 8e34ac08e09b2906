//! Minimal SVG output: heatmaps and line charts.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn header(out: &mut String, title: &str) {
    let _ = write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}"><rect width="100%" height="100%" fill="white"/><text x="{}" y="20" font-family="sans-serif" font-size="14" text-anchor="middle">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blue for negative, white at zero, red for positive values.
fn diverging(v: f64, scale: f64) -> String {
    let u = if scale > 0.0 { (v / scale).clamp(-1.0, 1.0) } else { 0.0 };
    let fade = |a: f64| (255.0 * (1.0 - a.abs())).round() as u8;
    if u >= 0.0 {
        format!("rgb(255,{},{})", fade(u), fade(u))
    } else {
        format!("rgb({},{},255)", fade(u), fade(u))
    }
}

/// Heatmap of `values` (`rows × cols`, row 0 drawn at the top) with a
/// symmetric color scale.
pub fn heatmap(title: &str, rows: usize, cols: usize, values: &[f64]) -> String {
    let mut s = String::new();
    header(&mut s, title);
    let scale = values.iter().fold(0.0f64, |m, v| if v.is_finite() { m.max(v.abs()) } else { m });
    let (cw, ch) = ((W - 2.0 * MARGIN) / cols as f64, (H - 2.0 * MARGIN) / rows as f64);
    for r in 0..rows {
        for c in 0..cols {
            let _ = write!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#,
                MARGIN + c as f64 * cw,
                MARGIN + r as f64 * ch,
                cw + 0.05,
                ch + 0.05,
                diverging(values[r * cols + c], scale)
            );
        }
    }
    let _ = write!(s, r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">|max| = {scale:.3e}</text></svg>"#, W / 2.0, H - 12.0);
    s
}

/// Side-by-side grayscale tiles of square fields, each with its own range.
pub fn field_grid(title: &str, labels: &[&str], fields: &[&[f64]], d: usize) -> String {
    let mut s = String::new();
    let tile = ((W - MARGIN) / fields.len().max(1) as f64).min(H - 2.0 * MARGIN);
    header(&mut s, title);
    for (k, f) in fields.iter().enumerate() {
        let (lo, hi) = f.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let span = if hi > lo { hi - lo } else { 1.0 };
        let x0 = MARGIN / 2.0 + k as f64 * tile;
        let px = (tile - 8.0) / d as f64;
        for i in 0..d {
            for j in 0..d {
                let g = (255.0 * (f[i * d + j] - lo) / span).round().clamp(0.0, 255.0) as u8;
                let _ = write!(
                    s,
                    r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({g},{g},{g})"/>"#,
                    x0 + j as f64 * px,
                    MARGIN + i as f64 * px,
                    px + 0.05,
                    px + 0.05
                );
            }
        }
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            x0 + (tile - 8.0) / 2.0,
            MARGIN + tile + 6.0,
            escape(labels.get(k).copied().unwrap_or(""))
        );
    }
    s.push_str("</svg>");
    s
}

/// One named polyline per series on shared axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[(&str, Vec<(f64, f64)>)]) -> String {
    const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];
    let mut s = String::new();
    header(&mut s, title);
    let pts = series.iter().flat_map(|(_, p)| p.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !(x1 > x0) {
        x1 = x0 + 1.0;
    }
    if !(y1 > y0) {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (W - 2.0 * MARGIN);
    let sy = |y: f64| H - MARGIN - (y - y0) / (y1 - y0) * (H - 2.0 * MARGIN);
    let _ = write!(
        s,
        r#"<path d="M{m} {t} V{b} H{r}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = H - MARGIN,
        r = W - MARGIN
    );
    for (k, (name, p)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let d: Vec<String> = p
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .enumerate()
            .map(|(i, &(x, y))| format!("{}{:.2} {:.2}", if i == 0 { 'M' } else { 'L' }, sx(x), sy(y)))
            .collect();
        let _ = write!(s, r#"<path d="{}" stroke="{color}" stroke-width="1.2" fill="none"/>"#, d.join(" "));
        let _ = write!(
            s,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11" fill="{color}">{}</text>"#,
            W - MARGIN + 4.0 - 90.0,
            MARGIN + 14.0 * k as f64,
            escape(name)
        );
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" text-anchor="middle">{} [{x0:.3}, {x1:.3}]</text><text x="12" y="{}" font-family="sans-serif" font-size="11" transform="rotate(-90 12 {})" text-anchor="middle">{} [{y0:.3e}, {y1:.3e}]</text></svg>"#,
        W / 2.0,
        H - 12.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label)
    );
    s
}

pub fn save(svg: &str, path: &Path) -> Result<()> {
    std::fs::write(path, svg)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn outputs_are_closed_svg_documents() {
        let h = heatmap("score <x>", 2, 3, &[0.0, 1.0, -1.0, 0.5, f64::NAN, 2.0]);
        assert!(h.starts_with("<svg") && h.ends_with("</svg>"));
        assert_eq!(h.matches("<rect").count(), 7);
        assert!(h.contains("score &lt;x&gt;"));
        let l = line_chart("t", "x", "y", &[("a", vec![(0.0, 1.0), (1.0, 2.0)]), ("b", vec![])]);
        assert!(l.contains("M48.00 272.00 L432.00 48.00"));
        let f = field_grid("f", &["a", "b"], &[&[0.0; 4], &[1.0, 2.0, 3.0, 4.0]], 2);
        assert_eq!(f.matches("<rect").count(), 9);
    }

    #[test]
    fn diverging_scale_endpoints() {
        assert_eq!(diverging(1.0, 1.0), "rgb(255,0,0)");
        assert_eq!(diverging(-2.0, 1.0), "rgb(0,0,255)");
        assert_eq!(diverging(0.0, 1.0), "rgb(255,255,255)");
    }
}
