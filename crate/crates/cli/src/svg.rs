//! Minimal static SVG plots: line charts and a PDF-evolution heatmap.

use std::fmt::Write as _;

use darktrap_core::analysis::PdfEvolution;

const W: f64 = 720.0;
const H: f64 = 420.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 140.0;
const TOP: f64 = 36.0;
const BOTTOM: f64 = 52.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MAX_POINTS: usize = 2000;

pub struct Series<'a> {
    pub label: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn header(s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>
<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">{}</text>
"#,
        W / 2.0,
        esc(title),
        LEFT + (W - LEFT - RIGHT) / 2.0,
        H - 12.0,
        esc(xlabel),
        TOP + (H - TOP - BOTTOM) / 2.0,
        esc(ylabel)
    );
}

fn axes(s: &mut String, (x0, x1): (f64, f64), (y0, y1): (f64, f64), log_y: bool) {
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let px = LEFT + f * pw;
        let py = TOP + ph - f * ph;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let ytxt = if log_y { format!("1e{yv:.1}") } else { format!("{yv:.3e}") };
        let _ = writeln!(
            s,
            r##"<line x1="{px:.1}" y1="{TOP}" x2="{px:.1}" y2="{:.1}" stroke="#ddd"/><text x="{px:.1}" y="{:.1}" text-anchor="middle">{xv:.3e}</text>"##,
            TOP + ph,
            TOP + ph + 16.0
        );
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{ytxt}</text>"##,
            LEFT + pw,
            LEFT - 4.0,
            py + 4.0
        );
    }
}

/// Line chart of several series. With `log_y` the y values are plotted as
/// `log10`, non-positive values are skipped.
pub fn line_plot(title: &str, xlabel: &str, ylabel: &str, series: &[Series], log_y: bool) -> String {
    let ty = |v: f64| if log_y { if v > 0.0 { v.log10() } else { f64::NAN } } else { v };
    let xr = range(series.iter().flat_map(|s| s.x.iter().copied()));
    let yr = range(series.iter().flat_map(|s| s.y.iter().map(|&v| ty(v))));
    let mut s = String::new();
    header(&mut s, title, xlabel, ylabel);
    axes(&mut s, xr, yr, log_y);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    for (k, ser) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let n = ser.x.len().min(ser.y.len());
        let stride = n.div_ceil(MAX_POINTS).max(1);
        let mut pts = String::new();
        for i in (0..n).step_by(stride) {
            let (x, y) = (ser.x[i], ty(ser.y[i]));
            if !(x.is_finite() && y.is_finite()) {
                continue;
            }
            let px = LEFT + (x - xr.0) / (xr.1 - xr.0) * pw;
            let py = TOP + ph - (y - yr.0) / (yr.1 - yr.0) * ph;
            let _ = write!(pts, "{px:.1},{py:.1} ");
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1" points="{}"/>"#, pts.trim_end());
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="2"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT + 8.0,
            W - RIGHT + 28.0,
            W - RIGHT + 32.0,
            ly + 4.0,
            esc(ser.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Time on x, bin center on y, density as grey level.
pub fn pdf_heatmap(title: &str, pdf: &PdfEvolution) -> String {
    let mut s = String::new();
    header(&mut s, title, "t [s]", "chi_x [V]");
    let Some(first) = pdf.windows.first() else {
        s.push_str("</svg>\n");
        return s;
    };
    let xr = (first.t_start, pdf.windows.last().map_or(first.t_start, |w| w.t_start) + pdf.t_avg);
    let yr = range(pdf.windows.iter().flat_map(|w| [w.hist.edges[0], *w.hist.edges.last().unwrap_or(&0.0)]));
    axes(&mut s, xr, yr, false);
    let (pw, ph) = (W - LEFT - RIGHT, H - TOP - BOTTOM);
    let peak = pdf.windows.iter().flat_map(|w| w.hist.density()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let cw = pdf.t_avg / (xr.1 - xr.0) * pw;
    for w in &pdf.windows {
        let px = LEFT + (w.t_start - xr.0) / (xr.1 - xr.0) * pw;
        let bw = w.hist.bin_width();
        for (lo, d) in w.hist.edges.iter().zip(w.hist.density()) {
            let level = 255.0 * (1.0 - d / peak);
            let py = TOP + ph - (lo + bw - yr.0) / (yr.1 - yr.0) * ph;
            let bh = bw / (yr.1 - yr.0) * ph;
            let _ = writeln!(
                s,
                r#"<rect x="{px:.2}" y="{py:.2}" width="{cw:.2}" height="{bh:.2}" fill="rgb({0},{0},{0})"/>"#,
                level.round() as u8
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
