//! Dependency-free SVG charts on a fixed 800×400 canvas: line charts with
//! point markers for profiles and losses, bar charts for histograms.
//!
//! Every number a chart displays goes through [`sig6`], so the plots agree
//! with the CSV files they accompany to six significant digits. Geometry
//! coordinates are rendered with two decimals to keep output byte-stable.

/// Canvas width in user units; the viewBox is fixed at 800×400.
pub const WIDTH: f64 = 800.0;
/// Canvas height in user units.
pub const HEIGHT: f64 = 400.0;

const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 16.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 44.0;

/// Colors for up to four series; charts cycle if given more.
const PALETTE: [&str; 4] = ["#2b6cb0", "#c53030", "#2f855a", "#b7791f"];

/// One named polyline of a line chart.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Formats a value to at most six significant digits, trimming trailing
/// zeros. Magnitudes outside a comfortable decimal window switch to
/// scientific notation.
pub fn sig6(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    if !v.is_finite() {
        return v.to_string();
    }
    let exp = v.abs().log10().floor() as i32;
    if !(-4..=8).contains(&exp) {
        return format!("{v:.5e}");
    }
    let decimals = (5 - exp).max(0) as usize;
    let s = format!("{v:.decimals$}");
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

/// Escapes text for use in XML content and attribute values.
pub fn xml_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(c),
        }
    }
    out
}

fn px(v: f64) -> String {
    format!("{v:.2}")
}

/// Widens a [min, max] interval so it is never degenerate and leaves a
/// little headroom around the data.
fn pad_range(min: f64, max: f64, frac: f64) -> (f64, f64) {
    if min == max {
        let d = if min == 0.0 { 1.0 } else { min.abs() * 0.1 };
        return (min - d, max + d);
    }
    let pad = (max - min) * frac;
    (min - pad, max + pad)
}

fn linear_scale(domain: (f64, f64), range: (f64, f64)) -> impl Fn(f64) -> f64 {
    let (d0, d1) = domain;
    let (r0, r1) = range;
    move |v| r0 + (v - d0) / (d1 - d0) * (r1 - r0)
}

/// Opens the document: canvas, background, title, and axis captions.
fn frame_open(title: &str, x_label: &str, y_label: &str) -> String {
    let mut s = String::new();
    s.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH:.0} {HEIGHT:.0}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n"
    ));
    s.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH:.0}\" height=\"{HEIGHT:.0}\" fill=\"#ffffff\"/>\n"
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"15\" fill=\"#222222\">{}</text>\n",
        px(WIDTH / 2.0),
        xml_escape(title)
    ));
    s.push_str(&format!(
        "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444444\">{}</text>\n",
        px((MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0),
        px(HEIGHT - 8.0),
        xml_escape(x_label)
    ));
    s.push_str(&format!(
        "  <text transform=\"translate(14,{}) rotate(-90)\" text-anchor=\"middle\" fill=\"#444444\">{}</text>\n",
        px((MARGIN_TOP + HEIGHT - MARGIN_BOTTOM) / 2.0),
        xml_escape(y_label)
    ));
    s
}

/// Draws the two axis lines.
fn axes() -> String {
    let x0 = px(MARGIN_LEFT);
    let x1 = px(WIDTH - MARGIN_RIGHT);
    let y0 = px(MARGIN_TOP);
    let y1 = px(HEIGHT - MARGIN_BOTTOM);
    format!(
        "  <line x1=\"{x0}\" y1=\"{y1}\" x2=\"{x1}\" y2=\"{y1}\" stroke=\"#333333\"/>\n  \
         <line x1=\"{x0}\" y1=\"{y0}\" x2=\"{x0}\" y2=\"{y1}\" stroke=\"#333333\"/>\n"
    )
}

/// Horizontal grid lines with value labels on the left edge.
fn y_ticks(sy: &dyn Fn(f64) -> f64, lo: f64, hi: f64, ticks: usize) -> String {
    let mut s = String::new();
    for i in 0..ticks {
        let v = lo + (hi - lo) * i as f64 / (ticks - 1) as f64;
        let y = sy(v);
        s.push_str(&format!(
            "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"#dddddd\"/>\n",
            px(MARGIN_LEFT),
            px(y),
            px(WIDTH - MARGIN_RIGHT),
            px(y)
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"end\" fill=\"#444444\">{}</text>\n",
            px(MARGIN_LEFT - 6.0),
            px(y + 4.0),
            sig6(v)
        ));
    }
    s
}

/// A multi-series line chart with circular markers. Every marker carries a
/// `<title>` with its value, so the underlying numbers are recoverable from
/// the file.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let points: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let (x_lo, x_hi) = pad_range(
        points.iter().map(|p| p.0).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max),
        0.02,
    );
    let (y_lo, y_hi) = pad_range(
        points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min),
        points.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max),
        0.05,
    );
    let sx = linear_scale((x_lo, x_hi), (MARGIN_LEFT, WIDTH - MARGIN_RIGHT));
    let sy = linear_scale((y_lo, y_hi), (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP));

    let mut s = frame_open(title, x_label, y_label);
    s.push_str(&y_ticks(&sy, y_lo, y_hi, 5));
    for i in 0..5 {
        let v = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444444\">{}</text>\n",
            px(sx(v)),
            px(HEIGHT - MARGIN_BOTTOM + 16.0),
            sig6(v)
        ));
    }
    s.push_str(&axes());

    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if ser.points.len() > 1 {
            let coords: Vec<String> = ser
                .points
                .iter()
                .map(|&(x, y)| format!("{},{}", px(sx(x)), px(sy(y))))
                .collect();
            s.push_str(&format!(
                "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        for &(x, y) in &ser.points {
            s.push_str(&format!(
                "  <circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{color}\"><title>{}: ({}, {})</title></circle>\n",
                px(sx(x)),
                px(sy(y)),
                xml_escape(&ser.name),
                sig6(x),
                sig6(y)
            ));
        }
    }

    if series.len() > 1 {
        for (k, ser) in series.iter().enumerate() {
            let color = PALETTE[k % PALETTE.len()];
            let y = MARGIN_TOP + 12.0 + 18.0 * k as f64;
            s.push_str(&format!(
                "  <line x1=\"{}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"{color}\" stroke-width=\"2\"/>\n",
                px(WIDTH - 176.0),
                px(y),
                px(WIDTH - 148.0),
                px(y)
            ));
            s.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" fill=\"#222222\">{}</text>\n",
                px(WIDTH - 142.0),
                px(y + 4.0),
                xml_escape(&ser.name)
            ));
        }
    }

    s.push_str("</svg>\n");
    s
}

/// A bar chart over uniform bins given as (lower edge, count) pairs. Bars
/// fill the plot width left to right; each carries a `<title>` tooltip and
/// its count above the bar.
pub fn bar_chart(title: &str, x_label: &str, y_label: &str, bars: &[(f64, usize)]) -> String {
    let max_count = bars.iter().map(|b| b.1).max().unwrap_or(0);
    let (y_lo, y_hi) = (0.0, (max_count.max(1) as f64) * 1.05);
    let sy = linear_scale((y_lo, y_hi), (HEIGHT - MARGIN_BOTTOM, MARGIN_TOP));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let slot = plot_w / bars.len().max(1) as f64;
    // With many bins the per-bar labels collide; thin them out.
    let label_every = bars.len().div_ceil(12).max(1);

    let mut s = frame_open(title, x_label, y_label);
    s.push_str(&y_ticks(&sy, y_lo, y_hi, 5));
    s.push_str(&axes());

    for (i, &(lower, count)) in bars.iter().enumerate() {
        let x = MARGIN_LEFT + slot * i as f64 + slot * 0.1;
        let w = slot * 0.8;
        let top = sy(count as f64);
        let h = (HEIGHT - MARGIN_BOTTOM) - top;
        s.push_str(&format!(
            "  <rect x=\"{}\" y=\"{}\" width=\"{}\" height=\"{}\" fill=\"{}\"><title>bin {}: count {count}</title></rect>\n",
            px(x),
            px(top),
            px(w),
            px(h),
            PALETTE[0],
            sig6(lower)
        ));
        s.push_str(&format!(
            "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#222222\">{count}</text>\n",
            px(x + w / 2.0),
            px(top - 4.0)
        ));
        if i % label_every == 0 {
            s.push_str(&format!(
                "  <text x=\"{}\" y=\"{}\" text-anchor=\"middle\" fill=\"#444444\">{}</text>\n",
                px(x + w / 2.0),
                px(HEIGHT - MARGIN_BOTTOM + 16.0),
                sig6(lower)
            ));
        }
    }

    s.push_str("</svg>\n");
    s
}
