//! Deterministic SVG output: truth/prediction scatterplots, residual
//! scatterplots with the fitted bias line, and cell heatmaps.
//!
//! Heatmap colors: log10 counts (`truth_lg`, `pred_lg`) use a fixed
//! five-stop ramp over [0, 6], `#440154` `#3b528b` `#21918c` `#5ec962`
//! `#fde725`, clamped outside. Residuals use a diverging ramp over [-3, 3]:
//! `#2166ac` (underestimate) through `#f7f7f7` (0) to `#b2182b`
//! (overestimate). Nodata cells are `#808080`.

use std::fmt::Write as _;
use std::path::Path;

use popgrid::eval::{bias_fit, MetricsReport, RSquaredDefinition};

pub const NODATA_COLOR: &str = "#808080";

const LOG_STOPS: [(f64, [u8; 3]); 5] = [
    (0.0, [0x44, 0x01, 0x54]),
    (1.5, [0x3b, 0x52, 0x8b]),
    (3.0, [0x21, 0x91, 0x8c]),
    (4.5, [0x5e, 0xc9, 0x62]),
    (6.0, [0xfd, 0xe7, 0x25]),
];
const RESIDUAL_STOPS: [(f64, [u8; 3]); 3] = [
    (-3.0, [0x21, 0x66, 0xac]),
    (0.0, [0xf7, 0xf7, 0xf7]),
    (3.0, [0xb2, 0x18, 0x2b]),
];

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("no data to render")]
    Empty,
    #[error("{0}")]
    Format(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterKind {
    PredVsTruth,
    ResidualVsTruth,
}

impl ScatterKind {
    pub fn header(self) -> [&'static str; 2] {
        match self {
            ScatterKind::PredVsTruth => ["truth_lg", "pred_lg"],
            ScatterKind::ResidualVsTruth => ["truth_lg", "residual_lg"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum HeatValue {
    TruthLg,
    PredLg,
    Residual,
}

/// Reads a two-column scatter CSV and reports which kind its header names.
pub fn read_pairs(path: &Path) -> Result<(ScatterKind, Vec<(f64, f64)>), RenderError> {
    let mut r = csv::Reader::from_path(path)?;
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    let kind = [ScatterKind::PredVsTruth, ScatterKind::ResidualVsTruth]
        .into_iter()
        .find(|k| header == k.header())
        .ok_or_else(|| RenderError::Format(format!("unexpected scatter header {header:?}")))?;
    let mut pairs = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64, RenderError> {
            let s = rec.get(i).unwrap_or("");
            s.parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| RenderError::Format(format!("bad value {s:?} in {}", path.display())))
        };
        pairs.push((num(0)?, num(1)?));
    }
    Ok((kind, pairs))
}

fn lerp_ramp(stops: &[(f64, [u8; 3])], v: f64) -> [u8; 3] {
    let (first, last) = (stops[0], stops[stops.len() - 1]);
    if v <= first.0 {
        return first.1;
    }
    if v >= last.0 {
        return last.1;
    }
    let i = stops.windows(2).position(|w| v <= w[1].0).expect("v inside the ramp");
    let ((a, ca), (b, cb)) = (stops[i], stops[i + 1]);
    let t = (v - a) / (b - a);
    std::array::from_fn(|k| (ca[k] as f64 + t * (cb[k] as f64 - ca[k] as f64)).round() as u8)
}

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Fill color of a heatmap cell.
pub fn color_for(value: HeatValue, v: Option<f64>) -> String {
    match v {
        None => NODATA_COLOR.to_string(),
        Some(v) if !v.is_finite() => NODATA_COLOR.to_string(),
        Some(v) => hex(match value {
            HeatValue::Residual => lerp_ramp(&RESIDUAL_STOPS, v),
            _ => lerp_ramp(&LOG_STOPS, v),
        }),
    }
}

/// Parses `#rrggbb`.
pub fn parse_color(s: &str) -> Option<[u8; 3]> {
    let s = s.strip_prefix('#')?;
    if s.len() != 6 {
        return None;
    }
    let c = |i: usize| u8::from_str_radix(&s[i..i + 2], 16).ok();
    Some([c(0)?, c(2)?, c(4)?])
}

fn f2(v: f64) -> String {
    format!("{v:.2}")
}

fn f3(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

const PLOT: f64 = 400.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 40.0;
const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 508.0;

struct Frame {
    x: (f64, f64),
    y: (f64, f64),
}

impl Frame {
    fn px(&self, x: f64) -> f64 {
        LEFT + (x - self.x.0) / (self.x.1 - self.x.0) * PLOT
    }

    fn py(&self, y: f64) -> f64 {
        TOP + PLOT - (y - self.y.0) / (self.y.1 - self.y.0) * PLOT
    }
}

fn integer_span(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = (lo.floor(), hi.ceil());
    if hi - lo < 1.0 {
        (lo, lo + 1.0)
    } else {
        (lo, hi)
    }
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = ((hi - lo) / 10.0).ceil().max(1.0);
    let mut out = Vec::new();
    let mut t = lo;
    while t <= hi + 1e-9 {
        out.push(t);
        t += step;
    }
    out
}

/// Scatterplot of `(truth, y)` pairs, where `y` is the prediction or the
/// residual depending on `kind`.
pub fn render_scatter_svg(pairs: &[(f64, f64)], kind: ScatterKind) -> Result<String, RenderError> {
    if pairs.is_empty() {
        return Err(RenderError::Empty);
    }
    let truth: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let min = |v: &[f64]| v.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = |v: &[f64]| v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);

    let frame = match kind {
        ScatterKind::PredVsTruth => {
            let span = integer_span(min(&truth).min(min(&ys)), max(&truth).max(max(&ys)));
            Frame { x: span, y: span }
        }
        ScatterKind::ResidualVsTruth => {
            let m = ys.iter().fold(0.0f64, |m, v| m.max(v.abs())).ceil().max(1.0);
            Frame {
                x: integer_span(min(&truth), max(&truth)),
                y: (-m, m),
            }
        }
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="12">"#,
        w = WIDTH,
        h = HEIGHT
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<clipPath id="plot"><rect x="{LEFT}" y="{TOP}" width="{PLOT}" height="{PLOT}"/></clipPath>"#
    );
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );
    for t in ticks(frame.x.0, frame.x.1) {
        let x = f2(frame.px(t));
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{x}" y1="{y0}" x2="{x}" y2="{y1}" stroke="black"/><text x="{x}" y="{ty}" text-anchor="middle">{t}</text>"#,
            y0 = TOP + PLOT,
            y1 = TOP + PLOT + 5.0,
            ty = TOP + PLOT + 18.0
        );
    }
    for t in ticks(frame.y.0, frame.y.1) {
        let y = f2(frame.py(t));
        let _ = writeln!(
            s,
            r#"<line class="tick" x1="{x0}" y1="{y}" x2="{LEFT}" y2="{y}" stroke="black"/><text x="{tx}" y="{y}" text-anchor="end" dominant-baseline="middle">{t}</text>"#,
            x0 = LEFT - 5.0,
            tx = LEFT - 8.0
        );
    }
    let (ylabel, title) = match kind {
        ScatterKind::PredVsTruth => ("estimated log10 population", "Estimated vs true population"),
        ScatterKind::ResidualVsTruth => ("residual (estimate - truth)", "Residual vs true population"),
    };
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{ly}" text-anchor="middle">true log10 population</text>"#,
        cx = LEFT + PLOT / 2.0,
        ly = TOP + PLOT + 38.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {cy}) rotate(-90)" text-anchor="middle">{ylabel}</text>"#,
        cy = TOP + PLOT / 2.0
    );
    let _ = writeln!(s, r#"<text x="{LEFT}" y="24" font-size="14">{title}</text>"#);

    let _ = writeln!(s, r#"<g clip-path="url(#plot)">"#);
    let annotation = match kind {
        ScatterKind::PredVsTruth => {
            let _ = writeln!(
                s,
                r#"<line class="identity" x1="{}" y1="{}" x2="{}" y2="{}" stroke="red"/>"#,
                f2(frame.px(frame.x.0)),
                f2(frame.py(frame.x.0)),
                f2(frame.px(frame.x.1)),
                f2(frame.py(frame.x.1))
            );
            let m = MetricsReport::compute(&truth, &ys, RSquaredDefinition::SquaredPearson).ok();
            format!(
                "R2={} CoE={} MIoA={} m={}",
                f3(m.as_ref().and_then(|m| m.r_squared)),
                f3(m.as_ref().and_then(|m| m.coe)),
                f3(m.as_ref().map(|m| m.mioa)),
                pairs.len()
            )
        }
        ScatterKind::ResidualVsTruth => {
            let _ = writeln!(
                s,
                r#"<line class="zero" x1="{}" y1="{y}" x2="{}" y2="{y}" stroke="gray"/>"#,
                f2(frame.px(frame.x.0)),
                f2(frame.px(frame.x.1)),
                y = f2(frame.py(0.0))
            );
            let pred: Vec<f64> = pairs.iter().map(|&(t, e)| t + e).collect();
            let fit = bias_fit(&truth, &pred).ok();
            if let Some(b) = &fit {
                let line = |x: f64| b.alpha + b.beta * x;
                let _ = writeln!(
                    s,
                    r#"<line class="fit" x1="{}" y1="{}" x2="{}" y2="{}" stroke="red"/>"#,
                    f2(frame.px(frame.x.0)),
                    f2(frame.py(line(frame.x.0))),
                    f2(frame.px(frame.x.1)),
                    f2(frame.py(line(frame.x.1)))
                );
            }
            let p = fit
                .as_ref()
                .and_then(|b| b.p_value)
                .map_or("n/a".into(), |p| format!("{p:.2e}"));
            format!(
                "alpha={} beta={} r={} p={p} m={}",
                f3(fit.as_ref().map(|b| b.alpha)),
                f3(fit.as_ref().map(|b| b.beta)),
                f3(fit.as_ref().and_then(|b| b.pearson_r)),
                pairs.len()
            )
        }
    };
    for &(x, y) in pairs {
        let _ = writeln!(
            s,
            r#"<circle class="pt" cx="{}" cy="{}" r="2" fill="steelblue" fill-opacity="0.6"/>"#,
            f2(frame.px(x)),
            f2(frame.py(y))
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(
        s,
        r#"<text class="annotation" x="{LEFT}" y="{y}">{annotation}</text>"#,
        y = HEIGHT - 12.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Heatmap of a `rows × cols` row-major grid; `None` is nodata.
pub fn render_heatmap_svg(
    rows: usize,
    cols: usize,
    values: &[Option<f64>],
    value: HeatValue,
    title: &str,
) -> Result<String, RenderError> {
    if rows == 0 || cols == 0 {
        return Err(RenderError::Empty);
    }
    if values.len() != rows * cols {
        return Err(RenderError::Format(format!(
            "{} values for a {rows}x{cols} grid",
            values.len()
        )));
    }
    let cell = (480 / rows.max(cols)).clamp(4, 40);
    let (gw, gh) = (cols * cell, rows * cell);
    let (left, top) = (16, 32);
    let width = (gw + 2 * left).max(320);
    let legend_y = top + gh + 16;
    let height = legend_y + 48;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12" shape-rendering="crispEdges">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="14">{title}</text>"#);
    for r in 0..rows {
        for c in 0..cols {
            let _ = writeln!(
                s,
                r#"<rect class="cell" x="{}" y="{}" width="{cell}" height="{cell}" fill="{}"/>"#,
                left + c * cell,
                top + r * cell,
                color_for(value, values[r * cols + c])
            );
        }
    }

    let (lo, hi, label) = match value {
        HeatValue::Residual => (-3.0, 3.0, "residual (log10)"),
        HeatValue::TruthLg => (0.0, 6.0, "true log10 population"),
        HeatValue::PredLg => (0.0, 6.0, "estimated log10 population"),
    };
    let steps = 60;
    let bar = 240.0 / steps as f64;
    for i in 0..steps {
        let v = lo + (hi - lo) * (i as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect class="legend" x="{}" y="{legend_y}" width="{}" height="10" fill="{}"/>"#,
            f2(left as f64 + i as f64 * bar),
            f2(bar),
            color_for(value, Some(v))
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{left}" y="{ty}">{lo}</text><text x="{rx}" y="{ty}" text-anchor="end">{hi}</text><text x="{mx}" y="{ty}" text-anchor="middle">{label}</text>"#,
        ty = legend_y + 24,
        rx = left + 240,
        mx = left + 120
    );
    let _ = writeln!(
        s,
        r#"<rect x="{nx}" y="{legend_y}" width="10" height="10" fill="{NODATA_COLOR}"/><text x="{tx}" y="{ty}">nodata</text>"#,
        nx = left + 256,
        tx = left + 270,
        ty = legend_y + 9
    );
    s.push_str("</svg>\n");
    Ok(s)
}

/// Bar chart of `(bin lower edge, count)` pairs.
pub fn render_histogram_svg(
    bins: &[(f64, usize)],
    bin_width: f64,
    title: &str,
    xlabel: &str,
) -> Result<String, RenderError> {
    if bins.is_empty() {
        return Err(RenderError::Empty);
    }
    let lo = bins[0].0;
    let hi = bins[bins.len() - 1].0 + bin_width;
    let top_count = bins.iter().map(|b| b.1).max().unwrap_or(0).max(1) as f64;
    let frame = Frame {
        x: (lo, hi),
        y: (0.0, top_count),
    };
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{LEFT}" y="24" font-size="14">{title}</text>"#);
    for &(edge, count) in bins {
        let (x0, x1) = (frame.px(edge), frame.px(edge + bin_width));
        let y = frame.py(count as f64);
        let _ = writeln!(
            s,
            r#"<rect class="bar" x="{}" y="{}" width="{}" height="{}" fill="steelblue" stroke="white"/>"#,
            f2(x0),
            f2(y),
            f2(x1 - x0),
            f2(TOP + PLOT - y)
        );
    }
    let _ = writeln!(
        s,
        r#"<rect class="frame" x="{LEFT}" y="{TOP}" width="{PLOT}" height="{PLOT}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="{ty}">{}</text><text x="{rx}" y="{ty}" text-anchor="end">{}</text>"#,
        f2(lo),
        f2(hi),
        ty = TOP + PLOT + 18.0,
        rx = LEFT + PLOT
    );
    let _ = writeln!(
        s,
        r#"<text x="{tx}" y="{TOP}" text-anchor="end" dominant-baseline="hanging">{top_count}</text>"#,
        tx = LEFT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{cx}" y="{ly}" text-anchor="middle">{xlabel}</text>"#,
        cx = LEFT + PLOT / 2.0,
        ly = TOP + PLOT + 38.0
    );
    s.push_str("</svg>\n");
    Ok(s)
}
