//! Deterministic SVG rendering of run outputs: density curves (treated vs
//! control against radius) and CATE distributions (raw values as a strip, no
//! smoothing). All coordinates are formatted at fixed precision so identical
//! inputs produce identical bytes.

use crate::error::{Error, Result};
use crate::pipeline::Report;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 55.0;

struct Frame {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Frame {
    fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(f64::MIN_POSITIVE);
        MARGIN_LEFT + (v - self.x_min) / span * (WIDTH - MARGIN_LEFT - MARGIN_RIGHT)
    }

    fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(f64::MIN_POSITIVE);
        HEIGHT - MARGIN_BOTTOM - (v - self.y_min) / span * (HEIGHT - MARGIN_TOP - MARGIN_BOTTOM)
    }
}

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" viewBox=\"0 0 {WIDTH} {HEIGHT}\">"
    );
    let _ = writeln!(
        out,
        "  <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>"
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"18\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        xml_escape(title)
    );
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

fn axes(out: &mut String) {
    let _ = writeln!(
        out,
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_BOTTOM,
        WIDTH - MARGIN_RIGHT,
        HEIGHT - MARGIN_BOTTOM
    );
    let _ = writeln!(
        out,
        "  <line x1=\"{MARGIN_LEFT}\" y1=\"{MARGIN_TOP}\" x2=\"{MARGIN_LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - MARGIN_BOTTOM
    );
}

fn x_tick(out: &mut String, x: f64, label: &str) {
    let y0 = HEIGHT - MARGIN_BOTTOM;
    let _ = writeln!(
        out,
        "  <line class=\"xtick\" x1=\"{x:.1}\" y1=\"{y0:.1}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
        y0 + 5.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"middle\">{label}</text>",
        y0 + 16.0
    );
}

fn y_tick(out: &mut String, y: f64, label: &str) {
    let _ = writeln!(
        out,
        "  <line class=\"ytick\" x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{MARGIN_LEFT}\" y2=\"{y:.1}\" stroke=\"black\"/>",
        MARGIN_LEFT - 5.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"9\" text-anchor=\"end\">{label}</text>",
        MARGIN_LEFT - 8.0,
        y + 3.0
    );
}

fn polyline(out: &mut String, frame: &Frame, xs: &[f64], ys: &[f64], color: &str) {
    let mut points = String::new();
    for (x, y) in xs.iter().zip(ys) {
        let _ = write!(points, "{:.2},{:.2} ", frame.x(*x), frame.y(*y));
    }
    let _ = writeln!(
        out,
        "  <polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
        points.trim_end()
    );
}

/// Treated vs control mean density against radius, one x-tick per radius.
pub fn density_chart(structure: &str, radii: &[f64], treated: &[f64], control: &[f64]) -> String {
    let y_max = treated
        .iter()
        .chain(control)
        .cloned()
        .fold(f64::MIN_POSITIVE, f64::max);
    let frame = Frame {
        x_min: radii.first().copied().unwrap_or(0.0),
        x_max: radii.last().copied().unwrap_or(1.0),
        y_min: 0.0,
        y_max,
    };
    let mut out = String::new();
    svg_open(&mut out, &format!("crime density vs radius: {structure}"));
    axes(&mut out);
    for &r in radii {
        x_tick(&mut out, frame.x(r), &format!("{r:.0}"));
    }
    for i in 0..=4 {
        let v = y_max * i as f64 / 4.0;
        y_tick(&mut out, frame.y(v), &format!("{v:.1}"));
    }
    polyline(&mut out, &frame, radii, treated, "#d1495b");
    polyline(&mut out, &frame, radii, control, "#30638e");
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#d1495b\">treated</text>",
        WIDTH - 120.0,
        MARGIN_TOP + 12.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#30638e\">control</text>",
        WIDTH - 120.0,
        MARGIN_TOP + 26.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">radius (m)</text>",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    out.push_str("</svg>\n");
    out
}

/// Raw CATE values as a strip of vertical ticks with a mean marker.
pub fn cate_chart(structure: &str, cates: &[f64]) -> String {
    let x_min = cates.iter().cloned().fold(f64::INFINITY, f64::min);
    let x_max = cates.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let pad = ((x_max - x_min) * 0.05).max(1e-12);
    let frame = Frame {
        x_min: x_min - pad,
        x_max: x_max + pad,
        y_min: 0.0,
        y_max: 1.0,
    };
    let mut out = String::new();
    svg_open(&mut out, &format!("CATE distribution: {structure}"));
    axes(&mut out);
    for i in 0..=5 {
        let v = frame.x_min + (frame.x_max - frame.x_min) * i as f64 / 5.0;
        x_tick(&mut out, frame.x(v), &format!("{v:.3}"));
    }
    let y_mid = frame.y(0.5);
    for &v in cates {
        let _ = writeln!(
            out,
            "  <line class=\"strip\" x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"#30638e\" stroke-opacity=\"0.4\"/>",
            frame.x(v),
            y_mid - 40.0,
            y_mid + 40.0
        );
    }
    let mean = cates.iter().sum::<f64>() / cates.len() as f64;
    let _ = writeln!(
        out,
        "  <line x1=\"{0:.2}\" y1=\"{1:.2}\" x2=\"{0:.2}\" y2=\"{2:.2}\" stroke=\"#d1495b\" stroke-width=\"2\"/>",
        frame.x(mean),
        y_mid - 60.0,
        y_mid + 60.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-family=\"sans-serif\" font-size=\"10\" fill=\"#d1495b\" text-anchor=\"middle\">mean {mean:.4}</text>",
        frame.x(mean),
        y_mid - 66.0
    );
    let _ = writeln!(
        out,
        "  <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">CATE (outcome units)</text>",
        (MARGIN_LEFT + WIDTH - MARGIN_RIGHT) / 2.0,
        HEIGHT - 12.0
    );
    out.push_str("</svg>\n");
    out
}

/// One density chart per structure and one CATE strip per structure with a
/// nonempty CATE list, under `<out_dir>/charts/`.
pub fn emit_charts(report: &Report, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let chart_dir = out_dir.join("charts");
    std::fs::create_dir_all(&chart_dir).map_err(|e| Error::io(&chart_dir, e))?;
    let mut written = Vec::new();
    for (name, s) in &report.structures {
        let density_path = chart_dir.join(format!("density_{name}.svg"));
        let svg = density_chart(
            name,
            &s.density.radii_m,
            &s.density.treated_mean,
            &s.density.control_mean,
        );
        std::fs::write(&density_path, svg).map_err(|e| Error::io(&density_path, e))?;
        written.push(density_path);

        let cates: Vec<f64> = s.cates.iter().map(|c| c.cate).collect();
        if cates.is_empty() {
            eprintln!("warning: {name}: empty CATE list, skipping distribution chart");
            continue;
        }
        let cate_path = chart_dir.join(format!("cate_{name}.svg"));
        std::fs::write(&cate_path, cate_chart(name, &cates))
            .map_err(|e| Error::io(&cate_path, e))?;
        written.push(cate_path);
    }
    Ok(written)
}
