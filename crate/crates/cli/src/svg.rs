use std::fmt::Write as _;

use pentrace_core::{PenTrajectory, RasterImage};
use thiserror::Error;

pub const GT_COLOR: &str = "red";
pub const PRED_COLOR: &str = "blue";

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SvgError {
    #[error("nothing to draw: give a ground truth or a prediction")]
    Empty,
}

/// Opacity of segment `k` of `n`: faint at the pen-down end, opaque at the
/// pen-up end.
fn opacity(k: usize, n: usize) -> f64 {
    if n <= 1 {
        1.0
    } else {
        0.2 + 0.8 * k as f64 / (n - 1) as f64
    }
}

fn trajectory(out: &mut String, class: &str, color: &str, t: &PenTrajectory) {
    let pts = t.points();
    let n = pts.len().saturating_sub(1);
    let _ = writeln!(
        out,
        r#"  <g class="{class}" stroke="{color}" stroke-width="0.6" stroke-linecap="round" fill="none">"#
    );
    for (k, w) in pts.windows(2).enumerate() {
        let _ = writeln!(
            out,
            r#"    <path d="M{:.3} {:.3} L{:.3} {:.3}" stroke-opacity="{:.3}"/>"#,
            w[0].x,
            w[0].y,
            w[1].x,
            w[1].y,
            opacity(k, n)
        );
    }
    let s = t.first();
    let _ = writeln!(
        out,
        r#"    <circle class="start" cx="{:.3}" cy="{:.3}" r="1.5" fill="{color}" stroke="none"/>"#,
        s.x, s.y
    );
    out.push_str("  </g>\n");
}

/// Ground truth in red and prediction in blue over an optional image.
/// Segment opacity rises along each trajectory and a dot marks where it
/// starts. Pixel `(x, y)` covers `[x − ½, x + ½)²` in the 64×64 view box.
pub fn render_svg(
    gt: Option<&PenTrajectory>,
    pred: Option<&PenTrajectory>,
    image: Option<&RasterImage>,
) -> Result<String, SvgError> {
    if gt.is_none() && pred.is_none() {
        return Err(SvgError::Empty);
    }
    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" viewBox=\"0 0 64 64\" width=\"512\" height=\"512\">\n",
    );
    out.push_str("  <rect x=\"0\" y=\"0\" width=\"64\" height=\"64\" fill=\"white\"/>\n");
    if let Some(img) = image {
        out.push_str("  <g class=\"image\" fill=\"#c8c8c8\">\n");
        for (x, y) in img.foreground() {
            let _ = writeln!(
                out,
                r#"    <rect x="{:.1}" y="{:.1}" width="1" height="1"/>"#,
                x as f64 - 0.5,
                y as f64 - 0.5
            );
        }
        out.push_str("  </g>\n");
    }
    if let Some(t) = gt {
        trajectory(&mut out, "ground-truth", GT_COLOR, t);
    }
    if let Some(t) = pred {
        trajectory(&mut out, "prediction", PRED_COLOR, t);
    }
    out.push_str("</svg>\n");
    Ok(out)
}
