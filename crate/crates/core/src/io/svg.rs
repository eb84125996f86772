use std::fmt::Write as _;
use std::path::Path;

use crate::eval::BoxplotStats;
use crate::Result;

/// Boxes drawn side by side for one identity, one per model.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxGroup {
    pub label: String,
    pub boxes: Vec<(String, BoxplotStats)>,
}

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];
const BOX_WIDTH: f64 = 14.0;
const GROUP_GAP: f64 = 12.0;
const LEFT: f64 = 64.0;
const TOP: f64 = 40.0;
const PLOT_HEIGHT: f64 = 300.0;
const BOTTOM: f64 = 90.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Standalone SVG with one box per (group, model). The vertical axis is in
/// degrees. Output depends only on the input.
pub fn render_boxplot_svg(title: &str, groups: &[BoxGroup]) -> String {
    let mut models: Vec<&str> = Vec::new();
    for g in groups {
        for (m, _) in &g.boxes {
            if !models.contains(&m.as_str()) {
                models.push(m);
            }
        }
    }
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, b) in groups.iter().flat_map(|g| &g.boxes) {
        lo = lo.min(b.min);
        hi = hi.max(b.max);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 180.0);
    }
    let lo = ((lo / 10.0).floor() * 10.0).max(0.0);
    let mut hi = ((hi / 10.0).ceil() * 10.0).min(180.0);
    if hi <= lo {
        hi = lo + 10.0;
    }
    let y = |v: f64| TOP + PLOT_HEIGHT * (1.0 - (v - lo) / (hi - lo));

    let group_width = |g: &BoxGroup| g.boxes.len().max(1) as f64 * BOX_WIDTH + GROUP_GAP;
    let plot_width: f64 = groups.iter().map(group_width).sum::<f64>().max(BOX_WIDTH + GROUP_GAP);
    let width = LEFT + plot_width + 20.0;
    let height = TOP + PLOT_HEIGHT + BOTTOM + 16.0 * models.len() as f64;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    // axis with ticks every tenth of the range
    let _ = writeln!(
        s,
        r#"<line class="axis" x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + PLOT_HEIGHT
    );
    for k in 0..=10 {
        let v = lo + (hi - lo) * k as f64 / 10.0;
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{v:.0}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y(v) + 4.0,
            yy = y(v)
        );
    }
    let _ = writeln!(
        s,
        r#"<text transform="translate(16 {:.1}) rotate(-90)" text-anchor="middle">angle (degrees)</text>"#,
        TOP + PLOT_HEIGHT / 2.0
    );

    let mut x = LEFT + GROUP_GAP / 2.0;
    for g in groups {
        let start = x;
        for (model, b) in &g.boxes {
            let color = PALETTE[models.iter().position(|m| m == model).unwrap_or(0) % PALETTE.len()];
            let cx = x + BOX_WIDTH / 2.0;
            let _ = writeln!(
                s,
                r#"<line class="whisker" x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
                y(b.whisker_low),
                y(b.whisker_high)
            );
            let _ = writeln!(
                s,
                r#"<rect class="box" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" stroke="black"><title>{}: {}</title></rect>"#,
                x + 1.0,
                y(b.q3),
                BOX_WIDTH - 2.0,
                (y(b.q1) - y(b.q3)).max(0.5),
                escape(&g.label),
                escape(model)
            );
            let _ = writeln!(
                s,
                r#"<line class="median" x1="{:.2}" y1="{my:.2}" x2="{:.2}" y2="{my:.2}" stroke="black" stroke-width="2"/>"#,
                x + 1.0,
                x + BOX_WIDTH - 1.0,
                my = y(b.median)
            );
            for o in &b.outliers {
                let _ = writeln!(s, r#"<circle class="outlier" cx="{cx:.2}" cy="{:.2}" r="2" fill="none" stroke="{color}"/>"#, y(*o));
            }
            x += BOX_WIDTH;
        }
        if g.boxes.is_empty() {
            x += BOX_WIDTH;
        }
        let lx = (start + x) / 2.0;
        let ly = TOP + PLOT_HEIGHT + 10.0;
        let _ = writeln!(
            s,
            r#"<text transform="translate({lx:.2} {ly:.2}) rotate(60)" text-anchor="start">{}</text>"#,
            escape(&g.label)
        );
        x += GROUP_GAP;
    }

    for (k, m) in models.iter().enumerate() {
        let ly = TOP + PLOT_HEIGHT + BOTTOM + 16.0 * k as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            ly - 9.0,
            PALETTE[k % PALETTE.len()],
            LEFT + 14.0,
            ly,
            escape(m)
        );
    }
    s.push_str("</svg>\n");
    s
}

pub fn write_boxplot_svg(path: &Path, title: &str, groups: &[BoxGroup]) -> Result<()> {
    super::write_bytes(path, render_boxplot_svg(title, groups).as_bytes())
}
