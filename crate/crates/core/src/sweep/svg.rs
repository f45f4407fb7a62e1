//! Plain-text SVG emitters for phase heatmaps and normalized spectra.
//!
//! Output depends only on the input numbers, so rerendering the same CSV
//! yields identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::infogeo::NeuronAnalysis;

use super::{Metric, SweepCell};

/// Fill for flagged cells whose metric is undefined.
pub const FLAGGED_COLOR: &str = "#9e9e9e";

/// Anchors of an inferno-like ramp, dark to bright.
const RAMP: [(f64, [u8; 3]); 6] = [
    (0.0, [0, 0, 4]),
    (0.2, [66, 10, 104]),
    (0.4, [147, 38, 103]),
    (0.6, [221, 81, 58]),
    (0.8, [252, 165, 10]),
    (1.0, [252, 255, 164]),
];

const CELL: f64 = 36.0;
const MARGIN_LEFT: f64 = 90.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 70.0;
const BAR_GAP: f64 = 30.0;
const BAR_WIDTH: f64 = 18.0;
const BAR_LABEL: f64 = 90.0;

pub fn ramp_color(t: f64) -> String {
    let t = if t.is_finite() {
        t.clamp(0.0, 1.0)
    } else {
        0.0
    };
    let i = RAMP
        .iter()
        .position(|&(x, _)| x >= t)
        .unwrap_or(RAMP.len() - 1)
        .max(1);
    let (x0, c0) = RAMP[i - 1];
    let (x1, c1) = RAMP[i];
    let w = (t - x0) / (x1 - x0);
    let ch = |k: usize| (c0[k] as f64 + w * (c1[k] as f64 - c0[k] as f64)).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

/// Short, locale-free number label.
fn fmt_num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else if (1e-3..1e4).contains(&x.abs()) {
        let s = format!("{x:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{x:.3e}")
    }
}

fn axis_values(xs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = xs.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Heatmap of `metric`, gamma across and load upward.
pub fn heatmap_svg(cells: &[SweepCell], metric: Metric, log10: bool) -> Result<String> {
    if cells.is_empty() {
        return Err(Error::Layout("no cells to render".into()));
    }
    let gammas = axis_values(cells.iter().map(|c| c.gamma));
    let loads = axis_values(cells.iter().map(|c| c.load));
    let mut slots: Vec<Option<&SweepCell>> = vec![None; gammas.len() * loads.len()];
    for c in cells {
        let gi = gammas.iter().position(|&g| g == c.gamma).unwrap();
        let li = loads.iter().position(|&l| l == c.load).unwrap();
        let slot = &mut slots[li * gammas.len() + gi];
        if slot.is_some() {
            return Err(Error::Layout(format!(
                "duplicate cell at gamma={} load={}",
                c.gamma, c.load
            )));
        }
        *slot = Some(c);
    }
    if let Some(i) = slots.iter().position(Option::is_none) {
        return Err(Error::Layout(format!(
            "ragged grid: no cell at gamma={} load={}",
            gammas[i % gammas.len()],
            loads[i / gammas.len()]
        )));
    }

    let values: Vec<Option<f64>> = slots
        .iter()
        .map(|c| {
            let c = c.unwrap();
            let raw = c.metric(metric);
            let v = if log10 { raw.log10() } else { raw };
            if v.is_finite() {
                Ok(Some(v))
            } else if c.is_flagged() {
                Ok(None)
            } else {
                Err(Error::Data(format!(
                    "{} is {} at gamma={} load={}",
                    metric.name(),
                    raw,
                    c.gamma,
                    c.load
                )))
            }
        })
        .collect::<Result<_>>()?;
    let finite = values.iter().flatten();
    let lo = finite.clone().copied().fold(f64::INFINITY, f64::min);
    let hi = finite.copied().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() {
        (lo, hi)
    } else {
        (f64::NAN, f64::NAN)
    };

    let nx = gammas.len() as f64;
    let ny = loads.len() as f64;
    let plot_w = nx * CELL;
    let plot_h = ny * CELL;
    let width = MARGIN_LEFT + plot_w + BAR_GAP + BAR_WIDTH + BAR_LABEL;
    let height = MARGIN_TOP + plot_h + MARGIN_BOTTOM;
    let label = if log10 {
        format!("log10 {}", metric.name())
    } else {
        metric.name().to_string()
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{width}" height="{height}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{label}</text>"#,
        MARGIN_LEFT + plot_w / 2.0
    );

    for (i, v) in values.iter().enumerate() {
        let gi = (i % gammas.len()) as f64;
        let li = (i / gammas.len()) as f64;
        let x = MARGIN_LEFT + gi * CELL;
        let y = MARGIN_TOP + (ny - 1.0 - li) * CELL;
        let fill = match v {
            None => FLAGGED_COLOR.to_string(),
            Some(v) if hi > lo => ramp_color((v - lo) / (hi - lo)),
            Some(_) => ramp_color(0.5),
        };
        let _ = writeln!(
            s,
            r#"<rect class="cell" x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}"/>"#
        );
    }

    // Axes.
    let x_axis_y = MARGIN_TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for (gi, g) in gammas.iter().enumerate() {
        let x = MARGIN_LEFT + (gi as f64 + 0.5) * CELL;
        let _ = writeln!(
            s,
            r#"<text x="{x}" y="{}" text-anchor="end" transform="rotate(-45 {x} {})">{}</text>"#,
            x_axis_y + 12.0,
            x_axis_y + 12.0,
            fmt_num(*g)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">gamma (log scale)</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        height - 8.0
    );
    for (li, l) in loads.iter().enumerate() {
        let y = MARGIN_TOP + (ny - 1.0 - li as f64 + 0.5) * CELL + 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#,
            MARGIN_LEFT - 6.0,
            fmt_num(*l)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">P/N</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    // Color bar, bright end on top.
    let bx = MARGIN_LEFT + plot_w + BAR_GAP;
    let steps = 32;
    let step_h = plot_h / steps as f64;
    for k in 0..steps {
        let t = 1.0 - (k as f64 + 0.5) / steps as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{}" width="{BAR_WIDTH}" height="{step_h}" fill="{}"/>"#,
            MARGIN_TOP + k as f64 * step_h,
            ramp_color(t)
        );
    }
    let tx = bx + BAR_WIDTH + 4.0;
    let _ = writeln!(
        s,
        r#"<text x="{tx}" y="{}" class="max">max {}</text>"#,
        MARGIN_TOP + 10.0,
        fmt_num(hi)
    );
    let _ = writeln!(
        s,
        r#"<text x="{tx}" y="{}" class="min">min {}</text>"#,
        MARGIN_TOP + plot_h,
        fmt_num(lo)
    );
    if values.iter().any(Option::is_none) {
        let _ = writeln!(
            s,
            r#"<rect x="{bx}" y="{}" width="{BAR_WIDTH}" height="10" fill="{FLAGGED_COLOR}"/><text x="{tx}" y="{}">flagged</text>"#,
            MARGIN_TOP + plot_h + 14.0,
            MARGIN_TOP + plot_h + 23.0
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render_heatmap(
    cells: &[SweepCell],
    metric: Metric,
    log10: bool,
    out_path: &Path,
) -> Result<()> {
    let svg = heatmap_svg(cells, metric, log10)?;
    fs::write(out_path, svg).map_err(|e| Error::io(out_path, e))
}

/// Lower clip for `log10(lambda_k / lambda_1)` when a ratio is exactly 0.
const SPECTRUM_FLOOR: f64 = -16.0;

/// Line plot of `log10(lambda_k / lambda_1)` against `k`, one polyline per
/// non-degenerate neuron.
pub fn spectrum_plot_svg(analyses: &[NeuronAnalysis]) -> String {
    let (w, h) = (480.0, 320.0);
    let (left, top, right, bottom) = (60.0, 30.0, 20.0, 45.0);
    let pw = w - left - right;
    let ph = h - top - bottom;
    let kmax = analyses
        .iter()
        .map(|a| a.spectrum.len())
        .max()
        .unwrap_or(1)
        .max(2);
    let curves: Vec<Vec<f64>> = analyses
        .iter()
        .filter(|a| !a.spectrum.degenerate)
        .map(|a| {
            a.spectrum
                .normalized()
                .iter()
                .map(|r| {
                    if *r > 0.0 {
                        r.log10().max(SPECTRUM_FLOOR)
                    } else {
                        SPECTRUM_FLOOR
                    }
                })
                .collect()
        })
        .collect();
    let ymin = curves
        .iter()
        .flatten()
        .copied()
        .fold(0.0f64, f64::min)
        .floor()
        .min(-1.0);
    let px = |k: usize| left + pw * k as f64 / (kmax - 1) as f64;
    let py = |v: f64| top + ph * (v / ymin);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="13">normalized Fisher spectrum</text>"#,
        left + pw / 2.0
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#,
        left + pw / 2.0,
        h - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">log10(lambda_k / lambda_1)</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (v, anchor) in [(0.0, "0"), (ymin, "")] {
        let label = if anchor.is_empty() {
            fmt_num(ymin)
        } else {
            anchor.to_string()
        };
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{label}</text>"#,
            left - 5.0,
            py(v) + 4.0
        );
    }
    for k in [0, kmax - 1] {
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            px(k),
            top + ph + 14.0,
            k + 1
        );
    }
    for (i, curve) in curves.iter().enumerate() {
        let color =
            ramp_color(0.15 + 0.7 * i as f64 / curves.len().max(2).saturating_sub(1) as f64);
        let points: Vec<String> = curve
            .iter()
            .enumerate()
            .map(|(k, v)| format!("{},{}", px(k), py(*v)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{color}" stroke-opacity="0.7" points="{}"/>"#,
            points.join(" ")
        );
    }
    s.push_str("</svg>\n");
    s
}
