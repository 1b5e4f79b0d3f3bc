//! Choropleth maps of fine-level values.
//!
//! Values are min-max normalized per map and quantized onto a 256-step
//! single-hue ramp; darker fills mean higher values. Each region becomes one
//! `<path>` whose `id` is the region id, with holes cut by the even-odd rule.

use std::fmt::Write as _;

use downscale_core::geo::{BoundingBox, Partition};

pub const RAMP_STEPS: usize = 256;
const LIGHT: [f64; 3] = [247.0, 251.0, 255.0];
const DARK: [f64; 3] = [8.0, 48.0, 107.0];
const WIDTH: f64 = 800.0;

/// Fill for ramp step `k` (0 lightest, 255 darkest).
pub fn ramp_color(k: usize) -> String {
    let t = k.min(RAMP_STEPS - 1) as f64 / (RAMP_STEPS - 1) as f64;
    let c: Vec<u8> = LIGHT
        .iter()
        .zip(&DARK)
        .map(|(l, d)| (l + t * (d - l)).round() as u8)
        .collect();
    format!("#{:02x}{:02x}{:02x}", c[0], c[1], c[2])
}

/// Ramp step per value. A constant field maps to the middle of the ramp;
/// non-finite values map to step 0.
pub fn ramp_steps(values: &[f64]) -> Vec<usize> {
    let finite = values.iter().copied().filter(|v| v.is_finite());
    let lo = finite.clone().fold(f64::INFINITY, f64::min);
    let hi = finite.fold(f64::NEG_INFINITY, f64::max);
    let top = (RAMP_STEPS - 1) as f64;
    values
        .iter()
        .map(|v| {
            if !v.is_finite() {
                0
            } else if hi > lo {
                ((v - lo) / (hi - lo) * top).round() as usize
            } else {
                RAMP_STEPS / 2
            }
        })
        .collect()
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

/// SVG document for `values` (one per region of `partition`, same order).
pub fn choropleth(partition: &Partition, values: &[f64], title: &str) -> String {
    assert_eq!(partition.len(), values.len(), "one value per region");
    let bb = partition.bounding_box();
    let BoundingBox { min, max } = bb;
    let span = bb.extent().max(f64::MIN_POSITIVE);
    let scale = WIDTH / span;
    let width = (max[0] - min[0]) * scale;
    let height = (max[1] - min[1]) * scale;
    // y grows downwards in SVG
    let px = |p: &[f64; 2]| ((p[0] - min[0]) * scale, (max[1] - p[1]) * scale);

    let mut out = String::new();
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"{width:.3}\" height=\"{height:.3}\" viewBox=\"0 0 {width:.3} {height:.3}\">"
    )
    .unwrap();
    writeln!(out, "<title>{}</title>", escape(title)).unwrap();
    let steps = ramp_steps(values);
    for ((region, v), k) in partition.regions().iter().zip(values).zip(steps) {
        let mut d = String::new();
        for poly in &region.geometry.polygons {
            for ring in std::iter::once(&poly.exterior).chain(&poly.holes) {
                for (i, p) in ring.iter().enumerate() {
                    let (x, y) = px(p);
                    write!(d, "{}{x:.3} {y:.3} ", if i == 0 { "M" } else { "L" }).unwrap();
                }
                d.push_str("Z ");
            }
        }
        let id = escape(&region.id);
        writeln!(
            out,
            "<path id=\"{id}\" d=\"{}\" fill=\"{}\" fill-rule=\"evenodd\" stroke=\"#ffffff\" stroke-width=\"0.5\"><title>{id}: {v}</title></path>",
            d.trim_end(),
            ramp_color(k)
        )
        .unwrap();
    }
    out.push_str("</svg>\n");
    out
}
