use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// `feat`, `1`, `2`, ... for an encoder with `n_layers` blocks.
pub fn layer_names(n_layers: usize) -> Vec<String> {
    std::iter::once("feat".to_string())
        .chain((1..=n_layers).map(|l| l.to_string()))
        .collect()
}

/// Writes `layer,score` rows.
pub fn write_layer_scores(
    path: impl AsRef<Path>,
    header: &str,
    names: &[String],
    scores: &[f64],
) -> Result<()> {
    let path = path.as_ref();
    if names.len() != scores.len() {
        return Err(Error::shape("one name per score"));
    }
    let mut s = format!("layer,{header}\n");
    for (n, v) in names.iter().zip(scores) {
        writeln!(s, "{n},{v}").unwrap();
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn read_layer_scores(path: impl AsRef<Path>) -> Result<Vec<(String, f64)>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .skip(1)
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let (n, v) = l
                .split_once(',')
                .ok_or_else(|| Error::format("score csv", format!("bad row {l:?}")))?;
            let v = v
                .parse()
                .map_err(|_| Error::format("score csv", format!("bad value {v:?}")))?;
            Ok((n.to_string(), v))
        })
        .collect()
}

/// A line chart with one polyline per series over the layer axis.
pub fn write_svg_chart(
    path: impl AsRef<Path>,
    title: &str,
    names: &[String],
    series: &[(&str, &[f64])],
) -> Result<()> {
    let path = path.as_ref();
    let (w, h, pad) = (640.0, 360.0, 48.0);
    let n = names.len().max(2);
    let x = |i: usize| pad + (w - 2.0 * pad) * i as f64 / (n - 1) as f64;
    let y = |v: f64| h - pad - (h - 2.0 * pad) * v.clamp(0.0, 1.0);
    let colors = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle">{title}</text>"#,
        w / 2.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{pad}" y1="{}" x2="{}" y2="{}" stroke="black"/>"#,
        h - pad,
        w - pad,
        h - pad
    )
    .unwrap();
    writeln!(
        s,
        r#"<line x1="{pad}" y1="{pad}" x2="{pad}" y2="{}" stroke="black"/>"#,
        h - pad
    )
    .unwrap();
    for (i, name) in names.iter().enumerate() {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{name}</text>"#,
            x(i),
            h - pad + 16.0
        )
        .unwrap();
    }
    for t in [0.0, 0.5, 1.0] {
        writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{t}</text>"#,
            pad - 6.0,
            y(t) + 4.0
        )
        .unwrap();
    }
    for (k, (label, vals)) in series.iter().enumerate() {
        let c = colors[k % colors.len()];
        let pts: Vec<String> = vals
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.1},{:.1}", x(i), y(v)))
            .collect();
        writeln!(
            s,
            r#"<polyline fill="none" stroke="{c}" stroke-width="2" points="{}"/>"#,
            pts.join(" ")
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{}" y="{}" fill="{c}">{label}</text>"#,
            w - pad - 80.0,
            pad + 16.0 * k as f64
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}
