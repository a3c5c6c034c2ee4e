//! SVG heatmaps of CLS attributions: one row per layer, one column per token.

use std::fmt::Write as _;

use crate::error::{Error, Result};

const CELL_W: f64 = 44.0;
const CELL_H: f64 = 22.0;
const LEFT: f64 = 48.0;
const TOP: f64 = 8.0;
const BOTTOM: f64 = 72.0;

/// Low end of the single-hue ramp (white) and high end (dark blue).
const LOW: [f64; 3] = [255.0, 255.0, 255.0];
const HIGH: [f64; 3] = [8.0, 48.0, 107.0];

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapSpec {
    pub row_labels: Vec<String>,
    pub col_labels: Vec<String>,
    /// Row-major, each row max-normalized into [0, 1].
    pub values: Vec<Vec<f64>>,
}

impl HeatmapSpec {
    /// Normalizes each row by its maximum. All-zero rows stay zero.
    pub fn new(row_labels: Vec<String>, col_labels: Vec<String>, raw: &[Vec<f64>]) -> Result<Self> {
        if raw.len() != row_labels.len() {
            return Err(Error::Contract(format!(
                "heatmap has {} rows but {} row labels",
                raw.len(),
                row_labels.len()
            )));
        }
        let mut values = Vec::with_capacity(raw.len());
        for row in raw {
            if row.len() != col_labels.len() {
                return Err(Error::Contract(format!(
                    "heatmap row has {} values but {} column labels",
                    row.len(),
                    col_labels.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Contract("heatmap values must be finite and nonnegative".into()));
            }
            let max = row.iter().copied().fold(0.0, f64::max);
            values.push(
                row.iter()
                    .map(|&v| if max > 0.0 { v / max } else { 0.0 })
                    .collect(),
            );
        }
        Ok(Self {
            row_labels,
            col_labels,
            values,
        })
    }

    pub fn rows(&self) -> usize {
        self.values.len()
    }

    pub fn cols(&self) -> usize {
        self.col_labels.len()
    }
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
            c if (c as u32) < 0x20 && c != '\t' => out.push(' '),
            c => out.push(c),
        }
    }
    out
}

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let ch = |k: usize| (LOW[k] + (HIGH[k] - LOW[k]) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", ch(0), ch(1), ch(2))
}

/// Renders exactly `rows × cols` `<rect>` cells plus text labels.
pub fn render_svg(spec: &HeatmapSpec) -> String {
    let width = LEFT + CELL_W * spec.cols() as f64 + 8.0;
    let height = TOP + CELL_H * spec.rows() as f64 + BOTTOM;
    let mut s = String::new();
    s.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    let _ = writeln!(
        s,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\" font-family=\"sans-serif\" font-size=\"11\">"
    );
    s.push_str("<g class=\"cells\">\n");
    for (r, row) in spec.values.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL_W}\" height=\"{CELL_H}\" fill=\"{}\"><title>{:.4}</title></rect>",
                LEFT + CELL_W * c as f64,
                TOP + CELL_H * r as f64,
                color(v),
                v
            );
        }
    }
    s.push_str("</g>\n<g class=\"row-labels\" text-anchor=\"end\">\n");
    for (r, label) in spec.row_labels.iter().enumerate() {
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            LEFT - 6.0,
            TOP + CELL_H * (r as f64 + 0.5) + 4.0,
            escape(label)
        );
    }
    s.push_str("</g>\n<g class=\"col-labels\" text-anchor=\"end\">\n");
    let base = TOP + CELL_H * spec.rows() as f64 + 6.0;
    for (c, label) in spec.col_labels.iter().enumerate() {
        let x = LEFT + CELL_W * (c as f64 + 0.5);
        let _ = writeln!(
            s,
            "<text x=\"{x}\" y=\"{base}\" transform=\"rotate(-45 {x} {base})\">{}</text>",
            escape(label)
        );
    }
    s.push_str("</g>\n</svg>\n");
    s
}
