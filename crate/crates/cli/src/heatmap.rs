//! Per-student prediction heatmaps: one row per skill the student answered,
//! one column per interaction, cell = predicted probability of answering
//! that skill correctly after the interaction.

use std::fmt::Write as _;

use dkt::data::InteractionSequence;
use dkt::model::PredictionTrace;

const DECIMALS: f64 = 1e6;
const CELL_MIN: f64 = 1e-6;
const CELL_MAX: f64 = 1.0 - 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapExport {
    /// Skill ids in ascending order.
    pub skills: Vec<usize>,
    /// `(q_t, a_t)` for every column.
    pub columns: Vec<(usize, bool)>,
    /// `cells[r][t]`, rounded to six decimals and kept inside (0, 1).
    pub cells: Vec<Vec<f64>>,
}

fn quantize(p: f64) -> f64 {
    ((p * DECIMALS).round() / DECIMALS).clamp(CELL_MIN, CELL_MAX)
}

impl HeatmapExport {
    pub fn from_trace(seq: &InteractionSequence, trace: &PredictionTrace) -> Self {
        let mut skills = seq.questions().to_vec();
        skills.sort_unstable();
        skills.dedup();
        let columns = seq.questions().iter().copied().zip(seq.answers().iter().copied()).collect();
        let cells = skills
            .iter()
            .map(|&s| trace.outputs.iter().map(|y| quantize(y[s])).collect())
            .collect();
        HeatmapExport { skills, columns, cells }
    }

    /// Mean absolute change between adjacent columns over all cells.
    pub fn mean_adjacent_change(&self) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for row in &self.cells {
            for w in row.windows(2) {
                sum += (w[1] - w[0]).abs();
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }

    fn column_label(&self, t: usize) -> String {
        let (q, a) = self.columns[t];
        format!("{q}:{}", u8::from(a))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("skill");
        for t in 0..self.columns.len() {
            out.push(',');
            out.push_str(&self.column_label(t));
        }
        out.push('\n');
        for (s, row) in self.skills.iter().zip(&self.cells) {
            let _ = write!(out, "{s}");
            for v in row {
                let _ = write!(out, ",{v:.6}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or("empty heatmap file")?;
        let mut head = header.split(',');
        if head.next().map(str::trim) != Some("skill") {
            return Err("header must start with 'skill'".into());
        }
        let columns = head
            .map(|lab| {
                let (q, a) = lab.trim().split_once(':').ok_or(format!("bad column label {lab:?}"))?;
                let q = q.parse::<usize>().map_err(|e| format!("{lab:?}: {e}"))?;
                let a = match a {
                    "1" => true,
                    "0" => false,
                    _ => return Err(format!("bad answer in column label {lab:?}")),
                };
                Ok((q, a))
            })
            .collect::<Result<Vec<_>, String>>()?;
        let mut skills = Vec::new();
        let mut cells = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(',');
            let s = parts
                .next()
                .unwrap_or_default()
                .trim()
                .parse::<usize>()
                .map_err(|e| format!("row {}: {e}", i + 2))?;
            let row = parts
                .map(|v| v.trim().parse::<f64>().map_err(|e| format!("row {}: {e}", i + 2)))
                .collect::<Result<Vec<_>, String>>()?;
            if row.len() != columns.len() {
                return Err(format!("row {} has {} cells, expected {}", i + 2, row.len(), columns.len()));
            }
            skills.push(s);
            cells.push(row);
        }
        Ok(HeatmapExport { skills, columns, cells })
    }

    /// Shaded grid, darker for higher probability.
    pub fn to_svg(&self) -> String {
        let cell = 18.0;
        let left = 48.0;
        let top = 40.0;
        let width = left + cell * self.columns.len() as f64 + 10.0;
        let height = top + cell * self.skills.len() as f64 + 10.0;
        let mut out = svg_open(width, height);
        for t in 0..self.columns.len() {
            let x = left + cell * t as f64 + cell / 2.0;
            let _ = writeln!(
                out,
                r#"<text x="{x:.1}" y="{:.1}" font-size="8" text-anchor="start" transform="rotate(-60 {x:.1} {:.1})">{}</text>"#,
                top - 4.0,
                top - 4.0,
                self.column_label(t)
            );
        }
        for (r, (s, row)) in self.skills.iter().zip(&self.cells).enumerate() {
            let y = top + cell * r as f64;
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="9" text-anchor="end">{s}</text>"#,
                left - 4.0,
                y + cell * 0.7
            );
            for (t, &p) in row.iter().enumerate() {
                let shade = (255.0 * (1.0 - p)).round() as u8;
                let _ = writeln!(
                    out,
                    r#"<rect x="{:.1}" y="{y:.1}" width="{cell}" height="{cell}" fill="rgb({shade},{shade},255)" stroke="white" stroke-width="0.5"/>"#,
                    left + cell * t as f64
                );
            }
        }
        out.push_str("</svg>\n");
        out
    }

    /// One polyline per skill over time.
    pub fn to_line_svg(&self) -> String {
        let (w, h) = (640.0, 320.0);
        let (left, right, top, bottom) = (40.0, 90.0, 10.0, 30.0);
        let plot_w = w - left - right;
        let plot_h = h - top - bottom;
        let n = self.columns.len().max(2) - 1;
        let mut out = svg_open(w, h);
        let _ = writeln!(
            out,
            r#"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
        );
        for (r, (s, row)) in self.skills.iter().zip(&self.cells).enumerate() {
            let hue = (r * 360 / self.skills.len().max(1)) % 360;
            let pts: Vec<String> = row
                .iter()
                .enumerate()
                .map(|(t, p)| {
                    format!(
                        "{:.1},{:.1}",
                        left + plot_w * t as f64 / n as f64,
                        top + plot_h * (1.0 - p)
                    )
                })
                .collect();
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="hsl({hue},70%,45%)" stroke-width="1.5"/>"#,
                pts.join(" ")
            );
            let _ = writeln!(
                out,
                r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="hsl({hue},70%,45%)">skill {s}</text>"#,
                w - right + 8.0,
                top + 12.0 * (r + 1) as f64
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn svg_open(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w:.0}\" height=\"{h:.0}\" viewBox=\"0 0 {w:.0} {h:.0}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}
