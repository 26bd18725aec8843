//! Per-model summary table: one row per model, grouped by family.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dump::ScaleLabel;
use crate::scoring::RankedModel;

pub const SUMMARY_HEADER: [&str; 12] = [
    "family",
    "model_id",
    "scale_label",
    "rank",
    "mean",
    "std",
    "q1",
    "q50",
    "q75",
    "q90",
    "q95",
    "best",
];

/// One line of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub family: String,
    pub model_id: String,
    pub scale_label: ScaleLabel,
    pub rank: usize,
    pub mean: f64,
    pub std: f64,
    pub q1: f64,
    pub q50: f64,
    pub q75: f64,
    pub q90: f64,
    pub q95: f64,
    pub best: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table1 {
    pub csv: String,
    pub text: String,
}

/// Rows follow the order of `ranked`, regrouped so that each family's models
/// are adjacent (families in order of first appearance). The model with the
/// lowest mean is flagged best.
pub fn emit_table1(ranked: &[RankedModel]) -> Table1 {
    let mut families: Vec<&str> = Vec::new();
    for m in ranked {
        if !families.contains(&m.model.family.as_str()) {
            families.push(&m.model.family);
        }
    }
    let rows: Vec<&RankedModel> = families
        .iter()
        .flat_map(|f| ranked.iter().filter(move |m| m.model.family == *f))
        .collect();
    // Largest rank number = lowest mean after tie-breaking.
    let best = ranked.iter().map(|m| m.rank).max();

    let mut wtr = csv::Writer::from_writer(Vec::new());
    for m in &rows {
        let s = &m.summary;
        wtr.serialize(SummaryRow {
            family: m.model.family.clone(),
            model_id: m.model.model_id.clone(),
            scale_label: m.model.scale_label,
            rank: m.rank,
            mean: s.mean,
            std: s.std,
            q1: s.q1,
            q50: s.q50,
            q75: s.q75,
            q90: s.q90,
            q95: s.q95,
            best: Some(m.rank) == best,
        })
        .expect("in-memory write");
    }
    let csv = String::from_utf8(wtr.into_inner().expect("in-memory flush")).expect("utf-8");

    let header = ["Family", "Model", "Rank", "HONEST", "q1", "q50", "q75", "q90", "q95"];
    let mut cells: Vec<Vec<String>> = vec![header.iter().map(|h| h.to_string()).collect()];
    let mut previous_family = None;
    for m in &rows {
        let s = &m.summary;
        let family = if previous_family == Some(m.model.family.as_str()) {
            String::new()
        } else {
            m.model.family.clone()
        };
        previous_family = Some(m.model.family.as_str());
        let mut model = m.model.model_id.clone();
        if Some(m.rank) == best {
            model.push_str(" *");
        }
        cells.push(vec![
            family,
            model,
            m.rank.to_string(),
            format!("{:.3} ± {:.3}", s.mean, s.std),
            format!("{:.3}", s.q1),
            format!("{:.3}", s.q50),
            format!("{:.3}", s.q75),
            format!("{:.3}", s.q90),
            format!("{:.3}", s.q95),
        ]);
    }
    let widths: Vec<usize> = (0..header.len())
        .map(|c| cells.iter().map(|row| row[c].chars().count()).max().unwrap_or(0))
        .collect();
    let mut text = String::new();
    for row in &cells {
        let mut line = String::new();
        for (c, cell) in row.iter().enumerate() {
            let pad = widths[c] - cell.chars().count();
            if c < 2 {
                let _ = write!(line, "{cell}{}  ", " ".repeat(pad));
            } else {
                let _ = write!(line, "{}{cell}  ", " ".repeat(pad));
            }
        }
        text.push_str(line.trim_end());
        text.push('\n');
    }
    text.push_str("* lowest mean (least hurtful)\n");
    Table1 { csv, text }
}
