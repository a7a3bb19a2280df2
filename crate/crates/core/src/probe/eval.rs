use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::train::{predict, ProbeModel};
use super::ProbeDataset;
use crate::schema::{AtomIndex, Predicate, StateKind};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AtomScore {
    pub atom: String,
    pub accuracy: f64,
    /// Accuracy of always predicting the test-set majority class.
    pub base_rate: f64,
    pub test_frequency: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredicateScore {
    pub predicate: String,
    /// Unweighted mean of the kept atoms' accuracies.
    pub accuracy: f64,
    pub base_rate: f64,
    pub n_atoms: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Omitted {
    pub predicate: String,
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub layer: usize,
    pub kind: StateKind,
    pub test_frames: usize,
    pub test_episodes: Vec<String>,
    /// Kept atoms in index order.
    pub per_atom: Vec<AtomScore>,
    /// Predicates with at least one kept atom, in schema order.
    pub per_predicate: Vec<PredicateScore>,
    pub omitted: Vec<Omitted>,
}

impl EvalReport {
    pub fn predicate(&self, name: &str) -> Option<&PredicateScore> {
        self.per_predicate.iter().find(|p| p.predicate == name)
    }

    pub fn mean_accuracy(&self) -> f64 {
        if self.per_predicate.is_empty() {
            return 0.0;
        }
        self.per_predicate.iter().map(|p| p.accuracy).sum::<f64>() / self.per_predicate.len() as f64
    }
}

pub(crate) fn predicate_of(atom: &str) -> &str {
    atom.split('(').next().unwrap_or(atom)
}

/// Per-atom accuracy on held-out frames, averaged per predicate over the
/// kept atoms. Predicates with no kept atom are listed in `omitted`.
pub fn evaluate(model: &ProbeModel, test: &ProbeDataset, idx: &AtomIndex) -> Result<EvalReport> {
    if test.is_empty() {
        return Err(Error::Pipeline("empty test set".into()));
    }
    if test.kind != model.kind || test.n_labels != model.n_labels {
        return Err(Error::Contract(
            "test set does not match the probe's label space".into(),
        ));
    }
    if test.atom_index_hash != model.atom_index_hash || model.atom_index_hash != idx.hash() {
        return Err(Error::Contract(
            "atom index hash mismatch between probe, data and schema".into(),
        ));
    }
    let atoms = idx.atoms(model.kind);
    let n = test.len() as f64;
    let mut correct = vec![0usize; model.n_kept()];
    let mut ones = vec![0usize; model.n_kept()];
    for pair in &test.pairs {
        let (_, bits) = predict(model, &pair.h)?;
        for (i, &k) in model.kept.iter().enumerate() {
            correct[i] += usize::from(bits[i] == pair.y[k]);
            ones[i] += pair.y[k] as usize;
        }
    }
    let per_atom: Vec<AtomScore> = model
        .kept
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let f = ones[i] as f64 / n;
            AtomScore {
                atom: atoms[k].to_string(),
                accuracy: correct[i] as f64 / n,
                base_rate: f.max(1.0 - f),
                test_frequency: f,
            }
        })
        .collect();

    let mut per_predicate = Vec::new();
    let mut omitted = Vec::new();
    for p in Predicate::ALL
        .into_iter()
        .filter(|p| p.kind() == model.kind)
    {
        let in_index = atoms.iter().filter(|a| a.predicate == p).count();
        let scores: Vec<&AtomScore> = per_atom
            .iter()
            .filter(|s| predicate_of(&s.atom) == p.name())
            .collect();
        if scores.is_empty() {
            let note = if in_index == 0 {
                "no atoms in this roster".to_string()
            } else {
                format!("all {in_index} atoms dropped by the label filter")
            };
            omitted.push(Omitted {
                predicate: p.name().to_string(),
                note,
            });
            continue;
        }
        let k = scores.len() as f64;
        per_predicate.push(PredicateScore {
            predicate: p.name().to_string(),
            accuracy: scores.iter().map(|s| s.accuracy).sum::<f64>() / k,
            base_rate: scores.iter().map(|s| s.base_rate).sum::<f64>() / k,
            n_atoms: scores.len(),
        });
    }
    Ok(EvalReport {
        layer: model.layer,
        kind: model.kind,
        test_frames: test.len(),
        test_episodes: test.episode_ids().into_iter().map(String::from).collect(),
        per_atom,
        per_predicate,
        omitted,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeatmapFormat {
    Csv,
    Json,
}

impl FromStr for HeatmapFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(HeatmapFormat::Csv),
            "json" => Ok(HeatmapFormat::Json),
            _ => Err(Error::Config(format!("unknown heatmap format `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub layer: usize,
    pub cells: Vec<Option<f64>>,
}

/// Layers by predicate categories: object predicates first, then action
/// predicates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapTable {
    pub columns: Vec<String>,
    pub rows: Vec<HeatmapRow>,
}

impl HeatmapTable {
    pub fn from_reports(reports: &[EvalReport]) -> Self {
        let present: std::collections::BTreeSet<&str> = reports
            .iter()
            .flat_map(|r| r.per_predicate.iter().map(|p| p.predicate.as_str()))
            .collect();
        let columns: Vec<String> = [StateKind::Object, StateKind::Action]
            .into_iter()
            .flat_map(|k| Predicate::ALL.into_iter().filter(move |p| p.kind() == k))
            .map(|p| p.name())
            .filter(|n| present.contains(n))
            .map(String::from)
            .collect();
        let mut by_layer: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
        for r in reports {
            let row = by_layer
                .entry(r.layer)
                .or_insert_with(|| vec![None; columns.len()]);
            for p in &r.per_predicate {
                let c = columns.iter().position(|c| *c == p.predicate).unwrap();
                row[c] = Some(p.accuracy);
            }
        }
        Self {
            columns,
            rows: by_layer
                .into_iter()
                .map(|(layer, cells)| HeatmapRow { layer, cells })
                .collect(),
        }
    }

    pub fn cell(&self, layer: usize, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|r| r.layer == layer)?.cells[c]
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer");
        for c in &self.columns {
            s.push(',');
            s.push_str(c);
        }
        s.push('\n');
        for r in &self.rows {
            write!(s, "{}", r.layer).unwrap();
            for v in &r.cells {
                s.push(',');
                if let Some(v) = v {
                    write!(s, "{v:.4}").unwrap();
                }
            }
            s.push('\n');
        }
        s
    }

    /// Array of row objects with fixed four-decimal numbers.
    pub fn to_json(&self) -> String {
        let mut s = String::from("[\n");
        for (i, r) in self.rows.iter().enumerate() {
            write!(s, "  {{\"layer\":{}", r.layer).unwrap();
            for (c, v) in self.columns.iter().zip(&r.cells) {
                let key = serde_json::to_string(c).unwrap();
                match v {
                    Some(v) => write!(s, ",{key}:{v:.4}").unwrap(),
                    None => write!(s, ",{key}:null").unwrap(),
                }
            }
            s.push('}');
            if i + 1 < self.rows.len() {
                s.push(',');
            }
            s.push('\n');
        }
        s.push_str("]\n");
        s
    }
}

pub fn export_heatmap(table: &HeatmapTable, path: &Path, format: HeatmapFormat) -> Result<()> {
    let text = match format {
        HeatmapFormat::Csv => table.to_csv(),
        HeatmapFormat::Json => table.to_json(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_heatmap_csv(text: &str) -> Result<HeatmapTable> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format(0, "empty heatmap"))?;
    let mut cols = header.split(',');
    if cols.next() != Some("layer") {
        return Err(Error::format(0, "heatmap header must start with `layer`"));
    }
    let columns: Vec<String> = cols.map(String::from).collect();
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        let bad = |m: &str| Error::format(i as u64 + 1, format!("row {}: {m}", i + 1));
        let mut f = line.split(',');
        let layer = f
            .next()
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| bad("bad layer"))?;
        let cells = f
            .map(|v| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    v.parse().map(Some).map_err(|_| bad("bad value"))
                }
            })
            .collect::<Result<Vec<_>>>()?;
        if cells.len() != columns.len() {
            return Err(bad("wrong number of cells"));
        }
        rows.push(HeatmapRow { layer, cells });
    }
    Ok(HeatmapTable { columns, rows })
}

pub fn parse_heatmap_json(text: &str) -> Result<HeatmapTable> {
    let rows: Vec<serde_json::Map<String, serde_json::Value>> = serde_json::from_str(text)?;
    let columns: Vec<String> = rows
        .first()
        .map(|r| r.keys().filter(|k| *k != "layer").cloned().collect())
        .unwrap_or_default();
    let mut out = Vec::new();
    for (i, r) in rows.iter().enumerate() {
        let layer =
            r.get("layer")
                .and_then(|v| v.as_u64())
                .ok_or_else(|| Error::format(i as u64, "row without layer"))? as usize;
        let cells = columns
            .iter()
            .map(|c| r.get(c).and_then(|v| v.as_f64()))
            .collect();
        out.push(HeatmapRow { layer, cells });
    }
    Ok(HeatmapTable { columns, rows: out })
}
