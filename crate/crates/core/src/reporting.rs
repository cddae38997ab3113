//! Analysis artifacts: label-wise B³ tables, summary tables, nPMI matrices
//! and latent-logit exports for embedding projector tools.
//!
//! Text outputs are UTF-8 with LF newlines. Matrices and tables are CSV,
//! projector exports are TSV. Floats use the shortest representation that
//! parses back to the same value.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{b_cubed, npmi_matrix, BCubed, Contingency, NpmiMatrix};

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n', '\r']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_owned()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| x.to_string())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRow {
    pub label: String,
    pub count: usize,
    pub bcubed: BCubed,
}

/// Per-label B³ over the points carrying each label, sorted by descending
/// F1 and then by label.
pub fn labelwise_table<S: AsRef<str>>(gold: &[S], pred: &[usize]) -> Result<Vec<LabelRow>> {
    let gold: Vec<&str> = gold.iter().map(AsRef::as_ref).collect();
    let mut labels = gold.clone();
    labels.sort_unstable();
    labels.dedup();
    let mut rows = labels
        .into_iter()
        .map(|label| {
            Ok(LabelRow {
                label: label.to_owned(),
                count: gold.iter().filter(|&&g| g == label).count(),
                bcubed: b_cubed(&gold, pred, Some(&label))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    rows.sort_by(|a, b| {
        b.bcubed
            .f1
            .total_cmp(&a.bcubed.f1)
            .then_with(|| a.label.cmp(&b.label))
    });
    Ok(rows)
}

pub fn labelwise_csv(rows: &[LabelRow]) -> String {
    let mut out = String::from("label,count,precision,recall,f1\n");
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            csv_field(&r.label),
            r.count,
            r.bcubed.precision,
            r.bcubed.recall,
            r.bcubed.f1
        )
        .unwrap();
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub encoder: String,
    pub task: String,
    pub accuracy: Option<f64>,
    pub bcubed: BCubed,
    pub diversity: f64,
    pub uncertainty: f64,
}

/// Results grouped by task, one row per encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryTable {
    pub rows: Vec<SummaryRow>,
}

pub fn summary_table(mut rows: Vec<SummaryRow>) -> SummaryTable {
    rows.sort_by(|a, b| (&a.task, &a.encoder).cmp(&(&b.task, &b.encoder)));
    SummaryTable { rows }
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("task,encoder,accuracy,precision,recall,f1,diversity,uncertainty\n");
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                csv_field(&r.task),
                csv_field(&r.encoder),
                opt(r.accuracy),
                r.bcubed.precision,
                r.bcubed.recall,
                r.bcubed.f1,
                r.diversity,
                r.uncertainty
            )
            .unwrap();
        }
        out
    }

    /// Fixed-width rendering with two decimals.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "{:<16} {:<16} {:>6} {:>6} {:>6} {:>6} {:>6} {:>6}\n",
            "task", "encoder", "acc", "P", "R", "F1", "Div", "Unc"
        );
        for r in &self.rows {
            writeln!(
                out,
                "{:<16} {:<16} {:>6} {:>6.2} {:>6.2} {:>6.2} {:>6.2} {:>6.2}",
                r.task,
                r.encoder,
                r.accuracy.map_or("-".into(), |a| format!("{a:.2}")),
                r.bcubed.precision * 100.0,
                r.bcubed.recall * 100.0,
                r.bcubed.f1 * 100.0,
                r.diversity,
                r.uncertainty
            )
            .unwrap();
        }
        out
    }
}

/// Aligned projector files: tab-separated latent logits without a header,
/// and `gold\tcluster` metadata with a header row.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorExport {
    pub vectors: String,
    pub metadata: String,
}

pub const PROJECTOR_VECTORS_FILE: &str = "projector_vectors.tsv";
pub const PROJECTOR_METADATA_FILE: &str = "projector_metadata.tsv";
const METADATA_HEADER: &str = "gold\tcluster";

pub fn export_projector<S: AsRef<str>>(
    logits: &[Vec<f64>],
    gold: &[S],
    pred: &[usize],
) -> Result<ProjectorExport> {
    if logits.len() != gold.len() || gold.len() != pred.len() {
        return Err(Error::invalid("projector inputs differ in length"));
    }
    if let Some(first) = logits.first() {
        if logits.iter().any(|v| v.len() != first.len()) {
            return Err(Error::invalid("latent logit vectors differ in length"));
        }
    }
    let mut vectors = String::new();
    for v in logits {
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                vectors.push('\t');
            }
            write!(vectors, "{x}").unwrap();
        }
        vectors.push('\n');
    }
    let mut metadata = format!("{METADATA_HEADER}\n");
    for (g, c) in gold.iter().zip(pred) {
        let g = g.as_ref();
        if g.contains(['\t', '\n']) {
            return Err(Error::invalid(format!(
                "label {g:?} contains a tab or newline"
            )));
        }
        writeln!(metadata, "{g}\t{c}").unwrap();
    }
    Ok(ProjectorExport { vectors, metadata })
}

/// Latent logits, gold labels and hard clusters read back from an export.
pub type ProjectorRows = (Vec<Vec<f64>>, Vec<String>, Vec<usize>);

/// Parses projector files back into `(logits, gold, pred)`.
pub fn parse_projector(export: &ProjectorExport) -> Result<ProjectorRows> {
    let bad = |m: String| Error::invalid(format!("projector export: {m}"));
    let logits = export
        .vectors
        .lines()
        .map(|line| {
            line.split('\t')
                .map(|x| x.parse::<f64>().map_err(|e| bad(format!("{x:?}: {e}"))))
                .collect()
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    let mut lines = export.metadata.lines();
    if lines.next() != Some(METADATA_HEADER) {
        return Err(bad("missing metadata header".into()));
    }
    let (mut gold, mut pred) = (Vec::new(), Vec::new());
    for line in lines {
        let (g, c) = line
            .split_once('\t')
            .ok_or_else(|| bad(format!("bad metadata row {line:?}")))?;
        gold.push(g.to_owned());
        pred.push(c.parse().map_err(|e| bad(format!("cluster {c:?}: {e}")))?);
    }
    if gold.len() != logits.len() {
        return Err(bad("vector and metadata row counts differ".into()));
    }
    Ok((logits, gold, pred))
}

impl ProjectorExport {
    pub fn write(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, text) in [
            (PROJECTOR_VECTORS_FILE, &self.vectors),
            (PROJECTOR_METADATA_FILE, &self.metadata),
        ] {
            let p = dir.join(name);
            std::fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmiRecord {
    pub label_a: String,
    pub label_b: String,
    pub npmi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NpmiReport {
    pub matrix: NpmiMatrix,
}

/// nPMI over counts summed across runs, optionally restricted to a label
/// subset. Undefined cells are empty in CSV output.
pub fn npmi_report(runs: &[Contingency], label_subset: Option<&[String]>) -> NpmiReport {
    let mut summed = Contingency::default();
    for c in runs {
        summed.merge(c);
    }
    if let Some(labels) = label_subset {
        summed = summed.restrict(labels);
    }
    NpmiReport {
        matrix: npmi_matrix(&summed),
    }
}

impl NpmiReport {
    pub fn to_csv(&self) -> String {
        let m = &self.matrix;
        let mut out = String::from("label");
        for l in &m.labels {
            write!(out, ",{}", csv_field(l)).unwrap();
        }
        out.push('\n');
        for (l, row) in m.labels.iter().zip(&m.values) {
            out.push_str(&csv_field(l));
            for v in row {
                write!(out, ",{}", opt(*v)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    pub fn records(&self) -> Vec<NpmiRecord> {
        let m = &self.matrix;
        let mut out = Vec::with_capacity(m.labels.len() * m.labels.len());
        for (a, row) in m.labels.iter().zip(&m.values) {
            for (b, v) in m.labels.iter().zip(row) {
                out.push(NpmiRecord {
                    label_a: a.clone(),
                    label_b: b.clone(),
                    npmi: *v,
                });
            }
        }
        out
    }

    pub fn records_csv(&self) -> String {
        let mut out = String::from("label_a,label_b,npmi\n");
        for r in self.records() {
            writeln!(
                out,
                "{},{},{}",
                csv_field(&r.label_a),
                csv_field(&r.label_b),
                opt(r.npmi)
            )
            .unwrap();
        }
        out
    }
}
