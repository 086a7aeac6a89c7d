//! Plain-text evaluation and training reports: named entries with headline
//! numbers and per-threshold curve tables, written deterministically and
//! parseable back. Timing is deliberately absent from report files (it goes
//! to the log) so repeat runs are byte-identical.

use std::path::Path;

use quadtrack_core::eval::{CurveSet, EvalResult, PRECISION_POINTS, SUCCESS_POINTS};
use quadtrack_core::train::TrainReport;

use crate::error::{Error, Result};

pub const REPORT_HEADER: &str = "quadtrack-report-v1";
pub const TRAIN_HEADER: &str = "quadtrack-train-report-v1";

#[derive(Clone, Debug, PartialEq)]
pub struct ReportEntry {
    pub name: String,
    pub sequences: usize,
    pub curves: CurveSet,
    /// Per-sequence headline numbers:
    /// `(name, precision@20, success@0.5, auc, mean IoU)`.
    pub per_sequence: Vec<(String, [f64; 4])>,
}

pub fn render_report(protocol: &str, entries: &[ReportEntry]) -> String {
    let mut s = String::new();
    s.push_str(REPORT_HEADER);
    s.push('\n');
    s.push_str(&format!(
        "protocol: {protocol}\nentries: {}\n",
        entries.len()
    ));
    for e in entries {
        s.push_str(&format!("\nentry: {}\n", e.name));
        s.push_str(&format!("sequences: {}\n", e.sequences));
        s.push_str(&format!(
            "precision_at_20: {:.6}\n",
            e.curves.precision_at_20
        ));
        s.push_str(&format!("success_at_0_5: {:.6}\n", e.curves.success_at_0_5));
        s.push_str(&format!("success_auc: {:.6}\n", e.curves.auc));
        s.push_str(&format!("mean_iou: {:.6}\n", e.curves.mean_iou));
        s.push_str("precision_curve:\n");
        for (t, v) in e.curves.precision.iter().enumerate() {
            s.push_str(&format!("{t} {v:.6}\n"));
        }
        s.push_str("success_curve:\n");
        for (i, v) in e.curves.success.iter().enumerate() {
            s.push_str(&format!(
                "{:.2} {v:.6}\n",
                quadtrack_core::eval::success_threshold(i)
            ));
        }
        for (name, h) in &e.per_sequence {
            s.push_str(&format!(
                "sequence: {name} {:.6} {:.6} {:.6} {:.6}\n",
                h[0], h[1], h[2], h[3]
            ));
        }
        s.push_str("end\n");
    }
    s
}

/// Build one report entry from an evaluation result.
pub fn entry_from_result(name: &str, result: &EvalResult) -> ReportEntry {
    ReportEntry {
        name: name.to_string(),
        sequences: result.per_sequence.len(),
        curves: result.aggregate.clone(),
        per_sequence: result
            .per_sequence
            .iter()
            .map(|(n, c)| {
                (
                    n.clone(),
                    [c.precision_at_20, c.success_at_0_5, c.auc, c.mean_iou],
                )
            })
            .collect(),
    }
}

pub fn parse_report(text: &str) -> Result<(String, Vec<ReportEntry>)> {
    let path = Path::new("<report>");
    let mut lines = text.lines().enumerate();
    let bad = |line: usize, msg: String| Error::parse(path, line + 1, msg);
    match lines.next() {
        Some((_, l)) if l == REPORT_HEADER => {}
        other => {
            return Err(bad(0, format!("missing report header (got {other:?})")));
        }
    }
    let mut protocol = String::new();
    let mut entries = Vec::new();
    let mut cur: Option<ReportEntry> = None;
    #[derive(PartialEq)]
    enum Section {
        Fields,
        Precision,
        Success,
    }
    let mut section = Section::Fields;
    for (i, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("protocol: ") {
            protocol = rest.to_string();
        } else if let Some(rest) = line.strip_prefix("entries: ") {
            let _: usize = rest.parse().map_err(|_| bad(i, "bad entry count".into()))?;
        } else if let Some(rest) = line.strip_prefix("entry: ") {
            cur = Some(ReportEntry {
                name: rest.to_string(),
                sequences: 0,
                curves: CurveSet {
                    precision: Vec::new(),
                    success: Vec::new(),
                    precision_at_20: 0.0,
                    success_at_0_5: 0.0,
                    auc: 0.0,
                    mean_iou: 0.0,
                },
                per_sequence: Vec::new(),
            });
            section = Section::Fields;
        } else if line == "precision_curve:" {
            section = Section::Precision;
        } else if line == "success_curve:" {
            section = Section::Success;
        } else if line == "end" {
            let e = cur
                .take()
                .ok_or_else(|| bad(i, "end without entry".into()))?;
            if e.curves.precision.len() != PRECISION_POINTS
                || e.curves.success.len() != SUCCESS_POINTS
            {
                return Err(bad(
                    i,
                    format!(
                        "entry `{}` has {} precision / {} success points",
                        e.name,
                        e.curves.precision.len(),
                        e.curves.success.len()
                    ),
                ));
            }
            entries.push(e);
            section = Section::Fields;
        } else if let Some(rest) = line.strip_prefix("sequence: ") {
            let e = cur
                .as_mut()
                .ok_or_else(|| bad(i, "sequence line outside entry".into()))?;
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 5 {
                return Err(bad(i, format!("malformed sequence line `{rest}`")));
            }
            let mut h = [0.0f64; 4];
            for (slot, p) in h.iter_mut().zip(&parts[1..]) {
                *slot = p.parse().map_err(|_| bad(i, format!("bad float `{p}`")))?;
            }
            e.per_sequence.push((parts[0].to_string(), h));
        } else if let Some(e) = cur.as_mut() {
            match section {
                Section::Fields => {
                    let (k, v) = line
                        .split_once(": ")
                        .ok_or_else(|| bad(i, format!("malformed field `{line}`")))?;
                    let fv = || -> Result<f64> {
                        v.parse().map_err(|_| bad(i, format!("bad float `{v}`")))
                    };
                    match k {
                        "sequences" => {
                            e.sequences =
                                v.parse().map_err(|_| bad(i, format!("bad count `{v}`")))?
                        }
                        "precision_at_20" => e.curves.precision_at_20 = fv()?,
                        "success_at_0_5" => e.curves.success_at_0_5 = fv()?,
                        "success_auc" => e.curves.auc = fv()?,
                        "mean_iou" => e.curves.mean_iou = fv()?,
                        other => return Err(bad(i, format!("unknown field `{other}`"))),
                    }
                }
                Section::Precision | Section::Success => {
                    let (_, v) = line
                        .split_once(' ')
                        .ok_or_else(|| bad(i, format!("malformed curve row `{line}`")))?;
                    let v: f64 = v.parse().map_err(|_| bad(i, format!("bad float `{v}`")))?;
                    if section == Section::Precision {
                        e.curves.precision.push(v);
                    } else {
                        e.curves.success.push(v);
                    }
                }
            }
        } else {
            return Err(bad(i, format!("unexpected line `{line}`")));
        }
    }
    if cur.is_some() {
        return Err(Error::Data("report ended mid-entry".into()));
    }
    Ok((protocol, entries))
}

pub fn write_report(path: &Path, protocol: &str, entries: &[ReportEntry]) -> Result<()> {
    std::fs::write(path, render_report(protocol, entries)).map_err(|e| Error::io(path, e))
}

/// Serialize a training report: one record per epoch plus a summary block.
/// Wall-clock time is logged, never written here.
pub fn render_train_report(r: &TrainReport) -> String {
    let mut s = String::new();
    s.push_str(TRAIN_HEADER);
    s.push('\n');
    for (i, e) in r.epochs.iter().enumerate() {
        s.push_str(&format!(
            "epoch {i}: loss={:.6} val_error={:.6} w1={:.6} w2={:.6} lr={:.8}\n",
            e.mean_train_loss, e.val_distance_error, e.weights[0], e.weights[1], e.learning_rate
        ));
    }
    s.push_str("summary:\n");
    s.push_str(&format!("epochs: {}\n", r.epochs.len()));
    s.push_str(&format!("best_epoch: {}\n", r.best_epoch));
    s.push_str(&format!("final_w1: {:.6}\n", r.final_weights[0]));
    s.push_str(&format!("final_w2: {:.6}\n", r.final_weights[1]));
    s.push_str(&format!("min_weight_seen: {:.6}\n", r.min_weight_seen));
    s.push_str("end\n");
    s
}

pub fn write_train_report(path: &Path, r: &TrainReport) -> Result<()> {
    std::fs::write(path, render_train_report(r)).map_err(|e| Error::io(path, e))
}
