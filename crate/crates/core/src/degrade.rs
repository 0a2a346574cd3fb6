//! The degradation-test protocol: stratified training subsets at p%, and
//! the three derived metrics —
//!
//! * accuracy degradation `AD_p = acc_100 − acc_p`,
//! * degradation percentage `DP_p = AD_p / acc_100 × 100`,
//! * degradation speed = population standard deviation of the DPs
//!
//! — plus CSV record I/O and table rendering. Records may come from any
//! trainer; this module only does arithmetic on them, so an external
//! model's results and the built-in baseline flow through the same path.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs::File;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pairgen::{Label, NLIPair};

/// One measured run: a model trained at `data_pct` percent of the training
/// split, scored on the untouched test split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegradationRecord {
    pub model: String,
    pub data_pct: f64,
    pub test_loss: f64,
    pub test_acc: f64,
}

impl DegradationRecord {
    pub fn validate(&self) -> Result<()> {
        if self.model.is_empty() {
            return Err(Error::Data("record with empty model name".into()));
        }
        if !(self.data_pct > 0.0 && self.data_pct <= 100.0) {
            return Err(Error::Data(format!(
                "data_pct {} outside (0, 100] for model {:?}",
                self.data_pct, self.model
            )));
        }
        if !(self.test_loss >= 0.0 && self.test_loss.is_finite()) {
            return Err(Error::Data(format!(
                "test_loss {} invalid for model {:?}",
                self.test_loss, self.model
            )));
        }
        if !(0.0..=100.0).contains(&self.test_acc) {
            return Err(Error::Data(format!(
                "test_acc {} outside [0, 100] for model {:?}",
                self.test_acc, self.model
            )));
        }
        Ok(())
    }
}

/// A non-100% row of the report with its derived metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub data_pct: f64,
    pub test_loss: f64,
    pub test_acc: f64,
    pub acc_degradation: f64,
    pub degradation_pct: f64,
}

/// Per-model section of the report, rows in descending data_pct order.
/// `speed` is present once the model has at least two degradation rows.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelReport {
    pub model: String,
    pub loss_100: f64,
    pub acc_100: f64,
    pub rows: Vec<ReportRow>,
    pub speed: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DegradationReport {
    pub models: Vec<ModelReport>,
}

/// Accuracy lost relative to the full-data run; positive means worse.
pub fn accuracy_degradation(acc_100: f64, acc_p: f64) -> f64 {
    acc_100 - acc_p
}

/// Share of full performance lost, as a percentage of `acc_100`.
pub fn degradation_percentage(ad: f64, acc_100: f64) -> Result<f64> {
    if acc_100 <= 0.0 {
        return Err(Error::Data(format!(
            "degradation percentage undefined for acc_100 = {acc_100}"
        )));
    }
    Ok(ad / acc_100 * 100.0)
}

/// Population (÷N) standard deviation of the degradation percentages.
/// The ÷N form is what reproduces the published speed figures.
pub fn degradation_speed(dps: &[f64]) -> Result<f64> {
    if dps.len() < 2 {
        return Err(Error::Data(format!(
            "degradation speed needs >= 2 values, got {}",
            dps.len()
        )));
    }
    let n = dps.len() as f64;
    let mean = dps.iter().sum::<f64>() / n;
    let variance = dps.iter().map(|dp| (dp - mean).powi(2)).sum::<f64>() / n;
    Ok(variance.sqrt())
}

/// Keeps `round(len × pct / 100)` training pairs, seeded and without
/// replacement. Stratified (the default) rounds each label's share and
/// reconciles any off-by-one toward the total at the larger label's
/// expense.
pub fn subsample_train(
    train: &[NLIPair],
    pct: f64,
    seed: u64,
    stratify: bool,
) -> Result<Vec<NLIPair>> {
    if !(pct > 0.0 && pct <= 100.0) {
        return Err(Error::Config(format!(
            "subsample percentage {pct} outside (0, 100]"
        )));
    }
    let total = ((train.len() as f64) * pct / 100.0).round() as usize;
    let total = total.min(train.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    if !stratify {
        let mut indices: Vec<usize> = (0..train.len()).collect();
        indices.shuffle(&mut rng);
        indices.truncate(total);
        return Ok(indices.into_iter().map(|i| train[i].clone()).collect());
    }

    let mut by_label: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
    for (i, pair) in train.iter().enumerate() {
        let slot = match pair.label {
            Label::Entailment => 0,
            Label::Contradiction => 1,
        };
        by_label[slot].push(i);
    }
    let mut targets: [usize; 2] = [0, 1].map(|slot| {
        let share = (by_label[slot].len() as f64) * pct / 100.0;
        (share.round() as usize).min(by_label[slot].len())
    });
    // Rounding both shares can miss the total by one in either direction;
    // adjust the larger target (ties resolve to the entailment slot).
    while targets[0] + targets[1] > total {
        let slot = if targets[1] > targets[0] { 1 } else { 0 };
        targets[slot] -= 1;
    }
    while targets[0] + targets[1] < total {
        let candidates: Vec<usize> = (0..2)
            .filter(|&slot| targets[slot] < by_label[slot].len())
            .collect();
        let &slot = candidates
            .iter()
            .max_by_key(|&&slot| (targets[slot], 1 - slot))
            .expect("total <= len guarantees headroom");
        targets[slot] += 1;
    }

    let mut selected = Vec::with_capacity(total);
    for slot in 0..2 {
        by_label[slot].shuffle(&mut rng);
        selected.extend(by_label[slot].iter().take(targets[slot]).copied());
    }
    selected.shuffle(&mut rng);
    Ok(selected.into_iter().map(|i| train[i].clone()).collect())
}

/// Derives the full report from a record set. Models appear in first-seen
/// order, rows in descending data_pct; every model must have a 100% record
/// and records must be unique per (model, data_pct).
pub fn build_report(records: &[DegradationRecord]) -> Result<DegradationReport> {
    let mut model_order: Vec<&str> = Vec::new();
    let mut seen_keys: HashSet<(String, u64)> = HashSet::new();
    for record in records {
        record.validate()?;
        if !seen_keys.insert((record.model.clone(), record.data_pct.to_bits())) {
            return Err(Error::Data(format!(
                "duplicate record for model {:?} at {}%",
                record.model, record.data_pct
            )));
        }
        if !model_order.contains(&record.model.as_str()) {
            model_order.push(&record.model);
        }
    }

    let mut models = Vec::with_capacity(model_order.len());
    for model in model_order {
        let mut rows: Vec<&DegradationRecord> =
            records.iter().filter(|r| r.model == model).collect();
        rows.sort_by(|a, b| b.data_pct.partial_cmp(&a.data_pct).unwrap());
        let full = rows
            .iter()
            .find(|r| r.data_pct == 100.0)
            .ok_or_else(|| {
                Error::Data(format!("model {model:?} has no 100% record"))
            })?;
        let (loss_100, acc_100) = (full.test_loss, full.test_acc);

        let mut report_rows = Vec::new();
        for record in rows.iter().filter(|r| r.data_pct != 100.0) {
            let ad = accuracy_degradation(acc_100, record.test_acc);
            let dp = degradation_percentage(ad, acc_100)?;
            report_rows.push(ReportRow {
                data_pct: record.data_pct,
                test_loss: record.test_loss,
                test_acc: record.test_acc,
                acc_degradation: ad,
                degradation_pct: dp,
            });
        }
        let dps: Vec<f64> = report_rows.iter().map(|r| r.degradation_pct).collect();
        let speed = degradation_speed(&dps).ok();
        models.push(ModelReport {
            model: model.to_string(),
            loss_100,
            acc_100,
            rows: report_rows,
            speed,
        });
    }
    Ok(DegradationReport { models })
}

/// Rounds to 2 decimals, halves away from zero, with no negative zero.
pub fn round2(x: f64) -> f64 {
    let r = (x * 100.0).round() / 100.0;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

/// Renders a metric exactly as the tables print it.
pub fn format_metric(x: f64) -> String {
    format!("{:.2}", round2(x))
}

/// Table flavor: `Formula` prints AD with the formula's sign (positive =
/// degraded); `Paper` negates it, matching the published table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TableStyle {
    #[default]
    Formula,
    Paper,
}

impl TableStyle {
    pub fn parse(s: &str) -> Result<TableStyle> {
        match s {
            "formula" => Ok(TableStyle::Formula),
            "paper" => Ok(TableStyle::Paper),
            other => Err(Error::Config(format!(
                "unknown table style {other:?} (expected formula|paper)"
            ))),
        }
    }
}

fn fmt_pct(pct: f64) -> String {
    if pct.fract() == 0.0 {
        format!("{pct:.0}")
    } else {
        format!("{pct}")
    }
}

/// Report rows as CSV: `model,data_pct,test_loss,test_acc,acc_deg,deg_pct,
/// deg_speed`. Metric cells hold full-precision values for downstream
/// arithmetic; 100% rows leave the derived columns empty, and the speed
/// repeats on each non-100% row of its model.
pub fn report_to_csv(report: &DegradationReport) -> String {
    let mut out = String::from("model,data_pct,test_loss,test_acc,acc_deg,deg_pct,deg_speed\n");
    let escape = |s: &str| {
        if s.contains([',', '"', '\n']) {
            format!("\"{}\"", s.replace('"', "\"\""))
        } else {
            s.to_string()
        }
    };
    for model in &report.models {
        let _ = writeln!(
            out,
            "{},100,{},{},,,",
            escape(&model.model),
            model.loss_100,
            model.acc_100
        );
        for row in &model.rows {
            let speed = model.speed.map(|s| s.to_string()).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{}",
                escape(&model.model),
                fmt_pct(row.data_pct),
                row.test_loss,
                row.test_acc,
                row.acc_degradation,
                row.degradation_pct,
                speed
            );
        }
    }
    out
}

/// Plain-text or markdown table mirroring the published layout: one row
/// per (model, data %), derived columns on the non-100% rows, speed on
/// each model's last row.
pub fn render_report(report: &DegradationReport, style: TableStyle, markdown: bool) -> String {
    let header = [
        "Model",
        "Data %",
        "Test Loss",
        "Test Acc",
        "Acc. Deg.",
        "Deg. %",
        "Deg. Speed",
    ];
    let mut rows: Vec<[String; 7]> = Vec::new();
    for model in &report.models {
        rows.push([
            model.model.clone(),
            "100".into(),
            format!("{:.4}", model.loss_100),
            format_metric(model.acc_100),
            String::new(),
            String::new(),
            String::new(),
        ]);
        for (i, row) in model.rows.iter().enumerate() {
            let ad = match style {
                TableStyle::Formula => row.acc_degradation,
                TableStyle::Paper => -row.acc_degradation,
            };
            let is_last = i + 1 == model.rows.len();
            rows.push([
                String::new(),
                fmt_pct(row.data_pct),
                format!("{:.4}", row.test_loss),
                format_metric(row.test_acc),
                format_metric(ad),
                format_metric(row.degradation_pct),
                match (is_last, model.speed) {
                    (true, Some(speed)) => format_metric(speed),
                    _ => String::new(),
                },
            ]);
        }
    }

    let widths: Vec<usize> = (0..7)
        .map(|c| {
            rows.iter()
                .map(|r| r[c].len())
                .chain(std::iter::once(header[c].len()))
                .max()
                .unwrap()
        })
        .collect();
    let mut out = String::new();
    let render_line = |cells: &[String; 7], out: &mut String| {
        if markdown {
            let padded: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(c, cell)| format!("{:width$}", cell, width = widths[c]))
                .collect();
            let _ = writeln!(out, "| {} |", padded.join(" | "));
        } else {
            let padded: Vec<String> = cells
                .iter()
                .enumerate()
                .map(|(c, cell)| format!("{:width$}", cell, width = widths[c]))
                .collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        }
    };
    let header_cells: [String; 7] = header.map(String::from);
    render_line(&header_cells, &mut out);
    if markdown {
        let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
        let _ = writeln!(out, "|-{}-|", rule.join("-|-"));
    } else {
        let total: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
        let _ = writeln!(out, "{}", "-".repeat(total));
    }
    for row in &rows {
        render_line(row, &mut out);
    }
    out
}

/// Writes records as `model,data_pct,test_loss,test_acc` CSV.
pub fn write_records_csv(path: &Path, records: &[DegradationRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    for record in records {
        writer
            .serialize(record)
            .map_err(|e| Error::Data(format!("writing record: {e}")))?;
    }
    writer
        .flush()
        .map_err(|e| Error::io(path, e.into()))
}

/// Reads records written by [`write_records_csv`] (or by hand), validating
/// each row.
pub fn load_records_csv(path: &Path) -> Result<Vec<DegradationRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let mut records = Vec::new();
    for (idx, row) in reader.deserialize::<DegradationRecord>().enumerate() {
        let record = row.map_err(|e| Error::MalformedRecord {
            line: idx + 2, // header is line 1
            message: e.to_string(),
        })?;
        record.validate()?;
        records.push(record);
    }
    Ok(records)
}
