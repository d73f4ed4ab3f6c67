//! Ingest, validate, persist, and group training-run records.
//!
//! The on-disk format is JSON lines, one run per line:
//!
//! ```text
//! {"run_id":"fs-n1e6-d1e7","curriculum":"from_scratch","pretrain_label":"",
//!  "n_params":1000000,"d_finetune":10000000,
//!  "checkpoints":[{"data_seen":1000000.0,"compute":6e12,"eval_loss":3.1}, ...]}
//! ```
//!
//! Export writes the same keys in the same order, so ingest → export is the
//! identity on file content. Dataset sizes are in characters throughout;
//! losses are nats per token; compute is floating-point operations.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Error, Result};

/// Dataset curriculum of a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Curriculum {
    FromScratch,
    Finetuned,
}

impl fmt::Display for Curriculum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Curriculum::FromScratch => write!(f, "from_scratch"),
            Curriculum::Finetuned => write!(f, "finetuned"),
        }
    }
}

/// One evaluation point along a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Characters processed so far.
    pub data_seen: f64,
    /// Floating-point operations so far, when tracked.
    pub compute: Option<f64>,
    /// Test loss in nats per token.
    pub eval_loss: f64,
}

/// One training run: curriculum, model size, dataset size, checkpoints.
///
/// `n_params` counts non-embedding parameters. `d_finetune` is the
/// fine-tuning dataset size in characters; for from-scratch runs it is the
/// training-set size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run_id: String,
    pub curriculum: Curriculum,
    pub pretrain_label: String,
    #[serde(deserialize_with = "de_u64_flexible")]
    pub n_params: u64,
    #[serde(deserialize_with = "de_u64_flexible")]
    pub d_finetune: u64,
    pub checkpoints: Vec<Checkpoint>,
}

/// Accept `1000000` or `1e6` for integer-valued fields.
fn de_u64_flexible<'de, D>(deserializer: D) -> std::result::Result<u64, D::Error>
where
    D: Deserializer<'de>,
{
    let v = serde_json::Value::deserialize(deserializer)?;
    match &v {
        serde_json::Value::Number(n) => {
            if let Some(u) = n.as_u64() {
                return Ok(u);
            }
            if let Some(f) = n.as_f64() {
                if f >= 0.0 && f.fract() == 0.0 && f <= 2f64.powi(53) {
                    return Ok(f as u64);
                }
            }
            Err(serde::de::Error::custom(format!(
                "expected a non-negative integer value, got {n}"
            )))
        }
        other => Err(serde::de::Error::custom(format!(
            "expected a number, got {other}"
        ))),
    }
}

impl RunRecord {
    /// Structural invariants enforced at ingest time. Ordering of
    /// `data_seen` is deliberately not enforced here so that
    /// [`validate_runs`] can report monotonicity violations instead of the
    /// record being rejected outright.
    pub fn check_structural(&self) -> std::result::Result<(), (String, String)> {
        if self.run_id.is_empty() {
            return Err(("run_id".into(), "must be non-empty".into()));
        }
        if self.n_params < 1 {
            return Err(("n_params".into(), "must be >= 1".into()));
        }
        if self.d_finetune < 1 {
            return Err(("d_finetune".into(), "must be >= 1".into()));
        }
        if self.checkpoints.is_empty() {
            return Err(("checkpoints".into(), "must be non-empty".into()));
        }
        for (i, c) in self.checkpoints.iter().enumerate() {
            if !c.eval_loss.is_finite() || c.eval_loss <= 0.0 {
                return Err((
                    format!("checkpoints[{i}].eval_loss"),
                    format!("must be finite and > 0, got {}", c.eval_loss),
                ));
            }
            if !c.data_seen.is_finite() || c.data_seen < 0.0 {
                return Err((
                    format!("checkpoints[{i}].data_seen"),
                    format!("must be finite and >= 0, got {}", c.data_seen),
                ));
            }
            if let Some(fl) = c.compute {
                if !fl.is_finite() || fl < 0.0 {
                    return Err((
                        format!("checkpoints[{i}].compute"),
                        format!("must be finite and >= 0, got {fl}"),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Best (minimum) loss achieved over the run.
    pub fn best_loss(&self) -> f64 {
        self.checkpoints
            .iter()
            .map(|c| c.eval_loss)
            .fold(f64::INFINITY, f64::min)
    }

    /// Index of the first checkpoint attaining the best loss.
    pub fn best_checkpoint_index(&self) -> usize {
        let best = self.best_loss();
        self.checkpoints
            .iter()
            .position(|c| c.eval_loss == best)
            .unwrap_or(0)
    }

    pub fn has_compute(&self) -> bool {
        self.checkpoints.iter().all(|c| c.compute.is_some())
    }
}

/// Where a run set came from.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct Provenance {
    pub sources: Vec<String>,
    /// Unix seconds at ingestion.
    pub ingested_at: u64,
}

/// A validated collection of runs with unique ids.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunSet {
    pub runs: Vec<RunRecord>,
    pub provenance: Provenance,
}

impl RunSet {
    /// Build a run set from in-memory records, enforcing id uniqueness and
    /// structural invariants.
    pub fn new(runs: Vec<RunRecord>, sources: Vec<String>) -> Result<Self> {
        let mut seen: BTreeMap<&str, usize> = BTreeMap::new();
        for (i, r) in runs.iter().enumerate() {
            if let Err((field, message)) = r.check_structural() {
                return Err(Error::MalformedLine {
                    line: i + 1,
                    field,
                    message,
                });
            }
            if let Some(&first) = seen.get(r.run_id.as_str()) {
                return Err(Error::DuplicateRunId {
                    run_id: r.run_id.clone(),
                    first_line: first + 1,
                    second_line: i + 1,
                });
            }
            seen.insert(&r.run_id, i);
        }
        Ok(RunSet {
            runs,
            provenance: Provenance {
                sources,
                ingested_at: SystemTime::now()
                    .duration_since(UNIX_EPOCH)
                    .map(|d| d.as_secs())
                    .unwrap_or(0),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.runs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.runs.is_empty()
    }

    pub fn from_scratch_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.curriculum == Curriculum::FromScratch)
    }

    pub fn finetuned_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs
            .iter()
            .filter(|r| r.curriculum == Curriculum::Finetuned)
    }
}

/// Parse a JSON-lines stream into a [`RunSet`].
///
/// Every line must parse as one [`RunRecord`]; a malformed line fails with
/// its line number and field, a repeated `run_id` fails naming both lines.
pub fn ingest_runs<R: Read>(reader: R, source: &str) -> Result<RunSet> {
    let reader = BufReader::new(reader);
    let mut runs: Vec<RunRecord> = Vec::new();
    let mut seen: BTreeMap<String, usize> = BTreeMap::new();

    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|e| Error::io(source, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut de = serde_json::Deserializer::from_str(&line);
        let record: RunRecord = serde_path_to_error::deserialize(&mut de).map_err(|e| {
            Error::MalformedLine {
                line: line_no,
                field: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        if let Err((field, message)) = record.check_structural() {
            return Err(Error::MalformedLine {
                line: line_no,
                field,
                message,
            });
        }
        if let Some(&first) = seen.get(&record.run_id) {
            return Err(Error::DuplicateRunId {
                run_id: record.run_id,
                first_line: first,
                second_line: line_no,
            });
        }
        seen.insert(record.run_id.clone(), line_no);
        runs.push(record);
    }

    let mut rs = RunSet::new(runs, vec![source.to_string()])?;
    rs.provenance.sources = vec![source.to_string()];
    Ok(rs)
}

/// Ingest from a file path.
pub fn ingest_runs_path(path: &Path) -> Result<RunSet> {
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    ingest_runs(file, &path.display().to_string())
}

/// Write a run set in the canonical JSON-lines format.
pub fn export_runs<W: Write>(rs: &RunSet, mut writer: W) -> Result<()> {
    for run in &rs.runs {
        let line = serde_json::to_string(run).expect("run records always serialize");
        writeln!(writer, "{line}").map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

/// Serialize a run set to a string in the canonical format.
pub fn export_runs_string(rs: &RunSet) -> String {
    let mut buf = Vec::new();
    export_runs(rs, &mut buf).expect("writing to memory cannot fail");
    String::from_utf8(buf).expect("json is utf-8")
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub struct ValidationConfig {
    /// A run counts as converged when its best loss improves by less than
    /// this relative amount over the final quarter of its checkpoints.
    pub convergence_rel_tol: f64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        ValidationConfig {
            convergence_rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FindingKind {
    DataSeenNotIncreasing,
    ComputeDecreasing,
    NonFiniteLoss,
    NotConverged,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Finding {
    pub run_id: String,
    pub kind: FindingKind,
    pub message: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValidationReport {
    pub runs_checked: usize,
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.findings.is_empty()
    }

    pub fn not_converged_run_ids(&self) -> Vec<&str> {
        self.findings
            .iter()
            .filter(|f| f.kind == FindingKind::NotConverged)
            .map(|f| f.run_id.as_str())
            .collect()
    }
}

/// Whether a run's best loss has stopped improving over its final quarter.
pub fn run_converged(run: &RunRecord, rel_tol: f64) -> bool {
    let n = run.checkpoints.len();
    if n < 2 {
        return true;
    }
    let mut best = Vec::with_capacity(n);
    let mut acc = f64::INFINITY;
    for c in &run.checkpoints {
        acc = acc.min(c.eval_loss);
        best.push(acc);
    }
    let tail_start = (n - 1) * 3 / 4;
    let l_start = best[tail_start];
    let l_end = best[n - 1];
    (l_start - l_end) / l_start < rel_tol
}

/// Report per-run data-quality findings. Nothing here is fatal; callers
/// decide what to do with flagged runs.
pub fn validate_runs(rs: &RunSet, config: &ValidationConfig) -> ValidationReport {
    let per_run: Vec<Vec<Finding>> = crate::exec::map_collect(&rs.runs, |run| {
        let mut findings = Vec::new();
        for w in run.checkpoints.windows(2) {
            if w[1].data_seen <= w[0].data_seen {
                findings.push(Finding {
                    run_id: run.run_id.clone(),
                    kind: FindingKind::DataSeenNotIncreasing,
                    message: format!(
                        "data_seen not strictly increasing: {} then {}",
                        w[0].data_seen, w[1].data_seen
                    ),
                });
            }
            if let (Some(a), Some(b)) = (w[0].compute, w[1].compute) {
                if b < a {
                    findings.push(Finding {
                        run_id: run.run_id.clone(),
                        kind: FindingKind::ComputeDecreasing,
                        message: format!("compute decreases: {a} then {b}"),
                    });
                }
            }
        }
        for (i, c) in run.checkpoints.iter().enumerate() {
            if !c.eval_loss.is_finite() || c.eval_loss <= 0.0 {
                findings.push(Finding {
                    run_id: run.run_id.clone(),
                    kind: FindingKind::NonFiniteLoss,
                    message: format!("checkpoint {i}: eval_loss {}", c.eval_loss),
                });
            }
        }
        if !run_converged(run, config.convergence_rel_tol) {
            findings.push(Finding {
                run_id: run.run_id.clone(),
                kind: FindingKind::NotConverged,
                message: format!(
                    "best loss still improving by >= {:.0e} relative over the final quarter",
                    config.convergence_rel_tol
                ),
            });
        }
        findings
    });

    ValidationReport {
        runs_checked: rs.runs.len(),
        findings: per_run.into_iter().flatten().collect(),
    }
}

// ---------------------------------------------------------------------------
// Loss curves
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    Data,
    Compute,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurveLevel {
    WithinRun,
    AcrossRuns,
}

/// Identifies the group a curve was built from.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CurveKey {
    pub curriculum: Curriculum,
    pub pretrain_label: String,
    pub n_params: u64,
    /// Set for within-run curves.
    pub run_id: Option<String>,
    /// Set for within-run curves.
    pub d_finetune: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub x: f64,
    pub loss: f64,
}

/// A cleaned monotone loss curve plus the raw points it came from.
///
/// Cleaned points are the running minimum of loss (non-increasing) at
/// strictly increasing axis values; duplicated axis values keep the lower
/// loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LossCurve {
    pub key: CurveKey,
    pub axis: Axis,
    pub points: Vec<CurvePoint>,
    pub raw: Vec<CurvePoint>,
}

impl LossCurve {
    pub fn min_loss(&self) -> f64 {
        self.points.last().map(|p| p.loss).unwrap_or(f64::NAN)
    }

    pub fn max_loss(&self) -> f64 {
        self.points.first().map(|p| p.loss).unwrap_or(f64::NAN)
    }
}

/// Sort by x, collapse duplicate x to the lower loss, then take the running
/// minimum of loss.
pub(crate) fn clean_points(mut pts: Vec<CurvePoint>) -> Vec<CurvePoint> {
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.loss.total_cmp(&b.loss)));
    let mut cleaned: Vec<CurvePoint> = Vec::with_capacity(pts.len());
    for p in pts {
        match cleaned.last_mut() {
            Some(last) if last.x == p.x => {
                last.loss = last.loss.min(p.loss);
            }
            _ => cleaned.push(p),
        }
    }
    let mut running = f64::INFINITY;
    for p in &mut cleaned {
        running = running.min(p.loss);
        p.loss = running;
    }
    cleaned
}

/// Per-group report entry for groups that could not produce a curve.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SkippedGroup {
    pub key: CurveKey,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct CurveSet {
    pub curves: Vec<LossCurve>,
    pub skipped: Vec<SkippedGroup>,
}

/// Build loss curves from a run set.
///
/// * `WithinRun` — one curve per run over its checkpoints, against data seen
///   or compute.
/// * `AcrossRuns` — for each (curriculum, pretrain_label, n_params) group,
///   best achieved loss per run against `d_finetune` (data axis) or against
///   the compute spent reaching the best loss (compute axis).
pub fn build_curves(rs: &RunSet, axis: Axis, level: CurveLevel) -> Result<CurveSet> {
    match level {
        CurveLevel::WithinRun => build_within_run(rs, axis),
        CurveLevel::AcrossRuns => build_across_runs(rs, axis),
    }
}

fn build_within_run(rs: &RunSet, axis: Axis) -> Result<CurveSet> {
    let curves = crate::exec::try_map_collect(&rs.runs, |run| {
        let raw: Vec<CurvePoint> = match axis {
            Axis::Data => run
                .checkpoints
                .iter()
                .map(|c| CurvePoint {
                    x: c.data_seen,
                    loss: c.eval_loss,
                })
                .collect(),
            Axis::Compute => {
                if !run.has_compute() {
                    return Err(Error::MissingCompute {
                        run_id: run.run_id.clone(),
                    });
                }
                run.checkpoints
                    .iter()
                    .map(|c| CurvePoint {
                        x: c.compute.expect("checked above"),
                        loss: c.eval_loss,
                    })
                    .collect()
            }
        };
        Ok(LossCurve {
            key: CurveKey {
                curriculum: run.curriculum,
                pretrain_label: run.pretrain_label.clone(),
                n_params: run.n_params,
                run_id: Some(run.run_id.clone()),
                d_finetune: Some(run.d_finetune),
            },
            axis,
            points: clean_points(raw.clone()),
            raw,
        })
    })?;
    Ok(CurveSet {
        curves,
        skipped: Vec::new(),
    })
}

fn build_across_runs(rs: &RunSet, axis: Axis) -> Result<CurveSet> {
    let mut groups: BTreeMap<(Curriculum, String, u64), Vec<&RunRecord>> = BTreeMap::new();
    for run in &rs.runs {
        groups
            .entry((run.curriculum, run.pretrain_label.clone(), run.n_params))
            .or_default()
            .push(run);
    }

    let mut curves = Vec::new();
    let mut skipped = Vec::new();
    for ((curriculum, pretrain_label, n_params), runs) in groups {
        let key = CurveKey {
            curriculum,
            pretrain_label,
            n_params,
            run_id: None,
            d_finetune: None,
        };
        let mut raw = Vec::with_capacity(runs.len());
        let mut missing_compute = None;
        for run in &runs {
            let x = match axis {
                Axis::Data => run.d_finetune as f64,
                Axis::Compute => {
                    if !run.has_compute() {
                        missing_compute = Some(run.run_id.clone());
                        break;
                    }
                    run.checkpoints[run.best_checkpoint_index()]
                        .compute
                        .expect("checked above")
                }
            };
            raw.push(CurvePoint {
                x,
                loss: run.best_loss(),
            });
        }
        if let Some(run_id) = missing_compute {
            return Err(Error::MissingCompute { run_id });
        }
        if raw.is_empty() {
            skipped.push(SkippedGroup {
                key,
                reason: "group has no usable runs".into(),
            });
            continue;
        }
        curves.push(LossCurve {
            key,
            axis,
            points: clean_points(raw.clone()),
            raw,
        });
    }
    Ok(CurveSet { curves, skipped })
}
