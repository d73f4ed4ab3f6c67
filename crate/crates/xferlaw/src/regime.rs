//! Data regimes: how much data a model size needs, and where pre-training
//! stops helping.
//!
//! `d_of_n(n)` is the dataset size at which a model of size `n` reaches 99%
//! of its infinite-data performance (the loss at `d_of_n` times 0.99 equals
//! the infinite-data loss). A fine-tuning set at 10% or less of `d_of_n`
//! is the low-data regime; at or beyond `d_of_n` is the high-data regime,
//! where pre-training can reduce effective data below the fine-tuning set
//! itself (negative transfer).

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::curve_fit::{fit_loglog_line, fit_powerlaw_plus_const};
use crate::effective_data::EffectiveDataRow;
use crate::error::{Error, Result};
use crate::run_store::LossCurve;

/// Power-law model of data needs: `d_of_n(n) = coefficient * n^exponent`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DNFit {
    pub coefficient: f64,
    pub exponent: f64,
    pub per_n_points: Vec<DnPoint>,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DnPoint {
    pub n_params: u64,
    pub d_of_n: f64,
}

impl DNFit {
    pub fn d_of_n(&self, n_params: f64) -> f64 {
        self.coefficient * n_params.powf(self.exponent)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DnSkip {
    pub n_params: u64,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct DnEstimate {
    pub fit: DNFit,
    /// Model sizes whose curve could not support a solve.
    pub skipped: Vec<DnSkip>,
}

#[derive(Debug, Clone, Copy)]
pub struct DnConfig {
    /// Fraction of infinite-data performance defining "enough data".
    pub performance_fraction: f64,
}

impl Default for DnConfig {
    fn default() -> Self {
        // from-scratch convention; fine-tuned intersections conventionally
        // use 0.95
        DnConfig {
            performance_fraction: 0.99,
        }
    }
}

impl DnConfig {
    pub fn finetuned() -> Self {
        DnConfig {
            performance_fraction: 0.95,
        }
    }
}

/// Solve `performance_fraction * loss(d) = floor` on a fitted
/// power-law-plus-constant curve.
fn solve_d_threshold(floor: f64, scale: f64, exponent: f64, q: f64) -> Result<f64> {
    if floor <= 0.0 {
        return Err(Error::InvalidParameter(format!(
            "fitted floor must be positive, got {floor}"
        )));
    }
    if exponent <= 1e-3 {
        return Err(Error::InvalidParameter(format!(
            "fitted exponent {exponent} too small to invert"
        )));
    }
    // (scale/d)^exponent = floor * (1/q - 1)
    let excess = floor * (1.0 / q - 1.0);
    let d = scale * excess.powf(-1.0 / exponent);
    if d.is_finite() && d > 0.0 {
        Ok(d)
    } else {
        Err(Error::InvalidParameter(format!(
            "threshold solve produced {d}"
        )))
    }
}

/// Estimate data needs per model size from from-scratch across-run curves.
///
/// Each curve with at least 4 points is fit as loss = floor +
/// (scale/d)^exponent, the threshold dataset size is solved in closed form,
/// and a log-log line over `(n, d_of_n)` gives the power law. Degenerate
/// curves (flat, or with an uninvertible power term) are skipped with a
/// reason; at least two usable sizes are required.
pub fn estimate_dn(curves: &[LossCurve], config: &DnConfig) -> Result<DnEstimate> {
    let q = config.performance_fraction;
    if !(0.0 < q && q < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "performance fraction must be in (0, 1), got {q}"
        )));
    }

    let results = crate::exec::map_collect(curves, |curve| {
        let n = curve.key.n_params;
        if curve.points.len() < 4 {
            return (
                n,
                Err(Error::InsufficientData(format!(
                    "curve for n_params={n} has {} points; need >= 4",
                    curve.points.len()
                ))),
            );
        }
        let pts: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.x, p.loss)).collect();
        let spread = (curve.max_loss() - curve.min_loss()) / curve.min_loss();
        if spread < 1e-9 {
            return (
                n,
                Err(Error::DegenerateCurve {
                    n_params: n,
                    reason: "curve is flat; no power term to invert".into(),
                }),
            );
        }
        let fit = match fit_powerlaw_plus_const(&pts) {
            Ok(f) => f,
            Err(e) => return (n, Err(e)),
        };
        let d = solve_d_threshold(fit.floor, fit.scale, fit.exponent, q).map_err(|e| {
            Error::DegenerateCurve {
                n_params: n,
                reason: e.to_string(),
            }
        });
        (n, d)
    });

    let mut per_n_points = Vec::new();
    let mut skipped = Vec::new();
    for (n, res) in results {
        match res {
            Ok(d) => per_n_points.push(DnPoint {
                n_params: n,
                d_of_n: d,
            }),
            Err(e) => skipped.push(DnSkip {
                n_params: n,
                reason: e.to_string(),
            }),
        }
    }
    per_n_points.sort_by_key(|p| p.n_params);

    if per_n_points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "d(n) fit needs >= 2 usable model sizes, got {} ({} skipped)",
            per_n_points.len(),
            skipped.len()
        )));
    }

    let line_pts: Vec<(f64, f64)> = per_n_points
        .iter()
        .map(|p| (p.n_params as f64, p.d_of_n))
        .collect();
    let line = fit_loglog_line(&line_pts)?;
    if line.exponent <= 0.0 {
        return Err(Error::InvalidCoefficients(format!(
            "d(n) exponent must be positive, got {}",
            line.exponent
        )));
    }

    Ok(DnEstimate {
        fit: DNFit {
            coefficient: 10f64.powf(line.log10_intercept),
            exponent: line.exponent,
            per_n_points,
        },
        skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegimeClass {
    Low,
    Medium,
    High,
}

impl std::fmt::Display for RegimeClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RegimeClass::Low => write!(f, "low"),
            RegimeClass::Medium => write!(f, "medium"),
            RegimeClass::High => write!(f, "high"),
        }
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RegimeLabel {
    pub value: RegimeClass,
    /// `d_finetune / d_of_n(n_params)`
    pub ratio: f64,
}

/// Classify a dataset size against the data needs of a model size.
/// The low boundary is inclusive: a ratio of exactly 0.10 is low.
pub fn classify_regime(d_finetune: f64, n_params: f64, dn: &DNFit) -> RegimeLabel {
    let ratio = d_finetune / dn.d_of_n(n_params);
    let value = if ratio <= 0.10 {
        RegimeClass::Low
    } else if ratio >= 1.0 {
        RegimeClass::High
    } else {
        RegimeClass::Medium
    };
    RegimeLabel { value, ratio }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OssifiedRow {
    pub run_id: String,
    pub n_params: u64,
    pub d_finetune: u64,
    pub d_transferred: f64,
    pub regime: RegimeLabel,
    pub dt_over_dn: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegimeSummary {
    pub regime: RegimeClass,
    pub rows: usize,
    pub ossified_rows: usize,
    pub mean_dt_over_dn: f64,
}

/// Negative-transfer report: which rows pre-training actively hurt, and
/// the normalized transfer per regime.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OssificationReport {
    pub ossified: Vec<OssifiedRow>,
    pub non_ossified_run_ids: Vec<String>,
    pub summary: Vec<RegimeSummary>,
}

/// Partition table rows into ossified (negative transfer) and the rest,
/// and summarize normalized transfer by regime. Rows without a computed
/// transfer value count as non-ossified.
pub fn ossification_report(table: &[EffectiveDataRow], dn: &DNFit) -> OssificationReport {
    let mut ossified = Vec::new();
    let mut non_ossified_run_ids = Vec::new();
    let mut by_regime: BTreeMap<RegimeClass, (usize, usize, f64)> = BTreeMap::new();

    for row in table {
        let regime = classify_regime(row.d_finetune as f64, row.n_params as f64, dn);
        match row.d_transferred {
            Some(dt) => {
                let dt_over_dn = dt / dn.d_of_n(row.n_params as f64);
                let entry = by_regime.entry(regime.value).or_insert((0, 0, 0.0));
                entry.0 += 1;
                entry.2 += dt_over_dn;
                if dt < 0.0 {
                    entry.1 += 1;
                    ossified.push(OssifiedRow {
                        run_id: row.run_id.clone(),
                        n_params: row.n_params,
                        d_finetune: row.d_finetune,
                        d_transferred: dt,
                        regime,
                        dt_over_dn,
                    });
                } else {
                    non_ossified_run_ids.push(row.run_id.clone());
                }
            }
            None => {
                let entry = by_regime.entry(regime.value).or_insert((0, 0, 0.0));
                entry.0 += 1;
                non_ossified_run_ids.push(row.run_id.clone());
            }
        }
    }

    let summary = by_regime
        .into_iter()
        .map(|(regime, (rows, ossified_rows, sum))| RegimeSummary {
            regime,
            rows,
            ossified_rows,
            mean_dt_over_dn: if rows > 0 { sum / rows as f64 } else { 0.0 },
        })
        .collect();

    OssificationReport {
        ossified,
        non_ossified_run_ids,
        summary,
    }
}

/// CSV export of the ossified rows.
pub fn write_ossification_csv<W: Write>(report: &OssificationReport, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "run_id",
        "n_params",
        "d_finetune",
        "d_transferred",
        "ratio",
        "regime",
        "dt_over_dn",
    ])
    .map_err(|e| Error::io("<csv>", std::io::Error::other(e)))?;
    for r in &report.ossified {
        w.write_record([
            r.run_id.clone(),
            r.n_params.to_string(),
            r.d_finetune.to_string(),
            r.d_transferred.to_string(),
            r.regime.ratio.to_string(),
            r.regime.value.to_string(),
            r.dt_over_dn.to_string(),
        ])
        .map_err(|e| Error::io("<csv>", std::io::Error::other(e)))?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
