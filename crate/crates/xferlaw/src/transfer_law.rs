//! The transfer law `d_transferred = k * d_finetune^alpha * n^beta` and its
//! fitting procedures.
//!
//! `alpha` measures how close the pre-training distribution is to the
//! target (smaller is closer), `beta` how the architecture generalizes on
//! the target as it grows. Two fitters are provided: the staged
//! fit-of-fits over per-dataset-size saturation curves, and a direct
//! log-space regression used as a cross-check.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::curve_fit::{fit_logit_saturation, fit_loglog_line, FitResult};
use crate::effective_data::EffectiveDataRow;
use crate::error::{Error, Result};

/// Reference coefficients for transfer from natural-language text to
/// python.
pub fn text_to_python() -> TransferCoefficients {
    TransferCoefficients {
        k: 1.9e4,
        alpha: 0.18,
        beta: 0.38,
        per_df_nstar: Vec::new(),
        diagnostics: None,
    }
}

/// Reference coefficients for transfer from an equal mix of text and
/// non-python code to python.
pub fn text_code_mix_to_python() -> TransferCoefficients {
    TransferCoefficients {
        k: 2.1e5,
        alpha: 0.096,
        beta: 0.38,
        per_df_nstar: Vec::new(),
        diagnostics: None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DfNstar {
    pub d_finetune: u64,
    pub n_star: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferDiagnostics {
    pub method: String,
    pub stage1: Vec<FitResult>,
    pub stage2: Vec<FitResult>,
    pub stage3: Option<FitResult>,
    pub warnings: Vec<String>,
    pub rows_used: usize,
    pub rows_excluded: usize,
}

/// Fitted (or supplied) transfer-law coefficients.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TransferCoefficients {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Saturation midpoints per fine-tuning dataset size, from the
    /// fit-of-fits.
    #[serde(default)]
    pub per_df_nstar: Vec<DfNstar>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostics: Option<TransferDiagnostics>,
}

impl TransferCoefficients {
    pub fn new(k: f64, alpha: f64, beta: f64) -> Result<Self> {
        let c = TransferCoefficients {
            k,
            alpha,
            beta,
            per_df_nstar: Vec::new(),
            diagnostics: None,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.k > 0.0
            && self.k.is_finite()
            && (0.0..1.0).contains(&self.alpha)
            && self.beta > 0.0
            && self.beta < 1.0
            && self.per_df_nstar.iter().all(|p| p.n_star > 0.0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoefficients(format!(
                "transfer coefficients out of domain: k={} (>0), alpha={} (in [0,1)), \
                 beta={} (in (0,1))",
                self.k, self.alpha, self.beta
            )))
        }
    }
}

/// Effective data transferred at model size `n_params` and fine-tuning
/// dataset size `d_finetune` (both >= 1).
pub fn evaluate_transfer(c: &TransferCoefficients, n_params: f64, d_finetune: f64) -> f64 {
    debug_assert!(n_params >= 1.0 && d_finetune >= 1.0);
    c.k * d_finetune.powf(c.alpha) * n_params.powf(c.beta)
}

/// How much pre-training multiplies the fine-tuning dataset.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Multiplier {
    /// `(d_finetune + d_transferred) / d_finetune`
    pub exact: f64,
    /// `k * n^beta / d_finetune^(1-alpha)`, the low-data approximation
    pub approximate: f64,
}

pub fn effective_multiplier(
    c: &TransferCoefficients,
    n_params: f64,
    d_finetune: f64,
) -> Multiplier {
    let d_t = evaluate_transfer(c, n_params, d_finetune);
    Multiplier {
        exact: (d_finetune + d_t) / d_finetune,
        approximate: c.k * n_params.powf(c.beta) / d_finetune.powf(1.0 - c.alpha),
    }
}

/// Rows usable for fitting: positive transfer with a fraction strictly
/// inside (0, 1).
fn usable_rows(table: &[EffectiveDataRow]) -> (Vec<&EffectiveDataRow>, usize) {
    let mut usable: Vec<&EffectiveDataRow> = table
        .iter()
        .filter(|r| {
            matches!((r.d_transferred, r.fraction), (Some(dt), Some(f))
                if dt > 0.0 && f > 0.0 && f < 1.0)
        })
        .collect();
    let excluded = table.len() - usable.len();
    // deterministic fit regardless of input row order
    usable.sort_by(|a, b| {
        (a.d_finetune, a.n_params, &a.run_id).cmp(&(b.d_finetune, b.n_params, &b.run_id))
    });
    (usable, excluded)
}

/// Staged fit of the transfer law.
///
/// Stage 1 fits a logit saturation curve per fine-tuning dataset size.
/// Stage 2 fixes the shared model-size exponent to the mean of the
/// per-group exponents (or `common_beta`) and refits each group's
/// midpoint. Stage 3 fits a log-log line to the midpoints, from
/// `n_star = (d_finetune^(1-alpha) / k)^(1/beta)`. Every dataset size
/// carries equal weight.
pub fn fit_transfer_fit_of_fits(
    table: &[EffectiveDataRow],
    common_beta: Option<f64>,
) -> Result<TransferCoefficients> {
    let (usable, rows_excluded) = usable_rows(table);
    let mut groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &usable {
        groups
            .entry(row.d_finetune)
            .or_default()
            .push((row.n_params as f64, row.fraction.expect("filtered")));
    }
    if groups.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "fit-of-fits needs >= 2 distinct d_finetune groups, got {}",
            groups.len()
        )));
    }
    for (&df, pts) in &groups {
        if pts.len() < 2 {
            return Err(Error::GroupTooSmall {
                d_finetune: df,
                count: pts.len(),
            });
        }
    }

    let group_list: Vec<(u64, Vec<(f64, f64)>)> = groups.into_iter().collect();

    // stage 1: free exponent per group
    let stage1 = crate::exec::try_map_collect(&group_list, |(_, pts)| {
        fit_logit_saturation(pts, None)
    })?;

    let mut warnings = Vec::new();
    let exponents: Vec<f64> = stage1.iter().map(|f| f.exponent).collect();
    let spread = exponents.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        - exponents.iter().cloned().fold(f64::INFINITY, f64::min);
    if spread > 0.15 {
        warnings.push(format!(
            "per-group saturation exponents spread {spread:.3} > 0.15; \
             a shared exponent may be strained"
        ));
    }

    let beta = common_beta
        .unwrap_or_else(|| exponents.iter().sum::<f64>() / exponents.len() as f64);

    // stage 2: refit midpoints with the shared exponent
    let stage2 = crate::exec::try_map_collect(&group_list, |(_, pts)| {
        fit_logit_saturation(pts, Some(beta))
    })?;

    let per_df_nstar: Vec<DfNstar> = group_list
        .iter()
        .zip(&stage2)
        .map(|((df, _), fit)| DfNstar {
            d_finetune: *df,
            n_star: fit.n_star,
        })
        .collect();

    // stage 3: n_star = (d_finetune^(1-alpha) / k)^(1/beta)
    //   log10 n_star = ((1-alpha) log10 d_finetune - log10 k) / beta
    let nstar_points: Vec<(f64, f64)> = per_df_nstar
        .iter()
        .map(|p| (p.d_finetune as f64, p.n_star))
        .collect();
    let line = fit_loglog_line(&nstar_points)?;
    let alpha = 1.0 - line.exponent * beta;
    let k = 10f64.powf(-line.log10_intercept * beta);

    let coefficients = TransferCoefficients {
        k,
        alpha,
        beta,
        per_df_nstar,
        diagnostics: Some(TransferDiagnostics {
            method: "fit_of_fits".into(),
            stage1: stage1.into_iter().map(|f| f.fit).collect(),
            stage2: stage2.into_iter().map(|f| f.fit).collect(),
            stage3: Some(line.fit),
            warnings,
            rows_used: usable.len(),
            rows_excluded,
        }),
    };
    coefficients.validate()?;
    Ok(coefficients)
}

/// Direct regression `ln d_transferred = ln k + alpha ln d_finetune +
/// beta ln n`, a cross-check on the staged fit.
pub fn fit_transfer_direct(table: &[EffectiveDataRow]) -> Result<TransferCoefficients> {
    let (usable, rows_excluded) = usable_rows(table);
    if usable.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "direct fit needs >= 3 usable rows, got {}",
            usable.len()
        )));
    }
    let mut dfs: Vec<u64> = usable.iter().map(|r| r.d_finetune).collect();
    dfs.sort_unstable();
    dfs.dedup();
    let mut ns: Vec<u64> = usable.iter().map(|r| r.n_params).collect();
    ns.sort_unstable();
    ns.dedup();
    if dfs.len() < 2 {
        return Err(Error::RankDeficient(
            "all rows share one d_finetune; alpha is unidentifiable".into(),
        ));
    }
    if ns.len() < 2 {
        return Err(Error::RankDeficient(
            "all rows share one n_params; beta is unidentifiable".into(),
        ));
    }

    // normal equations for [ln k, alpha, beta]
    let rows: Vec<[f64; 4]> = usable
        .iter()
        .map(|r| {
            [
                1.0,
                (r.d_finetune as f64).ln(),
                (r.n_params as f64).ln(),
                r.d_transferred.expect("filtered").ln(),
            ]
        })
        .collect();
    let mut xtx = nalgebra::Matrix3::<f64>::zeros();
    let mut xty = nalgebra::Vector3::<f64>::zeros();
    for row in &rows {
        for i in 0..3 {
            for j in 0..3 {
                xtx[(i, j)] += row[i] * row[j];
            }
            xty[i] += row[i] * row[3];
        }
    }
    let solution = xtx.lu().solve(&xty).ok_or_else(|| {
        Error::RankDeficient("collinear (d_finetune, n_params) design".into())
    })?;
    let (ln_k, alpha, beta) = (solution[0], solution[1], solution[2]);
    let k = ln_k.exp();

    let residual_rms = (rows
        .iter()
        .map(|r| (r[3] - (ln_k + alpha * r[1] + beta * r[2])).powi(2))
        .sum::<f64>()
        / rows.len() as f64)
        .sqrt();

    let per_df_nstar = dfs
        .iter()
        .map(|&df| DfNstar {
            d_finetune: df,
            n_star: ((df as f64).powf(1.0 - alpha) / k).powf(1.0 / beta),
        })
        .collect();

    let coefficients = TransferCoefficients {
        k,
        alpha,
        beta,
        per_df_nstar,
        diagnostics: Some(TransferDiagnostics {
            method: "direct".into(),
            stage1: Vec::new(),
            stage2: Vec::new(),
            stage3: Some(FitResult {
                params: vec![
                    crate::curve_fit::NamedParam {
                        name: "k".into(),
                        value: k,
                    },
                    crate::curve_fit::NamedParam {
                        name: "alpha".into(),
                        value: alpha,
                    },
                    crate::curve_fit::NamedParam {
                        name: "beta".into(),
                        value: beta,
                    },
                ],
                residual_rms,
                n_points: usable.len(),
                converged: true,
                iterations: 0,
            }),
            warnings: Vec::new(),
            rows_used: usable.len(),
            rows_excluded,
        }),
    };
    coefficients.validate()?;
    Ok(coefficients)
}
