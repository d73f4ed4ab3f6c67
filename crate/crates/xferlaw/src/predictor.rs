//! Forward predictions built on fitted laws: fine-tuned loss, few-shot
//! effective data, and data-versus-model-size trade-offs.

use serde::{Deserialize, Serialize};

use crate::curve_fit::ScalingLawParams;
use crate::effective_data::EffectiveDataRow;
use crate::error::{Error, Result};
use crate::transfer_law::{evaluate_transfer, TransferCoefficients};

/// Loss predicted for a fine-tuned model by substituting transferred data
/// into the from-scratch surface.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PredictedLoss {
    /// Substitutes `d_transferred` alone — the low-data form.
    pub loss: f64,
    /// Substitutes total effective data `d_finetune + d_transferred`,
    /// usable outside the strict low-data approximation.
    pub loss_total_effective: f64,
}

/// Unified fine-tuned loss
/// `[(n_c/n)^(alpha_n/alpha_d) + d_c/(k d_f^alpha n^beta)]^alpha_d`.
///
/// Intended for the low-data regime; callers can check with the regime
/// module first.
pub fn predict_finetuned_loss(
    scaling: &ScalingLawParams,
    transfer: &TransferCoefficients,
    n_params: f64,
    d_finetune: f64,
) -> PredictedLoss {
    let d_t = evaluate_transfer(transfer, n_params, d_finetune);
    PredictedLoss {
        loss: scaling.loss(n_params, d_t),
        loss_total_effective: scaling.loss(n_params, d_finetune + d_t),
    }
}

/// Effective-data estimate for in-context examples.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FewshotEstimate {
    pub n_params: f64,
    pub context_chars: f64,
    pub d_effective: f64,
    /// `d_effective(context) / d_effective(1 char)`
    pub multiplier_vs_zero_shot: f64,
    pub caveat: String,
}

/// Treat `context_chars` of prompt as fine-tuning data and report the
/// effective data it buys. Zero-shot is the 1-character limit.
pub fn fewshot_effective_data(
    c: &TransferCoefficients,
    n_params: f64,
    context_chars: f64,
) -> Result<FewshotEstimate> {
    if context_chars < 1.0 {
        return Err(Error::InvalidParameter(format!(
            "context_chars must be >= 1, got {context_chars}"
        )));
    }
    let d_effective = context_chars + evaluate_transfer(c, n_params, context_chars);
    let zero_shot = 1.0 + evaluate_transfer(c, n_params, 1.0);
    Ok(FewshotEstimate {
        n_params,
        context_chars,
        d_effective,
        multiplier_vs_zero_shot: d_effective / zero_shot,
        caveat: "speculative: extrapolates the fitted law far below measured dataset \
                 sizes and equates in-context characters with fine-tuning characters"
            .into(),
    })
}

/// Equivalent-model-size advice for a change in fine-tuning data.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TradeoffAdvice {
    pub data_factor: f64,
    /// `data_factor^(alpha/beta)`: the model-size factor buying the same
    /// transferred data.
    pub equivalent_model_factor: f64,
    pub assumptions: String,
}

pub fn data_vs_model_tradeoff(
    c: &TransferCoefficients,
    data_factor: f64,
) -> Result<TradeoffAdvice> {
    if data_factor <= 0.0 || !data_factor.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "data factor must be positive, got {data_factor}"
        )));
    }
    Ok(TradeoffAdvice {
        data_factor,
        equivalent_model_factor: data_factor.powf(c.alpha / c.beta),
        assumptions: format!(
            "equal transferred data under k={}, alpha={}, beta={}; \
             meaningful in the low-data regime",
            c.k, c.alpha, c.beta
        ),
    })
}

/// What the advisor concluded from the sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum AdvisorRecommendation {
    /// Model sweep is flat: only more data moves the loss.
    DataDominant,
    /// Data sweep is flat: collecting more data buys nothing.
    DataSaturated,
    /// Both slopes are live; the exchange rate applies.
    Balanced { exchange_rate: f64 },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvisorReport {
    /// Loss change per decade of fine-tuning data.
    pub data_slope: f64,
    /// Loss change per decade of model size.
    pub model_slope: f64,
    /// Decades of data equivalent to one decade of model size.
    pub exchange_rate: Option<f64>,
    pub recommendation: AdvisorRecommendation,
    pub summary: String,
}

const FLAT_SLOPE: f64 = 1e-9;

/// Decide between collecting data and growing the model from cheap sweeps:
/// fine-tuned losses at subsampled dataset fractions, plus losses across
/// model sizes at the full dataset.
///
/// Slopes are local least-squares fits of loss against log10 size; the
/// exchange rate is their ratio. Purely diagnostic — no cost model.
pub fn data_collection_advisor(
    subsample_tables: &[(f64, Vec<EffectiveDataRow>)],
    model_sweep: &[(f64, f64)],
) -> Result<AdvisorReport> {
    if subsample_tables.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "advisor needs >= 2 subsample levels, got {}",
            subsample_tables.len()
        )));
    }
    if model_sweep.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "advisor needs >= 2 model-sweep points, got {}",
            model_sweep.len()
        )));
    }

    // loss vs log10(d_finetune), aggregated per level
    let mut data_pts = Vec::new();
    for (level, rows) in subsample_tables {
        if rows.is_empty() {
            return Err(Error::InsufficientData(format!(
                "subsample level {level} has no rows"
            )));
        }
        let mean_loss = rows.iter().map(|r| r.loss).sum::<f64>() / rows.len() as f64;
        let mean_log_d = rows
            .iter()
            .map(|r| (r.d_finetune as f64).log10())
            .sum::<f64>()
            / rows.len() as f64;
        data_pts.push((mean_log_d, mean_loss));
    }
    let data_slope = linear_slope(&data_pts)?;

    let model_pts: Vec<(f64, f64)> = model_sweep
        .iter()
        .map(|&(n, loss)| (n.log10(), loss))
        .collect();
    let model_slope = linear_slope(&model_pts)?;

    let (recommendation, exchange_rate) =
        if model_slope.abs() < FLAT_SLOPE && data_slope.abs() < FLAT_SLOPE {
            (AdvisorRecommendation::DataSaturated, None)
        } else if model_slope.abs() < FLAT_SLOPE {
            (AdvisorRecommendation::DataDominant, None)
        } else if data_slope.abs() < FLAT_SLOPE {
            (AdvisorRecommendation::DataSaturated, None)
        } else {
            let rate = model_slope / data_slope;
            (
                AdvisorRecommendation::Balanced {
                    exchange_rate: rate,
                },
                Some(rate),
            )
        };

    let summary = match &recommendation {
        AdvisorRecommendation::DataDominant => {
            "model sweep is flat: the model is data-limited, collect more data".into()
        }
        AdvisorRecommendation::DataSaturated => {
            "data sweep is flat: more data buys nothing here, grow the model instead"
                .into()
        }
        AdvisorRecommendation::Balanced { exchange_rate } => format!(
            "a 10x model increase is worth about a 10^{exchange_rate:.2}x data increase"
        ),
    };

    Ok(AdvisorReport {
        data_slope,
        model_slope,
        exchange_rate,
        recommendation,
        summary,
    })
}

/// OLS slope of y against x (x already in log units).
fn linear_slope(pts: &[(f64, f64)]) -> Result<f64> {
    let n = pts.len() as f64;
    let mean_x = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RankDeficient(
            "sweep has no spread in the size axis".into(),
        ));
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    Ok(sxy / sxx)
}

/// Fit `loss ~ log10(x)` on (x, loss) pairs and return the slope per
/// decade.
pub fn loss_slope_per_decade(points: &[(f64, f64)]) -> Result<f64> {
    let pts: Vec<(f64, f64)> = points.iter().map(|&(x, y)| (x.log10(), y)).collect();
    linear_slope(&pts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effective_data::RowStatus;
    use crate::transfer_law::{text_to_python, TransferCoefficients};

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn scaling_fixture() -> ScalingLawParams {
        ScalingLawParams {
            n_c: 1e10,
            alpha_n: 0.24,
            d_c: 1e12,
            alpha_d: 0.30,
        }
    }

    #[test]
    fn infinite_transfer_limit() {
        let scaling = scaling_fixture();
        let c = TransferCoefficients {
            k: 1e280,
            alpha: 0.18,
            beta: 0.38,
            per_df_nstar: Vec::new(),
            diagnostics: None,
        };
        let p = predict_finetuned_loss(&scaling, &c, 1e8, 1e6);
        let limit = scaling.loss_infinite_data(1e8);
        assert!(rel_err(p.loss, limit) < 1e-9, "loss {}", p.loss);
    }

    #[test]
    fn loss_non_increasing_in_n_and_d() {
        let scaling = scaling_fixture();
        let c = text_to_python();
        let mut last = f64::INFINITY;
        for i in 0..40 {
            let n = 10f64.powf(5.0 + i as f64 * 0.2);
            let p = predict_finetuned_loss(&scaling, &c, n, 1e6);
            assert!(p.loss <= last);
            last = p.loss;
        }
        last = f64::INFINITY;
        for i in 0..40 {
            let d = 10f64.powf(3.0 + i as f64 * 0.2);
            let p = predict_finetuned_loss(&scaling, &c, 1e7, d);
            assert!(p.loss <= last);
            assert!(p.loss_total_effective <= p.loss + 1e-15);
            last = p.loss;
        }
    }

    #[test]
    fn self_consistency_with_generated_losses() {
        // losses produced by evaluating the surface at total effective data
        // must be reproduced exactly by the total-effective variant
        let scaling = scaling_fixture();
        let c = text_to_python();
        for i in 0..5 {
            let n = 10f64.powf(5.0 + i as f64);
            for j in 0..4 {
                let d_f = 10f64.powf(5.0 + j as f64);
                let d_e = d_f + crate::transfer_law::evaluate_transfer(&c, n, d_f);
                let generated = scaling.loss(n, d_e);
                let predicted = predict_finetuned_loss(&scaling, &c, n, d_f);
                assert!(
                    (predicted.loss_total_effective - generated).abs() <= 1e-12 * generated,
                    "mismatch at n={n}, d_f={d_f}"
                );
            }
        }
    }

    #[test]
    fn fewshot_paper_scale_numbers() {
        let text = text_to_python();
        let est = fewshot_effective_data(&text, 1.75e11, 1.0).unwrap();
        assert!(rel_err(est.d_effective, 3.7e8) < 0.10, "{:.3e}", est.d_effective);
        assert_eq!(est.multiplier_vs_zero_shot, 1.0);

        let est300 = fewshot_effective_data(&text, 1.75e11, 300.0).unwrap();
        assert!(rel_err(est300.multiplier_vs_zero_shot, 300f64.powf(0.18)) < 1e-3);

        let mix = crate::transfer_law::text_code_mix_to_python();
        let mix_zero = fewshot_effective_data(&mix, 1.75e11, 1.0).unwrap();
        assert!(rel_err(mix_zero.d_effective, 4.1e9) < 0.10, "{:.3e}", mix_zero.d_effective);
    }

    #[test]
    fn tradeoff_square_root_identity() {
        let c = TransferCoefficients {
            k: 1.9e4,
            alpha: 0.19,
            beta: 0.38,
            per_df_nstar: Vec::new(),
            diagnostics: None,
        };
        let advice = data_vs_model_tradeoff(&c, 100.0).unwrap();
        assert_eq!(advice.equivalent_model_factor, 10.0);
        // equal transferred data at machine precision
        let base = evaluate_transfer(&c, 1e8, 100.0 * 1e6);
        let swapped = evaluate_transfer(&c, advice.equivalent_model_factor * 1e8, 1e6);
        // d_t(s_d * d) = d_t(d) * s_d^alpha and the advised model factor
        // gives the same multiplier
        assert!(rel_err(base / swapped, 1.0) < 1e-12);
    }

    #[test]
    fn tradeoff_text_coefficients() {
        let advice = data_vs_model_tradeoff(&text_to_python(), 100.0).unwrap();
        assert!((advice.equivalent_model_factor - 8.9).abs() < 0.1);
        let unity = data_vs_model_tradeoff(&text_to_python(), 1.0).unwrap();
        assert_eq!(unity.equivalent_model_factor, 1.0);
    }

    fn row_at(d_finetune: u64, loss: f64) -> EffectiveDataRow {
        EffectiveDataRow {
            run_id: format!("r-{d_finetune}-{loss}"),
            pretrain_label: "text".into(),
            n_params: 10_000_000,
            d_finetune,
            loss,
            d_effective: None,
            d_transferred: None,
            fraction: None,
            extrapolated: false,
            status: RowStatus::Ok,
        }
    }

    #[test]
    fn advisor_matches_analytic_partials() {
        // sweeps generated from the unified formula; the exchange rate must
        // match the ratio of its partial derivatives
        let scaling = scaling_fixture();
        let c = text_to_python();
        let (n0, d0) = (1e7, 1e7);
        let levels = [0.01, 0.1, 1.0];
        let tables: Vec<(f64, Vec<EffectiveDataRow>)> = levels
            .iter()
            .map(|&lvl| {
                let d = d0 * lvl;
                let loss = predict_finetuned_loss(&scaling, &c, n0, d).loss;
                (lvl, vec![row_at(d as u64, loss)])
            })
            .collect();
        let sweep: Vec<(f64, f64)> = (0..5)
            .map(|i| {
                let n = n0 * 10f64.powf(-1.0 + i as f64 * 0.5);
                (n, predict_finetuned_loss(&scaling, &c, n, d0).loss)
            })
            .collect();
        let report = data_collection_advisor(&tables, &sweep).unwrap();

        // analytic partials of the unified loss at (n0, d0) by central
        // differences on the generating formula
        let h = 1e-5;
        let f_d = |ld: f64| {
            predict_finetuned_loss(&scaling, &c, n0, 10f64.powf(ld)).loss
        };
        let f_n = |ln: f64| {
            predict_finetuned_loss(&scaling, &c, 10f64.powf(ln), d0).loss
        };
        let d_slope = (f_d(d0.log10() + h) - f_d(d0.log10() - h)) / (2.0 * h);
        let n_slope = (f_n(n0.log10() + h) - f_n(n0.log10() - h)) / (2.0 * h);
        let analytic_rate = n_slope / d_slope;
        let got = report.exchange_rate.expect("balanced");
        assert!(
            rel_err(got, analytic_rate) < 0.05,
            "got {got}, analytic {analytic_rate}"
        );
    }

    #[test]
    fn advisor_flat_model_sweep() {
        let tables = vec![
            (0.1, vec![row_at(1_000_000, 3.0)]),
            (1.0, vec![row_at(10_000_000, 2.5)]),
        ];
        let sweep = vec![(1e6, 2.5), (1e7, 2.5), (1e8, 2.5)];
        let report = data_collection_advisor(&tables, &sweep).unwrap();
        assert_eq!(report.recommendation, AdvisorRecommendation::DataDominant);
    }

    #[test]
    fn advisor_saturated_data() {
        let tables = vec![
            (0.1, vec![row_at(1_000_000, 2.5)]),
            (1.0, vec![row_at(10_000_000, 2.5)]),
        ];
        let sweep = vec![(1e6, 3.0), (1e7, 2.5)];
        let report = data_collection_advisor(&tables, &sweep).unwrap();
        assert_eq!(report.recommendation, AdvisorRecommendation::DataSaturated);
    }

    #[test]
    fn advisor_needs_two_levels() {
        let tables = vec![(1.0, vec![row_at(1_000_000, 2.5)])];
        let sweep = vec![(1e6, 3.0), (1e7, 2.5)];
        assert!(matches!(
            data_collection_advisor(&tables, &sweep),
            Err(Error::InsufficientData(_))
        ));
    }
}
