//! The full analysis chain in one call: validate, extract effective data,
//! estimate data needs, filter to the low-data regime, fit the transfer
//! law, and report negative transfer.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::effective_data::{transfer_table, EffectiveDataRow, RowStatus, TableOptions};
use crate::error::{Error, Result};
use crate::regime::{
    classify_regime, estimate_dn, ossification_report, DNFit, DnConfig, DnSkip,
    OssificationReport, RegimeClass,
};
use crate::run_store::{
    build_curves, validate_runs, Axis, CurveLevel, Curriculum, RunSet, ValidationConfig,
    ValidationReport,
};
use crate::transfer_law::{
    fit_transfer_direct, fit_transfer_fit_of_fits, TransferCoefficients,
};

#[derive(Debug, Clone, Default)]
pub struct PipelineOptions {
    pub table: TableOptions,
    pub validation: ValidationConfig,
    pub dn: DnConfig,
    /// Shared model-size exponent, when imposed instead of averaged.
    pub common_beta: Option<f64>,
    /// Restrict fitting to rows outside the low-data regime as well
    /// (diagnostic use only).
    pub keep_all_regimes: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineReport {
    pub runs: usize,
    pub validation: ValidationReport,
    pub table: Vec<EffectiveDataRow>,
    pub skipped_not_converged: Vec<String>,
    pub dn: Option<DNFit>,
    pub dn_skipped: Vec<DnSkip>,
    pub regime_counts: BTreeMap<RegimeClass, usize>,
    pub rows_fit: usize,
    pub coefficients: TransferCoefficients,
    pub coefficients_direct: Option<TransferCoefficients>,
    pub ossification: Option<OssificationReport>,
    pub warnings: Vec<String>,
}

/// Run the whole methodology over an ingested run set.
///
/// Transfer-law fitting uses rows with positive transfer, a fraction
/// strictly inside (0, 1), and — when the data-needs fit succeeds — a
/// low-data-regime label. The direct regression is attempted as a
/// cross-check and reported alongside.
pub fn run_pipeline(rs: &RunSet, options: &PipelineOptions) -> Result<PipelineReport> {
    if !rs.runs.iter().any(|r| r.curriculum == Curriculum::FromScratch) {
        return Err(Error::InsufficientData(
            "effective-data analysis needs at least one from-scratch run".into(),
        ));
    }

    let validation = validate_runs(rs, &options.validation);
    let table = transfer_table(rs, &options.table)?;

    let mut warnings = Vec::new();

    // data needs from the from-scratch baselines
    let fromscratch = RunSet {
        runs: rs.from_scratch_runs().cloned().collect(),
        provenance: rs.provenance.clone(),
    };
    let curves = build_curves(&fromscratch, Axis::Data, CurveLevel::AcrossRuns)?;
    let (dn, dn_skipped) = match estimate_dn(&curves.curves, &options.dn) {
        Ok(est) => (Some(est.fit), est.skipped),
        Err(e) => {
            warnings.push(format!(
                "data-needs estimate failed ({e}); fitting without a regime filter"
            ));
            (None, Vec::new())
        }
    };

    let mut regime_counts: BTreeMap<RegimeClass, usize> = BTreeMap::new();
    if let Some(dn) = &dn {
        for row in &table.rows {
            let label = classify_regime(row.d_finetune as f64, row.n_params as f64, dn);
            *regime_counts.entry(label.value).or_insert(0) += 1;
        }
    }

    let fit_rows: Vec<EffectiveDataRow> = table
        .rows
        .iter()
        .filter(|row| {
            if row.status != RowStatus::Ok {
                return false;
            }
            match (&dn, options.keep_all_regimes) {
                (Some(dn), false) => {
                    classify_regime(row.d_finetune as f64, row.n_params as f64, dn).value
                        == RegimeClass::Low
                }
                _ => true,
            }
        })
        .cloned()
        .collect();

    let coefficients = fit_transfer_fit_of_fits(&fit_rows, options.common_beta)?;
    let coefficients_direct = match fit_transfer_direct(&fit_rows) {
        Ok(c) => Some(c),
        Err(e) => {
            warnings.push(format!("direct cross-check fit failed: {e}"));
            None
        }
    };
    if let (Some(direct), Some(diag)) = (&coefficients_direct, &coefficients.diagnostics) {
        let rel = (direct.k - coefficients.k).abs() / coefficients.k;
        if rel > 0.5 {
            warnings.push(format!(
                "fit-of-fits and direct regression disagree on k by {:.0}% \
                 (fit-of-fits {:.3e}, direct {:.3e}; {} rows)",
                rel * 100.0,
                coefficients.k,
                direct.k,
                diag.rows_used
            ));
        }
    }

    let ossification = dn.as_ref().map(|dn| ossification_report(&table.rows, dn));

    Ok(PipelineReport {
        runs: rs.len(),
        validation,
        table: table.rows,
        skipped_not_converged: table.skipped_not_converged,
        dn,
        dn_skipped,
        regime_counts,
        rows_fit: fit_rows.len(),
        coefficients,
        coefficients_direct,
        ossification,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_pipeline, GroundTruth};

    #[test]
    fn noiseless_roundtrip_recovers_coefficients() {
        let gt = GroundTruth::default();
        let rs = generate_pipeline(&gt).unwrap();
        let report = run_pipeline(&rs, &PipelineOptions::default()).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / b;
        assert!(
            rel(report.coefficients.k, gt.transfer.k) < 0.05,
            "k = {:.4e}",
            report.coefficients.k
        );
        assert!(
            rel(report.coefficients.alpha, gt.transfer.alpha) < 0.05,
            "alpha = {}",
            report.coefficients.alpha
        );
        assert!(
            rel(report.coefficients.beta, gt.transfer.beta) < 0.05,
            "beta = {}",
            report.coefficients.beta
        );
        // all grid rows are in the low-data regime by construction
        assert_eq!(
            report.regime_counts.get(&RegimeClass::Low).copied(),
            Some(report.table.len())
        );
    }

    #[test]
    fn pipeline_requires_fromscratch_runs() {
        let gt = GroundTruth::default();
        let mut rs = generate_pipeline(&gt).unwrap();
        rs.runs.retain(|r| r.curriculum == Curriculum::Finetuned);
        assert!(matches!(
            run_pipeline(&rs, &PipelineOptions::default()),
            Err(Error::InsufficientData(_))
        ));
    }
}
