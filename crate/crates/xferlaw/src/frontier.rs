//! Compute-efficiency views over training curves.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::regime::{classify_regime, DNFit, RegimeClass};
use crate::run_store::{Curriculum, LossCurve, RunSet};

/// One point on the compute-efficient frontier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrontierPoint {
    pub compute: f64,
    pub loss: f64,
    pub run_id: String,
}

/// Pareto-optimal (compute, loss) points over a set of within-run compute
/// curves.
///
/// A point is dropped when another point reaches an equal-or-lower loss at
/// equal-or-lower compute; ties on compute keep the lower loss, and exact
/// duplicates keep the lexicographically smallest run id. The result is
/// sorted by compute with strictly decreasing loss, and is invariant to
/// curve order and duplication.
pub fn pareto_frontier(curves: &[LossCurve]) -> Result<Vec<FrontierPoint>> {
    let mut points = Vec::new();
    for curve in curves {
        let run_id = curve.key.run_id.clone().unwrap_or_default();
        if curve.axis != crate::run_store::Axis::Compute {
            return Err(Error::InvalidParameter(format!(
                "pareto frontier needs compute-axis curves, run `{run_id}` is on the data axis"
            )));
        }
        for p in &curve.raw {
            points.push(FrontierPoint {
                compute: p.x,
                loss: p.loss,
                run_id: run_id.clone(),
            });
        }
    }
    if points.is_empty() {
        return Err(Error::InsufficientData(
            "no compute checkpoints to build a frontier from".into(),
        ));
    }

    // sort by compute, then loss, then run id: a single sweep keeps the
    // strictly improving envelope
    points.sort_by(|a, b| {
        a.compute
            .total_cmp(&b.compute)
            .then(a.loss.total_cmp(&b.loss))
            .then(a.run_id.cmp(&b.run_id))
    });
    let mut frontier: Vec<FrontierPoint> = Vec::new();
    for p in points {
        match frontier.last() {
            Some(last) if p.loss >= last.loss => {}
            _ => frontier.push(p),
        }
    }
    Ok(frontier)
}

/// Where a run stopped improving.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConvergedPoint {
    pub run_id: String,
    pub compute: f64,
    pub loss: f64,
    /// False when the curve was still improving at its final checkpoint.
    pub converged: bool,
}

/// First checkpoint after which the best loss improves by less than
/// `rel_tol` (relative) over the rest of the curve.
///
/// A run still improving at its last checkpoint comes back flagged
/// `converged = false` with that final point.
pub fn converged_compute(curve: &LossCurve, rel_tol: f64) -> Result<ConvergedPoint> {
    if curve.axis != crate::run_store::Axis::Compute {
        return Err(Error::InvalidParameter(
            "converged compute needs a compute-axis curve".into(),
        ));
    }
    let pts = &curve.raw;
    if pts.is_empty() {
        return Err(Error::InsufficientData("curve has no checkpoints".into()));
    }
    let mut best = Vec::with_capacity(pts.len());
    let mut acc = f64::INFINITY;
    for p in pts {
        acc = acc.min(p.loss);
        best.push(acc);
    }
    let final_best = best[pts.len() - 1];
    let idx = best
        .iter()
        .position(|&b| (b - final_best) / b < rel_tol)
        .expect("the last checkpoint always qualifies");
    Ok(ConvergedPoint {
        run_id: curve.key.run_id.clone().unwrap_or_default(),
        compute: pts[idx].x,
        loss: best[idx],
        converged: idx < pts.len() - 1 || pts.len() == 1,
    })
}

/// Epochs-to-best-loss for one run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochRow {
    pub run_id: String,
    pub curriculum: Curriculum,
    pub pretrain_label: String,
    pub n_params: u64,
    pub d_finetune: u64,
    /// data_seen at the best loss divided by the dataset size
    pub epochs_at_best: f64,
    pub regime: RegimeClass,
    /// d_finetune / d_of_n(n_params)
    pub regime_ratio: f64,
    /// Best loss sat at the final checkpoint; the true best epoch may lie
    /// beyond the run.
    pub possibly_truncated: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochBucket {
    pub regime: RegimeClass,
    pub curriculum: Curriculum,
    pub runs: usize,
    pub mean_epochs: f64,
    pub median_epochs: f64,
}

/// Best-epoch report grouped by data regime and curriculum, for comparing
/// how long fine-tuned and from-scratch runs need to train.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BestEpochReport {
    pub rows: Vec<EpochRow>,
    pub buckets: Vec<EpochBucket>,
}

pub fn best_epoch_summary(rs: &RunSet, dn: &DNFit) -> BestEpochReport {
    let rows: Vec<EpochRow> = rs
        .runs
        .iter()
        .map(|run| {
            let best_idx = run.best_checkpoint_index();
            let label = classify_regime(run.d_finetune as f64, run.n_params as f64, dn);
            EpochRow {
                run_id: run.run_id.clone(),
                curriculum: run.curriculum,
                pretrain_label: run.pretrain_label.clone(),
                n_params: run.n_params,
                d_finetune: run.d_finetune,
                epochs_at_best: run.checkpoints[best_idx].data_seen / run.d_finetune as f64,
                regime: label.value,
                regime_ratio: label.ratio,
                possibly_truncated: best_idx == run.checkpoints.len() - 1,
            }
        })
        .collect();

    let mut groups: BTreeMap<(RegimeClass, Curriculum), Vec<f64>> = BTreeMap::new();
    for row in &rows {
        groups
            .entry((row.regime, row.curriculum))
            .or_default()
            .push(row.epochs_at_best);
    }
    let buckets = groups
        .into_iter()
        .map(|((regime, curriculum), mut epochs)| {
            epochs.sort_by(f64::total_cmp);
            let mean = epochs.iter().sum::<f64>() / epochs.len() as f64;
            let median = if epochs.len() % 2 == 1 {
                epochs[epochs.len() / 2]
            } else {
                0.5 * (epochs[epochs.len() / 2 - 1] + epochs[epochs.len() / 2])
            };
            EpochBucket {
                regime,
                curriculum,
                runs: epochs.len(),
                mean_epochs: mean,
                median_epochs: median,
            }
        })
        .collect();

    BestEpochReport { rows, buckets }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::run_store::{
        build_curves, Axis, Checkpoint, CurveLevel, CurvePoint, RunRecord,
    };

    fn compute_curve(run_id: &str, pts: &[(f64, f64)]) -> LossCurve {
        LossCurve {
            key: crate::run_store::CurveKey {
                curriculum: Curriculum::FromScratch,
                pretrain_label: String::new(),
                n_params: 1_000,
                run_id: Some(run_id.into()),
                d_finetune: Some(1_000),
            },
            axis: Axis::Compute,
            points: crate::run_store::clean_points(
                pts.iter()
                    .map(|&(x, loss)| CurvePoint { x, loss })
                    .collect(),
            ),
            raw: pts.iter().map(|&(x, loss)| CurvePoint { x, loss }).collect(),
        }
    }

    #[test]
    fn single_curve_frontier_is_running_minimum() {
        let c = compute_curve("a", &[(1.0, 3.0), (2.0, 2.5), (3.0, 2.6), (4.0, 2.4)]);
        let frontier = pareto_frontier(&[c]).unwrap();
        let losses: Vec<f64> = frontier.iter().map(|p| p.loss).collect();
        assert_eq!(losses, vec![3.0, 2.5, 2.4]);
        let computes: Vec<f64> = frontier.iter().map(|p| p.compute).collect();
        assert_eq!(computes, vec![1.0, 2.0, 4.0]);
    }

    #[test]
    fn dominant_curve_owns_the_frontier() {
        let a = compute_curve("a", &[(1.0, 3.0), (2.0, 2.5), (4.0, 2.0)]);
        let b = compute_curve("b", &[(1.0, 3.5), (2.0, 3.0), (4.0, 2.5)]);
        let frontier = pareto_frontier(&[a, b]).unwrap();
        assert!(frontier.iter().all(|p| p.run_id == "a"));
    }

    #[test]
    fn frontier_matches_brute_force() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let curves: Vec<LossCurve> = (0..5)
            .map(|i| {
                let pts: Vec<(f64, f64)> = (0..40)
                    .map(|_| {
                        (
                            10f64.powf(rng.random_range(0.0..6.0)),
                            rng.random_range(1.0..5.0),
                        )
                    })
                    .collect();
                compute_curve(&format!("r{i}"), &pts)
            })
            .collect();
        let frontier = pareto_frontier(&curves).unwrap();

        // brute force O(n^2) dominance filter over the union of raw points
        let mut all: Vec<(f64, f64)> = curves
            .iter()
            .flat_map(|c| c.raw.iter().map(|p| (p.x, p.loss)))
            .collect();
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
        all.dedup();
        let brute: Vec<(f64, f64)> = all
            .iter()
            .filter(|&&(c, l)| {
                !all.iter().any(|&(c2, l2)| {
                    (c2 <= c && l2 <= l) && (c2, l2) != (c, l)
                })
            })
            .copied()
            .collect();
        let got: Vec<(f64, f64)> = frontier.iter().map(|p| (p.compute, p.loss)).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn frontier_invariant_to_order_and_duplication() {
        let a = compute_curve("a", &[(1.0, 3.0), (3.0, 2.0)]);
        let b = compute_curve("b", &[(2.0, 2.5), (4.0, 1.5)]);
        let f1 = pareto_frontier(&[a.clone(), b.clone()]).unwrap();
        let f2 = pareto_frontier(&[b.clone(), a.clone()]).unwrap();
        let f3 = pareto_frontier(&[a.clone(), b.clone(), a, b]).unwrap();
        assert_eq!(f1, f2);
        assert_eq!(f1, f3);
    }

    #[test]
    fn frontier_points_undominated() {
        let a = compute_curve("a", &[(1.0, 3.0), (2.0, 2.0), (3.0, 2.2)]);
        let b = compute_curve("b", &[(1.5, 2.6), (2.5, 1.9)]);
        let frontier = pareto_frontier(&[a.clone(), b.clone()]).unwrap();
        for p in &frontier {
            for c in [&a, &b] {
                for q in &c.raw {
                    let dominates = q.x <= p.compute
                        && q.loss <= p.loss
                        && (q.x, q.loss) != (p.compute, p.loss);
                    assert!(!dominates, "({}, {}) dominates ({}, {})", q.x, q.loss, p.compute, p.loss);
                }
            }
        }
    }

    #[test]
    fn converged_compute_flat_tail() {
        let pts: Vec<(f64, f64)> = (0..20)
            .map(|i| {
                let loss = if i < 10 { 3.0 - 0.1 * i as f64 } else { 2.0 };
                (i as f64 + 1.0, loss)
            })
            .collect();
        let c = compute_curve("a", &pts);
        let point = converged_compute(&c, 1e-3).unwrap();
        assert!(point.converged);
        assert_eq!(point.compute, 11.0); // first checkpoint reaching 2.0
        assert_eq!(point.loss, 2.0);
    }

    #[test]
    fn steep_curve_flagged_not_converged() {
        let pts: Vec<(f64, f64)> = (0..10)
            .map(|i| (i as f64 + 1.0, 5.0 / (i as f64 + 1.0)))
            .collect();
        let c = compute_curve("a", &pts);
        let point = converged_compute(&c, 1e-3).unwrap();
        assert!(!point.converged);
        assert_eq!(point.compute, 10.0);
    }

    #[test]
    fn converged_compute_monotone_in_tolerance() {
        let pts: Vec<(f64, f64)> = (0..30)
            .map(|i| (i as f64 + 1.0, 2.0 + 3.0 * (-0.4 * i as f64).exp()))
            .collect();
        let c = compute_curve("a", &pts);
        let mut last_compute = f64::INFINITY;
        for &tol in &[1e-5, 1e-4, 1e-3, 1e-2, 1e-1] {
            let point = converged_compute(&c, tol).unwrap();
            assert!(
                point.compute <= last_compute,
                "looser tolerance moved convergence later"
            );
            last_compute = point.compute;
        }
    }

    #[test]
    fn converged_compute_finds_planted_plateau() {
        let plateau = 2.0;
        let pts: Vec<(f64, f64)> = (0..50)
            .map(|i| {
                (
                    10f64.powf(i as f64 * 0.1),
                    plateau * (1.0 + 5.0 * (-0.5 * i as f64).exp()),
                )
            })
            .collect();
        let c = compute_curve("a", &pts);
        let point = converged_compute(&c, 1e-3).unwrap();
        assert!(point.converged);
        assert!((point.loss - plateau) / plateau < 1e-3 + 1e-9);
    }

    fn run_with_best(
        id: &str,
        curriculum: Curriculum,
        n: u64,
        d: u64,
        best_at: f64,
        total: f64,
    ) -> RunRecord {
        // loss dips to its minimum at data_seen = best_at then rises
        let n_ckpt = 12;
        let checkpoints: Vec<Checkpoint> = (0..n_ckpt)
            .map(|i| {
                let s = total * (i as f64 + 1.0) / n_ckpt as f64;
                let loss = 2.0 + ((s - best_at) / total).powi(2);
                Checkpoint {
                    data_seen: s,
                    compute: Some(6.0 * n as f64 * s),
                    eval_loss: loss,
                }
            })
            .collect();
        RunRecord {
            run_id: id.into(),
            curriculum,
            pretrain_label: String::new(),
            n_params: n,
            d_finetune: d,
            checkpoints,
        }
    }

    fn dn_unit() -> DNFit {
        DNFit {
            coefficient: 1.0,
            exponent: 1.0,
            per_n_points: Vec::new(),
        }
    }

    #[test]
    fn epochs_at_best_is_simple_ratio() {
        // best loss planted at data_seen = 3 * d_finetune
        let r = run_with_best("a", Curriculum::FromScratch, 1_000, 1_000, 3_000.0, 12_000.0);
        let rs = RunSet::new(vec![r], vec![]).unwrap();
        let report = best_epoch_summary(&rs, &dn_unit());
        assert_eq!(report.rows[0].epochs_at_best, 3.0);
        assert!(!report.rows[0].possibly_truncated);
    }

    #[test]
    fn best_at_final_checkpoint_is_flagged() {
        let r = run_with_best("a", Curriculum::FromScratch, 1_000, 1_000, 12_000.0, 12_000.0);
        let rs = RunSet::new(vec![r], vec![]).unwrap();
        let report = best_epoch_summary(&rs, &dn_unit());
        assert!(report.rows[0].possibly_truncated);
        assert_eq!(report.rows[0].epochs_at_best, 12.0);
    }

    #[test]
    fn planted_epoch_ratio_shows_in_buckets() {
        // fine-tuned best epoch at 1/3 of the from-scratch epoch count
        let fs = run_with_best("fs", Curriculum::FromScratch, 1_000, 100_000, 900_000.0, 1_200_000.0);
        let mut ft = run_with_best("ft", Curriculum::Finetuned, 1_000, 100_000, 300_000.0, 1_200_000.0);
        ft.pretrain_label = "text".into();
        let rs = RunSet::new(vec![fs, ft], vec![]).unwrap();
        let report = best_epoch_summary(&rs, &dn_unit());
        let mean = |cur: Curriculum| {
            report
                .buckets
                .iter()
                .find(|b| b.curriculum == cur)
                .unwrap()
                .mean_epochs
        };
        let ratio = mean(Curriculum::FromScratch) / mean(Curriculum::Finetuned);
        assert!((ratio - 3.0).abs() < 0.35, "ratio {ratio}");
    }

    #[test]
    fn curves_via_build_curves_feed_frontier() {
        let r = run_with_best("a", Curriculum::FromScratch, 1_000, 1_000, 3_000.0, 12_000.0);
        let rs = RunSet::new(vec![r], vec![]).unwrap();
        let set = build_curves(&rs, Axis::Compute, CurveLevel::WithinRun).unwrap();
        let frontier = pareto_frontier(&set.curves).unwrap();
        assert!(!frontier.is_empty());
        assert!(frontier.windows(2).all(|w| w[0].loss > w[1].loss));
    }
}
