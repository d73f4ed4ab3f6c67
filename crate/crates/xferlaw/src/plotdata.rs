//! Plot-data assembly: x/y series with labels, written as JSON so any
//! renderer can redraw the standard views.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::effective_data::EffectiveDataRow;
use crate::frontier::{ConvergedPoint, FrontierPoint};
use crate::regime::DNFit;
use crate::run_store::{Curriculum, LossCurve};
use crate::transfer_law::TransferCoefficients;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotSeries {
    pub label: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlotData {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<PlotSeries>,
}

/// Transferred fraction against model size, one series per fine-tuning
/// dataset size, with the fitted saturation curves alongside.
pub fn fraction_vs_n(table: &[EffectiveDataRow], fit: Option<&TransferCoefficients>) -> PlotData {
    let mut groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in table {
        if let Some(fraction) = row.fraction {
            groups
                .entry(row.d_finetune)
                .or_default()
                .push((row.n_params as f64, fraction));
        }
    }
    let mut series = Vec::new();
    for (df, mut pts) in groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(PlotSeries {
            label: format!("d_finetune={df:.0e}", df = df as f64),
            x: pts.iter().map(|p| p.0).collect(),
            y: pts.iter().map(|p| p.1).collect(),
        });
    }
    if let Some(c) = fit {
        for p in &c.per_df_nstar {
            let xs: Vec<f64> = (0..60)
                .map(|i| 10f64.powf(4.0 + i as f64 * 0.125))
                .collect();
            let ys: Vec<f64> = xs
                .iter()
                .map(|&n| 1.0 / (1.0 + (p.n_star / n).powf(c.beta)))
                .collect();
            series.push(PlotSeries {
                label: format!(
                    "fit d_finetune={df:.0e}",
                    df = p.d_finetune as f64
                ),
                x: xs,
                y: ys,
            });
        }
    }
    PlotData {
        title: "fraction of effective data from transfer".into(),
        x_label: "n_params".into(),
        y_label: "d_transferred / d_effective".into(),
        series,
    }
}

/// Converged loss against model size, one series per (curriculum,
/// dataset size).
pub fn loss_vs_n(table: &[EffectiveDataRow], fromscratch: &[LossCurve]) -> PlotData {
    let mut series = Vec::new();

    let mut ft_groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in table {
        ft_groups
            .entry(row.d_finetune)
            .or_default()
            .push((row.n_params as f64, row.loss));
    }
    for (df, mut pts) in ft_groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(PlotSeries {
            label: format!("finetuned d_finetune={df:.0e}", df = df as f64),
            x: pts.iter().map(|p| p.0).collect(),
            y: pts.iter().map(|p| p.1).collect(),
        });
    }

    // from-scratch curves arrive keyed by n; regroup per dataset size
    let mut fs_groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for curve in fromscratch {
        for p in &curve.raw {
            fs_groups
                .entry(p.x as u64)
                .or_default()
                .push((curve.key.n_params as f64, p.loss));
        }
    }
    for (d, mut pts) in fs_groups {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.push(PlotSeries {
            label: format!("from_scratch d={d:.0e}", d = d as f64),
            x: pts.iter().map(|p| p.0).collect(),
            y: pts.iter().map(|p| p.1).collect(),
        });
    }

    PlotData {
        title: "converged loss by model size".into(),
        x_label: "n_params".into(),
        y_label: "loss (nats/token)".into(),
        series,
    }
}

/// Normalized transfer `d_transferred / d_of_n` against normalized dataset
/// size `d_finetune / d_of_n`, one series per model size.
pub fn transfer_normalized(table: &[EffectiveDataRow], dn: &DNFit) -> PlotData {
    let mut groups: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in table {
        if let Some(dt) = row.d_transferred {
            let d_of_n = dn.d_of_n(row.n_params as f64);
            groups
                .entry(row.n_params)
                .or_default()
                .push((row.d_finetune as f64 / d_of_n, dt / d_of_n));
        }
    }
    let series = groups
        .into_iter()
        .map(|(n, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            PlotSeries {
                label: format!("n_params={n:.0e}", n = n as f64),
                x: pts.iter().map(|p| p.0).collect(),
                y: pts.iter().map(|p| p.1).collect(),
            }
        })
        .collect();
    PlotData {
        title: "transfer normalized by data needs".into(),
        x_label: "d_finetune / d_of_n".into(),
        y_label: "d_transferred / d_of_n".into(),
        series,
    }
}

/// Training curves in compute with the pareto frontier overlaid.
pub fn compute_frontier(curves: &[LossCurve], frontier: &[FrontierPoint]) -> PlotData {
    let mut series: Vec<PlotSeries> = curves
        .iter()
        .map(|c| PlotSeries {
            label: format!(
                "{} {}",
                c.key.curriculum,
                c.key.run_id.clone().unwrap_or_default()
            ),
            x: c.raw.iter().map(|p| p.x).collect(),
            y: c.raw.iter().map(|p| p.loss).collect(),
        })
        .collect();
    series.push(PlotSeries {
        label: "frontier".into(),
        x: frontier.iter().map(|p| p.compute).collect(),
        y: frontier.iter().map(|p| p.loss).collect(),
    });
    PlotData {
        title: "compute-efficient frontier".into(),
        x_label: "compute (FLOPs)".into(),
        y_label: "loss (nats/token)".into(),
        series,
    }
}

/// Converged compute per run, one series per (curriculum, model size).
pub fn converged_compute_view(
    points: &[(Curriculum, u64, ConvergedPoint)],
) -> PlotData {
    let mut groups: BTreeMap<(Curriculum, u64), Vec<(f64, f64)>> = BTreeMap::new();
    for (curriculum, n, p) in points {
        groups
            .entry((*curriculum, *n))
            .or_default()
            .push((p.compute, p.loss));
    }
    let series = groups
        .into_iter()
        .map(|((curriculum, n), mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            PlotSeries {
                label: format!("{curriculum} n_params={n:.0e}", n = n as f64),
                x: pts.iter().map(|p| p.0).collect(),
                y: pts.iter().map(|p| p.1).collect(),
            }
        })
        .collect();
    PlotData {
        title: "converged compute by dataset size".into(),
        x_label: "compute (FLOPs)".into(),
        y_label: "converged loss (nats/token)".into(),
        series,
    }
}

/// Best epoch against normalized dataset size, one series per curriculum.
pub fn best_epoch_view(report: &crate::frontier::BestEpochReport) -> PlotData {
    let mut groups: BTreeMap<Curriculum, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &report.rows {
        groups
            .entry(row.curriculum)
            .or_default()
            .push((row.regime_ratio, row.epochs_at_best));
    }
    let series = groups
        .into_iter()
        .map(|(curriculum, mut pts)| {
            pts.sort_by(|a, b| a.0.total_cmp(&b.0));
            PlotSeries {
                label: curriculum.to_string(),
                x: pts.iter().map(|p| p.0).collect(),
                y: pts.iter().map(|p| p.1).collect(),
            }
        })
        .collect();
    PlotData {
        title: "best epoch by data regime".into(),
        x_label: "d_finetune / d_of_n".into(),
        y_label: "epochs at best loss".into(),
        series,
    }
}
