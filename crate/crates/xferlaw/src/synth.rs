//! Synthetic run sets generated from known ground-truth laws.
//!
//! From-scratch converged losses come from the scaling surface, fine-tuned
//! losses from the same surface evaluated at total effective data
//! `d_finetune + k d_finetune^alpha n^beta`. Optional multi-checkpoint
//! curves follow a documented power-law-in-compute trajectory with a
//! converged tail and a mild overfitting rise past the best point. Noise
//! is multiplicative log-normal on loss, and generation is deterministic
//! for a seed regardless of thread count (each grid cell draws from its
//! own RNG stream).

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::curve_fit::ScalingLawParams;
use crate::error::Result;
use crate::run_store::{Checkpoint, Curriculum, RunRecord, RunSet};
use crate::transfer_law::{evaluate_transfer, TransferCoefficients};

/// Shape of generated training curves (multi-checkpoint mode).
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct TrainingCurveShape {
    /// Checkpoints up to and including the best point.
    pub checkpoints_to_best: usize,
    /// Checkpoints past the best point (overfitting tail).
    pub overtrain_checkpoints: usize,
    /// Decades of data seen covered below the best point.
    pub span_decades: f64,
    /// Relative size of the decaying transient left at the best point.
    pub tail_eps: f64,
    /// Data-seen factor trained beyond the best point.
    pub overtrain_factor: f64,
    /// Relative loss rise at the end of the overtraining tail.
    pub overfit_rise: f64,
}

impl Default for TrainingCurveShape {
    fn default() -> Self {
        TrainingCurveShape {
            checkpoints_to_best: 20,
            overtrain_checkpoints: 4,
            span_decades: 3.0,
            tail_eps: 1e-5,
            overtrain_factor: 1.3,
            overfit_rise: 0.05,
        }
    }
}

/// A fine-tuned cell planted with reduced effective data, so that
/// `d_effective = d_eff_factor * d_finetune < d_finetune`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OssifiedCell {
    pub n_params: u64,
    pub d_finetune: u64,
    /// Fraction of the fine-tuning set the run is effectively worth.
    pub d_eff_factor: f64,
}

/// Everything the generator knows: the true laws, the grids, and the noise.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroundTruth {
    pub scaling: ScalingLawParams,
    pub transfer: TransferCoefficients,
    pub pretrain_label: String,
    pub n_grid: Vec<u64>,
    pub d_grid: Vec<u64>,
    /// Relative multiplicative noise on loss (log-normal sigma).
    pub noise_sigma: f64,
    pub seed: u64,
    /// Epochs to the best point for from-scratch runs.
    pub epochs_from_scratch: f64,
    /// Epochs to the best point for fine-tuned runs.
    pub epochs_finetuned: f64,
    /// Baseline grid density used by [`generate_pipeline`].
    pub baseline_points_per_decade: usize,
    /// None emits single-checkpoint converged runs.
    pub curve: Option<TrainingCurveShape>,
    pub ossified_cells: Vec<OssifiedCell>,
}

impl Default for GroundTruth {
    fn default() -> Self {
        GroundTruth {
            // placeholder surface chosen so the default grids sit well
            // inside the low-data regime and interpolation is well
            // conditioned; not a fit to any measured corpus
            scaling: ScalingLawParams {
                n_c: 1e10,
                alpha_n: 0.24,
                d_c: 1e12,
                alpha_d: 0.30,
            },
            transfer: crate::transfer_law::text_to_python(),
            pretrain_label: "text".into(),
            n_grid: vec![100_000, 1_000_000, 10_000_000, 100_000_000, 1_000_000_000],
            d_grid: vec![100_000, 1_000_000, 10_000_000, 100_000_000],
            noise_sigma: 0.0,
            seed: 0,
            epochs_from_scratch: 9.0,
            epochs_finetuned: 3.0,
            baseline_points_per_decade: 8,
            curve: None,
            ossified_cells: Vec::new(),
        }
    }
}

impl GroundTruth {
    /// Converged fine-tuned loss at a grid cell, honoring planted
    /// ossification.
    pub fn finetuned_loss(&self, n_params: u64, d_finetune: u64) -> f64 {
        let d_eff = self.finetuned_effective_data(n_params, d_finetune);
        self.scaling.loss(n_params as f64, d_eff)
    }

    /// True effective data at a fine-tuned cell.
    pub fn finetuned_effective_data(&self, n_params: u64, d_finetune: u64) -> f64 {
        match self
            .ossified_cells
            .iter()
            .find(|c| c.n_params == n_params && c.d_finetune == d_finetune)
        {
            Some(cell) => cell.d_eff_factor * d_finetune as f64,
            None => {
                d_finetune as f64
                    + evaluate_transfer(&self.transfer, n_params as f64, d_finetune as f64)
            }
        }
    }
}

/// One log-normal factor per cell, drawn from a stream derived from the
/// cell tag so parallel generation stays deterministic.
fn noise_factor(gt: &GroundTruth, stream: u64) -> f64 {
    if gt.noise_sigma == 0.0 {
        return 1.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(gt.seed);
    rng.set_stream(stream);
    let normal = Normal::new(0.0, gt.noise_sigma).expect("sigma checked non-negative");
    normal.sample(&mut rng).exp()
}

fn cell_stream(kind: u64, i: usize, j: usize) -> u64 {
    (kind << 48) ^ ((i as u64) << 24) ^ j as u64
}

/// Assemble the checkpoints of one run.
///
/// Single-checkpoint mode records the converged loss at the planted epoch
/// count. Curve mode lays checkpoints log-spaced in data seen, decaying as
/// a power law from a warm-start loss to the converged loss (transient
/// `tail_eps` at the best point), then rising gently while overtraining.
/// Compute is `6 * n * data_seen`.
fn make_run(
    run_id: String,
    curriculum: Curriculum,
    pretrain_label: String,
    n_params: u64,
    d_finetune: u64,
    converged_loss: f64,
    warm_loss: f64,
    epochs: f64,
    curve: Option<&TrainingCurveShape>,
) -> RunRecord {
    let total_best = epochs * d_finetune as f64;
    let flops = |s: f64| 6.0 * n_params as f64 * s;
    let checkpoints = match curve {
        None => vec![Checkpoint {
            data_seen: total_best,
            compute: Some(flops(total_best)),
            eval_loss: converged_loss,
        }],
        Some(shape) => {
            let warm = warm_loss.max(converged_loss * (1.0 + 1000.0 * shape.tail_eps));
            let amplitude = warm - converged_loss;
            let s0 = total_best * 10f64.powf(-shape.span_decades);
            // decay exponent pinned so the transient at the best point is
            // exactly tail_eps * converged_loss
            let p = (amplitude / (shape.tail_eps * converged_loss)).ln()
                / (1.0 + total_best / s0).ln();
            let n1 = shape.checkpoints_to_best.max(2);
            let mut checkpoints = Vec::with_capacity(n1 + shape.overtrain_checkpoints);
            for i in 0..n1 {
                let frac = i as f64 / (n1 - 1) as f64;
                let s = total_best * 10f64.powf(-shape.span_decades * (1.0 - frac));
                let transient = amplitude * (1.0 + s / s0).powf(-p);
                checkpoints.push(Checkpoint {
                    data_seen: s,
                    compute: Some(flops(s)),
                    eval_loss: converged_loss + transient,
                });
            }
            let loss_at_best = checkpoints[n1 - 1].eval_loss;
            let overtrain_span = total_best * (shape.overtrain_factor - 1.0);
            for j in 1..=shape.overtrain_checkpoints {
                let s = total_best + overtrain_span * j as f64 / shape.overtrain_checkpoints as f64;
                let rise = shape.overfit_rise
                    * converged_loss
                    * ((s - total_best) / overtrain_span).powi(2);
                checkpoints.push(Checkpoint {
                    data_seen: s,
                    compute: Some(flops(s)),
                    eval_loss: loss_at_best + rise,
                });
            }
            checkpoints
        }
    };
    RunRecord {
        run_id,
        curriculum,
        pretrain_label,
        n_params,
        d_finetune,
        checkpoints,
    }
}

/// From-scratch runs over the full `n_grid` x `d_grid`.
pub fn generate_fromscratch(gt: &GroundTruth) -> Result<RunSet> {
    generate_fromscratch_on(gt, &gt.d_grid)
}

fn generate_fromscratch_on(gt: &GroundTruth, d_grid: &[u64]) -> Result<RunSet> {
    gt.scaling.validate()?;
    let cells: Vec<(usize, usize, u64, u64)> = gt
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| {
            d_grid
                .iter()
                .enumerate()
                .map(move |(j, &d)| (i, j, n, d))
        })
        .collect();
    let runs = crate::exec::map_cells(cells, |(i, j, n, d)| {
        let noise = noise_factor(gt, cell_stream(1, i, j));
        let converged = gt.scaling.loss(n as f64, d as f64) * noise;
        let warm = gt.scaling.loss(n as f64, 100.0) * noise;
        make_run(
            format!("fs-n{n}-d{d}"),
            Curriculum::FromScratch,
            String::new(),
            n,
            d,
            converged,
            warm,
            gt.epochs_from_scratch,
            gt.curve.as_ref(),
        )
    });
    RunSet::new(runs, vec![format!("synth:fromscratch:seed={}", gt.seed)])
}

/// Fine-tuned runs over `n_grid` x `d_grid` plus any planted ossified
/// cells off the grid.
pub fn generate_finetuned(gt: &GroundTruth) -> Result<RunSet> {
    gt.scaling.validate()?;
    let mut cells: Vec<(usize, usize, u64, u64)> = gt
        .n_grid
        .iter()
        .enumerate()
        .flat_map(|(i, &n)| {
            gt.d_grid
                .iter()
                .enumerate()
                .map(move |(j, &d)| (i, j, n, d))
        })
        .collect();
    // planted cells that are not grid cells get their own rows
    for (extra, cell) in gt.ossified_cells.iter().enumerate() {
        let on_grid = gt.n_grid.contains(&cell.n_params) && gt.d_grid.contains(&cell.d_finetune);
        if !on_grid {
            cells.push((usize::MAX - extra, 0, cell.n_params, cell.d_finetune));
        }
    }
    let runs = crate::exec::map_cells(cells, |(i, j, n, d)| {
        let noise = noise_factor(gt, cell_stream(2, i, j));
        let converged = gt.finetuned_loss(n, d) * noise;
        // warm start: the zero-shot loss of the pre-trained model
        let zero_shot_data = 1.0 + evaluate_transfer(&gt.transfer, n as f64, 1.0);
        let warm = gt.scaling.loss(n as f64, zero_shot_data) * noise;
        make_run(
            format!("ft-{}-n{n}-df{d}", gt.pretrain_label),
            Curriculum::Finetuned,
            gt.pretrain_label.clone(),
            n,
            d,
            converged,
            warm,
            gt.epochs_finetuned,
            gt.curve.as_ref(),
        )
    });
    RunSet::new(runs, vec![format!("synth:finetuned:seed={}", gt.seed)])
}

/// The dataset size span the from-scratch baselines must cover so that
/// every fine-tuned loss in the grid is attainable by interpolation.
fn baseline_span(gt: &GroundTruth) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &d in &gt.d_grid {
        lo = lo.min(d as f64);
        hi = hi.max(d as f64);
    }
    for &n in &gt.n_grid {
        for &d in &gt.d_grid {
            hi = hi.max(gt.finetuned_effective_data(n, d));
        }
    }
    for cell in &gt.ossified_cells {
        lo = lo.min(cell.d_eff_factor * cell.d_finetune as f64);
        hi = hi.max(cell.d_finetune as f64);
    }
    (lo * 0.5, hi * 2.0)
}

/// Log-spaced baseline dataset grid covering `baseline_span`.
pub fn baseline_d_grid(gt: &GroundTruth) -> Vec<u64> {
    let (lo, hi) = baseline_span(gt);
    let ppd = gt.baseline_points_per_decade.max(1) as f64;
    let decades = (hi / lo).log10();
    let npts = (decades * ppd).ceil() as usize + 1;
    let mut grid: Vec<u64> = (0..npts)
        .map(|j| (lo * 10f64.powf(j as f64 / ppd)).round().max(1.0) as u64)
        .collect();
    grid.dedup();
    grid
}

/// Everything the analysis pipeline needs in one run set: from-scratch
/// baselines on a dense extended grid plus fine-tuned runs on the
/// configured grid.
pub fn generate_pipeline(gt: &GroundTruth) -> Result<RunSet> {
    let baselines = generate_fromscratch_on(gt, &baseline_d_grid(gt))?;
    let finetuned = generate_finetuned(gt)?;
    let mut runs = baselines.runs;
    runs.extend(finetuned.runs);
    RunSet::new(runs, vec![format!("synth:pipeline:seed={}", gt.seed)])
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RoundtripTolerances {
    pub k: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl RoundtripTolerances {
    pub fn uniform(tol: f64) -> Self {
        RoundtripTolerances {
            k: tol,
            alpha: tol,
            beta: tol,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RoundtripReport {
    pub k_rel_err: f64,
    pub alpha_rel_err: f64,
    pub beta_rel_err: f64,
    pub pass: bool,
}

/// Relative recovery errors of fitted transfer coefficients against the
/// generating truth.
pub fn roundtrip_check(
    gt: &GroundTruth,
    recovered: &TransferCoefficients,
    tolerances: &RoundtripTolerances,
) -> RoundtripReport {
    let rel = |a: f64, b: f64| (a - b).abs() / b.abs();
    let k_rel_err = rel(recovered.k, gt.transfer.k);
    let alpha_rel_err = rel(recovered.alpha, gt.transfer.alpha);
    let beta_rel_err = rel(recovered.beta, gt.transfer.beta);
    RoundtripReport {
        k_rel_err,
        alpha_rel_err,
        beta_rel_err,
        pass: k_rel_err <= tolerances.k
            && alpha_rel_err <= tolerances.alpha
            && beta_rel_err <= tolerances.beta,
    }
}
