//! Shared fitting kernels: log-log lines, power law plus constant, logit
//! saturation curves, and the global from-scratch loss surface.
//!
//! All loss fits minimize residuals in log space, and every kernel is
//! deterministic given the same input ordering.

pub mod lm;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::run_store::LossCurve;
use lm::{LeastSquaresProblem, LmConfig, LmOutcome};

/// Coefficients of the from-scratch loss surface
/// `L(n, d) = [(n_c/n)^(alpha_n/alpha_d) + d_c/d]^alpha_d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingLawParams {
    pub n_c: f64,
    pub alpha_n: f64,
    pub d_c: f64,
    pub alpha_d: f64,
}

impl ScalingLawParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_c > 0.0
            && self.d_c > 0.0
            && self.alpha_n > 0.0
            && self.alpha_n < 2.0
            && self.alpha_d > 0.0
            && self.alpha_d < 2.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidCoefficients(format!(
                "scaling params out of domain: n_c={}, alpha_n={}, d_c={}, alpha_d={} \
                 (all positive, exponents in (0, 2))",
                self.n_c, self.alpha_n, self.d_c, self.alpha_d
            )))
        }
    }

    /// Converged loss at model size `n` and dataset size `d`.
    pub fn loss(&self, n: f64, d: f64) -> f64 {
        ((self.n_c / n).powf(self.alpha_n / self.alpha_d) + self.d_c / d).powf(self.alpha_d)
    }

    /// Infinite-data loss at model size `n`.
    pub fn loss_infinite_data(&self, n: f64) -> f64 {
        (self.n_c / n).powf(self.alpha_n)
    }
}

/// Outcome summary common to all kernels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    pub params: Vec<NamedParam>,
    pub residual_rms: f64,
    pub n_points: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedParam {
    pub name: String,
    pub value: f64,
}

fn named(name: &str, value: f64) -> NamedParam {
    NamedParam {
        name: name.to_string(),
        value,
    }
}

// ---------------------------------------------------------------------------
// Log-log line
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LineFit {
    /// Power-law exponent (slope in log10-log10 space).
    pub exponent: f64,
    pub log10_intercept: f64,
    pub fit: FitResult,
}

/// Ordinary least squares on `(log10 x, log10 y)`.
pub fn fit_loglog_line(points: &[(f64, f64)]) -> Result<LineFit> {
    if points.len() < 2 {
        return Err(Error::InsufficientData(format!(
            "log-log line needs at least 2 points, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "log-log line needs positive finite points, got ({x}, {y})"
            )));
        }
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x.log10(), y.log10()))
        .collect();
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::RankDeficient(
            "log-log line needs at least 2 distinct x values".into(),
        ));
    }
    let sxy: f64 = logs
        .iter()
        .map(|p| (p.0 - mean_x) * (p.1 - mean_y))
        .sum();
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual_rms = (logs
        .iter()
        .map(|p| {
            let pred = slope * p.0 + intercept;
            (p.1 - pred).powi(2)
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(LineFit {
        exponent: slope,
        log10_intercept: intercept,
        fit: FitResult {
            params: vec![named("exponent", slope), named("log10_intercept", intercept)],
            residual_rms,
            n_points: points.len(),
            converged: true,
            iterations: 0,
        },
    })
}

// ---------------------------------------------------------------------------
// Power law plus constant
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct PowerLawConstFit {
    /// Irreducible loss floor (>= 0).
    pub floor: f64,
    pub scale: f64,
    pub exponent: f64,
    pub fit: FitResult,
}

impl PowerLawConstFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.floor + (self.scale / x).powf(self.exponent)
    }
}

/// Residuals of `y = floor + (scale/x)^exponent` in log-loss space, with
/// the three parameters carried as logs so they stay positive.
pub struct PowerLawConstProblem {
    pub x: Vec<f64>,
    pub log_y: Vec<f64>,
}

impl PowerLawConstProblem {
    pub fn new(points: &[(f64, f64)]) -> Self {
        PowerLawConstProblem {
            x: points.iter().map(|p| p.0).collect(),
            log_y: points.iter().map(|p| p.1.ln()).collect(),
        }
    }

    fn model_ln(&self, p: &[f64], i: usize) -> (f64, f64, f64) {
        let (floor, scale, exponent) = (p[0].exp(), p[1].exp(), p[2].exp());
        let term = (scale / self.x[i]).powf(exponent);
        (floor, term, (floor + term).ln())
    }
}

impl LeastSquaresProblem for PowerLawConstProblem {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        (0..self.x.len())
            .map(|i| self.model_ln(p, i).2 - self.log_y[i])
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let exponent = p[2].exp();
        (0..self.x.len())
            .map(|i| {
                let (floor, term, _) = self.model_ln(p, i);
                let denom = floor + term;
                let scale = p[1].exp();
                vec![
                    floor / denom,
                    exponent * term / denom,
                    exponent * (scale / self.x[i]).ln() * term / denom,
                ]
            })
            .collect()
    }
}

/// Fit `y = floor + (scale/x)^exponent` with `floor >= 0`.
///
/// Initialized from `floor = 0.9 * min(y)` and a log-log line on the
/// remainder. Non-convergence is not an error; the best parameters come
/// back with `converged = false`.
pub fn fit_powerlaw_plus_const(points: &[(f64, f64)]) -> Result<PowerLawConstFit> {
    if points.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "power law plus constant needs at least 4 points, got {}",
            points.len()
        )));
    }
    for &(x, y) in points {
        if x <= 0.0 || y <= 0.0 || !x.is_finite() || !y.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "power-law fit needs positive finite points, got ({x}, {y})"
            )));
        }
    }

    let min_y = points.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let floor0 = 0.9 * min_y;
    let shifted: Vec<(f64, f64)> = points
        .iter()
        .map(|&(x, y)| (x, (y - floor0).max(1e-12 * min_y)))
        .collect();
    let line = fit_loglog_line(&shifted)?;
    // a near-zero initial exponent lets the power term imitate a constant
    // and leaves the floor unidentified; start it away from zero
    let exponent0 = (-line.exponent).clamp(0.25, 20.0);
    // (scale/x)^e = 10^intercept * x^slope  =>  scale = 10^(intercept/e)
    let ln_scale0 = (line.log10_intercept / exponent0) * std::f64::consts::LN_10;

    let problem = PowerLawConstProblem::new(points);
    let x0 = [floor0.ln(), ln_scale0.clamp(-690.0, 690.0), exponent0.ln()];
    let out = lm::minimize(&problem, &x0, &LmConfig::default());

    Ok(build_powerlaw_fit(points.len(), &out))
}

fn build_powerlaw_fit(n_points: usize, out: &LmOutcome) -> PowerLawConstFit {
    let floor = out.params[0].exp();
    let scale = out.params[1].exp();
    let exponent = out.params[2].exp();
    PowerLawConstFit {
        floor,
        scale,
        exponent,
        fit: FitResult {
            params: vec![
                named("floor", floor),
                named("scale", scale),
                named("exponent", exponent),
            ],
            residual_rms: out.residual_rms,
            n_points,
            converged: out.converged,
            iterations: out.iterations,
        },
    }
}

// ---------------------------------------------------------------------------
// Logit saturation
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct LogitFit {
    /// Model size at which the saturation curve crosses one half.
    pub n_star: f64,
    pub exponent: f64,
    pub fit: FitResult,
}

impl LogitFit {
    /// Saturating fraction `1 / (1 + (n_star/n)^exponent)`.
    pub fn eval(&self, n: f64) -> f64 {
        1.0 / (1.0 + (self.n_star / n).powf(self.exponent))
    }
}

/// Least squares on `logit(fraction) = exponent * (ln n - ln n_star)`.
///
/// With `fixed_exponent` only `n_star` is fit, and a single point
/// suffices.
pub fn fit_logit_saturation(
    points: &[(f64, f64)],
    fixed_exponent: Option<f64>,
) -> Result<LogitFit> {
    let offenders: Vec<(f64, f64)> = points
        .iter()
        .filter(|&&(_, f)| !(f > 0.0 && f < 1.0))
        .copied()
        .collect();
    if !offenders.is_empty() {
        return Err(Error::FractionOutOfRange { points: offenders });
    }
    let required = if fixed_exponent.is_some() { 1 } else { 2 };
    if points.len() < required {
        return Err(Error::InsufficientData(format!(
            "logit fit needs at least {required} points, got {}",
            points.len()
        )));
    }
    if let Some(e) = fixed_exponent {
        if e == 0.0 || !e.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "fixed exponent must be finite and nonzero, got {e}"
            )));
        }
    }

    let zu: Vec<(f64, f64)> = points
        .iter()
        .map(|&(n, f)| ((f / (1.0 - f)).ln(), n.ln()))
        .collect();
    let n = zu.len() as f64;

    let (exponent, intercept) = match fixed_exponent {
        Some(e) => {
            let c = zu.iter().map(|&(z, u)| z - e * u).sum::<f64>() / n;
            (e, c)
        }
        None => {
            let mean_u = zu.iter().map(|p| p.1).sum::<f64>() / n;
            let mean_z = zu.iter().map(|p| p.0).sum::<f64>() / n;
            let suu: f64 = zu.iter().map(|p| (p.1 - mean_u).powi(2)).sum();
            if suu == 0.0 {
                return Err(Error::RankDeficient(
                    "logit fit needs at least 2 distinct n_params".into(),
                ));
            }
            let suz: f64 = zu
                .iter()
                .map(|p| (p.1 - mean_u) * (p.0 - mean_z))
                .sum();
            let e = suz / suu;
            if e == 0.0 {
                return Err(Error::RankDeficient(
                    "logit slope is zero; n_star is unidentifiable".into(),
                ));
            }
            (e, mean_z - e * mean_u)
        }
    };

    let ln_n_star = -intercept / exponent;
    let residual_rms = (zu
        .iter()
        .map(|&(z, u)| (z - (exponent * u + intercept)).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();

    Ok(LogitFit {
        n_star: ln_n_star.exp(),
        exponent,
        fit: FitResult {
            params: vec![
                named("n_star", ln_n_star.exp()),
                named("exponent", exponent),
            ],
            residual_rms,
            n_points: points.len(),
            converged: true,
            iterations: 0,
        },
    })
}

// ---------------------------------------------------------------------------
// Global from-scratch surface
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SurfaceResidual {
    pub n_params: f64,
    pub d: f64,
    pub observed_loss: f64,
    pub predicted_loss: f64,
    /// ln(predicted) - ln(observed)
    pub residual_log: f64,
}

#[derive(Debug, Clone)]
pub struct GlobalFit {
    pub params: ScalingLawParams,
    pub fit: FitResult,
    pub residuals: Vec<SurfaceResidual>,
}

/// Residuals of the loss surface in log space with parameters
/// `[ln n_c, ln alpha_n, ln d_c, ln alpha_d]`.
pub struct GlobalSurfaceProblem {
    pub points: Vec<(f64, f64, f64)>, // (n, d, loss)
}

impl GlobalSurfaceProblem {
    fn terms(&self, p: &[f64], i: usize) -> (f64, f64, f64, f64) {
        let (n_c, alpha_n, d_c, alpha_d) = (p[0].exp(), p[1].exp(), p[2].exp(), p[3].exp());
        let (n, d, _) = self.points[i];
        let a = (n_c / n).powf(alpha_n / alpha_d);
        let b = d_c / d;
        (a, b, alpha_n, alpha_d)
    }
}

impl LeastSquaresProblem for GlobalSurfaceProblem {
    fn residuals(&self, p: &[f64]) -> Vec<f64> {
        (0..self.points.len())
            .map(|i| {
                let (a, b, _, alpha_d) = self.terms(p, i);
                alpha_d * (a + b).ln() - self.points[i].2.ln()
            })
            .collect()
    }

    fn jacobian(&self, p: &[f64]) -> Vec<Vec<f64>> {
        let n_c = p[0].exp();
        (0..self.points.len())
            .map(|i| {
                let (a, b, alpha_n, alpha_d) = self.terms(p, i);
                let n = self.points[i].0;
                let sum = a + b;
                let log_ratio = (n_c / n).ln();
                // d ln L / d ln n_c
                let g_nc = alpha_n * a / sum;
                // d ln L / d ln alpha_n = alpha_n * a * ln(n_c/n) / sum
                let g_an = alpha_n * a * log_ratio / sum;
                // d ln L / d ln d_c
                let g_dc = alpha_d * b / sum;
                // d ln L / d ln alpha_d
                let g_ad = alpha_d * (sum.ln() - (alpha_n / alpha_d) * log_ratio * a / sum);
                vec![g_nc, g_an, g_dc, g_ad]
            })
            .collect()
    }
}

/// Fit the loss surface to `(n, d, loss)` triples.
pub fn fit_global_surface(triples: &[(f64, f64, f64)]) -> Result<GlobalFit> {
    let mut ns: Vec<f64> = triples.iter().map(|t| t.0).collect();
    let mut ds: Vec<f64> = triples.iter().map(|t| t.1).collect();
    ns.sort_by(f64::total_cmp);
    ns.dedup();
    ds.sort_by(f64::total_cmp);
    ds.dedup();
    if ns.len() < 3 || ds.len() < 3 {
        return Err(Error::RankDeficient(format!(
            "surface fit needs >= 3 model sizes x >= 3 dataset sizes, got {} x {}",
            ns.len(),
            ds.len()
        )));
    }
    for &(n, d, l) in triples {
        if n <= 0.0 || d <= 0.0 || l <= 0.0 || !l.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "surface fit needs positive finite points, got ({n}, {d}, {l})"
            )));
        }
    }

    // init alpha_n, n_c from loss vs n at each n's largest d
    let mut at_max_d: Vec<(f64, f64)> = Vec::new();
    for &n in &ns {
        let best = triples
            .iter()
            .filter(|t| t.0 == n)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("n came from triples");
        at_max_d.push((n, best.2));
    }
    let n_line = fit_loglog_line(&at_max_d)?;
    let alpha_n0 = (-n_line.exponent).clamp(0.01, 1.9);
    let ln_n_c0 = (n_line.log10_intercept / alpha_n0) * std::f64::consts::LN_10;

    // init alpha_d, d_c from loss vs d at the largest n
    let n_max = *ns.last().expect("nonempty");
    let d_slice: Vec<(f64, f64)> = triples
        .iter()
        .filter(|t| t.0 == n_max)
        .map(|t| (t.1, t.2))
        .collect();
    let d_line = fit_loglog_line(&d_slice)?;
    let alpha_d0 = (-d_line.exponent).clamp(0.01, 1.9);
    let ln_d_c0 = (d_line.log10_intercept / alpha_d0) * std::f64::consts::LN_10;

    let problem = GlobalSurfaceProblem {
        points: triples.to_vec(),
    };
    let x0 = [
        ln_n_c0.clamp(-690.0, 690.0),
        alpha_n0.ln(),
        ln_d_c0.clamp(-690.0, 690.0),
        alpha_d0.ln(),
    ];
    let out = lm::minimize(&problem, &x0, &LmConfig::default());

    let params = ScalingLawParams {
        n_c: out.params[0].exp(),
        alpha_n: out.params[1].exp(),
        d_c: out.params[2].exp(),
        alpha_d: out.params[3].exp(),
    };
    params.validate()?;

    let residuals = triples
        .iter()
        .map(|&(n, d, l)| {
            let predicted = params.loss(n, d);
            SurfaceResidual {
                n_params: n,
                d,
                observed_loss: l,
                predicted_loss: predicted,
                residual_log: predicted.ln() - l.ln(),
            }
        })
        .collect();

    Ok(GlobalFit {
        fit: FitResult {
            params: vec![
                named("n_c", params.n_c),
                named("alpha_n", params.alpha_n),
                named("d_c", params.d_c),
                named("alpha_d", params.alpha_d),
            ],
            residual_rms: out.residual_rms,
            n_points: triples.len(),
            converged: out.converged,
            iterations: out.iterations,
        },
        params,
        residuals,
    })
}

/// Fit the loss surface to across-runs from-scratch curves.
pub fn fit_global_fromscratch(curves: &[LossCurve]) -> Result<GlobalFit> {
    let mut triples = Vec::new();
    for curve in curves {
        for p in &curve.points {
            triples.push((curve.key.n_params as f64, p.x, p.loss));
        }
    }
    fit_global_surface(&triples)
}
