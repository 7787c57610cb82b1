//! Fit configuration, results and the EM driver shared by all variants.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LmError, Result};
use crate::model::LatentModel;
use crate::prob::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StartRule {
    Deterministic,
    /// Deterministic start plus `n_starts` random starts; the best log-likelihood wins.
    Random,
    /// Caller-supplied starting values.
    Input,
}

/// Time structure of basic-model transition matrices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransitionLayout {
    Heterogeneous,
    Homogeneous,
}

/// Transition parameterization of the covariate-in-latent model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LatentParam {
    Multilogit,
    Difflogit,
}

/// Missing fields take their defaults when deserializing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FitConfig {
    /// Number of latent states (k, or k2 for the mixed model).
    pub k: usize,
    /// Number of latent classes (k1) for the mixed model.
    pub k1: usize,
    pub tol: f64,
    pub maxit: usize,
    pub start: StartRule,
    /// Random starts; defaults to `2 + k`.
    pub n_starts: Option<usize>,
    pub seed: u64,
    pub transitions: TransitionLayout,
    pub param: LatentParam,
    pub fix_psi: bool,
    /// Try a squared extrapolation after every two EM steps, kept only
    /// when it raises the log-likelihood.
    pub accelerate: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            k: 2,
            k1: 1,
            tol: 1e-8,
            maxit: 1000,
            start: StartRule::Deterministic,
            n_starts: None,
            seed: 0,
            transitions: TransitionLayout::Heterogeneous,
            param: LatentParam::Multilogit,
            fix_psi: false,
            accelerate: true,
        }
    }
}

impl FitConfig {
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            ..Self::default()
        }
    }

    pub fn random_starts(&self) -> usize {
        self.n_starts.unwrap_or(2 + self.k)
    }

    pub(crate) fn check(&self) -> Result<()> {
        if self.k == 0 || self.k1 == 0 {
            return Err(LmError::arg("number of latent states and classes must be positive"));
        }
        if !(self.tol > 0.0) {
            return Err(LmError::arg("tolerance must be positive"));
        }
        if self.maxit == 0 {
            return Err(LmError::arg("maxit must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonotoneViolation {
    pub iteration: usize,
    pub decrease: f64,
}

/// Non-fatal events recorded while fitting.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Simplex rows with zero expected counts that were reset to uniform.
    pub zero_count_resets: usize,
    /// Inner Newton solves that stopped before reaching their tolerance.
    pub inner_not_converged: usize,
    /// Inner Newton steps that needed a ridge on the Hessian.
    pub ridge_steps: usize,
    /// Coefficients pinned at the +-50 cap.
    pub coefficient_caps: usize,
    /// Transition updates that were shortened to keep the expected
    /// complete-data log-likelihood from decreasing.
    pub damped_transition_updates: usize,
    pub monotonicity_violations: Vec<MonotoneViolation>,
    /// Latent classes whose estimated mass collapsed to zero.
    pub empty_classes: Vec<usize>,
}

impl Diagnostics {
    pub fn is_clean(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult<P> {
    pub params: P,
    pub loglik: f64,
    /// Log-likelihood at the start and after every M-step.
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub np: usize,
    pub n_total: u64,
    pub aic: f64,
    pub bic: f64,
    pub seed: u64,
    /// Winning start: 0 is the deterministic (or input) start, `i > 0` is random start `i`.
    pub start_index: usize,
    pub diagnostics: Diagnostics,
}

pub fn aic(loglik: f64, np: usize) -> f64 {
    -2.0 * loglik + 2.0 * np as f64
}

pub fn bic(loglik: f64, np: usize, n: u64) -> f64 {
    -2.0 * loglik + (n as f64).ln() * np as f64
}

/// One EM-estimable parameter set.
pub(crate) trait EmModel: LatentModel {
    type Stats: Send;

    /// Trailing `pack()` coordinates held fixed under `cfg`.
    fn fixed_tail(&self, _cfg: &FitConfig) -> usize {
        0
    }

    fn e_step(&self, ds: &Dataset) -> Result<(f64, Self::Stats)>;

    /// Observed-data score from E-step statistics computed at `self`.
    fn score_from_stats(&self, ds: &Dataset, stats: &Self::Stats) -> Result<Vec<f64>>;

    fn m_step(
        &self,
        ds: &Dataset,
        stats: &Self::Stats,
        cfg: &FitConfig,
        diag: &mut Diagnostics,
    ) -> Result<Self>;
}

pub(crate) struct EmOutcome<P> {
    pub params: P,
    pub loglik: f64,
    pub trace: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub diagnostics: Diagnostics,
}

/// Tolerance below which a log-likelihood decrease is attributed to rounding.
const MONOTONE_SLACK: f64 = 1e-10;

/// Alternate E- and M-steps until the relative increase drops below `tol`
/// and the score is small.
///
/// With `cfg.accelerate`, every two EM steps are followed by a squared
/// extrapolation in the unconstrained coordinates. It is accepted only if it
/// strictly increases the log-likelihood, so the trace stays monotone; an
/// accepted extrapolation counts as one iteration.
pub(crate) fn run_em<P: EmModel>(ds: &Dataset, start: P, cfg: &FitConfig) -> Result<EmOutcome<P>> {
    let mut diag = Diagnostics::default();
    let mut params = start;
    let (mut ll, mut stats) = params.e_step(ds)?;
    if !ll.is_finite() {
        return Err(LmError::numerical("starting values give zero likelihood"));
    }
    let mut trace = vec![ll];
    let mut converged = false;
    let mut iterations = 0;
    // Packed iterates since the last extrapolation attempt.
    let mut iterates = vec![params.pack()];
    while iterations < cfg.maxit {
        iterations += 1;
        let next = params.m_step(ds, &stats, cfg, &mut diag)?;
        let (next_ll, next_stats) = next.e_step(ds)?;
        if !next_ll.is_finite() {
            return Err(LmError::numerical(format!(
                "log-likelihood became non-finite at iteration {iterations}"
            )));
        }
        let delta = next_ll - ll;
        if delta < -MONOTONE_SLACK * next_ll.abs() {
            diag.monotonicity_violations.push(MonotoneViolation {
                iteration: iterations,
                decrease: -delta,
            });
        }
        trace.push(next_ll);
        params = next;
        ll = next_ll;
        stats = next_stats;
        if delta / ll.abs().max(f64::MIN_POSITIVE) < cfg.tol && score_is_small(&params, ds, &stats, cfg, ll)? {
            converged = true;
            break;
        }

        if !cfg.accelerate {
            continue;
        }
        iterates.push(params.pack());
        if iterates.len() < 3 {
            continue;
        }
        let cand = (iterations < cfg.maxit)
            .then(|| squarem_point(&iterates[0], &iterates[1], &iterates[2]))
            .flatten()
            .and_then(|t| params.unpack(&t).ok());
        if let Some(cand) = cand {
            if let Ok((cand_ll, cand_stats)) = cand.e_step(ds) {
                if cand_ll.is_finite() && cand_ll > ll {
                    iterations += 1;
                    trace.push(cand_ll);
                    params = cand;
                    ll = cand_ll;
                    stats = cand_stats;
                }
            }
        }
        iterates = vec![params.pack()];
    }
    Ok(EmOutcome {
        params,
        loglik: ll,
        trace,
        iterations,
        converged,
        diagnostics: diag,
    })
}

/// Squared extrapolation from three successive EM iterates, with the step
/// length `-|r| / |v|` bounded away from plain EM (`-1`).
fn squarem_point(t0: &[f64], t1: &[f64], t2: &[f64]) -> Option<Vec<f64>> {
    let r: Vec<f64> = t1.iter().zip(t0).map(|(a, b)| a - b).collect();
    let v: Vec<f64> = t2.iter().zip(t1).zip(&r).map(|((a, b), r)| a - b - r).collect();
    let (rn, vn) = (norm(&r), norm(&v));
    if !(rn > 0.0 && vn > 0.0) {
        return None;
    }
    let alpha = (-rn / vn).min(-1.0);
    let out: Vec<f64> = t0
        .iter()
        .zip(&r)
        .zip(&v)
        .map(|((t, r), v)| t - 2.0 * alpha * r + alpha * alpha * v)
        .collect();
    out.iter().all(|x| x.is_finite()).then_some(out)
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Second convergence condition: a relative log-likelihood change below
/// `tol` can occur well before the score vanishes when EM is slow, so the
/// free score coordinates must also be within `100 * tol * |loglik|`.
fn score_is_small<P: EmModel>(params: &P, ds: &Dataset, stats: &P::Stats, cfg: &FitConfig, ll: f64) -> Result<bool> {
    let g = params.score_from_stats(ds, stats)?;
    let free = g.len() - params.fixed_tail(cfg).min(g.len());
    let bound = 100.0 * cfg.tol * ll.abs();
    Ok(g[..free].iter().all(|v| v.abs() <= bound))
}

/// Run EM from every start implied by `cfg` and keep the best fit.
///
/// Starts are evaluated in parallel; random start `i` draws from sub-stream
/// `i - 1` of `cfg.seed`, and ties in log-likelihood go to the lower index.
pub(crate) fn fit_multistart<P, D, R>(
    ds: &Dataset,
    cfg: &FitConfig,
    input: Option<&P>,
    deterministic: D,
    random: R,
) -> Result<(EmOutcome<P>, usize)>
where
    P: EmModel,
    D: Fn() -> Result<P> + Sync,
    R: Fn(&mut RngStream) -> Result<P> + Sync,
{
    cfg.check()?;
    if ds.n_configs() == 0 {
        return Err(LmError::data("dataset is empty"));
    }
    let n_starts = match cfg.start {
        StartRule::Input => {
            let p = input
                .ok_or_else(|| LmError::arg("start = input requires starting values"))?
                .clone();
            return Ok((run_em(ds, p, cfg)?, 0));
        }
        StartRule::Deterministic => 1,
        StartRule::Random => 1 + cfg.random_starts(),
    };
    let base = RngStream::new(cfg.seed);
    let outcomes: Vec<Result<EmOutcome<P>>> = (0..n_starts)
        .into_par_iter()
        .map(|i| {
            let start = if i == 0 {
                deterministic()?
            } else {
                random(&mut base.substream(i as u64 - 1))?
            };
            run_em(ds, start, cfg)
        })
        .collect();
    let mut best: Option<(EmOutcome<P>, usize)> = None;
    let mut first_err = None;
    for (i, out) in outcomes.into_iter().enumerate() {
        match out {
            Ok(o) => {
                if best.as_ref().is_none_or(|(b, _)| o.loglik > b.loglik) {
                    best = Some((o, i));
                }
            }
            Err(e) => {
                first_err.get_or_insert(e);
            }
        }
    }
    best.ok_or_else(|| first_err.unwrap_or_else(|| LmError::numerical("no start succeeded")))
}

pub(crate) fn finish<P>(
    outcome: EmOutcome<P>,
    start_index: usize,
    np: usize,
    ds: &Dataset,
    cfg: &FitConfig,
) -> FitResult<P> {
    let n = ds.n_total();
    FitResult {
        loglik: outcome.loglik,
        aic: aic(outcome.loglik, np),
        bic: bic(outcome.loglik, np, n),
        params: outcome.params,
        trace: outcome.trace,
        iterations: outcome.iterations,
        converged: outcome.converged,
        np,
        n_total: n,
        seed: cfg.seed,
        start_index,
        diagnostics: outcome.diagnostics,
    }
}

const CHUNK: usize = 32;

/// Map `body` over configurations `0..n` in parallel and fold the results.
///
/// Work is split into fixed-size chunks merged in index order, so the
/// floating-point result does not depend on the number of threads.
pub(crate) fn accumulate<S, M, F, G>(n: usize, make: M, body: F, merge: G) -> Result<S>
where
    S: Send,
    M: Fn() -> S + Sync,
    F: Fn(&mut S, usize) -> Result<()> + Sync,
    G: Fn(&mut S, S),
{
    let parts: Vec<Result<S>> = (0..n.div_ceil(CHUNK))
        .into_par_iter()
        .map(|c| {
            let mut s = make();
            for i in c * CHUNK..((c + 1) * CHUNK).min(n) {
                body(&mut s, i)?;
            }
            Ok(s)
        })
        .collect();
    let mut total = make();
    for part in parts {
        merge(&mut total, part?);
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn information_criteria_formulas() {
        assert_eq!(aic(-10.0, 3), 26.0);
        assert!((bic(-10.0, 3, 100) - (20.0 + 3.0 * 100f64.ln())).abs() < 1e-12);
    }

    #[test]
    fn accumulate_is_order_stable() {
        let vals: Vec<f64> = (0..1000).map(|i| 1.0 / (i as f64 + 1.0)).collect();
        let run = || {
            accumulate(vals.len(), || 0.0, |s, i| {
                *s += vals[i];
                Ok(())
            }, |a, b| *a += b)
            .unwrap()
        };
        let a = run();
        let b = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(run);
        assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn default_config_matches_documented_defaults() {
        let cfg = FitConfig::default();
        assert_eq!(cfg.tol, 1e-8);
        assert_eq!(cfg.maxit, 1000);
        assert_eq!(FitConfig::with_k(3).random_starts(), 5);
    }
}
