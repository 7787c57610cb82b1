//! Latent Markov model for one ordinal response with covariates in the
//! measurement model (global logits), homogeneous transitions and initial
//! probabilities equal to the stationary distribution of the chain.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LmError, Result};
use crate::fit::{
    accumulate, finish, fit_multistart, Diagnostics, EmModel, FitConfig, FitResult, StartRule,
};
use crate::logit::solve_psd;
use crate::model::{
    permute_matrix, rows_from_counts, rows_labels, rows_pack, rows_score, rows_unpack,
    sticky_transitions, ChainParts, LatentModel, OwnedTransitions, Variant,
};
use crate::prob::{
    expit, global_logit_probs, is_row_stochastic, ordinal_cell, stationary_derivative,
    stationary_distribution, RngStream,
};
use crate::recursions::{forward_backward, HmmInputs, TransitionSeq};

const LATENT_MAX_ITER: usize = 25;
const LATENT_GRAD_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovManifestParams {
    /// Cut-points, strictly decreasing, length c-1.
    pub mu: Array1<f64>,
    /// Support points, length k, with `al[0] = 0`.
    pub al: Array1<f64>,
    /// Covariate effects, length p.
    pub be: Array1<f64>,
    pub pi: Array2<f64>,
    /// Stationary distribution of `pi`.
    pub piv: Array1<f64>,
}

pub(crate) struct CovManifestStats {
    b1: Array1<f64>,
    trans: Array2<f64>,
    /// `n x T x k` posterior weights times frequencies.
    w: Array3<f64>,
}

fn is_decreasing(mu: &[f64]) -> bool {
    mu.windows(2).all(|w| w[0] > w[1]) && mu.iter().all(|v| v.is_finite())
}

/// Covariates of configuration `i` at 0-based occasion `t`.
fn covariates(ds: &Dataset, i: usize, t: usize) -> ArrayView1<'_, f64> {
    if t == 0 {
        ds.config_x1(i)
    } else {
        ds.config_x2(i, t)
    }
}

fn check_data(ds: &Dataset) -> Result<usize> {
    if ds.n_vars() != 1 {
        return Err(LmError::data(format!(
            "the covariate-in-measurement model needs one response variable, got {}",
            ds.n_vars()
        )));
    }
    if ds.n_occasions() > 1 && ds.p1() != ds.p2() {
        return Err(LmError::data(format!(
            "initial ({}) and later ({}) covariate counts must agree",
            ds.p1(),
            ds.p2()
        )));
    }
    Ok(ds.p1())
}

impl CovManifestParams {
    /// Build from cut-points, support points, coefficients and transitions;
    /// `piv` is derived.
    pub fn new(mu: Array1<f64>, al: Array1<f64>, be: Array1<f64>, pi: Array2<f64>) -> Result<Self> {
        let piv = stationary_distribution(pi.view())?;
        let p = Self { mu, al, be, pi, piv };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.al.len();
        if k == 0 || self.al[0] != 0.0 {
            return Err(LmError::arg("support points need al[0] = 0"));
        }
        if self.mu.is_empty() || !is_decreasing(&self.mu.to_vec()) {
            return Err(LmError::arg("cut-points must be finite and strictly decreasing"));
        }
        if self.pi.dim() != (k, k) || !is_row_stochastic(self.pi.view(), 1e-8) {
            return Err(LmError::arg("PI must be a k x k stochastic matrix"));
        }
        if self.piv.len() != k {
            return Err(LmError::arg("piv must have length k"));
        }
        Ok(())
    }

    pub fn n_categories(&self) -> usize {
        self.mu.len() + 1
    }

    fn shift(&self, u: usize, x: ArrayView1<f64>) -> f64 {
        self.al[u] + x.dot(&self.be)
    }

    /// Response probabilities in state `u` for covariates `x`.
    pub fn emission_probs(&self, u: usize, x: ArrayView1<f64>) -> Result<Array1<f64>> {
        global_logit_probs(self.mu.as_slice().expect("contiguous"), self.shift(u, x))
    }

    fn emission_cell(&self, y: usize, u: usize, x: ArrayView1<f64>) -> f64 {
        let c = self.n_categories();
        let sh = self.shift(u, x);
        let z = |b: usize| (b >= 1 && b < c).then(|| self.mu[b - 1] + sh);
        ordinal_cell(z(y), z(y + 1)).max(0.0)
    }

    fn emit_table(&self, ds: &Dataset, i: usize) -> Array2<f64> {
        let k = self.al.len();
        let y = ds.config_responses(i);
        Array2::from_shape_fn((ds.n_occasions(), k), |(t, u)| {
            self.emission_cell(y[[t, 0]], u, covariates(ds, i, t))
        })
    }

    /// Coordinates with the support points absorbing the mean cut-point:
    /// returns `(mu - mean(mu), al + mean(mu))`.
    pub fn display_coordinates(&self) -> (Array1<f64>, Array1<f64>) {
        let m = self.mu.mean().unwrap_or(0.0);
        (self.mu.mapv(|v| v - m), self.al.mapv(|v| v + m))
    }

    fn empirical_logits(ds: &Dataset) -> Array1<f64> {
        let c = ds.categories.counts()[0];
        let mut n = vec![0.5; c];
        for i in 0..ds.n_configs() {
            for &y in ds.config_responses(i).iter() {
                n[y] += ds.weight(i);
            }
        }
        (1..c)
            .map(|m| (n[m..].iter().sum::<f64>() / n[..m].iter().sum::<f64>()).ln())
            .collect()
    }

    fn anchored(ds: &Dataset, alpha: Vec<f64>) -> Result<Self> {
        let k = alpha.len();
        let l = Self::empirical_logits(ds);
        let mu = l.mapv(|v| v + alpha[0]);
        let al: Array1<f64> = alpha.iter().map(|a| a - alpha[0]).collect();
        Self::new(mu, al, Array1::zeros(ds.p1()), sticky_transitions(k))
    }

    pub(crate) fn deterministic(ds: &Dataset, k: usize) -> Result<Self> {
        let alpha = (0..k)
            .map(|u| if k > 1 { -2.0 + 4.0 * u as f64 / (k - 1) as f64 } else { 0.0 })
            .collect();
        Self::anchored(ds, alpha)
    }

    pub(crate) fn random(ds: &Dataset, k: usize, rng: &mut RngStream) -> Result<Self> {
        let l = Self::empirical_logits(ds);
        let range = (l[0] - l[l.len() - 1]).max(2.0);
        let mut alpha: Vec<f64> = (0..k).map(|_| rng.standard_normal() * range / 2.0).collect();
        alpha.sort_by(f64::total_cmp);
        Self::anchored(ds, alpha)
    }

    fn n_ordinal(&self) -> usize {
        self.mu.len() + self.al.len() - 1 + self.be.len()
    }

    fn ordinal_coef(&self) -> Vec<f64> {
        self.mu
            .iter()
            .chain(self.al.iter().skip(1))
            .chain(self.be.iter())
            .copied()
            .collect()
    }

    fn with_ordinal(&self, coef: &[f64]) -> Self {
        let c1 = self.mu.len();
        let k = self.al.len();
        let mut al = Array1::zeros(k);
        for u in 1..k {
            al[u] = coef[c1 + u - 1];
        }
        Self {
            mu: coef[..c1].iter().copied().collect(),
            al,
            be: coef[c1 + k - 1..].iter().copied().collect(),
            pi: self.pi.clone(),
            piv: self.piv.clone(),
        }
    }

    /// Gradient of `latent_objective` in the row-logit coordinates of `pack`.
    fn latent_gradient(pi: ArrayView2<f64>, piv: ArrayView1<f64>, st: &CovManifestStats) -> Result<Vec<f64>> {
        let k = pi.nrows();
        let mut trans_score = Vec::new();
        rows_score(st.trans.view(), pi, &mut trans_score);
        let mut out = Vec::with_capacity(trans_score.len());
        let mut pos = 0;
        for a in 0..k {
            for b in (0..k).filter(|&b| b != a) {
                let mut dp = Array2::zeros((k, k));
                for c in 0..k {
                    let delta = if c == b { 1.0 } else { 0.0 };
                    dp[[a, c]] = pi[[a, c]] * (delta - pi[[a, b]]);
                }
                let dpiv = stationary_derivative(pi, piv, dp.view())?;
                let init: f64 = (0..k)
                    .filter(|&u| st.b1[u] > 0.0)
                    .map(|u| st.b1[u] * dpiv[u] / piv[u])
                    .sum();
                out.push(trans_score[pos] + init);
                pos += 1;
            }
        }
        Ok(out)
    }

    /// Maximize `latent_objective` over the row logits by damped Newton
    /// steps with a finite-difference Hessian of the analytic gradient.
    /// Never returns a matrix with a lower objective than `start`. The flag
    /// is false when the gradient did not reach its tolerance.
    fn maximize_latent(start: &Array2<f64>, st: &CovManifestStats) -> Result<(Array2<f64>, bool)> {
        let k = start.nrows();
        let mut theta = Vec::new();
        rows_pack(start.view(), &mut theta);
        let mut pi = start.clone();
        if k == 1 {
            return Ok((pi, true));
        }
        let mut q = Self::latent_objective(pi.view(), st);
        let scale = st.trans.sum() + st.b1.sum();
        let grad_at = |th: &[f64]| -> Result<Vec<f64>> {
            let p = rows_unpack(th, k);
            let v = stationary_distribution(p.view())?;
            Self::latent_gradient(p.view(), v.view(), st)
        };
        let d = theta.len();
        for _ in 0..LATENT_MAX_ITER {
            let g = grad_at(&theta)?;
            if g.iter().all(|v| v.abs() <= LATENT_GRAD_TOL * scale.max(1.0)) {
                return Ok((pi, true));
            }
            let mut neg_h = DMatrix::zeros(d, d);
            for j in 0..d {
                let h = 1e-5 * (1.0 + theta[j].abs());
                let mut up = theta.clone();
                up[j] += h;
                let mut dn = theta.clone();
                dn[j] -= h;
                let (gu, gd) = (grad_at(&up)?, grad_at(&dn)?);
                for i in 0..d {
                    neg_h[(i, j)] = -(gu[i] - gd[i]) / (2.0 * h);
                }
            }
            let neg_h = (&neg_h + neg_h.transpose()) * 0.5;
            let gv = DVector::from_vec(g.clone());
            let step = match solve_psd(&neg_h, &gv) {
                Some((s, _)) => s,
                None => gv / scale.max(1.0),
            };
            let mut lambda = 1.0;
            let mut moved = false;
            for _ in 0..40 {
                let cand: Vec<f64> = theta.iter().zip(step.iter()).map(|(t, s)| t + lambda * s).collect();
                let p = rows_unpack(&cand, k);
                let qc = Self::latent_objective(p.view(), st);
                if qc >= q {
                    moved = qc > q;
                    theta = cand;
                    pi = p;
                    q = qc;
                    break;
                }
                lambda *= 0.5;
            }
            if !moved {
                break;
            }
        }
        let g = grad_at(&theta)?;
        Ok((pi, g.iter().all(|v| v.abs() <= LATENT_GRAD_TOL * scale.max(1.0))))
    }

    /// Expected complete-data log-likelihood of the transition part.
    fn latent_objective(pi: ArrayView2<f64>, st: &CovManifestStats) -> f64 {
        let Ok(piv) = stationary_distribution(pi) else {
            return f64::NEG_INFINITY;
        };
        let mut q = 0.0;
        for ((a, b), &n) in st.trans.indexed_iter() {
            if n > 0.0 {
                q += n * pi[[a, b]].ln();
            }
        }
        for (u, &n) in st.b1.iter().enumerate() {
            if n > 0.0 {
                q += n * piv[u].ln();
            }
        }
        q
    }
}

/// Weighted cumulative-logit objective with gradient and Hessian.
struct OrdinalEval {
    f: f64,
    g: Vec<f64>,
    h: Vec<f64>,
}

fn ordinal_eval(
    params: &CovManifestParams,
    ds: &Dataset,
    w: &Array3<f64>,
    hessian: bool,
) -> OrdinalEval {
    let n = params.n_ordinal();
    let c = params.n_categories();
    let k = params.al.len();
    let al_off = c - 1;
    let be_off = c - 1 + k - 1;
    let res = accumulate(
        ds.n_configs(),
        || OrdinalEval {
            f: 0.0,
            g: vec![0.0; n],
            h: if hessian { vec![0.0; n * n] } else { Vec::new() },
        },
        |e, i| {
            let y = ds.config_responses(i);
            let mut dphi = vec![0.0; n];
            for t in 0..ds.n_occasions() {
                let x = covariates(ds, i, t);
                let yt = y[[t, 0]];
                for u in 0..k {
                    let wt = w[[i, t, u]];
                    if wt <= 0.0 {
                        continue;
                    }
                    let sh = params.shift(u, x);
                    let z = |b: usize| (b >= 1 && b < c).then(|| params.mu[b - 1] + sh);
                    let (lo, hi) = (z(yt), z(yt + 1));
                    let phi = ordinal_cell(lo, hi);
                    if !(phi > 0.0) {
                        e.f = f64::NEG_INFINITY;
                        return Ok(());
                    }
                    e.f += wt * phi.ln();
                    // Boundary derivatives: sign, boundary index, first and second derivative.
                    let mut bounds: Vec<(f64, usize, f64, f64)> = Vec::with_capacity(2);
                    if let Some(zl) = lo {
                        let s = expit(zl);
                        let d = s * expit(-zl);
                        bounds.push((1.0, yt, d, d * (1.0 - 2.0 * s)));
                    }
                    if let Some(zh) = hi {
                        let s = expit(zh);
                        let d = s * expit(-zh);
                        bounds.push((-1.0, yt + 1, d, d * (1.0 - 2.0 * s)));
                    }
                    let dir = |m: usize, out: &mut dyn FnMut(usize, f64)| {
                        out(m - 1, 1.0);
                        if u >= 1 {
                            out(al_off + u - 1, 1.0);
                        }
                        for (q, &xv) in x.iter().enumerate() {
                            out(be_off + q, xv);
                        }
                    };
                    dphi.iter_mut().for_each(|v| *v = 0.0);
                    for &(sign, m, d, _) in &bounds {
                        dir(m, &mut |idx, v| dphi[idx] += sign * d * v);
                    }
                    for (gi, dv) in e.g.iter_mut().zip(&dphi) {
                        *gi += wt * dv / phi;
                    }
                    if hessian {
                        for &(sign, m, _, dd) in &bounds {
                            let mut idx = Vec::with_capacity(2 + x.len());
                            dir(m, &mut |j, v| idx.push((j, v)));
                            let coef = wt * sign * dd / phi;
                            for &(a, va) in &idx {
                                for &(b, vb) in &idx {
                                    e.h[a * n + b] += coef * va * vb;
                                }
                            }
                        }
                        let coef = wt / (phi * phi);
                        for a in 0..n {
                            if dphi[a] == 0.0 {
                                continue;
                            }
                            for b in 0..n {
                                e.h[a * n + b] -= coef * dphi[a] * dphi[b];
                            }
                        }
                    }
                }
            }
            Ok(())
        },
        |t, p| {
            t.f += p.f;
            t.g.iter_mut().zip(&p.g).for_each(|(a, b)| *a += b);
            t.h.iter_mut().zip(&p.h).for_each(|(a, b)| *a += b);
        },
    );
    res.expect("ordinal evaluation is infallible")
}

pub(crate) struct OrdinalFit {
    pub params: CovManifestParams,
    pub converged: bool,
    pub ridge_steps: usize,
}

const ORDINAL_MAX_ITER: usize = 100;

/// Newton ascent on (mu, al[1..], be) for fixed posterior weights.
pub(crate) fn ordinal_newton(start: &CovManifestParams, ds: &Dataset, w: &Array3<f64>) -> OrdinalFit {
    let n = start.n_ordinal();
    let total: f64 = w.sum();
    let gtol = 1e-10 * total.max(1.0);
    let mut params = start.clone();
    let mut cur = ordinal_eval(&params, ds, w, true);
    let mut ridge_steps = 0;
    let mut converged = false;
    let mut unchecked = 0;
    for _ in 0..ORDINAL_MAX_ITER {
        let gmax = cur.g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let a = DMatrix::from_fn(n, n, |r, c| -cur.h[r * n + c]);
        let b = DVector::from_column_slice(&cur.g);
        let Some((step, ridged)) = solve_psd(&a, &b) else {
            break;
        };
        ridge_steps += ridged as usize;
        let smax = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= gtol && smax < 1e-8 {
            converged = true;
            break;
        }
        // Predicted gain at the rounding level of the objective: the line
        // search cannot confirm progress, but full Newton steps are safe.
        let decrement: f64 = cur.g.iter().zip(step.iter()).map(|(g, s)| g * s).sum();
        let quadratic = decrement <= 100.0 * f64::EPSILON * cur.f.abs() && unchecked < 5;
        unchecked += quadratic as usize;
        let coef = params.ordinal_coef();
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial: Vec<f64> = coef.iter().zip(step.iter()).map(|(c, s)| c + t * s).collect();
            if is_decreasing(&trial[..params.mu.len()]) {
                let cand = params.with_ordinal(&trial);
                let e = ordinal_eval(&cand, ds, w, true);
                if e.f.is_finite() && (e.f >= cur.f || quadratic) {
                    accepted = Some((cand, e));
                    break;
                }
            }
            t *= 0.5;
        }
        let Some((cand, e)) = accepted else {
            converged = gmax <= gtol;
            break;
        };
        let gain = e.f - cur.f;
        params = cand;
        cur = e;
        if gmax <= gtol && gain.abs() <= f64::EPSILON * cur.f.abs() {
            converged = true;
            break;
        }
    }
    OrdinalFit {
        params,
        converged,
        ridge_steps,
    }
}

impl EmModel for CovManifestParams {
    type Stats = CovManifestStats;

    fn score_from_stats(&self, ds: &Dataset, st: &Self::Stats) -> Result<Vec<f64>> {
        let mut out = ordinal_eval(self, ds, &st.w, false).g;
        out.extend(Self::latent_gradient(self.pi.view(), self.piv.view(), st)?);
        Ok(out)
    }

    fn e_step(&self, ds: &Dataset) -> Result<(f64, CovManifestStats)> {
        let k = self.al.len();
        let t_len = ds.n_occasions();
        let acc = accumulate(
            ds.n_configs(),
            || (0.0, Array1::<f64>::zeros(k), Array2::<f64>::zeros((k, k)), Vec::new()),
            |(ll, b1, trans, rows), i| {
                let emit = self.emit_table(ds, i);
                let h = HmmInputs {
                    init: self.piv.view(),
                    trans: TransitionSeq::Homogeneous(self.pi.view()),
                    emit: emit.view(),
                };
                let post = forward_backward(&h)?;
                let wt = ds.weight(i);
                *ll += wt * post.loglik;
                b1.scaled_add(wt, &post.gamma.row(0));
                trans.scaled_add(wt, &post.xi.sum_axis(Axis(0)));
                rows.push(post.gamma * wt);
                Ok(())
            },
            |t, p| {
                t.0 += p.0;
                t.1 += &p.1;
                t.2 += &p.2;
                t.3.extend(p.3);
            },
        )?;
        let (ll, b1, trans, rows) = acc;
        let mut w = Array3::zeros((ds.n_configs(), t_len, k));
        for (i, g) in rows.into_iter().enumerate() {
            w.index_axis_mut(Axis(0), i).assign(&g);
        }
        Ok((ll, CovManifestStats { b1, trans, w }))
    }

    fn m_step(
        &self,
        ds: &Dataset,
        stats: &CovManifestStats,
        _cfg: &FitConfig,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        // Transition update: the count ratios ignore the stationary initial
        // term, so they only seed a direct maximization of its part of Q.
        let (proposal, resets) = rows_from_counts(stats.trans.view());
        diag.zero_count_resets += resets;
        let start = if Self::latent_objective(proposal.view(), stats)
            >= Self::latent_objective(self.pi.view(), stats)
        {
            proposal
        } else {
            diag.damped_transition_updates += 1;
            self.pi.clone()
        };
        let (pi, latent_ok) = Self::maximize_latent(&start, stats)?;
        diag.inner_not_converged += (!latent_ok) as usize;
        let piv = stationary_distribution(pi.view())?;

        let fit = ordinal_newton(self, ds, &stats.w);
        diag.inner_not_converged += (!fit.converged) as usize;
        diag.ridge_steps += fit.ridge_steps;
        Ok(Self {
            pi,
            piv,
            ..fit.params
        })
    }
}

/// Fit the covariate-in-measurement model from the start rule in `cfg`.
pub fn fit_cov_manifest(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<CovManifestParams>> {
    fit_impl(ds, cfg, None)
}

pub fn fit_cov_manifest_from(
    ds: &Dataset,
    cfg: &FitConfig,
    start: &CovManifestParams,
) -> Result<FitResult<CovManifestParams>> {
    start.validate()?;
    start.check_dataset(ds)?;
    let cfg = FitConfig {
        start: StartRule::Input,
        k: start.al.len(),
        ..cfg.clone()
    };
    fit_impl(ds, &cfg, Some(start))
}

fn fit_impl(
    ds: &Dataset,
    cfg: &FitConfig,
    start: Option<&CovManifestParams>,
) -> Result<FitResult<CovManifestParams>> {
    check_data(ds)?;
    if cfg.k1 != 1 {
        return Err(LmError::arg("the covariate-in-measurement model has no latent classes"));
    }
    if cfg.fix_psi {
        return Err(LmError::arg("fixed response probabilities do not apply to this model"));
    }
    let (outcome, index) = fit_multistart(
        ds,
        cfg,
        start,
        || CovManifestParams::deterministic(ds, cfg.k),
        |rng| CovManifestParams::random(ds, cfg.k, rng),
    )?;
    let np = outcome.params.n_params();
    Ok(finish(outcome, index, np, ds, cfg))
}

impl LatentModel for CovManifestParams {
    const VARIANT: Variant = Variant::CovManifest;

    fn n_states(&self) -> usize {
        self.al.len()
    }

    fn n_params(&self) -> usize {
        let k = self.al.len();
        self.mu.len() + (k - 1) + self.be.len() + k * (k - 1)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        let p = check_data(ds)?;
        if p != self.be.len() {
            return Err(LmError::data(format!(
                "model has {} covariates, data have {p}",
                self.be.len()
            )));
        }
        if ds.categories.counts()[0] != self.n_categories() {
            return Err(LmError::data("response categories differ from the fitted model"));
        }
        Ok(())
    }

    fn chain(&self, ds: &Dataset, i: usize) -> Result<ChainParts> {
        Ok(ChainParts {
            init: self.piv.clone(),
            trans: OwnedTransitions::Homogeneous(self.pi.clone()),
            emit: self.emit_table(ds, i),
        })
    }

    fn pack(&self) -> Vec<f64> {
        let mut out = self.ordinal_coef();
        rows_pack(self.pi.view(), &mut out);
        out
    }

    fn unpack(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(LmError::arg("parameter vector has the wrong length"));
        }
        let no = self.n_ordinal();
        if !is_decreasing(&theta[..self.mu.len()]) {
            return Err(LmError::arg("cut-points must be strictly decreasing"));
        }
        let pi = rows_unpack(&theta[no..], self.al.len());
        let piv = stationary_distribution(pi.view())?;
        Ok(Self {
            pi,
            piv,
            ..self.with_ordinal(&theta[..no])
        })
    }

    fn theta_labels(&self) -> Vec<String> {
        let mut out: Vec<String> = (1..=self.mu.len()).map(|y| format!("mu[{y}]")).collect();
        out.extend((2..=self.al.len()).map(|u| format!("al[{u}]")));
        out.extend((1..=self.be.len()).map(|m| format!("be[x{m}]")));
        rows_labels("pi", self.al.len(), &mut out);
        out
    }

    fn score(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(ds)?;
        let (_, st) = self.e_step(ds)?;
        self.score_from_stats(ds, &st)
    }

    fn natural(&self) -> Vec<(String, f64)> {
        let k = self.al.len();
        let mut out: Vec<(String, f64)> = self
            .theta_labels()
            .into_iter()
            .zip(self.ordinal_coef())
            .collect();
        for a in 0..k {
            for b in 0..k {
                out.push((format!("pi[{},{}]", a + 1, b + 1), self.pi[[a, b]]));
            }
        }
        for u in 0..k {
            out.push((format!("piv[{}]", u + 1), self.piv[u]));
        }
        out
    }

    fn permute_states(&self, perm: &[usize]) -> Self {
        let base = self.al[perm[0]];
        Self {
            mu: self.mu.mapv(|v| v + base),
            al: perm.iter().map(|&u| self.al[u] - base).collect(),
            be: self.be.clone(),
            pi: permute_matrix(self.pi.view(), perm),
            piv: self.piv.select(Axis(0), perm),
        }
    }

    fn state_profile(&self) -> Array2<f64> {
        let k = self.al.len();
        let c = self.n_categories();
        let zero = Array1::zeros(self.be.len());
        let mut out = Array2::zeros((k, c));
        for u in 0..k {
            if let Ok(p) = self.emission_probs(u, zero.view()) {
                out.row_mut(u).assign(&p);
            }
        }
        out
    }

    fn simulate_config(
        &self,
        x1: ArrayView1<f64>,
        x2: ArrayView2<f64>,
        n_occasions: usize,
        rng: &mut RngStream,
    ) -> Result<(Array2<usize>, Vec<usize>)> {
        let mut states: Vec<usize> = Vec::with_capacity(n_occasions);
        let mut y = Array2::zeros((n_occasions, 1));
        for t in 0..n_occasions {
            let u = if t == 0 {
                rng.categorical(self.piv.view())
            } else {
                rng.categorical(self.pi.row(states[t - 1]))
            };
            states.push(u);
            let x = if t == 0 { x1 } else { x2.row(t - 1) };
            y[[t, 0]] = rng.categorical(self.emission_probs(u, x)?.view());
        }
        Ok((y, states))
    }

    fn refit(&self, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<Self>> {
        fit_cov_manifest_from(ds, cfg, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CategorySpec;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> Dataset {
        let cats = CategorySpec::new(vec![4]).unwrap();
        Dataset::from_arrays(
            array![
                [[0usize], [1], [3]],
                [[2], [2], [1]],
                [[0], [0], [0]],
                [[3], [3], [2]],
                [[1], [0], [1]],
                [[2], [3], [3]]
            ],
            vec![5, 3, 8, 2, 4, 6],
            Some(array![[0.5], [-1.0], [0.2], [1.5], [0.0], [0.9]]),
            Some(array![[[0.1], [0.4]], [[-0.3], [1.0]], [[0.0], [0.0]], [[1.2], [-0.5]], [[0.7], [0.2]], [[0.3], [0.3]]]),
            cats,
        )
        .unwrap()
    }

    fn perturbed(ds: &Dataset) -> CovManifestParams {
        let mut p = CovManifestParams::deterministic(ds, 3).unwrap();
        p.be[0] = 0.3;
        p.pi = array![[0.7, 0.2, 0.1], [0.15, 0.6, 0.25], [0.1, 0.3, 0.6]];
        p.piv = stationary_distribution(p.pi.view()).unwrap();
        p
    }

    #[test]
    fn parameter_count_matches_formula() {
        let mut p = perturbed(&toy());
        assert_eq!(p.n_params(), 3 + 2 + 1 + 6);
        p.mu = Array1::zeros(4);
        p.al = Array1::zeros(10);
        p.be = Array1::zeros(6);
        p.pi = Array2::zeros((10, 10));
        assert_eq!(p.n_params(), 109);
    }

    #[test]
    fn score_matches_finite_difference() {
        let ds = toy();
        let p = perturbed(&ds);
        let theta = p.pack();
        let g = p.score(&ds).unwrap();
        let h = 1e-6;
        for i in 0..theta.len() {
            let mut up = theta.clone();
            up[i] += h;
            let mut down = theta.clone();
            down[i] -= h;
            let fd = (p.unpack(&up).unwrap().loglik(&ds).unwrap()
                - p.unpack(&down).unwrap().loglik(&ds).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-5);
        }
    }

    #[test]
    fn ordinal_gradient_matches_finite_difference() {
        let ds = toy();
        let p = perturbed(&ds);
        let (_, st) = p.e_step(&ds).unwrap();
        let e = ordinal_eval(&p, &ds, &st.w, true);
        let coef = p.ordinal_coef();
        let n = coef.len();
        let h = 1e-6;
        for i in 0..n {
            let mut up = coef.clone();
            up[i] += h;
            let mut dn = coef.clone();
            dn[i] -= h;
            let eu = ordinal_eval(&p.with_ordinal(&up), &ds, &st.w, true);
            let ed = ordinal_eval(&p.with_ordinal(&dn), &ds, &st.w, true);
            assert_abs_diff_eq!(e.g[i], (eu.f - ed.f) / (2.0 * h), epsilon = 1e-5);
            for j in 0..n {
                assert_abs_diff_eq!(e.h[j * n + i], (eu.g[j] - ed.g[j]) / (2.0 * h), epsilon = 1e-5);
            }
        }
    }

    #[test]
    fn intercept_only_single_state_gives_empirical_logits() {
        let ds = toy().without_covariates();
        let fit = fit_cov_manifest(&ds, &FitConfig::with_k(1)).unwrap();
        let mut n = [0.0; 4];
        for i in 0..ds.n_configs() {
            for &y in ds.config_responses(i).iter() {
                n[y] += ds.weight(i);
            }
        }
        for m in 1..4 {
            let emp = (n[m..].iter().sum::<f64>() / n[..m].iter().sum::<f64>()).ln();
            assert_abs_diff_eq!(fit.params.mu[m - 1], emp, epsilon = 1e-8);
        }
    }

    #[test]
    fn em_improves_and_keeps_stationarity() {
        let ds = toy();
        let fit = fit_cov_manifest(&ds, &FitConfig::with_k(2)).unwrap();
        assert!(fit.loglik > fit.trace[0]);
        let res = crate::prob::stationary_residual(fit.params.pi.view(), fit.params.piv.view());
        assert!(res < 1e-8);
        for w in fit.trace.windows(2) {
            assert!(w[1] - w[0] >= -1e-6 * w[1].abs());
        }
    }

    #[test]
    fn permutation_preserves_likelihood() {
        let ds = toy();
        let p = perturbed(&ds);
        let q = p.permute_states(&[2, 0, 1]);
        assert_eq!(q.al[0], 0.0);
        assert_abs_diff_eq!(p.loglik(&ds).unwrap(), q.loglik(&ds).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn multivariate_responses_rejected() {
        let cats = CategorySpec::new(vec![2, 2]).unwrap();
        let ds = Dataset::from_arrays(array![[[0usize, 1]]], vec![1], None, None, cats).unwrap();
        assert!(fit_cov_manifest(&ds, &FitConfig::with_k(1)).is_err());
    }
}
