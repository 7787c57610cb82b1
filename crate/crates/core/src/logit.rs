//! Weighted multinomial logit regression by damped Newton iterations.
//!
//! Used for the initial and transition probabilities of the
//! covariate-in-latent model, where each observation carries expected counts
//! over all categories instead of a single outcome.

use nalgebra::{DMatrix, DVector};

use crate::fit::accumulate;
use crate::prob::{softmax_in_place, LOGIT_CAP};

/// Linear predictors of a multinomial logit. Observation groups select the
/// reference category (its logit is zero).
pub(crate) trait LogitDesign: Sync {
    fn n_coef(&self) -> usize;
    fn n_categories(&self) -> usize;
    /// Sparse design row for the logit of `cat` against reference `group`.
    fn row(&self, group: usize, z: &[f64], cat: usize, out: &mut Vec<(usize, f64)>);
}

#[derive(Debug, Clone)]
pub(crate) struct LogitObs {
    /// Reference category of this observation.
    pub group: usize,
    pub z: Vec<f64>,
    /// Expected counts per category.
    pub counts: Vec<f64>,
}

#[derive(Debug, Clone)]
pub(crate) struct LogitFit {
    pub coef: Vec<f64>,
    pub converged: bool,
    pub ridge_steps: usize,
    /// Coefficients held at the cap.
    pub capped: usize,
}

/// Initial-state logits: category 0 is the reference and category `u >= 1`
/// has its own intercept and slopes, `(u-1) * (1+p) + m`.
pub(crate) struct InitialDesign {
    pub k: usize,
    pub p: usize,
}

impl LogitDesign for InitialDesign {
    fn n_coef(&self) -> usize {
        (self.k - 1) * (1 + self.p)
    }
    fn n_categories(&self) -> usize {
        self.k
    }
    fn row(&self, _group: usize, z: &[f64], cat: usize, out: &mut Vec<(usize, f64)>) {
        let base = (cat - 1) * (1 + self.p);
        out.push((base, 1.0));
        out.extend(z.iter().enumerate().map(|(m, &v)| (base + 1 + m, v)));
    }
}

/// Transition logits with origin-specific coefficients: origin `a`, target
/// `b != a` uses slot `b` (or `b-1` above the diagonal) of block `a`.
pub(crate) struct MultilogitDesign {
    pub k: usize,
    pub p: usize,
}

impl LogitDesign for MultilogitDesign {
    fn n_coef(&self) -> usize {
        self.k * (self.k - 1) * (1 + self.p)
    }
    fn n_categories(&self) -> usize {
        self.k
    }
    fn row(&self, group: usize, z: &[f64], cat: usize, out: &mut Vec<(usize, f64)>) {
        let slot = if cat < group { cat } else { cat - 1 };
        let base = (group * (self.k - 1) + slot) * (1 + self.p);
        out.push((base, 1.0));
        out.extend(z.iter().enumerate().map(|(m, &v)| (base + 1 + m, v)));
    }
}

/// Transition logits with origin-specific intercepts and one slope vector per
/// state (the first fixed at zero); the covariate effect on moving from `a`
/// to `b` is the difference of the two slope vectors.
pub(crate) struct DifflogitDesign {
    pub k: usize,
    pub p: usize,
}

impl LogitDesign for DifflogitDesign {
    fn n_coef(&self) -> usize {
        self.k * (self.k - 1) + (self.k - 1) * self.p
    }
    fn n_categories(&self) -> usize {
        self.k
    }
    fn row(&self, group: usize, z: &[f64], cat: usize, out: &mut Vec<(usize, f64)>) {
        let slot = if cat < group { cat } else { cat - 1 };
        out.push((group * (self.k - 1) + slot, 1.0));
        let off = self.k * (self.k - 1);
        if cat >= 1 {
            out.extend(z.iter().enumerate().map(|(m, &v)| (off + (cat - 1) * self.p + m, v)));
        }
        if group >= 1 {
            out.extend(z.iter().enumerate().map(|(m, &v)| (off + (group - 1) * self.p + m, -v)));
        }
    }
}

/// Sparse design rows of one observation, one per category (empty for the
/// reference), and the matching category probabilities.
fn fill_rows<D: LogitDesign>(
    d: &D,
    coef: &[f64],
    group: usize,
    z: &[f64],
    rows: &mut [Vec<(usize, f64)>],
    probs: &mut [f64],
) {
    for (c, (row, eta)) in rows.iter_mut().zip(probs.iter_mut()).enumerate() {
        row.clear();
        if c != group {
            d.row(group, z, c, row);
        }
        *eta = row.iter().map(|&(i, v)| coef[i] * v).sum();
    }
    softmax_in_place(probs);
}

/// Category probabilities of one observation, written into `out`.
pub(crate) fn probabilities_into<D: LogitDesign>(
    d: &D,
    coef: &[f64],
    group: usize,
    z: &[f64],
    scratch: &mut Vec<(usize, f64)>,
    out: &mut [f64],
) {
    for (c, eta) in out.iter_mut().enumerate() {
        *eta = if c == group {
            0.0
        } else {
            scratch.clear();
            d.row(group, z, c, scratch);
            scratch.iter().map(|&(i, v)| coef[i] * v).sum()
        };
    }
    softmax_in_place(out);
}

/// Category probabilities of one observation.
pub(crate) fn probabilities<D: LogitDesign>(d: &D, coef: &[f64], group: usize, z: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; d.n_categories()];
    probabilities_into(d, coef, group, z, &mut Vec::new(), &mut out);
    out
}

struct Eval {
    f: f64,
    g: Vec<f64>,
    h: Vec<f64>,
    // Per-observation scratch, not merged.
    rows: Vec<Vec<(usize, f64)>>,
    p: Vec<f64>,
}

/// Objective, gradient and (negative semi-definite) Hessian.
fn evaluate<D: LogitDesign>(d: &D, obs: &[LogitObs], coef: &[f64], hessian: bool) -> Eval {
    let n = d.n_coef();
    let k = d.n_categories();
    let res = accumulate(
        obs.len(),
        || Eval {
            f: 0.0,
            g: vec![0.0; n],
            h: if hessian { vec![0.0; n * n] } else { Vec::new() },
            rows: vec![Vec::new(); k],
            p: vec![0.0; k],
        },
        |e, i| {
            let o = &obs[i];
            fill_rows(d, coef, o.group, &o.z, &mut e.rows, &mut e.p);
            let (rows, p) = (&e.rows, &e.p);
            let total: f64 = o.counts.iter().sum();
            for c in 0..k {
                if o.counts[c] > 0.0 {
                    e.f += o.counts[c] * p[c].max(f64::MIN_POSITIVE).ln();
                }
                let resid = o.counts[c] - total * p[c];
                for &(idx, v) in &rows[c] {
                    e.g[idx] += resid * v;
                }
            }
            if hessian {
                for a in 0..k {
                    for b in 0..k {
                        let w = total * (if a == b { p[a] } else { 0.0 } - p[a] * p[b]);
                        if w == 0.0 {
                            continue;
                        }
                        for &(ia, va) in &rows[a] {
                            for &(ib, vb) in &rows[b] {
                                e.h[ia * n + ib] -= w * va * vb;
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
    res.expect("logit evaluation is infallible")
}

/// Solve `A x = b` for symmetric positive semi-definite `A`, adding a ridge if
/// needed. Returns the solution and whether a ridge was used.
pub(crate) fn solve_psd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<(DVector<f64>, bool)> {
    if let Some(ch) = a.clone().cholesky() {
        return Some((ch.solve(b), false));
    }
    let scale = a.diagonal().iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let mut lambda = 1e-10 * scale;
    for _ in 0..20 {
        let mut r = a.clone();
        for i in 0..r.nrows() {
            r[(i, i)] += lambda;
        }
        if let Some(ch) = r.cholesky() {
            return Some((ch.solve(b), true));
        }
        lambda *= 10.0;
    }
    None
}

const MAX_ITER: usize = 200;
const GRAD_TOL: f64 = 1e-10;
const STEP_TOL: f64 = 1e-8;
const MAX_UNCHECKED: usize = 5;

/// Maximize the weighted multinomial log-likelihood from `start`.
///
/// Each accepted step does not decrease the objective, so the result is never
/// worse than the starting coefficients.
pub(crate) fn fit_logit<D: LogitDesign>(d: &D, obs: &[LogitObs], start: &[f64]) -> LogitFit {
    let n = d.n_coef();
    let mut coef: Vec<f64> = start.iter().map(|c| c.clamp(-LOGIT_CAP, LOGIT_CAP)).collect();
    let weight: f64 = obs.iter().flat_map(|o| o.counts.iter()).sum();
    let gtol = GRAD_TOL * weight.max(1.0);
    let mut ridge_steps = 0;
    let mut converged = false;
    let mut unchecked = 0;
    let mut cur = evaluate(d, obs, &coef, true);
    for _ in 0..MAX_ITER {
        let free: Vec<usize> = (0..n)
            .filter(|&i| coef[i].abs() < LOGIT_CAP || cur.g[i] * coef[i] < 0.0)
            .collect();
        if free.is_empty() {
            converged = true;
            break;
        }
        let gmax = free.iter().fold(0.0f64, |m, &i| m.max(cur.g[i].abs()));
        let m = free.len();
        let a = DMatrix::from_fn(m, m, |r, c| -cur.h[free[r] * n + free[c]]);
        let b = DVector::from_fn(m, |r, _| cur.g[free[r]]);
        let Some((step, ridged)) = solve_psd(&a, &b) else {
            break;
        };
        ridge_steps += ridged as usize;
        let smax = step.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gmax <= gtol && smax < STEP_TOL {
            converged = true;
            break;
        }
        // Predicted gain at the rounding level of the objective: the line
        // search cannot confirm progress, but full Newton steps are safe.
        let decrement: f64 = (0..m).map(|r| b[r] * step[r]).sum();
        let quadratic = decrement <= 100.0 * f64::EPSILON * cur.f.abs() && unchecked < MAX_UNCHECKED;
        unchecked += quadratic as usize;
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let mut trial = coef.clone();
            for (r, &i) in free.iter().enumerate() {
                trial[i] = (coef[i] + t * step[r]).clamp(-LOGIT_CAP, LOGIT_CAP);
            }
            let e = evaluate(d, obs, &trial, true);
            if e.f.is_finite() && (e.f >= cur.f || quadratic) {
                accepted = Some((trial, e));
                break;
            }
            t *= 0.5;
        }
        let Some((trial, e)) = accepted else {
            converged = gmax <= gtol;
            break;
        };
        let gain = e.f - cur.f;
        coef = trial;
        cur = e;
        // Separated directions: the gradient has vanished to rounding level
        // and further Newton steps no longer change the objective.
        if gmax <= gtol && gain.abs() <= f64::EPSILON * cur.f.abs() {
            converged = true;
            break;
        }
    }
    let capped = coef.iter().filter(|c| c.abs() >= LOGIT_CAP).count();
    LogitFit {
        coef,
        converged,
        ridge_steps,
        capped,
    }
}

/// Log-likelihood gradient of the design coefficients at `coef`.
pub(crate) fn gradient<D: LogitDesign>(d: &D, obs: &[LogitObs], coef: &[f64]) -> Vec<f64> {
    evaluate(d, obs, coef, false).g
}
