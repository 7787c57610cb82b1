//! Scaled forward-backward recursions for one response configuration.
//!
//! Every variant reduces its E-step to these kernels: build the initial
//! vector, the transition matrix for each occasion and the `T x k` emission
//! table, then call [`forward_backward`]. Frequencies are applied by the
//! caller when accumulating expected counts.

use std::borrow::Cow;

use ndarray::{Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};

use crate::error::{LmError, Result};

/// Transition matrices for occasions 2..T.
#[derive(Debug, Clone, Copy)]
pub enum TransitionSeq<'a> {
    Homogeneous(ArrayView2<'a, f64>),
    /// `(T-1) x k x k`; slice `t-1` moves the chain into 0-based occasion `t`.
    PerOccasion(ArrayView3<'a, f64>),
}

impl<'a> TransitionSeq<'a> {
    /// Matrix governing the move into 0-based occasion `t >= 1`.
    pub fn at(&self, t: usize) -> ArrayView2<'a, f64> {
        match *self {
            TransitionSeq::Homogeneous(p) => p,
            TransitionSeq::PerOccasion(p) => p.index_axis_move(Axis(0), t - 1),
        }
    }
}

/// Parameters of the hidden chain for one configuration.
#[derive(Debug, Clone, Copy)]
pub struct HmmInputs<'a> {
    pub init: ArrayView1<'a, f64>,
    pub trans: TransitionSeq<'a>,
    /// `T x k` probabilities of the observed responses given each state.
    pub emit: ArrayView2<'a, f64>,
}

impl HmmInputs<'_> {
    pub fn n_occasions(&self) -> usize {
        self.emit.nrows()
    }

    pub fn n_states(&self) -> usize {
        self.init.len()
    }
}

/// Posterior summaries of the latent path given one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSet {
    pub loglik: f64,
    /// `T x k`: `p(U_t = u | data)`.
    pub gamma: Array2<f64>,
    /// `(T-1) x k x k`: slice `t-1` holds `p(U_{t-1} = a, U_t = b | data)`.
    pub xi: Array3<f64>,
}

/// Row-major views of the chain inputs, borrowed when already contiguous.
struct Flat<'a> {
    k: usize,
    t_len: usize,
    init: Cow<'a, [f64]>,
    emit: Cow<'a, [f64]>,
    trans: Cow<'a, [f64]>,
    homogeneous: bool,
}

fn flat<'a, D: ndarray::Dimension>(a: &ndarray::ArrayView<'a, f64, D>) -> Cow<'a, [f64]> {
    match a.to_slice() {
        Some(s) => Cow::Borrowed(s),
        None => Cow::Owned(a.iter().copied().collect()),
    }
}

impl<'a> Flat<'a> {
    fn new(h: &HmmInputs<'a>) -> Self {
        let (trans, homogeneous) = match h.trans {
            TransitionSeq::Homogeneous(p) => (flat(&p), true),
            TransitionSeq::PerOccasion(p) => (flat(&p), false),
        };
        Self {
            k: h.n_states(),
            t_len: h.n_occasions(),
            init: flat(&h.init),
            emit: flat(&h.emit),
            trans,
            homogeneous,
        }
    }

    /// Transition matrix into 0-based occasion `t >= 1`, row-major.
    fn trans_at(&self, t: usize) -> &[f64] {
        let kk = self.k * self.k;
        if self.homogeneous {
            &self.trans[..kk]
        } else {
            &self.trans[(t - 1) * kk..t * kk]
        }
    }

    fn emit_row(&self, t: usize) -> &[f64] {
        &self.emit[t * self.k..(t + 1) * self.k]
    }
}

/// Scaled forward pass; returns the normalized alphas (row-major `T x k`)
/// and the per-occasion scales, or the 1-based occasion where the
/// trajectory became impossible.
fn forward(f: &Flat) -> std::result::Result<(Vec<f64>, Vec<f64>), usize> {
    let k = f.k;
    let mut alpha = vec![0.0; f.t_len * k];
    let mut scales = Vec::with_capacity(f.t_len);
    for t in 0..f.t_len {
        let e = f.emit_row(t);
        let (done, rest) = alpha.split_at_mut(t * k);
        let cur = &mut rest[..k];
        if t == 0 {
            for ((a, p), e) in cur.iter_mut().zip(f.init.iter()).zip(e) {
                *a = p * e;
            }
        } else {
            let prev = &done[(t - 1) * k..];
            let p = f.trans_at(t);
            cur.fill(0.0);
            for (a_prev, row) in prev.iter().zip(p.chunks_exact(k)) {
                for (c, pv) in cur.iter_mut().zip(row) {
                    *c += a_prev * pv;
                }
            }
            for (c, e) in cur.iter_mut().zip(e) {
                *c *= e;
            }
        }
        let c: f64 = cur.iter().sum();
        if !(c > 0.0) || !c.is_finite() {
            return Err(t + 1);
        }
        cur.iter_mut().for_each(|v| *v /= c);
        scales.push(c);
    }
    Ok((alpha, scales))
}

/// `log p(y)` by the scaled forward recursion. Returns `-inf` when the
/// observed trajectory has probability zero under the inputs.
pub fn forward_loglik(h: &HmmInputs) -> f64 {
    match forward(&Flat::new(h)) {
        Ok((_, scales)) => scales.iter().map(|c| c.ln()).sum(),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn forward_backward(h: &HmmInputs) -> Result<PosteriorSet> {
    let f = Flat::new(h);
    let (t_len, k) = (f.t_len, f.k);
    let (mut alpha, scales) =
        forward(&f).map_err(|occasion| LmError::ImpossibleObservation { occasion })?;
    let loglik = scales.iter().map(|c| c.ln()).sum();

    // beta[t] holds the scaled backward variable; `eb` is emit * beta at t+1.
    let mut beta = vec![1.0; t_len * k];
    let mut eb = vec![0.0; k];
    let mut xi = Array3::zeros((t_len.saturating_sub(1), k, k));
    for t in (1..t_len).rev() {
        let p = f.trans_at(t);
        for ((o, e), b) in eb.iter_mut().zip(f.emit_row(t)).zip(&beta[t * k..(t + 1) * k]) {
            *o = e * b / scales[t];
        }
        let a_prev = &alpha[(t - 1) * k..t * k];
        let mut slice = xi.index_axis_mut(Axis(0), t - 1);
        let xs = slice.as_slice_mut().expect("fresh array is contiguous");
        let mut total = 0.0;
        for prev in 0..k {
            let row = &p[prev * k..(prev + 1) * k];
            let mut acc = 0.0;
            for u in 0..k {
                let v = row[u] * eb[u];
                acc += v;
                let x = a_prev[prev] * v;
                xs[prev * k + u] = x;
                total += x;
            }
            beta[(t - 1) * k + prev] = acc;
        }
        xs.iter_mut().for_each(|v| *v /= total);
    }

    for (a, b) in alpha.chunks_exact_mut(k).zip(beta.chunks_exact(k)) {
        let mut s = 0.0;
        for (x, y) in a.iter_mut().zip(b) {
            *x *= y;
            s += *x;
        }
        a.iter_mut().for_each(|v| *v /= s);
    }
    let gamma = Array2::from_shape_vec((t_len, k), alpha).expect("T x k buffer");
    Ok(PosteriorSet { loglik, gamma, xi })
}

/// Emission table under local independence: entry `(t, u)` is the product over
/// variables of `psi[j, y_tj, u]`.
///
/// `psi` is `r x max(c) x k`; `responses` is `T x r`.
pub fn emission_table(psi: ArrayView3<f64>, responses: ArrayView2<usize>) -> Array2<f64> {
    let (r, _, k) = psi.dim();
    let t_len = responses.nrows();
    let mut out = Array2::ones((t_len, k));
    for t in 0..t_len {
        for j in 0..r {
            let y = responses[[t, j]];
            for u in 0..k {
                out[[t, u]] *= psi[[j, y, u]];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::{array, Array1};

    /// Exhaustive sum over all k^T paths; independent of the recursions.
    fn brute(h: &HmmInputs) -> (f64, Array2<f64>) {
        let t_len = h.n_occasions();
        let k = h.n_states();
        let mut total = 0.0;
        let mut marg = Array2::zeros((t_len, k));
        let n_paths = k.pow(t_len as u32);
        for code in 0..n_paths {
            let path: Vec<usize> = (0..t_len).map(|t| (code / k.pow(t as u32)) % k).collect();
            let mut p = h.init[path[0]] * h.emit[[0, path[0]]];
            for t in 1..t_len {
                p *= h.trans.at(t)[[path[t - 1], path[t]]] * h.emit[[t, path[t]]];
            }
            total += p;
            for t in 0..t_len {
                marg[[t, path[t]]] += p;
            }
        }
        (total, marg / total)
    }

    #[test]
    fn single_occasion() {
        let init = array![0.3, 0.7];
        let emit = array![[0.5, 0.2]];
        let p = Array2::eye(2);
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        assert_abs_diff_eq!(forward_loglik(&h), (0.3f64 * 0.5 + 0.7 * 0.2).ln(), epsilon = 1e-15);
    }

    #[test]
    fn one_state_is_sum_of_logs() {
        let init = array![1.0];
        let emit = array![[0.5], [0.25], [0.1]];
        let p = array![[1.0]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        let expected: f64 = [0.5f64, 0.25, 0.1].iter().map(|v| v.ln()).sum();
        assert_abs_diff_eq!(forward_loglik(&h), expected, epsilon = 1e-14);
    }

    #[test]
    fn uniform_inputs_give_uniform_gamma() {
        let init = Array1::from_elem(3, 1.0 / 3.0);
        let p = Array2::from_elem((3, 3), 1.0 / 3.0);
        let emit = Array2::from_elem((4, 3), 0.2);
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        let post = forward_backward(&h).unwrap();
        for v in post.gamma.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn one_hot_emissions_give_one_hot_posteriors() {
        let init = array![0.5, 0.5];
        let p = array![[0.6, 0.4], [0.3, 0.7]];
        let emit = array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        let post = forward_backward(&h).unwrap();
        assert_eq!(post.gamma, array![[1.0, 0.0], [0.0, 1.0], [0.0, 1.0]]);
        assert_eq!(post.xi.index_axis(Axis(0), 0), array![[0.0, 1.0], [0.0, 0.0]]);
    }

    #[test]
    fn impossible_observation_is_flagged() {
        let init = array![1.0, 0.0];
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let emit = array![[1.0, 1.0], [0.0, 1.0]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        assert_eq!(forward_loglik(&h), f64::NEG_INFINITY);
        assert!(matches!(
            forward_backward(&h),
            Err(LmError::ImpossibleObservation { occasion: 2 })
        ));
    }

    #[test]
    fn matches_brute_force_with_per_occasion_transitions() {
        let init = array![0.2, 0.5, 0.3];
        let trans = array![
            [[0.7, 0.2, 0.1], [0.1, 0.8, 0.1], [0.3, 0.3, 0.4]],
            [[0.5, 0.25, 0.25], [0.2, 0.2, 0.6], [0.1, 0.1, 0.8]],
            [[0.9, 0.05, 0.05], [0.4, 0.4, 0.2], [0.3, 0.6, 0.1]],
        ];
        let emit = array![[0.1, 0.5, 0.9], [0.6, 0.3, 0.2], [0.25, 0.25, 0.7], [0.8, 0.1, 0.4]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::PerOccasion(trans.view()),
            emit: emit.view(),
        };
        let (total, marg) = brute(&h);
        let post = forward_backward(&h).unwrap();
        assert_abs_diff_eq!(post.loglik, total.ln(), epsilon = 1e-12);
        for (a, b) in post.gamma.iter().zip(marg.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn emission_table_products() {
        // r = 2 fair coins: every entry 0.25.
        let psi = Array3::from_elem((2, 2, 3), 0.5);
        let resp = array![[0usize, 1], [1, 1]];
        let tab = emission_table(psi.view(), resp.view());
        assert!(tab.iter().all(|&v| (v - 0.25).abs() < 1e-15));
    }

    #[test]
    fn emission_table_all_zero_profile() {
        // Estimated probabilities of committing each offence type in state 2.
        let phi1 = [0.1758, 0.0191, 0.2564, 0.0263, 0.5454, 0.1108, 0.1823, 0.08954, 0.01851, 0.2088];
        let mut psi = Array3::zeros((10, 2, 2));
        for (j, &p) in phi1.iter().enumerate() {
            psi[[j, 0, 1]] = 1.0 - p;
            psi[[j, 1, 1]] = p;
            psi[[j, 0, 0]] = 0.99;
            psi[[j, 1, 0]] = 0.01;
        }
        let resp = Array2::<usize>::zeros((1, 10));
        let tab = emission_table(psi.view(), resp.view());
        let expected: f64 = phi1.iter().map(|p| 1.0 - p).product();
        assert_abs_diff_eq!(tab[[0, 1]], expected, epsilon = 1e-15);
        // Frozen from an independent numpy product.
        assert_abs_diff_eq!(tab[[0, 1]], 0.13679738861400714, epsilon = 1e-14);
    }
}
