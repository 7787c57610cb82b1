//! Probability primitives shared by every model variant: simplex vectors,
//! row-stochastic matrices, stationary distributions and the two logit links.
//!
//! Probability vectors are plain `ndarray` arrays; the helpers here check and
//! produce them. Multinomial logits are always taken relative to a reference
//! category whose logit is pinned at zero.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::error::{LmError, Result};

/// Logit magnitude used to represent structural zeros and ones finitely.
pub const LOGIT_CAP: f64 = 50.0;

/// Seeded random stream.
///
/// Backed by ChaCha20 (`rand_chacha`), which produces the same sequence on
/// every platform for a given seed. Sub-streams for parallel work are derived
/// with [`RngStream::substream`]: same key, ChaCha stream id `index + 1`, so
/// the parent stream (id 0) and all children are disjoint.
#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    rng: ChaCha20Rng,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: ChaCha20Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream number `index` under the same seed.
    pub fn substream(&self, index: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(self.seed);
        rng.set_stream(index.wrapping_add(1));
        Self {
            seed: self.seed,
            rng,
        }
    }

    /// Uniform draw on [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    pub fn standard_normal(&mut self) -> f64 {
        use rand_distr::{Distribution, StandardNormal};
        StandardNormal.sample(&mut self.rng)
    }

    /// Draw an index from a discrete distribution given by `probs`.
    pub fn categorical(&mut self, probs: ArrayView1<f64>) -> usize {
        let u = self.uniform();
        let mut acc = 0.0;
        let mut last_positive = 0;
        for (i, &p) in probs.iter().enumerate() {
            if p > 0.0 {
                last_positive = i;
            }
            acc += p;
            if u < acc {
                return i;
            }
        }
        last_positive
    }
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// True when entries are nonnegative and sum to one within `tol`.
pub fn is_simplex(p: ArrayView1<f64>, tol: f64) -> bool {
    p.iter().all(|&v| v >= 0.0 && v.is_finite()) && (p.sum() - 1.0).abs() <= tol
}

pub fn is_row_stochastic(p: ArrayView2<f64>, tol: f64) -> bool {
    p.rows().into_iter().all(|row| is_simplex(row, tol))
}

/// Multinomial logit with `eta` holding the logits of every non-reference
/// category in index order (length k-1).
pub fn multinomial_logit(eta: &[f64], reference: usize) -> Array1<f64> {
    let k = eta.len() + 1;
    assert!(reference < k, "reference category out of range");
    let mut full = Vec::with_capacity(k);
    let mut it = eta.iter();
    for u in 0..k {
        if u == reference {
            full.push(0.0);
        } else {
            full.push(*it.next().unwrap());
        }
    }
    softmax(&full)
}

/// Softmax over a full logit vector (max-subtracted).
pub fn softmax(logits: &[f64]) -> Array1<f64> {
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Array1::from(out)
}

pub fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        s += *x;
    }
    v.iter_mut().for_each(|x| *x /= s);
}

/// Inverse of [`multinomial_logit`]: logits of the non-reference entries.
///
/// Zero probabilities map to `-LOGIT_CAP` (relative to the reference); the
/// returned flag reports whether any coordinate had to be clamped.
pub fn simplex_logits(probs: ArrayView1<f64>, reference: usize) -> (Vec<f64>, bool) {
    let pref = probs[reference];
    let mut clamped = false;
    let mut out = Vec::with_capacity(probs.len().saturating_sub(1));
    for (u, &p) in probs.iter().enumerate() {
        if u == reference {
            continue;
        }
        let raw = if pref <= 0.0 && p <= 0.0 {
            0.0
        } else if pref <= 0.0 {
            f64::INFINITY
        } else if p <= 0.0 {
            f64::NEG_INFINITY
        } else {
            (p / pref).ln()
        };
        if raw.abs() > LOGIT_CAP {
            clamped = true;
            out.push(raw.clamp(-LOGIT_CAP, LOGIT_CAP));
        } else {
            out.push(raw);
        }
    }
    (out, clamped)
}

/// Probability of one ordinal cell from its two boundary logits.
///
/// `lo` is the logit of `P(Y >= y)` (absent for the lowest category) and `hi`
/// that of `P(Y >= y + 1)` (absent for the highest). Differences are taken on
/// whichever tail keeps precision.
pub fn ordinal_cell(lo: Option<f64>, hi: Option<f64>) -> f64 {
    match (lo, hi) {
        (None, None) => 1.0,
        (None, Some(h)) => expit(-h),
        (Some(l), None) => expit(l),
        (Some(l), Some(h)) => {
            if h > 0.0 {
                expit(-h) - expit(-l)
            } else {
                expit(l) - expit(h)
            }
        }
    }
}

/// Category probabilities of an ordinal variable under the global (cumulative)
/// logit link: `log P(Y >= y) / P(Y < y) = mu[y-1] + shift` for y = 1..c-1.
pub fn global_logit_probs(mu: &[f64], shift: f64) -> Result<Array1<f64>> {
    let c = mu.len() + 1;
    let z = |b: usize| (b >= 1 && b < c).then(|| mu[b - 1] + shift);
    let mut probs = Array1::zeros(c);
    for y in 0..c {
        let p = ordinal_cell(z(y), z(y + 1));
        if p < 0.0 || !p.is_finite() {
            return Err(LmError::numerical(format!(
                "cut-points are not decreasing: category {y} has probability {p:e}"
            )));
        }
        probs[y] = p;
    }
    Ok(probs)
}

/// k uniform(0,1) draws normalized to sum one.
pub fn random_simplex(k: usize, rng: &mut RngStream) -> Array1<f64> {
    assert!(k >= 1, "simplex dimension must be positive");
    let mut v: Array1<f64> = (0..k).map(|_| rng.uniform()).collect();
    let s = v.sum();
    if s > 0.0 {
        v /= s;
    } else {
        v.fill(1.0 / k as f64);
    }
    v
}

/// Stationary distribution of a row-stochastic matrix.
///
/// Solves `(I - P') pi = 0` with `sum(pi) = 1` appended as a least-squares
/// problem through the SVD pseudo-inverse, which yields the minimum-norm
/// solution when the chain is reducible (the identity matrix gives the
/// uniform vector).
pub fn stationary_distribution(p: ArrayView2<f64>) -> Result<Array1<f64>> {
    let k = p.nrows();
    if k == 0 || p.ncols() != k {
        return Err(LmError::arg("transition matrix must be square and non-empty"));
    }
    if k == 1 {
        return Ok(Array1::ones(1));
    }
    let a = stationary_system(p);
    let mut b = DVector::<f64>::zeros(k + 1);
    b[k] = 1.0;
    let svd = a.svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| LmError::numerical(format!("stationary distribution: {e}")))?;
    let mut pi: Array1<f64> = x.iter().map(|&v| v.max(0.0)).collect();
    let s = pi.sum();
    if !(s > 0.0) {
        return Err(LmError::numerical("stationary distribution is degenerate"));
    }
    pi /= s;
    let residual = stationary_residual(p, pi.view());
    if residual > 1e-8 {
        return Err(LmError::numerical(format!(
            "stationary system is singular beyond tolerance (residual {residual:e})"
        )));
    }
    Ok(pi)
}

fn stationary_system(p: ArrayView2<f64>) -> DMatrix<f64> {
    let k = p.nrows();
    let mut a = DMatrix::<f64>::zeros(k + 1, k);
    for i in 0..k {
        for j in 0..k {
            let id = if i == j { 1.0 } else { 0.0 };
            a[(i, j)] = id - p[[j, i]];
        }
    }
    for j in 0..k {
        a[(k, j)] = 1.0;
    }
    a
}

/// Directional derivative of the stationary distribution `pi` of `p` when the
/// matrix moves along `dp` (rows of `dp` summing to zero).
pub fn stationary_derivative(
    p: ArrayView2<f64>,
    pi: ArrayView1<f64>,
    dp: ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let k = p.nrows();
    let a = stationary_system(p);
    let rhs = dp.t().dot(&pi);
    let mut b = DVector::<f64>::zeros(k + 1);
    for j in 0..k {
        b[j] = rhs[j];
    }
    let x = a
        .svd(true, true)
        .solve(&b, 1e-12)
        .map_err(|e| LmError::numerical(format!("stationary derivative: {e}")))?;
    Ok(x.iter().copied().collect())
}

/// `max |(pi' P - pi')_j|`.
pub fn stationary_residual(p: ArrayView2<f64>, pi: ArrayView1<f64>) -> f64 {
    let moved = p.t().dot(&pi);
    moved
        .iter()
        .zip(pi.iter())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn stationary_two_state_closed_form() {
        // pi' P = pi' with pi = (a, 1-a): 0.1 a = 0.2 (1-a) -> a = 2/3.
        let p = array![[0.9, 0.1], [0.2, 0.8]];
        let pi = stationary_distribution(p.view()).unwrap();
        assert_abs_diff_eq!(pi[0], 2.0 / 3.0, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 1.0 / 3.0, epsilon = 1e-12);
    }

    #[test]
    fn stationary_identity_is_uniform() {
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let pi = stationary_distribution(p.view()).unwrap();
        assert_abs_diff_eq!(pi[0], 0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(pi[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn stationary_doubly_stochastic_is_uniform() {
        let p = array![[0.5, 0.3, 0.2], [0.2, 0.5, 0.3], [0.3, 0.2, 0.5]];
        let pi = stationary_distribution(p.view()).unwrap();
        for v in pi.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn multinomial_logit_examples() {
        let p = multinomial_logit(&[0.0, 0.0], 0);
        for v in p.iter() {
            assert_abs_diff_eq!(*v, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = multinomial_logit(&[2f64.ln()], 0);
        assert_abs_diff_eq!(p[0], 1.0 / 3.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p[1], 2.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn multinomial_logit_round_trip_mass_probabilities() {
        let probs = array![0.2175, 0.7825];
        let (eta, clamped) = simplex_logits(probs.view(), 0);
        assert!(!clamped);
        let back = multinomial_logit(&eta, 0);
        assert_abs_diff_eq!(back[0], 0.2175, epsilon = 1e-12);
        assert_abs_diff_eq!(back[1], 0.7825, epsilon = 1e-12);
    }

    #[test]
    fn multinomial_logit_large_eta_no_overflow() {
        let p = multinomial_logit(&[800.0, 799.0], 0);
        assert!(is_simplex(p.view(), 1e-12));
        assert!(p[1] > p[2]);
    }

    #[test]
    fn zero_probability_logit_is_clamped() {
        let (eta, clamped) = simplex_logits(array![0.5, 0.0, 0.5].view(), 0);
        assert!(clamped);
        assert_eq!(eta[0], -LOGIT_CAP);
        assert_abs_diff_eq!(eta[1], 0.0);
    }

    #[test]
    fn global_logit_binary_reduces_to_logit() {
        let p = global_logit_probs(&[0.0], 0.0).unwrap();
        assert_abs_diff_eq!(p[0], 0.5);
        assert_abs_diff_eq!(p[1], 0.5);
        let p = global_logit_probs(&[0.3], 0.4).unwrap();
        assert_abs_diff_eq!(p[1], expit(0.7), epsilon = 1e-15);
    }

    #[test]
    fn global_logit_health_cutpoints() {
        // Survivor probabilities are expit of each cut-point; cells are their
        // first differences.
        let mu = [8.284, 4.543, 0.747, -3.573];
        let p = global_logit_probs(&mu, 0.0).unwrap();
        let s: Vec<f64> = mu.iter().map(|m| 1.0 / (1.0 + (-m as f64).exp())).collect();
        let expected = [1.0 - s[0], s[0] - s[1], s[1] - s[2], s[2] - s[3], s[3]];
        for (a, b) in p.iter().zip(expected.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-14);
        }
        // Frozen from an independent scipy expit evaluation.
        let frozen = [2.524613240153517e-4, 1.0276925216917032e-2, 0.3109459503424238, 0.6512196436239484, 2.7305019492695426e-2];
        for (a, b) in p.iter().zip(frozen.iter()) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-13);
        }
    }

    #[test]
    fn global_logit_large_shift_concentrates_on_top() {
        let p = global_logit_probs(&[2.0, 0.0, -2.0], 30.0).unwrap();
        assert!(p[3] > 1.0 - 1e-11);
    }

    #[test]
    fn global_logit_rejects_increasing_cutpoints() {
        assert!(global_logit_probs(&[-1.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn random_simplex_properties() {
        let mut rng = RngStream::new(7);
        assert_eq!(random_simplex(1, &mut rng), array![1.0]);
        let a = random_simplex(3, &mut RngStream::new(11));
        let b = random_simplex(3, &mut RngStream::new(11));
        assert_eq!(a, b);
        assert!(is_simplex(a.view(), 1e-12));
    }

    #[test]
    fn random_simplex_first_coordinate_mean() {
        let mut rng = RngStream::new(2024);
        let n = 100_000;
        let mean: f64 = (0..n).map(|_| random_simplex(2, &mut rng)[0]).sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
    }

    #[test]
    fn substreams_differ_and_repeat() {
        let base = RngStream::new(5);
        let a: Vec<f64> = (0..4).map(|_| base.substream(0).uniform()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
        let mut s0 = base.substream(0);
        let mut s1 = base.substream(1);
        assert_ne!(s0.uniform(), s1.uniform());
    }

    #[test]
    fn stationary_derivative_matches_finite_difference() {
        let p = array![[0.7, 0.2, 0.1], [0.3, 0.5, 0.2], [0.1, 0.3, 0.6]];
        let dp = array![[0.0, 0.0, 0.0], [0.1, -0.15, 0.05], [0.0, 0.0, 0.0]];
        let pi = stationary_distribution(p.view()).unwrap();
        let d = stationary_derivative(p.view(), pi.view(), dp.view()).unwrap();
        let h = 1e-6;
        let up = stationary_distribution((&p + &(&dp * h)).view()).unwrap();
        let down = stationary_distribution((&p - &(&dp * h)).view()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(d[j], (up[j] - down[j]) / (2.0 * h), epsilon = 1e-8);
        }
    }

    #[test]
    fn ordinal_cell_keeps_precision_in_upper_tail() {
        let p = ordinal_cell(Some(30.0), Some(35.0));
        assert!(p < 0.0, "decreasing boundaries give a negative cell");
        let q = ordinal_cell(Some(40.0), Some(35.0));
        assert!(q > 0.0 && (q - ((-35f64).exp() - (-40f64).exp())).abs() < 1e-25);
    }
}
