//! Common interface of the fitted model variants and helpers for the
//! conditional response probabilities and transition rows they share.

use ndarray::{Array1, Array2, Array3, ArrayView1, ArrayView2, ArrayView3, Axis};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::data::{CategorySpec, Dataset};
use crate::error::Result;
use crate::fit::{accumulate, FitConfig, FitResult};
use crate::prob::{multinomial_logit, random_simplex, simplex_logits, RngStream};
use crate::recursions::{forward_loglik, HmmInputs, TransitionSeq};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Basic,
    CovManifest,
    CovLatent,
    Mixed,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Basic => "basic",
            Variant::CovManifest => "cov-manifest",
            Variant::CovLatent => "cov-latent",
            Variant::Mixed => "mixed",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OwnedTransitions {
    Homogeneous(Array2<f64>),
    /// `(T-1) x k x k`.
    PerOccasion(Array3<f64>),
}

impl OwnedTransitions {
    pub fn view(&self) -> TransitionSeq<'_> {
        match self {
            OwnedTransitions::Homogeneous(p) => TransitionSeq::Homogeneous(p.view()),
            OwnedTransitions::PerOccasion(p) => TransitionSeq::PerOccasion(p.view()),
        }
    }
}

/// Hidden-chain inputs of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ChainParts {
    pub init: Array1<f64>,
    pub trans: OwnedTransitions,
    pub emit: Array2<f64>,
}

impl ChainParts {
    pub fn inputs(&self) -> HmmInputs<'_> {
        HmmInputs {
            init: self.init.view(),
            trans: self.trans.view(),
            emit: self.emit.view(),
        }
    }
}

/// Operations shared by every fitted variant: likelihood evaluation, the
/// unconstrained parameter vector used for standard errors, state relabeling
/// and simulation.
pub trait LatentModel: Clone + Send + Sync + Serialize + DeserializeOwned {
    const VARIANT: Variant;

    fn n_states(&self) -> usize;

    /// Number of free parameters.
    fn n_params(&self) -> usize;

    /// Error unless `ds` has the shape this parameter set was estimated on.
    fn check_dataset(&self, ds: &Dataset) -> Result<()>;

    /// Chain inputs for configuration `i`. For the mixed model these are the
    /// inputs of the most probable latent class.
    fn chain(&self, ds: &Dataset, i: usize) -> Result<ChainParts>;

    fn loglik(&self, ds: &Dataset) -> Result<f64> {
        self.check_dataset(ds)?;
        accumulate(
            ds.n_configs(),
            || 0.0,
            |acc, i| {
                *acc += ds.weight(i) * forward_loglik(&self.chain(ds, i)?.inputs());
                Ok(())
            },
            |a, b| *a += b,
        )
    }

    /// Unconstrained coordinates (multinomial logits and regression
    /// coefficients); length `n_params`.
    fn pack(&self) -> Vec<f64>;

    fn unpack(&self, theta: &[f64]) -> Result<Self>;

    fn theta_labels(&self) -> Vec<String>;

    /// Gradient of the log-likelihood with respect to `pack()` coordinates.
    fn score(&self, ds: &Dataset) -> Result<Vec<f64>>;

    /// Named probabilities and coefficients on their natural scale.
    fn natural(&self) -> Vec<(String, f64)>;

    /// Relabel states: new state `u` is old state `perm[u]`.
    fn permute_states(&self, perm: &[usize]) -> Self;

    /// One row per state describing its response distribution, used to match
    /// states across refits.
    fn state_profile(&self) -> Array2<f64>;

    /// Draw one response trajectory (`T x r`) and its latent states.
    fn simulate_config(
        &self,
        x1: ArrayView1<f64>,
        x2: ArrayView2<f64>,
        n_occasions: usize,
        rng: &mut RngStream,
    ) -> Result<(Array2<usize>, Vec<usize>)>;

    /// Re-estimate on `ds` starting from `self`.
    fn refit(&self, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<Self>>;
}

pub(crate) fn psi_param_count(cats: &CategorySpec, k: usize) -> usize {
    k * cats.counts().iter().map(|c| c - 1).sum::<usize>()
}

/// Normalize expected response counts `r x cmax x k` into Psi. Blocks with no
/// mass become uniform; the number of such resets is returned.
pub(crate) fn psi_from_counts(a: ArrayView3<f64>, cats: &CategorySpec) -> (Array3<f64>, usize) {
    let (r, cmax, k) = a.dim();
    let mut psi = Array3::zeros((r, cmax, k));
    let mut resets = 0;
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let total: f64 = (0..c).map(|y| a[[j, y, u]]).sum();
            for y in 0..c {
                psi[[j, y, u]] = if total > 0.0 {
                    a[[j, y, u]] / total
                } else {
                    1.0 / c as f64
                };
            }
            if !(total > 0.0) {
                resets += 1;
            }
        }
    }
    (psi, resets)
}

/// Logits of Psi against category 0, ordered by variable then state.
pub(crate) fn psi_pack(psi: ArrayView3<f64>, cats: &CategorySpec, out: &mut Vec<f64>) {
    let k = psi.dim().2;
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let col = psi.slice(ndarray::s![j, 0..c, u]);
            out.extend(simplex_logits(col, 0).0);
        }
    }
}

pub(crate) fn psi_unpack(theta: &[f64], cats: &CategorySpec, k: usize) -> Array3<f64> {
    let mut psi = Array3::zeros((cats.n_vars(), cats.max_categories(), k));
    let mut pos = 0;
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let p = multinomial_logit(&theta[pos..pos + c - 1], 0);
            pos += c - 1;
            for y in 0..c {
                psi[[j, y, u]] = p[y];
            }
        }
    }
    psi
}

pub(crate) fn psi_labels(cats: &CategorySpec, k: usize, out: &mut Vec<String>) {
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            for y in 1..c {
                out.push(format!("logit psi[j={},u={},y={}]", j + 1, u + 1, y));
            }
        }
    }
}

pub(crate) fn psi_natural(psi: ArrayView3<f64>, cats: &CategorySpec, out: &mut Vec<(String, f64)>) {
    let k = psi.dim().2;
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            for y in 0..c {
                out.push((format!("psi[j={},u={},y={}]", j + 1, u + 1, y), psi[[j, y, u]]));
            }
        }
    }
}

/// Score of the Psi logits given expected response counts.
pub(crate) fn psi_score(
    a: ArrayView3<f64>,
    psi: ArrayView3<f64>,
    cats: &CategorySpec,
    out: &mut Vec<f64>,
) {
    let k = psi.dim().2;
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let total: f64 = (0..c).map(|y| a[[j, y, u]]).sum();
            for y in 1..c {
                out.push(a[[j, y, u]] - total * psi[[j, y, u]]);
            }
        }
    }
}

pub(crate) fn psi_permute(psi: &Array3<f64>, perm: &[usize]) -> Array3<f64> {
    psi.select(Axis(2), perm)
}

/// Psi profile per state: rows are states, columns run over (variable, category).
pub(crate) fn psi_profile(psi: ArrayView3<f64>) -> Array2<f64> {
    let (r, cmax, k) = psi.dim();
    Array2::from_shape_fn((k, r * cmax), |(u, f)| psi[[f / cmax, f % cmax, u]])
}

/// Add expected response counts of one configuration into `a`.
pub(crate) fn add_response_counts(
    a: &mut Array3<f64>,
    responses: ArrayView2<usize>,
    gamma: ArrayView2<f64>,
    weight: f64,
) {
    let (t_len, r) = responses.dim();
    let k = gamma.ncols();
    for t in 0..t_len {
        for j in 0..r {
            let y = responses[[t, j]];
            for u in 0..k {
                a[[j, y, u]] += weight * gamma[[t, u]];
            }
        }
    }
}

/// Starting Psi: smoothed marginal frequencies tilted so that higher states
/// favour higher categories.
pub(crate) fn deterministic_psi(ds: &Dataset, k: usize) -> Array3<f64> {
    let cats = &ds.categories;
    let (r, cmax) = (cats.n_vars(), cats.max_categories());
    let mut freq = Array2::<f64>::zeros((r, cmax));
    for i in 0..ds.n_configs() {
        let w = ds.weight(i);
        for row in ds.config_responses(i).rows() {
            for (j, &y) in row.iter().enumerate() {
                freq[[j, y]] += w;
            }
        }
    }
    let mut psi = Array3::zeros((r, cmax, k));
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let s = if k > 1 { 2.0 * u as f64 / (k - 1) as f64 - 1.0 } else { 0.0 };
            let mut col: Vec<f64> = (0..c)
                .map(|y| {
                    let z = 2.0 * y as f64 / (c - 1) as f64 - 1.0;
                    (freq[[j, y]] + 0.5) * (2.0 * s * z).exp()
                })
                .collect();
            let total: f64 = col.iter().sum();
            col.iter_mut().for_each(|v| *v /= total);
            for y in 0..c {
                psi[[j, y, u]] = col[y];
            }
        }
    }
    psi
}

pub(crate) fn random_psi(cats: &CategorySpec, k: usize, rng: &mut RngStream) -> Array3<f64> {
    let mut psi = Array3::zeros((cats.n_vars(), cats.max_categories(), k));
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            let p = random_simplex(c, rng);
            for y in 0..c {
                psi[[j, y, u]] = p[y];
            }
        }
    }
    psi
}

/// Row-normalize expected transition counts; empty rows become uniform.
pub(crate) fn rows_from_counts(counts: ArrayView2<f64>) -> (Array2<f64>, usize) {
    let k = counts.ncols();
    let mut out = Array2::zeros(counts.dim());
    let mut resets = 0;
    for (i, row) in counts.rows().into_iter().enumerate() {
        let total = row.sum();
        if total > 0.0 {
            out.row_mut(i).assign(&(&row / total));
        } else {
            out.row_mut(i).fill(1.0 / k as f64);
            resets += 1;
        }
    }
    (out, resets)
}

pub(crate) fn normalize(v: ArrayView1<f64>) -> (Array1<f64>, bool) {
    let total = v.sum();
    if total > 0.0 {
        (&v / total, false)
    } else {
        (Array1::from_elem(v.len(), 1.0 / v.len() as f64), true)
    }
}

/// Sticky starting transition matrix: 0.8 on the diagonal.
pub(crate) fn sticky_transitions(k: usize) -> Array2<f64> {
    if k == 1 {
        return Array2::ones((1, 1));
    }
    Array2::from_shape_fn((k, k), |(a, b)| if a == b { 0.8 } else { 0.2 / (k - 1) as f64 })
}

pub(crate) fn random_transitions(k: usize, rng: &mut RngStream) -> Array2<f64> {
    let mut p = Array2::zeros((k, k));
    for a in 0..k {
        p.row_mut(a).assign(&random_simplex(k, rng));
    }
    p
}

/// Logits of each row against its diagonal entry.
pub(crate) fn rows_pack(p: ArrayView2<f64>, out: &mut Vec<f64>) {
    for (a, row) in p.rows().into_iter().enumerate() {
        out.extend(simplex_logits(row, a).0);
    }
}

pub(crate) fn rows_unpack(theta: &[f64], k: usize) -> Array2<f64> {
    let mut p = Array2::zeros((k, k));
    for a in 0..k {
        let row = multinomial_logit(&theta[a * (k - 1)..(a + 1) * (k - 1)], a);
        p.row_mut(a).assign(&row);
    }
    p
}

pub(crate) fn rows_score(counts: ArrayView2<f64>, p: ArrayView2<f64>, out: &mut Vec<f64>) {
    let k = p.nrows();
    for a in 0..k {
        let total = counts.row(a).sum();
        for b in (0..k).filter(|&b| b != a) {
            out.push(counts[[a, b]] - total * p[[a, b]]);
        }
    }
}

pub(crate) fn rows_labels(prefix: &str, k: usize, out: &mut Vec<String>) {
    for a in 0..k {
        for b in (0..k).filter(|&b| b != a) {
            out.push(format!("logit {prefix}[{},{}]", a + 1, b + 1));
        }
    }
}

pub(crate) fn permute_matrix(p: ArrayView2<f64>, perm: &[usize]) -> Array2<f64> {
    p.select(Axis(0), perm).select(Axis(1), perm)
}

/// Draw the responses of one occasion given the state.
pub(crate) fn draw_responses(
    psi: ArrayView3<f64>,
    cats: &CategorySpec,
    u: usize,
    rng: &mut RngStream,
) -> Vec<usize> {
    cats.counts()
        .iter()
        .enumerate()
        .map(|(j, &c)| rng.categorical(psi.slice(ndarray::s![j, 0..c, u])))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    #[test]
    fn rows_round_trip() {
        let p = array![[0.7, 0.2, 0.1], [0.3, 0.5, 0.2], [0.1, 0.3, 0.6]];
        let mut theta = Vec::new();
        rows_pack(p.view(), &mut theta);
        assert_eq!(theta.len(), 6);
        let back = rows_unpack(&theta, 3);
        for (a, b) in back.iter().zip(p.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn psi_round_trip_with_ragged_categories() {
        let cats = CategorySpec::new(vec![3, 2]).unwrap();
        let psi = array![
            [[0.2, 0.5], [0.3, 0.25], [0.5, 0.25]],
            [[0.9, 0.4], [0.1, 0.6], [0.0, 0.0]]
        ];
        let mut theta = Vec::new();
        psi_pack(psi.view(), &cats, &mut theta);
        assert_eq!(theta.len(), psi_param_count(&cats, 2));
        let back = psi_unpack(&theta, &cats, 2);
        for (a, b) in back.iter().zip(psi.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn empty_rows_reset_to_uniform() {
        let (p, resets) = rows_from_counts(array![[2.0, 2.0], [0.0, 0.0]].view());
        assert_eq!(resets, 1);
        assert_eq!(p, array![[0.5, 0.5], [0.5, 0.5]]);
    }

    #[test]
    fn deterministic_psi_is_monotone_in_state() {
        let cats = CategorySpec::new(vec![3]).unwrap();
        let ds = Dataset::from_arrays(
            array![[[0usize], [1]], [[2], [1]]],
            vec![1, 1],
            None,
            None,
            cats,
        )
        .unwrap();
        let psi = deterministic_psi(&ds, 3);
        for u in 0..3 {
            assert_abs_diff_eq!(psi.slice(ndarray::s![0, .., u]).sum(), 1.0, epsilon = 1e-14);
        }
        assert!(psi[[0, 2, 2]] > psi[[0, 2, 1]] && psi[[0, 2, 1]] > psi[[0, 2, 0]]);
    }
}
