//! Latent Markov model with covariates on the initial and transition
//! probabilities of the hidden chain.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::basic::check_psi;
use crate::data::{CategorySpec, Dataset};
use crate::error::{LmError, Result};
use crate::fit::{
    accumulate, finish, fit_multistart, Diagnostics, EmModel, FitConfig, FitResult, LatentParam,
    StartRule,
};
use crate::logit::{
    fit_logit, gradient, probabilities, probabilities_into, DifflogitDesign, InitialDesign, LogitDesign, LogitObs,
    MultilogitDesign,
};
use crate::model::{
    add_response_counts, deterministic_psi, draw_responses, psi_from_counts, psi_labels,
    psi_natural, psi_pack, psi_param_count, psi_permute, psi_profile, psi_score, psi_unpack,
    random_psi, ChainParts, LatentModel, OwnedTransitions, Variant,
};
use crate::prob::{random_simplex, simplex_logits, RngStream};
use crate::recursions::{emission_table, forward_backward};

/// Transition coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "param", rename_all = "kebab-case")]
pub enum LatentTransitions {
    /// `k x (1+p2) x (k-1)`: for origin `a`, column `slot` holds the
    /// intercept and slopes of target `b` against staying in `a`, where
    /// `slot = b` below the diagonal and `b - 1` above it.
    Multilogit { ga: Array3<f64> },
    /// Origin-specific intercepts `k x (k-1)` (same slot convention) and one
    /// slope vector per state, `k x p2`, whose first row is zero. The effect
    /// of the covariates on moving from `a` to `b` is `slopes[b] - slopes[a]`.
    Difflogit {
        intercepts: Array2<f64>,
        slopes: Array2<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovLatentParams {
    /// `(1+p1) x (k-1)`: intercept and slopes of the initial logits of states
    /// 2..k against state 1.
    pub be: Array2<f64>,
    pub ga: LatentTransitions,
    pub psi: Array3<f64>,
    pub categories: CategorySpec,
}

pub(crate) struct CovLatentStats {
    a: Array3<f64>,
    init_obs: Vec<LogitObs>,
    trans_obs: Vec<LogitObs>,
}

fn slot(a: usize, b: usize) -> usize {
    if b < a {
        b
    } else {
        b - 1
    }
}

impl CovLatentParams {
    pub fn n_states(&self) -> usize {
        self.be.ncols() + 1
    }

    pub fn p1(&self) -> usize {
        self.be.nrows() - 1
    }

    pub fn p2(&self) -> usize {
        match &self.ga {
            LatentTransitions::Multilogit { ga } => ga.dim().1 - 1,
            LatentTransitions::Difflogit { slopes, .. } => slopes.ncols(),
        }
    }

    pub fn param(&self) -> LatentParam {
        match self.ga {
            LatentTransitions::Multilogit { .. } => LatentParam::Multilogit,
            LatentTransitions::Difflogit { .. } => LatentParam::Difflogit,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.n_states();
        match &self.ga {
            LatentTransitions::Multilogit { ga } => {
                if ga.dim().0 != k || ga.dim().2 != k - 1 {
                    return Err(LmError::arg("Ga must be k x (1+p2) x (k-1)"));
                }
            }
            LatentTransitions::Difflogit { intercepts, slopes } => {
                if intercepts.dim() != (k, k - 1) || slopes.nrows() != k {
                    return Err(LmError::arg(
                        "difflogit coefficients must be k x (k-1) intercepts and k x p2 slopes",
                    ));
                }
                if slopes.row(0).iter().any(|&v| v != 0.0) {
                    return Err(LmError::arg("first row of the difflogit slopes must be zero"));
                }
            }
        }
        if self.be.iter().chain(self.ga_coef().iter()).any(|v| !v.is_finite()) {
            return Err(LmError::arg("coefficients must be finite"));
        }
        check_psi(&self.psi, &self.categories, k)
    }

    fn init_design(&self) -> InitialDesign {
        InitialDesign {
            k: self.n_states(),
            p: self.p1(),
        }
    }

    fn be_coef(&self) -> Vec<f64> {
        let d = 1 + self.p1();
        let mut out = vec![0.0; self.be.len()];
        for u in 1..self.n_states() {
            for m in 0..d {
                out[(u - 1) * d + m] = self.be[[m, u - 1]];
            }
        }
        out
    }

    fn be_from(&self, coef: &[f64]) -> Array2<f64> {
        let d = 1 + self.p1();
        Array2::from_shape_fn(self.be.dim(), |(m, s)| coef[s * d + m])
    }

    fn ga_coef(&self) -> Vec<f64> {
        let k = self.n_states();
        match &self.ga {
            LatentTransitions::Multilogit { ga } => {
                let d = ga.dim().1;
                let mut out = vec![0.0; ga.len()];
                for a in 0..k {
                    for sl in 0..k - 1 {
                        for m in 0..d {
                            out[(a * (k - 1) + sl) * d + m] = ga[[a, m, sl]];
                        }
                    }
                }
                out
            }
            LatentTransitions::Difflogit { intercepts, slopes } => {
                let mut out: Vec<f64> = intercepts.iter().copied().collect();
                out.extend(slopes.slice(s![1.., ..]).iter());
                out
            }
        }
    }

    fn ga_from(&self, coef: &[f64]) -> LatentTransitions {
        let k = self.n_states();
        match &self.ga {
            LatentTransitions::Multilogit { ga } => {
                let d = ga.dim().1;
                LatentTransitions::Multilogit {
                    ga: Array3::from_shape_fn(ga.dim(), |(a, m, sl)| coef[(a * (k - 1) + sl) * d + m]),
                }
            }
            LatentTransitions::Difflogit { intercepts, slopes } => {
                let p = slopes.ncols();
                let off = k * (k - 1);
                LatentTransitions::Difflogit {
                    intercepts: Array2::from_shape_vec(intercepts.dim(), coef[..off].to_vec())
                        .expect("intercept block"),
                    slopes: Array2::from_shape_fn((k, p), |(u, m)| {
                        if u == 0 {
                            0.0
                        } else {
                            coef[off + (u - 1) * p + m]
                        }
                    }),
                }
            }
        }
    }

    fn ga_n_coef(&self) -> usize {
        let (k, p) = (self.n_states(), self.p2());
        match self.ga {
            LatentTransitions::Multilogit { .. } => MultilogitDesign { k, p }.n_coef(),
            LatentTransitions::Difflogit { .. } => DifflogitDesign { k, p }.n_coef(),
        }
    }

    /// Initial probabilities for covariates `x1`.
    pub fn initial_probs(&self, x1: ArrayView1<f64>) -> Array1<f64> {
        let z = x1.to_vec();
        Array1::from(probabilities(&self.init_design(), &self.be_coef(), 0, &z))
    }

    /// Transition matrix for covariates `x2`.
    pub fn transition_matrix(&self, x2: ArrayView1<f64>) -> Array2<f64> {
        self.transition_with(&self.ga_coef(), x2)
    }

    fn transition_with(&self, coef: &[f64], x2: ArrayView1<f64>) -> Array2<f64> {
        let k = self.n_states();
        let mut out = Array2::zeros((k, k));
        self.fill_transitions(coef, x2, &mut Vec::new(), out.as_slice_mut().expect("fresh array"));
        out
    }

    /// Row-major `k x k` transition matrix for covariates `x2` into `out`.
    fn fill_transitions(&self, coef: &[f64], x2: ArrayView1<f64>, scratch: &mut Vec<(usize, f64)>, out: &mut [f64]) {
        let (k, p) = (self.n_states(), self.p2());
        let owned;
        let z = match x2.to_slice() {
            Some(z) => z,
            None => {
                owned = x2.to_vec();
                &owned
            }
        };
        for (a, row) in out.chunks_exact_mut(k).enumerate() {
            match self.ga {
                LatentTransitions::Multilogit { .. } => {
                    probabilities_into(&MultilogitDesign { k, p }, coef, a, z, scratch, row)
                }
                LatentTransitions::Difflogit { .. } => {
                    probabilities_into(&DifflogitDesign { k, p }, coef, a, z, scratch, row)
                }
            }
        }
    }

    fn transitions_for(&self, ds: &Dataset, i: usize, coef: &[f64]) -> Array3<f64> {
        let k = self.n_states();
        let t_len = ds.n_occasions();
        let mut out = Array3::zeros((t_len - 1, k, k));
        let mut scratch = Vec::new();
        let buf = out.as_slice_mut().expect("fresh array");
        for (t, block) in (1..t_len).zip(buf.chunks_exact_mut(k * k)) {
            self.fill_transitions(coef, ds.config_x2(i, t), &mut scratch, block);
        }
        out
    }

    pub(crate) fn deterministic(ds: &Dataset, k: usize, param: LatentParam) -> Self {
        let stay = if k > 1 { (0.2 / (k - 1) as f64 / 0.8).ln() } else { 0.0 };
        Self::with_intercepts(
            ds,
            Array1::zeros(k - 1),
            Array2::from_elem((k, k - 1), stay),
            param,
            deterministic_psi(ds, k),
        )
    }

    pub(crate) fn random(ds: &Dataset, k: usize, param: LatentParam, rng: &mut RngStream) -> Self {
        let init = Array1::from(simplex_logits(random_simplex(k, rng).view(), 0).0);
        let mut ints = Array2::zeros((k, k - 1));
        for a in 0..k {
            let row = simplex_logits(random_simplex(k, rng).view(), a).0;
            ints.row_mut(a).assign(&Array1::from(row));
        }
        Self::with_intercepts(ds, init, ints, param, random_psi(&ds.categories, k, rng))
    }

    fn with_intercepts(
        ds: &Dataset,
        init: Array1<f64>,
        ints: Array2<f64>,
        param: LatentParam,
        psi: Array3<f64>,
    ) -> Self {
        let k = ints.nrows();
        let (p1, p2) = (ds.p1(), ds.p2());
        let mut be = Array2::zeros((1 + p1, k - 1));
        be.row_mut(0).assign(&init);
        let ga = match param {
            LatentParam::Multilogit => {
                let mut ga = Array3::zeros((k, 1 + p2, k - 1));
                for a in 0..k {
                    ga.slice_mut(s![a, 0, ..]).assign(&ints.row(a));
                }
                LatentTransitions::Multilogit { ga }
            }
            LatentParam::Difflogit => LatentTransitions::Difflogit {
                intercepts: ints,
                slopes: Array2::zeros((k, p2)),
            },
        };
        Self {
            be,
            ga,
            psi,
            categories: ds.categories.clone(),
        }
    }

    fn fit_ga(&self, obs: &[LogitObs]) -> crate::logit::LogitFit {
        let (k, p) = (self.n_states(), self.p2());
        match self.ga {
            LatentTransitions::Multilogit { .. } => {
                fit_logit(&MultilogitDesign { k, p }, obs, &self.ga_coef())
            }
            LatentTransitions::Difflogit { .. } => {
                fit_logit(&DifflogitDesign { k, p }, obs, &self.ga_coef())
            }
        }
    }

    fn ga_gradient(&self, obs: &[LogitObs]) -> Vec<f64> {
        let (k, p) = (self.n_states(), self.p2());
        match self.ga {
            LatentTransitions::Multilogit { .. } => {
                gradient(&MultilogitDesign { k, p }, obs, &self.ga_coef())
            }
            LatentTransitions::Difflogit { .. } => {
                gradient(&DifflogitDesign { k, p }, obs, &self.ga_coef())
            }
        }
    }

    fn coef_labels(&self) -> Vec<String> {
        let k = self.n_states();
        let name = |m: usize, base: &str| {
            if m == 0 {
                "(intercept)".to_string()
            } else {
                format!("{base}{m}")
            }
        };
        let mut out = Vec::new();
        for u in 1..k {
            for m in 0..=self.p1() {
                out.push(format!("be[{},{}]", name(m, "x1_"), u + 1));
            }
        }
        match &self.ga {
            LatentTransitions::Multilogit { ga } => {
                for a in 0..k {
                    for b in (0..k).filter(|&b| b != a) {
                        for m in 0..ga.dim().1 {
                            out.push(format!("ga[{},{}->{}]", name(m, "x2_"), a + 1, b + 1));
                        }
                    }
                }
            }
            LatentTransitions::Difflogit { slopes, .. } => {
                for a in 0..k {
                    for b in (0..k).filter(|&b| b != a) {
                        out.push(format!("ga0[{}->{}]", a + 1, b + 1));
                    }
                }
                for u in 1..k {
                    for m in 0..slopes.ncols() {
                        out.push(format!("ga1[x2_{},{}]", m + 1, u + 1));
                    }
                }
            }
        }
        out
    }
}

impl EmModel for CovLatentParams {
    type Stats = CovLatentStats;

    fn score_from_stats(&self, _ds: &Dataset, st: &Self::Stats) -> Result<Vec<f64>> {
        let mut out = gradient(&self.init_design(), &st.init_obs, &self.be_coef());
        out.extend(self.ga_gradient(&st.trans_obs));
        psi_score(st.a.view(), self.psi.view(), &self.categories, &mut out);
        Ok(out)
    }

    fn fixed_tail(&self, cfg: &FitConfig) -> usize {
        if cfg.fix_psi {
            psi_param_count(&self.categories, self.n_states())
        } else {
            0
        }
    }

    fn e_step(&self, ds: &Dataset) -> Result<(f64, CovLatentStats)> {
        let k = self.n_states();
        let ga = self.ga_coef();
        let psi_dim = self.psi.dim();
        let acc = accumulate(
            ds.n_configs(),
            || {
                (
                    0.0,
                    CovLatentStats {
                        a: Array3::zeros(psi_dim),
                        init_obs: Vec::new(),
                        trans_obs: Vec::new(),
                    },
                )
            },
            |(ll, st), i| {
                let y = ds.config_responses(i);
                let chain = ChainParts {
                    init: self.initial_probs(ds.config_x1(i)),
                    trans: OwnedTransitions::PerOccasion(self.transitions_for(ds, i, &ga)),
                    emit: emission_table(self.psi.view(), y),
                };
                let post = forward_backward(&chain.inputs())?;
                let w = ds.weight(i);
                *ll += w * post.loglik;
                add_response_counts(&mut st.a, y, post.gamma.view(), w);
                st.init_obs.push(LogitObs {
                    group: 0,
                    z: ds.config_x1(i).to_vec(),
                    counts: post.gamma.row(0).iter().map(|g| w * g).collect(),
                });
                for t in 1..ds.n_occasions() {
                    let z = ds.config_x2(i, t).to_vec();
                    for a in 0..k {
                        st.trans_obs.push(LogitObs {
                            group: a,
                            z: z.clone(),
                            counts: (0..k).map(|b| w * post.xi[[t - 1, a, b]]).collect(),
                        });
                    }
                }
                Ok(())
            },
            |(tl, ts), (pl, ps)| {
                *tl += pl;
                ts.a += &ps.a;
                ts.init_obs.extend(ps.init_obs);
                ts.trans_obs.extend(ps.trans_obs);
            },
        )?;
        Ok(acc)
    }

    fn m_step(
        &self,
        _ds: &Dataset,
        stats: &CovLatentStats,
        cfg: &FitConfig,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        let be_fit = fit_logit(&self.init_design(), &stats.init_obs, &self.be_coef());
        let ga_fit = self.fit_ga(&stats.trans_obs);
        for f in [&be_fit, &ga_fit] {
            diag.inner_not_converged += (!f.converged) as usize;
            diag.ridge_steps += f.ridge_steps;
        }
        diag.coefficient_caps = be_fit.capped + ga_fit.capped;
        let psi = if cfg.fix_psi {
            self.psi.clone()
        } else {
            let (psi, resets) = psi_from_counts(stats.a.view(), &self.categories);
            diag.zero_count_resets += resets;
            psi
        };
        Ok(Self {
            be: self.be_from(&be_fit.coef),
            ga: self.ga_from(&ga_fit.coef),
            psi,
            categories: self.categories.clone(),
        })
    }
}

/// Fit the covariate-in-latent model from the start rule in `cfg`.
pub fn fit_cov_latent(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<CovLatentParams>> {
    fit_impl(ds, cfg, None)
}

pub fn fit_cov_latent_from(
    ds: &Dataset,
    cfg: &FitConfig,
    start: &CovLatentParams,
) -> Result<FitResult<CovLatentParams>> {
    start.validate()?;
    start.check_dataset(ds)?;
    let cfg = FitConfig {
        start: StartRule::Input,
        k: start.n_states(),
        param: start.param(),
        ..cfg.clone()
    };
    fit_impl(ds, &cfg, Some(start))
}

fn fit_impl(
    ds: &Dataset,
    cfg: &FitConfig,
    start: Option<&CovLatentParams>,
) -> Result<FitResult<CovLatentParams>> {
    if cfg.k1 != 1 {
        return Err(LmError::arg("the covariate-in-latent model has no latent classes"));
    }
    let (outcome, index) = fit_multistart(
        ds,
        cfg,
        start,
        || Ok(CovLatentParams::deterministic(ds, cfg.k, cfg.param)),
        |rng| Ok(CovLatentParams::random(ds, cfg.k, cfg.param, rng)),
    )?;
    let np = outcome.params.n_params();
    Ok(finish(outcome, index, np, ds, cfg))
}

impl LatentModel for CovLatentParams {
    const VARIANT: Variant = Variant::CovLatent;

    fn n_states(&self) -> usize {
        self.be.ncols() + 1
    }

    fn n_params(&self) -> usize {
        self.be.len() + self.ga_n_coef() + psi_param_count(&self.categories, self.n_states())
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.categories != self.categories {
            return Err(LmError::data("response categories differ from the fitted model"));
        }
        if ds.p1() != self.p1() {
            return Err(LmError::data(format!(
                "model expects {} initial covariates, data have {}",
                self.p1(),
                ds.p1()
            )));
        }
        if ds.n_occasions() > 1 && ds.p2() != self.p2() {
            return Err(LmError::data(format!(
                "model expects {} transition covariates, data have {}",
                self.p2(),
                ds.p2()
            )));
        }
        Ok(())
    }

    fn chain(&self, ds: &Dataset, i: usize) -> Result<ChainParts> {
        Ok(ChainParts {
            init: self.initial_probs(ds.config_x1(i)),
            trans: OwnedTransitions::PerOccasion(self.transitions_for(ds, i, &self.ga_coef())),
            emit: emission_table(self.psi.view(), ds.config_responses(i)),
        })
    }

    fn pack(&self) -> Vec<f64> {
        let mut out = self.be_coef();
        out.extend(self.ga_coef());
        psi_pack(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn unpack(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(LmError::arg("parameter vector has the wrong length"));
        }
        let nb = self.be.len();
        let ng = self.ga_n_coef();
        Ok(Self {
            be: self.be_from(&theta[..nb]),
            ga: self.ga_from(&theta[nb..nb + ng]),
            psi: psi_unpack(&theta[nb + ng..], &self.categories, self.n_states()),
            categories: self.categories.clone(),
        })
    }

    fn theta_labels(&self) -> Vec<String> {
        let mut out = self.coef_labels();
        psi_labels(&self.categories, self.n_states(), &mut out);
        out
    }

    fn score(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(ds)?;
        let (_, st) = self.e_step(ds)?;
        self.score_from_stats(ds, &st)
    }

    fn natural(&self) -> Vec<(String, f64)> {
        let mut out: Vec<(String, f64)> = self
            .coef_labels()
            .into_iter()
            .zip(self.be_coef().into_iter().chain(self.ga_coef()))
            .collect();
        psi_natural(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn permute_states(&self, perm: &[usize]) -> Self {
        let k = self.n_states();
        // Full coefficient columns with the reference set to zero.
        let d1 = self.be.nrows();
        let full_be = |u: usize, m: usize| if u == 0 { 0.0 } else { self.be[[m, u - 1]] };
        let be = Array2::from_shape_fn((d1, k - 1), |(m, sl)| {
            full_be(perm[sl + 1], m) - full_be(perm[0], m)
        });
        let ga = match &self.ga {
            LatentTransitions::Multilogit { ga } => {
                let full = |a: usize, b: usize, m: usize| {
                    if a == b {
                        0.0
                    } else {
                        ga[[a, m, slot(a, b)]]
                    }
                };
                let mut out = Array3::zeros(ga.dim());
                for a in 0..k {
                    for b in (0..k).filter(|&b| b != a) {
                        for m in 0..ga.dim().1 {
                            out[[a, m, slot(a, b)]] = full(perm[a], perm[b], m);
                        }
                    }
                }
                LatentTransitions::Multilogit { ga: out }
            }
            LatentTransitions::Difflogit { intercepts, slopes } => {
                let full = |a: usize, b: usize| if a == b { 0.0 } else { intercepts[[a, slot(a, b)]] };
                let mut ints = Array2::zeros(intercepts.dim());
                for a in 0..k {
                    for b in (0..k).filter(|&b| b != a) {
                        ints[[a, slot(a, b)]] = full(perm[a], perm[b]);
                    }
                }
                let sl = Array2::from_shape_fn(slopes.dim(), |(u, m)| {
                    slopes[[perm[u], m]] - slopes[[perm[0], m]]
                });
                LatentTransitions::Difflogit {
                    intercepts: ints,
                    slopes: sl,
                }
            }
        };
        Self {
            be,
            ga,
            psi: psi_permute(&self.psi, perm),
            categories: self.categories.clone(),
        }
    }

    fn state_profile(&self) -> Array2<f64> {
        psi_profile(self.psi.view())
    }

    fn simulate_config(
        &self,
        x1: ArrayView1<f64>,
        x2: ArrayView2<f64>,
        n_occasions: usize,
        rng: &mut RngStream,
    ) -> Result<(Array2<usize>, Vec<usize>)> {
        let mut states = Vec::with_capacity(n_occasions);
        let mut y = Array2::zeros((n_occasions, self.categories.n_vars()));
        for t in 0..n_occasions {
            let u = if t == 0 {
                rng.categorical(self.initial_probs(x1).view())
            } else {
                let p = self.transition_matrix(x2.row(t - 1));
                rng.categorical(p.row(states[t - 1]))
            };
            states.push(u);
            let draw = draw_responses(self.psi.view(), &self.categories, u, rng);
            y.row_mut(t).assign(&Array1::from(draw));
        }
        Ok((y, states))
    }

    fn refit(&self, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<Self>> {
        fit_cov_latent_from(ds, cfg, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::array;

    fn toy() -> Dataset {
        let cats = CategorySpec::new(vec![2, 3]).unwrap();
        Dataset::from_arrays(
            array![
                [[0usize, 0], [0, 1], [1, 2]],
                [[1, 2], [1, 2], [1, 1]],
                [[0, 0], [0, 0], [0, 0]],
                [[0, 1], [1, 1], [1, 2]],
                [[1, 0], [0, 0], [0, 1]]
            ],
            vec![5, 3, 8, 2, 4],
            Some(array![[0.5, 1.0], [-1.0, 0.0], [0.2, 1.0], [1.5, 0.0], [0.0, 1.0]]),
            Some(array![
                [[0.1], [0.4]],
                [[-0.3], [1.0]],
                [[0.0], [0.0]],
                [[1.2], [-0.5]],
                [[0.7], [0.2]]
            ]),
            cats,
        )
        .unwrap()
    }

    #[test]
    fn parameter_count() {
        let ds = toy();
        let m = CovLatentParams::deterministic(&ds, 3, LatentParam::Multilogit);
        // (k-1)(1+p1) + k(k-1)(1+p2) + k sum(c-1) = 6 + 12 + 9
        assert_eq!(m.n_params(), 27);
        let d = CovLatentParams::deterministic(&ds, 3, LatentParam::Difflogit);
        // 6 + k(k-1) + (k-1) p2 + 9 = 6 + 6 + 2 + 9
        assert_eq!(d.n_params(), 23);
    }

    #[test]
    fn score_matches_finite_difference() {
        let ds = toy();
        for param in [LatentParam::Multilogit, LatentParam::Difflogit] {
            let mut p = CovLatentParams::random(&ds, 2, param, &mut RngStream::new(5));
            let mut theta = p.pack();
            for (i, v) in theta.iter_mut().enumerate() {
                *v += 0.05 * ((i % 5) as f64 - 2.0);
            }
            p = p.unpack(&theta).unwrap();
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
    }

    #[test]
    fn em_is_monotone() {
        let ds = toy();
        for param in [LatentParam::Multilogit, LatentParam::Difflogit] {
            let cfg = FitConfig {
                k: 2,
                param,
                ..FitConfig::default()
            };
            let fit = fit_cov_latent(&ds, &cfg).unwrap();
            for w in fit.trace.windows(2) {
                assert!(w[1] - w[0] >= -1e-8 * w[1].abs(), "{w:?}");
            }
        }
    }

    #[test]
    fn permutation_preserves_likelihood() {
        let ds = toy();
        for param in [LatentParam::Multilogit, LatentParam::Difflogit] {
            let mut p = CovLatentParams::random(&ds, 3, param, &mut RngStream::new(8));
            let theta: Vec<f64> = p.pack().iter().enumerate().map(|(i, v)| v + 0.1 * (i % 3) as f64).collect();
            p = p.unpack(&theta).unwrap();
            let q = p.permute_states(&[1, 2, 0]);
            assert_abs_diff_eq!(p.loglik(&ds).unwrap(), q.loglik(&ds).unwrap(), epsilon = 1e-10);
        }
    }
}
