//! Latent Markov model without covariates.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::data::{CategorySpec, Dataset};
use crate::error::{LmError, Result};
use crate::fit::{
    finish, fit_multistart, Diagnostics, EmModel, FitConfig, FitResult, StartRule,
    TransitionLayout,
};
use crate::model::{
    add_response_counts, deterministic_psi, draw_responses, normalize, permute_matrix,
    psi_from_counts, psi_labels, psi_natural, psi_pack, psi_param_count, psi_permute,
    psi_profile, psi_score, psi_unpack, random_psi, random_transitions, rows_from_counts,
    rows_labels, rows_pack, rows_score, rows_unpack, sticky_transitions, ChainParts,
    LatentModel, OwnedTransitions, Variant,
};
use crate::prob::{is_row_stochastic, is_simplex, multinomial_logit, random_simplex, simplex_logits, RngStream};
use crate::recursions::{emission_table, forward_backward, HmmInputs, TransitionSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BasicParams {
    /// Initial probabilities, length k.
    pub piv: Array1<f64>,
    /// Transition matrices: `(T-1) x k x k` when heterogeneous, `1 x k x k`
    /// when homogeneous.
    pub pi: Array3<f64>,
    pub layout: TransitionLayout,
    /// Conditional response probabilities, `r x max(c) x k`.
    pub psi: Array3<f64>,
    pub categories: CategorySpec,
}

pub(crate) struct BasicStats {
    pub loglik: f64,
    pub b1: Array1<f64>,
    pub trans: Array3<f64>,
    pub a: Array3<f64>,
}

impl BasicParams {
    pub fn new(
        piv: Array1<f64>,
        pi: Array3<f64>,
        layout: TransitionLayout,
        psi: Array3<f64>,
        categories: CategorySpec,
    ) -> Result<Self> {
        let p = Self {
            piv,
            pi,
            layout,
            psi,
            categories,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k = self.piv.len();
        if k == 0 || !is_simplex(self.piv.view(), 1e-8) {
            return Err(LmError::arg("piv must be a probability vector"));
        }
        let (_, a, b) = self.pi.dim();
        if a != k || b != k {
            return Err(LmError::arg("transition matrices must be k x k"));
        }
        if self.layout == TransitionLayout::Homogeneous && self.pi.dim().0 != 1 {
            return Err(LmError::arg("homogeneous transitions need exactly one matrix"));
        }
        for slice in self.pi.outer_iter() {
            if !is_row_stochastic(slice, 1e-8) {
                return Err(LmError::arg("transition rows must be probability vectors"));
            }
        }
        check_psi(&self.psi, &self.categories, k)
    }

    pub fn n_states(&self) -> usize {
        self.piv.len()
    }

    pub(crate) fn trans_seq(&self) -> TransitionSeq<'_> {
        match self.layout {
            TransitionLayout::Homogeneous => TransitionSeq::Homogeneous(self.pi.index_axis(Axis(0), 0)),
            TransitionLayout::Heterogeneous => TransitionSeq::PerOccasion(self.pi.view()),
        }
    }

    /// Transition matrix into 0-based occasion `t >= 1`.
    pub fn transition(&self, t: usize) -> ArrayView2<'_, f64> {
        self.trans_seq().at(t)
    }

    pub(crate) fn deterministic(ds: &Dataset, k: usize, layout: TransitionLayout) -> Self {
        let slices = n_slices(layout, ds.n_occasions());
        let sticky = sticky_transitions(k);
        Self {
            piv: Array1::from_elem(k, 1.0 / k as f64),
            pi: Array3::from_shape_fn((slices, k, k), |(_, a, b)| sticky[[a, b]]),
            layout,
            psi: deterministic_psi(ds, k),
            categories: ds.categories.clone(),
        }
    }

    pub(crate) fn random(ds: &Dataset, k: usize, layout: TransitionLayout, rng: &mut RngStream) -> Self {
        let slices = n_slices(layout, ds.n_occasions());
        let piv = random_simplex(k, rng);
        let mut pi = Array3::zeros((slices, k, k));
        for mut slice in pi.outer_iter_mut() {
            slice.assign(&random_transitions(k, rng));
        }
        Self {
            piv,
            pi,
            layout,
            psi: random_psi(&ds.categories, k, rng),
            categories: ds.categories.clone(),
        }
    }
}

pub(crate) fn check_psi(psi: &Array3<f64>, cats: &CategorySpec, k: usize) -> Result<()> {
    if psi.dim() != (cats.n_vars(), cats.max_categories(), k) {
        return Err(LmError::arg(format!(
            "Psi must have shape {} x {} x {k}",
            cats.n_vars(),
            cats.max_categories()
        )));
    }
    for (j, &c) in cats.counts().iter().enumerate() {
        for u in 0..k {
            if !is_simplex(psi.slice(s![j, 0..c, u]), 1e-8) {
                return Err(LmError::arg(format!(
                    "Psi for variable {} and state {} is not a probability vector",
                    j + 1,
                    u + 1
                )));
            }
        }
    }
    Ok(())
}

fn n_slices(layout: TransitionLayout, t_len: usize) -> usize {
    match layout {
        TransitionLayout::Homogeneous => 1,
        TransitionLayout::Heterogeneous => t_len.saturating_sub(1),
    }
}

impl EmModel for BasicParams {
    type Stats = BasicStats;

    fn score_from_stats(&self, _ds: &Dataset, st: &Self::Stats) -> Result<Vec<f64>> {
        let n1 = st.b1.sum();
        let mut out: Vec<f64> = (1..self.n_states()).map(|u| st.b1[u] - n1 * self.piv[u]).collect();
        match self.layout {
            TransitionLayout::Homogeneous => {
                let counts = st.trans.sum_axis(Axis(0));
                rows_score(counts.view(), self.pi.index_axis(Axis(0), 0), &mut out);
            }
            TransitionLayout::Heterogeneous => {
                for (counts, p) in st.trans.outer_iter().zip(self.pi.outer_iter()) {
                    rows_score(counts, p, &mut out);
                }
            }
        }
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

    fn e_step(&self, ds: &Dataset) -> Result<(f64, BasicStats)> {
        let k = self.n_states();
        let t_len = ds.n_occasions();
        let psi_dim = self.psi.dim();
        let make = || BasicStats {
            loglik: 0.0,
            b1: Array1::zeros(k),
            trans: Array3::zeros((t_len - 1, k, k)),
            a: Array3::zeros(psi_dim),
        };
        let stats = crate::fit::accumulate(
            ds.n_configs(),
            make,
            |s, i| {
                let y = ds.config_responses(i);
                let emit = emission_table(self.psi.view(), y);
                let h = HmmInputs {
                    init: self.piv.view(),
                    trans: self.trans_seq(),
                    emit: emit.view(),
                };
                let post = forward_backward(&h)?;
                let w = ds.weight(i);
                s.loglik += w * post.loglik;
                s.b1.scaled_add(w, &post.gamma.row(0));
                s.trans.scaled_add(w, &post.xi);
                add_response_counts(&mut s.a, y, post.gamma.view(), w);
                Ok(())
            },
            |t, p| {
                t.loglik += p.loglik;
                t.b1 += &p.b1;
                t.trans += &p.trans;
                t.a += &p.a;
            },
        )?;
        Ok((stats.loglik, stats))
    }

    fn m_step(
        &self,
        _ds: &Dataset,
        stats: &BasicStats,
        cfg: &FitConfig,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        let (piv, reset) = normalize(stats.b1.view());
        diag.zero_count_resets += reset as usize;
        let mut pi = self.pi.clone();
        match self.layout {
            TransitionLayout::Homogeneous => {
                let (p, resets) = rows_from_counts(stats.trans.sum_axis(Axis(0)).view());
                pi.index_axis_mut(Axis(0), 0).assign(&p);
                diag.zero_count_resets += resets;
            }
            TransitionLayout::Heterogeneous => {
                for (mut slice, counts) in pi.outer_iter_mut().zip(stats.trans.outer_iter()) {
                    let (p, resets) = rows_from_counts(counts);
                    slice.assign(&p);
                    diag.zero_count_resets += resets;
                }
            }
        }
        let psi = if cfg.fix_psi {
            self.psi.clone()
        } else {
            let (psi, resets) = psi_from_counts(stats.a.view(), &self.categories);
            diag.zero_count_resets += resets;
            psi
        };
        Ok(Self {
            piv,
            pi,
            layout: self.layout,
            psi,
            categories: self.categories.clone(),
        })
    }
}

fn check_shape(ds: &Dataset, cfg: &FitConfig) -> Result<()> {
    if cfg.k1 != 1 {
        return Err(LmError::arg("the basic model has no latent classes"));
    }
    if ds.n_occasions() < 2 && cfg.transitions == TransitionLayout::Homogeneous {
        return Err(LmError::arg("homogeneous transitions need at least two occasions"));
    }
    Ok(())
}

/// Fit the basic model from the start rule in `cfg`.
pub fn fit_basic(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<BasicParams>> {
    fit_basic_impl(ds, cfg, None)
}

/// Fit the basic model from explicit starting values.
pub fn fit_basic_from(
    ds: &Dataset,
    cfg: &FitConfig,
    start: &BasicParams,
) -> Result<FitResult<BasicParams>> {
    let cfg = FitConfig {
        start: StartRule::Input,
        k: start.n_states(),
        transitions: start.layout,
        ..cfg.clone()
    };
    start.validate()?;
    start.check_dataset(ds)?;
    fit_basic_impl(ds, &cfg, Some(start))
}

fn fit_basic_impl(
    ds: &Dataset,
    cfg: &FitConfig,
    start: Option<&BasicParams>,
) -> Result<FitResult<BasicParams>> {
    check_shape(ds, cfg)?;
    let (outcome, index) = fit_multistart(
        ds,
        cfg,
        start,
        || Ok(BasicParams::deterministic(ds, cfg.k, cfg.transitions)),
        |rng| Ok(BasicParams::random(ds, cfg.k, cfg.transitions, rng)),
    )?;
    let np = outcome.params.n_params();
    Ok(finish(outcome, index, np, ds, cfg))
}

impl LatentModel for BasicParams {
    const VARIANT: Variant = Variant::Basic;

    fn n_states(&self) -> usize {
        self.piv.len()
    }

    fn n_params(&self) -> usize {
        let k = self.n_states();
        (k - 1) + self.pi.dim().0 * k * (k - 1) + psi_param_count(&self.categories, k)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.categories != self.categories {
            return Err(LmError::data("response categories differ from the fitted model"));
        }
        if self.layout == TransitionLayout::Heterogeneous
            && self.pi.dim().0 != ds.n_occasions().saturating_sub(1)
        {
            return Err(LmError::data(format!(
                "model has {} transition matrices but the data have {} occasions",
                self.pi.dim().0,
                ds.n_occasions()
            )));
        }
        Ok(())
    }

    fn chain(&self, ds: &Dataset, i: usize) -> Result<ChainParts> {
        Ok(ChainParts {
            init: self.piv.clone(),
            trans: match self.layout {
                TransitionLayout::Homogeneous => {
                    OwnedTransitions::Homogeneous(self.pi.index_axis(Axis(0), 0).to_owned())
                }
                TransitionLayout::Heterogeneous => OwnedTransitions::PerOccasion(self.pi.clone()),
            },
            emit: emission_table(self.psi.view(), ds.config_responses(i)),
        })
    }

    fn pack(&self) -> Vec<f64> {
        let mut out = simplex_logits(self.piv.view(), 0).0;
        for slice in self.pi.outer_iter() {
            rows_pack(slice, &mut out);
        }
        psi_pack(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn unpack(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(LmError::arg("parameter vector has the wrong length"));
        }
        let k = self.n_states();
        let piv = multinomial_logit(&theta[..k - 1], 0);
        let mut pos = k - 1;
        let mut pi = Array3::zeros(self.pi.dim());
        for mut slice in pi.outer_iter_mut() {
            slice.assign(&rows_unpack(&theta[pos..pos + k * (k - 1)], k));
            pos += k * (k - 1);
        }
        let psi = psi_unpack(&theta[pos..], &self.categories, k);
        Ok(Self {
            piv,
            pi,
            layout: self.layout,
            psi,
            categories: self.categories.clone(),
        })
    }

    fn theta_labels(&self) -> Vec<String> {
        let k = self.n_states();
        let mut out: Vec<String> = (2..=k).map(|u| format!("logit piv[{u}]")).collect();
        for t in 0..self.pi.dim().0 {
            let name = match self.layout {
                TransitionLayout::Homogeneous => "pi".to_string(),
                TransitionLayout::Heterogeneous => format!("pi[t={}]", t + 2),
            };
            rows_labels(&name, k, &mut out);
        }
        psi_labels(&self.categories, k, &mut out);
        out
    }

    fn score(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(ds)?;
        let (_, st) = self.e_step(ds)?;
        self.score_from_stats(ds, &st)
    }

    fn natural(&self) -> Vec<(String, f64)> {
        let k = self.n_states();
        let mut out: Vec<(String, f64)> =
            (0..k).map(|u| (format!("piv[{}]", u + 1), self.piv[u])).collect();
        for (t, slice) in self.pi.outer_iter().enumerate() {
            for a in 0..k {
                for b in 0..k {
                    let name = match self.layout {
                        TransitionLayout::Homogeneous => format!("pi[{},{}]", a + 1, b + 1),
                        TransitionLayout::Heterogeneous => {
                            format!("pi[t={},{},{}]", t + 2, a + 1, b + 1)
                        }
                    };
                    out.push((name, slice[[a, b]]));
                }
            }
        }
        psi_natural(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn permute_states(&self, perm: &[usize]) -> Self {
        let mut pi = self.pi.clone();
        Zip::from(pi.outer_iter_mut())
            .and(self.pi.outer_iter())
            .for_each(|mut dst, src| dst.assign(&permute_matrix(src, perm)));
        Self {
            piv: self.piv.select(Axis(0), perm),
            pi,
            layout: self.layout,
            psi: psi_permute(&self.psi, perm),
            categories: self.categories.clone(),
        }
    }

    fn state_profile(&self) -> Array2<f64> {
        psi_profile(self.psi.view())
    }

    fn simulate_config(
        &self,
        _x1: ArrayView1<f64>,
        _x2: ArrayView2<f64>,
        n_occasions: usize,
        rng: &mut RngStream,
    ) -> Result<(Array2<usize>, Vec<usize>)> {
        let mut states = Vec::with_capacity(n_occasions);
        let mut y = Array2::zeros((n_occasions, self.categories.n_vars()));
        for t in 0..n_occasions {
            let u = if t == 0 {
                rng.categorical(self.piv.view())
            } else {
                rng.categorical(self.transition(t).row(states[t - 1]))
            };
            states.push(u);
            let draw = draw_responses(self.psi.view(), &self.categories, u, rng);
            y.row_mut(t).assign(&Array1::from(draw));
        }
        Ok((y, states))
    }

    fn refit(&self, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<Self>> {
        fit_basic_from(ds, cfg, self)
    }
}
