//! Mixed latent Markov model: a time-fixed latent class selects the initial
//! and transition probabilities of the latent chain; response probabilities
//! depend on the chain state only.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::basic::{check_psi, fit_basic, BasicParams};
use crate::data::{CategorySpec, Dataset};
use crate::error::{LmError, Result};
use crate::fit::{
    accumulate, finish, fit_multistart, Diagnostics, EmModel, FitConfig, FitResult, StartRule,
    TransitionLayout,
};
use crate::model::{
    add_response_counts, draw_responses, normalize, permute_matrix, psi_from_counts, psi_labels,
    psi_natural, psi_pack, psi_param_count, psi_permute, psi_profile, psi_score, psi_unpack,
    random_psi, random_transitions, rows_from_counts, rows_labels, rows_pack, rows_score,
    rows_unpack, ChainParts, LatentModel, OwnedTransitions, Variant,
};
use crate::prob::{
    is_row_stochastic, is_simplex, log_sum_exp, multinomial_logit, random_simplex,
    simplex_logits, RngStream,
};
use crate::recursions::{emission_table, forward_backward, forward_loglik, HmmInputs, TransitionSeq};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedParams {
    /// Class masses, length k1.
    pub la: Array1<f64>,
    /// `k2 x k1`: column `u` holds the initial probabilities in class `u`.
    pub piv: Array2<f64>,
    /// `k2 x k2 x k1`: slice `[.., .., u]` is the transition matrix of class `u`.
    pub pi: Array3<f64>,
    pub psi: Array3<f64>,
    pub categories: CategorySpec,
}

pub(crate) struct MixedStats {
    c: Array1<f64>,
    b1: Array2<f64>,
    trans: Array3<f64>,
    a: Array3<f64>,
}

impl MixedParams {
    pub fn n_classes(&self) -> usize {
        self.la.len()
    }

    pub fn n_states(&self) -> usize {
        self.piv.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let (k1, k2) = (self.n_classes(), self.n_states());
        if k1 == 0 || k2 == 0 || !is_simplex(self.la.view(), 1e-8) {
            return Err(LmError::arg("la must be a probability vector"));
        }
        if self.piv.ncols() != k1 || self.pi.dim() != (k2, k2, k1) {
            return Err(LmError::arg("Piv must be k2 x k1 and PI k2 x k2 x k1"));
        }
        for u in 0..k1 {
            if !is_simplex(self.piv.column(u), 1e-8)
                || !is_row_stochastic(self.pi.slice(s![.., .., u]), 1e-8)
            {
                return Err(LmError::arg(format!(
                    "class {} has invalid initial or transition probabilities",
                    u + 1
                )));
            }
        }
        check_psi(&self.psi, &self.categories, k2)
    }

    fn class_inputs<'a>(&'a self, u: usize, emit: ArrayView2<'a, f64>) -> HmmInputs<'a> {
        HmmInputs {
            init: self.piv.column(u),
            trans: TransitionSeq::Homogeneous(self.pi.slice(s![.., .., u])),
            emit,
        }
    }

    /// `log la_u + log p(y | U = u)` for every class.
    fn class_terms(&self, emit: ArrayView2<f64>) -> Vec<f64> {
        (0..self.n_classes())
            .map(|u| {
                if self.la[u] > 0.0 {
                    self.la[u].ln() + forward_loglik(&self.class_inputs(u, emit))
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect()
    }

    /// `n_config x k1` posterior class probabilities.
    pub fn class_posteriors(&self, ds: &Dataset) -> Result<Array2<f64>> {
        let k1 = self.n_classes();
        let mut out = Array2::zeros((ds.n_configs(), k1));
        for i in 0..ds.n_configs() {
            let emit = emission_table(self.psi.view(), ds.config_responses(i));
            let terms = self.class_terms(emit.view());
            let total = log_sum_exp(&terms);
            if total == f64::NEG_INFINITY {
                return Err(LmError::ImpossibleObservation { occasion: 1 });
            }
            for u in 0..k1 {
                out[[i, u]] = (terms[u] - total).exp();
            }
        }
        Ok(out)
    }

    /// Relabel classes: new class `u` is old class `perm[u]`.
    pub fn permute_classes(&self, perm: &[usize]) -> Self {
        Self {
            la: self.la.select(Axis(0), perm),
            piv: self.piv.select(Axis(1), perm),
            pi: self.pi.select(Axis(2), perm),
            psi: self.psi.clone(),
            categories: self.categories.clone(),
        }
    }

    pub(crate) fn deterministic(ds: &Dataset, cfg: &FitConfig) -> Result<Self> {
        let (k1, k2) = (cfg.k1, cfg.k);
        let base = if ds.n_occasions() >= 2 {
            let bcfg = FitConfig {
                k: k2,
                k1: 1,
                start: StartRule::Deterministic,
                transitions: TransitionLayout::Homogeneous,
                ..cfg.clone()
            };
            fit_basic(ds, &bcfg)?.params
        } else {
            let mut b = BasicParams::deterministic(ds, k2, TransitionLayout::Heterogeneous);
            b.pi = Array3::from_shape_fn((1, k2, k2), |(_, a, c)| if a == c { 1.0 } else { 0.0 });
            b.layout = TransitionLayout::Homogeneous;
            b
        };
        let tau = |u: usize| if k1 > 1 { -1.0 + 2.0 * u as f64 / (k1 - 1) as f64 } else { 0.0 };
        let z = |v: usize| if k2 > 1 { 2.0 * v as f64 / (k2 - 1) as f64 - 1.0 } else { 0.0 };
        let base_pi = base.pi.index_axis(Axis(0), 0);
        let mut piv = Array2::zeros((k2, k1));
        let mut pi = Array3::zeros((k2, k2, k1));
        for u in 0..k1 {
            let col: Array1<f64> = (0..k2).map(|v| base.piv[v] * (tau(u) * z(v)).exp()).collect();
            piv.column_mut(u).assign(&normalize(col.view()).0);
            let tilted = Array2::from_shape_fn((k2, k2), |(a, b)| {
                base_pi[[a, b]] * if a == b { tau(u).exp() } else { 1.0 }
            });
            pi.slice_mut(s![.., .., u]).assign(&rows_from_counts(tilted.view()).0);
        }
        Ok(Self {
            la: Array1::from_elem(k1, 1.0 / k1 as f64),
            piv,
            pi,
            psi: base.psi,
            categories: ds.categories.clone(),
        })
    }

    pub(crate) fn random(ds: &Dataset, k1: usize, k2: usize, rng: &mut RngStream) -> Self {
        let la = random_simplex(k1, rng);
        let mut piv = Array2::zeros((k2, k1));
        let mut pi = Array3::zeros((k2, k2, k1));
        for u in 0..k1 {
            piv.column_mut(u).assign(&random_simplex(k2, rng));
            pi.slice_mut(s![.., .., u]).assign(&random_transitions(k2, rng));
        }
        Self {
            la,
            piv,
            pi,
            psi: random_psi(&ds.categories, k2, rng),
            categories: ds.categories.clone(),
        }
    }
}

impl EmModel for MixedParams {
    type Stats = MixedStats;

    fn score_from_stats(&self, _ds: &Dataset, st: &Self::Stats) -> Result<Vec<f64>> {
        let (k1, k2) = (self.n_classes(), self.n_states());
        let n = st.c.sum();
        let mut out: Vec<f64> = (1..k1).map(|u| st.c[u] - n * self.la[u]).collect();
        for u in 0..k1 {
            let total = st.b1.column(u).sum();
            out.extend((1..k2).map(|v| st.b1[[v, u]] - total * self.piv[[v, u]]));
        }
        for u in 0..k1 {
            rows_score(st.trans.slice(s![.., .., u]), self.pi.slice(s![.., .., u]), &mut out);
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

    fn e_step(&self, ds: &Dataset) -> Result<(f64, MixedStats)> {
        let (k1, k2) = (self.n_classes(), self.n_states());
        let psi_dim = self.psi.dim();
        let acc = accumulate(
            ds.n_configs(),
            || {
                (
                    0.0,
                    MixedStats {
                        c: Array1::zeros(k1),
                        b1: Array2::zeros((k2, k1)),
                        trans: Array3::zeros((k2, k2, k1)),
                        a: Array3::zeros(psi_dim),
                    },
                )
            },
            |(ll, st), i| {
                let y = ds.config_responses(i);
                let emit = emission_table(self.psi.view(), y);
                let posts: Vec<_> = (0..k1)
                    .map(|u| {
                        if self.la[u] > 0.0 {
                            forward_backward(&self.class_inputs(u, emit.view())).ok()
                        } else {
                            None
                        }
                    })
                    .collect();
                let terms: Vec<f64> = posts
                    .iter()
                    .enumerate()
                    .map(|(u, p)| p.as_ref().map_or(f64::NEG_INFINITY, |p| self.la[u].ln() + p.loglik))
                    .collect();
                let total = log_sum_exp(&terms);
                if total == f64::NEG_INFINITY {
                    return Err(LmError::ImpossibleObservation { occasion: 1 });
                }
                let w = ds.weight(i);
                *ll += w * total;
                for (u, post) in posts.iter().enumerate() {
                    let Some(post) = post else { continue };
                    let q = w * (terms[u] - total).exp();
                    st.c[u] += q;
                    st.b1.column_mut(u).scaled_add(q, &post.gamma.row(0));
                    st.trans
                        .slice_mut(s![.., .., u])
                        .scaled_add(q, &post.xi.sum_axis(Axis(0)));
                    add_response_counts(&mut st.a, y, post.gamma.view(), q);
                }
                Ok(())
            },
            |(tl, ts), (pl, ps)| {
                *tl += pl;
                ts.c += &ps.c;
                ts.b1 += &ps.b1;
                ts.trans += &ps.trans;
                ts.a += &ps.a;
            },
        )?;
        Ok(acc)
    }

    fn m_step(
        &self,
        _ds: &Dataset,
        stats: &MixedStats,
        cfg: &FitConfig,
        diag: &mut Diagnostics,
    ) -> Result<Self> {
        let k1 = self.n_classes();
        let la = normalize(stats.c.view()).0;
        let mut piv = self.piv.clone();
        let mut pi = self.pi.clone();
        for u in 0..k1 {
            if !(stats.c[u] > 0.0) {
                if !diag.empty_classes.contains(&u) {
                    diag.empty_classes.push(u);
                }
                continue;
            }
            let (col, reset) = normalize(stats.b1.column(u));
            diag.zero_count_resets += reset as usize;
            piv.column_mut(u).assign(&col);
            let (p, resets) = rows_from_counts(stats.trans.slice(s![.., .., u]));
            diag.zero_count_resets += resets;
            pi.slice_mut(s![.., .., u]).assign(&p);
        }
        let psi = if cfg.fix_psi {
            self.psi.clone()
        } else {
            let (psi, resets) = psi_from_counts(stats.a.view(), &self.categories);
            diag.zero_count_resets += resets;
            psi
        };
        Ok(Self {
            la,
            piv,
            pi,
            psi,
            categories: self.categories.clone(),
        })
    }
}

/// Fit the mixed model with `cfg.k1` classes and `cfg.k` states.
pub fn fit_mixed(ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<MixedParams>> {
    fit_impl(ds, cfg, None)
}

pub fn fit_mixed_from(
    ds: &Dataset,
    cfg: &FitConfig,
    start: &MixedParams,
) -> Result<FitResult<MixedParams>> {
    start.validate()?;
    start.check_dataset(ds)?;
    let cfg = FitConfig {
        start: StartRule::Input,
        k: start.n_states(),
        k1: start.n_classes(),
        ..cfg.clone()
    };
    fit_impl(ds, &cfg, Some(start))
}

fn fit_impl(ds: &Dataset, cfg: &FitConfig, start: Option<&MixedParams>) -> Result<FitResult<MixedParams>> {
    if ds.p1() > 0 || ds.p2() > 0 {
        return Err(LmError::data("the mixed model does not use covariates; drop them first"));
    }
    let (outcome, index) = fit_multistart(
        ds,
        cfg,
        start,
        || MixedParams::deterministic(ds, cfg),
        |rng| Ok(MixedParams::random(ds, cfg.k1, cfg.k, rng)),
    )?;
    let np = outcome.params.n_params();
    Ok(finish(outcome, index, np, ds, cfg))
}

impl LatentModel for MixedParams {
    const VARIANT: Variant = Variant::Mixed;

    fn n_states(&self) -> usize {
        self.piv.nrows()
    }

    fn n_params(&self) -> usize {
        let (k1, k2) = (self.n_classes(), self.n_states());
        (k1 - 1) + k1 * (k2 - 1) + k1 * k2 * (k2 - 1) + psi_param_count(&self.categories, k2)
    }

    fn check_dataset(&self, ds: &Dataset) -> Result<()> {
        if ds.categories != self.categories {
            return Err(LmError::data("response categories differ from the fitted model"));
        }
        Ok(())
    }

    fn chain(&self, ds: &Dataset, i: usize) -> Result<ChainParts> {
        let emit = emission_table(self.psi.view(), ds.config_responses(i));
        let terms = self.class_terms(emit.view());
        let mut best = 0;
        for u in 1..terms.len() {
            if terms[u] > terms[best] {
                best = u;
            }
        }
        Ok(ChainParts {
            init: self.piv.column(best).to_owned(),
            trans: OwnedTransitions::Homogeneous(self.pi.slice(s![.., .., best]).to_owned()),
            emit,
        })
    }

    fn loglik(&self, ds: &Dataset) -> Result<f64> {
        self.check_dataset(ds)?;
        accumulate(
            ds.n_configs(),
            || 0.0,
            |acc, i| {
                let emit = emission_table(self.psi.view(), ds.config_responses(i));
                *acc += ds.weight(i) * log_sum_exp(&self.class_terms(emit.view()));
                Ok(())
            },
            |a, b| *a += b,
        )
    }

    fn pack(&self) -> Vec<f64> {
        let k1 = self.n_classes();
        let mut out = simplex_logits(self.la.view(), 0).0;
        for u in 0..k1 {
            out.extend(simplex_logits(self.piv.column(u), 0).0);
        }
        for u in 0..k1 {
            rows_pack(self.pi.slice(s![.., .., u]), &mut out);
        }
        psi_pack(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn unpack(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.n_params() {
            return Err(LmError::arg("parameter vector has the wrong length"));
        }
        let (k1, k2) = (self.n_classes(), self.n_states());
        let la = multinomial_logit(&theta[..k1 - 1], 0);
        let mut pos = k1 - 1;
        let mut piv = Array2::zeros((k2, k1));
        for u in 0..k1 {
            piv.column_mut(u).assign(&multinomial_logit(&theta[pos..pos + k2 - 1], 0));
            pos += k2 - 1;
        }
        let mut pi = Array3::zeros((k2, k2, k1));
        for u in 0..k1 {
            let n = k2 * (k2 - 1);
            pi.slice_mut(s![.., .., u]).assign(&rows_unpack(&theta[pos..pos + n], k2));
            pos += n;
        }
        Ok(Self {
            la,
            piv,
            pi,
            psi: psi_unpack(&theta[pos..], &self.categories, k2),
            categories: self.categories.clone(),
        })
    }

    fn theta_labels(&self) -> Vec<String> {
        let (k1, k2) = (self.n_classes(), self.n_states());
        let mut out: Vec<String> = (2..=k1).map(|u| format!("logit la[{u}]")).collect();
        for u in 1..=k1 {
            out.extend((2..=k2).map(|v| format!("logit piv[{v}|class {u}]")));
        }
        for u in 1..=k1 {
            rows_labels(&format!("pi[class {u}]"), k2, &mut out);
        }
        psi_labels(&self.categories, k2, &mut out);
        out
    }

    fn score(&self, ds: &Dataset) -> Result<Vec<f64>> {
        self.check_dataset(ds)?;
        let (_, st) = self.e_step(ds)?;
        self.score_from_stats(ds, &st)
    }

    fn natural(&self) -> Vec<(String, f64)> {
        let (k1, k2) = (self.n_classes(), self.n_states());
        let mut out: Vec<(String, f64)> =
            (0..k1).map(|u| (format!("la[{}]", u + 1), self.la[u])).collect();
        for u in 0..k1 {
            for v in 0..k2 {
                out.push((format!("piv[{}|class {}]", v + 1, u + 1), self.piv[[v, u]]));
            }
        }
        for u in 0..k1 {
            for a in 0..k2 {
                for b in 0..k2 {
                    out.push((
                        format!("pi[{},{}|class {}]", a + 1, b + 1, u + 1),
                        self.pi[[a, b, u]],
                    ));
                }
            }
        }
        psi_natural(self.psi.view(), &self.categories, &mut out);
        out
    }

    fn permute_states(&self, perm: &[usize]) -> Self {
        let k1 = self.n_classes();
        let mut pi = self.pi.clone();
        for u in 0..k1 {
            let p = permute_matrix(self.pi.slice(s![.., .., u]), perm);
            pi.slice_mut(s![.., .., u]).assign(&p);
        }
        Self {
            la: self.la.clone(),
            piv: self.piv.select(Axis(0), perm),
            pi,
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
        let class = rng.categorical(self.la.view());
        let mut states: Vec<usize> = Vec::with_capacity(n_occasions);
        let mut y = Array2::zeros((n_occasions, self.categories.n_vars()));
        for t in 0..n_occasions {
            let v = if t == 0 {
                rng.categorical(self.piv.column(class))
            } else {
                rng.categorical(self.pi.slice(s![states[t - 1], .., class]))
            };
            states.push(v);
            let draw = draw_responses(self.psi.view(), &self.categories, v, rng);
            y.row_mut(t).assign(&Array1::from(draw));
        }
        Ok((y, states))
    }

    fn refit(&self, ds: &Dataset, cfg: &FitConfig) -> Result<FitResult<Self>> {
        fit_mixed_from(ds, cfg, self)
    }
}
