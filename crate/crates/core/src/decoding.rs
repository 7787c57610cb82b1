//! Local (per-occasion posterior mode) and global (Viterbi) decoding.
//!
//! All state labels returned here are 1-based. Ties go to the smaller state.

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{LmError, Result};
use crate::model::LatentModel;
use crate::recursions::{forward_backward, HmmInputs};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingResult {
    /// `n_config x T` locally decoded states.
    pub ul: Array2<usize>,
    /// `n_config x T` globally decoded states.
    pub ug: Array2<usize>,
}

fn argmax<I: IntoIterator<Item = f64>>(values: I) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.into_iter().enumerate() {
        if i == 0 || v > best.1 {
            best = (i, v);
        }
    }
    best
}

/// Row-wise argmax of a `T x k` posterior matrix.
pub fn local_decode(gamma: ArrayView2<f64>) -> Vec<usize> {
    gamma.rows().into_iter().map(|r| argmax(r.iter().copied()).0 + 1).collect()
}

/// Most probable latent path by the max-product recursion in log space.
pub fn global_decode(h: &HmmInputs) -> Result<Vec<usize>> {
    let t_len = h.n_occasions();
    let k = h.n_states();
    let mut delta = Array2::from_elem((t_len, k), f64::NEG_INFINITY);
    let mut back = Array2::<usize>::zeros((t_len, k));
    for u in 0..k {
        delta[[0, u]] = h.init[u].ln() + h.emit[[0, u]].ln();
    }
    for t in 1..t_len {
        let p = h.trans.at(t);
        for u in 0..k {
            let (arg, best) = argmax((0..k).map(|prev| delta[[t - 1, prev]] + p[[prev, u]].ln()));
            back[[t, u]] = arg;
            delta[[t, u]] = best + h.emit[[t, u]].ln();
        }
    }
    let (mut state, best) = argmax(delta.row(t_len - 1).iter().copied());
    if best == f64::NEG_INFINITY {
        let occasion = (0..t_len)
            .find(|&t| delta.row(t).iter().all(|&v| v == f64::NEG_INFINITY))
            .map_or(t_len, |t| t + 1);
        return Err(LmError::ImpossibleObservation { occasion });
    }
    let mut path = vec![0; t_len];
    for t in (0..t_len).rev() {
        path[t] = state + 1;
        state = back[[t, state]];
    }
    Ok(path)
}

/// `log p(u, y)` of a 1-based path under `h`.
pub fn path_log_prob(h: &HmmInputs, path: &[usize]) -> f64 {
    let mut lp = h.init[path[0] - 1].ln() + h.emit[[0, path[0] - 1]].ln();
    for t in 1..path.len() {
        lp += h.trans.at(t)[[path[t - 1] - 1, path[t] - 1]].ln() + h.emit[[t, path[t] - 1]].ln();
    }
    lp
}

/// Decode every configuration of `ds` under a fitted model. For the mixed
/// model the chain is decoded within the most probable latent class.
pub fn decode<M: LatentModel>(params: &M, ds: &Dataset) -> Result<DecodingResult> {
    params.check_dataset(ds)?;
    let t_len = ds.n_occasions();
    let rows: Vec<(Vec<usize>, Vec<usize>)> = (0..ds.n_configs())
        .into_par_iter()
        .map(|i| {
            let chain = params.chain(ds, i)?;
            let h = chain.inputs();
            let post = forward_backward(&h)?;
            Ok((local_decode(post.gamma.view()), global_decode(&h)?))
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let mut ul = Array2::zeros((n, t_len));
    let mut ug = Array2::zeros((n, t_len));
    for (i, (l, g)) in rows.into_iter().enumerate() {
        for t in 0..t_len {
            ul[[i, t]] = l[t];
            ug[[i, t]] = g[t];
        }
    }
    Ok(DecodingResult { ul, ug })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::recursions::TransitionSeq;
    use ndarray::{array, Array1};

    #[test]
    fn uniform_posteriors_pick_first_state() {
        let g = Array2::from_elem((3, 4), 0.25);
        assert_eq!(local_decode(g.view()), vec![1, 1, 1]);
    }

    #[test]
    fn forced_path_is_recovered() {
        let init = array![1.0, 0.0];
        let p = array![[0.0, 1.0], [1.0, 0.0]];
        let emit = array![[1.0, 0.0], [0.0, 1.0], [1.0, 0.0]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        assert_eq!(global_decode(&h).unwrap(), vec![1, 2, 1]);
    }

    #[test]
    fn persistent_chain_overrides_noisy_observation() {
        // State 1 is sticky; at occasion 3 the observation points away from
        // it but splits its support over states 2 and 3. The local mode moves
        // to state 2 while the best joint path stays in state 1. Checked by
        // enumerating all 81 paths.
        let init = array![0.8, 0.1, 0.1];
        let p = array![[0.95, 0.025, 0.025], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]];
        let emit = array![
            [0.8, 0.1, 0.1],
            [0.8, 0.1, 0.1],
            [0.005, 0.55, 0.445],
            [0.8, 0.1, 0.1]
        ];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        let post = forward_backward(&h).unwrap();
        assert_eq!(local_decode(post.gamma.view()), vec![1, 1, 2, 1]);
        assert_eq!(global_decode(&h).unwrap(), vec![1, 1, 1, 1]);
        assert!((path_log_prob(&h, &[1, 1, 1, 1]) - 0.001755904f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn impossible_observation_is_an_error() {
        let init = Array1::from(vec![1.0, 0.0]);
        let p = array![[1.0, 0.0], [0.0, 1.0]];
        let emit = array![[1.0, 1.0], [0.0, 1.0]];
        let h = HmmInputs {
            init: init.view(),
            trans: TransitionSeq::Homogeneous(p.view()),
            emit: emit.view(),
        };
        assert!(global_decode(&h).is_err());
    }
}
