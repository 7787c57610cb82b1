//! Independent reference implementations and instance generators shared by
//! the integration tests. Everything here works on explicit enumeration
//! rather than on the library's recursions.
#![allow(dead_code)]

use lmpanel::basic::BasicParams;
use lmpanel::data::{CategorySpec, Dataset};
use lmpanel::fit::TransitionLayout;
use lmpanel::inference::{simulate, SimDesign};
use lmpanel::recursions::{HmmInputs, TransitionSeq};
use ndarray::{array, Array1, Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_simplex(rng: &mut ChaCha8Rng, k: usize, floor: f64) -> Array1<f64> {
    let raw: Vec<f64> = (0..k).map(|_| floor + rng.random::<f64>()).collect();
    let s: f64 = raw.iter().sum();
    Array1::from_iter(raw.into_iter().map(|v| v / s))
}

/// Explicit chain inputs with per-occasion transitions.
#[derive(Debug, Clone)]
pub struct Instance {
    pub init: Array1<f64>,
    /// `(T-1) x k x k`.
    pub trans: Array3<f64>,
    /// `T x k` emission probabilities of the observed responses.
    pub emit: Array2<f64>,
}

impl Instance {
    pub fn inputs(&self) -> HmmInputs<'_> {
        HmmInputs {
            init: self.init.view(),
            trans: TransitionSeq::PerOccasion(self.trans.view()),
            emit: self.emit.view(),
        }
    }

    pub fn k(&self) -> usize {
        self.init.len()
    }

    pub fn t(&self) -> usize {
        self.emit.nrows()
    }
}

/// Random instance whose emissions are products of `r` categorical
/// probabilities with up to `cmax` categories, as the model produces them.
pub fn random_instance(rng: &mut ChaCha8Rng, k: usize, t: usize, r: usize, cmax: usize) -> Instance {
    let init = random_simplex(rng, k, 0.05);
    let mut trans = Array3::zeros((t.saturating_sub(1), k, k));
    for s in 0..t.saturating_sub(1) {
        for a in 0..k {
            let row = random_simplex(rng, k, 0.05);
            for b in 0..k {
                trans[[s, a, b]] = row[b];
            }
        }
    }
    let mut emit = Array2::ones((t, k));
    for _ in 0..r {
        let c = rng.random_range(2..=cmax.max(2));
        let psi: Vec<Array1<f64>> = (0..k).map(|_| random_simplex(rng, c, 0.05)).collect();
        for s in 0..t {
            let y = rng.random_range(0..c);
            for u in 0..k {
                emit[[s, u]] *= psi[u][y];
            }
        }
    }
    Instance { init, trans, emit }
}

/// Every state path of length `t` over `k` states (0-based), in
/// lexicographic order.
pub fn all_paths(k: usize, t: usize) -> Vec<Vec<usize>> {
    let total = k.pow(t as u32);
    (0..total)
        .map(|mut code| {
            let mut p = vec![0; t];
            for s in (0..t).rev() {
                p[s] = code % k;
                code /= k;
            }
            p
        })
        .collect()
}

pub fn path_prob(inst: &Instance, path: &[usize]) -> f64 {
    let mut p = inst.init[path[0]] * inst.emit[[0, path[0]]];
    for s in 1..path.len() {
        p *= inst.trans[[s - 1, path[s - 1], path[s]]] * inst.emit[[s, path[s]]];
    }
    p
}

pub struct Enumerated {
    pub likelihood: f64,
    pub gamma: Array2<f64>,
    pub xi: Array3<f64>,
    /// Most probable path, 1-based, first in lexicographic order on ties.
    pub viterbi: Vec<usize>,
    pub viterbi_prob: f64,
}

pub fn enumerate(inst: &Instance) -> Enumerated {
    let (k, t) = (inst.k(), inst.t());
    let mut likelihood = 0.0;
    let mut gamma = Array2::zeros((t, k));
    let mut xi = Array3::zeros((t.saturating_sub(1), k, k));
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for path in all_paths(k, t) {
        let p = path_prob(inst, &path);
        likelihood += p;
        for s in 0..t {
            gamma[[s, path[s]]] += p;
            if s > 0 {
                xi[[s - 1, path[s - 1], path[s]]] += p;
            }
        }
        if p > best.0 {
            best = (p, path);
        }
    }
    gamma /= likelihood;
    xi /= likelihood;
    Enumerated {
        likelihood,
        gamma,
        xi,
        viterbi: best.1.iter().map(|u| u + 1).collect(),
        viterbi_prob: best.0,
    }
}

pub fn rel_diff(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Well-separated two-state basic model with three response categories.
pub fn separated_basic() -> BasicParams {
    BasicParams::new(
        array![0.6, 0.4],
        array![[[0.9, 0.1], [0.2, 0.8]]],
        TransitionLayout::Homogeneous,
        array![[[0.8, 0.1], [0.15, 0.15], [0.05, 0.75]]],
        CategorySpec::new(vec![3]).unwrap(),
    )
    .unwrap()
}

pub fn simulate_basic(truth: &BasicParams, n: usize, t: usize, seed: u64) -> Dataset {
    simulate(truth, &SimDesign::without_covariates(n, t), &truth.categories, seed)
        .unwrap()
        .dataset
}

/// Smallest maximum absolute difference over the two labelings of a
/// two-state basic fit.
pub fn basic_max_error(truth: &BasicParams, fit: &BasicParams) -> f64 {
    use lmpanel::model::LatentModel;
    [vec![0, 1], vec![1, 0]]
        .iter()
        .map(|perm| {
            let f = fit.permute_states(perm);
            let mut err: f64 = 0.0;
            for (a, b) in f.piv.iter().zip(truth.piv.iter()) {
                err = err.max((a - b).abs());
            }
            for (a, b) in f.psi.iter().zip(truth.psi.iter()) {
                err = err.max((a - b).abs());
            }
            for s in 0..f.pi.dim().0 {
                for a in 0..2 {
                    for b in 0..2 {
                        err = err.max((f.pi[[s, a, b]] - truth.pi[[0, a, b]]).abs());
                    }
                }
            }
            err
        })
        .fold(f64::INFINITY, f64::min)
}
