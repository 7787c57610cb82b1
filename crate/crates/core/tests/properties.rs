mod common;

use common::{random_simplex, rng};
use lmpanel::cov_latent::{CovLatentParams, LatentTransitions};
use lmpanel::cov_manifest::CovManifestParams;
use lmpanel::data::{long2wide, CategorySpec, Dataset, LongRecord};
use lmpanel::prob::{
    expit, global_logit_probs, is_row_stochastic, is_simplex, multinomial_logit, simplex_logits,
    stationary_distribution, stationary_residual,
};
use ndarray::{Array1, Array2, Array3};
use proptest::prelude::*;
use rand::Rng;

fn random_dataset(seed: u64, n: usize, t: usize, r: usize, p: usize) -> Dataset {
    let mut g = rng(seed);
    let counts: Vec<usize> = (0..r).map(|_| g.random_range(2..=3)).collect();
    let y = Array3::from_shape_fn((n, t, r), |(_, _, j)| g.random_range(0..counts[j]));
    let x1 = Array2::from_shape_fn((n, p), |_| g.random_range(0..2) as f64);
    let x2 = Array3::from_shape_fn((n, t - 1, p), |_| g.random_range(0..2) as f64);
    let freq = (0..n).map(|_| g.random_range(1..4)).collect();
    Dataset::from_arrays(y, freq, Some(x1), Some(x2), CategorySpec::new(counts).unwrap()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expand_then_collapse_is_identity(seed in any::<u64>(), n in 1usize..30, t in 1usize..4, r in 1usize..3, p in 0usize..3) {
        let ds = random_dataset(seed, n, t, r, p);
        prop_assert!(ds.validate().is_empty());
        let units = ds.expand();
        prop_assert_eq!(units.n_total(), ds.n_total());
        prop_assert_eq!(units.collapse(), ds);
    }

    #[test]
    fn long2wide_counts_units(seed in any::<u64>(), n in 1usize..25, t in 1usize..4) {
        let mut g = rng(seed);
        let mut records = Vec::new();
        for i in 0..n {
            let z = g.random_range(0..3) as f64;
            for s in 1..=t {
                records.push(LongRecord {
                    unit_id: format!("u{i}"),
                    occasion: s,
                    covariates: vec![z, g.random_range(0..2) as f64],
                    responses: vec![g.random_range(0..3)],
                });
            }
        }
        // Row order must not matter.
        let len = records.len();
        for i in (1..len).rev() {
            records.swap(i, g.random_range(0..=i));
        }
        let ds = long2wide(&records, &CategorySpec::new(vec![3]).unwrap(), &[0]).unwrap();
        prop_assert_eq!(ds.n_total(), n as u64);
        prop_assert_eq!(ds.n_occasions(), t);
    }

    #[test]
    fn multinomial_logit_is_a_simplex_and_invertible(eta in prop::collection::vec(-20.0f64..20.0, 1..6), reference in 0usize..6) {
        let k = eta.len() + 1;
        let reference = reference % k;
        let probs = multinomial_logit(&eta, reference);
        prop_assert!((probs.sum() - 1.0).abs() < 1e-12);
        prop_assert!(probs.iter().all(|&v| v >= 0.0));
        let (back, clamped) = simplex_logits(probs.view(), reference);
        if !clamped {
            for (a, b) in back.iter().zip(&eta) {
                prop_assert!((a - b).abs() < 1e-8 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn global_logit_partial_sums_reproduce_cutpoints(raw in prop::collection::vec(0.1f64..2.0, 1..5), start in -3.0f64..3.0, shift in -3.0f64..3.0) {
        let mut mu = vec![start];
        for step in &raw {
            let last = *mu.last().unwrap();
            mu.push(last - step);
        }
        let probs = global_logit_probs(&mu, shift).unwrap();
        prop_assert!((probs.sum() - 1.0).abs() < 1e-12);
        for y in 1..probs.len() {
            let upper: f64 = probs.iter().skip(y).sum();
            let lower: f64 = probs.iter().take(y).sum();
            prop_assert!(((upper / lower).ln() - (mu[y - 1] + shift)).abs() < 1e-10);
        }
    }

    #[test]
    fn stationary_distribution_is_fixed_point(seed in any::<u64>(), k in 1usize..7) {
        let mut g = rng(seed);
        let mut p = Array2::zeros((k, k));
        for a in 0..k {
            p.row_mut(a).assign(&random_simplex(&mut g, k, 0.01));
        }
        let pi = stationary_distribution(p.view()).unwrap();
        prop_assert!(is_simplex(pi.view(), 1e-12));
        prop_assert!(stationary_residual(p.view(), pi.view()) < 1e-10);
    }

    #[test]
    fn covariate_links_give_valid_probabilities(seed in any::<u64>(), k in 2usize..5, p in 0usize..3) {
        let mut g = rng(seed);
        let mut coef = |shape: (usize, usize)| Array2::from_shape_fn(shape, |_| 4.0 * g.random::<f64>() - 2.0);
        let be = coef((1 + p, k - 1));
        let intercepts = coef((k, k - 1));
        let mut slopes = coef((k, p));
        slopes.row_mut(0).fill(0.0);
        let psi = Array3::from_elem((1, 2, k), 0.5);
        let cats = CategorySpec::new(vec![2]).unwrap();
        let diff = CovLatentParams {
            be: be.clone(),
            ga: LatentTransitions::Difflogit { intercepts: intercepts.clone(), slopes: slopes.clone() },
            psi: psi.clone(),
            categories: cats.clone(),
        };
        // The multilogit coefficients implied by the difflogit structure.
        let mut ga = Array3::zeros((k, 1 + p, k - 1));
        for a in 0..k {
            for b in (0..k).filter(|&b| b != a) {
                let slot = if b < a { b } else { b - 1 };
                ga[[a, 0, slot]] = intercepts[[a, slot]];
                for m in 0..p {
                    ga[[a, 1 + m, slot]] = slopes[[b, m]] - slopes[[a, m]];
                }
            }
        }
        let multi = CovLatentParams { be, ga: LatentTransitions::Multilogit { ga }, psi, categories: cats };
        for _ in 0..5 {
            let x = Array1::from_shape_fn(p, |_| 3.0 * g.random::<f64>() - 1.5);
            prop_assert!(is_simplex(diff.initial_probs(x.view()).view(), 1e-12));
            let a = diff.transition_matrix(x.view());
            let b = multi.transition_matrix(x.view());
            prop_assert!(is_row_stochastic(a.view(), 1e-12));
            for (u, v) in a.iter().zip(b.iter()) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ordinal_emissions_increase_with_support_point(seed in any::<u64>(), k in 1usize..5, c in 2usize..6) {
        let mut g = rng(seed);
        let mut mu = vec![2.0];
        for _ in 1..c - 1 {
            let last = *mu.last().unwrap();
            mu.push(last - 0.2 - g.random::<f64>());
        }
        let mut al: Vec<f64> = (0..k).map(|u| if u == 0 { 0.0 } else { 4.0 * g.random::<f64>() - 2.0 }).collect();
        al[1..].sort_by(f64::total_cmp);
        let be = Array1::from_vec(vec![g.random::<f64>() - 0.5]);
        let mut pi = Array2::zeros((k, k));
        for a in 0..k {
            pi.row_mut(a).assign(&random_simplex(&mut g, k, 0.1));
        }
        let params = CovManifestParams::new(Array1::from_vec(mu), Array1::from_vec(al.clone()), be, pi).unwrap();
        let x = Array1::from_vec(vec![g.random::<f64>() * 2.0 - 1.0]);
        let mut order: Vec<usize> = (0..k).collect();
        order.sort_by(|&a, &b| al[a].total_cmp(&al[b]));
        for y in 1..c {
            let upper = |u: usize| params.emission_probs(u, x.view()).unwrap().iter().skip(y).sum::<f64>();
            for w in order.windows(2) {
                prop_assert!(upper(w[1]) >= upper(w[0]) - 1e-12);
            }
        }
        for u in 0..k {
            prop_assert!(is_simplex(params.emission_probs(u, x.view()).unwrap().view(), 1e-12));
        }
    }
}

#[test]
fn stationary_two_state_example() {
    let p = ndarray::array![[0.9, 0.1], [0.2, 0.8]];
    let pi = stationary_distribution(p.view()).unwrap();
    assert!((pi[0] - 2.0 / 3.0).abs() < 1e-12 && (pi[1] - 1.0 / 3.0).abs() < 1e-12);
}

#[test]
fn expit_is_symmetric() {
    for x in [-30.0, -1.0, 0.0, 2.5, 40.0] {
        assert!((expit(x) + expit(-x) - 1.0).abs() < 1e-15);
    }
}
