mod common;

use common::*;
use lmpanel::decoding::{global_decode, local_decode, path_log_prob};
use lmpanel::recursions::{forward_backward, forward_loglik};
use proptest::prelude::*;

fn instance_family() -> impl Strategy<Value = (u64, usize, usize, usize, usize)> {
    (any::<u64>(), 1usize..=3, 1usize..=4, 1usize..=2, 2usize..=3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn loglik_matches_enumeration((seed, k, t, r, c) in instance_family()) {
        let inst = random_instance(&mut rng(seed), k, t, r, c);
        let oracle = enumerate(&inst);
        let ll = forward_loglik(&inst.inputs());
        prop_assert!(rel_diff(ll, oracle.likelihood.ln()) < 1e-10);
    }

    #[test]
    fn posteriors_and_viterbi_match_enumeration((seed, k, t, r, c) in instance_family()) {
        let inst = random_instance(&mut rng(seed), k, t, r, c);
        let oracle = enumerate(&inst);
        let post = forward_backward(&inst.inputs()).unwrap();
        for (a, b) in post.gamma.iter().zip(oracle.gamma.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        for (a, b) in post.xi.iter().zip(oracle.xi.iter()) {
            prop_assert!((a - b).abs() < 1e-10);
        }
        prop_assert_eq!(global_decode(&inst.inputs()).unwrap(), oracle.viterbi);
    }

    #[test]
    fn xi_margins_reproduce_gamma((seed, k, t, r, c) in instance_family()) {
        let inst = random_instance(&mut rng(seed), k, t.max(2), r, c);
        let post = forward_backward(&inst.inputs()).unwrap();
        for s in 1..inst.t() {
            for u in 0..k {
                let from: f64 = (0..k).map(|b| post.xi[[s - 1, u, b]]).sum();
                let to: f64 = (0..k).map(|a| post.xi[[s - 1, a, u]]).sum();
                prop_assert!((from - post.gamma[[s - 1, u]]).abs() < 1e-10);
                prop_assert!((to - post.gamma[[s, u]]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn relabeling_states_keeps_loglik(seed in any::<u64>(), k in 2usize..=3, t in 1usize..=5) {
        let inst = random_instance(&mut rng(seed), k, t, 2, 3);
        let perm: Vec<usize> = (0..k).rev().collect();
        let mut p = inst.clone();
        for u in 0..k {
            p.init[u] = inst.init[perm[u]];
            for s in 0..t {
                p.emit[[s, u]] = inst.emit[[s, perm[u]]];
            }
            for s in 0..t.saturating_sub(1) {
                for v in 0..k {
                    p.trans[[s, u, v]] = inst.trans[[s, perm[u], perm[v]]];
                }
            }
        }
        let a = forward_loglik(&inst.inputs());
        let b = forward_loglik(&p.inputs());
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn viterbi_beats_local_path((seed, k, t) in (any::<u64>(), 1usize..=3, 1usize..=5)) {
        let inst = random_instance(&mut rng(seed), k, t, 2, 3);
        let h = inst.inputs();
        let post = forward_backward(&h).unwrap();
        let local = local_decode(post.gamma.view());
        let global = global_decode(&h).unwrap();
        prop_assert!(path_log_prob(&h, &global) >= path_log_prob(&h, &local) - 1e-12);
        let oracle = enumerate(&inst);
        prop_assert!((path_log_prob(&h, &global) - oracle.viterbi_prob.ln()).abs() < 1e-10);
    }

    #[test]
    fn decoding_ignores_emission_scale(seed in any::<u64>(), k in 1usize..=3, t in 1usize..=5, at in 0usize..5, scale in 0.01f64..100.0) {
        let inst = random_instance(&mut rng(seed), k, t, 2, 3);
        let mut scaled = inst.clone();
        let at = at % t;
        for u in 0..k {
            scaled.emit[[at, u]] *= scale;
        }
        let a = forward_backward(&inst.inputs()).unwrap();
        let b = forward_backward(&scaled.inputs()).unwrap();
        prop_assert_eq!(local_decode(a.gamma.view()), local_decode(b.gamma.view()));
        prop_assert_eq!(global_decode(&inst.inputs()).unwrap(), global_decode(&scaled.inputs()).unwrap());
    }
}

#[test]
fn scaled_pass_agrees_with_unscaled_product() {
    // Plain unscaled forward recursion, feasible because probabilities stay >= 0.1.
    let mut checked = 0;
    for seed in 0..200 {
        let mut g = rng(seed);
        let inst = random_instance(&mut g, 3, 6, 1, 2);
        if inst.emit.iter().any(|&e| e < 0.1) {
            continue;
        }
        let (k, t) = (inst.k(), inst.t());
        let mut alpha: Vec<f64> = (0..k).map(|u| inst.init[u] * inst.emit[[0, u]]).collect();
        for s in 1..t {
            alpha = (0..k)
                .map(|v| (0..k).map(|u| alpha[u] * inst.trans[[s - 1, u, v]]).sum::<f64>() * inst.emit[[s, v]])
                .collect();
        }
        let direct: f64 = alpha.iter().sum();
        assert!(rel_diff(forward_loglik(&inst.inputs()).exp(), direct) < 1e-12);
        checked += 1;
    }
    assert!(checked >= 10, "only {checked} instances had all emissions >= 0.1");
}

#[test]
fn impossible_configuration_gives_negative_infinity() {
    let mut inst = random_instance(&mut rng(7), 2, 3, 1, 2);
    inst.emit.row_mut(1).fill(0.0);
    assert_eq!(forward_loglik(&inst.inputs()), f64::NEG_INFINITY);
    assert!(forward_backward(&inst.inputs()).is_err());
}
