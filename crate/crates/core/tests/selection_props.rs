mod common;

use common::topk_oracle;
use proptest::prelude::*;
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use vidtok::selection::{perturbed_topk_forward, topk_indices, PerturbConfig};
use vidtok::{DType, Error, Tensor};

fn cfg(sigma: f64, n_samples: usize, seed: u64) -> PerturbConfig {
    PerturbConfig { sigma, n_samples, seed }
}

#[test]
fn two_candidates_match_normal_cdf() {
    // s0 - s1 + σ(Z0 - Z1) > 0 with Z0 - Z1 ~ N(0, 2).
    let phi = Normal::new(0.0, 1.0).unwrap().cdf(1.0 / 2f64.sqrt());
    assert!((phi - 0.7602).abs() < 1e-4);
    let out = perturbed_topk_forward(&[1.0, 0.0], 1, &cfg(1.0, 10_000, 5)).unwrap();
    assert!((out.soft.data()[0] - phi).abs() < 0.02, "{}", out.soft.data()[0]);
}

#[test]
fn monte_carlo_jacobian_matches_the_closed_form() {
    // ∂P[0,0]/∂s0 = φ(Δ/(σ√2)) / (σ√2) with Δ = 1, σ = 1.
    let exact = Normal::new(0.0, 1.0).unwrap().pdf(1.0 / 2f64.sqrt()) / 2f64.sqrt();
    assert!((exact - 0.2197).abs() < 1e-4);
    let out = perturbed_topk_forward(&[1.0, 0.0], 1, &cfg(1.0, 200_000, 2)).unwrap();
    let g = Tensor::new(vec![1, 2], vec![1.0, 0.0], DType::F64).unwrap();
    let ds = out.cache.backward(&g).unwrap();
    assert!((ds[0] - exact).abs() < 0.01, "{ds:?}");
    assert!((ds[1] + exact).abs() < 0.01, "{ds:?}");
}

#[test]
fn k_larger_than_l_names_both_keys() {
    match topk_indices(&[0.1, 0.2], 3) {
        Err(Error::Validation { keys, .. }) => assert_eq!(keys, vec!["K", "L"]),
        other => panic!("{other:?}"),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hard_topk_matches_oracle(s in prop::collection::vec(-5i32..5, 1..12), k in 1usize..12) {
        let s: Vec<f64> = s.into_iter().map(f64::from).collect();
        let k = k.min(s.len());
        prop_assert_eq!(topk_indices(&s, k).unwrap(), topk_oracle(&s, k));
    }

    #[test]
    fn soft_selection_is_a_stack_of_distributions(
        s in prop::collection::vec(-2.0f64..2.0, 2..9),
        k in 1usize..9,
        sigma in 0.01f64..2.0,
        seed in any::<u64>(),
    ) {
        let l = s.len();
        let k = k.min(l);
        let out = perturbed_topk_forward(&s, k, &cfg(sigma, 200, seed)).unwrap();
        let p = out.soft.data();
        for row in 0..k {
            let sum: f64 = p[row * l..(row + 1) * l].iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-12);
        }
        for j in 0..l {
            let col: f64 = (0..k).map(|row| p[row * l + j]).sum();
            prop_assert!(col <= 1.0 + 1e-12);
        }
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let reweighted = out.cache.reweighted(&s).unwrap();
        for (a, b) in reweighted.data().iter().zip(p) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn backward_is_linear_in_the_upstream_gradient(
        s in prop::collection::vec(-1.0f64..1.0, 3..7),
        a in -2.0f64..2.0,
        seed in any::<u64>(),
    ) {
        let l = s.len();
        let out = perturbed_topk_forward(&s, 2, &cfg(0.3, 300, seed)).unwrap();
        let g1: Vec<f64> = (0..2 * l).map(|i| (i as f64 * 0.7).sin()).collect();
        let g2: Vec<f64> = (0..2 * l).map(|i| (i as f64 * 1.3).cos()).collect();
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + y).collect();
        let t = |v: Vec<f64>| Tensor::new(vec![2, l], v, DType::F64).unwrap();
        let d1 = out.cache.backward(&t(g1)).unwrap();
        let d2 = out.cache.backward(&t(g2)).unwrap();
        let dm = out.cache.backward(&t(mix)).unwrap();
        for j in 0..l {
            prop_assert!((dm[j] - (a * d1[j] + d2[j])).abs() < 1e-9);
        }
    }
}

#[test]
fn full_selection_has_unit_marginals() {
    let s = [0.3, -0.2, 0.9, 0.1];
    let out = perturbed_topk_forward(&s, 4, &cfg(0.5, 500, 1)).unwrap();
    for j in 0..4 {
        let col: f64 = (0..4).map(|row| out.soft.data()[row * 4 + j]).sum();
        assert!((col - 1.0).abs() < 1e-12);
    }
}
