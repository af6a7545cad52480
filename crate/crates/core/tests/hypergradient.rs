mod oracles;

use mfrw_core::metaloop::{hypergradient, HypergradMode, HypergradSpec};
use oracles::{cosine, flat, rel_l2, tiny_instance};

fn fd_vs_brute(seed: u64, feature_level: bool) -> (f64, f64) {
    let inst = tiny_instance(seed, feature_level);
    assert!(inst.total_params() <= 200, "{} params", inst.total_params());
    let h = hypergradient(
        &inst.weighting,
        &inst.model,
        &inst.w,
        &inst.theta,
        &inst.train,
        &inst.pre,
        &inst.meta,
        inst.alpha,
        &HypergradSpec::default(),
    )
    .unwrap();
    let approx = flat(&h.grad);
    let truth = inst.brute_force_hypergrad(1e-5);
    (cosine(&approx, &truth), rel_l2(&approx, &truth))
}

#[test]
fn advisor_hypergradient_matches_brute_force() {
    for seed in 1..=5 {
        let (cos, rel) = fd_vs_brute(seed, true);
        assert!(
            cos > 0.99 && rel < 1e-2,
            "seed {seed}: cos {cos}, rel {rel}"
        );
    }
}

#[test]
fn mwnet_hypergradient_matches_brute_force() {
    for seed in 1..=5 {
        let (cos, rel) = fd_vs_brute(seed, false);
        assert!(
            cos > 0.99 && rel < 1e-2,
            "seed {seed}: cos {cos}, rel {rel}"
        );
    }
}

#[test]
fn zero_virtual_step_gives_zero_hypergradient() {
    for feature_level in [true, false] {
        let mut inst = tiny_instance(11, feature_level);
        inst.alpha = 0.0;
        let h = hypergradient(
            &inst.weighting,
            &inst.model,
            &inst.w,
            &inst.theta,
            &inst.train,
            &inst.pre,
            &inst.meta,
            0.0,
            &HypergradSpec::default(),
        )
        .unwrap();
        assert!(flat(&h.grad).iter().all(|&g| g == 0.0));
    }
}

#[test]
fn disabled_mode_returns_zero_gradient_and_meta_loss() {
    let inst = tiny_instance(3, true);
    let spec = HypergradSpec {
        mode: HypergradMode::Disabled,
        eps_scale: 0.01,
    };
    let h = hypergradient(
        &inst.weighting,
        &inst.model,
        &inst.w,
        &inst.theta,
        &inst.train,
        &inst.pre,
        &inst.meta,
        inst.alpha,
        &spec,
    )
    .unwrap();
    assert!(flat(&h.grad).iter().all(|&g| g == 0.0));
    assert!((h.meta_loss - inst.meta_objective(&inst.theta.flatten())).abs() < 1e-15);
}
