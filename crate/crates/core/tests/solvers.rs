mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};

use common::{active_set_qp, box_bounds, DenseQp};
use treeprox::bench::file::{from_json, to_json};
use treeprox::bench::generate::{gen_random_instance, ConstraintStyle, PenaltyKind, RandomSpec};
use treeprox::solver::{
    solve, verify_report, BacktrackingRule, SolverConfig, SolverContext, SolverKind,
};
use treeprox::ProblemInstance;

const ALL: [SolverKind; 4] = [SolverKind::Minfbe, SolverKind::Nama, SolverKind::Pnama, SolverKind::Gpad];

fn tiny(seed: u64, style: ConstraintStyle) -> ProblemInstance {
    gen_random_instance(
        seed,
        &RandomSpec {
            nx: 2,
            nu: 1,
            horizon: 2,
            max_branching: 2,
            max_nodes: 5,
            stage_rows: 1,
            terminal_rows: 1,
            style,
            ..Default::default()
        },
    )
    .unwrap()
}

#[test]
fn solvers_match_active_set_reference() {
    let mut checked = 0;
    for seed in 0..12 {
        let style = if seed % 2 == 0 {
            ConstraintStyle::Dense
        } else {
            ConstraintStyle::InputBox
        };
        let prob = tiny(seed, style);
        let qp = DenseQp::new(&prob);
        let (lo, hi) = box_bounds(&prob);
        let Ok(reference) = catch_unwind(AssertUnwindSafe(|| active_set_qp(&qp, &qp.h, &lo, &hi))) else {
            continue;
        };
        let reference = qp.to_point(&reference).to_full_flat();
        let ctx = SolverContext::new(prob).unwrap();
        let cfg = SolverConfig {
            eps: 1e-8,
            max_iters: 20_000,
            ..Default::default()
        };
        for kind in ALL {
            let rep = solve(&ctx, kind, &cfg, None).unwrap();
            assert!(rep.converged(), "seed {seed} {kind}");
            let err = (rep.x.to_full_flat() - &reference).amax() / (1.0 + reference.amax());
            assert!(err < 1e-5, "seed {seed} {kind}: {err}");
        }
        checked += 1;
    }
    assert!(checked >= 6, "only {checked} feasible references");
}

#[test]
fn l1_penalties_verify() {
    for seed in 0..4 {
        let prob = gen_random_instance(
            seed,
            &RandomSpec {
                penalty: PenaltyKind::ScaledL1,
                ..Default::default()
            },
        )
        .unwrap();
        let ctx = SolverContext::new(prob).unwrap();
        let cfg = SolverConfig {
            eps: 1e-6,
            ..Default::default()
        };
        for kind in ALL {
            let rep = solve(&ctx, kind, &cfg, None).unwrap();
            assert!(rep.converged(), "seed {seed} {kind}");
            let v = verify_report(ctx.problem(), ctx.cache(), &rep).unwrap();
            assert!(v.passes(cfg.eps, rep.lambda), "seed {seed} {kind}: {v:?}");
        }
    }
}

#[test]
fn warm_start_keeps_the_solution() {
    let ctx = SolverContext::new(gen_random_instance(40, &RandomSpec::default()).unwrap()).unwrap();
    let cold_cfg = SolverConfig {
        eps: 1e-7,
        ..Default::default()
    };
    let warm_cfg = SolverConfig {
        warm_start: true,
        warm_start_iters: 10,
        ..cold_cfg.clone()
    };
    for kind in [SolverKind::Minfbe, SolverKind::Nama] {
        let cold = solve(&ctx, kind, &cold_cfg, None).unwrap();
        let warm = solve(&ctx, kind, &warm_cfg, None).unwrap();
        assert!(warm.converged());
        // warm-start gradient steps count as oracle calls
        assert!(warm.counts.oracle_calls() > warm.iterations * 3);
        let diff = (warm.x.to_full_flat() - cold.x.to_full_flat()).amax();
        assert!(diff < 1e-4 * (1.0 + cold.x.norm_inf()), "{kind}: {diff}");
    }
}

#[test]
fn backtracking_recovers_from_oversized_step() {
    let ctx = SolverContext::new(gen_random_instance(41, &RandomSpec::default()).unwrap()).unwrap();
    for rule in [BacktrackingRule::Original, BacktrackingRule::Simple] {
        let cfg = SolverConfig {
            lambda: Some(100.0 / ctx.lipschitz()),
            backtracking: rule,
            eps: 1e-6,
            ..Default::default()
        };
        for kind in [SolverKind::Minfbe, SolverKind::Nama] {
            let rep = solve(&ctx, kind, &cfg, None).unwrap();
            assert!(rep.converged(), "{rule:?} {kind}");
            assert!(rep.lambda_reductions > 0);
            let v = verify_report(ctx.problem(), ctx.cache(), &rep).unwrap();
            assert!(v.passes(cfg.eps, rep.lambda), "{rule:?} {kind}: {v:?}");
        }
    }
}

#[test]
fn file_round_trip_preserves_solutions() {
    let prob = gen_random_instance(42, &RandomSpec::default()).unwrap();
    let back = from_json(&to_json(&prob).unwrap()).unwrap();
    let a = SolverContext::new(prob).unwrap();
    let b = SolverContext::new(back).unwrap();
    let cfg = SolverConfig::default();
    for kind in [SolverKind::Minfbe, SolverKind::Nama] {
        let ra = solve(&a, kind, &cfg, None).unwrap();
        let rb = solve(&b, kind, &cfg, None).unwrap();
        assert!((ra.x.to_full_flat() - rb.x.to_full_flat()).amax() <= 1e-10);
        assert_eq!(ra.iterations, rb.iterations);
    }
}

#[test]
fn preconditioning_does_not_move_the_solution() {
    let prob = gen_random_instance(43, &RandomSpec::default()).unwrap();
    let ctx = SolverContext::new(prob).unwrap();
    let cfg = SolverConfig {
        eps: 1e-8,
        ..Default::default()
    };
    let pre_cfg = SolverConfig {
        precondition: true,
        ..cfg.clone()
    };
    for kind in [SolverKind::Minfbe, SolverKind::Nama, SolverKind::Gpad] {
        let plain = solve(&ctx, kind, &cfg, None).unwrap();
        let pre = solve(&ctx, kind, &pre_cfg, None).unwrap();
        assert!(pre.preconditioned);
        let v = verify_report(ctx.problem(), ctx.cache(), &pre).unwrap();
        assert!(v.residual_inf <= cfg.eps * (1.0 + 1e-9));
        let diff = (plain.x.to_full_flat() - pre.x.to_full_flat()).amax();
        assert!(diff <= 1e-5 * (1.0 + plain.x.norm_inf()), "{kind}: {diff}");
    }
}

#[test]
fn optimal_start_needs_no_iterations() {
    let ctx = SolverContext::new(gen_random_instance(44, &RandomSpec::default()).unwrap()).unwrap();
    let cfg = SolverConfig {
        eps: 1e-9,
        ..Default::default()
    };
    let first = solve(&ctx, SolverKind::Nama, &cfg, None).unwrap();
    let loose = SolverConfig {
        eps: 1e-6,
        ..Default::default()
    };
    for kind in ALL {
        let again = solve(&ctx, kind, &loose, Some(&first.y)).unwrap();
        assert_eq!(again.iterations, 0, "{kind}");
    }
}

#[test]
fn invalid_settings_are_rejected() {
    let ctx = SolverContext::new(gen_random_instance(45, &RandomSpec::default()).unwrap()).unwrap();
    let bad = [
        SolverConfig {
            eps: 0.0,
            ..Default::default()
        },
        SolverConfig {
            lambda: Some(-1.0),
            ..Default::default()
        },
        SolverConfig {
            beta: 1.0,
            ..Default::default()
        },
    ];
    for cfg in bad {
        assert!(solve(&ctx, SolverKind::Minfbe, &cfg, None).is_err());
    }
    let short = nalgebra::DVector::zeros(1);
    assert!(solve(&ctx, SolverKind::Nama, &SolverConfig::default(), Some(&short)).is_err());
}

#[test]
fn unconstrained_instances_hit_the_lq_solution() {
    for seed in 0..5 {
        let prob = gen_random_instance(
            50 + seed,
            &RandomSpec {
                penalty: PenaltyKind::Free,
                ..Default::default()
            },
        )
        .unwrap();
        let qp = DenseQp::new(&prob);
        let lq = qp.to_point(&qp.solve_eq(&nalgebra::DVector::zeros(qp.dim()))).to_full_flat();
        let ctx = SolverContext::new(prob).unwrap();
        for kind in [SolverKind::Minfbe, SolverKind::Nama] {
            let rep = solve(&ctx, kind, &SolverConfig::default(), None).unwrap();
            assert!(rep.iterations <= 2, "{kind}: {}", rep.iterations);
            assert!((rep.x.to_full_flat() - &lq).amax() <= 1e-8 * (1.0 + lq.amax()));
        }
    }
}

#[test]
fn warm_start_usually_saves_iterations() {
    let cold_cfg = SolverConfig::default();
    let warm_cfg = SolverConfig {
        warm_start: true,
        ..Default::default()
    };
    let trials = 20;
    let better = (0..trials)
        .filter(|&seed| {
            let ctx = SolverContext::new(gen_random_instance(60 + seed, &RandomSpec::default()).unwrap()).unwrap();
            let cold = solve(&ctx, SolverKind::Minfbe, &cold_cfg, None).unwrap();
            let warm = solve(&ctx, SolverKind::Minfbe, &warm_cfg, None).unwrap();
            warm.iterations < cold.iterations
        })
        .count();
    assert!(2 * better >= trials as usize, "{better} of {trials}");
}
