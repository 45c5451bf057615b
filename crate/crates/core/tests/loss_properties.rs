mod common;

use common::{max_abs_diff, random_batch};
use objective_lab::loss_catalog::{
    eval_loss_batch, eval_loss_pointwise, LossId, LossParams, LossSpec, PointwiseLoss,
    PreferenceBatch, Variant, TAU,
};
use proptest::prelude::*;

fn params(beta: f64, variant: Variant) -> LossParams {
    LossParams::new(beta, variant).unwrap()
}

#[test]
fn variants_coincide_at_tau() {
    for seed in 0..100 {
        let batch = random_batch(seed, 64);
        for id in LossId::ALL {
            let spec = LossSpec::of(id);
            let a = eval_loss_batch(&spec, &params(TAU, Variant::AsDiscovered), &batch).unwrap();
            let b = eval_loss_batch(&spec, &params(TAU, Variant::BetaCorrected), &batch).unwrap();
            let d = max_abs_diff(a.as_slice(), b.as_slice());
            assert!(d <= 1e-12, "{id} seed {seed}: {d:e}");
        }
    }
}

#[test]
fn variants_differ_away_from_tau() {
    let batch = random_batch(7, 64);
    for id in [LossId::Lrml, LossId::Pfl, LossId::Aql, LossId::Aqfl] {
        let spec = LossSpec::of(id);
        let a = eval_loss_batch(&spec, &params(0.5, Variant::AsDiscovered), &batch).unwrap();
        let b = eval_loss_batch(&spec, &params(0.5, Variant::BetaCorrected), &batch).unwrap();
        assert!(max_abs_diff(a.as_slice(), b.as_slice()) > 1e-6, "{id}");
    }
}

#[test]
fn output_lengths() {
    let batch = random_batch(3, 10);
    for id in LossId::ALL {
        let v = eval_loss_batch(&LossSpec::of(id), &params(0.1, Variant::BetaCorrected), &batch).unwrap();
        assert_eq!(v.len(), 10 * id.output_multiple(), "{id}");
    }
}

fn pointwise_ids() -> impl Strategy<Value = LossId> {
    prop::sample::select(LossId::ALL.iter().copied().filter(|id| id.is_pointwise()).collect::<Vec<_>>())
}

fn variants() -> impl Strategy<Value = Variant> {
    prop::sample::select(vec![Variant::AsDiscovered, Variant::BetaCorrected])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn singleton_batch_matches_pointwise(
        id in pointwise_ids(),
        variant in variants(),
        beta in 0.01f64..2.0,
        pcl in -8.0f64..-0.1,
        prl in -8.0f64..-0.1,
        rcl in -8.0f64..-0.1,
        rrl in -8.0f64..-0.1,
    ) {
        let p = params(beta, variant);
        let batch = PreferenceBatch::new(vec![pcl], vec![prl], vec![rcl], vec![rrl]).unwrap();
        let rho = (pcl - prl) - (rcl - rrl);
        let v = eval_loss_batch(&LossSpec::of(id), &p, &batch).unwrap();
        let w = eval_loss_pointwise(id, rho, &p, Some((pcl, prl))).unwrap();
        prop_assert!((v[0] - w).abs() <= 1e-12 * (1.0 + w.abs()), "{} {} vs {}", id, v[0], w);
    }

    #[test]
    fn smooth_baselines_are_non_increasing(
        id in prop::sample::select(vec![LossId::Dpo, LossId::Slic, LossId::Exp]),
        beta in 0.01f64..2.0,
        a in -50.0f64..50.0,
        step in 0.0f64..10.0,
    ) {
        let p = params(beta, Variant::BetaCorrected);
        let lo = eval_loss_pointwise(id, a, &p, None).unwrap();
        let hi = eval_loss_pointwise(id, a + step, &p, None).unwrap();
        prop_assert!(hi <= lo + 1e-15 * lo.abs().max(1.0));
    }

    #[test]
    fn ipo_is_minimized_at_its_target(beta in 0.01f64..2.0, off in -5.0f64..5.0) {
        let p = params(beta, Variant::BetaCorrected);
        let target = 1.0 / (2.0 * beta);
        let at = eval_loss_pointwise(LossId::Ipo, target, &p, None).unwrap();
        let near = eval_loss_pointwise(LossId::Ipo, target + off, &p, None).unwrap();
        prop_assert!(at.abs() < 1e-12);
        prop_assert!(near >= at);
    }

    #[test]
    fn finite_over_the_safe_range(
        id in pointwise_ids(),
        variant in variants(),
        beta in 0.01f64..5.0,
        t in -1.0f64..1.0,
    ) {
        // exp is the one loss whose value overflows; its bound is tighter
        let limit = if id == LossId::Exp { 700.0 } else { 700.0 / beta };
        let rho = if id == LossId::Exp { t * limit / beta } else { t * limit };
        let pt = PointwiseLoss::new(id, params(beta, variant)).unwrap().with_indifferent_reference();
        let v = pt.value(rho).unwrap();
        let d = pt.derivative(rho).unwrap().value;
        prop_assert!(v.is_finite() && d.is_finite(), "{} at {}: {} {}", id, rho, v, d);
    }

    #[test]
    fn batch_losses_are_finite(seed in 0u64..10_000, n in 1usize..40, beta in 0.01f64..5.0) {
        let batch = random_batch(seed, n);
        for id in LossId::ALL {
            for variant in [Variant::AsDiscovered, Variant::BetaCorrected] {
                prop_assert!(eval_loss_batch(&LossSpec::of(id), &params(beta, variant), &batch).is_ok());
            }
        }
    }
}
