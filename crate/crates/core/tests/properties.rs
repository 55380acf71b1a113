use std::sync::Arc;

use proptest::prelude::*;
use stochflow_core::coeffs::{
    check_assumptions, Affine, AssumptionGrid, Atom, CoefficientField, ConstantJump, ContinuousPart, LinearJump,
    MarkLinearJump, MarkMeasure, Perturbed, Regularity, SinCos, SineJump,
};
use stochflow_core::exec::Sequential;
use stochflow_core::flow::{integrate_flow, Scheme};
use stochflow_core::grid::SpatialBox;
use stochflow_core::inverse::{invert_flow, InverseOptions};
use stochflow_core::limits::{strong_limit_run, LimitOptions};
use stochflow_core::noise::{generate_noise, PointKind};
use stochflow_core::spde::solve_spde_characteristics;

fn field_with(part: Arc<dyn ContinuousPart>, jump: Arc<dyn stochflow_core::coeffs::JumpPart>, atoms: Vec<Atom>) -> CoefficientField {
    CoefficientField::new(part, jump, MarkMeasure::new(atoms).unwrap(), Regularity::default()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn constant_drift_shift_moves_hat_drift_by_the_shift(c in -3.0f64..3.0, x in -5.0f64..5.0, nu in 0.0f64..1.0) {
        let base: Arc<dyn ContinuousPart> = Arc::new(SinCos::new(1, 0.3, nu).unwrap());
        let f = CoefficientField::continuous_only(base.clone());
        let g = CoefficientField::continuous_only(Perturbed::generic(base, c, 1.0));
        let shifted = g.hat_drift(0.2, &[x]).unwrap()[0];
        let plain = f.hat_drift(0.2, &[x]).unwrap()[0];
        prop_assert!((shifted - plain - c).abs() <= 1e-12 * (1.0 + c.abs() + plain.abs()));
    }

    #[test]
    fn compensator_is_additive_and_homogeneous(
        r1 in 0.01f64..5.0, r2 in 0.01f64..5.0, k in 0.1f64..4.0, x in -4.0f64..4.0,
    ) {
        let part: Arc<dyn ContinuousPart> = Arc::new(Affine::zero(1, 1));
        let jump = Arc::new(MarkLinearJump);
        let both = field_with(part.clone(), jump.clone(), vec![Atom { mark: 0.5, rate: r1 }, Atom { mark: -2.0, rate: r2 }]);
        let one = field_with(part.clone(), jump.clone(), vec![Atom { mark: 0.5, rate: r1 }]);
        let two = field_with(part.clone(), jump.clone(), vec![Atom { mark: -2.0, rate: r2 }]);
        let scaled = field_with(part, jump, vec![Atom { mark: 0.5, rate: k * r1 }]);
        let sum = one.compensator_drift(0.0, &[x])[0] + two.compensator_drift(0.0, &[x])[0];
        prop_assert!((both.compensator_drift(0.0, &[x])[0] - sum).abs() <= 1e-12 * (1.0 + sum.abs()));
        let lin = k * one.compensator_drift(0.0, &[x])[0];
        prop_assert!((scaled.compensator_drift(0.0, &[x])[0] - lin).abs() <= 1e-12 * (1.0 + lin.abs()));
    }

    #[test]
    fn assumption_sups_grow_with_the_box(half in 1.0f64..4.0, grow in 0.5f64..3.0, nu in 0.05f64..0.5) {
        let f = CoefficientField::continuous_only(Arc::new(SinCos::new(1, 0.4, nu).unwrap()));
        let small = check_assumptions(&f, &AssumptionGrid::new(SpatialBox::cube(1, -half, half).unwrap(), 0.125)).unwrap();
        let big = check_assumptions(&f, &AssumptionGrid::new(SpatialBox::cube(1, -half - grow, half + grow).unwrap(), 0.125)).unwrap();
        for r in &small.records {
            let wider = big.get(&r.name).unwrap();
            prop_assert!(wider.grid_sup >= r.grid_sup, "{}: {} < {}", r.name, wider.grid_sup, r.grid_sup);
        }
    }

    #[test]
    fn noise_is_a_pure_function_of_its_arguments(seed in any::<u64>(), path in 0u64..1000, steps in 1usize..64) {
        let m = MarkMeasure::new(vec![Atom { mark: 0.0, rate: 3.0 }]).unwrap();
        let a = generate_noise(&m, 2, 0.0, 1.0, steps, seed, path).unwrap();
        let b = generate_noise(&m, 2, 0.0, 1.0, steps, seed, path).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn shared_noise_keeps_the_flow_monotone(seed in any::<u64>(), a in 0.0f64..1.0, s in 0.0f64..0.8) {
        let f = CoefficientField::continuous_only(Arc::new(SinCos::new(1, a, s).unwrap()));
        let nz = generate_noise(&MarkMeasure::empty(), 1, 0.0, 1.0, 64, seed, 0).unwrap();
        let pts: Vec<Vec<f64>> = (0..21).map(|i| vec![-2.0 + 0.2 * i as f64]).collect();
        let flow = integrate_flow(&f, &nz, &pts, Scheme::Euler).unwrap();
        for k in 0..flow.time_count() {
            for p in 1..pts.len() {
                prop_assert!(flow.state(p - 1, k)[0] < flow.state(p, k)[0]);
            }
        }
    }

    #[test]
    fn jumps_add_exactly_h_of_the_left_limit(seed in any::<u64>(), a in -0.8f64..0.8) {
        let f = field_with(
            Arc::new(Affine::gbm(0.1, 0.3).unwrap()),
            Arc::new(SineJump::new(a).unwrap()),
            vec![Atom { mark: 0.0, rate: 4.0 }],
        );
        let nz = generate_noise(f.measure(), 1, 0.0, 1.0, 16, seed, 0).unwrap();
        let pts = vec![vec![-1.3], vec![0.4], vec![2.2]];
        let flow = integrate_flow(&f, &nz, &pts, Scheme::Euler).unwrap();
        let kinds = nz.grid().kinds();
        for (k, kind) in kinds.iter().enumerate().take(flow.time_count()) {
            for p in 0..pts.len() {
                let (left, now) = (flow.left_limit(p, k)[0], flow.state(p, k)[0]);
                match *kind {
                    PointKind::Jump(atom) => {
                        let mark = f.measure().atoms()[atom].mark;
                        let h = f.eval_jump(flow.times()[k], &[left], mark).unwrap().h[0];
                        prop_assert_eq!(now, left + h);
                    }
                    PointKind::Base => prop_assert_eq!(now, left),
                }
            }
        }
    }

    #[test]
    fn one_dimensional_inverse_preserves_order(seed in any::<u64>(), c in -0.6f64..0.6) {
        let f = field_with(
            Arc::new(SinCos::new(1, 0.5, 0.4).unwrap()),
            Arc::new(LinearJump::new(c).unwrap()),
            vec![Atom { mark: 0.0, rate: 1.0 }],
        );
        let nz = generate_noise(f.measure(), 1, 0.0, 1.0, 16, seed, 0).unwrap();
        let flow = integrate_flow(&f, &nz, &[vec![0.0]], Scheme::Euler).unwrap();
        let ys: Vec<Vec<f64>> = (0..11).map(|i| vec![-1.0 + 0.2 * i as f64]).collect();
        let inv = invert_flow(&f, &flow, &ys, &InverseOptions::for_scheme(Scheme::Euler)).unwrap();
        for k in 0..inv.time_count() {
            for p in 1..ys.len() {
                prop_assert!(inv.value(p - 1, k)[0] < inv.value(p, k)[0]);
            }
        }
    }

    #[test]
    fn spde_starts_at_the_identity(seed in any::<u64>(), nu in 0.0f64..0.5) {
        let f = CoefficientField::continuous_only(Arc::new(SinCos::new(2, 0.3, nu).unwrap()));
        let nz = generate_noise(&MarkMeasure::empty(), f.brownian_count(), 0.0, 1.0, 8, seed, 0).unwrap();
        let bbox = SpatialBox::cube(2, -1.0, 1.0).unwrap();
        let sol = solve_spde_characteristics(&f, &nz, Scheme::Euler, 0.0, 1.0, &bbox, 0.5, 1e-10).unwrap();
        let nodes = sol.lattice().nodes();
        for (p, x) in nodes.iter().enumerate() {
            prop_assert_eq!(sol.value(0, p), x.as_slice());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn identical_fields_are_at_distance_zero_for_any_seed(seed in any::<u64>(), h in -1.0f64..1.0) {
        let f = field_with(
            Arc::new(Affine::gbm(0.05, 0.2).unwrap()),
            Arc::new(ConstantJump::new(vec![h]).unwrap()),
            vec![Atom { mark: 0.0, rate: 1.5 }],
        );
        let opts = LimitOptions {
            epsilon: 0.5,
            beta_prime: 1.5,
            p: 2.0,
            paths: 3,
            seed,
            bbox: SpatialBox::cube(1, -1.0, 1.0).unwrap(),
            step: 0.5,
            s: 0.0,
            t_end: 1.0,
            base_steps: 8,
            scheme: Scheme::Euler,
            gradients: true,
            inverse: true,
        };
        let rep = strong_limit_run(&[(1, f.clone()), (3, f.clone())], &f, &opts, &Sequential).unwrap();
        for row in &rep.rows {
            prop_assert_eq!(row.flow_value.mean, 0.0);
            prop_assert_eq!(row.flow_grad.unwrap().mean, 0.0);
            prop_assert_eq!(row.inverse_value.unwrap().mean, 0.0);
            prop_assert_eq!(row.inverse_grad.unwrap().mean, 0.0);
            prop_assert_eq!(row.coeff_distance.total(), 0.0);
        }
    }
}
