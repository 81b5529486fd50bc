use geoflow::cases;
use geoflow::continuation::{cpf_trace, CpfOptions};
use geoflow::powerflow::{
    evaluate_f, hessian, jacobian, newton_solve, singularity_metric, FlowMap, InjectionVector, StateVector,
};
use geoflow::sweep::{build_direction, VaryingSpec};
use geoflow::{parse_case, NetworkModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(model: &NetworkModel, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n_pq = model.n_pq();
    DVector::from_fn(model.dim(), |i, _| {
        if i < n_pq {
            rng.gen_range(0.9..1.1)
        } else {
            rng.gen_range(-0.3..0.3)
        }
    })
}

fn fd_jacobian(model: &NetworkModel, x: &DVector<f64>, h: f64) -> DMatrix<f64> {
    let n = model.dim();
    let mut out = DMatrix::zeros(n, n);
    for k in 0..n {
        let mut xp = x.clone();
        let mut xm = x.clone();
        xp[k] += h;
        xm[k] -= h;
        out.set_column(k, &((model.evaluate(&xp) - model.evaluate(&xm)) / (2.0 * h)));
    }
    out
}

fn rel_err(a: &DMatrix<f64>, reference: &DMatrix<f64>) -> f64 {
    (a - reference).amax() / reference.amax()
}

#[test]
fn jacobian_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (name, text) in cases::ALL {
        let model = parse_case(text).unwrap();
        for _ in 0..5 {
            let x = random_state(&model, &mut rng);
            let err = rel_err(&model.jacobian(&x), &fd_jacobian(&model, &x, 1e-6));
            assert!(err < 1e-6, "{name}: {err:e}");
        }
    }
}

#[test]
fn hessian_matches_differences_of_jacobian() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for (name, text) in cases::ALL {
        let model = parse_case(text).unwrap();
        let n = model.dim();
        for _ in 0..3 {
            let x = random_state(&model, &mut rng);
            let h = model.hessian(&x);
            let step = 1e-5;
            let mut worst: f64 = 0.0;
            let mut scale: f64 = 0.0;
            for j in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[j] += step;
                xm[j] -= step;
                let fd = (model.jacobian(&xp) - model.jacobian(&xm)) / (2.0 * step);
                for m in 0..n {
                    for i in 0..n {
                        worst = worst.max((h.get(m, i, j) - fd[(m, i)]).abs());
                        scale = scale.max(fd[(m, i)].abs());
                    }
                }
            }
            assert!(worst / scale < 1e-4, "{name}: {:e}", worst / scale);
        }
    }
}

#[test]
fn hessian_slices_are_exactly_symmetric() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let model = parse_case(cases::IEEE14).unwrap();
    let h = model.hessian(&random_state(&model, &mut rng));
    for m in 0..model.dim() {
        let s = h.slice(m);
        assert_eq!(s, s.transpose());
    }
    assert!(h.entries().iter().all(|e| e.i <= e.j));
}

#[test]
fn public_wrappers_check_dimensions() {
    let model = parse_case(cases::IEEE9).unwrap();
    let bad = StateVector::from_parts(&[1.0], &[0.0]);
    assert!(evaluate_f(&model, &bad).is_err());
    assert!(jacobian(&model, &bad).is_err());
    assert!(hessian(&model, &bad).is_err());
}

#[test]
fn two_bus_values_at_small_angle() {
    let model = parse_case(cases::TWO_BUS).unwrap();
    let f = evaluate_f(&model, &StateVector::from_parts(&[1.0], &[-0.1])).unwrap();
    // P2 = 2 V sin θ, Q2 = 2 V² - 2 V cos θ
    assert!((f.p()[0] - 2.0 * (-0.1f64).sin()).abs() < 1e-15);
    assert!((f.p()[0] + 0.19967).abs() < 1e-5);
    assert!((f.q()[0] - (2.0 - 2.0 * 0.1f64.cos())).abs() < 1e-15);
    assert!((f.q()[0] - 0.009992).abs() < 1e-6);
}

#[test]
fn newton_recovers_perturbed_states() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for (name, text) in cases::ALL {
        let model = parse_case(text).unwrap();
        for _ in 0..4 {
            let x = random_state(&model, &mut rng);
            let target = InjectionVector::new(model.n_bus() - 1, model.evaluate(&x));
            let start = x.map(|v| v + rng.gen_range(-1e-3..1e-3));
            let start = StateVector::new(model.n_pq(), start);
            let solved = newton_solve(&model, &target, &start).unwrap();
            let err = (solved.as_vector() - &x).amax();
            assert!(err < 1e-6, "{name}: {err:e}");
        }
    }
}

#[test]
fn singularity_metric_basics() {
    assert_eq!(singularity_metric(&DMatrix::identity(4, 4)), 1.0);
    let rank1 = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 4.0]);
    assert!(singularity_metric(&rank1) < 1e-12);
}

#[test]
fn nose_is_near_singular() {
    let model = parse_case(cases::IEEE14).unwrap();
    let spec = VaryingSpec::ieee14();
    let d = build_direction(&model, &spec, &spec.expand(&[1.0, 0.0]).unwrap()).unwrap();
    let trace = cpf_trace(&model, &InjectionVector::scheduled(&model), &d, &CpfOptions::default()).unwrap();
    let nose = trace.nose.as_ref().unwrap();
    let base = trace.points[0].sigma_min;
    assert!(nose.sigma_min < 1e-3, "{}", nose.sigma_min);
    assert!(nose.sigma_min < 1e-3 * base);
    assert!(nose.sigma_min < 1e-2 * base);

    // σ_min falls steadily over the upper half of the branch; the λ-max
    // sample itself may already sit past the nose
    let k = trace
        .points
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.lambda.total_cmp(&b.1.lambda))
        .unwrap()
        .0;
    let half = trace.points[k].lambda / 2.0;
    let upper: Vec<_> = trace.points[..k].iter().filter(|p| p.lambda >= half).collect();
    assert!(upper.len() >= 5);
    assert!(upper.windows(2).all(|w| w[1].sigma_min < w[0].sigma_min));
    assert!(upper.last().unwrap().sigma_min < 0.5 * base);
}
