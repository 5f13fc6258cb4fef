use invforge::numerics::SymMatrix;
use invforge::sos::QuadraticPolynomial;
use invforge::synthesis::{run, LinearSystem, SynthesisConfig, SynthesisStatus};
use invforge::verify::{
    check_containment, check_control_bound, check_invariance_condition, check_relaxed_conditions,
};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_system(rng: &mut ChaCha8Rng) -> (LinearSystem, QuadraticPolynomial) {
    let n = rng.random_range(2..=3);
    let m = rng.random_range(1..=2);
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let b = DMatrix::from_fn(n, m, |_, _| rng.random_range(-1.0..1.0));
    let sys = LinearSystem::new(a, b, rng.random_range(0.5..3.0)).unwrap();
    let d: Vec<f64> = (0..n).map(|_| -rng.random_range(0.5..2.0)).collect();
    let lin = if rng.random_bool(0.5) {
        DVector::from_fn(n, |_, _| rng.random_range(-0.3..0.3))
    } else {
        DVector::zeros(n)
    };
    let s = QuadraticPolynomial::new(SymMatrix::from_diagonal(&d), lin, 1.0).unwrap();
    (sys, s)
}

#[test]
fn feasible_reports_pass_every_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = SynthesisConfig::default();
    let mut feasible = 0;
    for _ in 0..12 {
        let (sys, s) = random_system(&mut rng);
        let r = run(&sys, &s, &cfg).unwrap();
        for rec in &r.history {
            if let Some(tr) = rec.trace_p {
                assert!((tr - sys.n() as f64).abs() <= 1e-7);
            }
            if let (Some(t), Some(cf)) = (rec.zeta_sq, rec.zeta_sq_closed_form) {
                assert!((t - cf).abs() <= 1e-6 * cf, "{t} vs {cf}");
            }
        }
        // the ζ sequence of the alternation; l must not drop while it rises
        let alt: Vec<_> = r
            .history
            .iter()
            .filter(|h| h.kind == "alternation" && h.l.is_some())
            .collect();
        let zeta_up = alt.windows(2).all(|w| w[1].zeta >= w[0].zeta);
        if zeta_up {
            for w in alt.windows(2) {
                assert!(w[1].l.unwrap() >= w[0].l.unwrap() - 1e-7);
            }
        }
        if r.status != SynthesisStatus::Feasible {
            assert!(r.certificate.is_none());
            continue;
        }
        feasible += 1;
        let c = r.certificate.unwrap();
        let p = &c.ellipsoid.p;
        let z = c.controller.zeta;
        assert!(check_invariance_condition(&sys, p, z, 1e-6).unwrap());
        assert!(check_containment(&c.ellipsoid, &s, 1e-6).unwrap());
        assert!(check_control_bound(&c.ellipsoid, &c.controller, &sys, 1e-6).unwrap());
        assert!(check_relaxed_conditions(&sys, p, &c.witness.phat, z, 1e-6).unwrap());
        let expected = (sys.b.transpose() * p.as_matrix()) * -z;
        assert!((&expected - &c.controller.k).amax() <= 1e-12 * expected.amax().max(1e-300));
    }
    assert!(feasible > 0);
}
