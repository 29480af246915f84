use std::sync::OnceLock;

use maxrb::control::{ControlBox, ProjectionOptions};
use maxrb::estimator::certify;
use maxrb::model::{benchmark_problem, Setup};
use maxrb::problem::ConstantsLedger;
use proptest::prelude::*;

fn setup() -> &'static Setup<f64> {
    static S: OnceLock<Setup<f64>> = OnceLock::new();
    S.get_or_init(|| Setup::structured(benchmark_problem().unwrap(), 2).unwrap())
}

fn ledger() -> ConstantsLedger {
    let s = setup();
    ConstantsLedger::build(&s.problem.data, 2.0, 0.5, s.omega_volume(), 1, 1).unwrap()
}

fn mu() -> impl Strategy<Value = Vec<f64>> {
    (0.1..=1.0f64, 0.1..=1.0f64).prop_map(|(a, b)| vec![a, b])
}

fn control(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, len)
}

fn n_control() -> usize {
    3 * setup().truth.spaces.n_tet()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn admissible_projection_is_feasible_idempotent_and_nonexpansive(
        mu in mu(),
        a in control(n_control()),
        b in control(n_control()),
    ) {
        let m = setup().truth_model(&mu).unwrap();
        let geo = &m.at.control;
        let bx = &m.control_box;
        let opts = ProjectionOptions::default();
        let pa = geo.project_admissible(&a, bx, &opts).into_result().unwrap();
        let pb = geo.project_admissible(&b, bx, &opts).into_result().unwrap();
        prop_assert!(bx.contains(&pa));
        prop_assert!(geo.div_residual(&pa) <= 1e-9);
        let ppa = geo.project_admissible(&pa, bx, &opts).into_result().unwrap();
        prop_assert!(geo.dist(&pa, &ppa) <= 1e-10);
        prop_assert!(geo.dist(&pa, &pb) <= geo.dist(&a, &b) * (1.0 + 1e-9) + 1e-9);
    }

    #[test]
    fn projection_is_closest_among_admissible_samples(mu in mu(), w in control(n_control()), v in control(n_control())) {
        let m = setup().truth_model(&mu).unwrap();
        let geo = &m.at.control;
        let opts = ProjectionOptions::default();
        let p = geo.project_admissible(&w, &m.control_box, &opts).into_result().unwrap();
        let q = geo.project_admissible(&v, &m.control_box, &opts).into_result().unwrap();
        prop_assert!(geo.dist(&w, &p) <= geo.dist(&w, &q) + 1e-9);
    }

    #[test]
    fn unbounded_projection_is_the_divergence_free_projection(mu in mu(), w in control(n_control())) {
        let m = setup().truth_model(&mu).unwrap();
        let geo = &m.at.control;
        let p = geo
            .project_admissible(&w, &ControlBox::unbounded(), &ProjectionOptions::default())
            .into_result()
            .unwrap();
        prop_assert!(geo.dist(&p, &geo.project_divfree(&w)) <= 1e-10);
    }

    #[test]
    fn state_is_linear_in_the_control(mu in mu(), a in control(n_control()), b in control(n_control()), s in -2.0..2.0f64) {
        let at = &setup().truth_model(&mu).unwrap().at;
        let ea = at.solve_state(&a).unwrap();
        let eb = at.solve_state(&b).unwrap();
        let e0 = at.solve_state(&vec![0.0; a.len()]).unwrap();
        let mix: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + s * y).collect();
        let em = at.solve_state(&mix).unwrap();
        let scale = ea.iter().chain(&eb).fold(1.0f64, |m, x| m.max(x.abs()));
        for i in 0..em.len() {
            // affine in u because of the charge term
            let want = ea[i] + s * (eb[i] - e0[i]);
            prop_assert!((em[i] - want).abs() <= 1e-9 * scale);
        }
    }

    #[test]
    fn certificate_is_homogeneous_and_monotone(
        mu in mu(),
        r_e in 0.0..1.0f64,
        r_f in 0.0..1.0f64,
        t in 0.0..10.0f64,
        u_norm in 0.1..10.0f64,
    ) {
        let l = ledger();
        let c = certify(&l, &mu, r_e, r_f, u_norm);
        let ct = certify(&l, &mu, t * r_e, t * r_f, u_norm);
        let tol = 1e-12 * (1.0 + c.delta_ab * t);
        prop_assert!((ct.delta_ab - t * c.delta_ab).abs() <= tol);
        prop_assert!(c.delta_ab >= 0.0 && c.delta_j >= 0.0);
        prop_assert!(c.lower <= c.upper);
        let bigger = certify(&l, &mu, r_e * 1.5, r_f * 1.5, u_norm);
        prop_assert!(bigger.delta_ab >= c.delta_ab);
        prop_assert!(bigger.delta_j >= c.delta_j);
        if let Some(re) = c.delta_re {
            prop_assert!(re <= 1.0 + 1e-12);
            prop_assert!((re - 2.0 * c.delta_ab / u_norm).abs() <= 1e-12);
        }
    }

    #[test]
    fn grid_points_lie_in_the_domain(nx in 1usize..6, ny in 1usize..6) {
        let d = benchmark_problem().unwrap().domain;
        let g = d.grid(&[nx, ny]).unwrap();
        prop_assert_eq!(g.len(), nx * ny);
        prop_assert!(g.iter().all(|m| d.contains(m)));
    }
}

#[test]
fn zero_residuals_certify_exactly() {
    let c = certify(&ledger(), &[0.5, 0.5], 0.0, 0.0, 1.0);
    assert_eq!(c.delta_ab, 0.0);
    assert_eq!(c.delta_j, 0.0);
    assert_eq!(c.upper, 0.0);
}
