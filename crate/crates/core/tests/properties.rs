use proptest::prelude::*;

use regkit::lcurve::{corner, LCurve};
use regkit::{
    inner_product, norm_l2, solve_dense_oracle, solve_quadratic, GridFunction, OperatorHandle,
    Penalizer, Problem, SolverOptions, StructuralField,
};

fn image(w: usize, h: usize, seed: &[f64]) -> GridFunction {
    GridFunction::from_fn(w, h, |r, c| seed[(r * w + c) % seed.len()] + 0.01 * (r as f64 - c as f64))
}

fn values() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 16..48)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn operators_are_adjoint_on_random_shapes(
        w in 2usize..9, h in 2usize..9, kappa in 0.3f64..8.0, radius in 1usize..4, c in 0.2f64..20.0,
        xs in values(), ys in values(), gs in values(),
    ) {
        let gamma = image(w, h, &gs);
        let ops = [
            OperatorHandle::gaussian_blur(w, h, kappa, radius).unwrap(),
            OperatorHandle::gradient(w, h).unwrap(),
            OperatorHandle::structural(&StructuralField::new(gamma, c).unwrap()).unwrap(),
        ];
        for op in &ops {
            let x = image(w, h, &xs);
            let out = op.output_shape();
            let y = GridFunction::new(out, (0..out.len()).map(|i| ys[i % ys.len()] * (1.0 + i as f64 * 1e-3)).collect()).unwrap();
            let ax = op.apply(&x).unwrap();
            let aty = op.apply_adjoint(&y).unwrap();
            let gap = (inner_product(&ax, &y).unwrap() - inner_product(&x, &aty).unwrap()).abs();
            prop_assert!(gap <= 1e-10 * (norm_l2(&ax) * norm_l2(&y)).max(1e-300));
        }
    }

    #[test]
    fn structural_operator_is_a_contraction_of_the_gradient_for_c_at_least_one(
        w in 2usize..8, h in 2usize..8, c in 1.0f64..30.0, xs in values(), gs in values(),
    ) {
        let field = StructuralField::new(image(w, h, &gs).scaled(3.0), c).unwrap();
        let s = OperatorHandle::structural(&field).unwrap();
        let g = OperatorHandle::gradient(w, h).unwrap();
        let x = image(w, h, &xs);
        prop_assert!(norm_l2(&s.apply(&x).unwrap()) <= norm_l2(&g.apply(&x).unwrap()) * (1.0 + 1e-12));
    }

    #[test]
    fn cg_matches_dense_oracle(
        w in 2usize..7, h in 2usize..7, alpha in 1e-3f64..10.0, kappa in 1.0f64..6.0, ys in values(),
    ) {
        let p = Problem::new(
            OperatorHandle::gaussian_blur(w, h, kappa, 2).unwrap(),
            image(w, h, &ys),
            Penalizer::squared_norm(OperatorHandle::gradient(w, h).unwrap()),
            alpha,
        ).unwrap();
        let opts = SolverOptions { cg_tolerance: 1e-13, ..SolverOptions::default() };
        let a = solve_quadratic(&p, &opts).unwrap().minimizer;
        let b = solve_dense_oracle(&p).unwrap();
        prop_assert!(a.distance(&b).unwrap() <= 1e-8 * norm_l2(&b).max(1e-12));
    }

    #[test]
    fn corner_ignores_point_order(
        pts in prop::collection::vec((0.01f64..1.0, 0.01f64..1.0), 5..12), shift in 0usize..12,
    ) {
        // monotone columns: cumulative sums give increasing residuals and
        // decreasing penalties in α
        let n = pts.len();
        let mut res = Vec::with_capacity(n);
        let mut pen = Vec::with_capacity(n);
        let (mut r, mut p) = (0.0, 0.0);
        for (dr, dp) in &pts {
            r += dr;
            p += dp;
            res.push(r.exp());
            pen.push((-p).exp());
        }
        let alphas: Vec<f64> = (0..n).map(|i| 10f64.powi(i as i32 - 6)).collect();
        let sorted = LCurve::from_points(alphas.clone(), res.clone(), pen.clone()).unwrap();
        let k = shift % n;
        let rot = |v: &Vec<f64>| { let mut v = v.clone(); v.rotate_left(k); v };
        let rotated = LCurve::from_points(rot(&alphas), rot(&res), rot(&pen)).unwrap();
        prop_assert_eq!(corner(&sorted).ok().map(|c| c.0), corner(&rotated).ok().map(|c| c.0));
    }
}
