use critical_affine::exterior::{compound, subsets, wedge_norm_check};
use critical_affine::linalg::{operator_norm, singular_values, LogScaledMatrix, Matrix, Vector};
use critical_affine::projective::{
    act, canonicalize, delta, hennion_distance, sine_distance, sine_distance_2d, SimplexPoint,
};
use critical_affine::simulation::DirectionChain;
use nalgebra::DMatrix;
use proptest::prelude::*;

fn to_nalgebra(m: &Matrix) -> DMatrix<f64> {
    DMatrix::from_fn(m.dim(), m.dim(), |i, j| m[(i, j)])
}

fn matrix(d: usize) -> impl Strategy<Value = Matrix> {
    prop::collection::vec(-3.0f64..3.0, d * d).prop_map(move |e| Matrix::from_row_major(d, &e).unwrap())
}

fn sized_matrix() -> impl Strategy<Value = Matrix> {
    (1usize..=4).prop_flat_map(matrix)
}

fn unit(d: usize) -> impl Strategy<Value = Vector> {
    prop::collection::vec(-1.0f64..1.0, d)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(|v| {
            let v = Vector::from_slice(&v);
            v.scale(1.0 / v.norm())
        })
}

/// Determinant by cofactor expansion, independent of the library's LU.
fn cofactor_det(m: &[Vec<f64>]) -> f64 {
    let n = m.len();
    if n == 1 {
        return m[0][0];
    }
    (0..n)
        .map(|j| {
            let minor: Vec<Vec<f64>> = m[1..]
                .iter()
                .map(|row| row.iter().enumerate().filter(|(k, _)| *k != j).map(|(_, x)| *x).collect())
                .collect();
            let sign = if j % 2 == 0 { 1.0 } else { -1.0 };
            sign * m[0][j] * cofactor_det(&minor)
        })
        .sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn singular_values_match_nalgebra(a in sized_matrix()) {
        let ours = singular_values(&a);
        let mut theirs: Vec<f64> = to_nalgebra(&a).singular_values().iter().copied().collect();
        theirs.sort_by(|x, y| y.partial_cmp(x).unwrap());
        let scale = theirs[0].max(1e-300);
        for (s, t) in ours.iter().zip(&theirs) {
            prop_assert!((s - t).abs() <= 1e-10 * scale, "{ours:?} vs {theirs:?}");
        }
        prop_assert!((operator_norm(&a) - theirs[0]).abs() <= 1e-10 * scale);
    }

    #[test]
    fn compound_entries_are_minors(a in sized_matrix(), r in 1usize..=4) {
        let d = a.dim();
        prop_assume!(r <= d);
        let c = compound(&a, r).unwrap();
        let idx = subsets(d, r);
        prop_assert_eq!(c.dim(), idx.len());
        let rows = a.to_rows();
        for (p, ri) in idx.iter().enumerate() {
            for (q, cj) in idx.iter().enumerate() {
                let sub: Vec<Vec<f64>> = ri.iter().map(|&i| cj.iter().map(|&j| rows[i][j]).collect()).collect();
                let want = cofactor_det(&sub);
                prop_assert!((c[(p, q)] - want).abs() <= 1e-10 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn compound_is_multiplicative(a in matrix(4), b in matrix(4), r in 1usize..=4) {
        let lhs = compound(&a.mul(&b), r).unwrap();
        let rhs = compound(&a, r).unwrap().mul(&compound(&b, r).unwrap());
        let scale = 1.0 + rhs.max_abs();
        prop_assert!(lhs.sub(&rhs).max_abs() <= 1e-10 * scale);
    }

    #[test]
    fn wedge_norm_is_singular_product(a in sized_matrix(), r in 1usize..=4) {
        prop_assume!(r <= a.dim());
        let c = wedge_norm_check(&a, r).unwrap();
        prop_assert!(c.relative_error <= 1e-8, "{c:?}");
    }

    #[test]
    fn sine_distance_is_a_metric(u in unit(3), v in unit(3), w in unit(3)) {
        let (uv, vw, uw) = (sine_distance(&u, &v), sine_distance(&v, &w), sine_distance(&u, &w));
        prop_assert!((0.0..=1.0).contains(&uv));
        prop_assert!((uv - sine_distance(&v, &u)).abs() <= 1e-12);
        prop_assert!(sine_distance(&u, &u) <= 1e-15);
        prop_assert!(sine_distance(&u, &u.scale(-1.0)) <= 1e-15);
        prop_assert!(uw <= uv + vw + 1e-12);
        let p = canonicalize(&u);
        let q = canonicalize(&v.scale(-2.5));
        prop_assert!((delta(&p, &q).unwrap() - uv).abs() <= 1e-12);
    }

    #[test]
    fn planar_sine_agrees_with_determinant(u in unit(2), v in unit(2)) {
        prop_assert!((sine_distance(&u, &v) - sine_distance_2d(&u, &v)).abs() <= 1e-12);
    }

    #[test]
    fn log_gain_is_controlled_by_distance(a in matrix(3), u in unit(3), v in unit(3)) {
        let av = a.mul_vec(&v).norm();
        let au = a.mul_vec(&u).norm();
        prop_assume!(av > 1e-8);
        let lhs = (au / av).ln().max(0.0);
        let rhs = std::f64::consts::SQRT_2 * operator_norm(&a) / av * sine_distance(&u, &v);
        prop_assert!(lhs <= rhs * (1.0 + 1e-10) + 1e-14);
    }

    #[test]
    fn log_gains_form_a_cocycle(mats in prop::collection::vec(matrix(3), 1..12), v in unit(3)) {
        let start = canonicalize(&v);
        let mut chain = DirectionChain::new(&start);
        let mut product = Matrix::identity(3);
        for m in &mats {
            chain.step(m);
            product = m.mul(&product);
        }
        let (end, direct) = act(&product, &start);
        prop_assume!(direct.is_finite() && direct > -30.0);
        prop_assert!((chain.log_gain() - direct).abs() <= 1e-8 * (1.0 + direct.abs()));
        prop_assert!(delta(&chain.point(), &end).unwrap() <= 1e-6);
    }

    #[test]
    fn log_scaled_products_match_direct(mats in prop::collection::vec(matrix(3), 1..20)) {
        let mut direct = Matrix::identity(3);
        let mut scaled = LogScaledMatrix::identity(3);
        for m in &mats {
            direct = m.mul(&direct);
            scaled.left_multiply(m);
        }
        let err = scaled.to_matrix().sub(&direct).max_abs();
        prop_assert!(err <= 1e-9 * (1.0 + direct.max_abs()));
    }

    #[test]
    fn hennion_is_a_bounded_symmetric_metric(
        u in prop::collection::vec(0.01f64..1.0, 3),
        v in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let p = SimplexPoint::new(&Vector::from_slice(&u)).unwrap();
        let q = SimplexPoint::new(&Vector::from_slice(&v)).unwrap();
        let h = hennion_distance(&p, &q);
        prop_assert!((0.0..=1.0).contains(&h));
        prop_assert!((h - hennion_distance(&q, &p)).abs() <= 1e-14);
        prop_assert!(hennion_distance(&p, &p) <= 1e-14);
        // sine distance is dominated by twice the Hennion distance
        prop_assert!(sine_distance(p.vector(), q.vector()) <= 2.0 * h + 1e-12);
    }

    #[test]
    fn positive_matrices_contract_hennion(
        e in prop::collection::vec(0.05f64..2.0, 9),
        u in prop::collection::vec(0.01f64..1.0, 3),
        v in prop::collection::vec(0.01f64..1.0, 3),
    ) {
        let a = Matrix::from_row_major(3, &e).unwrap();
        let p = SimplexPoint::new(&Vector::from_slice(&u)).unwrap();
        let q = SimplexPoint::new(&Vector::from_slice(&v)).unwrap();
        let (pa, _) = p.act(&a).unwrap();
        let (qa, _) = q.act(&a).unwrap();
        prop_assert!(hennion_distance(&pa, &qa) <= hennion_distance(&p, &q) + 1e-12);
    }
}

#[test]
fn determinant_matches_cofactor_oracle() {
    let rows = vec![
        vec![2.0, -1.0, 0.5, 3.0],
        vec![1.0, 4.0, -2.0, 0.0],
        vec![0.0, 1.5, 1.0, -1.0],
        vec![3.0, 0.0, 2.0, 1.0],
    ];
    let m = Matrix::from_rows(&rows).unwrap();
    let want = cofactor_det(&rows);
    assert!((m.determinant() - want).abs() <= 1e-12 * want.abs());
    let theirs = to_nalgebra(&m).determinant();
    assert!((want - theirs).abs() <= 1e-12 * want.abs());
}
