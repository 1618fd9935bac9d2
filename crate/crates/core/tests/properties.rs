use cemdpg::assembly::{assemble_all, OperatorSet};
use cemdpg::coeff::{field_example1, field_example2, CoefficientField, Source};
use cemdpg::mesh::MeshHierarchy;
use cemdpg::solver::{assemble_saddle, error_measures, fine_solve, solve_saddle, trial_field, v_projection, Metric};
use cemdpg::sparse;
use cemdpg::spectral::build_aux_space;
use cemdpg::testspace::{build_test_space, PiMode, PiOperator, TestSpaceOptions};
use faer::Mat;
use proptest::prelude::*;

fn operators(nc: usize, m: usize, second: bool) -> OperatorSet {
    let mesh = MeshHierarchy::new(nc, m).unwrap();
    let field = if second {
        CoefficientField::from_analytic(&mesh, &field_example2())
    } else {
        CoefficientField::from_analytic(&mesh, &field_example1())
    };
    assemble_all(&mesh, &field, &Source::constant(1.0), Default::default()).unwrap()
}

fn vector(n: usize, seed: u64) -> Vec<f64> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn mesh_params() -> impl Strategy<Value = (usize, usize, bool)> {
    (2usize..=4, 2usize..=5, any::<bool>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn s_and_c_are_symmetric((nc, m, second) in mesh_params()) {
        let op = operators(nc, m, second);
        for mat in [&op.s, &op.c, &op.vmat] {
            prop_assert!(sparse::max_abs_asymmetry(mat) <= 1e-12 * sparse::max_abs(mat));
        }
        for cell in &op.cells {
            prop_assert!(sparse::max_abs_asymmetry(&cell.s) <= 1e-12 * sparse::max_abs(&cell.s).max(1e-300));
            prop_assert!(sparse::max_abs_asymmetry(&cell.c) <= 1e-12 * sparse::max_abs(&cell.c));
        }
    }

    #[test]
    fn lumping_preserves_mass((nc, m, second) in mesh_params()) {
        let op = operators(nc, m, second);
        let ones = vec![1.0; op.n_dofs()];
        let full = sparse::bilinear(&op.c, &ones, &ones);
        let lumped: f64 = op.lumped_b.iter().sum();
        prop_assert!((full - lumped).abs() <= 1e-12 * full.abs());
        prop_assert!(op.lumped_b.iter().all(|&b| b > 0.0));
    }

    #[test]
    fn eigenpairs_are_c_orthonormal((nc, m, second) in mesh_params(), j in 1usize..=3) {
        let op = operators(nc, m, second);
        let aux = build_aux_space(&op, j).unwrap();
        for (i, spec) in aux.cells.iter().enumerate() {
            let s = sparse::to_dense(&op.cells[i].s);
            let c = sparse::to_dense(&op.cells[i].c);
            let gram = spec.modes.transpose() * &spec.c_modes;
            let res = &s * &spec.modes;
            for a in 0..j {
                for b in 0..j {
                    let want = if a == b { 1.0 } else { 0.0 };
                    prop_assert!((gram[(a, b)] - want).abs() <= 1e-10);
                }
                let lam = spec.eigenvalues[a];
                let scale = s.norm_max() + lam.abs() * c.norm_max();
                for r in 0..res.nrows() {
                    prop_assert!((res[(r, a)] - lam * spec.c_modes[(r, a)]).abs() <= 1e-9 * scale);
                }
            }
            prop_assert!(spec.eigenvalues.windows(2).all(|w| w[0] <= w[1] + 1e-12));
            prop_assert!(spec.eigenvalues[0].abs() <= 1e-9 * spec.eigenvalues[j].max(1.0));
        }
    }

    #[test]
    fn pi_is_a_c_orthogonal_projection((nc, m, second) in mesh_params(), seed in any::<u64>()) {
        let op = operators(nc, m, second);
        let aux = build_aux_space(&op, 2).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let u = pi.restrict(&vector(op.n_dofs(), seed));
        let v = pi.restrict(&vector(op.n_dofs(), seed ^ 0x5555));
        let pu = pi.apply_broken(&u);
        let pv = pi.apply_broken(&v);
        let ppu = pi.apply_broken(&pu);
        let uu = pi.c_inner(&u, &u);
        let diff: f64 = pu.iter().flatten().zip(ppu.iter().flatten()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale: f64 = pu.iter().flatten().map(|x| x.abs()).fold(0.0, f64::max);
        prop_assert!(diff <= 1e-10 * scale.max(1.0));
        let norm = (uu * pi.c_inner(&v, &v)).sqrt();
        let (a, b, c) = (pi.c_inner(&pu, &v), pi.c_inner(&u, &pv), pi.c_inner(&pu, &pv));
        prop_assert!((a - b).abs() <= 1e-10 * norm);
        prop_assert!((a - c).abs() <= 1e-10 * norm);
        prop_assert!(pi.c_inner(&pu, &pu) <= uu * (1.0 + 1e-10));
    }

    #[test]
    fn projection_beats_random_coefficients((nc, m, second) in mesh_params(), seed in any::<u64>()) {
        let op = operators(nc, m, second);
        let u = fine_solve(&op).unwrap();
        let alpha = v_projection(&op, &u).unwrap();
        let best = error_measures(&op, &u, &trial_field(&op, &alpha), &u).v_error_abs;
        for k in 0..20 {
            let beta: Vec<f64> = alpha
                .iter()
                .zip(vector(alpha.len(), seed.wrapping_add(k)))
                .map(|(a, r)| a + 0.1 * r * a.abs().max(1e-3))
                .collect();
            let other = error_measures(&op, &u, &trial_field(&op, &beta), &u).v_error_abs;
            prop_assert!(other >= best * (1.0 - 1e-12));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn saddle_solution_satisfies_constraint(nc in 3usize..=4, m in 2usize..=4, layers in 1usize..=2, second in any::<bool>()) {
        let op = operators(nc, m, second);
        let aux = build_aux_space(&op, 2).unwrap();
        let pi = PiOperator::new(&op, &aux, PiMode::Plain).unwrap();
        let ws = build_test_space(&pi, TestSpaceOptions { layers, ..Default::default() }).unwrap();
        for metric in [Metric::LumpedC, Metric::FullV] {
            let sys = assemble_saddle(&op, &ws, metric).unwrap();
            let sol = solve_saddle(&sys).unwrap();
            prop_assert_eq!(sol.rank, op.n_trial());
            let w = Mat::from_fn(sol.w.len(), 1, |i, _| sol.w[i]);
            let gtw = sys.g.transpose() * &w;
            let scale = sys.g.norm_l2() * w.norm_l2();
            prop_assert!(gtw.norm_l2() <= 1e-10 * scale.max(f64::MIN_POSITIVE));
            // Petrov–Galerkin error cannot beat the V-best approximation
            let u = fine_solve(&op).unwrap();
            let p = trial_field(&op, &v_projection(&op, &u).unwrap());
            let e = error_measures(&op, &u, &trial_field(&op, &sol.u), &p);
            prop_assert!(e.ratio.unwrap() >= 1.0 - 1e-10);
        }
    }
}
