use fkpursuit::dictionary::{BlockDictionary, WavenumberGrid};
use fkpursuit::eval::{gen_training_supports, support_metrics, EnvSampler};
use fkpursuit::math::norm_sqr;
use fkpursuit::pursuit::{recompute_residual, run, run_observed, ModelHyper, SolverOptions};
use fkpursuit::rbm::RbmParams;
use fkpursuit::waveguide::{pekeris_residual, pekeris_wavenumbers, wavenumbers, ArrayGeometry, EnvironmentSpec};
use num_complex::Complex64;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn complex_vec(seed: u64, len: usize) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    (0..len)
        .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
        .collect()
}

fn prior(seed: u64, nv: usize, nh: usize) -> RbmParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.8).unwrap();
    RbmParams {
        hidden_bias: (0..nh).map(|_| normal.sample(&mut rng)).collect(),
        visible_bias: (0..nv).map(|_| normal.sample(&mut rng) - 1.0).collect(),
        weights: (0..nv * nh).map(|_| normal.sample(&mut rng)).collect(),
    }
}

fn dictionary(l: usize, n: usize, f: usize, spacing: f64, first: f64) -> BlockDictionary {
    let grid = WavenumberGrid::new(0.1, 0.4, n).unwrap();
    let freqs: Vec<f64> = (0..f).map(|i| 30.0 + 7.0 * i as f64).collect();
    BlockDictionary::build(grid, &ArrayGeometry::uniform(first, spacing, l, 30.0), &freqs).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn adjoint_identity(l in 1usize..9, n in 2usize..8, f in 1usize..5, spacing in 1.0f64..10.0, seed in any::<u64>()) {
        let d = dictionary(l, n, f, spacing, 100.0);
        let z = complex_vec(seed, d.n_coeffs());
        let y = complex_vec(seed ^ 1, d.n_obs());
        let lhs: Complex64 = d.apply(&z).unwrap().iter().zip(&y).map(|(a, b)| a.conj() * b).sum();
        let rhs: Complex64 = z.iter().zip(d.adjoint_apply(&y).unwrap()).map(|(a, b)| a.conj() * b).sum();
        let scale = (norm_sqr(&z) * norm_sqr(&y)).sqrt() * (l as f64).sqrt();
        prop_assert!((lhs - rhs).norm() <= 1e-12 * scale.max(1.0));
    }

    #[test]
    fn operator_matches_dense_block_diagonal(l in 1usize..6, n in 2usize..9, f in 1usize..8, seed in any::<u64>()) {
        prop_assume!(n * f <= 64);
        let d = dictionary(l, n, f, 3.0, 50.0);
        let z = complex_vec(seed, n * f);
        let y = complex_vec(seed ^ 2, l * f);
        let grid = d.grid().points();
        let entry = |row: usize, col: usize| {
            let (fr, lr) = (row / l, row % l);
            let (fc, kc) = (col / n, col % n);
            if fr == fc { Complex64::from_polar(1.0, d.ranges()[lr] * grid[kc]) } else { Complex64::new(0.0, 0.0) }
        };
        let fwd = d.apply(&z).unwrap();
        for row in 0..l * f {
            let dense: Complex64 = (0..n * f).map(|col| entry(row, col) * z[col]).sum();
            prop_assert!((dense - fwd[row]).norm() < 1e-10);
        }
        let adj = d.adjoint_apply(&y).unwrap();
        for col in 0..n * f {
            let dense: Complex64 = (0..l * f).map(|row| entry(row, col).conj() * y[row]).sum();
            prop_assert!((dense - adj[col]).norm() < 1e-10);
        }
        for k in 0..n * f {
            let mut e = vec![Complex64::new(0.0, 0.0); n * f];
            e[k] = Complex64::new(1.0, 0.0);
            prop_assert!((norm_sqr(&d.apply(&e).unwrap()) - l as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn pekeris_roots_satisfy_dispersion(
        depth in 50.0f64..150.0,
        c2 in 1520.0f64..1900.0,
        rho2 in 1100.0f64..2200.0,
        freq in 20.0f64..120.0,
    ) {
        let env = EnvironmentSpec::pekeris(depth, 1500.0, c2, 1000.0, rho2);
        for k in pekeris_wavenumbers(&env, freq).unwrap() {
            prop_assert!(pekeris_residual(&env, freq, k) < 1e-6);
            prop_assert!(k > env.bottom_wavenumber(freq) && k < env.water_wavenumber(freq));
        }
    }

    #[test]
    fn solver_state_invariants(seed in any::<u64>(), nh in 0usize..4, damping in 0.0f64..0.5) {
        let d = dictionary(6, 5, 3, 13.0, 200.0);
        let y = complex_vec(seed, d.n_obs());
        let p = prior(seed ^ 3, d.n_coeffs(), nh);
        let hyper = ModelHyper { sigma_w_sq: 0.3, sigma_x_sq: 1.2 };
        let opts = SolverOptions { max_sweeps: 25, damping, ..SolverOptions::default() };
        let y_inf = y.iter().map(|v| v.norm()).fold(0.0, f64::max);
        let mut ok = true;
        let res = run_observed(&y, &d, &p, &hyper, &opts, |_, state| {
            let fresh = recompute_residual(state, &y, &d).unwrap();
            ok &= state.residual.iter().zip(&fresh).all(|(a, b)| (a - b).norm() < 1e-8 * y_inf);
            ok &= state.qs.iter().chain(&state.qh).all(|q| (0.0..=1.0).contains(q));
        }).unwrap();
        prop_assert!(ok);
        for n in 0..d.n_coeffs() {
            prop_assert_eq!(res.s_hat[n], res.qs[n] > opts.threshold);
            if res.qs[n] == 0.0 {
                prop_assert_eq!(res.z_hat[n], Complex64::new(0.0, 0.0));
            }
        }
        if damping == 0.0 {
            for w in res.free_energy_trace.windows(2) {
                prop_assert!(w[1] <= w[0] + 1e-8);
            }
        }
    }

    #[test]
    fn free_energy_descends_for_random_instances(seed in any::<u64>(), nh in 0usize..5) {
        let d = dictionary(8, 6, 2, 9.0, 150.0);
        let y = complex_vec(seed, d.n_obs());
        let p = prior(seed ^ 4, d.n_coeffs(), nh);
        let hyper = ModelHyper { sigma_w_sq: 0.2, sigma_x_sq: 2.0 };
        let res = run(&y, &d, &p, &hyper, &SolverOptions::default()).unwrap();
        for w in res.free_energy_trace.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-8, "{} -> {}", w[0], w[1]);
        }
    }

    #[test]
    fn joint_scaling_leaves_qs_unchanged(seed in any::<u64>(), lambda in 0.01f64..100.0) {
        let d = dictionary(6, 4, 2, 11.0, 120.0);
        let y = complex_vec(seed, d.n_obs());
        let p = prior(seed ^ 5, d.n_coeffs(), 2);
        let hyper = ModelHyper { sigma_w_sq: 0.4, sigma_x_sq: 1.1 };
        let opts = SolverOptions { max_sweeps: 20, ..SolverOptions::default() };
        let a = run(&y, &d, &p, &hyper, &opts).unwrap();
        let y2: Vec<Complex64> = y.iter().map(|v| v * lambda).collect();
        let h2 = ModelHyper { sigma_w_sq: 0.4 * lambda * lambda, sigma_x_sq: 1.1 * lambda * lambda };
        let b = run(&y2, &d, &p, &h2, &opts).unwrap();
        for (x, z) in a.qs.iter().zip(&b.qs) {
            prop_assert!((x - z).abs() < 1e-10);
        }
        for (x, z) in a.z_hat.iter().zip(&b.z_hat) {
            prop_assert!((x * lambda - z).norm() <= 1e-9 * lambda.max(1.0));
        }
    }

    #[test]
    fn metrics_are_bounded(bits in proptest::collection::vec(any::<(bool, bool)>(), 1..64)) {
        let (a, b): (Vec<bool>, Vec<bool>) = bits.into_iter().unzip();
        let m = support_metrics(&a, &b).unwrap();
        for v in [m.precision, m.recall, m.f1] {
            prop_assert!((0.0..=1.0).contains(&v));
        }
        if m.precision + m.recall == 0.0 {
            prop_assert_eq!(m.f1, 0.0);
        } else {
            prop_assert!((m.f1 - 2.0 * m.precision * m.recall / (m.precision + m.recall)).abs() < 1e-15);
        }
        prop_assert_eq!(m.hamming, m.false_positives + m.false_negatives);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn training_rows_bounded_by_deepest_environment(seed in any::<u64>()) {
        let sampler = EnvSampler {
            depth: [80.0, 120.0],
            water_speed: [1500.0, 1500.0],
            bottom_speed: [1550.0, 1700.0],
            bottom_density: [1300.0, 1900.0],
            water_density: 1000.0,
        };
        let freqs = [40.0, 55.0, 70.0];
        let grid = WavenumberGrid::new(0.12, 0.32, 80).unwrap();
        let ds = gen_training_supports(&sampler, &freqs, &grid, 16, seed).unwrap();
        // the trapped band is widest for the deepest guide and fastest bottom
        let deepest = EnvironmentSpec::pekeris(120.0, 1500.0, 1700.0, 1000.0, 1900.0);
        let m_max = wavenumbers(&deepest, 70.0).unwrap().len();
        for s in &ds.samples {
            for row in s.chunks(grid.points) {
                prop_assert!(row.iter().filter(|&&b| b).count() <= m_max);
            }
        }
    }
}
