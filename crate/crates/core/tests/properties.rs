use proptest::prelude::*;
use rand::Rng;

use kraichnan_core::covariance::{CovarianceSpec, Family};
use kraichnan_core::fieldsynth::{fourier_eval, Environment};
use kraichnan_core::grid::Grid;
use kraichnan_core::gridspde::{default_time_step, DensityField, SpdeSolver};
use kraichnan_core::io::{read_dump, write_density};
use kraichnan_core::rng::{Purpose, RngStream};
use kraichnan_core::stats::{jackknife, mean_se, ols};

fn scalar_1d() -> (CovarianceSpec, Grid) {
    let spec = CovarianceSpec::default_scalar();
    let grid = Grid::for_spec(&spec).unwrap();
    (spec, grid)
}

fn positive_field(grid: Grid, seed: u64) -> DensityField {
    let mut rng = RngStream::new(seed, 0, Purpose::Other(7)).at(0, 0);
    let values = (0..grid.len()).map(|_| rng.random_range(0.1..2.0)).collect();
    DensityField::new(grid, values, 0.0).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn flat_index_round_trips(dim in 1usize..=3, log_n in 2u32..5, raw in 0usize..10_000) {
        let grid = Grid::new(dim, 1 << log_n, 1.0).unwrap();
        let flat = raw % grid.len();
        let idx = grid.multi_index(flat);
        prop_assert_eq!(grid.flat_index(&idx[..dim]), flat);
        let negated = grid.negated(grid.negated(flat));
        prop_assert_eq!(negated, flat);
    }

    #[test]
    fn shifts_compose_and_invert(log_n in 2u32..5, raw in 0usize..1000, a in -20i64..20, b in -20i64..20) {
        let grid = Grid::new(2, 1 << log_n, 1.0).unwrap();
        let flat = raw % grid.len();
        let there = grid.shifted(flat, &[a, b]);
        prop_assert_eq!(grid.shifted(there, &[-a, -b]), flat);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), replica in 0u64..100, lane in 0u64..100, slot in -50i64..50) {
        let s = RngStream::new(seed, replica, Purpose::Environment);
        let x: [u64; 4] = s.at(lane, slot).random();
        let y: [u64; 4] = s.at(lane, slot).random();
        prop_assert_eq!(x, y);
        let z: [u64; 4] = s.at(lane, slot + 1).random();
        prop_assert_ne!(x, z);
        let w: [u64; 4] = s.with_purpose(Purpose::Molecular).at(lane, slot).random();
        prop_assert_ne!(x, w);
    }

    #[test]
    fn ols_recovers_exact_lines(slope in -5.0f64..5.0, intercept in -5.0f64..5.0, n in 3usize..20) {
        let x: Vec<f64> = (0..n).map(|i| i as f64 * 0.7 - 1.0).collect();
        let y: Vec<f64> = x.iter().map(|v| intercept + slope * v).collect();
        let fit = ols(&x, &y).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.intercept - intercept).abs() < 1e-9);
        prop_assert!(fit.slope_se < 1e-8);
    }

    #[test]
    fn jackknife_of_mean_matches_standard_error(xs in prop::collection::vec(-10.0f64..10.0, 3..40)) {
        let groups: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let jk = jackknife(&groups, |m| m[0]).unwrap();
        let plain = mean_se(&xs);
        prop_assert!((jk.value - plain.value).abs() < 1e-12);
        prop_assert!((jk.se - plain.se).abs() <= 1e-9 * (1.0 + plain.se));
    }

    #[test]
    fn density_dump_round_trips(log_n in 2u32..6, time in 0.0f64..100.0, seed in any::<u64>()) {
        let grid = Grid::new(1, 1 << log_n, 3.0).unwrap();
        let u = positive_field(grid, seed);
        let u = DensityField::new(grid, u.values, time).unwrap();
        let mut buf = Vec::new();
        write_density(&mut buf, &u).unwrap();
        let back = read_dump(&mut buf.as_slice()).unwrap();
        prop_assert_eq!(back.scalar, time);
        prop_assert_eq!(&back.components[0], &u.values);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn quenched_step_conserves_mass(seed in any::<u64>(), slot in 0i64..1000) {
        let (spec, grid) = scalar_1d();
        let dt = default_time_step(&spec, &grid);
        let mut env = Environment::new(&spec, &grid, dt, seed, 0).unwrap();
        let mut solver = SpdeSolver::new(&spec, &grid, dt).unwrap();
        let mut u = positive_field(grid, seed ^ 1);
        let before = u.mass();
        for s in slot..slot + 5 {
            solver.step(&mut u, &env.increment(s)).unwrap();
        }
        prop_assert!((u.mass() - before).abs() <= 1e-12 * before);
    }

    #[test]
    fn quenched_step_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        let (spec, grid) = scalar_1d();
        let dt = default_time_step(&spec, &grid);
        let mut env = Environment::new(&spec, &grid, dt, seed, 0).unwrap();
        let inc = env.increment(0);
        let mut solver = SpdeSolver::new(&spec, &grid, dt).unwrap();
        let u = positive_field(grid, seed ^ 2);
        let v = positive_field(grid, seed ^ 3);
        let combo: Vec<f64> = u.values.iter().zip(&v.values).map(|(x, y)| a * x + b * y).collect();
        let mut w = DensityField::new(grid, combo, 0.0).unwrap();
        let (mut u1, mut v1) = (u.clone(), v.clone());
        solver.step(&mut u1, &inc).unwrap();
        solver.step(&mut v1, &inc).unwrap();
        solver.step(&mut w, &inc).unwrap();
        for i in 0..grid.len() {
            let expect = a * u1.values[i] + b * v1.values[i];
            prop_assert!((w.values[i] - expect).abs() < 1e-12 * (1.0 + expect.abs()));
        }
    }

    #[test]
    fn fourier_interpolant_hits_nodes(seed in any::<u64>(), slot in 0i64..100) {
        let (spec, grid) = scalar_1d();
        let mut env = Environment::new(&spec, &grid, default_time_step(&spec, &grid), seed, 0).unwrap();
        let inc = env.increment(slot);
        let scale = inc.component(0).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut out = [0.0];
        for node in (0..grid.len()).step_by(7) {
            let x = grid.position(node);
            fourier_eval(&grid, inc.spectrum(), &x[..1], &mut out);
            prop_assert!((out[0] - inc.component(0)[node]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn incompressible_increments_are_divergence_free(seed in any::<u64>(), slot in 0i64..100) {
        let spec = CovarianceSpec::new(2, 1.0, Family::Incompressible, 0.5, 1.0).unwrap();
        let grid = Grid::for_spec(&spec).unwrap();
        let mut env = Environment::new(&spec, &grid, default_time_step(&spec, &grid), seed, 0).unwrap();
        let inc = env.increment(slot);
        let scale = inc.components().iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
        let div = inc.spectral_divergence();
        prop_assert!(div.iter().all(|v| v.abs() <= 1e-12 * scale.max(1.0)));
    }
}
