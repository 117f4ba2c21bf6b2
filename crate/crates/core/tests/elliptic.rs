use std::time::Instant;

use icvi_core::grid::AxiGrid;
use icvi_core::physics::{jacobi_solve_values, BoundarySpec, Face, Stencil, StencilMode};
use proptest::prelude::*;

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
    }
    sum
}

fn solve(grid: &AxiGrid, bc: BoundarySpec, d: f64, ks: f64) -> Vec<f64> {
    let s = Stencil::new(grid, &bc, StencilMode::Literal).unwrap();
    let n = grid.len();
    let (c, res, _) =
        jacobi_solve_values(&s, &vec![d; n], &[ks], &vec![0.0; n], 1e-11, 400_000, 0).unwrap();
    assert!(res <= 1e-11, "not converged: {res}");
    c
}

#[test]
fn planar_slab_matches_cosh_profile() {
    let t0 = Instant::now();
    // half thickness L = 0.5, φ = L·√(KS/D) = 1
    let grid = AxiGrid::new(1.0, 1.0, 4, 129).unwrap();
    let bc = BoundarySpec {
        outer: Face::ZeroFlux,
        top: Face::Dirichlet(1.0),
        bottom: Face::Dirichlet(1.0),
    };
    let c = solve(&grid, bc, 1.0, 4.0);
    let mid = c[grid.index(1, 64)];
    let want = 1.0 / 1f64.cosh();
    assert!((mid - want).abs() / want < 0.01, "{mid} vs {want}");
    assert!((mid - want).abs() / want < 1e-3);
    // radially uniform
    assert!((c[grid.index(0, 64)] - c[grid.index(3, 64)]).abs() < 1e-9);
    assert!(t0.elapsed().as_secs_f64() < 1.0, "{:?}", t0.elapsed());
}

#[test]
fn radial_cylinder_matches_bessel_profile() {
    let t0 = Instant::now();
    let grid = AxiGrid::new(1.0, 0.1, 128, 4).unwrap();
    let bc = BoundarySpec {
        outer: Face::Dirichlet(1.0),
        top: Face::ZeroFlux,
        bottom: Face::ZeroFlux,
    };
    let c = solve(&grid, bc, 1.0, 4.0);
    let centre = c[grid.index(0, 1)];
    let want = 1.0 / bessel_i0(2.0);
    assert!((want - 0.4387).abs() < 1e-4);
    assert!((centre - want).abs() / want < 0.01, "{centre} vs {want}");
    for i in (0..128).step_by(16) {
        let r = grid.r_centers()[i];
        let exact = bessel_i0(2.0 * r) / bessel_i0(2.0);
        assert!((c[grid.index(i, 2)] - exact).abs() < 2e-3, "r = {r}");
    }
    assert!(t0.elapsed().as_secs_f64() < 1.0, "{:?}", t0.elapsed());
}

#[test]
fn harmonic_with_constant_boundary_is_constant() {
    let grid = AxiGrid::new(0.01, 0.02, 8, 12).unwrap();
    let c = solve(&grid, BoundarySpec::dirichlet(0.37), 1e-4, 0.0);
    assert!(c.iter().all(|v| (v - 0.37).abs() < 1e-9));
}

fn random_problem(seed: u64, n: usize) -> (Vec<f64>, Vec<f64>) {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let d = (0..n).map(|_| rng.gen_range(2e-5..2e-4)).collect();
    let ks = (0..n).map(|_| rng.gen_range(0.0..2.0)).collect();
    (d, ks)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn maximum_principle(seed in 0u64..1000, flux in any::<bool>(), c_bc in 0.01f64..2.0) {
        let grid = AxiGrid::new(0.008, 0.02, 8, 10).unwrap();
        let mode = if flux { StencilMode::Flux } else { StencilMode::Literal };
        let s = Stencil::new(&grid, &BoundarySpec::dirichlet(c_bc), mode).unwrap();
        let (d, ks) = random_problem(seed, grid.len());
        let (c, _, _) = jacobi_solve_values(&s, &d, &ks, &vec![c_bc; grid.len()], 1e-10, 20_000, 0).unwrap();
        for v in c {
            prop_assert!(v >= 0.0 && v <= c_bc * (1.0 + 1e-12));
        }
    }

    #[test]
    fn ratio_invariance(seed in 0u64..1000, scale in 0.1f64..10.0) {
        let grid = AxiGrid::new(0.008, 0.02, 8, 10).unwrap();
        let s = Stencil::new(&grid, &BoundarySpec::dirichlet(0.15), StencilMode::Literal).unwrap();
        let (d, ks) = random_problem(seed, grid.len());
        let d2: Vec<f64> = d.iter().map(|v| v * scale).collect();
        let ks2: Vec<f64> = ks.iter().map(|v| v * scale).collect();
        let init = vec![0.15; grid.len()];
        let (a, _, _) = jacobi_solve_values(&s, &d, &ks, &init, 1e-12, 50_000, 0).unwrap();
        let (b, _, _) = jacobi_solve_values(&s, &d2, &ks2, &init, 1e-12, 50_000, 0).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9 * 0.15);
        }
    }
}
