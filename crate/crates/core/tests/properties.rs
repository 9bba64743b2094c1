use floquet_lab::eigencorr::CorrGrid;
use floquet_lab::eigencorr::{corr_freq_sample, corr_time_sample, Tuple};
use floquet_lab::eth::{
    build_local_observable, dyn_corr_sample, evolve_sample, matrix_elements, DensityMatrix,
    Template,
};
use floquet_lab::haar::{sample_cue_indexed, unitarity_residual};
use floquet_lab::lattice::{
    build_floquet, Boundary, CircuitSpec, NamedSchedule, QuditSpace, ScheduleSpec,
};
use floquet_lab::spectral::{diagonalize, r2_sample, sff_sample, OmegaGrid, SpectralData};
use floquet_lab::theory::{self, Category, Params, PredictGrid, Variant};
use floquet_lab::CMatrix;
use num_complex::Complex64;
use proptest::prelude::*;

fn cue_spectrum(n: usize, seed: u64) -> (CMatrix, SpectralData) {
    let u = sample_cue_indexed(n, seed, 0).unwrap().into_matrix();
    let s = diagonalize(&u).unwrap();
    (u, s)
}

fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

fn chain(sites: usize, q: usize, schedule: NamedSchedule, seed: u64) -> CircuitSpec {
    CircuitSpec::chain(sites, q, Boundary::Open, ScheduleSpec::Named(schedule)).with_seed(seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn cue_samples_are_unitary(n in 1usize..24, seed in any::<u64>(), index in 0u64..1000) {
        let u = sample_cue_indexed(n, seed, index).unwrap();
        prop_assert!(unitarity_residual(u.matrix()) <= 1e-12);
    }

    #[test]
    fn floquet_operators_are_unitary_and_reproducible(
        sites in 2usize..5,
        q in 2usize..4,
        seed in any::<u64>(),
        index in 0u64..100,
    ) {
        let v = chain(sites, q, NamedSchedule::Brickwork, seed).validate().unwrap();
        let a = build_floquet(&v, index).unwrap();
        let b = build_floquet(&v, index).unwrap();
        prop_assert!(unitarity_residual(a.matrix()) <= 1e-10);
        prop_assert_eq!(a.matrix(), b.matrix());
    }

    #[test]
    fn schedule_order_changes_the_operator(seed in any::<u64>(), q in 2usize..4) {
        let brick = build_floquet(&chain(3, q, NamedSchedule::Brickwork, seed).validate().unwrap(), 0).unwrap();
        let reversed = CircuitSpec::chain(3, q, Boundary::Open, ScheduleSpec::Explicit(vec![vec![[1, 2]], vec![[0, 1]]]))
            .with_seed(seed)
            .validate()
            .unwrap();
        let rev = build_floquet(&reversed, 0).unwrap();
        prop_assert!(max_abs(&(brick.matrix() - rev.matrix())) > 1e-6);
    }

    #[test]
    fn spectral_per_sample_exactness(n in 2usize..20, seed in any::<u64>(), bins in 3usize..40) {
        let (_, s) = cue_spectrum(n, seed);
        let e = s.quasienergies();
        prop_assert_eq!(e.len(), n);
        prop_assert!(e.windows(2).all(|w| w[0] <= w[1]));
        prop_assert!(e.iter().all(|&x| x > -std::f64::consts::PI - 1e-12 && x <= std::f64::consts::PI + 1e-12));
        let k = sff_sample(&s, 3);
        let n2 = (n * n) as f64;
        prop_assert!((k[0] - n2).abs() <= 1e-9 * n2);
        let grid = OmegaGrid::histogram(bins).unwrap();
        let total: f64 = r2_sample(&s, &grid).iter().map(|r| r * grid.width()).sum();
        prop_assert!((total - n2).abs() <= 1e-10 * n2);
    }

    #[test]
    fn correlator_row_sum_trace_sum_and_hermiticity(n in 2usize..10, seed in any::<u64>(), a in 0usize..10) {
        let (_, s) = cue_spectrum(n, seed);
        let a = a % n;
        let t_max = 5;
        let width = 2 * t_max + 1;

        let row: Vec<Tuple> = (0..n).map(|b| Tuple::new(a, b, b, a)).collect();
        let c = corr_time_sample(&s, &row, t_max).unwrap();
        for col in 0..width {
            let sum: Complex64 = (0..n).map(|k| c[k * width + col]).sum();
            prop_assert!((sum - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
        }

        let diag: Vec<Tuple> = (0..n).flat_map(|x| (0..n).map(move |y| Tuple::new(x, x, y, y))).collect();
        let c = corr_time_sample(&s, &diag, t_max).unwrap();
        let k = sff_sample(&s, t_max);
        for t in 0..=t_max {
            let sum: Complex64 = (0..diag.len()).map(|j| c[j * width + t_max + t]).sum();
            prop_assert!((sum.re - k[t]).abs() <= 1e-10 * k[t].max(1.0));
            prop_assert!(sum.im.abs() <= 1e-10 * k[t].max(1.0));
        }

        let b = (a + 1) % n;
        let tup = [Tuple::new(a, b, a, b), Tuple::new(b, a, b, a)];
        let c = corr_time_sample(&s, &tup, t_max).unwrap();
        for step in 0..width {
            let mirrored = c[width + (width - 1 - step)].conj();
            prop_assert!((c[step] - mirrored).norm() <= 1e-12);
        }
    }

    #[test]
    fn correlator_frequency_integral(n in 2usize..10, seed in any::<u64>(), idx in proptest::array::uniform4(0usize..10), bins in 3usize..30) {
        let (_, s) = cue_spectrum(n, seed);
        let t = Tuple::new(idx[0] % n, idx[1] % n, idx[2] % n, idx[3] % n);
        let grid = OmegaGrid::histogram(bins).unwrap();
        let (c, delta) = corr_freq_sample(&s, &[t], &grid).unwrap();
        let total = c.iter().map(|z| z * grid.width()).sum::<Complex64>() + delta[0];
        let expected = if t.n == t.n_prime && t.m_prime == t.m { 1.0 } else { 0.0 };
        prop_assert!((total - Complex64::new(expected, 0.0)).norm() <= 1e-10);
    }

    #[test]
    fn matrix_elements_hermitian_and_trace_preserving(sites in 2usize..5, seed in any::<u64>(), which in 0usize..4) {
        let space = QuditSpace::new(2, sites).unwrap();
        let template = [Template::Z, Template::X, Template::Y, Template::Zz][which].clone();
        let o = build_local_observable(&template, &[0, 1][..template.local_matrix(2).unwrap().1], space).unwrap();
        let (_, s) = cue_spectrum(space.dim(), seed);
        let m = matrix_elements(&o, &s).unwrap();
        prop_assert!(max_abs(&(&m - m.adjoint())) <= 1e-10);
        prop_assert!((m.trace().re - o.trace()).abs() <= 1e-10);
        let diag_mean = m.diagonal().iter().map(|z| z.re).sum::<f64>() / space.dim() as f64;
        prop_assert!((diag_mean - o.trace() / space.dim() as f64).abs() <= 1e-12);

        let (c, _) = dyn_corr_sample(&o, &o, &s, &CorrGrid::Time { t_max: 2 }).unwrap();
        let at_zero = (o.matrix() * o.matrix()).trace() / space.dim() as f64;
        prop_assert!((c[2] - at_zero).norm() <= 1e-10);
    }

    #[test]
    fn evolved_density_matrix_is_a_state(n in 2usize..12, seed in any::<u64>(), k in 0usize..12, t in -40i64..40) {
        let (_, s) = cue_spectrum(n, seed);
        let rho0 = DensityMatrix::basis_state(n, k % n).unwrap();
        let rho = evolve_sample(&rho0, &s, t);
        prop_assert!(max_abs(&(&rho - rho.adjoint())) <= 1e-10);
        prop_assert!((rho.trace() - Complex64::new(1.0, 0.0)).norm() <= 1e-10);
        // rank one: rho^2 = rho, so every eigenvalue is 0 or 1
        prop_assert!(max_abs(&(&rho * &rho - &rho)) <= 1e-10);
    }

    #[test]
    fn predictions_are_pure_and_integrate(n in 2usize..80, bins in 3usize..60) {
        let grid = OmegaGrid::histogram(bins).unwrap();
        let params = Params::new(n);
        let a = theory::predict("r2", Variant::Exact, &params, &PredictGrid::Bins(grid.clone())).unwrap();
        let b = theory::predict("r2", Variant::Exact, &params, &PredictGrid::Bins(grid.clone())).unwrap();
        prop_assert_eq!(&a, &b);
        let mass: f64 = a.values.iter().map(|v| v * grid.width()).sum::<f64>() + a.deltas.iter().map(|d| d.1).sum::<f64>();
        let n2 = (n * n) as f64;
        prop_assert!((mass - n2).abs() <= 1e-9 * n2);

        for (cat, expected) in [(Category::DiagonalDistinct, 1.0), (Category::Exchange, 0.0)] {
            let p = Params { category: Some(cat), ..Params::new(n) };
            let c = theory::predict("corr_freq", Variant::Exact, &p, &PredictGrid::Bins(grid.clone())).unwrap();
            let total: f64 = c.values.iter().map(|v| v * grid.width()).sum::<f64>() + c.deltas.iter().map(|d| d.1).sum::<f64>();
            prop_assert!((total - expected).abs() <= 1e-10, "{:?}: {}", cat, total);
        }
    }
}
