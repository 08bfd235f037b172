use std::f64::consts::PI;

use abcage::diagnostics::{fluctuation, ipn_per_cell, ipn_per_site};
use abcage::dynamics::{evolve_general, evolve_spectral, evolve_uniform_decay};
use abcage::ensemble::{draw_disorder, unit_draws};
use abcage::linalg::{dagger, hermiticity_defect, max_abs_diff, ComplexMatrix};
use abcage::model::{
    build_bloch_hamiltonian, build_real_hamiltonian, caging_flux_even, caging_flux_odd, DisorderAssignment, FluxConfig,
    Geometry,
};
use abcage::spectra::{band_structure, dispersion, eigendecompose_hermitian};
use abcage::{EnsembleSpec, LatticeSpec, RunConfig, TimeGrid, Wavefunction};
use ndarray::Array1;
use num_complex::Complex64 as C64;
use proptest::prelude::*;

fn phases(max_paths: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-PI..PI, 1..=max_paths)
}

fn populations(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, len).prop_filter("not all zero", |v| v.iter().sum::<f64>() > 1e-6).prop_map(|v| {
        let total: f64 = v.iter().sum();
        v.into_iter().map(|p| p / total).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bloch_spectrum_is_plus_minus_dispersion_and_zeros(ph in phases(7), k in -PI..PI, j in 0.2f64..3.0) {
        let flux = FluxConfig::new(ph.clone()).unwrap();
        let h = build_bloch_hamiltonian(&flux, k, j);
        let eig = eigendecompose_hermitian(&h).unwrap();
        // independent of the library formula: |J_i|^2 summed directly
        let e: f64 = ph
            .iter()
            .map(|&p| (C64::from_polar(j, -p) + C64::from_polar(j, -k)).norm_sqr())
            .sum::<f64>()
            .sqrt();
        let n = ph.len();
        prop_assert!((eig.values[0] + e).abs() < 1e-9);
        prop_assert!((eig.values[n] - e).abs() < 1e-9);
        for v in &eig.values[1..n] {
            prop_assert!(v.abs() < 1e-9);
        }
        prop_assert!((dispersion(&flux, j, k) - e).abs() < 1e-9);
    }

    #[test]
    fn bright_state_uses_conjugated_couplings(ph in phases(6), k in -PI..PI) {
        let flux = FluxConfig::new(ph.clone()).unwrap();
        let h = build_bloch_hamiltonian(&flux, k, 1.0);
        let e = dispersion(&flux, 1.0, k);
        prop_assume!(e > 1e-3);
        let mut v = vec![C64::new(e, 0.0)];
        v.extend(ph.iter().map(|&p| (C64::from_polar(1.0, -p) + C64::from_polar(1.0, -k)).conj()));
        let v = Array1::from(v);
        let hv = h.dot(&v);
        for (a, b) in hv.iter().zip(v.iter()) {
            prop_assert!((a - b * e).norm() < 1e-9);
        }
    }

    #[test]
    fn ipn_bounds(pops in populations(49)) {
        let site = ipn_per_site(&pops, false).unwrap();
        prop_assert!((1.0 / 49.0 - 1e-12..=1.0 + 1e-12).contains(&site));
        let cell = ipn_per_cell(&pops, &Geometry::new(9, 5).unwrap(), false).unwrap();
        prop_assert!(cell >= site - 1e-12 && cell <= 1.0 + 1e-12);
    }

    #[test]
    fn renormalized_ipn_ignores_overall_scale(pops in populations(13), scale in 0.01f64..5.0) {
        let scaled: Vec<f64> = pops.iter().map(|p| p * scale).collect();
        let a = ipn_per_site(&pops, true).unwrap();
        let b = ipn_per_site(&scaled, true).unwrap();
        prop_assert!((a - b).abs() < 1e-12);
    }

    #[test]
    fn fluctuation_ignores_sample_order(values in prop::collection::vec(0.0f64..1.0, 2..200), seed in any::<u64>()) {
        let base = fluctuation(&values).unwrap();
        let mut reversed = values.clone();
        reversed.reverse();
        prop_assert_eq!(fluctuation(&reversed).unwrap(), base);
        let keys = unit_draws(seed, 0, values.len());
        let mut order: Vec<usize> = (0..values.len()).collect();
        order.sort_by(|&a, &b| keys[a].total_cmp(&keys[b]));
        let shuffled: Vec<f64> = order.iter().map(|&i| values[i]).collect();
        prop_assert_eq!(fluctuation(&shuffled).unwrap(), base);
        prop_assert!(base.sigma >= 0.0);
    }

    #[test]
    fn constant_series_has_no_fluctuation(v in 0.0f64..1.0, n in 2usize..500) {
        prop_assert_eq!(fluctuation(&vec![v; n]).unwrap().sigma, 0.0);
    }

    #[test]
    fn draws_are_reproducible_uniform_and_prefix_stable(seed in any::<u64>(), stream in 0u64..1000, n in 1usize..64) {
        let a = unit_draws(seed, stream, n);
        prop_assert_eq!(&a, &unit_draws(seed, stream, n));
        prop_assert_eq!(&a[..n / 2], &unit_draws(seed, stream, n / 2)[..]);
        prop_assert!(a.iter().all(|u| (0.0..1.0).contains(u)));
    }

    #[test]
    fn disorder_draws_stay_in_range(seed in any::<u64>(), delta_max in 0.1f64..5.0, rep in 0usize..8) {
        let base = LatticeSpec::new(6, 1.0, caging_flux_odd(3).unwrap()).unwrap();
        let spec = EnsembleSpec::new(base, delta_max, 8, seed).unwrap();
        let g = spec.base().geometry();
        let e = draw_disorder(&spec, rep).unwrap();
        prop_assert_eq!(&e, &draw_disorder(&spec, rep).unwrap());
        for (i, energy) in e.iter().enumerate() {
            match g.site(i).unwrap() {
                abcage::model::Site::C { path: 1, .. } => prop_assert!((0.0..delta_max).contains(energy)),
                abcage::model::Site::C { path: 3, .. } => prop_assert!(*energy <= 0.0 && *energy > -delta_max),
                _ => prop_assert_eq!(*energy, 0.0),
            }
        }
    }

    #[test]
    fn odd_and_even_caging_families_are_flat(half in 1usize..5, base in -PI..PI, m in 0i64..3) {
        let odd = caging_flux_odd(2 * half + 1).unwrap();
        let bands = band_structure(&odd, 1.0, 101).unwrap();
        prop_assert!(bands.flatness < 1e-9);
        let even = caging_flux_even(2 * half, base, 2 * m + 1).unwrap();
        prop_assert!(band_structure(&even, 1.0, 101).unwrap().flatness < 1e-9);
    }

    #[test]
    fn hamiltonian_hermiticity_tracks_gamma_nh(ph in phases(5), delta in -2.0f64..2.0, gamma in 0.0f64..0.3) {
        let flux = FluxConfig::new(ph).unwrap();
        let paths = flux.paths();
        let mut spec = LatticeSpec::new(4, 1.0, flux).unwrap();
        if paths >= 2 {
            spec = spec.with_disorder(DisorderAssignment::fixed(delta).unwrap());
        }
        let h = build_real_hamiltonian(&spec).unwrap();
        prop_assert!(hermiticity_defect(&h) < 1e-14);
        let nh = build_real_hamiltonian(&spec.clone().with_gamma_nh(gamma).unwrap()).unwrap();
        // the added part is -i Gamma on every bond, the same in both directions
        let anti = (&nh - &dagger(&nh)).mapv(|z| z * 0.5);
        for ((r, c), z) in anti.indexed_iter() {
            let bond = h[[r, c]].norm() > 0.0 && r != c;
            let expected = if bond { C64::new(0.0, -gamma) } else { C64::new(0.0, 0.0) };
            prop_assert!((z - expected).norm() < 1e-14);
        }
    }

    #[test]
    fn unitary_evolution_conserves_norm(ph in phases(5), delta in -2.0f64..2.0, start in 0usize..20) {
        let flux = FluxConfig::new(ph).unwrap();
        let paths = flux.paths();
        let mut spec = LatticeSpec::new(4, 1.0, flux).unwrap();
        if paths >= 2 {
            spec = spec.with_disorder(DisorderAssignment::fixed(delta).unwrap());
        }
        let d = spec.site_count();
        let h = build_real_hamiltonian(&spec).unwrap();
        let psi = Wavefunction::single_site(d, start % d).unwrap();
        let grid = TimeGrid::new(20.0, 41, 1.0).unwrap();
        let spectral = evolve_spectral(&h, &psi, &grid).unwrap();
        prop_assert!(spectral.norm.iter().all(|n| (n - 1.0).abs() < 1e-10));
        let general = evolve_general(&h, &psi, &grid).unwrap();
        let diff = (&spectral.populations - &general.populations).mapv(f64::abs).fold(0.0f64, |m, &x| m.max(x));
        prop_assert!(diff < 1e-8);
    }

    #[test]
    fn uniform_decay_keeps_total_probability(gamma in 0.0f64..0.2, start in 0usize..25) {
        let spec = LatticeSpec::new(5, 1.0, caging_flux_odd(5).unwrap()).unwrap();
        let h = build_real_hamiltonian(&spec).unwrap();
        let d = spec.site_count();
        let psi = Wavefunction::single_site(d, start % d).unwrap();
        let grid = TimeGrid::new(30.0, 61, 1.0).unwrap();
        let t = evolve_uniform_decay(&h, gamma, &psi, &grid).unwrap();
        prop_assert!(t.norm.iter().all(|n| (n - 1.0).abs() < 1e-10));
        let sink = t.virtual_population.unwrap();
        prop_assert!(sink.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn config_survives_toml_and_manifest_round_trips(
        cells in 2usize..20,
        paths in 2usize..8,
        j in 0.1f64..4.0,
        t_max in 0.5f64..200.0,
        samples in 2usize..1000,
        seed in any::<u64>(),
    ) {
        let text = format!(
            "[model]\ncells = {cells}\npaths = {paths}\ncoupling_J = {j:?}\n[time]\nt_max = {t_max:?}\nsamples = {samples}\n[disorder]\nmode = \"fixed\"\ndelta = {:?}\nseed = {seed}\n",
            j / 3.0
        );
        let config = RunConfig::from_toml_str(&text).unwrap();
        let again = RunConfig::from_toml_str(&config.to_toml_string()).unwrap();
        prop_assert_eq!(&again, &config);
        let manifest = serde_json::json!({ "config": config }).to_string();
        prop_assert_eq!(&RunConfig::from_manifest_str(&manifest).unwrap(), &config);
    }
}

#[test]
fn random_hermitian_spectral_decomposition_reconstructs() {
    let u = unit_draws(11, 0, 2 * 36);
    let mut h = ComplexMatrix::zeros((6, 6));
    for r in 0..6 {
        for c in 0..6 {
            h[[r, c]] = C64::new(u[2 * (6 * r + c)] - 0.5, u[2 * (6 * r + c) + 1] - 0.5);
        }
    }
    let h = (&h + &dagger(&h)).mapv(|z| z * 0.5);
    let eig = eigendecompose_hermitian(&h).unwrap();
    assert!(max_abs_diff(&eig.reconstruct(), &h) < 1e-12);
}
