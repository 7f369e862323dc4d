use bdg_core::chern::{berry_flux_chern, transfer_chern};
use bdg_core::disorder::{DisorderSpec, Distribution};
use bdg_core::linalg::{c, CMat};
use bdg_core::models::{build_model, central_gap, Example, ModelParams, PairingKind, Sign};
use bdg_core::operator::{
    assemble_finite_volume, bloch_grid_eigenvalues, check_phs, spectrum_symmetry_check, Boundary,
    FiberShape, Parity, TightBindingOperator,
};
use bdg_core::spectral::{realize, sample_spectra, signed_count, Ensemble};
use bdg_core::table::{sci, Table};
use proptest::prelude::*;

fn block(d: usize) -> impl Strategy<Value = CMat> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), d * d)
        .prop_map(move |v| CMat::from_iterator(d, d, v.into_iter().map(|(re, im)| c(re, im))))
}

/// Random range-1 operator closed under `j -> -j` with adjoint blocks.
fn hermitian_operator(d: usize) -> impl Strategy<Value = TightBindingOperator> {
    (block(d), block(d), block(d), block(d)).prop_map(move |(b0, b1, b2, b3)| {
        let fiber = FiberShape::new(d, false).unwrap();
        let mut terms = vec![([0, 0], (&b0 + b0.adjoint()) * c(0.5, 0.0))];
        for (j, b) in [([1, 0], b1), ([0, 1], b2), ([1, -1], b3)] {
            terms.push(([-j[0], -j[1]], b.adjoint()));
            terms.push((j, b));
        }
        TightBindingOperator::from_terms(fiber, terms).unwrap()
    })
}

fn model_kind() -> impl Strategy<Value = PairingKind> {
    prop::sample::select(PairingKind::all())
}

fn params() -> impl Strategy<Value = ModelParams> {
    (-2.0..2.0f64, -5.0..5.0f64).prop_map(|(delta, mu)| ModelParams::new(delta, mu))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn finite_volume_matrix_is_hermitian(op in hermitian_operator(2), l in 3usize..6) {
        let h = assemble_finite_volume(&op, [l, l + 1], Boundary::Periodic).unwrap();
        prop_assert!(h.hermiticity_defect() < 1e-12);
        let open = assemble_finite_volume(&op, [l, l], Boundary::Open).unwrap();
        prop_assert!(open.hermiticity_defect() < 1e-12);
    }

    #[test]
    fn torus_spectrum_is_union_of_bloch_spectra(op in hermitian_operator(2), l in 3usize..6) {
        let h = assemble_finite_volume(&op, [l, l], Boundary::Periodic).unwrap();
        let direct = h.eigenvalues().unwrap();
        let bloch = bloch_grid_eigenvalues(&op, [l, l]).unwrap();
        prop_assert_eq!(direct.len(), bloch.len());
        for (a, b) in direct.iter().zip(&bloch) {
            prop_assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn operator_json_round_trips(op in hermitian_operator(2)) {
        let back = TightBindingOperator::from_json(&op.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, op);
    }

    #[test]
    fn every_model_has_particle_hole_symmetry(kind in model_kind(), p in params()) {
        let op = build_model(kind, &p).unwrap();
        prop_assert!(check_phs(&op, Parity::Even).unwrap().holds);
        let h = assemble_finite_volume(&op, [4, 4], Boundary::Periodic).unwrap();
        prop_assert!(spectrum_symmetry_check(&h.eigenvalues().unwrap()) <= 1e-10);
    }

    #[test]
    fn disorder_keeps_spectrum_symmetric(
        kind in model_kind(),
        lambda in 0.0..2.0f64,
        seed in any::<u64>(),
    ) {
        let op = build_model(kind, &ModelParams::new(0.4, -0.7)).unwrap();
        let spec = DisorderSpec::potential(lambda, Distribution::default());
        let h = realize(&op, Some(&spec), [4, 5], seed).unwrap();
        prop_assert!(spectrum_symmetry_check(&h.eigenvalues().unwrap()) <= 1e-10);
    }

    #[test]
    fn disorder_spec_json_round_trips(lambda in 0.0..5.0f64, r in 0.1..3.0f64, gauss in any::<bool>()) {
        let nu = if gauss {
            Distribution::TruncatedGaussian { sigma: r, cutoff: 3.0 }
        } else {
            Distribution::Uniform { r_support: r }
        };
        let spec = DisorderSpec::potential(lambda, nu);
        prop_assert_eq!(DisorderSpec::from_json(&spec.to_json().unwrap()).unwrap(), spec);
    }

    #[test]
    fn ids_is_odd_per_realization(seed in any::<u64>(), e in 0.0..3.0f64) {
        let op = build_model(PairingKind::Pip(Sign::Plus), &ModelParams::new(0.3, -0.5)).unwrap();
        let spec = DisorderSpec::potential(0.5, Distribution::default());
        let s = sample_spectra(&op, Some(&spec), &Ensemble { l: [6, 6], realizations: 2, seed }, false)
            .unwrap();
        for eigs in &s.h {
            prop_assert_eq!(signed_count(eigs, e), signed_count(eigs, -e));
        }
    }

    #[test]
    fn gap_never_exceeds_chemical_potential(mu in -4.0..4.0f64, delta in 0.1..1.0f64) {
        let op = Example::PIp(Sign::Plus).operator(&ModelParams::new(delta, mu)).unwrap();
        prop_assert!(central_gap(&op, 64).unwrap() <= mu.abs() + 1e-9);
    }

    #[test]
    fn table_cells_round_trip(xs in prop::collection::vec(any::<f64>().prop_filter("finite", |x| x.is_finite()), 1..8)) {
        let mut t = Table::new(&(0..xs.len()).map(|i| format!("c{i}")).collect::<Vec<_>>());
        t.push(xs.clone());
        let csv = t.to_csv();
        let row = csv.lines().nth(1).unwrap();
        let back: Vec<f64> = row.split(',').map(|s| s.parse().unwrap()).collect();
        prop_assert_eq!(back, xs.clone());
        prop_assert!(xs.iter().all(|x| sci(*x).parse::<f64>().unwrap() == *x));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn transfer_and_berry_agree_away_from_transitions(
        delta in 0.2..1.0f64,
        mu in prop::sample::select(vec![-4.6, -3.0, -1.2, -0.4, 0.4, 1.2, 3.0, 4.6]),
        plus in any::<bool>(),
    ) {
        let sign = if plus { Sign::Plus } else { Sign::Minus };
        let op = Example::PIp(sign).operator(&ModelParams::new(delta, mu)).unwrap();
        let t = transfer_chern(&op, 64).unwrap();
        let b = berry_flux_chern(&op, 48).unwrap();
        prop_assert!(t.value.is_some());
        prop_assert_eq!(t.value, b.value);
    }
}
