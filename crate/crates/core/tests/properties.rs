//! Property tests over the public API.

use cavity_qrm::experiments::{ExperimentConfig, SourceId};
use cavity_qrm::forward::{add_noise, CauchyData, ProblemKind};
use cavity_qrm::grid::{FlatIndexMap, Grid};
use cavity_qrm::linalg::SymmetricBandMatrix;
use cavity_qrm::time_basis::{BasisKind, TimeBasis};
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn flat_index_round_trips(nx in 3usize..40, n_modes in 1usize..36, seed in any::<u64>()) {
        let grid = Grid::square(1.0, nx).unwrap();
        let flat = FlatIndexMap::new(&grid, n_modes);
        let i = 1 + (seed as usize) % nx;
        let j = 1 + (seed as usize / 7) % nx;
        let m = 1 + (seed as usize / 13) % n_modes;
        let f = flat.flatten(i, j, m).unwrap();
        prop_assert_eq!(flat.unflatten(f).unwrap(), (i, j, m));
        prop_assert_eq!(f, flat.offset(grid.node(i - 1, j - 1), m - 1) + 1);
        prop_assert!(flat.flatten(i, j, n_modes + 1).is_err());
        prop_assert!(flat.unflatten(flat.len() + 1).is_err());
    }

    #[test]
    fn noise_is_bounded_relative_and_reproducible(
        trace in prop::collection::vec(-10.0f64..10.0, 1..200),
        delta in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let data = CauchyData {
            problem: ProblemKind::Dirichlet,
            t_final: 1.0,
            n_times: trace.len(),
            nodes: vec![0],
            trace: trace.clone(),
            noise_level: 0.0,
            seed: None,
        };
        let a = add_noise(&data, delta, seed).unwrap();
        let b = add_noise(&data, delta, seed).unwrap();
        prop_assert_eq!(&a.trace, &b.trace);
        for (noisy, clean) in a.trace.iter().zip(&trace) {
            prop_assert!((noisy - clean).abs() <= delta * clean.abs() * (1.0 + 1e-15));
        }
    }

    #[test]
    fn config_json_round_trips(nx in 5usize..200, delta in 0.0f64..2.0, seed in any::<u64>(), n_modes in 1usize..36) {
        let c = ExperimentConfig {
            nx,
            delta,
            seed,
            n_modes,
            source: SourceId::Example3,
            ..ExperimentConfig::default()
        };
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        prop_assert_eq!(back, c);
    }

    #[test]
    fn band_matrix_is_symmetric_in_lookup(n in 2usize..30, k in 0usize..5, seed in any::<u64>()) {
        let mut band = SymmetricBandMatrix::new(n, k);
        for i in 0..n {
            for j in i.saturating_sub(k)..=i {
                band.add_lower(i, j, ((seed ^ (i * 31 + j) as u64) % 97) as f64);
            }
        }
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(band.get(i, j), band.get(j, i));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn bases_stay_orthonormal(n_modes in 1usize..=35, t_final in 0.5f64..4.0, trig in any::<bool>()) {
        let kind = if trig { BasisKind::Trigonometric } else { BasisKind::Klibanov };
        let basis = TimeBasis::of_kind(kind, n_modes, t_final).unwrap();
        prop_assert!(basis.gram_residual() < 1e-8, "residual {}", basis.gram_residual());
    }
}
