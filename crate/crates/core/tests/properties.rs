use std::sync::OnceLock;

use proptest::prelude::*;
use sbm_core::backbone::fragment;
use sbm_core::conditioning::{exit_count, MassGrid};
use sbm_core::harness::{ExperimentConfig, Provenance, Record, Report};
use sbm_core::lattice_law::ExcursionFields;
use sbm_core::rng;
use sbm_core::stats::{estimator_merge, ks_two_sample, ks_two_sample_weighted, Partial};
use sbm_core::{pt, Domain};

fn fields() -> &'static ExcursionFields {
    static F: OnceLock<ExcursionFields> = OnceLock::new();
    F.get_or_init(|| ExcursionFields::new(&Domain::unit_interval(), 100, 63, 80).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fragments_conserve_the_label(k in 2usize..=80, y in 0.05f64..0.95, seed in any::<u64>()) {
        let (a, b) = fragment(fields(), k, pt(y), &mut rng::stream(seed, 0)).unwrap();
        prop_assert!(a >= 1 && b >= 1);
        prop_assert_eq!(a + b, k);
    }

    #[test]
    fn ks_of_a_sample_with_itself_is_zero(xs in prop::collection::vec(-10.0f64..10.0, 1..200)) {
        prop_assert_eq!(ks_two_sample(&xs, &xs).unwrap().statistic, 0.0);
        let w = vec![1.0; xs.len()];
        prop_assert!(ks_two_sample_weighted(&xs, &w, &xs, &w).unwrap().statistic.abs() < 1e-12);
    }

    #[test]
    fn ks_of_disjoint_samples_is_one(xs in prop::collection::vec(0.0f64..1.0, 1..100), ys in prop::collection::vec(2.0f64..3.0, 1..100)) {
        prop_assert_eq!(ks_two_sample(&xs, &ys).unwrap().statistic, 1.0);
    }

    #[test]
    fn merge_ignores_order(xs in prop::collection::vec(-5.0f64..5.0, 2..300), chunk in 1usize..40, rot in 0usize..40) {
        let parts: Vec<Partial> = xs.chunks(chunk).map(Partial::from_samples).collect();
        let mut perm = parts.clone();
        perm.reverse();
        let r = rot % perm.len();
        perm.rotate_left(r);
        let (a, ea) = estimator_merge(&parts).unwrap();
        let (b, eb) = estimator_merge(&perm).unwrap();
        prop_assert_eq!(a.mean.to_bits(), b.mean.to_bits());
        prop_assert_eq!(a.m2.to_bits(), b.m2.to_bits());
        prop_assert_eq!(ea.se.to_bits(), eb.se.to_bits());
        let whole = Partial::from_samples(&xs);
        prop_assert!((a.mean - whole.mean).abs() <= 1e-12 * (1.0 + whole.mean.abs()));
        prop_assert!((a.m2 - whole.m2).abs() <= 1e-9 * (1.0 + whole.m2));
    }

    #[test]
    fn single_partial_merges_to_itself(xs in prop::collection::vec(-5.0f64..5.0, 1..100)) {
        let p = Partial::from_samples(&xs);
        let (m, _) = estimator_merge(&[p]).unwrap();
        prop_assert_eq!(m, p);
    }

    #[test]
    fn mass_bins_cover_their_counts(vmax in 1.0f64..8.0, bins in 8usize..100, k in 1usize..2000) {
        let g = MassGrid::covering(100, vmax, bins).unwrap();
        prop_assume!(k <= g.kmax());
        let b = g.bin_of_count(k).unwrap();
        let (lo, hi) = g.count_range(b);
        prop_assert!(lo <= k && k <= hi);
        prop_assert_eq!(g.bin_of_mass(k as f64 / 100.0), Some(b));
    }

    #[test]
    fn exit_count_inverts_the_mass_quantum(k in 0usize..100_000) {
        prop_assert_eq!(exit_count(k as f64 * 0.01, 100), k);
    }

    #[test]
    fn streams_are_reproducible(seed in any::<u64>(), i in any::<u64>()) {
        use rand::RngCore;
        prop_assert_eq!(rng::stream(seed, i).next_u64(), rng::stream(seed, i).next_u64());
    }

    #[test]
    fn report_csv_has_one_row_per_record(n in 0usize..20, x in -1e3f64..1e3) {
        let mut rep = Report::new("p", 1);
        rep.extend((0..n).map(|i| Record::abs(0, format!("r{i}, quoted"), Provenance::Trivial, 0.0, x, 1.0)));
        prop_assert_eq!(rep.to_csv().lines().count(), n + 1);
        prop_assert_eq!(rep.pass(), n == 0 || x.abs() <= 1.0);
    }
}

#[test]
fn configs_round_trip() {
    for name in ["simulate", "moments", "condition", "backbone_mass", "backbone_forest", "backbone_point", "verify_quick"] {
        let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../configs/{name}.json"));
        let cfg = ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{name}: {e}"));
        let again = ExperimentConfig::from_json(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(cfg, again, "{name}");
    }
}
