use std::path::PathBuf;

use infogate::io::load_stream;
use infogate::solver::{run_variant, SolverConfig, SolverState, Variant};
use infogate::validate::random_stream;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn mit() -> infogate::io::DatasetStream {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/mit.g2o");
    load_stream(&path, None).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn factor_tracks_assembled_system(seed in any::<u64>(), n in 2usize..25, v in 0usize..7) {
        let stream = random_stream(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let variant = Variant::ALL[v];
        let mut state = SolverState::init(stream.first_pose(), variant.configure(&SolverConfig::default())).unwrap();
        for e in &stream.edges {
            state.increment(std::slice::from_ref(e)).unwrap();
            let (h, b) = state.assemble_system();
            prop_assert!(state.factor().reconstruction_error(&h) <= 1e-9);
            let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
            for (x, y) in state.rhs().iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-9 * scale);
            }
        }
    }

    #[test]
    fn partial_and_full_solve_agree(seed in any::<u64>(), n in 2usize..25) {
        let stream = random_stream(&mut ChaCha8Rng::seed_from_u64(seed), n);
        let partial = SolverConfig::default();
        let full = SolverConfig { partial_solve: false, ..partial.clone() };
        let a = run_variant(Variant::GniSpoIgg, &stream, &partial, None).unwrap();
        let b = run_variant(Variant::GniSpoIgg, &stream, &full, None).unwrap();
        for (p, q) in a.estimate.iter().zip(&b.estimate) {
            prop_assert!((p.x - q.x).abs() < 1e-6 && (p.y - q.y).abs() < 1e-6);
        }
        prop_assert!(a.summary.mean_flops_solve <= b.summary.mean_flops_solve + 1e-9);
    }
}

#[test]
fn mit_stream_shape() {
    let s = mit();
    assert_eq!(s.edges.len(), 827);
    assert_eq!(s.num_priors(), 0);
    let r = run_variant(Variant::Gn1, &s, &SolverConfig::default(), None).unwrap();
    assert_eq!(r.records.len(), 827);
    assert_eq!(r.estimate.len(), s.num_poses);
    assert!(r.records.iter().all(|rec| rec.gn_iters <= 1));
}

#[test]
fn gated_variants_skip_most_global_passes_on_mit() {
    let s = mit();
    let r = run_variant(Variant::GniLcg, &s, &SolverConfig::default(), None).unwrap();
    let gated = r.records.iter().filter(|rec| rec.gated_global).count();
    // every loop closure and nothing else passes the gate
    assert!(gated > 0 && gated < 100, "{gated}");
}
