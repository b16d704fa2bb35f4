mod common;

use common::fixture;
use pbm_service::simulate;
use pbm_service::store::{replay, StepClock, Store};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn replay_after_many_operations_is_byte_identical() {
    let f = fixture(10, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let stats = simulate::run(&f.app, &mut rng, 1000);
    for op in ["register", "next_evaluation", "next_verification", "submit", "compare", "review"] {
        assert!(stats.get(op).is_some_and(|s| s.0 > 0), "{op}: {stats:?}");
    }
    for op in ["register", "submit", "review"] {
        assert!(stats.get(op).is_some_and(|s| s.1 > 0), "{op}: {stats:?}");
    }
    let live = f.app.store.read(|i| i.canonical_json());
    assert_eq!(replay(&f.log_path()).unwrap().canonical_json(), live);
    let reopened = Store::open(f.log_path(), Box::new(StepClock::default())).unwrap();
    assert_eq!(reopened.read(|i| i.canonical_json()), live);
}

#[test]
fn corrupt_log_is_reported_with_its_line() {
    let f = fixture(10, 11);
    let mut text = std::fs::read_to_string(f.log_path()).unwrap();
    text.push_str("{not json}\n");
    std::fs::write(f.log_path(), text).unwrap();
    let err = replay(&f.log_path()).unwrap_err().to_string();
    assert!(err.contains("line 56"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn replay_matches_live_state(seed in any::<u64>(), n in 1usize..200) {
        let f = fixture(10, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        simulate::run(&f.app, &mut rng, n);
        let live = f.app.store.read(|i| i.canonical_json());
        prop_assert_eq!(replay(&f.log_path()).unwrap().canonical_json(), live);
    }
}
