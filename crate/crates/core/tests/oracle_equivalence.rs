mod common;

use common::oracle;
use common::random_chain::{random_case, rng};
use proptest::prelude::*;
use telechain::metrics::score_chain;

fn check(seed: u64) -> Result<(), TestCaseError> {
    let case = random_case(&mut rng(seed));
    let got = score_chain(&case.record(), case.t, &case.table).unwrap();
    let want = oracle::score(&case.steps, &case.seed, case.l, case.t, &case.raw);
    prop_assert_eq!(got.k, want.k);
    for (name, g, w) in [
        ("RS", got.rs, want.rs),
        ("BR", got.cohesion, want.br),
        ("DR", got.diversity, want.dr),
        ("CR", got.creativity, want.cr),
    ] {
        prop_assert!((g - w).abs() <= 1e-12, "{name}: library {g} vs oracle {w} (case {seed})");
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(500))]

    #[test]
    fn library_matches_brute_force(seed in any::<u64>()) {
        check(seed)?;
    }

    #[test]
    fn scores_stay_in_range(seed in any::<u64>()) {
        let case = random_case(&mut rng(seed));
        let s = score_chain(&case.record(), case.t, &case.table).unwrap();
        for x in [s.rs, s.cohesion, s.diversity, s.creativity] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
        prop_assert_eq!(s.creativity, s.rs * ((s.cohesion + s.diversity) / 2.0));
        prop_assert!(s.k <= case.steps.len());
    }

    #[test]
    fn appending_steps_never_lowers_k(seed in any::<u64>()) {
        let case = random_case(&mut rng(seed));
        let mut record = case.record();
        let full = score_chain(&record, case.t, &case.table).unwrap();
        record.steps.pop();
        let shorter = score_chain(&record, case.t, &case.table).unwrap();
        prop_assert!(shorter.k <= full.k);
    }
}

#[test]
fn random_cases_cover_every_prefix_length() {
    let mut seen = std::collections::BTreeSet::new();
    for seed in 0..400 {
        let case = random_case(&mut rng(seed));
        seen.insert(oracle::score(&case.steps, &case.seed, case.l, case.t, &case.raw).k);
    }
    assert_eq!(seen, (0..=6).collect());
}
