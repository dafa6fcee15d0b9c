use ettag_core::catalog::EntityCatalog;
use ettag_core::pipeline::Kb;
use ettag_core::tokenizer::EOS;
use ettag_core::trie::{ConstraintState, Constraints};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn names() -> impl Strategy<Value = Vec<String>> {
    let word = prop::sample::select(vec!["New", "York", "City", "St.", "(band)", "Zürich", "A", "b"]);
    prop::collection::btree_set(prop::collection::vec(word, 1..4).prop_map(|w| w.join(" ")), 1..25)
        .prop_map(|s| s.into_iter().collect())
}

fn constraints() -> impl Strategy<Value = Constraints> {
    (any::<bool>(), any::<bool>(), 1usize..5)
        .prop_map(|(no_repeat, allow_empty, max_entities)| Constraints { no_repeat, allow_empty, max_entities })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Every state reached by following allowed tokens has a non-empty allowed
    /// set, and every walk terminates with EOS.
    #[test]
    fn no_dead_ends(names in names(), cfg in constraints(), seed in any::<u64>()) {
        let kb = Kb::build(EntityCatalog::from_names(&names).unwrap()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bound = cfg.max_entities * 16 + 2;
        for _ in 0..50 {
            let mut st = ConstraintState::default();
            let mut steps = 0;
            loop {
                let allowed = kb.trie.allowed_tokens(st.cursor, &st.emitted, &cfg);
                prop_assert!(!allowed.is_empty());
                prop_assert!(allowed.windows(2).all(|w| w[0] < w[1]));
                let t = allowed[rng.random_range(0..allowed.len())];
                st.push(&kb.trie, &cfg, t).unwrap();
                steps += 1;
                prop_assert!(steps <= bound);
                if t == EOS {
                    prop_assert!(st.emitted.count() <= cfg.max_entities);
                    break;
                }
            }
        }
    }

    /// Two builds of the same catalog agree on stats and on allowed sets at
    /// random cursors.
    #[test]
    fn build_is_deterministic(names in names(), cfg in constraints(), seed in any::<u64>()) {
        let cat = EntityCatalog::from_names(&names).unwrap();
        let a = Kb::build(cat.clone()).unwrap();
        let b = Kb::build(cat).unwrap();
        prop_assert_eq!(a.trie.stats(), b.trie.stats());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = ConstraintState::default();
        for _ in 0..1000 {
            let x = a.trie.allowed_tokens(st.cursor, &st.emitted, &cfg);
            prop_assert_eq!(&x, &b.trie.allowed_tokens(st.cursor, &st.emitted, &cfg));
            let t = x[rng.random_range(0..x.len())];
            if t == EOS {
                st = ConstraintState::default();
            } else {
                st.push_unchecked(&a.trie, t);
            }
        }
    }
}
