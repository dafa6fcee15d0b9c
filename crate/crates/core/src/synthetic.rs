//! Seeded synthetic catalogs and corpora for benchmarks and ablations.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::EntityCatalog;
use crate::ingest::EtRecord;

const SYLLABLES: [&str; 40] = [
    "ka", "lo", "mi", "ra", "ven", "tor", "sa", "qu", "el", "dor", "an", "is", "ul", "mar", "zen", "pi", "fa", "gu",
    "ho", "jex", "ne", "bri", "cas", "dro", "em", "fi", "gal", "hu", "ix", "ju", "kel", "lum", "mo", "nor", "ob",
    "pra", "ros", "sil", "tem", "vy",
];

fn word<R: Rng>(rng: &mut R, syllables: usize) -> String {
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(SYLLABLES.choose(rng).expect("non-empty"));
    }
    let mut c = w.chars();
    let first = c.next().expect("non-empty").to_ascii_uppercase();
    std::iter::once(first).chain(c).collect()
}

/// `n` distinct multi-word names. A small pool of head words makes many names
/// share prefixes; some carry a parenthesised qualifier.
pub fn synthetic_names(n: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let heads: Vec<String> = (0..(n / 40).max(8)).map(|_| word(&mut rng, 2)).collect();
    let mut seen = HashSet::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let words = rng.random_range(1..=4);
        let mut name = heads.choose(&mut rng).expect("non-empty").clone();
        for _ in 1..words {
            name.push(' ');
            let syl = rng.random_range(1..=3);
            name.push_str(&word(&mut rng, syl));
        }
        if rng.random_bool(0.05) {
            name.push_str(&format!(" ({})", word(&mut rng, 2)));
        }
        if seen.insert(name.clone()) {
            out.push(name);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusSpec {
    pub entities: usize,
    pub docs: usize,
    pub min_gold: usize,
    pub max_gold: usize,
    /// Filler words between entity cues.
    pub max_filler: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec { entities: 50, docs: 200, min_gold: 2, max_gold: 6, max_filler: 3, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub catalog: EntityCatalog,
    pub docs: Vec<EtRecord>,
}

impl SyntheticCorpus {
    /// First `n_train` docs and the remainder.
    pub fn split(&self, n_train: usize) -> (&[EtRecord], &[EtRecord]) {
        self.docs.split_at(n_train.min(self.docs.len()))
    }
}

/// Documents mention 2-6 entities in random order; each mention is one of the
/// entity's two cue words, so input tokens predict the gold set. `gold_order`
/// follows the order of the cues.
pub fn synthetic_corpus(spec: &CorpusSpec) -> SyntheticCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let names = synthetic_names(spec.entities, spec.seed ^ 0x5eed);
    let catalog = EntityCatalog::from_names(&names).expect("synthetic names are valid and distinct");
    let cues: Vec<[String; 2]> = (0..spec.entities).map(|i| [format!("cue{i}a"), format!("cue{i}b")]).collect();
    let fillers: Vec<String> = (0..20).map(|i| format!("w{i}")).collect();
    let ids: Vec<usize> = (0..spec.entities).collect();
    let docs = (0..spec.docs)
        .map(|d| {
            let k = rng.random_range(spec.min_gold..=spec.max_gold).min(spec.entities);
            let chosen: Vec<usize> = ids.choose_multiple(&mut rng, k).copied().collect();
            let mut words = Vec::new();
            for &e in &chosen {
                for _ in 0..rng.random_range(0..=spec.max_filler) {
                    words.push(fillers.choose(&mut rng).expect("non-empty").clone());
                }
                words.push(cues[e].choose(&mut rng).expect("two cues").clone());
            }
            let order: Vec<String> = chosen.iter().map(|&e| catalog.names()[e].as_str().to_owned()).collect();
            let mut gold = order.clone();
            gold.sort();
            EtRecord { doc_id: format!("syn{d:04}"), text: words.join(" "), gold, gold_order: Some(order) }
        })
        .collect();
    SyntheticCorpus { catalog, docs }
}

/// Shuffle records in place with a seeded RNG.
pub fn shuffle_records(records: &mut [EtRecord], seed: u64) {
    records.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_distinct_and_canonical() {
        let names = synthetic_names(5000, 3);
        assert_eq!(names.len(), 5000);
        let cat = EntityCatalog::from_names(&names).unwrap();
        assert_eq!(cat.len(), 5000);
        assert_eq!(names, synthetic_names(5000, 3));
    }

    #[test]
    fn corpus_shape() {
        let c = synthetic_corpus(&CorpusSpec::default());
        assert_eq!(c.catalog.len(), 50);
        assert_eq!(c.docs.len(), 200);
        for d in &c.docs {
            d.validate().unwrap();
            assert!((2..=6).contains(&d.gold.len()));
            d.to_example(&c.catalog).unwrap();
        }
    }
}
