//! Constrained autoregressive decoding: greedy and beam search over the
//! entity-name trie, and parsing of decoded token sequences into entity sets.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::catalog::EntityId;
use crate::error::{Error, Result};
use crate::math::log_sum_exp;
use crate::tokenizer::{TokenId, TokenSeq, EOS, SEP};
use crate::trie::{ConstraintState, Constraints, TokenTrie};

/// Tolerance on `log Σ exp` of a scorer's output.
pub const NORMALIZATION_TOLERANCE: f64 = 1e-6;

/// Anything that yields normalized next-token log-probabilities over the
/// output vocabulary.
pub trait Scorer {
    type Encoding;

    fn output_size(&self) -> usize;

    fn encode(&self, input: &[TokenId]) -> Self::Encoding;

    /// Fill `out` with one log-probability per output token.
    fn next_logprobs(&self, encoding: &Self::Encoding, prefix: &[TokenId], out: &mut Vec<f64>);
}

impl<S: Scorer + ?Sized> Scorer for &S {
    type Encoding = S::Encoding;

    fn output_size(&self) -> usize {
        (**self).output_size()
    }

    fn encode(&self, input: &[TokenId]) -> Self::Encoding {
        (**self).encode(input)
    }

    fn next_logprobs(&self, encoding: &Self::Encoding, prefix: &[TokenId], out: &mut Vec<f64>) {
        (**self).next_logprobs(encoding, prefix, out)
    }
}

pub fn check_logprobs(lp: &[f64], expected_len: usize) -> Result<()> {
    if lp.len() != expected_len {
        return Err(Error::ScorerContractViolation(format!(
            "expected {expected_len} log-probabilities, got {}",
            lp.len()
        )));
    }
    if let Some(i) = lp.iter().position(|x| !x.is_finite()) {
        return Err(Error::ScorerContractViolation(format!("non-finite log-probability at token {i}")));
    }
    let lse = log_sum_exp(lp.iter().copied());
    if lse.abs() > NORMALIZATION_TOLERANCE {
        return Err(Error::ScorerContractViolation(format!("log-sum-exp is {lse:e}, not 0")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub beam_size: usize,
    pub max_entities: usize,
    pub max_tokens: usize,
    pub no_repeat: bool,
    pub allow_empty: bool,
    pub length_normalize: bool,
    pub renormalize_constrained: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            beam_size: 20,
            max_entities: 64,
            max_tokens: 256,
            no_repeat: true,
            allow_empty: false,
            length_normalize: false,
            renormalize_constrained: true,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beam_size == 0 || self.max_entities == 0 || self.max_tokens == 0 {
            return Err(Error::Config("beam_size, max_entities and max_tokens must be positive".into()));
        }
        Ok(())
    }

    pub fn constraints(&self) -> Constraints {
        Constraints { no_repeat: self.no_repeat, allow_empty: self.allow_empty, max_entities: self.max_entities }
    }

    pub fn greedy(self) -> Self {
        DecodeConfig { beam_size: 1, ..self }
    }
}

/// A partial decode.
#[derive(Debug, Clone)]
pub struct Hypothesis {
    pub tokens: TokenSeq,
    pub score: f64,
    pub state: ConstraintState,
    pub finished: bool,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis { tokens: Vec::new(), score: 0.0, state: ConstraintState::default(), finished: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finished {
    pub tokens: TokenSeq,
    /// Final score (length-normalized when configured).
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GreedyOutput {
    pub tokens: TokenSeq,
    pub score: f64,
    /// The token budget ran out and trailing partial names were cut.
    pub truncated: bool,
}

/// Allowed tokens for `h`, restricted to EOS when only one slot remains.
fn effective_allowed(trie: &TokenTrie, cons: &Constraints, max_tokens: usize, h: &Hypothesis, out: &mut Vec<TokenId>) {
    h.state.allowed(trie, cons, out);
    if h.tokens.len() + 1 >= max_tokens {
        out.retain(|&t| t == EOS);
    }
}

/// Per-token step scores over `allowed`, renormalized when configured.
fn step_scores<'a>(lp: &'a [f64], allowed: &'a [TokenId], renormalize: bool) -> impl Iterator<Item = (TokenId, f64)> + 'a {
    let norm = if renormalize { log_sum_exp(allowed.iter().map(|&t| lp[t as usize])) } else { 0.0 };
    allowed.iter().map(move |&t| (t, lp[t as usize] - norm))
}

fn final_score(score: f64, len: usize, cfg: &DecodeConfig) -> f64 {
    if cfg.length_normalize {
        score / len.max(1) as f64
    } else {
        score
    }
}

/// Higher score first; then shorter; then lexicographically smaller tokens.
pub fn rank(a_score: f64, a: &[TokenId], b_score: f64, b: &[TokenId]) -> Ordering {
    b_score
        .total_cmp(&a_score)
        .then(a.len().cmp(&b.len()))
        .then_with(|| a.cmp(b))
}

pub fn greedy_decode<S: Scorer>(scorer: &S, trie: &TokenTrie, input: &[TokenId], cfg: &DecodeConfig) -> Result<GreedyOutput> {
    cfg.validate()?;
    let cons = cfg.constraints();
    let enc = scorer.encode(input);
    let mut h = Hypothesis::root();
    let mut allowed = Vec::new();
    let mut lp = Vec::new();
    while h.tokens.len() < cfg.max_tokens {
        effective_allowed(trie, &cons, cfg.max_tokens, &h, &mut allowed);
        if allowed.is_empty() {
            break;
        }
        lp.clear();
        scorer.next_logprobs(&enc, &h.tokens, &mut lp);
        check_logprobs(&lp, scorer.output_size())?;
        // ascending ids, so the first maximum is the lowest-id tie winner
        let (tok, s) = step_scores(&lp, &allowed, cfg.renormalize_constrained)
            .fold(None, |best: Option<(TokenId, f64)>, (t, s)| match best {
                Some((_, bs)) if bs >= s => best,
                _ => Some((t, s)),
            })
            .expect("non-empty");
        h.score += s;
        h.tokens.push(tok);
        h.state.push_unchecked(trie, tok);
        if tok == EOS {
            h.finished = true;
            let score = final_score(h.score, h.tokens.len(), cfg);
            return Ok(GreedyOutput { tokens: h.tokens, score, truncated: false });
        }
    }
    truncate_to_complete(scorer, &enc, trie, h.tokens, cfg)
}

/// Cut an unfinished greedy decode back to its last complete name and close it.
fn truncate_to_complete<S: Scorer>(
    scorer: &S,
    enc: &S::Encoding,
    trie: &TokenTrie,
    tokens: TokenSeq,
    cfg: &DecodeConfig,
) -> Result<GreedyOutput> {
    let mut cut: TokenSeq = match tokens.iter().rposition(|&t| t == SEP) {
        Some(i) => tokens[..i].to_vec(),
        None if cfg.allow_empty => Vec::new(),
        None => return Err(Error::NoFinishedHypothesis { max_tokens: cfg.max_tokens }),
    };
    cut.push(EOS);
    let score = score_sequence(scorer, enc, trie, &cut, cfg)?;
    Ok(GreedyOutput { score: final_score(score, cut.len(), cfg), tokens: cut, truncated: true })
}

/// Teacher-forced score of a constrained sequence under the decoder's scoring rule.
pub fn score_sequence<S: Scorer>(
    scorer: &S,
    enc: &S::Encoding,
    trie: &TokenTrie,
    tokens: &[TokenId],
    cfg: &DecodeConfig,
) -> Result<f64> {
    let cons = cfg.constraints();
    let mut st = ConstraintState::default();
    let mut allowed = Vec::new();
    let mut lp = Vec::new();
    let mut score = 0.0;
    for (i, &t) in tokens.iter().enumerate() {
        st.allowed(trie, &cons, &mut allowed);
        if allowed.binary_search(&t).is_err() {
            return Err(Error::DisallowedToken { token: t });
        }
        lp.clear();
        scorer.next_logprobs(enc, &tokens[..i], &mut lp);
        check_logprobs(&lp, scorer.output_size())?;
        let norm = if cfg.renormalize_constrained {
            log_sum_exp(allowed.iter().map(|&a| lp[a as usize]))
        } else {
            0.0
        };
        score += lp[t as usize] - norm;
        st.push_unchecked(trie, t);
    }
    Ok(score)
}

struct Candidate {
    parent: usize,
    token: TokenId,
    score: f64,
}

/// Constrained beam search. Returns up to `beam_size` finished hypotheses,
/// best first.
pub fn beam_decode<S: Scorer>(scorer: &S, trie: &TokenTrie, input: &[TokenId], cfg: &DecodeConfig) -> Result<Vec<Finished>> {
    cfg.validate()?;
    let cons = cfg.constraints();
    let enc = scorer.encode(input);
    let mut live = vec![Hypothesis::root()];
    let mut pool: Vec<Finished> = Vec::new();
    let mut allowed = Vec::new();
    let mut lp = Vec::new();
    let mut cands: Vec<Candidate> = Vec::new();

    for _ in 0..cfg.max_tokens {
        if live.is_empty() {
            break;
        }
        cands.clear();
        for (i, h) in live.iter().enumerate() {
            effective_allowed(trie, &cons, cfg.max_tokens, h, &mut allowed);
            if allowed.is_empty() {
                continue;
            }
            lp.clear();
            scorer.next_logprobs(&enc, &h.tokens, &mut lp);
            check_logprobs(&lp, scorer.output_size())?;
            cands.extend(
                step_scores(&lp, &allowed, cfg.renormalize_constrained)
                    .map(|(token, s)| Candidate { parent: i, token, score: h.score + s }),
            );
        }
        // Live hypotheses share a length, so comparing parent prefixes then the
        // new token is the full lexicographic tie-break.
        cands.sort_by(|a, b| {
            b.score
                .total_cmp(&a.score)
                .then_with(|| live[a.parent].tokens.cmp(&live[b.parent].tokens))
                .then(a.token.cmp(&b.token))
        });
        let mut next = Vec::with_capacity(cfg.beam_size);
        for c in cands.iter().take(cfg.beam_size) {
            let parent = &live[c.parent];
            let mut tokens = Vec::with_capacity(parent.tokens.len() + 1);
            tokens.extend_from_slice(&parent.tokens);
            tokens.push(c.token);
            if c.token == EOS {
                pool.push(Finished { score: final_score(c.score, tokens.len(), cfg), tokens });
            } else {
                let mut state = parent.state.clone();
                state.push_unchecked(trie, c.token);
                next.push(Hypothesis { tokens, score: c.score, state, finished: false });
            }
        }
        live = next;
        if !cfg.length_normalize && pool.len() >= cfg.beam_size {
            sort_pool(&mut pool);
            pool.truncate(cfg.beam_size);
            // Step scores are ≤ 0, so live hypotheses can only get worse.
            let worst = pool.last().map_or(f64::NEG_INFINITY, |f| f.score);
            if live.iter().all(|h| h.score <= worst) {
                break;
            }
        }
    }
    if pool.is_empty() {
        return Err(Error::NoFinishedHypothesis { max_tokens: cfg.max_tokens });
    }
    sort_pool(&mut pool);
    pool.truncate(cfg.beam_size);
    Ok(pool)
}

fn sort_pool(pool: &mut [Finished]) {
    pool.sort_by(|a, b| rank(a.score, &a.tokens, b.score, &b.tokens));
}

/// Result of splitting a decoded sequence into entities.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ParsedOutput {
    pub entities: BTreeSet<EntityId>,
    /// Segments that did not spell a catalog name.
    pub dropped: usize,
}

/// Split on SEP up to the first EOS and map each segment to its entity.
/// Total over arbitrary token sequences.
pub fn parse_output(tokens: &[TokenId], trie: &TokenTrie) -> ParsedOutput {
    let body = match tokens.iter().position(|&t| t == EOS) {
        Some(i) => &tokens[..i],
        None => tokens,
    };
    let mut out = ParsedOutput::default();
    if body.is_empty() {
        return out;
    }
    for seg in body.split(|&t| t == SEP) {
        match trie.lookup(seg) {
            Some(e) => {
                out.entities.insert(e);
            }
            None => out.dropped += 1,
        }
    }
    out
}

/// Decode one input and parse the best hypothesis. `beam_size == 1` uses the
/// greedy path.
pub fn predict<S: Scorer>(scorer: &S, trie: &TokenTrie, input: &[TokenId], cfg: &DecodeConfig) -> Result<Prediction> {
    let (tokens, score, truncated) = if cfg.beam_size == 1 {
        let g = greedy_decode(scorer, trie, input, cfg)?;
        (g.tokens, g.score, g.truncated)
    } else {
        let best = beam_decode(scorer, trie, input, cfg)?.swap_remove(0);
        (best.tokens, best.score, false)
    };
    let parsed = parse_output(&tokens, trie);
    Ok(Prediction { entities: parsed.entities, dropped: parsed.dropped, score, tokens, truncated })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub entities: BTreeSet<EntityId>,
    pub dropped: usize,
    pub score: f64,
    pub tokens: TokenSeq,
    pub truncated: bool,
}

/// Scorer that ignores its input and returns a fixed table of log-probabilities
/// per prefix, falling back to uniform. Handy for tests and examples.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    pub vocab_size: usize,
}

impl Scorer for UniformScorer {
    type Encoding = ();

    fn output_size(&self) -> usize {
        self.vocab_size
    }

    fn encode(&self, _input: &[TokenId]) {}

    fn next_logprobs(&self, _enc: &(), _prefix: &[TokenId], out: &mut Vec<f64>) {
        let v = -(self.vocab_size as f64).ln();
        out.resize(self.vocab_size, v);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::EntityCatalog;
    use crate::tokenizer::{build_vocabularies, tokenize, Mode, Vocabulary, WordPunctTokenizer};

    fn setup(names: &[&str]) -> (EntityCatalog, Vocabulary, TokenTrie) {
        let cat = EntityCatalog::from_names(names).unwrap();
        let (_, out) = build_vocabularies(&WordPunctTokenizer, &cat, [], 1).unwrap();
        let trie = TokenTrie::build(&cat, &out, &WordPunctTokenizer).unwrap();
        (cat, out, trie)
    }

    /// Puts ~all mass on following a fixed target sequence.
    struct OracleScorer {
        target: Vec<TokenId>,
        v: usize,
    }

    impl Scorer for OracleScorer {
        type Encoding = ();
        fn output_size(&self) -> usize {
            self.v
        }
        fn encode(&self, _: &[TokenId]) {}
        fn next_logprobs(&self, _: &(), prefix: &[TokenId], out: &mut Vec<f64>) {
            out.resize(self.v, 0.0);
            let want = self.target.get(prefix.len()).copied().unwrap_or(EOS) as usize;
            for (i, x) in out.iter_mut().enumerate() {
                *x = if i == want { 10.0 } else { -10.0 };
            }
            crate::math::log_softmax(out);
        }
    }

    #[test]
    fn oracle_follow_through() {
        let (_, v, trie) = setup(&["Earth", "Parsec", "Black hole"]);
        let e = v.get("Earth").unwrap();
        let p = v.get("Parsec").unwrap();
        let target = vec![e, SEP, p, EOS];
        let s = OracleScorer { target: target.clone(), v: v.len() };
        let g = greedy_decode(&s, &trie, &[], &DecodeConfig::default().greedy()).unwrap();
        assert_eq!(g.tokens, target);
        let b = beam_decode(&s, &trie, &[], &DecodeConfig::default()).unwrap();
        assert_eq!(b[0].tokens, target);
    }

    #[test]
    fn forced_single_entity() {
        let (_, v, trie) = setup(&["Earth"]);
        let s = UniformScorer { vocab_size: v.len() };
        let g = greedy_decode(&s, &trie, &[], &DecodeConfig::default().greedy()).unwrap();
        assert_eq!(g.tokens, vec![v.get("Earth").unwrap(), EOS]);
        // every step was forced, so the renormalized score is exactly zero
        assert_eq!(g.score, 0.0);
    }

    #[test]
    fn uniform_tie_break_by_hand() {
        // Output ids: Earth=4, Parsec=5. Uniform scorer, renormalized.
        // Step 1 at root: {Earth, Parsec}, tie → Earth (lowest id).
        // Step 2 after Earth: {EOS, SEP}, tie → EOS (id 1 < 2).
        let (_, v, trie) = setup(&["Earth", "Parsec"]);
        assert_eq!(v.get("Earth"), Some(4));
        let s = UniformScorer { vocab_size: v.len() };
        let g = greedy_decode(&s, &trie, &[], &DecodeConfig::default().greedy()).unwrap();
        assert_eq!(g.tokens, vec![4, EOS]);
        assert!((g.score - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        // without renormalization the raw uniform log-probs are summed
        let raw = DecodeConfig { renormalize_constrained: false, ..DecodeConfig::default().greedy() };
        let g = greedy_decode(&s, &trie, &[], &raw).unwrap();
        assert!((g.score - 2.0 * -(v.len() as f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn beam_one_matches_greedy() {
        let (_, v, trie) = setup(&["Earth", "Parsec", "Black hole", "Black hole jet", "Solar System"]);
        let s = UniformScorer { vocab_size: v.len() };
        let cfg = DecodeConfig::default().greedy();
        let g = greedy_decode(&s, &trie, &[], &cfg).unwrap();
        let b = beam_decode(&s, &trie, &[], &cfg).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].tokens, g.tokens);
        assert_eq!(b[0].score, g.score);
    }

    #[test]
    fn contract_violations_detected() {
        struct Bad(f64);
        impl Scorer for Bad {
            type Encoding = ();
            fn output_size(&self) -> usize {
                6
            }
            fn encode(&self, _: &[TokenId]) {}
            fn next_logprobs(&self, _: &(), _: &[TokenId], out: &mut Vec<f64>) {
                out.resize(6, self.0);
            }
        }
        let (_, _, trie) = setup(&["Earth", "Parsec"]);
        let cfg = DecodeConfig::default();
        let e = greedy_decode(&Bad(0.0), &trie, &[], &cfg.greedy()).unwrap_err();
        assert!(e.is_contract_violation());
        let e = beam_decode(&Bad(f64::NAN), &trie, &[], &cfg).unwrap_err();
        assert!(matches!(e, Error::ScorerContractViolation(_)));
    }

    #[test]
    fn max_tokens_too_small() {
        let (_, v, trie) = setup(&["Solar System"]);
        let s = UniformScorer { vocab_size: v.len() };
        let cfg = DecodeConfig { max_tokens: 2, ..Default::default() };
        assert!(matches!(beam_decode(&s, &trie, &[], &cfg), Err(Error::NoFinishedHypothesis { .. })));
        assert!(matches!(greedy_decode(&s, &trie, &[], &cfg.greedy()), Err(Error::NoFinishedHypothesis { .. })));
    }

    #[test]
    fn greedy_truncation_keeps_complete_names() {
        let (_, v, trie) = setup(&["Solar System", "Earth"]);
        // Prefer SEP over EOS so greedy keeps going until the budget runs out.
        struct PreferSep(usize);
        impl Scorer for PreferSep {
            type Encoding = ();
            fn output_size(&self) -> usize {
                self.0
            }
            fn encode(&self, _: &[TokenId]) {}
            fn next_logprobs(&self, _: &(), _: &[TokenId], out: &mut Vec<f64>) {
                out.clear();
                out.extend((0..self.0).map(|i| if i == SEP as usize { 2.0 } else { 0.0 }));
                crate::math::log_softmax(out);
            }
        }
        // Solar System SEP <budget>: the root cannot take EOS, so greedy cuts
        // back to the last complete name.
        let solar_system = vec![v.get("Solar").unwrap(), v.get("System").unwrap(), EOS];
        for max_tokens in [4, 5] {
            let cfg = DecodeConfig { max_tokens, no_repeat: false, ..DecodeConfig::default().greedy() };
            let g = greedy_decode(&PreferSep(v.len()), &trie, &[], &cfg).unwrap();
            assert!(g.truncated);
            assert_eq!(g.tokens, solar_system);
            assert_eq!(parse_output(&g.tokens, &trie).dropped, 0);
        }
        // With one slot to spare after a terminal, the last slot is forced to EOS.
        let cfg = DecodeConfig { max_tokens: 3, no_repeat: false, ..DecodeConfig::default().greedy() };
        let g = greedy_decode(&PreferSep(v.len()), &trie, &[], &cfg).unwrap();
        assert!(!g.truncated);
        assert_eq!(g.tokens, solar_system);
    }

    #[test]
    fn parse_output_cases() {
        let (cat, v, trie) = setup(&["Earth", "Parsec"]);
        let e = v.get("Earth").unwrap();
        let p = v.get("Parsec").unwrap();
        let got = parse_output(&[e, SEP, e, SEP, p, EOS], &trie);
        assert_eq!(got.entities, [cat.id("Earth").unwrap(), cat.id("Parsec").unwrap()].into());
        assert_eq!(got.dropped, 0);
        assert_eq!(parse_output(&[EOS], &trie), ParsedOutput::default());
        let mut v2 = v.clone();
        let qzx = tokenize(&WordPunctTokenizer, "qzx", &v2, Mode::Input).unwrap()[0];
        let got = parse_output(&[e, SEP, qzx, EOS], &trie);
        assert_eq!(got.entities.len(), 1);
        assert_eq!(got.dropped, 1);
        v2 = Vocabulary::new();
        assert_eq!(v2.len(), 4);
    }
}
