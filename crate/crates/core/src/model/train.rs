use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{backward, ModelConfig, ToyModelParams};
use crate::catalog::{EntityCatalog, EntityId};
use crate::error::{Error, Result};
use crate::tokenizer::{tokenize, Mode, TokenSeq, Tokenizer, Vocabulary, EOS, SEP};

/// How the gold set is ordered into a target sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OrderStrategy {
    /// Fresh uniform permutation every epoch.
    Shuffle,
    /// First-mention order from the source corpus.
    MentionOrder,
    /// Sorted by entity name.
    Lexicographic,
}

impl OrderStrategy {
    pub fn as_str(self) -> &'static str {
        match self {
            OrderStrategy::Shuffle => "shuffle",
            OrderStrategy::MentionOrder => "mention_order",
            OrderStrategy::Lexicographic => "lexicographic",
        }
    }
}

impl std::str::FromStr for OrderStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "shuffle" => Ok(OrderStrategy::Shuffle),
            "mention_order" => Ok(OrderStrategy::MentionOrder),
            "lexicographic" => Ok(OrderStrategy::Lexicographic),
            other => Err(Error::Config(format!("unknown order strategy {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam() -> Self {
        Optimizer::Adam { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    pub seed: u64,
    pub order_strategy: OrderStrategy,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    /// Target orderings sampled per example per epoch.
    pub permutations_per_example: usize,
    pub init_scale: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-2,
            epochs: 30,
            seed: 0,
            order_strategy: OrderStrategy::Shuffle,
            batch_size: 1,
            optimizer: Optimizer::adam(),
            permutations_per_example: 1,
            init_scale: 0.1,
            model: ModelConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.permutations_per_example == 0 {
            return Err(Error::Config("epochs, batch_size and permutations_per_example must be positive".into()));
        }
        if self.model.dim == 0 {
            return Err(Error::Config("model.dim must be positive".into()));
        }
        Ok(())
    }
}

/// A training/evaluation example with tokenized input.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Example {
    pub doc_id: String,
    pub input: TokenSeq,
    /// Sorted, distinct.
    pub gold: Vec<EntityId>,
    pub gold_order: Option<Vec<EntityId>>,
}

/// Output-vocabulary tokenization of every catalog name, plus each name's rank
/// in lexicographic order.
#[derive(Debug, Clone)]
pub struct NameTable {
    tokens: Vec<TokenSeq>,
    lex_rank: Vec<u32>,
}

impl NameTable {
    pub fn new<T: Tokenizer + ?Sized>(catalog: &EntityCatalog, vocab: &Vocabulary, tokenizer: &T) -> Result<Self> {
        let tokens = catalog
            .names()
            .iter()
            .map(|n| tokenize(tokenizer, n.as_str(), vocab, Mode::Output))
            .collect::<Result<Vec<_>>>()?;
        let mut by_name: Vec<usize> = (0..catalog.len()).collect();
        by_name.sort_by(|&a, &b| catalog.names()[a].cmp(&catalog.names()[b]));
        let mut lex_rank = vec![0u32; catalog.len()];
        for (rank, &i) in by_name.iter().enumerate() {
            lex_rank[i] = rank as u32;
        }
        Ok(NameTable { tokens, lex_rank })
    }

    pub fn tokens(&self, e: EntityId) -> Option<&[u32]> {
        self.tokens.get(e.index()).map(Vec::as_slice)
    }

    pub fn sequences(&self) -> &[TokenSeq] {
        &self.tokens
    }

    pub fn lexicographic(&self, ids: &mut [EntityId]) {
        ids.sort_by_key(|e| self.lex_rank[e.index()]);
    }
}

/// `name₁ SEP name₂ SEP … nameₘ EOS` in the given order.
pub fn build_target(order: &[EntityId], names: &NameTable) -> Result<TokenSeq> {
    let mut out = Vec::new();
    for (i, &e) in order.iter().enumerate() {
        if i > 0 {
            out.push(SEP);
        }
        let toks = names.tokens(e).ok_or_else(|| Error::UnknownEntity(e.to_string()))?;
        out.extend_from_slice(toks);
    }
    out.push(EOS);
    Ok(out)
}

/// Uniform permutation of `0..m` by Fisher–Yates.
pub fn sample_permutation<R: Rng + ?Sized>(rng: &mut R, m: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..m).collect();
    for i in (1..m).rev() {
        let j = rng.random_range(0..=i);
        p.swap(i, j);
    }
    p
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ToyModelParams,
    /// Mean per-target loss of each epoch.
    pub loss_curve: Vec<f64>,
}

struct AdamState {
    m: ToyModelParams,
    v: ToyModelParams,
    t: i32,
}

fn apply_update(params: &mut ToyModelParams, grad: &ToyModelParams, cfg: &TrainConfig, adam: &mut Option<AdamState>) {
    match (cfg.optimizer, adam) {
        (Optimizer::Sgd, _) | (_, None) => {
            for (p, g) in params.tensors_mut().into_iter().zip(grad.tensors()) {
                for (x, dx) in p.iter_mut().zip(g) {
                    *x -= cfg.lr * dx;
                }
            }
        }
        (Optimizer::Adam { beta1, beta2, eps }, Some(st)) => {
            st.t += 1;
            let c1 = 1.0 - beta1.powi(st.t);
            let c2 = 1.0 - beta2.powi(st.t);
            let ps = params.tensors_mut();
            let ms = st.m.tensors_mut();
            let vs = st.v.tensors_mut();
            for (((p, m), v), g) in ps.into_iter().zip(ms).zip(vs).zip(grad.tensors()) {
                for i in 0..p.len() {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    p[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + eps);
                }
            }
        }
    }
}

fn accumulate(into: &mut ToyModelParams, g: &ToyModelParams) {
    for (a, b) in into.tensors_mut().into_iter().zip(g.tensors()) {
        for (x, y) in a.iter_mut().zip(b) {
            *x += y;
        }
    }
}

/// Train from scratch. Deterministic for a fixed config.
pub fn train(
    examples: &[Example],
    cfg: &TrainConfig,
    names: &NameTable,
    v_in: usize,
    v_out: usize,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.order_strategy == OrderStrategy::MentionOrder {
        if let Some(ex) = examples.iter().find(|e| e.gold_order.is_none()) {
            return Err(Error::MissingMentionOrder { doc_id: ex.doc_id.clone() });
        }
    }
    // Fixed orders are computed once.
    let fixed: Vec<Option<TokenSeq>> = examples
        .iter()
        .map(|ex| match cfg.order_strategy {
            OrderStrategy::Shuffle => Ok(None),
            OrderStrategy::MentionOrder => build_target(ex.gold_order.as_deref().unwrap_or_default(), names).map(Some),
            OrderStrategy::Lexicographic => {
                let mut ids = ex.gold.clone();
                names.lexicographic(&mut ids);
                build_target(&ids, names).map(Some)
            }
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut params = ToyModelParams::random(cfg.model, v_in, v_out, cfg.init_scale, &mut rng);
    let mut adam = matches!(cfg.optimizer, Optimizer::Adam { .. }).then(|| AdamState {
        m: ToyModelParams::zeros(cfg.model, v_in, v_out),
        v: ToyModelParams::zeros(cfg.model, v_in, v_out),
        t: 0,
    });
    let mut loss_curve = Vec::with_capacity(cfg.epochs);
    let mut order = Vec::new();

    for _ in 0..cfg.epochs {
        let visit = sample_permutation(&mut rng, examples.len());
        let mut epoch_loss = 0.0;
        let mut targets = 0usize;
        for batch in visit.chunks(cfg.batch_size) {
            let mut grad = ToyModelParams::zeros(cfg.model, v_in, v_out);
            let mut n = 0usize;
            for &i in batch {
                let ex = &examples[i];
                for _ in 0..cfg.permutations_per_example {
                    let target = match &fixed[i] {
                        Some(t) => t.clone(),
                        None => {
                            let pi = sample_permutation(&mut rng, ex.gold.len());
                            order.clear();
                            order.extend(pi.iter().map(|&j| ex.gold[j]));
                            build_target(&order, names)?
                        }
                    };
                    let (loss, g) = backward(&params, &ex.input, &target);
                    epoch_loss += loss;
                    accumulate(&mut grad, &g);
                    n += 1;
                }
            }
            let scale = 1.0 / n as f64;
            for t in grad.tensors_mut() {
                t.iter_mut().for_each(|x| *x *= scale);
            }
            apply_update(&mut params, &grad, cfg, &mut adam);
            targets += n;
        }
        loss_curve.push(epoch_loss / targets as f64);
    }
    Ok(TrainOutput { params, loss_curve })
}
