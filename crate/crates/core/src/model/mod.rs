//! Small trainable autoregressive scorer.
//!
//! The encoder is the mean of input-token embeddings. The decoder is a
//! fixed-window feedforward layer: the feature for the next token is the input
//! encoding concatenated with the output embeddings of the last `k` prefix
//! tokens (left-padded with BOS), projected to output logits and log-softmaxed.

mod checkpoint;
mod grad;
mod train;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use grad::{backward, nll_loss};
pub use train::{
    build_target, sample_permutation, train, Example, NameTable, Optimizer, OrderStrategy, TrainConfig, TrainOutput,
};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decoding::Scorer;
use crate::math::log_softmax;
use crate::tokenizer::{TokenId, BOS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding dimension.
    pub dim: usize,
    /// Number of previous output tokens the decoder sees.
    pub context: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { dim: 32, context: 3 }
    }
}

/// Model parameters. Also used as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyModelParams {
    pub dim: usize,
    pub context: usize,
    pub v_in: usize,
    pub v_out: usize,
    /// `v_in × dim`, row-major.
    pub e_in: Vec<f64>,
    /// `v_out × dim`, row-major.
    pub e_out: Vec<f64>,
    /// `feature_len × v_out`, row-major.
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl ToyModelParams {
    pub fn zeros(cfg: ModelConfig, v_in: usize, v_out: usize) -> Self {
        let f = cfg.dim * (1 + cfg.context);
        ToyModelParams {
            dim: cfg.dim,
            context: cfg.context,
            v_in,
            v_out,
            e_in: vec![0.0; v_in * cfg.dim],
            e_out: vec![0.0; v_out * cfg.dim],
            w: vec![0.0; f * v_out],
            b: vec![0.0; v_out],
        }
    }

    /// Every entry drawn from `uniform(-scale, scale)`.
    pub fn random<R: Rng>(cfg: ModelConfig, v_in: usize, v_out: usize, scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(cfg, v_in, v_out);
        for t in p.tensors_mut() {
            for x in t.iter_mut() {
                *x = rng.random_range(-scale..scale);
            }
        }
        p
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig { dim: self.dim, context: self.context }
    }

    pub fn feature_len(&self) -> usize {
        self.dim * (1 + self.context)
    }

    pub fn num_params(&self) -> usize {
        self.e_in.len() + self.e_out.len() + self.w.len() + self.b.len()
    }

    pub fn tensors(&self) -> [&[f64]; 4] {
        [&self.e_in, &self.e_out, &self.w, &self.b]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<f64>; 4] {
        [&mut self.e_in, &mut self.e_out, &mut self.w, &mut self.b]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Mean of input embeddings; zero vector for empty input.
    pub fn encode_input(&self, input: &[TokenId]) -> Vec<f64> {
        let d = self.dim;
        let mut enc = vec![0.0; d];
        if input.is_empty() {
            return enc;
        }
        for &t in input {
            let row = &self.e_in[t as usize * d..(t as usize + 1) * d];
            for (e, r) in enc.iter_mut().zip(row) {
                *e += r;
            }
        }
        let n = input.len() as f64;
        enc.iter_mut().for_each(|e| *e /= n);
        enc
    }

    /// Output tokens occupying the `k` context slots, oldest first.
    pub(crate) fn context_tokens(&self, prefix: &[TokenId]) -> Vec<TokenId> {
        let k = self.context;
        (0..k)
            .map(|j| {
                let pos = prefix.len() as isize - k as isize + j as isize;
                if pos < 0 {
                    BOS
                } else {
                    prefix[pos as usize]
                }
            })
            .collect()
    }

    pub(crate) fn feature(&self, encoding: &[f64], prefix: &[TokenId], out: &mut Vec<f64>) {
        let d = self.dim;
        out.clear();
        out.extend_from_slice(encoding);
        for t in self.context_tokens(prefix) {
            out.extend_from_slice(&self.e_out[t as usize * d..(t as usize + 1) * d]);
        }
    }

    pub(crate) fn logits(&self, feature: &[f64], out: &mut Vec<f64>) {
        let v = self.v_out;
        out.clear();
        out.extend_from_slice(&self.b);
        for (f, &x) in feature.iter().enumerate() {
            if x == 0.0 {
                continue;
            }
            let row = &self.w[f * v..(f + 1) * v];
            for (o, w) in out.iter_mut().zip(row) {
                *o += x * w;
            }
        }
    }

    /// Log-probabilities of the next output token.
    pub fn next_logprobs(&self, encoding: &[f64], prefix: &[TokenId]) -> Vec<f64> {
        let mut feat = Vec::with_capacity(self.feature_len());
        let mut out = Vec::with_capacity(self.v_out);
        self.feature(encoding, prefix, &mut feat);
        self.logits(&feat, &mut out);
        log_softmax(&mut out);
        out
    }
}

impl Scorer for ToyModelParams {
    type Encoding = Vec<f64>;

    fn output_size(&self) -> usize {
        self.v_out
    }

    fn encode(&self, input: &[TokenId]) -> Vec<f64> {
        self.encode_input(input)
    }

    fn next_logprobs(&self, encoding: &Vec<f64>, prefix: &[TokenId], out: &mut Vec<f64>) {
        let mut feat = Vec::with_capacity(self.feature_len());
        self.feature(encoding, prefix, &mut feat);
        self.logits(&feat, out);
        log_softmax(out);
    }
}
