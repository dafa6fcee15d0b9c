use super::ToyModelParams;
use crate::math::log_softmax;
use crate::tokenizer::TokenId;

/// Teacher-forced negative log-likelihood of `target` (which should end with EOS).
pub fn nll_loss(params: &ToyModelParams, input: &[TokenId], target: &[TokenId]) -> f64 {
    let enc = params.encode_input(input);
    let mut feat = Vec::with_capacity(params.feature_len());
    let mut lp = Vec::with_capacity(params.v_out);
    let mut loss = 0.0;
    for j in 0..target.len() {
        params.feature(&enc, &target[..j], &mut feat);
        params.logits(&feat, &mut lp);
        log_softmax(&mut lp);
        loss -= lp[target[j] as usize];
    }
    loss
}

/// Loss and its exact gradient with respect to every parameter.
pub fn backward(params: &ToyModelParams, input: &[TokenId], target: &[TokenId]) -> (f64, ToyModelParams) {
    let d = params.dim;
    let v = params.v_out;
    let mut grad = ToyModelParams::zeros(params.config(), params.v_in, params.v_out);
    let enc = params.encode_input(input);
    let mut feat = Vec::with_capacity(params.feature_len());
    let mut dz = Vec::with_capacity(v);
    let mut dfeat = vec![0.0; params.feature_len()];
    let mut denc = vec![0.0; d];
    let mut loss = 0.0;

    for j in 0..target.len() {
        let y = target[j] as usize;
        params.feature(&enc, &target[..j], &mut feat);
        params.logits(&feat, &mut dz);
        log_softmax(&mut dz);
        loss -= dz[y];
        // d(-log softmax_y)/dz = softmax - onehot(y)
        for x in dz.iter_mut() {
            *x = x.exp();
        }
        dz[y] -= 1.0;

        for (gb, g) in grad.b.iter_mut().zip(&dz) {
            *gb += g;
        }
        for (f, &x) in feat.iter().enumerate() {
            let wrow = &params.w[f * v..(f + 1) * v];
            dfeat[f] = wrow.iter().zip(&dz).map(|(w, g)| w * g).sum();
            if x != 0.0 {
                for (gw, g) in grad.w[f * v..(f + 1) * v].iter_mut().zip(&dz) {
                    *gw += x * g;
                }
            }
        }
        for (de, df) in denc.iter_mut().zip(&dfeat[..d]) {
            *de += df;
        }
        for (slot, t) in params.context_tokens(&target[..j]).into_iter().enumerate() {
            let src = &dfeat[d * (slot + 1)..d * (slot + 2)];
            for (g, s) in grad.e_out[t as usize * d..(t as usize + 1) * d].iter_mut().zip(src) {
                *g += s;
            }
        }
    }

    if !input.is_empty() {
        let n = input.len() as f64;
        for &t in input {
            for (g, de) in grad.e_in[t as usize * d..(t as usize + 1) * d].iter_mut().zip(&denc) {
                *g += de / n;
            }
        }
    }
    (loss, grad)
}
