/// `log Σ exp(x)` with max subtraction; `-inf` for an empty slice.
pub fn log_sum_exp<I: IntoIterator<Item = f64> + Clone>(xs: I) -> f64 {
    let m = xs.clone().into_iter().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    let s: f64 = xs.into_iter().map(|x| (x - m).exp()).sum();
    m + s.ln()
}

/// In-place log-softmax.
pub fn log_softmax(v: &mut [f64]) {
    let lse = log_sum_exp(v.iter().copied());
    for x in v {
        *x -= lse;
    }
}
