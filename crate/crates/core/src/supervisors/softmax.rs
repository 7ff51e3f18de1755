//! Scores read directly off one softmax row.

/// `−Σ p ln p` in nats, with `0 ln 0 = 0`.
pub fn entropy(p: &[f64]) -> f64 {
    -p.iter().filter(|v| **v > 0.0).map(|v| v * libm::log(*v)).sum::<f64>()
}

/// `1 − max p`.
pub fn max_softmax(p: &[f64]) -> f64 {
    1.0 - p.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// `1 − (p₍₁₎ − p₍₂₎)` for the two largest entries.
pub fn pcs(p: &[f64]) -> f64 {
    let (mut a, mut b) = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for &v in p {
        if v > a {
            b = a;
            a = v;
        } else if v > b {
            b = v;
        }
    }
    1.0 - (a - b)
}

pub fn softmax_entropy(p: &[f64]) -> f64 {
    entropy(p)
}

/// `1 − Σ p²`.
pub fn deepgini(p: &[f64]) -> f64 {
    1.0 - p.iter().map(|v| v * v).sum::<f64>()
}
