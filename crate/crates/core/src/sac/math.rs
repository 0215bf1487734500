//! Discrete soft actor-critic objectives on flat `batch × actions` arrays.

use super::SacError;

/// Probability floor inside `log`.
pub const PROB_FLOOR: f64 = 1e-8;

pub fn safe_log(p: f64) -> f64 {
    p.max(PROB_FLOOR).ln()
}

pub fn softmax(logits: &[f64]) -> Result<Vec<f64>, SacError> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(SacError::NonFinite("policy logits".into()));
    }
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / s).collect())
}

/// Row-wise softmax of a `batch × n` array.
pub fn softmax_rows(logits: &[f64], n: usize) -> Result<Vec<f64>, SacError> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(n) {
        out.extend(softmax(row)?);
    }
    Ok(out)
}

pub fn entropy(probs: &[f64]) -> f64 {
    -probs.iter().map(|p| p * safe_log(*p)).sum::<f64>()
}

/// Greedy action, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `Σ_a π(a) (Q(a) − α log π(a))`.
pub fn soft_value(q: &[f64], probs: &[f64], alpha: f64) -> f64 {
    q.iter()
        .zip(probs)
        .map(|(q, p)| p * (q - alpha * safe_log(*p)))
        .sum()
}

/// Bellman targets `r + γ (1 − d) V(s')`, with `V` taken over the elementwise
/// minimum of the two target critics.
pub fn critic_targets(
    rewards: &[f64],
    dones: &[bool],
    next_probs: &[f64],
    next_q1: &[f64],
    next_q2: &[f64],
    gamma: f64,
    alpha: f64,
    n: usize,
) -> Result<Vec<f64>, SacError> {
    let mut y = Vec::with_capacity(rewards.len());
    for (i, (r, d)) in rewards.iter().zip(dones).enumerate() {
        let target = if *d {
            *r
        } else {
            let qmin: Vec<f64> = next_q1[i * n..(i + 1) * n]
                .iter()
                .zip(&next_q2[i * n..(i + 1) * n])
                .map(|(a, b)| a.min(*b))
                .collect();
            r + gamma * soft_value(&qmin, &next_probs[i * n..(i + 1) * n], alpha)
        };
        if !target.is_finite() {
            return Err(SacError::NonFinite("critic target".into()));
        }
        y.push(target);
    }
    Ok(y)
}

/// Mean of `½ (Q(s, a) − y)²` and its gradient with respect to every
/// predicted Q entry (zero for untaken actions).
pub fn critic_loss(q: &[f64], actions: &[usize], targets: &[f64], n: usize) -> (f64, Vec<f64>) {
    let b = actions.len() as f64;
    let mut grad = vec![0.0; q.len()];
    let mut loss = 0.0;
    for (i, (a, y)) in actions.iter().zip(targets).enumerate() {
        let diff = q[i * n + a] - y;
        loss += 0.5 * diff * diff;
        grad[i * n + a] = diff / b;
    }
    (loss / b, grad)
}

/// Mean of `Σ_a π(a) (α log π(a) − Q(a))` and its gradient with respect to the
/// policy logits.
pub fn policy_loss(logits: &[f64], q_min: &[f64], alpha: f64, n: usize) -> Result<(f64, Vec<f64>), SacError> {
    let probs = softmax_rows(logits, n)?;
    let b = (logits.len() / n) as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for i in 0..logits.len() / n {
        let p = &probs[i * n..(i + 1) * n];
        let q = &q_min[i * n..(i + 1) * n];
        // c_a = ∂/∂π_a of π_a (α log π_a − Q_a)
        let c: Vec<f64> = p
            .iter()
            .zip(q)
            .map(|(p, q)| {
                let dlog = if *p > PROB_FLOOR { 1.0 } else { 0.0 };
                alpha * (safe_log(*p) + dlog) - q
            })
            .collect();
        loss += p
            .iter()
            .zip(q)
            .map(|(p, q)| p * (alpha * safe_log(*p) - q))
            .sum::<f64>();
        let mean_c: f64 = p.iter().zip(&c).map(|(p, c)| p * c).sum();
        for j in 0..n {
            grad[i * n + j] = p[j] * (c[j] - mean_c) / b;
        }
    }
    Ok((loss / b, grad))
}

/// `J(α) = α (H̄_batch − H̄)` where `H̄_batch` is the mean policy entropy,
/// together with `∂J/∂log α = α (H̄_batch − H̄)`.
pub fn temperature_loss(probs: &[f64], n: usize, alpha: f64, target_entropy: f64) -> (f64, f64) {
    let rows = probs.len() / n;
    let mean_h = probs.chunks_exact(n).map(entropy).sum::<f64>() / rows as f64;
    let j = alpha * (mean_h - target_entropy);
    (j, j)
}

/// `0.2 · ln |A|`.
pub fn target_entropy(actions: usize, scale: f64) -> f64 {
    scale * (actions as f64).ln()
}
