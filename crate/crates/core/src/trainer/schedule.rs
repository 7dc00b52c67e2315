/// Loss weight for divergent labels at `epoch`: 1 at the start, decaying
/// geometrically and floored at `gamma_min`.
pub fn gamma_schedule(epoch: usize, gamma_min: f64, gamma_decay: f64) -> f64 {
    let e = i32::try_from(epoch).unwrap_or(i32::MAX);
    gamma_decay.powi(e).max(gamma_min).min(1.0)
}

/// Linear warmup to `base` over `warmup` steps, then linear decay to 0 at `total`.
pub fn learning_rate(step: usize, total: usize, warmup: usize, base: f64) -> f64 {
    if step < warmup {
        return base * (step + 1) as f64 / warmup as f64;
    }
    let rest = total.saturating_sub(warmup).max(1);
    base * (1.0 - (step - warmup) as f64 / rest as f64).max(0.0)
}
