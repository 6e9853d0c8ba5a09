use std::f64::consts::PI;

/// Linear warmup over the first `ceil(warmup_ratio * total)` steps, then
/// cosine decay to zero at `total`.
pub fn learning_rate(step: usize, total: usize, peak: f64, warmup_ratio: f64) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let warmup = (warmup_ratio * total as f64).ceil() as usize;
    if step < warmup {
        return peak * (step + 1) as f64 / warmup as f64;
    }
    let span = (total - warmup).max(1) as f64;
    let progress = ((step - warmup) as f64 / span).min(1.0);
    peak * 0.5 * (1.0 + (PI * progress).cos())
}
