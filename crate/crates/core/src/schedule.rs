//! Linear warmup followed by linear decay to zero.

/// Number of warmup steps, kept inside `[1, total - 1]` when possible so the
/// schedule starts and ends at zero.
pub fn warmup_steps(total_steps: usize, warmup_frac: f64) -> usize {
    let w = (warmup_frac * total_steps as f64).round() as usize;
    if total_steps < 2 {
        return total_steps;
    }
    w.clamp(1, total_steps - 1)
}

pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_frac: f64) -> f64 {
    let step = step.min(total_steps);
    let w = warmup_steps(total_steps, warmup_frac);
    if w == 0 {
        return 0.0;
    }
    if step <= w {
        peak_lr * step as f64 / w as f64
    } else {
        peak_lr * (1.0 - (step - w) as f64 / (total_steps - w) as f64)
    }
}
