use std::f64::consts::PI;

use super::Parameters;

/// `ceil(warmup_ratio * total_steps)`, with products within 1e-9 of an
/// integer snapped to it first (so 0.1 * 30 is 3, not 4).
pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    let exact = warmup_ratio * total_steps as f64;
    let nearest = exact.round();
    if (exact - nearest).abs() <= 1e-9 * nearest.max(1.0) {
        nearest as usize
    } else {
        exact.ceil() as usize
    }
}

/// Linear warmup from 0 to `peak_lr`, then cosine decay to 0 at
/// `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_ratio: f64, peak_lr: f64) -> f64 {
    if total_steps == 0 || step >= total_steps {
        return 0.0;
    }
    let warmup = warmup_steps(total_steps, warmup_ratio);
    if step < warmup {
        return peak_lr * step as f64 / warmup as f64;
    }
    let progress = (step - warmup) as f64 / (total_steps - warmup) as f64;
    peak_lr * 0.5 * (1.0 + (PI * progress).cos())
}

pub fn global_norm(grads: &Parameters) -> f64 {
    grads
        .tensors()
        .iter()
        .flat_map(|(_, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` in place so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_gradients(grads: &mut Parameters, max_norm: f64) -> f64 {
    assert!(max_norm > 0.0, "max_norm must be positive");
    let norm = global_norm(grads);
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
