/// Step at which the triangular schedule peaks.
///
/// `ceil(warmup_fraction * total_steps)`, kept strictly inside `(0, total)` so
/// both endpoints stay at zero. A small guard absorbs floating-point noise in
/// the product (`0.3 * 10` is not exactly 3).
pub fn peak_step(total_steps: usize, warmup_fraction: f64) -> usize {
    let raw = (warmup_fraction * total_steps as f64 - 1e-9).ceil().max(1.0) as usize;
    raw.min(total_steps.saturating_sub(1)).max(1)
}

/// Triangular learning rate: linear rise from 0 at step 0 to `peak_lr` at the
/// peak step, then linear decay to 0 at `total_steps`.
///
/// With a single step there is no interior point and the rate is 0 throughout.
pub fn lr_at(step: usize, total_steps: usize, peak_lr: f64, warmup_fraction: f64) -> f64 {
    assert!(step <= total_steps, "step {step} beyond total {total_steps}");
    if total_steps < 2 || step == 0 || step == total_steps {
        return 0.0;
    }
    let peak = peak_step(total_steps, warmup_fraction);
    if step == peak {
        peak_lr
    } else if step < peak {
        peak_lr * step as f64 / peak as f64
    } else {
        peak_lr * (total_steps - step) as f64 / (total_steps - peak) as f64
    }
}
