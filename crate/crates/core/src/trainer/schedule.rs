//! Learning-rate schedule: linear warmup then step decay.
//!
//! Products of the base rate and the decay factors are formed on the
//! shortest decimal representations of the operands and rounded to `f64`
//! once, so `3e-4 * 0.1` is exactly `3e-5` rather than
//! `2.9999999999999997e-5`.

use super::TrainConfig;

/// Splits the shortest round-trip representation of a finite, non-zero
/// `x` into an integer mantissa and a decimal exponent.
fn decimal_parts(x: f64) -> Option<(bool, u128, i32)> {
    let s = format!("{:e}", x);
    let (mant, exp) = s.split_once('e')?;
    let mut exp: i32 = exp.parse().ok()?;
    let (neg, mant) = match mant.strip_prefix('-') {
        Some(m) => (true, m),
        None => (false, mant),
    };
    let digits: String = match mant.split_once('.') {
        Some((int, frac)) => {
            exp -= frac.len() as i32;
            format!("{int}{frac}")
        }
        None => mant.to_string(),
    };
    Some((neg, digits.parse().ok()?, exp))
}

/// `a * b` computed on decimal representations and rounded once.
pub fn decimal_mul(a: f64, b: f64) -> f64 {
    if a == 0.0 || b == 0.0 || !a.is_finite() || !b.is_finite() {
        return a * b;
    }
    match (decimal_parts(a), decimal_parts(b)) {
        (Some((na, ma, ea)), Some((nb, mb, eb))) => match ma.checked_mul(mb) {
            Some(m) => {
                let sign = if na != nb { "-" } else { "" };
                format!("{sign}{m}e{}", ea + eb).parse().unwrap_or(a * b)
            }
            None => a * b,
        },
        _ => a * b,
    }
}

/// Number of milestones at or before `step`.
fn decays_passed(step: usize, milestones: &[usize]) -> usize {
    milestones.iter().filter(|&&m| step >= m).count()
}

/// Rate for 0-based `step`: warmup from `0.1 * base` to `base` over
/// `warmup_steps`, times `decay_factor` per passed milestone.
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    let warm = if step < cfg.warmup_steps {
        0.1 + 0.9 * step as f64 / cfg.warmup_steps as f64
    } else {
        1.0
    };
    let mut lr = decimal_mul(cfg.base_lr, warm);
    for _ in 0..decays_passed(step, &cfg.decay_steps) {
        lr = decimal_mul(lr, cfg.decay_factor);
    }
    lr
}
