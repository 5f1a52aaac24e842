use crate::error::{Error, Result};

/// Linear warm-up followed by polynomial decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleSpec {
    pub base_lr: f64,
    pub warmup_iters: usize,
    pub max_iters: usize,
    pub power: f64,
}

impl ScheduleSpec {
    pub fn new(base_lr: f64, warmup_iters: usize, max_iters: usize, power: f64) -> Result<Self> {
        if !(base_lr > 0.0 && base_lr.is_finite()) {
            return Err(Error::contract(format!("base_lr must be positive, got {base_lr}")));
        }
        if !(power > 0.0 && power.is_finite()) {
            return Err(Error::contract(format!("power must be positive, got {power}")));
        }
        if max_iters == 0 || warmup_iters >= max_iters {
            return Err(Error::contract(format!(
                "need warmup_iters < max_iters, got {warmup_iters} / {max_iters}"
            )));
        }
        Ok(ScheduleSpec {
            base_lr,
            warmup_iters,
            max_iters,
            power,
        })
    }
}

/// Learning rate at iteration `iter` (0-based, `iter <= max_iters`).
///
/// The warm-up ramp includes its endpoint, so `iter == warmup_iters` yields
/// exactly `base_lr`; poly decay applies strictly after it.
pub fn learning_rate(spec: &ScheduleSpec, iter: usize) -> Result<f64> {
    if iter > spec.max_iters {
        return Err(Error::contract(format!(
            "iteration {iter} beyond schedule length {}",
            spec.max_iters
        )));
    }
    if spec.warmup_iters > 0 && iter <= spec.warmup_iters {
        return Ok(spec.base_lr * iter as f64 / spec.warmup_iters as f64);
    }
    Ok(spec.base_lr * (1.0 - iter as f64 / spec.max_iters as f64).powf(spec.power))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn reference_schedule() -> ScheduleSpec {
        ScheduleSpec::new(2.5e-4, 5000, 100_000, 0.9).unwrap()
    }

    #[test]
    fn warmup_start_and_end() {
        let s = reference_schedule();
        assert_eq!(learning_rate(&s, 0).unwrap(), 0.0);
        assert_eq!(learning_rate(&s, 5000).unwrap(), 2.5e-4);
        assert_eq!(learning_rate(&s, 2500).unwrap(), 1.25e-4);
    }

    #[test]
    fn midpoint_poly_value() {
        let s = reference_schedule();
        let lr = learning_rate(&s, 50_000).unwrap();
        assert!((lr - 2.5e-4 * 0.5f64.powf(0.9)).abs() <= 1e-9);
        assert!((lr - 1.3397e-4).abs() < 1e-8);
    }

    #[test]
    fn non_increasing_after_warmup() {
        let s = ScheduleSpec::new(0.05, 150, 3000, 0.9).unwrap();
        let lrs: Vec<f64> = (150..=3000).map(|i| learning_rate(&s, i).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(learning_rate(&s, 3000).unwrap(), 0.0);
        // ramp reaches base_lr exactly at its end
        assert_eq!(learning_rate(&s, 150).unwrap(), 0.05);
        let zero_warmup = ScheduleSpec::new(0.05, 0, 10, 0.9).unwrap();
        assert_eq!(learning_rate(&zero_warmup, 0).unwrap(), 0.05);
    }

    #[test]
    fn beyond_end_is_rejected() {
        assert!(learning_rate(&reference_schedule(), 100_001).is_err());
        assert!(ScheduleSpec::new(0.1, 10, 10, 0.9).is_err());
        assert!(ScheduleSpec::new(0.0, 0, 10, 0.9).is_err());
    }
}
