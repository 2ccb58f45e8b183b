//! Dynamic graph temperature and the stepped learning-rate schedule.

use crate::error::{Error, Result};

/// Warm-hold then logarithmic decay for the contrastive temperature:
/// `τ_g(e) = τ_init` while `e ≤ W_U`, then `τ_init / log_{W_U}(e)`,
/// never below `floor`. Epochs are 1-based so the boundary is continuous
/// (`log_{W_U}(W_U) = 1`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureSchedule {
    pub tau_g_init: f64,
    pub warmup_epochs: usize,
    pub floor: f64,
}

impl TemperatureSchedule {
    pub fn new(tau_g_init: f64, warmup_epochs: usize) -> Result<Self> {
        Self::with_floor(tau_g_init, warmup_epochs, 1e-3)
    }

    pub fn with_floor(tau_g_init: f64, warmup_epochs: usize, floor: f64) -> Result<Self> {
        if tau_g_init <= 0.0 {
            return Err(Error::config(format!("tau_g_init must be positive, got {tau_g_init}")));
        }
        if warmup_epochs < 2 {
            return Err(Error::config(format!(
                "temperature warm-up must span at least 2 epochs so the log base exceeds 1, got {warmup_epochs}"
            )));
        }
        if floor <= 0.0 {
            return Err(Error::config(format!("temperature floor must be positive, got {floor}")));
        }
        Ok(TemperatureSchedule {
            tau_g_init,
            warmup_epochs,
            floor,
        })
    }
}

/// Temperature in effect at a 1-based epoch.
pub fn graph_temperature(sched: &TemperatureSchedule, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if epoch <= sched.warmup_epochs {
        return sched.tau_g_init;
    }
    let log_base = (epoch as f64).ln() / (sched.warmup_epochs as f64).ln();
    (sched.tau_g_init / log_base).max(sched.floor)
}

/// Linear warm-up to the base rate, then divide by `decay_factor` at each
/// milestone epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LrSchedule {
    pub base_lr: f64,
    pub warmup_epochs: usize,
    pub milestones: Vec<usize>,
    pub decay_factor: f64,
}

impl LrSchedule {
    pub fn new(base_lr: f64, warmup_epochs: usize, milestones: Vec<usize>, decay_factor: f64) -> Result<Self> {
        // A zero rate is legal: it freezes the parameters, which the
        // harness uses as a do-nothing baseline.
        if base_lr < 0.0 || !base_lr.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and >= 0, got {base_lr}")));
        }
        if decay_factor <= 0.0 || decay_factor > 1.0 {
            return Err(Error::config(format!(
                "decay factor must lie in (0, 1], got {decay_factor}"
            )));
        }
        let mut sorted = milestones.clone();
        sorted.sort_unstable();
        if sorted != milestones {
            return Err(Error::config("milestones must be sorted ascending".to_string()));
        }
        Ok(LrSchedule {
            base_lr,
            warmup_epochs,
            milestones,
            decay_factor,
        })
    }
}

/// Learning rate in effect at a 1-based epoch.
pub fn learning_rate(sched: &LrSchedule, epoch: usize) -> f64 {
    assert!(epoch >= 1, "epochs are 1-based");
    if sched.warmup_epochs > 0 && epoch <= sched.warmup_epochs {
        return sched.base_lr * epoch as f64 / sched.warmup_epochs as f64;
    }
    let decades = sched.milestones.iter().filter(|&&m| m <= epoch).count();
    sched.base_lr * sched.decay_factor.powi(decades as i32)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn temperature_holds_through_warmup_and_halves_at_the_square() {
        let sched = TemperatureSchedule::new(0.1, 15).unwrap();
        for epoch in 1..=15 {
            assert!((graph_temperature(&sched, epoch) - 0.1).abs() <= 1e-12);
        }
        // log_15(225) = 2
        assert!((graph_temperature(&sched, 225) - 0.05).abs() <= 1e-12);
    }

    #[test]
    fn temperature_is_continuous_then_strictly_decreasing_to_the_floor() {
        let sched = TemperatureSchedule::new(0.1, 15).unwrap();
        let mut prev = graph_temperature(&sched, 1);
        let mut hit_floor = false;
        for epoch in 2..=100_000 {
            let cur = graph_temperature(&sched, epoch);
            assert!(cur > 0.0);
            assert!(cur <= prev + 1e-15, "increased at epoch {epoch}");
            if epoch > 15 && !hit_floor {
                if cur == sched.floor {
                    hit_floor = true;
                } else {
                    assert!(cur < prev, "not strictly decreasing at epoch {epoch}");
                }
            }
            prev = cur;
        }
        assert_eq!(graph_temperature(&sched, 100_000).max(sched.floor), graph_temperature(&sched, 100_000));
    }

    #[test]
    fn schedule_validation_rejects_bad_inputs() {
        assert!(TemperatureSchedule::new(0.0, 15).is_err());
        assert!(TemperatureSchedule::new(0.1, 1).is_err());
        assert!(LrSchedule::new(-0.1, 15, vec![], 0.1).is_err());
        assert!(LrSchedule::new(0.05, 15, vec![180, 150], 0.1).is_err());
        assert!(LrSchedule::new(0.05, 15, vec![150], 1.5).is_err());
    }

    #[test]
    fn lr_follows_the_published_recipe() {
        let sched = LrSchedule::new(0.05, 15, vec![150, 180, 210], 0.1).unwrap();
        assert!((learning_rate(&sched, 160) - 0.005).abs() < 1e-15);
        assert!((learning_rate(&sched, 1) - 0.05 / 15.0).abs() < 1e-15);
        assert!((learning_rate(&sched, 211) - 0.00005).abs() < 1e-15);
        assert!((learning_rate(&sched, 16) - 0.05).abs() < 1e-15);
    }

    #[test]
    fn lr_is_piecewise_constant_between_milestones() {
        let sched = LrSchedule::new(0.05, 10, vec![100, 200], 0.1).unwrap();
        for epoch in 11..=99 {
            assert_eq!(learning_rate(&sched, epoch), learning_rate(&sched, 11));
        }
        for epoch in 100..=199 {
            assert_eq!(learning_rate(&sched, epoch), learning_rate(&sched, 100));
        }
        let product: f64 = learning_rate(&sched, 250) / learning_rate(&sched, 50);
        assert!((product - 0.1f64.powi(2)).abs() < 1e-15);
        for epoch in 11..300 {
            assert!(learning_rate(&sched, epoch + 1) <= learning_rate(&sched, epoch));
            assert!(learning_rate(&sched, epoch) > 0.0);
        }
    }
}
