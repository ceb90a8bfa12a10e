use serde::{Deserialize, Serialize};

/// Minimum relative improvement of the best epoch loss that resets patience.
pub const PLATEAU_REL_TOL: f64 = 1e-4;

/// Learning rate reduced by `reduction_factor` whenever the epoch loss stops
/// improving for `patience_epochs` epochs; training stops once the rate falls
/// below `floor_lr`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlateauSchedule {
    pub initial_lr: f64,
    pub reduction_factor: f64,
    pub patience_epochs: usize,
    pub floor_lr: f64,
}

impl PlateauSchedule {
    pub fn new(initial_lr: f64, patience_epochs: usize) -> Self {
        Self {
            initial_lr,
            reduction_factor: 10.0,
            patience_epochs,
            floor_lr: 1e-6,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.initial_lr > self.floor_lr && self.floor_lr > 0.0) {
            return Err(format!(
                "plateau schedule needs initial_lr > floor_lr > 0 (got {} and {})",
                self.initial_lr, self.floor_lr
            ));
        }
        if self.reduction_factor <= 1.0 {
            return Err("plateau reduction factor must exceed 1".into());
        }
        if self.patience_epochs == 0 {
            return Err("plateau patience must be at least one epoch".into());
        }
        Ok(())
    }

    pub fn tracker(&self) -> PlateauTracker {
        PlateauTracker {
            schedule: *self,
            best: f64::INFINITY,
            stale: 0,
            reductions: 0,
        }
    }
}

/// What the schedule says after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlateauStatus {
    pub lr: f64,
    pub reduced: bool,
    pub stop: bool,
}

/// Running state of a [`PlateauSchedule`].
#[derive(Debug, Clone)]
pub struct PlateauTracker {
    schedule: PlateauSchedule,
    best: f64,
    stale: usize,
    reductions: u32,
}

impl PlateauTracker {
    pub fn lr(&self) -> f64 {
        self.schedule.initial_lr / self.schedule.reduction_factor.powi(self.reductions as i32)
    }

    pub fn should_stop(&self) -> bool {
        // Relative slack so that e.g. 1e-4 / 100 is not mistaken for < 1e-6.
        self.lr() < self.schedule.floor_lr * (1.0 - 1e-9)
    }

    pub fn observe(&mut self, epoch_loss: f64) -> PlateauStatus {
        let mut reduced = false;
        if !self.best.is_finite() || epoch_loss < self.best - PLATEAU_REL_TOL * self.best.abs() {
            self.best = epoch_loss;
            self.stale = 0;
        } else {
            self.stale += 1;
            if self.stale >= self.schedule.patience_epochs {
                self.reductions += 1;
                self.stale = 0;
                reduced = true;
            }
        }
        PlateauStatus {
            lr: self.lr(),
            reduced,
            stop: self.should_stop(),
        }
    }
}

/// Replays a loss history through the schedule and returns the current rate.
pub fn plateau_lr(schedule: &PlateauSchedule, history: &[f64]) -> PlateauStatus {
    let mut tracker = schedule.tracker();
    let mut status = PlateauStatus {
        lr: tracker.lr(),
        reduced: false,
        stop: false,
    };
    for &loss in history {
        status = tracker.observe(loss);
    }
    status
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_loss_keeps_rate() {
        let s = PlateauSchedule::new(1e-3, 3);
        let hist: Vec<f64> = (0..50).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(plateau_lr(&s, &hist).lr, 1e-3);
    }

    #[test]
    fn flat_loss_reduces_by_ten() {
        let s = PlateauSchedule::new(1e-4, 5);
        // First epoch sets the best; five flat epochs follow.
        let hist = vec![1.0; 6];
        let st = plateau_lr(&s, &hist);
        assert!(st.reduced);
        assert!((st.lr - 1e-5).abs() < 1e-20);
        assert!(!st.stop);
    }

    #[test]
    fn stops_below_floor() {
        let s = PlateauSchedule::new(1e-4, 1);
        let mut t = s.tracker();
        t.observe(1.0);
        assert!(!t.observe(1.0).stop); // 1e-5
        assert!(!t.observe(1.0).stop); // 1e-6 is not below the floor
        let st = t.observe(1.0); // 1e-7
        assert!(st.stop);
    }

    #[test]
    fn tiny_improvement_counts_as_plateau() {
        let s = PlateauSchedule::new(1e-3, 2);
        let st = plateau_lr(&s, &[1.0, 0.99999, 0.99998]);
        assert!(st.reduced);
    }
}
