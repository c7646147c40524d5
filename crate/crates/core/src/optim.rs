//! SGD with Nesterov momentum and a plateau-driven learning-rate schedule.

use alloc::vec;
use alloc::vec::Vec;

use crate::nn::Param;

/// Nesterov SGD with coupled weight decay, in the common formulation
/// `d = g + wd * p; v = mu * v + d; p -= lr * (d + mu * v)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub momentum: f32,
    pub weight_decay: f32,
    /// One velocity buffer per parameter, in visiting order.
    pub buffers: Vec<Vec<f32>>,
}

impl Sgd {
    pub fn new(momentum: f32, weight_decay: f32) -> Self {
        Sgd { momentum, weight_decay, buffers: Vec::new() }
    }

    /// Updates parameter number `index` in place.
    pub fn update(&mut self, index: usize, p: &mut Param, lr: f32) {
        while self.buffers.len() <= index {
            self.buffers.push(Vec::new());
        }
        let buf = &mut self.buffers[index];
        if buf.len() != p.len() {
            *buf = vec![0.0; p.len()];
        }
        let (mu, wd) = (self.momentum, self.weight_decay);
        for ((w, &g), v) in p.value.iter_mut().zip(&p.grad).zip(buf.iter_mut()) {
            let d = g + wd * *w;
            *v = mu * *v + d;
            *w -= lr * (d + mu * *v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScheduleEvent {
    Improved,
    Waiting,
    Decayed,
    Stop,
}

/// Divides the learning rate by `factor` whenever the validation metric
/// (higher is better) fails to improve for `patience` evaluations in a row,
/// and asks to stop at plateau number `max_plateaus`.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PlateauSchedule {
    pub lr: f64,
    pub factor: f64,
    pub patience: usize,
    pub max_plateaus: usize,
    pub best: Option<f64>,
    pub bad_evals: usize,
    pub plateaus: usize,
}

impl PlateauSchedule {
    pub fn new(lr: f64, factor: f64, patience: usize, max_plateaus: usize) -> Self {
        PlateauSchedule { lr, factor, patience, max_plateaus, best: None, bad_evals: 0, plateaus: 0 }
    }

    pub fn observe(&mut self, metric: f64) -> ScheduleEvent {
        if self.best.is_none_or(|b| metric > b) {
            self.best = Some(metric);
            self.bad_evals = 0;
            return ScheduleEvent::Improved;
        }
        self.bad_evals += 1;
        if self.bad_evals < self.patience {
            return ScheduleEvent::Waiting;
        }
        self.bad_evals = 0;
        self.plateaus += 1;
        if self.plateaus >= self.max_plateaus {
            return ScheduleEvent::Stop;
        }
        self.lr /= self.factor;
        ScheduleEvent::Decayed
    }
}
