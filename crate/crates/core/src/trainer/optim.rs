//! Optimizers and learning-rate schedules.

use std::f64::consts::PI;

use crate::config::{OptimizerKind, OptimizerSpec, SchedulerKind, SchedulerSpec};
use crate::model::layers::Param;

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Learning rate for `epoch` (0-based) under `sched`, starting from `base`.
pub fn scheduled_lr(base: f64, sched: &SchedulerSpec, epoch: u32) -> f64 {
    match sched.kind {
        SchedulerKind::Constant => base,
        SchedulerKind::CosineAnnealingLr => {
            let t_max = f64::from(sched.t_max.unwrap_or(1).max(1));
            let eta_min = sched.eta_min.unwrap_or(0.0);
            eta_min + (base - eta_min) * (1.0 + (PI * f64::from(epoch) / t_max).cos()) / 2.0
        }
    }
}

/// Per-parameter optimizer state, updated in place.
#[derive(Debug, Clone)]
pub struct Optimizer {
    spec: OptimizerSpec,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Optimizer {
    pub fn new(spec: &OptimizerSpec) -> Self {
        Self {
            spec: spec.clone(),
            step: 0,
            first: vec![],
            second: vec![],
        }
    }

    /// Apply one update with learning rate `lr` using the accumulated gradients.
    pub fn step(&mut self, params: Vec<&mut Param>, lr: f64) {
        if self.first.is_empty() {
            self.first = params.iter().map(|p| vec![0.0; p.value.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let wd = self.spec.weight_decay;
        let t = self.step as i32;
        let (bc1, bc2) = (1.0 - BETA1.powi(t), 1.0 - BETA2.powi(t));
        for (i, p) in params.into_iter().enumerate() {
            let (m, v) = (&mut self.first[i], &mut self.second[i]);
            for j in 0..p.value.len() {
                let w = p.value[j];
                match self.spec.kind {
                    OptimizerKind::Adam | OptimizerKind::AdamW => {
                        let g = if self.spec.kind == OptimizerKind::Adam {
                            p.grad[j] + wd * w
                        } else {
                            p.grad[j]
                        };
                        m[j] = BETA1 * m[j] + (1.0 - BETA1) * g;
                        v[j] = BETA2 * v[j] + (1.0 - BETA2) * g * g;
                        let update = (m[j] / bc1) / ((v[j] / bc2).sqrt() + ADAM_EPS);
                        let decayed = if self.spec.kind == OptimizerKind::AdamW {
                            w * (1.0 - lr * wd)
                        } else {
                            w
                        };
                        p.value[j] = decayed - lr * update;
                    }
                    OptimizerKind::Sgd => {
                        let g = p.grad[j] + wd * w;
                        let mu = self.spec.momentum.unwrap_or(0.0);
                        m[j] = if self.step == 1 { g } else { mu * m[j] + g };
                        p.value[j] = w - lr * m[j];
                    }
                }
            }
        }
    }
}
