use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Exponential learning-rate decay from `lr_init` to `lr_final` over `horizon` steps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub lr_init: f64,
    pub lr_final: f64,
    pub horizon: usize,
}

impl ScheduleSpec {
    pub fn constant(lr: f64) -> Self {
        Self { lr_init: lr, lr_final: lr, horizon: 0 }
    }
}

/// `lr_init · (lr_final / lr_init)^(min(t, T) / T)`.
pub fn lr_at(spec: &ScheduleSpec, t: usize) -> f64 {
    if spec.horizon == 0 || spec.lr_init == spec.lr_final {
        return spec.lr_init;
    }
    if t == 0 {
        return spec.lr_init;
    }
    if t >= spec.horizon {
        return spec.lr_final;
    }
    let frac = t as f64 / spec.horizon as f64;
    spec.lr_init * (spec.lr_final / spec.lr_init).powf(frac)
}

/// Parameter groups, in checkpoint and gradient-buffer order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Group {
    Positions,
    Rotations,
    Scales,
    Opacities,
    Sh,
    Triplanes,
    Decoders,
}

impl Group {
    pub const ALL: [Group; 7] =
        [Group::Positions, Group::Rotations, Group::Scales, Group::Opacities, Group::Sh, Group::Triplanes, Group::Decoders];

    pub fn name(self) -> &'static str {
        match self {
            Group::Positions => "positions",
            Group::Rotations => "rotations",
            Group::Scales => "scales",
            Group::Opacities => "opacities",
            Group::Sh => "sh",
            Group::Triplanes => "triplanes",
            Group::Decoders => "decoders",
        }
    }

    pub fn index(self) -> usize {
        Group::ALL.iter().position(|g| *g == self).unwrap()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamGroup {
    pub schedule: ScheduleSpec,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Adam with per-group learning-rate schedules and a shared step counter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub groups: Vec<AdamGroup>,
}

impl OptimizerState {
    /// `sizes` and `schedules` are indexed like [`Group::ALL`].
    pub fn new(sizes: [usize; 7], schedules: [ScheduleSpec; 7], beta1: f64, beta2: f64, eps: f64) -> Self {
        let groups = sizes
            .iter()
            .zip(schedules)
            .map(|(&n, schedule)| AdamGroup { schedule, m: vec![0.0; n], v: vec![0.0; n] })
            .collect();
        Self { beta1, beta2, eps, step: 0, groups }
    }

    /// One bias-corrected update of every group in place.
    pub fn step(&mut self, params: &mut [Vec<f64>; 7], grads: &[Vec<f64>; 7]) -> Result<()> {
        for (g, group) in Group::ALL.iter().enumerate() {
            if params[g].len() != self.groups[g].m.len() || grads[g].len() != params[g].len() {
                return Err(Error::DimensionMismatch { what: "optimizer group", expected: self.groups[g].m.len(), got: grads[g].len() });
            }
            if grads[g].iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { group: group.name().to_string() });
            }
        }
        let t = self.step as usize;
        self.step += 1;
        let n = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(n);
        let bc2 = 1.0 - self.beta2.powi(n);
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        for (g, group) in self.groups.iter_mut().enumerate() {
            let lr = lr_at(&group.schedule, t);
            for ((p, &gr), (m, v)) in params[g].iter_mut().zip(&grads[g]).zip(group.m.iter_mut().zip(group.v.iter_mut())) {
                *m = b1 * *m + (1.0 - b1) * gr;
                *v = b2 * *v + (1.0 - b2) * gr * gr;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
