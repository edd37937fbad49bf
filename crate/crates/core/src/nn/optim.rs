//! Optimisers: LARS, Adam (L2 weight decay) and SGD with Nesterov momentum.

use std::collections::HashMap;

use ndarray::{IxDyn, Zip};
use serde::{Deserialize, Serialize};

use super::layers::{Param, Tensor};
use crate::{Error, Result};

pub trait Optimizer: Send {
    /// Applies one update with global learning rate `lr`.
    fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()>;

    /// Named state tensors for checkpointing.
    fn state(&self) -> Vec<(String, Tensor)>;

    fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()>;
}

fn check_finite(params: &[&mut Param]) -> Result<()> {
    for p in params {
        if p.grad.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of `{}`", p.name)));
        }
    }
    Ok(())
}

fn ensure_slots(slots: &mut Vec<Tensor>, params: &[&mut Param]) -> Result<()> {
    if slots.is_empty() {
        *slots = params.iter().map(|p| Tensor::zeros(p.value.raw_dim())).collect();
    }
    if slots.len() != params.len() || slots.iter().zip(params).any(|(s, p)| s.shape() != p.value.shape()) {
        return Err(Error::Shape {
            expected: format!("{} optimiser slots matching parameters", slots.len()),
            actual: format!("{} parameters", params.len()),
        });
    }
    Ok(())
}

fn norm(t: &Tensor) -> f64 {
    t.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
}

fn load_slots(prefix: &str, state: &HashMap<String, Tensor>) -> Vec<Tensor> {
    let mut out = Vec::new();
    while let Some(t) = state.get(&format!("{prefix}.{}", out.len())) {
        out.push(t.clone());
    }
    out
}

fn slot_state(prefix: &str, slots: &[Tensor]) -> Vec<(String, Tensor)> {
    slots.iter().enumerate().map(|(i, t)| (format!("{prefix}.{i}"), t.clone())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LarsParams {
    pub trust_coefficient: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for LarsParams {
    fn default() -> Self {
        Self { trust_coefficient: 0.001, momentum: 0.9, weight_decay: 1e-6 }
    }
}

fn lars_local_lr(trust: f64, w_norm: f64, g_norm: f64, weight_decay: f64) -> f64 {
    if w_norm > 0.0 && g_norm > 0.0 {
        trust * w_norm / (g_norm + weight_decay * w_norm)
    } else {
        1.0
    }
}

/// Layer-wise adaptive rate scaling.
///
/// Per tensor: `local = η‖w‖ / (‖g‖ + λ‖w‖)` if both norms are positive,
/// else 1; `v ← m·v + lr·local·(g + λw)`; `w ← w − v`. Bias and
/// normalisation tensors use `local = 1` and no weight decay.
pub struct Lars {
    pub params: LarsParams,
    velocity: Vec<Tensor>,
}

impl Lars {
    pub fn new(params: LarsParams) -> Self {
        Self { params, velocity: Vec::new() }
    }

    pub fn local_lr(&self, w_norm: f64, g_norm: f64, weight_decay: f64) -> f64 {
        lars_local_lr(self.params.trust_coefficient, w_norm, g_norm, weight_decay)
    }
}

impl Optimizer for Lars {
    fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        check_finite(params)?;
        ensure_slots(&mut self.velocity, params)?;
        for (p, v) in params.iter_mut().zip(&mut self.velocity) {
            let (local, wd) = if p.is_excluded_from_adaptation() {
                (1.0, 0.0)
            } else {
                let wd = self.params.weight_decay;
                (lars_local_lr(self.params.trust_coefficient, norm(&p.value), norm(&p.grad), wd), wd)
            };
            let rate = (lr * local) as f32;
            let (m, wd) = (self.params.momentum as f32, wd as f32);
            Zip::from(&mut p.value).and(&p.grad).and(v).for_each(|w, &g, v| {
                *v = m * *v + rate * (g + wd * *w);
                *w -= *v;
            });
        }
        Ok(())
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        slot_state("optim.velocity", &self.velocity)
    }

    fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        self.velocity = load_slots("optim.velocity", state);
        Ok(())
    }
}

/// Adam with coupled (L2) weight decay, as in the common framework default.
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: u64,
}

impl Adam {
    pub fn new(weight_decay: f64) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, m: Vec::new(), v: Vec::new(), t: 0 }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        check_finite(params)?;
        ensure_slots(&mut self.m, params)?;
        ensure_slots(&mut self.v, params)?;
        self.t += 1;
        let (b1, b2) = (self.beta1 as f32, self.beta2 as f32);
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        let step = (lr / c1) as f32;
        let c2s = c2.sqrt() as f32;
        let (eps, wd) = (self.eps as f32, self.weight_decay as f32);
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            Zip::from(&mut p.value).and(&p.grad).and(m).and(v).for_each(|w, &g, m, v| {
                let g = g + wd * *w;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *w -= step * *m / (v.sqrt() / c2s + eps);
            });
        }
        Ok(())
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let mut s = slot_state("optim.m", &self.m);
        s.extend(slot_state("optim.v", &self.v));
        s.push(("optim.t".into(), Tensor::from_elem(IxDyn(&[1]), self.t as f32)));
        s
    }

    fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        self.m = load_slots("optim.m", state);
        self.v = load_slots("optim.v", state);
        self.t = state.get("optim.t").map_or(0, |t| t[[0]] as u64);
        Ok(())
    }
}

/// SGD with optional Nesterov momentum and L2 weight decay.
pub struct Sgd {
    pub momentum: f64,
    pub nesterov: bool,
    pub weight_decay: f64,
    buf: Vec<Tensor>,
    started: bool,
}

impl Sgd {
    pub fn new(momentum: f64, nesterov: bool, weight_decay: f64) -> Self {
        Self { momentum, nesterov, weight_decay, buf: Vec::new(), started: false }
    }
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [&mut Param], lr: f64) -> Result<()> {
        check_finite(params)?;
        ensure_slots(&mut self.buf, params)?;
        let (m, wd, lr) = (self.momentum as f32, self.weight_decay as f32, lr as f32);
        let first = !self.started;
        for (p, b) in params.iter_mut().zip(&mut self.buf) {
            Zip::from(&mut p.value).and(&p.grad).and(b).for_each(|w, &g, b| {
                let mut d = g + wd * *w;
                if m != 0.0 {
                    *b = if first { d } else { m * *b + d };
                    d = if self.nesterov { d + m * *b } else { *b };
                }
                *w -= lr * d;
            });
        }
        self.started = true;
        Ok(())
    }

    fn state(&self) -> Vec<(String, Tensor)> {
        let mut s = slot_state("optim.buf", &self.buf);
        s.push(("optim.started".into(), Tensor::from_elem(IxDyn(&[1]), if self.started { 1.0 } else { 0.0 })));
        s
    }

    fn load_state(&mut self, state: &HashMap<String, Tensor>) -> Result<()> {
        self.buf = load_slots("optim.buf", state);
        self.started = state.get("optim.started").is_some_and(|t| t[[0]] > 0.5);
        Ok(())
    }
}

/// `0.5 · base · (1 + cos(π t / T))`. `t > T` is an error.
pub fn cosine_anneal(base_lr: f64, step: usize, total_steps: usize) -> Result<f64> {
    if step > total_steps {
        return Err(Error::InvalidArgument(format!("schedule step {step} exceeds total {total_steps}")));
    }
    if total_steps == 0 {
        return Ok(base_lr);
    }
    let t = step as f64 / total_steps as f64;
    Ok(0.5 * base_lr * (1.0 + (std::f64::consts::PI * t).cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::layers::ParamKind;

    fn scalar(kind: ParamKind, w: f32, g: f32) -> Param {
        let mut p = Param::new("p".into(), kind, Tensor::from_elem(IxDyn(&[1]), w));
        p.grad[[0]] = g;
        p
    }

    #[test]
    fn lars_hand_evaluated_step() {
        let mut opt = Lars::new(LarsParams { trust_coefficient: 0.001, momentum: 0.0, weight_decay: 0.01 });
        let mut p = scalar(ParamKind::Weight, 2.0, 1.0);
        opt.step(&mut [&mut p], 1.2).unwrap();
        // local = 0.001·2 / (1 + 0.02); update = 1.2 · local · (1 + 0.02) = 0.0024
        assert!((p.value[[0]] - 1.9976).abs() < 1e-6);
    }

    #[test]
    fn lars_zero_grad_is_noop() {
        let mut opt = Lars::new(LarsParams { trust_coefficient: 0.001, momentum: 0.0, weight_decay: 0.0 });
        let mut p = scalar(ParamKind::Weight, 3.0, 0.0);
        opt.step(&mut [&mut p], 1.0).unwrap();
        assert_eq!(p.value[[0]], 3.0);
    }

    #[test]
    fn lars_unit_ratio_gives_global_rate() {
        let opt = Lars::new(LarsParams { trust_coefficient: 1.0, momentum: 0.0, weight_decay: 0.0 });
        assert_eq!(opt.local_lr(2.5, 2.5, 0.0), 1.0);
        let mut opt = opt;
        let mut p = scalar(ParamKind::Weight, 2.5, 2.5);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[[0]] - (2.5 - 0.25)).abs() < 1e-6);
    }

    #[test]
    fn lars_skips_bias_adaptation_and_decay() {
        let mut opt = Lars::new(LarsParams { trust_coefficient: 0.001, momentum: 0.0, weight_decay: 0.5 });
        let mut p = scalar(ParamKind::Bias, 2.0, 1.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        assert!((p.value[[0]] - 1.9).abs() < 1e-6);
    }

    #[test]
    fn non_finite_gradient_is_rejected() {
        let mut opt = Lars::new(LarsParams::default());
        let mut p = scalar(ParamKind::Weight, 1.0, f32::NAN);
        assert!(matches!(opt.step(&mut [&mut p], 0.1), Err(Error::NonFinite(_))));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(0.0);
        let mut p = scalar(ParamKind::Weight, 1.0, 0.3);
        opt.step(&mut [&mut p], 0.01).unwrap();
        assert!((p.value[[0]] - 0.99).abs() < 1e-6);
    }

    #[test]
    fn sgd_nesterov_two_steps() {
        let mut opt = Sgd::new(0.9, true, 0.0);
        let mut p = scalar(ParamKind::Weight, 1.0, 1.0);
        opt.step(&mut [&mut p], 0.1).unwrap();
        // buf = 1, d = 1 + 0.9 = 1.9
        assert!((p.value[[0]] - 0.81).abs() < 1e-6);
        opt.step(&mut [&mut p], 0.1).unwrap();
        // buf = 1.9, d = 1 + 1.71 = 2.71
        assert!((p.value[[0]] - 0.539).abs() < 1e-5);
    }

    #[test]
    fn optimizer_state_round_trips() {
        let mut opt = Adam::new(0.0);
        let mut p = scalar(ParamKind::Weight, 1.0, 0.3);
        opt.step(&mut [&mut p], 0.01).unwrap();
        let state: HashMap<_, _> = opt.state().into_iter().collect();
        let mut restored = Adam::new(0.0);
        restored.load_state(&state).unwrap();
        let mut q = p.clone();
        opt.step(&mut [&mut p], 0.01).unwrap();
        restored.step(&mut [&mut q], 0.01).unwrap();
        assert_eq!(p.value, q.value);
    }

    #[test]
    fn cosine_schedule_closed_forms() {
        assert_eq!(cosine_anneal(1.2, 0, 100).unwrap(), 1.2);
        assert!(cosine_anneal(1.2, 100, 100).unwrap().abs() < 1e-12);
        assert!((cosine_anneal(1.2, 50, 100).unwrap() - 0.6).abs() < 1e-12);
        assert!(cosine_anneal(1.2, 101, 100).is_err());
        let lrs: Vec<f64> = (0..=100).map(|t| cosine_anneal(1.0, t, 100).unwrap()).collect();
        assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
    }
}
