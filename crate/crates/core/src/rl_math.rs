//! Reward shaping, time-aware advantage estimation and the small policy
//! kernels shared by the simulator, the heuristics and external learners.

use serde::{Deserialize, Serialize};

use crate::error::MathError;

/// Scaled p-norm of the robots' active times:
/// `((1/N) Σ T_r^p)^(1/p)`, evaluated with the maximum factored out.
pub fn potential(active: &[f64], p: f64) -> Result<f64, MathError> {
    if active.is_empty() {
        return Err(MathError::EmptyVector);
    }
    if !(p >= 1.0) {
        return Err(MathError::InvalidParameter("p must be at least 1"));
    }
    if active.iter().any(|&t| !(t >= 0.0) || !t.is_finite()) {
        return Err(MathError::InvalidParameter("active times must be finite and non-negative"));
    }
    let max = active.iter().copied().fold(0.0, f64::max);
    if max == 0.0 {
        return Ok(0.0);
    }
    let n = active.len() as f64;
    let mean: f64 = active.iter().map(|&t| (t / max).powf(p)).sum::<f64>() / n;
    Ok(max * mean.powf(1.0 / p))
}

/// `γ^Δτ`.
pub fn time_discount(gamma: f64, dt: f64) -> f64 {
    if dt == 0.0 {
        1.0
    } else {
        gamma.powf(dt)
    }
}

/// `−(γ^Δτ · Φ_next − Φ_now)`.
pub fn shaped_reward(phi_now: f64, phi_next: f64, gamma: f64, dt: f64) -> f64 {
    -(time_discount(gamma, dt) * phi_next - phi_now)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapingConfig {
    pub p: f64,
    /// Per-second discount.
    pub gamma: f64,
    pub lambda: f64,
    /// Discount the next potential by plain `γ` instead of `γ^Δτ`.
    pub literal_discount: bool,
}

impl Default for ShapingConfig {
    fn default() -> Self {
        Self {
            p: 8.0,
            gamma: 0.999,
            lambda: 0.95,
            literal_discount: false,
        }
    }
}

impl ShapingConfig {
    pub fn validate(&self) -> Result<(), MathError> {
        if !(self.p >= 1.0) {
            return Err(MathError::InvalidParameter("p must be at least 1"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(MathError::InvalidParameter("gamma must lie in (0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(MathError::InvalidParameter("lambda must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn reward(&self, phi_now: f64, phi_next: f64, dt: f64) -> f64 {
        if self.literal_discount {
            -(self.gamma * phi_next - phi_now)
        } else {
            shaped_reward(phi_now, phi_next, self.gamma, dt)
        }
    }
}

/// `δ_t = r_t + γ^Δτ_t · V(s_{t+1}) − V(s_t)`; `values` carries the
/// bootstrap value as its last entry.
pub fn td_errors(rewards: &[f64], values: &[f64], dts: &[f64], gamma: f64) -> Result<Vec<f64>, MathError> {
    if values.len() != rewards.len() + 1 {
        return Err(MathError::LengthMismatch(values.len(), rewards.len() + 1));
    }
    if dts.len() != rewards.len() {
        return Err(MathError::LengthMismatch(dts.len(), rewards.len()));
    }
    Ok((0..rewards.len())
        .map(|t| rewards[t] + time_discount(gamma, dts[t]) * values[t + 1] - values[t])
        .collect())
}

/// Time-aware GAE by backward recursion `Â_t = δ_t + (λγ)^Δτ_t · Â_{t+1}`.
pub fn gae(deltas: &[f64], dts: &[f64], gamma: f64, lambda: f64) -> Result<Vec<f64>, MathError> {
    if deltas.len() != dts.len() {
        return Err(MathError::LengthMismatch(deltas.len(), dts.len()));
    }
    let mut adv = vec![0.0; deltas.len()];
    let mut next = 0.0;
    for t in (0..deltas.len()).rev() {
        next = deltas[t] + time_discount(lambda * gamma, dts[t]) * next;
        adv[t] = next;
    }
    Ok(adv)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub clip: f64,
    pub value: f64,
    pub entropy: f64,
    /// `L_clip − c1·L_vf + c2·S`, to be maximised.
    pub objective: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn ppo_losses(
    ratios: &[f64],
    advantages: &[f64],
    values: &[f64],
    value_targets: &[f64],
    entropies: &[f64],
    clip_eps: f64,
    c1: f64,
    c2: f64,
) -> Result<PpoLosses, MathError> {
    let n = ratios.len();
    for len in [advantages.len(), values.len(), value_targets.len(), entropies.len()] {
        if len != n {
            return Err(MathError::LengthMismatch(len, n));
        }
    }
    if n == 0 {
        return Err(MathError::EmptyVector);
    }
    if !(clip_eps > 0.0) {
        return Err(MathError::InvalidParameter("clip epsilon must be positive"));
    }
    let nf = n as f64;
    let clip = ratios
        .iter()
        .zip(advantages)
        .map(|(&r, &a)| (r * a).min(r.clamp(1.0 - clip_eps, 1.0 + clip_eps) * a))
        .sum::<f64>()
        / nf;
    let value = values
        .iter()
        .zip(value_targets)
        .map(|(v, t)| (v - t) * (v - t))
        .sum::<f64>()
        / nf;
    let entropy = entropies.iter().sum::<f64>() / nf;
    Ok(PpoLosses {
        clip,
        value,
        entropy,
        objective: clip - c1 * value + c2 * entropy,
    })
}

/// Which quantity drives the additive logit bias of a target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Choosing a shelf to pick up: prefer hot shelves.
    Pickup,
    /// Choosing a workstation: prefer light workloads.
    Delivery,
    /// Choosing where to put a shelf back: prefer short trips.
    Return,
}

impl Phase {
    pub fn index(self) -> usize {
        match self {
            Phase::Pickup => 0,
            Phase::Delivery => 1,
            Phase::Return => 2,
        }
    }
}

/// `log(h+ε)`, `−log(u+ε)` or `−log(dist+ε)` depending on `phase`.
pub fn phase_bias(phase: Phase, value: f64, epsilon: f64) -> f64 {
    match phase {
        Phase::Pickup => (value + epsilon).ln(),
        Phase::Delivery | Phase::Return => -(value + epsilon).ln(),
    }
}

/// Softmax over unmasked logits; masked entries are exactly zero.
pub fn masked_softmax(logits: &[f64], mask: &[bool]) -> Result<Vec<f64>, MathError> {
    if logits.len() != mask.len() {
        return Err(MathError::LengthMismatch(logits.len(), mask.len()));
    }
    let max = logits
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(MathError::FullyMasked);
    }
    let exps: Vec<f64> = logits
        .iter()
        .zip(mask)
        .map(|(&l, &m)| if m { (l - max).exp() } else { 0.0 })
        .collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}
