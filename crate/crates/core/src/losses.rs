//! Scalar objectives over network outputs and their gradients.
//!
//! The per-step pieces (`distill_loss`, `entropy_loss`, ...) return the loss
//! together with its gradient with respect to the logits or values they
//! consume. [`kickstart_loss`] combines them over a trajectory and pushes the
//! result through the network to get parameter gradients.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nets::{Activations, GradientBuffer, PolicyValueNet};
use crate::trajectory::Trajectory;

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

fn check_logits(name: &str, logits: &[f64]) -> Result<()> {
    if logits.len() < 2 {
        return Err(Error::shape(format!("{name} needs at least 2 actions")));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            what: name.into(),
            layer: None,
        });
    }
    Ok(())
}

/// Cross-entropy `H(teacher || student) = -sum_a p_T(a) log p_S(a)`.
///
/// The gradient with respect to the student logits is `p_S - p_T`.
pub fn distill_loss(teacher_logits: &[f64], student_logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_logits("teacher logits", teacher_logits)?;
    check_logits("student logits", student_logits)?;
    if teacher_logits.len() != student_logits.len() {
        return Err(Error::shape("teacher and student logits differ in length"));
    }
    let pt = softmax(teacher_logits);
    let ps = softmax(student_logits);
    let log_ps = log_softmax(student_logits);
    let loss = -pt.iter().zip(&log_ps).map(|(p, l)| p * l).sum::<f64>();
    let grad = ps.iter().zip(&pt).map(|(s, t)| s - t).collect();
    Ok((loss, grad))
}

/// Negated entropy `sum_a p(a) log p(a)`; minimised by the uniform policy.
pub fn entropy_loss(logits: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_logits("student logits", logits)?;
    let p = softmax(logits);
    let log_p = log_softmax(logits);
    let loss: f64 = p.iter().zip(&log_p).map(|(p, l)| p * l).sum();
    let grad = p.iter().zip(&log_p).map(|(p, l)| p * (l - loss)).collect();
    Ok((loss, grad))
}

/// Sum of squared errors against constant targets.
pub fn value_loss(values: &[f64], targets: &[f64]) -> Result<(f64, Vec<f64>)> {
    if values.len() != targets.len() {
        return Err(Error::shape(format!(
            "{} values vs {} targets",
            values.len(),
            targets.len()
        )));
    }
    let diffs: Vec<f64> = values.iter().zip(targets).map(|(v, t)| v - t).collect();
    let loss = diffs.iter().map(|d| d * d).sum();
    Ok((loss, diffs.into_iter().map(|d| 2.0 * d).collect()))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct VTraceParams {
    pub gamma: f64,
    /// Truncation for the policy-gradient and TD weights (rho bar).
    pub clip_rho: f64,
    /// Truncation for the trace coefficients (c bar).
    pub clip_c: f64,
}

impl Default for VTraceParams {
    fn default() -> Self {
        VTraceParams {
            gamma: 0.99,
            clip_rho: 1.0,
            clip_c: 1.0,
        }
    }
}

/// Off-policy corrected targets for one trajectory. Everything here is
/// treated as a constant by the losses that consume it.
#[derive(Clone, Debug, PartialEq)]
pub struct VTraceOutput {
    /// `v_t` for `t in 0..T`.
    pub value_targets: Vec<f64>,
    /// Truncated importance weights `rho_t`.
    pub policy_weights: Vec<f64>,
    /// Truncated trace coefficients `c_t`.
    pub trace_weights: Vec<f64>,
    /// `rho_t (r_t + gamma_t v_{t+1} - V(x_t))`, with `v_T = V(x_T)`.
    pub advantages: Vec<f64>,
}

/// V-trace targets by backward recursion.
///
/// `values` has `T + 1` entries (the last one bootstraps), `logits` has `T`
/// entries of current-policy logits. Discounts are zeroed on terminal steps.
pub fn vtrace(
    traj: &Trajectory,
    values: &[f64],
    logits: &[Vec<f64>],
    params: &VTraceParams,
) -> Result<VTraceOutput> {
    traj.validate()?;
    let t_len = traj.len();
    if values.len() != t_len + 1 || logits.len() != t_len {
        return Err(Error::shape(format!(
            "vtrace needs {} values and {t_len} logit rows, got {} and {}",
            t_len + 1,
            values.len(),
            logits.len()
        )));
    }
    if !(0.0..1.0).contains(&params.gamma) {
        return Err(Error::config(format!("gamma {} outside [0, 1)", params.gamma)));
    }
    let discounts = traj.discounts(params.gamma);

    let mut rhos = Vec::with_capacity(t_len);
    let mut cs = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let a = traj.actions[t];
        let target = log_softmax(&logits[t]);
        let behaviour = log_softmax(&traj.behaviour_logits[t]);
        if a >= target.len() || a >= behaviour.len() {
            return Err(Error::shape(format!("action {a} out of range at step {t}")));
        }
        if behaviour[a] == f64::NEG_INFINITY {
            return Err(Error::Caller(format!(
                "behaviour policy gave zero probability to taken action at step {t}"
            )));
        }
        let ratio = (target[a] - behaviour[a]).exp();
        rhos.push(ratio.min(params.clip_rho));
        cs.push(ratio.min(params.clip_c));
    }

    let mut targets = vec![0.0; t_len];
    let mut next_target = values[t_len];
    for t in (0..t_len).rev() {
        let delta = rhos[t] * (traj.rewards[t] + discounts[t] * values[t + 1] - values[t]);
        targets[t] = values[t] + delta + discounts[t] * cs[t] * (next_target - values[t + 1]);
        next_target = targets[t];
    }

    let advantages = (0..t_len)
        .map(|t| {
            let v_next = if t + 1 < t_len {
                targets[t + 1]
            } else {
                values[t_len]
            };
            rhos[t] * (traj.rewards[t] + discounts[t] * v_next - values[t])
        })
        .collect();

    Ok(VTraceOutput {
        value_targets: targets,
        policy_weights: rhos,
        trace_weights: cs,
        advantages,
    })
}

/// Policy-gradient surrogate `-sum_t log pi(a_t | x_t) * A_t` where the
/// advantages already carry the importance weights.
pub fn a3c_policy_loss(
    traj: &Trajectory,
    vt: &VTraceOutput,
    logits: &[Vec<f64>],
) -> Result<(f64, Vec<Vec<f64>>)> {
    if logits.len() != traj.len() || vt.advantages.len() != traj.len() {
        return Err(Error::shape("policy loss inputs differ in length"));
    }
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (t, z) in logits.iter().enumerate() {
        let a = traj.actions[t];
        if a >= z.len() {
            return Err(Error::shape(format!("action {a} out of range at step {t}")));
        }
        let adv = vt.advantages[t];
        let log_p = log_softmax(z);
        loss -= log_p[a] * adv;
        let mut g = softmax(z);
        g[a] -= 1.0;
        g.iter_mut().for_each(|v| *v *= adv);
        grads.push(g);
    }
    Ok((loss, grads))
}

/// Weights and switches for the combined objective.
#[derive(Clone, Debug, PartialEq)]
pub struct KickstartParams {
    /// Distillation weight per teacher. Empty disables distillation.
    pub lambdas: Vec<f64>,
    pub entropy_cost: f64,
    pub value_weight: f64,
    pub vtrace: VTraceParams,
    /// When false only the distillation term is optimised.
    pub rl_enabled: bool,
}

impl KickstartParams {
    pub fn rl_only(entropy_cost: f64, value_weight: f64, vtrace: VTraceParams) -> Self {
        KickstartParams {
            lambdas: Vec::new(),
            entropy_cost,
            value_weight,
            vtrace,
            rl_enabled: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::config(format!("distillation weight {l} must be >= 0")));
        }
        Ok(())
    }
}

/// Decomposed loss for one trajectory (or a mean over a batch).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub policy_gradient_loss: f64,
    pub value_loss: f64,
    pub entropy_loss: f64,
    /// Cross-entropy to each teacher; zero for teachers that did not
    /// supervise this trajectory.
    pub distill_loss: Vec<f64>,
    pub total: f64,
    /// Mean truncated importance weight over the steps.
    pub mean_rho: f64,
}

impl LossTerms {
    pub fn is_finite(&self) -> bool {
        self.policy_gradient_loss.is_finite()
            && self.value_loss.is_finite()
            && self.entropy_loss.is_finite()
            && self.total.is_finite()
            && self.distill_loss.iter().all(|d| d.is_finite())
    }

    /// Running sum used to average over a batch.
    pub fn accumulate(&mut self, other: &LossTerms, scale: f64) {
        self.policy_gradient_loss += scale * other.policy_gradient_loss;
        self.value_loss += scale * other.value_loss;
        self.entropy_loss += scale * other.entropy_loss;
        self.total += scale * other.total;
        self.mean_rho += scale * other.mean_rho;
        if self.distill_loss.len() < other.distill_loss.len() {
            self.distill_loss.resize(other.distill_loss.len(), 0.0);
        }
        for (a, b) in self.distill_loss.iter_mut().zip(&other.distill_loss) {
            *a += scale * b;
        }
    }
}

/// Student forward pass over every observation of a trajectory.
pub fn student_outputs(traj: &Trajectory, net: &PolicyValueNet) -> Result<Vec<Activations>> {
    traj.observations
        .iter()
        .map(|o| net.forward_cached(o))
        .collect()
}

/// Combined kickstarting loss for one trajectory and its parameter gradient.
///
/// `total = pg + value_weight * value + entropy_cost * entropy
///          + sum_i lambda_i * distill_i`
pub fn kickstart_loss(
    traj: &Trajectory,
    net: &PolicyValueNet,
    params: &KickstartParams,
) -> Result<(LossTerms, GradientBuffer)> {
    traj.validate()?;
    params.validate()?;
    let acts = student_outputs(traj, net)?;
    let targets = if params.rl_enabled {
        let values: Vec<f64> = acts.iter().map(|a| a.value).collect();
        let logits: Vec<Vec<f64>> = acts[..traj.len()].iter().map(|a| a.logits.clone()).collect();
        Some(vtrace(traj, &values, &logits, &params.vtrace)?)
    } else {
        None
    };
    surrogate_from_activations(traj, net, &acts, targets.as_ref(), params)
}

/// The differentiable part of [`kickstart_loss`] with the V-trace outputs
/// supplied and held constant. Useful for gradient checks, where the
/// stop-gradient targets must not move with the perturbed parameters.
pub fn kickstart_surrogate(
    traj: &Trajectory,
    net: &PolicyValueNet,
    targets: Option<&VTraceOutput>,
    params: &KickstartParams,
) -> Result<(LossTerms, GradientBuffer)> {
    traj.validate()?;
    params.validate()?;
    let acts = student_outputs(traj, net)?;
    surrogate_from_activations(traj, net, &acts, targets, params)
}

fn surrogate_from_activations(
    traj: &Trajectory,
    net: &PolicyValueNet,
    acts: &[Activations],
    targets: Option<&VTraceOutput>,
    params: &KickstartParams,
) -> Result<(LossTerms, GradientBuffer)> {
    let t_len = traj.len();
    let num_actions = net.num_actions();
    let logits: Vec<Vec<f64>> = acts[..t_len].iter().map(|a| a.logits.clone()).collect();

    let mut d_logits = vec![vec![0.0; num_actions]; t_len];
    let mut d_values = vec![0.0; t_len];
    let mut terms = LossTerms {
        distill_loss: vec![0.0; params.lambdas.len()],
        ..LossTerms::default()
    };

    if params.rl_enabled {
        let vt = targets.ok_or_else(|| Error::Caller("RL loss needs V-trace targets".into()))?;
        let (pg, pg_grads) = a3c_policy_loss(traj, vt, &logits)?;
        let values: Vec<f64> = acts[..t_len].iter().map(|a| a.value).collect();
        let (vl, v_grads) = value_loss(&values, &vt.value_targets)?;
        let mut ent = 0.0;
        for t in 0..t_len {
            let (e, e_grad) = entropy_loss(&logits[t])?;
            ent += e;
            for ((d, pg), eg) in d_logits[t].iter_mut().zip(&pg_grads[t]).zip(&e_grad) {
                *d = pg + params.entropy_cost * eg;
            }
            d_values[t] = params.value_weight * v_grads[t];
        }
        terms.policy_gradient_loss = pg;
        terms.value_loss = vl;
        terms.entropy_loss = ent;
        terms.mean_rho = vt.policy_weights.iter().sum::<f64>() / t_len as f64;
    }

    let mut total = terms.policy_gradient_loss
        + params.value_weight * terms.value_loss
        + params.entropy_cost * terms.entropy_loss;

    if !params.lambdas.is_empty() {
        let teacher = traj.teacher.as_ref().ok_or_else(|| {
            Error::config(format!("task {} has no teacher logits", traj.task_id))
        })?;
        let lambda = *params.lambdas.get(teacher.index).ok_or_else(|| {
            Error::config(format!(
                "trajectory routed to teacher {} but only {} weights given",
                teacher.index,
                params.lambdas.len()
            ))
        })?;
        let mut distill = 0.0;
        for t in 0..t_len {
            let (d, grad) = distill_loss(&teacher.logits[t], &logits[t])?;
            distill += d;
            if lambda != 0.0 {
                for (acc, g) in d_logits[t].iter_mut().zip(&grad) {
                    *acc += lambda * g;
                }
            }
        }
        terms.distill_loss[teacher.index] = distill;
        if lambda != 0.0 {
            total += lambda * distill;
        }
    }
    terms.total = total;

    let mut grads = GradientBuffer::zeros_like(net);
    for t in 0..t_len {
        net.backward_into(&acts[t], &d_logits[t], d_values[t], &mut grads)?;
    }
    Ok((terms, grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn logits_of(p: &[f64]) -> Vec<f64> {
        p.iter().map(|v| v.ln()).collect()
    }

    #[test]
    fn distill_one_hot_teacher_uniform_student() {
        let (loss, _) = distill_loss(&[50.0, -50.0], &[0.0, 0.0]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn distill_at_equality_is_teacher_entropy_with_zero_gradient() {
        let z = [0.3, -1.2, 0.8, 0.0];
        let (loss, grad) = distill_loss(&z, &z).unwrap();
        let (neg_ent, _) = entropy_loss(&z).unwrap();
        assert!((loss + neg_ent).abs() < 1e-12);
        assert!(grad.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn distill_two_action_case() {
        let (loss, _) = distill_loss(&logits_of(&[0.7, 0.3]), &logits_of(&[0.6, 0.4])).unwrap();
        // -(0.7 ln 0.6 + 0.3 ln 0.4)
        let oracle = -(0.7 * 0.6f64.ln() + 0.3 * 0.4f64.ln());
        assert!((loss - oracle).abs() < 1e-12);
        // Commonly quoted as 0.632452; the exact sum is 0.6324652.
        assert!((loss - 0.632465).abs() < 1e-6);
    }

    #[test]
    fn distill_rejects_bad_inputs() {
        assert!(distill_loss(&[1.0], &[1.0]).is_err());
        assert!(distill_loss(&[1.0, 2.0], &[1.0, 2.0, 3.0]).is_err());
        assert!(matches!(
            distill_loss(&[f64::NAN, 0.0], &[0.0, 0.0]),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn entropy_values() {
        let (u, _) = entropy_loss(&[0.0; 4]).unwrap();
        assert!((u + 4f64.ln()).abs() < 1e-12);
        let (p, _) = entropy_loss(&logits_of(&[0.7, 0.3])).unwrap();
        let oracle = 0.7 * 0.7f64.ln() + 0.3 * 0.3f64.ln();
        assert!((p - oracle).abs() < 1e-12);
        assert!((p + 0.610864).abs() < 1e-6);
        let (peaked, _) = entropy_loss(&[40.0, 0.0, 0.0]).unwrap();
        assert!(peaked <= 0.0 && peaked > -1e-12);
    }

    #[test]
    fn value_loss_values() {
        assert_eq!(value_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap().0, 0.0);
        assert_eq!(value_loss(&[1.0, 1.0], &[0.0, 0.0]).unwrap().0, 2.0);
        assert!(value_loss(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn value_loss_matches_scalar_sum() {
        let v = [0.3, -1.1, 2.5, 0.0, 4.2, -0.7, 1.9];
        let t = [1.3, 0.4, 2.2, -0.8, 3.9, 0.1, -1.0];
        let mut oracle = 0.0;
        for i in 0..7 {
            oracle += (v[i] - t[i]) * (v[i] - t[i]);
        }
        let (loss, grad) = value_loss(&v, &t).unwrap();
        assert!((loss - oracle).abs() < 1e-12);
        for i in 0..7 {
            assert!((grad[i] - 2.0 * (v[i] - t[i])).abs() < 1e-12);
        }
    }
}
