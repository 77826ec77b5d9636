//! Dosing policies for anti-amyloid and anti-tau clearance, optimized
//! through the learned dynamics.

use std::fmt::Write as _;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{coupled_backward, coupled_forward, tape_to_trajectory, Doses, LenoModel};
use crate::nn::{adam_step, Activation, AdamState, LrSchedule, Mlp};
use crate::spectral::{check_times, project_raw};
use crate::synth::{InitialState, Species, Trajectory};

/// Sigmoid outputs are kept this far inside `(0, 1)` so that doses stay
/// strictly positive and strictly below their bound in floating point.
const DOSE_MARGIN: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "none")]
    None,
    #[serde(rename = "anti_A")]
    AntiA,
    #[serde(rename = "anti_tau")]
    AntiTau,
    #[serde(rename = "combo")]
    Combo,
}

impl Scenario {
    pub const ALL: [Scenario; 4] = [Scenario::None, Scenario::AntiA, Scenario::AntiTau, Scenario::Combo];

    pub fn treats_a(self) -> bool {
        matches!(self, Scenario::AntiA | Scenario::Combo)
    }

    pub fn treats_tau(self) -> bool {
        matches!(self, Scenario::AntiTau | Scenario::Combo)
    }

    pub fn tag(self) -> &'static str {
        match self {
            Scenario::None => "none",
            Scenario::AntiA => "anti_A",
            Scenario::AntiTau => "anti_tau",
            Scenario::Combo => "combo",
        }
    }

    fn column(self) -> &'static str {
        match self {
            Scenario::None => "C_none",
            Scenario::AntiA => "C_antiA",
            Scenario::AntiTau => "C_antiTau",
            Scenario::Combo => "C_combo",
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL
            .into_iter()
            .find(|sc| sc.tag() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown scenario `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TreatmentConfig {
    pub eta_a: f64,
    pub eta_tau: f64,
    /// Final time of the treated rollout.
    pub horizon: f64,
    /// Step of the output grid from the initial time to the horizon.
    pub dt: f64,
    pub d_max_a: f64,
    pub d_max_tau: f64,
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
}

impl Default for TreatmentConfig {
    fn default() -> Self {
        TreatmentConfig {
            eta_a: 0.1,
            eta_tau: 0.1,
            horizon: 20.0,
            dt: 0.2,
            d_max_a: 0.5,
            d_max_tau: 0.5,
            epochs: 500,
            schedule: LrSchedule::default(),
            seed: 0,
        }
    }
}

impl TreatmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta_a >= 0.0 && self.eta_tau >= 0.0) {
            return Err(Error::Config("dose penalties must be non-negative".into()));
        }
        if !(self.d_max_a > 0.0 && self.d_max_tau > 0.0) {
            return Err(Error::Config("dose bounds must be positive".into()));
        }
        if !(self.dt > 0.0) || !self.horizon.is_finite() {
            return Err(Error::Config("treatment grid needs a positive step and finite horizon".into()));
        }
        Ok(())
    }

    /// Output grid `t0, t0 + dt, ...` ending exactly at the horizon.
    pub fn grid(&self, t0: f64) -> Result<Vec<f64>> {
        if !(self.horizon > t0) {
            return Err(Error::Config(format!(
                "treatment horizon {} must lie beyond the initial time {t0}",
                self.horizon
            )));
        }
        let n = ((self.horizon - t0) / self.dt - 1e-9).ceil().max(1.0) as usize;
        let mut t: Vec<f64> = (0..n).map(|k| t0 + k as f64 * self.dt).collect();
        t.push(self.horizon);
        Ok(t)
    }
}

/// Age-to-dose networks; inactive arms emit exactly zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentPolicy {
    pub net_a: Mlp,
    pub net_tau: Mlp,
    pub d_max_a: f64,
    pub d_max_tau: f64,
    pub scenario: Scenario,
    /// Ages are mapped to `(t - t0) / t_span` before entering the networks.
    pub t0: f64,
    pub t_span: f64,
}

fn policy_net(seed: u64) -> Result<Mlp> {
    Mlp::new(&[1, 128, 128, 1], Activation::Relu, Activation::Sigmoid, seed)
}

struct ArmTape {
    y: Vec<f64>,
    tape: crate::nn::MlpTape,
}

impl TreatmentPolicy {
    pub fn new(scenario: Scenario, cfg: &TreatmentConfig, t0: f64) -> Result<Self> {
        cfg.validate()?;
        Ok(TreatmentPolicy {
            net_a: policy_net(cfg.seed)?,
            net_tau: policy_net(cfg.seed.wrapping_add(1))?,
            d_max_a: cfg.d_max_a,
            d_max_tau: cfg.d_max_tau,
            scenario,
            t0,
            t_span: (cfg.horizon - t0).max(f64::MIN_POSITIVE),
        })
    }

    fn inputs(&self, times: &[f64]) -> DMatrix<f64> {
        DMatrix::from_fn(1, times.len(), |_, j| (times[j] - self.t0) / self.t_span)
    }

    fn arm(&self, net: &Mlp, times: &[f64]) -> Result<ArmTape> {
        let tape = net.forward_tape(self.inputs(times))?;
        let y = tape.output().iter().map(|v| v.clamp(DOSE_MARGIN, 1.0 - DOSE_MARGIN)).collect();
        Ok(ArmTape { y, tape })
    }

    /// Doses `(d_A, d_tau)` at each time.
    pub fn doses(&self, times: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let zero = vec![0.0; times.len()];
        let a = if self.scenario.treats_a() {
            self.arm(&self.net_a, times)?.y.iter().map(|y| self.d_max_a * y).collect()
        } else {
            zero.clone()
        };
        let tau = if self.scenario.treats_tau() {
            self.arm(&self.net_tau, times)?.y.iter().map(|y| self.d_max_tau * y).collect()
        } else {
            zero
        };
        Ok((a, tau))
    }

    /// CSV `t,d_A,d_tau`.
    pub fn schedule_csv(&self, times: &[f64]) -> Result<String> {
        let (a, tau) = self.doses(times)?;
        let mut s = String::from("t,d_A,d_tau\n");
        for k in 0..times.len() {
            writeln!(s, "{:.16e},{:.16e},{:.16e}", times[k], a[k], tau[k]).unwrap();
        }
        Ok(s)
    }
}

fn rollout(
    model: &LenoModel,
    basis: &EigenBasis,
    init: &InitialState,
    times: &[f64],
    d_a: &[f64],
    d_tau: &[f64],
) -> Result<crate::model::CoupledTape> {
    let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
    let beta0 = [project_raw(&init.a, basis), project_raw(&init.tau, basis), project_raw(&init.n, basis)];
    let c0 = model.is_trained(Species::C).then_some(init.c);
    let n = h.len();
    coupled_forward(
        model,
        basis.eigenvalues(),
        beta0,
        c0,
        &h,
        Some(Doses {
            a: &d_a[..n],
            tau: &d_tau[..n],
        }),
        3,
    )
}

/// Rollout of the learned dynamics with clearance `-d_A(t_k) A` and
/// `-d_tau(t_k) tau` applied over each interval `[t_k, t_k+1]`.
pub fn treated_rollout(
    model: &LenoModel,
    basis: &EigenBasis,
    policy: &TreatmentPolicy,
    init: &InitialState,
    times: &[f64],
) -> Result<Trajectory> {
    model.check_basis(basis)?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    check_times(times)?;
    let (d_a, d_tau) = policy.doses(times)?;
    let tape = rollout(model, basis, init, times, &d_a, &d_tau)?;
    Ok(tape_to_trajectory(&tape, basis, times))
}

/// `-C(T) + sum_k dt_k (p(t_k) + p(t_k+1)) / 2` with `p = eta_A d_A^2 + eta_tau d_tau^2`.
pub fn objective(rollout: &Trajectory, d_a: &[f64], d_tau: &[f64], eta_a: f64, eta_tau: f64) -> Result<f64> {
    let c = rollout
        .c
        .as_ref()
        .ok_or_else(|| Error::InvalidArgument("objective needs the cognitive series".into()))?;
    let t = &rollout.times;
    if d_a.len() != t.len() || d_tau.len() != t.len() {
        return Err(Error::DimensionMismatch {
            what: "dose series",
            expected: t.len(),
            got: d_a.len().min(d_tau.len()),
        });
    }
    Ok(-c[c.len() - 1] + penalty(t, d_a, d_tau, eta_a, eta_tau))
}

fn penalty(t: &[f64], d_a: &[f64], d_tau: &[f64], eta_a: f64, eta_tau: f64) -> f64 {
    let p = |k: usize| eta_a * d_a[k] * d_a[k] + eta_tau * d_tau[k] * d_tau[k];
    t.windows(2).enumerate().map(|(k, w)| 0.5 * (w[1] - w[0]) * (p(k) + p(k + 1))).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyResult {
    pub policy: TreatmentPolicy,
    pub objective: f64,
    /// Objective at every epoch.
    pub trace: Vec<f64>,
    pub times: Vec<f64>,
}

/// Objective of the current policy and its gradients for both networks.
fn objective_grad(
    model: &LenoModel,
    basis: &EigenBasis,
    policy: &TreatmentPolicy,
    init: &InitialState,
    times: &[f64],
    cfg: &TreatmentConfig,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let nt = times.len();
    let arm_a = policy.scenario.treats_a().then(|| policy.arm(&policy.net_a, times)).transpose()?;
    let arm_tau = policy.scenario.treats_tau().then(|| policy.arm(&policy.net_tau, times)).transpose()?;
    let dose = |arm: &Option<ArmTape>, dmax: f64| -> Vec<f64> {
        arm.as_ref().map_or(vec![0.0; nt], |a| a.y.iter().map(|y| dmax * y).collect())
    };
    let d_a = dose(&arm_a, policy.d_max_a);
    let d_tau = dose(&arm_tau, policy.d_max_tau);
    let tape = rollout(model, basis, init, times, &d_a, &d_tau)?;
    let c = tape.c.as_ref().unwrap();
    let value = -c[nt - 1] + penalty(times, &d_a, &d_tau, cfg.eta_a, cfg.eta_tau);

    let p = basis.n_modes();
    let adj_beta = vec![[nalgebra::DVector::zeros(p), nalgebra::DVector::zeros(p), nalgebra::DVector::zeros(p)]; nt];
    let mut adj_c = vec![0.0; nt];
    adj_c[nt - 1] = -1.0;
    let g = coupled_backward(model, basis.eigenvalues(), &tape, &adj_beta, &adj_c)?;

    let arm_grad = |arm: &Option<ArmTape>, net: &Mlp, dmax: f64, d: &[f64], roll: &[f64], eta: f64| -> Result<Vec<f64>> {
        let Some(arm) = arm else {
            return Ok(vec![0.0; net.n_params()]);
        };
        let mut dd = vec![0.0; nt];
        dd[..nt - 1].copy_from_slice(roll);
        for k in 0..nt - 1 {
            let w = 0.5 * (times[k + 1] - times[k]) * 2.0 * eta;
            dd[k] += w * d[k];
            dd[k + 1] += w * d[k + 1];
        }
        let raw = arm.tape.output();
        let dy = DMatrix::from_fn(1, nt, |_, k| {
            if raw[(0, k)] == arm.y[k] {
                dmax * dd[k]
            } else {
                0.0
            }
        });
        let mut grad = vec![0.0; net.n_params()];
        net.backward(&arm.tape, &dy, Some(&mut grad))?;
        Ok(grad)
    };
    let ga = arm_grad(&arm_a, &policy.net_a, policy.d_max_a, &d_a, &g.dose_a, cfg.eta_a)?;
    let gt = arm_grad(&arm_tau, &policy.net_tau, policy.d_max_tau, &d_tau, &g.dose_tau, cfg.eta_tau)?;
    Ok((value, ga, gt))
}

/// Adam on the dosing networks of `scenario`, starting from `init` at
/// time `t0`; returns the best policy seen.
pub fn optimize_policy(
    model: &LenoModel,
    basis: &EigenBasis,
    init: &InitialState,
    t0: f64,
    cfg: &TreatmentConfig,
    scenario: Scenario,
) -> Result<PolicyResult> {
    cfg.validate()?;
    model.check_basis(basis)?;
    model.net(Species::C)?;
    let times = cfg.grid(t0)?;
    let mut policy = TreatmentPolicy::new(scenario, cfg, t0)?;
    let mut adam_a = AdamState::new(policy.net_a.n_params());
    let mut adam_t = AdamState::new(policy.net_tau.n_params());
    let mut best: Option<(f64, TreatmentPolicy)> = None;
    let mut trace = Vec::with_capacity(cfg.epochs + 1);
    for epoch in 0..=cfg.epochs {
        let (value, ga, gt) = match objective_grad(model, basis, &policy, init, &times, cfg) {
            Ok(v) => v,
            Err(Error::BlowUp { .. }) => return Err(Error::Divergence { epoch }),
            Err(e) => return Err(e),
        };
        if !value.is_finite() || ga.iter().chain(&gt).any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        trace.push(value);
        if best.as_ref().map_or(true, |(b, _)| value < *b) {
            best = Some((value, policy.clone()));
        }
        if epoch == cfg.epochs || scenario == Scenario::None {
            break;
        }
        let lr = cfg.schedule.lr_at(epoch);
        if scenario.treats_a() {
            adam_step(policy.net_a.params_mut(), &ga, &mut adam_a, lr)?;
        }
        if scenario.treats_tau() {
            adam_step(policy.net_tau.params_mut(), &gt, &mut adam_t, lr)?;
        }
    }
    let (objective, policy) = best.unwrap();
    Ok(PolicyResult {
        policy,
        objective,
        trace,
        times,
    })
}

/// CSV `t,C_none,C_antiA,C_antiTau,C_combo`; scenarios missing from
/// `results` get empty cells.
pub fn cognitive_csv(times: &[f64], results: &[(Scenario, Vec<f64>)]) -> Result<String> {
    for (_, c) in results {
        if c.len() != times.len() {
            return Err(Error::DimensionMismatch {
                what: "cognitive trajectory",
                expected: times.len(),
                got: c.len(),
            });
        }
    }
    let mut s = String::from("t");
    for sc in Scenario::ALL {
        write!(s, ",{}", sc.column()).unwrap();
    }
    s.push('\n');
    for (k, t) in times.iter().enumerate() {
        write!(s, "{t:.16e}").unwrap();
        for sc in Scenario::ALL {
            match results.iter().find(|(r, _)| *r == sc) {
                Some((_, c)) => write!(s, ",{:.16e}", c[k]).unwrap(),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_ends_at_horizon() {
        let cfg = TreatmentConfig {
            horizon: 1.0,
            dt: 0.3,
            ..TreatmentConfig::default()
        };
        let g = cfg.grid(0.0).unwrap();
        assert_eq!(g.len(), 5);
        assert_eq!(*g.last().unwrap(), 1.0);
        assert!(cfg.grid(1.0).is_err());
    }

    #[test]
    fn inactive_arms_are_zero_and_active_arms_bounded() {
        let cfg = TreatmentConfig::default();
        let times: Vec<f64> = (0..50).map(|k| k as f64 * 0.4).collect();
        for sc in Scenario::ALL {
            let pol = TreatmentPolicy::new(sc, &cfg, 0.0).unwrap();
            let (a, t) = pol.doses(&times).unwrap();
            for k in 0..times.len() {
                if sc.treats_a() {
                    assert!(a[k] > 0.0 && a[k] < cfg.d_max_a);
                } else {
                    assert_eq!(a[k], 0.0);
                }
                if sc.treats_tau() {
                    assert!(t[k] > 0.0 && t[k] < cfg.d_max_tau);
                } else {
                    assert_eq!(t[k], 0.0);
                }
            }
        }
    }

    #[test]
    fn constant_dose_penalty_integral() {
        let t: Vec<f64> = (0..=100).map(|k| k as f64 * 0.1).collect();
        let d = vec![0.1; t.len()];
        let z = vec![0.0; t.len()];
        assert!((penalty(&t, &d, &z, 1.0, 0.3) - 0.1).abs() < 1e-6);
        assert_eq!(penalty(&t, &d, &d, 0.0, 0.0), 0.0);
    }

    #[test]
    fn scenario_tags_round_trip() {
        for sc in Scenario::ALL {
            assert_eq!(sc.tag().parse::<Scenario>().unwrap(), sc);
        }
        assert!("both".parse::<Scenario>().is_err());
        let csv = cognitive_csv(&[0.0, 1.0], &[(Scenario::Combo, vec![0.5, 0.25])]).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "t,C_none,C_antiA,C_antiTau,C_combo");
        assert!(csv.lines().nth(2).unwrap().starts_with("1.0000000000000000e0,,,,2.5"));
    }
}
