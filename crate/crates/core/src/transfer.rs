//! Patient-specific time scales fitted with frozen operator weights.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cohort, CohortMetrics};
use crate::model::{coupled_backward, coupled_forward, LenoModel, PatientTimeScale};
use crate::nn::{adam_step, AdamState};
use crate::spectral::project_raw;
use crate::synth::{Species, Trajectory};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransferConfig {
    pub train_fraction: f64,
    pub gamma_min: f64,
    pub gamma_max: f64,
    /// Points of the logarithmic scan that seeds the gradient refinement.
    pub grid_points: usize,
    pub epochs: usize,
    pub lr: f64,
    /// Also release the clock offset. The rollout starts from the first
    /// observation, so the offset has no effect on the loss and stays put.
    pub fit_offset: bool,
}

impl Default for TransferConfig {
    fn default() -> Self {
        TransferConfig {
            train_fraction: 0.6,
            gamma_min: 0.1,
            gamma_max: 10.0,
            grid_points: 47,
            epochs: 200,
            lr: 1e-2,
            fit_offset: false,
        }
    }
}

impl TransferConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma_min > 0.0 && self.gamma_max > self.gamma_min) || self.grid_points < 2 {
            return Err(Error::Config("time-scale scan needs 0 < gamma_min < gamma_max and >= 2 points".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) || !(self.lr > 0.0) {
            return Err(Error::Config("train_fraction must lie in (0, 1] and lr must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferResult {
    pub timescale: PatientTimeScale,
    pub loss: f64,
    /// Loss after each refinement step.
    pub history: Vec<f64>,
    pub metrics: CohortMetrics,
}

struct Target {
    dt: Vec<f64>,
    beta: Vec<[DVector<f64>; 3]>,
    norms: Vec<[f64; 3]>,
}

impl Target {
    fn new(traj: &Trajectory, basis: &EigenBasis, frac: f64) -> Result<Target> {
        let nt = traj.train_len(frac);
        if nt < 3 {
            return Err(Error::InvalidArgument(format!(
                "patient {} has {nt} fitting time points; at least 3 are required",
                traj.patient_id
            )));
        }
        let beta: Vec<[DVector<f64>; 3]> = (0..nt)
            .map(|k| [0, 1, 2].map(|i| project_raw(&traj.field(Species::FIELDS[i])[k], basis)))
            .collect();
        let mut norms = Vec::with_capacity(nt);
        for (k, b) in beta.iter().enumerate() {
            let n = [b[0].norm(), b[1].norm(), b[2].norm()];
            if k > 0 && n.iter().any(|v| *v == 0.0) {
                return Err(Error::ZeroNorm { step: k });
            }
            norms.push(n);
        }
        Ok(Target {
            dt: traj.times[..nt].windows(2).map(|w| w[1] - w[0]).collect(),
            beta,
            norms,
        })
    }

    /// Summed data loss of A, tau and N and its derivative in `gamma`.
    fn loss(&self, model: &LenoModel, lambda: &[f64], gamma: f64, with_grad: bool) -> Result<(f64, f64)> {
        let h: Vec<f64> = self.dt.iter().map(|d| gamma * d).collect();
        let tape = coupled_forward(model, lambda, self.beta[0].clone(), None, &h, None, 3)?;
        let n = self.dt.len() as f64;
        let p = lambda.len();
        let mut loss = 0.0;
        let mut adj = vec![[DVector::zeros(p), DVector::zeros(p), DVector::zeros(p)]; self.beta.len()];
        for k in 1..self.beta.len() {
            for j in 0..3 {
                let e = &tape.beta[k][j] - &self.beta[k][j];
                let en = e.norm();
                let w = 1.0 / (n * self.norms[k][j]);
                loss += w * en;
                if en > 0.0 {
                    adj[k][j] = e * (w / en);
                }
            }
        }
        if !with_grad {
            return Ok((loss, 0.0));
        }
        let g = coupled_backward(model, lambda, &tape, &adj, &[])?;
        let dgamma = g.dh.iter().zip(&self.dt).map(|(a, b)| a * b).sum();
        Ok((loss, dgamma))
    }
}

/// Fits `gamma` by a logarithmic scan followed by Adam on `log gamma`,
/// minimizing the data loss of the rescaled rollout over the patient's
/// leading `train_fraction` of time points. The model is only read.
pub fn fit_timescale(
    model: &LenoModel,
    basis: &EigenBasis,
    traj: &Trajectory,
    cfg: &TransferConfig,
) -> Result<TransferResult> {
    cfg.validate()?;
    model.check_basis(basis)?;
    traj.validate()?;
    for s in Species::FIELDS {
        model.net(s)?;
    }
    let lambda = basis.eigenvalues();
    let target = Target::new(traj, basis, cfg.train_fraction)?;

    let ratio = (cfg.gamma_max / cfg.gamma_min).ln();
    let mut best = (f64::INFINITY, 1.0);
    for i in 0..cfg.grid_points {
        let g = cfg.gamma_min * (ratio * i as f64 / (cfg.grid_points - 1) as f64).exp();
        match target.loss(model, lambda, g, false) {
            Ok((l, _)) if l < best.0 => best = (l, g),
            Ok(_) | Err(Error::BlowUp { .. }) => {}
            Err(e) => return Err(e),
        }
    }
    if !best.0.is_finite() {
        return Err(Error::Divergence { epoch: 0 });
    }

    let mut log_gamma = best.1.ln();
    let mut adam = AdamState::new(1);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let gamma = log_gamma.exp();
        let (l, dg) = match target.loss(model, lambda, gamma, true) {
            Ok(v) => v,
            Err(Error::BlowUp { .. }) => return Err(Error::Divergence { epoch }),
            Err(e) => return Err(e),
        };
        if !l.is_finite() || !dg.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(l);
        if l < best.0 {
            best = (l, gamma);
        }
        let mut x = [log_gamma];
        adam_step(&mut x, &[dg * gamma], &mut adam, cfg.lr)?;
        log_gamma = x[0];
    }
    if let Ok((l, _)) = target.loss(model, lambda, log_gamma.exp(), false) {
        if l < best.0 {
            best = (l, log_gamma.exp());
        }
    }
    let timescale = PatientTimeScale {
        gamma: best.1,
        offset: 0.0,
    };
    let metrics = evaluate_cohort(
        model,
        basis,
        std::slice::from_ref(traj),
        None,
        cfg.train_fraction,
        Some(&[timescale.gamma]),
    )?;
    Ok(TransferResult {
        timescale,
        loss: best.0,
        history,
        metrics,
    })
}
