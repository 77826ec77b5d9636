//! Stage-wise training of the species operators.
//!
//! Each stage fits one network (plus its log-diffusivity) with Adam on
//! `w_D L^D + w_R L^R`, where `L^D` compares a rollout against the observed
//! coefficients and `L^R` compares the network output with finite-difference
//! residuals of the data. Patients are batched as columns; shorter series are
//! padded with zero-length steps, which leave the state unchanged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::metrics::{evaluate_cohort, Metrics};
use crate::model::{coupled_forward, init_net, LenoModel, SpectralNet};
use crate::nn::{adam_step, AdamState, LrSchedule};
use crate::spectral::project_raw;
use crate::synth::{Species, Trajectory};

/// How the state fed back into the network is produced in `L^D`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RolloutMode {
    /// Own and upstream states are model rollouts.
    Full,
    /// Inputs at every step are the observed coefficients.
    TeacherForced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub schedule: LrSchedule,
    pub seed: u64,
    pub w_data: f64,
    pub w_res: f64,
    pub rollout: RolloutMode,
    pub train_fraction: f64,
    pub alpha_init: f64,
    pub learn_alpha: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5000,
            schedule: LrSchedule::default(),
            seed: 0,
            w_data: 1.0,
            w_res: 1.0,
            rollout: RolloutMode::Full,
            train_fraction: 0.6,
            alpha_init: 1.0,
            learn_alpha: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train_fraction must lie in (0, 1], got {}", self.train_fraction));
        }
        let frozen_zero = self.alpha_init == 0.0 && !self.learn_alpha;
        if !(self.alpha_init > 0.0 || frozen_zero) || !self.alpha_init.is_finite() {
            return bad(format!(
                "alpha_init must be positive (or 0 with learn_alpha = false), got {}",
                self.alpha_init
            ));
        }
        if !(self.w_data >= 0.0 && self.w_res >= 0.0) || self.w_data + self.w_res == 0.0 {
            return bad("loss weights must be non-negative and not both zero".into());
        }
        if !(self.schedule.base_lr > 0.0) || !(self.schedule.decay > 0.0) || self.schedule.interval == 0 {
            return bad("learning-rate schedule must have positive rate, decay and interval".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub species: Species,
    pub loss_history: Vec<f64>,
    pub final_loss: f64,
    pub alpha: f64,
    /// Training-window metrics of the rollout from each first observation.
    pub metrics: Metrics,
}

fn check_pair(pred: &[DVector<f64>], data: &[DVector<f64>]) -> Result<()> {
    if pred.len() != data.len() || pred.is_empty() {
        return Err(Error::DimensionMismatch {
            what: "loss series",
            expected: data.len(),
            got: pred.len(),
        });
    }
    Ok(())
}

fn mean_relative(pred: &[DVector<f64>], data: &[DVector<f64>]) -> Result<f64> {
    check_pair(pred, data)?;
    let mut total = 0.0;
    for (n, (p, d)) in pred.iter().zip(data).enumerate() {
        if p.len() != d.len() {
            return Err(Error::DimensionMismatch {
                what: "coefficient vector",
                expected: d.len(),
                got: p.len(),
            });
        }
        let den = d.norm();
        if den == 0.0 {
            return Err(Error::ZeroNorm { step: n });
        }
        total += (p - d).norm() / den;
    }
    Ok(total / pred.len() as f64)
}

/// `mean_n |beta_pred^n - beta^n| / |beta^n|` over one patient's steps.
pub fn loss_data(pred: &[DVector<f64>], data: &[DVector<f64>]) -> Result<f64> {
    mean_relative(pred, data)
}

/// `mean_n |R^n - G^n| / |R^n|` over one patient's steps.
pub fn loss_residual(network: &[DVector<f64>], residual: &[DVector<f64>]) -> Result<f64> {
    mean_relative(network, residual)
}

/// Batched problem for one network. Columns are patients; `own` is the
/// species being trained (dimension `d`), `up` the fixed upstream inputs.
struct Problem {
    d: usize,
    lambda: Vec<f64>,
    n_steps: usize,
    /// Step sizes, `h[n - 1][b]` for the step into state `n`.
    h: Vec<Vec<f64>>,
    /// Observed own state at `0..=n_steps`.
    own: Vec<DMatrix<f64>>,
    /// Upstream inputs for the step out of state `n`, `0..n_steps`.
    up: Vec<DMatrix<f64>>,
    /// Data-loss weight of state `n` (already divided by the target norm).
    wd: Vec<Vec<f64>>,
    res_x: DMatrix<f64>,
    res_diff: DMatrix<f64>,
    res_lam_beta: DMatrix<f64>,
    res_w: Vec<f64>,
}

fn vstack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let (r1, r2, c) = (top.nrows(), bottom.nrows(), bottom.ncols());
    DMatrix::from_fn(r1 + r2, c, |i, j| if i < r1 { top[(i, j)] } else { bottom[(i - r1, j)] })
}

struct Patient {
    h: Vec<f64>,
    own: Vec<Vec<f64>>,
    up_rollout: Vec<Vec<f64>>,
    up_data: Vec<Vec<f64>>,
}

impl Problem {
    fn build(patients: &[Patient], d: usize, lambda: Vec<f64>, mode: RolloutMode) -> Result<Problem> {
        let nb = patients.len();
        let n_steps = patients.iter().map(|p| p.h.len()).max().unwrap_or(0);
        let u = patients[0].up_data[0].len();
        let mut h = vec![vec![0.0; nb]; n_steps];
        let mut own = vec![DMatrix::zeros(d, nb); n_steps + 1];
        let mut up = vec![DMatrix::zeros(u, nb); n_steps];
        let mut wd = vec![vec![0.0; nb]; n_steps + 1];
        let n_res: usize = patients.iter().map(|p| p.h.len()).sum();
        let mut res_x = DMatrix::zeros(u + d, n_res);
        let mut res_diff = DMatrix::zeros(d, n_res);
        let mut res_lam_beta = DMatrix::zeros(d, n_res);
        let mut res_w = vec![0.0; n_res];
        let mut col = 0;
        for (b, p) in patients.iter().enumerate() {
            let np = p.h.len();
            let w = 1.0 / (np as f64 * nb as f64);
            for n in 0..=n_steps {
                let k = n.min(np);
                for i in 0..d {
                    own[n][(i, b)] = p.own[k][i];
                }
                if n < n_steps {
                    let src = match mode {
                        RolloutMode::Full => &p.up_rollout[k],
                        RolloutMode::TeacherForced => &p.up_data[k],
                    };
                    for i in 0..u {
                        up[n][(i, b)] = src[i];
                    }
                }
                if n >= 1 && n <= np {
                    h[n - 1][b] = p.h[n - 1];
                    let norm = p.own[n].iter().map(|x| x * x).sum::<f64>().sqrt();
                    if norm == 0.0 {
                        return Err(Error::ZeroNorm { step: n });
                    }
                    wd[n][b] = w / norm;
                }
            }
            for n in 1..=np {
                for i in 0..u {
                    res_x[(i, col)] = p.up_data[n - 1][i];
                }
                for i in 0..d {
                    res_x[(u + i, col)] = p.own[n - 1][i];
                    res_diff[(i, col)] = (p.own[n][i] - p.own[n - 1][i]) / p.h[n - 1];
                    res_lam_beta[(i, col)] = lambda[i] * p.own[n][i];
                }
                res_w[col] = w;
                col += 1;
            }
        }
        Ok(Problem {
            d,
            lambda,
            n_steps,
            h,
            own,
            up,
            wd,
            res_x,
            res_diff,
            res_lam_beta,
            res_w,
        })
    }

    fn residual_target(&self, alpha: f64) -> DMatrix<f64> {
        &self.res_diff + &self.res_lam_beta * alpha
    }

    /// Loss value; accumulates parameter gradients into `grad` and returns
    /// `d loss / d alpha` alongside.
    fn loss_and_grad(
        &self,
        net: &SpectralNet,
        alpha: f64,
        cfg: &TrainConfig,
        mut grad: Option<&mut [f64]>,
    ) -> Result<(f64, f64)> {
        let (d, nb) = (self.d, self.own[0].ncols());
        let mut loss = 0.0;
        let mut dalpha = 0.0;

        if cfg.w_data > 0.0 {
            let mut states = Vec::with_capacity(self.n_steps + 1);
            states.push(self.own[0].clone());
            let mut tapes = Vec::with_capacity(self.n_steps);
            for n in 1..=self.n_steps {
                let prev = match cfg.rollout {
                    RolloutMode::Full => &states[n - 1],
                    RolloutMode::TeacherForced => &self.own[n - 1],
                };
                let (g, tape) = net.forward_tape(&vstack(&self.up[n - 1], prev))?;
                let hs = &self.h[n - 1];
                let base = &states[n - 1];
                let next = DMatrix::from_fn(d, nb, |i, b| {
                    let h = hs[b];
                    if h == 0.0 {
                        base[(i, b)]
                    } else {
                        (base[(i, b)] + h * g[(i, b)]) / (1.0 + h * alpha * self.lambda[i])
                    }
                });
                for b in 0..nb {
                    if self.wd[n][b] > 0.0 {
                        let e = (next.column(b) - self.own[n].column(b)).norm();
                        loss += cfg.w_data * self.wd[n][b] * e;
                    }
                }
                states.push(next);
                tapes.push(tape);
            }
            if let Some(grad) = grad.as_deref_mut() {
                let mut adj = DMatrix::<f64>::zeros(d, nb);
                let own_rows = net.input_dim() - d;
                for n in (1..=self.n_steps).rev() {
                    let s = &states[n];
                    for b in 0..nb {
                        let w = self.wd[n][b];
                        if w > 0.0 {
                            let e = s.column(b) - self.own[n].column(b);
                            let en = e.norm();
                            if en > 0.0 {
                                adj.column_mut(b).axpy(cfg.w_data * w / en, &e, 1.0);
                            }
                        }
                    }
                    let hs = &self.h[n - 1];
                    let mut q = DMatrix::zeros(d, nb);
                    let mut dg = DMatrix::zeros(d, nb);
                    for b in 0..nb {
                        let h = hs[b];
                        for i in 0..d {
                            if h == 0.0 {
                                q[(i, b)] = adj[(i, b)];
                            } else {
                                let den = 1.0 + h * alpha * self.lambda[i];
                                let qi = adj[(i, b)] / den;
                                q[(i, b)] = qi;
                                dg[(i, b)] = h * qi;
                                dalpha -= qi * h * self.lambda[i] * s[(i, b)];
                            }
                        }
                    }
                    let dx = net.backward(&tapes[n - 1], &dg, Some(&mut *grad))?;
                    adj = q;
                    if cfg.rollout == RolloutMode::Full {
                        adj += dx.rows(own_rows, d);
                    }
                }
            }
        }

        if cfg.w_res > 0.0 {
            let r = self.residual_target(alpha);
            let (g, tape) = net.forward_tape(&self.res_x)?;
            let ncol = r.ncols();
            let mut dg = DMatrix::zeros(d, ncol);
            for j in 0..ncol {
                let rn = r.column(j).norm();
                if rn == 0.0 {
                    continue;
                }
                let e = g.column(j) - r.column(j);
                let en = e.norm();
                let w = cfg.w_res * self.res_w[j];
                loss += w * en / rn;
                if en > 0.0 {
                    let de = e * (w / (en * rn));
                    dg.column_mut(j).copy_from(&de);
                    // d/dR of |G - R| / |R|
                    for i in 0..d {
                        let dr = -de[i] - w * en * r[(i, j)] / (rn * rn * rn);
                        dalpha += dr * self.res_lam_beta[(i, j)];
                    }
                }
            }
            if let Some(grad) = grad {
                net.backward(&tape, &dg, Some(grad))?;
            }
        }
        Ok((loss, dalpha))
    }
}

fn beta_series(traj: &Trajectory, s: Species, basis: &EigenBasis) -> Vec<DVector<f64>> {
    traj.field(s).iter().map(|u| project_raw(u, basis)).collect()
}

fn prepare(model: &LenoModel, s: Species, data: &[Trajectory], basis: &EigenBasis, frac: f64) -> Result<Vec<Patient>> {
    let lambda = basis.eigenvalues();
    let mut out = Vec::with_capacity(data.len());
    for traj in data {
        traj.validate()?;
        if traj.n_nodes() != basis.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "trajectory nodes",
                expected: basis.n_nodes(),
                got: traj.n_nodes(),
            });
        }
        let nt = traj.train_len(frac);
        if nt < 3 {
            return Err(Error::InvalidArgument(format!(
                "patient {} has {nt} training time points; at least 3 are required",
                traj.patient_id
            )));
        }
        let traj = traj.slice(0..nt);
        let betas: Vec<Vec<DVector<f64>>> = Species::FIELDS.iter().map(|f| beta_series(&traj, *f, basis)).collect();
        let h: Vec<f64> = traj.times.windows(2).map(|w| w[1] - w[0]).collect();
        let depth = s.index().min(3);
        let rollout = if depth > 0 {
            let beta0 = [betas[0][0].clone(), betas[1][0].clone(), betas[2][0].clone()];
            Some(coupled_forward(model, lambda, beta0, None, &h, None, depth)?)
        } else {
            None
        };
        let flat = |v: &[&DVector<f64>]| -> Vec<f64> { v.iter().flat_map(|x| x.iter().copied()).collect() };
        let (own, up_data, up_rollout): (Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<Vec<f64>>) = match s {
            Species::C => {
                let c = traj.c.as_ref().ok_or_else(|| {
                    Error::InvalidArgument(format!("patient {} has no cognitive series", traj.patient_id))
                })?;
                let tape = rollout.as_ref().unwrap();
                (
                    c.iter().map(|v| vec![*v]).collect(),
                    betas[2].iter().map(|b| b.as_slice().to_vec()).collect(),
                    tape.beta.iter().map(|b| b[2].as_slice().to_vec()).collect(),
                )
            }
            _ => {
                let si = s.index();
                let up_data = (0..nt).map(|k| flat(&(0..si).map(|j| &betas[j][k]).collect::<Vec<_>>())).collect();
                let up_rollout = match &rollout {
                    Some(t) => t.beta.iter().map(|b| flat(&b.iter().take(si).collect::<Vec<_>>())).collect(),
                    None => vec![Vec::new(); nt],
                };
                (betas[si].iter().map(|b| b.as_slice().to_vec()).collect(), up_data, up_rollout)
            }
        };
        out.push(Patient {
            h,
            own,
            up_rollout,
            up_data,
        });
    }
    Ok(out)
}

/// Trains the operator of species `s` on the leading `train_fraction` of
/// every trajectory. Upstream operators must already be trained and are
/// held fixed; a previously trained network for `s` is replaced.
pub fn train_species(
    model: &mut LenoModel,
    s: Species,
    data: &[Trajectory],
    basis: &EigenBasis,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    model.check_basis(basis)?;
    model.require_upstream(s)?;
    if data.is_empty() {
        return Err(Error::InvalidArgument("no training trajectories".into()));
    }
    let patients = prepare(model, s, data, basis, cfg.train_fraction)?;
    let (d, lambda, learn_alpha) = match s {
        Species::C => (1, vec![0.0], false),
        _ => (basis.n_modes(), basis.eigenvalues().to_vec(), cfg.learn_alpha),
    };
    let problem = Problem::build(&patients, d, lambda, cfg.rollout)?;

    let mut log_alpha = match s {
        Species::C => 0.0,
        // exp(f64::MIN) is exactly 0 and, unlike -inf, survives JSON.
        _ if cfg.alpha_init == 0.0 => f64::MIN,
        _ => cfg.alpha_init.ln(),
    };
    let alpha0 = if s == Species::C { 0.0 } else { log_alpha.exp() };
    let mut net = init_net(&model.arch, s, basis.n_modes(), cfg.seed.wrapping_add(s.index() as u64))?;
    net.fit_scaling(&problem.res_x, &problem.residual_target(alpha0));

    let mut adam = AdamState::new(net.mlp.n_params());
    let mut adam_alpha = AdamState::new(1);
    let mut grad = vec![0.0; net.mlp.n_params()];
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let alpha = if s == Species::C { 0.0 } else { log_alpha.exp() };
        let (loss, dalpha) = problem.loss_and_grad(&net, alpha, cfg, Some(&mut grad))?;
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { epoch });
        }
        history.push(loss);
        let lr = cfg.schedule.lr_at(epoch);
        adam_step(net.mlp.params_mut(), &grad, &mut adam, lr)?;
        if learn_alpha {
            let mut la = [log_alpha];
            adam_step(&mut la, &[dalpha * alpha], &mut adam_alpha, lr)?;
            log_alpha = la[0];
        }
    }
    let alpha = if s == Species::C { 0.0 } else { log_alpha.exp() };
    let (final_loss, _) = problem.loss_and_grad(&net, alpha, cfg, None)?;
    if !final_loss.is_finite() {
        return Err(Error::Divergence { epoch: cfg.epochs });
    }

    model.nets[s.index()] = Some(net);
    if s != Species::C {
        model.log_alpha[s.index()] = log_alpha;
    }
    // Downstream stages were fitted against the old operator.
    for later in Species::ALL.iter().skip(s.index() + 1) {
        model.nets[later.index()] = None;
    }
    let metrics = evaluate_cohort(model, basis, data, None, cfg.train_fraction, None)?
        .train
        .get(&s)
        .copied()
        .ok_or_else(|| Error::InvalidArgument(format!("no {s} series to evaluate")))?;
    Ok(TrainReport {
        species: s,
        loss_history: history,
        final_loss,
        alpha,
        metrics,
    })
}

/// Trains the four stages in order.
pub fn train_all(
    model: &mut LenoModel,
    data: &[Trajectory],
    basis: &EigenBasis,
    cfg: &TrainConfig,
) -> Result<Vec<TrainReport>> {
    let with_c = data.iter().all(|t| t.c.is_some());
    let stages: &[Species] = if with_c { &Species::ALL } else { &Species::FIELDS };
    stages.iter().map(|s| train_species(model, *s, data, basis, cfg)).collect()
}

/// Loss of the trained network for `s` under `cfg`, without updating it.
pub fn species_loss(model: &LenoModel, s: Species, data: &[Trajectory], basis: &EigenBasis, cfg: &TrainConfig) -> Result<f64> {
    model.check_basis(basis)?;
    let net = model.net(s)?;
    let patients = prepare(model, s, data, basis, cfg.train_fraction)?;
    let (d, lambda) = match s {
        Species::C => (1, vec![0.0]),
        _ => (basis.n_modes(), basis.eigenvalues().to_vec()),
    };
    let problem = Problem::build(&patients, d, lambda, cfg.rollout)?;
    Ok(problem.loss_and_grad(net, model.alpha(s), cfg, None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Mlp;

    fn toy_problem(mode: RolloutMode) -> (Problem, SpectralNet) {
        let d = 3;
        let mk = |h: Vec<f64>, seed: f64| {
            let nt = h.len() + 1;
            Patient {
                h,
                own: (0..nt).map(|k| (0..d).map(|i| 0.5 + seed + 0.1 * (k * i) as f64).collect()).collect(),
                up_data: (0..nt).map(|k| vec![0.2 * k as f64 - seed, 0.3]).collect(),
                up_rollout: (0..nt).map(|k| vec![0.21 * k as f64 - seed, 0.28]).collect(),
            }
        };
        let pts = vec![mk(vec![0.3, 0.2, 0.4], 0.0), mk(vec![0.5, 0.1], 0.2)];
        let problem = Problem::build(&pts, d, vec![0.0, 0.8, 2.0], mode).unwrap();
        let mlp = Mlp::new(&[5, 7, 3], crate::nn::Activation::Relu, crate::nn::Activation::Linear, 3).unwrap();
        let mut net = SpectralNet::unscaled(mlp);
        net.fit_scaling(&problem.res_x, &problem.residual_target(0.7));
        (problem, net)
    }

    #[test]
    fn batched_gradients_match_finite_differences() {
        for mode in [RolloutMode::Full, RolloutMode::TeacherForced] {
            let (problem, mut net) = toy_problem(mode);
            let cfg = TrainConfig {
                rollout: mode,
                w_res: 0.7,
                ..TrainConfig::default()
            };
            let alpha = 0.7;
            let mut grad = vec![0.0; net.mlp.n_params()];
            let (_, dalpha) = problem.loss_and_grad(&net, alpha, &cfg, Some(&mut grad)).unwrap();
            let eps = 1e-6;
            let f = |net: &SpectralNet, a: f64| problem.loss_and_grad(net, a, &cfg, None).unwrap().0;
            let fd = (f(&net, alpha + eps) - f(&net, alpha - eps)) / (2.0 * eps);
            assert!((fd - dalpha).abs() < 1e-6 * (1.0 + fd.abs()), "{mode:?} alpha: {fd} vs {dalpha}");
            for k in (0..net.mlp.n_params()).step_by(3) {
                let w0 = net.mlp.params()[k];
                net.mlp.params_mut()[k] = w0 + eps;
                let fp = f(&net, alpha);
                net.mlp.params_mut()[k] = w0 - eps;
                let fm = f(&net, alpha);
                net.mlp.params_mut()[k] = w0;
                let fd = (fp - fm) / (2.0 * eps);
                assert!((fd - grad[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{mode:?} param {k}: {fd} vs {}", grad[k]);
            }
        }
    }

    #[test]
    fn padding_steps_are_identity() {
        let (problem, _) = toy_problem(RolloutMode::Full);
        assert_eq!(problem.n_steps, 3);
        assert_eq!(problem.h[2], vec![0.4, 0.0]);
        assert_eq!(problem.wd[3][1], 0.0);
        assert_eq!(problem.res_x.ncols(), 5);
        assert!((problem.res_w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn standalone_losses() {
        let d = vec![DVector::from_vec(vec![3.0, 4.0]), DVector::from_vec(vec![1.0, 0.0])];
        let p = vec![DVector::from_vec(vec![3.0, 4.0]), DVector::from_vec(vec![0.0, 0.0])];
        assert!((loss_data(&p, &d).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(loss_data(&d, &d).unwrap(), 0.0);
        let z = vec![DVector::zeros(2), DVector::zeros(2)];
        assert!(matches!(loss_residual(&p, &z), Err(Error::ZeroNorm { step: 0 })));
        assert!(matches!(loss_data(&p[..1], &d), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            train_fraction: 0.0,
            ..TrainConfig::default()
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
        let zero = TrainConfig {
            alpha_init: 0.0,
            ..TrainConfig::default()
        };
        assert!(zero.validate().is_err());
        assert!(TrainConfig { learn_alpha: false, ..zero }.validate().is_ok());
    }
}
