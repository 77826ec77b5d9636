use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::nn::MlpTape;
use crate::spectral::{check_times, project_raw, reconstruct_raw};
use crate::synth::{InitialState, Species, Trajectory};

use super::LenoModel;

/// Patient clock `s = gamma t + offset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatientTimeScale {
    pub gamma: f64,
    pub offset: f64,
}

impl Default for PatientTimeScale {
    fn default() -> Self {
        PatientTimeScale { gamma: 1.0, offset: 0.0 }
    }
}

/// Clearance rates per step; entry `k` acts on the interval `k -> k + 1`.
#[derive(Debug, Clone, Copy)]
pub struct Doses<'a> {
    pub a: &'a [f64],
    pub tau: &'a [f64],
}

#[derive(Debug, Clone)]
struct StepTape {
    nets: [Option<MlpTape>; 4],
    drive: [DVector<f64>; 3],
    rate: f64,
}

/// Everything the reverse pass needs from a coupled rollout.
#[derive(Debug, Clone)]
pub struct CoupledTape {
    pub h: Vec<f64>,
    /// States `0..=N`, one coefficient vector per spatial species.
    pub beta: Vec<[DVector<f64>; 3]>,
    pub c: Option<Vec<f64>>,
    depth: usize,
    dose_a: Vec<f64>,
    dose_tau: Vec<f64>,
    steps: Vec<StepTape>,
}

impl CoupledTape {
    pub fn n_steps(&self) -> usize {
        self.h.len()
    }

    /// Number of spatial species that were advanced.
    pub fn depth(&self) -> usize {
        self.depth
    }
}

/// Gradients of a scalar with respect to the rollout inputs.
#[derive(Debug, Clone)]
pub struct CoupledGrads {
    pub dh: Vec<f64>,
    pub dose_a: Vec<f64>,
    pub dose_tau: Vec<f64>,
    pub beta0: [DVector<f64>; 3],
    pub c0: f64,
}

fn col(v: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_column_slice(v.len(), 1, v.as_slice())
}

fn stack(parts: &[&DVector<f64>], extra: Option<f64>) -> DMatrix<f64> {
    let mut data: Vec<f64> = parts.iter().flat_map(|v| v.iter().copied()).collect();
    data.extend(extra);
    DMatrix::from_column_slice(data.len(), 1, &data)
}

/// Advances the first `depth` spatial species (and C when `c0` is given)
/// through the step sizes `h`.
pub fn coupled_forward(
    model: &LenoModel,
    lambda: &[f64],
    beta0: [DVector<f64>; 3],
    c0: Option<f64>,
    h: &[f64],
    doses: Option<Doses<'_>>,
    depth: usize,
) -> Result<CoupledTape> {
    for s in Species::FIELDS.iter().take(depth) {
        model.net(*s)?;
    }
    if c0.is_some() {
        if depth < 3 {
            return Err(Error::StageOrder("C requires the full A, tau, N rollout".into()));
        }
        model.net(Species::C)?;
    }
    let n = h.len();
    let (dose_a, dose_tau) = match doses {
        Some(d) => {
            if d.a.len() != n || d.tau.len() != n {
                return Err(Error::DimensionMismatch {
                    what: "dose schedule",
                    expected: n,
                    got: d.a.len().min(d.tau.len()),
                });
            }
            (d.a.to_vec(), d.tau.to_vec())
        }
        None => (vec![0.0; n], vec![0.0; n]),
    };
    let alpha = [model.alpha(Species::A), model.alpha(Species::Tau), model.alpha(Species::N)];
    let mut beta = Vec::with_capacity(n + 1);
    beta.push(beta0);
    let mut c = c0.map(|c| {
        let mut v = Vec::with_capacity(n + 1);
        v.push(c);
        v
    });
    let mut steps = Vec::with_capacity(n);
    let mut t_acc = 0.0;
    for k in 0..n {
        let prev = &beta[k];
        let mut next = prev.clone();
        let mut tapes: [Option<MlpTape>; 4] = [None, None, None, None];
        let mut drive: [DVector<f64>; 3] = [DVector::zeros(0), DVector::zeros(0), DVector::zeros(0)];
        for (si, s) in Species::FIELDS.iter().enumerate().take(depth) {
            let net = model.net(*s)?;
            let parts: Vec<&DVector<f64>> = prev.iter().take(si + 1).collect();
            let (g, tape) = net.forward_tape(&stack(&parts, None))?;
            let mut g = DVector::from_column_slice(g.as_slice());
            let d = match s {
                Species::A => dose_a[k],
                Species::Tau => dose_tau[k],
                _ => 0.0,
            };
            if d != 0.0 {
                g.axpy(-d, &prev[si], 1.0);
            }
            for i in 0..g.len() {
                next[si][i] = (prev[si][i] + h[k] * g[i]) / (1.0 + h[k] * alpha[si] * lambda[i]);
            }
            tapes[si] = Some(tape);
            drive[si] = g;
        }
        let mut rate = 0.0;
        if let Some(cs) = c.as_mut() {
            let net = model.net(Species::C)?;
            let (r, tape) = net.forward_tape(&stack(&[&prev[2]], Some(cs[k])))?;
            rate = r[(0, 0)];
            cs.push(cs[k] + h[k] * rate);
            tapes[3] = Some(tape);
        }
        t_acc += h[k];
        let finite = next.iter().take(depth).all(|b| b.iter().all(|x| x.is_finite()))
            && c.as_ref().map_or(true, |cs| cs[k + 1].is_finite());
        if !finite {
            return Err(Error::BlowUp { time: t_acc });
        }
        beta.push(next);
        steps.push(StepTape {
            nets: tapes,
            drive,
            rate,
        });
    }
    Ok(CoupledTape {
        h: h.to_vec(),
        beta,
        c,
        depth,
        dose_a,
        dose_tau,
        steps,
    })
}

/// Reverse pass of [`coupled_forward`] for a scalar whose partial derivatives
/// with respect to each recorded state are `adj_beta[k]` and `adj_c[k]`.
pub fn coupled_backward(
    model: &LenoModel,
    lambda: &[f64],
    tape: &CoupledTape,
    adj_beta: &[[DVector<f64>; 3]],
    adj_c: &[f64],
) -> Result<CoupledGrads> {
    let n = tape.n_steps();
    let p = lambda.len();
    let with_c = tape.c.is_some();
    if adj_beta.len() != n + 1 || (with_c && adj_c.len() != n + 1) {
        return Err(Error::DimensionMismatch {
            what: "state adjoints",
            expected: n + 1,
            got: adj_beta.len(),
        });
    }
    let alpha = [model.alpha(Species::A), model.alpha(Species::Tau), model.alpha(Species::N)];
    let zero = || [DVector::zeros(p), DVector::zeros(p), DVector::zeros(p)];
    let mut a = adj_beta[n].clone();
    let mut a_c = if with_c { adj_c[n] } else { 0.0 };
    let mut grads = CoupledGrads {
        dh: vec![0.0; n],
        dose_a: vec![0.0; n],
        dose_tau: vec![0.0; n],
        beta0: zero(),
        c0: 0.0,
    };
    for k in (0..n).rev() {
        let h = tape.h[k];
        let prev = &tape.beta[k];
        let next = &tape.beta[k + 1];
        let st = &tape.steps[k];
        let mut b = adj_beta[k].clone();
        let mut b_c = if with_c { adj_c[k] } else { 0.0 };
        for si in 0..tape.depth {
            let s = Species::FIELDS[si];
            let q = DVector::from_fn(p, |i, _| a[si][i] / (1.0 + h * alpha[si] * lambda[i]));
            let mut dh = 0.0;
            for i in 0..p {
                dh += q[i] * (st.drive[si][i] - alpha[si] * lambda[i] * next[si][i]);
            }
            grads.dh[k] += dh;
            b[si] += &q;
            let d = match s {
                Species::A => tape.dose_a[k],
                Species::Tau => tape.dose_tau[k],
                _ => 0.0,
            };
            let qb = q.dot(&prev[si]);
            match s {
                Species::A => grads.dose_a[k] -= h * qb,
                Species::Tau => grads.dose_tau[k] -= h * qb,
                _ => {}
            }
            if d != 0.0 {
                b[si].axpy(-h * d, &q, 1.0);
            }
            let dx = model.net(s)?.backward(st.nets[si].as_ref().unwrap(), &col(&(q * h)), None)?;
            for j in 0..=si {
                for i in 0..p {
                    b[j][i] += dx[(j * p + i, 0)];
                }
            }
        }
        if with_c {
            grads.dh[k] += a_c * st.rate;
            b_c += a_c;
            let dx = model.net(Species::C)?.backward(
                st.nets[3].as_ref().unwrap(),
                &DMatrix::from_element(1, 1, h * a_c),
                None,
            )?;
            for i in 0..p {
                b[2][i] += dx[(i, 0)];
            }
            b_c += dx[(p, 0)];
        }
        a = b;
        a_c = b_c;
    }
    grads.beta0 = a;
    grads.c0 = a_c;
    Ok(grads)
}

/// Forward prediction of all species from `init` over `times`. With a time
/// scale, every interval is stretched by `gamma`.
pub fn predict(
    model: &LenoModel,
    basis: &EigenBasis,
    init: &InitialState,
    times: &[f64],
    timescale: Option<&PatientTimeScale>,
) -> Result<Trajectory> {
    model.check_basis(basis)?;
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty time grid".into()));
    }
    check_times(times)?;
    let gamma = timescale.map_or(1.0, |ts| ts.gamma);
    if !(gamma > 0.0) {
        return Err(Error::InvalidArgument(format!("timescale must be positive, got {gamma}")));
    }
    let h: Vec<f64> = times.windows(2).map(|w| gamma * (w[1] - w[0])).collect();
    let beta0 = [
        project_raw(&init.a, basis),
        project_raw(&init.tau, basis),
        project_raw(&init.n, basis),
    ];
    let c0 = model.is_trained(Species::C).then_some(init.c);
    let tape = coupled_forward(model, basis.eigenvalues(), beta0, c0, &h, None, 3)?;
    Ok(tape_to_trajectory(&tape, basis, times))
}

pub(crate) fn tape_to_trajectory(tape: &CoupledTape, basis: &EigenBasis, times: &[f64]) -> Trajectory {
    let field = |i: usize| tape.beta.iter().map(|b| reconstruct_raw(&b[i], basis)).collect();
    Trajectory {
        patient_id: "prediction".into(),
        times: times.to_vec(),
        a: field(0),
        tau: field(1),
        n: field(2),
        c: tape.c.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_net, Architecture, SpectralNet};
    use crate::nn::{Activation, Mlp};

    fn toy_model(p: usize) -> LenoModel {
        let arch = Architecture {
            g_hidden: vec![6],
            n4_hidden: vec![5],
        };
        let mut m = LenoModel {
            p,
            basis_id: "toy".into(),
            arch: arch.clone(),
            nets: [None, None, None, None],
            log_alpha: [0.1, -0.3, 0.2],
        };
        for (k, s) in Species::ALL.iter().enumerate() {
            let mut net = init_net(&arch, *s, p, 30 + k as u64).unwrap();
            for w in net.mlp.params_mut() {
                *w *= 0.3;
            }
            m.nets[k] = Some(net);
        }
        m
    }

    fn scalar_loss(tape: &CoupledTape, wb: &[[DVector<f64>; 3]], wc: &[f64]) -> f64 {
        let mut s = 0.0;
        for (k, b) in tape.beta.iter().enumerate() {
            for j in 0..3 {
                s += b[j].dot(&wb[k][j]);
            }
            s += tape.c.as_ref().unwrap()[k] * wc[k];
        }
        s
    }

    #[test]
    fn reverse_pass_matches_finite_differences() {
        let p = 3;
        let model = toy_model(p);
        let lambda = [0.0, 0.7, 1.9];
        let h = vec![0.3, 0.2, 0.4];
        let beta0 = [
            DVector::from_vec(vec![0.5, 0.1, -0.2]),
            DVector::from_vec(vec![0.3, -0.1, 0.05]),
            DVector::from_vec(vec![0.2, 0.0, 0.1]),
        ];
        let da = vec![0.1, 0.2, 0.05];
        let dt = vec![0.3, 0.0, 0.15];
        let wb: Vec<[DVector<f64>; 3]> = (0..4)
            .map(|k| {
                [
                    DVector::from_fn(p, |i, _| 0.1 * (k + i) as f64),
                    DVector::from_fn(p, |i, _| 0.2 - 0.05 * (i as f64)),
                    DVector::from_fn(p, |i, _| 0.3 * ((k * i) % 3) as f64),
                ]
            })
            .collect();
        let wc = vec![0.0, 0.5, -0.2, 1.0];
        let run = |beta0: [DVector<f64>; 3], c0: f64, h: &[f64], da: &[f64], dt: &[f64]| {
            let tape = coupled_forward(
                &model,
                &lambda,
                beta0,
                Some(c0),
                h,
                Some(Doses { a: da, tau: dt }),
                3,
            )
            .unwrap();
            tape
        };
        let tape = run(beta0.clone(), 0.4, &h, &da, &dt);
        let g = coupled_backward(&model, &lambda, &tape, &wb, &wc).unwrap();
        let f = |beta0: [DVector<f64>; 3], c0: f64, h: &[f64], da: &[f64], dt: &[f64]| {
            scalar_loss(&run(beta0, c0, h, da, dt), &wb, &wc)
        };
        let eps = 1e-6;
        let check = |fd: f64, an: f64| assert!((fd - an).abs() < 1e-6 * (1.0 + fd.abs()), "{fd} vs {an}");
        for k in 0..3 {
            let (mut hp, mut hm) = (h.clone(), h.clone());
            hp[k] += eps;
            hm[k] -= eps;
            check(
                (f(beta0.clone(), 0.4, &hp, &da, &dt) - f(beta0.clone(), 0.4, &hm, &da, &dt)) / (2.0 * eps),
                g.dh[k],
            );
            let (mut ap, mut am) = (da.clone(), da.clone());
            ap[k] += eps;
            am[k] -= eps;
            check(
                (f(beta0.clone(), 0.4, &h, &ap, &dt) - f(beta0.clone(), 0.4, &h, &am, &dt)) / (2.0 * eps),
                g.dose_a[k],
            );
            let (mut tp, mut tm) = (dt.clone(), dt.clone());
            tp[k] += eps;
            tm[k] -= eps;
            check(
                (f(beta0.clone(), 0.4, &h, &da, &tp) - f(beta0.clone(), 0.4, &h, &da, &tm)) / (2.0 * eps),
                g.dose_tau[k],
            );
        }
        for j in 0..3 {
            for i in 0..p {
                let (mut bp, mut bm) = (beta0.clone(), beta0.clone());
                bp[j][i] += eps;
                bm[j][i] -= eps;
                check((f(bp, 0.4, &h, &da, &dt) - f(bm, 0.4, &h, &da, &dt)) / (2.0 * eps), g.beta0[j][i]);
            }
        }
        check(
            (f(beta0.clone(), 0.4 + eps, &h, &da, &dt) - f(beta0.clone(), 0.4 - eps, &h, &da, &dt)) / (2.0 * eps),
            g.c0,
        );
    }

    #[test]
    fn untrained_stage_is_reported() {
        let mut model = toy_model(2);
        model.nets[1] = None;
        let beta0 = [DVector::zeros(2), DVector::zeros(2), DVector::zeros(2)];
        let err = coupled_forward(&model, &[0.0, 1.0], beta0, None, &[0.1], None, 3).unwrap_err();
        assert!(matches!(err, Error::StageOrder(_)));
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn zero_network_keeps_c_constant() {
        let mut model = toy_model(2);
        let zero = Mlp::from_params(&[3, 1], Activation::Relu, Activation::Linear, vec![0.0; 4]).unwrap();
        model.nets[3] = Some(SpectralNet::unscaled(zero));
        let beta0 = [DVector::from_element(2, 0.3), DVector::from_element(2, 0.2), DVector::from_element(2, 0.1)];
        let tape = coupled_forward(&model, &[0.0, 1.0], beta0, Some(0.42), &[0.1, 0.2, 0.3], None, 3).unwrap();
        assert!(tape.c.unwrap().iter().all(|&c| c == 0.42));
    }
}
