//! Accuracy and error metrics of predicted trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::ops::Range;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{coupled_forward, tape_to_trajectory, LenoModel};
use crate::spectral::{check_times, project_raw};
use crate::synth::{RDParams, Species, Trajectory};

/// `acc1_excluded` counts node values skipped by `acc1` because the truth was exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub acc2: f64,
    pub acc1: f64,
    pub e_l2: f64,
    pub e_res: f64,
    pub e_nonlinear: Option<f64>,
    pub acc1_excluded: usize,
}

#[derive(Default)]
struct Acc {
    acc2: Vec<f64>,
    acc1: Vec<f64>,
    e_l2: Vec<f64>,
    e_res: Vec<f64>,
    e_nl: Vec<f64>,
    excluded: usize,
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Pushes `num / den` unless the reference norm vanishes.
fn push_rel(dst: &mut Vec<f64>, num: f64, den: f64) {
    if den > 0.0 {
        dst.push(num / den);
    }
}

impl Acc {
    fn finish(self, with_nl: bool) -> Metrics {
        Metrics {
            acc2: mean(&self.acc2),
            acc1: mean(&self.acc1),
            e_l2: mean(&self.e_l2),
            e_res: mean(&self.e_res),
            e_nonlinear: with_nl.then(|| mean(&self.e_nl)),
            acc1_excluded: self.excluded,
        }
    }
}

impl Metrics {
    /// Uniform average of per-patient metrics.
    pub fn average(items: &[Metrics]) -> Metrics {
        let f = |g: fn(&Metrics) -> f64| mean(&items.iter().map(g).collect::<Vec<_>>());
        let nl: Vec<f64> = items.iter().filter_map(|m| m.e_nonlinear).collect();
        Metrics {
            acc2: f(|m| m.acc2),
            acc1: f(|m| m.acc1),
            e_l2: f(|m| m.e_l2),
            e_res: f(|m| m.e_res),
            e_nonlinear: (!nl.is_empty()).then(|| mean(&nl)),
            acc1_excluded: items.iter().map(|m| m.acc1_excluded).sum(),
        }
    }

    pub fn csv_row(&self, species: Species, phase: &str) -> String {
        let nl = self.e_nonlinear.map(fmt).unwrap_or_default();
        format!(
            "{species},{phase},{},{},{},{},{nl}",
            fmt(self.acc2),
            fmt(self.acc1),
            fmt(self.e_l2),
            fmt(self.e_res)
        )
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.16e}")
}

pub const METRICS_HEADER: &str = "species,phase,acc2,acc1,e_l2,e_res,e_nonlinear";

/// Metrics CSV with one row per `(species, phase)`.
pub fn metrics_csv(rows: &[(Species, String, Metrics)]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for (sp, phase, m) in rows {
        writeln!(s, "{}", m.csv_row(*sp, phase)).unwrap();
    }
    s
}

/// Metrics of `pred` against `truth` over the state indices `steps`
/// (each index `n >= 1` contributes the interval `n - 1 -> n`).
///
/// Intervals are stretched by `gamma` when evaluating residuals. The
/// nonlinear-term error is only available with reference parameters.
pub fn evaluate(
    pred: &Trajectory,
    truth: &Trajectory,
    model: &LenoModel,
    basis: &EigenBasis,
    reference: Option<&RDParams>,
    steps: Range<usize>,
    gamma: f64,
) -> Result<BTreeMap<Species, Metrics>> {
    model.check_basis(basis)?;
    if pred.times != truth.times {
        return Err(Error::InvalidArgument("prediction and truth use different time grids".into()));
    }
    if steps.start == 0 || steps.end > truth.n_times() || steps.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "step range {steps:?} is not inside 1..{}",
            truth.n_times()
        )));
    }
    let lambda = basis.eigenvalues();
    let weight = basis.weight();
    let beta_pred: Vec<[DVector<f64>; 3]> = (0..pred.n_times())
        .map(|k| [0, 1, 2].map(|i| project_raw(&pred.field(Species::FIELDS[i])[k], basis)))
        .collect();
    let beta_true: Vec<[DVector<f64>; 3]> = (0..truth.n_times())
        .map(|k| [0, 1, 2].map(|i| project_raw(&truth.field(Species::FIELDS[i])[k], basis)))
        .collect();
    let stacked = |b: &[DVector<f64>; 3], upto: usize| -> Vec<f64> {
        b.iter().take(upto + 1).flat_map(|v| v.iter().copied()).collect()
    };

    let mut out = BTreeMap::new();
    for (si, s) in Species::FIELDS.iter().enumerate() {
        if !model.is_trained(*s) {
            continue;
        }
        let net = model.net(*s)?;
        let alpha = model.alpha(*s);
        let mut acc = Acc::default();
        for n in steps.clone() {
            let u = &truth.field(*s)[n];
            let v = &pred.field(*s)[n];
            let e = diff(u, v);
            acc.acc2.push(1.0 - l2(&e) / l2(u));
            push_rel(&mut acc.e_l2, weight.norm(&e), weight.norm(u));
            let mut rel = Vec::with_capacity(u.len());
            for (x, y) in u.iter().zip(v) {
                if *x == 0.0 {
                    acc.excluded += 1;
                } else {
                    rel.push(((x - y) / x).abs());
                }
            }
            if !rel.is_empty() {
                acc.acc1.push(1.0 - mean(&rel));
            }

            let dt = gamma * (truth.times[n] - truth.times[n - 1]);
            let r = DVector::from_fn(lambda.len(), |i, _| {
                (beta_true[n][si][i] - beta_true[n - 1][si][i]) / dt + alpha * lambda[i] * beta_true[n][si][i]
            });
            let g = DVector::from_vec(net.forward_vec(&stacked(&beta_pred[n - 1], si))?);
            push_rel(&mut acc.e_res, (&g - &r).norm(), r.norm());

            if let Some(params) = reference {
                let f = params.reaction(*s, &truth.a[n], &truth.tau[n], &truth.n[n]);
                let learned = model.nodal_reaction(*s, &stacked(&beta_pred[n], si), basis)?;
                push_rel(&mut acc.e_nl, weight.norm(&diff(&learned, &f)), weight.norm(&f));
            }
        }
        out.insert(*s, acc.finish(reference.is_some()));
    }

    if let (true, Some(c_true), Some(c_pred)) = (model.is_trained(Species::C), &truth.c, &pred.c) {
        let net = model.net(Species::C)?;
        let mut acc = Acc::default();
        let (mut num, mut den) = (0.0, 0.0);
        let mut rel = Vec::new();
        for n in steps.clone() {
            let (c, ct) = (c_true[n], c_pred[n]);
            num += (c - ct).powi(2);
            den += c * c;
            push_rel(&mut acc.e_l2, (c - ct).abs(), c.abs());
            if c == 0.0 {
                acc.excluded += 1;
            } else {
                rel.push(((c - ct) / c).abs());
            }
            let dt = gamma * (truth.times[n] - truth.times[n - 1]);
            let r = (c - c_true[n - 1]) / dt;
            let mut x: Vec<f64> = beta_pred[n - 1][2].iter().copied().collect();
            x.push(c_pred[n - 1]);
            let g = net.forward_vec(&x)?[0];
            push_rel(&mut acc.e_res, (g - r).abs(), r.abs());
            if let Some(params) = reference {
                let f = params.cognitive_rate(basis.integrate(&truth.n[n]), c);
                let mut x: Vec<f64> = beta_pred[n][2].iter().copied().collect();
                x.push(ct);
                let learned = net.forward_vec(&x)?[0];
                push_rel(&mut acc.e_nl, (learned - f).abs(), f.abs());
            }
        }
        acc.acc2.push(1.0 - (num / den).sqrt());
        if !rel.is_empty() {
            acc.acc1.push(1.0 - mean(&rel));
        }
        out.insert(Species::C, acc.finish(reference.is_some()));
    }
    Ok(out)
}

/// Per-patient [`evaluate`] averaged uniformly over the cohort.
pub fn average_by_species(per_patient: &[BTreeMap<Species, Metrics>]) -> BTreeMap<Species, Metrics> {
    let mut out = BTreeMap::new();
    for s in Species::ALL {
        let items: Vec<Metrics> = per_patient.iter().filter_map(|m| m.get(&s).copied()).collect();
        if !items.is_empty() {
            out.insert(s, Metrics::average(&items));
        }
    }
    out
}

/// Prediction over the patient's own grid from its first observation,
/// advancing the leading species whose operators are trained.
pub fn predict_trained(model: &LenoModel, basis: &EigenBasis, traj: &Trajectory, gamma: f64) -> Result<Trajectory> {
    model.check_basis(basis)?;
    traj.validate()?;
    check_times(&traj.times)?;
    let depth = Species::FIELDS.iter().take_while(|s| model.is_trained(**s)).count();
    if depth == 0 {
        return Err(Error::StageOrder("no operator has been trained".into()));
    }
    let c0 = match (&traj.c, depth == 3 && model.is_trained(Species::C)) {
        (Some(c), true) => Some(c[0]),
        _ => None,
    };
    let h: Vec<f64> = traj.times.windows(2).map(|w| gamma * (w[1] - w[0])).collect();
    let beta0 = [0, 1, 2].map(|i| project_raw(&traj.field(Species::FIELDS[i])[0], basis));
    let tape = coupled_forward(model, basis.eigenvalues(), beta0, c0, &h, None, depth)?;
    let mut out = tape_to_trajectory(&tape, basis, &traj.times);
    out.patient_id = traj.patient_id.clone();
    Ok(out)
}

/// Cohort averages over the training window and the held-out remainder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortMetrics {
    pub train: BTreeMap<Species, Metrics>,
    pub test: BTreeMap<Species, Metrics>,
}

impl CohortMetrics {
    pub fn rows(&self) -> Vec<(Species, String, Metrics)> {
        let mut rows = Vec::new();
        for (phase, map) in [("train", &self.train), ("test", &self.test)] {
            for (s, m) in map {
                rows.push((*s, phase.to_string(), *m));
            }
        }
        rows
    }
}

/// Evaluates every patient from its first observation; the first
/// `ceil(train_fraction * n_times)` points form the training window.
pub fn evaluate_cohort(
    model: &LenoModel,
    basis: &EigenBasis,
    cohort: &[Trajectory],
    reference: Option<&RDParams>,
    train_fraction: f64,
    gammas: Option<&[f64]>,
) -> Result<CohortMetrics> {
    if cohort.is_empty() {
        return Err(Error::InvalidArgument("empty cohort".into()));
    }
    if let Some(g) = gammas {
        if g.len() != cohort.len() {
            return Err(Error::DimensionMismatch {
                what: "timescales",
                expected: cohort.len(),
                got: g.len(),
            });
        }
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (k, traj) in cohort.iter().enumerate() {
        let gamma = gammas.map_or(1.0, |g| g[k]);
        let pred = predict_trained(model, basis, traj, gamma)?;
        let nt = traj.train_len(train_fraction).max(2);
        train.push(evaluate(&pred, traj, model, basis, reference, 1..nt, gamma)?);
        if nt < traj.n_times() {
            test.push(evaluate(&pred, traj, model, basis, reference, nt..traj.n_times(), gamma)?);
        }
    }
    Ok(CohortMetrics {
        train: average_by_species(&train),
        test: average_by_species(&test),
    })
}
