//! Ground-truth A / tau / N / C reaction-diffusion generator.
//!
//! The system is integrated in the eigenbasis: diffusion is implicit per mode,
//! reactions are evaluated at the nodes, projected, and stepped explicitly.

mod trajectory;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::spectral::{check_times, project_raw, semi_implicit_update};

pub use trajectory::Trajectory;
pub(crate) use trajectory::fmt_num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Species {
    #[serde(rename = "A")]
    A,
    #[serde(rename = "tau")]
    Tau,
    #[serde(rename = "N")]
    N,
    #[serde(rename = "C")]
    C,
}

impl Species {
    pub const FIELDS: [Species; 3] = [Species::A, Species::Tau, Species::N];
    pub const ALL: [Species; 4] = [Species::A, Species::Tau, Species::N, Species::C];

    pub fn tag(self) -> &'static str {
        match self {
            Species::A => "A",
            Species::Tau => "tau",
            Species::N => "N",
            Species::C => "C",
        }
    }

    /// Position in the cascade A -> tau -> N -> C.
    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Species {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

impl FromStr for Species {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "A" | "a" => Ok(Species::A),
            "tau" | "Tau" | "T" => Ok(Species::Tau),
            "N" | "n" => Ok(Species::N),
            "C" | "c" => Ok(Species::C),
            _ => Err(Error::InvalidArgument(format!("unknown species `{s}`"))),
        }
    }
}

/// Constants of the synthetic system
///
/// ```text
/// A_t   - alpha_A   L A   = lambda_A A (K_A - A)
/// tau_t - alpha_tau L tau = lambda_tauA A + lambda_tau tau (K_tau - tau)
/// N_t   - alpha_N   L N   = lambda_Ntau tau + lambda_N N (K_N - N)
/// C_t                     = lambda_CN int(N) + lambda_C C (K_C - C)
/// ```
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RDParams {
    pub alpha_a: f64,
    pub alpha_tau: f64,
    pub alpha_n: f64,
    pub lambda_a: f64,
    pub lambda_tau_a: f64,
    pub lambda_tau: f64,
    pub lambda_n_tau: f64,
    pub lambda_n: f64,
    pub lambda_c_n: f64,
    pub lambda_c: f64,
    pub k_a: f64,
    pub k_tau: f64,
    pub k_n: f64,
    pub k_c: f64,
}

impl Default for RDParams {
    fn default() -> Self {
        RDParams {
            alpha_a: 1.0,
            alpha_tau: 1.0,
            alpha_n: 1.0,
            lambda_a: 0.4,
            lambda_tau_a: 0.1,
            lambda_tau: 0.2,
            lambda_n_tau: 0.1,
            lambda_n: 0.2,
            lambda_c_n: 0.005,
            lambda_c: 0.2,
            k_a: 1.0,
            k_tau: 1.0,
            k_n: 1.0,
            k_c: 1.0,
        }
    }
}

impl RDParams {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("K_A", self.k_a), ("K_tau", self.k_tau), ("K_N", self.k_n), ("K_C", self.k_c)] {
            if !(k > 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {k}")));
            }
        }
        for (name, a) in [("alpha_A", self.alpha_a), ("alpha_tau", self.alpha_tau), ("alpha_N", self.alpha_n)] {
            if !(a >= 0.0) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative, got {a}")));
            }
        }
        Ok(())
    }

    pub fn max_k(&self) -> f64 {
        self.k_a.max(self.k_tau).max(self.k_n).max(self.k_c)
    }

    pub fn alpha(&self, s: Species) -> f64 {
        match s {
            Species::A => self.alpha_a,
            Species::Tau => self.alpha_tau,
            Species::N => self.alpha_n,
            Species::C => 0.0,
        }
    }

    /// Nodal reaction term of a spatial species.
    pub fn reaction(&self, s: Species, a: &[f64], tau: &[f64], n: &[f64]) -> Vec<f64> {
        match s {
            Species::A => a.iter().map(|&x| self.lambda_a * x * (self.k_a - x)).collect(),
            Species::Tau => a
                .iter()
                .zip(tau)
                .map(|(&x, &t)| self.lambda_tau_a * x + self.lambda_tau * t * (self.k_tau - t))
                .collect(),
            Species::N => tau
                .iter()
                .zip(n)
                .map(|(&t, &y)| self.lambda_n_tau * t + self.lambda_n * y * (self.k_n - y))
                .collect(),
            Species::C => panic!("C has no nodal reaction"),
        }
    }

    /// Right-hand side of the cognitive equation given `int(N)`.
    pub fn cognitive_rate(&self, int_n: f64, c: f64) -> f64 {
        self.lambda_c_n * int_n + self.lambda_c * c * (self.k_c - c)
    }
}

/// Initial nodal fields plus the initial cognitive score.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialState {
    pub a: Vec<f64>,
    pub tau: Vec<f64>,
    pub n: Vec<f64>,
    pub c: f64,
}

impl InitialState {
    pub fn from_trajectory(traj: &Trajectory, index: usize) -> InitialState {
        InitialState {
            a: traj.a[index].clone(),
            tau: traj.tau[index].clone(),
            n: traj.n[index].clone(),
            c: traj.c.as_ref().map_or(0.0, |c| c[index]),
        }
    }

    pub fn constant(n_nodes: usize, a: f64, tau: f64, n: f64, c: f64) -> InitialState {
        InitialState {
            a: vec![a; n_nodes],
            tau: vec![tau; n_nodes],
            n: vec![n; n_nodes],
            c,
        }
    }
}

pub const DEFAULT_INNER_DT: f64 = 1e-3;

/// Integrates the system and samples it at `times` (the first entry is the
/// initial time).
pub fn simulate(
    params: &RDParams,
    basis: &EigenBasis,
    init: &InitialState,
    times: &[f64],
    inner_dt: f64,
) -> Result<Trajectory> {
    simulate_with_clearance(params, basis, init, times, inner_dt, &|_| (0.0, 0.0))
}

/// [`simulate`] with extra linear clearance `-d_A(t) A` and `-d_tau(t) tau`.
pub fn simulate_with_clearance(
    params: &RDParams,
    basis: &EigenBasis,
    init: &InitialState,
    times: &[f64],
    inner_dt: f64,
    clearance: &dyn Fn(f64) -> (f64, f64),
) -> Result<Trajectory> {
    params.validate()?;
    let nodes = basis.n_nodes();
    for (what, f) in [("initial A", &init.a), ("initial tau", &init.tau), ("initial N", &init.n)] {
        if f.len() != nodes {
            return Err(Error::DimensionMismatch {
                what,
                expected: nodes,
                got: f.len(),
            });
        }
        if f.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{what} must be nonnegative")));
        }
    }
    if times.is_empty() {
        return Err(Error::InvalidArgument("empty output time grid".into()));
    }
    check_times(times)?;
    let min_gap = times.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min);
    if !(inner_dt > 0.0) || inner_dt > min_gap * (1.0 + 1e-12) {
        return Err(Error::InvalidArgument(format!(
            "inner step {inner_dt} must be positive and at most the output spacing {min_gap}"
        )));
    }

    let lambda = basis.eigenvalues();
    let limit = 10.0 * params.max_k();
    let mut beta = [
        project_raw(&init.a, basis),
        project_raw(&init.tau, basis),
        project_raw(&init.n, basis),
    ];
    let mut c = init.c;
    let mut t = times[0];
    let mut out = Trajectory {
        patient_id: "sim".into(),
        times: times.to_vec(),
        a: Vec::with_capacity(times.len()),
        tau: Vec::with_capacity(times.len()),
        n: Vec::with_capacity(times.len()),
        c: Some(Vec::with_capacity(times.len())),
    };

    let nodal = |b: &DVector<f64>| -> Vec<f64> { (basis.modes() * b).data.into() };
    let mut u: [Vec<f64>; 3] = [nodal(&beta[0]), nodal(&beta[1]), nodal(&beta[2])];
    let record = |out: &mut Trajectory, u: &[Vec<f64>; 3], c: f64| {
        out.a.push(u[0].clone());
        out.tau.push(u[1].clone());
        out.n.push(u[2].clone());
        out.c.as_mut().unwrap().push(c);
    };
    record(&mut out, &u, c);

    for k in 1..times.len() {
        let span = times[k] - times[k - 1];
        let steps = ((span / inner_dt) - 1e-9).ceil().max(1.0) as usize;
        let h = span / steps as f64;
        for _ in 0..steps {
            let int_n = basis.integrate(&u[2]);
            let (d_a, d_tau) = clearance(t);
            let mut drive: Vec<DVector<f64>> = Species::FIELDS
                .iter()
                .map(|&s| project_raw(&params.reaction(s, &u[0], &u[1], &u[2]), basis))
                .collect();
            drive[0].axpy(-d_a, &beta[0], 1.0);
            drive[1].axpy(-d_tau, &beta[1], 1.0);
            for (i, s) in Species::FIELDS.iter().enumerate() {
                semi_implicit_update(&mut beta[i], h, params.alpha(*s), lambda, drive[i].as_slice());
            }
            c += h * params.cognitive_rate(int_n, c);
            t += h;
            for i in 0..3 {
                u[i] = nodal(&beta[i]);
            }
            let bad = u.iter().flatten().chain(std::iter::once(&c)).any(|x| !(x.abs() <= limit));
            if bad {
                return Err(Error::BlowUp { time: t });
            }
        }
        t = times[k];
        record(&mut out, &u, c);
    }
    Ok(out)
}

/// Seeded smooth initial state.
///
/// Each field is a random combination of the first `cutoff` modes (amplitude
/// decaying with mode index), mapped affinely onto a random subrange of
/// `[0.05, 0.95] K`. The affine map keeps the field in the span of those modes.
pub fn gen_initial_conditions(basis: &EigenBasis, seed: u64, cutoff: usize) -> Result<InitialState> {
    gen_initial_conditions_scaled(basis, seed, cutoff, &RDParams::default())
}

pub fn gen_initial_conditions_scaled(
    basis: &EigenBasis,
    seed: u64,
    cutoff: usize,
    params: &RDParams,
) -> Result<InitialState> {
    if cutoff == 0 || cutoff > basis.n_modes() {
        return Err(Error::TooManyModes {
            requested: cutoff,
            dimension: basis.n_modes(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = |k: f64| -> Vec<f64> {
        let coef = DVector::from_fn(cutoff, |i, _| (rng.gen::<f64>() * 2.0 - 1.0) / (1.0 + i as f64).sqrt());
        let raw: Vec<f64> = (basis.modes().columns(0, cutoff) * coef).data.into();
        let lo = rng.gen_range(0.05..0.9);
        let hi = rng.gen_range(lo..0.95);
        let (min, max) = raw.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        if max - min < 1e-12 * (1.0 + max.abs()) {
            vec![k * 0.5 * (lo + hi); raw.len()]
        } else {
            raw.iter().map(|x| k * (lo + (hi - lo) * (x - min) / (max - min))).collect()
        }
    };
    let a = field(params.k_a);
    let tau = field(params.k_tau);
    let n = field(params.k_n);
    let c = params.k_c * rng.gen_range(0.05..0.9);
    Ok(InitialState { a, tau, n, c })
}

/// Cohort in which patient `m` follows the shared dynamics on the rescaled
/// clock `s = gamma_m t`, sampled on the common grid `times`.
#[allow(clippy::too_many_arguments)]
pub fn make_cohort(
    params: &RDParams,
    basis: &EigenBasis,
    seeds: &[u64],
    timescales: &[f64],
    times: &[f64],
    inner_dt: f64,
    cutoff: usize,
) -> Result<Vec<Trajectory>> {
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("cohort needs at least one patient".into()));
    }
    if timescales.len() != seeds.len() {
        return Err(Error::DimensionMismatch {
            what: "timescales",
            expected: seeds.len(),
            got: timescales.len(),
        });
    }
    seeds
        .iter()
        .zip(timescales)
        .enumerate()
        .map(|(m, (&seed, &gamma))| {
            if !(gamma > 0.0) {
                return Err(Error::InvalidArgument(format!("timescale must be positive, got {gamma}")));
            }
            let init = gen_initial_conditions_scaled(basis, seed, cutoff, params)?;
            let scaled: Vec<f64> = times.iter().map(|t| gamma * t).collect();
            let mut traj = simulate(params, basis, &init, &scaled, inner_dt)?;
            traj.times = times.to_vec();
            traj.patient_id = format!("patient_{m:03}");
            Ok(traj)
        })
        .collect()
}
