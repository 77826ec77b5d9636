//! The learned operator: one spectral network per species plus learnable
//! diffusivities, and the coupled semi-implicit rollout built from them.

mod rollout;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, MlpTape};
use crate::synth::Species;

pub use rollout::{coupled_backward, coupled_forward, predict, CoupledGrads, CoupledTape, Doses, PatientTimeScale};
pub(crate) use rollout::tape_to_trajectory;

/// Network with fixed affine input and output scaling:
/// `f(x) = out_shift + out_scale .* mlp((x - in_shift) ./ in_scale)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralNet {
    pub mlp: Mlp,
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl SpectralNet {
    pub fn unscaled(mlp: Mlp) -> Self {
        let (i, o) = (mlp.input_dim(), mlp.output_dim());
        SpectralNet {
            mlp,
            in_shift: vec![0.0; i],
            in_scale: vec![1.0; i],
            out_shift: vec![0.0; o],
            out_scale: vec![1.0; o],
        }
    }

    pub fn input_dim(&self) -> usize {
        self.mlp.input_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.mlp.output_dim()
    }

    fn normalize(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "operator input",
                expected: self.input_dim(),
                got: x.nrows(),
            });
        }
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.in_shift[i]) / self.in_scale[i]
        }))
    }

    fn denormalize(&self, y: &mut DMatrix<f64>) {
        for j in 0..y.ncols() {
            for i in 0..y.nrows() {
                y[(i, j)] = self.out_shift[i] + self.out_scale[i] * y[(i, j)];
            }
        }
    }

    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut y = self.mlp.forward(&self.normalize(x)?)?;
        self.denormalize(&mut y);
        Ok(y)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?.data.into())
    }

    /// Forward pass keeping the activations; returns the scaled output.
    pub fn forward_tape(&self, x: &DMatrix<f64>) -> Result<(DMatrix<f64>, MlpTape)> {
        let tape = self.mlp.forward_tape(self.normalize(x)?)?;
        let mut y = tape.output().clone();
        self.denormalize(&mut y);
        Ok((y, tape))
    }

    /// Input adjoint for the output adjoint `dy`; accumulates parameter
    /// gradients of the inner network into `grad` when given.
    pub fn backward(&self, tape: &MlpTape, dy: &DMatrix<f64>, grad: Option<&mut [f64]>) -> Result<DMatrix<f64>> {
        let mut d = dy.clone();
        for j in 0..d.ncols() {
            for i in 0..d.nrows() {
                d[(i, j)] *= self.out_scale[i];
            }
        }
        let mut dx = self.mlp.backward(tape, &d, grad)?;
        for j in 0..dx.ncols() {
            for i in 0..dx.nrows() {
                dx[(i, j)] /= self.in_scale[i];
            }
        }
        Ok(dx)
    }

    /// `d f / d x` at `x`, one row per output.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let xn = self.normalize(&DMatrix::from_column_slice(x.len(), 1, x))?;
        let mut jac = self.mlp.jacobian(xn.as_slice())?;
        for i in 0..jac.nrows() {
            for j in 0..jac.ncols() {
                jac[(i, j)] *= self.out_scale[i] / self.in_scale[j];
            }
        }
        Ok(jac)
    }

    /// Fixes the scaling from sample inputs and targets (one column each):
    /// per-coordinate mean and standard deviation, with small deviations
    /// floored relative to the largest one.
    pub fn fit_scaling(&mut self, inputs: &DMatrix<f64>, targets: &DMatrix<f64>) {
        let (s, c) = moments(inputs);
        self.in_shift = s;
        self.in_scale = c;
        let (s, c) = moments(targets);
        self.out_shift = s;
        self.out_scale = c;
    }
}

fn moments(x: &DMatrix<f64>) -> (Vec<f64>, Vec<f64>) {
    let n = x.ncols().max(1) as f64;
    let mean: Vec<f64> = x.row_iter().map(|r| r.sum() / n).collect();
    let std: Vec<f64> = x
        .row_iter()
        .zip(&mean)
        .map(|(r, m)| (r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    let top = std.iter().fold(0.0f64, |a, &b| a.max(b));
    let floor = (1e-3 * top).max(1e-12);
    (mean, std.into_iter().map(|s| s.max(floor)).collect())
}

/// Hidden layer widths of the species operators and the cognitive network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Architecture {
    pub g_hidden: Vec<usize>,
    pub n4_hidden: Vec<usize>,
}

impl Architecture {
    /// Two hidden layers of 128, used with graph bases.
    pub fn graph() -> Self {
        Architecture {
            g_hidden: vec![128, 128],
            n4_hidden: vec![128, 128],
        }
    }

    /// Three hidden layers of 100, used with mesh bases.
    pub fn mesh() -> Self {
        Architecture {
            g_hidden: vec![100, 100, 100],
            n4_hidden: vec![100, 100, 100],
        }
    }

    pub fn for_basis(basis: &EigenBasis) -> Self {
        if basis.is_graph() {
            Self::graph()
        } else {
            Self::mesh()
        }
    }

    /// Layer sizes of the network for `s` at `p` modes.
    pub fn sizes(&self, s: Species, p: usize) -> Vec<usize> {
        let (input, hidden, output) = match s {
            Species::C => (p + 1, &self.n4_hidden, 1),
            _ => ((s.index() + 1) * p, &self.g_hidden, p),
        };
        std::iter::once(input)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(output))
            .collect()
    }
}

/// Learned A / tau / N / C dynamics in a fixed eigenbasis.
///
/// `nets[k]` is `G1`, `G2`, `G3` for `k = 0, 1, 2` and the cognitive network
/// for `k = 3`; `None` until that stage has been trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LenoModel {
    pub p: usize,
    pub basis_id: String,
    pub arch: Architecture,
    pub nets: [Option<SpectralNet>; 4],
    pub log_alpha: [f64; 3],
}

impl LenoModel {
    pub fn new(basis: &EigenBasis, arch: Architecture) -> Self {
        LenoModel {
            p: basis.n_modes(),
            basis_id: basis.id().to_string(),
            arch,
            nets: [None, None, None, None],
            log_alpha: [0.0; 3],
        }
    }

    pub fn alpha(&self, s: Species) -> f64 {
        match s {
            Species::C => 0.0,
            _ => self.log_alpha[s.index()].exp(),
        }
    }

    pub fn is_trained(&self, s: Species) -> bool {
        self.nets[s.index()].is_some()
    }

    pub fn net(&self, s: Species) -> Result<&SpectralNet> {
        self.nets[s.index()]
            .as_ref()
            .ok_or_else(|| Error::StageOrder(format!("the {s} operator has not been trained")))
    }

    pub fn check_basis(&self, basis: &EigenBasis) -> Result<()> {
        if basis.id() != self.basis_id || basis.n_modes() != self.p {
            return Err(Error::BasisMismatch {
                expected: self.basis_id.clone(),
                got: basis.id().to_string(),
            });
        }
        Ok(())
    }

    /// Every species strictly upstream of `s` must already be trained.
    pub fn require_upstream(&self, s: Species) -> Result<()> {
        for up in Species::ALL.iter().take(s.index()) {
            if !self.is_trained(*up) {
                return Err(Error::StageOrder(format!(
                    "training {s} requires the {up} operator to be trained first"
                )));
            }
        }
        Ok(())
    }

    /// Nodal reaction term `sum_i G_i(beta) phi_i` of a spatial species.
    pub fn nodal_reaction(&self, s: Species, input: &[f64], basis: &EigenBasis) -> Result<Vec<f64>> {
        let g = self.net(s)?.forward_vec(input)?;
        Ok(crate::spectral::reconstruct_raw(&nalgebra::DVector::from_vec(g), basis))
    }
}

/// Fresh network for species `s` with He-uniform weights.
pub(crate) fn init_net(arch: &Architecture, s: Species, p: usize, seed: u64) -> Result<SpectralNet> {
    let sizes = arch.sizes(s, p);
    let mlp = Mlp::new(&sizes, Activation::Relu, Activation::Linear, seed)?;
    Ok(SpectralNet::unscaled(mlp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn architecture_sizes() {
        let g = Architecture::graph();
        assert_eq!(g.sizes(Species::A, 48), vec![48, 128, 128, 48]);
        assert_eq!(g.sizes(Species::Tau, 48), vec![96, 128, 128, 48]);
        assert_eq!(g.sizes(Species::N, 48), vec![144, 128, 128, 48]);
        assert_eq!(g.sizes(Species::C, 48), vec![49, 128, 128, 1]);
        let m = Architecture::mesh();
        assert_eq!(m.sizes(Species::A, 64), vec![64, 100, 100, 100, 64]);
        assert_eq!(m.sizes(Species::N, 64), vec![192, 100, 100, 100, 64]);
    }

    #[test]
    fn scaled_jacobian_matches_finite_differences() {
        let mut net = init_net(&Architecture::graph(), Species::Tau, 3, 4).unwrap();
        net.in_shift = vec![0.1, -0.2, 0.3, 0.0, 0.5, 1.0];
        net.in_scale = vec![2.0, 0.5, 1.0, 3.0, 0.25, 1.5];
        net.out_shift = vec![1.0, 2.0, 3.0];
        net.out_scale = vec![0.1, 10.0, 1.0];
        let x = [0.3, 0.1, -0.4, 0.8, 0.2, 0.6];
        let jac = net.jacobian(&x).unwrap();
        let h = 1e-6;
        for j in 0..6 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let (fp, fm) = (net.forward_vec(&xp).unwrap(), net.forward_vec(&xm).unwrap());
            for i in 0..3 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[(i, j)]).abs() < 1e-5 * (1.0 + fd.abs()), "{i},{j}: {fd} vs {}", jac[(i, j)]);
            }
        }
    }

    #[test]
    fn moments_floor_small_deviations() {
        let x = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 5.0, 5.0, 5.0]);
        let (m, s) = moments(&x);
        assert_eq!(m, vec![2.0, 5.0]);
        assert!((s[0] - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        assert!((s[1] - 1e-3 * s[0]).abs() < 1e-18);
    }
}
