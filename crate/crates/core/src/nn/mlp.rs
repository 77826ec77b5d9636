use nalgebra::{DMatrix, DMatrixView, DMatrixViewMut};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => z.apply(|v| *v = v.max(0.0)),
            Activation::Sigmoid => z.apply(|v| *v = sigmoid(*v)),
        }
    }

    /// Multiplies `d` by the derivative, expressed through the activation output `y`.
    fn backprop(self, y: &DMatrix<f64>, d: &mut DMatrix<f64>) {
        match self {
            Activation::Linear => {}
            Activation::Relu => d.zip_apply(y, |g, y| {
                if y <= 0.0 {
                    *g = 0.0
                }
            }),
            Activation::Sigmoid => d.zip_apply(y, |g, y| *g *= y * (1.0 - y)),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network with all parameters in one flat vector.
///
/// Layer `l` stores its `out x in` weight matrix (column-major) followed by
/// its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`Mlp::backward`].
#[derive(Debug, Clone)]
pub struct MlpTape {
    acts: Vec<DMatrix<f64>>,
}

impl MlpTape {
    pub fn output(&self) -> &DMatrix<f64> {
        self.acts.last().unwrap()
    }

    pub fn batch(&self) -> usize {
        self.acts[0].ncols()
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[1] * w[0] + w[1]).sum()
}

impl Mlp {
    /// He-uniform weights `U(-sqrt(6/fan_in), sqrt(6/fan_in))`, zero biases.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, seed: u64) -> Result<Self> {
        validate_sizes(sizes)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(sizes));
        for w in sizes.windows(2) {
            let bound = (6.0 / w[0] as f64).sqrt();
            params.extend((0..w[0] * w[1]).map(|_| rng.gen_range(-bound..bound)));
            params.extend(std::iter::repeat(0.0).take(w[1]));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        })
    }

    pub fn from_params(sizes: &[usize], hidden: Activation, output: Activation, params: Vec<f64>) -> Result<Self> {
        validate_sizes(sizes)?;
        if params.len() != param_count(sizes) {
            return Err(Error::DimensionMismatch {
                what: "network parameters",
                expected: param_count(sizes),
                got: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite network parameter".into()));
        }
        Ok(Mlp {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params,
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.sizes.len() - 1
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn offsets(&self, l: usize) -> (usize, usize, usize, usize) {
        let off: usize = param_count(&self.sizes[..=l]);
        let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
        (off, fan_out, fan_in, off + fan_out * fan_in)
    }

    pub fn weight(&self, l: usize) -> DMatrixView<'_, f64> {
        let (off, rows, cols, _) = self.offsets(l);
        DMatrixView::from_slice(&self.params[off..off + rows * cols], rows, cols)
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        let (_, rows, _, boff) = self.offsets(l);
        &self.params[boff..boff + rows]
    }

    pub fn weight_mut(&mut self, l: usize) -> DMatrixViewMut<'_, f64> {
        let (off, rows, cols, _) = self.offsets(l);
        DMatrixViewMut::from_slice(&mut self.params[off..off + rows * cols], rows, cols)
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let (_, rows, _, boff) = self.offsets(l);
        &mut self.params[boff..boff + rows]
    }

    fn activation(&self, l: usize) -> Activation {
        if l + 1 == self.n_layers() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &DMatrix<f64>) -> Result<()> {
        if x.nrows() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: x.nrows(),
            });
        }
        Ok(())
    }

    /// Evaluates a batch stored as columns of `x`.
    pub fn forward(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in 0..self.n_layers() {
            a = self.layer(l, &a);
        }
        Ok(a)
    }

    pub fn forward_vec(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.forward(&DMatrix::from_column_slice(x.len(), 1, x))?;
        Ok(y.data.into())
    }

    fn layer(&self, l: usize, a: &DMatrix<f64>) -> DMatrix<f64> {
        let w = self.weight(l);
        let b = self.bias(l);
        let mut z = DMatrix::from_fn(w.nrows(), a.ncols(), |i, _| b[i]);
        z.gemm(1.0, &w, a, 1.0);
        self.activation(l).apply(&mut z);
        z
    }

    pub fn forward_tape(&self, x: DMatrix<f64>) -> Result<MlpTape> {
        self.check_input(&x)?;
        let mut acts = Vec::with_capacity(self.n_layers() + 1);
        acts.push(x);
        for l in 0..self.n_layers() {
            let next = self.layer(l, acts.last().unwrap());
            acts.push(next);
        }
        Ok(MlpTape { acts })
    }

    /// Reverse pass for the adjoint `dy` of the taped outputs. Parameter
    /// gradients are accumulated into `grad` when given; the input adjoint is
    /// returned.
    pub fn backward(&self, tape: &MlpTape, dy: &DMatrix<f64>, mut grad: Option<&mut [f64]>) -> Result<DMatrix<f64>> {
        let out = tape.output();
        if dy.shape() != out.shape() {
            return Err(Error::DimensionMismatch {
                what: "output adjoint",
                expected: out.nrows() * out.ncols(),
                got: dy.nrows() * dy.ncols(),
            });
        }
        if let Some(g) = grad.as_deref() {
            if g.len() != self.n_params() {
                return Err(Error::DimensionMismatch {
                    what: "gradient buffer",
                    expected: self.n_params(),
                    got: g.len(),
                });
            }
        }
        let mut delta = dy.clone();
        for l in (0..self.n_layers()).rev() {
            self.activation(l).backprop(&tape.acts[l + 1], &mut delta);
            let input = &tape.acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (off, rows, cols, boff) = self.offsets(l);
                let mut gw = DMatrixViewMut::from_slice(&mut g[off..off + rows * cols], rows, cols);
                gw.gemm(1.0, &delta, &input.transpose(), 1.0);
                for (gb, row) in g[boff..boff + rows].iter_mut().zip(delta.row_iter()) {
                    *gb += row.sum();
                }
            }
            delta = self.weight(l).tr_mul(&delta);
        }
        Ok(delta)
    }

    /// Parameter gradient of `sum(dy .* f(x))` over the batch.
    pub fn grad(&self, x: &DMatrix<f64>, dy: &DMatrix<f64>) -> Result<Vec<f64>> {
        let tape = self.forward_tape(x.clone())?;
        let mut g = vec![0.0; self.n_params()];
        self.backward(&tape, dy, Some(&mut g))?;
        Ok(g)
    }

    /// Jacobian `d f / d x` at a single point, one row per output.
    pub fn jacobian(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        let tape = self.forward_tape(DMatrix::from_column_slice(x.len(), 1, x))?;
        let m = self.output_dim();
        let mut jac = DMatrix::zeros(m, self.input_dim());
        for i in 0..m {
            let mut dy = DMatrix::zeros(m, 1);
            dy[(i, 0)] = 1.0;
            let dx = self.backward(&tape, &dy, None)?;
            jac.set_row(i, &dx.column(0).transpose());
        }
        Ok(jac)
    }
}

fn validate_sizes(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 2 || sizes.contains(&0) {
        return Err(Error::InvalidArgument(format!("invalid layer sizes {sizes:?}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    /// Central finite differences of `sum(dy .* f(x))` with respect to every parameter.
    pub(crate) fn check_param_grads(net: &Mlp, x: &DMatrix<f64>, dy: &DMatrix<f64>) -> f64 {
        let g = net.grad(x, dy).unwrap();
        let h = 1e-5;
        let mut worst: f64 = 0.0;
        let mut probe = net.clone();
        for k in 0..net.n_params() {
            let p0 = probe.params[k];
            probe.params[k] = p0 + h;
            let fp = probe.forward(x).unwrap().component_mul(dy).sum();
            probe.params[k] = p0 - h;
            let fm = probe.forward(x).unwrap().component_mul(dy).sum();
            probe.params[k] = p0;
            let fd = (fp - fm) / (2.0 * h);
            // Kinks of relu make finite differences meaningless near zero pre-activations.
            if (fd - g[k]).abs() > 1e-7 {
                worst = worst.max(rel_err(fd, g[k]));
            }
        }
        worst
    }

    #[test]
    fn identity_layer_passes_input() {
        let mut net = Mlp::new(&[3, 3], Activation::Relu, Activation::Linear, 0).unwrap();
        net.params_mut().fill(0.0);
        for i in 0..3 {
            net.weight_mut(0)[(i, i)] = 1.0;
        }
        assert_eq!(net.forward_vec(&[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);
    }

    #[test]
    fn relu_kills_negative_inputs() {
        let mut net = Mlp::new(&[2, 4, 1], Activation::Relu, Activation::Linear, 1).unwrap();
        for w in net.weight_mut(0).iter_mut() {
            *w = w.abs();
        }
        let tape = net.forward_tape(DMatrix::from_column_slice(2, 1, &[-1.0, -3.0])).unwrap();
        assert!(tape.acts[1].iter().all(|&a| a == 0.0));
    }

    #[test]
    fn matches_scalar_hand_evaluation() {
        let net = Mlp::new(&[2, 3, 1], Activation::Relu, Activation::Linear, 42).unwrap();
        let x = [0.3, -0.7];
        let p = net.params();
        // W1 is 3x2 column-major, then b1 (3), W2 1x3, b2 (1).
        let mut y = p[3 * 2 + 3 + 3];
        for i in 0..3 {
            let z = p[i] * x[0] + p[3 + i] * x[1] + p[6 + i];
            y += p[9 + i] * z.max(0.0);
        }
        let out = net.forward_vec(&x).unwrap()[0];
        assert!((out - y).abs() < 1e-15, "{out} vs {y}");
    }

    #[test]
    fn linear_unit_gradient() {
        let net = Mlp::from_params(&[1, 1], Activation::Relu, Activation::Linear, vec![0.4, -0.2]).unwrap();
        let g = net
            .grad(&DMatrix::from_element(1, 1, 1.0), &DMatrix::from_element(1, 1, 1.0))
            .unwrap();
        assert_eq!(g, vec![1.0, 1.0]);
    }

    #[test]
    fn zero_adjoint_gives_zero_gradient() {
        let net = Mlp::new(&[3, 5, 2], Activation::Relu, Activation::Sigmoid, 2).unwrap();
        let x = DMatrix::from_fn(3, 4, |i, j| (i as f64 - j as f64) * 0.3);
        let g = net.grad(&x, &DMatrix::zeros(2, 4)).unwrap();
        assert!(g.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn gradients_match_finite_differences() {
        for (sizes, out) in [
            (vec![4, 6, 6, 3], Activation::Linear),
            (vec![1, 8, 8, 1], Activation::Sigmoid),
        ] {
            let net = Mlp::new(&sizes, Activation::Relu, out, 9).unwrap();
            let x = DMatrix::from_fn(sizes[0], 5, |i, j| ((i * 7 + j * 3) % 11) as f64 / 5.0 - 1.0);
            let dy = DMatrix::from_fn(*sizes.last().unwrap(), 5, |i, j| 1.0 + (i + j) as f64 * 0.1);
            assert!(check_param_grads(&net, &x, &dy) < 1e-5);
        }
    }

    #[test]
    fn input_jacobian_matches_finite_differences() {
        let net = Mlp::new(&[3, 10, 10, 2], Activation::Relu, Activation::Linear, 5).unwrap();
        let x = [0.2, -0.4, 0.9];
        let jac = net.jacobian(&x).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let fp = net.forward_vec(&xp).unwrap();
            let fm = net.forward_vec(&xm).unwrap();
            for i in 0..2 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[(i, j)]).abs() < 1e-6 * (1.0 + fd.abs()));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::new(&[3, 2], Activation::Relu, Activation::Linear, 0).unwrap();
        assert!(net.forward_vec(&[1.0]).is_err());
        let tape = net.forward_tape(DMatrix::zeros(3, 2)).unwrap();
        assert!(net.backward(&tape, &DMatrix::zeros(2, 1), None).is_err());
        assert!(Mlp::from_params(&[3, 2], Activation::Relu, Activation::Linear, vec![0.0; 3]).is_err());
        assert!(Mlp::new(&[3], Activation::Relu, Activation::Linear, 0).is_err());
    }

    #[test]
    fn initialization_is_seeded() {
        let a = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Linear, 11).unwrap();
        let b = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Linear, 11).unwrap();
        let c = Mlp::new(&[4, 8, 2], Activation::Relu, Activation::Linear, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.params(), c.params());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn sigmoid_output_stays_inside_unit_interval(t in -1e3f64..1e3, seed in 0u64..50) {
            let net = Mlp::new(&[1, 16, 16, 1], Activation::Relu, Activation::Sigmoid, seed).unwrap();
            let y = net.forward_vec(&[t]).unwrap()[0];
            prop_assert!(y >= 0.0 && y <= 1.0);
            if t.abs() < 10.0 {
                prop_assert!(y > 0.0 && y < 1.0);
            }
        }
    }
}
