//! Laplacian eigenbases for the generalized problem `K phi = lambda M phi`.
//!
//! Small problems (`n <= dense_limit`) are reduced to a standard symmetric
//! problem through the Cholesky factor of `M`. Larger ones use a block
//! shift-invert Krylov subspace followed by Rayleigh-Ritz with the original
//! pencil, which tolerates eigenvalue multiplicities up to the block size.

use std::collections::VecDeque;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::sparse::{CsrMatrix, EnvelopeCholesky};
use crate::error::{Error, Result};

/// Inner-product matrix of the basis.
#[derive(Debug, Clone, PartialEq)]
pub enum Weight {
    /// Graph domains: plain Euclidean inner product.
    Identity(usize),
    /// Mesh domains: the FEM mass matrix.
    Mass(CsrMatrix),
}

impl Weight {
    pub fn dim(&self) -> usize {
        match self {
            Weight::Identity(n) => *n,
            Weight::Mass(m) => m.nrows(),
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Weight::Identity(_) => x.to_vec(),
            Weight::Mass(m) => m.mul_vec(x),
        }
    }

    /// `x^T W y`.
    pub fn inner(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            Weight::Identity(_) => dot(x, y),
            Weight::Mass(m) => dot(x, &m.mul_vec(y)),
        }
    }

    pub fn norm(&self, x: &[f64]) -> f64 {
        self.inner(x, x).max(0.0).sqrt()
    }

    /// `W 1`, the quadrature weight of each node.
    pub fn lumped(&self) -> Vec<f64> {
        match self {
            Weight::Identity(n) => vec![1.0; *n],
            Weight::Mass(m) => m.row_sums(),
        }
    }

    pub fn to_csr(&self) -> CsrMatrix {
        match self {
            Weight::Identity(n) => CsrMatrix::identity(*n),
            Weight::Mass(m) => m.clone(),
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Weight::Identity(_))
    }
}

#[derive(Debug, Clone)]
pub struct EigenOptions {
    pub dense_limit: usize,
    pub block_size: usize,
    /// Largest Krylov subspace tried before giving up.
    pub max_subspace: usize,
    /// Relative residual bound `|K phi - lambda M phi| <= tol (1 + lambda)`.
    pub tol: f64,
    pub seed: u64,
}

impl Default for EigenOptions {
    fn default() -> Self {
        EigenOptions {
            dense_limit: 500,
            block_size: 4,
            max_subspace: 2000,
            tol: 1e-8,
            seed: 0x1e40,
        }
    }
}

/// Truncated Laplacian eigenbasis, modes stored as columns.
#[derive(Debug, Clone)]
pub struct EigenBasis {
    eigenvalues: Vec<f64>,
    modes: DMatrix<f64>,
    weighted_modes: DMatrix<f64>,
    weight: Weight,
    lumped: Vec<f64>,
    id: String,
}

impl EigenBasis {
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// `n x P` matrix of modes.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// `M Phi`, so that projection is `(M Phi)^T u`.
    pub fn weighted_modes(&self) -> &DMatrix<f64> {
        &self.weighted_modes
    }

    pub fn weight(&self) -> &Weight {
        &self.weight
    }

    pub fn n_modes(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.modes.nrows()
    }

    pub fn is_graph(&self) -> bool {
        self.weight.is_identity()
    }

    /// Content hash of the operators and the truncation count.
    pub fn id(&self) -> &str {
        &self.id
    }

    /// Domain integral of a nodal field: `1^T M u` on meshes, the node mean on graphs.
    pub fn integrate(&self, u: &[f64]) -> f64 {
        let total: f64 = self.lumped.iter().zip(u).map(|(w, x)| w * x).sum();
        match &self.weight {
            Weight::Identity(n) => total / *n as f64,
            Weight::Mass(_) => total,
        }
    }

    /// Quadrature weight `M 1` of each node.
    pub fn lumped(&self) -> &[f64] {
        &self.lumped
    }

    /// Same basis restricted to its first `p` modes.
    pub fn truncate(&self, p: usize) -> Result<EigenBasis> {
        if p == 0 || p > self.n_modes() {
            return Err(Error::TooManyModes {
                requested: p,
                dimension: self.n_modes(),
            });
        }
        let mut hasher = Sha256::new();
        hasher.update(self.id.as_bytes());
        hasher.update(b"truncate");
        hasher.update((p as u64).to_le_bytes());
        // A basis computed directly with `p` modes hashes differently from a
        // truncation; callers that need a stable id use `compute_eigenbasis`.
        Ok(EigenBasis {
            eigenvalues: self.eigenvalues[..p].to_vec(),
            modes: self.modes.columns(0, p).into_owned(),
            weighted_modes: self.weighted_modes.columns(0, p).into_owned(),
            weight: self.weight.clone(),
            lumped: self.lumped.clone(),
            id: hex::encode(&hasher.finalize()[..16]),
        })
    }

    /// Largest `|phi_i^T M phi_j - delta_ij|`.
    pub fn orthonormality_defect(&self) -> f64 {
        let g = self.modes.transpose() * &self.weighted_modes;
        let mut worst: f64 = 0.0;
        for i in 0..g.nrows() {
            for j in 0..g.ncols() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }
}

/// Computes the `p` smallest eigenpairs of `K phi = lambda W phi`.
pub fn compute_eigenbasis(k: &CsrMatrix, weight: &Weight, p: usize) -> Result<EigenBasis> {
    compute_eigenbasis_with(k, weight, p, &EigenOptions::default())
}

pub fn compute_eigenbasis_with(k: &CsrMatrix, weight: &Weight, p: usize, opts: &EigenOptions) -> Result<EigenBasis> {
    let n = k.nrows();
    if k.ncols() != n || weight.dim() != n {
        return Err(Error::DimensionMismatch {
            what: "weight matrix",
            expected: n,
            got: weight.dim(),
        });
    }
    if p == 0 || p > n {
        return Err(Error::TooManyModes {
            requested: p,
            dimension: n,
        });
    }

    let (values, mut vectors) = if n <= opts.dense_limit {
        let m = match weight {
            Weight::Identity(_) => None,
            Weight::Mass(m) => Some(m.to_dense()),
        };
        let (vals, vecs) = dense_generalized(&k.to_dense(), m.as_ref())?;
        (vals[..p].to_vec(), vecs.columns(0, p).into_owned())
    } else {
        krylov_eigs(k, weight, p, opts)?
    };

    for mut col in vectors.column_iter_mut() {
        let mut best = 0;
        for i in 0..col.len() {
            if col[i].abs() > col[best].abs() {
                best = i;
            }
        }
        if col[best] < 0.0 {
            col.neg_mut();
        }
    }

    let weighted = match weight {
        Weight::Identity(_) => vectors.clone(),
        Weight::Mass(m) => {
            let mut out = DMatrix::zeros(n, p);
            for j in 0..p {
                let col: Vec<f64> = vectors.column(j).iter().copied().collect();
                out.set_column(j, &nalgebra::DVector::from_vec(m.mul_vec(&col)));
            }
            out
        }
    };

    for j in 0..p {
        let phi: Vec<f64> = vectors.column(j).iter().copied().collect();
        let kphi = k.mul_vec(&phi);
        let res = kphi
            .iter()
            .zip(weighted.column(j).iter())
            .map(|(a, b)| (a - values[j] * b).powi(2))
            .sum::<f64>()
            .sqrt();
        if !(res <= opts.tol * (1.0 + values[j].abs())) {
            return Err(Error::NoConvergence(format!(
                "mode {j}: residual {res:e} exceeds {:e}",
                opts.tol * (1.0 + values[j].abs())
            )));
        }
    }

    // K is semidefinite; round-off can leave the null eigenvalue slightly
    // negative, which would make the implicit diffusion step amplify.
    let values: Vec<f64> = values.into_iter().map(|v| v.max(0.0)).collect();
    let id = operator_hash(k, weight, p);
    Ok(EigenBasis {
        eigenvalues: values,
        modes: vectors,
        weighted_modes: weighted,
        lumped: weight.lumped(),
        weight: weight.clone(),
        id,
    })
}

fn operator_hash(k: &CsrMatrix, weight: &Weight, p: usize) -> String {
    let mut hasher = Sha256::new();
    hasher.update(if weight.is_identity() { b"graph" } else { b"mesh_" });
    hasher.update((k.nrows() as u64).to_le_bytes());
    for (i, j, v) in k.iter() {
        hasher.update((i as u64).to_le_bytes());
        hasher.update((j as u64).to_le_bytes());
        hasher.update(v.to_bits().to_le_bytes());
    }
    if let Weight::Mass(m) = weight {
        for (i, j, v) in m.iter() {
            hasher.update((i as u64).to_le_bytes());
            hasher.update((j as u64).to_le_bytes());
            hasher.update(v.to_bits().to_le_bytes());
        }
    }
    hasher.update((p as u64).to_le_bytes());
    hex::encode(&hasher.finalize()[..16])
}

/// All eigenpairs of the dense pencil `(k, m)` (`m = None` means identity),
/// sorted ascending.
pub fn dense_generalized(k: &DMatrix<f64>, m: Option<&DMatrix<f64>>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    let (c, chol) = match m {
        None => (k.clone(), None),
        Some(m) => {
            let chol = nalgebra::Cholesky::new(m.clone()).ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
            let l = chol.l();
            let x = l
                .solve_lower_triangular(k)
                .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
            let c = l
                .solve_lower_triangular(&x.transpose())
                .ok_or(Error::NotPositiveDefinite { pivot: 0 })?;
            (c, Some(l))
        }
    };
    let c = (&c + c.transpose()) * 0.5;
    let eig = nalgebra::SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[a]
            .partial_cmp(&eig.eigenvalues[b])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut y = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        y.set_column(dst, &eig.eigenvectors.column(src));
    }
    let vectors = match chol {
        None => y,
        Some(l) => l
            .tr_solve_lower_triangular(&y)
            .ok_or(Error::NotPositiveDefinite { pivot: 0 })?,
    };
    Ok((values, vectors))
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn krylov_eigs(k: &CsrMatrix, weight: &Weight, p: usize, opts: &EigenOptions) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = k.nrows();
    let kdiag = k.diagonal();
    let wcsr = weight.to_csr();
    let wdiag = wcsr.diagonal();
    let ratio = kdiag
        .iter()
        .zip(&wdiag)
        .map(|(a, b)| a / b)
        .fold(0.0_f64, f64::max);
    let shift = (1e-4 * ratio).max(1e-12);
    let factor = EnvelopeCholesky::new(&k.add_scaled(shift, &wcsr))?;
    let op = |x: &[f64]| {
        let mut y = weight.apply(x);
        factor.solve_in_place(&mut y);
        y
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let b = opts.block_size.clamp(1, n);
    let cap = opts.max_subspace.min(n);
    let mut target = (2 * p + 2 * b).max(p + 30).min(cap);

    let mut q: Vec<Vec<f64>> = Vec::new();
    let mut wq: Vec<Vec<f64>> = Vec::new();
    let mut kq: Vec<Vec<f64>> = Vec::new();
    let mut frontier: VecDeque<Vec<f64>> = (0..b).map(|_| random_vec(&mut rng, n)).collect();
    let mut added: Vec<usize> = Vec::new();

    loop {
        while q.len() < target && q.len() < n {
            if frontier.is_empty() {
                frontier = added.drain(..).map(|i| op(&q[i])).collect();
                while frontier.len() < b {
                    frontier.push_back(random_vec(&mut rng, n));
                }
            }
            let mut v = frontier.pop_front().unwrap();
            for _attempt in 0..4 {
                let before = weight.norm(&v);
                for _pass in 0..2 {
                    for (qi, wqi) in q.iter().zip(&wq) {
                        let c = dot(&v, wqi);
                        for (vj, qj) in v.iter_mut().zip(qi) {
                            *vj -= c * qj;
                        }
                    }
                }
                let wv = weight.apply(&v);
                let norm = dot(&v, &wv).max(0.0).sqrt();
                if norm > 1e-10 * before && norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                    let wv: Vec<f64> = wv.iter().map(|x| x / norm).collect();
                    kq.push(k.mul_vec(&v));
                    q.push(v);
                    wq.push(wv);
                    added.push(q.len() - 1);
                    break;
                }
                v = random_vec(&mut rng, n);
            }
        }

        let m = q.len();
        let mut kp = DMatrix::zeros(m, m);
        let mut mp = DMatrix::zeros(m, m);
        for i in 0..m {
            for j in 0..=i {
                let kij = 0.5 * (dot(&q[i], &kq[j]) + dot(&q[j], &kq[i]));
                let mij = 0.5 * (dot(&q[i], &wq[j]) + dot(&q[j], &wq[i]));
                kp[(i, j)] = kij;
                kp[(j, i)] = kij;
                mp[(i, j)] = mij;
                mp[(j, i)] = mij;
            }
        }
        let (vals, y) = dense_generalized(&kp, Some(&mp))?;

        let mut vectors = DMatrix::zeros(n, p);
        let mut converged = true;
        for i in 0..p {
            let mut x = vec![0.0; n];
            let mut kx = vec![0.0; n];
            let mut wx = vec![0.0; n];
            for j in 0..m {
                let c = y[(j, i)];
                for r in 0..n {
                    x[r] += c * q[j][r];
                    kx[r] += c * kq[j][r];
                    wx[r] += c * wq[j][r];
                }
            }
            let res = kx
                .iter()
                .zip(&wx)
                .map(|(a, b)| (a - vals[i] * b).powi(2))
                .sum::<f64>()
                .sqrt();
            if res > 0.05 * opts.tol * (1.0 + vals[i].abs()) {
                converged = false;
            }
            vectors.set_column(i, &nalgebra::DVector::from_vec(x));
        }
        if converged || m >= n {
            return Ok((vals[..p].to_vec(), vectors));
        }
        if target >= cap {
            return Err(Error::NoConvergence(format!(
                "subspace of dimension {m} did not resolve {p} modes"
            )));
        }
        target = (target + (p / 2).max(4 * b)).min(cap);
    }
}

fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen::<f64>() - 0.5).collect()
}
