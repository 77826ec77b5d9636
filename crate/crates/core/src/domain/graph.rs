//! Weighted undirected graphs and their combinatorial Laplacian `L = D - W`.
//!
//! File format: a header line `n`, then `n` lines of `n` whitespace-separated
//! nonnegative weights. `#` starts a comment.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const SYMMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct GraphDomain {
    weights: DMatrix<f64>,
    laplacian: DMatrix<f64>,
    region_labels: Option<Vec<String>>,
}

/// Validates `w` and forms `L = D - W`.
pub fn build_graph_laplacian(w: DMatrix<f64>) -> Result<GraphDomain> {
    GraphDomain::new(w, false)
}

impl GraphDomain {
    /// With `normalize`, the weights are rescaled to `D^{-1/2} W D^{-1/2}` before
    /// the Laplacian is formed.
    pub fn new(mut w: DMatrix<f64>, normalize: bool) -> Result<Self> {
        let (rows, cols) = w.shape();
        if rows != cols {
            return Err(Error::NotSquare { rows, cols });
        }
        let n = rows;
        for i in 0..n {
            for j in 0..n {
                let v = w[(i, j)];
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::NegativeWeight { i, j, value: v });
                }
                let diff = (v - w[(j, i)]).abs();
                if diff > SYMMETRY_TOL {
                    return Err(Error::Asymmetric { i, j, diff });
                }
            }
        }
        for i in 0..n {
            w[(i, i)] = 0.0;
            for j in 0..i {
                let avg = 0.5 * (w[(i, j)] + w[(j, i)]);
                w[(i, j)] = avg;
                w[(j, i)] = avg;
            }
        }
        if normalize {
            let d: Vec<f64> = (0..n).map(|i| w.row(i).sum()).collect();
            for i in 0..n {
                for j in 0..n {
                    if d[i] > 0.0 && d[j] > 0.0 {
                        w[(i, j)] /= (d[i] * d[j]).sqrt();
                    }
                }
            }
        }
        let mut laplacian = -w.clone();
        for i in 0..n {
            laplacian[(i, i)] = w.row(i).sum();
        }
        Ok(GraphDomain {
            weights: w,
            laplacian,
            region_labels: None,
        })
    }

    pub fn with_labels(mut self, labels: Vec<String>) -> Result<Self> {
        if labels.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch {
                what: "region labels",
                expected: self.n_nodes(),
                got: labels.len(),
            });
        }
        self.region_labels = Some(labels);
        Ok(self)
    }

    pub fn n_nodes(&self) -> usize {
        self.weights.nrows()
    }

    pub fn weights(&self) -> &DMatrix<f64> {
        &self.weights
    }

    pub fn laplacian(&self) -> &DMatrix<f64> {
        &self.laplacian
    }

    pub fn region_labels(&self) -> Option<&[String]> {
        self.region_labels.as_deref()
    }

    /// Number of connected components of the positive-weight pattern.
    pub fn components(&self) -> usize {
        let n = self.n_nodes();
        let mut seen = vec![false; n];
        let mut count = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            count += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(v) = stack.pop() {
                for u in 0..n {
                    if !seen[u] && self.weights[(v, u)] > 0.0 {
                        seen[u] = true;
                        stack.push(u);
                    }
                }
            }
        }
        count
    }

    /// Unweighted shortest-path (hop) distances between all node pairs;
    /// unreachable pairs are `usize::MAX`.
    pub fn hop_distances(&self) -> Vec<Vec<usize>> {
        let n = self.n_nodes();
        (0..n)
            .map(|s| {
                let mut dist = vec![usize::MAX; n];
                dist[s] = 0;
                let mut queue = std::collections::VecDeque::from([s]);
                while let Some(v) = queue.pop_front() {
                    for u in 0..n {
                        if dist[u] == usize::MAX && self.weights[(v, u)] > 0.0 {
                            dist[u] = dist[v] + 1;
                            queue.push_back(u);
                        }
                    }
                }
                dist
            })
            .collect()
    }

    /// Path graph on `n` nodes with unit weights.
    pub fn path(n: usize) -> Self {
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n.saturating_sub(1) {
            w[(i, i + 1)] = 1.0;
            w[(i + 1, i)] = 1.0;
        }
        build_graph_laplacian(w).expect("path graph is valid")
    }

    /// Random geometric graph: `n` points uniform in the unit cube, joined when
    /// closer than `radius` with Gaussian weight `exp(-d^2 / radius^2)`. The
    /// radius grows by 10% until the graph is connected.
    pub fn random_geometric(n: usize, radius: f64, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts: Vec<[f64; 3]> = (0..n).map(|_| [rng.gen(), rng.gen(), rng.gen()]).collect();
        let mut r = radius;
        loop {
            let mut w = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..i {
                    let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
                    if d2 < r * r {
                        let v = (-d2 / (r * r)).exp();
                        w[(i, j)] = v;
                        w[(j, i)] = v;
                    }
                }
            }
            let g = build_graph_laplacian(w).expect("geometric weights are valid");
            if g.components() == 1 {
                let labels = (0..n).map(|i| format!("region_{i:02}")).collect();
                return g.with_labels(labels).unwrap();
            }
            r *= 1.1;
        }
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (hline, header) = lines.next().ok_or_else(|| perr(1, "missing header `n`".into()))?;
        let n: usize = header
            .parse()
            .map_err(|_| perr(hline, format!("cannot parse node count `{header}`")))?;
        let mut w = DMatrix::zeros(n, n);
        for i in 0..n {
            let (ln, l) = lines
                .next()
                .ok_or_else(|| perr(hline, format!("expected {n} weight rows")))?;
            let row: Vec<&str> = l.split_whitespace().collect();
            if row.len() != n {
                return Err(perr(ln, format!("expected {n} weights, found {}", row.len())));
            }
            for (j, f) in row.iter().enumerate() {
                w[(i, j)] = f.parse().map_err(|_| perr(ln, format!("cannot parse `{f}`")))?;
            }
        }
        if let Some((ln, _)) = lines.next() {
            return Err(perr(ln, "unexpected trailing content".into()));
        }
        build_graph_laplacian(w)
    }

    pub fn to_text(&self) -> String {
        let n = self.n_nodes();
        let mut s = format!("{n}\n");
        for i in 0..n {
            let row: Vec<String> = (0..n).map(|j| format!("{:.17e}", self.weights[(i, j)])).collect();
            writeln!(s, "{}", row.join(" ")).unwrap();
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<GraphDomain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    GraphDomain::parse(&text, path)
}
