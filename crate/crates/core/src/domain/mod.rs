//! Computational domains and their Laplacian eigenbases.

pub mod eigen;
pub mod fem;
pub mod graph;
pub mod mesh;
pub mod sparse;

use std::path::Path;

pub use eigen::{compute_eigenbasis, compute_eigenbasis_with, EigenBasis, EigenOptions, Weight};
pub use fem::assemble_fem;
pub use graph::{build_graph_laplacian, load_graph, GraphDomain};
pub use mesh::{load_mesh, Mesh2D};
pub use sparse::CsrMatrix;

use crate::error::Result;

/// Either kind of spatial domain the pipeline runs on.
#[derive(Debug, Clone)]
pub enum Domain {
    Mesh(Mesh2D),
    Graph(GraphDomain),
}

impl Domain {
    pub fn load_mesh(path: impl AsRef<Path>) -> Result<Self> {
        load_mesh(path).map(Domain::Mesh)
    }

    pub fn load_graph(path: impl AsRef<Path>) -> Result<Self> {
        load_graph(path).map(Domain::Graph)
    }

    pub fn n_nodes(&self) -> usize {
        match self {
            Domain::Mesh(m) => m.n_vertices(),
            Domain::Graph(g) => g.n_nodes(),
        }
    }

    /// Laplacian (stiffness) matrix and inner-product weight.
    pub fn operators(&self) -> Result<(CsrMatrix, Weight)> {
        match self {
            Domain::Mesh(m) => {
                let (k, mass) = assemble_fem(m)?;
                Ok((k, Weight::Mass(mass)))
            }
            Domain::Graph(g) => Ok((CsrMatrix::from_dense(g.laplacian()), Weight::Identity(g.n_nodes()))),
        }
    }

    pub fn eigenbasis(&self, p: usize) -> Result<EigenBasis> {
        let (k, w) = self.operators()?;
        compute_eigenbasis(&k, &w, p)
    }

    /// Node-to-node distances: shortest paths along mesh edges (a discrete
    /// geodesic), hop counts on graphs. Unreachable pairs are infinite.
    pub fn distances(&self) -> Vec<Vec<f64>> {
        match self {
            Domain::Mesh(m) => mesh_path_distances(m),
            Domain::Graph(g) => g
                .hop_distances()
                .into_iter()
                .map(|row| {
                    row.into_iter()
                        .map(|d| if d == usize::MAX { f64::INFINITY } else { d as f64 })
                        .collect()
                })
                .collect(),
        }
    }

    pub fn region_labels(&self) -> Vec<String> {
        match self {
            Domain::Graph(g) => g
                .region_labels()
                .map(|l| l.to_vec())
                .unwrap_or_else(|| (0..g.n_nodes()).map(|i| i.to_string()).collect()),
            Domain::Mesh(m) => (0..m.n_vertices()).map(|i| i.to_string()).collect(),
        }
    }
}

fn mesh_path_distances(mesh: &Mesh2D) -> Vec<Vec<f64>> {
    use std::cmp::Reverse;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Key(f64);
    impl Eq for Key {}
    impl PartialOrd for Key {
        fn partial_cmp(&self, o: &Self) -> Option<std::cmp::Ordering> {
            Some(self.cmp(o))
        }
    }
    impl Ord for Key {
        fn cmp(&self, o: &Self) -> std::cmp::Ordering {
            self.0.total_cmp(&o.0)
        }
    }

    let v = mesh.vertices();
    let n = v.len();
    let mut adj: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for t in mesh.triangles() {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            let len = ((v[a][0] - v[b][0]).powi(2) + (v[a][1] - v[b][1]).powi(2)).sqrt();
            if !adj[a].iter().any(|(u, _)| *u == b) {
                adj[a].push((b, len));
                adj[b].push((a, len));
            }
        }
    }
    (0..n)
        .map(|s| {
            let mut dist = vec![f64::INFINITY; n];
            dist[s] = 0.0;
            let mut heap = BinaryHeap::from([Reverse((Key(0.0), s))]);
            while let Some(Reverse((Key(d), u))) = heap.pop() {
                if d > dist[u] {
                    continue;
                }
                for &(w, len) in &adj[u] {
                    let nd = d + len;
                    if nd < dist[w] {
                        dist[w] = nd;
                        heap.push(Reverse((Key(nd), w)));
                    }
                }
            }
            dist
        })
        .collect()
}
