#![allow(dead_code)]

use std::path::PathBuf;

use leno::domain::{Domain, EigenBasis, GraphDomain, Mesh2D};
use leno::synth::{make_cohort, RDParams, Trajectory};
use leno::train::TrainConfig;

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

/// 91-node brain slice with 12 modes.
pub fn small_mesh_basis() -> EigenBasis {
    Domain::Mesh(Mesh2D::brain_axial(5, 2.0)).eigenbasis(12).unwrap()
}

pub fn small_graph_basis() -> EigenBasis {
    Domain::Graph(GraphDomain::random_geometric(20, 0.45, 5)).eigenbasis(10).unwrap()
}

pub fn grid(t_end: f64, dt: f64) -> Vec<f64> {
    let n = (t_end / dt).round() as usize;
    (0..=n).map(|k| k as f64 * dt).collect()
}

pub fn small_cohort(basis: &EigenBasis, patients: u64, params: &RDParams) -> Vec<Trajectory> {
    let seeds: Vec<u64> = (0..patients).collect();
    make_cohort(params, basis, &seeds, &vec![1.0; seeds.len()], &grid(2.0, 0.2), 1e-2, 4).unwrap()
}

pub fn quick_train(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        ..TrainConfig::default()
    }
}
