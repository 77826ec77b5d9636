//! Laplacian eigenbases of a triangulated slice and of a region graph, and
//! how well the leading modes represent a smooth field.
//!
//! ```text
//! cargo run --example eigenbasis
//! ```

use leno::domain::{assemble_fem, compute_eigenbasis, Domain, GraphDomain, Mesh2D, Weight};
use leno::spectral::{project_raw, reconstruct_raw};

fn main() -> leno::Result<()> {
    let mesh = Mesh2D::unit_square(30);
    let (k, m) = assemble_fem(&mesh)?;
    let square = compute_eigenbasis(&k, &Weight::Mass(m), 7)?;
    let pi2 = std::f64::consts::PI.powi(2);
    println!("unit square, h = {:.4}", mesh.max_edge_length());
    for (lam, mult) in square.eigenvalues()[1..].iter().zip([1.0, 1.0, 2.0, 4.0, 4.0, 5.0]) {
        println!("  lambda {lam:10.4}   exact {:10.4}", mult * pi2);
    }

    let slice = Domain::Mesh(Mesh2D::brain_axial(8, 2.0));
    let field: Vec<f64> = match &slice {
        Domain::Mesh(m) => m.vertices().iter().map(|[x, y]| (0.8 * x).sin() + 0.3 * y * y).collect(),
        Domain::Graph(_) => unreachable!(),
    };
    println!("\nbrain slice, {} nodes: truncation error of a smooth field", slice.n_nodes());
    let basis = slice.eigenbasis(64)?;
    for p in [4, 8, 16, 32, 64] {
        let b = basis.truncate(p)?;
        let back = reconstruct_raw(&project_raw(&field, &b), &b);
        let diff: Vec<f64> = field.iter().zip(&back).map(|(a, r)| a - r).collect();
        println!("  {p:3} modes: relative L2 error {:.3e}", b.weight().norm(&diff) / b.weight().norm(&field));
    }
    println!("  M-orthonormality defect {:.1e}", basis.orthonormality_defect());

    let graph = Domain::Graph(GraphDomain::random_geometric(68, 0.35, 68));
    let gb = graph.eigenbasis(8)?;
    println!("\nrandom geometric graph, 68 regions: first eigenvalues");
    println!("  {:?}", gb.eigenvalues().iter().map(|l| format!("{l:.4}")).collect::<Vec<_>>());
    Ok(())
}
