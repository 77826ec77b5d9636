//! Builds the bundled domains and writes them in the text formats the
//! pipeline reads.
//!
//! ```text
//! cargo run --example domains -- crates/core/fixtures
//! ```

use std::path::PathBuf;

use leno::domain::{GraphDomain, Mesh2D};

fn main() -> leno::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fixtures".into()));

    let axial = Mesh2D::brain_axial(12, 2.0);
    axial.save(dir.join("brain_axial.mesh"))?;
    let sagittal = Mesh2D::brain_sagittal(12, 2.0);
    sagittal.save(dir.join("brain_sagittal.mesh"))?;
    let coarse = Mesh2D::brain_axial(5, 2.0);
    coarse.save(dir.join("brain_axial_coarse.mesh"))?;
    let square = Mesh2D::unit_square(30);
    square.save(dir.join("unit_square.mesh"))?;
    let meshes = [
        ("brain_axial", &axial),
        ("brain_sagittal", &sagittal),
        ("brain_axial_coarse", &coarse),
        ("unit_square", &square),
    ];
    for (name, m) in meshes {
        println!(
            "{name}: {} vertices, {} triangles, area {:.4}, max edge {:.4}",
            m.n_vertices(),
            m.n_triangles(),
            m.area(),
            m.max_edge_length()
        );
    }

    GraphDomain::path(3).save(dir.join("path3.graph"))?;
    let rgg = GraphDomain::random_geometric(68, 0.35, 68);
    rgg.save(dir.join("rgg68.graph"))?;
    let edges = rgg.weights().iter().filter(|w| **w > 0.0).count() / 2;
    println!("rgg68: 68 nodes, {edges} edges");
    Ok(())
}
