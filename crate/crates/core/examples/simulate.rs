//! Synthetic patients from the coupled reaction-diffusion system, saved as
//! the CSV files the pipeline imports.
//!
//! ```text
//! cargo run --example simulate -- out/cohort
//! ```

use leno::domain::{Domain, Mesh2D};
use leno::synth::{make_cohort, RDParams};

fn main() -> leno::Result<()> {
    let dir = std::env::args().nth(1).unwrap_or_else(|| "out/cohort".into());
    let basis = Domain::Mesh(Mesh2D::brain_axial(8, 2.0)).eigenbasis(32)?;
    let params = RDParams::default();
    let times: Vec<f64> = (0..=20).map(|k| 0.5 * k as f64).collect();
    let seeds = [0, 1, 2];
    let cohort = make_cohort(&params, &basis, &seeds, &[1.0, 1.0, 1.5], &times, 1e-3, 8)?;

    for traj in &cohort {
        println!("{}", traj.patient_id);
        println!("  {:>5} {:>9} {:>9} {:>9} {:>7}", "t", "int A", "int tau", "int N", "C");
        let c = traj.c.as_ref().unwrap();
        for k in (0..traj.n_times()).step_by(4) {
            println!(
                "  {:5.1} {:9.4} {:9.4} {:9.4} {:7.4}",
                traj.times[k],
                basis.integrate(&traj.a[k]),
                basis.integrate(&traj.tau[k]),
                basis.integrate(&traj.n[k]),
                c[k]
            );
        }
        traj.save_csv(&dir)?;
    }
    println!("wrote {dir}");
    Ok(())
}
