//! Sequential training of the four operators on a small synthetic cohort.
//!
//! ```text
//! cargo run --release --example train
//! ```

use leno::domain::{Domain, Mesh2D};
use leno::metrics::{evaluate_cohort, metrics_csv};
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, RDParams};
use leno::train::{train_all, TrainConfig};

fn main() -> leno::Result<()> {
    let basis = Domain::Mesh(Mesh2D::brain_axial(5, 2.0)).eigenbasis(16)?;
    let params = RDParams::default();
    let times: Vec<f64> = (0..=25).map(|k| 0.4 * k as f64).collect();
    let seeds: Vec<u64> = (0..6).collect();
    let cohort = make_cohort(&params, &basis, &seeds, &[1.0; 6], &times, 1e-3, 6)?;

    let mut model = LenoModel::new(&basis, Architecture::mesh());
    let cfg = TrainConfig {
        epochs: 1000,
        ..TrainConfig::default()
    };
    for r in train_all(&mut model, &cohort, &basis, &cfg)? {
        println!(
            "{:>3}: loss {:.3e} -> {:.3e}, alpha {:.4} (true {}), training E_L2 {:.2e}",
            r.species.tag(),
            r.loss_history[0],
            r.final_loss,
            r.alpha,
            params.alpha(r.species),
            r.metrics.e_l2
        );
    }
    let metrics = evaluate_cohort(&model, &basis, &cohort, Some(&params), cfg.train_fraction, None)?;
    print!("\n{}", metrics_csv(&metrics.rows()));
    Ok(())
}
