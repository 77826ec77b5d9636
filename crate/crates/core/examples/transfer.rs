//! Personalized progression speed: a frozen model is matched to a patient
//! whose disease runs on a different clock by fitting one time-scale factor.
//! A baseline seen in training isolates the clock; an unseen baseline adds
//! the operator's generalization error to the fit.
//!
//! ```text
//! cargo run --release --example transfer
//! ```

use leno::domain::{Domain, Mesh2D};
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, RDParams};
use leno::train::{train_all, TrainConfig};
use leno::transfer::{fit_timescale, TransferConfig};

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
    train_all(&mut model, &cohort, &basis, &cfg)?;

    for (label, seed) in [("seen baseline", 0), ("unseen baseline", 100)] {
        println!("{label}");
        for gamma in [0.5, 1.5, 2.0] {
            let patient = &make_cohort(&params, &basis, &[seed], &[gamma], &times, 1e-3, 6)?[0];
            let fit = fit_timescale(&model, &basis, patient, &TransferConfig::default())?;
            let test = &fit.metrics.test;
            let acc: Vec<String> = test.iter().map(|(s, m)| format!("{}={:.2}%", s.tag(), 100.0 * m.acc2)).collect();
            println!(
                "  gamma {gamma}: fitted {:.4}, loss {:.2e}, held-out Acc2 {}",
                fit.timescale.gamma,
                fit.loss,
                acc.join(" ")
            );
        }
    }
    Ok(())
}
