//! Saving a trained model with its basis fingerprint and reloading it; the
//! reloaded model predicts bit for bit the same trajectory.
//!
//! ```text
//! cargo run --release --example checkpoint -- out/model.json
//! ```

use leno::domain::{Domain, Mesh2D};
use leno::io::{load_checkpoint, save_checkpoint, Checkpoint};
use leno::metrics::predict_trained;
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, RDParams};
use leno::train::{train_all, TrainConfig};

fn main() -> leno::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "out/model.json".into());
    let basis = Domain::Mesh(Mesh2D::brain_axial(5, 2.0)).eigenbasis(12)?;
    let times: Vec<f64> = (0..=10).map(|k| 0.2 * k as f64).collect();
    let cohort = make_cohort(&RDParams::default(), &basis, &[0, 1], &[1.0, 1.0], &times, 1e-3, 4)?;
    let mut model = LenoModel::new(&basis, Architecture::mesh());
    let cfg = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    train_all(&mut model, &cohort, &basis, &cfg)?;

    save_checkpoint(&Checkpoint::new(model.clone(), &basis, "example".into(), 0), &path)?;
    let loaded = load_checkpoint(&path)?;
    let restored = loaded.model_for(&basis)?;
    let same = predict_trained(&model, &basis, &cohort[0], 1.0)? == predict_trained(restored, &basis, &cohort[0], 1.0)?;
    println!("wrote {path}; reloaded model identical: {}, predictions identical: {same}", *restored == model);

    let other = Domain::Mesh(Mesh2D::brain_axial(6, 2.0)).eigenbasis(12)?;
    match loaded.model_for(&other) {
        Ok(_) => println!("unexpected: model accepted a different basis"),
        Err(e) => println!("different basis rejected: {e}"),
    }
    Ok(())
}
