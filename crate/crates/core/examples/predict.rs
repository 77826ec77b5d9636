//! Forecast of a patient that was not used for training, from its first
//! observation onward.
//!
//! ```text
//! cargo run --release --example predict
//! ```

use leno::domain::{Domain, GraphDomain};
use leno::metrics::{evaluate, predict_trained};
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, RDParams, Species};
use leno::train::{train_all, TrainConfig};

fn main() -> leno::Result<()> {
    let basis = Domain::Graph(GraphDomain::random_geometric(40, 0.4, 3)).eigenbasis(20)?;
    let params = RDParams::default();
    let times: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
    let seeds: Vec<u64> = (0..9).collect();
    let mut cohort = make_cohort(&params, &basis, &seeds, &[1.0; 9], &times, 1e-3, 6)?;
    let unseen = cohort.pop().unwrap();

    let mut model = LenoModel::new(&basis, Architecture::graph());
    let cfg = TrainConfig {
        epochs: 800,
        ..TrainConfig::default()
    };
    train_all(&mut model, &cohort, &basis, &cfg)?;

    let pred = predict_trained(&model, &basis, &unseen, 1.0)?;
    let per_step = |k: usize| evaluate(&pred, &unseen, &model, &basis, Some(&params), k..k + 1, 1.0);
    println!("{:>5} {:>9} {:>9} {:>9} {:>9}", "t", "A", "tau", "N", "C");
    for k in 1..unseen.n_times() {
        let m = per_step(k)?;
        let row: Vec<String> = Species::ALL.iter().map(|s| format!("{:9.2e}", m[s].e_l2)).collect();
        println!("{:5.1} {}", unseen.times[k], row.join(" "));
    }
    println!("(relative L2 error per visit)");
    Ok(())
}
