//! Regional influence of tau on the amyloid-driven tau rate and the
//! strongest edges of the resulting connectivity map.
//!
//! ```text
//! cargo run --release --example analysis
//! ```

use leno::analysis::{connectivity_export, edges_csv, effective_interaction_length, jacobian_regional};
use leno::domain::{Domain, GraphDomain};
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, RDParams, Species};
use leno::train::{train_all, TrainConfig};

fn main() -> leno::Result<()> {
    let domain = Domain::Graph(GraphDomain::random_geometric(30, 0.45, 11));
    let basis = domain.eigenbasis(16)?;
    let params = RDParams::default();
    let times: Vec<f64> = (0..=10).map(|k| 0.5 * k as f64).collect();
    let seeds: Vec<u64> = (0..6).collect();
    let cohort = make_cohort(&params, &basis, &seeds, &[1.0; 6], &times, 1e-3, 6)?;
    let mut model = LenoModel::new(&basis, Architecture::graph());
    let cfg = TrainConfig {
        epochs: 800,
        ..TrainConfig::default()
    };
    train_all(&mut model, &cohort, &basis, &cfg)?;

    let traj = &cohort[0];
    let labels = domain.region_labels();
    let distances = domain.distances();
    for k in [0, traj.n_times() - 1] {
        let fields = [traj.a[k].as_slice(), traj.tau[k].as_slice(), traj.n[k].as_slice()];
        for (out, inp) in [(Species::Tau, Species::A), (Species::Tau, Species::Tau), (Species::N, Species::Tau)] {
            let mat = jacobian_regional(&model, out, inp, fields, &basis, &format!("t{}", traj.times[k]))?;
            let edges = connectivity_export(&mat, 0.5)?;
            let len = effective_interaction_length(&edges, &distances, basis.lumped());
            println!(
                "t = {:4.1}: {} from {}, {} edges above half of max |w|, interaction length {}",
                traj.times[k],
                out.tag(),
                inp.tag(),
                edges.len(),
                len.map_or("-".into(), |l| format!("{l:.2} hops"))
            );
            if k == 0 && out == Species::Tau && inp == Species::A {
                let top: Vec<_> = edges.into_iter().take(5).collect();
                print!("{}", edges_csv(&top, &labels)?);
            }
        }
    }
    Ok(())
}
