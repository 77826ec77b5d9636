//! Dosing policies for anti-amyloid and anti-tau clearance, optimized
//! through the learned dynamics. Cognition here declines with
//! neurodegeneration, so clearance pays off.
//!
//! ```text
//! cargo run --release --example treatment
//! ```

use leno::domain::{Domain, Mesh2D};
use leno::model::{Architecture, LenoModel};
use leno::synth::{make_cohort, InitialState, RDParams};
use leno::train::{train_all, TrainConfig};
use leno::treatment::{cognitive_csv, optimize_policy, treated_rollout, Scenario, TreatmentConfig};

fn main() -> leno::Result<()> {
    let basis = Domain::Mesh(Mesh2D::brain_axial(5, 2.0)).eigenbasis(16)?;
    let params = RDParams {
        lambda_c_n: -0.001,
        ..RDParams::default()
    };
    let times: Vec<f64> = (0..=25).map(|k| 0.4 * k as f64).collect();
    let seeds: Vec<u64> = (0..6).collect();
    let cohort = make_cohort(&params, &basis, &seeds, &[1.0; 6], &times, 1e-3, 6)?;
    let mut model = LenoModel::new(&basis, Architecture::mesh());
    let cfg = TrainConfig {
        epochs: 1000,
        ..TrainConfig::default()
    };
    train_all(&mut model, &cohort, &basis, &cfg)?;

    let init = InitialState::from_trajectory(&cohort[0], 0);
    let tcfg = TreatmentConfig {
        horizon: 10.0,
        epochs: 200,
        ..TreatmentConfig::default()
    };
    let mut curves = Vec::new();
    let mut grid = Vec::new();
    for sc in Scenario::ALL {
        let res = optimize_policy(&model, &basis, &init, 0.0, &tcfg, sc)?;
        let roll = treated_rollout(&model, &basis, &res.policy, &init, &res.times)?;
        let (da, dt) = res.policy.doses(&res.times)?;
        let mean = |d: &[f64]| d.iter().sum::<f64>() / d.len() as f64;
        let c = roll.c.unwrap();
        println!(
            "{:>8}: objective {:+.5}, C(T) {:.5}, mean dose A {:.3} tau {:.3}",
            sc.tag(),
            res.objective,
            c[c.len() - 1],
            mean(&da),
            mean(&dt)
        );
        grid = res.times;
        curves.push((sc, c));
    }
    print!("\n{}", cognitive_csv(&grid, &curves)?);
    Ok(())
}
