mod common;

use std::sync::OnceLock;

use leno::analysis::{connectivity_export, InteractionMatrix};
use leno::domain::EigenBasis;
use leno::metrics::evaluate;
use leno::model::{Architecture, LenoModel, SpectralNet};
use leno::nn::{Activation, Mlp};
use leno::spectral::{project_raw, reconstruct_raw, semi_implicit_update};
use leno::synth::{gen_initial_conditions, simulate, RDParams, Species, Trajectory};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn mesh() -> &'static EigenBasis {
    static B: OnceLock<EigenBasis> = OnceLock::new();
    B.get_or_init(common::small_mesh_basis)
}

fn graph() -> &'static EigenBasis {
    static B: OnceLock<EigenBasis> = OnceLock::new();
    B.get_or_init(common::small_graph_basis)
}

fn coeffs(p: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0..10.0f64, p)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projection_inverts_reconstruction_on_the_span(beta in coeffs(12), graph_case in any::<bool>()) {
        let basis = if graph_case { graph() } else { mesh() };
        let beta = DVector::from_vec(beta[..basis.n_modes()].to_vec());
        let back = project_raw(&reconstruct_raw(&beta, basis), basis);
        let err = (&back - &beta).amax();
        prop_assert!(err <= 1e-10 * (1.0 + beta.amax()), "err {err:e}");
    }

    #[test]
    fn implicit_diffusion_step_contracts_every_mode(beta in coeffs(12), dt in 1e-3..2.0f64, alpha in 0.0..5.0f64) {
        let lambda = mesh().eigenvalues();
        let mut b = DVector::from_vec(beta.clone());
        semi_implicit_update(&mut b, dt, alpha, lambda, &[0.0; 12]);
        for i in 0..12 {
            prop_assert!(b[i].abs() <= beta[i].abs());
        }
    }

    #[test]
    fn connectivity_export_is_exactly_the_thresholded_set(
        w in prop::collection::vec(-5.0..5.0f64, 16),
        threshold in 0.0..=1.0f64,
    ) {
        let m = InteractionMatrix {
            output: Species::A,
            input: Species::A,
            state: "s".into(),
            weights: DMatrix::from_row_slice(4, 4, &w),
        };
        let edges = connectivity_export(&m, threshold).unwrap();
        let max = w.iter().fold(0.0f64, |a, b| a.max(b.abs()));
        let expected = w.iter().filter(|x| x.abs() >= threshold * max).count();
        prop_assert_eq!(edges.len(), expected);
        for pair in edges.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            prop_assert!(a.weight.abs() > b.weight.abs()
                || (a.weight.abs() == b.weight.abs() && (a.target, a.source) < (b.target, b.source)));
        }
        for e in &edges {
            prop_assert_eq!(e.weight, m.weights[(e.target, e.source)]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pure_diffusion_conserves_mass(seed in 0u64..1000, graph_case in any::<bool>()) {
        let basis = if graph_case { graph() } else { mesh() };
        let params = RDParams {
            lambda_a: 0.0,
            lambda_tau_a: 0.0,
            lambda_tau: 0.0,
            lambda_n_tau: 0.0,
            lambda_n: 0.0,
            lambda_c_n: 0.0,
            lambda_c: 0.0,
            ..RDParams::default()
        };
        let init = gen_initial_conditions(basis, seed, 6).unwrap();
        let traj = simulate(&params, basis, &init, &common::grid(1.0, 0.25), 1e-2).unwrap();
        for field in [&traj.a, &traj.tau, &traj.n] {
            let m0 = basis.integrate(&field[0]);
            for u in field.iter() {
                prop_assert!((basis.integrate(u) - m0).abs() <= 1e-8 * m0.abs().max(1.0));
            }
        }
    }

    /// With a degree-one homogeneous operator every metric is a ratio of
    /// quantities that scale together.
    #[test]
    fn metrics_are_invariant_under_common_rescaling(seed in 0u64..1000, scale in 0.1..10.0f64) {
        let basis = mesh();
        let p = basis.n_modes();
        let mut model = LenoModel::new(basis, Architecture::mesh());
        let mut mlp = Mlp::new(&[p, p], Activation::Relu, Activation::Linear, seed).unwrap();
        mlp.bias_mut(0).iter_mut().for_each(|b| *b = 0.0);
        model.nets[0] = Some(SpectralNet::unscaled(mlp));

        let truth = simulate(
            &RDParams::default(),
            basis,
            &gen_initial_conditions(basis, seed, 6).unwrap(),
            &common::grid(1.0, 0.25),
            1e-2,
        )
        .unwrap();
        let mut pred = truth.clone();
        for (k, u) in pred.a.iter_mut().enumerate() {
            for (i, x) in u.iter_mut().enumerate() {
                *x *= 1.0 + 0.01 * ((i + k) as f64).sin();
            }
        }
        let scaled = |t: &Trajectory| {
            let mut t = t.clone();
            t.a.iter_mut().flatten().for_each(|x| *x *= scale);
            t
        };
        let m1 = evaluate(&pred, &truth, &model, basis, None, 1..truth.n_times(), 1.0).unwrap()[&Species::A];
        let m2 = evaluate(&scaled(&pred), &scaled(&truth), &model, basis, None, 1..truth.n_times(), 1.0).unwrap()[&Species::A];
        for (a, b) in [(m1.acc2, m2.acc2), (m1.acc1, m2.acc1), (m1.e_l2, m2.e_l2), (m1.e_res, m2.e_res)] {
            prop_assert!((a - b).abs() <= 1e-10 * (1.0 + a.abs()), "{a} vs {b}");
        }
    }
}
