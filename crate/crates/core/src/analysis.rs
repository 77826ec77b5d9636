//! Mechanistic read-outs of trained operators: Jacobians in spectral space,
//! regional influence matrices and their thresholded edge lists.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::domain::EigenBasis;
use crate::error::{Error, Result};
use crate::model::{LenoModel, SpectralNet};
use crate::spectral::project_raw;
use crate::synth::Species;

/// Exact input Jacobian of a network at `beta`, one row per output.
pub fn jacobian_spectral(net: &SpectralNet, beta: &[f64]) -> Result<DMatrix<f64>> {
    net.jacobian(beta)
}

/// Entry `(r, s)` is the change of the `output` rate at node `r` per unit
/// change of the `input` state at node `s`.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    pub output: Species,
    pub input: Species,
    pub state: String,
    pub weights: DMatrix<f64>,
}

/// Regional influence `Phi J Phi^T M` of `input` on the rate of `output`,
/// evaluated at the nodal state `fields = [A, tau, N]`.
pub fn jacobian_regional(
    model: &LenoModel,
    output: Species,
    input: Species,
    fields: [&[f64]; 3],
    basis: &EigenBasis,
    state: &str,
) -> Result<InteractionMatrix> {
    model.check_basis(basis)?;
    if output == Species::C || input == Species::C {
        return Err(Error::InvalidArgument("regional influence is defined between spatial species".into()));
    }
    if input.index() > output.index() {
        return Err(Error::InvalidArgument(format!("{output} does not depend on {input}")));
    }
    let net = model.net(output)?;
    let p = basis.n_modes();
    let x: Vec<f64> = fields
        .iter()
        .take(output.index() + 1)
        .flat_map(|f| project_raw(f, basis).data.as_vec().clone())
        .collect();
    let jac = jacobian_spectral(net, &x)?;
    let block = jac.columns(input.index() * p, p);
    let weights = basis.modes() * block * basis.weighted_modes().transpose();
    Ok(InteractionMatrix {
        output,
        input,
        state: state.to_string(),
        weights,
    })
}

/// Directed edge from the perturbed node to the responding node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub source: usize,
    pub target: usize,
    pub weight: f64,
}

/// Entries with `|w| >= threshold * max |w|`, by decreasing magnitude, ties
/// broken by `(target, source)`.
pub fn connectivity_export(mat: &InteractionMatrix, threshold: f64) -> Result<Vec<Edge>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidArgument(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let w = &mat.weights;
    let max = w.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let cut = threshold * max;
    let mut edges = Vec::new();
    for r in 0..w.nrows() {
        for s in 0..w.ncols() {
            if w[(r, s)].abs() >= cut {
                edges.push(Edge {
                    source: s,
                    target: r,
                    weight: w[(r, s)],
                });
            }
        }
    }
    edges.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then(a.target.cmp(&b.target))
            .then(a.source.cmp(&b.source))
    });
    Ok(edges)
}

/// CSV `source_region,target_region,weight`.
pub fn edges_csv(edges: &[Edge], labels: &[String]) -> Result<String> {
    let mut s = String::from("source_region,target_region,weight\n");
    for e in edges {
        let (Some(a), Some(b)) = (labels.get(e.source), labels.get(e.target)) else {
            return Err(Error::DimensionMismatch {
                what: "region labels",
                expected: e.source.max(e.target) + 1,
                got: labels.len(),
            });
        };
        writeln!(s, "{a},{b},{:.16e}", e.weight).unwrap();
    }
    Ok(s)
}

/// Row-major dump with 17 significant digits, no header.
pub fn matrix_csv(m: &DMatrix<f64>) -> String {
    let mut s = String::new();
    for r in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|c| format!("{:.16e}", m[(r, c)])).collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// Mean node distance over `edges`, each edge weighted by the product of
/// the lumped node weights of its endpoints. `None` without finite edges.
pub fn effective_interaction_length(edges: &[Edge], distances: &[Vec<f64>], node_weight: &[f64]) -> Option<f64> {
    let (mut num, mut den) = (0.0, 0.0);
    for e in edges {
        let d = distances[e.target][e.source];
        if d.is_finite() {
            let w = node_weight[e.target] * node_weight[e.source];
            num += w * d;
            den += w;
        }
    }
    (den > 0.0).then(|| num / den)
}

/// Regional matrix applied to a nodal perturbation, for checking against
/// finite differences of the reconstructed rate.
pub fn apply(mat: &InteractionMatrix, perturbation: &[f64]) -> Vec<f64> {
    (&mat.weights * DVector::from_column_slice(perturbation)).data.into()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mat(w: DMatrix<f64>) -> InteractionMatrix {
        InteractionMatrix {
            output: Species::A,
            input: Species::A,
            state: "t".into(),
            weights: w,
        }
    }

    #[test]
    fn half_threshold_keeps_large_entries() {
        let m = mat(DMatrix::from_row_slice(3, 3, &[1.0, -4.0, 2.0, 0.5, 3.0, -2.0, 2.0, 0.0, -1.9]));
        let e = connectivity_export(&m, 0.5).unwrap();
        let got: Vec<(usize, usize, f64)> = e.iter().map(|e| (e.target, e.source, e.weight)).collect();
        assert_eq!(
            got,
            vec![(0, 1, -4.0), (1, 1, 3.0), (0, 2, 2.0), (1, 2, -2.0), (2, 0, 2.0)]
        );
        assert_eq!(connectivity_export(&m, 1.0).unwrap().len(), 1);
        assert_eq!(connectivity_export(&m, 0.0).unwrap().len(), 9);
        assert!(connectivity_export(&m, 1.5).is_err());
    }

    #[test]
    fn csv_exports() {
        let m = DMatrix::from_row_slice(2, 2, &[0.1, 2.0, -3.0, 4.0]);
        let dump = matrix_csv(&m);
        let back: Vec<f64> = dump.split([',', '\n']).filter(|s| !s.is_empty()).map(|s| s.parse().unwrap()).collect();
        assert_eq!(back, vec![0.1, 2.0, -3.0, 4.0]);
        let edges = connectivity_export(&mat(m), 0.9).unwrap();
        let labels = vec!["x".to_string(), "y".to_string()];
        assert_eq!(edges_csv(&edges, &labels).unwrap(), "source_region,target_region,weight\ny,y,4.0000000000000000e0\n");
        assert!(edges_csv(&edges, &labels[..1]).is_err());
    }

    #[test]
    fn interaction_length_weights_by_node_mass() {
        let edges = vec![
            Edge { source: 0, target: 1, weight: 1.0 },
            Edge { source: 2, target: 0, weight: 1.0 },
        ];
        let d = vec![vec![0.0, 1.0, 4.0], vec![1.0, 0.0, 3.0], vec![4.0, 3.0, 0.0]];
        let l = effective_interaction_length(&edges, &d, &[1.0, 1.0, 3.0]).unwrap();
        assert!((l - (1.0 + 3.0 * 4.0) / 4.0).abs() < 1e-15);
        assert_eq!(effective_interaction_length(&[], &d, &[1.0; 3]), None);
    }
}
