//! Linear (P1) finite element assembly with natural (no-flux) boundaries.

use super::mesh::{Mesh2D, MIN_TRIANGLE_AREA};
use super::sparse::CsrMatrix;
use crate::error::{Error, Result};

/// Element stiffness and mass matrices of one P1 triangle.
pub fn element_matrices(p: [[f64; 2]; 3]) -> Result<([[f64; 3]; 3], [[f64; 3]; 3])> {
    let area = 0.5 * ((p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]));
    if area.abs() < MIN_TRIANGLE_AREA {
        return Err(Error::DegenerateTriangle { triangle: 0, area });
    }
    // grad(phi_i) = (y_{i+1} - y_{i+2}, x_{i+2} - x_{i+1}) / (2 area)
    let mut grad = [[0.0; 2]; 3];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        grad[i] = [
            (p[j][1] - p[k][1]) / (2.0 * area),
            (p[k][0] - p[j][0]) / (2.0 * area),
        ];
    }
    let a = area.abs();
    let mut stiff = [[0.0; 3]; 3];
    let mut mass = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            stiff[i][j] = a * (grad[i][0] * grad[j][0] + grad[i][1] * grad[j][1]);
            mass[i][j] = a / 12.0 * if i == j { 2.0 } else { 1.0 };
        }
    }
    Ok((stiff, mass))
}

/// Global stiffness `K` and consistent mass `M`.
pub fn assemble_fem(mesh: &Mesh2D) -> Result<(CsrMatrix, CsrMatrix)> {
    let n = mesh.n_vertices();
    let mut kt = Vec::with_capacity(9 * mesh.n_triangles());
    let mut mt = Vec::with_capacity(9 * mesh.n_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let p = tri.map(|i| mesh.vertices()[i]);
        let (ke, me) = element_matrices(p).map_err(|e| match e {
            Error::DegenerateTriangle { area, .. } => Error::DegenerateTriangle { triangle: t, area },
            e => e,
        })?;
        for a in 0..3 {
            for b in 0..3 {
                kt.push((tri[a], tri[b], ke[a][b]));
                mt.push((tri[a], tri[b], me[a][b]));
            }
        }
    }
    Ok((CsrMatrix::from_triplets(n, n, kt), CsrMatrix::from_triplets(n, n, mt)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_triangle_matrices() {
        let (k, m) = element_matrices([[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]]).unwrap();
        let k_ref = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        let m_ref = [[2.0, 1.0, 1.0], [1.0, 2.0, 1.0], [1.0, 1.0, 2.0]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k[i][j] - k_ref[i][j]).abs() < 1e-15);
                assert!((m[i][j] - m_ref[i][j] / 24.0).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn degenerate_element_aborts() {
        assert!(element_matrices([[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]]).is_err());
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = Mesh2D::brain_axial(5, 1.0);
        let (k, _) = assemble_fem(&mesh).unwrap();
        let kc = k.mul_vec(&vec![1.0; mesh.n_vertices()]);
        assert!(kc.iter().all(|v| v.abs() < 1e-12));
        assert!(k.max_asymmetry() < 1e-14);
    }

    #[test]
    fn mass_integrates_area() {
        let mesh = Mesh2D::brain_sagittal(5, 1.0);
        let (_, m) = assemble_fem(&mesh).unwrap();
        let total: f64 = m.iter().map(|(_, _, v)| v).sum();
        let area: f64 = (0..mesh.n_triangles()).map(|t| mesh.triangle_area(t)).sum();
        assert!((total - area).abs() < 1e-12 * area);
    }
}
