//! One-dimensional meshes and their linear finite-element matrices.

use crate::error::{Error, Result};
use crate::sparse::SparseMatrix;

/// Sorted nodes `x_1 < … < x_n` with lumped-mass weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh1D {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl Mesh1D {
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// Lumped mass `h_i = Σ_j C_ij`.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Gaps `x_{i+1} - x_i`, one fewer than the node count.
    pub fn steps(&self) -> Vec<f64> {
        self.nodes.windows(2).map(|w| w[1] - w[0]).collect()
    }

    /// Regular mesh of `n` nodes on `[a, b]`.
    pub fn uniform(n: usize, a: f64, b: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Input(format!("a mesh needs at least 2 nodes, got {n}")));
        }
        let dx = (b - a) / (n - 1) as f64;
        build_interval_mesh((0..n).map(|i| a + dx * i as f64).collect())
    }
}

/// Builds a mesh from strictly increasing nodes.
pub fn build_interval_mesh(nodes: Vec<f64>) -> Result<Mesh1D> {
    let n = nodes.len();
    if n < 2 {
        return Err(Error::Input(format!("a mesh needs at least 2 nodes, got {n}")));
    }
    if nodes.iter().any(|x| !x.is_finite()) {
        return Err(Error::Input("mesh nodes must be finite".into()));
    }
    if let Some(i) = nodes.windows(2).position(|w| w[1] <= w[0]) {
        return Err(Error::Input(format!(
            "mesh nodes must be strictly increasing (x[{}] = {} >= x[{}] = {})",
            i,
            nodes[i],
            i + 1,
            nodes[i + 1]
        )));
    }
    let mut weights = vec![0.0; n];
    for i in 0..n - 1 {
        let half = 0.5 * (nodes[i + 1] - nodes[i]);
        weights[i] += half;
        weights[i + 1] += half;
    }
    Ok(Mesh1D { nodes, weights })
}

/// Lumped mass, stiffness and advection matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct FemMatrices {
    pub c_lumped: SparseMatrix,
    pub g: SparseMatrix,
    pub b: SparseMatrix,
}

/// Assembles the linear finite-element matrices on `mesh` with natural
/// boundary conditions. `B` discretizes the convection term
/// `∫ ψ_i γ ψ_j'` and has the tridiagonal pattern of `G` even when `γ = 0`.
pub fn fem_matrices(mesh: &Mesh1D, gamma: f64) -> FemMatrices {
    let n = mesh.len();
    let mut g = Vec::with_capacity(4 * n);
    let mut b = Vec::with_capacity(4 * n);
    for (e, dx) in mesh.steps().into_iter().enumerate() {
        let (i, j) = (e, e + 1);
        let k = 1.0 / dx;
        g.extend([(i, i, k), (j, j, k), (i, j, -k), (j, i, -k)]);
        let c = 0.5 * gamma;
        b.extend([(i, i, -c), (i, j, c), (j, i, -c), (j, j, c)]);
    }
    FemMatrices {
        c_lumped: SparseMatrix::diag(mesh.weights()),
        g: SparseMatrix::from_triplets(n, n, g),
        b: SparseMatrix::from_triplets(n, n, b),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lumped_weights() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.weights(), &[0.5, 1.0, 1.0, 0.5]);
        let m = build_interval_mesh(vec![0.0, 0.5, 2.0]).unwrap();
        assert_eq!(m.weights(), &[0.25, 1.0, 0.75]);
        assert!(build_interval_mesh(vec![0.0, 2.0, 1.0]).is_err());
        assert!(build_interval_mesh(vec![0.0]).is_err());
    }

    #[test]
    fn stiffness_on_unit_mesh() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap();
        let fem = fem_matrices(&m, 0.0);
        let g = fem.g.to_dense();
        let want = nalgebra::DMatrix::from_row_slice(3, 3, &[1.0, -1.0, 0.0, -1.0, 2.0, -1.0, 0.0, -1.0, 1.0]);
        assert_eq!(g, want);
        assert_eq!(fem.b.max_abs(), 0.0);
        assert_eq!(fem.c_lumped.to_dense().diagonal().as_slice(), m.weights());
    }

    #[test]
    fn advection_annihilates_constants() {
        let m = build_interval_mesh(vec![0.0, 0.2, 0.5, 1.1, 1.3]).unwrap();
        let fem = fem_matrices(&m, 2.0);
        assert!(fem.b.mul_vec(&[1.0; 5]).iter().all(|v| v.abs() < 1e-15));
        assert!(fem.g.mul_vec(&[1.0; 5]).iter().all(|v| v.abs() < 1e-12));
        assert_eq!(fem.b.get(0, 0), -1.0);
        assert_eq!(fem.b.get(4, 4), 1.0);
        assert_eq!(fem.b.get(2, 2), 0.0);
    }
}
