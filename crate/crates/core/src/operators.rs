//! Sparse latent operators `K(θ)` with mesh weights and parameter
//! derivatives.
//!
//! An [`OperatorSpec`] describes the structure of an operator (its kind,
//! mesh and composition tree); [`OperatorSpec::build`] evaluates it at
//! natural-scale parameter values. The sparsity pattern of `K` never depends
//! on the parameter values: entries that happen to vanish are stored as
//! explicit zeros so that symbolic factorizations can be reused.

use crate::error::{Error, Result};
use crate::inference::transforms::Transform;
use crate::mesh::{fem_matrices, Mesh1D};
use crate::sparse::SparseMatrix;

/// Structure of a latent operator, independent of parameter values.
#[derive(Debug, Clone, PartialEq)]
pub enum OperatorSpec {
    /// Stationary AR(1) on `n` integer time points.
    Ar1 { n: usize },
    /// First or second order random walk. With `pinned`, the first `order`
    /// nodes receive identity rows so the operator is square and invertible.
    Rw { order: usize, mesh: Mesh1D, pinned: bool },
    /// Ornstein-Uhlenbeck recursion on an irregular time mesh.
    Ou { mesh: Mesh1D },
    /// Matérn SPDE operator `κ²C + G` (α = 2).
    Matern { mesh: Mesh1D },
    /// Implicit-Euler advection-diffusion operator over `steps` time points.
    AdvDiff { mesh: Mesh1D, steps: usize },
    /// `K_outer ⊗ K_inner`.
    Tensor { outer: Box<OperatorSpec>, inner: Box<OperatorSpec> },
    /// `(D(ζ, ρ) ⊗ I) blockdiag(K_first, K_second)`.
    Bivariate { first: Box<OperatorSpec>, second: Box<OperatorSpec> },
    /// `I_R ⊗ K`.
    Replicate { base: Box<OperatorSpec>, copies: usize },
}

impl OperatorSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            OperatorSpec::Ar1 { .. } => "ar1",
            OperatorSpec::Rw { .. } => "rw",
            OperatorSpec::Ou { .. } => "ou",
            OperatorSpec::Matern { .. } => "matern",
            OperatorSpec::AdvDiff { .. } => "advdiff",
            OperatorSpec::Tensor { .. } => "tensor",
            OperatorSpec::Bivariate { .. } => "bivariate",
            OperatorSpec::Replicate { .. } => "replicate",
        }
    }

    /// Parameter names in slot order. Children of compositions are
    /// prefixed (`outer.`, `inner.`, `first.`, `second.`).
    pub fn param_names(&self) -> Vec<String> {
        fn prefixed(p: &'static str, s: &OperatorSpec) -> impl Iterator<Item = String> {
            s.param_names().into_iter().map(move |n| format!("{p}.{n}"))
        }
        match self {
            OperatorSpec::Ar1 { .. } => vec!["rho".into()],
            OperatorSpec::Rw { .. } => vec![],
            OperatorSpec::Ou { .. } => vec!["theta".into()],
            OperatorSpec::Matern { .. } => vec!["kappa".into()],
            OperatorSpec::AdvDiff { .. } => vec!["kappa".into(), "gamma".into(), "c".into()],
            OperatorSpec::Tensor { outer, inner } => prefixed("outer", outer).chain(prefixed("inner", inner)).collect(),
            OperatorSpec::Bivariate { first, second } => ["zeta".to_string(), "rho".to_string()]
                .into_iter()
                .chain(prefixed("first", first))
                .chain(prefixed("second", second))
                .collect(),
            OperatorSpec::Replicate { base, .. } => base.param_names(),
        }
    }

    pub fn transforms(&self) -> Vec<Transform> {
        match self {
            OperatorSpec::Ar1 { .. } => vec![Transform::StationaryLogit],
            OperatorSpec::Rw { .. } => vec![],
            OperatorSpec::Ou { .. } | OperatorSpec::Matern { .. } => vec![Transform::Log],
            OperatorSpec::AdvDiff { .. } => vec![Transform::Log, Transform::Identity, Transform::Log],
            OperatorSpec::Tensor { outer, inner } => {
                let mut t = outer.transforms();
                t.extend(inner.transforms());
                t
            }
            OperatorSpec::Bivariate { first, second } => {
                let mut t = vec![Transform::Identity, Transform::Identity];
                t.extend(first.transforms());
                t.extend(second.transforms());
                t
            }
            OperatorSpec::Replicate { base, .. } => base.transforms(),
        }
    }

    pub fn n_params(&self) -> usize {
        match self {
            OperatorSpec::Ar1 { .. } | OperatorSpec::Ou { .. } | OperatorSpec::Matern { .. } => 1,
            OperatorSpec::Rw { .. } => 0,
            OperatorSpec::AdvDiff { .. } => 3,
            OperatorSpec::Tensor { outer, inner } => outer.n_params() + inner.n_params(),
            OperatorSpec::Bivariate { first, second } => 2 + first.n_params() + second.n_params(),
            OperatorSpec::Replicate { base, .. } => base.n_params(),
        }
    }

    /// Row and column counts of `K`.
    pub fn shape(&self) -> (usize, usize) {
        match self {
            OperatorSpec::Ar1 { n } => (*n, *n),
            OperatorSpec::Rw { order, mesh, pinned } => {
                let n = mesh.len();
                (if *pinned { n } else { n.saturating_sub(*order) }, n)
            }
            OperatorSpec::Ou { mesh } | OperatorSpec::Matern { mesh } => (mesh.len(), mesh.len()),
            OperatorSpec::AdvDiff { mesh, steps } => (mesh.len() * steps, mesh.len() * steps),
            OperatorSpec::Tensor { outer, inner } => {
                let (a, b) = outer.shape();
                let (c, d) = inner.shape();
                (a * c, b * d)
            }
            OperatorSpec::Bivariate { first, second } => {
                let (a, b) = first.shape();
                let (c, d) = second.shape();
                (a + c, b + d)
            }
            OperatorSpec::Replicate { base, copies } => {
                let (a, b) = base.shape();
                (a * copies, b * copies)
            }
        }
    }

    pub fn is_square(&self) -> bool {
        let (r, c) = self.shape();
        r == c
    }

    /// Evaluates the operator at natural-scale parameter values.
    pub fn build(&self, values: &[f64]) -> Result<LatentOperator> {
        if values.len() != self.n_params() {
            return Err(Error::Input(format!(
                "{} operator takes {} parameters, got {}",
                self.kind(),
                self.n_params(),
                values.len()
            )));
        }
        let (k, h, dk) = self.evaluate(values)?;
        Ok(LatentOperator { spec: self.clone(), values: values.to_vec(), names: self.param_names(), k, h, dk })
    }

    fn evaluate(&self, v: &[f64]) -> Result<(SparseMatrix, Vec<f64>, Vec<SparseMatrix>)> {
        match self {
            OperatorSpec::Ar1 { n } => ar1_parts(v[0], *n),
            OperatorSpec::Rw { order, mesh, pinned } => rw_parts(*order, mesh, *pinned),
            OperatorSpec::Ou { mesh } => ou_parts(v[0], mesh),
            OperatorSpec::Matern { mesh } => matern_parts(v[0], mesh),
            OperatorSpec::AdvDiff { mesh, steps } => advdiff_parts(v[0], v[1], v[2], mesh, *steps),
            OperatorSpec::Tensor { outer, inner } => {
                if !outer.is_square() || !inner.is_square() {
                    return Err(Error::UnsupportedComposition("tensor products need square operators".into()));
                }
                let no = outer.n_params();
                let (ko, ho, dko) = outer.evaluate(&v[..no])?;
                let (ki, hi, dki) = inner.evaluate(&v[no..])?;
                let k = ko.kron(&ki);
                let h = ho.iter().flat_map(|a| hi.iter().map(move |b| a * b)).collect();
                let mut dk: Vec<SparseMatrix> = dko.iter().map(|d| d.kron(&ki)).collect();
                dk.extend(dki.iter().map(|d| ko.kron(d)));
                Ok((k, h, dk))
            }
            OperatorSpec::Bivariate { first, second } => {
                if !first.is_square() || !second.is_square() {
                    return Err(Error::UnsupportedComposition("bivariate operators need square components".into()));
                }
                if first.shape() != second.shape() {
                    return Err(Error::Input(format!(
                        "bivariate components differ in dimension: {:?} vs {:?}",
                        first.shape(),
                        second.shape()
                    )));
                }
                let (zeta, rho) = (v[0], v[1]);
                if !zeta.is_finite() || !rho.is_finite() {
                    return Err(Error::Domain("zeta and rho must be finite".into()));
                }
                let n1 = first.n_params();
                let (k1, h1, dk1) = first.evaluate(&v[2..2 + n1])?;
                let (k2, h2, dk2) = second.evaluate(&v[2 + n1..])?;
                let (s, c) = zeta.sin_cos();
                let r = (1.0 + rho * rho).sqrt();
                let d = [[c + rho * s, -s * r], [s - rho * c, c * r]];
                let d_zeta = [[-s + rho * c, -c * r], [c + rho * s, -s * r]];
                let d_rho = [[s, -s * rho / r], [-c, c * rho / r]];
                let z1 = k1.scale(0.0);
                let z2 = k2.scale(0.0);
                let k = bivariate_blocks(&d, &k1, &k2);
                let mut dk = vec![bivariate_blocks(&d_zeta, &k1, &k2), bivariate_blocks(&d_rho, &k1, &k2)];
                dk.extend(dk1.iter().map(|m| bivariate_blocks(&d, m, &z2)));
                dk.extend(dk2.iter().map(|m| bivariate_blocks(&d, &z1, m)));
                let h = h1.into_iter().chain(h2).collect();
                Ok((k, h, dk))
            }
            OperatorSpec::Replicate { base, copies } => {
                if *copies == 0 {
                    return Err(Error::Input("replicate needs at least one copy".into()));
                }
                let (k0, h0, dk0) = base.evaluate(v)?;
                let eye = SparseMatrix::identity(*copies);
                let k = eye.kron(&k0);
                let h = (0..*copies).flat_map(|_| h0.iter().copied()).collect();
                let dk = dk0.iter().map(|d| eye.kron(d)).collect();
                Ok((k, h, dk))
            }
        }
    }
}

/// `[[d00 A, d01 B], [d10 A, d11 B]]` with the full block pattern kept.
fn bivariate_blocks(d: &[[f64; 2]; 2], a: &SparseMatrix, b: &SparseMatrix) -> SparseMatrix {
    let n = a.nrows();
    let mut trip = Vec::with_capacity(2 * (a.nnz() + b.nnz()));
    for (bi, row) in d.iter().enumerate() {
        for (i, j, x) in a.triplets() {
            trip.push((bi * n + i, j, row[0] * x));
        }
        for (i, j, x) in b.triplets() {
            trip.push((bi * n + i, n + j, row[1] * x));
        }
    }
    SparseMatrix::from_triplets(2 * n, 2 * n, trip)
}

type Parts = Result<(SparseMatrix, Vec<f64>, Vec<SparseMatrix>)>;

fn ar1_parts(phi: f64, n: usize) -> Parts {
    if !(phi.abs() < 1.0) {
        return Err(Error::Domain(format!("AR(1) coefficient must lie in (-1, 1), got {phi}")));
    }
    if n == 0 {
        return Err(Error::Input("AR(1) needs at least one time point".into()));
    }
    let s = (1.0 - phi * phi).sqrt();
    let mut k = vec![(0, 0, s)];
    let mut dk = vec![(0, 0, -phi / s)];
    for i in 1..n {
        k.push((i, i - 1, -phi));
        k.push((i, i, 1.0));
        dk.push((i, i - 1, -1.0));
    }
    Ok((SparseMatrix::from_triplets(n, n, k), vec![1.0; n], vec![SparseMatrix::from_triplets(n, n, dk)]))
}

fn rw_parts(order: usize, mesh: &Mesh1D, pinned: bool) -> Parts {
    if order != 1 && order != 2 {
        return Err(Error::Input(format!("random walk order must be 1 or 2, got {order}")));
    }
    let n = mesh.len();
    if n < order + 1 {
        return Err(Error::Input(format!("RW{order} needs at least {} nodes, got {n}", order + 1)));
    }
    let x = mesh.nodes();
    let mut trip = Vec::new();
    let mut h = Vec::new();
    let offset = if pinned { order } else { 0 };
    if pinned {
        for i in 0..order {
            trip.push((i, i, 1.0));
            h.push(1.0);
        }
    }
    for r in 0..n - order {
        let row = offset + r;
        if order == 1 {
            trip.extend([(row, r, -1.0), (row, r + 1, 1.0)]);
        } else {
            trip.extend([(row, r, 1.0), (row, r + 1, -2.0), (row, r + 2, 1.0)]);
        }
        h.push(x[r + order] - x[r + order - 1]);
    }
    let rows = h.len();
    Ok((SparseMatrix::from_triplets(rows, n, trip), h, vec![]))
}

fn ou_parts(theta: f64, mesh: &Mesh1D) -> Parts {
    if !(theta > 0.0 && theta.is_finite()) {
        return Err(Error::Domain(format!("OU rate must be positive, got {theta}")));
    }
    let n = mesh.len();
    let steps = mesh.steps();
    let rho: Vec<f64> = steps.iter().map(|d| (-theta * d).exp()).collect();
    let s = (1.0 - rho[0] * rho[0]).sqrt();
    let mut k = vec![(0, 0, s)];
    let mut dk = vec![(0, 0, steps[0] * rho[0] * rho[0] / s)];
    for i in 1..n {
        k.push((i, i - 1, -rho[i - 1]));
        k.push((i, i, 1.0));
        dk.push((i, i - 1, steps[i - 1] * rho[i - 1]));
    }
    let mut h = vec![steps[0]];
    h.extend_from_slice(&steps);
    Ok((SparseMatrix::from_triplets(n, n, k), h, vec![SparseMatrix::from_triplets(n, n, dk)]))
}

fn matern_parts(kappa: f64, mesh: &Mesh1D) -> Parts {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("Matérn kappa must be positive, got {kappa}")));
    }
    let fem = fem_matrices(mesh, 0.0);
    let k = fem.c_lumped.linear_combination(kappa * kappa, &fem.g, 1.0);
    let dk = fem.c_lumped.scale(2.0 * kappa);
    Ok((k, mesh.weights().to_vec(), vec![dk]))
}

fn advdiff_parts(kappa: f64, gamma: f64, c: f64, mesh: &Mesh1D, steps: usize) -> Parts {
    if !(kappa > 0.0 && kappa.is_finite()) {
        return Err(Error::Domain(format!("advection-diffusion kappa must be positive, got {kappa}")));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::Domain(format!("advection-diffusion c must be positive, got {c}")));
    }
    if !gamma.is_finite() {
        return Err(Error::Domain("advection-diffusion gamma must be finite".into()));
    }
    if steps < 2 {
        return Err(Error::Input(format!("advection-diffusion needs at least 2 time points, got {steps}")));
    }
    let n = mesh.len();
    let fem = fem_matrices(mesh, 1.0);
    let (cm, g, b1) = (&fem.c_lumped, &fem.g, &fem.b);
    let sc = c.sqrt();
    // L = κ²C + G + γB, on the union pattern of C, G and B.
    let l = cm.linear_combination(kappa * kappa, g, 1.0).linear_combination(1.0, b1, gamma);
    let diag = cm.linear_combination(sc, &l, 1.0 / sc);
    let sub = cm.scale(-sc);
    let d_kappa = cm.scale(2.0 * kappa / sc);
    let d_gamma = b1.scale(1.0 / sc);
    let d_c_diag = cm.linear_combination(0.5 / sc, &l, -0.5 / (c * sc));
    let d_c_sub = cm.scale(-0.5 / sc);
    let zero_sub = cm.scale(0.0);
    let assemble = |diag: &SparseMatrix, sub: &SparseMatrix| {
        let mut trip = Vec::new();
        for t in 0..steps {
            for (i, j, x) in diag.triplets() {
                trip.push((t * n + i, t * n + j, x));
            }
            if t > 0 {
                for (i, j, x) in sub.triplets() {
                    trip.push((t * n + i, (t - 1) * n + j, x));
                }
            }
        }
        SparseMatrix::from_triplets(n * steps, n * steps, trip)
    };
    let k = assemble(&diag, &sub);
    let dk = vec![assemble(&d_kappa, &zero_sub), assemble(&d_gamma, &zero_sub), assemble(&d_c_diag, &d_c_sub)];
    let h = (0..steps).flat_map(|_| mesh.weights().iter().copied()).collect();
    Ok((k, h, dk))
}

/// A latent operator evaluated at specific parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentOperator {
    spec: OperatorSpec,
    values: Vec<f64>,
    names: Vec<String>,
    k: SparseMatrix,
    h: Vec<f64>,
    dk: Vec<SparseMatrix>,
}

impl LatentOperator {
    pub fn spec(&self) -> &OperatorSpec {
        &self.spec
    }

    pub fn kind(&self) -> &'static str {
        self.spec.kind()
    }

    pub fn k(&self) -> &SparseMatrix {
        &self.k
    }

    pub fn h(&self) -> &[f64] {
        &self.h
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[f64] {
        &self.values
    }

    pub fn transforms(&self) -> Vec<Transform> {
        self.spec.transforms()
    }

    /// `∂K/∂θ_i` for every parameter slot, in slot order.
    pub fn derivatives(&self) -> &[SparseMatrix] {
        &self.dk
    }

    pub fn nrows(&self) -> usize {
        self.k.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.k.ncols()
    }

    pub fn is_square(&self) -> bool {
        self.k.is_square()
    }

    /// Rebuilds the operator at new parameter values.
    pub fn with_params(&self, values: &[f64]) -> Result<Self> {
        self.spec.build(values)
    }

    /// Parameter value by slot name.
    pub fn param(&self, name: &str) -> Result<f64> {
        self.slot(name).map(|i| self.values[i])
    }

    fn slot(&self, name: &str) -> Result<usize> {
        self.names.iter().position(|n| n == name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }
}

/// `∂K/∂θ` for the named parameter at the operator's current values.
pub fn operator_dtheta<'a>(op: &'a LatentOperator, name: &str) -> Result<&'a SparseMatrix> {
    op.slot(name).map(|i| &op.dk[i])
}

pub fn ar1_operator(phi: f64, t: usize) -> Result<LatentOperator> {
    OperatorSpec::Ar1 { n: t }.build(&[phi])
}

pub fn rw_operator(order: usize, mesh: &Mesh1D) -> Result<LatentOperator> {
    OperatorSpec::Rw { order, mesh: mesh.clone(), pinned: false }.build(&[])
}

/// Random walk with the first `order` nodes pinned by identity rows, giving
/// a square invertible operator suitable for fitting.
pub fn pinned_rw_operator(order: usize, mesh: &Mesh1D) -> Result<LatentOperator> {
    OperatorSpec::Rw { order, mesh: mesh.clone(), pinned: true }.build(&[])
}

pub fn ou_operator(theta: f64, mesh: &Mesh1D) -> Result<LatentOperator> {
    OperatorSpec::Ou { mesh: mesh.clone() }.build(&[theta])
}

pub fn matern_operator(kappa: f64, mesh: &Mesh1D) -> Result<LatentOperator> {
    OperatorSpec::Matern { mesh: mesh.clone() }.build(&[kappa])
}

pub fn advdiff_operator(kappa: f64, gamma: f64, c: f64, mesh: &Mesh1D, t: usize) -> Result<LatentOperator> {
    OperatorSpec::AdvDiff { mesh: mesh.clone(), steps: t }.build(&[kappa, gamma, c])
}

pub fn tensor_operator(outer: &LatentOperator, inner: &LatentOperator) -> Result<LatentOperator> {
    let spec = OperatorSpec::Tensor { outer: Box::new(outer.spec.clone()), inner: Box::new(inner.spec.clone()) };
    let values: Vec<f64> = outer.values.iter().chain(&inner.values).copied().collect();
    spec.build(&values)
}

pub fn bivariate_operator(
    first: &LatentOperator,
    second: &LatentOperator,
    zeta: f64,
    rho: f64,
) -> Result<LatentOperator> {
    let spec = OperatorSpec::Bivariate { first: Box::new(first.spec.clone()), second: Box::new(second.spec.clone()) };
    let mut values = vec![zeta, rho];
    values.extend(&first.values);
    values.extend(&second.values);
    spec.build(&values)
}

pub fn replicate_operator(op: &LatentOperator, copies: usize) -> Result<LatentOperator> {
    OperatorSpec::Replicate { base: Box::new(op.spec.clone()), copies }.build(&op.values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_interval_mesh;
    use nalgebra::DMatrix;

    fn dense(rows: usize, cols: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(rows, cols, v)
    }

    fn assert_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        let d = (a - b).amax();
        assert!(d <= tol, "max difference {d}\n{a}\n{b}");
    }

    #[test]
    fn ar1_matrices() {
        assert_close(&ar1_operator(0.0, 3).unwrap().k().to_dense(), &DMatrix::identity(3, 3), 0.0);
        let op = ar1_operator(0.8, 3).unwrap();
        let want = dense(3, 3, &[0.6, 0.0, 0.0, -0.8, 1.0, 0.0, 0.0, -0.8, 1.0]);
        assert_close(&op.k().to_dense(), &want, 1e-15);
        assert_eq!(op.h(), &[1.0; 3]);
        // Explicit zeros keep the pattern when φ = 0.
        assert_eq!(ar1_operator(0.0, 3).unwrap().k().nnz(), op.k().nnz());
        assert!(matches!(ar1_operator(1.0, 3), Err(Error::Domain(_))));
    }

    #[test]
    fn ar1_stationary_first_variance() {
        let op = ar1_operator(0.8, 4).unwrap();
        let k = op.k().to_dense();
        let cov = (k.transpose() * &k).try_inverse().unwrap();
        assert!((cov[(0, 0)] - 1.0 / 0.36).abs() < 1e-12);
        assert!((cov[(3, 3)] - 1.0 / 0.36).abs() < 1e-12);
    }

    #[test]
    fn random_walk_matrices() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap();
        let op = rw_operator(1, &m).unwrap();
        assert_close(&op.k().to_dense(), &dense(2, 3, &[-1.0, 1.0, 0.0, 0.0, -1.0, 1.0]), 0.0);
        assert_eq!(op.h(), &[1.0, 1.0]);
        assert!(op.k().mul_vec(&[2.5; 3]).iter().all(|&v| v == 0.0));
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let op = rw_operator(2, &m).unwrap();
        let want = dense(2, 4, &[1.0, -2.0, 1.0, 0.0, 0.0, 1.0, -2.0, 1.0]);
        assert_close(&op.k().to_dense(), &want, 0.0);
        let pinned = pinned_rw_operator(2, &m).unwrap();
        assert!(pinned.is_square());
        assert!((pinned.k().to_dense().determinant() - 1.0).abs() < 1e-12);
        let short = build_interval_mesh(vec![0.0, 1.0]).unwrap();
        assert!(rw_operator(2, &short).is_err());
    }

    #[test]
    fn ou_matrices() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap();
        let op = ou_operator(1.0, &m).unwrap();
        let e = (-1.0f64).exp();
        assert!((op.k().get(1, 0) + e).abs() < 1e-15);
        assert!((op.k().get(2, 1) + e).abs() < 1e-15);
        let m = build_interval_mesh(vec![0.0, 0.5, 2.0]).unwrap();
        let op = ou_operator(1.0, &m).unwrap();
        assert!((op.k().get(1, 0) + (-0.5f64).exp()).abs() < 1e-15);
        assert!((op.k().get(2, 1) + (-1.5f64).exp()).abs() < 1e-15);
        assert_eq!(op.h(), &[0.5, 0.5, 1.5]);
        let fast = ou_operator(60.0, &build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap()).unwrap();
        assert_close(&fast.k().to_dense(), &DMatrix::identity(3, 3), 1e-12);
    }

    #[test]
    fn matern_matrices() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap();
        let op = matern_operator(1.0, &m).unwrap();
        let want = dense(3, 3, &[1.5, -1.0, 0.0, -1.0, 3.0, -1.0, 0.0, -1.0, 1.5]);
        assert_close(&op.k().to_dense(), &want, 1e-15);
        let op = matern_operator(2.0, &m).unwrap();
        let dk = operator_dtheta(&op, "kappa").unwrap().to_dense();
        assert_close(&dk, &DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 4.0, 2.0])), 0.0);
        assert!(matches!(operator_dtheta(&op, "nope"), Err(Error::UnknownParameter(_))));
    }

    #[test]
    fn compositions() {
        let m = build_interval_mesh(vec![0.0, 1.0, 2.0]).unwrap();
        let space = matern_operator(1.3, &m).unwrap();
        let time = ar1_operator(0.0, 2).unwrap();
        let t = tensor_operator(&time, &space).unwrap();
        let ks = space.k().to_dense();
        let mut bd = DMatrix::zeros(6, 6);
        bd.view_mut((0, 0), (3, 3)).copy_from(&ks);
        bd.view_mut((3, 3), (3, 3)).copy_from(&ks);
        assert_close(&t.k().to_dense(), &bd, 1e-15);
        assert_eq!(t.h(), &[0.5, 1.0, 0.5, 0.5, 1.0, 0.5]);
        assert_eq!(t.param_names(), &["outer.rho".to_string(), "inner.kappa".to_string()]);

        let r = replicate_operator(&space, 2).unwrap();
        assert_close(&r.k().to_dense(), &bd, 0.0);
        assert_eq!(r.param_names(), space.param_names());

        let b = bivariate_operator(&space, &space, 0.0, 0.0).unwrap();
        assert_close(&b.k().to_dense(), &bd, 0.0);
        let b = bivariate_operator(&space, &space, std::f64::consts::FRAC_PI_2, 0.0).unwrap();
        let kb = b.k().to_dense();
        assert_close(&kb.view((0, 3), (3, 3)).into_owned(), &(-&ks), 1e-15);
        assert_close(&kb.view((3, 0), (3, 3)).into_owned(), &ks, 1e-15);
        assert!(kb.view((0, 0), (3, 3)).amax() < 1e-15);

        let rect = rw_operator(1, &m).unwrap();
        assert!(matches!(tensor_operator(&rect, &space), Err(Error::UnsupportedComposition(_))));
        let other = matern_operator(1.0, &build_interval_mesh(vec![0.0, 1.0]).unwrap()).unwrap();
        assert!(matches!(bivariate_operator(&space, &other, 0.1, 0.1), Err(Error::Input(_))));
    }

    #[test]
    fn advdiff_blocks() {
        let m = build_interval_mesh(vec![0.0, 1.0]).unwrap();
        let op = advdiff_operator(1.0, 0.0, 4.0, &m, 2).unwrap();
        // C = diag(0.5, 0.5), G = [[1,-1],[-1,1]], L = C + G.
        let c = dense(2, 2, &[0.5, 0.0, 0.0, 0.5]);
        let g = dense(2, 2, &[1.0, -1.0, -1.0, 1.0]);
        let diag = &c * 2.0 + (&c + &g) * 0.5;
        let k = op.k().to_dense();
        assert_close(&k.view((0, 0), (2, 2)).into_owned(), &diag, 1e-15);
        assert_close(&k.view((2, 2), (2, 2)).into_owned(), &diag, 1e-15);
        assert_close(&k.view((2, 0), (2, 2)).into_owned(), &(&c * -2.0), 1e-15);
        assert!(k.view((0, 2), (2, 2)).amax() == 0.0);
        assert_eq!(op.h(), &[0.5, 0.5, 0.5, 0.5]);
    }

    fn check_derivatives(op: &LatentOperator) {
        let base = op.params().to_vec();
        for (i, name) in op.param_names().iter().enumerate() {
            let step = 1e-6 * base[i].abs().max(1.0);
            let mut up = base.clone();
            let mut dn = base.clone();
            up[i] += step;
            dn[i] -= step;
            let fd = (op.with_params(&up).unwrap().k().to_dense() - op.with_params(&dn).unwrap().k().to_dense())
                / (2.0 * step);
            let an = operator_dtheta(op, name).unwrap().to_dense();
            let scale = an.amax().max(1.0);
            assert!((fd - &an).amax() < 1e-7 * scale, "{} / {name}", op.kind());
            assert!(operator_dtheta(op, name).unwrap().pattern_within(op.k()), "{name}");
        }
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let m = build_interval_mesh(vec![0.0, 0.4, 1.1, 1.5, 2.6]).unwrap();
        let ar = ar1_operator(0.5, 4).unwrap();
        let mat = matern_operator(1.7, &m).unwrap();
        check_derivatives(&ar);
        check_derivatives(&ou_operator(0.8, &m).unwrap());
        check_derivatives(&mat);
        check_derivatives(&advdiff_operator(1.2, 0.7, 1.9, &m, 3).unwrap());
        check_derivatives(&tensor_operator(&ar, &mat).unwrap());
        check_derivatives(&bivariate_operator(&mat, &matern_operator(0.6, &m).unwrap(), 0.9, -0.4).unwrap());
        check_derivatives(&replicate_operator(&ar, 3).unwrap());
    }
}
