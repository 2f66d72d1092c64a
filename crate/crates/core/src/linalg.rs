//! Dense Hermitian helpers: Hamiltonian assembly, eigendecomposition, exact
//! segment propagators. Used where per-segment exactness beats splitting
//! (Monte Carlo slice caching, Redfield eigenbasis work, positivity checks).

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::model::CostVector;

/// H(g) = g·C + (1-g)·B as a dense matrix; B = -Σσ^x has -1 entries between
/// labels differing in one bit.
pub fn dense_hamiltonian(cv: &CostVector, g: f64) -> DMatrix<Complex64> {
    let dim = cv.dim();
    let mut h = DMatrix::zeros(dim, dim);
    for z in 0..dim {
        h[(z, z)] = Complex64::new(g * cv.values[z], 0.0);
        for k in 0..cv.n {
            h[(z, z ^ (1 << k))] = Complex64::new(-(1.0 - g), 0.0);
        }
    }
    h
}

pub struct Eigh {
    /// Ascending order.
    pub values: Vec<f64>,
    /// Column j is the eigenvector of values[j].
    pub vectors: DMatrix<Complex64>,
}

/// Hermitian eigendecomposition, sorted ascending.
pub fn eigh(m: &DMatrix<Complex64>) -> Result<Eigh> {
    let se = nalgebra::linalg::SymmetricEigen::try_new(m.clone(), f64::EPSILON, 0)
        .ok_or(Error::EigenFailure)?;
    let mut order: Vec<usize> = (0..se.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| se.eigenvalues[a].total_cmp(&se.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| se.eigenvalues[i]).collect();
    let dim = m.nrows();
    let mut vectors = DMatrix::zeros(dim, dim);
    for (col, &src) in order.iter().enumerate() {
        vectors.set_column(col, &se.eigenvectors.column(src));
    }
    Ok(Eigh { values, vectors })
}

/// Exact segment propagator e^{-iH(g)·dt} from the eigendecomposition.
pub fn propagator(cv: &CostVector, g: f64, dt: f64) -> Result<DMatrix<Complex64>> {
    let e = eigh(&dense_hamiltonian(cv, g))?;
    let phases: Vec<Complex64> =
        e.values.iter().map(|&l| Complex64::from_polar(1.0, -l * dt)).collect();
    let mut scaled = e.vectors.clone();
    for (j, &p) in phases.iter().enumerate() {
        let mut col = scaled.column_mut(j);
        col *= p;
    }
    Ok(scaled * e.vectors.adjoint())
}

/// Smallest eigenvalue of a Hermitian matrix (used for positivity checks).
pub fn min_eigenvalue(m: &DMatrix<Complex64>) -> Result<f64> {
    // Hermitize first: the input may carry integrator-level asymmetry.
    let sym = (m + m.adjoint()) * Complex64::new(0.5, 0.0);
    let e = eigh(&sym)?;
    Ok(e.values[0])
}

pub fn apply(u: &DMatrix<Complex64>, v: &[Complex64]) -> Vec<Complex64> {
    let x = DVector::from_column_slice(v);
    (u * x).as_slice().to_vec()
}
