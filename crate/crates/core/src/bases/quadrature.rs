//! Gauss rules from the Golub–Welsch eigenvalue problem.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{invalid, Result};

/// Nodes and weights, nodes ascending.
#[derive(Clone, Debug)]
pub struct Quadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Quadrature {
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }
}

fn golub_welsch(off_diagonal: impl Fn(usize) -> f64, n: usize, mass: f64) -> Quadrature {
    let mut jacobi = DMatrix::zeros(n, n);
    for k in 1..n {
        let b = off_diagonal(k);
        jacobi[(k - 1, k)] = b;
        jacobi[(k, k - 1)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|j| {
            let v0 = eig.eigenvectors[(0, j)];
            (eig.eigenvalues[j], mass * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    Quadrature {
        nodes: pairs.iter().map(|p| p.0).collect(),
        weights: pairs.iter().map(|p| p.1).collect(),
    }
}

/// `n`-point Gauss–Legendre rule on `[-1, 1]`, exact to degree `2n − 1`.
pub fn gauss_legendre(n: usize) -> Result<Quadrature> {
    if n == 0 {
        return Err(invalid("n", "a quadrature rule needs at least one node"));
    }
    Ok(golub_welsch(
        |k| {
            let k = k as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        },
        n,
        2.0,
    ))
}

/// `n`-point Gauss–Hermite rule for the standard normal density.
pub fn gauss_hermite(n: usize) -> Result<Quadrature> {
    if n == 0 {
        return Err(invalid("n", "a quadrature rule needs at least one node"));
    }
    Ok(golub_welsch(|k| (k as f64).sqrt(), n, 1.0))
}
