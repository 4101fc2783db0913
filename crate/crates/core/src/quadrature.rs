//! Gauss–Legendre rules used for exact integration of piecewise polynomials.

use std::num::NonZeroUsize;

use gauss_quad::legendre::GaussLegendre;

/// Nodes and weights of the `q`-point Gauss–Legendre rule on `[-1, 1]`.
///
/// Exact for polynomials of degree `2q - 1`.
pub fn gauss_legendre(q: usize) -> (Vec<f64>, Vec<f64>) {
    let q = NonZeroUsize::new(q).expect("quadrature needs at least one node");
    GaussLegendre::new(q).as_node_weight_pairs().iter().copied().unzip()
}

/// Gauss–Legendre rule mapped onto `[a, b]`.
pub fn gauss_legendre_on(q: usize, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> {
    let (nodes, weights) = gauss_legendre(q);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .into_iter()
        .zip(weights)
        .map(move |(x, w)| (mid + half * x, half * w))
}
