//! B-spline basis systems on a closed interval.
//!
//! A [`BSplineBasis`] is described by its domain, its order (degree + 1) and
//! its interior knots. Boundary knots are repeated `order` times, so the
//! basis interpolates at both ends and forms a partition of unity. The
//! order-1 basis without interior knots is the constant function 1.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quadrature::gauss_legendre_on;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "BasisSpec", into = "BasisSpec")]
pub struct BSplineBasis {
    lower: f64,
    upper: f64,
    order: usize,
    interior_knots: Vec<f64>,
    knots: Vec<f64>,
}

/// Serialized form of a basis; validated on the way in.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisSpec {
    pub domain: [f64; 2],
    pub order: usize,
    pub interior_knots: Vec<f64>,
}

impl TryFrom<BasisSpec> for BSplineBasis {
    type Error = Error;

    fn try_from(spec: BasisSpec) -> Result<Self> {
        BSplineBasis::new(spec.domain[0], spec.domain[1], spec.order, spec.interior_knots)
    }
}

impl From<BSplineBasis> for BasisSpec {
    fn from(b: BSplineBasis) -> Self {
        BasisSpec {
            domain: [b.lower, b.upper],
            order: b.order,
            interior_knots: b.interior_knots,
        }
    }
}

impl BSplineBasis {
    pub fn new(lower: f64, upper: f64, order: usize, interior_knots: Vec<f64>) -> Result<Self> {
        if !(lower.is_finite() && upper.is_finite()) || lower >= upper {
            return Err(Error::InvalidBasis(format!(
                "domain [{lower}, {upper}] is not a proper finite interval"
            )));
        }
        if order == 0 {
            return Err(Error::InvalidBasis("order must be at least 1".into()));
        }
        for w in interior_knots.windows(2) {
            if w[1] < w[0] {
                return Err(Error::InvalidBasis("interior knots must be nondecreasing".into()));
            }
        }
        if let Some(k) = interior_knots.iter().find(|&&k| !(k > lower && k < upper)) {
            return Err(Error::InvalidBasis(format!(
                "interior knot {k} is not strictly inside ({lower}, {upper})"
            )));
        }
        // A knot repeated more than `order` times would create an empty basis function.
        let mut run = 1;
        for w in interior_knots.windows(2) {
            run = if w[0] == w[1] { run + 1 } else { 1 };
            if run > order {
                return Err(Error::InvalidBasis(format!(
                    "knot {} has multiplicity above the order {order}",
                    w[0]
                )));
            }
        }
        let mut knots = Vec::with_capacity(interior_knots.len() + 2 * order);
        knots.extend(std::iter::repeat_n(lower, order));
        knots.extend_from_slice(&interior_knots);
        knots.extend(std::iter::repeat_n(upper, order));
        Ok(Self {
            lower,
            upper,
            order,
            interior_knots,
            knots,
        })
    }

    /// Basis with `n_basis` functions and equally spaced interior knots.
    pub fn uniform(lower: f64, upper: f64, order: usize, n_basis: usize) -> Result<Self> {
        if n_basis < order {
            return Err(Error::InvalidBasis(format!(
                "n_basis {n_basis} is smaller than the order {order}"
            )));
        }
        let n_interior = n_basis - order;
        let step = (upper - lower) / (n_interior + 1) as f64;
        let knots = (1..=n_interior).map(|k| lower + k as f64 * step).collect();
        Self::new(lower, upper, order, knots)
    }

    /// Constant basis `{1}` on `[lower, upper]`.
    pub fn constant(lower: f64, upper: f64) -> Result<Self> {
        Self::new(lower, upper, 1, Vec::new())
    }

    /// Cubic (or lower-order, when `n_basis < 4`) basis with `n_basis` functions.
    pub fn cubic_or_lower(lower: f64, upper: f64, n_basis: usize) -> Result<Self> {
        if n_basis == 0 {
            return Err(Error::InvalidBasis("n_basis must be at least 1".into()));
        }
        Self::uniform(lower, upper, n_basis.min(4), n_basis)
    }

    pub fn domain(&self) -> (f64, f64) {
        (self.lower, self.upper)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn interior_knots(&self) -> &[f64] {
        &self.interior_knots
    }

    /// Full open knot vector.
    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    pub fn n_basis(&self) -> usize {
        self.order + self.interior_knots.len()
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.lower && s <= self.upper
    }

    fn check_domain(&self, s: f64) -> Result<()> {
        if self.contains(s) {
            Ok(())
        } else {
            Err(Error::Domain {
                value: s,
                lower: self.lower,
                upper: self.upper,
            })
        }
    }

    /// Knot span index `i` with `knots[i] <= s < knots[i + 1]`; the right
    /// endpoint belongs to the last nonempty span.
    fn span(&self, s: f64) -> usize {
        let last = self.n_basis() - 1;
        if s >= self.upper {
            return last;
        }
        let p = self.order - 1;
        // largest i in [p, last] with knots[i] <= s
        let (mut lo, mut hi) = (p, last);
        while lo < hi {
            let mid = (lo + hi).div_ceil(2);
            if self.knots[mid] <= s {
                lo = mid;
            } else {
                hi = mid - 1;
            }
        }
        lo
    }

    /// Index of the first nonzero function and the `order` local values at `s`.
    fn local_values(&self, s: f64) -> (usize, Vec<f64>) {
        let k = self.order;
        let i = self.span(s);
        let mut n = vec![0.0; k];
        let mut left = vec![0.0; k];
        let mut right = vec![0.0; k];
        n[0] = 1.0;
        for j in 1..k {
            left[j] = s - self.knots[i + 1 - j];
            right[j] = self.knots[i + j] - s;
            let mut saved = 0.0;
            for r in 0..j {
                let temp = n[r] / (right[r + 1] + left[j - r]);
                n[r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            n[j] = saved;
        }
        (i + 1 - k, n)
    }

    /// All basis function values at `s`.
    pub fn evaluate(&self, s: f64) -> Result<DVector<f64>> {
        self.check_domain(s)?;
        let (first, local) = self.local_values(s);
        let mut out = DVector::zeros(self.n_basis());
        for (r, v) in local.into_iter().enumerate() {
            out[first + r] = v;
        }
        Ok(out)
    }

    /// Basis matrix with one row per point.
    pub fn evaluate_many(&self, points: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(points.len(), self.n_basis());
        for (row, &s) in points.iter().enumerate() {
            self.check_domain(s)?;
            let (first, local) = self.local_values(s);
            for (r, v) in local.into_iter().enumerate() {
                out[(row, first + r)] = v;
            }
        }
        Ok(out)
    }

    /// L2 inner products `∫ φ_k φ_l` over the domain.
    ///
    /// Integrates each knot interval with an `order`-point Gauss–Legendre
    /// rule, which is exact for the degree `2(order - 1)` products.
    pub fn gram_matrix(&self) -> DMatrix<f64> {
        let m = self.n_basis();
        let mut gram = DMatrix::zeros(m, m);
        for w in self.knots.windows(2) {
            let (a, b) = (w[0], w[1]);
            if b <= a {
                continue;
            }
            for (s, weight) in gauss_legendre_on(self.order, a, b) {
                let (first, local) = self.local_values(s);
                for (r, vr) in local.iter().enumerate() {
                    for (c, vc) in local.iter().enumerate() {
                        gram[(first + r, first + c)] += weight * vr * vc;
                    }
                }
            }
        }
        // exact symmetry regardless of accumulation order
        for r in 0..m {
            for c in (r + 1)..m {
                let v = 0.5 * (gram[(r, c)] + gram[(c, r)]);
                gram[(r, c)] = v;
                gram[(c, r)] = v;
            }
        }
        gram
    }

    /// Inner products `∫ φ_k(s) ψ_l(s) ds` against another basis on the same domain.
    pub fn cross_gram(&self, other: &BSplineBasis) -> Result<DMatrix<f64>> {
        if self.domain() != other.domain() {
            return Err(Error::InvalidBasis("cross Gram needs identical domains".into()));
        }
        let mut breaks: Vec<f64> = self.knots.iter().chain(other.knots.iter()).copied().collect();
        breaks.sort_by(f64::total_cmp);
        breaks.dedup();
        let q = (self.order + other.order).div_ceil(2).max(1);
        let mut out = DMatrix::zeros(self.n_basis(), other.n_basis());
        for w in breaks.windows(2) {
            for (s, weight) in gauss_legendre_on(q, w[0], w[1]) {
                let a = self.evaluate(s)?;
                let b = other.evaluate(s)?;
                out += weight * &a * b.transpose();
            }
        }
        Ok(out)
    }
}

/// Longitudinal observations of one curve.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCurve {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl RawCurve {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} time points but {} values",
                times.len(),
                values.len()
            )));
        }
        if times.iter().chain(values.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("curve contains non-finite entries".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidInput("time points must be strictly increasing".into()));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// Least-squares basis coefficients of a raw curve.
pub fn smooth_curve(curve: &RawCurve, basis: &BSplineBasis) -> Result<DVector<f64>> {
    let m = basis.n_basis();
    let n_points = curve.len();
    let singular = Error::SingularFit { n_basis: m, n_points };
    if n_points < m {
        return Err(singular);
    }
    let phi = basis.evaluate_many(curve.times())?;
    let svd = phi.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smax <= 0.0 || smin <= smax * 1e-12 * n_points.max(m) as f64 {
        return Err(singular);
    }
    let y = DVector::from_column_slice(curve.values());
    svd.solve(&y, 0.0).map_err(|_| Error::SingularFit { n_basis: m, n_points })
}
