//! B-spline/NURBS function spaces on a single patch, the mixed
//! velocity/pressure pair, quadrature, and the geometry mapping.
//!
//! Knot vectors are open and live on [0, 1]. The mixed pair follows the
//! smooth generalization of the Taylor-Hood element: the pressure space of
//! degree `p` is built at maximal interelement continuity (k-refinement)
//! and the velocity space raises the degree to `p + a` while lowering the
//! continuity by `b`, with `1 <= a` and `0 <= b < a`. Both spaces share one
//! element partition, which keeps all assembly loops aligned.

use crate::tensor::Tensor3;

/// Errors from space construction and evaluation.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SplineError {
    #[error("parametric coordinate {0} outside [0, 1]")]
    OutOfDomain(f64),
    #[error("knot vector must be non-decreasing (violated at position {0})")]
    NotSorted(usize),
    #[error("knot vector is not open: boundary knot multiplicity below degree + 1")]
    NotOpen,
    #[error("degree must be at least 1")]
    DegreeZero,
    #[error("need at least one element per direction")]
    NoElements,
    #[error("interior multiplicity {mult} exceeds degree {degree}")]
    MultiplicityTooHigh { mult: usize, degree: usize },
    #[error("mixed-space parameters violate 1 <= a (got a = {0})")]
    BadDegreeElevation(usize),
    #[error("mixed-space parameters violate 0 <= b < a (got b = {b}, a = {a})")]
    BadContinuityReduction { a: usize, b: usize },
    #[error("rational weight count {got} does not match basis dimension {want}")]
    WeightCount { got: usize, want: usize },
    #[error("control point count {got} does not match basis dimension {want}")]
    ControlPointCount { got: usize, want: usize },
    #[error("geometry Jacobian determinant {0} is not positive")]
    DegenerateGeometry(f64),
}

// ---------------------------------------------------------------------------
// Univariate spaces
// ---------------------------------------------------------------------------

/// Open knot vector on [0, 1] with its polynomial degree.
#[derive(Clone, Debug, PartialEq)]
pub struct KnotVector {
    degree: usize,
    knots: Vec<f64>,
}

impl KnotVector {
    /// Open knot vector with uniformly spaced interior breakpoints, each
    /// repeated `interior_multiplicity` times. Multiplicity 1 yields the
    /// maximal interelement regularity `degree - 1` (k-refinement).
    pub fn open_uniform(
        degree: usize,
        elements: usize,
        interior_multiplicity: usize,
    ) -> Result<Self, SplineError> {
        if degree == 0 {
            return Err(SplineError::DegreeZero);
        }
        if elements == 0 {
            return Err(SplineError::NoElements);
        }
        if interior_multiplicity == 0 || interior_multiplicity > degree {
            return Err(SplineError::MultiplicityTooHigh {
                mult: interior_multiplicity,
                degree,
            });
        }
        let mut knots = vec![0.0; degree + 1];
        for k in 1..elements {
            let breakpoint = k as f64 / elements as f64;
            knots.extend(std::iter::repeat(breakpoint).take(interior_multiplicity));
        }
        knots.extend(std::iter::repeat(1.0).take(degree + 1));
        Self::from_knots(degree, knots)
    }

    /// Validates an explicit open knot sequence on [0, 1].
    pub fn from_knots(degree: usize, knots: Vec<f64>) -> Result<Self, SplineError> {
        if degree == 0 {
            return Err(SplineError::DegreeZero);
        }
        for i in 1..knots.len() {
            if knots[i] < knots[i - 1] {
                return Err(SplineError::NotSorted(i));
            }
        }
        if knots.len() < 2 * (degree + 1)
            || knots[..=degree].iter().any(|&k| k != knots[0])
            || knots[knots.len() - degree - 1..].iter().any(|&k| k != knots[knots.len() - 1])
        {
            return Err(SplineError::NotOpen);
        }
        Ok(Self { degree, knots })
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn knots(&self) -> &[f64] {
        &self.knots
    }

    /// Number of basis functions.
    pub fn num_basis(&self) -> usize {
        self.knots.len() - self.degree - 1
    }

    /// Non-empty spans as (span index, lower knot, upper knot).
    pub fn spans(&self) -> Vec<(usize, f64, f64)> {
        (self.degree..self.num_basis())
            .filter(|&i| self.knots[i + 1] > self.knots[i])
            .map(|i| (i, self.knots[i], self.knots[i + 1]))
            .collect()
    }

    /// Greville abscissae (knot averages); coefficients placed at these
    /// points reproduce linear functions exactly.
    pub fn greville(&self) -> Vec<f64> {
        (0..self.num_basis())
            .map(|i| self.knots[i + 1..=i + self.degree].iter().sum::<f64>() / self.degree as f64)
            .collect()
    }

    /// Index of the knot span containing `u` (last non-empty span at u = 1).
    pub fn find_span(&self, u: f64) -> usize {
        let n = self.num_basis();
        if u >= self.knots[n] {
            // Clamp into the final non-empty span.
            let mut span = n - 1;
            while self.knots[span + 1] <= self.knots[span] {
                span -= 1;
            }
            return span;
        }
        let mut lo = self.degree;
        let mut hi = n;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if u < self.knots[mid] {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        lo
    }

    /// Values and first derivatives of the `degree + 1` basis functions that
    /// are nonzero on the span of `u`, plus the index of the first of them.
    pub fn eval(&self, u: f64) -> Result<(usize, Vec<f64>, Vec<f64>), SplineError> {
        if !(0.0..=1.0).contains(&u) {
            return Err(SplineError::OutOfDomain(u));
        }
        let span = self.find_span(u);
        let p = self.degree;
        let knots = &self.knots;

        // Triangular table of basis values for degrees 0..=p on this span.
        let mut ndu = vec![vec![0.0; p + 1]; p + 1];
        let mut left = vec![0.0; p + 1];
        let mut right = vec![0.0; p + 1];
        ndu[0][0] = 1.0;
        for j in 1..=p {
            left[j] = u - knots[span + 1 - j];
            right[j] = knots[span + j] - u;
            let mut saved = 0.0;
            for r in 0..j {
                let denom = right[r + 1] + left[j - r];
                let temp = ndu[j - 1][r] / denom;
                ndu[j][r] = saved + right[r + 1] * temp;
                saved = left[j - r] * temp;
            }
            ndu[j][j] = saved;
        }
        let values = ndu[p].clone();

        // First derivatives from the degree p-1 row:
        // N'_{i,p} = p (N_{i,p-1} / (t_{i+p} - t_i) - N_{i+1,p-1} / (t_{i+p+1} - t_{i+1})).
        let mut ders = vec![0.0; p + 1];
        let first = span - p;
        for (r, der) in ders.iter_mut().enumerate() {
            let i = first + r;
            let mut value = 0.0;
            // N_{i,p-1} lives at table position r-1 of the lower-degree row
            // (functions i .. i+p-1 are active there).
            if r > 0 {
                let denom = knots[i + p] - knots[i];
                if denom > 0.0 {
                    value += ndu[p - 1][r - 1] / denom;
                }
            }
            if r < p {
                let denom = knots[i + p + 1] - knots[i + 1];
                if denom > 0.0 {
                    value -= ndu[p - 1][r] / denom;
                }
            }
            *der = p as f64 * value;
        }
        Ok((first, values, ders))
    }
}

// ---------------------------------------------------------------------------
// Quadrature
// ---------------------------------------------------------------------------

/// Gauss-Legendre rule with `n` points, mapped to [0, 1]; exact for
/// polynomials of degree 2n - 1.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "quadrature needs at least one point");
    let mut points = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..n {
        // Newton iteration from the Chebyshev initial guess on [-1, 1].
        let mut x = (std::f64::consts::PI * (k as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // Legendre polynomial P_n and derivative at x via recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for j in 2..=n {
                let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let mut p0 = 1.0;
        let mut p1 = x;
        for j in 2..=n {
            let p2 = ((2 * j - 1) as f64 * x * p1 - (j - 1) as f64 * p0) / j as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        // Map node from [-1, 1] to [0, 1]; weights pick up the factor 1/2.
        points[n - 1 - k] = 0.5 * (x + 1.0);
        weights[n - 1 - k] = 1.0 / ((1.0 - x * x) * dp * dp);
    }
    (points, weights)
}

// ---------------------------------------------------------------------------
// Tensor-product spaces
// ---------------------------------------------------------------------------

/// One element of the tensor-product partition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Element {
    /// Per-direction span indices into the knot vectors.
    pub spans: [usize; 3],
    /// Parametric bounds per direction.
    pub bounds: [(f64, f64); 3],
}

impl Element {
    /// Parametric volume of the element.
    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(|(lo, hi)| hi - lo).product()
    }

    /// Maps per-direction local coordinates in [0, 1] to global parametric
    /// coordinates.
    pub fn param(&self, local: [f64; 3]) -> [f64; 3] {
        [
            self.bounds[0].0 + (self.bounds[0].1 - self.bounds[0].0) * local[0],
            self.bounds[1].0 + (self.bounds[1].1 - self.bounds[1].0) * local[1],
            self.bounds[2].0 + (self.bounds[2].1 - self.bounds[2].0) * local[2],
        ]
    }
}

/// Evaluation of all basis functions supported on one point: global indices,
/// values, and parametric gradients.
#[derive(Clone, Debug, Default)]
pub struct BasisEval {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
    pub grads: Vec<[f64; 3]>,
}

/// Tensor-product B-spline (or NURBS) space on the parametric cube.
#[derive(Clone, Debug)]
pub struct TensorSpace {
    kvs: [KnotVector; 3],
    /// Rational weights in lexicographic order (x fastest); `None` means the
    /// polynomial B-spline case (all weights one).
    weights: Option<Vec<f64>>,
}

impl TensorSpace {
    pub fn new(kvs: [KnotVector; 3]) -> Self {
        Self { kvs, weights: None }
    }

    pub fn with_weights(
        kvs: [KnotVector; 3],
        weights: Vec<f64>,
    ) -> Result<Self, SplineError> {
        let want: usize = kvs.iter().map(|kv| kv.num_basis()).product();
        if weights.len() != want {
            return Err(SplineError::WeightCount { got: weights.len(), want });
        }
        Ok(Self { kvs, weights: Some(weights) })
    }

    pub fn knot_vector(&self, dir: usize) -> &KnotVector {
        &self.kvs[dir]
    }

    /// Basis dimension per direction.
    pub fn dims(&self) -> [usize; 3] {
        [self.kvs[0].num_basis(), self.kvs[1].num_basis(), self.kvs[2].num_basis()]
    }

    /// Total basis dimension.
    pub fn dim(&self) -> usize {
        self.dims().iter().product()
    }

    /// Lexicographic global index (x fastest).
    pub fn global_index(&self, ijk: [usize; 3]) -> usize {
        let d = self.dims();
        ijk[0] + d[0] * (ijk[1] + d[1] * ijk[2])
    }

    /// All elements of the tensor-product partition, x fastest.
    pub fn elements(&self) -> Vec<Element> {
        let per_dir: [Vec<(usize, f64, f64)>; 3] =
            [self.kvs[0].spans(), self.kvs[1].spans(), self.kvs[2].spans()];
        let mut out = Vec::new();
        for sz in &per_dir[2] {
            for sy in &per_dir[1] {
                for sx in &per_dir[0] {
                    out.push(Element {
                        spans: [sx.0, sy.0, sz.0],
                        bounds: [(sx.1, sx.2), (sy.1, sy.2), (sz.1, sz.2)],
                    });
                }
            }
        }
        out
    }

    /// Evaluates values and parametric gradients of all basis functions
    /// supported at `u`.
    pub fn eval(&self, u: [f64; 3]) -> Result<BasisEval, SplineError> {
        let (fx, vx, dx) = self.kvs[0].eval(u[0])?;
        let (fy, vy, dy) = self.kvs[1].eval(u[1])?;
        let (fz, vz, dz) = self.kvs[2].eval(u[2])?;
        let n = vx.len() * vy.len() * vz.len();
        let mut out = BasisEval {
            indices: Vec::with_capacity(n),
            values: Vec::with_capacity(n),
            grads: Vec::with_capacity(n),
        };
        for (kz, (&bz, &gz)) in vz.iter().zip(&dz).enumerate() {
            for (ky, (&by, &gy)) in vy.iter().zip(&dy).enumerate() {
                for (kx, (&bx, &gx)) in vx.iter().zip(&dx).enumerate() {
                    out.indices.push(self.global_index([fx + kx, fy + ky, fz + kz]));
                    out.values.push(bx * by * bz);
                    out.grads.push([gx * by * bz, bx * gy * bz, bx * by * gz]);
                }
            }
        }
        if let Some(w) = &self.weights {
            // Rational correction: R_i = w_i N_i / W with W = sum w_j N_j.
            let mut wsum = 0.0;
            let mut wgrad = [0.0; 3];
            for ((&idx, &val), grad) in
                out.indices.iter().zip(&out.values).zip(&out.grads)
            {
                wsum += w[idx] * val;
                for d in 0..3 {
                    wgrad[d] += w[idx] * grad[d];
                }
            }
            for ((&idx, val), grad) in
                out.indices.iter().zip(out.values.iter_mut()).zip(out.grads.iter_mut())
            {
                let wi = w[idx];
                let rational = wi * *val / wsum;
                for d in 0..3 {
                    grad[d] = (wi * grad[d] - rational * wgrad[d]) / wsum;
                }
                *val = rational;
            }
        }
        Ok(out)
    }

    /// Greville points of the tensor product, in lexicographic order.
    pub fn greville_points(&self) -> Vec<[f64; 3]> {
        let gx = self.kvs[0].greville();
        let gy = self.kvs[1].greville();
        let gz = self.kvs[2].greville();
        let mut out = Vec::with_capacity(self.dim());
        for &z in &gz {
            for &y in &gy {
                for &x in &gx {
                    out.push([x, y, z]);
                }
            }
        }
        out
    }

    /// Global indices of the basis functions that are nonzero on a face of
    /// the parametric cube (the boundary layer of the open knot structure).
    pub fn face_indices(&self, face: Face) -> Vec<usize> {
        let d = self.dims();
        let (dir, layer) = face.direction_and_layer(d);
        let mut out = Vec::new();
        for iz in 0..d[2] {
            for iy in 0..d[1] {
                for ix in 0..d[0] {
                    let ijk = [ix, iy, iz];
                    if ijk[dir] == layer {
                        out.push(self.global_index(ijk));
                    }
                }
            }
        }
        out
    }
}

/// Faces of the parametric cube / box geometry.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Face {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
}

impl Face {
    pub const ALL: [Face; 6] =
        [Face::XMin, Face::XMax, Face::YMin, Face::YMax, Face::ZMin, Face::ZMax];

    fn direction_and_layer(self, dims: [usize; 3]) -> (usize, usize) {
        match self {
            Face::XMin => (0, 0),
            Face::XMax => (0, dims[0] - 1),
            Face::YMin => (1, 0),
            Face::YMax => (1, dims[1] - 1),
            Face::ZMin => (2, 0),
            Face::ZMax => (2, dims[2] - 1),
        }
    }

    /// Direction normal to the face (0, 1, or 2).
    pub fn normal_direction(self) -> usize {
        match self {
            Face::XMin | Face::XMax => 0,
            Face::YMin | Face::YMax => 1,
            Face::ZMin | Face::ZMax => 2,
        }
    }

    /// Parametric coordinate of the face along its normal direction.
    pub fn parametric_coordinate(self) -> f64 {
        match self {
            Face::XMin | Face::YMin | Face::ZMin => 0.0,
            Face::XMax | Face::YMax | Face::ZMax => 1.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Mixed velocity/pressure pair
// ---------------------------------------------------------------------------

/// Generalized Taylor-Hood pair: pressure of degree `p` at maximal
/// continuity, velocity of degree `p + a` with continuity reduced by `b`.
#[derive(Clone, Debug)]
pub struct MixedSpaces {
    pub velocity: TensorSpace,
    pub pressure: TensorSpace,
    pub p: usize,
    pub a: usize,
    pub b: usize,
}

impl MixedSpaces {
    pub fn build(
        p: usize,
        a: usize,
        b: usize,
        elements: [usize; 3],
    ) -> Result<Self, SplineError> {
        if p == 0 {
            return Err(SplineError::DegreeZero);
        }
        if a < 1 {
            return Err(SplineError::BadDegreeElevation(a));
        }
        if b >= a {
            return Err(SplineError::BadContinuityReduction { a, b });
        }
        let make = |degree: usize, mult: usize| -> Result<[KnotVector; 3], SplineError> {
            Ok([
                KnotVector::open_uniform(degree, elements[0], mult)?,
                KnotVector::open_uniform(degree, elements[1], mult)?,
                KnotVector::open_uniform(degree, elements[2], mult)?,
            ])
        };
        Ok(Self {
            velocity: TensorSpace::new(make(p + a, 1 + b)?),
            pressure: TensorSpace::new(make(p, 1)?),
            p,
            a,
            b,
        })
    }
}

// ---------------------------------------------------------------------------
// Geometry map
// ---------------------------------------------------------------------------

/// Geometry as a spline map from the parametric cube into physical space.
#[derive(Clone, Debug)]
pub struct GeometryMap {
    space: TensorSpace,
    control_points: Vec<[f64; 3]>,
}

impl GeometryMap {
    pub fn new(
        space: TensorSpace,
        control_points: Vec<[f64; 3]>,
    ) -> Result<Self, SplineError> {
        let want = space.dim();
        if control_points.len() != want {
            return Err(SplineError::ControlPointCount { got: control_points.len(), want });
        }
        Ok(Self { space, control_points })
    }

    /// Axis-aligned box `[origin, origin + lengths]` described on the given
    /// space by placing control points at the Greville abscissae, which makes
    /// the map exactly affine.
    pub fn bspline_box(
        space: &TensorSpace,
        origin: [f64; 3],
        lengths: [f64; 3],
    ) -> Self {
        let control_points = space
            .greville_points()
            .into_iter()
            .map(|g| {
                [
                    origin[0] + lengths[0] * g[0],
                    origin[1] + lengths[1] * g[1],
                    origin[2] + lengths[2] * g[2],
                ]
            })
            .collect();
        Self { space: space.clone(), control_points }
    }

    pub fn space(&self) -> &TensorSpace {
        &self.space
    }

    /// Physical position and Jacobian `dX/du` at a parametric point.
    pub fn eval(&self, u: [f64; 3]) -> Result<([f64; 3], Tensor3), SplineError> {
        let basis = self.space.eval(u)?;
        let mut x = [0.0; 3];
        let mut jac = [[0.0; 3]; 3];
        for ((&idx, &val), grad) in
            basis.indices.iter().zip(&basis.values).zip(&basis.grads)
        {
            let cp = self.control_points[idx];
            for i in 0..3 {
                x[i] += cp[i] * val;
                for j in 0..3 {
                    jac[i][j] += cp[i] * grad[j];
                }
            }
        }
        let jac = Tensor3(jac);
        let det = jac.det();
        if !(det > 0.0) {
            return Err(SplineError::DegenerateGeometry(det));
        }
        Ok((x, jac))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_hats_interpolate() {
        let kv = KnotVector::from_knots(1, vec![0.0, 0.0, 0.5, 1.0, 1.0]).unwrap();
        let (first, values, ders) = kv.eval(0.25).unwrap();
        assert_eq!(first, 0);
        assert_eq!(values.len(), 2);
        assert!((values[0] - 0.5).abs() < 1e-15);
        assert!((values[1] - 0.5).abs() < 1e-15);
        assert!((ders[0] + 2.0).abs() < 1e-15);
        assert!((ders[1] - 2.0).abs() < 1e-15);
    }

    /// Naive Cox-de Boor recursion over the full basis, as an independent
    /// oracle for the table-based evaluation.
    fn naive_basis(kv: &KnotVector, i: usize, p: usize, u: f64) -> f64 {
        let t = kv.knots();
        if p == 0 {
            // Half-open spans, closed at the right end of the domain.
            let last = t.len() - kv.degree() - 2;
            let closed_right = i == last || (u >= 1.0 && t[i + 1] >= 1.0);
            return if (t[i] <= u && u < t[i + 1]) || (closed_right && u <= t[i + 1] && u >= t[i])
            {
                1.0
            } else {
                0.0
            };
        }
        let mut value = 0.0;
        let denom_l = t[i + p] - t[i];
        if denom_l > 0.0 {
            value += (u - t[i]) / denom_l * naive_basis(kv, i, p - 1, u);
        }
        let denom_r = t[i + p + 1] - t[i + 1];
        if denom_r > 0.0 {
            value += (t[i + p + 1] - u) / denom_r * naive_basis(kv, i + 1, p - 1, u);
        }
        value
    }

    #[test]
    fn quadratic_matches_recursion_oracle() {
        let kv = KnotVector::open_uniform(2, 4, 1).unwrap();
        let (first, values, _) = kv.eval(0.3).unwrap();
        for (k, &v) in values.iter().enumerate() {
            let oracle = naive_basis(&kv, first + k, 2, 0.3);
            assert!((v - oracle).abs() <= 1e-13, "basis {k}: {v} vs {oracle}");
        }
        // Inactive functions vanish at this point.
        for i in 0..kv.num_basis() {
            if i < first || i > first + 2 {
                assert_eq!(naive_basis(&kv, i, 2, 0.3), 0.0);
            }
        }
    }

    #[test]
    fn partition_of_unity_univariate() {
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0001);
        for (degree, elements, mult) in [(1, 2, 1), (2, 4, 1), (3, 5, 1), (2, 3, 2), (4, 6, 2)] {
            let kv = KnotVector::open_uniform(degree, elements, mult).unwrap();
            for _ in 0..200 {
                let u: f64 = rng.gen();
                let (_, values, ders) = kv.eval(u).unwrap();
                let sum: f64 = values.iter().sum();
                let dsum: f64 = ders.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-13, "PoU defect at u = {u}");
                assert!(dsum.abs() <= 1e-12 * (degree * elements) as f64);
                assert!(values.iter().all(|&v| v >= -1e-15));
            }
            // Domain endpoints included.
            for u in [0.0, 1.0] {
                let (_, values, _) = kv.eval(u).unwrap();
                assert!((values.iter().sum::<f64>() - 1.0).abs() <= 1e-13);
            }
        }
    }

    #[test]
    fn out_of_domain_is_an_error() {
        let kv = KnotVector::open_uniform(2, 4, 1).unwrap();
        assert!(matches!(kv.eval(-0.1), Err(SplineError::OutOfDomain(_))));
        assert!(matches!(kv.eval(1.1), Err(SplineError::OutOfDomain(_))));
    }

    #[test]
    fn mixed_space_dimensions() {
        // p=1, a=1, b=0 on 2 elements per direction: trilinear pressure,
        // triquadratic velocity.
        let mixed = MixedSpaces::build(1, 1, 0, [2, 2, 2]).unwrap();
        assert_eq!(mixed.pressure.dim(), 27);
        assert_eq!(mixed.velocity.dim(), 64);

        // p=2 k-refined on 4 elements: dimension 6 per direction.
        let mixed = MixedSpaces::build(2, 1, 0, [4, 4, 4]).unwrap();
        assert_eq!(mixed.pressure.dims(), [6, 6, 6]);

        // Single-element patch: pure polynomial (Bezier) case.
        let mixed = MixedSpaces::build(3, 1, 0, [1, 1, 1]).unwrap();
        assert_eq!(mixed.pressure.dim(), 4 * 4 * 4);
        assert_eq!(mixed.velocity.dim(), 5 * 5 * 5);
    }

    #[test]
    fn mixed_space_admissibility() {
        assert!(matches!(
            MixedSpaces::build(1, 0, 0, [2, 2, 2]),
            Err(SplineError::BadDegreeElevation(0))
        ));
        assert!(matches!(
            MixedSpaces::build(1, 1, 1, [2, 2, 2]),
            Err(SplineError::BadContinuityReduction { .. })
        ));
        assert!(MixedSpaces::build(2, 2, 1, [3, 3, 3]).is_ok());
    }

    #[test]
    fn mixed_spaces_share_the_element_partition() {
        let mixed = MixedSpaces::build(2, 1, 0, [3, 2, 4]).unwrap();
        let ev = mixed.velocity.elements();
        let ep = mixed.pressure.elements();
        assert_eq!(ev.len(), ep.len());
        assert_eq!(ev.len(), 3 * 2 * 4);
        for (a, b) in ev.iter().zip(&ep) {
            for d in 0..3 {
                assert!((a.bounds[d].0 - b.bounds[d].0).abs() < 1e-15);
                assert!((a.bounds[d].1 - b.bounds[d].1).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn tensor_partition_of_unity() {
        let mixed = MixedSpaces::build(1, 1, 0, [3, 3, 11]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0002);
        for space in [&mixed.velocity, &mixed.pressure] {
            for _ in 0..1000 {
                let u = [rng.gen(), rng.gen(), rng.gen()];
                let basis = space.eval(u).unwrap();
                let sum: f64 = basis.values.iter().sum();
                assert!((sum - 1.0).abs() <= 1e-12);
                for d in 0..3 {
                    let dsum: f64 = basis.grads.iter().map(|g| g[d]).sum();
                    assert!(dsum.abs() <= 1e-11);
                }
            }
        }
    }

    #[test]
    fn rational_weights_keep_partition_of_unity() {
        let kvs = [
            KnotVector::open_uniform(2, 2, 1).unwrap(),
            KnotVector::open_uniform(2, 2, 1).unwrap(),
            KnotVector::open_uniform(2, 2, 1).unwrap(),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0003);
        let dim: usize = kvs.iter().map(|k| k.num_basis()).product();
        let weights: Vec<f64> = (0..dim).map(|_| rng.gen_range(0.5..2.0)).collect();
        let space = TensorSpace::with_weights(kvs, weights).unwrap();
        for _ in 0..300 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let basis = space.eval(u).unwrap();
            let sum: f64 = basis.values.iter().sum();
            assert!((sum - 1.0).abs() <= 1e-12);
            for d in 0..3 {
                let dsum: f64 = basis.grads.iter().map(|g| g[d]).sum();
                assert!(dsum.abs() <= 1e-11);
            }
        }
    }

    #[test]
    fn velocity_space_reproduces_linear_fields() {
        let mixed = MixedSpaces::build(1, 1, 0, [3, 3, 11]).unwrap();
        let geo = GeometryMap::bspline_box(&mixed.velocity, [0.0, 0.0, 0.0], [1.0, 1.0, 6.0]);
        // Linear-precision coefficients: sample the field at the Greville
        // points mapped through the (affine) geometry.
        let field = |x: [f64; 3]| 0.7 - 1.3 * x[0] + 0.4 * x[1] + 0.25 * x[2];
        let coeffs: Vec<f64> = mixed
            .velocity
            .greville_points()
            .iter()
            .map(|&g| {
                let (x, _) = geo.eval(g).unwrap();
                field(x)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0004);
        for _ in 0..500 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let basis = mixed.velocity.eval(u).unwrap();
            let interp: f64 = basis
                .indices
                .iter()
                .zip(&basis.values)
                .map(|(&i, &v)| coeffs[i] * v)
                .sum();
            let (x, _) = geo.eval(u).unwrap();
            assert!(
                (interp - field(x)).abs() <= 1e-12,
                "linear reproduction defect {:e}",
                (interp - field(x)).abs()
            );
        }
    }

    #[test]
    fn unit_cube_geometry_is_identity() {
        let mixed = MixedSpaces::build(1, 1, 0, [2, 2, 2]).unwrap();
        let geo = GeometryMap::bspline_box(&mixed.velocity, [0.0; 3], [1.0; 3]);
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0005);
        for _ in 0..100 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let (x, jac) = geo.eval(u).unwrap();
            for d in 0..3 {
                assert!((x[d] - u[d]).abs() <= 1e-14);
            }
            assert!((jac - Tensor3::IDENTITY).norm() <= 1e-13);
        }
    }

    #[test]
    fn column_geometry_is_affine() {
        let mixed = MixedSpaces::build(1, 1, 0, [3, 3, 11]).unwrap();
        let geo = GeometryMap::bspline_box(&mixed.velocity, [0.0, 0.0, 0.0], [1.0, 1.0, 6.0]);
        let mut rng = ChaCha8Rng::seed_from_u64(0x59e1_0006);
        for _ in 0..100 {
            let u = [rng.gen(), rng.gen(), rng.gen()];
            let (x, jac) = geo.eval(u).unwrap();
            assert!((x[2] - 6.0 * u[2]).abs() <= 1e-12);
            let expected = Tensor3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 6.0]]);
            assert!((jac - expected).norm() <= 1e-12);
        }
    }

    #[test]
    fn cantilever_geometry_is_admissible() {
        let mixed = MixedSpaces::build(1, 1, 0, [2, 2, 21]).unwrap();
        let geo = GeometryMap::bspline_box(
            &mixed.velocity,
            [-0.005, -0.005, 0.0],
            [0.01, 0.01, 0.3],
        );
        let (x, jac) = geo.eval([0.5, 1.0, 1.0]).unwrap();
        assert!((x[0] - 0.0).abs() <= 1e-15);
        assert!((x[1] - 0.005).abs() <= 1e-15);
        assert!((x[2] - 0.3).abs() <= 1e-15);
        assert!(jac.det() > 0.0);
    }

    #[test]
    fn face_indices_pick_boundary_layers() {
        let mixed = MixedSpaces::build(1, 1, 0, [2, 2, 2]).unwrap();
        let v = &mixed.velocity; // dims [4, 4, 4]
        assert_eq!(v.face_indices(Face::XMin).len(), 16);
        assert_eq!(v.face_indices(Face::ZMax).len(), 16);
        // Functions on the z-max face are the only ones nonzero there.
        let face: std::collections::HashSet<usize> =
            v.face_indices(Face::ZMax).into_iter().collect();
        let basis = v.eval([0.3, 0.7, 1.0]).unwrap();
        for (&idx, &val) in basis.indices.iter().zip(&basis.values) {
            if val.abs() > 1e-14 {
                assert!(face.contains(&idx), "interior function {idx} nonzero on face");
            }
        }
    }

    #[test]
    fn gauss_legendre_is_exact_for_polynomials() {
        for n in 1..=8 {
            let (points, weights) = gauss_legendre(n);
            assert!((weights.iter().sum::<f64>() - 1.0).abs() <= 1e-14);
            for k in 0..=(2 * n - 1) {
                let integral: f64 = points
                    .iter()
                    .zip(&weights)
                    .map(|(&x, &w)| w * x.powi(k as i32))
                    .sum();
                let exact = 1.0 / (k as f64 + 1.0);
                assert!(
                    (integral - exact).abs() <= 1e-14,
                    "n = {n}, moment {k}: {integral} vs {exact}"
                );
            }
        }
    }

    #[test]
    fn spans_enumerate_nonempty_intervals() {
        let kv = KnotVector::open_uniform(2, 3, 2).unwrap();
        let spans = kv.spans();
        assert_eq!(spans.len(), 3);
        let breaks: Vec<f64> = spans.iter().map(|s| s.1).collect();
        assert_eq!(breaks, vec![0.0, 1.0 / 3.0, 2.0 / 3.0]);
    }
}
