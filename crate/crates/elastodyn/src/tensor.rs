//! Small-tensor algebra in three dimensions and a robust symmetric
//! eigensolver.
//!
//! The solver operates on two storage types: [`SymTensor3`] keeps the six
//! independent components of a symmetric second-order tensor (strain
//! measures, stresses), while [`Tensor3`] holds a general 3x3 matrix
//! (deformation gradients, velocity gradients, two-point tensors).
//!
//! The eigensolver follows the Scherzinger-Dohrmann construction: the most
//! distinct eigenvalue of the deviatoric part is located through the
//! trigonometric form of the characteristic equation, its eigenvector is
//! recovered from a cross product of the dominant columns of `B - eta I`,
//! and the remaining pair is solved as a robust 2x2 problem in the
//! orthogonal complement. Repeated eigenvalues are classified against a
//! relative tolerance and never perturbed.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

/// Relative tolerance used to classify coincident eigenvalues:
/// `eps_coin = COINCIDENCE_RTOL * max(1, ||A||)`.
pub const COINCIDENCE_RTOL: f64 = 1e-12;

/// Errors produced by tensor operations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TensorError {
    /// An input tensor contained NaN or infinite entries.
    #[error("non-finite tensor entry: {0}")]
    NonFinite(&'static str),
    /// The determinant is too small (relative to the tensor scale) to invert.
    #[error("singular tensor: |det| = {det:e} below threshold {threshold:e}")]
    Singular { det: f64, threshold: f64 },
}

// ---------------------------------------------------------------------------
// Symmetric tensors
// ---------------------------------------------------------------------------

/// Symmetric second-order tensor storing the six independent components.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct SymTensor3 {
    pub a11: f64,
    pub a22: f64,
    pub a33: f64,
    pub a12: f64,
    pub a13: f64,
    pub a23: f64,
}

impl SymTensor3 {
    pub const ZERO: SymTensor3 = SymTensor3::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
    pub const IDENTITY: SymTensor3 = SymTensor3::new(1.0, 1.0, 1.0, 0.0, 0.0, 0.0);

    pub const fn new(a11: f64, a22: f64, a33: f64, a12: f64, a13: f64, a23: f64) -> Self {
        Self { a11, a22, a33, a12, a13, a23 }
    }

    /// Builds the symmetric tensor `coef * v (x) v`.
    pub fn outer(v: &[f64; 3], coef: f64) -> Self {
        Self::new(
            coef * v[0] * v[0],
            coef * v[1] * v[1],
            coef * v[2] * v[2],
            coef * v[0] * v[1],
            coef * v[0] * v[2],
            coef * v[1] * v[2],
        )
    }

    /// Symmetric part of a general tensor.
    pub fn symmetrize(t: &Tensor3) -> Self {
        Self::new(
            t.0[0][0],
            t.0[1][1],
            t.0[2][2],
            0.5 * (t.0[0][1] + t.0[1][0]),
            0.5 * (t.0[0][2] + t.0[2][0]),
            0.5 * (t.0[1][2] + t.0[2][1]),
        )
    }

    /// Entry (i, j) of the full matrix.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        match (i.min(j), i.max(j)) {
            (0, 0) => self.a11,
            (1, 1) => self.a22,
            (2, 2) => self.a33,
            (0, 1) => self.a12,
            (0, 2) => self.a13,
            (1, 2) => self.a23,
            _ => panic!("tensor index out of range: ({i}, {j})"),
        }
    }

    /// Components in the order (11, 22, 33, 12, 13, 23).
    pub fn components(&self) -> [f64; 6] {
        [self.a11, self.a22, self.a33, self.a12, self.a13, self.a23]
    }

    pub fn from_components(c: [f64; 6]) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4], c[5])
    }

    pub fn is_finite(&self) -> bool {
        self.components().iter().all(|x| x.is_finite())
    }

    pub fn trace(&self) -> f64 {
        self.a11 + self.a22 + self.a33
    }

    /// Full double contraction `A : B` (off-diagonal entries count twice).
    pub fn ddot(&self, other: &SymTensor3) -> f64 {
        self.a11 * other.a11
            + self.a22 * other.a22
            + self.a33 * other.a33
            + 2.0 * (self.a12 * other.a12 + self.a13 * other.a13 + self.a23 * other.a23)
    }

    /// Frobenius norm `(A : A)^(1/2)`.
    pub fn norm(&self) -> f64 {
        self.ddot(self).sqrt()
    }

    pub fn det(&self) -> f64 {
        self.a11 * (self.a22 * self.a33 - self.a23 * self.a23)
            - self.a12 * (self.a12 * self.a33 - self.a23 * self.a13)
            + self.a13 * (self.a12 * self.a23 - self.a22 * self.a13)
    }

    /// Inverse through the adjugate. Fails when `|det|` falls below
    /// `1e-300 * max(||A||, eps)^3`.
    pub fn inverse(&self) -> Result<SymTensor3, TensorError> {
        if !self.is_finite() {
            return Err(TensorError::NonFinite("inverse input"));
        }
        let det = self.det();
        let scale = self.norm().max(f64::MIN_POSITIVE);
        let threshold = 1e-300 * scale * scale * scale;
        if !(det.abs() > threshold) {
            return Err(TensorError::Singular { det, threshold });
        }
        let inv_det = 1.0 / det;
        Ok(SymTensor3::new(
            (self.a22 * self.a33 - self.a23 * self.a23) * inv_det,
            (self.a11 * self.a33 - self.a13 * self.a13) * inv_det,
            (self.a11 * self.a22 - self.a12 * self.a12) * inv_det,
            (self.a13 * self.a23 - self.a12 * self.a33) * inv_det,
            (self.a12 * self.a23 - self.a13 * self.a22) * inv_det,
            (self.a12 * self.a13 - self.a11 * self.a23) * inv_det,
        ))
    }

    /// Matrix-vector product `A v`.
    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        [
            self.a11 * v[0] + self.a12 * v[1] + self.a13 * v[2],
            self.a12 * v[0] + self.a22 * v[1] + self.a23 * v[2],
            self.a13 * v[0] + self.a23 * v[1] + self.a33 * v[2],
        ]
    }

    pub fn to_full(&self) -> Tensor3 {
        Tensor3([
            [self.a11, self.a12, self.a13],
            [self.a12, self.a22, self.a23],
            [self.a13, self.a23, self.a33],
        ])
    }
}

impl Add for SymTensor3 {
    type Output = SymTensor3;
    fn add(self, rhs: SymTensor3) -> SymTensor3 {
        SymTensor3::new(
            self.a11 + rhs.a11,
            self.a22 + rhs.a22,
            self.a33 + rhs.a33,
            self.a12 + rhs.a12,
            self.a13 + rhs.a13,
            self.a23 + rhs.a23,
        )
    }
}

impl Sub for SymTensor3 {
    type Output = SymTensor3;
    fn sub(self, rhs: SymTensor3) -> SymTensor3 {
        SymTensor3::new(
            self.a11 - rhs.a11,
            self.a22 - rhs.a22,
            self.a33 - rhs.a33,
            self.a12 - rhs.a12,
            self.a13 - rhs.a13,
            self.a23 - rhs.a23,
        )
    }
}

impl Mul<f64> for SymTensor3 {
    type Output = SymTensor3;
    fn mul(self, s: f64) -> SymTensor3 {
        SymTensor3::new(
            self.a11 * s,
            self.a22 * s,
            self.a33 * s,
            self.a12 * s,
            self.a13 * s,
            self.a23 * s,
        )
    }
}

impl Neg for SymTensor3 {
    type Output = SymTensor3;
    fn neg(self) -> SymTensor3 {
        self * -1.0
    }
}

impl fmt::Display for SymTensor3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{} {} {}; . {} {}; . . {}]",
            self.a11, self.a12, self.a13, self.a22, self.a23, self.a33
        )
    }
}

// ---------------------------------------------------------------------------
// General tensors
// ---------------------------------------------------------------------------

/// General second-order tensor, row-major.
#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct Tensor3(pub [[f64; 3]; 3]);

impl Tensor3 {
    pub const ZERO: Tensor3 = Tensor3([[0.0; 3]; 3]);
    pub const IDENTITY: Tensor3 =
        Tensor3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|x| x.is_finite())
    }

    pub fn det(&self) -> f64 {
        let m = &self.0;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn transpose(&self) -> Tensor3 {
        let m = &self.0;
        Tensor3([
            [m[0][0], m[1][0], m[2][0]],
            [m[0][1], m[1][1], m[2][1]],
            [m[0][2], m[1][2], m[2][2]],
        ])
    }

    /// Inverse; same determinant threshold as [`SymTensor3::inverse`].
    pub fn inverse(&self) -> Result<Tensor3, TensorError> {
        if !self.is_finite() {
            return Err(TensorError::NonFinite("inverse input"));
        }
        let det = self.det();
        let scale = self.norm().max(f64::MIN_POSITIVE);
        let threshold = 1e-300 * scale * scale * scale;
        if !(det.abs() > threshold) {
            return Err(TensorError::Singular { det, threshold });
        }
        let m = &self.0;
        let inv_det = 1.0 / det;
        Ok(Tensor3([
            [
                (m[1][1] * m[2][2] - m[1][2] * m[2][1]) * inv_det,
                (m[0][2] * m[2][1] - m[0][1] * m[2][2]) * inv_det,
                (m[0][1] * m[1][2] - m[0][2] * m[1][1]) * inv_det,
            ],
            [
                (m[1][2] * m[2][0] - m[1][0] * m[2][2]) * inv_det,
                (m[0][0] * m[2][2] - m[0][2] * m[2][0]) * inv_det,
                (m[0][2] * m[1][0] - m[0][0] * m[1][2]) * inv_det,
            ],
            [
                (m[1][0] * m[2][1] - m[1][1] * m[2][0]) * inv_det,
                (m[0][1] * m[2][0] - m[0][0] * m[2][1]) * inv_det,
                (m[0][0] * m[1][1] - m[0][1] * m[1][0]) * inv_det,
            ],
        ]))
    }

    pub fn matmul(&self, other: &Tensor3) -> Tensor3 {
        let a = &self.0;
        let b = &other.0;
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, entry) in row.iter_mut().enumerate() {
                *entry = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Tensor3(out)
    }

    pub fn apply(&self, v: &[f64; 3]) -> [f64; 3] {
        let m = &self.0;
        [
            m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
            m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
            m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
        ]
    }

    /// Full double contraction `A : B = A_ij B_ij`.
    pub fn ddot(&self, other: &Tensor3) -> f64 {
        let mut sum = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                sum += self.0[i][j] * other.0[i][j];
            }
        }
        sum
    }

    /// `F^T F` as a symmetric tensor (right Cauchy-Green when F is a
    /// deformation gradient).
    pub fn t_mul_self(&self) -> SymTensor3 {
        let m = &self.0;
        let col = |j: usize| [m[0][j], m[1][j], m[2][j]];
        let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let (c0, c1, c2) = (col(0), col(1), col(2));
        SymTensor3::new(
            dot(c0, c0),
            dot(c1, c1),
            dot(c2, c2),
            dot(c0, c1),
            dot(c0, c2),
            dot(c1, c2),
        )
    }
}

impl Add for Tensor3 {
    type Output = Tensor3;
    fn add(self, rhs: Tensor3) -> Tensor3 {
        let mut out = self.0;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] += rhs.0[i][j];
            }
        }
        Tensor3(out)
    }
}

impl Sub for Tensor3 {
    type Output = Tensor3;
    fn sub(self, rhs: Tensor3) -> Tensor3 {
        let mut out = self.0;
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] -= rhs.0[i][j];
            }
        }
        Tensor3(out)
    }
}

impl Mul<f64> for Tensor3 {
    type Output = Tensor3;
    fn mul(self, s: f64) -> Tensor3 {
        let mut out = self.0;
        for row in &mut out {
            for entry in row {
                *entry *= s;
            }
        }
        Tensor3(out)
    }
}

// ---------------------------------------------------------------------------
// Deviatoric projection
// ---------------------------------------------------------------------------

/// Applies the deviatoric projection in the metric of `c`:
/// `P : t = t - (1/3) (c : t) c^{-1}`.
///
/// The result is orthogonal to `c`, i.e. `(P : t) : c = 0` up to round-off.
pub fn dev_projection(c: &SymTensor3, t: &SymTensor3) -> Result<SymTensor3, TensorError> {
    let c_inv = c.inverse()?;
    let ct = c.ddot(t);
    Ok(*t - c_inv * (ct / 3.0))
}

// ---------------------------------------------------------------------------
// Spectral decomposition
// ---------------------------------------------------------------------------

/// Multiplicity classification of the eigenvalue triple, decided with the
/// relative tolerance `eps_coin = 1e-12 * max(1, ||A||)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Multiplicity {
    /// All three eigenvalues separated by more than the tolerance.
    Distinct,
    /// Exactly one pair within tolerance.
    TwoCoincident,
    /// All three within tolerance of each other.
    AllCoincident,
}

/// Eigenvalues (descending) and orthonormal eigenvectors of a symmetric
/// tensor.
#[derive(Clone, Copy, Debug)]
pub struct SpectralDecomp {
    /// Eigenvalues sorted in descending order.
    pub eigenvalues: [f64; 3],
    /// `eigenvectors[a]` is the unit eigenvector for `eigenvalues[a]`.
    pub eigenvectors: [[f64; 3]; 3],
    pub multiplicity: Multiplicity,
    /// Absolute coincidence tolerance used for the classification.
    pub eps_coin: f64,
}

impl SpectralDecomp {
    /// Reassembles `sum_a lambda_a N_a (x) N_a`.
    pub fn reconstruct(&self) -> SymTensor3 {
        let mut out = SymTensor3::ZERO;
        for a in 0..3 {
            out = out + SymTensor3::outer(&self.eigenvectors[a], self.eigenvalues[a]);
        }
        out
    }
}

fn cross(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm3(a: &[f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

fn normalize(a: &mut [f64; 3]) -> f64 {
    let n = norm3(a);
    if n > 0.0 {
        a[0] /= n;
        a[1] /= n;
        a[2] /= n;
    }
    n
}

/// Computes the spectral decomposition of a symmetric tensor.
///
/// Eigenvalues are returned in descending order with the Rayleigh-quotient
/// refinement `lambda_a = N_a^T A N_a` applied after the eigenvectors are
/// found; coincident eigenvalues are classified, never perturbed.
pub fn sym_eigen(a: &SymTensor3) -> Result<SpectralDecomp, TensorError> {
    if !a.is_finite() {
        return Err(TensorError::NonFinite("sym_eigen input"));
    }

    let norm_a = a.norm();
    let eps_coin = COINCIDENCE_RTOL * norm_a.max(1.0);
    let third_trace = a.trace() / 3.0;

    // Deviatoric part B = A - (tr A / 3) I and its invariants.
    let b = *a - SymTensor3::IDENTITY * third_trace;
    let j2 = 0.5 * b.ddot(&b);
    let j3 = b.det();

    // A pure multiple of the identity: every direction is an eigenvector.
    if j2 <= f64::MIN_POSITIVE * norm_a.max(1.0) {
        return Ok(SpectralDecomp {
            eigenvalues: [third_trace; 3],
            eigenvectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            multiplicity: Multiplicity::AllCoincident,
            eps_coin,
        });
    }

    // Trigonometric form of the characteristic equation of B. The angle
    // alpha lies in [0, pi/3]; the most distinct eigenvalue of B is the
    // largest one when alpha <= pi/6 and the smallest one otherwise.
    let cos3a = (0.5 * j3 * (3.0 / j2).powf(1.5)).clamp(-1.0, 1.0);
    let alpha = cos3a.acos() / 3.0;
    let two_sqrt = 2.0 * (j2 / 3.0).sqrt();
    let eta1 = if alpha <= std::f64::consts::FRAC_PI_6 {
        two_sqrt * alpha.cos()
    } else {
        two_sqrt * (alpha + 2.0 * std::f64::consts::FRAC_PI_3).cos()
    };

    // The eigenvector for eta1 is orthogonal to the column space of
    // r = B - eta1 I, which has rank two because eta1 is most distinct.
    let r = (b - SymTensor3::IDENTITY * eta1).to_full();
    let cols = [
        [r.0[0][0], r.0[1][0], r.0[2][0]],
        [r.0[0][1], r.0[1][1], r.0[2][1]],
        [r.0[0][2], r.0[1][2], r.0[2][2]],
    ];
    let norms = [norm3(&cols[0]), norm3(&cols[1]), norm3(&cols[2])];
    let i1 = (0..3).max_by(|&i, &j| norms[i].total_cmp(&norms[j])).unwrap();

    let mut s1 = cols[i1];
    if normalize(&mut s1) == 0.0 {
        // r vanished: the matrix is (numerically) a multiple of the identity
        // plus noise below machine level; treat as all-coincident.
        return Ok(SpectralDecomp {
            eigenvalues: [third_trace; 3],
            eigenvectors: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            multiplicity: Multiplicity::AllCoincident,
            eps_coin,
        });
    }

    // Gram-Schmidt the remaining columns against s1, keep the larger.
    let mut best: Option<([f64; 3], f64)> = None;
    for (i, col) in cols.iter().enumerate() {
        if i == i1 {
            continue;
        }
        let proj = dot(col, &s1);
        let t = [col[0] - proj * s1[0], col[1] - proj * s1[1], col[2] - proj * s1[2]];
        let n = norm3(&t);
        if best.map_or(true, |(_, bn)| n > bn) {
            best = Some((t, n));
        }
    }
    let (mut s2, n2) = best.unwrap();
    let mut v1 = if n2 > 0.0 {
        normalize(&mut s2);
        let mut v = cross(&s1, &s2);
        normalize(&mut v);
        v
    } else {
        // Rank-one r: eta1 is actually a double eigenvalue of B; any vector
        // orthogonal to s1 completes the construction. Build one explicitly.
        let mut t = if s1[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
        let proj = dot(&t, &s1);
        t = [t[0] - proj * s1[0], t[1] - proj * s1[1], t[2] - proj * s1[2]];
        normalize(&mut t);
        s2 = cross(&s1, &t);
        t
    };
    normalize(&mut v1);

    // 2x2 problem in the orthonormal complement span{s1, s2} of v1.
    let u1 = s1;
    let u2 = if n2 > 0.0 {
        s2
    } else {
        let mut u = cross(&v1, &u1);
        normalize(&mut u);
        u
    };
    let au1 = a.apply(&u1);
    let au2 = a.apply(&u2);
    let p11 = dot(&u1, &au1);
    let p12 = dot(&u1, &au2);
    let p22 = dot(&u2, &au2);

    let mean = 0.5 * (p11 + p22);
    let diff = 0.5 * (p11 - p22);
    let radius = diff.hypot(p12);
    let lam_hi = mean + radius;
    let lam_lo = mean - radius;

    // Eigenvector of the 2x2 block for lam_hi: pick the better-conditioned
    // of the two row formulations.
    let w_a = [p12, lam_hi - p11];
    let w_b = [lam_hi - p22, p12];
    let na = w_a[0] * w_a[0] + w_a[1] * w_a[1];
    let nb = w_b[0] * w_b[0] + w_b[1] * w_b[1];
    let mut w = if na > nb { w_a } else { w_b };
    let wn = (w[0] * w[0] + w[1] * w[1]).sqrt();
    if wn > 0.0 {
        w = [w[0] / wn, w[1] / wn];
    } else {
        // Degenerate 2x2 block (double eigenvalue in the complement).
        w = [1.0, 0.0];
    }
    let mut v2 = [
        w[0] * u1[0] + w[1] * u2[0],
        w[0] * u1[1] + w[1] * u2[1],
        w[0] * u1[2] + w[1] * u2[2],
    ];
    normalize(&mut v2);
    let mut v3 = cross(&v1, &v2);
    normalize(&mut v3);

    // Rayleigh-quotient refinement sharpens each eigenvalue to the accuracy
    // of its eigenvector.
    let rayleigh = |v: &[f64; 3]| dot(v, &a.apply(v));
    let mut pairs = [
        (eta1 + third_trace, v1),
        (lam_hi, v2),
        (lam_lo, v3),
    ];
    for (lam, v) in &mut pairs {
        *lam = rayleigh(v);
    }
    pairs.sort_by(|x, y| y.0.total_cmp(&x.0));

    let eigenvalues = [pairs[0].0, pairs[1].0, pairs[2].0];
    let eigenvectors = [pairs[0].1, pairs[1].1, pairs[2].1];

    let gap01 = (eigenvalues[0] - eigenvalues[1]).abs();
    let gap12 = (eigenvalues[1] - eigenvalues[2]).abs();
    let multiplicity = match (gap01 <= eps_coin, gap12 <= eps_coin) {
        (true, true) => Multiplicity::AllCoincident,
        (false, false) => Multiplicity::Distinct,
        _ => Multiplicity::TwoCoincident,
    };

    Ok(SpectralDecomp { eigenvalues, eigenvectors, multiplicity, eps_coin })
}
