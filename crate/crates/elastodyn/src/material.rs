//! Fully incompressible Ogden hyperelasticity in spectral form.
//!
//! The constitutive model splits the second Piola-Kirchhoff stress into an
//! isochoric part driven by the modified principal stretches and a
//! volumetric part `-J P C^{-1}` in which the pressure `P` acts as an
//! independent field. The isochoric elasticity tensor is assembled in its
//! spectral form with the corrected coefficient set; the uncorrected
//! ("conventional") variant is kept available behind a separate entry point
//! so Newton-convergence comparisons between the two stay reproducible.

use crate::tensor::{sym_eigen, Multiplicity, SymTensor3, TensorError, COINCIDENCE_RTOL};
use std::ops::{Add, Mul};

/// Smallest admissible eigenvalue of a right Cauchy-Green tensor.
pub const MIN_C_EIGENVALUE: f64 = 1e-14;

/// Errors produced by constitutive evaluations.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MaterialError {
    #[error("Ogden model needs at least one (mu, alpha) term")]
    NoTerms,
    #[error("Ogden exponent alpha_{index} = {value} must be finite and nonzero")]
    BadExponent { index: usize, value: f64 },
    #[error("Ogden modulus mu_{index} = {value} must be finite")]
    BadModulus { index: usize, value: f64 },
    #[error("reference density {0} must be positive and finite")]
    BadDensity(f64),
    #[error(
        "right Cauchy-Green tensor is not positive definite: \
         eigenvalue {index} = {value:e} is below {MIN_C_EIGENVALUE:e}"
    )]
    NotPositiveDefinite { index: usize, value: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

// ---------------------------------------------------------------------------
// Model parameters
// ---------------------------------------------------------------------------

/// One `(mu_p, alpha_p)` term of the Ogden series.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct OgdenTerm {
    /// Modulus (pressure units); may be negative as long as the ground-state
    /// shear modulus of the full series stays positive.
    pub mu: f64,
    /// Dimensionless exponent; must be nonzero.
    pub alpha: f64,
}

/// Incompressible Ogden material: isochoric energy
/// `sum_a sum_p (mu_p / alpha_p) (lambda_tilde_a^alpha_p - 1)`
/// plus reference density for the inertia terms.
#[derive(Clone, Debug, PartialEq)]
pub struct OgdenModel {
    terms: Vec<OgdenTerm>,
    rho0: f64,
}

impl OgdenModel {
    /// Validates and stores the parameter set. A non-positive ground-state
    /// shear modulus is allowed (some published parameter fits use one
    /// transiently) but reported on stderr.
    pub fn new(terms: Vec<OgdenTerm>, rho0: f64) -> Result<Self, MaterialError> {
        if terms.is_empty() {
            return Err(MaterialError::NoTerms);
        }
        for (index, t) in terms.iter().enumerate() {
            if !t.alpha.is_finite() || t.alpha == 0.0 {
                return Err(MaterialError::BadExponent { index, value: t.alpha });
            }
            if !t.mu.is_finite() {
                return Err(MaterialError::BadModulus { index, value: t.mu });
            }
        }
        if !rho0.is_finite() || rho0 <= 0.0 {
            return Err(MaterialError::BadDensity(rho0));
        }
        let model = Self { terms, rho0 };
        let shear = model.ground_state_shear_modulus();
        if shear <= 0.0 {
            eprintln!(
                "warning: Ogden parameter set has non-positive ground-state \
                 shear modulus {shear:e}"
            );
        }
        Ok(model)
    }

    /// Single-term Ogden model with `alpha = 2`, which reproduces the
    /// incompressible neo-Hookean material with shear modulus `mu`.
    pub fn neo_hookean(mu: f64, rho0: f64) -> Result<Self, MaterialError> {
        Self::new(vec![OgdenTerm { mu, alpha: 2.0 }], rho0)
    }

    pub fn terms(&self) -> &[OgdenTerm] {
        &self.terms
    }

    /// Reference density.
    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    /// `(1/2) sum_p mu_p alpha_p`, the shear modulus of the linearized model
    /// at the stress-free state.
    pub fn ground_state_shear_modulus(&self) -> f64 {
        0.5 * self.terms.iter().map(|t| t.mu * t.alpha).sum::<f64>()
    }
}

// ---------------------------------------------------------------------------
// Stretch state
// ---------------------------------------------------------------------------

/// Principal stretches and directions extracted from a right Cauchy-Green
/// tensor, with the volume ratio split off.
#[derive(Clone, Copy, Debug)]
pub struct StretchState {
    /// Volume ratio `J = lambda_1 lambda_2 lambda_3` (> 0).
    pub j: f64,
    /// Eigenvalues of `C` in descending order (`lambda_a^2`).
    pub c_eigenvalues: [f64; 3],
    /// Principal stretches `lambda_a`, descending.
    pub stretches: [f64; 3],
    /// Modified stretches `J^{-1/3} lambda_a`, rescaled so their product is
    /// exactly unity.
    pub modified: [f64; 3],
    /// Orthonormal principal directions `N_a` matching the stretch order.
    pub directions: [[f64; 3]; 3],
    /// Coincidence classification of the eigenvalue triple.
    pub multiplicity: Multiplicity,
}

/// Spectrally decomposes `C` into stretches, directions and volume ratio.
pub fn stretch_state(c: &SymTensor3) -> Result<StretchState, MaterialError> {
    let decomp = sym_eigen(c)?;
    for (index, &ev) in decomp.eigenvalues.iter().enumerate() {
        if !(ev > MIN_C_EIGENVALUE) {
            return Err(MaterialError::NotPositiveDefinite { index, value: ev });
        }
    }
    let stretches = decomp.eigenvalues.map(f64::sqrt);
    let j = stretches[0] * stretches[1] * stretches[2];
    let j_third = j.cbrt();
    let mut modified = stretches.map(|l| l / j_third);
    // One renormalization pass pins the product of the modified stretches to
    // unity up to round-off, which keeps the isochoric energy exactly zero
    // at the reference state.
    let residual = (modified[0] * modified[1] * modified[2]).cbrt();
    for m in &mut modified {
        *m /= residual;
    }
    Ok(StretchState {
        j,
        c_eigenvalues: decomp.eigenvalues,
        stretches,
        modified,
        directions: decomp.eigenvectors,
        multiplicity: decomp.multiplicity,
    })
}

// ---------------------------------------------------------------------------
// Energy and stress
// ---------------------------------------------------------------------------

/// Isochoric Ogden energy density
/// `sum_a sum_p (mu_p / alpha_p)(lambda_tilde_a^alpha_p - 1)`.
pub fn g_ich(modified: &[f64; 3], model: &OgdenModel) -> f64 {
    let mut total = 0.0;
    for t in model.terms() {
        for &l in modified {
            total += t.mu / t.alpha * (l.powf(t.alpha) - 1.0);
        }
    }
    total
}

/// Per-stretch coefficients `sum_p mu_p (lt_a^alpha_p - (1/3) sum_c
/// lt_c^alpha_p)`; the spectral stress is `S_a = lambda_a^{-2}` times this.
fn stress_coefficients(modified: &[f64; 3], model: &OgdenModel) -> [f64; 3] {
    let mut s2 = [0.0; 3];
    for t in model.terms() {
        let powers = modified.map(|l| l.powf(t.alpha));
        let mean = (powers[0] + powers[1] + powers[2]) / 3.0;
        for a in 0..3 {
            s2[a] += t.mu * (powers[a] - mean);
        }
    }
    s2
}

/// Isochoric second Piola-Kirchhoff stress from a precomputed stretch state.
pub fn s_ich_from_state(state: &StretchState, model: &OgdenModel) -> SymTensor3 {
    let s2 = stress_coefficients(&state.modified, model);
    let mut s = SymTensor3::ZERO;
    for a in 0..3 {
        s = s + SymTensor3::outer(&state.directions[a], s2[a] / state.c_eigenvalues[a]);
    }
    s
}

/// Isochoric second Piola-Kirchhoff stress `S_ich(C)`.
pub fn s_ich(c: &SymTensor3, model: &OgdenModel) -> Result<SymTensor3, MaterialError> {
    Ok(s_ich_from_state(&stretch_state(c)?, model))
}

/// Volumetric second Piola-Kirchhoff stress `-J P C^{-1}` for a fully
/// incompressible material with independent pressure `P`.
pub fn s_vol(c: &SymTensor3, pressure: f64) -> Result<SymTensor3, MaterialError> {
    let state = stretch_state(c)?;
    let c_inv = c.inverse()?;
    Ok(c_inv * (-state.j * pressure))
}

// ---------------------------------------------------------------------------
// Elasticity tensor
// ---------------------------------------------------------------------------

/// Fourth-order tensor in 6x6 Voigt storage.
///
/// Rows and columns follow the component order (11, 22, 33, 12, 13, 23);
/// entries store raw tensor components, and contraction against a symmetric
/// second-order tensor applies the factor-2 shear weights. Constitutive
/// tangents are major-symmetric; the algorithmic-stress tangents assembled
/// from rank-one updates are generally not, so the storage itself does not
/// enforce symmetry.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElasticityTensor(pub [[f64; 6]; 6]);

/// Contraction weights accounting for the duplicated shear components.
const VOIGT_WEIGHTS: [f64; 6] = [1.0, 1.0, 1.0, 2.0, 2.0, 2.0];

impl ElasticityTensor {
    pub const ZERO: ElasticityTensor = ElasticityTensor([[0.0; 6]; 6]);

    /// Contraction `(T : X)` against a symmetric tensor.
    pub fn apply(&self, x: &SymTensor3) -> SymTensor3 {
        let xc = x.components();
        let mut out = [0.0; 6];
        for (i, row) in self.0.iter().enumerate() {
            let mut sum = 0.0;
            for j in 0..6 {
                sum += row[j] * xc[j] * VOIGT_WEIGHTS[j];
            }
            out[i] = sum;
        }
        SymTensor3::from_components(out)
    }

    /// Adds `coef * a (x) b` (a rank-one update in Voigt storage).
    pub fn add_dyad(&mut self, a: &SymTensor3, b: &SymTensor3, coef: f64) {
        let ac = a.components();
        let bc = b.components();
        for i in 0..6 {
            for j in 0..6 {
                self.0[i][j] += coef * ac[i] * bc[j];
            }
        }
    }

    /// Adds `coef` times the symmetric fourth-order identity (the tensor
    /// mapping any symmetric `X` to `coef * X`).
    pub fn add_sym_identity(&mut self, coef: f64) {
        for i in 0..3 {
            self.0[i][i] += coef;
            self.0[i + 3][i + 3] += 0.5 * coef;
        }
    }

    /// Largest absolute deviation from major symmetry.
    pub fn major_symmetry_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..6 {
            for j in (i + 1)..6 {
                worst = worst.max((self.0[i][j] - self.0[j][i]).abs());
            }
        }
        worst
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().flatten().map(|x| x * x).sum::<f64>().sqrt()
    }
}

impl Add for ElasticityTensor {
    type Output = ElasticityTensor;
    fn add(self, rhs: ElasticityTensor) -> ElasticityTensor {
        let mut out = self.0;
        for i in 0..6 {
            for j in 0..6 {
                out[i][j] += rhs.0[i][j];
            }
        }
        ElasticityTensor(out)
    }
}

impl Mul<f64> for ElasticityTensor {
    type Output = ElasticityTensor;
    fn mul(self, s: f64) -> ElasticityTensor {
        let mut out = self.0;
        for row in &mut out {
            for entry in row {
                *entry *= s;
            }
        }
        ElasticityTensor(out)
    }
}

/// Which coefficient set the spectral elasticity tensor uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElasticityVariant {
    /// Exact derivative of the spectral stress (default).
    Corrected,
    /// Coefficient set missing the diagonal correction terms; kept solely to
    /// reproduce Newton-convergence comparisons against the corrected set.
    Conventional,
}

fn c_ich_impl(
    state: &StretchState,
    model: &OgdenModel,
    variant: ElasticityVariant,
) -> ElasticityTensor {
    let eig = state.c_eigenvalues; // lambda_a^2
    let lt = state.modified;
    let s2 = stress_coefficients(&lt, model);

    // First-sum coefficients d_ab = 2 dS_a / d(lambda_b^2): the corrected
    // set is the exact derivative; the conventional set omits the extra
    // diagonal terms.
    let mut d_corr = [[0.0f64; 3]; 3];
    let mut d_conv = [[0.0f64; 3]; 3];
    for t in model.terms() {
        let powers = lt.map(|l| l.powf(t.alpha));
        let total: f64 = powers.iter().sum();
        let ma = t.mu * t.alpha;
        for a in 0..3 {
            for b in 0..3 {
                if a == b {
                    let base = ma * (powers[a] / 3.0 + total / 9.0) / (eig[a] * eig[a]);
                    let extra = ma * (-2.0 / t.alpha * powers[a] + 2.0 / (3.0 * t.alpha) * total)
                        / (eig[a] * eig[a]);
                    d_conv[a][a] += base;
                    d_corr[a][a] += base + extra;
                } else {
                    let off = ma * (-(powers[a] + powers[b]) / 3.0 + total / 9.0)
                        / (eig[a] * eig[b]);
                    d_corr[a][b] += off;
                    d_conv[a][b] += off;
                }
            }
        }
    }
    let d = match variant {
        ElasticityVariant::Corrected => &d_corr,
        ElasticityVariant::Conventional => &d_conv,
    };

    let mut out = ElasticityTensor::ZERO;
    let basis: [SymTensor3; 3] =
        [0, 1, 2].map(|a| SymTensor3::outer(&state.directions[a], 1.0));
    for a in 0..3 {
        for b in 0..3 {
            out.add_dyad(&basis[a], &basis[b], d[a][b]);
        }
    }

    // Second sum: quotient coefficients with the exact derivative limit for
    // coincident pairs. The limit is variant-independent because it is the
    // true derivative of the (variant-independent) stress coefficients.
    let eps = COINCIDENCE_RTOL * eig[0].max(eig[1]).max(eig[2]);
    for a in 0..3 {
        for b in (a + 1)..3 {
            let gap = eig[b] - eig[a];
            let g = if gap.abs() > eps {
                (s2[b] / eig[b] - s2[a] / eig[a]) / gap
            } else {
                0.5 * (d_corr[b][b] - d_corr[a][b])
            };
            let na = &state.directions[a];
            let nb = &state.directions[b];
            let m_sym = SymTensor3::new(
                na[0] * nb[0],
                na[1] * nb[1],
                na[2] * nb[2],
                0.5 * (na[0] * nb[1] + na[1] * nb[0]),
                0.5 * (na[0] * nb[2] + na[2] * nb[0]),
                0.5 * (na[1] * nb[2] + na[2] * nb[1]),
            );
            out.add_dyad(&m_sym, &m_sym, 4.0 * g);
        }
    }
    out
}

/// Isochoric elasticity tensor (exact derivative of [`s_ich`]) from a
/// precomputed stretch state.
pub fn c_ich_from_state(state: &StretchState, model: &OgdenModel) -> ElasticityTensor {
    c_ich_impl(state, model, ElasticityVariant::Corrected)
}

/// Isochoric elasticity tensor, corrected coefficient set.
pub fn c_ich(c: &SymTensor3, model: &OgdenModel) -> Result<ElasticityTensor, MaterialError> {
    Ok(c_ich_from_state(&stretch_state(c)?, model))
}

/// Isochoric elasticity tensor with the conventional (uncorrected)
/// coefficient set, retained for Newton-convergence comparisons.
pub fn c_ich_conventional_from_state(
    state: &StretchState,
    model: &OgdenModel,
) -> ElasticityTensor {
    c_ich_impl(state, model, ElasticityVariant::Conventional)
}

/// See [`c_ich_conventional_from_state`].
pub fn c_ich_conventional(
    c: &SymTensor3,
    model: &OgdenModel,
) -> Result<ElasticityTensor, MaterialError> {
    Ok(c_ich_conventional_from_state(&stretch_state(c)?, model))
}
