//! Algorithmic second Piola-Kirchhoff stresses for the energy-momentum
//! consistent time discretization.
//!
//! All formulas start from the mid-point isochoric stress `S_m = S_ich(C_m)`
//! and (except the plain mid-point baseline) add a rank-one "enhancement"
//! engineered so the directionality identity
//! `S_alg : Z_n = G_ich(C_tilde_{n+1}) - G_ich(C_tilde_n)` holds exactly,
//! which is what makes the fully discrete scheme conserve energy. Every
//! enhanced formula divides by a scalar that vanishes as the two states
//! merge; when that denominator falls below `tol_B` the enhancement is
//! switched off and the mid-point stress is used on its own.
//!
//! [`stress_tangent`] provides the exact linearization of each formula with
//! respect to the end-of-step state, taking the same guard branch as the
//! stress evaluation so Newton iterations stay consistent.

use crate::material::{
    c_ich_conventional_from_state, c_ich_from_state, g_ich, s_ich_from_state, stretch_state,
    ElasticityTensor, ElasticityVariant, MaterialError, OgdenModel, StretchState,
};
use crate::tensor::SymTensor3;

/// Default denominator guard threshold for the enhanced stress formulas.
pub const DEFAULT_TOL_B: f64 = 1e-10;

/// Which algorithmic stress the time integrator uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StressFormula {
    /// Enhancement along `Z_n`, divided by the metric quantity `Z_n : Z_n`.
    Gonzalez,
    /// Multiplicative rescaling of the mid-point stress by
    /// `delta_G / (S_m : Z_n)`; coaxial with `S_m` by construction.
    #[serde(rename = "scaled")]
    ScaledMidpoint,
    /// Enhancement along `C_m`, divided by `C_m : Z_n`.
    Coaxial,
    /// Plain mid-point stress; second-order accurate but not
    /// energy-conserving.
    #[serde(rename = "midpoint")]
    MidpointOnly,
}

impl StressFormula {
    /// Short tag used in output tables and config files.
    pub fn tag(&self) -> &'static str {
        match self {
            StressFormula::Gonzalez => "gonzalez",
            StressFormula::ScaledMidpoint => "scaled",
            StressFormula::Coaxial => "coaxial",
            StressFormula::MidpointOnly => "midpoint",
        }
    }
}

/// Pair of strain states bounding one time step, with the derived mid-point
/// quantities every stress formula consumes.
#[derive(Clone, Debug)]
pub struct StressPair {
    pub c_n: SymTensor3,
    pub c_np1: SymTensor3,
    /// Mid-point strain `(C_n + C_{n+1}) / 2`.
    pub c_m: SymTensor3,
    /// Half strain increment `(C_{n+1} - C_n) / 2`.
    pub z: SymTensor3,
    /// Exact isochoric energy increment between the two endpoint states.
    pub delta_g: f64,
    state_m: StretchState,
    state_np1: StretchState,
}

impl StressPair {
    pub fn new(
        c_n: &SymTensor3,
        c_np1: &SymTensor3,
        model: &OgdenModel,
    ) -> Result<Self, MaterialError> {
        let state_n = stretch_state(c_n)?;
        let state_np1 = stretch_state(c_np1)?;
        let c_m = (*c_n + *c_np1) * 0.5;
        let state_m = stretch_state(&c_m)?;
        let z = (*c_np1 - *c_n) * 0.5;
        let delta_g = g_ich(&state_np1.modified, model) - g_ich(&state_n.modified, model);
        Ok(Self { c_n: *c_n, c_np1: *c_np1, c_m, z, delta_g, state_m, state_np1 })
    }

    /// Stretch state of the mid-point strain.
    pub fn midpoint_state(&self) -> &StretchState {
        &self.state_m
    }

    /// Stretch state of the end-of-step strain.
    pub fn end_state(&self) -> &StretchState {
        &self.state_np1
    }
}

/// Algorithmic stress evaluation result.
#[derive(Clone, Copy, Debug)]
pub struct AlgStress {
    /// Symmetric algorithmic stress.
    pub s_alg: SymTensor3,
    /// False when the guard replaced the enhanced formula by the mid-point
    /// stress (always false for [`StressFormula::MidpointOnly`]).
    pub enhancement_active: bool,
    /// Raw denominator of the quotient formula (0 for the mid-point
    /// baseline).
    pub denominator: f64,
    pub formula: StressFormula,
}

/// Evaluates the selected algorithmic stress for one strain pair.
pub fn algorithmic_stress(
    pair: &StressPair,
    model: &OgdenModel,
    formula: StressFormula,
    tol_b: f64,
) -> AlgStress {
    let s_m = s_ich_from_state(&pair.state_m, model);
    let (denominator, enhancement) = match formula {
        StressFormula::MidpointOnly => (0.0, None),
        StressFormula::Gonzalez => {
            let d = pair.z.ddot(&pair.z);
            let enh = (d.abs() > tol_b)
                .then(|| pair.z * ((pair.delta_g - s_m.ddot(&pair.z)) / d));
            (d, enh)
        }
        StressFormula::ScaledMidpoint => {
            let d = s_m.ddot(&pair.z);
            let enh = (d.abs() > tol_b).then(|| s_m * (pair.delta_g / d) - s_m);
            (d, enh)
        }
        StressFormula::Coaxial => {
            let d = pair.c_m.ddot(&pair.z);
            let enh = (d.abs() > tol_b)
                .then(|| pair.c_m * ((pair.delta_g - s_m.ddot(&pair.z)) / d));
            (d, enh)
        }
    };
    match enhancement {
        Some(enh) => AlgStress {
            s_alg: s_m + enh,
            enhancement_active: true,
            denominator,
            formula,
        },
        None => AlgStress { s_alg: s_m, enhancement_active: false, denominator, formula },
    }
}

/// Gonzalez discrete gradient.
pub fn gonzalez(pair: &StressPair, model: &OgdenModel, tol_b: f64) -> AlgStress {
    algorithmic_stress(pair, model, StressFormula::Gonzalez, tol_b)
}

/// Scaled mid-point formula.
pub fn scaled_midpoint(pair: &StressPair, model: &OgdenModel, tol_b: f64) -> AlgStress {
    algorithmic_stress(pair, model, StressFormula::ScaledMidpoint, tol_b)
}

/// Coaxial discrete gradient (enhancement along `C_m`).
pub fn coaxial(pair: &StressPair, model: &OgdenModel, tol_b: f64) -> AlgStress {
    algorithmic_stress(pair, model, StressFormula::Coaxial, tol_b)
}

/// Plain mid-point stress without enhancement.
pub fn midpoint_only(pair: &StressPair, model: &OgdenModel) -> AlgStress {
    algorithmic_stress(pair, model, StressFormula::MidpointOnly, DEFAULT_TOL_B)
}

/// Exact derivative of the algorithmic stress with respect to the
/// end-of-step strain: `dS_alg = T : dC_{n+1}` with `C_n` held fixed.
///
/// Takes the same guard branch as [`algorithmic_stress`]. The mid-point
/// elasticity tensor entering the linearization is selected by `variant`,
/// which lets Newton runs compare the corrected coefficient set against the
/// conventional one while the assembled residual stays identical.
pub fn stress_tangent(
    pair: &StressPair,
    model: &OgdenModel,
    formula: StressFormula,
    tol_b: f64,
    variant: ElasticityVariant,
) -> ElasticityTensor {
    let c_m_voigt = match variant {
        ElasticityVariant::Corrected => c_ich_from_state(&pair.state_m, model),
        ElasticityVariant::Conventional => c_ich_conventional_from_state(&pair.state_m, model),
    };
    // Base contribution of the mid-point stress: dS_m = (1/4) C_ich(C_m).
    let base = c_m_voigt * 0.25;

    let s_m = s_ich_from_state(&pair.state_m, model);
    let z = &pair.z;
    match formula {
        StressFormula::MidpointOnly => base,
        StressFormula::Gonzalez => {
            let d = z.ddot(z);
            if !(d.abs() > tol_b) {
                return base;
            }
            let s_end = s_ich_from_state(&pair.state_np1, model);
            let q = (pair.delta_g - s_m.ddot(z)) / d;
            let cz = c_m_voigt.apply(z) * 0.25;
            let g = (s_end * 0.5 - s_m * 0.5 - cz - *z * q) * (1.0 / d);
            let mut t = base;
            t.add_sym_identity(0.5 * q);
            t.add_dyad(z, &g, 1.0);
            t
        }
        StressFormula::ScaledMidpoint => {
            let d = s_m.ddot(z);
            if !(d.abs() > tol_b) {
                return base;
            }
            let s_end = s_ich_from_state(&pair.state_np1, model);
            let cz = c_m_voigt.apply(z) * 0.25;
            let h = s_end * (0.5 / d) - (cz + s_m * 0.5) * (pair.delta_g / (d * d));
            let mut t = base * (pair.delta_g / d);
            t.add_dyad(&s_m, &h, 1.0);
            t
        }
        StressFormula::Coaxial => {
            let d = pair.c_m.ddot(z);
            if !(d.abs() > tol_b) {
                return base;
            }
            let s_end = s_ich_from_state(&pair.state_np1, model);
            let r = (pair.delta_g - s_m.ddot(z)) / d;
            let cz = c_m_voigt.apply(z) * 0.25;
            let h = (s_end * 0.5 - s_m * 0.5 - cz) * (1.0 / d)
                - (*z + pair.c_m) * (0.5 * r / d);
            let mut t = base;
            t.add_sym_identity(0.5 * r);
            t.add_dyad(&pair.c_m, &h, 1.0);
            t
        }
    }
}
