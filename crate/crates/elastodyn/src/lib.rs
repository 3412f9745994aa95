//! Structure-preserving finite element solver for fully incompressible
//! elastodynamics.
//!
//! The library builds mixed velocity/pressure discretizations from smooth
//! B-spline spaces, closes the incompressible Ogden constitutive law with
//! discrete-gradient algorithmic stresses, and advances the semidiscrete
//! equations with a segregated predictor/multi-corrector scheme whose
//! converged iterates satisfy exact (to solver tolerance) energy and
//! momentum balances.

pub mod algostress;
pub mod assembly;
pub mod diagnostics;
pub mod material;
pub mod solver;
pub mod spline;
pub mod tensor;
