//! Segregated predictor/multi-corrector Newton stepper and simulation driver.
//!
//! Each time step starts from the predictor Y_{n+1,(0)} = Y_n and iterates
//!
//! 1. assemble the residuals and check convergence (before any update, so a
//!    converged predictor is accepted as-is),
//! 2. solve the reduced saddle system [[A, B], [C, 0]] (dV, dP) = -(R^m, R^p)
//!    with a sparse direct factorization plus iterative refinement,
//! 3. update dU = dt (dV/2 - R^k), which restores the kinematic relation
//!    exactly after the first correction.
//!
//! The stopping norm is the Euclidean norm of the full free-dof residual
//! (kinematic, momentum, mass); convergence is declared when it falls below
//! the absolute tolerance or drops by the relative factor against the
//! predictor residual.

use faer::prelude::*;
use faer::sparse::{SparseColMat, Triplet};

use crate::assembly::{AssemblyError, DiscreteModel, Loads, SchemeParams, State, TangentBlocks};
use crate::algostress::{StressFormula, DEFAULT_TOL_B};
use crate::material::ElasticityVariant;

/// What to do when a step exhausts its Newton iterations.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailurePolicy {
    /// Stop the run with an error (default).
    Abort,
    /// Retry the failed step as two half steps, once per run.
    HalveDtOnce,
    /// Keep the last iterate and continue.
    AcceptWithWarning,
}

/// Time-stepping and Newton parameters.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    /// Relative residual tolerance against the predictor residual.
    pub tol_r: f64,
    /// Absolute residual tolerance.
    pub tol_a: f64,
    /// Maximum number of linear solves per step.
    pub l_max: usize,
    pub dt: f64,
    pub t_final: f64,
    /// Grad-div stabilization parameter.
    pub gamma: f64,
    pub formula: StressFormula,
    pub variant: ElasticityVariant,
    /// Guard threshold for the enhancement denominators.
    pub tol_b: f64,
    pub on_failure: FailurePolicy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol_r: 1e-10,
            tol_a: 1e-10,
            l_max: 10,
            dt: 0.01,
            t_final: 1.0,
            gamma: 0.0,
            formula: StressFormula::Gonzalez,
            variant: ElasticityVariant::Corrected,
            tol_b: DEFAULT_TOL_B,
            on_failure: FailurePolicy::Abort,
        }
    }
}

impl SolverConfig {
    pub fn scheme_params(&self) -> SchemeParams {
        SchemeParams {
            dt: self.dt,
            gamma: self.gamma,
            formula: self.formula,
            variant: self.variant,
            tol_b: self.tol_b,
        }
    }

    pub fn n_steps(&self) -> usize {
        (self.t_final / self.dt).round().max(0.0) as usize
    }
}

/// Which stopping test ended the Newton loop.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConvergenceCriterion {
    Absolute,
    Relative,
}

/// Per-step Newton record.
#[derive(Clone, Debug)]
pub struct StepReport {
    /// Residual norm at each convergence check (index 0 is the predictor).
    pub residual_norms: Vec<f64>,
    /// Number of convergence checks performed.
    pub checks: usize,
    /// Number of linear solves performed.
    pub solves: usize,
    pub converged: bool,
    pub criterion: Option<ConvergenceCriterion>,
}

#[derive(Debug, thiserror::Error)]
pub enum SolverError {
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error("linear solve failed: {0}")]
    Singular(String),
    #[error("step at t = {t} did not converge within {l_max} solves; residual norms {norms:?}")]
    NonConvergence { t: f64, l_max: usize, norms: Vec<f64> },
}

/// Solves the saddle system [[A, B], [C, 0]] (dV, dP) = -(R^m, R^p) on the
/// free dofs with sparse LU plus iterative refinement to backward error
/// 1e-12. Fixed velocity dofs receive zero increments.
pub fn newton_step_solve(
    blocks: &TangentBlocks,
    r_m: &[f64],
    r_p: &[f64],
    fixed: &[bool],
) -> Result<(Vec<f64>, Vec<f64>), SolverError> {
    let n_vdof = fixed.len();
    assert_eq!(r_m.len(), n_vdof);
    let n_pres = r_p.len();

    // Map velocity dofs to reduced indices.
    let mut free_index = vec![usize::MAX; n_vdof];
    let mut n_free = 0;
    for (dof, &is_fixed) in fixed.iter().enumerate() {
        if !is_fixed {
            free_index[dof] = n_free;
            n_free += 1;
        }
    }
    let n = n_free + n_pres;

    let mut reduced: Vec<(usize, usize, f64)> = Vec::with_capacity(
        blocks.a.len() + blocks.b.len() + blocks.c.len(),
    );
    for &(r, c, v) in &blocks.a {
        if !fixed[r] && !fixed[c] {
            reduced.push((free_index[r], free_index[c], v));
        }
    }
    for &(r, c, v) in &blocks.b {
        if !fixed[r] {
            reduced.push((free_index[r], n_free + c, v));
        }
    }
    for &(r, c, v) in &blocks.c {
        if !fixed[c] {
            reduced.push((n_free + r, free_index[c], v));
        }
    }

    let mut rhs = vec![0.0; n];
    for (dof, &val) in r_m.iter().enumerate() {
        if !fixed[dof] {
            rhs[free_index[dof]] = -val;
        }
    }
    for (q, &val) in r_p.iter().enumerate() {
        rhs[n_free + q] = -val;
    }
    let rhs_norm = rhs.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut delta = vec![0.0; n];
    if rhs_norm > 0.0 {
        let triplets: Vec<Triplet<usize, usize, f64>> =
            reduced.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
        let k: SparseColMat<usize, f64> =
            SparseColMat::try_new_from_triplets(n, n, &triplets)
                .map_err(|e| SolverError::Singular(format!("{e:?}")))?;
        let lu = k.sp_lu().map_err(|e| SolverError::Singular(format!("{e:?}")))?;

        let b = Mat::from_fn(n, 1, |i, _| rhs[i]);
        let x = lu.solve(&b);
        for i in 0..n {
            delta[i] = x[(i, 0)];
        }

        // Iterative refinement until the backward error is at roundoff.
        for _ in 0..5 {
            let mut res = vec![0.0; n];
            for &(r, c, v) in &reduced {
                res[r] += v * delta[c];
            }
            for i in 0..n {
                res[i] -= rhs[i];
            }
            let backward =
                res.iter().map(|x| x * x).sum::<f64>().sqrt() / rhs_norm;
            if backward <= 1e-12 {
                break;
            }
            let rmat = Mat::from_fn(n, 1, |i, _| res[i]);
            let e = lu.solve(&rmat);
            for i in 0..n {
                delta[i] -= e[(i, 0)];
            }
        }
    }

    let mut dv = vec![0.0; n_vdof];
    for dof in 0..n_vdof {
        if !fixed[dof] {
            dv[dof] = delta[free_index[dof]];
        }
    }
    let dp = delta[n_free..].to_vec();
    Ok((dv, dp))
}

/// Displacement increment from the velocity increment and the kinematic
/// residual: dU = dt (dV/2 - R^k).
pub fn displacement_update(dv: &[f64], dt: f64, r_k: &[f64]) -> Vec<f64> {
    dv.iter().zip(r_k).map(|(&v, &k)| dt * (0.5 * v - k)).collect()
}

fn residual_norm(model: &DiscreteModel, r_k: &[f64], r_m: &[f64], r_p: &[f64]) -> f64 {
    let fixed = model.velocity_fixed_mask();
    let mut sum = 0.0;
    for dof in 0..fixed.len() {
        if !fixed[dof] {
            sum += r_k[dof] * r_k[dof] + r_m[dof] * r_m[dof];
        }
    }
    for &v in r_p {
        sum += v * v;
    }
    sum.sqrt()
}

/// Advances one time step. Non-convergence is flagged in the report (the
/// driver decides what to do with it); hard failures (inverted elements,
/// singular factorization) are errors.
pub fn advance_step(
    model: &DiscreteModel,
    sn: &State,
    config: &SolverConfig,
    loads: &Loads,
) -> Result<(State, StepReport), SolverError> {
    let params = config.scheme_params();
    let dt = config.dt;
    let fixed = model.velocity_fixed_mask();

    let mut snp1 = sn.clone();
    snp1.t = sn.t + dt;
    // Homogeneous Dirichlet data: constrained coefficients pinned.
    for dof in 0..fixed.len() {
        if fixed[dof] {
            snp1.u[dof] = 0.0;
            snp1.v[dof] = 0.0;
        }
    }

    let mut norms = Vec::with_capacity(config.l_max + 1);
    let mut solves = 0;
    let mut converged = false;
    let mut criterion = None;

    loop {
        let r_k = model.residual_kinematic(sn, &snp1, dt);
        let assembled = model.assemble(sn, &snp1, &params, loads, false)?;
        let norm = residual_norm(model, &r_k, &assembled.r_momentum, &assembled.r_mass);
        norms.push(norm);
        if !norm.is_finite() {
            break;
        }
        if norm <= config.tol_a {
            converged = true;
            criterion = Some(ConvergenceCriterion::Absolute);
            break;
        }
        if norm <= config.tol_r * norms[0] {
            converged = true;
            criterion = Some(ConvergenceCriterion::Relative);
            break;
        }
        if solves == config.l_max {
            break;
        }

        let assembled = model.assemble(sn, &snp1, &params, loads, true)?;
        let blocks = assembled.tangent.expect("tangent requested");
        let (dv, dp) =
            newton_step_solve(&blocks, &assembled.r_momentum, &assembled.r_mass, fixed)?;
        solves += 1;
        let du = displacement_update(&dv, dt, &r_k);
        for dof in 0..fixed.len() {
            if !fixed[dof] {
                snp1.v[dof] += dv[dof];
                snp1.u[dof] += du[dof];
            }
        }
        for q in 0..snp1.p.len() {
            snp1.p[q] += dp[q];
        }
    }

    let report = StepReport {
        checks: norms.len(),
        residual_norms: norms,
        solves,
        converged,
        criterion,
    };
    Ok((snp1, report))
}

/// L2-projection of an initial velocity field onto the velocity space;
/// Dirichlet-constrained coefficients are reset to their prescribed
/// (homogeneous) values afterwards.
pub fn project_initial_velocity(
    model: &DiscreteModel,
    field: impl Fn([f64; 3]) -> [f64; 3],
) -> Result<Vec<f64>, SolverError> {
    let (mass, rhs) = model.velocity_l2_system(field);
    let n = model.n_vel();
    let triplets: Vec<Triplet<usize, usize, f64>> =
        mass.iter().map(|&(r, c, v)| Triplet::new(r, c, v)).collect();
    let m: SparseColMat<usize, f64> = SparseColMat::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| SolverError::Singular(format!("{e:?}")))?;
    let lu = m.sp_lu().map_err(|e| SolverError::Singular(format!("{e:?}")))?;
    let b = Mat::from_fn(n, 3, |i, j| rhs[j][i]);
    let x = lu.solve(&b);

    let mut v = vec![0.0; 3 * n];
    for node in 0..n {
        for i in 0..3 {
            v[3 * node + i] = x[(node, i)];
        }
    }
    for (dof, &is_fixed) in model.velocity_fixed_mask().iter().enumerate() {
        if is_fixed {
            v[dof] = 0.0;
        }
    }
    Ok(v)
}

/// Initial state: zero displacement and pressure, projected velocity.
pub fn initial_state(
    model: &DiscreteModel,
    initial_velocity: impl Fn([f64; 3]) -> [f64; 3],
) -> Result<State, SolverError> {
    let mut state = State::zero(model);
    state.v = project_initial_velocity(model, initial_velocity)?;
    Ok(state)
}

/// Runs the transient simulation from the projected initial state, calling
/// `observer(step_index, previous, next, report)` after every accepted step.
pub fn run_simulation(
    model: &DiscreteModel,
    config: &SolverConfig,
    loads: &Loads,
    initial_velocity: impl Fn([f64; 3]) -> [f64; 3],
    mut observer: impl FnMut(usize, &State, &State, &StepReport),
) -> Result<(State, Vec<StepReport>), SolverError> {
    let state = initial_state(model, initial_velocity)?;
    run_from_state(model, config, loads, state, &mut observer)
}

/// Runs the transient simulation from an explicit initial state.
pub fn run_from_state(
    model: &DiscreteModel,
    config: &SolverConfig,
    loads: &Loads,
    mut state: State,
    observer: &mut impl FnMut(usize, &State, &State, &StepReport),
) -> Result<(State, Vec<StepReport>), SolverError> {
    let mut reports = Vec::new();
    let mut halving_spent = false;
    let mut step_index = 0;

    for _ in 0..config.n_steps() {
        let (next, report) = advance_step(model, &state, config, loads)?;
        if report.converged {
            observer(step_index, &state, &next, &report);
            step_index += 1;
            reports.push(report);
            state = next;
            continue;
        }
        match config.on_failure {
            FailurePolicy::Abort => {
                return Err(SolverError::NonConvergence {
                    t: state.t,
                    l_max: config.l_max,
                    norms: report.residual_norms,
                });
            }
            FailurePolicy::AcceptWithWarning => {
                eprintln!(
                    "warning: step at t = {} not converged after {} solves (residual {:?}); continuing",
                    state.t,
                    report.solves,
                    report.residual_norms.last()
                );
                observer(step_index, &state, &next, &report);
                step_index += 1;
                reports.push(report);
                state = next;
            }
            FailurePolicy::HalveDtOnce => {
                if halving_spent {
                    return Err(SolverError::NonConvergence {
                        t: state.t,
                        l_max: config.l_max,
                        norms: report.residual_norms,
                    });
                }
                halving_spent = true;
                let half = SolverConfig { dt: 0.5 * config.dt, ..config.clone() };
                for _ in 0..2 {
                    let (next, report) = advance_step(model, &state, &half, loads)?;
                    if !report.converged {
                        return Err(SolverError::NonConvergence {
                            t: state.t,
                            l_max: half.l_max,
                            norms: report.residual_norms,
                        });
                    }
                    observer(step_index, &state, &next, &report);
                    step_index += 1;
                    reports.push(report);
                    state = next;
                }
            }
        }
    }
    Ok((state, reports))
}
