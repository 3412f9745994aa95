//! Run-time monitors for the transient solver: Hamiltonian, linear and
//! angular momentum, the spatial divergence norm, grad-div dissipation, and
//! the discrete power-balance residual.
//!
//! Every quantity is evaluated with the same quadrature rule the assembly
//! uses, so the conservation statements that hold for the discrete scheme
//! hold for these monitors to solver precision, not just asymptotically.

use crate::assembly::{AssemblyError, DiscreteModel, Loads, SchemeParams, State};
use crate::material::{g_ich, stretch_state};
use crate::tensor::Tensor3;

/// Column names of the time-history CSV, one row per [`StepRecord`].
pub const CSV_HEADER: &str = "t,H,Lx,Ly,Lz,Jx,Jy,Jz,divnorm,dissipation,pwr_residual,iters";

/// One row of the simulation time history.
#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    /// Hamiltonian: kinetic plus isochoric strain energy.
    pub hamiltonian: f64,
    pub linear_momentum: [f64; 3],
    pub angular_momentum: [f64; 3],
    /// L2 norm of the spatial velocity divergence over the current configuration.
    pub div_v_norm: f64,
    /// Grad-div dissipation of the step that produced this state.
    pub dissipation: f64,
    /// Defect of the discrete power balance over the producing step.
    pub power_residual: f64,
    /// Newton iterations spent on the producing step.
    pub iterations: usize,
}

impl StepRecord {
    /// Record for the initial state. No step produced it, so the per-step
    /// entries (dissipation, power residual, iterations) are zero.
    pub fn initial(model: &DiscreteModel, state: &State) -> Result<Self, AssemblyError> {
        let (linear_momentum, angular_momentum) = momenta(model, state)?;
        Ok(Self {
            t: state.t,
            hamiltonian: hamiltonian(model, state)?,
            linear_momentum,
            angular_momentum,
            div_v_norm: div_v_norm(model, state)?,
            dissipation: 0.0,
            power_residual: 0.0,
            iterations: 0,
        })
    }

    /// Record for the state reached by one converged step from `prev`.
    pub fn converged(
        model: &DiscreteModel,
        prev: &State,
        next: &State,
        params: &SchemeParams,
        loads: &Loads,
        iterations: usize,
    ) -> Result<Self, AssemblyError> {
        let (linear_momentum, angular_momentum) = momenta(model, next)?;
        Ok(Self {
            t: next.t,
            hamiltonian: hamiltonian(model, next)?,
            linear_momentum,
            angular_momentum,
            div_v_norm: div_v_norm(model, next)?,
            dissipation: dissipation(model, prev, next, params)?,
            power_residual: power_balance_residual(model, prev, next, params, loads)?,
            iterations,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.t.is_finite()
            && self.hamiltonian.is_finite()
            && self.linear_momentum.iter().all(|x| x.is_finite())
            && self.angular_momentum.iter().all(|x| x.is_finite())
            && self.div_v_norm.is_finite()
            && self.dissipation.is_finite()
            && self.power_residual.is_finite()
    }

    /// CSV row matching [`CSV_HEADER`], shortest round-trip float formatting.
    pub fn csv_row(&self) -> String {
        format!(
            "{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{:?},{}",
            self.t,
            self.hamiltonian,
            self.linear_momentum[0],
            self.linear_momentum[1],
            self.linear_momentum[2],
            self.angular_momentum[0],
            self.angular_momentum[1],
            self.angular_momentum[2],
            self.div_v_norm,
            self.dissipation,
            self.power_residual,
            self.iterations,
        )
    }
}

fn deformation_gradient(grad_u: &Tensor3) -> Tensor3 {
    let mut f = grad_u.0;
    for i in 0..3 {
        f[i][i] += 1.0;
    }
    Tensor3(f)
}

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// Hamiltonian of a state: quadrature of `rho0 |V|^2 / 2 + G_ich(C_tilde)`
/// over the reference domain.
pub fn hamiltonian(model: &DiscreteModel, state: &State) -> Result<f64, AssemblyError> {
    let material = model.material();
    let rho0 = material.rho0();
    let mut h = 0.0;
    for qp in model.state_quadrature(state)? {
        let v2 = qp.v[0] * qp.v[0] + qp.v[1] * qp.v[1] + qp.v[2] * qp.v[2];
        let c = deformation_gradient(&qp.grad_u).t_mul_self();
        let st = stretch_state(&c)?;
        h += qp.weight * (0.5 * rho0 * v2 + g_ich(&st.modified, material));
    }
    Ok(h)
}

/// Linear and angular momentum: quadrature of `rho0 V` and
/// `rho0 (X + U) x V` over the reference domain.
pub fn momenta(model: &DiscreteModel, state: &State) -> Result<([f64; 3], [f64; 3]), AssemblyError> {
    let rho0 = model.material().rho0();
    let mut l = [0.0; 3];
    let mut j = [0.0; 3];
    for qp in model.state_quadrature(state)? {
        let m = [
            qp.weight * rho0 * qp.v[0],
            qp.weight * rho0 * qp.v[1],
            qp.weight * rho0 * qp.v[2],
        ];
        let phi = [qp.x[0] + qp.u[0], qp.x[1] + qp.u[1], qp.x[2] + qp.u[2]];
        let spin = cross(phi, [qp.v[0], qp.v[1], qp.v[2]]);
        for i in 0..3 {
            l[i] += m[i];
            j[i] += qp.weight * rho0 * spin[i];
        }
    }
    Ok((l, j))
}

/// L2 norm of the spatial velocity divergence over the current configuration,
/// `(integral of J (grad V : F^{-T})^2 over the reference domain)^{1/2}`.
pub fn div_v_norm(model: &DiscreteModel, state: &State) -> Result<f64, AssemblyError> {
    let mut acc = 0.0;
    for qp in model.state_quadrature(state)? {
        let f = deformation_gradient(&qp.grad_u);
        let j = f.det();
        if j <= 0.0 {
            return Err(AssemblyError::ElementInversion { element: qp.element, j });
        }
        let div = qp.grad_v.ddot(&f.inverse()?.transpose());
        acc += qp.weight * j * div * div;
    }
    Ok(acc.sqrt())
}

/// Grad-div dissipation of the step `prev -> next`:
/// `gamma * sum of w J_m (div v_m)^2` over all quadrature points.
pub fn dissipation(
    model: &DiscreteModel,
    prev: &State,
    next: &State,
    params: &SchemeParams,
) -> Result<f64, AssemblyError> {
    let mut d = 0.0;
    for qp in model.midpoint_quadrature(prev, next)? {
        d += qp.weight * qp.j_m * qp.div_v_m * qp.div_v_m;
    }
    Ok(params.gamma * d)
}

/// Defect of the discrete power balance over one step:
/// `|(H_{n+1} - H_n) / dt - P_ext,m + D_m|`.
pub fn power_balance_residual(
    model: &DiscreteModel,
    prev: &State,
    next: &State,
    params: &SchemeParams,
    loads: &Loads,
) -> Result<f64, AssemblyError> {
    let h_n = hamiltonian(model, prev)?;
    let h_np1 = hamiltonian(model, next)?;
    let p_ext = model.external_power_midpoint(prev, next, params.dt, loads)?;
    let d_m = dissipation(model, prev, next, params)?;
    Ok(((h_np1 - h_n) / params.dt - p_ext + d_m).abs())
}
