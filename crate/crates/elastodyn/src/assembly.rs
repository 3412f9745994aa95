//! Residuals and consistent tangent blocks of the fully-discrete mixed
//! velocity/pressure formulation with grad-div stabilization, plus external
//! load integration.
//!
//! The scheme advances coefficient vectors (U, P, V) with midpoint averages
//! Y_m = (Y_n + Y_{n+1})/2. Three residuals are assembled:
//!
//! * kinematic:  R^k = (U_{n+1} - U_n)/dt - V_m          (coefficient level)
//! * mass:       R^p_Q = integral N_Q J_m (grad V_m : F_m^{-T})
//! * momentum:   R^m_{A,i} = integral [ rho0 N_A (V_{n+1} - V_n)_i / dt
//!                 + (F_m S_alg grad N_A)_i - J_m P_m (F_m^{-T} grad N_A)_i
//!                 - rho0 N_A B_i + gamma J_m div_v (F_m^{-T} grad N_A)_i ]
//!                 - boundary integral N_A H_i
//!
//! with S_alg the (possibly enhanced) algorithmic second Piola-Kirchhoff
//! stress and dead loads B, H evaluated at the midpoint time. The Newton
//! tangent eliminates the displacement increment through the kinematic
//! slaving dU = (dt/2) dV, which yields the velocity-block A, the pressure
//! column B, and the mass row C of the saddle system.

use crate::algostress::{
    algorithmic_stress, stress_tangent, AlgStress, StressFormula, StressPair,
};
use crate::material::{ElasticityVariant, MaterialError, OgdenModel};
use crate::spline::{gauss_legendre, Face, GeometryMap, MixedSpaces, SplineError};
use crate::tensor::{SymTensor3, Tensor3, TensorError};

/// Errors from model construction and assembly sweeps.
#[derive(Debug, thiserror::Error)]
pub enum AssemblyError {
    #[error("element {element} inverted: midpoint Jacobian determinant {j}")]
    ElementInversion { element: usize, j: f64 },
    #[error("coefficient vector '{name}' has length {got}, expected {want}")]
    DimensionMismatch { name: &'static str, got: usize, want: usize },
    #[error(transparent)]
    Material(#[from] MaterialError),
    #[error(transparent)]
    Spline(#[from] SplineError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Discrete solution snapshot: coefficient vectors on the mixed spaces.
#[derive(Clone, Debug, PartialEq)]
pub struct State {
    pub t: f64,
    /// Displacement coefficients, interleaved `[3*node + component]`.
    pub u: Vec<f64>,
    /// Velocity coefficients, same layout as `u`.
    pub v: Vec<f64>,
    /// Pressure coefficients.
    pub p: Vec<f64>,
}

impl State {
    pub fn zero(model: &DiscreteModel) -> Self {
        Self {
            t: 0.0,
            u: vec![0.0; 3 * model.n_vel()],
            v: vec![0.0; 3 * model.n_vel()],
            p: vec![0.0; model.n_pres()],
        }
    }
}

/// Scheme parameters shared by residual and tangent assembly.
#[derive(Clone, Copy, Debug)]
pub struct SchemeParams {
    pub dt: f64,
    /// Grad-div stabilization parameter.
    pub gamma: f64,
    pub formula: StressFormula,
    pub variant: ElasticityVariant,
    /// Guard threshold for the enhancement denominators.
    pub tol_b: f64,
}

/// Time rule for a spatially uniform dead load.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LoadRule {
    Constant { value: [f64; 3] },
    /// `cos_amplitude * cos(omega t) + sin_amplitude * sin(omega t)` per component.
    Harmonic { cos_amplitude: [f64; 3], sin_amplitude: [f64; 3], omega: f64 },
    /// `amplitude` rotated about `axis` by the angle `omega t`.
    Rotational { amplitude: [f64; 3], axis: [f64; 3], omega: f64 },
}

impl LoadRule {
    pub fn eval(&self, t: f64) -> [f64; 3] {
        match self {
            LoadRule::Constant { value } => *value,
            LoadRule::Harmonic { cos_amplitude, sin_amplitude, omega } => {
                let (s, c) = (omega * t).sin_cos();
                [
                    cos_amplitude[0] * c + sin_amplitude[0] * s,
                    cos_amplitude[1] * c + sin_amplitude[1] * s,
                    cos_amplitude[2] * c + sin_amplitude[2] * s,
                ]
            }
            LoadRule::Rotational { amplitude, axis, omega } => {
                // Rodrigues rotation of the amplitude about the unit axis.
                let norm = (axis[0] * axis[0] + axis[1] * axis[1] + axis[2] * axis[2]).sqrt();
                let k = [axis[0] / norm, axis[1] / norm, axis[2] / norm];
                let (s, c) = (omega * t).sin_cos();
                let a = amplitude;
                let kxa = [
                    k[1] * a[2] - k[2] * a[1],
                    k[2] * a[0] - k[0] * a[2],
                    k[0] * a[1] - k[1] * a[0],
                ];
                let ka = k[0] * a[0] + k[1] * a[1] + k[2] * a[2];
                [
                    a[0] * c + kxa[0] * s + k[0] * ka * (1.0 - c),
                    a[1] * c + kxa[1] * s + k[1] * ka * (1.0 - c),
                    a[2] * c + kxa[2] * s + k[2] * ka * (1.0 - c),
                ]
            }
        }
    }
}

/// Traction rule attached to one face of the box boundary.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FaceLoad {
    pub face: Face,
    pub rule: LoadRule,
}

/// External dead loads: body force density (per unit mass) and reference-area
/// traction densities per tagged face.
#[derive(Clone, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Loads {
    pub body: Option<LoadRule>,
    #[serde(default)]
    pub tractions: Vec<FaceLoad>,
}

/// Per-quadrature-point snapshot of the midpoint kinematics and stress, for
/// diagnostics and debugging.
#[derive(Clone, Debug)]
pub struct QuadPointData {
    pub element: usize,
    pub f_m: Tensor3,
    pub j_m: f64,
    pub c_n: SymTensor3,
    pub c_np1: SymTensor3,
    pub c_m: SymTensor3,
    /// Modified (unimodular) midpoint metric `(det C_m)^{-1/3} C_m`.
    pub c_tilde_m: SymTensor3,
    pub stress: AlgStress,
    pub p_m: f64,
    pub weight: f64,
}

/// Kinematic quantities of a single state at one quadrature point.
#[derive(Clone, Debug)]
pub struct StateQp {
    pub element: usize,
    pub weight: f64,
    /// Reference position.
    pub x: [f64; 3],
    pub u: [f64; 3],
    pub v: [f64; 3],
    pub grad_u: Tensor3,
    pub grad_v: Tensor3,
}

/// Midpoint kinematics at one quadrature point (for grad-div diagnostics).
#[derive(Clone, Copy, Debug)]
pub struct MidpointQp {
    pub weight: f64,
    pub j_m: f64,
    /// Spatial divergence of the midpoint velocity, `grad V_m : F_m^{-T}`.
    pub div_v_m: f64,
}

/// Sparse coordinate triplets of the Newton saddle blocks (duplicates add).
#[derive(Clone, Debug, Default)]
pub struct TangentBlocks {
    /// Velocity-velocity block (momentum rows).
    pub a: Vec<(usize, usize, f64)>,
    /// Velocity-pressure block (momentum rows).
    pub b: Vec<(usize, usize, f64)>,
    /// Pressure-velocity block (mass rows).
    pub c: Vec<(usize, usize, f64)>,
}

/// Momentum/mass residuals plus optional tangent from one assembly sweep.
#[derive(Clone, Debug)]
pub struct AssembledSystem {
    pub r_momentum: Vec<f64>,
    pub r_mass: Vec<f64>,
    pub tangent: Option<TangentBlocks>,
}

struct QuadTable {
    x: [f64; 3],
    weight: f64,
    vel_val: Vec<f64>,
    vel_grad: Vec<[f64; 3]>,
    pres_val: Vec<f64>,
}

struct ElemTable {
    vel_idx: Vec<usize>,
    pres_idx: Vec<usize>,
    qps: Vec<QuadTable>,
}

struct FaceQuad {
    x: [f64; 3],
    weight: f64,
    vel_idx: Vec<usize>,
    vel_val: Vec<f64>,
}

/// Mesh, material, quadrature caches, and constraint bookkeeping for one run.
pub struct DiscreteModel {
    spaces: MixedSpaces,
    geometry: GeometryMap,
    material: OgdenModel,
    dirichlet_faces: Vec<Face>,
    vel_fixed: Vec<bool>,
    elems: Vec<ElemTable>,
    face_quads: [Vec<FaceQuad>; 6],
    n_gauss: usize,
}

impl DiscreteModel {
    pub fn new(
        spaces: MixedSpaces,
        geometry: GeometryMap,
        material: OgdenModel,
        dirichlet_faces: &[Face],
    ) -> Result<Self, AssemblyError> {
        let n_gauss = spaces.velocity.knot_vector(0).degree() + 2;
        let (gp, gw) = gauss_legendre(n_gauss);
        let elements = spaces.velocity.elements();
        let pres_elements = spaces.pressure.elements();

        let mut elems = Vec::with_capacity(elements.len());
        for (el, pel) in elements.iter().zip(&pres_elements) {
            let mut vel_idx = Vec::new();
            let mut pres_idx = Vec::new();
            let mut qps = Vec::with_capacity(n_gauss * n_gauss * n_gauss);
            for (kz, &qz) in gp.iter().enumerate() {
                for (ky, &qy) in gp.iter().enumerate() {
                    for (kx, &qx) in gp.iter().enumerate() {
                        let u = el.param([qx, qy, qz]);
                        let (x, jac) = geometry.eval(u)?;
                        let jinv_t = jac.inverse()?.transpose();
                        let vb = spaces.velocity.eval(u)?;
                        let pb = spaces.pressure.eval(u)?;
                        debug_assert_eq!(pel.param([qx, qy, qz]), u);
                        if vel_idx.is_empty() {
                            vel_idx = vb.indices.clone();
                            pres_idx = pb.indices.clone();
                        }
                        let grads = vb.grads.iter().map(|g| jinv_t.apply(g)).collect();
                        qps.push(QuadTable {
                            x,
                            weight: gw[kx] * gw[ky] * gw[kz] * el.volume() * jac.det(),
                            vel_val: vb.values,
                            vel_grad: grads,
                            pres_val: pb.values,
                        });
                    }
                }
            }
            elems.push(ElemTable { vel_idx, pres_idx, qps });
        }

        // Boundary quadrature on each face of the parametric cube, with the
        // reference-area measure from the geometry map.
        let mut face_quads: [Vec<FaceQuad>; 6] = Default::default();
        for face in Face::ALL {
            let nd = face.normal_direction();
            let coord = face.parametric_coordinate();
            let (t1, t2) = match nd {
                0 => (1, 2),
                1 => (0, 2),
                _ => (0, 1),
            };
            let mut quads = Vec::new();
            for el in &elements {
                let touches = if coord == 0.0 {
                    el.bounds[nd].0 == 0.0
                } else {
                    el.bounds[nd].1 == 1.0
                };
                if !touches {
                    continue;
                }
                for (k2, &q2) in gp.iter().enumerate() {
                    for (k1, &q1) in gp.iter().enumerate() {
                        let mut local = [0.0; 3];
                        local[nd] = coord;
                        local[t1] = q1;
                        local[t2] = q2;
                        let u = el.param(local);
                        let (x, jac) = geometry.eval(u)?;
                        let col = |d: usize| [jac.0[0][d], jac.0[1][d], jac.0[2][d]];
                        let (a, b) = (col(t1), col(t2));
                        let cross = [
                            a[1] * b[2] - a[2] * b[1],
                            a[2] * b[0] - a[0] * b[2],
                            a[0] * b[1] - a[1] * b[0],
                        ];
                        let area =
                            (cross[0] * cross[0] + cross[1] * cross[1] + cross[2] * cross[2])
                                .sqrt();
                        let ext1 = el.bounds[t1].1 - el.bounds[t1].0;
                        let ext2 = el.bounds[t2].1 - el.bounds[t2].0;
                        let vb = spaces.velocity.eval(u)?;
                        quads.push(FaceQuad {
                            x,
                            weight: gw[k1] * gw[k2] * ext1 * ext2 * area,
                            vel_idx: vb.indices,
                            vel_val: vb.values,
                        });
                    }
                }
            }
            face_quads[face as usize] = quads;
        }

        let n_vel = spaces.velocity.dim();
        let mut vel_fixed = vec![false; 3 * n_vel];
        for &face in dirichlet_faces {
            for node in spaces.velocity.face_indices(face) {
                for c in 0..3 {
                    vel_fixed[3 * node + c] = true;
                }
            }
        }

        Ok(Self {
            spaces,
            geometry,
            material,
            dirichlet_faces: dirichlet_faces.to_vec(),
            vel_fixed,
            elems,
            face_quads,
            n_gauss,
        })
    }

    pub fn spaces(&self) -> &MixedSpaces {
        &self.spaces
    }

    pub fn geometry(&self) -> &GeometryMap {
        &self.geometry
    }

    pub fn material(&self) -> &OgdenModel {
        &self.material
    }

    pub fn dirichlet_faces(&self) -> &[Face] {
        &self.dirichlet_faces
    }

    /// Number of velocity basis functions (nodes); dofs are `3 *` this.
    pub fn n_vel(&self) -> usize {
        self.spaces.velocity.dim()
    }

    pub fn n_pres(&self) -> usize {
        self.spaces.pressure.dim()
    }

    pub fn n_elements(&self) -> usize {
        self.elems.len()
    }

    pub fn quadrature_points_per_element(&self) -> usize {
        self.n_gauss * self.n_gauss * self.n_gauss
    }

    /// Mask over velocity dofs; `true` entries are Dirichlet-constrained.
    pub fn velocity_fixed_mask(&self) -> &[bool] {
        &self.vel_fixed
    }

    fn check_state(&self, s: &State) -> Result<(), AssemblyError> {
        let want_v = 3 * self.n_vel();
        for (name, got, want) in [
            ("u", s.u.len(), want_v),
            ("v", s.v.len(), want_v),
            ("p", s.p.len(), self.n_pres()),
        ] {
            if got != want {
                return Err(AssemblyError::DimensionMismatch { name, got, want });
            }
        }
        Ok(())
    }

    /// Kinematic residual `(U_{n+1} - U_n)/dt - V_m` at coefficient level.
    pub fn residual_kinematic(&self, sn: &State, snp1: &State, dt: f64) -> Vec<f64> {
        sn.u.iter()
            .zip(&snp1.u)
            .zip(sn.v.iter().zip(&snp1.v))
            .map(|((&un, &unp1), (&vn, &vnp1))| (unp1 - un) / dt - 0.5 * (vn + vnp1))
            .collect()
    }

    /// Mass residual: quadrature of `N_Q J_m (grad V_m : F_m^{-T})`.
    pub fn residual_mass(&self, sn: &State, snp1: &State) -> Result<Vec<f64>, AssemblyError> {
        self.check_state(sn)?;
        self.check_state(snp1)?;
        let mut r = vec![0.0; self.n_pres()];
        for (e_id, elem) in self.elems.iter().enumerate() {
            for qp in &elem.qps {
                let kin = midpoint_kinematics(elem, qp, sn, snp1);
                let j_m = kin.f_m.det();
                if j_m <= 0.0 {
                    return Err(AssemblyError::ElementInversion { element: e_id, j: j_m });
                }
                let fm_inv_t = kin.f_m.inverse()?.transpose();
                let div_v = kin.grad_v_m.ddot(&fm_inv_t);
                for (q, &nq) in elem.pres_idx.iter().zip(&qp.pres_val) {
                    r[*q] += qp.weight * nq * j_m * div_v;
                }
            }
        }
        Ok(r)
    }

    /// Momentum residual only.
    pub fn residual_momentum(
        &self,
        sn: &State,
        snp1: &State,
        params: &SchemeParams,
        loads: &Loads,
    ) -> Result<Vec<f64>, AssemblyError> {
        Ok(self.assemble(sn, snp1, params, loads, false)?.r_momentum)
    }

    /// Newton saddle blocks A (velocity), B (pressure column), C (mass row).
    pub fn tangent_blocks(
        &self,
        sn: &State,
        snp1: &State,
        params: &SchemeParams,
    ) -> Result<TangentBlocks, AssemblyError> {
        let loads = Loads::default();
        Ok(self
            .assemble(sn, snp1, params, &loads, true)?
            .tangent
            .expect("tangent requested"))
    }

    /// One sweep producing momentum and mass residuals and, on request, the
    /// consistent tangent blocks.
    pub fn assemble(
        &self,
        sn: &State,
        snp1: &State,
        params: &SchemeParams,
        loads: &Loads,
        want_tangent: bool,
    ) -> Result<AssembledSystem, AssemblyError> {
        self.check_state(sn)?;
        self.check_state(snp1)?;
        let rho0 = self.material.rho0();
        let dt = params.dt;
        let t_mid = sn.t + 0.5 * dt;
        let body = loads.body.as_ref().map(|r| r.eval(t_mid));

        let mut r_mom = vec![0.0; 3 * self.n_vel()];
        let mut r_mass = vec![0.0; self.n_pres()];
        let mut blocks = want_tangent.then(TangentBlocks::default);

        for (e_id, elem) in self.elems.iter().enumerate() {
            let n_loc = elem.vel_idx.len();
            let n_loc_p = elem.pres_idx.len();
            // Local dense accumulators, scattered after the element loop.
            let mut a_loc = blocks.is_some().then(|| vec![0.0; (3 * n_loc) * (3 * n_loc)]);
            let mut b_loc = blocks.is_some().then(|| vec![0.0; (3 * n_loc) * n_loc_p]);
            let mut c_loc = blocks.is_some().then(|| vec![0.0; n_loc_p * (3 * n_loc)]);

            for qp in &elem.qps {
                let kin = midpoint_kinematics(elem, qp, sn, snp1);
                let j_m = kin.f_m.det();
                if j_m <= 0.0 {
                    return Err(AssemblyError::ElementInversion { element: e_id, j: j_m });
                }
                let fm_inv_t = kin.f_m.inverse()?.transpose();
                let div_v = kin.grad_v_m.ddot(&fm_inv_t);

                let c_n = kin.f_n.t_mul_self();
                let c_np1 = kin.f_np1.t_mul_self();
                let pair = StressPair::new(&c_n, &c_np1, &self.material)?;
                let alg =
                    algorithmic_stress(&pair, &self.material, params.formula, params.tol_b);
                let s_alg = alg.s_alg;

                let w = qp.weight;
                let mut p_m = 0.0;
                for (q, &nq) in elem.pres_idx.iter().zip(&qp.pres_val) {
                    p_m += 0.5 * (sn.p[*q] + snp1.p[*q]) * nq;
                    r_mass[*q] += w * nq * j_m * div_v;
                }

                // Pushed-forward gradients ga = F_m^{-T} grad N_a and the
                // internal force direction F_m (S_alg grad N_a).
                let ga: Vec<[f64; 3]> =
                    qp.vel_grad.iter().map(|&g| fm_inv_t.apply(&g)).collect();
                let fs: Vec<[f64; 3]> = qp
                    .vel_grad
                    .iter()
                    .map(|&g| kin.f_m.apply(&s_alg.apply(&g)))
                    .collect();

                for (a, &node) in elem.vel_idx.iter().enumerate() {
                    let na = qp.vel_val[a];
                    for i in 0..3 {
                        let mut val = rho0 * na * (kin.v_np1[i] - kin.v_n[i]) / dt
                            + fs[a][i]
                            + (params.gamma * div_v - p_m) * j_m * ga[a][i];
                        if let Some(b) = body {
                            val -= rho0 * na * b[i];
                        }
                        r_mom[3 * node + i] += w * val;
                    }
                }

                if let (Some(a_loc), Some(b_loc), Some(c_loc)) =
                    (a_loc.as_mut(), b_loc.as_mut(), c_loc.as_mut())
                {
                    let t_alg = stress_tangent(
                        &pair,
                        &self.material,
                        params.formula,
                        params.tol_b,
                        params.variant,
                    );
                    // Rows of F_{n+1}, entering the variation of C_{n+1}.
                    let frow = |j: usize| kin.f_np1.0[j];
                    // grad V_m^T gb pulled back, for the grad-div tangent.
                    let gvt = kin.grad_v_m.transpose();
                    let s_grad: Vec<[f64; 3]> =
                        qp.vel_grad.iter().map(|&g| s_alg.apply(&g)).collect();

                    for b in 0..n_loc {
                        let nb = qp.vel_val[b];
                        let gb = ga[b];
                        let fgb = fm_inv_t.apply(&gvt.apply(&gb));
                        for j in 0..3 {
                            // dC_{n+1} for velocity dof (b, j): dt * sym(frow_j x grad N_b).
                            let fj = frow(j);
                            let g = qp.vel_grad[b];
                            let dc = SymTensor3::from_components([
                                dt * fj[0] * g[0],
                                dt * fj[1] * g[1],
                                dt * fj[2] * g[2],
                                0.5 * dt * (fj[0] * g[1] + fj[1] * g[0]),
                                0.5 * dt * (fj[0] * g[2] + fj[2] * g[0]),
                                0.5 * dt * (fj[1] * g[2] + fj[2] * g[1]),
                            ]);
                            let ds = t_alg.apply(&dc);
                            let col = 3 * b + j;
                            for a in 0..n_loc {
                                let na = qp.vel_val[a];
                                let enh = kin.f_m.apply(&ds.apply(&qp.vel_grad[a]));
                                let sgg = qp.vel_grad[a][0] * s_grad[b][0]
                                    + qp.vel_grad[a][1] * s_grad[b][1]
                                    + qp.vel_grad[a][2] * s_grad[b][2];
                                for i in 0..3 {
                                    let mut val = enh[i];
                                    if i == j {
                                        val += rho0 * na * nb / dt + 0.25 * dt * sgg;
                                    }
                                    // Pressure-term geometry variation.
                                    val -= 0.25 * dt * j_m * p_m
                                        * (gb[j] * ga[a][i] - gb[i] * ga[a][j]);
                                    // Grad-div stabilization variation.
                                    val += params.gamma
                                        * j_m
                                        * ((0.25 * dt * div_v) * gb[j] * ga[a][i]
                                            + (0.5 * gb[j] - 0.25 * dt * fgb[j]) * ga[a][i]
                                            - 0.25 * dt * div_v * gb[i] * ga[a][j]);
                                    a_loc[(3 * a + i) * 3 * n_loc + col] += w * val;
                                }
                            }
                            for q in 0..n_loc_p {
                                let nq = qp.pres_val[q];
                                c_loc[q * 3 * n_loc + col] += w
                                    * nq
                                    * j_m
                                    * (0.5 * gb[j]
                                        + 0.25 * dt * (div_v * gb[j] - fgb[j]));
                            }
                        }
                    }
                    for a in 0..n_loc {
                        for i in 0..3 {
                            for q in 0..n_loc_p {
                                b_loc[(3 * a + i) * n_loc_p + q] -=
                                    w * 0.5 * j_m * ga[a][i] * qp.pres_val[q];
                            }
                        }
                    }
                }
            }

            if let Some(blocks) = blocks.as_mut() {
                let a_loc = a_loc.unwrap();
                let b_loc = b_loc.unwrap();
                let c_loc = c_loc.unwrap();
                for a in 0..n_loc {
                    for i in 0..3 {
                        let row = 3 * elem.vel_idx[a] + i;
                        for b in 0..n_loc {
                            for j in 0..3 {
                                let v = a_loc[(3 * a + i) * 3 * n_loc + 3 * b + j];
                                if v != 0.0 {
                                    blocks.a.push((row, 3 * elem.vel_idx[b] + j, v));
                                }
                            }
                        }
                        for q in 0..n_loc_p {
                            let v = b_loc[(3 * a + i) * n_loc_p + q];
                            if v != 0.0 {
                                blocks.b.push((row, elem.pres_idx[q], v));
                            }
                        }
                    }
                }
                for q in 0..n_loc_p {
                    for b in 0..n_loc {
                        for j in 0..3 {
                            let v = c_loc[q * 3 * n_loc + 3 * b + j];
                            if v != 0.0 {
                                blocks.c.push((elem.pres_idx[q], 3 * elem.vel_idx[b] + j, v));
                            }
                        }
                    }
                }
            }
        }

        // Dead traction on tagged faces (reference-area density at t_mid).
        for fl in &loads.tractions {
            let h = fl.rule.eval(t_mid);
            for fq in &self.face_quads[fl.face as usize] {
                for (k, &node) in fq.vel_idx.iter().enumerate() {
                    let na = fq.vel_val[k];
                    for i in 0..3 {
                        r_mom[3 * node + i] -= fq.weight * na * h[i];
                    }
                }
            }
        }

        Ok(AssembledSystem { r_momentum: r_mom, r_mass, tangent: blocks })
    }

    /// Midpoint external power `integral rho0 B_m . V_m + boundary H_m . V_m`.
    pub fn external_power_midpoint(
        &self,
        sn: &State,
        snp1: &State,
        dt: f64,
        loads: &Loads,
    ) -> Result<f64, AssemblyError> {
        self.check_state(sn)?;
        self.check_state(snp1)?;
        let t_mid = sn.t + 0.5 * dt;
        let mut power = 0.0;
        if let Some(rule) = &loads.body {
            let b = rule.eval(t_mid);
            let rho0 = self.material.rho0();
            for elem in &self.elems {
                for qp in &elem.qps {
                    let mut v_m = [0.0; 3];
                    for (k, &node) in elem.vel_idx.iter().enumerate() {
                        let nv = qp.vel_val[k];
                        for i in 0..3 {
                            v_m[i] += 0.5 * (sn.v[3 * node + i] + snp1.v[3 * node + i]) * nv;
                        }
                    }
                    power += qp.weight * rho0 * (b[0] * v_m[0] + b[1] * v_m[1] + b[2] * v_m[2]);
                }
            }
        }
        for fl in &loads.tractions {
            let h = fl.rule.eval(t_mid);
            for fq in &self.face_quads[fl.face as usize] {
                let mut v_m = [0.0; 3];
                for (k, &node) in fq.vel_idx.iter().enumerate() {
                    let nv = fq.vel_val[k];
                    for i in 0..3 {
                        v_m[i] += 0.5 * (sn.v[3 * node + i] + snp1.v[3 * node + i]) * nv;
                    }
                }
                power += fq.weight * (h[0] * v_m[0] + h[1] * v_m[1] + h[2] * v_m[2]);
            }
        }
        Ok(power)
    }

    /// Midpoint kinematics (J_m and spatial divergence of V_m) at every
    /// quadrature point, for grad-div diagnostics.
    pub fn midpoint_quadrature(
        &self,
        sn: &State,
        snp1: &State,
    ) -> Result<Vec<MidpointQp>, AssemblyError> {
        self.check_state(sn)?;
        self.check_state(snp1)?;
        let mut out = Vec::new();
        for (e_id, elem) in self.elems.iter().enumerate() {
            for qp in &elem.qps {
                let kin = midpoint_kinematics(elem, qp, sn, snp1);
                let j_m = kin.f_m.det();
                if j_m <= 0.0 {
                    return Err(AssemblyError::ElementInversion { element: e_id, j: j_m });
                }
                let fm_inv_t = kin.f_m.inverse()?.transpose();
                out.push(MidpointQp {
                    weight: qp.weight,
                    j_m,
                    div_v_m: kin.grad_v_m.ddot(&fm_inv_t),
                });
            }
        }
        Ok(out)
    }

    /// Values and gradients of one state's fields at every quadrature point.
    pub fn state_quadrature(&self, state: &State) -> Result<Vec<StateQp>, AssemblyError> {
        self.check_state(state)?;
        let mut out = Vec::new();
        for (e_id, elem) in self.elems.iter().enumerate() {
            for qp in &elem.qps {
                let mut u = [0.0; 3];
                let mut v = [0.0; 3];
                let mut grad_u = [[0.0; 3]; 3];
                let mut grad_v = [[0.0; 3]; 3];
                for (k, &node) in elem.vel_idx.iter().enumerate() {
                    let nv = qp.vel_val[k];
                    let g = qp.vel_grad[k];
                    for i in 0..3 {
                        u[i] += state.u[3 * node + i] * nv;
                        v[i] += state.v[3 * node + i] * nv;
                        for d in 0..3 {
                            grad_u[i][d] += state.u[3 * node + i] * g[d];
                            grad_v[i][d] += state.v[3 * node + i] * g[d];
                        }
                    }
                }
                out.push(StateQp {
                    element: e_id,
                    weight: qp.weight,
                    x: qp.x,
                    u,
                    v,
                    grad_u: Tensor3(grad_u),
                    grad_v: Tensor3(grad_v),
                });
            }
        }
        Ok(out)
    }

    /// Full midpoint stress state at every quadrature point.
    pub fn quad_point_data(
        &self,
        sn: &State,
        snp1: &State,
        params: &SchemeParams,
    ) -> Result<Vec<QuadPointData>, AssemblyError> {
        self.check_state(sn)?;
        self.check_state(snp1)?;
        let mut out = Vec::new();
        for (e_id, elem) in self.elems.iter().enumerate() {
            for qp in &elem.qps {
                let kin = midpoint_kinematics(elem, qp, sn, snp1);
                let j_m = kin.f_m.det();
                if j_m <= 0.0 {
                    return Err(AssemblyError::ElementInversion { element: e_id, j: j_m });
                }
                let c_n = kin.f_n.t_mul_self();
                let c_np1 = kin.f_np1.t_mul_self();
                let pair = StressPair::new(&c_n, &c_np1, &self.material)?;
                let c_m = pair.c_m;
                let stress =
                    algorithmic_stress(&pair, &self.material, params.formula, params.tol_b);
                let mut p_m = 0.0;
                for (q, &nq) in elem.pres_idx.iter().zip(&qp.pres_val) {
                    p_m += 0.5 * (sn.p[*q] + snp1.p[*q]) * nq;
                }
                out.push(QuadPointData {
                    element: e_id,
                    f_m: kin.f_m,
                    j_m,
                    c_n,
                    c_np1,
                    c_m,
                    c_tilde_m: c_m * c_m.det().powf(-1.0 / 3.0),
                    stress,
                    p_m,
                    weight: qp.weight,
                });
            }
        }
        Ok(out)
    }

    /// Scalar mass matrix over velocity basis functions and per-component
    /// right-hand sides for the L2-projection of an initial velocity field.
    pub fn velocity_l2_system(
        &self,
        field: impl Fn([f64; 3]) -> [f64; 3],
    ) -> (Vec<(usize, usize, f64)>, [Vec<f64>; 3]) {
        let n = self.n_vel();
        let mut triplets = Vec::new();
        let mut rhs = [vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for elem in &self.elems {
            let n_loc = elem.vel_idx.len();
            let mut m_loc = vec![0.0; n_loc * n_loc];
            for qp in &elem.qps {
                let f = field(qp.x);
                for (a, &node) in elem.vel_idx.iter().enumerate() {
                    let na = qp.vel_val[a];
                    for i in 0..3 {
                        rhs[i][node] += qp.weight * na * f[i];
                    }
                    for b in 0..n_loc {
                        m_loc[a * n_loc + b] += qp.weight * na * qp.vel_val[b];
                    }
                }
            }
            for a in 0..n_loc {
                for b in 0..n_loc {
                    triplets.push((elem.vel_idx[a], elem.vel_idx[b], m_loc[a * n_loc + b]));
                }
            }
        }
        (triplets, rhs)
    }
}

struct MidKinematics {
    f_n: Tensor3,
    f_np1: Tensor3,
    f_m: Tensor3,
    grad_v_m: Tensor3,
    v_n: [f64; 3],
    v_np1: [f64; 3],
}

fn midpoint_kinematics(
    elem: &ElemTable,
    qp: &QuadTable,
    sn: &State,
    snp1: &State,
) -> MidKinematics {
    let mut gun = [[0.0; 3]; 3];
    let mut gunp1 = [[0.0; 3]; 3];
    let mut gvm = [[0.0; 3]; 3];
    let mut v_n = [0.0; 3];
    let mut v_np1 = [0.0; 3];
    for (k, &node) in elem.vel_idx.iter().enumerate() {
        let nv = qp.vel_val[k];
        let g = qp.vel_grad[k];
        for i in 0..3 {
            let (un, unp1) = (sn.u[3 * node + i], snp1.u[3 * node + i]);
            let (vn, vnp1) = (sn.v[3 * node + i], snp1.v[3 * node + i]);
            v_n[i] += vn * nv;
            v_np1[i] += vnp1 * nv;
            for d in 0..3 {
                gun[i][d] += un * g[d];
                gunp1[i][d] += unp1 * g[d];
                gvm[i][d] += 0.5 * (vn + vnp1) * g[d];
            }
        }
    }
    let mut f_n = gun;
    let mut f_np1 = gunp1;
    let mut f_m = [[0.0; 3]; 3];
    for i in 0..3 {
        f_n[i][i] += 1.0;
        f_np1[i][i] += 1.0;
        for d in 0..3 {
            f_m[i][d] = 0.5 * (f_n[i][d] + f_np1[i][d]);
        }
    }
    MidKinematics {
        f_n: Tensor3(f_n),
        f_np1: Tensor3(f_np1),
        f_m: Tensor3(f_m),
        grad_v_m: Tensor3(gvm),
        v_n,
        v_np1,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::material::OgdenTerm;
    use crate::spline::TensorSpace;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unit_cube_model(material: OgdenModel, elems: [usize; 3]) -> DiscreteModel {
        let spaces = MixedSpaces::build(1, 1, 0, elems).unwrap();
        let geo = GeometryMap::bspline_box(&spaces.velocity, [0.0; 3], [1.0; 3]);
        DiscreteModel::new(spaces, geo, material, &[]).unwrap()
    }

    fn default_params(formula: StressFormula) -> SchemeParams {
        SchemeParams {
            dt: 0.01,
            gamma: 0.0,
            formula,
            variant: ElasticityVariant::Corrected,
            tol_b: 1e-10,
        }
    }

    /// Coefficients reproducing a linear field exactly (Greville sampling
    /// through the affine geometry).
    fn linear_field_coeffs(
        space: &TensorSpace,
        geo: &GeometryMap,
        f: impl Fn([f64; 3]) -> [f64; 3],
    ) -> Vec<f64> {
        let mut coeffs = vec![0.0; 3 * space.dim()];
        for (node, g) in space.greville_points().iter().enumerate() {
            let (x, _) = geo.eval(*g).unwrap();
            let v = f(x);
            for i in 0..3 {
                coeffs[3 * node + i] = v[i];
            }
        }
        coeffs
    }

    #[test]
    fn kinematic_residual_is_exact_vector_arithmetic() {
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [1, 1, 1]);
        let mut sn = State::zero(&model);
        let mut snp1 = State::zero(&model);
        let dt = 0.02;

        // Consistent update: zero residual.
        let mut rng = ChaCha8Rng::seed_from_u64(0xa55e_0001);
        for k in 0..sn.v.len() {
            sn.v[k] = rng.gen_range(-1.0..1.0);
            snp1.v[k] = rng.gen_range(-1.0..1.0);
            sn.u[k] = rng.gen_range(-1.0..1.0);
            snp1.u[k] = sn.u[k] + dt * 0.5 * (sn.v[k] + snp1.v[k]);
        }
        let r = model.residual_kinematic(&sn, &snp1, dt);
        assert!(r.iter().all(|&x| x.abs() <= 1e-14));

        // Random states match the hand-computed combination.
        for k in 0..sn.v.len() {
            snp1.u[k] = rng.gen_range(-1.0..1.0);
        }
        let r = model.residual_kinematic(&sn, &snp1, dt);
        for k in 0..r.len() {
            let want = (snp1.u[k] - sn.u[k]) / dt - 0.5 * (sn.v[k] + snp1.v[k]);
            assert!((r[k] - want).abs() <= 1e-14);
        }
    }

    #[test]
    fn mass_residual_vanishes_for_rigid_velocities() {
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [2, 2, 2]);
        let geo = model.geometry().clone();
        let space = model.spaces().velocity.clone();

        // Rigid translation.
        let mut s = State::zero(&model);
        for k in 0..model.n_vel() {
            s.v[3 * k] = 0.3;
            s.v[3 * k + 1] = -1.2;
            s.v[3 * k + 2] = 0.7;
        }
        let r = model.residual_mass(&s, &s).unwrap();
        assert!(r.iter().all(|&x| x.abs() <= 1e-12));

        // Rigid rotation about a skew axis: divergence-free.
        let omega = [0.4, -0.3, 1.1];
        let mut s = State::zero(&model);
        s.v = linear_field_coeffs(&space, &geo, |x| {
            [
                omega[1] * x[2] - omega[2] * x[1],
                omega[2] * x[0] - omega[0] * x[2],
                omega[0] * x[1] - omega[1] * x[0],
            ]
        });
        let r = model.residual_mass(&s, &s).unwrap();
        assert!(r.iter().all(|&x| x.abs() <= 1e-12));
    }

    #[test]
    fn mass_residual_of_pure_dilation_matches_exact_integrals() {
        // V = x on the undeformed unit cube (one element): the residual entry
        // for each trilinear pressure function is 3 * (1/2)^3.
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [1, 1, 1]);
        let geo = model.geometry().clone();
        let space = model.spaces().velocity.clone();
        let mut s = State::zero(&model);
        s.v = linear_field_coeffs(&space, &geo, |x| x);
        let r = model.residual_mass(&s, &s).unwrap();
        assert_eq!(r.len(), 8);
        for &entry in &r {
            assert!((entry - 3.0 / 8.0).abs() <= 1e-13, "entry {entry}");
        }
    }

    #[test]
    fn momentum_residual_vanishes_at_rest_and_under_uniform_motion() {
        let model = unit_cube_model(OgdenModel::neo_hookean(25.0, 2.0).unwrap(), [2, 2, 2]);
        let params = default_params(StressFormula::Gonzalez);
        let loads = Loads::default();

        let rest = State::zero(&model);
        let r = model.residual_momentum(&rest, &rest, &params, &loads).unwrap();
        assert!(r.iter().all(|&x| x.abs() <= 1e-12));

        // Uniform velocity, stress-free, inertia cancels between the states.
        let mut sn = State::zero(&model);
        for k in 0..model.n_vel() {
            sn.v[3 * k] = 1.5;
            sn.v[3 * k + 1] = -0.5;
            sn.v[3 * k + 2] = 2.0;
        }
        let mut snp1 = sn.clone();
        for k in 0..snp1.u.len() {
            snp1.u[k] = sn.u[k] + params.dt * sn.v[k];
        }
        let r = model.residual_momentum(&sn, &snp1, &params, &loads).unwrap();
        assert!(r.iter().all(|&x| x.abs() <= 1e-12));
    }

    /// Independent dense-quadrature oracle for the momentum residual on a
    /// single element with spatially constant kinematics: linear U and V
    /// fields, neo-Hookean midpoint stress evaluated through the
    /// invariant-based closed form.
    #[test]
    fn momentum_residual_matches_dense_quadrature_oracle() {
        let mu = 100.0;
        let rho0 = 2.5;
        let model = unit_cube_model(OgdenModel::neo_hookean(mu, rho0).unwrap(), [1, 1, 1]);
        let geo = model.geometry().clone();
        let vspace = model.spaces().velocity.clone();
        let pspace = model.spaces().pressure.clone();
        let dt = 0.01;
        let gamma = 7.5;
        let body = [0.4, -1.1, 0.9];

        let a_n = [[0.03, 0.01, -0.02], [0.0, -0.04, 0.015], [0.02, 0.0, 0.05]];
        let b_v = [[0.5, -0.2, 0.1], [0.3, 0.4, 0.0], [-0.1, 0.2, -0.6]];
        let v_c = [0.2, -0.3, 0.15];
        let apply = |m: [[f64; 3]; 3], x: [f64; 3]| {
            [
                m[0][0] * x[0] + m[0][1] * x[1] + m[0][2] * x[2],
                m[1][0] * x[0] + m[1][1] * x[1] + m[1][2] * x[2],
                m[2][0] * x[0] + m[2][1] * x[1] + m[2][2] * x[2],
            ]
        };

        let mut sn = State::zero(&model);
        sn.u = linear_field_coeffs(&vspace, &geo, |x| apply(a_n, x));
        sn.v = linear_field_coeffs(&vspace, &geo, |x| {
            let bx = apply(b_v, x);
            [bx[0] + v_c[0], bx[1] + v_c[1], bx[2] + v_c[2]]
        });
        let mut snp1 = sn.clone();
        for k in 0..sn.u.len() {
            snp1.u[k] = sn.u[k] + dt * sn.v[k]; // V_m = V_n = V_{n+1}
        }
        // Linear pressure field q0 + q . X on both time levels.
        let (q0, qv) = (1.3, [0.7, -0.4, 0.2]);
        for (node, g) in pspace.greville_points().iter().enumerate() {
            let (x, _) = geo.eval(*g).unwrap();
            sn.p[node] = q0 + qv[0] * x[0] + qv[1] * x[1] + qv[2] * x[2];
        }
        snp1.p = sn.p.clone();

        let params = SchemeParams { dt, gamma, ..default_params(StressFormula::MidpointOnly) };
        let loads = Loads {
            body: Some(LoadRule::Constant { value: body }),
            tractions: Vec::new(),
        };
        let r = model.residual_momentum(&sn, &snp1, &params, &loads).unwrap();

        // Oracle: all kinematic quantities in closed form, midpoint stress
        // from the invariant representation, 8-point Gauss per direction.
        let na_f = |m: [[f64; 3]; 3]| {
            nalgebra::Matrix3::from_fn(|i, j| m[i][j]) + nalgebra::Matrix3::identity()
        };
        let f_n = na_f(a_n);
        let f_np1 = {
            let mut m = a_n;
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += dt * b_v[i][j];
                }
            }
            na_f(m)
        };
        let f_m = (f_n + f_np1) * 0.5;
        let c_m = ((f_n.transpose() * f_n) + (f_np1.transpose() * f_np1)) * 0.5;
        let j_c = c_m.determinant().sqrt();
        let c_inv = c_m.try_inverse().unwrap();
        let i1 = c_m.trace();
        let s_mid = (nalgebra::Matrix3::identity() - c_inv * (i1 / 3.0))
            * (mu * j_c.powf(-2.0 / 3.0));
        let j_m = f_m.determinant();
        let fm_inv_t = f_m.try_inverse().unwrap().transpose();
        let g_v = nalgebra::Matrix3::from_fn(|i, j| b_v[i][j]);
        let div_v = (g_v.component_mul(&fm_inv_t)).sum();

        let (gp, gw) = gauss_legendre(8);
        let mut oracle = vec![0.0; r.len()];
        for &qz in &gp {
            for &qy in &gp {
                for &qx in &gp {
                    let u = [qx, qy, qz];
                    let w: f64 = gw[gp.iter().position(|&p| p == qx).unwrap()]
                        * gw[gp.iter().position(|&p| p == qy).unwrap()]
                        * gw[gp.iter().position(|&p| p == qz).unwrap()];
                    let basis = vspace.eval(u).unwrap();
                    let (x, _) = geo.eval(u).unwrap();
                    let p_m = q0 + qv[0] * x[0] + qv[1] * x[1] + qv[2] * x[2];
                    for (k, &node) in basis.indices.iter().enumerate() {
                        let na = basis.values[k];
                        let gr = nalgebra::Vector3::new(
                            basis.grads[k][0],
                            basis.grads[k][1],
                            basis.grads[k][2],
                        );
                        let fsg = f_m * (s_mid * gr);
                        let ga = fm_inv_t * gr;
                        for i in 0..3 {
                            // V_{n+1} = V_n: no inertia term.
                            oracle[3 * node + i] += w
                                * (fsg[i] + (gamma * div_v - p_m) * j_m * ga[i]
                                    - rho0 * na * body[i]);
                        }
                    }
                }
            }
        }
        let scale = oracle.iter().map(|x| x.abs()).fold(0.0, f64::max);
        for k in 0..r.len() {
            assert!(
                (r[k] - oracle[k]).abs() <= 1e-11 * scale,
                "dof {k}: {} vs {}",
                r[k],
                oracle[k]
            );
        }
    }

    #[test]
    fn constant_field_contraction_reduces_to_inertia_and_loads() {
        // Internal, pressure, and grad-div terms are annihilated by constant
        // test fields (partition of unity): the contracted residual equals
        // the inertia resultant minus external forces.
        let material = OgdenModel::new(
            vec![
                OgdenTerm { mu: 6.3e3, alpha: 1.3 },
                OgdenTerm { mu: 12.0, alpha: 5.0 },
                OgdenTerm { mu: -100.0, alpha: -2.0 },
            ],
            10.0,
        )
        .unwrap();
        let model = unit_cube_model(material, [2, 2, 2]);
        let params = SchemeParams { gamma: 15.0, ..default_params(StressFormula::Gonzalez) };
        let loads = Loads {
            body: Some(LoadRule::Constant { value: [0.3, -0.8, 0.5] }),
            tractions: vec![FaceLoad {
                face: Face::ZMax,
                rule: LoadRule::Constant { value: [3.0, -2.0, 5.0] },
            }],
        };

        let mut rng = ChaCha8Rng::seed_from_u64(0xa55e_0002);
        let mut sn = State::zero(&model);
        let mut snp1 = State::zero(&model);
        for k in 0..sn.u.len() {
            sn.u[k] = rng.gen_range(-0.02..0.02);
            sn.v[k] = rng.gen_range(-0.5..0.5);
            snp1.v[k] = rng.gen_range(-0.5..0.5);
            snp1.u[k] = sn.u[k] + params.dt * 0.5 * (sn.v[k] + snp1.v[k]);
        }
        for q in 0..sn.p.len() {
            sn.p[q] = rng.gen_range(-20.0..20.0);
            snp1.p[q] = rng.gen_range(-20.0..20.0);
        }

        let r = model.residual_momentum(&sn, &snp1, &params, &loads).unwrap();
        let mut contracted = [0.0; 3];
        for node in 0..model.n_vel() {
            for i in 0..3 {
                contracted[i] += r[3 * node + i];
            }
        }

        // Expected: integral rho0 (V_{n+1} - V_n)/dt - rho0 B - traction.
        let rho0 = model.material().rho0();
        let mut expected = [0.0; 3];
        let qn = model.state_quadrature(&sn).unwrap();
        let qnp1 = model.state_quadrature(&snp1).unwrap();
        for (a, b) in qn.iter().zip(&qnp1) {
            for i in 0..3 {
                expected[i] += a.weight * rho0 * (b.v[i] - a.v[i]) / params.dt;
            }
        }
        let b = [0.3, -0.8, 0.5];
        let h = [3.0, -2.0, 5.0];
        for i in 0..3 {
            expected[i] -= rho0 * b[i]; // unit volume
            expected[i] -= h[i]; // unit face area
        }
        let scale = expected.iter().map(|x| x.abs()).fold(1.0, f64::max);
        for i in 0..3 {
            assert!(
                (contracted[i] - expected[i]).abs() <= 1e-11 * scale,
                "component {i}: {} vs {}",
                contracted[i],
                expected[i]
            );
        }
    }

    #[test]
    fn traction_resultant_matches_dead_load() {
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [2, 2, 2]);
        let params = default_params(StressFormula::Gonzalez);
        let loads = Loads {
            body: None,
            tractions: vec![FaceLoad {
                face: Face::ZMax,
                rule: LoadRule::Constant { value: [3.0, -2.0, 5.0] },
            }],
        };
        let rest = State::zero(&model);
        let r = model.residual_momentum(&rest, &rest, &params, &loads).unwrap();
        let mut total = [0.0; 3];
        for node in 0..model.n_vel() {
            for i in 0..3 {
                total[i] += r[3 * node + i];
            }
        }
        for (i, want) in [-3.0, 2.0, -5.0].into_iter().enumerate() {
            assert!((total[i] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn load_rules_evaluate_their_time_laws() {
        let c = LoadRule::Constant { value: [1.0, 2.0, 3.0] };
        assert_eq!(c.eval(17.0), [1.0, 2.0, 3.0]);

        let h = LoadRule::Harmonic {
            cos_amplitude: [200.0, 0.0, 0.0],
            sin_amplitude: [0.0, 100.0, 0.0],
            omega: 8.0,
        };
        let t = 0.37;
        let v = h.eval(t);
        assert!((v[0] - 200.0 * (8.0 * t).cos()).abs() <= 1e-12);
        assert!((v[1] - 100.0 * (8.0 * t).sin()).abs() <= 1e-12);
        assert_eq!(v[2], 0.0);

        let r = LoadRule::Rotational {
            amplitude: [2.0, 0.0, 0.0],
            axis: [0.0, 0.0, 3.0],
            omega: 1.0,
        };
        assert_eq!(r.eval(0.0), [2.0, 0.0, 0.0]);
        let quarter = r.eval(std::f64::consts::FRAC_PI_2);
        assert!(quarter[0].abs() <= 1e-12);
        assert!((quarter[1] - 2.0).abs() <= 1e-12);
        let norm = |v: [f64; 3]| (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        assert!((norm(r.eval(1.234)) - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn element_inversion_is_reported() {
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [1, 1, 1]);
        let geo = model.geometry().clone();
        let space = model.spaces().velocity.clone();
        let mut s = State::zero(&model);
        s.u = linear_field_coeffs(&space, &geo, |x| [-2.0 * x[0], 0.0, 0.0]);
        let err = model.residual_mass(&s, &s).unwrap_err();
        assert!(matches!(err, AssemblyError::ElementInversion { element: 0, .. }));
    }

    // ---- Finite-difference verification of the tangent blocks ----

    fn dense_from_triplets(
        triplets: &[(usize, usize, f64)],
        rows: usize,
        cols: usize,
    ) -> Vec<f64> {
        let mut m = vec![0.0; rows * cols];
        for &(r, c, v) in triplets {
            m[r * cols + c] += v;
        }
        m
    }

    fn frobenius(m: &[f64]) -> f64 {
        m.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn random_consistent_states(
        model: &DiscreteModel,
        dt: f64,
        seed: u64,
    ) -> (State, State) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sn = State::zero(model);
        let mut snp1 = State::zero(model);
        for k in 0..sn.u.len() {
            sn.u[k] = rng.gen_range(-0.03..0.03);
            sn.v[k] = rng.gen_range(-0.8..0.8);
            snp1.v[k] = sn.v[k] + rng.gen_range(-0.2..0.2);
            snp1.u[k] = sn.u[k] + dt * 0.5 * (sn.v[k] + snp1.v[k]);
        }
        for q in 0..sn.p.len() {
            sn.p[q] = rng.gen_range(-30.0..30.0);
            snp1.p[q] = rng.gen_range(-30.0..30.0);
        }
        (sn, snp1)
    }

    fn fd_check_a_block(formula: StressFormula, material: OgdenModel, seed: u64) {
        let model = unit_cube_model(material, [1, 1, 1]);
        let params = SchemeParams {
            gamma: 10.0,
            ..default_params(formula)
        };
        let loads = Loads::default();
        let (sn, snp1) = random_consistent_states(&model, params.dt, seed);

        let blocks = model.tangent_blocks(&sn, &snp1, &params).unwrap();
        let nv = 3 * model.n_vel();
        let a = dense_from_triplets(&blocks.a, nv, nv);

        // h = 1e-5 balances truncation against roundoff for the quotient
        // structure of the enhanced tangents.
        let h = 1e-5;
        let mut fd = vec![0.0; nv * nv];
        for col in 0..nv {
            let mut plus = snp1.clone();
            plus.v[col] += h;
            plus.u[col] += 0.5 * params.dt * h;
            let mut minus = snp1.clone();
            minus.v[col] -= h;
            minus.u[col] -= 0.5 * params.dt * h;
            let rp = model.residual_momentum(&sn, &plus, &params, &loads).unwrap();
            let rm = model.residual_momentum(&sn, &minus, &params, &loads).unwrap();
            for row in 0..nv {
                fd[row * nv + col] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let diff: Vec<f64> = a.iter().zip(&fd).map(|(x, y)| x - y).collect();
        let rel = frobenius(&diff) / frobenius(&fd);
        assert!(rel <= 1e-5, "A-block FD mismatch: relative {rel:e}");
    }

    #[test]
    fn velocity_tangent_matches_finite_differences_enhanced() {
        fd_check_a_block(
            StressFormula::Gonzalez,
            OgdenModel::neo_hookean(5e3, 3.0).unwrap(),
            0xa55e_0003,
        );
    }

    #[test]
    fn velocity_tangent_matches_finite_differences_coaxial_ogden() {
        let material = OgdenModel::new(
            vec![
                OgdenTerm { mu: 6.3e3, alpha: 1.3 },
                OgdenTerm { mu: 12.0, alpha: 5.0 },
                OgdenTerm { mu: -100.0, alpha: -2.0 },
            ],
            3.0,
        )
        .unwrap();
        fd_check_a_block(StressFormula::Coaxial, material, 0xa55e_0004);
    }

    #[test]
    fn pressure_tangent_matches_finite_differences() {
        let model = unit_cube_model(OgdenModel::neo_hookean(5e3, 3.0).unwrap(), [1, 1, 1]);
        let params = default_params(StressFormula::Gonzalez);
        let loads = Loads::default();
        let (sn, snp1) = random_consistent_states(&model, params.dt, 0xa55e_0005);

        let blocks = model.tangent_blocks(&sn, &snp1, &params).unwrap();
        let nv = 3 * model.n_vel();
        let np = model.n_pres();
        let b = dense_from_triplets(&blocks.b, nv, np);

        let h = 1e-4;
        let mut fd = vec![0.0; nv * np];
        for col in 0..np {
            let mut plus = snp1.clone();
            plus.p[col] += h;
            let mut minus = snp1.clone();
            minus.p[col] -= h;
            let rp = model.residual_momentum(&sn, &plus, &params, &loads).unwrap();
            let rm = model.residual_momentum(&sn, &minus, &params, &loads).unwrap();
            for row in 0..nv {
                fd[row * np + col] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let diff: Vec<f64> = b.iter().zip(&fd).map(|(x, y)| x - y).collect();
        let rel = frobenius(&diff) / frobenius(&fd);
        assert!(rel <= 1e-6, "B-block FD mismatch: relative {rel:e}");
    }

    #[test]
    fn mass_tangent_matches_finite_differences() {
        let model = unit_cube_model(OgdenModel::neo_hookean(5e3, 3.0).unwrap(), [1, 1, 1]);
        let params = SchemeParams { gamma: 10.0, ..default_params(StressFormula::Gonzalez) };
        let (sn, snp1) = random_consistent_states(&model, params.dt, 0xa55e_0006);

        let blocks = model.tangent_blocks(&sn, &snp1, &params).unwrap();
        let nv = 3 * model.n_vel();
        let np = model.n_pres();
        let c = dense_from_triplets(&blocks.c, np, nv);

        let h = 1e-6;
        let mut fd = vec![0.0; np * nv];
        for col in 0..nv {
            let mut plus = snp1.clone();
            plus.v[col] += h;
            plus.u[col] += 0.5 * params.dt * h;
            let mut minus = snp1.clone();
            minus.v[col] -= h;
            minus.u[col] -= 0.5 * params.dt * h;
            let rp = model.residual_mass(&sn, &plus).unwrap();
            let rm = model.residual_mass(&sn, &minus).unwrap();
            for row in 0..np {
                fd[row * nv + col] = (rp[row] - rm[row]) / (2.0 * h);
            }
        }
        let diff: Vec<f64> = c.iter().zip(&fd).map(|(x, y)| x - y).collect();
        let rel = frobenius(&diff) / frobenius(&fd);
        assert!(rel <= 1e-5, "C-block FD mismatch: relative {rel:e}");
    }

    #[test]
    fn dirichlet_faces_fix_every_component() {
        let spaces = MixedSpaces::build(1, 1, 0, [2, 2, 3]).unwrap();
        let geo = GeometryMap::bspline_box(&spaces.velocity, [0.0; 3], [1.0, 1.0, 2.0]);
        let model = DiscreteModel::new(
            spaces,
            geo,
            OgdenModel::neo_hookean(10.0, 1.0).unwrap(),
            &[Face::ZMin],
        )
        .unwrap();
        let fixed = model.velocity_fixed_mask();
        let layer = model.spaces().velocity.face_indices(Face::ZMin);
        assert_eq!(fixed.iter().filter(|&&f| f).count(), 3 * layer.len());
        for node in layer {
            for i in 0..3 {
                assert!(fixed[3 * node + i]);
            }
        }
    }

    #[test]
    fn quad_point_data_reports_unimodular_modified_metric() {
        let model = unit_cube_model(OgdenModel::neo_hookean(10.0, 1.0).unwrap(), [1, 1, 1]);
        let params = default_params(StressFormula::Gonzalez);
        let (sn, snp1) = random_consistent_states(&model, params.dt, 0xa55e_0007);
        let data = model.quad_point_data(&sn, &snp1, &params).unwrap();
        assert_eq!(
            data.len(),
            model.n_elements() * model.quadrature_points_per_element()
        );
        for qp in &data {
            assert!(qp.j_m > 0.0);
            assert!((qp.c_tilde_m.det() - 1.0).abs() <= 1e-12);
            assert!(qp.weight > 0.0);
        }
    }
}
