//! Kinematics and rigid-body dynamics of the planar 4-R chain.
//!
//! The inverse dynamics is a planar recursive Newton-Euler pass (three
//! coordinates per spatial quantity: two linear, one angular). The model
//! terms `M(q)`, `C(q, qd) qd` and `g(q)` are never formed symbolically; they
//! are recovered by evaluating the recursion at chosen accelerations, see
//! [`extract_terms`].

use nalgebra::{Matrix3, Matrix3x4, Matrix4};

use crate::error::{Error, Result};
use crate::model::{ChainModel, Vec2, Vec3, Vec4, Wrench, N_JOINTS};

pub type Jacobian = Matrix3x4<f64>;

/// `a x b` for in-plane vectors `(x, z)`; positive about the pitch axis.
#[inline]
fn cross(a: &Vec2, b: &Vec2) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

/// `w x r` for an out-of-plane angular quantity `w`.
#[inline]
fn spin(w: f64, r: &Vec2) -> Vec2 {
    Vec2::new(-w * r[1], w * r[0])
}

/// Unit vectors along each link, at absolute angles `q0`, `q0 + q1`, ...
#[inline]
fn link_directions(q: &Vec4) -> [Vec2; N_JOINTS] {
    let mut u = [Vec2::zeros(); N_JOINTS];
    let mut phi = 0.0;
    for i in 0..N_JOINTS {
        phi += q[i];
        let (s, c) = phi.sin_cos();
        u[i] = Vec2::new(c, s);
    }
    u
}

/// Link directions at a configuration, able to move to nearby
/// configurations without fresh trigonometry.
#[derive(Debug, Clone, Copy)]
pub struct LinkFrames {
    q: Vec4,
    u: [Vec2; N_JOINTS],
}

impl LinkFrames {
    pub fn new(q: &Vec4) -> Self {
        Self {
            q: *q,
            u: link_directions(q),
        }
    }

    /// Directions at `q` by rotating these ones. Increments below 0.05 rad
    /// use a Taylor series that is exact to double precision; larger ones
    /// fall back to `sin_cos`.
    pub fn moved_to(&self, q: &Vec4) -> Self {
        let mut u = [Vec2::zeros(); N_JOINTS];
        let mut delta = 0.0;
        for i in 0..N_JOINTS {
            delta += q[i] - self.q[i];
            let (s, c) = if delta.abs() < 0.05 {
                let d2 = delta * delta;
                let s = delta * (1.0 - d2 / 6.0 * (1.0 - d2 / 20.0 * (1.0 - d2 / 42.0 * (1.0 - d2 / 72.0))));
                let c = 1.0 - d2 / 2.0 * (1.0 - d2 / 12.0 * (1.0 - d2 / 30.0 * (1.0 - d2 / 56.0 * (1.0 - d2 / 90.0))));
                (s, c)
            } else {
                delta.sin_cos()
            };
            let b = self.u[i];
            u[i] = Vec2::new(b[0] * c - b[1] * s, b[0] * s + b[1] * c);
        }
        Self { q: *q, u }
    }

    pub fn q(&self) -> &Vec4 {
        &self.q
    }
}

/// Positions of the four joints followed by the end-effector.
pub fn joint_positions(model: &ChainModel, q: &Vec4) -> [Vec2; N_JOINTS + 1] {
    positions_from(model, &link_directions(q))
}

fn positions_from(model: &ChainModel, u: &[Vec2; N_JOINTS]) -> [Vec2; N_JOINTS + 1] {
    let mut pts = [Vec2::zeros(); N_JOINTS + 1];
    for i in 0..N_JOINTS {
        pts[i + 1] = pts[i] + model.links[i].length * u[i];
    }
    pts
}

/// End-effector pose `(x, z, theta)` in the base frame.
pub fn forward_kinematics(model: &ChainModel, q: &Vec4) -> Vec3 {
    let p = joint_positions(model, q)[N_JOINTS];
    Vec3::new(p[0], p[1], q.sum())
}

/// Geometric Jacobian with rows `(x, z, theta)`.
pub fn jacobian(model: &ChainModel, q: &Vec4) -> Jacobian {
    let pts = joint_positions(model, q);
    let ee = pts[N_JOINTS];
    let mut j = Jacobian::zeros();
    for i in 0..N_JOINTS {
        let r = ee - pts[i];
        j[(0, i)] = -r[1];
        j[(1, i)] = r[0];
        j[(2, i)] = 1.0;
    }
    j
}

/// End-effector twist `J(q) qd`.
pub fn task_velocity(model: &ChainModel, q: &Vec4, qd: &Vec4) -> Vec3 {
    jacobian(model, q) * qd
}

/// `Jdot(q, qd) qd`, the velocity-product part of the end-effector
/// acceleration.
pub fn jdot_qd(model: &ChainModel, q: &Vec4, qd: &Vec4) -> Vec3 {
    let u = link_directions(q);
    let mut w = 0.0;
    let mut out = Vec3::zeros();
    for i in 0..N_JOINTS {
        w += qd[i];
        let l = model.links[i].length;
        out[0] -= l * u[i][0] * w * w;
        out[1] -= l * u[i][1] * w * w;
    }
    out
}

/// Inverse dynamics by recursive Newton-Euler.
///
/// Returns `tau = M(q) qdd + C(q, qd) qd + g(q) - J(q)^T ext`, where `ext`
/// is the wrench the environment applies at the end-effector.
pub fn rnea(model: &ChainModel, q: &Vec4, qd: &Vec4, qdd: &Vec4, ext: &Wrench) -> Vec4 {
    rnea_from(model, &link_directions(q), qd, qdd, ext)
}

fn rnea_from(
    model: &ChainModel,
    u: &[Vec2; N_JOINTS],
    qd: &Vec4,
    qdd: &Vec4,
    ext: &Wrench,
) -> Vec4 {
    // Outward pass. Gravity enters as an upward acceleration of the base.
    let mut acc = -model.gravity;
    let mut omega = 0.0;
    let mut alpha = 0.0;
    let mut axis = [Vec2::zeros(); N_JOINTS];
    let mut com = [Vec2::zeros(); N_JOINTS];
    let mut force = [Vec2::zeros(); N_JOINTS];
    let mut moment = [0.0; N_JOINTS];
    for i in 0..N_JOINTS {
        let link = &model.links[i];
        omega += qd[i];
        alpha += qdd[i];
        let r = link.length * u[i];
        let rc = link.com_offset * u[i];
        let w2 = omega * omega;
        let acc_com = acc + spin(alpha, &rc) - w2 * rc;
        force[i] = link.mass * acc_com;
        moment[i] = link.inertia_planar * alpha;
        axis[i] = r;
        com[i] = rc;
        acc += spin(alpha, &r) - w2 * r;
    }

    // Inward pass. `f_next`, `n_next` are what link i exerts on its child.
    let mut f_next = Vec2::new(-ext.fx, -ext.fz);
    let mut n_next = -ext.tau;
    let mut tau = Vec4::zeros();
    for i in (0..N_JOINTS).rev() {
        let f = force[i] + f_next;
        let n = moment[i] + cross(&com[i], &force[i]) + n_next + cross(&axis[i], &f_next);
        tau[i] = n;
        f_next = f;
        n_next = n;
    }
    tau
}

/// Model terms of the equation of motion at one state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DynamicsTerms {
    pub mass_matrix: Matrix4<f64>,
    /// `C(q, qd) qd + g(q)`
    pub bias: Vec4,
    pub gravity_vec: Vec4,
}

/// Recovers `M`, `C qd + g` and `g` from six RNEA evaluations: one at rest,
/// one with the actual velocity, and one per unit joint acceleration.
pub fn extract_terms(model: &ChainModel, q: &Vec4, qd: &Vec4) -> DynamicsTerms {
    let zero = Vec4::zeros();
    let gravity_vec = rnea(model, q, &zero, &zero, &Wrench::ZERO);
    let bias = rnea(model, q, qd, &zero, &Wrench::ZERO);
    let mass_matrix = mass_matrix_with_gravity(model, q, &gravity_vec);
    DynamicsTerms {
        mass_matrix,
        bias,
        gravity_vec,
    }
}

pub fn mass_matrix(model: &ChainModel, q: &Vec4) -> Matrix4<f64> {
    let zero = Vec4::zeros();
    let g = rnea(model, q, &zero, &zero, &Wrench::ZERO);
    mass_matrix_with_gravity(model, q, &g)
}

fn mass_matrix_with_gravity(model: &ChainModel, q: &Vec4, gravity_vec: &Vec4) -> Matrix4<f64> {
    let zero = Vec4::zeros();
    let mut m = Matrix4::zeros();
    for i in 0..N_JOINTS {
        let col = rnea(model, q, &zero, &Vec4::ith(i, 1.0), &Wrench::ZERO) - gravity_vec;
        m.set_column(i, &col);
    }
    m
}

/// Joints whose motion is suppressed by a mechanical clamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct JointLocks(pub [bool; N_JOINTS]);

impl JointLocks {
    pub const NONE: JointLocks = JointLocks([false; N_JOINTS]);

    /// Locks implied by the model's bench flag.
    pub fn for_model(model: &ChainModel) -> Self {
        let mut locks = [false; N_JOINTS];
        locks[0] = model.base_fixed;
        JointLocks(locks)
    }

    pub fn is_locked(&self, i: usize) -> bool {
        self.0[i]
    }

    /// Zeroes the locked entries of a joint-space vector.
    pub fn apply(&self, mut v: Vec4) -> Vec4 {
        for i in 0..N_JOINTS {
            if self.0[i] {
                v[i] = 0.0;
            }
        }
        v
    }

    /// Replaces locked rows and columns with the identity so that solving
    /// with the result leaves the free block untouched and yields zero on
    /// the locked coordinates (given a zeroed right-hand side).
    pub(crate) fn restrict(&self, m: &Matrix4<f64>) -> Matrix4<f64> {
        let mut out = *m;
        for i in 0..N_JOINTS {
            if self.0[i] {
                for j in 0..N_JOINTS {
                    out[(i, j)] = 0.0;
                    out[(j, i)] = 0.0;
                }
                out[(i, i)] = 1.0;
            }
        }
        out
    }

    /// Inverse of the free block of `m`, embedded with zeros in the locked
    /// rows and columns.
    pub fn constrained_inverse(&self, m: &Matrix4<f64>) -> Result<Matrix4<f64>> {
        let restricted = self.restrict(m);
        if restricted.cholesky().is_none() {
            return Err(Error::Singular("mass matrix is not positive definite"));
        }
        let mut inv = restricted
            .try_inverse()
            .ok_or(Error::Singular("mass matrix is not invertible"))?;
        for i in 0..N_JOINTS {
            if self.0[i] {
                inv[(i, i)] = 0.0;
            }
        }
        Ok(inv)
    }
}

/// Joint accelerations produced by `tau` and the end-effector wrench `ext`,
/// with locked joints held at zero acceleration.
pub fn forward_dynamics(
    model: &ChainModel,
    q: &Vec4,
    qd: &Vec4,
    tau: &Vec4,
    ext: &Wrench,
    locks: JointLocks,
) -> Result<Vec4> {
    forward_dynamics_at(model, &LinkFrames::new(q), qd, tau, ext, locks)
}

/// [`forward_dynamics`] with precomputed link frames.
pub fn forward_dynamics_at(
    model: &ChainModel,
    frames: &LinkFrames,
    qd: &Vec4,
    tau: &Vec4,
    ext: &Wrench,
    locks: JointLocks,
) -> Result<Vec4> {
    let m = composite_mass_matrix(model, &frames.u);
    // rnea with zero acceleration gives C qd + g - J^T ext.
    let h = rnea_from(model, &frames.u, &locks.apply(*qd), &Vec4::zeros(), ext);
    let rhs = locks.apply(tau - h);
    let chol = locks
        .restrict(&m)
        .cholesky()
        .ok_or(Error::Singular("mass matrix is not positive definite"))?;
    Ok(locks.apply(chol.solve(&rhs)))
}

/// Joint-space inertia in closed form: `M_ij` sums, over the links `k`
/// outboard of both joints, `m_k (c_k - p_i).(c_k - p_j) + I_k`. Used by
/// the plant, where it is evaluated many times per control tick.
pub fn joint_inertia(model: &ChainModel, q: &Vec4) -> Matrix4<f64> {
    composite_mass_matrix(model, &link_directions(q))
}

/// [`joint_inertia`] with precomputed link frames.
pub fn joint_inertia_at(model: &ChainModel, frames: &LinkFrames) -> Matrix4<f64> {
    composite_mass_matrix(model, &frames.u)
}

fn composite_mass_matrix(model: &ChainModel, u: &[Vec2; N_JOINTS]) -> Matrix4<f64> {
    let p = positions_from(model, u);
    let mut m = Matrix4::zeros();
    for k in 0..N_JOINTS {
        let link = &model.links[k];
        let c = p[k] + link.com_offset * u[k];
        for i in 0..=k {
            let ri = c - p[i];
            for j in 0..=i {
                let v = link.mass * ri.dot(&(c - p[j])) + link.inertia_planar;
                m[(i, j)] += v;
            }
        }
    }
    for i in 0..N_JOINTS {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
    m
}

/// Apparent end-effector inertia `(J M^-1 J^T + lambda^2 I)^-1`, taking the
/// bench clamp of the base joint into account.
pub fn task_inertia(model: &ChainModel, q: &Vec4, lambda: f64) -> Result<Matrix3<f64>> {
    task_inertia_with_locks(model, q, lambda, JointLocks::for_model(model))
}

/// Inverse of the task inertia before regularisation, `J M^-1 J^T`, over the
/// unlocked joints.
pub fn task_mobility(model: &ChainModel, q: &Vec4, locks: JointLocks) -> Result<Matrix3<f64>> {
    let minv = locks.constrained_inverse(&mass_matrix(model, q))?;
    let j = jacobian(model, q);
    Ok(j * minv * j.transpose())
}

pub fn task_inertia_with_locks(
    model: &ChainModel,
    q: &Vec4,
    lambda: f64,
    locks: JointLocks,
) -> Result<Matrix3<f64>> {
    let mob = task_mobility(model, q, locks)?;
    if lambda == 0.0 {
        let sv = mob.singular_values();
        if sv.min() <= 1e-12 * sv.max() {
            return Err(Error::Singular("task mobility J M^-1 J^T"));
        }
    }
    let lambda_mat = (mob + Matrix3::identity() * (lambda * lambda))
        .try_inverse()
        .ok_or(Error::Singular("task mobility J M^-1 J^T"))?;
    Ok(0.5 * (lambda_mat + lambda_mat.transpose()))
}

/// Closed-form bench inverse kinematics: with the base angle `q0` given, the
/// remaining three joints place the end-effector at `pose` exactly.
///
/// `elbow_up` selects the branch where the hind spine link points above the
/// line joining its proximal joint to the front-body joint.
pub fn inverse_kinematics_bench(
    model: &ChainModel,
    pose: &Vec3,
    q0: f64,
    elbow_up: bool,
) -> Result<Vec4> {
    let [l0, l1, l2, l3] = model.links.map(|l| l.length);
    let base = l0 * Vec2::new(q0.cos(), q0.sin());
    let wrist = Vec2::new(pose[0], pose[1]) - l3 * Vec2::new(pose[2].cos(), pose[2].sin());
    let d = wrist - base;
    let r2 = d.norm_squared();
    let c2 = (r2 - l1 * l1 - l2 * l2) / (2.0 * l1 * l2);
    if !(-1.0..=1.0).contains(&c2) {
        return Err(Error::NoSolution(format!(
            "pose ({:.4}, {:.4}, {:.4}) is outside the bench workspace",
            pose[0], pose[1], pose[2]
        )));
    }
    let q2 = if elbow_up { -c2.acos() } else { c2.acos() };
    let q1 = d[1].atan2(d[0]) - (l2 * q2.sin()).atan2(l1 + l2 * q2.cos()) - q0;
    let q3 = pose[2] - q0 - q1 - q2;
    Ok(Vec4::new(q0, q1, q2, q3))
}

/// Bench configuration reaching `pose` with the base at zero, elbow up.
pub fn bench_configuration(model: &ChainModel, pose: &Vec3) -> Result<Vec4> {
    inverse_kinematics_bench(model, pose, 0.0, true)
}
