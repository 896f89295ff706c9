//! Domain types for the planar 4-R spine chain and its controllers.
//!
//! Units are SI throughout and angles are in radians. The task frame is the
//! sagittal plane: `x` forward, `z` up, and `theta` the pitch angle measured
//! from `+x` towards `+z`.

use nalgebra::{Matrix3, Vector2, Vector3, Vector4};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Vec4 = Vector4<f64>;

/// Number of joints (and links) in the chain.
pub const N_JOINTS: usize = 4;

/// Per-joint actuator torque limit, N·m.
pub const TORQUE_LIMIT: f64 = 12.0;

/// Largest gravity magnitude accepted by [`ChainModel::validate`], m/s².
pub const MAX_GRAVITY: f64 = 20.0;

pub const STANDARD_GRAVITY: f64 = 9.81;

/// Inertial and geometric parameters of one rigid link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkParams {
    /// kg
    pub mass: f64,
    /// Distance from the proximal joint to the distal joint, m.
    pub length: f64,
    /// Centre of mass position along the link axis from the proximal joint, m.
    pub com_offset: f64,
    /// Rotational inertia about the out-of-plane axis through the CoM, kg·m².
    pub inertia_planar: f64,
}

impl LinkParams {
    /// Link with its centre of mass at the geometric midpoint.
    pub fn midpoint(mass: f64, length: f64, inertia_planar: f64) -> Self {
        Self {
            mass,
            length,
            com_offset: 0.5 * length,
            inertia_planar,
        }
    }

    /// Inertia about the proximal joint axis (parallel axis theorem).
    pub fn inertia_about_joint(&self) -> f64 {
        self.inertia_planar + self.mass * self.com_offset * self.com_offset
    }

    pub fn validate(&self, index: usize) -> Result<()> {
        let field = |name: &str| format!("links[{index}].{name}");
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(Error::invariant("LinkParams", field("mass"), "must be > 0"));
        }
        if !(self.length.is_finite() && self.length > 0.0) {
            return Err(Error::invariant("LinkParams", field("length"), "must be > 0"));
        }
        if !(self.com_offset >= 0.0 && self.com_offset <= self.length) {
            return Err(Error::invariant(
                "LinkParams",
                field("com_offset"),
                "must lie in [0, length]",
            ));
        }
        if !(self.inertia_planar.is_finite() && self.inertia_planar >= 0.0) {
            return Err(Error::invariant(
                "LinkParams",
                field("inertia_planar"),
                "must be >= 0",
            ));
        }
        Ok(())
    }
}

/// Kinematic and inertial description of the planar 4-R chain.
///
/// Links are ordered hind body, hind spine, front spine, front body. Joint
/// `i` sits at the proximal end of link `i`; joint 0 is the base joint that
/// is mechanically fixed on the bench.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChainModel {
    pub links: [LinkParams; N_JOINTS],
    /// Gravity in the task frame, m/s².
    pub gravity: Vec2,
    /// Bench mode: the base joint is clamped (`qd[0] = qdd[0] = 0`) and its
    /// torque command is unused.
    pub base_fixed: bool,
}

impl ChainModel {
    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Length of the fully stretched chain.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn with_gravity(mut self, gravity: Vec2) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn without_gravity(self) -> Self {
        self.with_gravity(Vec2::zeros())
    }

    pub fn validate(&self) -> Result<()> {
        for (i, link) in self.links.iter().enumerate() {
            link.validate(i)?;
        }
        let g = self.gravity.norm();
        if !g.is_finite() || g > MAX_GRAVITY {
            return Err(Error::invariant(
                "ChainModel",
                "gravity",
                format!("magnitude must be <= {MAX_GRAVITY} m/s²"),
            ));
        }
        Ok(())
    }
}

/// Spine parameters as built: masses, lengths and pitch-axis inertias of the
/// four segments, centres of mass at the link midpoints, gravity in-plane and
/// the base clamped.
pub fn default_sparc_model() -> ChainModel {
    // Inertias are tabulated in kg·mm².
    const MM2: f64 = 1e-6;
    ChainModel {
        links: [
            LinkParams::midpoint(0.377, 0.0632, 328.0 * MM2),
            LinkParams::midpoint(0.376, 0.1175, 502.0 * MM2),
            LinkParams::midpoint(0.414, 0.1175, 175.0 * MM2),
            LinkParams::midpoint(0.06, 0.0632, 92.0 * MM2),
        ],
        gravity: Vec2::new(0.0, -STANDARD_GRAVITY),
        base_fixed: true,
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JointState {
    pub q: Vec4,
    pub qd: Vec4,
    pub t: f64,
}

impl JointState {
    pub fn at_rest(q: Vec4) -> Self {
        Self {
            q,
            qd: Vec4::zeros(),
            t: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite()) && self.t.is_finite()
    }
}

/// End-effector pose and twist in the task frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskState {
    pub x: f64,
    pub z: f64,
    pub theta: f64,
    pub xd: f64,
    pub zd: f64,
    pub thetad: f64,
}

impl TaskState {
    pub fn from_vectors(pos: Vec3, vel: Vec3) -> Self {
        Self {
            x: pos[0],
            z: pos[1],
            theta: pos[2],
            xd: vel[0],
            zd: vel[1],
            thetad: vel[2],
        }
    }

    pub fn position(&self) -> Vec3 {
        Vec3::new(self.x, self.z, self.theta)
    }

    pub fn velocity(&self) -> Vec3 {
        Vec3::new(self.xd, self.zd, self.thetad)
    }
}

/// Desired task-space trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskTarget {
    pub pos: Vec3,
    pub vel: Vec3,
    pub acc: Vec3,
}

impl TaskTarget {
    /// Static set point with zero desired velocity and acceleration.
    pub fn fixed(pos: Vec3) -> Self {
        Self {
            pos,
            vel: Vec3::zeros(),
            acc: Vec3::zeros(),
        }
    }

    pub fn is_static(&self) -> bool {
        self.vel == Vec3::zeros() && self.acc == Vec3::zeros()
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &Vec3| v.iter().all(|x| x.is_finite());
        if !(finite(&self.pos) && finite(&self.vel) && finite(&self.acc)) {
            return Err(Error::invariant("TaskTarget", "pos/vel/acc", "must be finite"));
        }
        Ok(())
    }
}

/// Equilibrium pose used by the bench experiments.
pub fn bench_equilibrium() -> Vec3 {
    Vec3::new(0.273, 0.0, 0.0)
}

/// Diagonal task-space stiffness and damping plus the pseudoinverse damping.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ImpedanceGains {
    /// (k_x N/m, k_z N/m, k_theta N·m/rad)
    pub k: Vec3,
    /// (d_x N·s/m, d_z N·s/m, d_theta N·m·s/rad)
    pub d: Vec3,
    pub lambda_dls: f64,
}

impl Default for ImpedanceGains {
    fn default() -> Self {
        Self {
            k: Vec3::new(500.0, 1000.0, 15.0),
            d: Vec3::new(10.0, 3.0, 0.02),
            lambda_dls: 1e-2,
        }
    }
}

impl ImpedanceGains {
    pub fn stiffness(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.k)
    }

    pub fn damping(&self) -> Matrix3<f64> {
        Matrix3::from_diagonal(&self.d)
    }

    pub fn with_kx(mut self, k_x: f64) -> Self {
        self.k[0] = k_x;
        self
    }

    pub fn with_dx(mut self, d_x: f64) -> Self {
        self.d[0] = d_x;
        self
    }

    pub fn validate(&self) -> Result<()> {
        const AXES: [&str; 3] = ["x", "z", "theta"];
        for (i, axis) in AXES.iter().enumerate() {
            if !(self.k[i].is_finite() && self.k[i] >= 0.0) {
                return Err(Error::invariant(
                    "ImpedanceGains",
                    format!("k_{axis}"),
                    "must be >= 0",
                ));
            }
            if !(self.d[i].is_finite() && self.d[i] >= 0.0) {
                return Err(Error::invariant(
                    "ImpedanceGains",
                    format!("d_{axis}"),
                    "must be >= 0",
                ));
            }
        }
        if !(self.lambda_dls.is_finite() && self.lambda_dls >= 0.0) {
            return Err(Error::invariant("ImpedanceGains", "lambda_dls", "must be >= 0"));
        }
        Ok(())
    }
}

/// Smooth Stribeck friction parameters for one joint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrictionParams {
    /// Coulomb level, N·m.
    pub tau_c: f64,
    /// Static (breakaway) level, N·m.
    pub tau_s: f64,
    /// Viscous coefficient, N·m·s/rad.
    pub b_visc: f64,
    /// Stribeck velocity, rad/s.
    pub qd_s: f64,
    /// Stribeck shape exponent.
    pub a_shape: f64,
    /// tanh sharpness, s/rad.
    pub beta: f64,
}

impl FrictionParams {
    /// Default plant friction used when nothing has been identified.
    pub const PLANT_DEFAULT: FrictionParams = FrictionParams {
        tau_c: 0.05,
        tau_s: 0.12,
        b_visc: 0.005,
        qd_s: 0.1,
        a_shape: 2.0,
        beta: 200.0,
    };

    /// No friction at all (shape parameters kept valid).
    pub const ZERO: FrictionParams = FrictionParams {
        tau_c: 0.0,
        tau_s: 0.0,
        b_visc: 0.0,
        qd_s: 0.1,
        a_shape: 2.0,
        beta: 200.0,
    };

    pub fn validate(&self, joint: usize) -> Result<()> {
        let field = |name: &str| format!("joint[{joint}].{name}");
        let all_finite = [
            self.tau_c,
            self.tau_s,
            self.b_visc,
            self.qd_s,
            self.a_shape,
            self.beta,
        ]
        .iter()
        .all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invariant("FrictionParams", field("*"), "must be finite"));
        }
        if self.tau_c < 0.0 {
            return Err(Error::invariant("FrictionParams", field("tau_c"), "must be >= 0"));
        }
        if self.tau_s < self.tau_c {
            return Err(Error::invariant(
                "FrictionParams",
                field("tau_s"),
                "must be >= tau_c",
            ));
        }
        if self.b_visc < 0.0 {
            return Err(Error::invariant("FrictionParams", field("b_visc"), "must be >= 0"));
        }
        if self.qd_s <= 0.0 {
            return Err(Error::invariant("FrictionParams", field("qd_s"), "must be > 0"));
        }
        if self.a_shape <= 0.0 {
            return Err(Error::invariant("FrictionParams", field("a_shape"), "must be > 0"));
        }
        if self.beta <= 0.0 {
            return Err(Error::invariant("FrictionParams", field("beta"), "must be > 0"));
        }
        Ok(())
    }
}

/// Per-joint friction parameters for the whole chain.
pub type JointFriction = [FrictionParams; N_JOINTS];

pub fn validate_friction(params: &JointFriction) -> Result<()> {
    params
        .iter()
        .enumerate()
        .try_for_each(|(i, p)| p.validate(i))
}

/// Planar wrench acting at the end-effector.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Wrench {
    pub fx: f64,
    pub fz: f64,
    pub tau: f64,
}

impl Wrench {
    pub const ZERO: Wrench = Wrench {
        fx: 0.0,
        fz: 0.0,
        tau: 0.0,
    };

    pub fn new(fx: f64, fz: f64, tau: f64) -> Self {
        Self { fx, fz, tau }
    }

    pub fn force_x(fx: f64) -> Self {
        Self::new(fx, 0.0, 0.0)
    }

    pub fn as_vector(&self) -> Vec3 {
        Vec3::new(self.fx, self.fz, self.tau)
    }

    pub fn is_finite(&self) -> bool {
        self.fx.is_finite() && self.fz.is_finite() && self.tau.is_finite()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn default_model_matches_spine_table() {
        let m = default_sparc_model();
        assert_eq!(m.links[0].mass, 0.377);
        assert_eq!(m.links[0].length, 0.0632);
        assert_eq!(m.links[3].mass, 0.06);
        assert_relative_eq!(m.links[1].inertia_planar, 502e-6, max_relative = 1e-12);
        assert_relative_eq!(m.links[2].com_offset, 0.5 * 0.1175);
        assert!(m.base_fixed);
        m.validate().unwrap();
    }

    #[test]
    fn default_total_mass_is_link_sum() {
        assert_relative_eq!(default_sparc_model().total_mass(), 1.227, epsilon = 1e-12);
    }

    #[test]
    fn negative_mass_is_rejected_with_field_name() {
        let mut m = default_sparc_model();
        m.links[2].mass = -0.1;
        let err = m.validate().unwrap_err().to_string();
        assert!(err.contains("links[2].mass"), "{err}");
    }

    #[test]
    fn com_outside_link_is_rejected() {
        let mut m = default_sparc_model();
        m.links[1].com_offset = 0.2;
        assert!(m.validate().is_err());
    }

    #[test]
    fn excessive_gravity_is_rejected() {
        let m = default_sparc_model().with_gravity(Vec2::new(0.0, -25.0));
        assert!(m.validate().is_err());
    }

    #[test]
    fn friction_static_below_coulomb_is_rejected() {
        let p = FrictionParams {
            tau_s: 0.01,
            ..FrictionParams::PLANT_DEFAULT
        };
        let err = p.validate(1).unwrap_err().to_string();
        assert!(err.contains("FrictionParams") && err.contains("tau_s"), "{err}");
    }

    #[test]
    fn negative_gain_is_rejected() {
        let g = ImpedanceGains::default().with_dx(-1.0);
        assert!(g.validate().is_err());
    }
}
