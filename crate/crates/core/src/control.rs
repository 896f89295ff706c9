//! Task-space controllers for the spine.
//!
//! Two laws are provided. [`impedance_torque`] is the computed-acceleration
//! impedance law with full model compensation (inertial feedforward, Coriolis
//! and gravity); [`pd_torque`] is the lightweight task-space PD law that only
//! needs the Jacobian. [`Controller`] wraps either law with Stribeck friction
//! compensation, the bench clamp of the base joint and actuator saturation.

use nalgebra::{Matrix3, Matrix4x3};

use crate::dynamics::{self, Jacobian};
use crate::error::{Error, Result};
use crate::model::{
    ChainModel, FrictionParams, ImpedanceGains, JointFriction, JointState, TaskTarget, Vec3, Vec4,
    N_JOINTS, TORQUE_LIMIT,
};

/// Damped least-squares pseudoinverse `J^T (J J^T + lambda^2 I)^-1`.
pub fn dls_pinv(j: &Jacobian, lambda: f64) -> Result<Matrix4x3<f64>> {
    let jjt = j * j.transpose();
    if lambda == 0.0 {
        let sv = jjt.singular_values();
        if sv.min() <= 1e-12 * sv.max().max(f64::MIN_POSITIVE) {
            return Err(Error::Singular("J J^T without damping"));
        }
    }
    let inv = (jjt + Matrix3::identity() * (lambda * lambda))
        .try_inverse()
        .ok_or(Error::Singular("J J^T + lambda^2 I"))?;
    Ok(j.transpose() * inv)
}

/// Contribution of each term of a control law to the joint torque.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TorqueTerms {
    /// `M J^+ (xdd_d - Jdot qd)`
    pub inertial: Vec4,
    /// `J^T (D e_dot + K e)`
    pub impedance: Vec4,
    /// `C qd + g`
    pub bias: Vec4,
    pub friction: Vec4,
}

impl TorqueTerms {
    pub fn sum(&self) -> Vec4 {
        self.inertial + self.impedance + self.bias + self.friction
    }

    fn map(self, f: impl Fn(Vec4) -> Vec4) -> Self {
        Self {
            inertial: f(self.inertial),
            impedance: f(self.impedance),
            bias: f(self.bias),
            friction: f(self.friction),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlOutput {
    pub tau_cmd: Vec4,
    /// `x_d - x`
    pub task_error: Vec3,
    /// `xd_d - J qd`
    pub velocity_error: Vec3,
    pub terms: TorqueTerms,
    /// Base-joint torque the law asked for before the bench clamp discarded
    /// it. `None` when the base is free.
    pub base_torque_unused: Option<f64>,
    /// Number of joints clipped to the actuator limit.
    pub saturated: u8,
}

impl ControlOutput {
    fn new(tau: Vec4, terms: TorqueTerms, task_error: Vec3, velocity_error: Vec3) -> Self {
        Self {
            tau_cmd: tau,
            task_error,
            velocity_error,
            terms,
            base_torque_unused: None,
            saturated: 0,
        }
    }

    /// Zeroes the base entry of the command and of every term.
    fn clamp_base(mut self) -> Self {
        self.base_torque_unused = Some(self.tau_cmd[0]);
        self.tau_cmd[0] = 0.0;
        self.terms = self.terms.map(|mut v| {
            v[0] = 0.0;
            v
        });
        self
    }

    fn saturate(mut self, limit: f64) -> Self {
        for i in 0..N_JOINTS {
            let t = self.tau_cmd[i];
            if t.abs() > limit {
                self.tau_cmd[i] = t.clamp(-limit, limit);
                self.saturated += 1;
            }
        }
        self
    }
}

fn task_errors(model: &ChainModel, state: &JointState, target: &TaskTarget, j: &Jacobian) -> (Vec3, Vec3) {
    let x = dynamics::forward_kinematics(model, &state.q);
    let xd = j * state.qd;
    (target.pos - x, target.vel - xd)
}

fn spring_damper(gains: &ImpedanceGains, e: &Vec3, e_dot: &Vec3) -> Vec3 {
    gains.d.component_mul(e_dot) + gains.k.component_mul(e)
}

/// Cartesian impedance law with model compensation:
/// `tau = M J^+ (xdd_d - Jdot qd) + J^T (D e_dot + K e) + C qd + g`.
///
/// No friction compensation, clamp or saturation is applied here; the
/// returned terms sum to `tau_cmd` exactly.
pub fn impedance_torque(
    model: &ChainModel,
    state: &JointState,
    target: &TaskTarget,
    gains: &ImpedanceGains,
) -> Result<ControlOutput> {
    let j = dynamics::jacobian(model, &state.q);
    let (e, e_dot) = task_errors(model, state, target, &j);
    let terms = dynamics::extract_terms(model, &state.q, &state.qd);
    let pinv = dls_pinv(&free_columns(model, &j), gains.lambda_dls)?;
    let task_acc = target.acc - dynamics::jdot_qd(model, &state.q, &state.qd);
    let parts = TorqueTerms {
        inertial: terms.mass_matrix * (pinv * task_acc),
        impedance: j.transpose() * spring_damper(gains, &e, &e_dot),
        bias: terms.bias,
        friction: Vec4::zeros(),
    };
    Ok(ControlOutput::new(parts.sum(), parts, e, e_dot))
}

/// The Jacobian with the columns of clamped joints zeroed, so that the
/// pseudoinverse only distributes acceleration over joints that can move.
fn free_columns(model: &ChainModel, j: &Jacobian) -> Jacobian {
    let mut out = *j;
    let locks = dynamics::JointLocks::for_model(model);
    for i in 0..4 {
        if locks.is_locked(i) {
            out.column_mut(i).fill(0.0);
        }
    }
    out
}

/// Task-space PD law `tau = J^T (D e_dot + K e)` without model compensation.
pub fn pd_torque(
    model: &ChainModel,
    state: &JointState,
    target: &TaskTarget,
    gains: &ImpedanceGains,
) -> ControlOutput {
    let j = dynamics::jacobian(model, &state.q);
    let (e, e_dot) = task_errors(model, state, target, &j);
    let parts = TorqueTerms {
        impedance: j.transpose() * spring_damper(gains, &e, &e_dot),
        ..TorqueTerms::default()
    };
    ControlOutput::new(parts.sum(), parts, e, e_dot)
}

/// Smooth Stribeck friction torque at joint speed `qd`:
/// `(tau_c + (tau_s - tau_c) exp(-(|qd|/qd_s)^a)) tanh(beta qd) + b qd`.
pub fn stribeck_torque(p: &FrictionParams, qd: f64) -> f64 {
    stribeck_with_slope(p, qd).0
}

/// Derivative of [`stribeck_torque`] with respect to `qd`.
pub fn stribeck_slope(p: &FrictionParams, qd: f64) -> f64 {
    stribeck_with_slope(p, qd).1
}

/// Torque and slope together, sharing the transcendental evaluations.
pub fn stribeck_with_slope(p: &FrictionParams, qd: f64) -> (f64, f64) {
    let r = qd.abs() / p.qd_s.abs();
    let r_a = if p.a_shape == 2.0 { r * r } else { r.powf(p.a_shape) };
    let stribeck = (-r_a).exp();
    let th = (p.beta * qd).tanh();
    let level = p.tau_c + (p.tau_s - p.tau_c) * stribeck;
    let torque = level * th + p.b_visc * qd;
    // d/dqd of r^a is a r^a / qd, which stays finite at qd = 0 for a > 0.
    let decay = if qd == 0.0 {
        0.0
    } else {
        -(p.tau_s - p.tau_c) * stribeck * p.a_shape * r_a / qd * th
    };
    (torque, decay + level * p.beta * (1.0 - th * th) + p.b_visc)
}

/// Per-joint Stribeck torques; this is both the plant's friction and the
/// controller's compensation, depending on which parameter set is passed.
pub fn friction_torques(params: &JointFriction, qd: &Vec4) -> Vec4 {
    Vec4::from_fn(|i, _| stribeck_torque(&params[i], qd[i]))
}

/// Feedforward friction compensation added to the commanded torque. The base
/// entry is zeroed when the base is clamped.
pub fn friction_compensation(model: &ChainModel, params_est: &JointFriction, qd: &Vec4) -> Vec4 {
    let mut tau = friction_torques(params_est, qd);
    if model.base_fixed {
        tau[0] = 0.0;
    }
    tau
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlLaw {
    Impedance,
    Pd,
}

/// A control law together with its gains, friction estimate and actuator
/// limit; evaluated once per control tick.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Controller {
    pub law: ControlLaw,
    pub gains: ImpedanceGains,
    /// `None` disables friction compensation.
    pub friction_est: Option<JointFriction>,
    pub torque_limit: f64,
}

impl Controller {
    pub fn impedance(gains: ImpedanceGains, friction_est: Option<JointFriction>) -> Self {
        Self {
            law: ControlLaw::Impedance,
            gains,
            friction_est,
            torque_limit: TORQUE_LIMIT,
        }
    }

    pub fn pd(gains: ImpedanceGains) -> Self {
        Self {
            law: ControlLaw::Pd,
            gains,
            friction_est: None,
            torque_limit: TORQUE_LIMIT,
        }
    }

    pub fn compute(
        &self,
        model: &ChainModel,
        state: &JointState,
        target: &TaskTarget,
    ) -> Result<ControlOutput> {
        let mut out = match self.law {
            ControlLaw::Impedance => impedance_torque(model, state, target, &self.gains)?,
            ControlLaw::Pd => pd_torque(model, state, target, &self.gains),
        };
        if let Some(est) = &self.friction_est {
            out.terms.friction = friction_torques(est, &state.qd);
            out.tau_cmd = out.terms.sum();
        }
        if model.base_fixed {
            out = out.clamp_base();
        }
        Ok(out.saturate(self.torque_limit))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bench_equilibrium, default_sparc_model, Wrench};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn eq_state(model: &ChainModel) -> JointState {
        JointState::at_rest(dynamics::bench_configuration(model, &bench_equilibrium()).unwrap())
    }

    #[test]
    fn pinv_of_orthonormal_rows_is_transpose() {
        let mut j = Jacobian::zeros();
        for i in 0..3 {
            j[(i, i)] = 1.0;
        }
        let p = dls_pinv(&j, 0.0).unwrap();
        assert_eq!(p, j.transpose());
    }

    #[test]
    fn pinv_is_right_inverse_for_full_rank() {
        let m = default_sparc_model();
        let j = dynamics::jacobian(&m, &Vec4::new(0.2, 0.5, -0.9, 0.3));
        let p = dls_pinv(&j, 0.0).unwrap();
        assert!((j * p - Matrix3::identity()).abs().max() < 1e-10);
    }

    #[test]
    fn pinv_without_damping_rejects_rank_drop() {
        let m = default_sparc_model();
        let j = dynamics::jacobian(&m, &Vec4::zeros());
        assert!(matches!(dls_pinv(&j, 0.0), Err(Error::Singular(_))));
    }

    #[test]
    fn damped_pinv_is_bounded_at_rank_drop() {
        // Oracle: singular values of J^+ are s / (s^2 + lambda^2) <= 1 / (2 lambda).
        let m = default_sparc_model();
        let lambda = 1e-2;
        let j = dynamics::jacobian(&m, &Vec4::zeros());
        let p = dls_pinv(&j, lambda).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        let bound = 1.0 / (2.0 * lambda);
        assert!(p.singular_values().max() <= bound * (1.0 + 1e-12));
        let svd = j.svd(false, false);
        let mut expected: Vec<f64> = svd
            .singular_values
            .iter()
            .map(|s| s / (s * s + lambda * lambda))
            .collect();
        expected.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let got = sorted_desc(p.singular_values().as_slice());
        for (a, b) in expected.iter().zip(got.iter()) {
            assert_relative_eq!(a, b, max_relative = 1e-9, epsilon = 1e-12);
        }
    }

    fn sorted_desc(v: &[f64]) -> Vec<f64> {
        let mut v = v.to_vec();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v
    }

    #[test]
    fn pinv_is_continuous_through_rank_drop() {
        let m = default_sparc_model();
        let lambda = 1e-2;
        let bound = 1.0 / (2.0 * lambda);
        let mut prev: Option<Matrix4x3<f64>> = None;
        for k in -50..=50 {
            let a = k as f64 * 1e-4;
            let q = Vec4::new(0.0, a, -2.0 * a, a);
            let p = dls_pinv(&dynamics::jacobian(&m, &q), lambda).unwrap();
            assert!(p.abs().max() <= bound);
            if let Some(prev) = prev {
                assert!((p - prev).abs().max() < 1.0);
            }
            prev = Some(p);
        }
    }

    #[test]
    fn impedance_at_target_is_pure_gravity_compensation() {
        let m = default_sparc_model();
        let state = eq_state(&m);
        let target = TaskTarget::fixed(dynamics::forward_kinematics(&m, &state.q));
        let out = impedance_torque(&m, &state, &target, &ImpedanceGains::default()).unwrap();
        let g = dynamics::extract_terms(&m, &state.q, &Vec4::zeros()).gravity_vec;
        assert_eq!(out.tau_cmd, g);
    }

    #[test]
    fn impedance_feedforward_only_with_desired_acceleration() {
        let mut m = default_sparc_model().without_gravity();
        m.base_fixed = false;
        let state = eq_state(&m);
        let mut target = TaskTarget::fixed(dynamics::forward_kinematics(&m, &state.q));
        target.acc = Vec3::new(1.0, 0.0, 0.0);
        let gains = ImpedanceGains::default();
        let out = impedance_torque(&m, &state, &target, &gains).unwrap();
        let j = dynamics::jacobian(&m, &state.q);
        let expected = dynamics::mass_matrix(&m, &state.q) * dls_pinv(&j, gains.lambda_dls).unwrap()
            * Vec3::new(1.0, 0.0, 0.0);
        assert!((out.tau_cmd - expected).abs().max() < 1e-15);
    }

    #[test]
    fn clamped_base_feedforward_realizes_task_acceleration() {
        let m = default_sparc_model().without_gravity();
        let state = eq_state(&m);
        let mut target = TaskTarget::fixed(dynamics::forward_kinematics(&m, &state.q));
        target.acc = Vec3::new(1.0, -0.5, 2.0);
        let gains = ImpedanceGains { lambda_dls: 0.0, ..ImpedanceGains::default() };
        let out = impedance_torque(&m, &state, &target, &gains).unwrap();
        let locks = dynamics::JointLocks::for_model(&m);
        let qdd = dynamics::forward_dynamics(&m, &state.q, &state.qd, &out.tau_cmd, &Wrench::ZERO, locks)
            .unwrap();
        assert_eq!(qdd[0], 0.0);
        let acc = dynamics::jacobian(&m, &state.q) * qdd;
        assert!((acc - target.acc).amax() < 1e-9, "{acc}");
    }

    #[test]
    fn impedance_displaced_spring_force() {
        let m = default_sparc_model().without_gravity();
        let state = eq_state(&m);
        let x = dynamics::forward_kinematics(&m, &state.q);
        let target = TaskTarget::fixed(x + Vec3::new(0.01, 0.0, 0.0));
        let gains = ImpedanceGains::default().with_kx(500.0);
        let out = impedance_torque(&m, &state, &target, &gains).unwrap();
        let j = dynamics::jacobian(&m, &state.q);
        let expected = j.transpose() * Vec3::new(5.0, 0.0, 0.0);
        assert!((out.tau_cmd - expected).abs().max() < 1e-12);
        let pd = pd_torque(&m, &state, &target, &gains);
        assert!((out.tau_cmd - pd.tau_cmd).abs().max() <= 1e-12);
    }

    #[test]
    fn pd_at_target_is_zero_even_with_gravity() {
        let m = default_sparc_model();
        let state = eq_state(&m);
        let target = TaskTarget::fixed(dynamics::forward_kinematics(&m, &state.q));
        let out = pd_torque(&m, &state, &target, &ImpedanceGains::default());
        assert_eq!(out.tau_cmd, Vec4::zeros());
        assert_eq!(out.terms.bias, Vec4::zeros());
        assert_eq!(out.terms.inertial, Vec4::zeros());
    }

    #[test]
    fn terms_sum_to_command() {
        let m = default_sparc_model();
        let state = JointState {
            q: Vec4::new(0.0, 0.8, -1.7, 0.9),
            qd: Vec4::new(0.0, 0.3, -0.2, 0.5),
            t: 0.0,
        };
        let mut target = TaskTarget::fixed(bench_equilibrium());
        target.acc = Vec3::new(0.2, -0.1, 0.05);
        let out = impedance_torque(&m, &state, &target, &ImpedanceGains::default()).unwrap();
        assert_eq!(out.terms.sum(), out.tau_cmd);

        let ctl = Controller::impedance(ImpedanceGains::default(), Some([FrictionParams::PLANT_DEFAULT; 4]));
        let out = ctl.compute(&m, &state, &target).unwrap();
        assert_eq!(out.saturated, 0);
        assert_eq!(out.terms.sum(), out.tau_cmd);
        assert_eq!(out.tau_cmd[0], 0.0);
        assert!(out.base_torque_unused.is_some());
    }

    #[test]
    fn saturation_clips_and_counts() {
        let m = default_sparc_model().without_gravity();
        let state = eq_state(&m);
        let target = TaskTarget::fixed(bench_equilibrium() + Vec3::new(0.0, 0.0, 5.0));
        let mut gains = ImpedanceGains::default();
        gains.k[2] = 100.0;
        let out = Controller::pd(gains).compute(&m, &state, &target).unwrap();
        assert!(out.saturated > 0);
        assert!(out.tau_cmd.iter().all(|t| t.abs() <= TORQUE_LIMIT));
    }

    #[test]
    fn stribeck_zero_speed_and_decayed_regime() {
        let p = FrictionParams {
            tau_c: 0.1,
            tau_s: 0.2,
            b_visc: 0.01,
            qd_s: 0.05,
            a_shape: 2.0,
            beta: 100.0,
        };
        assert_eq!(stribeck_torque(&p, 0.0), 0.0);
        assert_relative_eq!(stribeck_torque(&p, 10.0), 0.2, epsilon = 1e-12);
    }

    #[test]
    fn friction_compensation_cancels_plant_friction() {
        let m = default_sparc_model();
        let truth = [FrictionParams::PLANT_DEFAULT; 4];
        let qd = Vec4::new(0.0, 0.4, -0.03, 1.2);
        let comp = friction_compensation(&m, &truth, &qd);
        let plant = friction_torques(&truth, &qd);
        for i in 1..4 {
            assert_eq!(comp[i] - plant[i], 0.0);
        }
        assert_eq!(friction_compensation(&m, &truth, &Vec4::zeros()), Vec4::zeros());
    }

    #[test]
    fn overcompensation_injects_energy_at_low_speed() {
        let truth = FrictionParams::PLANT_DEFAULT;
        let est = FrictionParams {
            tau_s: 1.2 * truth.tau_s,
            ..truth
        };
        for &w in &[1e-3, 1e-2, 0.05, 0.1] {
            let net = stribeck_torque(&est, w) - stribeck_torque(&truth, w);
            assert!(net > 0.0, "net {net} at {w}");
        }
    }

    #[test]
    fn pd_force_grows_with_stiffness() {
        let m = default_sparc_model();
        let state = eq_state(&m);
        let target = TaskTarget::fixed(dynamics::forward_kinematics(&m, &state.q) + Vec3::new(0.01, 0.0, 0.0));
        let mut last = 0.0;
        for kx in [300.0, 400.0, 500.0, 600.0] {
            let gains = ImpedanceGains::default().with_kx(kx);
            let n = pd_torque(&m, &state, &target, &gains).tau_cmd.norm();
            assert!(n >= last);
            last = n;
        }
    }

    #[test]
    fn pd_is_passive_without_gravity() {
        // V = 1/2 e^T K e + 1/2 qd^T M qd must not increase along a
        // frictionless closed loop with a static target.
        let m = default_sparc_model().without_gravity();
        let gains = ImpedanceGains::default();
        let q0 = dynamics::bench_configuration(&m, &bench_equilibrium()).unwrap();
        let target = TaskTarget::fixed(bench_equilibrium());
        let mut q = q0 + Vec4::new(0.0, 0.05, -0.04, 0.02);
        let mut qd = Vec4::zeros();
        let locks = dynamics::JointLocks::for_model(&m);
        let energy = |q: &Vec4, qd: &Vec4| {
            let e = target.pos - dynamics::forward_kinematics(&m, q);
            0.5 * e.dot(&gains.k.component_mul(&e))
                + 0.5 * qd.dot(&(dynamics::mass_matrix(&m, q) * qd))
        };
        let dt = 1e-5;
        let mut v_prev = energy(&q, &qd);
        for _ in 0..20_000 {
            // Continuous-time feedback, semi-implicit Euler.
            let state = JointState { q, qd, t: 0.0 };
            let tau = pd_torque(&m, &state, &target, &gains).tau_cmd;
            let qdd = dynamics::forward_dynamics(&m, &q, &qd, &tau, &crate::model::Wrench::ZERO, locks)
                .unwrap();
            qd += qdd * dt;
            q += qd * dt;
            let v = energy(&q, &qd);
            assert!(v <= v_prev + 1e-6 * v_prev, "{v} > {v_prev}");
            v_prev = v;
        }
    }

    proptest! {
        #[test]
        fn stribeck_is_odd(qd in -20.0f64..20.0) {
            let p = FrictionParams::PLANT_DEFAULT;
            prop_assert_eq!(stribeck_torque(&p, -qd), -stribeck_torque(&p, qd));
        }

        #[test]
        fn stribeck_slope_matches_central_difference(qd in -2.0f64..2.0) {
            let p = FrictionParams::PLANT_DEFAULT;
            let h = 1e-7;
            let fd = (stribeck_torque(&p, qd + h) - stribeck_torque(&p, qd - h)) / (2.0 * h);
            let slope = stribeck_slope(&p, qd);
            prop_assert!((fd - slope).abs() <= 1e-5 * (1.0 + slope.abs()), "{} vs {}", fd, slope);
        }

        #[test]
        fn jacobian_transpose_power_duality(
            q in prop::array::uniform4(-3.0f64..3.0),
            qd in prop::array::uniform4(-3.0f64..3.0),
            f in prop::array::uniform3(-10.0f64..10.0),
        ) {
            let m = default_sparc_model();
            let q = Vec4::from(q);
            let qd = Vec4::from(qd);
            let f = Vec3::from(f);
            let j = dynamics::jacobian(&m, &q);
            let joint_power = (j.transpose() * f).dot(&qd);
            let task_power = f.dot(&(j * qd));
            prop_assert!((joint_power - task_power).abs() <= 1e-12 * (1.0 + joint_power.abs()));
        }

        #[test]
        fn gain_monotonicity_along_displaced_axis(
            e in -0.02f64..0.02,
            axis in 0usize..3,
            k_lo in 0.0f64..800.0,
            dk in 0.0f64..400.0,
        ) {
            let m = default_sparc_model();
            let q = dynamics::bench_configuration(&m, &bench_equilibrium()).unwrap();
            let j = dynamics::jacobian(&m, &q);
            let e = Vec3::ith(axis, e);
            let mut k = Vec3::new(500.0, 1000.0, 15.0);
            k[axis] = k_lo;
            let lo = (j.transpose() * k.component_mul(&e)).norm();
            k[axis] = k_lo + dk;
            let hi = (j.transpose() * k.component_mul(&e)).norm();
            prop_assert!(hi >= lo);
        }
    }
}
