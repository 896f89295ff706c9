//! Plant simulation under a zero-order-hold controller.
//!
//! The plant is the same rigid-body model the controller uses, driven by the
//! held command torque minus the true joint friction plus the external
//! wrench. The controller is evaluated exactly once per control tick and its
//! output is held over all integrator substeps of that tick.

mod protocols;

pub use protocols::*;

use nalgebra::Matrix4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::control::{friction_torques, stribeck_with_slope, ControlOutput, Controller};
use crate::dynamics::{self, JointLocks};
use crate::error::{Error, Result};
use crate::model::{ChainModel, FrictionParams, JointFriction, JointState, TaskTarget, Vec3, Vec4, Wrench};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Integrator {
    SemiImplicitEuler,
    Rk4,
}

impl Integrator {
    pub fn as_str(&self) -> &'static str {
        match self {
            Integrator::SemiImplicitEuler => "semi-implicit-euler",
            Integrator::Rk4 => "rk4",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "semi-implicit-euler" => Some(Integrator::SemiImplicitEuler),
            "rk4" => Some(Integrator::Rk4),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlantConfig {
    pub friction_true: JointFriction,
    /// Plant substep, s.
    pub integrator_dt: f64,
    /// Controller period, s.
    pub control_dt: f64,
    pub integrator: Integrator,
    pub noise_seed: u64,
    /// Standard deviation of the force "load cell", N.
    pub force_sensor_noise_sd: f64,
}

impl Default for PlantConfig {
    fn default() -> Self {
        Self {
            friction_true: [FrictionParams::PLANT_DEFAULT; 4],
            integrator_dt: 1e-4,
            control_dt: 1e-3,
            integrator: Integrator::Rk4,
            noise_seed: 0,
            force_sensor_noise_sd: 0.05,
        }
    }
}

impl PlantConfig {
    pub fn frictionless() -> Self {
        Self {
            friction_true: [FrictionParams::ZERO; 4],
            ..Self::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.noise_seed = seed;
        self
    }

    pub fn substeps(&self) -> usize {
        (self.control_dt / self.integrator_dt).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.control_dt > 0.0 && self.control_dt.is_finite()) {
            return Err(Error::invariant("PlantConfig", "control_dt", "must be > 0"));
        }
        if !(self.integrator_dt > 0.0 && self.integrator_dt <= self.control_dt) {
            return Err(Error::invariant(
                "PlantConfig",
                "integrator_dt",
                "must be in (0, control_dt]",
            ));
        }
        if !(self.force_sensor_noise_sd >= 0.0 && self.force_sensor_noise_sd.is_finite()) {
            return Err(Error::invariant(
                "PlantConfig",
                "force_sensor_noise_sd",
                "must be >= 0",
            ));
        }
        crate::model::validate_friction(&self.friction_true)
    }
}

/// One integration step of `q'' = accel(q, q')` over `h`.
pub fn integrate(
    method: Integrator,
    q: &Vec4,
    qd: &Vec4,
    h: f64,
    mut accel: impl FnMut(&Vec4, &Vec4) -> Result<Vec4>,
) -> Result<(Vec4, Vec4)> {
    match method {
        Integrator::SemiImplicitEuler => {
            let a = accel(q, qd)?;
            let qd1 = qd + a * h;
            Ok((q + qd1 * h, qd1))
        }
        Integrator::Rk4 => {
            let k1v = *qd;
            let k1a = accel(q, qd)?;
            let q2 = q + k1v * (0.5 * h);
            let v2 = qd + k1a * (0.5 * h);
            let k2a = accel(&q2, &v2)?;
            let q3 = q + v2 * (0.5 * h);
            let v3 = qd + k2a * (0.5 * h);
            let k3a = accel(&q3, &v3)?;
            let q4 = q + v3 * h;
            let v4 = qd + k3a * h;
            let k4a = accel(&q4, &v4)?;
            let q1 = q + (k1v + v2 * 2.0 + v3 * 2.0 + v4) * (h / 6.0);
            let qd1 = qd + (k1a + k2a * 2.0 + k3a * 2.0 + k4a) * (h / 6.0);
            Ok((q1, qd1))
        }
    }
}

/// Advances the plant by one control period with `tau_applied` and `ext`
/// held constant. A clamped base keeps zero velocity and acceleration.
///
/// Joint friction is split off and integrated implicitly (Strang splitting
/// around the explicit step): its slope at rest is `tau_s * beta`, which is
/// far too stiff for an explicit step on the light distal links.
pub fn plant_step(
    model: &ChainModel,
    plant: &PlantConfig,
    state: &JointState,
    tau_applied: &Vec4,
    ext: &Wrench,
) -> Result<JointState> {
    let locks = JointLocks::for_model(model);
    let n = plant.substeps();
    let h = plant.control_dt / n as f64;
    let frictional = plant.friction_true.iter().any(|p| *p != FrictionParams::ZERO);
    let mut q = state.q;
    let mut qd = locks.apply(state.qd);
    let mut f = friction_torques(&plant.friction_true, &qd);
    let blowup = |t: f64| Error::IntegrationBlowup {
        t,
        context: "non-finite joint state".into(),
    };
    let frames = dynamics::LinkFrames::new(&state.q);
    let accel = |q: &Vec4, qd: &Vec4| {
        if !(q.iter().chain(qd.iter()).all(|v| v.is_finite())) {
            return Err(blowup(state.t));
        }
        dynamics::forward_dynamics_at(model, &frames.moved_to(q), qd, tau_applied, ext, locks)
    };
    let w = if frictional {
        locks.constrained_inverse(&dynamics::joint_inertia_at(model, &frames))?
    } else {
        Matrix4::zeros()
    };
    let friction = &plant.friction_true;
    if frictional {
        qd = implicit_friction(friction, locks, &w, &qd, 0.5 * h, &mut f)?;
    }
    for i in 0..n {
        (q, qd) = integrate(plant.integrator, &q, &qd, h, accel)?;
        if frictional {
            let span = if i + 1 == n { 0.5 * h } else { h };
            qd = implicit_friction(friction, locks, &w, &qd, span, &mut f)?;
        }
    }
    let next = JointState {
        q,
        qd: locks.apply(qd),
        t: state.t + plant.control_dt,
    };
    if !next.is_finite() {
        return Err(blowup(next.t));
    }
    Ok(next)
}

/// Backward-Euler friction update over `h`, with `m_inv` the constrained
/// inverse inertia at the start of the tick. The unknown is the friction
/// torque `f`, which satisfies `f = F(qd - h M^-1 f)`; Newton's method on
/// that form stays well behaved where `tanh` saturates. Steps that do not
/// reduce the residual are halved.
fn implicit_friction(
    params: &JointFriction,
    locks: JointLocks,
    m_inv: &Matrix4<f64>,
    qd: &Vec4,
    h: f64,
    f_guess: &mut Vec4,
) -> Result<Vec4> {
    if !qd.iter().all(|v| v.is_finite()) {
        return Ok(*qd);
    }
    let w = m_inv * h;
    let eval = |f: &Vec4| {
        let v = qd - w * f;
        let mut fv = Vec4::zeros();
        let mut slope = Vec4::zeros();
        for i in 0..4 {
            (fv[i], slope[i]) = stribeck_with_slope(&params[i], v[i]);
        }
        (locks.apply(f - fv), slope)
    };
    let mut f = locks.apply(*f_guess);
    let (mut r, mut slope) = eval(&f);
    for _ in 0..50 {
        if r.amax() <= 1e-12 * (1.0 + f.amax()) {
            break;
        }
        let mut jac = Matrix4::identity();
        for i in 0..4 {
            if !locks.is_locked(i) {
                for j in 0..4 {
                    jac[(i, j)] += slope[i] * w[(i, j)];
                }
            }
        }
        let step = jac
            .lu()
            .solve(&-r)
            .ok_or(Error::Singular("implicit friction Jacobian"))?;
        let r_norm = r.norm();
        let mut alpha = 1.0;
        let (mut r_new, mut slope_new) = eval(&(f + step));
        while r_new.norm() > (1.0 - 1e-4 * alpha) * r_norm && alpha > 1e-8 {
            alpha *= 0.5;
            (r_new, slope_new) = eval(&(f + step * alpha));
        }
        f += step * alpha;
        (r, slope) = (r_new, slope_new);
    }
    *f_guess = f;
    Ok(locks.apply(qd - w * f))
}

/// One control tick as recorded: the state at the start of the tick and
/// everything applied during it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub q: Vec4,
    pub qd: Vec4,
    /// End-effector pose `(x, z, theta)`.
    pub pose: Vec3,
    /// End-effector twist.
    pub twist: Vec3,
    pub tau_cmd: Vec4,
    pub applied: Wrench,
    /// Applied `F_x` plus load-cell noise.
    pub fx_measured: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TrialStatus {
    Valid,
    /// Not usable, e.g. too many saturated ticks.
    Invalid(String),
    /// No excitation, so no stiffness can be identified.
    Degenerate(String),
    /// Oscillation grows or the integration blew up.
    Divergent(String),
}

impl TrialStatus {
    pub fn label(&self) -> &'static str {
        match self {
            TrialStatus::Valid => "valid",
            TrialStatus::Invalid(_) => "invalid",
            TrialStatus::Degenerate(_) => "degenerate",
            TrialStatus::Divergent(_) => "divergent",
        }
    }

    pub fn is_valid(&self) -> bool {
        matches!(self, TrialStatus::Valid)
    }
}

/// Everything needed to rerun a trial bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialMeta {
    pub protocol: &'static str,
    pub controller: Controller,
    pub plant: PlantConfig,
    pub target: TaskTarget,
    /// Protocol parameters as `(name, value)`.
    pub params: Vec<(&'static str, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub samples: Vec<Sample>,
    pub meta: TrialMeta,
    pub status: TrialStatus,
    /// Fraction of ticks with at least one saturated joint.
    pub saturation_fraction: f64,
}

impl TrialRecord {
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }

    /// `x - x_d` for every sample.
    pub fn x_deviation(&self) -> Vec<f64> {
        let xd = self.meta.target.pos[0];
        self.samples.iter().map(|s| s.pose[0] - xd).collect()
    }
}

/// Closed-loop simulation state: controller, plant and load-cell noise.
pub struct Simulation<'a> {
    pub model: &'a ChainModel,
    pub plant: &'a PlantConfig,
    pub controller: &'a Controller,
    pub target: TaskTarget,
    pub state: JointState,
    rng: ChaCha8Rng,
    noise: Normal<f64>,
    saturated_ticks: usize,
    ticks: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(
        model: &'a ChainModel,
        plant: &'a PlantConfig,
        controller: &'a Controller,
        target: TaskTarget,
        initial: JointState,
    ) -> Result<Self> {
        model.validate()?;
        plant.validate()?;
        controller.gains.validate()?;
        target.validate()?;
        let noise = Normal::new(0.0, plant.force_sensor_noise_sd)
            .map_err(|e| Error::invariant("PlantConfig", "force_sensor_noise_sd", e.to_string()))?;
        Ok(Self {
            model,
            plant,
            controller,
            target,
            state: initial,
            rng: ChaCha8Rng::seed_from_u64(plant.noise_seed),
            noise,
            saturated_ticks: 0,
            ticks: 0,
        })
    }

    pub fn pose(&self) -> Vec3 {
        dynamics::forward_kinematics(self.model, &self.state.q)
    }

    pub fn twist(&self) -> Vec3 {
        dynamics::task_velocity(self.model, &self.state.q, &self.state.qd)
    }

    pub fn control(&self) -> Result<ControlOutput> {
        self.controller.compute(self.model, &self.state, &self.target)
    }

    /// Runs one control tick with `ext` applied and returns the sample taken
    /// at its start.
    pub fn tick(&mut self, ext: Wrench) -> Result<Sample> {
        let out = self.control()?;
        let sample = Sample {
            t: self.state.t,
            q: self.state.q,
            qd: self.state.qd,
            pose: self.pose(),
            twist: self.twist(),
            tau_cmd: out.tau_cmd,
            applied: ext,
            fx_measured: ext.fx + self.noise.sample(&mut self.rng),
        };
        self.ticks += 1;
        if out.saturated > 0 {
            self.saturated_ticks += 1;
        }
        self.state = plant_step(self.model, self.plant, &self.state, &out.tau_cmd, &ext)?;
        Ok(sample)
    }

    pub fn saturation_fraction(&self) -> f64 {
        if self.ticks == 0 {
            0.0
        } else {
            self.saturated_ticks as f64 / self.ticks as f64
        }
    }

    pub fn reset_counters(&mut self) {
        self.saturated_ticks = 0;
        self.ticks = 0;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{bench_equilibrium, default_sparc_model, ImpedanceGains};
    use approx::assert_relative_eq;

    #[test]
    fn gravity_hold_is_an_equilibrium() {
        let m = default_sparc_model();
        let q = dynamics::bench_configuration(&m, &bench_equilibrium()).unwrap();
        let state = JointState::at_rest(q);
        let g = dynamics::extract_terms(&m, &q, &Vec4::zeros()).gravity_vec;
        let plant = PlantConfig::default();
        let next = plant_step(&m, &plant, &state, &g, &Wrench::ZERO).unwrap();
        assert!((next.q - q).abs().max() < 1e-15);
        assert!(next.qd.abs().max() < 1e-12);
        assert_relative_eq!(next.t, 1e-3);
    }

    #[test]
    fn free_motion_conserves_kinetic_energy() {
        let mut m = default_sparc_model().without_gravity();
        m.base_fixed = false;
        let plant = PlantConfig::frictionless();
        let mut state = JointState {
            q: Vec4::new(0.1, 0.7, -1.2, 0.4),
            qd: Vec4::new(0.3, -0.5, 0.8, 0.2),
            t: 0.0,
        };
        let energy = |s: &JointState| 0.5 * s.qd.dot(&(dynamics::mass_matrix(&m, &s.q) * s.qd));
        let e0 = energy(&state);
        for _ in 0..1000 {
            state = plant_step(&m, &plant, &state, &Vec4::zeros(), &Wrench::ZERO).unwrap();
        }
        assert!(((energy(&state) - e0) / e0).abs() < 1e-6);
    }

    #[test]
    fn rk4_tracks_forced_unit_mass() {
        // Unit mass under F = A sin(w t), started on the particular solution
        // x = -A / w^2 sin(w t). Time rides along in the second coordinate
        // (unit velocity, zero acceleration).
        let (amp, w) = (2.0, 7.0);
        let dt = 1e-4;
        let mut q = Vec4::zeros();
        let mut qd = Vec4::new(-amp / w, 1.0, 0.0, 0.0);
        for _ in 0..10_000 {
            (q, qd) = integrate(Integrator::Rk4, &q, &qd, dt, |q, _| {
                Ok(Vec4::new(amp * (w * q[1]).sin(), 0.0, 0.0, 0.0))
            })
            .unwrap();
        }
        let t = q[1];
        assert_relative_eq!(t, 1.0, epsilon = 1e-9);
        let exact = -amp / (w * w) * (w * t).sin();
        assert!((q[0] - exact).abs() < 1e-9, "{} vs {}", q[0], exact);
    }

    #[test]
    fn semi_implicit_euler_is_available() {
        let m = default_sparc_model();
        let q = dynamics::bench_configuration(&m, &bench_equilibrium()).unwrap();
        let plant = PlantConfig {
            integrator: Integrator::SemiImplicitEuler,
            ..PlantConfig::default()
        };
        let ctl = Controller::impedance(ImpedanceGains::default(), None);
        let mut sim = Simulation::new(&m, &plant, &ctl, crate::model::TaskTarget::fixed(bench_equilibrium()), JointState::at_rest(q)).unwrap();
        for _ in 0..100 {
            sim.tick(Wrench::force_x(1.0)).unwrap();
        }
        assert!(sim.pose()[0] > bench_equilibrium()[0]);
    }

    #[test]
    fn blowup_is_reported() {
        let m = default_sparc_model().without_gravity();
        let plant = PlantConfig::frictionless();
        let state = JointState::at_rest(Vec4::new(0.0, 0.5, -1.0, 0.5));
        let err = plant_step(&m, &plant, &state, &Vec4::new(0.0, f64::NAN, 0.0, 0.0), &Wrench::ZERO);
        assert!(matches!(err, Err(Error::IntegrationBlowup { .. })), "{err:?}");
    }

    #[test]
    fn plant_config_rejects_bad_substep() {
        let p = PlantConfig {
            integrator_dt: 2e-3,
            ..PlantConfig::default()
        };
        assert!(p.validate().is_err());
    }

    /// Explicit RK4 with friction in the right-hand side, at a step small
    /// enough to resolve the friction slope.
    fn explicit_reference(m: &ChainModel, plant: &PlantConfig, state: &JointState, tau: &Vec4) -> Vec4 {
        let locks = JointLocks::for_model(m);
        let (mut q, mut qd) = (state.q, state.qd);
        let n = 20_000;
        let h = plant.control_dt / n as f64;
        for _ in 0..n {
            (q, qd) = integrate(Integrator::Rk4, &q, &qd, h, |q, qd| {
                let t = tau - friction_torques(&plant.friction_true, qd);
                dynamics::forward_dynamics(m, q, qd, &t, &Wrench::ZERO, locks)
            })
            .unwrap();
        }
        qd
    }

    #[test]
    fn split_friction_step_matches_fine_explicit_integration() {
        let m = default_sparc_model();
        let plant = PlantConfig::default();
        let q = dynamics::bench_configuration(&m, &bench_equilibrium()).unwrap();
        let g = dynamics::extract_terms(&m, &q, &Vec4::zeros()).gravity_vec;
        for qd in [Vec4::new(0.0, 1.5, -2.0, 0.8), Vec4::new(0.0, 0.02, -0.05, 0.3)] {
            let state = JointState { q, qd, t: 0.0 };
            let tau = g + Vec4::new(0.0, 0.05, -0.02, 0.01);
            let next = plant_step(&m, &plant, &state, &tau, &Wrench::ZERO).unwrap();
            let reference = explicit_reference(&m, &plant, &state, &tau);
            let err = (next.qd - reference).amax();
            assert!(err < 2e-3 * (1.0 + reference.amax()), "{err}: {next:?} vs {reference}");
        }
    }

    #[test]
    fn friction_alone_dissipates_without_overshoot() {
        let m = default_sparc_model().without_gravity();
        let plant = PlantConfig::default();
        let mut state = JointState {
            q: Vec4::new(0.0, 0.9, -1.8, 0.9),
            qd: Vec4::new(0.0, 0.5, -0.4, 2.0),
            t: 0.0,
        };
        let energy = |s: &JointState| 0.5 * s.qd.dot(&(dynamics::mass_matrix(&m, &s.q) * s.qd));
        let mut last = energy(&state);
        for _ in 0..200 {
            state = plant_step(&m, &plant, &state, &Vec4::zeros(), &Wrench::ZERO).unwrap();
            let e = energy(&state);
            assert!(e <= last * (1.0 + 1e-9) + 1e-20, "{e} > {last}");
            last = e;
        }
        assert!(state.qd.amax() < 1e-3, "{}", state.qd);
    }
}
