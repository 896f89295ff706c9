//! Bench experiment protocols: quasi-static push-pull, displace-and-release
//! and the PD stiffness sweep.

use super::{PlantConfig, Sample, Simulation, TrialMeta, TrialRecord, TrialStatus};
use crate::analysis::{self, find_peaks};
use crate::control::Controller;
use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{
    bench_equilibrium, ChainModel, ImpedanceGains, JointFriction, JointState, TaskTarget, Vec3,
    Vec4, Wrench,
};

/// Trials with more saturated ticks than this are unusable.
pub const MAX_SATURATION_FRACTION: f64 = 0.10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PushPullProtocol {
    pub k_x: f64,
    /// Force ramp rate, N/s.
    pub ramp_rate: f64,
    /// Peak push and pull force, N.
    pub max_force: f64,
    /// Initial transient excluded from fits, s.
    pub settle_time: f64,
    /// Samples faster than this are excluded from fits, m/s.
    pub max_speed: f64,
}

impl Default for PushPullProtocol {
    fn default() -> Self {
        Self {
            k_x: 500.0,
            ramp_rate: 1.0,
            max_force: 5.0,
            settle_time: 0.5,
            max_speed: 0.005,
        }
    }
}

impl PushPullProtocol {
    pub fn duration(&self) -> f64 {
        if self.max_force == 0.0 || self.ramp_rate <= 0.0 {
            // Nothing to ramp; hold for a nominal 10 s.
            10.0
        } else {
            4.0 * self.max_force / self.ramp_rate
        }
    }

    /// Triangular push-then-pull profile: `0 -> -F -> +F -> 0`.
    pub fn force_at(&self, t: f64) -> f64 {
        if self.max_force == 0.0 || self.ramp_rate <= 0.0 {
            return 0.0;
        }
        let quarter = self.max_force / self.ramp_rate;
        let f = self.max_force;
        if t <= 0.0 {
            0.0
        } else if t < quarter {
            -self.ramp_rate * t
        } else if t < 3.0 * quarter {
            -f + self.ramp_rate * (t - quarter)
        } else if t < 4.0 * quarter {
            f - self.ramp_rate * (t - 3.0 * quarter)
        } else {
            0.0
        }
    }
}

fn bench_start(model: &ChainModel) -> Result<(TaskTarget, JointState)> {
    let pose = bench_equilibrium();
    let q = dynamics::bench_configuration(model, &pose)?;
    Ok((TaskTarget::fixed(pose), JointState::at_rest(q)))
}

/// Quasi-static push-pull: a slow triangular `F_x` ramp at the end-effector
/// against the impedance controller holding the bench equilibrium.
pub fn run_static_pushpull(
    model: &ChainModel,
    gains: &ImpedanceGains,
    friction_est: Option<&JointFriction>,
    plant: &PlantConfig,
    protocol: &PushPullProtocol,
) -> Result<TrialRecord> {
    let gains = gains.with_kx(protocol.k_x);
    let controller = Controller::impedance(gains, friction_est.copied());
    let (target, start) = bench_start(model)?;
    let mut sim = Simulation::new(model, plant, &controller, target, start)?;

    let n = (protocol.duration() / plant.control_dt).round() as usize;
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let t = i as f64 * plant.control_dt;
        samples.push(sim.tick(Wrench::force_x(protocol.force_at(t)))?);
    }

    let saturation_fraction = sim.saturation_fraction();
    let status = if samples.iter().all(|s| s.applied.fx == 0.0) {
        TrialStatus::Degenerate("no force was applied".into())
    } else if saturation_fraction > MAX_SATURATION_FRACTION {
        TrialStatus::Invalid(format!(
            "{:.1} % of ticks saturated",
            100.0 * saturation_fraction
        ))
    } else {
        TrialStatus::Valid
    };

    Ok(TrialRecord {
        samples,
        meta: TrialMeta {
            protocol: "static",
            controller,
            plant: *plant,
            target,
            params: vec![
                ("k_x", protocol.k_x),
                ("ramp_rate", protocol.ramp_rate),
                ("max_force", protocol.max_force),
                ("settle_time", protocol.settle_time),
                ("max_speed", protocol.max_speed),
            ],
        },
        status,
        saturation_fraction,
    })
}

/// `(x, measured F_x)` pairs from a push-pull record after dropping the
/// initial transient and fast samples.
pub fn static_pairs(record: &TrialRecord, settle_time: f64, max_speed: f64) -> Vec<(f64, f64)> {
    record
        .samples
        .iter()
        .filter(|s| s.t >= settle_time && s.twist[0].abs() <= max_speed)
        .map(|s| (s.pose[0], s.fx_measured))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReleaseProtocol {
    pub k_x: f64,
    pub d_x: f64,
    /// Displacement along x before release, m.
    pub x0_offset: f64,
    /// Recorded free response after release, s.
    pub duration: f64,
    pub n_trials: usize,
    /// Holding spring stiffness as a multiple of `k_x`.
    pub hold_ratio: f64,
    /// Time to move the holding anchor out, s.
    pub hold_ramp: f64,
    /// Time to dwell at the offset before release, s.
    pub hold_dwell: f64,
}

impl Default for ReleaseProtocol {
    fn default() -> Self {
        Self {
            k_x: 300.0,
            d_x: 20.0,
            x0_offset: 0.037,
            duration: 2.0,
            n_trials: 1,
            hold_ratio: 10.0,
            hold_ramp: 1.0,
            hold_dwell: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReleaseResult {
    pub trials: Vec<TrialRecord>,
    /// Per-sample mean of `x - x_d` across trials.
    pub mean: Vec<f64>,
    /// Per-sample standard deviation of `x - x_d` across trials.
    pub sd: Vec<f64>,
    pub status: TrialStatus,
    /// `x - x_d` at the release instant, first trial.
    pub x0: f64,
}

fn smoothstep(s: f64) -> f64 {
    let s = s.clamp(0.0, 1.0);
    s * s * (3.0 - 2.0 * s)
}

/// Displace-and-release: a stiff, damped holding spring pulls the
/// end-effector out to `x_d + x0_offset`, dwells, and is removed at `t = 0`.
/// Only the free response is recorded; its clock starts at release.
pub fn run_release(
    model: &ChainModel,
    gains: &ImpedanceGains,
    friction_est: Option<&JointFriction>,
    plant: &PlantConfig,
    protocol: &ReleaseProtocol,
) -> Result<ReleaseResult> {
    if protocol.n_trials == 0 {
        return Err(Error::invariant("ReleaseProtocol", "n_trials", "must be >= 1"));
    }
    let trials = (0..protocol.n_trials)
        .map(|i| {
            let plant = plant.with_seed(plant.noise_seed.wrapping_add(i as u64));
            release_trial(model, gains, friction_est, &plant, protocol)
        })
        .collect::<Result<Vec<_>>>()?;

    let len = trials.iter().map(|t| t.samples.len()).min().unwrap_or(0);
    let devs: Vec<Vec<f64>> = trials.iter().map(|t| t.x_deviation()).collect();
    let (mean, sd): (Vec<f64>, Vec<f64>) = (0..len)
        .map(|i| {
            let col: Vec<f64> = devs.iter().map(|d| d[i]).collect();
            analysis::mean_sd(&col)
        })
        .unzip();
    let status = trials
        .iter()
        .map(|t| t.status.clone())
        .find(|s| !s.is_valid())
        .unwrap_or(TrialStatus::Valid);
    let x0 = devs[0].first().copied().unwrap_or(0.0);
    Ok(ReleaseResult {
        trials,
        mean,
        sd,
        status,
        x0,
    })
}

fn release_trial(
    model: &ChainModel,
    gains: &ImpedanceGains,
    friction_est: Option<&JointFriction>,
    plant: &PlantConfig,
    protocol: &ReleaseProtocol,
) -> Result<TrialRecord> {
    let gains = gains.with_kx(protocol.k_x).with_dx(protocol.d_x);
    let controller = Controller::impedance(gains, friction_est.copied());
    let (target, start) = bench_start(model)?;
    let mut sim = Simulation::new(model, plant, &controller, target, start)?;

    // Holding spring: anchored so that its equilibrium against the rendered
    // spring sits exactly at the requested offset, critically damped on the
    // apparent mass.
    let k_hold = protocol.hold_ratio * protocol.k_x;
    let m_eff = analysis::effective_mass(model, &start.q, gains.lambda_dls)?;
    let c_hold = 2.0 * ((k_hold + protocol.k_x) * m_eff).sqrt();
    let xd = target.pos[0];
    let hold_ticks = ((protocol.hold_ramp + protocol.hold_dwell) / plant.control_dt).round() as usize;
    for i in 0..hold_ticks {
        let t = i as f64 * plant.control_dt;
        let offset = protocol.x0_offset * smoothstep(t / protocol.hold_ramp);
        let anchor = xd + offset * (1.0 + protocol.k_x / k_hold);
        let f = k_hold * (anchor - sim.pose()[0]) - c_hold * sim.twist()[0];
        sim.tick(Wrench::force_x(f))?;
    }

    sim.state.t = 0.0;
    sim.reset_counters();
    let n = (protocol.duration / plant.control_dt).round() as usize + 1;
    let mut samples: Vec<Sample> = Vec::with_capacity(n);
    let mut status = TrialStatus::Valid;
    for _ in 0..n {
        match sim.tick(Wrench::ZERO) {
            Ok(s) => samples.push(s),
            Err(Error::IntegrationBlowup { t, .. }) => {
                status = TrialStatus::Divergent(format!(
                    "integration blew up at t = {t:.3} s (k = {}, b = {})",
                    protocol.k_x, protocol.d_x
                ));
                break;
            }
            Err(e) => return Err(e),
        }
    }

    let saturation_fraction = sim.saturation_fraction();
    if status.is_valid() {
        let dev: Vec<f64> = samples.iter().map(|s| s.pose[0] - xd).collect();
        let floor = analysis::PEAK_FLOOR * protocol.x0_offset.abs();
        let (_, peaks) = find_peaks(&dev, plant.control_dt, floor);
        let x0 = protocol.x0_offset.abs();
        let largest = peaks.iter().copied().fold(0.0, f64::max);
        if largest > x0 {
            status = TrialStatus::Divergent(format!(
                "peak amplitude {largest:.4} m exceeds the release offset {x0:.4} m"
            ));
        } else if saturation_fraction > MAX_SATURATION_FRACTION {
            status = TrialStatus::Invalid(format!(
                "{:.1} % of ticks saturated",
                100.0 * saturation_fraction
            ));
        }
    }

    Ok(TrialRecord {
        samples,
        meta: TrialMeta {
            protocol: "release",
            controller,
            plant: *plant,
            target,
            params: vec![
                ("k_x", protocol.k_x),
                ("d_x", protocol.d_x),
                ("x0_offset", protocol.x0_offset),
                ("duration", protocol.duration),
                ("hold_ratio", protocol.hold_ratio),
                ("hold_ramp", protocol.hold_ramp),
                ("hold_dwell", protocol.hold_dwell),
            ],
        },
        status,
        saturation_fraction,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdSweepProtocol {
    pub k_x_list: Vec<f64>,
    /// Displacements `x - x_d` to hold, m.
    pub displacements: Vec<f64>,
    pub repeats: usize,
    /// Simulated hold used to confirm each equilibrium, s.
    pub hold_time: f64,
    /// Allowed drift of the held position during the confirmation run, m.
    pub position_tol: f64,
}

impl Default for PdSweepProtocol {
    fn default() -> Self {
        Self {
            k_x_list: vec![300.0, 400.0, 500.0, 600.0],
            displacements: vec![0.0, 0.005, 0.01, 0.015, 0.02],
            repeats: 5,
            hold_time: 1.0,
            position_tol: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdPoint {
    pub k_x: f64,
    pub displacement: f64,
    /// Force found by the root search, N.
    pub force: f64,
    /// Load-cell readings, one per repeat.
    pub readings: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub converged: bool,
    pub note: Option<String>,
    /// Confirmation run holding `force`.
    pub record: Option<TrialRecord>,
}

/// Static equilibrium of the PD loop under an external `F_x`: solves
/// `J^T (K e + F) = g` on the unclamped joints by damped Newton iterations.
pub fn pd_static_equilibrium(
    model: &ChainModel,
    gains: &ImpedanceGains,
    target: &TaskTarget,
    q_start: &Vec4,
    fx: f64,
) -> Result<Vec4> {
    let locks = dynamics::JointLocks::for_model(model);
    let free: Vec<usize> = (0..4).filter(|&i| !locks.is_locked(i)).collect();
    let residual = |q: &Vec4| -> Vec4 {
        let e = target.pos - dynamics::forward_kinematics(model, q);
        let f = gains.k.component_mul(&e) + Vec3::new(fx, 0.0, 0.0);
        let g = dynamics::extract_terms(model, q, &Vec4::zeros()).gravity_vec;
        locks.apply(dynamics::jacobian(model, q).transpose() * f - g)
    };
    let mut q = *q_start;
    for _ in 0..100 {
        let r = residual(&q);
        if r.abs().max() < 1e-12 {
            return Ok(q);
        }
        let h = 1e-7;
        let n = free.len();
        let mut jac = nalgebra::DMatrix::<f64>::zeros(n, n);
        for (c, &j) in free.iter().enumerate() {
            let dq = Vec4::ith(j, h);
            let d = (residual(&(q + dq)) - residual(&(q - dq))) / (2.0 * h);
            for (r_i, &i) in free.iter().enumerate() {
                jac[(r_i, c)] = d[i];
            }
        }
        let rhs = nalgebra::DVector::from_iterator(n, free.iter().map(|&i| -r[i]));
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::NoSolution("singular equilibrium Jacobian".into()))?;
        let mut dq = Vec4::zeros();
        for (c, &j) in free.iter().enumerate() {
            dq[j] = step[c];
        }
        // Keep steps small so Newton stays on the starting branch.
        let scale = (0.2 / dq.abs().max()).min(1.0);
        q += dq * scale;
    }
    Err(Error::NoSolution(format!(
        "PD equilibrium did not converge for F_x = {fx:.4} N"
    )))
}

/// Force needed to hold `x - x_d = displacement` under the PD law, by a
/// secant search on the static equilibrium.
pub fn pd_holding_force(
    model: &ChainModel,
    gains: &ImpedanceGains,
    target: &TaskTarget,
    q_start: &Vec4,
    displacement: f64,
) -> Result<(f64, Vec4)> {
    let eval = |f: f64| -> Result<(f64, Vec4)> {
        let q = pd_static_equilibrium(model, gains, target, q_start, f)?;
        let x = dynamics::forward_kinematics(model, &q)[0];
        Ok((x - target.pos[0] - displacement, q))
    };
    let mut f0 = gains.k[0] * displacement;
    let mut f1 = f0 + 0.1 + 0.1 * f0.abs();
    let (mut h0, _) = eval(f0)?;
    for _ in 0..50 {
        let (h1, q1) = eval(f1)?;
        if h1.abs() < 1e-10 {
            return Ok((f1, q1));
        }
        if h1 == h0 {
            break;
        }
        let f2 = f1 - h1 * (f1 - f0) / (h1 - h0);
        (f0, h0, f1) = (f1, h1, f2);
    }
    Err(Error::NoSolution(format!(
        "holding force search did not converge for displacement {displacement:.4} m"
    )))
}

/// PD stiffness sweep: for each gain and displacement, find the holding
/// force, confirm it in closed-loop simulation and record noisy readings.
pub fn run_pd_sweep(
    model: &ChainModel,
    gains: &ImpedanceGains,
    plant: &PlantConfig,
    protocol: &PdSweepProtocol,
) -> Result<Vec<PdPoint>> {
    if protocol.displacements.is_empty() || protocol.k_x_list.is_empty() {
        return Err(Error::invariant(
            "PdSweepProtocol",
            "displacements/k_x_list",
            "must not be empty",
        ));
    }
    let mut points = Vec::new();
    for ki in 0..protocol.k_x_list.len() {
        for di in 0..protocol.displacements.len() {
            points.push(pd_point(model, gains, plant, protocol, ki, di)?);
        }
    }
    Ok(points)
}

/// One grid point of the PD sweep: gain `k_x_list[ki]`, displacement
/// `displacements[di]`. Its noise seed is the plant seed plus the point's
/// row-major grid index, so points can be evaluated in any order.
pub fn pd_point(
    model: &ChainModel,
    gains: &ImpedanceGains,
    plant: &PlantConfig,
    protocol: &PdSweepProtocol,
    ki: usize,
    di: usize,
) -> Result<PdPoint> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    let (target, start) = bench_start(model)?;
    let noise = Normal::new(0.0, plant.force_sensor_noise_sd)
        .map_err(|e| Error::invariant("PlantConfig", "force_sensor_noise_sd", e.to_string()))?;
    let k_x = protocol.k_x_list[ki];
    let disp = protocol.displacements[di];
    let gains = gains.with_kx(k_x);
    let controller = Controller::pd(gains);
    let seed = plant
        .noise_seed
        .wrapping_add((ki * protocol.displacements.len() + di) as u64);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut point = PdPoint {
        k_x,
        displacement: disp,
        force: f64::NAN,
        readings: Vec::new(),
        mean: f64::NAN,
        sd: f64::NAN,
        converged: false,
        note: None,
        record: None,
    };
    match pd_holding_force(model, &gains, &target, &start.q, disp) {
        Ok((force, q_hold)) => {
            let plant = plant.with_seed(seed);
            let record = pd_hold(model, &plant, &controller, target, q_hold, force, protocol)?;
            let x_end = record.samples.last().map(|s| s.pose[0]).unwrap_or(f64::NAN);
            let drift = (x_end - target.pos[0] - disp).abs();
            point.force = force;
            point.readings = (0..protocol.repeats)
                .map(|_| force + noise.sample(&mut rng))
                .collect();
            (point.mean, point.sd) = analysis::mean_sd(&point.readings);
            point.converged = drift <= protocol.position_tol;
            if !point.converged {
                point.note = Some(format!("held position drifted by {drift:.2e} m"));
            }
            point.record = Some(record);
        }
        Err(e) => point.note = Some(e.to_string()),
    }
    Ok(point)
}

fn pd_hold(
    model: &ChainModel,
    plant: &PlantConfig,
    controller: &Controller,
    target: TaskTarget,
    q_hold: Vec4,
    force: f64,
    protocol: &PdSweepProtocol,
) -> Result<TrialRecord> {
    let mut sim = Simulation::new(model, plant, controller, target, JointState::at_rest(q_hold))?;
    let n = (protocol.hold_time / plant.control_dt).round() as usize;
    let samples = (0..n)
        .map(|_| sim.tick(Wrench::force_x(force)))
        .collect::<Result<Vec<_>>>()?;
    let saturation_fraction = sim.saturation_fraction();
    Ok(TrialRecord {
        samples,
        meta: TrialMeta {
            protocol: "pd",
            controller: *controller,
            plant: *plant,
            target,
            params: vec![("k_x", controller.gains.k[0]), ("force", force)],
        },
        status: TrialStatus::Valid,
        saturation_fraction,
    })
}

/// Displacements at which the mean holding force does not grow strictly in
/// magnitude with `k_x` (in the direction of the displacement). Zero
/// displacement is skipped since only the gravity sag acts there.
pub fn pd_monotonicity(points: &[PdPoint]) -> Vec<f64> {
    let mut disps: Vec<f64> = points.iter().map(|p| p.displacement).collect();
    disps.sort_by(f64::total_cmp);
    disps.dedup();
    disps
        .into_iter()
        .filter(|&d| d != 0.0)
        .filter(|&d| {
            let mut row: Vec<&PdPoint> = points.iter().filter(|p| p.displacement == d).collect();
            row.sort_by(|a, b| a.k_x.total_cmp(&b.k_x));
            !row
                .windows(2)
                .all(|w| d.signum() * (w[1].mean - w[0].mean) > 0.0)
        })
        .collect()
}
