//! Browser bindings: a release response against its mass-spring-damper
//! reference, a push-pull stiffness fit and a Stribeck friction curve.

use sparc_core::analysis::{compare_series, effective_mass, msd_reference, ols_fit};
use sparc_core::config::Config;
use sparc_core::control::stribeck_torque;
use sparc_core::dynamics::bench_configuration;
use sparc_core::model::{bench_equilibrium, FrictionParams};
use sparc_core::sim::{run_release, run_static_pushpull, static_pairs};
use wasm_bindgen::prelude::*;

fn js_err(e: sparc_core::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Displacement after release, sampled at the control rate.
#[wasm_bindgen]
pub struct Release {
    t: Vec<f64>,
    x: Vec<f64>,
    reference: Vec<f64>,
    nrmse: f64,
    m_eff: f64,
    status: String,
}

#[wasm_bindgen]
impl Release {
    #[wasm_bindgen(getter)]
    pub fn t(&self) -> Vec<f64> {
        self.t.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn reference(&self) -> Vec<f64> {
        self.reference.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn nrmse(&self) -> f64 {
        self.nrmse
    }
    #[wasm_bindgen(getter)]
    pub fn m_eff(&self) -> f64 {
        self.m_eff
    }
    #[wasm_bindgen(getter)]
    pub fn status(&self) -> String {
        self.status.clone()
    }
}

/// Holds the end-effector `x0_offset` m off target, releases it and
/// simulates `duration` s. `est_scale` scales the compensated friction
/// levels; 1 is perfect compensation.
pub fn release_response(k_x: f64, d_x: f64, est_scale: f64, duration: f64) -> sparc_core::Result<Release> {
    let mut cfg = Config::default();
    cfg.friction_est.scale = est_scale;
    cfg.release.duration = duration;
    cfg.release.hold_ramp = 0.5;
    cfg.release.hold_dwell = 0.3;
    cfg.validate()?;
    let model = cfg.model()?;
    let gains = cfg.gains();
    let plant = cfg.plant()?;
    let protocol = cfg.release_protocol(k_x, d_x);
    let est = cfg.release_estimate(d_x);
    let result = run_release(&model, &gains, est.as_ref(), &plant, &protocol)?;
    let q_eq = bench_configuration(&model, &bench_equilibrium())?;
    let m_eff = effective_mass(&model, &q_eq, gains.lambda_dls)?;
    let reference = msd_reference(m_eff, k_x, d_x, result.x0, duration, plant.control_dt)?;
    let metrics = compare_series(&result.mean, &reference);
    Ok(Release {
        t: reference.times().collect(),
        x: result.mean,
        reference: reference.samples.clone(),
        nrmse: metrics.nrmse,
        m_eff,
        status: result.status.label().to_string(),
    })
}

#[wasm_bindgen]
pub fn release(k_x: f64, d_x: f64, est_scale: f64, duration: f64) -> Result<Release, JsError> {
    release_response(k_x, d_x, est_scale, duration).map_err(js_err)
}

/// Settled `(x, F_x)` pairs of a push-pull run and their line fit.
#[wasm_bindgen]
pub struct StaticFit {
    x: Vec<f64>,
    f: Vec<f64>,
    k_hat: f64,
    intercept: f64,
    r2: f64,
    rel_err_pct: f64,
}

#[wasm_bindgen]
impl StaticFit {
    #[wasm_bindgen(getter)]
    pub fn x(&self) -> Vec<f64> {
        self.x.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn f(&self) -> Vec<f64> {
        self.f.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn k_hat(&self) -> f64 {
        self.k_hat
    }
    #[wasm_bindgen(getter)]
    pub fn intercept(&self) -> f64 {
        self.intercept
    }
    #[wasm_bindgen(getter)]
    pub fn r2(&self) -> f64 {
        self.r2
    }
    #[wasm_bindgen(getter)]
    pub fn rel_err_pct(&self) -> f64 {
        self.rel_err_pct
    }
}

/// Push-pull run at stiffness `k_x` with load-cell noise `noise_sd` N.
/// Every `stride`-th settled pair is returned for plotting; the fit uses all.
pub fn push_pull_fit(k_x: f64, noise_sd: f64, seed: u64, stride: usize) -> sparc_core::Result<StaticFit> {
    let mut cfg = Config {
        seed,
        ..Config::default()
    };
    cfg.plant.force_sensor_noise_sd = noise_sd;
    cfg.validate()?;
    let model = cfg.model()?;
    let protocol = cfg.push_pull(k_x);
    let record = run_static_pushpull(&model, &cfg.gains(), cfg.friction_estimate().as_ref(), &cfg.plant()?, &protocol)?;
    let pairs = static_pairs(&record, protocol.settle_time, protocol.max_speed);
    let fit = ols_fit(&pairs, k_x, cfg.static_sweep.chunk_size)?;
    let shown = pairs.iter().step_by(stride.max(1));
    Ok(StaticFit {
        x: shown.clone().map(|p| p.0).collect(),
        f: shown.map(|p| p.1).collect(),
        k_hat: fit.slope,
        intercept: fit.intercept,
        r2: fit.r2,
        rel_err_pct: fit.rel_err_pct,
    })
}

#[wasm_bindgen]
pub fn static_fit(k_x: f64, noise_sd: f64, seed: u32, stride: usize) -> Result<StaticFit, JsError> {
    push_pull_fit(k_x, noise_sd, u64::from(seed), stride).map_err(js_err)
}

/// Friction torque at `n` evenly spaced speeds over `[-qd_max, qd_max]`,
/// with the default tanh sharpness.
#[wasm_bindgen]
pub fn stribeck_curve(tau_c: f64, tau_s: f64, b_visc: f64, qd_s: f64, a_shape: f64, qd_max: f64, n: usize) -> Vec<f64> {
    let p = FrictionParams {
        tau_c,
        tau_s,
        b_visc,
        qd_s,
        a_shape,
        ..FrictionParams::PLANT_DEFAULT
    };
    let n = n.max(2);
    (0..n)
        .map(|i| {
            let qd = -qd_max + 2.0 * qd_max * i as f64 / (n - 1) as f64;
            stribeck_torque(&p, qd)
        })
        .collect()
}
