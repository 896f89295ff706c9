//! Stiffness fits and mass-spring-damper comparisons for simulated trials.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics;
use crate::error::{Error, Result};
use crate::model::{ChainModel, Vec4};

/// Ordinary least-squares fit of force against displacement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StiffnessFit {
    pub n: usize,
    /// N/m
    pub slope: f64,
    /// N
    pub intercept: f64,
    pub r2: f64,
    /// 95 % two-sided confidence interval on the slope. Infinite when the
    /// fit has no residual degrees of freedom.
    pub ci95: (f64, f64),
    pub rel_err_pct: f64,
    /// Number of full chunks that produced a slope.
    pub n_chunks: usize,
    /// Mean of the per-chunk slopes, NaN when `n_chunks == 0`.
    pub chunk_mean: f64,
    /// Sample standard deviation of the per-chunk slopes.
    pub chunk_sd: f64,
}

impl StiffnessFit {
    pub fn ci_is_finite(&self) -> bool {
        self.ci95.0.is_finite() && self.ci95.1.is_finite()
    }

    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci95.1 - self.ci95.0)
    }
}

struct Line {
    slope: f64,
    intercept: f64,
    ssr: f64,
    sst: f64,
    sxx: f64,
}

fn fit_line(pairs: &[(f64, f64)]) -> Result<Line> {
    if pairs.len() < 2 {
        return Err(Error::DegenerateFit("need at least two samples"));
    }
    let x_first = pairs[0].0;
    if pairs.iter().all(|p| p.0 == x_first) {
        return Err(Error::DegenerateFit("all displacement samples are identical"));
    }
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut sst) = (0.0, 0.0, 0.0);
    for &(x, y) in pairs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        sxy += dx * dy;
        sst += dy * dy;
    }
    if sxx == 0.0 || !sxx.is_finite() {
        return Err(Error::DegenerateFit("displacement has no spread"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ssr = pairs
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    Ok(Line {
        slope,
        intercept,
        ssr,
        sst,
        sxx,
    })
}

/// Fits `F = slope * x + intercept` and summarises it against the commanded
/// stiffness. Chunk statistics use contiguous windows of `chunk_size`
/// samples; a trailing partial window is dropped.
pub fn ols_fit(pairs: &[(f64, f64)], k_commanded: f64, chunk_size: usize) -> Result<StiffnessFit> {
    if chunk_size < 2 {
        return Err(Error::invariant("ols_fit", "chunk_size", "must be >= 2"));
    }
    let line = fit_line(pairs)?;
    let n = pairs.len();
    let r2 = if line.sst > 0.0 {
        (1.0 - line.ssr / line.sst).clamp(0.0, 1.0)
    } else {
        1.0
    };
    let ci95 = if n > 2 {
        let dof = (n - 2) as f64;
        let se = (line.ssr / dof / line.sxx).sqrt();
        let t = StudentsT::new(0.0, 1.0, dof)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975);
        (line.slope - t * se, line.slope + t * se)
    } else {
        (f64::NEG_INFINITY, f64::INFINITY)
    };

    let chunk_slopes: Vec<f64> = pairs
        .chunks_exact(chunk_size)
        .filter_map(|c| fit_line(c).ok().map(|l| l.slope))
        .collect();
    let (chunk_mean, chunk_sd) = mean_sd(&chunk_slopes);

    Ok(StiffnessFit {
        n,
        slope: line.slope,
        intercept: line.intercept,
        r2,
        ci95,
        rel_err_pct: 100.0 * (line.slope - k_commanded).abs() / k_commanded,
        n_chunks: chunk_slopes.len(),
        chunk_mean,
        chunk_sd,
    })
}

/// Mean and sample standard deviation; `(NaN, NaN)` for an empty slice and a
/// zero deviation for a single value.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    match values.len() {
        0 => (f64::NAN, f64::NAN),
        1 => (values[0], 0.0),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
            (mean, var.sqrt())
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Regime {
    Underdamped,
    CriticallyDamped,
    Overdamped,
}

impl Regime {
    pub fn as_str(&self) -> &'static str {
        match self {
            Regime::Underdamped => "underdamped",
            Regime::CriticallyDamped => "critically-damped",
            Regime::Overdamped => "overdamped",
        }
    }
}

/// Closed-form free response of `m x'' + b x' + k x = 0` from `x(0) = x0`,
/// `x'(0) = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct MsdReference {
    pub m_eff: f64,
    pub k: f64,
    pub b: f64,
    pub x0: f64,
    pub regime: Regime,
    pub dt: f64,
    /// `x(i * dt)` for `i = 0..=duration/dt`.
    pub samples: Vec<f64>,
}

impl MsdReference {
    pub fn natural_frequency(&self) -> f64 {
        (self.k / self.m_eff).sqrt()
    }

    pub fn damping_ratio(&self) -> f64 {
        self.b / (2.0 * (self.m_eff * self.k).sqrt())
    }

    /// Position, velocity and acceleration at time `t`.
    pub fn eval(&self, t: f64) -> (f64, f64, f64) {
        let (m, k, b, x0) = (self.m_eff, self.k, self.b, self.x0);
        let w0 = (k / m).sqrt();
        let sigma = b / (2.0 * m);
        match self.regime {
            Regime::Underdamped => {
                let wd = (w0 * w0 - sigma * sigma).sqrt();
                let e = (-sigma * t).exp();
                let (s, c) = (wd * t).sin_cos();
                let x = x0 * e * (c + sigma / wd * s);
                let v = -x0 * e * (w0 * w0 / wd) * s;
                let a = x0 * e * (w0 * w0 / wd) * (sigma * s - wd * c);
                (x, v, a)
            }
            Regime::CriticallyDamped => {
                let e = (-w0 * t).exp();
                let x = x0 * (1.0 + w0 * t) * e;
                let v = -x0 * w0 * w0 * t * e;
                let a = -x0 * w0 * w0 * (1.0 - w0 * t) * e;
                (x, v, a)
            }
            Regime::Overdamped => {
                let root = (sigma * sigma - w0 * w0).sqrt();
                let (r1, r2) = (-sigma + root, -sigma - root);
                let ca = -r2 * x0 / (r1 - r2);
                let cb = r1 * x0 / (r1 - r2);
                let (e1, e2) = ((r1 * t).exp(), (r2 * t).exp());
                (
                    ca * e1 + cb * e2,
                    ca * r1 * e1 + cb * r2 * e2,
                    ca * r1 * r1 * e1 + cb * r2 * r2 * e2,
                )
            }
        }
    }

    pub fn times(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.samples.len()).map(move |i| i as f64 * self.dt)
    }
}

/// Samples the reference on `[0, duration]` at spacing `dt`.
pub fn msd_reference(
    m_eff: f64,
    k: f64,
    b: f64,
    x0: f64,
    duration: f64,
    dt: f64,
) -> Result<MsdReference> {
    if !(m_eff > 0.0 && m_eff.is_finite()) {
        return Err(Error::invariant("MsdReference", "m_eff", "must be > 0"));
    }
    if !(k > 0.0 && k.is_finite()) {
        return Err(Error::invariant("MsdReference", "k", "must be > 0"));
    }
    if !(b >= 0.0 && b.is_finite()) {
        return Err(Error::invariant("MsdReference", "b", "must be >= 0"));
    }
    if !(dt > 0.0 && duration >= 0.0) {
        return Err(Error::invariant("MsdReference", "dt/duration", "must be positive"));
    }
    let crit = 4.0 * m_eff * k;
    let disc = b * b - crit;
    let regime = if disc.abs() <= 1e-12 * crit {
        Regime::CriticallyDamped
    } else if disc < 0.0 {
        Regime::Underdamped
    } else {
        Regime::Overdamped
    };
    let mut reference = MsdReference {
        m_eff,
        k,
        b,
        x0,
        regime,
        dt,
        samples: Vec::new(),
    };
    let n = (duration / dt).round() as usize;
    reference.samples = (0..=n).map(|i| reference.eval(i as f64 * dt).0).collect();
    Ok(reference)
}

/// Apparent x-axis mass at a configuration: the `xx` entry of the task
/// inertia with the controller's pseudoinverse damping.
pub fn effective_mass(model: &ChainModel, q_eq: &Vec4, lambda: f64) -> Result<f64> {
    Ok(dynamics::task_inertia(model, q_eq, lambda)?[(0, 0)])
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMetrics {
    /// RMS deviation from the reference normalised by `|x0|`.
    pub nrmse: f64,
    /// Times of velocity sign changes after release.
    pub peak_times: Vec<f64>,
    /// `|x|` at those times.
    pub peak_amplitudes: Vec<f64>,
    /// `t_measured - t_reference` for each pair of matching zero crossings.
    pub zero_crossing_phase_lag: Vec<f64>,
    /// Time after which `|x|` stays within 2 % of `|x0|`; `None` if it never
    /// does within the record.
    pub settling_time: Option<f64>,
}

/// Peaks smaller than this fraction of `|x0|` are treated as numerical
/// dither and ignored.
pub const PEAK_FLOOR: f64 = 1e-3;

pub const SETTLING_BAND: f64 = 0.02;

/// Extrema of a uniformly sampled displacement series, found from sign
/// changes of the forward-difference velocity. Returns `(times, |x|)`; the
/// time is the vertex of the parabola through the extreme sample and its
/// neighbours, so it is not quantised to the sampling grid.
pub fn find_peaks(x: &[f64], dt: f64, floor: f64) -> (Vec<f64>, Vec<f64>) {
    let mut times = Vec::new();
    let mut amps = Vec::new();
    let mut last_sign = 0.0;
    for i in 1..x.len() {
        let v = x[i] - x[i - 1];
        if v == 0.0 {
            continue;
        }
        let sign = v.signum();
        if last_sign != 0.0 && sign != last_sign {
            let k = i - 1;
            let amp = x[k].abs();
            if amp >= floor {
                times.push((k as f64 + vertex_offset(x[k - 1], x[k], x[k + 1])) * dt);
                amps.push(amp);
            }
        }
        last_sign = sign;
    }
    (times, amps)
}

/// Abscissa of the vertex of the parabola through `(-1, a)`, `(0, b)`,
/// `(1, c)`, clamped to half a sample.
fn vertex_offset(a: f64, b: f64, c: f64) -> f64 {
    let curv = a - 2.0 * b + c;
    if curv == 0.0 {
        0.0
    } else {
        (0.5 * (a - c) / curv).clamp(-0.5, 0.5)
    }
}

/// Times at which the series changes sign, linearly interpolated.
pub fn zero_crossings(x: &[f64], dt: f64) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..x.len() {
        let (a, b) = (x[i - 1], x[i]);
        if a == 0.0 {
            continue;
        }
        if b == 0.0 {
            out.push(i as f64 * dt);
        } else if (a > 0.0) != (b > 0.0) {
            out.push((i - 1) as f64 * dt + dt * a / (a - b));
        }
    }
    out
}

/// Compares a displacement series (deviation from the set point, sampled at
/// `reference.dt`) with a reference response.
pub fn compare_series(measured: &[f64], reference: &MsdReference) -> ResponseMetrics {
    let x0 = reference.x0.abs();
    let dt = reference.dt;
    let n = measured.len().min(reference.samples.len());
    let sq: f64 = measured[..n]
        .iter()
        .zip(&reference.samples[..n])
        .map(|(a, b)| (a - b).powi(2))
        .sum();
    let nrmse = if n > 0 { (sq / n as f64).sqrt() / x0 } else { f64::NAN };

    let (peak_times, peak_amplitudes) = find_peaks(&measured[..n], dt, PEAK_FLOOR * x0);

    let meas_zc = zero_crossings(&measured[..n], dt);
    let ref_zc = zero_crossings(&reference.samples[..n], dt);
    let zero_crossing_phase_lag = meas_zc.iter().zip(&ref_zc).map(|(a, b)| a - b).collect();

    let band = SETTLING_BAND * x0;
    let settling_time = match measured[..n].iter().rposition(|v| v.abs() > band) {
        None => Some(0.0),
        Some(i) if i + 1 < n => Some((i + 1) as f64 * dt),
        Some(_) => None,
    };

    ResponseMetrics {
        nrmse,
        peak_times,
        peak_amplitudes,
        zero_crossing_phase_lag,
        settling_time,
    }
}

/// True when the sequence has a run of at least `run` strictly increasing
/// consecutive values.
pub fn has_increasing_run(values: &[f64], run: usize) -> bool {
    if run <= 1 {
        return !values.is_empty();
    }
    let mut len = 1;
    for w in values.windows(2) {
        if w[1] > w[0] {
            len += 1;
            if len >= run {
                return true;
            }
        } else {
            len = 1;
        }
    }
    false
}
