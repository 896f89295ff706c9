//! The three bench experiments driven from a [`Config`], with the per-cell
//! evaluation the summaries and acceptance checks need.

use rayon::prelude::*;
use sparc_core::analysis::{
    compare_series, effective_mass, find_peaks, msd_reference, ols_fit, MsdReference,
    ResponseMetrics, StiffnessFit, PEAK_FLOOR,
};
use sparc_core::config::Config;
use sparc_core::dynamics::bench_configuration;
use sparc_core::model::bench_equilibrium;
use sparc_core::sim::{
    pd_point, run_release, run_static_pushpull, static_pairs, PdPoint, ReleaseResult,
    TrialRecord, TrialStatus,
};
use sparc_core::{Error, Result};

/// Runs `f` over `items` on a pool of `jobs` threads, keeping input order.
pub fn fan_out<T, R, F>(jobs: usize, items: &[T], f: F) -> Result<Vec<R>>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> Result<R> + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::NoSolution(format!("thread pool: {e}")))?;
    pool.install(|| items.par_iter().map(&f).collect())
}

#[derive(Debug, Clone)]
pub struct StaticRun {
    pub k_x: f64,
    pub record: TrialRecord,
    /// Per-sample flag: kept for the fit.
    pub used: Vec<bool>,
    pub fit: std::result::Result<StiffnessFit, String>,
}

impl StaticRun {
    pub fn passes(&self, max_rel_err_pct: f64, min_r2: f64) -> bool {
        self.record.status.is_valid()
            && matches!(&self.fit, Ok(f) if f.rel_err_pct < max_rel_err_pct && f.r2 >= min_r2)
    }
}

pub fn static_sweep(cfg: &Config, jobs: usize) -> Result<Vec<StaticRun>> {
    let model = cfg.model()?;
    let gains = cfg.gains();
    let plant = cfg.plant()?;
    let est = cfg.friction_estimate();
    let chunk = cfg.static_sweep.chunk_size;
    fan_out(jobs, &cfg.static_sweep.k_x, |&k_x| {
        let protocol = cfg.push_pull(k_x);
        let record = run_static_pushpull(&model, &gains, est.as_ref(), &plant, &protocol)?;
        let used = record
            .samples
            .iter()
            .map(|s| s.t >= protocol.settle_time && s.twist[0].abs() <= protocol.max_speed)
            .collect();
        let pairs = static_pairs(&record, protocol.settle_time, protocol.max_speed);
        let fit = ols_fit(&pairs, k_x, chunk).map_err(|e| e.to_string());
        Ok(StaticRun {
            k_x,
            record,
            used,
            fit,
        })
    })
}

/// First-peak timing against the reference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FirstPeak {
    /// Both responses peak; times in s.
    Matched { measured: f64, reference: f64 },
    /// The reference never overshoots; the measured overshoot as a
    /// fraction of `|x0|`.
    NoReferencePeak { overshoot: f64 },
    /// The reference peaks but the measured response does not.
    Missing { reference: f64 },
}

/// Overshoot allowed when the reference has no peak, fraction of `|x0|`.
pub const NO_PEAK_OVERSHOOT: f64 = 0.05;

impl FirstPeak {
    pub fn rel_err(&self) -> Option<f64> {
        match *self {
            FirstPeak::Matched { measured, reference } => Some((measured - reference).abs() / reference),
            _ => None,
        }
    }

    pub fn within(&self, tol: f64) -> bool {
        match *self {
            FirstPeak::Matched { .. } => self.rel_err().is_some_and(|e| e < tol),
            FirstPeak::NoReferencePeak { overshoot } => overshoot < NO_PEAK_OVERSHOOT,
            FirstPeak::Missing { .. } => false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ReleaseCell {
    pub k_x: f64,
    pub d_x: f64,
    pub over_compensated: bool,
    pub m_eff: f64,
    pub result: ReleaseResult,
    pub reference: MsdReference,
    pub metrics: ResponseMetrics,
    pub first_peak: FirstPeak,
}

impl ReleaseCell {
    pub fn divergent(&self) -> bool {
        matches!(self.result.status, TrialStatus::Divergent(_))
    }

    /// Whether the zero-crossing lag never decreases and ends at least
    /// `factor` times its first value.
    pub fn phase_drift(&self, factor: f64) -> bool {
        phase_drift(&self.metrics.zero_crossing_phase_lag, factor)
    }
}

pub fn phase_drift(lags: &[f64], factor: f64) -> bool {
    let (Some(first), Some(last)) = (lags.first(), lags.last()) else {
        return false;
    };
    lags.len() >= 2 && lags.windows(2).all(|w| w[1] >= w[0]) && *last >= factor * first.abs() && *last > 0.0
}

fn first_peak(measured: &[f64], reference: &MsdReference) -> FirstPeak {
    let dt = reference.dt;
    let floor = PEAK_FLOOR * reference.x0.abs();
    let (ref_times, _) = find_peaks(&reference.samples, dt, floor);
    let (meas_times, _) = find_peaks(measured, dt, floor);
    match (ref_times.first(), meas_times.first()) {
        (Some(&r), Some(&m)) => FirstPeak::Matched {
            measured: m,
            reference: r,
        },
        (Some(&r), None) => FirstPeak::Missing { reference: r },
        (None, _) => {
            let sign = reference.x0.signum();
            let beyond = measured.iter().map(|x| -sign * x).fold(0.0, f64::max);
            FirstPeak::NoReferencePeak {
                overshoot: beyond / reference.x0.abs(),
            }
        }
    }
}

/// All `(k_x, d_x)` cells of the release grid, row-major in `k_x`.
pub fn release_cells(cfg: &Config) -> Vec<(f64, f64)> {
    cfg.release
        .k_x
        .iter()
        .flat_map(|&k| cfg.release.d_x.iter().map(move |&b| (k, b)))
        .collect()
}

pub fn release_cell(cfg: &Config, k_x: f64, d_x: f64) -> Result<ReleaseCell> {
    let model = cfg.model()?;
    let gains = cfg.gains();
    let plant = cfg.plant()?;
    let est = cfg.release_estimate(d_x);
    let protocol = cfg.release_protocol(k_x, d_x);
    let result = run_release(&model, &gains, est.as_ref(), &plant, &protocol)?;
    let q_eq = bench_configuration(&model, &bench_equilibrium())?;
    let m_eff = effective_mass(&model, &q_eq, gains.lambda_dls)?;
    let x0 = if result.x0 != 0.0 { result.x0 } else { protocol.x0_offset };
    let reference = msd_reference(m_eff, k_x, d_x, x0, protocol.duration, plant.control_dt)?;
    let metrics = compare_series(&result.mean, &reference);
    let first_peak = first_peak(&result.mean, &reference);
    Ok(ReleaseCell {
        k_x,
        d_x,
        over_compensated: cfg.release.over_compensation && d_x == 0.0,
        m_eff,
        result,
        reference,
        metrics,
        first_peak,
    })
}

pub fn release_grid(cfg: &Config, jobs: usize) -> Result<Vec<ReleaseCell>> {
    fan_out(jobs, &release_cells(cfg), |&(k, b)| release_cell(cfg, k, b))
}

pub fn pd_sweep(cfg: &Config, jobs: usize) -> Result<Vec<PdPoint>> {
    let model = cfg.model()?;
    let gains = cfg.gains();
    let plant = cfg.plant()?;
    let protocol = cfg.pd_protocol();
    let grid: Vec<(usize, usize)> = (0..protocol.k_x_list.len())
        .flat_map(|ki| (0..protocol.displacements.len()).map(move |di| (ki, di)))
        .collect();
    fan_out(jobs, &grid, |&(ki, di)| pd_point(&model, &gains, &plant, &protocol, ki, di))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phase_drift_needs_growth_and_order() {
        assert!(phase_drift(&[0.01, 0.02, 0.05], 2.0));
        assert!(!phase_drift(&[0.01, 0.03, 0.02], 2.0));
        assert!(!phase_drift(&[0.01, 0.012], 2.0));
        assert!(!phase_drift(&[0.01], 2.0));
        assert!(!phase_drift(&[], 2.0));
    }

    #[test]
    fn fan_out_keeps_order() {
        let items: Vec<usize> = (0..50).collect();
        let out = fan_out(4, &items, |&i| Ok(i * 2)).unwrap();
        assert_eq!(out, items.iter().map(|i| i * 2).collect::<Vec<_>>());
    }

    #[test]
    fn first_peak_cases() {
        let r = msd_reference(0.4, 300.0, 2.0, 0.03, 1.0, 1e-3).unwrap();
        let fp = first_peak(&r.samples, &r);
        assert!(matches!(fp, FirstPeak::Matched { .. }));
        assert_eq!(fp.rel_err(), Some(0.0));
        let over = msd_reference(0.4, 300.0, 60.0, 0.03, 1.0, 1e-3).unwrap();
        let fp = first_peak(&over.samples, &over);
        assert!(matches!(fp, FirstPeak::NoReferencePeak { overshoot } if overshoot == 0.0));
        assert!(fp.within(0.1));
        let flat = vec![0.03; r.samples.len()];
        assert!(matches!(first_peak(&flat, &r), FirstPeak::Missing { .. }));
    }
}
