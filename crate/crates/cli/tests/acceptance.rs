//! End-to-end acceptance run. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use sha2::{Digest, Sha256};
use sparc_cli::experiments::{pd_sweep, FirstPeak, release_grid, static_sweep};
use sparc_cli::validate;
use sparc_core::analysis::has_increasing_run;
use sparc_core::config::{Config, PerJoint};
use sparc_core::sim::pd_monotonicity;

struct Verdict {
    passed: bool,
    detail: String,
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Verdict + 'a>);

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn jobs() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

fn static_stiffness() -> Verdict {
    let cfg = Config::default();
    let start = Instant::now();
    let runs = match static_sweep(&cfg, jobs()) {
        Ok(r) => r,
        Err(e) => return verdict(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut parts = Vec::new();
    let mut ok = secs < 60.0;
    for r in &runs {
        ok &= r.passes(2.0, 0.99);
        match &r.fit {
            Ok(f) => parts.push(format!("k={} khat={:.2} ({:.2}%, R2={:.4})", r.k_x, f.slope, f.rel_err_pct, f.r2)),
            Err(e) => parts.push(format!("k={}: {e}", r.k_x)),
        }
    }
    ok &= runs.len() == 5;
    verdict(ok, format!("{}; {secs:.1} s", parts.join(", ")))
}

fn release_fidelity() -> Verdict {
    let mut cfg = Config::default();
    cfg.release.k_x = vec![300.0, 500.0];
    cfg.release.d_x = vec![20.0, 40.0];
    let start = Instant::now();
    let cells = match release_grid(&cfg, jobs()) {
        Ok(c) => c,
        Err(e) => return verdict(false, e.to_string()),
    };
    let secs = start.elapsed().as_secs_f64();
    let mut ok = secs < 30.0 && cells.len() == 4;
    let mut parts = Vec::new();
    for c in &cells {
        let nrmse = 100.0 * c.metrics.nrmse;
        ok &= c.result.status.is_valid() && nrmse < 5.0 && c.first_peak.within(0.10);
        let peak = match c.first_peak {
            FirstPeak::NoReferencePeak { overshoot } => {
                format!("no reference peak, overshoot {:.2}%", 100.0 * overshoot)
            }
            fp => match fp.rel_err() {
                Some(e) => format!("peak err {:.2}%", 100.0 * e),
                None => format!("{fp:?}"),
            },
        };
        parts.push(format!("k={} b={}: NRMSE {nrmse:.2}%, {peak}", c.k_x, c.d_x));
    }
    verdict(ok, format!("{}; {secs:.1} s", parts.join("; ")))
}

fn divergence() -> Verdict {
    let mut cfg = Config::default();
    cfg.release.k_x = vec![300.0];
    cfg.release.d_x = vec![0.0];
    cfg.release.over_compensation = true;
    cfg.release.over_compensation_scale = 1.2;
    match release_grid(&cfg, 1) {
        Ok(cells) => {
            let c = &cells[0];
            let peaks = &c.metrics.peak_amplitudes;
            let shown: Vec<String> = peaks.iter().take(6).map(|p| format!("{p:.4}")).collect();
            verdict(
                c.over_compensated && has_increasing_run(peaks, 3),
                format!("status {}, first peaks [{}] m", c.result.status.label(), shown.join(", ")),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn phase_drift() -> Verdict {
    let mut cfg = Config::default();
    cfg.release.k_x = vec![300.0];
    cfg.release.d_x = vec![2.0];
    cfg.friction_est.qd_s = Some(PerJoint::Uniform(0.2));
    cfg.friction_est.a_shape = Some(PerJoint::Uniform(1.0));
    match release_grid(&cfg, 1) {
        Ok(cells) => {
            let lags = &cells[0].metrics.zero_crossing_phase_lag;
            let (first, last) = (lags.first().copied().unwrap_or(f64::NAN), lags.last().copied().unwrap_or(f64::NAN));
            verdict(
                cells[0].phase_drift(2.0),
                format!("{} crossings, lag {first:.4} s -> {last:.4} s", lags.len()),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    }
}

fn rows_pass(report: &validate::Report, names: &[&str]) -> Verdict {
    let mut ok = true;
    let mut parts = Vec::new();
    for name in names {
        match report.checks.iter().find(|c| c.name == *name) {
            Some(c) => {
                ok &= c.passed;
                parts.push(format!("{}: {}", c.name, c.detail));
            }
            None => {
                ok = false;
                parts.push(format!("{name}: missing"));
            }
        }
    }
    verdict(ok, parts.join("; "))
}

fn controller_identities(report: &validate::Report) -> Verdict {
    let rows = rows_pass(
        report,
        &[
            "gravity compensation only at target",
            "PD equals impedance without gravity at rest",
            "PD holding force grows with k_x",
        ],
    );
    let mut cfg = Config::default();
    cfg.pd_sweep.k_x = vec![300.0, 400.0, 500.0, 600.0];
    let sweep = match pd_sweep(&cfg, jobs()) {
        Ok(points) => {
            let violations = pd_monotonicity(&points);
            let converged = points.iter().all(|p| p.converged);
            verdict(
                violations.is_empty() && converged,
                format!("pd-sweep {} points, non-monotone at {violations:?}", points.len()),
            )
        }
        Err(e) => verdict(false, e.to_string()),
    };
    verdict(rows.passed && sweep.passed, format!("{}; {}", rows.detail, sweep.detail))
}

fn performance(report: &validate::Report) -> Verdict {
    let cfg = Config::default();
    let r = &cfg.release;
    let per_trial = r.hold_ramp + r.hold_dwell + r.duration;
    let simulated = (r.k_x.len() * r.d_x.len() * r.n_trials) as f64 * per_trial;
    let start = Instant::now();
    if let Err(e) = release_grid(&cfg, 1) {
        return verdict(false, e.to_string());
    }
    let wall = start.elapsed().as_secs_f64();
    let speed = simulated / wall;
    verdict(
        speed >= 100.0,
        format!(
            "release loop {speed:.1}x real time on one thread ({simulated:.0} s simulated in {wall:.2} s); \
             RNEA {:.3} us (host budget {} us, embedded {} us, not gated)",
            report.rnea_us,
            validate::HOST_RNEA_BUDGET_US,
            validate::EMBEDDED_RNEA_US
        ),
    )
}

fn csv_hashes(dir: &Path) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).expect("output directory") {
        let path = entry.expect("directory entry").path();
        if path.extension().is_some_and(|e| e == "csv") {
            let digest = Sha256::digest(fs::read(&path).expect("csv readable"));
            let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
            out.insert(path.file_name().unwrap().to_string_lossy().into_owned(), hex);
        }
    }
    out
}

fn determinism() -> Verdict {
    let tmp = tempfile::tempdir().expect("temp dir");
    let mut hashes = Vec::new();
    for (run, jobs) in [("a", "1"), ("b", "4")] {
        for command in ["release", "pd-sweep"] {
            let out = tmp.path().join(run).join(command);
            let code = sparc_cli::run(["sparc", command, "--seed", "11", "--jobs", jobs, "--out", out.to_str().unwrap()]);
            if code != 0 {
                return verdict(false, format!("{command} exited {code}"));
            }
        }
        let mut all = csv_hashes(&tmp.path().join(run).join("release"));
        all.extend(csv_hashes(&tmp.path().join(run).join("pd-sweep")));
        hashes.push(all);
    }
    let same = hashes[0] == hashes[1] && !hashes[0].is_empty();
    verdict(same, format!("{} CSV files, SHA-256 identical across runs with 1 and 4 jobs", hashes[0].len()))
}

fn main() {
    let report = validate::run(&Config::default().model().expect("default model"), 0);
    let criteria: Vec<Criterion> = vec![
        ("static stiffness reproduction", Box::new(static_stiffness)),
        ("damped release fidelity", Box::new(release_fidelity)),
        ("over-compensation divergence", Box::new(divergence)),
        ("low-damping phase drift", Box::new(phase_drift)),
        (
            "dynamics oracle suite",
            Box::new(|| {
                rows_pass(
                    &report,
                    &[
                        "Jacobian vs finite differences",
                        "Jdot qd vs finite differences",
                        "mass matrix symmetric and positive definite",
                        "RNEA equals M qdd + bias - J^T F",
                        "frictionless energy conservation (rk4, 1e-4)",
                    ],
                )
            }),
        ),
        ("controller identities", Box::new(|| controller_identities(&report))),
        ("performance", Box::new(|| performance(&report))),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let v = f();
        failed += usize::from(!v.passed);
        println!("{} {}. {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
