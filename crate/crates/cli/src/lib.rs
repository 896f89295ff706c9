//! `sparc` command-line front end: runs the bench experiments from a TOML
//! configuration and writes tidy CSV output.

pub mod error;
pub mod experiments;
pub mod output;
pub mod validate;

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Parser, Subcommand};
use sparc_core::config::{load_config, Config};
use sparc_core::sim::TrialStatus;

use error::{CliError, EXIT_OK, EXIT_USAGE};
use experiments::{pd_sweep, release_grid, static_sweep};
use output::{num, tag, trial_header, trial_rows, trial_sidecar, OutDir, RunManifest};

#[derive(Debug, Parser)]
#[command(name = "sparc", version, about = "Simulated bench experiments for a planar 4-R spine")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration; defaults apply to anything it leaves out.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, global = true, value_name = "DIR", default_value = "sparc-out")]
    pub out: PathBuf,
    /// Noise seed; overrides the configuration's `seed`.
    #[arg(long, global = true, value_name = "N")]
    pub seed: Option<u64>,
    /// Worker threads for independent trials.
    #[arg(long, global = true, value_name = "N")]
    pub jobs: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Push-pull stiffness identification over the k_x sweep.
    StaticSweep,
    /// Displace-and-release over the (k_x, d_x) grid.
    Release,
    /// PD holding force over the (k_x, displacement) grid.
    PdSweep,
    /// Run the invariant suite and report timings.
    Validate {
        /// Validate a model with a negative link mass instead.
        #[arg(long, hide = true)]
        inject_negative_mass: bool,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::StaticSweep => "static-sweep",
            Command::Release => "release",
            Command::PdSweep => "pd-sweep",
            Command::Validate { .. } => "validate",
        }
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli) {
        Ok(manifest) => {
            println!("manifest: {}", manifest.display());
            EXIT_OK
        }
        Err(e) => {
            eprintln!("sparc {}: {e}", cli.command.name());
            e.exit_code()
        }
    }
}

pub fn execute(cli: &Cli) -> Result<PathBuf, CliError> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let jobs = match cli.jobs {
        Some(0) => return Err(CliError::Usage("--jobs must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let mut out = OutDir::create(&cli.out)?;
    // The effective configuration, so the run can be repeated from it alone.
    out.write_text("config.toml", &cfg.to_toml()?)?;
    let mut timings = Vec::new();
    let start = Instant::now();
    let summary = match &cli.command {
        Command::StaticSweep => cmd_static_sweep(&cfg, jobs, &mut out)?,
        Command::Release => cmd_release(&cfg, jobs, &mut out)?,
        Command::PdSweep => cmd_pd_sweep(&cfg, jobs, &mut out)?,
        Command::Validate { inject_negative_mass } => cmd_validate(&cfg, *inject_negative_mass, &mut out)?,
    };
    timings.push((cli.command.name().to_string(), start.elapsed().as_secs_f64()));
    let manifest = RunManifest {
        command: cli.command.name().to_string(),
        config_path: cli.config.as_ref().map(|p| p.display().to_string()),
        seed: cfg.seed,
        out_dir: cli.out.display().to_string(),
        files: out.files().to_vec(),
        summary,
        timings_s: timings,
    };
    out.finish(&manifest)
}

fn write_trial(out: &mut OutDir, cfg: &Config, stem: &str, record: &sparc_core::sim::TrialRecord, extra_cols: &[&str], extra: impl Fn(usize) -> Vec<String>) -> Result<(), CliError> {
    let csv_name = format!("{stem}.csv");
    out.write_csv(&csv_name, &trial_header(extra_cols), &trial_rows(record, extra))?;
    let model = cfg.model()?;
    out.write_json(&format!("{stem}.json"), &trial_sidecar(&model, record, &csv_name))
}

/// Static push-pull sweep; returns the summary file name.
pub fn cmd_static_sweep(cfg: &Config, jobs: usize, out: &mut OutDir) -> Result<String, CliError> {
    let runs = static_sweep(cfg, jobs)?;
    let seed = cfg.seed;
    let mut rows = Vec::new();
    let mut table = Vec::new();
    let mut problems = Vec::new();
    for run in &runs {
        let stem = format!("static_k{}_seed{seed}", tag(run.k_x));
        write_trial(out, cfg, &stem, &run.record, &["used_in_fit"], |i| {
            vec![u8::from(run.used[i]).to_string()]
        })?;
        let status = match (&run.record.status, &run.fit) {
            (TrialStatus::Valid, Ok(_)) => "valid".to_string(),
            (TrialStatus::Valid, Err(e)) => {
                problems.push(format!("k_x = {}: {e}", run.k_x));
                "fit-failed".to_string()
            }
            (s, _) => {
                problems.push(format!("k_x = {}: {s:?}", run.k_x));
                s.label().to_string()
            }
        };
        let fit = run.fit.as_ref().ok().copied();
        let mut row = vec![num(run.k_x)];
        match &fit {
            Some(f) => row.extend([
                f.n.to_string(),
                num(f.slope),
                num(f.intercept),
                num(f.r2),
                num(f.ci95.0),
                num(f.ci95.1),
                num(f.rel_err_pct),
                f.n_chunks.to_string(),
                num(f.chunk_mean),
                num(f.chunk_sd),
            ]),
            None => row.extend(std::iter::repeat_n(String::new(), 10)),
        }
        row.push(status.clone());
        rows.push(row);
        table.push((run.k_x, fit, status));
    }
    let header: Vec<String> = [
        "k_d_N_m", "n", "k_hat_N_m", "intercept_N", "r2", "ci95_low_N_m", "ci95_high_N_m",
        "rel_err_pct", "n_chunks", "chunk_mean_N_m", "chunk_sd_N_m", "status",
    ]
    .map(String::from)
    .to_vec();
    let summary = format!("static_summary_seed{seed}.csv");
    out.write_csv(&summary, &header, &rows)?;
    let text = output::static_table(&table);
    out.write_text(&format!("static_summary_seed{seed}.txt"), &text)?;
    print!("{text}");
    if problems.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Invalid(format!("invalid static trials: {}", problems.join("; "))))
    }
}

pub fn cmd_release(cfg: &Config, jobs: usize, out: &mut OutDir) -> Result<String, CliError> {
    let cells = release_grid(cfg, jobs)?;
    let seed = cfg.seed;
    let mut rows = Vec::new();
    let mut text = format!(
        "{:>6} {:>5} {:>11} {:>8} {:>9} {:>10} {:>9} {:>11} {}\n",
        "k N/m", "b", "regime", "NRMSE %", "peak t s", "ref peak s", "peak err%", "overshoot%", "status"
    );
    let mut invalid = Vec::new();
    for cell in &cells {
        let suffix = if cell.over_compensated { "_overcomp" } else { "" };
        let stem = format!("release_k{}_b{}{suffix}_seed{seed}", tag(cell.k_x), tag(cell.d_x));
        for (i, trial) in cell.result.trials.iter().enumerate() {
            write_trial(out, cfg, &format!("{stem}_trial{i}"), trial, &[], |_| Vec::new())?;
        }
        let header: Vec<String> = ["t_s", "x_mean_m", "x_sd_m", "x_reference_m"].map(String::from).to_vec();
        let series: Vec<Vec<String>> = (0..cell.result.mean.len())
            .map(|i| {
                vec![
                    num(i as f64 * cell.reference.dt),
                    num(cell.result.mean[i]),
                    num(cell.result.sd[i]),
                    cell.reference.samples.get(i).map_or(String::new(), |v| num(*v)),
                ]
            })
            .collect();
        out.write_csv(&format!("{stem}.csv"), &header, &series)?;

        let m = &cell.metrics;
        let (peak, ref_peak, peak_err, overshoot) = match cell.first_peak {
            experiments::FirstPeak::Matched { measured, reference } => {
                (num(measured), num(reference), num(100.0 * cell.first_peak.rel_err().unwrap_or(f64::NAN)), String::new())
            }
            experiments::FirstPeak::NoReferencePeak { overshoot } => {
                (String::new(), String::new(), String::new(), num(100.0 * overshoot))
            }
            experiments::FirstPeak::Missing { reference } => (String::new(), num(reference), String::new(), String::new()),
        };
        let status = cell.result.status.label();
        if matches!(cell.result.status, TrialStatus::Invalid(_)) {
            invalid.push(format!("k = {}, b = {}", cell.k_x, cell.d_x));
        }
        let lag_first = m.zero_crossing_phase_lag.first().map_or(String::new(), |v| num(*v));
        let lag_last = m.zero_crossing_phase_lag.last().map_or(String::new(), |v| num(*v));
        rows.push(vec![
            num(cell.k_x),
            num(cell.d_x),
            u8::from(cell.over_compensated).to_string(),
            cell.reference.regime.as_str().to_string(),
            num(cell.m_eff),
            num(cell.result.x0),
            num(100.0 * m.nrmse),
            peak.clone(),
            ref_peak.clone(),
            peak_err.clone(),
            overshoot.clone(),
            m.peak_amplitudes.len().to_string(),
            lag_first,
            lag_last,
            m.settling_time.map_or(String::new(), num),
            status.to_string(),
        ]);
        text.push_str(&format!(
            "{:>6} {:>5} {:>11} {:>8.2} {:>9} {:>10} {:>9} {:>11} {}{}\n",
            cell.k_x,
            cell.d_x,
            cell.reference.regime.as_str(),
            100.0 * m.nrmse,
            short(&peak),
            short(&ref_peak),
            short(&peak_err),
            short(&overshoot),
            status,
            if cell.over_compensated { " (over-compensated)" } else { "" }
        ));
    }
    let header: Vec<String> = [
        "k_N_m", "b_Ns_m", "over_compensated", "regime", "m_eff_kg", "x0_m", "nrmse_pct",
        "first_peak_s", "reference_first_peak_s", "first_peak_err_pct", "overshoot_pct",
        "n_peaks", "first_phase_lag_s", "last_phase_lag_s", "settling_time_s", "status",
    ]
    .map(String::from)
    .to_vec();
    let summary = format!("release_summary_seed{seed}.csv");
    out.write_csv(&summary, &header, &rows)?;
    out.write_text(&format!("release_summary_seed{seed}.txt"), &text)?;
    print!("{text}");
    if invalid.is_empty() {
        Ok(summary)
    } else {
        Err(CliError::Invalid(format!("invalid release cells: {}", invalid.join("; "))))
    }
}

fn short(s: &str) -> String {
    s.parse::<f64>().map_or("-".to_string(), |v| format!("{v:.3}"))
}

/// Share of grid points that must converge for a successful PD sweep.
pub const PD_MIN_CONVERGED: f64 = 0.9;

pub fn cmd_pd_sweep(cfg: &Config, jobs: usize, out: &mut OutDir) -> Result<String, CliError> {
    let points = pd_sweep(cfg, jobs)?;
    let seed = cfg.seed;
    let mut grid = Vec::new();
    let mut readings = Vec::new();
    for p in &points {
        if let Some(record) = &p.record {
            let stem = format!("pd_k{}_x{}_seed{}", tag(p.k_x), tag(p.displacement), record.meta.plant.noise_seed);
            write_trial(out, cfg, &stem, record, &[], |_| Vec::new())?;
        }
        grid.push(vec![
            num(p.k_x),
            num(p.displacement),
            num(p.force),
            num(p.mean),
            num(p.sd),
            p.readings.len().to_string(),
            u8::from(p.converged).to_string(),
            p.note.clone().unwrap_or_default(),
        ]);
        for (i, r) in p.readings.iter().enumerate() {
            readings.push(vec![num(p.k_x), num(p.displacement), i.to_string(), num(*r)]);
        }
    }
    let header: Vec<String> = ["k_x_N_m", "displacement_m", "force_N", "mean_force_N", "sd_force_N", "repeats", "converged", "note"]
        .map(String::from)
        .to_vec();
    let summary = format!("pd_sweep_seed{seed}.csv");
    out.write_csv(&summary, &header, &grid)?;
    out.write_csv(
        &format!("pd_readings_seed{seed}.csv"),
        &["k_x_N_m", "displacement_m", "repeat", "force_reading_N"].map(String::from),
        &readings,
    )?;

    let converged = points.iter().filter(|p| p.converged).count();
    let frac = converged as f64 / points.len() as f64;
    let violations = sparc_core::sim::pd_monotonicity(&points);
    let mut text = format!("{:>8} {:>10} {:>10} {:>9} {}\n", "k_x N/m", "disp m", "mean F N", "sd N", "converged");
    for p in &points {
        text.push_str(&format!("{:>8} {:>10} {:>10.4} {:>9.4} {}\n", p.k_x, p.displacement, p.mean, p.sd, p.converged));
    }
    text.push_str(&format!("converged: {converged}/{} ({:.0} %)\n", points.len(), 100.0 * frac));
    if violations.is_empty() {
        text.push_str("monotonic in k_x at every nonzero displacement\n");
    } else {
        text.push_str(&format!("NOT monotonic in k_x at displacements {violations:?} m\n"));
    }
    for p in points.iter().filter(|p| !p.converged) {
        text.push_str(&format!("flagged: k_x = {}, displacement = {}: {}\n", p.k_x, p.displacement, p.note.clone().unwrap_or_default()));
    }
    out.write_text(&format!("pd_summary_seed{seed}.txt"), &text)?;
    print!("{text}");
    if frac >= PD_MIN_CONVERGED {
        Ok(summary)
    } else {
        Err(CliError::Invalid(format!("only {converged} of {} grid points converged", points.len())))
    }
}

pub fn cmd_validate(cfg: &Config, negative_mass: bool, out: &mut OutDir) -> Result<String, CliError> {
    let mut model = cfg.model()?;
    if negative_mass {
        model = validate::negative_mass_model(&model);
    }
    let report = validate::run(&model, cfg.seed);
    let table = report.table();
    print!("{table}");
    let rows: Vec<Vec<String>> = report
        .checks
        .iter()
        .map(|c| vec![c.name.to_string(), if c.passed { "pass" } else { "fail" }.to_string(), u8::from(c.gated).to_string(), c.detail.clone()])
        .collect();
    let name = format!("validate_seed{}.csv", cfg.seed);
    out.write_csv(&name, &["property", "result", "gated", "detail"].map(String::from), &rows)?;
    if report.passed() {
        Ok(name)
    } else {
        Err(CliError::Invalid(format!("failed properties: {}", report.failures().join(", "))))
    }
}
