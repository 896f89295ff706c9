//! Files written by the commands. Every CSV has a header row whose names
//! carry their units; per-trial CSVs get a JSON sidecar with the metadata
//! needed to rerun them.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use sparc_core::analysis::StiffnessFit;
use sparc_core::model::{ChainModel, FrictionParams, JointFriction};
use sparc_core::sim::TrialRecord;

use crate::error::CliError;

/// Collects the files written by one command, relative to its output
/// directory.
pub struct OutDir {
    root: PathBuf,
    files: Vec<String>,
}

impl OutDir {
    pub fn create(root: &Path) -> Result<Self, CliError> {
        fs::create_dir_all(root).map_err(|e| CliError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
            files: Vec::new(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn files(&self) -> &[String] {
        &self.files
    }

    pub fn write_csv(&mut self, name: &str, header: &[String], rows: &[Vec<String>]) -> Result<(), CliError> {
        let path = self.root.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::csv(&path, e))?;
        w.write_record(header).map_err(|e| CliError::csv(&path, e))?;
        for row in rows {
            w.write_record(row).map_err(|e| CliError::csv(&path, e))?;
        }
        w.flush().map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_text(&mut self, name: &str, text: &str) -> Result<(), CliError> {
        let path = self.root.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
        self.files.push(name.to_string());
        Ok(())
    }

    pub fn write_json(&mut self, name: &str, value: &Value) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(value).expect("json values always serialize");
        self.write_text(name, &(text + "\n"))
    }

    /// Writes the manifest through a temporary file so that its presence
    /// marks a completed run.
    pub fn finish(self, manifest: &RunManifest) -> Result<PathBuf, CliError> {
        let path = self.root.join("manifest.json");
        let tmp = self.root.join(".manifest.json.tmp");
        let text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
        let mut f = fs::File::create(&tmp).map_err(|e| CliError::io(&tmp, e))?;
        f.write_all(text.as_bytes())
            .and_then(|_| f.write_all(b"\n"))
            .and_then(|_| f.sync_all())
            .map_err(|e| CliError::io(&tmp, e))?;
        fs::rename(&tmp, &path).map_err(|e| CliError::io(&path, e))?;
        Ok(path)
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub config_path: Option<String>,
    pub seed: u64,
    pub out_dir: String,
    pub files: Vec<String>,
    pub summary: String,
    /// Wall-clock seconds per stage.
    pub timings_s: Vec<(String, f64)>,
}

/// Shortest representation that parses back to the same value.
pub fn num(v: f64) -> String {
    format!("{v}")
}

/// Compact number for file names: `300`, `0.02`, `-0.01`.
pub fn tag(v: f64) -> String {
    format!("{v}")
}

pub fn trial_header(extra: &[&str]) -> Vec<String> {
    let mut h: Vec<String> = vec!["t_s".into()];
    h.extend((0..4).map(|i| format!("q{i}_rad")));
    h.extend((0..4).map(|i| format!("qd{i}_rad_s")));
    h.extend(["x_m", "z_m", "theta_rad", "xdot_m_s", "zdot_m_s", "thetadot_rad_s"].map(String::from));
    h.extend((0..4).map(|i| format!("tau_cmd{i}_Nm")));
    h.extend(["fx_applied_N", "fz_applied_N", "tau_applied_Nm", "fx_measured_N"].map(String::from));
    h.extend(extra.iter().map(|s| s.to_string()));
    h
}

/// One row per control tick; `extra` supplies the trailing columns.
pub fn trial_rows(record: &TrialRecord, extra: impl Fn(usize) -> Vec<String>) -> Vec<Vec<String>> {
    record
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let mut row = vec![num(s.t)];
            row.extend(s.q.iter().map(|v| num(*v)));
            row.extend(s.qd.iter().map(|v| num(*v)));
            row.extend(s.pose.iter().map(|v| num(*v)));
            row.extend(s.twist.iter().map(|v| num(*v)));
            row.extend(s.tau_cmd.iter().map(|v| num(*v)));
            row.extend([s.applied.fx, s.applied.fz, s.applied.tau, s.fx_measured].map(num));
            row.extend(extra(i));
            row
        })
        .collect()
}

fn friction_json(p: &FrictionParams) -> Value {
    json!({
        "tau_c_Nm": p.tau_c,
        "tau_s_Nm": p.tau_s,
        "b_visc_Nms_rad": p.b_visc,
        "qd_s_rad_s": p.qd_s,
        "a_shape": p.a_shape,
        "beta_s_rad": p.beta,
    })
}

fn joint_friction_json(f: &JointFriction) -> Value {
    Value::Array(f.iter().map(friction_json).collect())
}

pub fn model_json(model: &ChainModel) -> Value {
    json!({
        "links": model.links.iter().map(|l| json!({
            "mass_kg": l.mass,
            "length_m": l.length,
            "com_offset_m": l.com_offset,
            "inertia_planar_kgm2": l.inertia_planar,
        })).collect::<Vec<_>>(),
        "gravity_m_s2": [model.gravity[0], model.gravity[1]],
        "base_fixed": model.base_fixed,
    })
}

/// Sidecar metadata for a trial CSV.
pub fn trial_sidecar(model: &ChainModel, record: &TrialRecord, csv_name: &str) -> Value {
    let m = &record.meta;
    let c = &m.controller;
    let p = &m.plant;
    let params: serde_json::Map<String, Value> =
        m.params.iter().map(|(k, v)| (k.to_string(), json!(v))).collect();
    let detail = match &record.status {
        sparc_core::sim::TrialStatus::Valid => Value::Null,
        sparc_core::sim::TrialStatus::Invalid(s)
        | sparc_core::sim::TrialStatus::Degenerate(s)
        | sparc_core::sim::TrialStatus::Divergent(s) => json!(s),
    };
    json!({
        "data": csv_name,
        "protocol": m.protocol,
        "seed": p.noise_seed,
        "status": record.status.label(),
        "status_detail": detail,
        "samples": record.samples.len(),
        "saturation_fraction": record.saturation_fraction,
        "params": params,
        "controller": {
            "law": format!("{:?}", c.law).to_lowercase(),
            "k": [c.gains.k[0], c.gains.k[1], c.gains.k[2]],
            "d": [c.gains.d[0], c.gains.d[1], c.gains.d[2]],
            "lambda_dls": c.gains.lambda_dls,
            "torque_limit_Nm": c.torque_limit,
            "friction_est": c.friction_est.as_ref().map(joint_friction_json),
        },
        "plant": {
            "integrator": p.integrator.as_str(),
            "integrator_dt_s": p.integrator_dt,
            "control_dt_s": p.control_dt,
            "force_sensor_noise_sd_N": p.force_sensor_noise_sd,
            "friction_true": joint_friction_json(&p.friction_true),
        },
        "target": {
            "pos": [m.target.pos[0], m.target.pos[1], m.target.pos[2]],
        },
        "model": model_json(model),
    })
}

/// Text table in the layout of a static stiffness characterisation.
pub fn static_table(rows: &[(f64, Option<StiffnessFit>, String)]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:>8}  {:>6}  {:>9}  {:>7}  {:>21}  {:>11}  {:>19}  {}\n",
        "k_d N/m", "n", "k_hat N/m", "R^2", "95% CI N/m", "rel. err %", "chunk mean +- SD", "status"
    ));
    for (k, fit, status) in rows {
        match fit {
            Some(f) => out.push_str(&format!(
                "{:>8}  {:>6}  {:>9.3}  {:>7.4}  {:>21}  {:>11.3}  {:>19}  {}\n",
                k,
                f.n,
                f.slope,
                f.r2,
                format!("[{:.3}, {:.3}]", f.ci95.0, f.ci95.1),
                f.rel_err_pct,
                format!("{:.3} +- {:.3}", f.chunk_mean, f.chunk_sd),
                status
            )),
            None => out.push_str(&format!("{k:>8}  {:>6}  {:>9}  {:>7}  {:>21}  {:>11}  {:>19}  {status}\n", "-", "-", "-", "-", "-", "-")),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn numbers_round_trip() {
        for v in [0.1, 1.0 / 3.0, -2.5e-17, 300.0, f64::MAX] {
            assert_eq!(num(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(tag(300.0), "300");
        assert_eq!(tag(0.02), "0.02");
    }

    #[test]
    fn header_names_carry_units() {
        let h = trial_header(&["used_in_fit"]);
        assert_eq!(h.len(), 1 + 4 + 4 + 6 + 4 + 4 + 1);
        assert!(h.iter().filter(|c| *c != "used_in_fit").all(|c| c.contains('_')));
        assert_eq!(h[0], "t_s");
    }
}
