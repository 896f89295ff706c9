//! TOML configuration. Every field is optional; anything left out takes the
//! default listed on the corresponding section type. See the README for the
//! full schema.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{
    default_sparc_model, validate_friction, ChainModel, FrictionParams, ImpedanceGains,
    JointFriction, Vec2, Vec3, N_JOINTS,
};
use crate::sim::{Integrator, PdSweepProtocol, PlantConfig, PushPullProtocol, ReleaseProtocol};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Base seed for sensor noise. Trial `i` of a cell uses `seed + i`.
    pub seed: u64,
    pub model: ModelSection,
    pub gains: GainsSection,
    pub friction_true: FrictionSection,
    pub friction_est: EstimateSection,
    pub plant: PlantSection,
    pub static_sweep: StaticSweepSection,
    pub release: ReleaseSection,
    pub pd_sweep: PdSweepSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Up to four per-link overrides, hind body first.
    pub links: Vec<LinkSection>,
    /// m/s²
    pub gravity: [f64; 2],
    pub base_fixed: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = default_sparc_model();
        Self {
            links: Vec::new(),
            gravity: [m.gravity[0], m.gravity[1]],
            base_fixed: m.base_fixed,
        }
    }
}

/// Overrides for one link; missing fields keep the default link's values.
/// `com_offset` defaults to the midpoint of the (possibly overridden)
/// length.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mass: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub com_offset: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inertia_planar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GainsSection {
    pub k_x: f64,
    pub k_z: f64,
    pub k_theta: f64,
    pub d_x: f64,
    pub d_z: f64,
    pub d_theta: f64,
    pub lambda_dls: f64,
}

impl Default for GainsSection {
    fn default() -> Self {
        let g = ImpedanceGains::default();
        Self {
            k_x: g.k[0],
            k_z: g.k[1],
            k_theta: g.k[2],
            d_x: g.d[0],
            d_z: g.d[1],
            d_theta: g.d[2],
            lambda_dls: g.lambda_dls,
        }
    }
}

/// A value shared by all joints or given per joint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerJoint {
    Uniform(f64),
    Each([f64; N_JOINTS]),
}

impl PerJoint {
    pub fn get(&self, joint: usize) -> f64 {
        match self {
            PerJoint::Uniform(v) => *v,
            PerJoint::Each(v) => v[joint],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FrictionSection {
    pub tau_c: PerJoint,
    pub tau_s: PerJoint,
    pub b_visc: PerJoint,
    pub qd_s: PerJoint,
    pub a_shape: PerJoint,
    pub beta: PerJoint,
}

impl Default for FrictionSection {
    fn default() -> Self {
        Self::uniform(&FrictionParams::PLANT_DEFAULT)
    }
}

impl FrictionSection {
    pub fn uniform(p: &FrictionParams) -> Self {
        Self {
            tau_c: PerJoint::Uniform(p.tau_c),
            tau_s: PerJoint::Uniform(p.tau_s),
            b_visc: PerJoint::Uniform(p.b_visc),
            qd_s: PerJoint::Uniform(p.qd_s),
            a_shape: PerJoint::Uniform(p.a_shape),
            beta: PerJoint::Uniform(p.beta),
        }
    }

    pub fn params(&self) -> JointFriction {
        std::array::from_fn(|i| FrictionParams {
            tau_c: self.tau_c.get(i),
            tau_s: self.tau_s.get(i),
            b_visc: self.b_visc.get(i),
            qd_s: self.qd_s.get(i),
            a_shape: self.a_shape.get(i),
            beta: self.beta.get(i),
        })
    }
}

/// Controller-side friction model. Starts from the plant's true friction;
/// the level terms (`tau_c`, `tau_s`, `b_visc`) are multiplied by `scale`,
/// then any field given here replaces the result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateSection {
    /// Compensate friction at all.
    pub enabled: bool,
    pub scale: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<PerJoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tau_s: Option<PerJoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub b_visc: Option<PerJoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub qd_s: Option<PerJoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub a_shape: Option<PerJoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<PerJoint>,
}

impl Default for EstimateSection {
    fn default() -> Self {
        Self {
            enabled: true,
            scale: 1.0,
            tau_c: None,
            tau_s: None,
            b_visc: None,
            qd_s: None,
            a_shape: None,
            beta: None,
        }
    }
}

impl EstimateSection {
    pub fn params(&self, truth: &JointFriction) -> Option<JointFriction> {
        if !self.enabled {
            return None;
        }
        let pick = |o: &Option<PerJoint>, i: usize, fallback: f64| o.map_or(fallback, |v| v.get(i));
        Some(std::array::from_fn(|i| {
            let t = scale_levels(&truth[i], self.scale);
            FrictionParams {
                tau_c: pick(&self.tau_c, i, t.tau_c),
                tau_s: pick(&self.tau_s, i, t.tau_s),
                b_visc: pick(&self.b_visc, i, t.b_visc),
                qd_s: pick(&self.qd_s, i, t.qd_s),
                a_shape: pick(&self.a_shape, i, t.a_shape),
                beta: pick(&self.beta, i, t.beta),
            }
        }))
    }
}

/// Multiplies the Coulomb, static and viscous levels by `scale`.
pub fn scale_levels(p: &FrictionParams, scale: f64) -> FrictionParams {
    FrictionParams {
        tau_c: p.tau_c * scale,
        tau_s: p.tau_s * scale,
        b_visc: p.b_visc * scale,
        ..*p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlantSection {
    pub integrator: String,
    pub integrator_dt: f64,
    pub control_dt: f64,
    pub force_sensor_noise_sd: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        let p = PlantConfig::default();
        Self {
            integrator: p.integrator.as_str().to_string(),
            integrator_dt: p.integrator_dt,
            control_dt: p.control_dt,
            force_sensor_noise_sd: p.force_sensor_noise_sd,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StaticSweepSection {
    pub k_x: Vec<f64>,
    /// N/s
    pub ramp_rate: f64,
    /// N
    pub max_force: f64,
    /// s
    pub settle_time: f64,
    /// m/s
    pub max_speed: f64,
    /// Samples per chunk for the chunk slope statistics.
    pub chunk_size: usize,
}

impl Default for StaticSweepSection {
    fn default() -> Self {
        let p = PushPullProtocol::default();
        Self {
            k_x: vec![300.0, 400.0, 500.0, 600.0, 700.0],
            ramp_rate: p.ramp_rate,
            max_force: p.max_force,
            settle_time: p.settle_time,
            max_speed: p.max_speed,
            chunk_size: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReleaseSection {
    pub k_x: Vec<f64>,
    pub d_x: Vec<f64>,
    /// m
    pub x0_offset: f64,
    /// s
    pub duration: f64,
    pub n_trials: usize,
    pub hold_ratio: f64,
    /// s
    pub hold_ramp: f64,
    /// s
    pub hold_dwell: f64,
    /// Run the `d_x = 0` cells with the friction estimate's levels scaled
    /// by `over_compensation_scale`.
    pub over_compensation: bool,
    pub over_compensation_scale: f64,
}

impl Default for ReleaseSection {
    fn default() -> Self {
        let p = ReleaseProtocol::default();
        Self {
            k_x: vec![300.0, 500.0],
            d_x: vec![0.0, 2.0, 20.0, 40.0],
            x0_offset: p.x0_offset,
            duration: p.duration,
            n_trials: p.n_trials,
            hold_ratio: p.hold_ratio,
            hold_ramp: p.hold_ramp,
            hold_dwell: p.hold_dwell,
            over_compensation: false,
            over_compensation_scale: 1.2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PdSweepSection {
    pub k_x: Vec<f64>,
    /// m
    pub displacements: Vec<f64>,
    pub repeats: usize,
    /// s
    pub hold_time: f64,
    /// m
    pub position_tol: f64,
}

impl Default for PdSweepSection {
    fn default() -> Self {
        let p = PdSweepProtocol::default();
        Self {
            k_x: p.k_x_list,
            displacements: p.displacements,
            repeats: p.repeats,
            hold_time: p.hold_time,
            position_tol: p.position_tol,
        }
    }
}

/// Reads, parses and validates a configuration file.
pub fn load_config(path: impl AsRef<Path>) -> Result<Config> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| Error::ConfigIo {
        path: path.display().to_string(),
        source,
    })?;
    Config::from_toml(&text)
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Config> {
        let config: Config = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.model()?;
        self.gains().validate()?;
        self.plant()?;
        if let Some(est) = self.friction_estimate() {
            validate_friction(&est)?;
        }
        positive("EstimateSection", "scale", self.friction_est.scale, true)?;

        let s = &self.static_sweep;
        nonempty("StaticSweepSection", "k_x", &s.k_x)?;
        for &k in &s.k_x {
            positive("StaticSweepSection", "k_x", k, false)?;
        }
        positive("StaticSweepSection", "ramp_rate", s.ramp_rate, false)?;
        positive("StaticSweepSection", "max_force", s.max_force, true)?;
        positive("StaticSweepSection", "settle_time", s.settle_time, true)?;
        positive("StaticSweepSection", "max_speed", s.max_speed, false)?;
        if s.chunk_size < 2 {
            return Err(Error::invariant("StaticSweepSection", "chunk_size", "must be >= 2"));
        }

        let r = &self.release;
        nonempty("ReleaseSection", "k_x", &r.k_x)?;
        nonempty("ReleaseSection", "d_x", &r.d_x)?;
        for &k in &r.k_x {
            positive("ReleaseSection", "k_x", k, false)?;
        }
        for &b in &r.d_x {
            positive("ReleaseSection", "d_x", b, true)?;
        }
        if !r.x0_offset.is_finite() || r.x0_offset == 0.0 {
            return Err(Error::invariant("ReleaseSection", "x0_offset", "must be finite and nonzero"));
        }
        positive("ReleaseSection", "duration", r.duration, false)?;
        if r.n_trials == 0 {
            return Err(Error::invariant("ReleaseSection", "n_trials", "must be >= 1"));
        }
        positive("ReleaseSection", "hold_ratio", r.hold_ratio, false)?;
        positive("ReleaseSection", "hold_ramp", r.hold_ramp, false)?;
        positive("ReleaseSection", "hold_dwell", r.hold_dwell, true)?;
        positive("ReleaseSection", "over_compensation_scale", r.over_compensation_scale, true)?;

        let p = &self.pd_sweep;
        nonempty("PdSweepSection", "k_x", &p.k_x)?;
        nonempty("PdSweepSection", "displacements", &p.displacements)?;
        for &k in &p.k_x {
            positive("PdSweepSection", "k_x", k, false)?;
        }
        if p.displacements.iter().any(|d| !d.is_finite()) {
            return Err(Error::invariant("PdSweepSection", "displacements", "must be finite"));
        }
        if p.repeats == 0 {
            return Err(Error::invariant("PdSweepSection", "repeats", "must be >= 1"));
        }
        positive("PdSweepSection", "hold_time", p.hold_time, true)?;
        positive("PdSweepSection", "position_tol", p.position_tol, false)?;
        Ok(())
    }

    pub fn model(&self) -> Result<ChainModel> {
        let mut model = default_sparc_model();
        if self.model.links.len() > N_JOINTS {
            return Err(Error::invariant("ChainModel", "links", "at most 4 entries"));
        }
        for (link, o) in model.links.iter_mut().zip(&self.model.links) {
            let length = o.length.unwrap_or(link.length);
            *link = crate::model::LinkParams {
                mass: o.mass.unwrap_or(link.mass),
                length,
                com_offset: o.com_offset.unwrap_or(0.5 * length),
                inertia_planar: o.inertia_planar.unwrap_or(link.inertia_planar),
            };
        }
        model.gravity = Vec2::new(self.model.gravity[0], self.model.gravity[1]);
        model.base_fixed = self.model.base_fixed;
        model.validate()?;
        Ok(model)
    }

    pub fn gains(&self) -> ImpedanceGains {
        let g = &self.gains;
        ImpedanceGains {
            k: Vec3::new(g.k_x, g.k_z, g.k_theta),
            d: Vec3::new(g.d_x, g.d_z, g.d_theta),
            lambda_dls: g.lambda_dls,
        }
    }

    pub fn friction_true(&self) -> JointFriction {
        self.friction_true.params()
    }

    /// Controller friction model, `None` when compensation is disabled.
    pub fn friction_estimate(&self) -> Option<JointFriction> {
        self.friction_est.params(&self.friction_true())
    }

    pub fn plant(&self) -> Result<PlantConfig> {
        let p = &self.plant;
        let integrator = Integrator::parse(&p.integrator).ok_or_else(|| {
            Error::invariant(
                "PlantConfig",
                "integrator",
                format!("unknown integrator '{}' (rk4 or semi-implicit-euler)", p.integrator),
            )
        })?;
        let plant = PlantConfig {
            friction_true: self.friction_true(),
            integrator_dt: p.integrator_dt,
            control_dt: p.control_dt,
            integrator,
            noise_seed: self.seed,
            force_sensor_noise_sd: p.force_sensor_noise_sd,
        };
        plant.validate()?;
        Ok(plant)
    }

    pub fn push_pull(&self, k_x: f64) -> PushPullProtocol {
        let s = &self.static_sweep;
        PushPullProtocol {
            k_x,
            ramp_rate: s.ramp_rate,
            max_force: s.max_force,
            settle_time: s.settle_time,
            max_speed: s.max_speed,
        }
    }

    pub fn release_protocol(&self, k_x: f64, d_x: f64) -> ReleaseProtocol {
        let r = &self.release;
        ReleaseProtocol {
            k_x,
            d_x,
            x0_offset: r.x0_offset,
            duration: r.duration,
            n_trials: r.n_trials,
            hold_ratio: r.hold_ratio,
            hold_ramp: r.hold_ramp,
            hold_dwell: r.hold_dwell,
        }
    }

    /// Friction estimate for a release cell, honouring the over-compensation
    /// scenario for undamped cells.
    pub fn release_estimate(&self, d_x: f64) -> Option<JointFriction> {
        let est = self.friction_estimate()?;
        if self.release.over_compensation && d_x == 0.0 {
            Some(est.map(|p| scale_levels(&p, self.release.over_compensation_scale)))
        } else {
            Some(est)
        }
    }

    pub fn pd_protocol(&self) -> PdSweepProtocol {
        let p = &self.pd_sweep;
        PdSweepProtocol {
            k_x_list: p.k_x.clone(),
            displacements: p.displacements.clone(),
            repeats: p.repeats,
            hold_time: p.hold_time,
            position_tol: p.position_tol,
        }
    }
}

fn nonempty(item: &'static str, field: &str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        Err(Error::invariant(item, field, "must not be empty"))
    } else {
        Ok(())
    }
}

fn positive(item: &'static str, field: &str, v: f64, allow_zero: bool) -> Result<()> {
    let ok = v.is_finite() && if allow_zero { v >= 0.0 } else { v > 0.0 };
    if ok {
        Ok(())
    } else {
        let reason = if allow_zero { "must be >= 0" } else { "must be > 0" };
        Err(Error::invariant(item, field, reason))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_file_gives_the_default_model() {
        let c = Config::from_toml("").unwrap();
        assert_eq!(c, Config::default());
        assert_eq!(c.model().unwrap(), default_sparc_model());
        assert_eq!(c.gains(), ImpedanceGains::default());
        assert_eq!(c.plant().unwrap(), PlantConfig::default());
        assert_eq!(c.friction_estimate(), Some(c.friction_true()));
    }

    #[test]
    fn single_override_leaves_everything_else_alone() {
        let c = Config::from_toml("[gains]\nk_x = 500\n").unwrap();
        assert_eq!(c.gains().k[0], 500.0);
        let expected = Config {
            gains: GainsSection {
                k_x: 500.0,
                ..Default::default()
            },
            ..Default::default()
        };
        assert_eq!(c, expected);
    }

    #[test]
    fn tau_s_below_tau_c_names_friction_params() {
        let err = Config::from_toml("[friction_true]\ntau_c = 0.2\ntau_s = 0.1\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("FrictionParams") && msg.contains("tau_s"), "{msg}");
    }

    #[test]
    fn per_joint_arrays_and_scalars_mix() {
        let c = Config::from_toml(
            "[friction_true]\ntau_s = [0.2, 0.15, 0.12, 0.1]\n[friction_est]\nscale = 1.2\nqd_s = 0.2\n",
        )
        .unwrap();
        let t = c.friction_true();
        assert_eq!(t[1].tau_s, 0.15);
        assert_eq!(t[2].tau_c, FrictionParams::PLANT_DEFAULT.tau_c);
        let e = c.friction_estimate().unwrap();
        assert!((e[0].tau_s - 0.24).abs() < 1e-15);
        assert_eq!(e[3].qd_s, 0.2);
        assert_eq!(e[3].a_shape, t[3].a_shape);
    }

    #[test]
    fn link_overrides_keep_the_midpoint_default() {
        let c = Config::from_toml("[[model.links]]\nlength = 0.1\n").unwrap();
        let m = c.model().unwrap();
        assert_eq!(m.links[0].length, 0.1);
        assert_eq!(m.links[0].com_offset, 0.05);
        assert_eq!(m.links[1], default_sparc_model().links[1]);
        let err = Config::from_toml("[[model.links]]\nmass = -1.0\n").unwrap_err();
        assert!(err.to_string().contains("links[0].mass"), "{err}");
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(matches!(Config::from_toml("[gains]\nkx = 1\n"), Err(Error::ConfigParse(_))));
        assert!(matches!(Config::from_toml("seed = \"x\"\n"), Err(Error::ConfigParse(_))));
        let err = Config::from_toml("[plant]\nintegrator = \"euler\"\n").unwrap_err();
        assert!(err.to_string().contains("integrator"));
        let err = Config::from_toml("[pd_sweep]\ndisplacements = []\n").unwrap_err();
        assert!(err.to_string().contains("displacements"));
        let err = Config::from_toml("[plant]\nintegrator_dt = 0.01\n").unwrap_err();
        assert!(err.to_string().contains("integrator_dt"));
    }

    #[test]
    fn over_compensation_only_touches_undamped_cells() {
        let c = Config::from_toml("[release]\nover_compensation = true\n").unwrap();
        let truth = c.friction_true();
        assert_eq!(c.release_estimate(20.0), Some(truth));
        let over = c.release_estimate(0.0).unwrap();
        assert!((over[2].tau_s - 1.2 * truth[2].tau_s).abs() < 1e-15);
        assert_eq!(over[2].qd_s, truth[2].qd_s);
    }

    #[test]
    fn load_reports_missing_files() {
        let err = load_config("/nonexistent/sparc.toml").unwrap_err();
        assert!(matches!(err, Error::ConfigIo { .. }));
        let mut f = tempfile::NamedTempFile::new().unwrap();
        writeln!(f, "seed = 9").unwrap();
        assert_eq!(load_config(f.path()).unwrap().seed, 9);
    }

    fn arb_config() -> impl proptest::strategy::Strategy<Value = Config> {
        use proptest::prelude::*;
        (
            any::<u64>(),
            1.0..2000.0f64,
            0.0..50.0f64,
            prop::collection::vec(1.0..1000.0f64, 1..6),
            prop::option::of(0.01..0.5f64),
            0.0..0.2f64,
            prop::option::of([0.05..0.2f64, 0.05..0.2f64, 0.05..0.2f64, 0.05..0.2f64]),
            any::<bool>(),
        )
            .prop_map(|(seed, k_x, d_x, ks, qd_s, sd, tau_s, over)| {
                let mut c = Config {
                    seed,
                    ..Default::default()
                };
                c.gains.k_x = k_x;
                c.gains.d_x = d_x;
                c.static_sweep.k_x = ks;
                c.friction_est.qd_s = qd_s.map(PerJoint::Uniform);
                c.plant.force_sensor_noise_sd = sd;
                if let Some(t) = tau_s {
                    c.friction_true.tau_s = PerJoint::Each(t);
                    c.friction_true.tau_c = PerJoint::Uniform(0.04);
                }
                c.release.over_compensation = over;
                c
            })
    }

    proptest::proptest! {
        #[test]
        fn serialized_config_parses_back_identically(c in arb_config()) {
            let text = c.to_toml().unwrap();
            let back = Config::from_toml(&text).unwrap();
            proptest::prop_assert_eq!(back, c);
        }
    }
}
