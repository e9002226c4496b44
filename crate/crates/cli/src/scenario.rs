//! Scenario documents: one JSON file per experiment, unit-bearing field names,
//! schema version 1.

use std::path::{Path, PathBuf};

use darktrap_core::analysis::{CriteriaConfig, ModeConfig};
use darktrap_core::consts::{hz_to_rad, sphere_mass};
use darktrap_core::control::{CalibratedModel, ControllerVariant, LqgConfig, LqgWeights};
use darktrap_core::dynamics::{DetectionConfig, DriftModel, LoopConfig, ParticleParams};
use darktrap_core::potential::{CalibrationTargets, PotentialParams, WaistChoice};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

pub const SCHEMA_VERSION: u32 = 1;

/// Scenarios shipped with the binary, by name.
pub const BUNDLED: [(&str, &str); 6] = [
    ("default", include_str!("../scenarios/default.json")),
    ("drift", include_str!("../scenarios/drift.json")),
    ("constraint", include_str!("../scenarios/constraint.json")),
    ("harmonic", include_str!("../scenarios/harmonic.json")),
    ("free_run", include_str!("../scenarios/free_run.json")),
    ("tone_drive", include_str!("../scenarios/tone_drive.json")),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub schema_version: u32,
    pub name: String,
    #[serde(default)]
    pub description: String,
    #[serde(default)]
    pub potential: PotentialSpec,
    #[serde(default)]
    pub particle: ParticleSpec,
    #[serde(default)]
    pub detection: DetectionSpec,
    #[serde(default)]
    pub drift: DriftModel,
    pub controller: ControllerSpec,
    #[serde(default)]
    pub run: RunSpec,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    /// Directory of the file the scenario was loaded from.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

/// Calibration anchors of the aligned potential and the powers used in the run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PotentialSpec {
    pub f_apex_khz: f64,
    pub f_well_khz: f64,
    pub f_y_khz: f64,
    pub f_z_khz: f64,
    pub p00_mw: f64,
    pub p01_mw: f64,
    pub waist: WaistSpec,
    /// Fractions of the calibration powers actually applied.
    pub p00_run_fraction: f64,
    pub p01_run_fraction: f64,
}

impl Default for PotentialSpec {
    fn default() -> Self {
        Self {
            f_apex_khz: 50.0,
            f_well_khz: 65.0,
            f_y_khz: 159.0,
            f_z_khz: 46.0,
            p00_mw: 80.0,
            p01_mw: 135.0,
            waist: WaistSpec::default(),
            p00_run_fraction: 1.0,
            p01_run_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaistSpec {
    /// Waist chosen so that `|k_apex|` at TEM01 offset `delta1_nm` is `ratio` of its aligned value.
    StiffnessDrop { delta1_nm: f64, ratio: f64 },
    Fixed { w0_um: f64 },
}

impl Default for WaistSpec {
    fn default() -> Self {
        Self::StiffnessDrop { delta1_nm: 30.0, ratio: 0.92 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ParticleSpec {
    pub diameter_nm: f64,
    pub density_kg_m3: f64,
    /// Γ/2π (Hz).
    pub damping_hz: f64,
    pub temperature_k: f64,
    /// `(c_fx, c_fy, c_fz)` (N/V).
    pub cf_n_per_v: [f64; 3],
}

impl Default for ParticleSpec {
    fn default() -> Self {
        let p = ParticleParams::default();
        Self {
            diameter_nm: 210.0,
            density_kg_m3: 2200.0,
            damping_hz: 660.0,
            temperature_k: p.temperature,
            cf_n_per_v: p.cf,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionSpec {
    /// `[[c_xx, c_xy, c_xz], [c_zx, c_zy, c_zz]]` (V/m).
    pub c_v_per_m: [[f64; 3]; 2],
    /// Gain roll-off scale; absent means the ±200 nm / 1% flatness value.
    pub x_nl_nm: Option<f64>,
    pub sigma_x_v_per_rthz: f64,
    pub sigma_z_v_per_rthz: f64,
    pub drift_rate_max_v_per_s: f64,
}

impl Default for DetectionSpec {
    fn default() -> Self {
        let d = DetectionConfig::default();
        Self {
            c_v_per_m: d.c,
            x_nl_nm: None,
            sigma_x_v_per_rthz: d.sigma_x,
            sigma_z_v_per_rthz: d.sigma_z,
            drift_rate_max_v_per_s: d.drift_rate_max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ControllerSpec {
    /// LQG controllers synthesized from the scenario physics, one run per variant.
    Lqg {
        variants: Vec<ControllerVariant>,
        r_lqr: f64,
        q_z: f64,
        /// Apex random-walk intensity of the estimator model.
        sigma_apex_walk: f64,
        /// Apex estimate bound in measurement space (V), converted with c_xx.
        apex_max_v: f64,
        delay_samples: usize,
        #[serde(default)]
        predictive: bool,
    },
    /// A previously exported controller, path relative to the scenario file.
    Artifact { path: String },
    Zero {},
    Bias { u_v: f64 },
    Tones { tones: Vec<Tone> },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tone {
    pub amplitude_v: f64,
    pub freq_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub duration_ms: f64,
    pub controller_rate_mhz: f64,
    pub substeps: usize,
    pub decimation: usize,
    pub escape_radius_um: f64,
    pub seed: u64,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            duration_ms: 10.0,
            controller_rate_mhz: 31.25,
            substeps: 4,
            decimation: 8,
            escape_radius_um: 2.0,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalysisSpec {
    pub t_avg_ms: f64,
    pub bins: usize,
    pub smoothing_bins: f64,
    pub prominence: f64,
    pub well_freq_khz: f64,
    pub band_rel: f64,
    pub baseline_factor: f64,
    /// Resolution of the per-window PSD used by the well-peak criterion.
    pub psd_resolution_hz: f64,
    /// Segment length of exported whole-trace PSDs.
    pub psd_segment: usize,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        let c = CriteriaConfig::default();
        Self {
            t_avg_ms: c.t_avg * 1e3,
            bins: c.bins,
            smoothing_bins: c.modes.smoothing_bins,
            prominence: c.modes.prominence,
            well_freq_khz: 65.0,
            band_rel: c.band_rel,
            baseline_factor: c.baseline_factor,
            psd_resolution_hz: c.psd_resolution_hz,
            psd_segment: 4096,
        }
    }
}

impl AnalysisSpec {
    pub fn criteria(&self) -> CriteriaConfig {
        CriteriaConfig {
            t_avg: self.t_avg_ms * 1e-3,
            bins: self.bins,
            modes: ModeConfig { smoothing_bins: self.smoothing_bins, prominence: self.prominence },
            omega_well: hz_to_rad(self.well_freq_khz * 1e3),
            band_rel: self.band_rel,
            baseline_factor: self.baseline_factor,
            psd_resolution_hz: self.psd_resolution_hz,
        }
    }
}

/// Physical objects built from a scenario.
#[derive(Debug, Clone)]
pub struct Resolved {
    /// Potential at the run powers, aligned.
    pub potential: PotentialParams,
    pub particle: ParticleParams,
    pub detection: DetectionConfig,
    pub drift: DriftModel,
    pub loop_cfg: LoopConfig,
    pub criteria: CriteriaConfig,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let s: Scenario = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner();
            CliError::Invalid(format!("scenario field `{path}`: {inner}"))
        })?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Invalid(format!("cannot read scenario {}: {e}", path.display())))?;
        let mut s = Self::from_json(&text).map_err(|e| match e {
            CliError::Invalid(m) => CliError::Invalid(format!("{}: {m}", path.display())),
            other => other,
        })?;
        s.base_dir = path.parent().map(Path::to_path_buf);
        Ok(s)
    }

    /// Resolves a path written in the scenario against the scenario's directory.
    pub fn resolve_path(&self, p: &str) -> PathBuf {
        match &self.base_dir {
            Some(dir) if Path::new(p).is_relative() => dir.join(p),
            _ => PathBuf::from(p),
        }
    }

    pub fn bundled(name: &str) -> Result<Self, CliError> {
        let (_, text) = BUNDLED
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| CliError::Invalid(format!("no bundled scenario `{name}`")))?;
        Self::from_json(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    /// SHA-256 of the canonical serialization; insensitive to formatting and
    /// to omitted fields that take their defaults.
    pub fn sha256(&self) -> [u8; 32] {
        let canonical = serde_json::to_vec(self).expect("scenario serializes");
        Sha256::digest(&canonical).into()
    }

    pub fn sha256_hex(&self) -> String {
        hex::encode(self.sha256())
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: &str| Err(CliError::Invalid(format!("scenario `{}`: {m}", self.name)));
        if self.schema_version != SCHEMA_VERSION {
            return bad(&format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        let p = &self.potential;
        if !(p.p00_run_fraction >= 0.0 && p.p01_run_fraction >= 0.0) {
            return bad("power fractions must be >= 0");
        }
        let r = &self.run;
        if !(r.controller_rate_mhz > 0.0 && r.duration_ms >= 0.0 && r.escape_radius_um > 0.0) {
            return bad("run rates, duration and escape radius must be positive");
        }
        if let ControllerSpec::Lqg { variants, r_lqr, apex_max_v, .. } = &self.controller {
            if variants.is_empty() {
                return bad("controller.variants is empty");
            }
            if !(*r_lqr > 0.0 && *apex_max_v > 0.0) {
                return bad("r_lqr and apex_max_v must be > 0");
            }
        }
        self.resolve().map(|_| ())
    }

    pub fn calibration_targets(&self) -> CalibrationTargets {
        let p = &self.potential;
        CalibrationTargets {
            mass: self.mass(),
            f_apex: p.f_apex_khz * 1e3,
            f_well: p.f_well_khz * 1e3,
            f_y: p.f_y_khz * 1e3,
            f_z: p.f_z_khz * 1e3,
            p00: p.p00_mw * 1e-3,
            p01: p.p01_mw * 1e-3,
            waist: match p.waist {
                WaistSpec::StiffnessDrop { delta1_nm, ratio } => WaistChoice::StiffnessDrop { delta1: delta1_nm * 1e-9, ratio },
                WaistSpec::Fixed { w0_um } => WaistChoice::Fixed(w0_um * 1e-6),
            },
        }
    }

    pub fn mass(&self) -> f64 {
        sphere_mass(self.particle.density_kg_m3, self.particle.diameter_nm * 1e-9)
    }

    /// Aligned potential at the calibration powers.
    pub fn calibrated_potential(&self) -> Result<PotentialParams, CliError> {
        PotentialParams::calibrate(&self.calibration_targets())
            .map_err(|e| CliError::Invalid(format!("scenario `{}`: potential calibration: {e}", self.name)))
    }

    pub fn resolve(&self) -> Result<Resolved, CliError> {
        let invalid = |what: &str, e: &dyn std::fmt::Display| CliError::Invalid(format!("scenario `{}`: {what}: {e}", self.name));
        let full = self.calibrated_potential()?;
        let p = &self.potential;
        let potential = full.with_powers(full.p00 * p.p00_run_fraction, full.p01 * p.p01_run_fraction);
        let ps = &self.particle;
        let particle = ParticleParams::from_damping_rate(self.mass(), hz_to_rad(ps.damping_hz), ps.temperature_k, ps.cf_n_per_v);
        particle.validate().map_err(|e| invalid("particle", &e))?;
        let d = &self.detection;
        let detection = DetectionConfig {
            c: d.c_v_per_m,
            x_nl: d.x_nl_nm.map_or_else(|| DetectionConfig::x_nl_for_flatness(200e-9, 0.01), |v| v * 1e-9),
            sigma_x: d.sigma_x_v_per_rthz,
            sigma_z: d.sigma_z_v_per_rthz,
            drift_rate_max: d.drift_rate_max_v_per_s,
        };
        detection.validate().map_err(|e| invalid("detection", &e))?;
        self.drift.validate().map_err(|e| invalid("drift", &e))?;
        let r = &self.run;
        let loop_cfg = LoopConfig {
            duration_s: r.duration_ms * 1e-3,
            controller_dt_s: 1.0 / (r.controller_rate_mhz * 1e6),
            substeps: r.substeps,
            decimation: r.decimation,
            escape_radius_m: r.escape_radius_um * 1e-6,
            seed: r.seed,
            initial: None,
        };
        loop_cfg.validate().map_err(|e| invalid("run", &e))?;
        let criteria = self.analysis.criteria();
        criteria.validate().map_err(|e| invalid("analysis", &e))?;
        Ok(Resolved { potential, particle, detection, drift: self.drift.clone(), loop_cfg, criteria })
    }

    /// Variants to run, or `None` for non-LQG controllers.
    pub fn variants(&self) -> Option<&[ControllerVariant]> {
        match &self.controller {
            ControllerSpec::Lqg { variants, .. } => Some(variants),
            _ => None,
        }
    }

    /// Time of the first drift knot, if the drift is a ramp.
    pub fn drift_onset_s(&self) -> Option<f64> {
        match &self.drift {
            DriftModel::Ramp { delta0_m, delta1_m, chi_x_v } => {
                [delta0_m, delta1_m, chi_x_v].iter().filter_map(|k| k.first().map(|k| k.t_s)).reduce(f64::min)
            }
            _ => None,
        }
    }

    /// Time of the last drift knot, if the drift is a ramp.
    pub fn drift_settled_s(&self) -> Option<f64> {
        match &self.drift {
            DriftModel::Ramp { delta0_m, delta1_m, chi_x_v } => {
                [delta0_m, delta1_m, chi_x_v].iter().filter_map(|k| k.last().map(|k| k.t_s)).reduce(f64::max)
            }
            _ => None,
        }
    }
}

/// LQG synthesis inputs derived from a resolved scenario.
pub struct LqgInputs {
    pub model: CalibratedModel,
    pub weights: LqgWeights,
    pub config: LqgConfig,
}

impl Resolved {
    pub fn lqg_inputs(&self, spec: &ControllerSpec) -> Result<Option<LqgInputs>, CliError> {
        let ControllerSpec::Lqg { r_lqr, q_z, sigma_apex_walk, apex_max_v, delay_samples, predictive, .. } = spec else {
            return Ok(None);
        };
        let model = CalibratedModel::from_physics(&self.potential, &self.particle, &self.detection, *sigma_apex_walk)
            .map_err(|e| CliError::Synthesis(format!("model: {e}")))?;
        Ok(Some(LqgInputs {
            model,
            weights: LqgWeights { r_lqr: *r_lqr, q_z: *q_z },
            config: LqgConfig {
                dt: self.loop_cfg.controller_dt_s,
                delay_samples: *delay_samples,
                apex_max: apex_max_v / self.detection.c[0][0],
                predictive: *predictive,
            },
        }))
    }
}
