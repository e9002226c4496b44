//! Sampled closed loop: physics substeps under zero-order hold, measurement,
//! controller, record.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;

use crate::potential::{double_well_1d_d1, double_well_1d_d2, find_apex, PotentialParams};

use super::drift::{DriftModel, DriftProcess};
use super::{measure, step, DetectionConfig, DynamicsError, ParticleParams, ParticleState, Streams};

/// A sampled feedback law. `step` receives `(χ_x, χ_z)` and returns the
/// electrode voltage applied over the next sample interval.
pub trait Controller {
    fn step(&mut self, chi: [f64; 2]) -> f64;

    /// Current estimate `(x, ẋ, Δ_apex, z, ż)` in SI units, zeros if none.
    fn estimate(&self) -> [f64; 5] {
        [0.0; 5]
    }

    fn reset(&mut self) {}
}

impl<C: Controller + ?Sized> Controller for &mut C {
    fn step(&mut self, chi: [f64; 2]) -> f64 {
        (**self).step(chi)
    }

    fn estimate(&self) -> [f64; 5] {
        (**self).estimate()
    }

    fn reset(&mut self) {
        (**self).reset()
    }
}

/// No feedback.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroController;

impl Controller for ZeroController {
    fn step(&mut self, _chi: [f64; 2]) -> f64 {
        0.0
    }
}

/// Constant voltage, e.g. to park the particle in a well.
#[derive(Debug, Clone, Copy)]
pub struct BiasController(pub f64);

impl Controller for BiasController {
    fn step(&mut self, _chi: [f64; 2]) -> f64 {
        self.0
    }
}

/// Sum of sine tones `(amplitude V, frequency Hz)`, optionally added to a
/// wrapped feedback law.
#[derive(Debug, Clone)]
pub struct ToneDriver<C = ZeroController> {
    pub tones: Vec<(f64, f64)>,
    dt: f64,
    n: u64,
    inner: C,
}

impl ToneDriver<ZeroController> {
    pub fn new(tones: Vec<(f64, f64)>, dt: f64) -> Self {
        Self { tones, dt, n: 0, inner: ZeroController }
    }
}

impl<C: Controller> ToneDriver<C> {
    pub fn with_feedback(tones: Vec<(f64, f64)>, dt: f64, inner: C) -> Self {
        Self { tones, dt, n: 0, inner }
    }
}

impl<C: Controller> Controller for ToneDriver<C> {
    fn step(&mut self, chi: [f64; 2]) -> f64 {
        // The value is applied over the interval that starts one sample later.
        let t = (self.n + 1) as f64 * self.dt;
        self.n += 1;
        let drive: f64 = self
            .tones
            .iter()
            .map(|(a, f)| a * (2.0 * core::f64::consts::PI * f * t).sin())
            .sum();
        drive + self.inner.step(chi)
    }

    fn estimate(&self) -> [f64; 5] {
        self.inner.estimate()
    }

    fn reset(&mut self) {
        self.n = 0;
        self.inner.reset();
    }
}

/// Delays the output of `inner` by a whole number of samples.
#[derive(Debug, Clone)]
pub struct DelayLine<C> {
    inner: C,
    buf: VecDeque<f64>,
    delay: usize,
}

impl<C: Controller> DelayLine<C> {
    pub fn new(inner: C, delay: usize) -> Self {
        let mut buf = VecDeque::with_capacity(delay + 1);
        buf.extend(core::iter::repeat_n(0.0, delay));
        Self { inner, buf, delay }
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }
}

impl<C: Controller> Controller for DelayLine<C> {
    fn step(&mut self, chi: [f64; 2]) -> f64 {
        let u = self.inner.step(chi);
        self.buf.push_back(u);
        self.buf.pop_front().unwrap_or(u)
    }

    fn estimate(&self) -> [f64; 5] {
        self.inner.estimate()
    }

    fn reset(&mut self) {
        self.inner.reset();
        self.buf.clear();
        self.buf.extend(core::iter::repeat_n(0.0, self.delay));
    }
}

/// Follows the apex of the 1-D reduction as the offsets move, by Newton steps
/// from the previous position with a full search as fallback.
#[derive(Debug, Clone, Default)]
pub struct ApexTracker {
    last: Option<(f64, f64, f64)>,
}

impl ApexTracker {
    /// Apex position (m), NaN when the potential has none.
    pub fn apex(&mut self, p: &PotentialParams) -> f64 {
        if let Some((d0, d1, x)) = self.last {
            if d0 == p.delta0 && d1 == p.delta1 {
                return x;
            }
            if x.is_finite() {
                if let Some(xn) = newton_apex(p, x) {
                    self.last = Some((p.delta0, p.delta1, xn));
                    return xn;
                }
            }
        }
        let info = find_apex(p);
        let x = if info.valid { info.delta_apex } else { f64::NAN };
        self.last = Some((p.delta0, p.delta1, x));
        x
    }
}

fn newton_apex(p: &PotentialParams, mut x: f64) -> Option<f64> {
    for _ in 0..20 {
        let d2 = double_well_1d_d2(x, p);
        if !(d2 < 0.0) {
            return None;
        }
        let dx = double_well_1d_d1(x, p) / d2;
        x -= dx;
        if dx.abs() < 1e-13 {
            return (double_well_1d_d2(x, p) < 0.0).then_some(x);
        }
    }
    None
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopConfig {
    pub duration_s: f64,
    /// Controller sample period (s).
    pub controller_dt_s: f64,
    /// Physics substeps per controller sample.
    pub substeps: usize,
    /// Record every `decimation`-th controller sample.
    pub decimation: usize,
    pub escape_radius_m: f64,
    pub seed: u64,
    /// Initial state; `None` starts at rest on the apex of the initial potential.
    pub initial: Option<ParticleState>,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            duration_s: 10e-3,
            controller_dt_s: 32e-9,
            substeps: 4,
            decimation: 8,
            escape_radius_m: 2e-6,
            seed: 0,
            initial: None,
        }
    }
}

impl LoopConfig {
    pub fn physics_dt(&self) -> f64 {
        self.controller_dt_s / self.substeps as f64
    }

    pub fn n_samples(&self) -> usize {
        (self.duration_s / self.controller_dt_s).round() as usize
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        if !(self.duration_s >= 0.0 && self.duration_s.is_finite()) {
            return Err(DynamicsError::InvalidParameter("duration must be >= 0"));
        }
        if !(self.controller_dt_s > 0.0 && self.controller_dt_s.is_finite()) {
            return Err(DynamicsError::InvalidParameter("controller period must be > 0"));
        }
        if self.substeps == 0 || self.decimation == 0 {
            return Err(DynamicsError::InvalidParameter("substeps and decimation must be >= 1"));
        }
        if !(self.escape_radius_m > 0.0) {
            return Err(DynamicsError::InvalidParameter("escape radius must be > 0"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RunStatus {
    Completed,
    /// `|x|` exceeded the escape radius at time `t`.
    ParticleLost { t: f64 },
    /// The integrator diverged at time `t`.
    NonFinite { t: f64 },
}

impl RunStatus {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Completed => "completed",
            Self::ParticleLost { .. } => "particle lost",
            Self::NonFinite { .. } => "non-finite state",
        }
    }
}

/// Trace columns of a [`RunRecord`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Column {
    T,
    X,
    Y,
    Z,
    Vx,
    Vy,
    Vz,
    ChiX,
    ChiZ,
    U,
    EstX,
    EstVx,
    EstApex,
    EstZ,
    EstVz,
    Delta0,
    Delta1,
    ChiDrift,
    Apex,
}

impl Column {
    pub const ALL: [Column; 19] = [
        Self::T,
        Self::X,
        Self::Y,
        Self::Z,
        Self::Vx,
        Self::Vy,
        Self::Vz,
        Self::ChiX,
        Self::ChiZ,
        Self::U,
        Self::EstX,
        Self::EstVx,
        Self::EstApex,
        Self::EstZ,
        Self::EstVz,
        Self::Delta0,
        Self::Delta1,
        Self::ChiDrift,
        Self::Apex,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::T => "t",
            Self::X => "x",
            Self::Y => "y",
            Self::Z => "z",
            Self::Vx => "vx",
            Self::Vy => "vy",
            Self::Vz => "vz",
            Self::ChiX => "chi_x",
            Self::ChiZ => "chi_z",
            Self::U => "u",
            Self::EstX => "est_x",
            Self::EstVx => "est_vx",
            Self::EstApex => "est_apex",
            Self::EstZ => "est_z",
            Self::EstVz => "est_vz",
            Self::Delta0 => "delta0",
            Self::Delta1 => "delta1",
            Self::ChiDrift => "chi_drift",
            Self::Apex => "apex",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            Self::T => "s",
            Self::X | Self::Y | Self::Z | Self::EstX | Self::EstApex | Self::EstZ => "m",
            Self::Delta0 | Self::Delta1 | Self::Apex => "m",
            Self::Vx | Self::Vy | Self::Vz | Self::EstVx | Self::EstVz => "m/s",
            Self::ChiX | Self::ChiZ | Self::U | Self::ChiDrift => "V",
        }
    }

    pub fn from_name(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == s)
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Uniformly sampled traces of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub sample_rate_hz: f64,
    pub seed: u64,
    pub status: RunStatus,
    columns: Vec<Vec<f64>>,
}

impl RunRecord {
    pub fn new(sample_rate_hz: f64, seed: u64) -> Self {
        Self {
            sample_rate_hz,
            seed,
            status: RunStatus::Completed,
            columns: Column::ALL.iter().map(|_| Vec::new()).collect(),
        }
    }

    /// Builds a record from full columns in [`Column::ALL`] order.
    pub fn from_columns(
        sample_rate_hz: f64,
        seed: u64,
        status: RunStatus,
        columns: Vec<Vec<f64>>,
    ) -> Result<Self, DynamicsError> {
        if columns.len() != Column::ALL.len() {
            return Err(DynamicsError::InvalidParameter("wrong number of record columns"));
        }
        let n = columns[0].len();
        if columns.iter().any(|c| c.len() != n) {
            return Err(DynamicsError::InvalidParameter("record columns differ in length"));
        }
        Ok(Self { sample_rate_hz, seed, status, columns })
    }

    pub fn len(&self) -> usize {
        self.columns[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn col(&self, c: Column) -> &[f64] {
        &self.columns[c.index()]
    }

    pub fn row(&self, i: usize) -> [f64; 19] {
        core::array::from_fn(|k| self.columns[k][i])
    }

    pub fn push_row(&mut self, row: [f64; 19]) {
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(v);
        }
    }

    /// Sub-record of rows with `t` in `[t0, t1)`.
    pub fn slice_time(&self, t0: f64, t1: f64) -> Self {
        let t = self.col(Column::T);
        let lo = t.partition_point(|&v| v < t0);
        let hi = t.partition_point(|&v| v < t1);
        Self {
            sample_rate_hz: self.sample_rate_hz,
            seed: self.seed,
            status: self.status,
            columns: self.columns.iter().map(|c| c[lo..hi].to_vec()).collect(),
        }
    }
}

/// Runs the sampled loop. Each controller sample advances the physics by
/// `substeps` steps with the previous input held, then measures, then asks
/// the controller for the next input.
pub fn run_closed_loop<C: Controller + ?Sized>(
    pot: &PotentialParams,
    particle: &ParticleParams,
    det: &DetectionConfig,
    drift: &DriftModel,
    cfg: &LoopConfig,
    ctrl: &mut C,
) -> Result<RunRecord, DynamicsError> {
    cfg.validate()?;
    particle.validate()?;
    det.validate()?;
    pot.validate().map_err(|_| DynamicsError::InvalidParameter("invalid potential"))?;

    let dt = cfg.controller_dt_s;
    let h = cfg.physics_dt();
    let mut streams = Streams::new(cfg.seed);
    let mut drift = DriftProcess::new(drift.clone(), streams.drift.clone(), det.drift_rate_max)?;
    let mut tracker = ApexTracker::default();

    let d = drift.sample(0.0)?;
    let mut p = pot.with_offsets(d.delta0, d.delta1);
    let mut state = match cfg.initial {
        Some(s) => s,
        None => {
            let a = tracker.apex(&p);
            ParticleState::at([if a.is_finite() { a } else { 0.0 }, 0.0, 0.0])
        }
    };
    let mut rec = RunRecord::new(1.0 / (dt * cfg.decimation as f64), cfg.seed);
    let mut u = 0.0;
    let mut current = d;

    for n in 0..cfg.n_samples() {
        for _ in 0..cfg.substeps {
            match step(&state, u, &p, particle, h, &mut streams.thermal) {
                Ok(s) => state = s,
                Err(DynamicsError::NonFinite) => {
                    rec.status = RunStatus::NonFinite { t: state.t };
                    return Ok(rec);
                }
                Err(e) => return Err(e),
            }
        }
        let t = (n + 1) as f64 * dt;
        state.t = t;
        let chi = measure(&state, det, current.chi_x, &mut streams.measurement, dt);
        let lost = state.q[0].abs() > cfg.escape_radius_m;
        let record_now = lost || (n + 1) % cfg.decimation == 0;
        if !lost {
            u = ctrl.step(chi);
        }
        if record_now {
            let e = ctrl.estimate();
            let apex = tracker.apex(&p);
            rec.push_row([
                t,
                state.q[0],
                state.q[1],
                state.q[2],
                state.v[0],
                state.v[1],
                state.v[2],
                chi[0],
                chi[1],
                if lost { 0.0 } else { u },
                e[0],
                e[1],
                e[2],
                e[3],
                e[4],
                current.delta0,
                current.delta1,
                current.chi_x,
                apex,
            ]);
        }
        if lost {
            rec.status = RunStatus::ParticleLost { t };
            return Ok(rec);
        }
        current = drift.sample(t)?;
        if current.delta0 != p.delta0 || current.delta1 != p.delta1 {
            p = pot.with_offsets(current.delta0, current.delta1);
        }
    }
    Ok(rec)
}
