//! Slow drifts of the beam offsets Δ0, Δ1 and of the detection reference Δχ,x.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::DynamicsError;

/// Knot of a piecewise-linear channel: value held before the first and after the last knot.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Knot {
    pub t_s: f64,
    pub value: f64,
}

impl Knot {
    pub const fn new(t_s: f64, value: f64) -> Self {
        Self { t_s, value }
    }
}

/// Values of the drifting channels at one instant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DriftSample {
    /// TEM00 offset (m).
    pub delta0: f64,
    /// TEM01 offset (m).
    pub delta1: f64,
    /// Detection reference offset on χ_x (V).
    pub chi_x: f64,
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields))]
pub enum DriftModel {
    Constant { delta0_m: f64, delta1_m: f64, chi_x_v: f64 },
    /// Piecewise-linear channels.
    Ramp {
        #[cfg_attr(feature = "serde", serde(default))]
        delta0_m: Vec<Knot>,
        #[cfg_attr(feature = "serde", serde(default))]
        delta1_m: Vec<Knot>,
        #[cfg_attr(feature = "serde", serde(default))]
        chi_x_v: Vec<Knot>,
    },
    /// Independent Gaussian random walks. Amplitudes are the RMS displacement
    /// after 100 ms.
    RandomWalk { delta0_rms_m: f64, delta1_rms_m: f64, chi_x_rms_v: f64 },
    /// Recorded `(Δ0, Δ1, Δχ,x)` samples at a fixed period, linearly interpolated.
    Replay { dt_s: f64, samples: Vec<[f64; 3]> },
}

impl Default for DriftModel {
    fn default() -> Self {
        Self::Constant { delta0_m: 0.0, delta1_m: 0.0, chi_x_v: 0.0 }
    }
}

fn interp(knots: &[Knot], t: f64) -> f64 {
    match knots {
        [] => 0.0,
        [k] => k.value,
        _ => {
            if t <= knots[0].t_s {
                return knots[0].value;
            }
            for w in knots.windows(2) {
                if t <= w[1].t_s {
                    let span = w[1].t_s - w[0].t_s;
                    if span <= 0.0 {
                        return w[1].value;
                    }
                    return w[0].value + (w[1].value - w[0].value) * (t - w[0].t_s) / span;
                }
            }
            knots[knots.len() - 1].value
        }
    }
}

impl DriftModel {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        match self {
            Self::Constant { delta0_m, delta1_m, chi_x_v } => {
                if ![delta0_m, delta1_m, chi_x_v].iter().all(|v| v.is_finite()) {
                    return Err(DynamicsError::InvalidParameter("drift offsets must be finite"));
                }
            }
            Self::Ramp { delta0_m, delta1_m, chi_x_v } => {
                for ch in [delta0_m, delta1_m, chi_x_v] {
                    if ch.iter().any(|k| !(k.t_s.is_finite() && k.value.is_finite() && k.t_s >= 0.0)) {
                        return Err(DynamicsError::InvalidParameter("ramp knots must be finite with t >= 0"));
                    }
                    if ch.windows(2).any(|w| w[1].t_s < w[0].t_s) {
                        return Err(DynamicsError::InvalidParameter("ramp knots must be sorted by time"));
                    }
                }
            }
            Self::RandomWalk { delta0_rms_m, delta1_rms_m, chi_x_rms_v } => {
                if ![delta0_rms_m, delta1_rms_m, chi_x_rms_v].iter().all(|v| v.is_finite() && **v >= 0.0) {
                    return Err(DynamicsError::InvalidParameter("random-walk amplitudes must be >= 0"));
                }
            }
            Self::Replay { dt_s, samples } => {
                if !(*dt_s > 0.0) || samples.is_empty() {
                    return Err(DynamicsError::InvalidParameter("replay needs dt > 0 and samples"));
                }
                if samples.iter().flatten().any(|v| !v.is_finite()) {
                    return Err(DynamicsError::InvalidParameter("replay samples must be finite"));
                }
            }
        }
        Ok(())
    }

    /// Unclamped value of a deterministic model at `t`. Random walks have no
    /// closed form and return `None`.
    pub fn deterministic_at(&self, t: f64) -> Option<Result<DriftSample, DynamicsError>> {
        match self {
            Self::Constant { delta0_m, delta1_m, chi_x_v } => {
                Some(Ok(DriftSample { delta0: *delta0_m, delta1: *delta1_m, chi_x: *chi_x_v }))
            }
            Self::Ramp { delta0_m, delta1_m, chi_x_v } => Some(Ok(DriftSample {
                delta0: interp(delta0_m, t),
                delta1: interp(delta1_m, t),
                chi_x: interp(chi_x_v, t),
            })),
            Self::RandomWalk { .. } => None,
            Self::Replay { dt_s, samples } => {
                let pos = t / dt_s;
                let last = (samples.len() - 1) as f64;
                if !(pos >= 0.0) || pos > last + 1e-9 {
                    return Some(Err(DynamicsError::ReplayOutOfRange { t }));
                }
                let pos = pos.min(last);
                let i = (pos.floor() as usize).min(samples.len() - 1);
                let j = (i + 1).min(samples.len() - 1);
                let f = pos - i as f64;
                let v: [f64; 3] = core::array::from_fn(|k| samples[i][k] + f * (samples[j][k] - samples[i][k]));
                Some(Ok(DriftSample { delta0: v[0], delta1: v[1], chi_x: v[2] }))
            }
        }
    }
}

/// Stateful sampler of a [`DriftModel`]. Times must be non-decreasing.
/// The Δχ,x slope is limited to `rate_max`.
#[derive(Debug, Clone)]
pub struct DriftProcess {
    model: DriftModel,
    rng: ChaCha8Rng,
    rate_max: f64,
    last_t: Option<f64>,
    walk: [f64; 3],
    chi: f64,
}

impl DriftProcess {
    pub fn new(model: DriftModel, rng: ChaCha8Rng, rate_max: f64) -> Result<Self, DynamicsError> {
        model.validate()?;
        if !(rate_max >= 0.0) {
            return Err(DynamicsError::InvalidParameter("drift_rate_max must be >= 0"));
        }
        Ok(Self { model, rng, rate_max, last_t: None, walk: [0.0; 3], chi: 0.0 })
    }

    pub fn model(&self) -> &DriftModel {
        &self.model
    }

    pub fn sample(&mut self, t: f64) -> Result<DriftSample, DynamicsError> {
        let dt = match self.last_t {
            Some(prev) if t < prev => {
                return Err(DynamicsError::InvalidParameter("drift sampled backwards in time"));
            }
            Some(prev) => Some(t - prev),
            None => None,
        };
        let raw = match self.model.deterministic_at(t) {
            Some(r) => r?,
            None => {
                let Self { model: DriftModel::RandomWalk { delta0_rms_m, delta1_rms_m, chi_x_rms_v }, .. } = self
                else {
                    unreachable!()
                };
                let rms = [*delta0_rms_m, *delta1_rms_m, *chi_x_rms_v];
                if let Some(dt) = dt {
                    let k = (dt / 0.1).sqrt();
                    for (w, r) in self.walk.iter_mut().zip(rms) {
                        if r > 0.0 {
                            *w += r * k * self.rng.sample::<f64, _>(StandardNormal);
                        }
                    }
                }
                DriftSample { delta0: self.walk[0], delta1: self.walk[1], chi_x: self.walk[2] }
            }
        };
        self.chi = match dt {
            None => raw.chi_x,
            Some(dt) => {
                let step = self.rate_max * dt;
                self.chi + (raw.chi_x - self.chi).clamp(-step, step)
            }
        };
        self.last_t = Some(t);
        Ok(DriftSample { chi_x: self.chi, ..raw })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use rand::SeedableRng;

    fn proc(model: DriftModel, rate: f64) -> DriftProcess {
        DriftProcess::new(model, ChaCha8Rng::seed_from_u64(9), rate).unwrap()
    }

    #[test]
    fn constant_zero() {
        let mut d = proc(DriftModel::default(), 1e-4);
        for i in 0..100 {
            assert_eq!(d.sample(i as f64 * 1e-3).unwrap(), DriftSample::default());
        }
    }

    #[test]
    fn ramp_interpolates() {
        let model = DriftModel::Ramp {
            delta0_m: vec![],
            delta1_m: vec![Knot::new(0.010, 0.0), Knot::new(0.060, 60e-9)],
            chi_x_v: vec![],
        };
        let mut d = proc(model, 1e-4);
        assert_eq!(d.sample(0.005).unwrap().delta1, 0.0);
        assert!((d.sample(0.035).unwrap().delta1 - 30e-9).abs() < 1e-20);
        assert!((d.sample(0.5).unwrap().delta1 - 60e-9).abs() < 1e-20);
    }

    #[test]
    fn chi_ramp_at_rate_limit() {
        let model = DriftModel::Ramp {
            delta0_m: vec![],
            delta1_m: vec![],
            chi_x_v: vec![Knot::new(0.0, 0.0), Knot::new(1.0, 1e-4)],
        };
        let mut d = proc(model.clone(), 1e-4);
        let mut last = 0.0;
        for i in 0..=1000 {
            last = d.sample(i as f64 * 1e-3).unwrap().chi_x;
        }
        assert!((last - 1e-4).abs() < 1e-15);

        // A faster request is clamped to the bound.
        let fast = DriftModel::Ramp {
            delta0_m: vec![],
            delta1_m: vec![],
            chi_x_v: vec![Knot::new(0.0, 0.0), Knot::new(1.0, 1e-2)],
        };
        let mut d = proc(fast, 1e-4);
        let mut last = 0.0;
        for i in 0..=1000 {
            last = d.sample(i as f64 * 1e-3).unwrap().chi_x;
        }
        assert!((last - 1e-4).abs() < 1e-15);
    }

    #[test]
    fn random_walk_rms_over_100ms() {
        let model = DriftModel::RandomWalk { delta0_rms_m: 5e-9, delta1_rms_m: 0.0, chi_x_rms_v: 0.0 };
        let n = 2000;
        let mut acc = 0.0;
        for s in 0..n {
            let mut d = DriftProcess::new(model.clone(), ChaCha8Rng::seed_from_u64(s), 1e-4).unwrap();
            let mut v = 0.0;
            for i in 0..=100 {
                v = d.sample(i as f64 * 1e-3).unwrap().delta0;
            }
            acc += v * v;
        }
        let rms = (acc / n as f64).sqrt();
        assert!((rms / 5e-9 - 1.0).abs() < 0.06, "{rms}");
    }

    #[test]
    fn replay_range() {
        let model = DriftModel::Replay { dt_s: 1e-3, samples: vec![[0.0, 0.0, 0.0], [1e-9, 2e-9, 0.0]] };
        let mut d = proc(model, 1.0);
        assert!((d.sample(0.5e-3).unwrap().delta1 - 1e-9).abs() < 1e-21);
        assert_eq!(d.sample(2e-3), Err(DynamicsError::ReplayOutOfRange { t: 2e-3 }));
    }

    #[test]
    fn backwards_time_rejected() {
        let mut d = proc(DriftModel::default(), 1.0);
        d.sample(1.0).unwrap();
        assert!(d.sample(0.5).is_err());
    }
}
