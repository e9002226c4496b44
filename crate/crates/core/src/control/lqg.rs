//! The runnable discrete LQG controller.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write as _;

use nalgebra::{Complex, DMatrix, DVector};
#[allow(unused_imports)]
use num_traits::Float;

use crate::dynamics::Controller;
use crate::linalg::{eigenvalues, spectral_radius};

use super::discretize::{discretize, DiscreteModel};
use super::model::{
    build_augmented_model, error_model_for, error_projection, CalibratedModel, ControllerVariant,
    StateKind,
};
use super::normalize::{normalize_model, LqgMatrices, ScalingRecord};
use super::riccati::solve_dare;
use super::synthesis::{kalman_gain, lqr_gain, LqgWeights};
use super::SynthesisError;

const N: usize = 5;

/// Sampling and constraint settings of a controller.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqgConfig {
    /// Controller sample period (s).
    pub dt: f64,
    pub delay_samples: usize,
    /// Bound on the apex estimate (m).
    pub apex_max: f64,
    /// Feed back the estimate propagated over the delay instead of the current one.
    pub predictive: bool,
}

impl LqgConfig {
    pub fn validate(&self) -> Result<(), SynthesisError> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(SynthesisError::InvalidConfig("controller dt must be > 0"));
        }
        if !(self.apex_max > 0.0 && self.apex_max.is_finite()) {
            return Err(SynthesisError::InvalidConfig("apex_max must be > 0"));
        }
        Ok(())
    }
}

/// Everything computed during synthesis, for reporting.
#[derive(Debug, Clone)]
pub struct LqgDesign {
    pub variant: ControllerVariant,
    /// Feedback row on the error state.
    pub k_error: DVector<f64>,
    /// Feedback row on the augmented state.
    pub k_aug: DMatrix<f64>,
    pub l_continuous: DMatrix<f64>,
    pub discrete: DiscreteModel,
    pub l_discrete: DMatrix<f64>,
    pub regulator_eigs: Vec<Complex<f64>>,
    pub estimator_eigs: Vec<Complex<f64>>,
    pub regulator_radius: f64,
    pub estimator_radius: f64,
    /// Spectral radius of plant + estimator + delay line.
    pub delayed_radius: f64,
    /// Time constant of the slowest continuous estimator mode (s).
    pub slowest_estimator_tau: f64,
    pub scaling: ScalingRecord,
    pub scaled: LqgMatrices,
}

/// Discrete steady-state Kalman gain (a posteriori form) from the filter DARE.
pub fn discrete_kalman_gain(d: &DiscreteModel) -> Result<DMatrix<f64>, SynthesisError> {
    let prior = solve_dare(&d.ad.transpose(), &d.cd.transpose(), &d.qd, &d.rd)?;
    let s = &d.cd * &prior * d.cd.transpose() + &d.rd;
    let sinv = s.try_inverse().ok_or(SynthesisError::NotPositiveDefinite("innovation covariance"))?;
    Ok(prior * d.cd.transpose() * sinv)
}

/// Plant (controller model without apex) + estimator + `d`-sample input delay.
pub fn delayed_closed_loop(m: &LqgMatrices, apex: Option<usize>, d: usize) -> DMatrix<f64> {
    let n = m.n();
    let plant_idx: Vec<usize> = (0..n).filter(|&i| Some(i) != apex).collect();
    let np = plant_idx.len();
    let e = DMatrix::from_fn(n, np, |i, j| if plant_idx[j] == i { 1.0 } else { 0.0 });
    let phi = e.transpose() * &m.ad * &e;
    let gam = e.transpose() * &m.bd;
    let id = DMatrix::<f64>::identity(n, n);
    let lc = &m.l * &m.cd;
    let lce = &lc * &e;
    let dim = np + n + d;

    // Row vector selecting the input applied over the next interval.
    let mut u_row = DMatrix::zeros(1, dim);
    if d > 0 {
        u_row[(0, np + n)] = 1.0;
    } else {
        u_row.view_mut((0, np), (1, n)).copy_from(&m.k);
    }
    let mut f = DMatrix::zeros(dim, dim);
    f.view_mut((0, 0), (np, np)).copy_from(&phi);
    f.view_mut((np, 0), (n, np)).copy_from(&(&lce * &phi));
    f.view_mut((np, np), (n, n)).copy_from(&((&id - &lc) * &m.ad));
    let plant_u = &gam * &u_row;
    let mut blk = f.view_mut((0, 0), (np, dim));
    blk += plant_u;
    let est_u = (&id - &lc) * &m.bd + &lce * &gam;
    let upd = &est_u * &u_row;
    let mut blk = f.view_mut((np, 0), (n, dim));
    blk += upd;
    for i in 0..d.saturating_sub(1) {
        f[(np + n + i, np + n + i + 1)] = 1.0;
    }
    if d > 0 {
        f.view_mut((np + n + d - 1, np), (1, n)).copy_from(&m.k);
    }
    f
}

/// Sequential controller: one instance per loop.
#[derive(Debug, Clone)]
pub struct DiscreteLqg {
    variant: ControllerVariant,
    n: usize,
    p: usize,
    dt: f64,
    delay_samples: usize,
    predictive: bool,
    apex_index: Option<usize>,
    /// Apex bound in meters.
    apex_max: f64,
    apex_max_s: f64,
    scaling: ScalingRecord,
    ad: [[f64; N]; N],
    bd: [f64; N],
    cd: [[f64; N]; 2],
    l: [[f64; 2]; N],
    k: [f64; N],
    // Ad^d and Ad^(d-1-j) Bd, for predictive mode.
    ad_pow: [[f64; N]; N],
    pred_b: Vec<[f64; N]>,
    xhat: [f64; N],
    buffer: VecDeque<f64>,
    last_applied: f64,
    last_command: f64,
    faults: u64,
}

impl DiscreteLqg {
    /// Synthesizes a controller for `variant` from the calibrated model.
    pub fn design(
        cal: &CalibratedModel,
        variant: ControllerVariant,
        weights: &LqgWeights,
        cfg: &LqgConfig,
    ) -> Result<(Self, LqgDesign), SynthesisError> {
        cal.validate()?;
        weights.validate()?;
        cfg.validate()?;

        let em = error_model_for(cal, variant);
        let k_error = lqr_gain(&em, weights)?;
        let aug = build_augmented_model(cal, variant);
        let l_continuous = kalman_gain(&aug)?;
        let discrete = discretize(&aug.a, &aug.b, &aug.process_noise(), &aug.c, &aug.r, cfg.dt)?;
        let l_discrete = discrete_kalman_gain(&discrete)?;
        let k_aug = DMatrix::from_row_slice(1, aug.a.nrows(), (k_error.transpose() * error_projection(variant)).as_slice());

        let regulator_eigs = eigenvalues(&(&em.a + &em.b * k_error.transpose()));
        let em_d = discretize(&em.a, &em.b, &(&em.g * &em.w * em.g.transpose()), &DMatrix::zeros(0, em.dim()), &DMatrix::zeros(0, 0), cfg.dt)?;
        let regulator_radius = spectral_radius(&(&em_d.ad + &em_d.bd * k_error.transpose()));
        if !(regulator_radius < 1.0) {
            return Err(SynthesisError::UnstableDesign { what: "regulator", radius: regulator_radius });
        }
        let estimator_eigs = eigenvalues(&(&aug.a - &l_continuous * &aug.c));
        let mats = LqgMatrices {
            ad: discrete.ad.clone(),
            bd: discrete.bd.clone(),
            cd: discrete.cd.clone(),
            l: l_discrete.clone(),
            k: k_aug.clone(),
        };
        let estimator_radius = spectral_radius(&mats.estimator_matrix());
        if !(estimator_radius < 1.0) {
            return Err(SynthesisError::UnstableDesign { what: "estimator", radius: estimator_radius });
        }
        let apex = variant.apex_index();
        let delayed_radius = spectral_radius(&delayed_closed_loop(&mats, apex, cfg.delay_samples));
        let slowest_estimator_tau = estimator_eigs
            .iter()
            .map(|l| -1.0 / l.re)
            .fold(0.0, f64::max);

        let (scaled, scaling) = normalize_model(&mats, &discrete.qd, &discrete.rd, apex);
        let ctrl = Self::from_scaled(variant, &scaled, scaling.clone(), cfg)?;
        let design = LqgDesign {
            variant,
            k_error,
            k_aug,
            l_continuous,
            discrete,
            l_discrete,
            regulator_eigs,
            estimator_eigs,
            regulator_radius,
            estimator_radius,
            delayed_radius,
            slowest_estimator_tau,
            scaling,
            scaled,
        };
        Ok((ctrl, design))
    }

    /// Builds the runtime controller from scaled matrices.
    pub fn from_scaled(
        variant: ControllerVariant,
        m: &LqgMatrices,
        scaling: ScalingRecord,
        cfg: &LqgConfig,
    ) -> Result<Self, SynthesisError> {
        cfg.validate()?;
        let n = variant.state_dim();
        let p = variant.n_outputs();
        if m.n() != n || m.p() != p || m.bd.ncols() != 1 || m.l.shape() != (n, p) || m.k.shape() != (1, n)
        {
            return Err(SynthesisError::Dimension("controller matrices do not match the variant"));
        }
        if scaling.state.len() != n || scaling.output.len() != p {
            return Err(SynthesisError::Dimension("scaling record does not match the variant"));
        }
        if m.ad.iter().chain(m.bd.iter()).chain(m.cd.iter()).chain(m.l.iter()).chain(m.k.iter()).any(|v| !v.is_finite())
            || scaling.state.iter().chain(scaling.output.iter()).chain([&scaling.input]).any(|v| !(v.is_finite() && *v > 0.0))
        {
            return Err(SynthesisError::InvalidModel("non-finite controller coefficients"));
        }
        let mut ad = [[0.0; N]; N];
        let mut bd = [0.0; N];
        let mut cd = [[0.0; N]; 2];
        let mut l = [[0.0; 2]; N];
        let mut k = [0.0; N];
        for i in 0..n {
            for j in 0..n {
                ad[i][j] = m.ad[(i, j)];
            }
            bd[i] = m.bd[(i, 0)];
            k[i] = m.k[(0, i)];
            for j in 0..p {
                l[i][j] = m.l[(i, j)];
                cd[j][i] = m.cd[(j, i)];
            }
        }
        let apex_index = variant.apex_index();
        let apex_max_s = apex_index.map_or(f64::INFINITY, |i| cfg.apex_max / scaling.state[i]);

        let d = cfg.delay_samples;
        let mut ad_pow = [[0.0; N]; N];
        for (i, row) in ad_pow.iter_mut().enumerate().take(n) {
            row[i] = 1.0;
        }
        let mut pred_b = alloc::vec![[0.0; N]; d];
        // pred_b[d-1-j] = Ad^j Bd, accumulated as powers grow.
        let mut v = bd;
        for j in 0..d {
            pred_b[d - 1 - j] = v;
            v = mat_vec(&ad, &v, n);
            ad_pow = mat_mat(&ad, &ad_pow, n);
        }

        let mut ctrl = Self {
            variant,
            n,
            p,
            dt: cfg.dt,
            delay_samples: d,
            predictive: cfg.predictive,
            apex_index,
            apex_max: cfg.apex_max,
            apex_max_s,
            scaling,
            ad,
            bd,
            cd,
            l,
            k,
            ad_pow,
            pred_b,
            xhat: [0.0; N],
            buffer: VecDeque::with_capacity(d + 1),
            last_applied: 0.0,
            last_command: 0.0,
            faults: 0,
        };
        ctrl.reset();
        Ok(ctrl)
    }

    pub fn variant(&self) -> ControllerVariant {
        self.variant
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn delay_samples(&self) -> usize {
        self.delay_samples
    }

    pub fn apex_max(&self) -> f64 {
        self.apex_max
    }

    pub fn predictive(&self) -> bool {
        self.predictive
    }

    pub fn scaling(&self) -> &ScalingRecord {
        &self.scaling
    }

    /// Number of samples whose measurement was rejected.
    pub fn faults(&self) -> u64 {
        self.faults
    }

    /// Scaled matrices as stored.
    pub fn matrices(&self) -> LqgMatrices {
        let (n, p) = (self.n, self.p);
        LqgMatrices {
            ad: DMatrix::from_fn(n, n, |i, j| self.ad[i][j]),
            bd: DMatrix::from_fn(n, 1, |i, _| self.bd[i]),
            cd: DMatrix::from_fn(p, n, |i, j| self.cd[i][j]),
            l: DMatrix::from_fn(n, p, |i, j| self.l[i][j]),
            k: DMatrix::from_fn(1, n, |_, j| self.k[j]),
        }
    }

    /// Current estimate in physical units, ordered `(x, ẋ, Δ_apex, z, ż)`
    /// with zeros for states the variant does not carry.
    pub fn estimate_si(&self) -> [f64; 5] {
        let mut out = [0.0; 5];
        for (i, s) in self.variant.states().iter().enumerate() {
            let slot = match s {
                StateKind::X => 0,
                StateKind::Vx => 1,
                StateKind::Apex => 2,
                StateKind::Z => 3,
                StateKind::Vz => 4,
            };
            out[slot] = self.xhat[i] * self.scaling.state[i];
        }
        out
    }

    /// One controller sample: predict with the input applied over the last
    /// interval, update with `chi`, clip the apex estimate, compute the command,
    /// and return the input leaving the delay line.
    ///
    /// A non-finite measurement skips the update and repeats the last command.
    pub fn controller_step(&mut self, chi: [f64; 2]) -> f64 {
        let n = self.n;
        let u_prev = self.last_applied / self.scaling.input;
        let mut prior = [0.0; N];
        for (i, pi) in prior.iter_mut().enumerate().take(n) {
            let mut acc = self.bd[i] * u_prev;
            for j in 0..n {
                acc += self.ad[i][j] * self.xhat[j];
            }
            *pi = acc;
        }
        let ok = chi[..self.p].iter().all(|v| v.is_finite());
        let command;
        if ok {
            let mut innov = [0.0; 2];
            for (r, iv) in innov.iter_mut().enumerate().take(self.p) {
                let mut pred = 0.0;
                for j in 0..n {
                    pred += self.cd[r][j] * prior[j];
                }
                *iv = chi[r] / self.scaling.output[r] - pred;
            }
            for i in 0..n {
                let mut acc = prior[i];
                for (r, iv) in innov.iter().enumerate().take(self.p) {
                    acc += self.l[i][r] * iv;
                }
                self.xhat[i] = acc;
            }
            if let Some(ia) = self.apex_index {
                self.xhat[ia] = self.xhat[ia].clamp(-self.apex_max_s, self.apex_max_s);
            }
            command = self.feedback() * self.scaling.input;
        } else {
            self.faults += 1;
            self.xhat = prior;
            if let Some(ia) = self.apex_index {
                self.xhat[ia] = self.xhat[ia].clamp(-self.apex_max_s, self.apex_max_s);
            }
            command = self.last_command;
        }
        self.last_command = command;
        self.buffer.push_back(command);
        let applied = self.buffer.pop_front().unwrap_or(command);
        self.last_applied = applied;
        applied
    }

    // k · x̂, or k · x̂ propagated over the pending inputs.
    fn feedback(&self) -> f64 {
        let n = self.n;
        if self.predictive && self.delay_samples > 0 {
            let mut x = mat_vec(&self.ad_pow, &self.xhat, n);
            for (j, b) in self.pred_b.iter().enumerate() {
                let u = self.buffer[j] / self.scaling.input;
                for i in 0..n {
                    x[i] += b[i] * u;
                }
            }
            if let Some(ia) = self.apex_index {
                x[ia] = x[ia].clamp(-self.apex_max_s, self.apex_max_s);
            }
            (0..n).map(|i| self.k[i] * x[i]).sum()
        } else {
            (0..n).map(|i| self.k[i] * self.xhat[i]).sum()
        }
    }

    pub fn reset(&mut self) {
        self.xhat = [0.0; N];
        self.buffer.clear();
        self.buffer.extend(core::iter::repeat_n(0.0, self.delay_samples));
        self.last_applied = 0.0;
        self.last_command = 0.0;
        self.faults = 0;
    }

    /// Sets the estimate from physical units `(x, ẋ, Δ_apex, z, ż)`.
    pub fn set_estimate_si(&mut self, est: [f64; 5]) {
        for (i, s) in self.variant.states().iter().enumerate() {
            let v = match s {
                StateKind::X => est[0],
                StateKind::Vx => est[1],
                StateKind::Apex => est[2],
                StateKind::Z => est[3],
                StateKind::Vz => est[4],
            };
            self.xhat[i] = v / self.scaling.state[i];
        }
    }
}

fn mat_vec(a: &[[f64; N]; N], x: &[f64; N], n: usize) -> [f64; N] {
    let mut out = [0.0; N];
    for i in 0..n {
        out[i] = (0..n).map(|j| a[i][j] * x[j]).sum();
    }
    out
}

fn mat_mat(a: &[[f64; N]; N], b: &[[f64; N]; N], n: usize) -> [[f64; N]; N] {
    let mut out = [[0.0; N]; N];
    for i in 0..n {
        for j in 0..n {
            out[i][j] = (0..n).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

impl Controller for DiscreteLqg {
    fn step(&mut self, chi: [f64; 2]) -> f64 {
        self.controller_step(chi)
    }

    fn estimate(&self) -> [f64; 5] {
        self.estimate_si()
    }

    fn reset(&mut self) {
        DiscreteLqg::reset(self);
    }
}

/// Clips the apex component of `v` into `[-bound, bound]`.
pub fn projection(v: &mut [f64], apex_index: usize, bound: f64) {
    v[apex_index] = v[apex_index].clamp(-bound, bound);
}

/// Euclidean projection onto the box `[lo, hi]`.
pub fn project_box(v: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    v.iter().zip(lo).zip(hi).map(|((x, l), h)| x.clamp(*l, *h)).collect()
}

// Text artifact -------------------------------------------------------------

pub const ARTIFACT_MAGIC: &str = "darktrap-controller";
pub const ARTIFACT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum ArtifactError {
    Syntax { line: usize, message: String },
    Invalid(SynthesisError),
}

impl core::fmt::Display for ArtifactError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            Self::Syntax { line, message } => write!(f, "controller artifact line {line}: {message}"),
            Self::Invalid(e) => write!(f, "controller artifact rejected: {e}"),
        }
    }
}

impl core::error::Error for ArtifactError {}

fn write_matrix(out: &mut String, name: &str, m: &DMatrix<f64>) {
    let _ = writeln!(out, "{name} {} {}", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols()).map(|j| format!("{:?}", m[(i, j)])).collect();
        let _ = writeln!(out, "{}", row.join(" "));
    }
}

fn write_list(out: &mut String, name: &str, v: &[f64]) {
    let items: Vec<String> = v.iter().map(|x| format!("{x:?}")).collect();
    let _ = writeln!(out, "{name} {}", items.join(" "));
}

impl DiscreteLqg {
    /// Versioned text export with round-trip precision. Matrices are the
    /// scaled ones used at runtime.
    pub fn to_artifact(&self) -> String {
        let m = self.matrices();
        let mut out = String::new();
        let _ = writeln!(out, "{ARTIFACT_MAGIC} {ARTIFACT_VERSION}");
        let _ = writeln!(out, "variant {}", self.variant.name());
        let _ = writeln!(out, "dt_s {:?}", self.dt);
        let _ = writeln!(out, "delay_samples {}", self.delay_samples);
        let _ = writeln!(out, "predictive {}", u8::from(self.predictive));
        let _ = writeln!(out, "apex_max_m {:?}", self.apex_max);
        write_list(&mut out, "state_scale", &self.scaling.state);
        write_list(&mut out, "input_scale", &[self.scaling.input]);
        write_list(&mut out, "output_scale", &self.scaling.output);
        write_matrix(&mut out, "Ad", &m.ad);
        write_matrix(&mut out, "Bd", &m.bd);
        write_matrix(&mut out, "Cd", &m.cd);
        write_matrix(&mut out, "L", &m.l);
        write_matrix(&mut out, "k", &m.k);
        out
    }

    pub fn from_artifact(text: &str) -> Result<Self, ArtifactError> {
        let mut p = ArtifactParser { lines: text.lines().enumerate().peekable() };
        let (ln, head) = p.line()?;
        let mut it = head.split_whitespace();
        if it.next() != Some(ARTIFACT_MAGIC) {
            return Err(syntax(ln, "missing controller artifact header"));
        }
        let version: u32 = parse_tok(ln, it.next())?;
        if version != ARTIFACT_VERSION {
            return Err(syntax(ln, "unsupported artifact version"));
        }
        let variant_name = p.field("variant")?;
        let variant = ControllerVariant::from_name(variant_name.1.trim())
            .ok_or_else(|| syntax(variant_name.0, "unknown variant"))?;
        let dt = p.scalar("dt_s")?;
        let delay_samples = p.scalar_usize("delay_samples")?;
        let predictive = p.scalar_usize("predictive")? != 0;
        let apex_max = p.scalar("apex_max_m")?;
        let state = p.list("state_scale")?;
        let input = p.list("input_scale")?;
        let output = p.list("output_scale")?;
        let ad = p.matrix("Ad")?;
        let bd = p.matrix("Bd")?;
        let cd = p.matrix("Cd")?;
        let l = p.matrix("L")?;
        let k = p.matrix("k")?;
        if input.len() != 1 {
            return Err(syntax(0, "input_scale must have one entry"));
        }
        let scaling = ScalingRecord { state, input: input[0], output, warnings: Vec::new() };
        let cfg = LqgConfig { dt, delay_samples, apex_max, predictive };
        Self::from_scaled(variant, &LqgMatrices { ad, bd, cd, l, k }, scaling, &cfg)
            .map_err(ArtifactError::Invalid)
    }
}

fn syntax(line: usize, msg: &str) -> ArtifactError {
    ArtifactError::Syntax { line: line + 1, message: String::from(msg) }
}

fn parse_tok<T: core::str::FromStr>(ln: usize, tok: Option<&str>) -> Result<T, ArtifactError> {
    tok.and_then(|t| t.parse().ok()).ok_or_else(|| syntax(ln, "malformed number"))
}

struct ArtifactParser<'a> {
    lines: core::iter::Peekable<core::iter::Enumerate<core::str::Lines<'a>>>,
}

impl<'a> ArtifactParser<'a> {
    fn line(&mut self) -> Result<(usize, &'a str), ArtifactError> {
        for (i, l) in self.lines.by_ref() {
            let t = l.trim();
            if !t.is_empty() && !t.starts_with('#') {
                return Ok((i, t));
            }
        }
        Err(syntax(usize::MAX - 1, "unexpected end of artifact"))
    }

    fn field(&mut self, key: &str) -> Result<(usize, &'a str), ArtifactError> {
        let (ln, l) = self.line()?;
        match l.split_once(char::is_whitespace) {
            Some((k, rest)) if k == key => Ok((ln, rest)),
            _ => Err(ArtifactError::Syntax { line: ln + 1, message: format!("expected `{key}`") }),
        }
    }

    fn scalar(&mut self, key: &str) -> Result<f64, ArtifactError> {
        let (ln, rest) = self.field(key)?;
        parse_tok(ln, Some(rest.trim()))
    }

    fn scalar_usize(&mut self, key: &str) -> Result<usize, ArtifactError> {
        let (ln, rest) = self.field(key)?;
        parse_tok(ln, Some(rest.trim()))
    }

    fn list(&mut self, key: &str) -> Result<Vec<f64>, ArtifactError> {
        let (ln, rest) = self.field(key)?;
        rest.split_whitespace().map(|t| parse_tok(ln, Some(t))).collect()
    }

    fn matrix(&mut self, key: &str) -> Result<DMatrix<f64>, ArtifactError> {
        let (ln, rest) = self.field(key)?;
        let mut it = rest.split_whitespace();
        let r: usize = parse_tok(ln, it.next())?;
        let c: usize = parse_tok(ln, it.next())?;
        if r > 64 || c > 64 {
            return Err(syntax(ln, "matrix too large"));
        }
        let mut m = DMatrix::zeros(r, c);
        for i in 0..r {
            let (ln, row) = self.line()?;
            let vals: Vec<f64> = row
                .split_whitespace()
                .map(|t| parse_tok(ln, Some(t)))
                .collect::<Result<_, _>>()?;
            if vals.len() != c {
                return Err(syntax(ln, "wrong number of matrix entries"));
            }
            for (j, v) in vals.into_iter().enumerate() {
                m[(i, j)] = v;
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::model::tests::table_model;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn cfg(delay: usize) -> LqgConfig {
        LqgConfig { dt: 32e-9, delay_samples: delay, apex_max: 1e-6, predictive: false }
    }

    fn weights() -> LqgWeights {
        LqgWeights { r_lqr: 1e3, q_z: 0.0 }
    }

    #[test]
    fn clipping_to_apex_bound() {
        // Volts in measurement space, converted with c_xx.
        let cxx = 2.7e6;
        let mut v = [0.0, 0.0, 0.15 / cxx, 0.0, 0.0];
        projection(&mut v, 2, 0.1 / cxx);
        assert_eq!(v[2], 0.1 / cxx);
        let mut w = [0.0, 0.0, -0.15 / cxx, 0.0, 0.0];
        projection(&mut w, 2, 0.1 / cxx);
        assert_eq!(w[2], -0.1 / cxx);
    }

    #[test]
    fn runtime_estimate_respects_bound() {
        let c = LqgConfig { apex_max: 0.1 / 2.7e6, ..cfg(0) };
        let (mut ctrl, _) = DiscreteLqg::design(&table_model(), ControllerVariant::Adaptive2D, &weights(), &c).unwrap();
        let mut peak: f64 = 0.0;
        for n in 0..200_000 {
            let chi = if n < 100_000 { 5.0 } else { -5.0 };
            ctrl.controller_step([chi, 0.0]);
            let a = ctrl.estimate_si()[2];
            assert!(a.abs() <= c.apex_max * (1.0 + 1e-12));
            peak = peak.max(a.abs());
        }
        assert!((peak - c.apex_max).abs() < 1e-12 * c.apex_max);
    }

    /// Noise-free linear plant identical to the controller's internal model.
    struct LinearPlant {
        ad: DMatrix<f64>,
        bd: DMatrix<f64>,
        cd: DMatrix<f64>,
        x: DVector<f64>,
    }

    impl LinearPlant {
        fn output(&self) -> [f64; 2] {
            let y = &self.cd * &self.x;
            [y[0], if y.len() > 1 { y[1] } else { 0.0 }]
        }

        fn advance(&mut self, u: f64, w: Option<&DVector<f64>>) {
            self.x = &self.ad * &self.x + &self.bd * u;
            if let Some(w) = w {
                self.x += w;
            }
        }
    }

    fn plant(variant: ControllerVariant, x0: &[f64]) -> (LinearPlant, LqgDesign) {
        let (_, d) = DiscreteLqg::design(&table_model(), variant, &weights(), &cfg(0)).unwrap();
        let p = LinearPlant {
            ad: d.discrete.ad.clone(),
            bd: d.discrete.bd.clone(),
            cd: d.discrete.cd.clone(),
            x: DVector::from_column_slice(x0),
        };
        (p, d)
    }

    fn si_slots(variant: ControllerVariant) -> Vec<usize> {
        variant
            .states()
            .iter()
            .map(|s| match s {
                StateKind::X => 0,
                StateKind::Vx => 1,
                StateKind::Apex => 2,
                StateKind::Z => 3,
                StateKind::Vz => 4,
            })
            .collect()
    }

    #[test]
    fn noise_free_estimation_error_vanishes() {
        let variant = ControllerVariant::Adaptive2D;
        let (mut p, _) = plant(variant, &[30e-9, 0.0, 10e-9, 20e-9, 1e-3]);
        let (mut ctrl, _) = DiscreteLqg::design(&table_model(), variant, &weights(), &cfg(0)).unwrap();
        let slots = si_slots(variant);
        let err = |ctrl: &DiscreteLqg, p: &LinearPlant| {
            let e = ctrl.estimate_si();
            slots.iter().enumerate().map(|(i, &s)| (p.x[i] - e[s]).abs()).fold(0.0, f64::max)
        };
        let mut u = 0.0;
        let mut early = 0.0;
        // A priori form: the sample at n sees the state after n updates.
        for n in 0..400_000 {
            p.advance(u, None);
            u = ctrl.controller_step(p.output());
            if n == 1000 {
                early = err(&ctrl, &p);
            }
        }
        let late = err(&ctrl, &p);
        assert!(late < 1e-6 * early, "{early} -> {late}");
    }

    #[test]
    fn non_adaptive_needs_static_force_off_apex() {
        // True plant: the Adaptive1D model with a constant apex offset.
        let delta = 10e-9;
        let cal = table_model();
        let (mut p, _) = plant(ControllerVariant::Adaptive1D, &[delta, 0.0, delta]);
        let (mut ctrl, design) = DiscreteLqg::design(&cal, ControllerVariant::NonAdaptive1D, &weights(), &cfg(0)).unwrap();
        let mut u = 0.0;
        for _ in 0..200_000 {
            p.advance(u, None);
            u = ctrl.controller_step(p.output());
        }
        // Oracle: fixed point of plant + estimator with constant apex.
        // Plant (x, v, Δ): z' = Ad z + Bd u ; estimator x̂' = (I − LC)(A x̂ + B u) + L C z'.
        let m = design.scaled.clone();
        let s = &design.scaling;
        let phys = super::super::normalize::remove_scaling(&m, s);
        let (a3, b3, c3) = (&p.ad, &p.bd, &p.cd);
        let id2 = DMatrix::<f64>::identity(2, 2);
        let lc = &phys.l * &phys.cd;
        let dim = 5;
        let mut f = DMatrix::<f64>::zeros(dim, dim);
        // u = k x̂
        f.view_mut((0, 0), (3, 3)).copy_from(a3);
        f.view_mut((0, 3), (3, 2)).copy_from(&(b3 * &phys.k));
        let lca = &phys.l * c3 * a3;
        f.view_mut((3, 0), (2, 3)).copy_from(&lca);
        let est = (&id2 - &lc) * (&phys.ad + &phys.bd * &phys.k) + &phys.l * c3 * b3 * &phys.k;
        f.view_mut((3, 3), (2, 2)).copy_from(&est);
        // Δ is the invariant direction: solve for the fixed point with Δ pinned.
        let mut sys = DMatrix::<f64>::identity(dim, dim) - &f;
        let mut rhs = DVector::<f64>::zeros(dim);
        for j in 0..dim {
            sys[(2, j)] = if j == 2 { 1.0 } else { 0.0 };
        }
        rhs[2] = delta;
        let z = sys.lu().solve(&rhs).unwrap();
        let u_star = (&phys.k * z.rows(3, 2))[(0, 0)];
        assert!(u_star.abs() > 0.0);
        assert!((u - u_star).abs() < 1e-6 * u_star.abs(), "{u} vs {u_star}");
        // At rest on the slope the force balances the potential gradient.
        let x = z[0];
        let balance = cal.cf_over_m[0] * u_star - cal.k_apex_over_m * (x - delta);
        assert!(balance.abs() < 1e-6 * (cal.cf_over_m[0] * u_star).abs());
        assert!(z[1].abs() < 1e-12);
    }

    #[test]
    fn separation_of_estimation_error() {
        let variant = ControllerVariant::Adaptive2D;
        let cal = table_model();
        let (ctrl_k, design) = DiscreteLqg::design(&cal, variant, &weights(), &cfg(0)).unwrap();
        let mut zero = design.scaled.clone();
        zero.k.fill(0.0);
        let ctrl_0 = DiscreteLqg::from_scaled(variant, &zero, design.scaling.clone(), &cfg(0)).unwrap();
        let chol = design.discrete.qd.clone().cholesky().map(|c| c.l());
        let qd_sqrt = chol.unwrap_or_else(|| {
            let e = design.discrete.qd.clone().symmetric_eigen();
            let d = e.eigenvalues.map(|v| v.max(0.0).sqrt());
            &e.eigenvectors * DMatrix::from_diagonal(&d)
        });
        let rd_sqrt: Vec<f64> = (0..2).map(|i| design.discrete.rd[(i, i)].sqrt()).collect();
        let slots = si_slots(variant);
        // Without feedback the plant diverges, so the horizon stays short.
        let run = |mut ctrl: DiscreteLqg| {
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let (mut p, _) = plant(variant, &[20e-9, 0.0, 5e-9, 10e-9, 0.0]);
            let mut u = 0.0;
            let mut errs = Vec::new();
            for _ in 0..500 {
                let w = DVector::from_fn(5, |_, _| rng.sample::<f64, _>(StandardNormal));
                p.advance(u, Some(&(&qd_sqrt * w)));
                let y = p.output();
                let v: [f64; 2] = core::array::from_fn(|i| rd_sqrt[i] * rng.sample::<f64, _>(StandardNormal));
                u = ctrl.controller_step([y[0] + v[0], y[1] + v[1]]);
                let e = ctrl.estimate_si();
                errs.push(slots.iter().enumerate().map(|(i, &s)| p.x[i] - e[s]).collect::<Vec<_>>());
            }
            errs
        };
        let a = run(ctrl_k);
        let b = run(ctrl_0);
        let scale: Vec<f64> = (0..5)
            .map(|i| (a.iter().map(|e| e[i] * e[i]).sum::<f64>() / a.len() as f64).sqrt())
            .collect();
        for (ea, eb) in a.iter().zip(&b) {
            for i in 0..5 {
                assert!((ea[i] - eb[i]).abs() <= 1e-10 * scale[i], "state {i}");
            }
        }
    }

    #[test]
    fn nonfinite_measurement_holds_command() {
        let (mut ctrl, _) = DiscreteLqg::design(&table_model(), ControllerVariant::Adaptive2D, &weights(), &cfg(2)).unwrap();
        for _ in 0..50 {
            ctrl.controller_step([0.01, 0.002]);
        }
        let held = ctrl.last_command;
        ctrl.controller_step([f64::NAN, 0.0]);
        assert_eq!(ctrl.faults(), 1);
        assert_eq!(ctrl.last_command, held);
        assert!(ctrl.estimate_si().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn delay_line_in_controller() {
        let (mut ctrl, _) = DiscreteLqg::design(&table_model(), ControllerVariant::NonAdaptive1D, &weights(), &cfg(13)).unwrap();
        let mut outs = Vec::new();
        let mut cmds = Vec::new();
        for n in 0..40 {
            outs.push(ctrl.controller_step([1e-3 * (n as f64).sin(), 0.0]));
            cmds.push(ctrl.last_command);
        }
        for n in 0..40 {
            let expect = if n >= 13 { cmds[n - 13] } else { 0.0 };
            assert_eq!(outs[n], expect);
        }
    }

    #[test]
    fn predictive_mode_matches_without_delay() {
        let (mut a, _) = DiscreteLqg::design(&table_model(), ControllerVariant::Adaptive2D, &weights(), &LqgConfig { predictive: true, ..cfg(0) }).unwrap();
        let (mut b, _) = DiscreteLqg::design(&table_model(), ControllerVariant::Adaptive2D, &weights(), &cfg(0)).unwrap();
        for n in 0..100 {
            let chi = [1e-3 * (0.1 * n as f64).sin(), 1e-3 * (0.07 * n as f64).cos()];
            assert_eq!(a.controller_step(chi), b.controller_step(chi));
        }
    }

    #[test]
    fn designs_are_stable_for_all_variants() {
        for v in ControllerVariant::ALL {
            let (ctrl, d) = DiscreteLqg::design(&table_model(), v, &weights(), &cfg(13)).unwrap();
            assert!(d.regulator_radius < 1.0 && d.estimator_radius < 1.0);
            assert!(d.delayed_radius < 1.0, "{v:?} {}", d.delayed_radius);
            assert_eq!(ctrl.matrices().n(), v.state_dim());
            assert_eq!(d.k_error.len(), if v.has_z() { 4 } else { 2 });
        }
    }

    #[test]
    fn artifact_round_trip() {
        for v in ControllerVariant::ALL {
            let (ctrl, _) = DiscreteLqg::design(&table_model(), v, &weights(), &LqgConfig { predictive: true, ..cfg(13) }).unwrap();
            let text = ctrl.to_artifact();
            let back = DiscreteLqg::from_artifact(&text).unwrap();
            assert_eq!(back.matrices(), ctrl.matrices());
            assert_eq!(back.scaling().state, ctrl.scaling().state);
            assert_eq!(back.to_artifact(), text);
            let (mut a, mut b) = (ctrl.clone(), back);
            for n in 0..100 {
                let chi = [1e-3 * (n as f64 * 0.3).sin(), 0.0];
                assert_eq!(a.controller_step(chi).to_bits(), b.controller_step(chi).to_bits());
            }
        }
    }

    #[test]
    fn artifact_errors() {
        assert!(matches!(DiscreteLqg::from_artifact("nonsense"), Err(ArtifactError::Syntax { .. })));
        let (ctrl, _) = DiscreteLqg::design(&table_model(), ControllerVariant::Adaptive1D, &weights(), &cfg(1)).unwrap();
        let text = ctrl.to_artifact().replace("variant adaptive_1d", "variant adaptive_2d");
        assert!(matches!(DiscreteLqg::from_artifact(&text), Err(ArtifactError::Invalid(_))));
        let cut: String = ctrl.to_artifact().lines().take(12).collect::<Vec<_>>().join("\n");
        assert!(DiscreteLqg::from_artifact(&cut).is_err());
    }

    fn apex_box(bound: f64) -> (Vec<f64>, Vec<f64>) {
        let mut lo = alloc::vec![f64::NEG_INFINITY; 5];
        let mut hi = alloc::vec![f64::INFINITY; 5];
        lo[2] = -bound;
        hi[2] = bound;
        (lo, hi)
    }

    fn dist(a: &[f64], b: &[f64]) -> f64 {
        a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
    }

    fn vec5() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(prop_oneof![-2.0..2.0f64, Just(1.0), Just(-1.0), Just(0.0)], 5)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]

        #[test]
        fn projection_is_non_expansive(a in vec5(), b in vec5()) {
            let (lo, hi) = apex_box(1.0);
            let (pa, pb) = (project_box(&a, &lo, &hi), project_box(&b, &lo, &hi));
            prop_assert!(dist(&pa, &pb) <= dist(&a, &b) + 1e-15);
            let mut ca = a.clone();
            projection(&mut ca, 2, 1.0);
            prop_assert_eq!(ca, pa);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(500))]

        #[test]
        fn projection_is_nearest_feasible_point(a in vec5(), seed in any::<u64>()) {
            let (lo, hi) = apex_box(1.0);
            let p = project_box(&a, &lo, &hi);
            prop_assert!(p[2].abs() <= 1.0);
            let d = dist(&a, &p);
            // Grid over the constrained coordinate, free coordinates at their optimum.
            for i in 0..=400 {
                let mut q = a.clone();
                q[2] = -1.0 + i as f64 / 200.0;
                prop_assert!(d <= dist(&a, &q) + 1e-15);
            }
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            for _ in 0..50 {
                let q: Vec<f64> = (0..5).map(|i| if i == 2 { rng.random_range(-1.0..=1.0) } else { rng.random_range(-3.0..3.0) }).collect();
                prop_assert!(d <= dist(&a, &q) + 1e-15);
            }
        }
    }
}
