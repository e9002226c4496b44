//! Controller construction and closed-loop runs for a scenario.

use darktrap_core::control::{DiscreteLqg, LqgDesign};
use darktrap_core::dynamics::{run_closed_loop, BiasController, Controller, ToneDriver, ZeroController};

use crate::error::CliError;
use crate::scenario::{ControllerSpec, Resolved, Scenario};
use crate::trace::Trace;

/// A controller ready to run, with its synthesis record when designed inline.
pub struct Prepared {
    pub label: String,
    pub controller: Box<dyn Controller + Send>,
    pub design: Option<LqgDesign>,
}

/// One controller per variant for LQG scenarios, otherwise exactly one.
pub fn prepare(scn: &Scenario, res: &Resolved) -> Result<Vec<Prepared>, CliError> {
    let dt = res.loop_cfg.controller_dt_s;
    let single = |label: &str, controller: Box<dyn Controller + Send>| {
        Ok(vec![Prepared { label: label.to_string(), controller, design: None }])
    };
    match &scn.controller {
        spec @ ControllerSpec::Lqg { variants, .. } => {
            if variants.is_empty() {
                return Err(CliError::Invalid(format!("scenario `{}`: controller.variants is empty", scn.name)));
            }
            let inputs = res.lqg_inputs(spec)?.expect("LQG spec");
            variants
                .iter()
                .map(|&v| {
                    let (ctrl, design) = DiscreteLqg::design(&inputs.model, v, &inputs.weights, &inputs.config)
                        .map_err(|e| CliError::Synthesis(format!("{}: {e}", v.name())))?;
                    Ok(Prepared { label: v.name().to_string(), controller: Box::new(ctrl), design: Some(design) })
                })
                .collect()
        }
        ControllerSpec::Artifact { path } => {
            let path = scn.resolve_path(path);
            let text = std::fs::read_to_string(&path)
                .map_err(|e| CliError::Invalid(format!("cannot read controller artifact {}: {e}", path.display())))?;
            let ctrl = DiscreteLqg::from_artifact(&text)
                .map_err(|e| CliError::Invalid(format!("controller artifact {}: {e}", path.display())))?;
            if ((ctrl.dt() - dt) / dt).abs() > 1e-9 {
                return Err(CliError::Invalid(format!(
                    "controller artifact samples at {:e} s but the scenario runs at {dt:e} s",
                    ctrl.dt()
                )));
            }
            let label = ctrl.variant().name().to_string();
            single(&label, Box::new(ctrl))
        }
        ControllerSpec::Zero {} => single("zero", Box::new(ZeroController)),
        ControllerSpec::Bias { u_v } => single("bias", Box::new(BiasController(*u_v))),
        ControllerSpec::Tones { tones } => {
            let tones = tones.iter().map(|t| (t.amplitude_v, t.freq_hz)).collect();
            single("tones", Box::new(ToneDriver::new(tones, dt)))
        }
    }
}

pub fn run_one(res: &Resolved, mut p: Prepared, sha: [u8; 32]) -> Result<Trace, CliError> {
    let record = run_closed_loop(&res.potential, &res.particle, &res.detection, &res.drift, &res.loop_cfg, p.controller.as_mut())
        .map_err(|e| CliError::Invalid(format!("{}: {e}", p.label)))?;
    Ok(Trace { record, scenario_sha256: sha, variant: p.label })
}

/// Runs every controller of the scenario, one thread each. Every run seeds
/// its own noise streams from the scenario seed, so the variants see the same
/// noise realization.
pub fn simulate(scn: &Scenario) -> Result<Vec<Trace>, CliError> {
    let res = scn.resolve()?;
    let prepared = prepare(scn, &res)?;
    let sha = scn.sha256();
    std::thread::scope(|s| {
        let handles: Vec<_> = prepared.into_iter().map(|p| s.spawn(|| run_one(&res, p, sha))).collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(CliError::Other("simulation thread panicked".into()))))
            .collect()
    })
}
