//! The four verbs. Each writes its files under `out_dir` and returns the text
//! it wants printed.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use darktrap_core::analysis::{evaluate_criteria, welch_psd, windowed_pdf, CriteriaReport, Window};
use darktrap_core::consts::rad_to_hz;
use darktrap_core::control::{DiscreteLqg, LqgDesign};
use darktrap_core::dynamics::{Column, RunStatus};

use crate::checks::{self, Check};
use crate::error::CliError;
use crate::report;
use crate::run::simulate;
use crate::scenario::{ControllerSpec, Scenario, BUNDLED};
use crate::svg::{self, Series};
use crate::trace::{Format, Trace};

/// Figure ids accepted by `reproduce`.
pub const FIGURES: [&str; 2] = ["fig4", "fig5"];

/// Loads a scenario file, or a bundled scenario by name.
pub fn load_scenario(arg: &str) -> Result<Scenario, CliError> {
    let path = Path::new(arg);
    if path.is_file() {
        return Scenario::load(path);
    }
    if BUNDLED.iter().any(|(n, _)| *n == arg) {
        return Scenario::bundled(arg);
    }
    let names: Vec<&str> = BUNDLED.iter().map(|(n, _)| *n).collect();
    Err(CliError::Invalid(format!("`{arg}` is neither a scenario file nor a bundled scenario ({})", names.join(", "))))
}

pub fn apply_seed(scn: &mut Scenario, seed: Option<u64>) {
    if let Some(s) = seed {
        scn.run.seed = s;
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    std::fs::write(path, contents).map_err(|e| CliError::io(format!("writing {}", path.display()), e))
}

fn ensure_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(format!("creating {}", dir.display()), e))
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", items.join(", "))
}

fn fmt_eigs(e: impl Iterator<Item = (f64, f64)>) -> String {
    let items: Vec<String> =
        e.map(|(re, im)| if im == 0.0 { format!("{re:.4e}") } else { format!("{re:.4e}{im:+.4e}i") }).collect();
    items.join(", ")
}

pub fn design_report(scn: &Scenario, d: &LqgDesign) -> String {
    let mut s = String::new();
    let ControllerSpec::Lqg { apex_max_v, delay_samples, r_lqr, q_z, sigma_apex_walk, .. } = &scn.controller else {
        unreachable!("designs come from LQG scenarios")
    };
    let dt = 1.0 / (scn.run.controller_rate_mhz * 1e6);
    let c_xx = scn.detection.c_v_per_m[0][0];
    let _ = writeln!(s, "variant                 {}", d.variant.name());
    let _ = writeln!(s, "scenario                {} (sha256 {})", scn.name, scn.sha256_hex());
    let _ = writeln!(s, "weights                 r_lqr {r_lqr:e}, q_z {q_z:e}, apex walk {sigma_apex_walk:e}");
    let _ = writeln!(
        s,
        "sampling                {:.2} ns, delay {delay_samples} samples ({:.0} ns)",
        dt * 1e9,
        *delay_samples as f64 * dt * 1e9
    );
    let _ = writeln!(s, "apex bound              {:.2} nm ({apex_max_v} V)", apex_max_v / c_xx * 1e9);
    let _ = writeln!(s, "error-state gain k      {}", fmt_vec(d.k_error.as_slice()));
    let _ = writeln!(s, "regulator eigenvalues   {}", fmt_eigs(d.regulator_eigs.iter().map(|c| (c.re, c.im))));
    let _ = writeln!(s, "estimator eigenvalues   {}", fmt_eigs(d.estimator_eigs.iter().map(|c| (c.re, c.im))));
    let _ = writeln!(
        s,
        "spectral radii          regulator {:.9}, estimator {:.9}, loop with delay {:.9}",
        d.regulator_radius, d.estimator_radius, d.delayed_radius
    );
    let _ = writeln!(s, "slowest estimator tau   {:.4} ms", d.slowest_estimator_tau * 1e3);
    s
}

pub fn design(scn: &Scenario, out_dir: &Path) -> Result<String, CliError> {
    let res = scn.resolve()?;
    let (Some(variants), Some(inputs)) = (scn.variants(), res.lqg_inputs(&scn.controller)?) else {
        return Err(CliError::Invalid(format!("scenario `{}` has no LQG controller to design", scn.name)));
    };
    ensure_dir(out_dir)?;
    let mut out = String::new();
    for &v in variants {
        let (ctrl, d) = DiscreteLqg::design(&inputs.model, v, &inputs.weights, &inputs.config)
            .map_err(|e| CliError::Synthesis(format!("{}: {e}", v.name())))?;
        let text = design_report(scn, &d);
        let artifact = out_dir.join(format!("{}.controller.txt", v.name()));
        write(&artifact, ctrl.to_artifact())?;
        write(&out_dir.join(format!("{}.design.txt", v.name())), &text)?;
        out.push_str(&text);
        let _ = writeln!(out, "artifact                {}\n", artifact.display());
    }
    Ok(out)
}

fn trace_path(out_dir: &Path, scn: &Scenario, label: &str, fmt: Format) -> PathBuf {
    out_dir.join(format!("{}_{label}.{}", scn.name, fmt.extension()))
}

fn time_plot(trace: &Trace) -> String {
    let rec = &trace.record;
    let t = rec.col(Column::T);
    svg::line_plot(
        &format!("{} ({})", trace.variant, rec.status.name()),
        "t [s]",
        "[V]",
        &[Series { label: "chi_x", x: t, y: rec.col(Column::ChiX) }, Series { label: "u", x: t, y: rec.col(Column::U) }],
        false,
    )
}

/// Runs the scenario, writes one trace per controller and the effective
/// scenario. A lost particle is reported after all traces are written.
pub fn simulate_cmd(scn: &Scenario, out_dir: &Path, fmt: Format, plots: bool) -> Result<String, CliError> {
    let traces = simulate(scn)?;
    ensure_dir(out_dir)?;
    write(&out_dir.join(format!("{}.scenario.json", scn.name)), scn.to_json())?;
    let mut out = String::new();
    let mut lost = Vec::new();
    for t in &traces {
        let path = trace_path(out_dir, scn, &t.variant, fmt);
        t.save(&path, fmt)?;
        if plots {
            write(&path.with_extension("svg"), time_plot(t))?;
        }
        let _ = writeln!(
            out,
            "{:<16} {:<16} {:>8} samples  seed {}  -> {}",
            t.variant,
            t.record.status.name(),
            t.record.len(),
            t.record.seed,
            path.display()
        );
        if let RunStatus::ParticleLost { t: when } = t.record.status {
            lost.push(format!("{} at {:.3} ms", t.variant, when * 1e3));
        }
        if let RunStatus::NonFinite { t: when } = t.record.status {
            lost.push(format!("{} diverged at {:.3} ms", t.variant, when * 1e3));
        }
    }
    if lost.is_empty() {
        Ok(out)
    } else {
        print!("{out}");
        Err(CliError::ParticleLost(lost.join("; ")))
    }
}

/// Criteria, PSD and PDF tables for each trace.
pub fn analyze(files: &[PathBuf], scn: &Scenario, out_dir: &Path, plots: bool) -> Result<String, CliError> {
    if files.is_empty() {
        return Err(CliError::Invalid("no trace files given".into()));
    }
    let traces: Vec<(PathBuf, Trace)> =
        files.iter().map(|f| Trace::load(f).map(|t| (f.clone(), t))).collect::<Result<_, _>>()?;
    ensure_dir(out_dir)?;
    let cfg = scn.analysis.criteria();
    let mut out = String::new();
    for (path, trace) in &traces {
        let stem = path.file_stem().map_or_else(|| "trace".into(), |s| s.to_string_lossy().into_owned());
        let rec = &trace.record;
        let _ = writeln!(out, "== {}", path.display());
        let report = match evaluate_criteria(rec, &cfg) {
            Ok(r) => r,
            Err(e) => {
                let _ = writeln!(out, "record too short for analysis: {e}\n");
                continue;
            }
        };
        write(&out_dir.join(format!("{stem}_criteria.csv")), report::criteria_csv(&report))?;
        let summary = report::summary(trace, &report);
        write(&out_dir.join(format!("{stem}_summary.txt")), &summary)?;
        out.push_str(&summary);

        let seg = scn.analysis.psd_segment.min(rec.len());
        let psd = |c| welch_psd(rec.col(c), rec.sample_rate_hz, seg, 0.5, Window::Hann);
        if let (Ok(px), Ok(pz)) = (psd(Column::ChiX), psd(Column::ChiZ)) {
            write(&out_dir.join(format!("{stem}_psd.csv")), report::psd_csv(&[("chi_x", &px), ("chi_z", &pz)]))?;
            if plots {
                let svg = svg::line_plot(
                    &format!("{stem} PSD"),
                    "f [Hz]",
                    "PSD [V^2/Hz]",
                    &[Series { label: "chi_x", x: &px.freq, y: &px.density }, Series { label: "chi_z", x: &pz.freq, y: &pz.density }],
                    true,
                );
                write(&out_dir.join(format!("{stem}_psd.svg")), svg)?;
            }
        }
        if let Ok(pdf) = windowed_pdf(rec.col(Column::ChiX), rec.sample_rate_hz, cfg.t_avg, cfg.bins, &cfg.modes) {
            write(&out_dir.join(format!("{stem}_pdf.csv")), report::pdf_csv(&pdf))?;
            if plots {
                write(&out_dir.join(format!("{stem}_pdf.svg")), svg::pdf_heatmap(&format!("{stem} chi_x PDF"), &pdf))?;
            }
        }
        out.push('\n');
    }
    Ok(out)
}

fn summary_row(label: &str, r: &CriteriaReport) -> String {
    format!(
        "{label},{:e},{:e},{:e},{:e},{:e}\n",
        checks::window_std_chi(r),
        r.unimodal_fraction(),
        r.zero_mean_fraction(),
        r.no_well_peak_fraction(),
        r.stabilized_fraction()
    )
}

/// Runs the three-variant drift scenario and writes the tables behind one figure.
pub fn reproduce(id: &str, scn: &Scenario, out_dir: &Path, plots: bool) -> Result<(String, Check), CliError> {
    if !FIGURES.contains(&id) {
        return Err(CliError::Invalid(format!("unknown figure id `{id}`; valid ids: {}", FIGURES.join(", "))));
    }
    let traces = simulate(scn)?;
    ensure_dir(out_dir)?;
    let mut out = String::new();
    let _ = writeln!(out, "scenario {} (seed {}, sha256 {})", scn.name, scn.run.seed, scn.sha256_hex());
    let lost: Vec<String> = traces
        .iter()
        .filter(|t| t.record.status != RunStatus::Completed)
        .map(|t| format!("{}: {}", t.variant, t.record.status.name()))
        .collect();
    if !lost.is_empty() {
        print!("{out}");
        return Err(CliError::ParticleLost(lost.join("; ")));
    }
    let cfg = scn.analysis.criteria();
    let check = if id == "fig4" {
        let mut table = String::from("variant,std_chi_x[V],unimodal_fraction,zero_mean_fraction,no_well_peak_fraction,stabilized_fraction\n");
        for t in &traces {
            let rep = evaluate_criteria(&t.record, &cfg).map_err(|e| CliError::Invalid(format!("{}: {e}", t.variant)))?;
            let pdf = windowed_pdf(t.record.col(Column::ChiX), t.record.sample_rate_hz, cfg.t_avg, cfg.bins, &cfg.modes)
                .map_err(|e| CliError::Invalid(format!("{}: {e}", t.variant)))?;
            write(&out_dir.join(format!("fig4_{}_pdf.csv", t.variant)), report::pdf_csv(&pdf))?;
            write(&out_dir.join(format!("fig4_{}_criteria.csv", t.variant)), report::criteria_csv(&rep))?;
            if plots {
                write(&out_dir.join(format!("fig4_{}_pdf.svg", t.variant)), svg::pdf_heatmap(&t.variant, &pdf))?;
            }
            table.push_str(&summary_row(&t.variant, &rep));
            let _ = writeln!(
                out,
                "{:<16} std(chi_x) {:6.1} mV  stabilized {:5.1}%  {}",
                t.variant,
                checks::window_std_chi(&rep) * 1e3,
                rep.stabilized_fraction() * 100.0,
                report::timeline(&rep)
            );
        }
        write(&out_dir.join("fig4_summary.csv"), table)?;
        checks::controller_comparison(scn, &traces)?
    } else {
        let t0 = scn.drift_settled_s().unwrap_or(0.0);
        let psds = checks::sustained_psds(scn, &traces, t0)?;
        let named: Vec<(&str, &_)> = traces.iter().map(|t| t.variant.as_str()).zip(psds.iter()).collect();
        write(&out_dir.join("fig5_psd_chi_x.csv"), report::psd_csv(&named))?;
        let z: Vec<_> = traces
            .iter()
            .map(|t| {
                let seg = t.record.slice_time(t0, f64::INFINITY);
                welch_psd(seg.col(Column::ChiZ), seg.sample_rate_hz, scn.analysis.psd_segment, 0.5, Window::Hann)
                    .map_err(|e| CliError::Invalid(format!("{}: {e}", t.variant)))
            })
            .collect::<Result<_, _>>()?;
        let named_z: Vec<(&str, &_)> = traces.iter().map(|t| t.variant.as_str()).zip(z.iter()).collect();
        write(&out_dir.join("fig5_psd_chi_z.csv"), report::psd_csv(&named_z))?;
        if plots {
            for (file, set) in [("fig5_psd_chi_x.svg", &named), ("fig5_psd_chi_z.svg", &named_z)] {
                let series: Vec<Series> =
                    set.iter().map(|(l, p)| Series { label: l, x: &p.freq, y: &p.density }).collect();
                let svg = svg::line_plot(
                    &format!("PSD from {:.0} ms", t0 * 1e3),
                    "f [Hz]",
                    "PSD [V^2/Hz]",
                    &series,
                    true,
                );
                write(&out_dir.join(file), svg)?;
            }
        }
        let _ = writeln!(
            out,
            "PSDs from t = {:.0} ms, resolution {:.0} Hz, well band at {:.1} kHz",
            t0 * 1e3,
            psds.first().map_or(f64::NAN, |p| p.resolution()),
            rad_to_hz(cfg.omega_well) / 1e3
        );
        checks::spectral(scn, &traces)?
    };
    out.push_str(&check.to_string());
    Ok((out, check))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_scenario_lists_bundled_names() {
        let e = load_scenario("no_such_scenario").unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("drift"));
    }

    #[test]
    fn unknown_figure_is_invalid() {
        let scn = Scenario::bundled("drift").unwrap();
        let dir = tempfile::tempdir().unwrap();
        let e = reproduce("fig9", &scn, dir.path(), false).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("fig4, fig5"));
    }

    #[test]
    fn design_needs_lqg() {
        let dir = tempfile::tempdir().unwrap();
        let e = design(&Scenario::bundled("harmonic").unwrap(), dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn seed_override_changes_hash() {
        let mut s = Scenario::bundled("default").unwrap();
        let h = s.sha256();
        apply_seed(&mut s, Some(99));
        assert_eq!(s.run.seed, 99);
        assert_ne!(s.sha256(), h);
    }
}
