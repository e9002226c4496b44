//! CSV tables and text summaries of analysis results.

use std::fmt::Write as _;

use darktrap_core::analysis::{CriteriaReport, PdfEvolution, Psd};
use darktrap_core::dynamics::Column;

use crate::trace::Trace;

pub fn criteria_csv(report: &CriteriaReport) -> String {
    let mut s = String::from(
        "t_start[s],unimodal,zero_mean_force,no_well_peak,stabilized,mean_chi_x[V],std_chi_x[V],mean_u[V],std_u[V],well_peak_ratio\n",
    );
    for w in &report.windows {
        let _ = writeln!(
            s,
            "{:e},{},{},{},{},{:e},{:e},{:e},{:e},{:e}",
            w.t_start,
            w.unimodal as u8,
            w.zero_mean_force as u8,
            w.no_well_peak as u8,
            w.stabilized as u8,
            w.mean_chi_x,
            w.std_chi_x,
            w.mean_u,
            w.std_u,
            w.peak_ratio
        );
    }
    s
}

/// One frequency column followed by one density column per named PSD. All
/// PSDs must share the frequency grid.
pub fn psd_csv(series: &[(&str, &Psd)]) -> String {
    let mut s = String::from("freq[Hz]");
    for (name, _) in series {
        let _ = write!(s, ",{name}[V^2/Hz]");
    }
    s.push('\n');
    let Some((_, first)) = series.first() else {
        return s;
    };
    for (i, f) in first.freq.iter().enumerate() {
        let _ = write!(s, "{f:e}");
        for (_, p) in series {
            let _ = write!(s, ",{:e}", p.density.get(i).copied().unwrap_or(f64::NAN));
        }
        s.push('\n');
    }
    s
}

/// Long format: one row per window and bin.
pub fn pdf_csv(pdf: &PdfEvolution) -> String {
    let mut s = String::from("t_start[s],bin_center[V],density[1/V],modes\n");
    for w in &pdf.windows {
        let d = w.hist.density();
        for (c, p) in w.hist.centers().iter().zip(d) {
            let _ = writeln!(s, "{:e},{c:e},{p:e},{}", w.t_start, w.modes);
        }
    }
    s
}

/// Human-readable block with the stabilized fractions and record statistics.
pub fn summary(trace: &Trace, report: &CriteriaReport) -> String {
    let rec = &trace.record;
    let mut s = String::new();
    let _ = writeln!(s, "variant           {}", trace.variant);
    let _ = writeln!(s, "seed              {}", rec.seed);
    let _ = writeln!(s, "scenario sha256   {}", hex::encode(trace.scenario_sha256));
    let status = match rec.status {
        darktrap_core::dynamics::RunStatus::Completed => "completed".to_string(),
        other => format!("{} at {:.3} ms", other.name(), status_time(other) * 1e3),
    };
    let _ = writeln!(s, "status            {status}");
    let _ = writeln!(s, "samples           {} at {:.4} MHz", rec.len(), rec.sample_rate_hz / 1e6);
    let n = report.windows.len();
    let _ = writeln!(s, "windows           {n} x {:.1} ms", report.config.t_avg * 1e3);
    let frac = |f: f64| format!("{:5.1}%  ({}/{n})", 100.0 * f, (f * n as f64).round() as usize);
    let _ = writeln!(s, "unimodal          {}", frac(report.unimodal_fraction()));
    let _ = writeln!(s, "zero-mean force   {}", frac(report.zero_mean_fraction()));
    let _ = writeln!(s, "no well peak      {}", frac(report.no_well_peak_fraction()));
    let _ = writeln!(s, "stabilized        {}", frac(report.stabilized_fraction()));
    if n > 0 {
        let mean_std = report.windows.iter().map(|w| w.std_chi_x).sum::<f64>() / n as f64;
        let _ = writeln!(s, "std(chi_x)        {:.1} mV (mean of window std)", mean_std * 1e3);
    }
    let _ = writeln!(s, "timeline          {}", timeline(report));
    if !rec.is_empty() {
        let (_, sx) = darktrap_core::analysis::mean_std(rec.col(Column::X));
        let _ = writeln!(s, "std(x)            {:.1} nm", sx * 1e9);
    }
    s
}

/// One character per window: `+` stabilized, `-` not.
pub fn timeline(report: &CriteriaReport) -> String {
    report.windows.iter().map(|w| if w.stabilized { '+' } else { '-' }).collect()
}

fn status_time(s: darktrap_core::dynamics::RunStatus) -> f64 {
    use darktrap_core::dynamics::RunStatus::*;
    match s {
        Completed => f64::NAN,
        ParticleLost { t } | NonFinite { t } => t,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use darktrap_core::analysis::{windowed_pdf, ModeConfig, WindowCriteria, CriteriaConfig, welch_psd, Window};

    #[test]
    fn criteria_table_has_one_row_per_window() {
        let w = WindowCriteria {
            t_start: 0.0,
            unimodal: true,
            zero_mean_force: false,
            no_well_peak: true,
            stabilized: false,
            mean_chi_x: 0.0,
            std_chi_x: 0.1,
            mean_u: 0.5,
            std_u: 0.2,
            peak_ratio: 1.0,
        };
        let rep = CriteriaReport { config: CriteriaConfig::default(), windows: vec![w, WindowCriteria { t_start: 3e-3, ..w }] };
        let csv = criteria_csv(&rep);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0e0,1,0,1,0,"));
        assert_eq!(timeline(&rep), "--");
    }

    #[test]
    fn psd_and_pdf_tables() {
        let x: Vec<f64> = (0..4096).map(|i| ((i * 7919) % 101) as f64 / 101.0 - 0.5).collect();
        let p = welch_psd(&x, 1e3, 256, 0.5, Window::Hann).unwrap();
        let csv = psd_csv(&[("a", &p), ("b", &p)]);
        assert_eq!(csv.lines().count(), 1 + p.freq.len());
        assert!(csv.starts_with("freq[Hz],a[V^2/Hz],b[V^2/Hz]\n"));
        let pdf = windowed_pdf(&x, 1e3, 1.0, 20, &ModeConfig::default()).unwrap();
        assert_eq!(pdf_csv(&pdf).lines().count(), 1 + 4 * 20);
    }
}
