// SPDX-License-Identifier: Apache-2.0

//! Readout and initialization time extraction from contrast-versus-delay
//! traces, and log-quadratic fits of those times against intensity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::photophysics::{Intensity, LogQuadraticCurve};

/// PL contrast `(ref - sig) / ref`.
pub fn contrast(sig_pl: f64, ref_pl: f64) -> Result<f64> {
    if !(ref_pl > 0.0 && ref_pl.is_finite()) {
        return Err(Error::domain(format!("reference PL must be > 0, got {ref_pl}")));
    }
    Ok((ref_pl - sig_pl) / ref_pl)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSample {
    pub t_sweep: f64,
    pub sig_pl: f64,
    pub ref_pl: f64,
}

/// Signal/reference PL versus laser delay at one intensity.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationTrace {
    intensity: Intensity,
    samples: Vec<TraceSample>,
}

pub const TRACE_CSV_HEADER: &str = "t_sweep_us,sig_pl,ref_pl";

impl CalibrationTrace {
    pub fn new(intensity: Intensity, samples: Vec<TraceSample>) -> Result<Self> {
        for (k, s) in samples.iter().enumerate() {
            if !(s.t_sweep.is_finite() && s.t_sweep >= 0.0) {
                return Err(Error::domain(format!("sample {k}: t_sweep must be finite and >= 0, got {}", s.t_sweep)));
            }
            if k > 0 && s.t_sweep <= samples[k - 1].t_sweep {
                return Err(Error::domain(format!("sample {k}: t_sweep not strictly increasing")));
            }
            if !(s.ref_pl > 0.0 && s.ref_pl.is_finite() && s.sig_pl.is_finite()) {
                return Err(Error::domain(format!(
                    "sample {k}: need finite PL with ref_pl > 0, got sig {} ref {}",
                    s.sig_pl, s.ref_pl
                )));
            }
        }
        Ok(CalibrationTrace { intensity, samples })
    }

    pub fn intensity(&self) -> Intensity {
        self.intensity
    }

    pub fn samples(&self) -> &[TraceSample] {
        &self.samples
    }

    pub fn contrasts(&self) -> Vec<f64> {
        self.samples.iter().map(|s| (s.ref_pl - s.sig_pl) / s.ref_pl).collect()
    }

    pub fn from_csv(intensity: Intensity, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == TRACE_CSV_HEADER => {}
            _ => {
                return Err(Error::domain(format!("trace CSV must start with header `{TRACE_CSV_HEADER}`")));
            }
        }
        let mut samples = Vec::new();
        for (n, line) in lines {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let num = |s: &str| {
                s.parse::<f64>().map_err(|_| Error::domain(format!("trace line {}: malformed number '{s}'", n + 1)))
            };
            if cols.len() != 3 {
                return Err(Error::domain(format!("trace line {}: expected 3 columns", n + 1)));
            }
            samples.push(TraceSample { t_sweep: num(cols[0])?, sig_pl: num(cols[1])?, ref_pl: num(cols[2])? });
        }
        Self::new(intensity, samples)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{TRACE_CSV_HEADER}\n");
        for s in &self.samples {
            out.push_str(&format!("{},{},{}\n", s.t_sweep, s.sig_pl, s.ref_pl));
        }
        out
    }

    fn check_extractable(&self) -> Result<(Vec<f64>, usize, f64)> {
        if self.samples.len() < 3 {
            return Err(Error::Extraction(format!("need at least 3 samples, got {}", self.samples.len())));
        }
        let c = self.contrasts();
        let (peak_index, peak) = c
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, v)| if v > best.1 { (k, v) } else { best });
        if !(peak > 0.0) {
            return Err(Error::Extraction("contrast has no positive peak".into()));
        }
        Ok((c, peak_index, peak))
    }
}

/// First delay after the contrast peak at which contrast falls to
/// `peak / e³`, linearly interpolated between the bracketing samples.
pub fn extract_init_time(trace: &CalibrationTrace) -> Result<f64> {
    let (c, peak_index, peak) = trace.check_extractable()?;
    let threshold = peak * (-3f64).exp();
    let s = trace.samples();
    for j in peak_index + 1..c.len() {
        if c[j] <= threshold {
            let (c0, c1) = (c[j - 1], c[j]);
            let (t0, t1) = (s[j - 1].t_sweep, s[j].t_sweep);
            let frac = if c0 > c1 { (c0 - threshold) / (c0 - c1) } else { 1.0 };
            return Ok(t0 + frac * (t1 - t0));
        }
    }
    Err(Error::Extraction(format!("contrast never decays to {threshold} (peak/e^3) within the trace; trace too short")))
}

/// What "contrast" means in the readout-time objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ContrastMode {
    /// Mean contrast over the readout window `[t_0, t]`.
    #[default]
    WindowAverage,
    /// Contrast of the sample at `t`.
    Instantaneous,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReadoutExtraction {
    pub t_ro: f64,
    pub objective: f64,
    /// False when the objective peaks at the last sample.
    pub interior_maximum: bool,
}

/// Running trapezoid integral of `y(t)` starting at the first sample.
fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(t.len());
    out.push(0.0);
    for k in 1..t.len() {
        acc += 0.5 * (y[k] + y[k - 1]) * (t[k] - t[k - 1]);
        out.push(acc);
    }
    out
}

/// Delay maximizing `contrast * sqrt(photons)`, with photons the cumulative
/// reference count. Ties go to the shorter delay.
pub fn extract_readout_time(trace: &CalibrationTrace, mode: ContrastMode) -> Result<ReadoutExtraction> {
    let (c, _, _) = trace.check_extractable()?;
    let s = trace.samples();
    let t: Vec<f64> = s.iter().map(|x| x.t_sweep).collect();
    let flux: Vec<f64> = s.iter().map(|x| x.ref_pl).collect();
    let photons = cumulative_trapezoid(&t, &flux);
    let contrast_integral = cumulative_trapezoid(&t, &c);

    let mut best = (0, f64::NEG_INFINITY);
    for k in 1..t.len() {
        let window = t[k] - t[0];
        let cbar = match mode {
            ContrastMode::WindowAverage => contrast_integral[k] / window,
            ContrastMode::Instantaneous => c[k],
        };
        let objective = cbar * photons[k].max(0.0).sqrt();
        if objective > best.1 {
            best = (k, objective);
        }
    }
    Ok(ReadoutExtraction { t_ro: t[best.0], objective: best.1, interior_maximum: best.0 + 1 < t.len() })
}

#[derive(Debug, Clone, PartialEq)]
pub enum ExtractionWarning {
    NoInteriorMaximum,
    InitShorterThanReadout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtractedTimes {
    pub t_ro: f64,
    pub t_init: f64,
    pub peak_contrast: f64,
    pub warnings: Vec<ExtractionWarning>,
}

pub fn extract_times(trace: &CalibrationTrace, mode: ContrastMode) -> Result<ExtractedTimes> {
    let (_, _, peak_contrast) = trace.check_extractable()?;
    let ro = extract_readout_time(trace, mode)?;
    let t_init = extract_init_time(trace)?;
    let mut warnings = Vec::new();
    if !ro.interior_maximum {
        warnings.push(ExtractionWarning::NoInteriorMaximum);
    }
    if t_init < ro.t_ro {
        warnings.push(ExtractionWarning::InitShorterThanReadout);
    }
    Ok(ExtractedTimes { t_ro: ro.t_ro, t_init, peak_contrast, warnings })
}

impl ExtractedTimes {
    /// Flat `key = value` report.
    pub fn report(&self, intensity: Intensity, mode: ContrastMode) -> String {
        let warnings: Vec<&str> = self
            .warnings
            .iter()
            .map(|w| match w {
                ExtractionWarning::NoInteriorMaximum => "no_interior_maximum",
                ExtractionWarning::InitShorterThanReadout => "init_shorter_than_readout",
            })
            .collect();
        format!(
            "intensity_mw_per_um2 = {}\ncontrast_mode = {}\nt_ro_us = {}\nt_init_us = {}\npeak_contrast = {}\nwarnings = {}\n",
            intensity.value(),
            match mode {
                ContrastMode::WindowAverage => "window_average",
                ContrastMode::Instantaneous => "instantaneous",
            },
            self.t_ro,
            self.t_init,
            self.peak_contrast,
            if warnings.is_empty() { "none".to_string() } else { warnings.join(",") }
        )
    }
}

/// Least-squares fit of `log10 t = a + b x + c x²`, `x = log10 I`.
pub fn fit_log_quadratic(points: &[(Intensity, f64)]) -> Result<LogQuadraticCurve> {
    for &(i, t) in points {
        if !(i.value() > 0.0 && t > 0.0 && t.is_finite() && i.value().is_finite()) {
            return Err(Error::domain(format!(
                "fit points need positive intensity and duration, got ({}, {t})",
                i.value()
            )));
        }
    }
    let mut distinct: Vec<f64> = points.iter().map(|(i, _)| i.value()).collect();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 3 {
        return Err(Error::Underdetermined(format!("need at least 3 distinct intensities, got {}", distinct.len())));
    }
    let n = points.len();
    let design = DMatrix::from_fn(n, 3, |r, c| points[r].0.value().log10().powi(c as i32));
    let rhs = DVector::from_iterator(n, points.iter().map(|(_, t)| t.log10()));
    let coef = design.svd(true, true).solve(&rhs, 1e-14).map_err(|e| Error::Underdetermined(e.to_string()))?;
    Ok(LogQuadraticCurve::new(coef[0], coef[1], coef[2]))
}

/// Residuals `log10 t - curve(I)` of each point.
pub fn log_residuals(curve: &LogQuadraticCurve, points: &[(Intensity, f64)]) -> Vec<f64> {
    points.iter().map(|(i, t)| t.log10() - curve.log10_duration(i.value())).collect()
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;

    fn i(v: f64) -> Intensity {
        Intensity::new(v).unwrap()
    }

    /// Noiseless exponential-contrast trace with constant flux.
    fn exp_trace(tau: f64, step: f64, t_max: f64) -> CalibrationTrace {
        let n = (t_max / step).round() as usize;
        let samples = (0..=n)
            .map(|k| {
                let t = k as f64 * step;
                let c = 0.03 * (-t / tau).exp();
                TraceSample { t_sweep: t, sig_pl: 10.0 * (1.0 - c), ref_pl: 10.0 }
            })
            .collect();
        CalibrationTrace::new(i(1.0), samples).unwrap()
    }

    /// Closed-form objective (1 - e^-x)/sqrt(x) scanned on a fine grid.
    fn brute_force_x_star() -> f64 {
        (1..=400_000)
            .map(|k| k as f64 * 1e-5)
            .map(|x| (x, (1.0 - (-x).exp()) / x.sqrt()))
            .fold((0.0, f64::NEG_INFINITY), |b, p| if p.1 > b.1 { p } else { b })
            .0
    }

    #[test]
    fn contrast_examples() {
        assert!((contrast(0.9, 1.0).unwrap() - 0.1).abs() < 1e-15);
        assert_eq!(contrast(1.0, 1.0).unwrap(), 0.0);
        assert!((contrast(0.97, 1.0).unwrap() - 0.03).abs() < 1e-15);
        assert!(contrast(1.0, 0.0).is_err());
    }

    #[test]
    fn init_time_is_three_tau() {
        let step = 0.01;
        for tau in [3.0, 10.0] {
            let t = extract_init_time(&exp_trace(tau, step, 6.0 * tau)).unwrap();
            assert!((t - 3.0 * tau).abs() <= step, "tau {tau}: {t}");
        }
    }

    #[test]
    fn constant_contrast_fails_init_extraction() {
        let samples = (0..10).map(|k| TraceSample { t_sweep: k as f64, sig_pl: 0.97, ref_pl: 1.0 }).collect();
        let trace = CalibrationTrace::new(i(1.0), samples).unwrap();
        assert!(matches!(extract_init_time(&trace), Err(Error::Extraction(_))));
        let ro = extract_readout_time(&trace, ContrastMode::WindowAverage).unwrap();
        assert_eq!(ro.t_ro, 9.0);
        assert!(!ro.interior_maximum);
    }

    #[test]
    fn readout_time_matches_closed_form() {
        let x_star = brute_force_x_star();
        assert!((x_star - 1.256431208626).abs() < 2e-5);
        for tau in [3.0, 10.0] {
            let ro = extract_readout_time(&exp_trace(tau, 0.005, 4.0 * tau), ContrastMode::WindowAverage).unwrap();
            assert!(ro.interior_maximum);
            assert!((ro.t_ro / (x_star * tau) - 1.0).abs() < 0.01, "tau {tau}: {}", ro.t_ro);
        }
    }

    #[test]
    fn instantaneous_mode_peaks_earlier() {
        // c(t) sqrt(t) peaks at t = tau/2 for an exponential.
        let ro = extract_readout_time(&exp_trace(3.0, 0.005, 12.0), ContrastMode::Instantaneous).unwrap();
        assert!((ro.t_ro - 1.5).abs() < 0.01);
    }

    #[test]
    fn trace_validation() {
        let s = |t: f64, r: f64| TraceSample { t_sweep: t, sig_pl: 1.0, ref_pl: r };
        assert!(CalibrationTrace::new(i(1.0), vec![s(-1.0, 1.0), s(0.0, 1.0)]).is_err());
        assert!(CalibrationTrace::new(i(1.0), vec![s(0.0, 1.0), s(0.0, 1.0)]).is_err());
        assert!(CalibrationTrace::new(i(1.0), vec![s(0.0, 0.0)]).is_err());
        let short = CalibrationTrace::new(i(1.0), vec![s(0.0, 2.0), s(1.0, 2.0)]).unwrap();
        assert!(extract_init_time(&short).is_err());
    }

    #[test]
    fn csv_roundtrip() {
        let trace = exp_trace(3.0, 0.5, 5.0);
        let back = CalibrationTrace::from_csv(i(1.0), &trace.to_csv()).unwrap();
        assert_eq!(back, trace);
        assert!(CalibrationTrace::from_csv(i(1.0), "t,s,r\n0,1,1\n").is_err());
        assert!(CalibrationTrace::from_csv(i(1.0), "t_sweep_us,sig_pl,ref_pl\n0,x,1\n").is_err());
    }

    #[test]
    fn fit_recovers_noiseless_coefficients() {
        let truth = LogQuadraticCurve::new(1.0, -0.8, 0.05);
        let pts: Vec<(Intensity, f64)> =
            crate::photophysics::log_space(0.001, 10.0, 10).into_iter().map(|v| (i(v), truth.duration(v))).collect();
        let fit = fit_log_quadratic(&pts).unwrap();
        assert!((fit.a - 1.0).abs() < 1e-9);
        assert!((fit.b + 0.8).abs() < 1e-9);
        assert!((fit.c - 0.05).abs() < 1e-9);
        assert!(log_residuals(&fit, &pts).iter().all(|r| r.abs() < 1e-9));
    }

    #[test]
    fn three_points_interpolate_exactly() {
        let pts = [(i(0.01), 300.0), (i(0.5), 7.0), (i(4.0), 2.0)];
        let fit = fit_log_quadratic(&pts).unwrap();
        assert!(log_residuals(&fit, &pts).iter().all(|r| r.abs() < 1e-12));
    }

    #[test]
    fn fit_errors() {
        let pts = [(i(0.1), 3.0), (i(0.1), 4.0), (i(1.0), 2.0)];
        assert!(matches!(fit_log_quadratic(&pts), Err(Error::Underdetermined(_))));
        let pts = [(i(0.1), 3.0), (i(0.2), -4.0), (i(1.0), 2.0)];
        assert!(matches!(fit_log_quadratic(&pts), Err(Error::Domain(_))));
        let pts = [(i(0.0), 3.0), (i(0.2), 4.0), (i(1.0), 2.0)];
        assert!(matches!(fit_log_quadratic(&pts), Err(Error::Domain(_))));
    }
}
