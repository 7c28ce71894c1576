// SPDX-License-Identifier: Apache-2.0

//! Intensity-dependent NV timescales, photon flux and spin contrast.
//!
//! All quantities use canonical units: intensity in mW/um², durations in
//! us, photon rates in counts/us.

use crate::error::{Error, Result, non_negative, positive};

/// Laser intensity in mW/um².
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Intensity(f64);

impl Intensity {
    pub fn new(value: f64) -> Result<Self> {
        non_negative("intensity", value).map(Intensity)
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Light-sheet intensity `P / (L_y * d)` for power in mW and lengths in um.
pub fn lightsheet_intensity(p_ls_mw: f64, l_y_um: f64, d_ls_um: f64) -> Result<Intensity> {
    non_negative("light-sheet power", p_ls_mw)?;
    positive("light-sheet length L_y", l_y_um)?;
    positive("light-sheet thickness", d_ls_um)?;
    Intensity::new(p_ls_mw / (l_y_um * d_ls_um))
}

/// Confocal readout intensity `P / delta²` (beam diameter squared, not the
/// Gaussian spot area).
pub fn confocal_intensity(p_conf_mw: f64, delta_conf_um: f64) -> Result<Intensity> {
    non_negative("confocal power", p_conf_mw)?;
    positive("confocal beam diameter", delta_conf_um)?;
    Intensity::new(p_conf_mw / (delta_conf_um * delta_conf_um))
}

/// `log10(t / us) = a + b*log10(I) + c*log10(I)²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogQuadraticCurve {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl LogQuadraticCurve {
    pub const fn new(a: f64, b: f64, c: f64) -> Self {
        LogQuadraticCurve { a, b, c }
    }

    /// log10 of the duration at `intensity` (> 0, unchecked range).
    pub fn log10_duration(&self, intensity: f64) -> f64 {
        let x = intensity.log10();
        self.a + self.b * x + self.c * x * x
    }

    /// Duration in us at `intensity` (> 0, unchecked range).
    pub fn duration(&self, intensity: f64) -> f64 {
        10f64.powf(self.log10_duration(intensity))
    }
}

/// Range of intensities over which the fitted curves may be evaluated.
pub const VALIDITY_RANGE: (f64, f64) = (1e-3, 10.0);

/// Synthetic stand-in for measured NV photophysics.
///
/// The default coefficients are not measured values. They were chosen so
/// that readout and initialization times meet near saturation (~1 mW/um²),
/// readout is much faster than initialization at and below 0.1 mW/um², and
/// both land in the 1-100 us band over the usual operating range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhotophysicsModel {
    pub init_curve: LogQuadraticCurve,
    pub readout_curve: LogQuadraticCurve,
    pub i_sat: f64,
    pub r_max: f64,
    pub c0: f64,
    pub validity: (f64, f64),
}

impl Default for PhotophysicsModel {
    fn default() -> Self {
        PhotophysicsModel {
            init_curve: LogQuadraticCurve::new(0.7, -0.9, 0.1),
            readout_curve: LogQuadraticCurve::new(0.7, -0.3, 0.0),
            i_sat: 1.0,
            r_max: 30.0,
            c0: 0.03,
            validity: VALIDITY_RANGE,
        }
    }
}

impl PhotophysicsModel {
    /// Checks scalar invariants and that both curves stay finite and positive
    /// on the validity range.
    pub fn validate(&self) -> Result<()> {
        positive("i_sat", self.i_sat)?;
        positive("r_max", self.r_max)?;
        if !(self.c0 > 0.0 && self.c0 < 1.0) {
            return Err(Error::domain(format!("c0 must lie in (0, 1), got {}", self.c0)));
        }
        let (lo, hi) = self.validity;
        if !(lo > 0.0 && hi > lo && hi.is_finite()) {
            return Err(Error::domain(format!("bad validity range [{lo}, {hi}]")));
        }
        for curve in [&self.init_curve, &self.readout_curve] {
            for i in [lo, (lo * hi).sqrt(), hi] {
                let t = curve.duration(i);
                if !(t.is_finite() && t > 0.0) {
                    return Err(Error::domain(format!("curve {curve:?} yields non-finite duration at {i} mW/um2")));
                }
            }
        }
        Ok(())
    }

    /// Intensities (sampled log-uniformly) on the validity range where the
    /// readout curve exceeds the initialization curve.
    ///
    /// Initialization is expected to be the slower process; the synthetic
    /// default violates this above saturation, so this is a diagnostic and
    /// not part of [`validate`](Self::validate).
    pub fn readout_exceeds_init(&self, samples: usize) -> Vec<f64> {
        let (lo, hi) = self.validity;
        log_space(lo, hi, samples.max(2))
            .into_iter()
            .filter(|&i| self.readout_curve.log10_duration(i) > self.init_curve.log10_duration(i))
            .collect()
    }

    pub fn check_range(&self, i: Intensity) -> Result<f64> {
        let v = i.value();
        if v <= 0.0 {
            return Err(Error::domain(format!("intensity must be > 0, got {v}")));
        }
        let (lo, hi) = self.validity;
        if v < lo || v > hi {
            return Err(Error::OutOfRange { value: v, lo, hi });
        }
        Ok(v)
    }

    /// Spin initialization time in us.
    pub fn init_time(&self, i: Intensity) -> Result<f64> {
        let v = self.check_range(i)?;
        Ok(self.init_curve.duration(v))
    }

    /// Spin readout time in us.
    pub fn readout_time(&self, i: Intensity) -> Result<f64> {
        let v = self.check_range(i)?;
        Ok(self.readout_curve.duration(v))
    }

    /// Saturating photon rate `r_max * I / (I + I_sat)` in counts/us.
    pub fn photon_flux(&self, i: Intensity) -> f64 {
        let v = i.value();
        self.r_max * v / (v + self.i_sat)
    }

    /// Contrast decay time constant; a third of the initialization time so
    /// the contrast reaches `c0 / e³` exactly at `init_time`.
    pub fn contrast_decay_time(&self, i: Intensity) -> Result<f64> {
        Ok(self.init_time(i)? / 3.0)
    }

    /// Spin contrast remaining after `t_sweep` us of laser exposure.
    pub fn contrast_at_delay(&self, i: Intensity, t_sweep: f64) -> Result<f64> {
        non_negative("t_sweep", t_sweep)?;
        let tau = self.contrast_decay_time(i)?;
        Ok(exponential_contrast(self.c0, tau, t_sweep))
    }
}

/// `c0 * exp(-t / tau)`.
pub fn exponential_contrast(c0: f64, tau: f64, t: f64) -> f64 {
    c0 * (-t / tau).exp()
}

/// `n` log-spaced points from `lo` to `hi` inclusive. Endpoints are exact.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => {
            let (a, b) = (lo.log10(), hi.log10());
            let step = (b - a) / (n - 1) as f64;
            (0..n)
                .map(|k| match k {
                    0 => lo,
                    k if k == n - 1 => hi,
                    k => 10f64.powf(a + step * k as f64),
                })
                .collect()
        }
    }
}
