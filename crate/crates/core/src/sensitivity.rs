// SPDX-License-Identifier: Apache-2.0

//! Per-voxel sensitivity of the three scanning protocols and the
//! intensity/MW-duration sweep built on top of it.
//!
//! Sensitivities are `(1 / SNR) * sqrt(t)` with the single-readout SNR
//! normalized to 1, so they carry units of sqrt(us) and are only meaningful
//! relative to one another.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result, positive};
use crate::photophysics::{Intensity, PhotophysicsModel};
use crate::sequence::ProtocolParams;

/// `2 / (1 + e^-1)`: inverse of the mean of the normalized SNR at the first
/// readout (1) and at the T1 horizon (1/e).
pub fn recurrent_prefactor() -> f64 {
    2.0 / (1.0 + (-1f64).exp())
}

fn check_recurrent(p: &ProtocolParams) -> Result<()> {
    positive("t1", p.t1)?;
    p.validate()
}

/// Light-sheet confocal protocol: global init and MW, then recurrent readout
/// until T1.
pub fn eta_lcqdm(p: &ProtocolParams) -> Result<f64> {
    check_recurrent(p)?;
    let per_readout = (p.t_init_ls + p.t_mw + p.t1) * (p.t_ro_conf + p.t_d) / p.t1;
    Ok(recurrent_prefactor() * per_readout.sqrt())
}

/// Global MW with recurrent local readout and reinitialization.
pub fn eta_leibold(p: &ProtocolParams) -> Result<f64> {
    check_recurrent(p)?;
    let per_readout = (p.t_mw + p.t1) * (p.t_ro_conf + p.t_init_conf + p.t_d) / p.t1;
    Ok(recurrent_prefactor() * per_readout.sqrt())
}

/// One voxel per init/MW/readout cycle.
pub fn eta_conventional(p: &ProtocolParams) -> Result<f64> {
    p.validate()?;
    Ok((p.t_mw + p.t_ro_conf + p.t_init_conf + p.t_d).sqrt())
}

/// Measurement-time ratio at equal SNR for a sensitivity ratio.
pub fn time_reduction_factor(eta_ratio: f64) -> f64 {
    eta_ratio * eta_ratio
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityResult {
    pub eta_lcqdm: f64,
    pub eta_leibold: f64,
    pub eta_conventional: f64,
    pub ratio_leibold_over_lc: f64,
    pub ratio_conv_over_lc: f64,
}

impl SensitivityResult {
    pub fn evaluate(p: &ProtocolParams) -> Result<Self> {
        let eta_lcqdm = eta_lcqdm(p)?;
        let eta_leibold = eta_leibold(p)?;
        let eta_conventional = eta_conventional(p)?;
        Ok(SensitivityResult {
            eta_lcqdm,
            eta_leibold,
            eta_conventional,
            ratio_leibold_over_lc: eta_leibold / eta_lcqdm,
            ratio_conv_over_lc: eta_conventional / eta_lcqdm,
        })
    }
}

/// Protocol timings at one operating point, with both initialization times
/// taken from the same curve (light sheet and confocal beam are assumed to
/// initialize equally fast at equal intensity).
pub fn params_at(
    model: &PhotophysicsModel,
    i_conf: Intensity,
    i_ls: Intensity,
    t_mw: f64,
    t1: f64,
    t_d: f64,
) -> Result<ProtocolParams> {
    let p = ProtocolParams {
        t_init_ls: model.init_time(i_ls)?,
        t_init_conf: model.init_time(i_conf)?,
        t_ro_conf: model.readout_time(i_conf)?,
        t_mw,
        t_d,
        t1,
    };
    p.validate()?;
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub i_conf_grid: Vec<f64>,
    pub t_mw_grid: Vec<f64>,
    pub i_ls: Intensity,
    pub model: PhotophysicsModel,
    pub t1: f64,
    pub t_d: f64,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, g) in [("i_conf", &self.i_conf_grid), ("t_mw", &self.t_mw_grid)] {
            if g.is_empty() {
                return Err(Error::domain(format!("{name} grid is empty")));
            }
            if !g.windows(2).all(|w| w[1] > w[0]) {
                return Err(Error::domain(format!("{name} grid is not strictly increasing")));
            }
        }
        self.model.validate()?;
        self.model.check_range(self.i_ls)?;
        positive("t1", self.t1)?;
        crate::error::non_negative("t_d", self.t_d)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepCell {
    pub i_conf: f64,
    pub t_mw: f64,
    pub result: std::result::Result<SensitivityResult, String>,
}

impl SweepCell {
    pub fn valid(&self) -> Option<&SensitivityResult> {
        self.result.as_ref().ok()
    }
}

/// Row-major `(t_mw index, i_conf index)` grid of sensitivities.
#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityGrid {
    pub spec: SweepSpec,
    pub cells: Vec<SweepCell>,
}

pub const CSV_HEADER: &str =
    "i_conf_mw_per_um2,t_mw_us,eta_lc,eta_leibold,eta_conv,ratio_leibold_lc,ratio_conv_lc,valid";

impl SensitivityGrid {
    pub fn rows(&self) -> usize {
        self.spec.t_mw_grid.len()
    }

    pub fn cols(&self) -> usize {
        self.spec.i_conf_grid.len()
    }

    pub fn cell(&self, t_mw_index: usize, i_conf_index: usize) -> &SweepCell {
        &self.cells[t_mw_index * self.cols() + i_conf_index]
    }

    pub fn valid_cells(&self) -> impl Iterator<Item = &SensitivityResult> {
        self.cells.iter().filter_map(SweepCell::valid)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.cells.len() * 120);
        out.push_str(CSV_HEADER);
        out.push('\n');
        for c in &self.cells {
            match &c.result {
                Ok(r) => writeln!(
                    out,
                    "{},{},{},{},{},{},{},1",
                    c.i_conf,
                    c.t_mw,
                    r.eta_lcqdm,
                    r.eta_leibold,
                    r.eta_conventional,
                    r.ratio_leibold_over_lc,
                    r.ratio_conv_over_lc
                ),
                Err(_) => writeln!(out, "{},{},NaN,NaN,NaN,NaN,NaN,0", c.i_conf, c.t_mw),
            }
            .expect("writing to a String cannot fail");
        }
        out
    }

    /// Plain (P2) graymap of `log10(ratio)` with rows ordered by `t_mw`
    /// descending so the image reads like a plot. Gray levels span the
    /// finite range of the ratio; invalid cells are black.
    pub fn ratio_pgm(&self, ratio: impl Fn(&SensitivityResult) -> f64) -> String {
        let logs: Vec<Option<f64>> =
            self.cells.iter().map(|c| c.valid().map(|r| ratio(r).log10()).filter(|v| v.is_finite())).collect();
        let (lo, hi) =
            logs.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
        let max_gray = 255u32;
        let mut out = format!("P2\n# log10 ratio range [{lo}, {hi}]\n{} {}\n{max_gray}\n", self.cols(), self.rows());
        for row in (0..self.rows()).rev() {
            let line: Vec<String> = (0..self.cols())
                .map(|col| {
                    let level = match logs[row * self.cols() + col] {
                        Some(v) if hi > lo => 1 + ((v - lo) / (hi - lo) * 254.0).round() as u32,
                        Some(_) => max_gray,
                        None => 0,
                    };
                    level.to_string()
                })
                .collect();
            out.push_str(&line.join(" "));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_csv().as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

fn evaluate_cell(spec: &SweepSpec, i_conf: f64, t_mw: f64) -> SweepCell {
    let result = Intensity::new(i_conf)
        .and_then(|i| params_at(&spec.model, i, spec.i_ls, t_mw, spec.t1, spec.t_d))
        .and_then(|p| SensitivityResult::evaluate(&p))
        .map_err(|e| e.to_string());
    SweepCell { i_conf, t_mw, result }
}

/// Evaluates every grid cell in parallel. Each cell is a pure function of
/// the sweep settings, so the output does not depend on the worker count.
pub fn sweep(spec: &SweepSpec) -> Result<SensitivityGrid> {
    spec.validate()?;
    let cols = spec.i_conf_grid.len();
    let cells = (0..spec.t_mw_grid.len() * cols)
        .into_par_iter()
        .map(|k| evaluate_cell(spec, spec.i_conf_grid[k % cols], spec.t_mw_grid[k / cols]))
        .collect();
    Ok(SensitivityGrid { spec: spec.clone(), cells })
}
