// SPDX-License-Identifier: Apache-2.0

//! Photon shot-noise simulation of the scanning protocols and of the
//! calibration measurement.
//!
//! Randomness is portable and reproducible: every trial (or trace point)
//! owns a ChaCha8 stream (`rand_chacha` 0.9.0) keyed by the master seed
//! with the stream id set to the trial index, and counts are drawn with
//! `rand_distr` 0.5.1 `Poisson` (Knuth below a mean of 12, Ahrens-Dieter
//! rejection above). Both crates are pinned exactly so frozen outputs
//! survive dependency updates. Trials are reduced in index order, so the
//! result is bitwise identical for any number of worker threads.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::calibration::{
    CalibrationTrace, ContrastMode, ExtractedTimes, TraceSample, extract_times, fit_log_quadratic,
};
use crate::error::{Error, Result};
use crate::photophysics::{Intensity, LogQuadraticCurve, PhotophysicsModel};
use crate::sequence::{EventKind, ProtocolParams, ProtocolTag, build_cycle};

/// How photon counts are produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Counting {
    #[default]
    Poisson,
    /// Every count equals its mean (infinite-flux limit).
    Noiseless,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub params: ProtocolParams,
    pub model: PhotophysicsModel,
    pub i_conf: Intensity,
    pub n_trials: usize,
    pub master_seed: u64,
    pub counting: Counting,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::domain("n_trials must be >= 1"));
        }
        self.params.validate()?;
        self.model.validate()?;
        self.model.check_range(self.i_conf)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutcome {
    pub tag: ProtocolTag,
    pub eta_empirical: f64,
    /// Zero for noiseless runs and single-trial runs.
    pub eta_stderr: f64,
    pub snr: f64,
    pub readouts_per_cycle: usize,
    pub cycle_time: f64,
    /// Per-trial normalized SNR, in trial order.
    pub trial_snr: Vec<f64>,
}

impl SimOutcome {
    /// Time charged to each voxel: the cycle shared among its readouts.
    pub fn time_per_voxel(&self) -> f64 {
        self.cycle_time / self.readouts_per_cycle as f64
    }

    /// Sensitivity implied by a single trial (infinite if its SNR <= 0).
    pub fn trial_eta(&self, trial: usize) -> f64 {
        let snr = self.trial_snr[trial];
        if snr > 0.0 { self.time_per_voxel().sqrt() / snr } else { f64::INFINITY }
    }

    pub fn report(&self) -> String {
        format!(
            "protocol = {}\neta_empirical = {}\neta_stderr = {}\nsnr = {}\nreadouts_per_cycle = {}\ncycle_time_us = {}\nn_trials = {}\n",
            self.tag,
            self.eta_empirical,
            self.eta_stderr,
            self.snr,
            self.readouts_per_cycle,
            self.cycle_time,
            self.trial_snr.len()
        )
    }

    pub fn trials_csv(&self) -> String {
        let mut out = String::from("trial,eta\n");
        for k in 0..self.trial_snr.len() {
            out.push_str(&format!("{k},{}\n", self.trial_eta(k)));
        }
        out
    }
}

/// One readout slot of a cycle as seen by the photon model.
#[derive(Debug, Clone, Copy)]
struct Slot {
    /// Remaining signal `exp(-tau / t1)`, tau measured from the MW block end.
    signal: f64,
    /// Mean reference photon count.
    mean_counts: f64,
    /// Inverse-variance weight of the count difference.
    weight: f64,
}

#[derive(Debug, Clone)]
struct CycleLayout {
    slots: Vec<Slot>,
    cycle_time: f64,
}

fn layout(params: &ProtocolParams, tag: ProtocolTag, flux: f64, contrast: f64) -> Result<CycleLayout> {
    if matches!(tag, ProtocolTag::Calibration) {
        return Err(Error::Usage("simulate_protocol needs a scanning protocol".into()));
    }
    let seq = build_cycle(params, tag)?;
    let mw_end = seq
        .events
        .iter()
        .find(|e| e.kind == EventKind::MwBlock)
        .map(|e| e.end())
        .ok_or_else(|| Error::domain("sequence has no MW block"))?;
    let slots = seq
        .readouts()
        .map(|e| {
            let signal = (-(e.start - mw_end) / params.t1).exp();
            let mean_counts = flux * e.duration;
            // Var(ref - sig) = mu + mu (1 - C s)
            let weight = 1.0 / (2.0 - contrast * signal);
            Slot { signal, mean_counts, weight }
        })
        .collect();
    Ok(CycleLayout { slots, cycle_time: seq.span() })
}

/// Poisson sampler that tolerates a zero mean.
#[derive(Debug, Clone, Copy)]
enum Counter {
    Zero,
    Draw(Poisson<f64>),
}

impl Counter {
    fn new(mean: f64) -> Result<Self> {
        if mean == 0.0 {
            return Ok(Counter::Zero);
        }
        Poisson::new(mean).map(Counter::Draw).map_err(|e| Error::domain(format!("bad photon mean {mean}: {e}")))
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        match self {
            Counter::Zero => 0.0,
            Counter::Draw(p) => p.sample(rng),
        }
    }
}

fn trial_rng(master_seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Per-trial weighted mean of `ref - sig` photon counts over the readouts of
/// one cycle, where the signal window has mean `mu (1 - contrast * s)`.
fn weighted_count_differences(
    layout: &CycleLayout,
    contrast: f64,
    n_trials: usize,
    master_seed: u64,
    counting: Counting,
) -> Result<Vec<f64>> {
    let weight_sum: f64 = layout.slots.iter().map(|s| s.weight).sum();
    let counters = layout
        .slots
        .iter()
        .map(|s| Ok((Counter::new(s.mean_counts)?, Counter::new(s.mean_counts * (1.0 - contrast * s.signal))?)))
        .collect::<Result<Vec<_>>>()?;
    if counting == Counting::Noiseless {
        let d: f64 =
            layout.slots.iter().map(|s| s.weight * s.mean_counts * contrast * s.signal).sum::<f64>() / weight_sum;
        return Ok(vec![d; n_trials]);
    }
    Ok((0..n_trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = trial_rng(master_seed, trial as u64);
            let mut acc = 0.0;
            for (slot, (reference, signal)) in layout.slots.iter().zip(&counters) {
                let r = reference.sample(&mut rng);
                let s = signal.sample(&mut rng);
                acc += slot.weight * (r - s);
            }
            acc / weight_sum
        })
        .collect())
}

/// Neumaier-compensated sum, accumulated in slice order.
fn compensated_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Mean and standard error of the mean.
pub(crate) fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = compensated_sum(values.iter().copied()) / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss = compensated_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    (mean, (ss / (n - 1.0) / n).sqrt())
}

/// Simulates `cfg.n_trials` measurement cycles of `tag` and estimates the
/// per-voxel sensitivity from the recovered signal.
///
/// Each readout window opening `tau` after the MW block carries a signal
/// `s = exp(-tau / t1)`; its reference and signal photon counts have means
/// `mu` and `mu (1 - c0 s)` with `mu = flux * t_ro`. The normalized
/// per-readout estimate `(ref - sig) / (c0 mu)` has mean `s`, so a single
/// readout right after the MW block has SNR 1. Readouts are combined with
/// inverse-variance weights, and `eta = sqrt(cycle_time / readouts) / SNR`.
pub fn simulate_protocol(cfg: &SimConfig, tag: ProtocolTag) -> Result<SimOutcome> {
    cfg.validate()?;
    let flux = cfg.model.photon_flux(cfg.i_conf);
    let c0 = cfg.model.c0;
    let layout = layout(&cfg.params, tag, flux, c0)?;
    let mu = layout.slots[0].mean_counts;
    if !(mu > 0.0) {
        return Err(Error::domain("photon flux is zero; SNR undefined"));
    }
    let diffs = weighted_count_differences(&layout, c0, cfg.n_trials, cfg.master_seed, cfg.counting)?;
    let trial_snr: Vec<f64> = diffs.iter().map(|d| d / (c0 * mu)).collect();
    let (snr, snr_err) = match cfg.counting {
        Counting::Noiseless => (trial_snr[0], 0.0),
        Counting::Poisson => mean_stderr(&trial_snr),
    };
    if !(snr > 0.0) {
        return Err(Error::domain(format!("estimated SNR {snr} is not positive; increase n_trials or flux")));
    }
    let readouts = layout.slots.len();
    let per_voxel = layout.cycle_time / readouts as f64;
    let eta = per_voxel.sqrt() / snr;
    Ok(SimOutcome {
        tag,
        eta_empirical: eta,
        eta_stderr: eta * snr_err / snr,
        snr,
        readouts_per_cycle: readouts,
        cycle_time: layout.cycle_time,
        trial_snr,
    })
}

/// Per-trial weighted `ref - sig` count differences for an arbitrary
/// contrast in `[0, 1)`. With zero contrast the mean must vanish.
pub fn simulate_count_differences(cfg: &SimConfig, tag: ProtocolTag, contrast: f64) -> Result<Vec<f64>> {
    cfg.validate()?;
    if !(0.0..1.0).contains(&contrast) {
        return Err(Error::domain(format!("contrast must lie in [0, 1), got {contrast}")));
    }
    let flux = cfg.model.photon_flux(cfg.i_conf);
    let layout = layout(&cfg.params, tag, flux, contrast)?;
    weighted_count_differences(&layout, contrast, cfg.n_trials, cfg.master_seed, cfg.counting)
}

/// Photon collection settings for synthetic calibration traces.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceSampling {
    pub shots_per_point: u64,
    /// Detector gate per shot, us.
    pub gate_us: f64,
    pub counting: Counting,
}

impl Default for TraceSampling {
    fn default() -> Self {
        TraceSampling { shots_per_point: 100_000, gate_us: 0.01, counting: Counting::Poisson }
    }
}

/// Synthetic contrast-versus-delay trace at intensity `i`.
///
/// Signal PL has mean `flux (1 - C(t_sweep))`, reference PL mean `flux`;
/// counts are summed over all shots and converted back to counts/us.
pub fn simulate_calibration(
    model: &PhotophysicsModel,
    i: Intensity,
    sweep_grid: &[f64],
    sampling: TraceSampling,
    seed: u64,
) -> Result<CalibrationTrace> {
    model.validate()?;
    if sampling.shots_per_point == 0 || !(sampling.gate_us > 0.0) {
        return Err(Error::domain("need shots_per_point >= 1 and gate_us > 0"));
    }
    let flux = model.photon_flux(i);
    let exposure = sampling.shots_per_point as f64 * sampling.gate_us;
    let samples = sweep_grid
        .par_iter()
        .enumerate()
        .map(|(k, &t)| {
            let c = model.contrast_at_delay(i, t)?;
            let (ref_mean, sig_mean) = (flux * exposure, flux * (1.0 - c) * exposure);
            let (r, s) = match sampling.counting {
                Counting::Noiseless => (ref_mean, sig_mean),
                Counting::Poisson => {
                    let mut rng = trial_rng(seed, k as u64);
                    (Counter::new(ref_mean)?.sample(&mut rng), Counter::new(sig_mean)?.sample(&mut rng))
                }
            };
            Ok(TraceSample { t_sweep: t, sig_pl: s / exposure, ref_pl: r / exposure })
        })
        .collect::<Result<Vec<_>>>()?;
    CalibrationTrace::new(i, samples)
}

/// `points` evenly spaced delays from 0 to `span_factor * init_time(i)`.
pub fn calibration_grid(model: &PhotophysicsModel, i: Intensity, points: usize, span_factor: f64) -> Result<Vec<f64>> {
    if points < 3 {
        return Err(Error::domain("calibration grid needs at least 3 points"));
    }
    let t_max = span_factor * model.init_time(i)?;
    Ok((0..points).map(|k| t_max * k as f64 / (points - 1) as f64).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineResult {
    pub init_curve: LogQuadraticCurve,
    pub readout_curve: LogQuadraticCurve,
    pub extracted: Vec<(Intensity, ExtractedTimes)>,
}

/// Simulate a trace per intensity, extract both times from each, and fit a
/// log-quadratic curve to each set. Trace `k` uses seed `seed + k`.
pub fn end_to_end_pipeline(
    model: &PhotophysicsModel,
    intensities: &[Intensity],
    grids: &[Vec<f64>],
    sampling: TraceSampling,
    seed: u64,
) -> Result<PipelineResult> {
    if grids.len() != intensities.len() {
        return Err(Error::domain("need one sweep grid per intensity"));
    }
    let mut extracted = Vec::with_capacity(intensities.len());
    for (k, (&i, grid)) in intensities.iter().zip(grids).enumerate() {
        let trace = simulate_calibration(model, i, grid, sampling, seed.wrapping_add(k as u64))?;
        extracted.push((i, extract_times(&trace, ContrastMode::WindowAverage)?));
    }
    let init: Vec<_> = extracted.iter().map(|(i, x)| (*i, x.t_init)).collect();
    let ro: Vec<_> = extracted.iter().map(|(i, x)| (*i, x.t_ro)).collect();
    Ok(PipelineResult { init_curve: fit_log_quadratic(&init)?, readout_curve: fit_log_quadratic(&ro)?, extracted })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::sequence::{recurrent_count_lcqdm, recurrent_count_leibold};

    fn cfg(t1: f64, n_trials: usize, counting: Counting) -> SimConfig {
        SimConfig {
            params: ProtocolParams { t_init_ls: 20.0, t_init_conf: 20.0, t_ro_conf: 5.0, t_mw: 100.0, t_d: 0.1, t1 },
            model: PhotophysicsModel::default(),
            i_conf: Intensity::new(1.0).unwrap(),
            n_trials,
            master_seed: 7,
            counting,
        }
    }

    /// Noiseless closed form, computed straight from the protocol timing.
    fn closed_form_eta(p: &ProtocolParams, tag: ProtocolTag, c0: f64) -> f64 {
        let (n, slot, overhead) = match tag {
            ProtocolTag::LcQdm => (recurrent_count_lcqdm(p).unwrap(), p.t_ro_conf + p.t_d, p.t_init_ls + p.t_mw),
            ProtocolTag::Leibold => (recurrent_count_leibold(p).unwrap(), p.t_ro_conf + p.t_init_conf + p.t_d, p.t_mw),
            _ => (1, p.t_ro_conf + p.t_d, p.t_init_conf + p.t_mw),
        };
        let (mut num, mut den) = (0.0, 0.0);
        for k in 0..n {
            let s = (-(k as f64) * slot / p.t1).exp();
            let w = 1.0 / (2.0 - c0 * s);
            num += w * s;
            den += w;
        }
        ((overhead + n as f64 * slot) / n as f64).sqrt() / (num / den)
    }

    #[test]
    fn noiseless_matches_closed_form() {
        for tag in ProtocolTag::SCANNING {
            let c = cfg(5000.0, 3, Counting::Noiseless);
            let out = simulate_protocol(&c, tag).unwrap();
            let expect = closed_form_eta(&c.params, tag, c.model.c0);
            assert!((out.eta_empirical / expect - 1.0).abs() < 1e-6, "{tag}");
            assert_eq!(out.eta_stderr, 0.0);
        }
    }

    #[test]
    fn conventional_noiseless_is_exact() {
        let c = cfg(5000.0, 1, Counting::Noiseless);
        let out = simulate_protocol(&c, ProtocolTag::Conventional).unwrap();
        assert!((out.eta_empirical - 125.1f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn readout_counts_match_sequence_module() {
        let c = cfg(5000.0, 2, Counting::Poisson);
        let lc = simulate_protocol(&c, ProtocolTag::LcQdm).unwrap();
        assert_eq!(lc.readouts_per_cycle, recurrent_count_lcqdm(&c.params).unwrap());
        let lb = simulate_protocol(&c, ProtocolTag::Leibold).unwrap();
        assert_eq!(lb.readouts_per_cycle, recurrent_count_leibold(&c.params).unwrap());
    }

    #[test]
    fn same_seed_same_bits() {
        let c = cfg(5000.0, 200, Counting::Poisson);
        let a = simulate_protocol(&c, ProtocolTag::LcQdm).unwrap();
        let b = simulate_protocol(&c, ProtocolTag::LcQdm).unwrap();
        assert_eq!(a.eta_empirical.to_bits(), b.eta_empirical.to_bits());
        let mut other = c;
        other.master_seed += 1;
        let d = simulate_protocol(&other, ProtocolTag::LcQdm).unwrap();
        assert_ne!(a.trial_snr, d.trial_snr);
    }

    #[test]
    fn worker_count_does_not_change_result() {
        let c = cfg(2000.0, 400, Counting::Poisson);
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| simulate_protocol(&c, ProtocolTag::Leibold).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn zero_trials_rejected() {
        assert!(simulate_protocol(&cfg(5000.0, 0, Counting::Poisson), ProtocolTag::LcQdm).is_err());
        assert!(simulate_protocol(&cfg(5000.0, 1, Counting::Poisson), ProtocolTag::Calibration).is_err());
    }

    #[test]
    fn compensated_sum_is_order_stable() {
        let v = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(compensated_sum(v), 2.0);
        let (m, e) = mean_stderr(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((e - (1.0f64 / 3.0).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn noiseless_trace_recovers_contrast() {
        let m = PhotophysicsModel::default();
        let i = Intensity::new(1.0).unwrap();
        let grid = calibration_grid(&m, i, 50, 2.0).unwrap();
        let sampling = TraceSampling { counting: Counting::Noiseless, ..Default::default() };
        let trace = simulate_calibration(&m, i, &grid, sampling, 0).unwrap();
        for (s, c) in trace.samples().iter().zip(trace.contrasts()) {
            let expect = m.contrast_at_delay(i, s.t_sweep).unwrap();
            assert!((c - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn noiseless_trace_roundtrips_init_time() {
        let m = PhotophysicsModel::default();
        let i = Intensity::new(1.0).unwrap();
        let grid = calibration_grid(&m, i, 2001, 2.0).unwrap();
        let step = grid[1] - grid[0];
        let sampling = TraceSampling { counting: Counting::Noiseless, ..Default::default() };
        let trace = simulate_calibration(&m, i, &grid, sampling, 0).unwrap();
        let t = crate::calibration::extract_init_time(&trace).unwrap();
        assert!((t - m.init_time(i).unwrap()).abs() <= step);
    }

    #[test]
    fn noisy_trace_is_reproducible() {
        let m = PhotophysicsModel::default();
        let i = Intensity::new(0.3).unwrap();
        let grid = calibration_grid(&m, i, 40, 2.0).unwrap();
        let a = simulate_calibration(&m, i, &grid, TraceSampling::default(), 11).unwrap();
        let b = simulate_calibration(&m, i, &grid, TraceSampling::default(), 11).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_intensity_pipeline_is_underdetermined() {
        let m = PhotophysicsModel::default();
        let i = Intensity::new(1.0).unwrap();
        let grid = calibration_grid(&m, i, 200, 2.0).unwrap();
        let sampling = TraceSampling { counting: Counting::Noiseless, ..Default::default() };
        let r = end_to_end_pipeline(&m, &[i], &[grid], sampling, 0);
        assert!(matches!(r, Err(Error::Underdetermined(_))));
    }
}
