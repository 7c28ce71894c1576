// SPDX-License-Identifier: Apache-2.0

//! Pulse-sequence timelines for the three scanning protocols and the
//! readout/initialization calibration sequence.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result, non_negative, positive};

/// Protocol timing parameters, all in us.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtocolParams {
    /// Light-sheet initialization.
    pub t_init_ls: f64,
    /// Confocal (re)initialization.
    pub t_init_conf: f64,
    /// Confocal readout dwell.
    pub t_ro_conf: f64,
    /// MW sensing sequence.
    pub t_mw: f64,
    /// Beam-steering dead time.
    pub t_d: f64,
    /// NV spin-lattice relaxation time.
    pub t1: f64,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        non_negative("t_init_ls", self.t_init_ls)?;
        non_negative("t_init_conf", self.t_init_conf)?;
        positive("t_ro_conf", self.t_ro_conf)?;
        non_negative("t_mw", self.t_mw)?;
        non_negative("t_d", self.t_d)?;
        positive("t1", self.t1)?;
        Ok(())
    }

    /// Every duration multiplied by `k`.
    pub fn scaled(&self, k: f64) -> Self {
        ProtocolParams {
            t_init_ls: self.t_init_ls * k,
            t_init_conf: self.t_init_conf * k,
            t_ro_conf: self.t_ro_conf * k,
            t_mw: self.t_mw * k,
            t_d: self.t_d * k,
            t1: self.t1 * k,
        }
    }

    /// Length of one recurrent readout slot for `tag`, i.e. the time the
    /// confocal beam spends on a voxel plus the move to the next one.
    pub fn readout_slot(&self, tag: ProtocolTag) -> f64 {
        match tag {
            ProtocolTag::Leibold | ProtocolTag::Conventional => self.t_ro_conf + self.t_init_conf + self.t_d,
            ProtocolTag::LcQdm | ProtocolTag::Calibration => self.t_ro_conf + self.t_d,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProtocolTag {
    LcQdm,
    Leibold,
    Conventional,
    Calibration,
}

impl ProtocolTag {
    pub const SCANNING: [ProtocolTag; 3] = [ProtocolTag::LcQdm, ProtocolTag::Leibold, ProtocolTag::Conventional];

    pub fn name(self) -> &'static str {
        match self {
            ProtocolTag::LcQdm => "lcqdm",
            ProtocolTag::Leibold => "leibold",
            ProtocolTag::Conventional => "conventional",
            ProtocolTag::Calibration => "calibration",
        }
    }

    /// Whether the protocol reads several voxels per MW sequence.
    pub fn is_recurrent(self) -> bool {
        matches!(self, ProtocolTag::LcQdm | ProtocolTag::Leibold)
    }
}

impl fmt::Display for ProtocolTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProtocolTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "lcqdm" | "lc-qdm" | "lc" => Ok(ProtocolTag::LcQdm),
            "leibold" => Ok(ProtocolTag::Leibold),
            "conventional" | "conv" => Ok(ProtocolTag::Conventional),
            "calibration" => Ok(ProtocolTag::Calibration),
            other => Err(Error::Usage(format!("unknown protocol '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    LightSheetPulse,
    ConfocalLaserPulse,
    MwBlock,
    ReadoutWindow,
    DeadTime,
}

impl EventKind {
    pub fn name(self) -> &'static str {
        match self {
            EventKind::LightSheetPulse => "light_sheet",
            EventKind::ConfocalLaserPulse => "confocal_laser",
            EventKind::MwBlock => "mw",
            EventKind::ReadoutWindow => "readout",
            EventKind::DeadTime => "dead",
        }
    }
}

impl FromStr for EventKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "light_sheet" => EventKind::LightSheetPulse,
            "confocal_laser" => EventKind::ConfocalLaserPulse,
            "mw" => EventKind::MwBlock,
            "readout" => EventKind::ReadoutWindow,
            "dead" => EventKind::DeadTime,
            other => return Err(Error::domain(format!("unknown event kind '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceEvent {
    pub kind: EventKind,
    pub start: f64,
    pub duration: f64,
    pub voxel: Option<usize>,
}

impl SequenceEvent {
    pub fn end(&self) -> f64 {
        self.start + self.duration
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PulseSequence {
    pub tag: ProtocolTag,
    pub events: Vec<SequenceEvent>,
}

impl PulseSequence {
    /// Latest event end minus earliest event start.
    pub fn span(&self) -> f64 {
        let start = self.events.iter().map(|e| e.start).fold(f64::INFINITY, f64::min);
        let end = self.events.iter().map(|e| e.end()).fold(f64::NEG_INFINITY, f64::max);
        if self.events.is_empty() { 0.0 } else { end - start }
    }

    pub fn readouts(&self) -> impl Iterator<Item = &SequenceEvent> {
        self.events.iter().filter(|e| e.kind == EventKind::ReadoutWindow)
    }

    pub fn count(&self, kind: EventKind) -> usize {
        self.events.iter().filter(|e| e.kind == kind).count()
    }

    /// Line-oriented timeline: a `# protocol <tag>` header, then one
    /// `kind start_us duration_us [voxel]` line per event.
    pub fn to_text(&self) -> String {
        let mut out = format!("# protocol {}\n", self.tag);
        for e in &self.events {
            out.push_str(&format!("{} {:.6} {:.6}", e.kind.name(), e.start, e.duration));
            if let Some(v) = e.voxel {
                out.push_str(&format!(" {v}"));
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut tag = None;
        let mut events = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let bad = |msg: &str| Error::domain(format!("timeline line {}: {msg}", n + 1));
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.trim().strip_prefix("protocol") {
                    tag = Some(name.trim().parse()?);
                }
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !(3..=4).contains(&fields.len()) {
                return Err(bad("expected `kind start duration [voxel]`"));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad("malformed number"));
            events.push(SequenceEvent {
                kind: fields[0].parse()?,
                start: num(fields[1])?,
                duration: num(fields[2])?,
                voxel: match fields.get(3) {
                    Some(v) => Some(v.parse().map_err(|_| bad("malformed voxel index"))?),
                    None => None,
                },
            });
        }
        let tag = tag.ok_or_else(|| Error::domain("timeline is missing `# protocol` header"))?;
        Ok(PulseSequence { tag, events })
    }
}

/// Appends events back to back on a running clock.
#[derive(Debug)]
pub struct TimelineBuilder {
    tag: ProtocolTag,
    cursor: f64,
    events: Vec<SequenceEvent>,
}

impl TimelineBuilder {
    pub fn new(tag: ProtocolTag) -> Self {
        TimelineBuilder { tag, cursor: 0.0, events: Vec::new() }
    }

    pub fn cursor(&self) -> f64 {
        self.cursor
    }

    /// Appends an event at the cursor and advances past it.
    pub fn push(&mut self, kind: EventKind, duration: f64, voxel: Option<usize>) -> &mut Self {
        self.overlay(kind, 0.0, duration, voxel);
        self.cursor += duration;
        self
    }

    /// Moves the cursor forward without emitting an event.
    pub fn advance(&mut self, dt: f64) -> &mut Self {
        self.cursor += dt;
        self
    }

    /// Adds an event at `cursor + offset` without moving the cursor.
    pub fn overlay(&mut self, kind: EventKind, offset: f64, duration: f64, voxel: Option<usize>) -> &mut Self {
        self.events.push(SequenceEvent { kind, start: self.cursor + offset, duration, voxel });
        self
    }

    /// One confocal readout of `voxel`: the laser stays on for `laser`
    /// us, the detector gate covers the first `readout` us, followed by a
    /// beam move of `dead` us.
    pub fn readout_slot(&mut self, voxel: usize, readout: f64, laser: f64, dead: f64) -> &mut Self {
        self.overlay(EventKind::ConfocalLaserPulse, 0.0, laser, Some(voxel));
        self.push(EventKind::ReadoutWindow, readout, Some(voxel));
        self.advance(laser - readout);
        self.push(EventKind::DeadTime, dead, None)
    }

    pub fn finish(mut self) -> PulseSequence {
        // Stable, so simultaneous events keep insertion order.
        self.events.sort_by(|a, b| a.start.total_cmp(&b.start));
        PulseSequence { tag: self.tag, events: self.events }
    }
}

fn recurrent_count(t1: f64, slot: f64) -> Result<usize> {
    if !(slot > 0.0) {
        return Err(Error::domain(format!("readout slot must be > 0, got {slot}")));
    }
    positive("t1", t1)?;
    Ok(((t1 / slot).floor() as usize).max(1))
}

/// Voxels read per light-sheet cycle: `floor(t1 / (t_ro + t_d))`, at least 1.
pub fn recurrent_count_lcqdm(p: &ProtocolParams) -> Result<usize> {
    recurrent_count(p.t1, p.t_ro_conf + p.t_d)
}

/// Voxels read per MW sequence when every readout is followed by a local
/// reinitialization: `floor(t1 / (t_ro + t_init + t_d))`, at least 1.
pub fn recurrent_count_leibold(p: &ProtocolParams) -> Result<usize> {
    recurrent_count(p.t1, p.t_ro_conf + p.t_init_conf + p.t_d)
}

/// Readouts per cycle for any protocol (1 for conventional and calibration
/// signal halves).
pub fn readouts_per_cycle(p: &ProtocolParams, tag: ProtocolTag) -> Result<usize> {
    match tag {
        ProtocolTag::LcQdm => recurrent_count_lcqdm(p),
        ProtocolTag::Leibold => recurrent_count_leibold(p),
        ProtocolTag::Conventional | ProtocolTag::Calibration => Ok(1),
    }
}

/// Light-sheet init, MW block, then recurrent confocal readouts of voxels
/// `first_voxel..first_voxel + n`.
pub fn lcqdm_batch(p: &ProtocolParams, first_voxel: usize, n: usize) -> PulseSequence {
    let mut b = TimelineBuilder::new(ProtocolTag::LcQdm);
    b.push(EventKind::LightSheetPulse, p.t_init_ls, None);
    b.push(EventKind::MwBlock, p.t_mw, None);
    for k in first_voxel..first_voxel + n {
        b.readout_slot(k, p.t_ro_conf, p.t_ro_conf, p.t_d);
    }
    b.finish()
}

/// MW block followed by recurrent readout-plus-reinitialization of voxels
/// `first_voxel..first_voxel + n`.
pub fn leibold_batch(p: &ProtocolParams, first_voxel: usize, n: usize) -> PulseSequence {
    let mut b = TimelineBuilder::new(ProtocolTag::Leibold);
    b.push(EventKind::MwBlock, p.t_mw, None);
    for k in first_voxel..first_voxel + n {
        b.readout_slot(k, p.t_ro_conf, p.t_ro_conf + p.t_init_conf, p.t_d);
    }
    b.finish()
}

/// Local init, MW block and a single readout of `voxel`.
pub fn conventional_single(p: &ProtocolParams, voxel: usize) -> PulseSequence {
    let mut b = TimelineBuilder::new(ProtocolTag::Conventional);
    b.push(EventKind::ConfocalLaserPulse, p.t_init_conf, Some(voxel));
    b.push(EventKind::MwBlock, p.t_mw, None);
    b.readout_slot(voxel, p.t_ro_conf, p.t_ro_conf, p.t_d);
    b.finish()
}

pub fn build_lcqdm_cycle(p: &ProtocolParams) -> Result<PulseSequence> {
    p.validate()?;
    Ok(lcqdm_batch(p, 0, recurrent_count_lcqdm(p)?))
}

pub fn build_leibold_cycle(p: &ProtocolParams) -> Result<PulseSequence> {
    p.validate()?;
    Ok(leibold_batch(p, 0, recurrent_count_leibold(p)?))
}

pub fn build_conventional_cycle(p: &ProtocolParams) -> Result<PulseSequence> {
    p.validate()?;
    Ok(conventional_single(p, 0))
}

pub fn build_cycle(p: &ProtocolParams, tag: ProtocolTag) -> Result<PulseSequence> {
    match tag {
        ProtocolTag::LcQdm => build_lcqdm_cycle(p),
        ProtocolTag::Leibold => build_leibold_cycle(p),
        ProtocolTag::Conventional => build_conventional_cycle(p),
        ProtocolTag::Calibration => build_calibration_sequence(p, 0.0),
    }
}

/// Signal half (init, instantaneous MW pi pulse, laser back on with a
/// zero-width detector sample `t_sweep` after turn-on) followed by an
/// identical reference half whose MW block is empty.
///
/// The readout laser stays on for `max(t_sweep, t_init_conf)` so the sample
/// always falls inside it.
pub fn build_calibration_sequence(p: &ProtocolParams, t_sweep: f64) -> Result<PulseSequence> {
    p.validate()?;
    if !(t_sweep >= 0.0 && t_sweep.is_finite()) {
        return Err(Error::domain(format!("t_sweep must be >= 0, got {t_sweep}")));
    }
    let laser = t_sweep.max(p.t_init_conf);
    let mut b = TimelineBuilder::new(ProtocolTag::Calibration);
    for _half in 0..2 {
        b.push(EventKind::ConfocalLaserPulse, p.t_init_conf, Some(0));
        b.push(EventKind::MwBlock, 0.0, None);
        b.overlay(EventKind::ConfocalLaserPulse, 0.0, laser, Some(0));
        b.overlay(EventKind::ReadoutWindow, t_sweep, 0.0, Some(0));
        b.advance(laser);
    }
    Ok(b.finish())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NotSorted { index: usize },
    BadTiming { index: usize },
    ReadoutOutsideLaser { index: usize },
    MissingMwBlock,
    T1Budget { mw_index: usize, readout_index: usize, span: f64, t1: f64 },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NotSorted { index } => write!(f, "event {index} starts before its predecessor"),
            Violation::BadTiming { index } => {
                write!(f, "event {index} has a negative or non-finite start/duration")
            }
            Violation::ReadoutOutsideLaser { index } => {
                write!(f, "readout window {index} is not inside a confocal laser pulse of the same voxel")
            }
            Violation::MissingMwBlock => write!(f, "recurrent sequence has no MW block"),
            Violation::T1Budget { mw_index, readout_index, span, t1 } => write!(
                f,
                "T1 budget exceeded: {span} us from end of MW block (event {mw_index}) to end of readout {readout_index} > t1 = {t1} us"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Warning {
    /// Only one readout fits and it overruns T1; kept because every
    /// protocol performs at least one readout.
    ForcedSingleReadout { span: f64, t1: f64 },
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Warning>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn first_violation(&self) -> Option<&Violation> {
        self.violations.first()
    }
}

/// Relative slack for the T1 comparison; the event clock is accumulated in
/// floating point.
const BUDGET_SLACK: f64 = 1e-12;

pub fn validate_sequence(s: &PulseSequence, p: &ProtocolParams) -> ValidationReport {
    let mut report = ValidationReport::default();
    for (index, e) in s.events.iter().enumerate() {
        if !(e.start.is_finite() && e.duration.is_finite() && e.start >= 0.0 && e.duration >= 0.0) {
            report.violations.push(Violation::BadTiming { index });
        }
        if index > 0 && e.start < s.events[index - 1].start {
            report.violations.push(Violation::NotSorted { index });
        }
    }
    for (index, e) in s.events.iter().enumerate() {
        if e.kind != EventKind::ReadoutWindow {
            continue;
        }
        let covered = s.events.iter().any(|l| {
            l.kind == EventKind::ConfocalLaserPulse && l.voxel == e.voxel && l.start <= e.start && e.end() <= l.end()
        });
        if !covered {
            report.violations.push(Violation::ReadoutOutsideLaser { index });
        }
    }
    if s.tag.is_recurrent() {
        let mw = s.events.iter().enumerate().find(|(_, e)| e.kind == EventKind::MwBlock);
        let last = s
            .events
            .iter()
            .enumerate()
            .filter(|(_, e)| e.kind == EventKind::ReadoutWindow)
            .max_by(|a, b| a.1.end().total_cmp(&b.1.end()));
        match (mw, last) {
            (None, _) => report.violations.push(Violation::MissingMwBlock),
            (Some((mw_index, mw)), Some((readout_index, ro))) => {
                let span = ro.end() - mw.end();
                if span > p.t1 * (1.0 + BUDGET_SLACK) {
                    if s.count(EventKind::ReadoutWindow) == 1 {
                        report.warnings.push(Warning::ForcedSingleReadout { span, t1: p.t1 });
                    } else {
                        report.violations.push(Violation::T1Budget { mw_index, readout_index, span, t1: p.t1 });
                    }
                }
            }
            (Some(_), None) => {}
        }
    }
    report
}

/// Fraction of the sequence span spent inside readout windows.
pub fn duty_cycle(s: &PulseSequence) -> f64 {
    let span = s.span();
    if span <= 0.0 {
        return 0.0;
    }
    let busy: f64 = s.readouts().map(|e| e.duration).sum();
    (busy / span).clamp(0.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params(t1: f64, t_ro: f64, t_init: f64, t_d: f64) -> ProtocolParams {
        ProtocolParams { t_init_ls: 20.0, t_init_conf: t_init, t_ro_conf: t_ro, t_mw: 100.0, t_d, t1 }
    }

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs()
    }

    #[test]
    fn lcqdm_counts() {
        assert_eq!(recurrent_count_lcqdm(&params(5000.0, 5.0, 20.0, 0.1)).unwrap(), 980);
        assert_eq!(recurrent_count_lcqdm(&params(5.5, 5.0, 20.0, 0.5)).unwrap(), 1);
        assert_eq!(recurrent_count_lcqdm(&params(5000.0, 50.0, 20.0, 0.0)).unwrap(), 100);
        assert_eq!(recurrent_count_lcqdm(&params(1.0, 5.0, 20.0, 0.1)).unwrap(), 1);
        let mut zero = params(5000.0, 5.0, 20.0, 0.0);
        zero.t_ro_conf = 0.0;
        assert!(recurrent_count_lcqdm(&zero).is_err());
    }

    #[test]
    fn leibold_counts() {
        assert_eq!(recurrent_count_leibold(&params(5000.0, 5.0, 20.0, 0.1)).unwrap(), 199);
        assert_eq!(recurrent_count_leibold(&params(25.5, 5.0, 20.0, 0.5)).unwrap(), 1);
        assert_eq!(recurrent_count_leibold(&params(5000.0, 10.0, 50.0, 0.1)).unwrap(), 83);
    }

    #[test]
    fn lcqdm_cycle_layout() {
        let p = params(16.0, 5.0, 20.0, 0.1);
        let s = build_lcqdm_cycle(&p).unwrap();
        // light sheet + MW + 3 x (laser, readout, dead)
        assert_eq!(s.events.len(), 2 + 3 * 3);
        assert_eq!(s.count(EventKind::ReadoutWindow), 3);
        assert!(close(s.span(), 20.0 + 100.0 + 3.0 * 5.1, 1e-14));
        assert!(validate_sequence(&s, &p).is_valid());

        let p = params(5.05, 5.0, 20.0, 0.1);
        let s = build_lcqdm_cycle(&p).unwrap();
        assert_eq!(s.events.len(), 5);

        let p = params(5000.0, 5.0, 20.0, 0.1);
        let s = build_lcqdm_cycle(&p).unwrap();
        let mw_end = s.events[1].end();
        let last = s.readouts().last().unwrap().end();
        assert!(last <= mw_end + 5000.0);
        assert!(validate_sequence(&s, &p).is_valid());
    }

    #[test]
    fn leibold_cycle_layout() {
        let p = params(5000.0, 5.0, 20.0, 0.1);
        let s = build_leibold_cycle(&p).unwrap();
        assert_eq!(s.count(EventKind::ReadoutWindow), 199);
        assert!(validate_sequence(&s, &p).is_valid());

        let p = params(50.3, 5.0, 20.0, 0.1);
        let s = build_leibold_cycle(&p).unwrap();
        assert_eq!(s.events.len(), 1 + 2 * 3);
    }

    #[test]
    fn leibold_without_reinit_matches_lcqdm_cadence() {
        let p = params(300.0, 5.0, 0.0, 0.1);
        let lc = build_lcqdm_cycle(&p).unwrap();
        let lb = build_leibold_cycle(&p).unwrap();
        let offset = p.t_init_ls;
        let a: Vec<f64> = lc.readouts().map(|e| e.start - offset).collect();
        let b: Vec<f64> = lb.readouts().map(|e| e.start).collect();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn conventional_cycle_layout() {
        let p = params(5000.0, 5.0, 20.0, 0.1);
        let s = build_conventional_cycle(&p).unwrap();
        assert_eq!(s.count(EventKind::ReadoutWindow), 1);
        assert!(close(s.span(), 125.1, 1e-14));
        let p = params(5000.0, 5.0, 20.0, 0.0);
        let s = build_conventional_cycle(&p).unwrap();
        assert_eq!(s.span(), 125.0);
        assert!(validate_sequence(&s, &p).is_valid());
    }

    #[test]
    fn calibration_sequence_timing() {
        let p = params(5000.0, 5.0, 3.0, 0.1);
        let s = build_calibration_sequence(&p, 0.0).unwrap();
        let ro: Vec<_> = s.readouts().collect();
        assert_eq!(ro.len(), 2);
        assert_eq!(ro[0].start, 3.0);

        let s = build_calibration_sequence(&p, 2.0).unwrap();
        let lasers: Vec<_> = s.events.iter().filter(|e| e.kind == EventKind::ConfocalLaserPulse).collect();
        let ro: Vec<_> = s.readouts().collect();
        // Laser rises after each init pulse: events 1 and 3 of the laser list.
        assert_eq!(ro[0].start - lasers[1].start, 2.0);
        assert_eq!(ro[1].start - lasers[3].start, 2.0);
        assert_eq!(s.count(EventKind::MwBlock), 2);
        assert!(validate_sequence(&s, &p).is_valid());

        assert!(build_calibration_sequence(&p, -1.0).is_err());
    }

    #[test]
    fn validator_flags_t1_overrun() {
        let p = params(50.0, 5.0, 20.0, 0.0);
        let mut b = TimelineBuilder::new(ProtocolTag::LcQdm);
        b.push(EventKind::MwBlock, 10.0, None);
        b.readout_slot(0, 5.0, 5.0, 0.0);
        // Second readout ends exactly t1 + 1 after the MW block.
        b.push(EventKind::DeadTime, 41.0, None);
        b.readout_slot(1, 5.0, 5.0, 0.0);
        let s = b.finish();
        let r = validate_sequence(&s, &p);
        match r.first_violation() {
            Some(Violation::T1Budget { span, .. }) => assert!(close(*span, 51.0, 1e-12)),
            other => panic!("expected T1 violation, got {other:?}"),
        }
    }

    #[test]
    fn validator_flags_uncovered_readout() {
        let p = params(5000.0, 5.0, 20.0, 0.1);
        let mut s = build_conventional_cycle(&p).unwrap();
        s.events.retain(|e| !(e.kind == EventKind::ConfocalLaserPulse && e.start > 0.0));
        let r = validate_sequence(&s, &p);
        assert!(matches!(r.first_violation(), Some(Violation::ReadoutOutsideLaser { .. })));

        let mut s = build_lcqdm_cycle(&p).unwrap();
        // Retarget one readout to a voxel that has no laser.
        let idx = s.events.iter().position(|e| e.kind == EventKind::ReadoutWindow).unwrap();
        s.events[idx].voxel = Some(999_999);
        let r = validate_sequence(&s, &p);
        assert_eq!(r.first_violation(), Some(&Violation::ReadoutOutsideLaser { index: idx }));
    }

    #[test]
    fn forced_single_readout_is_a_warning() {
        let p = params(2.0, 5.0, 20.0, 0.1);
        let s = build_lcqdm_cycle(&p).unwrap();
        let r = validate_sequence(&s, &p);
        assert!(r.is_valid());
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn duty_cycle_examples() {
        let p = params(5000.0, 5.0, 20.0, 0.1);
        let lc = build_lcqdm_cycle(&p).unwrap();
        assert!(close(duty_cycle(&lc), 4900.0 / 5118.0, 1e-12));
        let conv = build_conventional_cycle(&p).unwrap();
        assert!(close(duty_cycle(&conv), 5.0 / 125.1, 1e-12));
        let mut b = TimelineBuilder::new(ProtocolTag::LcQdm);
        b.push(EventKind::MwBlock, 10.0, None);
        assert_eq!(duty_cycle(&b.finish()), 0.0);
    }

    #[test]
    fn text_roundtrip() {
        let p = params(16.0, 5.0, 20.0, 0.1);
        let s = build_lcqdm_cycle(&p).unwrap();
        let text = s.to_text();
        let back = PulseSequence::from_text(&text).unwrap();
        assert_eq!(back.to_text(), text);
        assert_eq!(back.tag, ProtocolTag::LcQdm);
        assert!(PulseSequence::from_text("mw 0 1\n").is_err());
    }
}
