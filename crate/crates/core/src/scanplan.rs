// SPDX-License-Identifier: Apache-2.0

//! Whole-grid acquisition schedules and AOM drive frequencies.
//!
//! Voxels are visited in raster order (x fastest, then y, then z). Each
//! cycle reads a contiguous run of voxels; the last cycle of a protocol is
//! charged for the voxels it actually reads.

use std::fmt::Write as _;
use std::ops::Range;

use crate::error::{Error, Result, positive};
use crate::sequence::{EventKind, ProtocolParams, ProtocolTag, PulseSequence, TimelineBuilder, readouts_per_cycle};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelGrid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
    /// Voxel pitch along x, y, z in um.
    pub pitch: [f64; 3],
}

impl VoxelGrid {
    pub fn new(nx: usize, ny: usize, nz: usize, pitch: [f64; 3]) -> Result<Self> {
        let g = VoxelGrid { nx, ny, nz, pitch };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 || self.nz == 0 {
            return Err(Error::domain(format!(
                "grid dimensions must be >= 1, got {}x{}x{}",
                self.nx, self.ny, self.nz
            )));
        }
        for p in self.pitch {
            positive("voxel pitch", p)?;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, v: [usize; 3]) -> Result<usize> {
        if v[0] >= self.nx || v[1] >= self.ny || v[2] >= self.nz {
            return Err(Error::Index(format!("voxel {v:?} outside {}x{}x{} grid", self.nx, self.ny, self.nz)));
        }
        Ok(v[0] + self.nx * (v[1] + self.ny * v[2]))
    }

    pub fn voxel_at(&self, index: usize) -> [usize; 3] {
        let plane = self.nx * self.ny;
        [index % self.nx, (index % plane) / self.nx, index / plane]
    }

    /// Whether moving on from voxel `index` means refocusing to the next
    /// z-plane.
    fn ends_plane(&self, index: usize) -> bool {
        let plane = self.nx * self.ny;
        (index + 1).is_multiple_of(plane) && index + 1 < self.len()
    }
}

/// Affine drive map `f = f0 + slope * position` for one AOM axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisMap {
    pub f0_mhz: f64,
    pub slope_mhz_per_um: f64,
}

impl AxisMap {
    pub fn frequency(&self, position_um: f64) -> f64 {
        self.f0_mhz + self.slope_mhz_per_um * position_um
    }

    pub fn position(&self, f_mhz: f64) -> f64 {
        (f_mhz - self.f0_mhz) / self.slope_mhz_per_um
    }
}

/// Drive maps of the scan (excitation) and descan (PL) AOM pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AomCalibration {
    pub scan_x: AxisMap,
    pub scan_y: AxisMap,
    pub descan_x: AxisMap,
    pub descan_y: AxisMap,
}

impl Default for AomCalibration {
    fn default() -> Self {
        let scan = AxisMap { f0_mhz: 80.0, slope_mhz_per_um: 0.1 };
        // The descan pair runs mirrored so the PL stays on the pinhole.
        let descan = AxisMap { f0_mhz: 80.0, slope_mhz_per_um: -0.1 };
        AomCalibration { scan_x: scan, scan_y: scan, descan_x: descan, descan_y: descan }
    }
}

impl AomCalibration {
    fn channels(&self) -> [(&'static str, AxisMap, usize); 4] {
        [
            ("scan_x", self.scan_x, 0),
            ("scan_y", self.scan_y, 1),
            ("descan_x", self.descan_x, 0),
            ("descan_y", self.descan_y, 1),
        ]
    }

    /// Slopes must be nonzero and every channel positive across `grid`.
    pub fn validate(&self, grid: &VoxelGrid) -> Result<()> {
        let extent = [(grid.nx - 1) as f64 * grid.pitch[0], (grid.ny - 1) as f64 * grid.pitch[1]];
        for (name, map, axis) in self.channels() {
            if !(map.slope_mhz_per_um != 0.0 && map.slope_mhz_per_um.is_finite() && map.f0_mhz.is_finite()) {
                return Err(Error::domain(format!("{name}: slope must be finite and nonzero")));
            }
            let lo = map.frequency(0.0).min(map.frequency(extent[axis]));
            if !(lo > 0.0) {
                return Err(Error::domain(format!("{name}: drive frequency reaches {lo} MHz inside the grid")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RfEntry {
    pub voxel: [usize; 3],
    pub f_scan_x: f64,
    pub f_scan_y: f64,
    pub f_descan_x: f64,
    pub f_descan_y: f64,
}

/// Drive frequencies (MHz) that point the readout beam at `v` and keep its
/// PL on the pinhole.
pub fn rf_for_voxel(v: [usize; 3], grid: &VoxelGrid, cal: &AomCalibration) -> Result<RfEntry> {
    grid.index_of(v)?;
    let x = v[0] as f64 * grid.pitch[0];
    let y = v[1] as f64 * grid.pitch[1];
    Ok(RfEntry {
        voxel: v,
        f_scan_x: cal.scan_x.frequency(x),
        f_scan_y: cal.scan_y.frequency(y),
        f_descan_x: cal.descan_x.frequency(x),
        f_descan_y: cal.descan_y.frequency(y),
    })
}

/// Inverse of [`rf_for_voxel`] for a voxel in plane `z`. Fails if the scan
/// and descan channels disagree by more than a tenth of a voxel.
pub fn voxel_for_rf(rf: &RfEntry, z: usize, grid: &VoxelGrid, cal: &AomCalibration) -> Result<[usize; 3]> {
    let mut out = [0, 0, z];
    let pairs = [
        (0, cal.scan_x.position(rf.f_scan_x), cal.descan_x.position(rf.f_descan_x)),
        (1, cal.scan_y.position(rf.f_scan_y), cal.descan_y.position(rf.f_descan_y)),
    ];
    for (axis, scan, descan) in pairs {
        let (a, b) = (scan / grid.pitch[axis], descan / grid.pitch[axis]);
        if (a - b).abs() > 0.1 {
            return Err(Error::Index(format!("scan/descan disagree on axis {axis}: {a} vs {b} voxels")));
        }
        let k = a.round();
        if k < 0.0 {
            return Err(Error::Index(format!("axis {axis} position {a} is negative")));
        }
        out[axis] = k as usize;
    }
    grid.index_of(out)?;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlannedCycle {
    /// Raster indices read in this cycle.
    pub voxel_start: usize,
    pub voxel_end: usize,
    pub start: f64,
    pub duration: f64,
}

impl PlannedCycle {
    pub fn voxels(&self) -> Range<usize> {
        self.voxel_start..self.voxel_end
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PlanSettings {
    /// Refocus time between z-planes; defaults to the in-plane dead time.
    pub t_z_step: Option<f64>,
    /// When set, the plan carries one RF entry per voxel.
    pub aom: Option<AomCalibration>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPlan {
    pub tag: ProtocolTag,
    pub grid: VoxelGrid,
    pub cycles: Vec<PlannedCycle>,
    pub total_time: f64,
    pub rf_schedule: Vec<RfEntry>,
}

pub const CYCLES_CSV_HEADER: &str = "cycle,voxel_start,voxel_end,start_us,duration_us";
pub const RF_CSV_HEADER: &str = "voxel_x,voxel_y,voxel_z,f_sx_mhz,f_sy_mhz,f_dx_mhz,f_dy_mhz";

impl ScanPlan {
    /// `voxel_end` is inclusive in the export.
    pub fn cycles_csv(&self) -> String {
        let mut out = format!("{CYCLES_CSV_HEADER}\n");
        for (k, c) in self.cycles.iter().enumerate() {
            writeln!(out, "{k},{},{},{},{}", c.voxel_start, c.voxel_end - 1, c.start, c.duration)
                .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn rf_csv(&self) -> String {
        let mut out = format!("{RF_CSV_HEADER}\n");
        for e in &self.rf_schedule {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.voxel[0], e.voxel[1], e.voxel[2], e.f_scan_x, e.f_scan_y, e.f_descan_x, e.f_descan_y
            )
            .expect("writing to a String cannot fail");
        }
        out
    }

    pub fn report(&self) -> String {
        format!(
            "protocol = {}\ngrid = {}x{}x{}\nvoxels = {}\ncycles = {}\ntotal_time_us = {}\n",
            self.tag,
            self.grid.nx,
            self.grid.ny,
            self.grid.nz,
            self.grid.len(),
            self.cycles.len(),
            self.total_time
        )
    }
}

fn dead_after(grid: &VoxelGrid, p: &ProtocolParams, t_z_step: f64, index: usize) -> f64 {
    if grid.ends_plane(index) { t_z_step } else { p.t_d }
}

fn z_step(p: &ProtocolParams, settings: &PlanSettings) -> Result<f64> {
    let t = settings.t_z_step.unwrap_or(p.t_d);
    crate::error::non_negative("t_z_step", t)
}

/// Closed-form duration of a cycle reading the voxels in `voxels`.
fn cycle_cost(grid: &VoxelGrid, p: &ProtocolParams, tag: ProtocolTag, t_z_step: f64, voxels: Range<usize>) -> f64 {
    let n = voxels.len() as f64;
    let refocus = voxels.clone().filter(|&v| grid.ends_plane(v)).count() as f64 * (t_z_step - p.t_d);
    match tag {
        ProtocolTag::LcQdm => p.t_init_ls + p.t_mw + n * (p.t_ro_conf + p.t_d) + refocus,
        ProtocolTag::Leibold => p.t_mw + n * (p.t_ro_conf + p.t_init_conf + p.t_d) + refocus,
        ProtocolTag::Conventional | ProtocolTag::Calibration => {
            p.t_init_conf + p.t_mw + n * (p.t_ro_conf + p.t_d) + refocus
        }
    }
}

/// Event timeline of one planned cycle.
pub fn cycle_sequence(
    grid: &VoxelGrid,
    p: &ProtocolParams,
    tag: ProtocolTag,
    settings: &PlanSettings,
    voxels: Range<usize>,
) -> Result<PulseSequence> {
    let t_z_step = z_step(p, settings)?;
    let mut b = TimelineBuilder::new(tag);
    match tag {
        ProtocolTag::LcQdm => {
            b.push(EventKind::LightSheetPulse, p.t_init_ls, None);
            b.push(EventKind::MwBlock, p.t_mw, None);
        }
        ProtocolTag::Leibold => {
            b.push(EventKind::MwBlock, p.t_mw, None);
        }
        ProtocolTag::Conventional | ProtocolTag::Calibration => {
            b.push(EventKind::ConfocalLaserPulse, p.t_init_conf, Some(voxels.start));
            b.push(EventKind::MwBlock, p.t_mw, None);
        }
    }
    let laser = match tag {
        ProtocolTag::Leibold => p.t_ro_conf + p.t_init_conf,
        _ => p.t_ro_conf,
    };
    for v in voxels {
        b.readout_slot(v, p.t_ro_conf, laser, dead_after(grid, p, t_z_step, v));
    }
    Ok(b.finish())
}

/// Batches the grid into cycles for `tag` and accounts for the total time.
pub fn plan_acquisition(
    grid: &VoxelGrid,
    p: &ProtocolParams,
    tag: ProtocolTag,
    settings: &PlanSettings,
) -> Result<ScanPlan> {
    grid.validate()?;
    p.validate()?;
    if tag == ProtocolTag::Calibration {
        return Err(Error::Usage("cannot plan a grid acquisition for the calibration sequence".into()));
    }
    let t_z_step = z_step(p, settings)?;
    let batch = readouts_per_cycle(p, tag)?;
    let total_voxels = grid.len();
    let mut cycles = Vec::with_capacity(total_voxels.div_ceil(batch));
    let mut clock = 0.0;
    let mut first = 0;
    while first < total_voxels {
        let last = (first + batch).min(total_voxels);
        let duration = cycle_cost(grid, p, tag, t_z_step, first..last);
        cycles.push(PlannedCycle { voxel_start: first, voxel_end: last, start: clock, duration });
        clock += duration;
        first = last;
    }
    let rf_schedule = match &settings.aom {
        Some(cal) => {
            cal.validate(grid)?;
            (0..total_voxels).map(|k| rf_for_voxel(grid.voxel_at(k), grid, cal)).collect::<Result<Vec<_>>>()?
        }
        None => Vec::new(),
    };
    Ok(ScanPlan { tag, grid: *grid, cycles, total_time: clock, rf_schedule })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedupReport {
    pub total_lcqdm: f64,
    pub total_leibold: f64,
    pub total_conventional: f64,
    pub conventional_over_lcqdm: f64,
    pub leibold_over_lcqdm: f64,
}

impl SpeedupReport {
    pub fn report(&self) -> String {
        format!(
            "total_time_lcqdm_us = {}\ntotal_time_leibold_us = {}\ntotal_time_conventional_us = {}\nspeedup_conventional_over_lcqdm = {}\nspeedup_leibold_over_lcqdm = {}\n",
            self.total_lcqdm,
            self.total_leibold,
            self.total_conventional,
            self.conventional_over_lcqdm,
            self.leibold_over_lcqdm
        )
    }
}

pub fn speedup_report(grid: &VoxelGrid, p: &ProtocolParams, settings: &PlanSettings) -> Result<SpeedupReport> {
    let settings = PlanSettings { aom: None, ..settings.clone() };
    let total = |tag| plan_acquisition(grid, p, tag, &settings).map(|plan| plan.total_time);
    let (lc, lb, conv) = (total(ProtocolTag::LcQdm)?, total(ProtocolTag::Leibold)?, total(ProtocolTag::Conventional)?);
    Ok(SpeedupReport {
        total_lcqdm: lc,
        total_leibold: lb,
        total_conventional: conv,
        conventional_over_lcqdm: conv / lc,
        leibold_over_lcqdm: lb / lc,
    })
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::sequence::build_cycle;

    fn table_params() -> ProtocolParams {
        ProtocolParams { t_init_ls: 20.0, t_init_conf: 20.0, t_ro_conf: 5.0, t_mw: 100.0, t_d: 0.1, t1: 5000.0 }
    }

    fn grid(nx: usize, ny: usize, nz: usize) -> VoxelGrid {
        VoxelGrid::new(nx, ny, nz, [1.0; 3]).unwrap()
    }

    #[test]
    fn lcqdm_100x100() {
        let plan = plan_acquisition(&grid(100, 100, 1), &table_params(), ProtocolTag::LcQdm, &PlanSettings::default())
            .unwrap();
        assert_eq!(plan.cycles.len(), 11);
        assert!((plan.total_time - 52_320.0).abs() < 1e-6);
        assert_eq!(plan.cycles.last().unwrap().voxels().len(), 10_000 - 10 * 980);
    }

    #[test]
    fn conventional_100x100() {
        let plan =
            plan_acquisition(&grid(100, 100, 1), &table_params(), ProtocolTag::Conventional, &PlanSettings::default())
                .unwrap();
        assert_eq!(plan.cycles.len(), 10_000);
        assert!((plan.total_time - 1_251_000.0).abs() < 1e-6);
    }

    #[test]
    fn single_voxel_matches_sequence_span() {
        let g = grid(1, 1, 1);
        for tag in ProtocolTag::SCANNING {
            let plan = plan_acquisition(&g, &table_params(), tag, &PlanSettings::default()).unwrap();
            let mut p = table_params();
            // Force one readout per cycle so the sequence module builds the same cycle.
            p.t1 = p.readout_slot(tag);
            let span = build_cycle(&p, tag).unwrap().span();
            assert!((plan.total_time - span).abs() < 1e-9, "{tag}");
        }
    }

    #[test]
    fn voxel_ranges_partition_grid() {
        let g = grid(7, 5, 3);
        for tag in ProtocolTag::SCANNING {
            let mut p = table_params();
            p.t1 = 40.0;
            let plan = plan_acquisition(&g, &p, tag, &PlanSettings::default()).unwrap();
            let mut next = 0;
            for c in &plan.cycles {
                assert_eq!(c.voxel_start, next);
                assert!(c.voxel_end > c.voxel_start);
                next = c.voxel_end;
            }
            assert_eq!(next, g.len());
            let last = plan.cycles.last().unwrap();
            assert_eq!(plan.total_time, last.start + last.duration);
        }
    }

    #[test]
    fn z_steps_are_charged() {
        let g = grid(4, 4, 3);
        let p = table_params();
        let base = plan_acquisition(&g, &p, ProtocolTag::LcQdm, &PlanSettings::default()).unwrap();
        let slow = PlanSettings { t_z_step: Some(50.0), aom: None };
        let plan = plan_acquisition(&g, &p, ProtocolTag::LcQdm, &slow).unwrap();
        // Two plane changes in a 3-plane grid.
        assert!((plan.total_time - base.total_time - 2.0 * (50.0 - 0.1)).abs() < 1e-9);
        let summed: f64 = plan
            .cycles
            .iter()
            .map(|c| cycle_sequence(&g, &p, ProtocolTag::LcQdm, &slow, c.voxels()).unwrap().span())
            .sum();
        assert!((summed - plan.total_time).abs() < 1e-9);
    }

    #[test]
    fn rf_examples() {
        let g = grid(16, 16, 1);
        let cal = AomCalibration::default();
        let e = rf_for_voxel([10, 0, 0], &g, &cal).unwrap();
        assert!((e.f_scan_x - 81.0).abs() < 1e-12);
        let o = rf_for_voxel([0, 0, 0], &g, &cal).unwrap();
        assert_eq!((o.f_scan_x, o.f_scan_y, o.f_descan_x, o.f_descan_y), (80.0, 80.0, 80.0, 80.0));
        assert!(matches!(rf_for_voxel([16, 0, 0], &g, &cal), Err(Error::Index(_))));
    }

    #[test]
    fn rf_roundtrip_16x16() {
        let g = grid(16, 16, 1);
        let cal = AomCalibration::default();
        for k in 0..g.len() {
            let v = g.voxel_at(k);
            let rf = rf_for_voxel(v, &g, &cal).unwrap();
            assert_eq!(voxel_for_rf(&rf, v[2], &g, &cal).unwrap(), v);
        }
    }

    #[test]
    fn calibration_validation() {
        let g = grid(1000, 10, 1);
        let cal = AomCalibration::default();
        // 80 - 0.1 * 999 < 0 on the descan channel.
        assert!(cal.validate(&g).is_err());
        let mut flat = cal;
        flat.scan_y.slope_mhz_per_um = 0.0;
        assert!(flat.validate(&grid(4, 4, 1)).is_err());
    }

    #[test]
    fn speedup_of_table_grid() {
        let r = speedup_report(&grid(100, 100, 1), &table_params(), &PlanSettings::default()).unwrap();
        assert!((r.conventional_over_lcqdm - 1_251_000.0 / 52_320.0).abs() < 1e-9);
        assert!(r.leibold_over_lcqdm > 1.0);
    }

    #[test]
    fn csv_exports() {
        let g = grid(2, 2, 1);
        let settings = PlanSettings { t_z_step: None, aom: Some(AomCalibration::default()) };
        let plan = plan_acquisition(&g, &table_params(), ProtocolTag::Conventional, &settings).unwrap();
        let cycles = plan.cycles_csv();
        assert_eq!(cycles.lines().next().unwrap(), CYCLES_CSV_HEADER);
        assert_eq!(cycles.lines().nth(1).unwrap(), "0,0,0,0,125.1");
        let rf = plan.rf_csv();
        assert_eq!(rf.lines().count(), 5);
        assert_eq!(rf.lines().nth(2).unwrap(), "1,0,0,80.1,80,79.9,80");
    }
}
