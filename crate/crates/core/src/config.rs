// SPDX-License-Identifier: Apache-2.0

//! Flat `key = value unit` run configuration.
//!
//! Every dimensioned key must carry a unit suffix; values are converted to
//! canonical units (us, um, mW, mW/um², MHz, MHz/um, counts/us) on parse
//! and written back in those units by [`RunConfig::to_text`].

use std::collections::HashMap;
use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::photophysics::{
    Intensity, LogQuadraticCurve, PhotophysicsModel, confocal_intensity, lightsheet_intensity, log_space,
};
use crate::scanplan::{AomCalibration, AxisMap, PlanSettings, VoxelGrid};
use crate::sensitivity::{SweepSpec, params_at};
use crate::sequence::ProtocolParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dim {
    Time,
    Length,
    Power,
    Intensity,
    Frequency,
    FreqSlope,
    Rate,
    Scalar,
    Count,
    Seed,
    Text,
}

impl Dim {
    fn canonical_unit(self) -> Option<&'static str> {
        Some(match self {
            Dim::Time => "us",
            Dim::Length => "um",
            Dim::Power => "mW",
            Dim::Intensity => "mW/um2",
            Dim::Frequency => "MHz",
            Dim::FreqSlope => "MHz/um",
            Dim::Rate => "counts/us",
            Dim::Scalar | Dim::Count | Dim::Seed | Dim::Text => return None,
        })
    }

    /// Factor converting `unit` to the canonical unit.
    fn scale(self, unit: &str) -> Option<f64> {
        let table: &[(&str, f64)] = match self {
            Dim::Time => &[("ps", 1e-6), ("ns", 1e-3), ("us", 1.0), ("μs", 1.0), ("µs", 1.0), ("ms", 1e3), ("s", 1e6)],
            Dim::Length => &[("nm", 1e-3), ("um", 1.0), ("μm", 1.0), ("µm", 1.0), ("mm", 1e3)],
            Dim::Power => &[("nW", 1e-6), ("uW", 1e-3), ("μW", 1e-3), ("µW", 1e-3), ("mW", 1.0), ("W", 1e3)],
            Dim::Intensity => &[
                ("mW/um2", 1.0),
                ("mW/um^2", 1.0),
                ("mW/μm²", 1.0),
                ("mW/µm²", 1.0),
                ("uW/um2", 1e-3),
                ("uW/um^2", 1e-3),
                ("μW/μm²", 1e-3),
                ("W/um2", 1e3),
                ("W/cm2", 1e-5),
                ("kW/cm2", 1e-2),
            ],
            Dim::Frequency => &[("Hz", 1e-6), ("kHz", 1e-3), ("MHz", 1.0), ("GHz", 1e3)],
            Dim::FreqSlope => &[("kHz/um", 1e-3), ("MHz/um", 1.0), ("MHz/μm", 1.0), ("MHz/µm", 1.0)],
            Dim::Rate => &[("counts/s", 1e-6), ("cps", 1e-6), ("kcps", 1e-3), ("Mcps", 1.0), ("counts/us", 1.0)],
            Dim::Scalar | Dim::Count | Dim::Seed | Dim::Text => &[],
        };
        table.iter().find(|(u, _)| *u == unit).map(|(_, s)| *s)
    }
}

struct Key {
    name: &'static str,
    dim: Dim,
    required: bool,
}

const fn req(name: &'static str, dim: Dim) -> Key {
    Key { name, dim, required: true }
}

const fn opt(name: &'static str, dim: Dim) -> Key {
    Key { name, dim, required: false }
}

/// Recognized keys, in the order [`RunConfig::to_text`] writes them.
const KEYS: &[Key] = &[
    // photophysics (synthetic defaults)
    req("init_a", Dim::Scalar),
    req("init_b", Dim::Scalar),
    req("init_c", Dim::Scalar),
    req("ro_a", Dim::Scalar),
    req("ro_b", Dim::Scalar),
    req("ro_c", Dim::Scalar),
    req("i_sat", Dim::Intensity),
    req("r_max", Dim::Rate),
    req("c0", Dim::Scalar),
    req("i_min", Dim::Intensity),
    req("i_max", Dim::Intensity),
    // light sheet
    req("l_y", Dim::Length),
    req("d_ls", Dim::Length),
    req("p_ls", Dim::Power),
    opt("i_ls", Dim::Intensity),
    // confocal readout
    req("delta_conf", Dim::Length),
    req("p_conf", Dim::Power),
    req("p_conf_min", Dim::Power),
    req("p_conf_max", Dim::Power),
    opt("i_conf", Dim::Intensity),
    // timing
    opt("t_init_ls", Dim::Time),
    opt("t_init_conf", Dim::Time),
    opt("t_ro_conf", Dim::Time),
    req("t_d", Dim::Time),
    req("t_mw", Dim::Time),
    req("t_mw_min", Dim::Time),
    req("t_mw_max", Dim::Time),
    req("t1", Dim::Time),
    opt("t_z_step", Dim::Time),
    // sweep
    req("sweep_i_conf_points", Dim::Count),
    req("sweep_t_mw_points", Dim::Count),
    // scan grid
    req("scan_nx", Dim::Count),
    req("scan_ny", Dim::Count),
    req("scan_nz", Dim::Count),
    req("scan_pitch_xy", Dim::Length),
    req("scan_pitch_z", Dim::Length),
    // AOM drive maps
    req("aom_scan_x_f0", Dim::Frequency),
    req("aom_scan_x_slope", Dim::FreqSlope),
    req("aom_scan_y_f0", Dim::Frequency),
    req("aom_scan_y_slope", Dim::FreqSlope),
    req("aom_descan_x_f0", Dim::Frequency),
    req("aom_descan_x_slope", Dim::FreqSlope),
    req("aom_descan_y_f0", Dim::Frequency),
    req("aom_descan_y_slope", Dim::FreqSlope),
    // run
    req("n_trials", Dim::Count),
    req("master_seed", Dim::Seed),
    req("output_dir", Dim::Text),
];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: PhotophysicsModel,
    pub l_y: f64,
    pub d_ls: f64,
    pub p_ls: f64,
    pub i_ls_override: Option<f64>,
    pub delta_conf: f64,
    pub p_conf: f64,
    pub p_conf_min: f64,
    pub p_conf_max: f64,
    pub i_conf_override: Option<f64>,
    pub t_init_ls_override: Option<f64>,
    pub t_init_conf_override: Option<f64>,
    pub t_ro_conf_override: Option<f64>,
    pub t_d: f64,
    pub t_mw: f64,
    pub t_mw_min: f64,
    pub t_mw_max: f64,
    pub t1: f64,
    pub t_z_step: Option<f64>,
    pub sweep_i_conf_points: usize,
    pub sweep_t_mw_points: usize,
    pub scan: VoxelGrid,
    pub aom: AomCalibration,
    pub n_trials: usize,
    pub master_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for RunConfig {
    /// Reference operating ranges with the synthetic photophysics model and
    /// a 5 ms T1.
    fn default() -> Self {
        RunConfig {
            model: PhotophysicsModel::default(),
            l_y: 100.0,
            d_ls: 10.0,
            p_ls: 200.0,
            i_ls_override: None,
            delta_conf: 0.53,
            p_conf: 2.0,
            p_conf_min: 0.002,
            p_conf_max: 2.0,
            i_conf_override: None,
            t_init_ls_override: None,
            t_init_conf_override: None,
            t_ro_conf_override: None,
            t_d: 0.1,
            t_mw: 100.0,
            t_mw_min: 1.0,
            t_mw_max: 1000.0,
            t1: 5000.0,
            t_z_step: None,
            sweep_i_conf_points: 61,
            sweep_t_mw_points: 61,
            scan: VoxelGrid { nx: 100, ny: 100, nz: 1, pitch: [1.0, 1.0, 1.0] },
            aom: AomCalibration::default(),
            n_trials: 10_000,
            master_seed: 42,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone)]
enum Value {
    Num(f64),
    Int(u64),
    Text(String),
}

fn parse_value(key: &Key, raw: &str, line: usize) -> Result<Value> {
    let err = |msg: String| Error::Config { line, msg };
    match key.dim {
        Dim::Text => {
            if raw.is_empty() {
                return Err(err(format!("`{}` needs a value", key.name)));
            }
            Ok(Value::Text(raw.to_string()))
        }
        Dim::Count | Dim::Seed => raw
            .parse::<u64>()
            .map(Value::Int)
            .map_err(|_| err(format!("`{}` expects a non-negative integer, got '{raw}'", key.name))),
        Dim::Scalar => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(Value::Num)
            .ok_or_else(|| err(format!("`{}` is dimensionless; expected a bare number, got '{raw}'", key.name))),
        dim => {
            let mut parts = raw.split_whitespace();
            let (num, unit) = match (parts.next(), parts.next(), parts.next()) {
                (Some(n), Some(u), None) => (n, u),
                (Some(_), None, _) => {
                    return Err(err(format!(
                        "`{}` needs a unit suffix (e.g. {})",
                        key.name,
                        dim.canonical_unit().unwrap_or("")
                    )));
                }
                _ => return Err(err(format!("malformed value '{raw}' for `{}`", key.name))),
            };
            let v: f64 = num
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| err(format!("malformed number '{num}' for `{}`", key.name)))?;
            let scale = dim.scale(unit).ok_or_else(|| err(format!("unit '{unit}' not valid for `{}`", key.name)))?;
            Ok(Value::Num(v * scale))
        }
    }
}

struct Entries {
    values: HashMap<&'static str, (Value, usize)>,
    last_line: usize,
}

impl Entries {
    fn line(&self, name: &str) -> usize {
        self.values.get(name).map_or(self.last_line, |(_, l)| *l)
    }

    fn num(&self, name: &str) -> Option<f64> {
        match self.values.get(name) {
            Some((Value::Num(v), _)) => Some(*v),
            _ => None,
        }
    }

    fn req_num(&self, name: &str) -> f64 {
        self.num(name).expect("required keys are checked before access")
    }

    fn int(&self, name: &str) -> u64 {
        match self.values.get(name) {
            Some((Value::Int(v), _)) => *v,
            _ => unreachable!("required keys are checked before access"),
        }
    }

    fn text(&self, name: &str) -> String {
        match self.values.get(name) {
            Some((Value::Text(v), _)) => v.clone(),
            _ => unreachable!("required keys are checked before access"),
        }
    }

    /// Attaches the line of `name` to a domain error.
    fn check<T>(&self, name: &str, r: Result<T>) -> Result<T> {
        r.map_err(|e| Error::Config { line: self.line(name), msg: format!("`{name}`: {e}") })
    }

    fn ensure(&self, name: &str, ok: bool, msg: &str) -> Result<()> {
        if ok { Ok(()) } else { Err(Error::Config { line: self.line(name), msg: format!("`{name}` {msg}") }) }
    }
}

/// Parses a config file. Unknown, duplicate or missing keys, malformed
/// units and invariant violations are reported with a line number (the
/// last line for missing keys).
pub fn parse_config(text: &str) -> Result<RunConfig> {
    let mut values = HashMap::new();
    let mut last_line = 0;
    for (n, raw_line) in text.lines().enumerate() {
        let line = n + 1;
        last_line = line;
        let content = raw_line.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (k, v) = content
            .split_once('=')
            .ok_or_else(|| Error::Config { line, msg: format!("expected `key = value`, got '{content}'") })?;
        let k = k.trim();
        let key = KEYS
            .iter()
            .find(|key| key.name == k)
            .ok_or_else(|| Error::Config { line, msg: format!("unknown key `{k}`") })?;
        let value = parse_value(key, v.trim(), line)?;
        if values.insert(key.name, (value, line)).is_some() {
            return Err(Error::Config { line, msg: format!("duplicate key `{k}`") });
        }
    }
    for key in KEYS.iter().filter(|k| k.required) {
        if !values.contains_key(key.name) {
            return Err(Error::Config { line: last_line, msg: format!("missing required key `{}`", key.name) });
        }
    }
    let e = Entries { values, last_line };
    build(&e)
}

fn build(e: &Entries) -> Result<RunConfig> {
    let curve = |p: &str| {
        LogQuadraticCurve::new(e.req_num(&format!("{p}_a")), e.req_num(&format!("{p}_b")), e.req_num(&format!("{p}_c")))
    };
    let model = PhotophysicsModel {
        init_curve: curve("init"),
        readout_curve: curve("ro"),
        i_sat: e.req_num("i_sat"),
        r_max: e.req_num("r_max"),
        c0: e.req_num("c0"),
        validity: (e.req_num("i_min"), e.req_num("i_max")),
    };
    e.check("c0", model.validate())?;

    let axis = |name: &str| AxisMap {
        f0_mhz: e.req_num(&format!("aom_{name}_f0")),
        slope_mhz_per_um: e.req_num(&format!("aom_{name}_slope")),
    };
    let pitch_xy = e.req_num("scan_pitch_xy");
    let count = |name: &str| -> Result<usize> {
        let v = e.int(name);
        e.ensure(name, v >= 1, "must be >= 1")?;
        usize::try_from(v).map_err(|_| Error::Config { line: e.line(name), msg: format!("`{name}` too large") })
    };
    let cfg = RunConfig {
        model,
        l_y: e.req_num("l_y"),
        d_ls: e.req_num("d_ls"),
        p_ls: e.req_num("p_ls"),
        i_ls_override: e.num("i_ls"),
        delta_conf: e.req_num("delta_conf"),
        p_conf: e.req_num("p_conf"),
        p_conf_min: e.req_num("p_conf_min"),
        p_conf_max: e.req_num("p_conf_max"),
        i_conf_override: e.num("i_conf"),
        t_init_ls_override: e.num("t_init_ls"),
        t_init_conf_override: e.num("t_init_conf"),
        t_ro_conf_override: e.num("t_ro_conf"),
        t_d: e.req_num("t_d"),
        t_mw: e.req_num("t_mw"),
        t_mw_min: e.req_num("t_mw_min"),
        t_mw_max: e.req_num("t_mw_max"),
        t1: e.req_num("t1"),
        t_z_step: e.num("t_z_step"),
        sweep_i_conf_points: count("sweep_i_conf_points")?,
        sweep_t_mw_points: count("sweep_t_mw_points")?,
        scan: VoxelGrid {
            nx: count("scan_nx")?,
            ny: count("scan_ny")?,
            nz: count("scan_nz")?,
            pitch: [pitch_xy, pitch_xy, e.req_num("scan_pitch_z")],
        },
        aom: AomCalibration {
            scan_x: axis("scan_x"),
            scan_y: axis("scan_y"),
            descan_x: axis("descan_x"),
            descan_y: axis("descan_y"),
        },
        n_trials: count("n_trials")?,
        master_seed: e.int("master_seed"),
        output_dir: PathBuf::from(e.text("output_dir")),
    };

    for name in ["t_d", "t_mw", "t_mw_min", "p_ls", "p_conf", "p_conf_min"] {
        let v = e.req_num(name);
        e.ensure(name, v >= 0.0, "must be >= 0")?;
    }
    for name in ["t_init_ls", "t_init_conf", "t_z_step"] {
        if let Some(v) = e.num(name) {
            e.ensure(name, v >= 0.0, "must be >= 0")?;
        }
    }
    for name in ["t1", "l_y", "d_ls", "delta_conf", "scan_pitch_xy", "scan_pitch_z"] {
        e.ensure(name, e.req_num(name) > 0.0, "must be > 0")?;
    }
    if let Some(v) = e.num("t_ro_conf") {
        e.ensure("t_ro_conf", v > 0.0, "must be > 0")?;
    }
    e.ensure("t_mw_max", cfg.t_mw_max >= cfg.t_mw_min, "must be >= t_mw_min")?;
    e.ensure("t_mw_min", cfg.t_mw_min > 0.0, "must be > 0 (log-spaced grid)")?;
    e.ensure("p_conf_max", cfg.p_conf_max >= cfg.p_conf_min, "must be >= p_conf_min")?;
    e.ensure("p_conf_min", cfg.p_conf_min > 0.0, "must be > 0 (log-spaced grid)")?;
    e.check("i_ls", cfg.i_ls().and_then(|i| cfg.model.check_range(i)))?;
    e.check("p_conf", cfg.i_conf().map(|_| ()))?;
    e.check("aom_scan_x_f0", cfg.aom.validate(&cfg.scan))?;
    Ok(cfg)
}

fn fmt_num(v: f64, dim: Dim) -> String {
    match dim.canonical_unit() {
        Some(u) => format!("{v} {u}"),
        None => format!("{v}"),
    }
}

impl RunConfig {
    pub fn i_ls(&self) -> Result<Intensity> {
        match self.i_ls_override {
            Some(v) => Intensity::new(v),
            None => lightsheet_intensity(self.p_ls, self.l_y, self.d_ls),
        }
    }

    pub fn i_conf(&self) -> Result<Intensity> {
        match self.i_conf_override {
            Some(v) => Intensity::new(v),
            None => confocal_intensity(self.p_conf, self.delta_conf),
        }
    }

    /// Protocol timings at the configured operating point; explicit timing
    /// keys take precedence over the photophysics model.
    pub fn protocol_params(&self) -> Result<ProtocolParams> {
        let model_params = || params_at(&self.model, self.i_conf()?, self.i_ls()?, self.t_mw, self.t1, self.t_d);
        let needs_model = self.t_init_ls_override.is_none()
            || self.t_init_conf_override.is_none()
            || self.t_ro_conf_override.is_none();
        let base = if needs_model { Some(model_params()?) } else { None };
        let pick = |o: Option<f64>, f: fn(&ProtocolParams) -> f64| o.unwrap_or_else(|| f(base.as_ref().unwrap()));
        let p = ProtocolParams {
            t_init_ls: pick(self.t_init_ls_override, |p| p.t_init_ls),
            t_init_conf: pick(self.t_init_conf_override, |p| p.t_init_conf),
            t_ro_conf: pick(self.t_ro_conf_override, |p| p.t_ro_conf),
            t_mw: self.t_mw,
            t_d: self.t_d,
            t1: self.t1,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec> {
        let lo = confocal_intensity(self.p_conf_min, self.delta_conf)?.value();
        let hi = confocal_intensity(self.p_conf_max, self.delta_conf)?.value();
        Ok(SweepSpec {
            i_conf_grid: log_space(lo, hi, self.sweep_i_conf_points),
            t_mw_grid: log_space(self.t_mw_min, self.t_mw_max, self.sweep_t_mw_points),
            i_ls: self.i_ls()?,
            model: self.model,
            t1: self.t1,
            t_d: self.t_d,
        })
    }

    pub fn plan_settings(&self) -> PlanSettings {
        PlanSettings { t_z_step: self.t_z_step, aom: Some(self.aom) }
    }

    /// Serializes every key in canonical units; re-parses to an equal config.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let mut out = String::from("# qdmsim run configuration (canonical units)\n");
        for key in KEYS {
            let num = |v: f64| Some(fmt_num(v, key.dim));
            let value = match key.name {
                "init_a" => num(m.init_curve.a),
                "init_b" => num(m.init_curve.b),
                "init_c" => num(m.init_curve.c),
                "ro_a" => num(m.readout_curve.a),
                "ro_b" => num(m.readout_curve.b),
                "ro_c" => num(m.readout_curve.c),
                "i_sat" => num(m.i_sat),
                "r_max" => num(m.r_max),
                "c0" => num(m.c0),
                "i_min" => num(m.validity.0),
                "i_max" => num(m.validity.1),
                "l_y" => num(self.l_y),
                "d_ls" => num(self.d_ls),
                "p_ls" => num(self.p_ls),
                "i_ls" => self.i_ls_override.and_then(num),
                "delta_conf" => num(self.delta_conf),
                "p_conf" => num(self.p_conf),
                "p_conf_min" => num(self.p_conf_min),
                "p_conf_max" => num(self.p_conf_max),
                "i_conf" => self.i_conf_override.and_then(num),
                "t_init_ls" => self.t_init_ls_override.and_then(num),
                "t_init_conf" => self.t_init_conf_override.and_then(num),
                "t_ro_conf" => self.t_ro_conf_override.and_then(num),
                "t_d" => num(self.t_d),
                "t_mw" => num(self.t_mw),
                "t_mw_min" => num(self.t_mw_min),
                "t_mw_max" => num(self.t_mw_max),
                "t1" => num(self.t1),
                "t_z_step" => self.t_z_step.and_then(num),
                "sweep_i_conf_points" => Some(self.sweep_i_conf_points.to_string()),
                "sweep_t_mw_points" => Some(self.sweep_t_mw_points.to_string()),
                "scan_nx" => Some(self.scan.nx.to_string()),
                "scan_ny" => Some(self.scan.ny.to_string()),
                "scan_nz" => Some(self.scan.nz.to_string()),
                "scan_pitch_xy" => num(self.scan.pitch[0]),
                "scan_pitch_z" => num(self.scan.pitch[2]),
                "aom_scan_x_f0" => num(self.aom.scan_x.f0_mhz),
                "aom_scan_x_slope" => num(self.aom.scan_x.slope_mhz_per_um),
                "aom_scan_y_f0" => num(self.aom.scan_y.f0_mhz),
                "aom_scan_y_slope" => num(self.aom.scan_y.slope_mhz_per_um),
                "aom_descan_x_f0" => num(self.aom.descan_x.f0_mhz),
                "aom_descan_x_slope" => num(self.aom.descan_x.slope_mhz_per_um),
                "aom_descan_y_f0" => num(self.aom.descan_y.f0_mhz),
                "aom_descan_y_slope" => num(self.aom.descan_y.slope_mhz_per_um),
                "n_trials" => Some(self.n_trials.to_string()),
                "master_seed" => Some(self.master_seed.to_string()),
                "output_dir" => Some(self.output_dir.display().to_string()),
                other => unreachable!("key `{other}` has no serializer"),
            };
            if let Some(v) = value {
                out.push_str(&format!("{} = {v}\n", key.name));
            }
        }
        out
    }
}
