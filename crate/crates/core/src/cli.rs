// SPDX-License-Identifier: Apache-2.0

//! Batch front end. Every command writes its files plus a
//! `manifest_<command>.txt` into the output directory.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use crate::calibration::{CalibrationTrace, ContrastMode, extract_times};
use crate::config::{RunConfig, parse_config};
use crate::error::{Error, Result};
use crate::montecarlo::{
    Counting, SimConfig, TraceSampling, calibration_grid, end_to_end_pipeline, simulate_calibration, simulate_protocol,
};
use crate::photophysics::{Intensity, log_space};
use crate::scanplan::{plan_acquisition, speedup_report};
use crate::sensitivity::{SensitivityResult, sweep, write_file};
use crate::sequence::{ProtocolTag, readouts_per_cycle};

#[derive(Debug, Parser)]
#[command(
    name = "qdmsim",
    version,
    about = "Protocol sensitivity, Monte Carlo and scan planning for scanning NV magnetometry"
)]
pub struct Cli {
    /// Run configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `output_dir`).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker threads for parallel stages. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Do not echo reports to stdout.
    #[arg(long, short, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Sensitivities of all three protocols at the configured operating point.
    Eval,
    /// Sensitivity grid over confocal intensity and MW duration.
    Sweep(SweepArgs),
    /// Monte Carlo photon-counting estimate of the sensitivity.
    Simulate(SimulateArgs),
    /// Extract readout and initialization times from calibration traces.
    Calibrate(CalibrateArgs),
    /// Cycle schedule, RF map and total time for the configured scan grid.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    /// Also write log-ratio heatmaps as P2 graymaps.
    #[arg(long)]
    pub heatmap: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ProtocolChoice {
    Lcqdm,
    Leibold,
    Conventional,
    All,
}

impl ProtocolChoice {
    fn tags(self) -> Vec<ProtocolTag> {
        match self {
            ProtocolChoice::Lcqdm => vec![ProtocolTag::LcQdm],
            ProtocolChoice::Leibold => vec![ProtocolTag::Leibold],
            ProtocolChoice::Conventional => vec![ProtocolTag::Conventional],
            ProtocolChoice::All => ProtocolTag::SCANNING.to_vec(),
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub protocol: ProtocolChoice,
    /// Master seed (overrides `master_seed`).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Trial count (overrides `n_trials`).
    #[arg(long)]
    pub trials: Option<usize>,
    /// Write per-trial sensitivities.
    #[arg(long)]
    pub per_trial: bool,
    /// Use mean counts instead of Poisson draws.
    #[arg(long)]
    pub noiseless: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeChoice {
    Window,
    Instantaneous,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// CSV trace with header `t_sweep_us,sig_pl,ref_pl`.
    #[arg(long, conflicts_with = "synthetic", required_unless_present = "synthetic")]
    pub trace: Option<PathBuf>,
    /// Trace intensity in mW/um2 (defaults to the configured confocal intensity).
    #[arg(long, requires = "trace")]
    pub intensity: Option<f64>,
    /// Simulate traces from the configured model over a ladder of intensities and fit both curves.
    #[arg(long)]
    pub synthetic: bool,
    /// Number of intensities for `--synthetic`.
    #[arg(long, default_value_t = 6, requires = "synthetic")]
    pub points: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Use mean counts in `--synthetic` traces.
    #[arg(long, requires = "synthetic")]
    pub noiseless: bool,
    /// Shots summed per delay point in `--synthetic` traces.
    #[arg(long, default_value_t = 1_000_000_000, requires = "synthetic")]
    pub shots: u64,
    #[arg(long, value_enum, default_value = "window")]
    pub mode: ModeChoice,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[arg(long, value_enum, default_value = "all")]
    pub protocol: ProtocolChoice,
}

/// Accumulates written files for the manifest.
struct Run {
    command: &'static str,
    quiet: bool,
    out: PathBuf,
    config_digest: String,
    seed: Option<u64>,
    settings: Vec<(String, String)>,
    inputs: Vec<(String, String)>,
    outputs: Vec<(String, String)>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl Run {
    fn setting(&mut self, key: &str, value: impl ToString) {
        self.settings.push((key.to_string(), value.to_string()));
    }

    fn echo(&self, text: &str) {
        if !self.quiet {
            print!("{text}");
        }
    }

    fn write(&mut self, name: &str, contents: &str) -> Result<()> {
        write_file(&self.out.join(name), contents.as_bytes())?;
        self.outputs.push((name.to_string(), sha256_hex(contents.as_bytes())));
        Ok(())
    }

    /// The manifest records no paths, clocks or thread counts so that
    /// reruns compare byte for byte.
    fn finish(self) -> Result<()> {
        let mut m = String::new();
        let mut line = |k: &str, v: &str| writeln!(m, "{k} = {v}").expect("writing to a String cannot fail");
        line("qdmsim_version", env!("CARGO_PKG_VERSION"));
        line("rng", "chacha8 (rand_chacha 0.9.0), poisson (rand_distr 0.5.1)");
        line("command", self.command);
        line("config_sha256", &self.config_digest);
        line("master_seed", &self.seed.map_or("none".to_string(), |s| s.to_string()));
        for (k, v) in &self.settings {
            line(&format!("setting.{k}"), v);
        }
        for (k, v) in &self.inputs {
            line(&format!("input.{k}.sha256"), v);
        }
        for (k, v) in &self.outputs {
            line(&format!("output.{k}.sha256"), v);
        }
        let name = format!("manifest_{}.txt", self.command);
        write_file(&self.out.join(&name), m.as_bytes())
    }
}

fn read_text(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<()> {
    match cli.threads {
        Some(0) => Err(Error::Usage("--threads must be >= 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::Usage(format!("cannot start thread pool: {e}")))?
            .install(|| dispatch(cli)),
        None => dispatch(cli),
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config_path = cli.config.as_ref().ok_or_else(|| Error::Usage("--config <FILE> is required".into()))?;
    let text = read_text(config_path)?;
    let cfg = parse_config(&text)?;
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    let mut run = Run {
        command: "",
        quiet: cli.quiet,
        out,
        config_digest: sha256_hex(text.as_bytes()),
        seed: None,
        settings: Vec::new(),
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    match &cli.command {
        Command::Eval => cmd_eval(&cfg, &mut run)?,
        Command::Sweep(a) => cmd_sweep(&cfg, a, &mut run)?,
        Command::Simulate(a) => cmd_simulate(&cfg, a, &mut run)?,
        Command::Calibrate(a) => cmd_calibrate(&cfg, a, &mut run)?,
        Command::Plan(a) => cmd_plan(&cfg, a, &mut run)?,
    }
    run.finish()
}

fn cmd_eval(cfg: &RunConfig, run: &mut Run) -> Result<()> {
    run.command = "eval";
    let p = cfg.protocol_params()?;
    let r = SensitivityResult::evaluate(&p)?;
    let mut s = String::new();
    let w = &mut s;
    let mut kv = |k: &str, v: String| writeln!(w, "{k} = {v}").expect("writing to a String cannot fail");
    kv("i_conf_mw_per_um2", cfg.i_conf()?.value().to_string());
    kv("i_ls_mw_per_um2", cfg.i_ls()?.value().to_string());
    kv("t_init_ls_us", p.t_init_ls.to_string());
    kv("t_init_conf_us", p.t_init_conf.to_string());
    kv("t_ro_conf_us", p.t_ro_conf.to_string());
    kv("t_mw_us", p.t_mw.to_string());
    kv("t_d_us", p.t_d.to_string());
    kv("t1_us", p.t1.to_string());
    kv("readouts_lcqdm", readouts_per_cycle(&p, ProtocolTag::LcQdm)?.to_string());
    kv("readouts_leibold", readouts_per_cycle(&p, ProtocolTag::Leibold)?.to_string());
    kv("eta_lcqdm", r.eta_lcqdm.to_string());
    kv("eta_leibold", r.eta_leibold.to_string());
    kv("eta_conventional", r.eta_conventional.to_string());
    kv("ratio_leibold_over_lc", r.ratio_leibold_over_lc.to_string());
    kv("ratio_conv_over_lc", r.ratio_conv_over_lc.to_string());
    run.echo(&s);
    run.write("eval.txt", &s)
}

fn cmd_sweep(cfg: &RunConfig, a: &SweepArgs, run: &mut Run) -> Result<()> {
    run.command = "sweep";
    let grid = sweep(&cfg.sweep_spec()?)?;
    run.setting("heatmap", a.heatmap);
    run.write("sweep.csv", &grid.to_csv())?;
    if a.heatmap {
        run.write("ratio_conv_lc.pgm", &grid.ratio_pgm(|r| r.ratio_conv_over_lc))?;
        run.write("ratio_leibold_lc.pgm", &grid.ratio_pgm(|r| r.ratio_leibold_over_lc))?;
    }
    let valid = grid.valid_cells().count();
    run.echo(&format!("sweep: {} cells, {valid} valid\n", grid.rows() * grid.cols()));
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig, a: &SimulateArgs, run: &mut Run) -> Result<()> {
    run.command = "simulate";
    let sim = SimConfig {
        params: cfg.protocol_params()?,
        model: cfg.model,
        i_conf: cfg.i_conf()?,
        n_trials: a.trials.unwrap_or(cfg.n_trials),
        master_seed: a.seed.unwrap_or(cfg.master_seed),
        counting: if a.noiseless { Counting::Noiseless } else { Counting::Poisson },
    };
    run.seed = Some(sim.master_seed);
    run.setting("n_trials", sim.n_trials);
    run.setting("counting", if a.noiseless { "noiseless" } else { "poisson" });
    run.setting("per_trial", a.per_trial);
    let analytic = SensitivityResult::evaluate(&sim.params)?;
    for tag in a.protocol.tags() {
        let outcome = simulate_protocol(&sim, tag)?;
        let eta = match tag {
            ProtocolTag::LcQdm => analytic.eta_lcqdm,
            ProtocolTag::Leibold => analytic.eta_leibold,
            _ => analytic.eta_conventional,
        };
        let mut report = outcome.report();
        writeln!(report, "eta_analytic = {eta}").expect("writing to a String cannot fail");
        writeln!(report, "relative_gap = {}", (outcome.eta_empirical - eta) / eta)
            .expect("writing to a String cannot fail");
        run.echo(&report);
        run.write(&format!("simulate_{tag}.txt"), &report)?;
        if a.per_trial {
            run.write(&format!("trials_{tag}.csv"), &outcome.trials_csv())?;
        }
    }
    Ok(())
}

fn contrast_mode(m: ModeChoice) -> ContrastMode {
    match m {
        ModeChoice::Window => ContrastMode::WindowAverage,
        ModeChoice::Instantaneous => ContrastMode::Instantaneous,
    }
}

fn cmd_calibrate(cfg: &RunConfig, a: &CalibrateArgs, run: &mut Run) -> Result<()> {
    run.command = "calibrate";
    let mode = contrast_mode(a.mode);
    run.setting("mode", format!("{:?}", a.mode).to_lowercase());
    if let Some(path) = &a.trace {
        let text = read_text(path)?;
        run.inputs.push(("trace".into(), sha256_hex(text.as_bytes())));
        let i = match a.intensity {
            Some(v) => Intensity::new(v)?,
            None => cfg.i_conf()?,
        };
        let trace = CalibrationTrace::from_csv(i, &text)?;
        let report = extract_times(&trace, mode)?.report(i, mode);
        run.echo(&report);
        return run.write("calibration.txt", &report);
    }

    let seed = a.seed.unwrap_or(cfg.master_seed);
    run.seed = Some(seed);
    run.setting("points", a.points);
    run.setting("counting", if a.noiseless { "noiseless" } else { "poisson" });
    run.setting("shots", a.shots);
    if a.points < 3 {
        return Err(Error::Usage("--points must be >= 3 to fit a curve".into()));
    }
    let (lo, hi) = cfg.model.validity;
    let intensities =
        log_space(lo.max(0.01), hi.min(3.0), a.points).into_iter().map(Intensity::new).collect::<Result<Vec<_>>>()?;
    let grids = intensities.iter().map(|&i| calibration_grid(&cfg.model, i, 401, 1.5)).collect::<Result<Vec<_>>>()?;
    let sampling = TraceSampling {
        shots_per_point: a.shots,
        counting: if a.noiseless { Counting::Noiseless } else { Counting::Poisson },
        ..TraceSampling::default()
    };
    for (k, (&i, grid)) in intensities.iter().zip(&grids).enumerate() {
        let trace = simulate_calibration(&cfg.model, i, grid, sampling, seed.wrapping_add(k as u64))?;
        run.write(&format!("trace_{k}.csv"), &trace.to_csv())?;
    }
    let result = end_to_end_pipeline(&cfg.model, &intensities, &grids, sampling, seed)?;
    let mut report = String::new();
    for (k, (i, times)) in result.extracted.iter().enumerate() {
        writeln!(report, "[trace_{k}]").expect("writing to a String cannot fail");
        report.push_str(&times.report(*i, mode));
    }
    let c = |name: &str, curve: &crate::photophysics::LogQuadraticCurve| {
        format!("{name}_a = {}\n{name}_b = {}\n{name}_c = {}\n", curve.a, curve.b, curve.c)
    };
    report.push_str("[fit]\n");
    report.push_str(&c("init", &result.init_curve));
    report.push_str(&c("ro", &result.readout_curve));
    run.echo(&report);
    run.write("calibration.txt", &report)
}

fn cmd_plan(cfg: &RunConfig, a: &PlanArgs, run: &mut Run) -> Result<()> {
    run.command = "plan";
    let p = cfg.protocol_params()?;
    let settings = cfg.plan_settings();
    for tag in a.protocol.tags() {
        let plan = plan_acquisition(&cfg.scan, &p, tag, &settings)?;
        run.echo(&plan.report());
        run.write(&format!("plan_{tag}.txt"), &plan.report())?;
        run.write(&format!("plan_{tag}_cycles.csv"), &plan.cycles_csv())?;
        run.write(&format!("plan_{tag}_rf.csv"), &plan.rf_csv())?;
    }
    if a.protocol == ProtocolChoice::All {
        let report = speedup_report(&cfg.scan, &p, &settings)?.report();
        run.echo(&report);
        run.write("speedup.txt", &report)?;
    }
    Ok(())
}
