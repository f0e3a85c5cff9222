//! Command-line front end: simulate, analyze, fit and reproduce figure data.

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::circstats::{
    self, holevo_from_r, integrate_all, mean_resultant_length, phase_of, phase_pdf, r_surface, r_vs_m, time_series,
    HolevoVariance, PhasePdf, SurfaceGrid, WindowSpec, DEFAULT_BIN_WIDTH,
};
use crate::error::{Error, Result};
use crate::estimators::{fit_r_vs_m, fit_surface, svd_separability, RmFit, SurfaceFit};
use crate::io::{num, read_csv, read_json, read_traces, write_csv, write_json, write_traces, Table};
use crate::shot_sim::{simulate_ensemble, SimConfig, TraceSet};

/// Default integration window: from the pulse end of the standard acquisition, 36 ns long.
pub const DEFAULT_T_START: f64 = 36.0;
pub const DEFAULT_WINDOW: f64 = 36.0;
pub const DEFAULT_SEED: u64 = 7;

#[derive(Debug, Parser)]
#[command(name = "phasecoh", version, about = "Single-shot emission phase statistics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an ensemble of IQ records from a JSON simulation config.
    Simulate(SimulateArgs),
    /// Phase statistics of a trace file: PDF, R and V_H, R(M), time series, R surface.
    Analyze(AnalyzeArgs),
    /// Fit R(M) data (CSV columns m, r) with the binomial emission law.
    FitRm(FitRmArgs),
    /// Fit an R surface (CSV columns t_start, window, r) with the phenomenological law.
    FitSurface(FitSurfaceArgs),
    /// Regenerate a figure-data bundle from a named preset.
    Reproduce(ReproduceArgs),
}

#[derive(Debug, Args)]
pub struct Common {
    /// Worker threads; 0 uses every core.
    #[arg(long, env = "PHASECOH_WORKERS", default_value_t = 0)]
    pub workers: usize,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides the seed in the config.
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Window start times in ns, comma separated; the first one is the primary window.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_T_START])]
    pub t_start: Vec<f64>,
    /// Window lengths in ns, comma separated; the first one is the primary window.
    #[arg(long, value_delimiter = ',', default_values_t = [DEFAULT_WINDOW])]
    pub window: Vec<f64>,
    /// Averaging counts for R(M), comma separated. Defaults to powers of two up to N.
    #[arg(long)]
    pub m_list: Option<String>,
    /// Histogram bin width in radians.
    #[arg(long, default_value_t = DEFAULT_BIN_WIDTH)]
    pub bin_width: f64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct FitRmArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Fit p and eta separately instead of their product.
    #[arg(long)]
    pub two_parameter: bool,
}

#[derive(Debug, Args)]
pub struct FitSurfaceArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Args)]
pub struct ReproduceArgs {
    #[arg(long, value_enum)]
    pub preset: Preset,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    #[command(flatten)]
    pub common: Common,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    Fig2,
    Fig3,
    Fig4,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Simulate,
    Analyze,
    FitRm,
    FitSurface,
    Reproduce,
}

/// Everything one command needs, after flags and files are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub mode: Mode,
    pub input: Option<PathBuf>,
    pub output: PathBuf,
    pub sim: Option<SimConfig>,
    pub t_starts: Vec<f64>,
    pub windows: Vec<f64>,
    /// `None` selects powers of two up to the shot count.
    pub m_list: Option<Vec<usize>>,
    pub bin_width: f64,
    pub seed: Option<u64>,
    pub workers: usize,
    pub two_parameter: bool,
    pub preset: Option<Preset>,
}

impl RunConfig {
    fn base(mode: Mode, output: PathBuf) -> Self {
        RunConfig {
            mode,
            input: None,
            output,
            sim: None,
            t_starts: vec![DEFAULT_T_START],
            windows: vec![DEFAULT_WINDOW],
            m_list: None,
            bin_width: DEFAULT_BIN_WIDTH,
            seed: None,
            workers: 0,
            two_parameter: false,
            preset: None,
        }
    }

    pub fn from_command(command: Command) -> Result<Self> {
        let rc = match command {
            Command::Simulate(a) => {
                let mut sim: SimConfig = read_json(&a.config)?;
                if let Some(seed) = a.seed {
                    sim.seed = seed;
                }
                RunConfig {
                    sim: Some(sim),
                    seed: a.seed,
                    workers: a.common.workers,
                    ..RunConfig::base(Mode::Simulate, a.out)
                }
            }
            Command::Analyze(a) => RunConfig {
                input: Some(a.input),
                t_starts: a.t_start,
                windows: a.window,
                m_list: a.m_list.as_deref().map(parse_m_list).transpose()?,
                bin_width: a.bin_width,
                workers: a.common.workers,
                ..RunConfig::base(Mode::Analyze, a.out)
            },
            Command::FitRm(a) => RunConfig {
                input: Some(a.input),
                two_parameter: a.two_parameter,
                ..RunConfig::base(Mode::FitRm, a.out)
            },
            Command::FitSurface(a) => RunConfig {
                input: Some(a.input),
                workers: a.common.workers,
                ..RunConfig::base(Mode::FitSurface, a.out)
            },
            Command::Reproduce(a) => RunConfig {
                preset: Some(a.preset),
                seed: Some(a.seed),
                workers: a.common.workers,
                ..RunConfig::base(Mode::Reproduce, a.out)
            },
        };
        rc.validate()?;
        Ok(rc)
    }

    pub fn validate(&self) -> Result<()> {
        let needs_input = matches!(self.mode, Mode::Analyze | Mode::FitRm | Mode::FitSurface);
        if needs_input && self.input.is_none() {
            return Err(Error::config("an input path is required"));
        }
        if self.mode == Mode::Simulate {
            self.sim
                .as_ref()
                .ok_or_else(|| Error::config("simulate needs a simulation config"))?
                .validate()?;
        }
        if self.mode == Mode::Reproduce && self.preset.is_none() {
            return Err(Error::config("reproduce needs a preset"));
        }
        if self.t_starts.is_empty() || self.windows.is_empty() {
            return Err(Error::config("window grids must not be empty"));
        }
        if self.t_starts.iter().chain(&self.windows).any(|v| !v.is_finite()) {
            return Err(Error::config("window grids must be finite"));
        }
        if self.windows.iter().any(|&w| w <= 0.0) {
            return Err(Error::config("window lengths must be positive"));
        }
        if let Some(m) = &self.m_list {
            if m.is_empty() {
                return Err(Error::config("empty M list"));
            }
        }
        circstats::bin_count(self.bin_width).map_err(|e| Error::config(e.to_string()))?;
        Ok(())
    }

    fn primary_window(&self) -> Result<WindowSpec> {
        WindowSpec::new(self.t_starts[0], self.windows[0])
    }
}

fn parse_m_list(text: &str) -> Result<Vec<usize>> {
    let list = text
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| match s.parse::<usize>() {
            Ok(m) if m >= 1 => Ok(m),
            _ => Err(Error::config(format!("M list entry {s:?} is not a positive integer"))),
        })
        .collect::<Result<Vec<_>>>()?;
    if list.is_empty() {
        return Err(Error::config("empty M list"));
    }
    Ok(list)
}

fn powers_of_two_up_to(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |m| m.checked_mul(2))
        .take_while(|&m| m <= n)
        .collect()
}

/// Runs `f` on a pool of `workers` threads (0 = the global pool).
fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    if workers == 0 {
        return f();
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Resource(format!("cannot start {workers} workers: {e}")))?
        .install(f)
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

/// Parses the command line already split into `cli` and runs it; returns the text for stdout.
pub fn run(cli: Cli) -> Result<String> {
    let rc = RunConfig::from_command(cli.command)?;
    match rc.mode {
        Mode::Simulate => cmd_simulate(&rc),
        Mode::Analyze => cmd_analyze(&rc),
        Mode::FitRm => cmd_fit_rm(&rc),
        Mode::FitSurface => cmd_fit_surface(&rc),
        Mode::Reproduce => cmd_reproduce(&rc),
    }
}

pub fn cmd_simulate(rc: &RunConfig) -> Result<String> {
    let sim = rc.sim.as_ref().ok_or_else(|| Error::config("simulate needs a simulation config"))?;
    let set = with_workers(rc.workers, || simulate_ensemble(sim, 0))?;
    write_traces(&rc.output, &set)?;
    Ok(format!(
        "wrote {}: N={} samples/shot={} dt={} ns p={} sigma_N={} seed={}",
        rc.output.display(),
        set.shots(),
        set.samples_per_shot(),
        sim.sample_period,
        sim.emission_probability,
        sim.noise_sigma,
        sim.seed
    ))
}

/// Circular statistics of one window of an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub shots: usize,
    pub window: WindowSpec,
    pub r: f64,
    pub holevo: HolevoVariance,
    /// `|<I + iQ>|` of the window integrals.
    pub mean_amplitude: f64,
    /// Circular mean of the window phases, `None` when `R` vanishes.
    pub mean_direction: Option<f64>,
}

pub fn summarize_window(set: &TraceSet, window: &WindowSpec) -> Result<(WindowSummary, Vec<Complex64>)> {
    let values = integrate_all(set, window)?;
    let phases = phase_of(&values)?.with_source(*window, 1);
    let r = mean_resultant_length(&phases)?;
    let mean = values.iter().sum::<Complex64>() / values.len() as f64;
    let summary = WindowSummary {
        shots: values.len(),
        window: *window,
        r,
        holevo: holevo_from_r(r, values.len()),
        mean_amplitude: mean.norm(),
        mean_direction: phases.mean_direction()?,
    };
    Ok((summary, values))
}

fn pdf_table(pdf: &PhasePdf) -> Table {
    let mut t = Table::new(&["bin_lo", "bin_hi", "bin_center", "mass"]);
    for (k, m) in pdf.bin_masses.iter().enumerate() {
        let (lo, hi) = (pdf.bin_edges[k], pdf.bin_edges[k + 1]);
        t.push(vec![num(lo), num(hi), num(0.5 * (lo + hi)), num(*m)]);
    }
    t
}

fn surface_table(grid: &SurfaceGrid) -> Table {
    let mut t = Table::new(&["t_start", "window", "r"]);
    for (i, &ts) in grid.t_starts.iter().enumerate() {
        for (j, &w) in grid.lengths.iter().enumerate() {
            t.push(vec![num(ts), num(w), num(grid.values[i][j])]);
        }
    }
    t
}

fn rm_table(points: &[circstats::RPoint]) -> Table {
    let mut t = Table::new(&["m", "r", "groups"]);
    for p in points {
        t.push(vec![p.m.to_string(), num(p.r), p.groups.to_string()]);
    }
    t
}

/// Writes `summary.json`, `pdf.csv`, `r_vs_m.csv`, `time_series.csv` and, for a
/// grid of at least two starts or lengths, `surface.csv`.
pub fn cmd_analyze(rc: &RunConfig) -> Result<String> {
    let input = rc.input.as_ref().ok_or_else(|| Error::config("an input path is required"))?;
    let set = read_traces(input)?;
    let out = &rc.output;
    create_dir(out)?;
    with_workers(rc.workers, || {
        let window = rc.primary_window()?;
        let (summary, values) = summarize_window(&set, &window)?;
        write_json(&out.join("summary.json"), &summary)?;

        let pdf = phase_pdf(&phase_of(&values)?, rc.bin_width)?;
        write_csv(&out.join("pdf.csv"), &pdf_table(&pdf))?;

        let m_list = rc.m_list.clone().unwrap_or_else(|| powers_of_two_up_to(set.shots()));
        write_csv(&out.join("r_vs_m.csv"), &rm_table(&r_vs_m(&set, &window, &m_list)?))?;

        let mut ts = Table::new(&[
            "t",
            "mean_i",
            "mean_q",
            "mean_amplitude",
            "circular_mean_phase",
            "arithmetic_mean_phase",
            "r",
        ]);
        for p in time_series(&set) {
            ts.push(
                [p.t, p.mean_i, p.mean_q, p.mean_amplitude, p.circular_mean_phase, p.arithmetic_mean_phase, p.r]
                    .into_iter()
                    .map(num)
                    .collect(),
            );
        }
        write_csv(&out.join("time_series.csv"), &ts)?;

        if rc.t_starts.len() > 1 || rc.windows.len() > 1 {
            let grid = r_surface(&set, &rc.t_starts, &rc.windows, 1)?;
            write_csv(&out.join("surface.csv"), &surface_table(&grid))?;
        }
        Ok(format!(
            "analyzed {} shots: R={:.6} V_H={} in [{}, {}) ns; outputs in {}",
            summary.shots,
            summary.r,
            match summary.holevo.value() {
                Some(v) => format!("{v:.6}"),
                None => "unresolved".into(),
            },
            window.t_start,
            window.t_start + window.length,
            out.display()
        ))
    })
}

pub fn cmd_fit_rm(rc: &RunConfig) -> Result<String> {
    let input = rc.input.as_ref().ok_or_else(|| Error::config("an input path is required"))?;
    let table = read_csv(input)?;
    let ms = table.numbers("m").map_err(|e| Error::format(0, e.to_string()))?;
    let rs = table.numbers("r").map_err(|e| Error::format(0, e.to_string()))?;
    let obs: Vec<(u64, f64)> = ms
        .iter()
        .zip(&rs)
        .map(|(&m, &r)| {
            if m >= 1.0 && m.fract() == 0.0 {
                Ok((m as u64, r))
            } else {
                Err(Error::config(format!("M = {m} is not a positive integer")))
            }
        })
        .collect::<Result<_>>()?;
    let fit = fit_r_vs_m(&obs, rc.two_parameter)?;
    write_json(&rc.output, &fit)?;
    Ok(format!(
        "p*eta = {:.6} (relative residual {:.4}, converged {}); wrote {}",
        fit.p_eta,
        fit.relative_residual,
        fit.fit.converged,
        rc.output.display()
    ))
}

/// Surface fit plus separability, as written by `fit-surface`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurfaceReport {
    pub fit: SurfaceFit,
    pub separability: f64,
}

/// Rebuilds a rectangular grid from long-format rows.
pub fn grid_from_table(table: &Table) -> Result<SurfaceGrid> {
    let col = |name: &str| table.numbers(name).map_err(|e| Error::format(0, e.to_string()));
    let (ts, ws, rs) = (col("t_start")?, col("window")?, col("r")?);
    let axis = |v: &[f64]| {
        let mut a = v.to_vec();
        a.sort_by(f64::total_cmp);
        a.dedup();
        a
    };
    let (t_axis, w_axis) = (axis(&ts), axis(&ws));
    let mut values = vec![vec![f64::NAN; w_axis.len()]; t_axis.len()];
    for ((t, w), r) in ts.iter().zip(&ws).zip(&rs) {
        let i = t_axis.iter().position(|x| x == t).unwrap();
        let j = w_axis.iter().position(|x| x == w).unwrap();
        values[i][j] = *r;
    }
    if values.iter().flatten().any(|v| v.is_nan()) || rs.len() != t_axis.len() * w_axis.len() {
        return Err(Error::config("surface rows do not form a complete rectangular grid"));
    }
    SurfaceGrid::new(t_axis, w_axis, values)
}

pub fn fit_and_report(grid: &SurfaceGrid) -> Result<SurfaceReport> {
    Ok(SurfaceReport {
        fit: fit_surface(grid)?,
        separability: svd_separability(&grid.values)?,
    })
}

pub fn cmd_fit_surface(rc: &RunConfig) -> Result<String> {
    let input = rc.input.as_ref().ok_or_else(|| Error::config("an input path is required"))?;
    let grid = grid_from_table(&read_csv(input)?)?;
    let report = with_workers(rc.workers, || fit_and_report(&grid))?;
    write_json(&rc.output, &report)?;
    let p = report.fit.params;
    Ok(format!(
        "A={:.4} tau1={:.2} beta={:.3} tau2={:.2} C={:.4} separability={:.4}; wrote {}",
        p.a,
        p.tau1,
        p.beta,
        p.tau2,
        p.c,
        report.separability,
        rc.output.display()
    ))
}

/// Index of generated files and headline numbers for one preset run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub preset: Preset,
    pub seed: u64,
    pub outputs: Vec<String>,
    pub results: serde_json::Value,
}

/// Standard surface grid: starts from the pulse end in 6 ns steps, lengths 2 to 48 ns.
pub fn standard_surface_axes() -> (Vec<f64>, Vec<f64>) {
    let t = (0..11).map(|i| 36.0 + 6.0 * i as f64).collect();
    let w = (1..=24).map(|i| 2.0 * i as f64).collect();
    (t, w)
}

/// Simulation settings of each preset ensemble.
pub mod presets {
    use super::*;

    pub const FIG2_THETAS: [(&str, f64); 3] = [("pi_2", PI / 2.0), ("pi", PI), ("3pi_2", 1.5 * PI)];
    pub const FIG3_WINDOWS: [f64; 2] = [12.0, 36.0];
    pub const FIG4_M_LIST: [usize; 12] = [1, 2, 4, 8, 16, 32, 64, 128, 256, 512, 1024, 2048];
    pub const FIG4_WINDOWS: [f64; 2] = [4.0, 36.0];

    /// Strong emission, so the phase peak is a few bins wide.
    pub fn fig2(theta: f64, seed: u64) -> Result<SimConfig> {
        let mut c = SimConfig::standard(theta)?;
        c.signal_amplitude = 2.0;
        c.seed = seed;
        Ok(c)
    }

    pub fn fig3_thetas() -> Vec<f64> {
        (0..=32).map(|k| k as f64 * PI / 8.0).collect()
    }

    pub fn fig3(theta: f64, seed: u64) -> Result<SimConfig> {
        let mut c = SimConfig::standard(theta)?;
        c.signal_amplitude = 0.1;
        c.seed = seed;
        Ok(c)
    }

    /// Weak, half-probability emission with moderate pure dephasing.
    pub fn fig4(seed: u64) -> Result<SimConfig> {
        let mut c = SimConfig::standard(PI / 2.0)?;
        c.emission_probability = 0.5;
        c.signal_amplitude = 0.03;
        c.decoherence.t_phi = 400.0;
        c.seed = seed;
        Ok(c)
    }
}

pub fn cmd_reproduce(rc: &RunConfig) -> Result<String> {
    let preset = rc.preset.ok_or_else(|| Error::config("reproduce needs a preset"))?;
    let seed = rc.seed.unwrap_or(DEFAULT_SEED);
    let out = &rc.output;
    create_dir(out)?;
    let (outputs, results) = with_workers(rc.workers, || match preset {
        Preset::Fig2 => reproduce_fig2(out, seed, rc.bin_width),
        Preset::Fig3 => reproduce_fig3(out, seed),
        Preset::Fig4 => reproduce_fig4(out, seed),
    })?;
    let manifest = Manifest { preset, seed, outputs, results };
    write_json(&out.join("manifest.json"), &manifest)?;
    Ok(format!("{preset:?} bundle with {} files in {}", manifest.outputs.len() + 1, out.display()))
}

type Bundle = (Vec<String>, serde_json::Value);

fn to_value<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::domain(format!("cannot serialise results: {e}")))
}

fn reproduce_fig2(out: &Path, seed: u64, bin_width: f64) -> Result<Bundle> {
    let window = WindowSpec::new(DEFAULT_T_START, DEFAULT_WINDOW)?;
    let mut outputs = Vec::new();
    let mut summary = Table::new(&["theta", "argmax_center", "max_mass", "min_mass", "r", "holevo", "resolved"]);
    for (i, (label, theta)) in presets::FIG2_THETAS.iter().enumerate() {
        let set = simulate_ensemble(&presets::fig2(*theta, seed + i as u64)?, 0)?;
        let (s, values) = summarize_window(&set, &window)?;
        let pdf = phase_pdf(&phase_of(&values)?, bin_width)?;
        let name = format!("pdf_theta_{label}.csv");
        write_csv(&out.join(&name), &pdf_table(&pdf))?;
        outputs.push(name);
        summary.push(vec![
            num(*theta),
            num(pdf.bin_centers()[pdf.argmax()]),
            num(pdf.max_mass()),
            num(pdf.min_mass()),
            num(s.r),
            num(s.holevo.nominal()),
            s.holevo.is_resolved().to_string(),
        ]);
    }
    write_csv(&out.join("fig2_summary.csv"), &summary)?;
    outputs.push("fig2_summary.csv".into());
    Ok((outputs, serde_json::json!({ "window": window })))
}

fn reproduce_fig3(out: &Path, seed: u64) -> Result<Bundle> {
    let mut t = Table::new(&["theta", "window", "r", "holevo", "resolved", "mean_amplitude"]);
    for (i, theta) in presets::fig3_thetas().into_iter().enumerate() {
        let set = simulate_ensemble(&presets::fig3(theta, seed + i as u64)?, 0)?;
        for w in presets::FIG3_WINDOWS {
            let (s, _) = summarize_window(&set, &WindowSpec::new(DEFAULT_T_START, w)?)?;
            t.push(vec![
                num(theta),
                num(w),
                num(s.r),
                num(s.holevo.nominal()),
                s.holevo.is_resolved().to_string(),
                num(s.mean_amplitude),
            ]);
        }
    }
    write_csv(&out.join("fig3.csv"), &t)?;
    Ok((vec!["fig3.csv".into()], serde_json::json!({ "t_start": DEFAULT_T_START })))
}

fn reproduce_fig4(out: &Path, seed: u64) -> Result<Bundle> {
    let config = presets::fig4(seed)?;
    let set = simulate_ensemble(&config, 0)?;
    let mut outputs = Vec::new();
    let mut fits = serde_json::Map::new();
    for w in presets::FIG4_WINDOWS {
        let window = WindowSpec::new(DEFAULT_T_START, w)?;
        let points = r_vs_m(&set, &window, &presets::FIG4_M_LIST)?;
        let csv_name = format!("r_vs_m_T{w}.csv");
        write_csv(&out.join(&csv_name), &rm_table(&points))?;
        let obs: Vec<(u64, f64)> = points.iter().map(|p| (p.m as u64, p.r)).collect();
        let fit: RmFit = fit_r_vs_m(&obs, false)?;
        let json_name = format!("fit_rm_T{w}.json");
        write_json(&out.join(&json_name), &fit)?;
        fits.insert(format!("p_eta_T{w}"), fit.p_eta.into());
        outputs.extend([csv_name, json_name]);
    }
    let (t_axis, w_axis) = standard_surface_axes();
    let grid = r_surface(&set, &t_axis, &w_axis, 1)?;
    write_csv(&out.join("surface.csv"), &surface_table(&grid))?;
    let report = fit_and_report(&grid)?;
    write_json(&out.join("surface_fit.json"), &report)?;
    outputs.extend(["surface.csv".into(), "surface_fit.json".into()]);
    fits.insert("surface".into(), to_value(&report.fit.params)?);
    fits.insert("separability".into(), report.separability.into());
    fits.insert("config".into(), to_value(&config)?);
    Ok((outputs, serde_json::Value::Object(fits)))
}
