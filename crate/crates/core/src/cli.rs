//! The `trapmodes` command line.

use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::floquet::transform::write_gamma_csv;
use crate::floquet::{
    build_fl_transform, evolve_modes, mode_report, solve_modes, FLTransform, FloquetOptions,
    Spectrum,
};
use crate::integrator::{linear_flow, matrizant, write_trajectory_csv, IntegratorSettings};
use crate::linearization::{linearize, HillSystem};
use crate::orbit::{
    default_seed, find_stable_crystal, micromotion_ratio, predict_micromotion, EscapeSettings,
    PeriodicOrbit, RelaxSettings, SeedStrategy, MASK_THRESHOLD,
};
use crate::sweep::{
    linspace, run_sweep, stability_edge, write_sweep_csv, PointStatus, SweepSettings,
};
use crate::trap::{TrapConfig, AXES};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    /// Relax to the periodic crystal; writes orbit.json and trajectory.csv.
    Relax,
    /// Floquet modes of the crystal; writes hill.json, modes.json,
    /// mode_directions.csv and comparison.csv.
    Modes,
    /// Measured against predicted micromotion; writes micromotion.csv.
    Micromotion,
    /// Stability over an (a, q) grid; writes sweep.csv and edges.csv.
    Sweep,
    /// Mode reconstruction of a small excitation; writes evolution.csv,
    /// evolution.json and gamma.csv.
    Evolve,
}

#[derive(Debug, Parser)]
#[command(
    name = "trapmodes",
    version,
    about = "Crystal orbits and Floquet modes of ions in rf traps"
)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Trap configuration JSON.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Worker threads.
    #[arg(long)]
    pub jobs: Option<usize>,
    /// Pseudorandom seed for initial perturbations; a fixed pattern is used when absent.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Override a configuration or run parameter.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Reuse an orbit file instead of relaxing.
    #[arg(long)]
    pub orbit: Option<PathBuf>,
    /// Sweep range of the preset `a`, as LO:HI:COUNT.
    #[arg(long, value_name = "LO:HI:COUNT", allow_hyphen_values = true)]
    pub a_range: Option<String>,
    /// Sweep range of the preset `q`, as LO:HI:COUNT.
    #[arg(long, value_name = "LO:HI:COUNT", allow_hyphen_values = true)]
    pub q_range: Option<String>,
}

/// Run parameters settable with `--set`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunParams {
    pub n_max: usize,
    pub depth: usize,
    pub scan_points_per_mode: usize,
    pub horizon_periods: f64,
    pub samples_per_period: usize,
    pub kicks: usize,
    pub edge_tol: f64,
}

impl Default for RunParams {
    fn default() -> Self {
        Self {
            n_max: 6,
            depth: 20,
            scan_points_per_mode: 64,
            horizon_periods: 100.0,
            samples_per_period: 8,
            kicks: 3,
            edge_tol: 1e-4,
        }
    }
}

const CONFIG_KEYS: [&str; 6] = ["n_ions", "geometry", "a", "q", "omega_rf", "dc_asymmetry"];

fn parse_value<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::InvalidConfig(format!("cannot parse {key}={v}")))
}

/// Applies `key=value` overrides to the configuration document and the run parameters.
pub fn apply_overrides(
    config: &mut Value,
    params: &mut RunParams,
    overrides: &[String],
) -> Result<()> {
    for o in overrides {
        let (key, v) = o
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override {o} is not KEY=VALUE")))?;
        let key = key.trim();
        let v = v.trim();
        if CONFIG_KEYS.contains(&key) {
            let parsed = serde_json::from_str(v).unwrap_or_else(|_| Value::String(v.to_string()));
            config
                .as_object_mut()
                .ok_or_else(|| Error::InvalidConfig("configuration is not a JSON object".into()))?
                .insert(key.to_string(), parsed);
            continue;
        }
        match key {
            "n_max" => params.n_max = parse_value(key, v)?,
            "depth" => params.depth = parse_value(key, v)?,
            "scan_points_per_mode" => params.scan_points_per_mode = parse_value(key, v)?,
            "horizon_periods" => params.horizon_periods = parse_value(key, v)?,
            "samples_per_period" => params.samples_per_period = parse_value(key, v)?,
            "kicks" => params.kicks = parse_value(key, v)?,
            "edge_tol" => params.edge_tol = parse_value(key, v)?,
            _ => return Err(Error::InvalidConfig(format!("unknown override key {key}"))),
        }
    }
    Ok(())
}

/// Process exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NonCrystal { .. } => 2,
        Error::Unstable { .. } => 3,
        Error::Io(_) | Error::Json(_) | Error::InvalidConfig(_) => 4,
        _ => 1,
    }
}

struct Context {
    command: Command,
    config: TrapConfig,
    params: RunParams,
    seed: Option<u64>,
    out: PathBuf,
    orbit: Option<PathBuf>,
    a_range: Option<String>,
    q_range: Option<String>,
}

impl Context {
    fn strategy(&self) -> SeedStrategy {
        self.seed.map_or(SeedStrategy::Fixed, SeedStrategy::Random)
    }

    fn seed_json(&self) -> Value {
        self.seed
            .map_or(Value::String("fixed".into()), |s| json!(s))
    }

    fn seed_label(&self) -> String {
        self.seed.map_or("fixed".into(), |s| s.to_string())
    }

    fn relax_settings(&self) -> RelaxSettings {
        RelaxSettings {
            n_max: self.params.n_max,
            ..RelaxSettings::default()
        }
    }

    fn escape(&self) -> EscapeSettings {
        EscapeSettings {
            max_attempts: self.params.kicks,
            ..EscapeSettings::default()
        }
    }

    fn floquet(&self) -> FloquetOptions {
        FloquetOptions {
            depth: self.params.depth,
            max_depth: FloquetOptions::default().max_depth.max(self.params.depth),
            n_max: self.params.n_max,
            scan_points_per_mode: self.params.scan_points_per_mode,
            ..FloquetOptions::default()
        }
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    /// CSV file whose first line records the seed.
    fn csv(&self, name: &str) -> Result<BufWriter<File>> {
        let mut w = self.create(name)?;
        writeln!(w, "# seed={}", self.seed_label())?;
        Ok(w)
    }

    fn json(&self, name: &str, mut v: Value) -> Result<()> {
        if let Some(obj) = v.as_object_mut() {
            obj.insert("seed".into(), self.seed_json());
        }
        let mut w = self.create(name)?;
        serde_json::to_writer_pretty(&mut w, &v)?;
        writeln!(w)?;
        w.flush()?;
        Ok(())
    }

    fn times(&self) -> Vec<f64> {
        let count =
            (self.params.horizon_periods * self.params.samples_per_period as f64).round() as usize;
        (1..=count)
            .map(|k| PI * k as f64 / self.params.samples_per_period as f64)
            .collect()
    }
}

/// Relaxes to a crystal, kicking it off unstable orbits, and writes orbit.json.
fn relax_crystal(ctx: &Context) -> Result<PeriodicOrbit> {
    let seed = default_seed(&ctx.config, ctx.strategy())?;
    let found = find_stable_crystal(&ctx.config, &seed, &ctx.relax_settings(), &ctx.escape())?;
    if ctx.config.n_ions() == 1 {
        log::warn!("single ion: the crystal sits at the trap centre and B = 0");
    }
    if !found.is_stable() {
        log::warn!(
            "crystal is linearly unstable (max |lambda| = {})",
            found.monodromy.max_modulus()
        );
    }
    let mut doc = found.orbit.to_json_value();
    if let Some(obj) = doc.as_object_mut() {
        obj.insert("stable".into(), json!(found.is_stable()));
        obj.insert(
            "max_abs_lambda".into(),
            json!(found.monodromy.max_modulus()),
        );
        obj.insert("kicks".into(), json!(found.attempts));
    }
    ctx.json("orbit.json", doc)?;
    Ok(found.orbit)
}

fn load_or_relax(ctx: &Context) -> Result<PeriodicOrbit> {
    match &ctx.orbit {
        Some(path) => {
            let v: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
            let orbit = PeriodicOrbit::from_json_value(&v)?;
            if orbit.n_ions() != ctx.config.n_ions() {
                return Err(Error::DimensionMismatch {
                    expected: ctx.config.n_ions(),
                    got: orbit.n_ions(),
                });
            }
            Ok(orbit)
        }
        None => relax_crystal(ctx),
    }
}

fn cmd_relax(ctx: &Context) -> Result<()> {
    let orbit = relax_crystal(ctx)?;
    let mut w = ctx.csv("trajectory.csv")?;
    write_trajectory_csv(&mut w, &orbit.sample_period(256))?;
    w.flush()?;
    log::info!("orbit residual {:e}", orbit.residual());
    Ok(())
}

struct Analysis {
    hill: HillSystem,
    spectrum: Spectrum,
    transform: FLTransform,
}

fn analyse(ctx: &Context) -> Result<Analysis> {
    let orbit = load_or_relax(ctx)?;
    let hill = linearize(&ctx.config, &orbit)?;
    ctx.json("hill.json", hill.to_json_value())?;
    let spectrum = solve_modes(&hill, &ctx.floquet())?;
    if let Some(err) = spectrum.instability() {
        let oracle = spectrum
            .oracle
            .as_ref()
            .expect("unstable spectra carry the oracle");
        let mut doc = mode_report(&spectrum.modes);
        doc["stable"] = json!(false);
        doc["moduli"] = json!(oracle.moduli);
        ctx.json("modes.json", doc)?;
        return Err(err);
    }
    let transform = build_fl_transform(&spectrum.modes)?;
    Ok(Analysis {
        hill,
        spectrum,
        transform,
    })
}

fn mode_name(j: usize) -> String {
    format!("xi_{}", j + 1)
}

/// Largest `|fl - direct|` over all samples relative to the largest `|direct|`.
fn relative_error(fl: &[DVector<f64>], direct: &[Vec<f64>]) -> f64 {
    let mut err = 0.0f64;
    let mut scale = 0.0f64;
    for (a, b) in fl.iter().zip(direct) {
        for (x, y) in a.iter().zip(b) {
            err = err.max((x - y).abs());
            scale = scale.max(y.abs());
        }
    }
    err / scale.max(f64::MIN_POSITIVE)
}

struct Reconstruction {
    fl: Vec<DVector<f64>>,
    direct: Vec<Vec<f64>>,
    max_imag: f64,
}

fn reconstruct(an: &Analysis, x0: &DVector<f64>, times: &[f64]) -> Result<Reconstruction> {
    let f = an.hill.dim();
    let (_, direct) = linear_flow(
        f,
        &|t| Ok(an.hill.stiffness(t)),
        x0.as_slice(),
        times.last().copied().unwrap_or(0.0),
        times,
        &IntegratorSettings::oracle(),
    )?;
    let mut fl = Vec::with_capacity(times.len());
    let mut max_imag = 0.0f64;
    for &t in times {
        let e = evolve_modes(&an.transform, x0, t)?;
        max_imag = max_imag.max(e.max_imag);
        fl.push(e.phase_space);
    }
    Ok(Reconstruction {
        fl,
        direct,
        max_imag,
    })
}

fn cmd_modes(ctx: &Context) -> Result<()> {
    use rayon::prelude::*;
    let an = analyse(ctx)?;
    let f = an.hill.dim();
    let fl = &an.transform;
    let c0 = fl.u(0.0).map(|z| z.re);
    let labels = an.hill.labels();

    let mut w = ctx.csv("mode_directions.csv")?;
    writeln!(w, "mode,name,beta,ion,c_x,c_y,c_z,dominant_axis")?;
    for j in 0..f {
        let col = c0.column(j) / c0.column(j).norm();
        for ion in 0..f / 3 {
            let c = [col[3 * ion], col[3 * ion + 1], col[3 * ion + 2]];
            let dom = (0..3)
                .max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs()))
                .unwrap_or(0);
            writeln!(
                w,
                "{j},{},{:.16e},{ion},{:.16e},{:.16e},{:.16e},{}",
                mode_name(j),
                fl.betas()[j],
                c[0],
                c[1],
                c[2],
                AXES[dom]
            )?;
        }
    }
    w.flush()?;

    // Excite each mode alone: chi = e_j + e_{j+f} gives a real phase-space point.
    let times = ctx.times();
    let g0 = fl.gamma(0.0);
    let runs: Vec<(usize, usize, Reconstruction)> = (0..f)
        .into_par_iter()
        .map(|j| {
            let x0 = g0.column(j).map(|z| 2.0 * z.re);
            let coord = (0..f)
                .max_by(|&a, &b| c0[(a, j)].abs().total_cmp(&c0[(b, j)].abs()))
                .unwrap_or(0);
            reconstruct(&an, &x0, &times).map(|r| (j, coord, r))
        })
        .collect::<Result<_>>()?;
    let mut w = ctx.csv("comparison.csv")?;
    writeln!(w, "mode,name,t,coordinate,fl,direct")?;
    let mut errors = Vec::with_capacity(f);
    for (j, coord, r) in &runs {
        errors.push(relative_error(&r.fl, &r.direct));
        for ((t, a), b) in times.iter().zip(&r.fl).zip(&r.direct) {
            writeln!(
                w,
                "{j},{},{t:.16e},{},{:.16e},{:.16e}",
                mode_name(*j),
                labels[*coord],
                a[*coord],
                b[*coord]
            )?;
        }
    }
    w.flush()?;

    let oracle = matrizant(&an.hill, &IntegratorSettings::oracle())?;
    let betas = an.spectrum.betas();
    let deviation = betas
        .iter()
        .zip(&oracle.exponents)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let mut doc = mode_report(&an.spectrum.modes);
    doc["stable"] = json!(true);
    doc["names"] = json!((0..f).map(mode_name).collect::<Vec<_>>());
    doc["oracle_betas"] = json!(oracle.exponents);
    doc["max_oracle_deviation"] = json!(deviation);
    doc["normalization_defect"] = json!(fl.normalization_defect());
    doc["horizon_periods"] = json!(ctx.params.horizon_periods);
    doc["reconstruction_error"] = json!(errors);
    ctx.json("modes.json", doc)?;
    log::info!(
        "{} exponents, lowest {:?}, oracle deviation {deviation:e}",
        f,
        betas.first()
    );
    Ok(())
}

fn cmd_micromotion(ctx: &Context) -> Result<()> {
    let orbit = load_or_relax(ctx)?;
    let b0 = orbit.mean_positions();
    let b2 = orbit
        .coefficient(2)
        .map(<[_]>::to_vec)
        .unwrap_or_else(|| vec![Default::default(); b0.len()]);
    let measured = micromotion_ratio(&orbit, MASK_THRESHOLD);
    let pred = predict_micromotion(&ctx.config, b0)?;
    for warning in &pred.warnings {
        log::warn!("{warning}");
    }
    let q = ctx.config.q();
    let opt = |x: Option<f64>| x.map(|v| format!("{v:.16e}")).unwrap_or_default();
    let mut w = ctx.csv("micromotion.csv")?;
    writeln!(
        w,
        "ion,axis,b0,b2,measured_ratio,predicted_ratio,deviation_percent,axial_bound"
    )?;
    for i in 0..b0.len() {
        for k in 0..3 {
            let (m, p) = (measured[i][k], pred.ratio[i][k]);
            let dev = m.zip(p).map(|(m, p)| 100.0 * (m - p) / p.abs());
            let bound = (q[k] == 0.0).then_some(pred.axial_bound_symmetric);
            writeln!(
                w,
                "{i},{},{:.16e},{:.16e},{},{},{},{}",
                AXES[k],
                b0[i][k],
                b2[i][k],
                opt(m),
                opt(p),
                opt(dev),
                opt(bound)
            )?;
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_range(text: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = text.split(':').collect();
    if parts.len() != 3 {
        return Err(Error::InvalidConfig(format!(
            "range {text} is not LO:HI:COUNT"
        )));
    }
    let lo: f64 = parse_value("range", parts[0])?;
    let hi: f64 = parse_value("range", parts[1])?;
    let n: usize = parse_value("range", parts[2])?;
    if n == 0 {
        return Err(Error::InvalidConfig("range count must be positive".into()));
    }
    Ok(linspace(lo, hi, n))
}

fn cmd_sweep(ctx: &Context) -> Result<()> {
    let a_values = match &ctx.a_range {
        Some(r) => parse_range(r)?,
        None => vec![ctx.config.a_nominal()[1]],
    };
    let q_values = match &ctx.q_range {
        Some(r) => parse_range(r)?,
        None => vec![ctx.config.q()[1]],
    };
    let settings = SweepSettings {
        relax: ctx.relax_settings(),
        escape: ctx.escape(),
    };
    let points = run_sweep(&ctx.config, &a_values, &q_values, ctx.strategy(), &settings);
    let mut w = ctx.csv("sweep.csv")?;
    write_sweep_csv(&mut w, &points)?;
    w.flush()?;

    let mut w = ctx.csv("edges.csv")?;
    writeln!(w, "a,q_edge")?;
    for (row, &a) in points.chunks(q_values.len()).zip(&a_values) {
        let edge = row
            .windows(2)
            .find(|p| p[0].status == PointStatus::Stable && p[1].status != PointStatus::Stable);
        if let Some(p) = edge {
            let q = stability_edge(
                &ctx.config,
                a,
                p[0].q,
                p[1].q,
                ctx.params.edge_tol,
                ctx.strategy(),
                &settings,
            )?;
            log::info!("a = {a}: stability edge at q = {q}");
            writeln!(w, "{a:.16e},{q:.16e}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn cmd_evolve(ctx: &Context) -> Result<()> {
    let an = analyse(ctx)?;
    let f = an.hill.dim();
    let x0 = match ctx.seed {
        Some(s) => {
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            DVector::from_fn(2 * f, |_, _| 1e-3 * rng.gen_range(-1.0..1.0))
        }
        None => DVector::from_fn(2 * f, |k, _| 1e-3 * (1.7 * k as f64 + 0.3).sin()),
    };
    let times = ctx.times();
    let r = reconstruct(&an, &x0, &times)?;
    let labels = an.hill.labels();
    let mut w = ctx.csv("evolution.csv")?;
    writeln!(w, "t,coordinate,fl,direct")?;
    for ((t, a), b) in times.iter().zip(&r.fl).zip(&r.direct) {
        for k in 0..f {
            writeln!(w, "{t:.16e},{},{:.16e},{:.16e}", labels[k], a[k], b[k])?;
        }
    }
    w.flush()?;

    let gamma_times: Vec<f64> = (0..16).map(|k| PI * k as f64 / 16.0).collect();
    let mut w = ctx.csv("gamma.csv")?;
    write_gamma_csv(&mut w, &an.transform, &gamma_times)?;
    w.flush()?;

    let chi0 = evolve_modes(&an.transform, &x0, 0.0)?.chi;
    ctx.json(
        "evolution.json",
        json!({
            "betas": an.transform.betas(),
            "initial": x0.as_slice(),
            "chi0": chi0.iter().map(|z| [z.re, z.im]).collect::<Vec<_>>(),
            "horizon_periods": ctx.params.horizon_periods,
            "max_relative_error": relative_error(&r.fl, &r.direct),
            "max_imag": r.max_imag,
        }),
    )
}

fn load_config(path: &Path, params: &mut RunParams, overrides: &[String]) -> Result<TrapConfig> {
    let mut doc: Value = serde_json::from_str(&std::fs::read_to_string(path)?)?;
    apply_overrides(&mut doc, params, overrides)?;
    TrapConfig::from_json(&doc.to_string())
}

/// Runs a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut params = RunParams::default();
    let config = load_config(&cli.config, &mut params, &cli.overrides)?;
    std::fs::create_dir_all(&cli.out)?;
    let ctx = Context {
        command: cli.command,
        config,
        params,
        seed: cli.seed,
        out: cli.out,
        orbit: cli.orbit,
        a_range: cli.a_range,
        q_range: cli.q_range,
    };
    let body = || match ctx.command {
        Command::Relax => cmd_relax(&ctx),
        Command::Modes => cmd_modes(&ctx),
        Command::Micromotion => cmd_micromotion(&ctx),
        Command::Sweep => cmd_sweep(&ctx),
        Command::Evolve => cmd_evolve(&ctx),
    };
    match cli.jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?
            .install(body),
        None => body(),
    }
}

/// Entry point of the binary; returns the process exit code.
pub fn main() -> i32 {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TRAPMODES_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 4 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::Unstable { moduli, .. } = &e {
                eprintln!("eigenvalue moduli: {moduli:?}");
            }
            exit_code(&e)
        }
    }
}
