//! Configuration-driven commands. Each command reads one JSON document,
//! writes CSV/JSON outputs into the output directory and a `manifest.json`
//! echoing the resolved configuration.

use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::disorder::{DisorderField, DisorderLaw};
use crate::dynamics::{write_snapshot, DynState, RateFamily, TrajectoryCsv};
use crate::error::{Error, Result};
use crate::gibbs::{annealed_lambda, CanonicalSpec, GrandCanonicalSpec, ThermoTable};
use crate::greenkubo::{DiffusionTable, GreenKuboConfig};
use crate::hydro::{compare_hydro, HydroRun};
use crate::lattice::TorusGeometry;
use crate::observables::{phi_statistics, OuterScale};
use crate::spectral::{gap_scaling, vj_diagnostic, RegionShape, VjConfig};

#[derive(Debug, Parser)]
#[command(name = "latgas", version, about = "Disordered lattice gas experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Grid check of symmetry, bounds and detailed balance of a rate family.
    ValidateRates(Flags),
    /// Annealed chemical potential and compressibility on a density grid.
    Thermo(Flags),
    /// Spectral gaps times `ℓ²` over sizes, sectors and disorder samples.
    GapScaling(Flags),
    /// Truncated Green-Kubo diffusion matrix on a density grid.
    Diffusion(Flags),
    /// Particle ensemble against the macroscopic equation.
    Hydro(Flags),
    /// Statistics of the disorder fluctuation field.
    Fluctuations(Flags),
    /// Disorder field, initial configuration and optional trajectory.
    Sample(Flags),
    /// Finite-volume resolvent pairing of currents and block gradients.
    #[command(name = "spectral-h1")]
    SpectralH1(Flags),
}

#[derive(Debug, Clone, PartialEq, Eq, Args)]
pub struct Flags {
    #[arg(long, value_name = "PATH")]
    pub config: PathBuf,
    /// Overrides the seeds of the configuration.
    #[arg(long, value_name = "U64")]
    pub seed: Option<u64>,
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,
    #[arg(long, value_name = "DIR", default_value = ".")]
    pub out: PathBuf,
}

impl Command {
    pub fn split(&self) -> (Task, &Flags) {
        match self {
            Command::ValidateRates(f) => (Task::ValidateRates, f),
            Command::Thermo(f) => (Task::Thermo, f),
            Command::GapScaling(f) => (Task::GapScaling, f),
            Command::Diffusion(f) => (Task::Diffusion, f),
            Command::Hydro(f) => (Task::Hydro, f),
            Command::Fluctuations(f) => (Task::Fluctuations, f),
            Command::Sample(f) => (Task::Sample, f),
            Command::SpectralH1(f) => (Task::SpectralH1, f),
        }
    }
}

/// What a command computes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    ValidateRates,
    Thermo,
    GapScaling,
    Diffusion,
    Hydro,
    Fluctuations,
    Sample,
    SpectralH1,
}

impl Task {
    pub const ALL: [Task; 8] = [
        Task::ValidateRates,
        Task::Thermo,
        Task::GapScaling,
        Task::Diffusion,
        Task::Hydro,
        Task::Fluctuations,
        Task::Sample,
        Task::SpectralH1,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Task::ValidateRates => "validate-rates",
            Task::Thermo => "thermo",
            Task::GapScaling => "gap-scaling",
            Task::Diffusion => "diffusion",
            Task::Hydro => "hydro",
            Task::Fluctuations => "fluctuations",
            Task::Sample => "sample",
            Task::SpectralH1 => "spectral-h1",
        }
    }
}

/// Run a parsed command line.
pub fn run(cli: &Cli) -> Result<Outcome> {
    let (task, flags) = cli.command.split();
    let text = fs::read_to_string(&flags.config)?;
    execute(
        task,
        &text,
        &Options {
            seed: flags.seed,
            threads: flags.threads,
            out: flags.out.clone(),
        },
    )
}

/// Where and how a command runs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Options {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: PathBuf,
}

/// Outcome of a command that did not fail outright.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    /// False when a validation command found violations.
    pub pass: bool,
    pub outputs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateRatesConfig {
    pub family: RateFamily<f64>,
    /// Disorder values are checked on a uniform grid over `[-bound, bound]`.
    pub bound: f64,
    #[serde(default = "default_rate_grid")]
    pub grid: usize,
}

fn default_rate_grid() -> usize {
    200
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermoConfig {
    pub law: DisorderLaw,
    /// Densities; defaults to `k/20`, `k = 1..19`.
    #[serde(default = "default_thermo_grid")]
    pub grid: Vec<f64>,
}

fn default_thermo_grid() -> Vec<f64> {
    (1..20).map(|k| k as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapScalingConfig {
    pub law: DisorderLaw,
    pub family: RateFamily<f64>,
    pub shape: RegionShape,
    pub ells: Vec<usize>,
    pub samples: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiffusionConfig {
    pub greenkubo: GreenKuboConfig,
    pub grid: Vec<f64>,
}

/// Where the hydro command takes `D` from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DiffusionSource {
    /// `D = value · 𝕀` at every density.
    Constant { value: f64 },
    /// A `diffusion.json` written by the diffusion command.
    File { path: PathBuf },
    Compute { greenkubo: GreenKuboConfig, grid: Vec<f64> },
}

impl DiffusionSource {
    fn table(&self, d: usize) -> Result<DiffusionTable> {
        match self {
            DiffusionSource::Constant { value } => Ok(DiffusionTable::constant(d, &[0.0, 0.5, 1.0], *value)),
            DiffusionSource::File { path } => Ok(serde_json::from_str(&fs::read_to_string(path)?)?),
            DiffusionSource::Compute { greenkubo, grid } => DiffusionTable::compute(greenkubo, grid),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroConfig {
    pub run: HydroRun,
    pub diffusion: DiffusionSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluctuationsConfig {
    pub law: DisorderLaw,
    pub m: f64,
    pub d: usize,
    pub ns: Vec<usize>,
    #[serde(default = "default_outer")]
    pub outer: OuterScale,
    pub samples: usize,
    pub seed: u64,
}

fn default_outer() -> OuterScale {
    OuterScale::Equal
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Ensemble {
    /// Product measure at `λ₀(density)`.
    Grand { density: f64 },
    /// Product measure conditioned on the particle number.
    Canonical { particles: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleDynamics {
    pub family: RateFamily<f64>,
    pub t_end: f64,
    /// Defaults to one over the smallest side.
    #[serde(default)]
    pub epsilon: Option<f64>,
    #[serde(default)]
    pub observe: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleConfig {
    pub dims: Vec<usize>,
    pub law: DisorderLaw,
    pub ensemble: Ensemble,
    pub seed: u64,
    #[serde(default)]
    pub dynamics: Option<SampleDynamics>,
}

#[derive(Serialize)]
struct Manifest<'a, C: Serialize> {
    command: &'a str,
    version: &'a str,
    threads: Option<usize>,
    config: &'a C,
    outputs: &'a [String],
}

/// Parse a configuration, applying a `--seed` override to a top-level `seed`
/// field and to nested `greenkubo` and `run` sections.
fn parse<C: DeserializeOwned>(text: &str, seed: Option<u64>) -> Result<C> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    if let (Some(s), Some(obj)) = (seed, value.as_object_mut()) {
        if obj.contains_key("seed") {
            obj.insert("seed".into(), s.into());
        }
        for key in ["greenkubo", "run"] {
            if let Some(inner) = obj.get_mut(key).and_then(|v| v.as_object_mut()) {
                inner.insert("seed".into(), s.into());
            }
        }
    }
    Ok(serde_json::from_value(value)?)
}

struct Writer<'a> {
    out: &'a Path,
    outputs: Vec<String>,
}

impl<'a> Writer<'a> {
    fn file(&mut self, name: &str) -> Result<BufWriter<fs::File>> {
        self.outputs.push(name.to_string());
        Ok(BufWriter::new(fs::File::create(self.out.join(name))?))
    }

    fn json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Result<()> {
        self.outputs.push(name.to_string());
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.out.join(name), text)?;
        Ok(())
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        self.outputs.push(name.to_string());
        fs::write(self.out.join(name), bytes)?;
        Ok(())
    }

    fn manifest<C: Serialize>(self, command: &str, threads: Option<usize>, config: &C, pass: bool) -> Result<Outcome> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            threads,
            config,
            outputs: &self.outputs,
        };
        let mut text = serde_json::to_string_pretty(&manifest)?;
        text.push('\n');
        fs::write(self.out.join("manifest.json"), text)?;
        Ok(Outcome {
            pass,
            outputs: self.outputs,
        })
    }
}

/// 64-bit FNV-1a, used to key cached tables.
fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x100_0000_01b3))
}

/// Run `command` on the configuration text.
pub fn execute(task: Task, config: &str, opts: &Options) -> Result<Outcome> {
    fs::create_dir_all(&opts.out)?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = opts.threads {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| dispatch(task, config, opts))
}

fn dispatch(task: Task, text: &str, opts: &Options) -> Result<Outcome> {
    let mut w = Writer {
        out: &opts.out,
        outputs: Vec::new(),
    };
    let name = task.name();
    let threads = opts.threads;
    match task {
        Task::ValidateRates => {
            let cfg: ValidateRatesConfig = parse(text, opts.seed)?;
            if !(cfg.bound >= 0.0) || cfg.grid < 2 {
                return Err(Error::InvalidArgument("need bound >= 0 and at least two grid points".into()));
            }
            let violations = cfg.family.validate(cfg.bound, cfg.grid);
            let (lo, hi) = cfg.family.bounds(cfg.bound, cfg.grid);
            let report = serde_json::json!({
                "family": cfg.family.name(),
                "pass": violations.is_empty(),
                "min_rate": lo,
                "max_rate": hi,
                "violations": violations.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
            });
            for v in &violations {
                eprintln!("violation: {v}");
            }
            w.json("rates_report.json", &report)?;
            w.manifest(name, threads, &cfg, violations.is_empty())
        }
        Task::Thermo => {
            let cfg: ThermoConfig = parse(text, opts.seed)?;
            let key = fnv1a(serde_json::to_string(&cfg)?.as_bytes());
            let cached = std::env::var_os("LATGAS_CACHE").map(|d| PathBuf::from(d).join(format!("thermo-{key:016x}.csv")));
            let bytes = match cached.as_ref().and_then(|p| fs::read(p).ok()) {
                Some(b) => b,
                None => {
                    let mut buf = Vec::new();
                    ThermoTable::compute(&cfg.law, &cfg.grid)?.write_csv(&mut buf)?;
                    if let Some(p) = &cached {
                        if let Some(dir) = p.parent() {
                            fs::create_dir_all(dir)?;
                        }
                        fs::write(p, &buf)?;
                    }
                    buf
                }
            };
            w.bytes("thermo.csv", &bytes)?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::GapScaling => {
            let cfg: GapScalingConfig = parse(text, opts.seed)?;
            let res = gap_scaling(&cfg.law, &cfg.family, cfg.shape, &cfg.ells, cfg.samples, cfg.seed)?;
            res.write_csv(w.file("gap_scaling.csv")?)?;
            w.json(
                "gap_summary.json",
                &serde_json::json!({ "minima": res.minima, "spread": res.spread() }),
            )?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::Diffusion => {
            let cfg: DiffusionConfig = parse(text, opts.seed)?;
            let table = DiffusionTable::compute(&cfg.greenkubo, &cfg.grid)?;
            table.write_csv(w.file("diffusion.csv")?)?;
            w.json("diffusion.json", &table)?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::Hydro => {
            let cfg: HydroConfig = parse(text, opts.seed)?;
            let table = cfg.diffusion.table(cfg.run.d)?;
            let report = compare_hydro(&cfg.run, &table)?;
            report.write_csv(w.file("hydro.csv")?)?;
            report.write_profiles_csv(w.file("hydro_profiles.csv")?)?;
            w.json("hydro_report.json", &report)?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::Fluctuations => {
            let cfg: FluctuationsConfig = parse(text, opts.seed)?;
            let stats = phi_statistics(&cfg.law, cfg.m, cfg.d, &cfg.ns, cfg.outer, cfg.samples, cfg.seed)?;
            stats.write_csv(w.file("phi_statistics.csv")?)?;
            w.json("phi_summary.json", &serde_json::json!({ "slope": stats.slope }))?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::Sample => {
            let cfg: SampleConfig = parse(text, opts.seed)?;
            run_sample(&cfg, &mut w)?;
            w.manifest(name, threads, &cfg, true)
        }
        Task::SpectralH1 => {
            let cfg: VjConfig = parse(text, opts.seed)?;
            let res = vj_diagnostic(&cfg)?;
            w.json("spectral_h1.json", &res)?;
            w.manifest(name, threads, &cfg, true)
        }
    }
}

fn run_sample(cfg: &SampleConfig, w: &mut Writer) -> Result<()> {
    let geom = TorusGeometry::new(&cfg.dims)?;
    let field = DisorderField::sample(&cfg.law, &geom, cfg.seed)?;
    field.write_csv(w.file("disorder.csv")?)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let config = match &cfg.ensemble {
        Ensemble::Grand { density } => GrandCanonicalSpec {
            alphas: field.values.clone(),
            lambda: annealed_lambda(&cfg.law, *density)?,
        }
        .sample(&mut rng),
        Ensemble::Canonical { particles } => CanonicalSpec {
            alphas: field.values.clone(),
            n: *particles,
        }
        .sample(&mut rng)?,
    };
    write_snapshot(w.file("initial.snap")?, &geom, &config, 0.0)?;
    if let Some(dy) = &cfg.dynamics {
        let eps = dy.epsilon.unwrap_or(1.0 / geom.min_side() as f64);
        let mut state = DynState::new(geom.clone(), &field, dy.family.clone(), config, eps)?;
        let mut traj = TrajectoryCsv::new(w.file("trajectory.csv")?)?;
        traj.add("density", |s| s.configuration().density());
        traj.add("total_rate", |s| s.total_rate());
        traj.add("events", |s| s.events() as f64);
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(2);
        state.run(dy.t_end, &dy.observe, &mut traj, &mut rng);
        traj.finish()?;
        write_snapshot(w.file("final.snap")?, &geom, state.configuration(), state.time())?;
    }
    Ok(())
}
