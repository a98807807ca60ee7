//! Config-driven command line front end.
//!
//! A run is described by one TOML file. Every section is optional and falls
//! back to its defaults; unknown keys are rejected. `--preset` names either a
//! solver preset (`appendix`, `sim51`) that the `[solver]` table is layered
//! over, or a protocol preset (`fig2-left`, `fig2-right`, `baselines`) that
//! selects the generator and the experiment.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::basis::{BasisSet, EmpiricalBasisJson};
use crate::error::{FotError, Result};
use crate::evaluate::{
    default_source_prior, derive_seed, fig2_left_data, fig2_right_data, run_fig2_left, run_fig2_right,
    BaselineExperiment, Fig2LeftConfig, Fig2RightConfig, GroundTruthData,
};
use crate::funcdata::{
    generate_sinusoid_mixture, load_dataset, save_dataset, uniform_grid, DataFormat, Domain, FunctionalDataset,
    PointsRule, SinusoidComponent,
};
use crate::operator::{MapFile, OperatorCoeffs};
use crate::solver::{fit, SolverConfig, PRESET_NAMES};

pub const PROTOCOL_PRESETS: [&str; 3] = ["fig2-left", "fig2-right", "baselines"];

#[derive(Debug, Parser)]
#[command(name = "fot", version, about = "Functional optimal transport between sets of curves")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML run description.
    #[arg(long, short)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, env = "FOT_OUT")]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Draw source and target curves.
    Generate(CommonArgs),
    /// Fit a map between source and target curves.
    Fit(CommonArgs),
    /// Push curves through a saved map.
    Push {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        map: Option<PathBuf>,
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Run a simulation protocol and write its CSV.
    Experiment {
        protocol: Option<Protocol>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Resolve and check a config without running anything.
    ValidateConfig(CommonArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Protocol {
    Fig2Left,
    Fig2Right,
    Baselines,
}

impl Protocol {
    fn from_name(name: &str) -> Option<Self> {
        match name {
            "fig2-left" => Some(Protocol::Fig2Left),
            "fig2-right" => Some(Protocol::Fig2Right),
            "baselines" => Some(Protocol::Baselines),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BasisSpec {
    BrownianMotion {
        count: Option<usize>,
    },
    SquaredExponential {
        lengthscale: f64,
        sigma: f64,
        count: Option<usize>,
    },
    /// Basis stored as JSON with `grid` and `eigenvectors`.
    Empirical {
        path: PathBuf,
    },
}

impl Default for BasisSpec {
    fn default() -> Self {
        BasisSpec::BrownianMotion { count: None }
    }
}

impl BasisSpec {
    fn build(&self, needed: usize, base: &Path) -> Result<BasisSet> {
        match self {
            BasisSpec::BrownianMotion { count } => BasisSet::brownian(count.unwrap_or(needed)),
            BasisSpec::SquaredExponential { lengthscale, sigma, count } => {
                BasisSet::squared_exponential(*lengthscale, *sigma, count.unwrap_or(needed))
            }
            BasisSpec::Empirical { path } => {
                let text = std::fs::read_to_string(base.join(path))?;
                let json: EmpiricalBasisJson = serde_json::from_str(&text)?;
                BasisSet::from_empirical_json(&json)
            }
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BasisSection {
    pub source: BasisSpec,
    pub target: BasisSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixtureSpec {
    pub n_source: usize,
    pub n_target: usize,
    pub source_prior: Vec<SinusoidComponent>,
    pub target_prior: Vec<SinusoidComponent>,
    pub source_points: PointsRule,
    pub target_points: PointsRule,
}

impl Default for MixtureSpec {
    fn default() -> Self {
        let b = BaselineExperiment::default();
        Self {
            n_source: b.n_source,
            n_target: b.n_target,
            source_prior: default_source_prior(),
            target_prior: b.target_prior,
            source_points: b.source_points,
            target_points: b.target_points,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Generator {
    /// Ground-truth pushforward data of the `[eval.fig2_left]` protocol.
    Fig2Left,
    Fig2Right,
    /// Training pair of the `[eval.baselines]` experiment.
    Baselines,
    Mixture(MixtureSpec),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub generator: Option<Generator>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    /// Format of generated files.
    pub format: DataFormat,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { generator: None, source: None, target: None, format: DataFormat::Json }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub protocol: Option<Protocol>,
    pub fig2_left: Fig2LeftConfig,
    pub fig2_right: Fig2RightConfig,
    pub baselines: BaselineExperiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PushSection {
    pub map: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    /// Evaluation points shared by every pushed curve. Without points or a
    /// grid each curve keeps its own design points.
    pub target_points: Option<Vec<f64>>,
    pub target_grid: Option<GridSpec>,
}

impl PushSection {
    fn points(&self) -> Result<Option<Vec<f64>>> {
        match (&self.target_points, &self.target_grid) {
            (Some(_), Some(_)) => Err(FotError::Config("give either push.target_points or push.target_grid".into())),
            (Some(p), None) => Ok(Some(p.clone())),
            (None, Some(g)) => {
                if g.count == 0 || !(g.lo < g.hi) {
                    return Err(FotError::Config("push.target_grid needs lo < hi and count > 0".into()));
                }
                Ok(Some(uniform_grid(g.lo, g.hi, g.count)))
            }
            (None, None) => Ok(None),
        }
    }
}

/// Raw file layout. The solver table is kept untyped so it can be layered
/// over a preset before it is checked.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out: Option<PathBuf>,
    preset: Option<String>,
    data: DataSection,
    basis: BasisSection,
    solver: toml::Table,
    eval: EvalSection,
    push: PushSection,
}

/// Fully resolved run description. Its hash identifies a run; the output
/// directory is not part of it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub preset: Option<String>,
    pub data: DataSection,
    pub basis: BasisSection,
    pub solver: SolverConfig,
    pub eval: EvalSection,
    pub push: PushSection,
    #[serde(skip)]
    pub out: PathBuf,
    /// Directory relative input paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str, preset_override: Option<&str>) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| FotError::Config(e.to_string()))?;
        Self::from_raw(raw, preset_override)
    }

    fn from_raw(raw: RawConfig, preset_override: Option<&str>) -> Result<Self> {
        let preset = preset_override.map(str::to_string).or(raw.preset);
        let mut data = raw.data;
        let mut eval = raw.eval;
        let mut solver_base = SolverConfig::default();
        if let Some(name) = preset.as_deref() {
            if let Some(protocol) = Protocol::from_name(name) {
                eval.protocol.get_or_insert(protocol);
                data.generator.get_or_insert(match protocol {
                    Protocol::Fig2Left => Generator::Fig2Left,
                    Protocol::Fig2Right => Generator::Fig2Right,
                    Protocol::Baselines => Generator::Baselines,
                });
            } else if PRESET_NAMES.contains(&name) {
                solver_base = SolverConfig::preset(name)?;
            } else {
                return Err(FotError::Config(format!(
                    "unknown preset {name:?} (expected one of {}, {})",
                    PRESET_NAMES.join(", "),
                    PROTOCOL_PRESETS.join(", ")
                )));
            }
        }
        let solver = layer_solver(solver_base, raw.solver)?;
        Ok(Self {
            seed: raw.seed,
            preset,
            data,
            basis: raw.basis,
            solver,
            eval,
            push: raw.push,
            out: raw.out.unwrap_or_else(|| PathBuf::from("fot-out")),
            base_dir: PathBuf::from("."),
        })
    }

    pub fn load(args: &CommonArgs) -> Result<Self> {
        let mut cfg = match &args.config {
            Some(path) => {
                let text = std::fs::read_to_string(path)?;
                let mut cfg = Self::from_toml_str(&text, args.preset.as_deref())?;
                cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
                // a relative `out` in the file is relative to the file as well
                if !cfg.out.is_absolute() {
                    cfg.out = cfg.base_dir.join(&cfg.out);
                }
                cfg
            }
            None => Self::from_raw(RawConfig::default(), args.preset.as_deref())?,
        };
        if let Some(seed) = args.seed {
            cfg.seed = Some(seed);
        }
        if let Some(out) = &args.out {
            cfg.out = out.clone();
        }
        cfg.apply_seed();
        Ok(cfg)
    }

    /// An explicit top-level seed drives the solver and every protocol.
    fn apply_seed(&mut self) {
        if let Some(seed) = self.seed {
            self.solver.seed = seed;
            self.eval.fig2_left.seeds = vec![seed];
            self.eval.fig2_right.seeds = vec![seed];
            self.eval.baselines.seeds = vec![seed];
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        self.eval.fig2_left.validate()?;
        self.eval.fig2_right.validate()?;
        self.eval.baselines.settings.solver.validate()?;
        if let Some(Generator::Mixture(m)) = &self.data.generator {
            if m.n_source == 0 || m.n_target == 0 {
                return Err(FotError::Parameter("generator sample counts must be positive".into()));
            }
            if m.source_prior.is_empty() || m.target_prior.is_empty() {
                return Err(FotError::Parameter("generator priors need at least one component".into()));
            }
            m.source_points.validate()?;
            m.target_points.validate()?;
        }
        let b = &self.eval.baselines;
        if b.n_source == 0 || b.n_target == 0 || b.seeds.is_empty() {
            return Err(FotError::Parameter("baseline sample counts and seeds must be nonempty".into()));
        }
        self.push.points()?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> Result<String> {
        let bytes = serde_json::to_vec(self)?;
        Ok(hex::encode(Sha256::digest(&bytes)))
    }

    fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    fn generated(&self) -> Result<Option<(FunctionalDataset, FunctionalDataset, Option<OperatorCoeffs>)>> {
        let seed = self.seed();
        let truth = |d: GroundTruthData| Some((d.source, d.target, Some(d.truth)));
        Ok(match &self.data.generator {
            None => None,
            Some(Generator::Fig2Left) => truth(fig2_left_data(&self.eval.fig2_left, seed)?),
            Some(Generator::Fig2Right) => truth(fig2_right_data(&self.eval.fig2_right, seed)?),
            Some(Generator::Baselines) => {
                let (s, t) = self.eval.baselines.data(seed)?;
                Some((s, t, None))
            }
            Some(Generator::Mixture(m)) => {
                let s = generate_sinusoid_mixture(
                    m.n_source,
                    &m.source_prior,
                    &m.source_points,
                    derive_seed(seed, 1),
                    Domain::Source,
                )?;
                let t = generate_sinusoid_mixture(
                    m.n_target,
                    &m.target_prior,
                    &m.target_points,
                    derive_seed(seed, 2),
                    Domain::Target,
                )?;
                Some((s, t, None))
            }
        })
    }

    /// Input pair from files when both paths are given, otherwise from the
    /// generator.
    fn datasets(&self) -> Result<(FunctionalDataset, FunctionalDataset)> {
        if let (Some(s), Some(t)) = (&self.data.source, &self.data.target) {
            let (s, t) = (self.resolve(s), self.resolve(t));
            let source = load_dataset(&s, DataFormat::from_path(&s)?, Domain::Source)?;
            let target = load_dataset(&t, DataFormat::from_path(&t)?, Domain::Target)?;
            return Ok((source, target));
        }
        match self.generated()? {
            Some((s, t, _)) => Ok((s, t)),
            None => Err(FotError::Config("fit needs data.source and data.target or a data.generator".into())),
        }
    }
}

fn layer_solver(base: SolverConfig, overrides: toml::Table) -> Result<SolverConfig> {
    let mut table = match toml::Value::try_from(&base).map_err(|e| FotError::Config(e.to_string()))? {
        toml::Value::Table(t) => t,
        _ => unreachable!("solver config serializes to a table"),
    };
    for (key, value) in overrides {
        table.insert(key, value);
    }
    toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| FotError::Config(format!("[solver] {e}")))
}

#[derive(Debug, Serialize)]
struct Manifest {
    command: &'static str,
    version: &'static str,
    config_hash: String,
    seed: u64,
    files: BTreeMap<String, String>,
    details: BTreeMap<String, serde_json::Value>,
}

/// Collects files written into one output directory and their hashes.
struct Bundle {
    dir: PathBuf,
    files: BTreeMap<String, String>,
}

impl Bundle {
    fn create(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), files: BTreeMap::new() })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn record(&mut self, name: &str) -> Result<()> {
        let bytes = std::fs::read(self.path(name))?;
        self.files.insert(name.to_string(), hex::encode(Sha256::digest(&bytes)));
        Ok(())
    }

    fn write(&mut self, name: &str, f: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
        f(&self.path(name))?;
        self.record(name)
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, |p| Ok(std::fs::write(p, serde_json::to_string_pretty(value)? + "\n")?))
    }

    fn finish(self, command: &'static str, cfg: &ExperimentConfig, details: BTreeMap<String, serde_json::Value>) -> Result<()> {
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            config_hash: cfg.hash()?,
            seed: cfg.seed(),
            files: self.files,
            details,
        };
        std::fs::write(self.dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)? + "\n")?;
        Ok(())
    }
}

fn extension(format: DataFormat) -> &'static str {
    match format {
        DataFormat::Json => "json",
        DataFormat::Csv => "csv",
    }
}

pub fn cmd_generate(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let Some((source, target, truth)) = cfg.generated()? else {
        return Err(FotError::Config("generate needs data.generator or a protocol preset".into()));
    };
    let mut bundle = Bundle::create(&cfg.out)?;
    let format = cfg.data.format;
    let ext = extension(format);
    bundle.write(&format!("source.{ext}"), |p| save_dataset(&source, p, format))?;
    bundle.write(&format!("target.{ext}"), |p| save_dataset(&target, p, format))?;
    let mut details = BTreeMap::new();
    details.insert("n_source".into(), source.len().into());
    details.insert("n_target".into(), target.len().into());
    if let Some(truth) = truth {
        bundle.write_json("truth_map.json", &MapFile::from(&truth))?;
        let k_star = match cfg.data.generator {
            Some(Generator::Fig2Left) => cfg.eval.fig2_left.intrinsic_dim,
            _ => cfg.eval.fig2_right.truth_dim,
        };
        details.insert("k_star".into(), serde_json::json!([k_star, k_star]));
    }
    bundle.finish("generate", cfg, details)
}

pub fn cmd_fit(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let (source, target) = cfg.datasets()?;
    let solver = &cfg.solver;
    let source_basis = cfg.basis.source.build(solver.k_source, &cfg.base_dir)?;
    let target_basis = cfg.basis.target.build(solver.k_target, &cfg.base_dir)?;
    let mut bundle = Bundle::create(&cfg.out)?;
    let result = match fit(&source, &target, &source_basis, &target_basis, solver) {
        Ok(r) => r,
        Err(e) => {
            dump_failure(&mut bundle, &e)?;
            bundle.finish("fit", cfg, BTreeMap::from([("error".to_string(), e.to_string().into())]))?;
            return Err(e);
        }
    };
    bundle.write("fit.json", |p| result.write_json(p))?;
    bundle.write_json("map.json", &MapFile::from(&result.op))?;
    bundle.write("trace.csv", |p| result.write_trace_csv(p))?;
    bundle.write("plan.csv", |p| result.plan.write_csv(p))?;
    let mut details = BTreeMap::new();
    details.insert("final_objective".into(), result.final_objective().into());
    details.insert("iterations".into(), result.flags.iterations.into());
    details.insert("converged".into(), result.flags.converged.into());
    bundle.finish("fit", cfg, details)
}

fn dump_failure(bundle: &mut Bundle, e: &FotError) -> Result<()> {
    let (header, values) = match e {
        FotError::Diverged { objective_trace, .. } => ("iteration,total", objective_trace),
        FotError::Convergence { residual_trace, .. } => ("iteration,residual", residual_trace),
        _ => return Ok(()),
    };
    bundle.write("failure_trace.csv", |p| {
        let mut text = format!("{header}\n");
        for (i, v) in values.iter().enumerate() {
            text.push_str(&format!("{i},{v}\n"));
        }
        Ok(std::fs::write(p, text)?)
    })
}

pub fn cmd_push(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let (Some(map), Some(curves)) = (&cfg.push.map, &cfg.push.curves) else {
        return Err(FotError::Config("push needs a map file and a curves file".into()));
    };
    let text = std::fs::read_to_string(cfg.resolve(map))?;
    let op = OperatorCoeffs::try_from(serde_json::from_str::<MapFile>(&text)?)?;
    let curves = cfg.resolve(curves);
    let input = load_dataset(&curves, DataFormat::from_path(&curves)?, Domain::Source)?;
    let points = cfg.push.points()?;
    let pushed = input
        .samples
        .iter()
        .map(|s| op.pushforward(s, points.as_deref().unwrap_or(&s.x)))
        .collect::<Result<Vec<_>>>()?;
    let pushed = FunctionalDataset::new(Domain::Target, pushed)?;
    let mut bundle = Bundle::create(&cfg.out)?;
    bundle.write("pushed.json", |p| save_dataset(&pushed, p, DataFormat::Json))?;
    bundle.finish("push", cfg, BTreeMap::from([("n_curves".to_string(), pushed.len().into())]))
}

pub fn cmd_experiment(cfg: &ExperimentConfig, protocol: Option<Protocol>) -> Result<()> {
    cfg.validate()?;
    let Some(protocol) = protocol.or(cfg.eval.protocol) else {
        return Err(FotError::Config("experiment needs a protocol (fig2-left, fig2-right, baselines)".into()));
    };
    let mut details = BTreeMap::new();
    let name = serde_json::to_value(protocol)?;
    details.insert("protocol".to_string(), name);
    let curve = match protocol {
        Protocol::Fig2Left => Some((run_fig2_left(&cfg.eval.fig2_left)?, "fig2_left.csv")),
        Protocol::Fig2Right => Some((run_fig2_right(&cfg.eval.fig2_right)?, "fig2_right.csv")),
        Protocol::Baselines => None,
    };
    let mut bundle = Bundle::create(&cfg.out)?;
    match curve {
        Some((curve, file)) => {
            if protocol == Protocol::Fig2Left {
                bundle.write(file, |p| curve.write_loss_csv(p))?;
            } else {
                bundle.write(file, |p| curve.write_frobenius_csv(p))?;
            }
            bundle.write_json("curve.json", &curve)?;
            let failures: usize = curve.points.iter().map(|p| p.failures.len()).sum();
            details.insert("failed_fits".into(), failures.into());
        }
        None => {
            let table = cfg.eval.baselines.run()?;
            bundle.write("baselines.csv", |p| table.write_csv(p))?;
            bundle.write_json("baselines.json", &table)?;
        }
    }
    bundle.finish("experiment", cfg, details)
}

pub fn cmd_validate_config(cfg: &ExperimentConfig) -> Result<String> {
    cfg.validate()?;
    cfg.hash()
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate(args) => cmd_generate(&ExperimentConfig::load(&args)?),
        Command::Fit(args) => cmd_fit(&ExperimentConfig::load(&args)?),
        Command::Push { common, map, curves } => {
            let mut cfg = ExperimentConfig::load(&common)?;
            // flag paths are relative to the working directory
            let cwd = |p: PathBuf| if p.is_absolute() { p } else { std::env::current_dir().map(|d| d.join(p)).unwrap_or_default() };
            if let Some(m) = map {
                cfg.push.map = Some(cwd(m));
            }
            if let Some(c) = curves {
                cfg.push.curves = Some(cwd(c));
            }
            cmd_push(&cfg)
        }
        Command::Experiment { protocol, common } => cmd_experiment(&ExperimentConfig::load(&common)?, protocol),
        Command::ValidateConfig(args) => {
            let hash = cmd_validate_config(&ExperimentConfig::load(&args)?)?;
            println!("config ok {hash}");
            Ok(())
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
