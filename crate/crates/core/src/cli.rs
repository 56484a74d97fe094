//! The `prob-lqr` command line: config files, subcommands and persisted
//! artifacts.
//!
//! Every file written carries a [`Provenance`] stamp (or, for the CSV, is
//! listed with one in the experiment manifest). The config hash is taken
//! over the effective configuration after command-line overrides.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifact::{self, config_hash, to_json_bytes, write_atomic, Provenance};
use crate::benchmarks::{
    self, collect_rollouts, cubic_plant, dean_linear_system, ExperimentConfig, ExperimentKind, GpSettings,
    NonlinearPlant, RolloutSettings, SolverConfig, CUBIC_NOISE,
};
use crate::control::CostWeights;
use crate::distributions::{GaussianParameterLaw, LawDocument, RiskProfile, TruncatedLaw};
use crate::error::{Error, Result};
use crate::gp::{GpPosterior, SeKernel, TransitionDataset};
use crate::linalg::from_rows;
use crate::rng;
use crate::synthesis::{
    algorithm1, validate_with, CertifiedController, StopRule, SynthesisOptions, SynthesisOutcome,
    ValidationReport,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_ERROR: u8 = 1;
pub const EXIT_INFEASIBLE: u8 = 2;
pub const EXIT_RESTARTS_EXHAUSTED: u8 = 3;
/// `validate` exit code when the gain fails validation.
pub const EXIT_VALIDATION_FAILED: u8 = 4;

#[derive(Debug, Parser)]
#[command(name = "prob-lqr", version, about = "Probabilistic robust LQR synthesis for learned dynamics")]
pub struct Cli {
    /// Log per-phase progress and solver diagnostics.
    #[arg(long, short, global = true)]
    pub verbose: bool,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a GP to transition data and write the linearized parameter law.
    Learn(LearnArgs),
    /// Run the certified synthesis on a law.
    Synthesize(SynthesizeArgs),
    /// Re-validate a controller on fresh draws from a law.
    Validate(ValidateArgs),
    /// Run a benchmark experiment grid.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PlantKind {
    /// The three-state linear benchmark.
    Dean,
    /// The same system with the cubic term.
    Cubic,
}

#[derive(Debug, Args)]
pub struct LearnArgs {
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Transition data (CSV or JSON); overrides the config.
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Collect rollouts from a benchmark plant instead of reading data.
    #[arg(long, value_enum)]
    pub plant: Option<PlantKind>,
    #[arg(long)]
    pub rollouts: Option<usize>,
    #[arg(long)]
    pub signal_variance: Option<f64>,
    #[arg(long)]
    pub lengthscale: Option<f64>,
    #[arg(long)]
    pub noise_variance: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Controller JSON written by `synthesize`.
    #[arg(long)]
    pub controller: PathBuf,
    /// Law JSON to validate against.
    #[arg(long)]
    pub law: PathBuf,
    /// Optional config for the profile, seed and sample count.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Credibility of the truncated law.
    #[arg(long)]
    pub credibility: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub eps_val: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Number of draws (default: the Hoeffding bound of the profile).
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(value_enum)]
    pub name: ExperimentName,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    /// Use the sample sizes of the original study.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExperimentName {
    SyntheticDist,
    Cubic,
}

impl From<ExperimentName> for ExperimentKind {
    fn from(n: ExperimentName) -> Self {
        match n {
            ExperimentName::SyntheticDist => ExperimentKind::SyntheticDist,
            ExperimentName::Cubic => ExperimentKind::Cubic,
        }
    }
}

/// Where the parameter law comes from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LawSource {
    /// A law JSON document.
    pub path: Option<PathBuf>,
    /// Transition data to fit a GP to.
    pub dataset: Option<PathBuf>,
    /// Linearization point `(x*, u*)`; zeros when absent.
    pub operating_point: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WeightsConfig {
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    /// Process-noise covariance; taken from the law when absent.
    #[serde(default)]
    pub sigma_w: Option<Vec<Vec<f64>>>,
}

impl WeightsConfig {
    fn resolve(&self, law_noise: Option<&[f64]>) -> Result<CostWeights> {
        let q = from_rows(&self.q, "Q")?;
        let r = from_rows(&self.r, "R")?;
        let sigma = match (&self.sigma_w, law_noise) {
            (Some(rows), _) => from_rows(rows, "sigma_w")?,
            (None, Some(diag)) => DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diag)),
            (None, None) => {
                return Err(Error::Config(
                    "weights.sigma_w is required when the law carries no process noise".into(),
                ))
            }
        };
        CostWeights::new(q, r, sigma)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthesisSection {
    pub max_restarts: usize,
    pub stop: StopRule,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        let o = SynthesisOptions::default();
        Self {
            max_restarts: o.max_restarts,
            stop: o.stop,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ValidationSection {
    /// Draws per validation; the Hoeffding bound when absent.
    pub samples: Option<usize>,
}

/// Rollout collection for `learn --plant`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantSection {
    pub kind: Option<PlantKind>,
    pub rollouts: usize,
    pub rollout: RolloutSettings,
    pub process_noise: f64,
}

impl Default for PlantSection {
    fn default() -> Self {
        Self {
            kind: None,
            rollouts: 5,
            rollout: RolloutSettings::default(),
            process_noise: CUBIC_NOISE,
        }
    }
}

/// One declarative run configuration (TOML). Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    pub law: LawSource,
    pub gp: GpSettings,
    pub profile: RiskProfile,
    pub weights: Option<WeightsConfig>,
    pub solver: SolverConfig,
    pub synthesis: SynthesisSection,
    pub validation: ValidationSection,
    pub plant: PlantSection,
    pub experiment: Option<ExperimentConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            law: LawSource::default(),
            gp: GpSettings::default(),
            profile: RiskProfile::default(),
            weights: None,
            solver: SolverConfig::default(),
            synthesis: SynthesisSection::default(),
            validation: ValidationSection::default(),
            plant: PlantSection::default(),
            experiment: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.profile.validate()?;
        if self.law.path.is_some() && self.law.dataset.is_some() {
            return Err(Error::Config("law.path and law.dataset are mutually exclusive".into()));
        }
        if let Some(e) = &self.experiment {
            e.validate()?;
        }
        Ok(())
    }

    fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            max_restarts: self.synthesis.max_restarts,
            stop: self.synthesis.stop,
            solver: self.solver.into(),
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

/// Relative paths in a config resolve against the config's directory.
fn resolve_path(config: Option<&Path>, p: &Path) -> PathBuf {
    match config.and_then(Path::parent) {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    }
}

pub fn read_law(path: &Path) -> Result<(GaussianParameterLaw, LawDocument)> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read law {}: {e}", path.display())))?;
    let doc: LawDocument = serde_json::from_str(&text)?;
    Ok((GaussianParameterLaw::from_document(&doc)?, doc))
}

/// Fits the GP to `data` and linearizes at `operating_point`.
pub fn learn_from_dataset(
    data: TransitionDataset,
    gp: &GpSettings,
    operating_point: Option<&[f64]>,
) -> Result<LawDocument> {
    let d_x = data.d_x();
    let d_q = d_x + data.d_u();
    let q_star = match operating_point {
        Some(q) if q.len() != d_q => {
            return Err(Error::Config(format!(
                "operating point has {} entries, the data has {d_q} inputs",
                q.len()
            )))
        }
        Some(q) => q.to_vec(),
        None => vec![0.0; d_q],
    };
    let kernel = SeKernel::isotropic(gp.signal_variance, gp.lengthscale, d_q)?;
    let post = GpPosterior::fit(data, kernel, vec![gp.noise_variance; d_x], gp.target_mode)?;
    let law = post.linearize(&q_star)?;
    let mut doc = law.to_document(None);
    doc.process_noise = Some(post.process_noise_estimate().diagonal().iter().copied().collect());
    Ok(doc)
}

fn plant_for(kind: PlantKind, noise: f64) -> Result<NonlinearPlant> {
    match kind {
        PlantKind::Cubic => cubic_plant(DMatrix::identity(3, 3) * noise),
        PlantKind::Dean => {
            let (sys, w) = dean_linear_system();
            let w = CostWeights::new(w.q, w.r, DMatrix::identity(3, 3) * noise)?;
            NonlinearPlant::linear(sys, w)
        }
    }
}

pub fn cmd_learn(args: &LearnArgs) -> Result<u8> {
    let mut cfg = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(v) = args.signal_variance {
        cfg.gp.signal_variance = v;
    }
    if let Some(v) = args.lengthscale {
        cfg.gp.lengthscale = v;
    }
    if let Some(v) = args.noise_variance {
        cfg.gp.noise_variance = v;
    }
    if let Some(d) = &args.dataset {
        cfg.law.dataset = Some(d.clone());
        cfg.plant.kind = None;
    }
    if let Some(p) = args.plant {
        cfg.plant.kind = Some(p);
        cfg.law.dataset = None;
    }
    if let Some(n) = args.rollouts {
        cfg.plant.rollouts = n;
    }
    cfg.validate()?;

    let data = match (&cfg.law.dataset, cfg.plant.kind) {
        (Some(path), _) => TransitionDataset::load(&resolve_path(args.config.as_deref(), path))?,
        (None, Some(kind)) => {
            let plant = plant_for(kind, cfg.plant.process_noise)?;
            if cfg.law.operating_point.is_none() {
                cfg.law.operating_point = Some(plant.x_star.iter().chain(plant.u_star.iter()).copied().collect());
            }
            let mut r = rng::stream(cfg.seed, &[rng::label::ROLLOUTS]);
            collect_rollouts(&plant, cfg.plant.rollouts, &cfg.plant.rollout, &mut r)?
        }
        (None, None) => return Err(Error::Config("learn needs a dataset or a plant".into())),
    };
    info!("fitting GP to {} transitions", data.len());
    let mut doc = learn_from_dataset(data, &cfg.gp, cfg.law.operating_point.as_deref())?;
    doc.provenance = Some(Provenance::new(config_hash(&cfg)?, cfg.seed));
    write_atomic(&args.out, &to_json_bytes(&doc)?)?;
    info!("law written to {}", args.out.display());
    Ok(EXIT_OK)
}

/// Report written by `synthesize` when no controller is certified.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InfeasibilityReport {
    #[serde(flatten)]
    pub provenance: Provenance,
    #[serde(flatten)]
    pub outcome: SynthesisOutcome,
}

/// The law named by a run config, loaded or learned.
pub fn resolve_law(cfg: &RunConfig, config_path: Option<&Path>) -> Result<LawDocument> {
    match (&cfg.law.path, &cfg.law.dataset) {
        (Some(p), _) => Ok(read_law(&resolve_path(config_path, p))?.1),
        (None, Some(d)) => learn_from_dataset(
            TransitionDataset::load(&resolve_path(config_path, d))?,
            &cfg.gp,
            cfg.law.operating_point.as_deref(),
        ),
        (None, None) => Err(Error::Config("config needs law.path or law.dataset".into())),
    }
}

pub fn cmd_synthesize(args: &SynthesizeArgs) -> Result<u8> {
    let mut cfg = RunConfig::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let hash = config_hash(&cfg)?;
    let doc = resolve_law(&cfg, Some(&args.config))?;
    let law = GaussianParameterLaw::from_document(&doc)?;
    let weights = cfg
        .weights
        .as_ref()
        .ok_or_else(|| Error::Config("config needs a [weights] table".into()))?
        .resolve(doc.process_noise.as_deref())?;
    let tlaw = TruncatedLaw::new(law, cfg.profile.c)?;
    let outcome = algorithm1(&tlaw, &cfg.profile, &weights, cfg.seed, &cfg.synthesis_options())?;
    let (bytes, code) = match outcome {
        SynthesisOutcome::Certified(mut c) => {
            c.config_hash = Some(hash);
            info!(
                "certified after {} attempt(s): empirical stability {:.5}, guaranteed {:.3}",
                c.attempts, c.empirical_stability, c.guaranteed_stability_prob
            );
            (to_json_bytes(&c)?, EXIT_OK)
        }
        other => {
            let code = match other {
                SynthesisOutcome::InfeasibleInit { .. } => EXIT_INFEASIBLE,
                _ => EXIT_RESTARTS_EXHAUSTED,
            };
            let report = InfeasibilityReport {
                provenance: Provenance::new(hash, cfg.seed),
                outcome: other,
            };
            (to_json_bytes(&report)?, code)
        }
    };
    write_atomic(&args.out, &bytes)?;
    Ok(code)
}

/// Report printed (and optionally written) by `validate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationOutput {
    pub schema: String,
    pub config_hash: String,
    pub profile: RiskProfile,
    #[serde(flatten)]
    pub report: ValidationReport,
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<u8> {
    let text = std::fs::read_to_string(&args.controller)
        .map_err(|e| Error::Config(format!("cannot read controller {}: {e}", args.controller.display())))?;
    let controller: CertifiedController = serde_json::from_str(&text)?;
    let (law, _) = read_law(&args.law)?;

    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig {
            profile: controller.profile,
            seed: controller.seeds.validation,
            ..RunConfig::default()
        },
    };
    if let Some(v) = args.credibility {
        cfg.profile.c = v;
    }
    if let Some(v) = args.eps {
        cfg.profile.eps = v;
    }
    if let Some(v) = args.eps_val {
        cfg.profile.eps_val = v;
    }
    if let Some(v) = args.alpha {
        cfg.profile.alpha = v;
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if args.samples.is_some() {
        cfg.validation.samples = args.samples;
    }
    cfg.validate()?;
    let hash = artifact::sha256_hex(
        format!("{}\n{}", config_hash(&cfg)?, artifact::sha256_hex(text.as_bytes())).as_bytes(),
    );

    let tlaw = TruncatedLaw::new(law, cfg.profile.c)?;
    let report = validate_with(&controller.gain, &tlaw, &cfg.profile, cfg.seed, cfg.validation.samples)?;
    let pass = report.pass;
    let out = ValidationOutput {
        schema: artifact::ARTIFACT_SCHEMA.into(),
        config_hash: hash,
        profile: cfg.profile,
        report,
    };
    let bytes = to_json_bytes(&out)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    if let Some(p) = &args.out {
        write_atomic(p, &bytes)?;
    }
    Ok(if pass { EXIT_OK } else { EXIT_VALIDATION_FAILED })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: String,
    pub sha256: String,
}

/// Index of an experiment's output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(flatten)]
    pub provenance: Provenance,
    pub config: ExperimentConfig,
    pub files: Vec<ManifestEntry>,
}

pub fn cell_file_name(grid_index: usize, repetition: usize) -> String {
    format!("cells/cell_g{grid_index}_r{repetition}.json")
}

/// Cell record with its provenance stamp.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFile {
    pub schema: String,
    pub config_hash: String,
    pub record: benchmarks::CellRecord,
}

/// The experiment configuration after defaults, file and flags.
pub fn experiment_config(args: &ExperimentArgs) -> Result<ExperimentConfig> {
    let kind: ExperimentKind = args.name.into();
    let from_file = match &args.config {
        Some(p) => RunConfig::load(p)?.experiment,
        None => None,
    };
    let mut cfg = match from_file {
        Some(c) if c.kind != kind => {
            return Err(Error::Config(format!(
                "config describes a {:?} experiment, command asks for {kind:?}",
                c.kind
            )))
        }
        Some(c) => c,
        None => match kind {
            ExperimentKind::SyntheticDist => ExperimentConfig::synthetic_desk(),
            ExperimentKind::Cubic => ExperimentConfig::cubic_desk(),
        },
    };
    if args.paper_scale {
        cfg = cfg.paper_scale();
    }
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_experiment(args: &ExperimentArgs) -> Result<u8> {
    let cfg = experiment_config(args)?;
    let hash = config_hash(&cfg)?;
    let records = benchmarks::run_experiment(&cfg)?;
    let mut files = Vec::new();
    for rec in &records {
        let name = cell_file_name(rec.grid_index, rec.repetition);
        let bytes = to_json_bytes(&CellFile {
            schema: artifact::ARTIFACT_SCHEMA.into(),
            config_hash: hash.clone(),
            record: rec.clone(),
        })?;
        write_atomic(&args.out.join(&name), &bytes)?;
        files.push(ManifestEntry {
            path: name,
            sha256: artifact::sha256_hex(&bytes),
        });
    }
    let csv = benchmarks::records_to_csv(&records);
    write_atomic(&args.out.join("results.csv"), csv.as_bytes())?;
    files.push(ManifestEntry {
        path: "results.csv".into(),
        sha256: artifact::sha256_hex(csv.as_bytes()),
    });
    let summary = benchmarks::format_summary(&benchmarks::summarize(&records));
    write_atomic(&args.out.join("summary.txt"), summary.as_bytes())?;
    files.push(ManifestEntry {
        path: "summary.txt".into(),
        sha256: artifact::sha256_hex(summary.as_bytes()),
    });
    let manifest = Manifest {
        provenance: Provenance::new(hash, cfg.seed),
        config: cfg,
        files,
    };
    write_atomic(&args.out.join("manifest.json"), &to_json_bytes(&manifest)?)?;
    print!("{summary}");
    Ok(EXIT_OK)
}

pub fn run(cli: &Cli) -> Result<u8> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(Error::Config("--jobs must be positive".into()));
        }
        // a second call in the same process (tests) keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match &cli.command {
        Command::Learn(a) => cmd_learn(a),
        Command::Synthesize(a) => cmd_synthesize(a),
        Command::Validate(a) => cmd_validate(a),
        Command::Experiment(a) => cmd_experiment(a),
    }
}

/// Entry point of the binary.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_ERROR } else { EXIT_OK });
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).try_init();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_ERROR)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_rejected() {
        let err = RunConfig::from_toml("seed = 1\nbogus = 2\n").unwrap_err();
        assert!(matches!(err, Error::Config(_)), "{err}");
        let err = RunConfig::from_toml("[profile]\nc = 0.9\neps = 0.02\nbeta = 0.2\neps_val = 0.01\nalpha = 0.001\nextra = 1\n")
            .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = RunConfig::from_toml("seed = 9\n[law]\npath = \"law.json\"\n").unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.profile, RiskProfile::default());
        assert_eq!(cfg.synthesis.max_restarts, 10);
    }

    #[test]
    fn invalid_profile_is_rejected_before_work() {
        let err = RunConfig::from_toml("[profile]\nc = 1.5\neps = 0.02\nbeta = 0.2\neps_val = 0.01\nalpha = 0.001\n");
        assert!(err.is_err());
    }

    #[test]
    fn config_hash_tracks_overrides() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.seed = 1;
        assert_ne!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap(), config_hash(&a.clone()).unwrap());
    }

    #[test]
    fn relative_paths_follow_the_config() {
        let p = resolve_path(Some(Path::new("/tmp/run/cfg.toml")), Path::new("law.json"));
        assert_eq!(p, PathBuf::from("/tmp/run/law.json"));
        let abs = resolve_path(Some(Path::new("/tmp/run/cfg.toml")), Path::new("/data/law.json"));
        assert_eq!(abs, PathBuf::from("/data/law.json"));
    }
}
