//! `synthseg` command-line interface.
//!
//! Results go to stdout as JSON, logs to stderr. Exit status is 0 on
//! success, 1 for usage errors and 2 for runtime failures.

mod metrics_cmd;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use synthseg::backends::{Capability, MockBackend, MockSettings, WireServer};
use synthseg::dataset::{assemble_dataset, read_manifest, Include};
use synthseg::fixture::{write_corpus, CorpusSpec};
use synthseg::pipeline::{
    run_until, sampling_inputs, sweep, BackendsSpec, PipelineConfig, Stage, SweepParam, MANIFEST_FILE,
};
use synthseg::sample::{plan_batches, split_folds};
use synthseg::taxonomy::ClassTaxonomy;

/// Failure carrying its exit status.
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }

    pub fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

type CliResult = Result<serde_json::Value, CliError>;

#[derive(Parser)]
#[command(name = "synthseg", version, about = "Synthetic segmentation dataset pipeline")]
struct Cli {
    /// Log more (repeat for debug output). RUST_LOG overrides.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct PipelineArgs {
    /// Pipeline config JSON.
    #[arg(long)]
    config: PathBuf,
    /// `mock` or a model-server base URL; overrides the config.
    #[arg(long)]
    backends: Option<String>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Variants per image.
    #[arg(long)]
    k: Option<u32>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    /// Base seed for generation and sampling.
    #[arg(long)]
    seed: Option<u64>,
}

impl PipelineArgs {
    fn load(&self) -> Result<PipelineConfig, CliError> {
        let mut c = PipelineConfig::load(&self.config).map_err(CliError::usage)?;
        if let Some(b) = &self.backends {
            c.backends = BackendsSpec::parse_flag(b).map_err(CliError::usage)?;
        }
        if let Some(j) = self.jobs {
            c.jobs = j;
        }
        if let Some(o) = &self.output_dir {
            c.output_dir = o.clone();
        }
        if let Some(k) = self.k {
            c.generation.k_per_image = k;
        }
        if let Some(e) = self.epsilon {
            c.selection.epsilon = e;
        }
        if let Some(t) = self.tau {
            c.selection.tau = t;
        }
        if let Some(a) = self.alpha {
            c.sampling.alpha = a;
        }
        if let Some(s) = self.seed {
            c.generation.base_seed = s;
            c.sampling.seed = s;
        }
        c.validate().map_err(CliError::usage)?;
        Ok(c)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum IncludeArg {
    KeptOnly,
    All,
}

impl From<IncludeArg> for Include {
    fn from(v: IncludeArg) -> Self {
        match v {
            IncludeArg::KeptOnly => Include::KeptOnly,
            IncludeArg::All => Include::All,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepArg {
    Epsilon,
    Tau,
    Alpha,
}

#[derive(Subcommand)]
enum Command {
    /// Read the corpus into the manifest.
    Ingest(PipelineArgs),
    /// Run through captioning and prompt composition.
    Caption(PipelineArgs),
    /// Run through pseudo-mask generation.
    Maskgen(PipelineArgs),
    /// Run through variant generation.
    Generate(PipelineArgs),
    /// Run through selection.
    Select(PipelineArgs),
    /// Build the output dataset from a manifest.
    Assemble {
        #[arg(long, conflicts_with = "manifest")]
        config: Option<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Output directory (default: `dataset/` next to the manifest).
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        include: Option<IncludeArg>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
    },
    /// Full pipeline: all stages, assembly and the batch plan.
    Run(PipelineArgs),
    /// FID, IS or mIoU.
    #[command(subcommand)]
    Metrics(metrics_cmd::MetricsCommand),
    /// Real/synthetic batch plan as JSONL.
    Plan {
        /// Manifest whose kept variants feed the plan.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 8)]
        batch_size: usize,
        #[arg(long, default_value_t = 100)]
        num_batches: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Write the plan here and print a summary instead.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Few-shot class folds.
    Folds {
        /// Number of classes, ids 1..=N.
        #[arg(long, conflicts_with = "taxonomy")]
        classes: Option<u8>,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        #[arg(long, default_value_t = 4)]
        num_folds: usize,
    },
    /// Compare settings of one parameter.
    Sweep {
        #[command(flatten)]
        pipeline: PipelineArgs,
        #[arg(long, value_enum)]
        param: SweepArg,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<f64>,
    },
    /// Serve the deterministic mocks over the wire protocol.
    ServeMock {
        #[arg(long, default_value = "127.0.0.1:8000")]
        addr: String,
        #[arg(long)]
        taxonomy: Option<PathBuf>,
        /// Mock settings JSON.
        #[arg(long)]
        settings: Option<PathBuf>,
        /// Capabilities to advertise (default: all).
        #[arg(long, value_delimiter = ',')]
        capabilities: Vec<String>,
    },
    /// Write a small synthetic VOC-layout corpus.
    FixtureCorpus {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        images: usize,
        #[arg(long, default_value_t = 96)]
        width: u32,
        #[arg(long, default_value_t = 72)]
        height: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "train")]
        split: String,
        /// Also write captions.jsonl.
        #[arg(long)]
        captions: bool,
    },
}

pub fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).expect("output serializes")
}

fn load_taxonomy(path: Option<&Path>) -> Result<ClassTaxonomy, CliError> {
    match path {
        Some(p) => ClassTaxonomy::load(p).map_err(CliError::usage),
        None => Ok(ClassTaxonomy::pascal_voc()),
    }
}

fn stage(args: &PipelineArgs, until: Stage) -> CliResult {
    let config = args.load()?;
    let taxonomy = config.load_taxonomy().map_err(CliError::usage)?;
    let backends = config.backends.build(&taxonomy).map_err(CliError::runtime)?;
    let report = run_until(&config, &backends, until).map_err(CliError::runtime)?;
    Ok(to_value(&report))
}

fn assemble(
    config: Option<&Path>,
    manifest: Option<&Path>,
    out: Option<&Path>,
    include: Option<IncludeArg>,
    taxonomy: Option<&Path>,
) -> CliResult {
    let (manifest, mut include_mode, tax) = match (config, manifest) {
        (Some(c), _) => {
            let cfg = PipelineConfig::load(c).map_err(CliError::usage)?;
            let tax = cfg.load_taxonomy().map_err(CliError::usage)?;
            (cfg.output_dir.join(MANIFEST_FILE), cfg.include, tax)
        }
        (None, Some(m)) => (m.to_path_buf(), Include::KeptOnly, load_taxonomy(taxonomy)?),
        (None, None) => return Err(CliError::usage("assemble needs --config or --manifest")),
    };
    if let Some(i) = include {
        include_mode = i.into();
    }
    let out = match out {
        Some(o) => o.to_path_buf(),
        None => manifest.parent().unwrap_or(Path::new(".")).join("dataset"),
    };
    let summary = assemble_dataset(&manifest, &out, include_mode, &tax).map_err(CliError::runtime)?;
    Ok(json!({ "out_dir": out, "summary": summary }))
}

fn plan(
    manifest: &Path,
    alpha: f64,
    batch_size: usize,
    num_batches: usize,
    seed: u64,
    out: Option<&Path>,
) -> Result<Option<serde_json::Value>, CliError> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(CliError::usage(format!("--alpha must lie in [0, 1], got {alpha}")));
    }
    if batch_size == 0 {
        return Err(CliError::usage("--batch-size must be positive"));
    }
    let records = read_manifest(manifest).map_err(CliError::runtime)?;
    let (ids, index) = sampling_inputs(&records);
    let plan = plan_batches(&ids, &index, alpha, batch_size, num_batches, seed).map_err(CliError::runtime)?;
    let text = plan.to_jsonl();
    match out {
        Some(path) => {
            std::fs::write(path, text).map_err(CliError::runtime)?;
            Ok(Some(json!({
                "plan": path,
                "slots": plan.slots().count(),
                "synthetic_fraction": plan.synthetic_fraction(),
                "alpha": alpha,
                "seed": seed,
            })))
        }
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).map_err(CliError::runtime)?;
            Ok(None)
        }
    }
}

fn folds(classes: Option<u8>, taxonomy: Option<&Path>, num_folds: usize) -> CliResult {
    let ids: Vec<u8> = match classes {
        Some(n) => (1..=n).collect(),
        None => load_taxonomy(taxonomy)?.ids().collect(),
    };
    let split = split_folds(&ids, num_folds).map_err(CliError::usage)?;
    Ok(to_value(&split))
}

fn serve_mock(addr: &str, taxonomy: Option<&Path>, settings: Option<&Path>, capabilities: &[String]) -> Result<(), CliError> {
    let tax = load_taxonomy(taxonomy)?;
    let settings: MockSettings = match settings {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(CliError::usage)?;
            serde_json::from_str(&text).map_err(CliError::usage)?
        }
        None => MockSettings::default(),
    };
    let caps = if capabilities.is_empty() {
        Capability::ALL.to_vec()
    } else {
        capabilities
            .iter()
            .map(|c| Capability::parse(c).ok_or_else(|| CliError::usage(format!("unknown capability `{c}`"))))
            .collect::<Result<_, _>>()?
    };
    let backends = synthseg::backends::Backends::uniform(std::sync::Arc::new(MockBackend::new(tax, settings)));
    let server = WireServer::start(addr, backends, caps).map_err(CliError::runtime)?;
    println!("{}", json!({ "listening": server.url() }));
    let _ = std::io::stdout().flush();
    server.join();
    Ok(())
}

fn execute(command: Command) -> Result<Option<serde_json::Value>, CliError> {
    let value = match command {
        Command::Ingest(a) => stage(&a, Stage::Ingest)?,
        Command::Caption(a) => stage(&a, Stage::Caption)?,
        Command::Maskgen(a) => stage(&a, Stage::Maskgen)?,
        Command::Generate(a) => stage(&a, Stage::Generate)?,
        Command::Select(a) => stage(&a, Stage::Select)?,
        Command::Run(a) => stage(&a, Stage::Assemble)?,
        Command::Assemble {
            config,
            manifest,
            out,
            include,
            taxonomy,
        } => assemble(config.as_deref(), manifest.as_deref(), out.as_deref(), include, taxonomy.as_deref())?,
        Command::Metrics(m) => metrics_cmd::execute(m)?,
        Command::Plan {
            manifest,
            alpha,
            batch_size,
            num_batches,
            seed,
            out,
        } => return plan(&manifest, alpha, batch_size, num_batches, seed, out.as_deref()),
        Command::Folds {
            classes,
            taxonomy,
            num_folds,
        } => folds(classes, taxonomy.as_deref(), num_folds)?,
        Command::Sweep { pipeline, param, values } => {
            let config = pipeline.load()?;
            let taxonomy = config.load_taxonomy().map_err(CliError::usage)?;
            let backends = config.backends.build(&taxonomy).map_err(CliError::runtime)?;
            let param = match param {
                SweepArg::Epsilon => SweepParam::Epsilon,
                SweepArg::Tau => SweepParam::Tau,
                SweepArg::Alpha => SweepParam::Alpha,
            };
            if param == SweepParam::Alpha && values.iter().any(|a| !(0.0..=1.0).contains(a)) {
                return Err(CliError::usage("alpha values must lie in [0, 1]"));
            }
            to_value(&sweep(&config, &backends, param, &values).map_err(CliError::runtime)?)
        }
        Command::ServeMock {
            addr,
            taxonomy,
            settings,
            capabilities,
        } => {
            serve_mock(&addr, taxonomy.as_deref(), settings.as_deref(), &capabilities)?;
            return Ok(None);
        }
        Command::FixtureCorpus {
            out,
            images,
            width,
            height,
            seed,
            split,
            captions,
        } => {
            if width < 8 || height < 8 {
                return Err(CliError::usage("fixture images must be at least 8x8"));
            }
            let spec = CorpusSpec {
                images,
                width,
                height,
                seed,
                split,
                captions,
                ..CorpusSpec::default()
            };
            let ids = write_corpus(&out, &spec, &ClassTaxonomy::pascal_voc()).map_err(CliError::runtime)?;
            json!({ "root": out, "images": ids.len(), "split": spec.split })
        }
    };
    Ok(Some(value))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    match execute(cli.command) {
        Ok(Some(value)) => {
            println!("{}", serde_json::to_string_pretty(&value).expect("json output"));
            ExitCode::SUCCESS
        }
        Ok(None) => ExitCode::SUCCESS,
        Err(CliError::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
