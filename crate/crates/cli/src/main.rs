use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fedsurf::experiment::{self, ExperimentSpec, ModelId, SavedModel};
use fedsurf::synthetic::generate_synthetic;

#[derive(Parser)]
#[command(name = "fedsurf", version, about = "Simulator for one-round federated random survival forests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full experiment over repeated seeds.
    Run(RunArgs),
    /// Write the train/test split and client shards of one seed to disk.
    Split(SplitArgs),
    /// Re-score a saved model on the test split of a seed.
    Eval(EvalArgs),
    /// Generate a synthetic dataset and its schema.
    Synth(SynthArgs),
}

#[derive(Args)]
struct Common {
    /// Experiment spec (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the spec's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Comma-separated model ids: fedsurf, fedsurf-ibs, cox-local, cox-fedavg.
    #[arg(long, value_delimiter = ',')]
    models: Option<Vec<String>>,
    /// Output directory; overrides the spec.
    #[arg(long, env = "FEDSURF_OUT")]
    out: Option<PathBuf>,
    /// Maximum number of worker threads.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct SplitArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, env = "FEDSURF_OUT")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// Serialized forest or Cox model.
    #[arg(long)]
    model: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 5)]
    d: usize,
    #[arg(long, default_value_t = 0.3)]
    censor_rate: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV; the schema is written next to it as `<stem>.schema.json`.
    #[arg(long)]
    out: PathBuf,
}

fn load_spec(common: &Common) -> fedsurf::Result<ExperimentSpec> {
    let mut spec = ExperimentSpec::from_json_file(&common.config)?;
    if let Some(seed) = common.seed {
        spec.base_seed = seed;
    }
    Ok(spec)
}

fn run(args: RunArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let mut spec = load_spec(&args.common)?;
    if let Some(models) = args.models {
        spec.models = models.iter().map(|m| m.parse::<ModelId>()).collect::<fedsurf::Result<_>>()?;
    }
    if let Some(out) = args.out {
        spec.output_dir = out;
    }
    if let Some(jobs) = args.jobs {
        rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global()?;
    }
    let summary = experiment::run_and_write(&spec)?;
    print!("{}", summary.table());
    eprintln!("results written to {}", spec.output_dir.display());
    Ok(summary.succeeded())
}

fn split(args: SplitArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let spec = load_spec(&args.common)?;
    let out = args.out.unwrap_or_else(|| spec.output_dir.join("split"));
    let sizes = experiment::materialize_split(&spec, spec.base_seed, &out)?;
    for (k, n) in sizes.iter().enumerate() {
        println!("client {k}: {n} records");
    }
    eprintln!("shards written to {}", out.display());
    Ok(true)
}

fn eval(args: EvalArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let spec = load_spec(&args.common)?;
    let text = std::fs::read_to_string(&args.model).map_err(|e| format!("{}: {e}", args.model.display()))?;
    let model = SavedModel::from_json(&text)?;
    let scores = experiment::evaluate_saved(&spec, &model, spec.base_seed)?;
    println!(
        "{}",
        serde_json::json!({"seed": spec.base_seed, "c_index": scores.c_index, "ibs": scores.ibs})
    );
    Ok(true)
}

fn synth(args: SynthArgs) -> Result<bool, Box<dyn std::error::Error>> {
    let (data, beta) = generate_synthetic(args.n, args.d, args.censor_rate, args.seed)?;
    data.save_csv(&args.out)?;
    let schema_path = schema_path_for(&args.out);
    std::fs::write(&schema_path, serde_json::to_string_pretty(data.schema())?)
        .map_err(|e| format!("{}: {e}", schema_path.display()))?;
    println!("{}", serde_json::json!({"n": data.len(), "censored_fraction": data.censored_fraction(), "beta": beta}));
    Ok(true)
}

fn schema_path_for(csv: &Path) -> PathBuf {
    let stem = csv.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    csv.with_file_name(format!("{stem}.schema.json"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(a) => run(a),
        Command::Split(a) => split(a),
        Command::Eval(a) => eval(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("some runs failed; see summary.json");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
