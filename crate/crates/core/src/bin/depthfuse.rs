use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::error;

use depthfuse::colmap::ModelFormat;
use depthfuse::pipeline::{self, Evaluated, PipelineConfig};
use depthfuse::synthscene::SceneSpec;
use depthfuse::Result;

/// Exit code used when metrics violate the configured gates.
const GATE_FAILED: u8 = 2;

#[derive(Parser)]
#[command(name = "depthfuse", version, about = "Depth densification, alignment and fusion from an SfM prior")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Pipeline configuration (TOML).
    #[arg(long, short, global = true, env = "DEPTHFUSE_CONFIG")]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set alignment.method=least_square`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true, value_parser = parse_override)]
    overrides: Vec<(String, String)>,
    #[arg(long, global = true, env = "DEPTHFUSE_SFM")]
    sfm: Option<PathBuf>,
    #[arg(long, global = true, env = "DEPTHFUSE_IMAGES")]
    images: Option<PathBuf>,
    #[arg(long, global = true, env = "DEPTHFUSE_PREDICTIONS")]
    predictions: Option<PathBuf>,
    #[arg(long, short, global = true, env = "DEPTHFUSE_OUTPUT")]
    output: Option<PathBuf>,
    #[arg(long, global = true, env = "DEPTHFUSE_GT_MESH")]
    gt_mesh: Option<PathBuf>,
    #[arg(long, global = true, env = "DEPTHFUSE_GT_DEPTH")]
    gt_depth: Option<PathBuf>,
    /// Restrict processing to these image names or ids (comma separated).
    #[arg(long, global = true, value_delimiter = ',')]
    views: Vec<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Project the sparse model into every view.
    Project,
    /// Build densified depth, distance maps and normalization ranges.
    Condition,
    /// Run the depth provider and combine ensemble members.
    Predict,
    /// Fit scale and shift against the sparse depth.
    Align,
    /// Fuse aligned depth into a mesh or point cloud.
    Fuse,
    /// Score the fused geometry against ground truth.
    Evaluate,
    /// Run every stage in one go.
    Reconstruct,
    /// Generate a synthetic scene with exact ground truth.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SynthArgs {
    /// Scene specification (TOML); overrides --preset.
    #[arg(long)]
    spec: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Preset::Sphere)]
    preset: Preset,
    /// Number of views for the preset.
    #[arg(long = "num-views")]
    num_views: Option<usize>,
    #[arg(long, value_enum, default_value_t = Format::Binary)]
    format: Format,
    /// Destination directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Plane,
    Sphere,
    Room,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Binary,
}

fn parse_override(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_owned(), v.trim().to_owned()))
        .ok_or_else(|| format!("expected KEY=VALUE, got {s:?}"))
}

fn load_config(g: &Global) -> Result<PipelineConfig> {
    let mut overrides = g.overrides.clone();
    if let Some(seed) = g.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    if let Some(t) = g.threads {
        overrides.push(("threads".into(), t.to_string()));
    }
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path, &overrides)?,
        None => PipelineConfig::from_toml("", &overrides)?,
    };
    let paths = &mut cfg.paths;
    for (slot, flag) in [
        (&mut paths.sfm, &g.sfm),
        (&mut paths.images, &g.images),
        (&mut paths.predictions, &g.predictions),
        (&mut paths.output, &g.output),
        (&mut paths.gt_mesh, &g.gt_mesh),
        (&mut paths.gt_depth, &g.gt_depth),
    ] {
        if flag.is_some() {
            slot.clone_from(flag);
        }
    }
    if !g.views.is_empty() {
        cfg.views = g.views.clone();
    }
    Ok(cfg)
}

fn synth(args: &SynthArgs, g: &Global) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| depthfuse::Error::io(path, e))?;
            toml::from_str(&text).map_err(|e| depthfuse::Error::InvalidConfig(e.to_string()))?
        }
        None => match args.preset {
            Preset::Plane => SceneSpec::plane(2.0, 8),
            Preset::Sphere => SceneSpec::sphere(1.0, 8),
            Preset::Room => SceneSpec::room([4.0, 3.0, 2.5], 12),
        },
    };
    if let Some(n) = args.num_views {
        spec.n_views = n;
    }
    if let Some(seed) = g.seed {
        spec.seed = seed;
    }
    let format = match args.format {
        Format::Text => ModelFormat::Text,
        Format::Binary => ModelFormat::Binary,
    };
    pipeline::cmd_synth(&spec, &args.out, format)
}

fn report(evaluated: &Evaluated) -> ExitCode {
    if let Some(r) = &evaluated.report {
        print!("{}", r.to_table());
    }
    if evaluated.violations.is_empty() {
        return ExitCode::SUCCESS;
    }
    for v in &evaluated.violations {
        error!("metric gate failed: {v}");
    }
    ExitCode::from(GATE_FAILED)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Command::Synth(args) = &cli.command {
        synth(args, &cli.global)?;
        return Ok(ExitCode::SUCCESS);
    }
    let cfg = load_config(&cli.global)?;
    match cli.command {
        Command::Project => {
            let n = pipeline::cmd_project(&cfg)?;
            println!("projected {n} views");
        }
        Command::Condition => {
            let n = pipeline::cmd_condition(&cfg)?;
            println!("conditioned {n} views");
        }
        Command::Predict => {
            let n = pipeline::cmd_predict(&cfg)?;
            println!("predicted {n} views");
        }
        Command::Align => {
            for r in pipeline::cmd_align(&cfg)? {
                println!(
                    "{} scale {:.6} shift {:.6} inliers {}/{}",
                    r.image, r.scale, r.shift, r.inliers, r.pairs
                );
            }
        }
        Command::Fuse => {
            let path = pipeline::cmd_fuse(&cfg)?;
            println!("wrote {}", path.display());
        }
        Command::Evaluate => return Ok(report(&pipeline::cmd_evaluate(&cfg)?)),
        Command::Reconstruct => {
            let rec = pipeline::cmd_reconstruct(&cfg)?;
            println!("wrote {}", pipeline::fused_path(&cfg).display());
            return Ok(report(&rec.evaluated));
        }
        Command::Synth(_) => unreachable!("handled above"),
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            ExitCode::FAILURE
        }
    }
}
