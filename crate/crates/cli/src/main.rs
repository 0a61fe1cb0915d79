use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;

use sspsr::data::{load_cube, save_composite, save_cube, synth_cube, SynthConfig};
use sspsr::network::{load_checkpoint, save_checkpoint};
use sspsr::train::{evaluate, log_csv, super_resolve, train_from, RunConfig, LOG_HEADER};
use sspsr::{Error, HsiCube, Result};

/// Hyperspectral super-resolution with grouped spatial-spectral prior networks.
#[derive(Parser)]
#[command(name = "sspsr", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write synthetic HSIC cubes into a directory.
    Synth(SynthArgs),
    /// Train a network and save the best checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint and the bicubic baseline as CSV.
    Eval(EvalArgs),
    /// Super-resolve one HSIC cube.
    Sr(SrArgs),
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 16)]
    bands: usize,
    #[arg(long, default_value_t = 48)]
    height: usize,
    #[arg(long, default_value_t = 48)]
    width: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    smoothness: Option<f64>,
    #[arg(long)]
    n_endmembers: Option<usize>,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct TrainArgs {
    /// HSIC files or directories of them.
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// Checkpoint written for the best validation epoch.
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// `key = value` settings file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Extra `key=value` settings, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[command(flatten)]
    flags: ConfigFlags,
}

/// Flags named after configuration fields; they override the config file.
#[derive(Args, Default)]
#[command(rename_all = "snake_case")]
struct ConfigFlags {
    #[arg(long)]
    lr0: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    steps_per_epoch: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    init: Option<String>,
    #[arg(long)]
    group_size: Option<usize>,
    #[arg(long)]
    overlap: Option<usize>,
    #[arg(long)]
    n_feats: Option<usize>,
    #[arg(long)]
    n_blocks: Option<usize>,
    #[arg(long)]
    scale: Option<usize>,
    #[arg(long)]
    branch_scale: Option<usize>,
    #[arg(long)]
    use_grouping: Option<bool>,
    #[arg(long)]
    use_progressive: Option<bool>,
    #[arg(long)]
    share_params: Option<bool>,
    #[arg(long)]
    use_attention: Option<bool>,
}

impl ConfigFlags {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        fn s<T: ToString>(v: &Option<T>) -> Option<String> {
            v.as_ref().map(T::to_string)
        }
        [
            ("lr0", s(&self.lr0)),
            ("epochs", s(&self.epochs)),
            ("batch_size", s(&self.batch_size)),
            ("steps_per_epoch", s(&self.steps_per_epoch)),
            ("alpha", s(&self.alpha)),
            ("seed", s(&self.seed)),
            ("val_fraction", s(&self.val_fraction)),
            ("init", s(&self.init)),
            ("group_size", s(&self.group_size)),
            ("overlap", s(&self.overlap)),
            ("n_feats", s(&self.n_feats)),
            ("n_blocks", s(&self.n_blocks)),
            // Scale first: it also resets the branch factor to its default.
            ("scale", s(&self.scale)),
            ("branch_scale", s(&self.branch_scale)),
            ("use_grouping", s(&self.use_grouping)),
            ("use_progressive", s(&self.use_progressive)),
            ("share_params", s(&self.share_params)),
            ("use_attention", s(&self.use_attention)),
        ]
        .into_iter()
        .filter_map(|(k, v)| v.map(|v| (k, v)))
        .collect()
    }
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    data: Vec<PathBuf>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Score each reference against itself instead of the network output.
    #[arg(long)]
    self_check: bool,
}

#[derive(Args)]
#[command(rename_all = "snake_case")]
struct SrArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Optional PNG composite of the result.
    #[arg(long)]
    png: Option<PathBuf>,
    /// Bands shown as red, green and blue.
    #[arg(long, value_delimiter = ',', default_values_t = [0, 1, 2])]
    rgb: Vec<usize>,
}

/// HSIC files named on the command line, directories expanded in name order.
fn collect_cube_paths(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::Invalid(format!("{}: {e}", p.display())))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "hsic"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        return Err(Error::Config("no .hsic cubes found".into()));
    }
    Ok(out)
}

fn cube_id(path: &Path) -> String {
    path.file_stem()
        .map_or_else(|| path.display().to_string(), |s| s.to_string_lossy().into_owned())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))
}

fn run_synth(a: SynthArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::Invalid(format!("{}: {e}", a.out.display())))?;
    for i in 0..a.count {
        let mut cfg = SynthConfig::new(a.bands, a.height, a.width, a.seed + i as u64);
        if let Some(s) = a.smoothness {
            cfg.smoothness = s;
        }
        if let Some(k) = a.n_endmembers {
            cfg.n_endmembers = k;
        }
        let path = a.out.join(format!("cube_{i:04}.hsic"));
        save_cube(&synth_cube(&cfg)?, &path)?;
    }
    println!("wrote {} cubes to {}", a.count, a.out.display());
    Ok(())
}

fn run_train(a: TrainArgs) -> Result<()> {
    let paths = collect_cube_paths(&a.data)?;
    let cubes = paths.iter().map(load_cube).collect::<Result<Vec<HsiCube>>>()?;
    let mut cfg = RunConfig::desk(cubes[0].bands());
    if let Some(path) = &a.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Invalid(format!("{}: {e}", path.display())))?;
        cfg.apply_text(&text)?;
    }
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{kv}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    for (k, v) in a.flags.pairs() {
        cfg.set(k, &v)?;
    }
    cfg.network.validate()?;
    cfg.train.validate()?;

    let mut order: Vec<usize> = (0..cubes.len()).collect();
    order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(cfg.train.seed));
    let n_val = (cfg.train.val_fraction * cubes.len() as f64).round() as usize;
    let n_val = n_val.min(cubes.len() - 1);
    let val: Vec<HsiCube> = order[..n_val].iter().map(|&i| cubes[i].clone()).collect();
    let train_set: Vec<HsiCube> = order[n_val..].iter().map(|&i| cubes[i].clone()).collect();
    eprintln!(
        "training on {} cubes, validating on {}",
        train_set.len(),
        val.len()
    );

    let params = sspsr::network::init_params_with(&cfg.network, cfg.train.seed, cfg.train.init)?;
    println!("{LOG_HEADER}");
    let outcome = train_from(params, &train_set, &val, &cfg.train, |row| {
        println!("{}", row.csv_row());
    })?;
    save_checkpoint(&outcome.best, &a.out)?;
    if let Some(log) = &a.log {
        write_text(log, &log_csv(&outcome.log))?;
    }
    eprintln!(
        "saved epoch {} checkpoint to {}",
        outcome.best_epoch,
        a.out.display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    let params = load_checkpoint(&a.checkpoint)?;
    let paths = collect_cube_paths(&a.data)?;
    let cubes = paths
        .iter()
        .map(|p| Ok((cube_id(p), load_cube(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let csv = evaluate(&params, &cubes, a.self_check)?.to_csv();
    match &a.out {
        Some(path) => write_text(path, &csv),
        None => {
            print!("{csv}");
            Ok(())
        }
    }
}

fn run_sr(a: SrArgs) -> Result<()> {
    let rgb: [usize; 3] = a.rgb.as_slice().try_into().map_err(|_| {
        Error::Config(format!("--rgb expects three band indices, got {}", a.rgb.len()))
    })?;
    let params = load_checkpoint(&a.checkpoint)?;
    let input = load_cube(&a.input)?;
    let out = super_resolve(&params, &input)?;
    save_cube(&out, &a.output)?;
    if let Some(png) = &a.png {
        save_composite(&out, rgb, png)?;
    }
    let (c, h, w) = out.dims();
    println!("wrote {c}x{h}x{w} cube to {}", a.output.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Eval(a) => run_eval(a),
        Command::Sr(a) => run_sr(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
