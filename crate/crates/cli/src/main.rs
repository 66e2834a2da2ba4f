use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand};
use hce_core::data::{load_dataset, write_dataset, Dataset};
use hce_core::dump::dump_congruity;
use hce_core::gradcheck::{gradcheck, GradcheckSpec};
use hce_core::train::split_dev;
use hce_core::{evaluate, gen_synthetic, train, Checkpoint, Config, Model, SynthSpec};

#[derive(Parser, Debug)]
#[command(
    name = "hce",
    version,
    about = "Train, evaluate and inspect cross-modal congruity models"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a model; writes one JSON object per epoch to stdout.
    Train(TrainArgs),
    /// Report accuracy, precision, recall and F1 of a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Write a synthetic dataset as <out>.jsonl + <out>.bin.
    GenSynth(SynthArgs),
    /// Compare analytic and finite-difference gradients on a random instance.
    Gradcheck(GradcheckArgs),
    /// Write the congruity maps of one sample as CSV.
    DumpCongruity(DumpArgs),
}

/// Model and training settings; each flag may also appear as `key=value` in `--config`.
#[derive(Args, Debug, Default)]
struct ConfigArgs {
    /// key=value file applied before the individual flags
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d: Option<String>,
    /// attention heads; must divide d
    #[arg(long = "h")]
    heads: Option<String>,
    #[arg(long)]
    mca_layers_text_image: Option<String>,
    #[arg(long)]
    mca_layers_text_knowledge: Option<String>,
    #[arg(long)]
    gat_layers: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    weight_decay: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    /// comma-separated subset of projection,classifier, or none
    #[arg(long)]
    dropout_sites: Option<String>,
    #[arg(long)]
    max_text_len: Option<String>,
    #[arg(long)]
    max_knowledge_len: Option<String>,
    /// 4 or 8
    #[arg(long)]
    grid_connectivity: Option<String>,
    /// weighted or uniform
    #[arg(long)]
    sentence_mode: Option<String>,
    /// input or updated
    #[arg(long)]
    sentence_weights: Option<String>,
    /// full, no_atomic, no_mca_no_atomic or no_composition
    #[arg(long)]
    ablation: Option<String>,
    #[arg(long)]
    knowledge_enabled: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    early_stop_patience: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    leaky_relu_slope: Option<String>,
    #[arg(long)]
    layer_norm_eps: Option<String>,
    #[arg(long)]
    gat_activation: Option<String>,
    #[arg(long)]
    adam_beta1: Option<String>,
    #[arg(long)]
    adam_beta2: Option<String>,
    #[arg(long)]
    adam_eps: Option<String>,
}

impl ConfigArgs {
    fn pairs(&self) -> [(&'static str, &Option<String>); 26] {
        [
            ("d", &self.d),
            ("h", &self.heads),
            ("mca-layers-text-image", &self.mca_layers_text_image),
            ("mca-layers-text-knowledge", &self.mca_layers_text_knowledge),
            ("gat-layers", &self.gat_layers),
            ("batch-size", &self.batch_size),
            ("lr", &self.lr),
            ("weight-decay", &self.weight_decay),
            ("dropout", &self.dropout),
            ("dropout-sites", &self.dropout_sites),
            ("max-text-len", &self.max_text_len),
            ("max-knowledge-len", &self.max_knowledge_len),
            ("grid-connectivity", &self.grid_connectivity),
            ("sentence-mode", &self.sentence_mode),
            ("sentence-weights", &self.sentence_weights),
            ("ablation", &self.ablation),
            ("knowledge-enabled", &self.knowledge_enabled),
            ("seed", &self.seed),
            ("early-stop-patience", &self.early_stop_patience),
            ("max-epochs", &self.max_epochs),
            ("leaky-relu-slope", &self.leaky_relu_slope),
            ("layer-norm-eps", &self.layer_norm_eps),
            ("gat-activation", &self.gat_activation),
            ("adam-beta1", &self.adam_beta1),
            ("adam-beta2", &self.adam_beta2),
            ("adam-eps", &self.adam_eps),
        ]
    }

    fn build(&self, base: Config) -> anyhow::Result<Config> {
        let mut config = base;
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).map_err(|e| hce_core::Error::Io {
                path: path.clone(),
                source: e,
            })?;
            config.apply_kv(&text)?;
        }
        for (key, value) in self.pairs() {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// dataset prefix (reads <data>.jsonl and <data>.bin)
    #[arg(long)]
    data: PathBuf,
    /// separate dev dataset prefix; otherwise a fraction of --data is held out
    #[arg(long)]
    dev: Option<PathBuf>,
    #[arg(long, default_value_t = 0.2)]
    dev_fraction: f64,
    /// output path, default <data>.hcec
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
}

#[derive(Args, Debug)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    count: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, default_value_t = 4)]
    n_min: usize,
    #[arg(long, default_value_t = 10)]
    n_max: usize,
    #[arg(long, default_value_t = 4)]
    p: usize,
    #[arg(long, default_value_t = 2)]
    m_min: usize,
    #[arg(long, default_value_t = 6)]
    m_max: usize,
    /// generate no knowledge tokens
    #[arg(long)]
    no_knowledge: bool,
    #[arg(long, default_value_t = 16)]
    d_raw: usize,
    #[arg(long, default_value_t = 0.5)]
    text_noise: f64,
    #[arg(long, default_value_t = 0.5)]
    image_noise: f64,
    #[arg(long, default_value_t = 0.1)]
    knowledge_noise: f64,
}

#[derive(Args, Debug)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 4)]
    n: usize,
    /// grid side
    #[arg(long, default_value_t = 2)]
    p: usize,
    #[arg(long, default_value_t = 3)]
    m: usize,
    #[arg(long, default_value_t = 6)]
    d_raw: usize,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 1e-6)]
    tolerance: f64,
    /// `--knowledge-enabled` defaults to true here
    #[command(flatten)]
    config: ConfigArgs,
}

#[derive(Args, Debug)]
struct DumpArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// sample id; defaults to the first sample
    #[arg(long)]
    id: Option<String>,
    /// output file; stdout when absent
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load(prefix: &Path, config: &Config) -> anyhow::Result<Dataset> {
    Ok(load_dataset(prefix, &config.limits())?)
}

fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let config = args.config.build(Config::default())?;
    let data = load(&args.data, &config)?;
    let (train_set, dev_set) = match &args.dev {
        Some(dev) => (data, load(dev, &config)?),
        None => split_dev(&data, args.dev_fraction, config.seed)?,
    };
    let mut stdout = std::io::stdout().lock();
    let mut write_err = None;
    let outcome = train::<f64>(&config, &train_set, &dev_set, |log| {
        let line = serde_json::to_string(log).expect("plain data");
        if let Err(e) = writeln!(stdout, "{line}") {
            write_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = write_err {
        return Err(e).context("writing the epoch log");
    }
    let path = args.checkpoint.clone().unwrap_or_else(|| {
        let mut p = args.data.clone().into_os_string();
        p.push(".hcec");
        PathBuf::from(p)
    });
    outcome.checkpoint.save(&path)?;
    eprintln!(
        "best dev accuracy {} at epoch {}; checkpoint written to {}",
        outcome.checkpoint.best_dev_accuracy,
        outcome.checkpoint.epoch,
        path.display()
    );
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    let Some(path) = &args.checkpoint else {
        bail!(Usage("eval requires --checkpoint <path>".into()));
    };
    let checkpoint = Checkpoint::load(path)?;
    let data = load(&args.data, &checkpoint.config)?;
    let metrics = evaluate(&checkpoint, &data)?;
    println!("{}", serde_json::to_string(&metrics)?);
    Ok(())
}

fn cmd_gen_synth(args: &SynthArgs) -> anyhow::Result<()> {
    let spec = SynthSpec {
        count: args.count,
        n_range: (args.n_min, args.n_max),
        p: args.p,
        m_range: (!args.no_knowledge).then_some((args.m_min, args.m_max)),
        d_raw: args.d_raw,
        seed: args.seed,
        text_noise: args.text_noise,
        image_noise: args.image_noise,
        knowledge_noise: args.knowledge_noise,
    };
    let data = gen_synthetic(&spec)?;
    write_dataset(&data, &args.out)?;
    eprintln!("wrote {} samples to {}.{{jsonl,bin}}", data.len(), args.out.display());
    Ok(())
}

fn cmd_gradcheck(args: &GradcheckArgs) -> anyhow::Result<bool> {
    let base = Config {
        knowledge_enabled: true,
        ..Config::default()
    };
    let config = args.config.build(base)?;
    let spec = GradcheckSpec {
        n: args.n,
        p: args.p,
        m: args.m,
        d_raw: args.d_raw,
        seed: config.seed,
        eps: args.eps,
        ..GradcheckSpec::default()
    };
    let start = Instant::now();
    let report = gradcheck(&config, &spec)?;
    println!("max relative error: {:e}", report.max_rel_error);
    println!("max absolute error: {:e}", report.max_abs_error);
    if let Some((name, index)) = &report.worst {
        println!("worst entry: {name}[{index}]");
    }
    println!(
        "checked {} parameters in {:.2}s",
        report.checked,
        start.elapsed().as_secs_f64()
    );
    Ok(report.max_rel_error < args.tolerance)
}

fn cmd_dump(args: &DumpArgs) -> anyhow::Result<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let model: Model = checkpoint.to_model()?;
    let data = load(&args.data, &checkpoint.config)?;
    let sample = match &args.id {
        Some(id) => data
            .samples
            .iter()
            .find(|s| &s.id == id)
            .ok_or_else(|| anyhow!(Usage(format!("no sample with id `{id}`"))))?,
        None => data
            .samples
            .first()
            .ok_or_else(|| anyhow!(Usage("dataset is empty".into())))?,
    };
    let csv = dump_congruity(&model, sample)?.to_csv();
    match &args.out {
        Some(path) => fs::write(path, csv).map_err(|e| hce_core::Error::Io {
            path: path.clone(),
            source: e,
        })?,
        None => print!("{csv}"),
    }
    Ok(())
}

/// A validation failure raised by the CLI itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn exit_code(err: &anyhow::Error) -> u8 {
    let io = err.chain().any(|cause| {
        cause.downcast_ref::<std::io::Error>().is_some()
            || cause
                .downcast_ref::<hce_core::Error>()
                .is_some_and(hce_core::Error::is_io)
    });
    if io {
        2
    } else {
        1
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::GenSynth(a) => cmd_gen_synth(a),
        Command::DumpCongruity(a) => cmd_dump(a),
        Command::Gradcheck(a) => match cmd_gradcheck(a) {
            Ok(true) => Ok(()),
            Ok(false) => return ExitCode::from(1),
            Err(e) => Err(e),
        },
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
