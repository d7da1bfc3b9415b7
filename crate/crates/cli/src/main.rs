use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use kbqg_core::corpus::{load_facts, load_kb, resolve_facts, synth_corpus, write_corpus, ContextOptions, Dataset, Split};
use kbqg_core::diagnostics::{check_model_gradients, GradCheckSetup};
use kbqg_core::evaluation::{annotation_rows, parse_generations, score_generations};
use kbqg_core::generate::{generate_all, DecodeOptions};
use kbqg_core::kbembed::{self, pretrain_transe};
use kbqg_core::metrics::export_annotation_sample;
use kbqg_core::trainer::{model_from_checkpoint, run_ablation, Checkpoint, Grid, TrainConfig, Trainer};

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser, Debug)]
#[command(name = "kbqg", version, about = "Question generation from knowledge-base facts")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SplitArg {
    Train,
    Valid,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Valid => Split::Valid,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a synthetic corpus
    Synth {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 300)]
        entities: usize,
        #[arg(long, default_value_t = 12)]
        predicates: usize,
        #[arg(long, default_value_t = 2000)]
        facts: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Pretrain TransE vectors for a corpus KB
    PretrainKb {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Triples file; entities.tsv and predicates.tsv are read from
        /// --data-dir, or from the file's directory
        #[arg(long)]
        facts: PathBuf,
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; writes model.ckpt and train.log under --out-dir
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long)]
        transe: Option<Switch>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Any config key, as key=value
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Initial KB vectors from pretrain-kb
        #[arg(long)]
        kb_init: Option<PathBuf>,
        /// Continue from --out-dir/model.ckpt
        #[arg(long)]
        resume: bool,
    },
    /// Decode questions for a split
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        beam: Option<usize>,
        #[arg(long)]
        max_len: Option<usize>,
    },
    /// Score a generation file against a split
    Eval {
        #[arg(long)]
        generations: PathBuf,
        #[arg(long)]
        data_dir: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
        /// Rows in the annotation sample
        #[arg(long, default_value_t = 100)]
        annotate: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Finite-difference check of the full model's gradients
    Gradcheck {
        /// Reads d, heads, layers, lambda, seed and the component switches
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train a grid of variants and tabulate their scores
    Ablate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "components")]
        grid: String,
        /// Corpus directory; a synthetic corpus is written to
        /// --out-dir/corpus when omitted
        #[arg(long)]
        data_dir: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn read_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Ok(TrainConfig::parse(&text)?)
        }
        None => Ok(TrainConfig::default()),
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn synth(seed: u64, entities: usize, predicates: usize, facts: usize, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let corpus = synth_corpus(seed, entities, predicates, facts);
    write_corpus(out_dir, &corpus)?;
    println!(
        "wrote {} entities, {} predicates, {}/{}/{} examples to {}",
        corpus.entities.len(),
        corpus.predicates.len(),
        corpus.train.len(),
        corpus.valid.len(),
        corpus.test.len(),
        out_dir.display()
    );
    Ok(())
}

fn pretrain_kb(config: Option<&Path>, facts: &Path, data_dir: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut cfg = read_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = data_dir.or_else(|| facts.parent()).unwrap_or(Path::new("."));
    let kb = load_kb(&dir.join("entities.tsv"), &dir.join("predicates.tsv"))?;
    let raw = load_facts(facts)?;
    let triples = resolve_facts(&kb, facts, &raw)?;
    let run = pretrain_transe(&triples, kb.vocab.len(), cfg.d, &cfg.transe_config())?;
    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    kbembed::save(&run.embedding, out)?;
    for (i, l) in run.epoch_losses.iter().enumerate() {
        println!("{}\t{l:.6}", i + 1);
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train(
    config: Option<&Path>,
    data_dir: &Path,
    out_dir: &Path,
    lambda: Option<f64>,
    transe: Option<Switch>,
    seed: Option<u64>,
    epochs: Option<usize>,
    overrides: &[String],
    kb_init: Option<&Path>,
    resume: bool,
) -> Result<()> {
    fs::create_dir_all(out_dir)?;
    let ckpt_path = out_dir.join("model.ckpt");
    let log_path = out_dir.join("train.log");
    let (mut trainer, data) = if resume {
        let ckpt = Checkpoint::load(&ckpt_path)?;
        let data = Dataset::load_with_vocab(data_dir, ckpt.config.context_options(), ckpt.vocab.clone())?;
        let mut t = Trainer::from_checkpoint(ckpt)?;
        if let Some(e) = epochs {
            t.config.epochs = e;
        }
        (t, data)
    } else {
        let mut cfg = read_config(config)?;
        for kv in overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| kbqg_core::Error::config(format!("--set expects key=value, got {kv:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(l) = lambda {
            cfg.lambda = l;
        }
        if let Some(t) = transe {
            cfg.transe = matches!(t, Switch::On);
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        if let Some(e) = epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        let data = Dataset::load(data_dir, cfg.context_options())?;
        let mut t = Trainer::new(cfg, &data)?;
        if let Some(p) = kb_init {
            let emb = kbembed::load(p)?;
            t.model.set_kb_embedding(&emb)?;
        }
        (t, data)
    };
    for e in &trainer.log {
        println!("{}", e.line());
    }
    let result = trainer.run(&data, |t, e| {
        println!("{}", e.line());
        t.checkpoint().save(&ckpt_path)?;
        Ok(())
    });
    let log: String = trainer.log.iter().map(|e| e.line() + "\n").collect();
    write(&log_path, &log)?;
    trainer.checkpoint().save(&ckpt_path)?;
    result?;
    Ok(())
}

fn generate(
    checkpoint: &Path,
    data_dir: &Path,
    split: Split,
    out: &Path,
    beam: Option<usize>,
    max_len: Option<usize>,
) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = Dataset::load_with_vocab(data_dir, ckpt.config.context_options(), ckpt.vocab.clone())?;
    let model = model_from_checkpoint(&ckpt, true)?;
    let opts = DecodeOptions {
        max_len: max_len.unwrap_or(ckpt.config.max_len),
        beam_width: beam.unwrap_or(ckpt.config.beam),
    };
    let gens = generate_all(&model, &data.kb, &data.vocab, data.split(split), &opts)?;
    let text: String = gens.iter().map(|g| g.to_line() + "\n").collect();
    write(out, &text)?;
    println!("wrote {} questions to {}", gens.len(), out.display());
    Ok(())
}

fn eval(generations: &Path, data_dir: &Path, split: Split, out: &Path, annotate: usize, seed: u64) -> Result<()> {
    let text = fs::read_to_string(generations).with_context(|| format!("reading {}", generations.display()))?;
    let gens = parse_generations(&text)?;
    let data = Dataset::load(data_dir, ContextOptions::default())?;
    let gold = data.split(split);
    let report = score_generations(&gens, &data, gold)?;
    fs::create_dir_all(out)?;
    write(&out.join("report.txt"), &report.table())?;
    write(&out.join("metrics.tsv"), &report.tsv())?;
    write(&out.join("records.tsv"), &report.records_tsv())?;
    let rows = annotation_rows(&gens, &data, gold)?;
    write(&out.join("annotation.tsv"), &export_annotation_sample(&rows, annotate, seed))?;
    print!("{}", report.table());
    Ok(())
}

/// Returns whether the check passed.
fn gradcheck(config: Option<&Path>, seed: Option<u64>) -> Result<bool> {
    let mut setup = GradCheckSetup::default();
    if config.is_some() {
        let cfg = read_config(config)?;
        setup.model = cfg.model_config();
        setup.model.dropout = 0.0;
        setup.lambda = cfg.lambda;
        setup.seed = cfg.seed;
    }
    if let Some(s) = seed {
        setup.seed = s;
    }
    let r = check_model_gradients(&setup)?;
    println!("max_rel_error\t{:.3e}", r.max_rel_error);
    println!("coordinates\t{}", r.coordinates);
    if let Some((name, i)) = &r.worst {
        println!("worst\t{name}[{i}]\t{:.6e}\t{:.6e}", r.worst_pair.0, r.worst_pair.1);
    }
    Ok(r.max_rel_error < GRADCHECK_TOLERANCE)
}

fn ablate(config: Option<&Path>, grid: &str, data_dir: Option<&Path>, seeds: &[u64], seed: u64, out_dir: &Path) -> Result<()> {
    let cfg = read_config(config)?;
    let grid: Grid = grid.parse()?;
    if seeds.is_empty() {
        bail!(kbqg_core::Error::config("--seeds must name at least one seed"));
    }
    fs::create_dir_all(out_dir)?;
    let dir = match data_dir {
        Some(d) => d.to_path_buf(),
        None => {
            let d = out_dir.join("corpus");
            fs::create_dir_all(&d)?;
            write_corpus(&d, &synth_corpus(seed, 300, 12, 2000))?;
            d
        }
    };
    let report = run_ablation(&cfg, &dir, grid, seeds, |label, s| eprintln!("done {label} seed {s}"))?;
    write(&out_dir.join("ablation.txt"), &report.table())?;
    write(&out_dir.join("ablation.tsv"), &report.tsv())?;
    print!("{}", report.table());
    Ok(())
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Synth {
            seed,
            entities,
            predicates,
            facts,
            out_dir,
        } => synth(seed, entities, predicates, facts, &out_dir)?,
        Command::PretrainKb {
            config,
            facts,
            data_dir,
            seed,
            out,
        } => pretrain_kb(config.as_deref(), &facts, data_dir.as_deref(), seed, &out)?,
        Command::Train {
            config,
            data_dir,
            out_dir,
            lambda,
            transe,
            seed,
            epochs,
            overrides,
            kb_init,
            resume,
        } => train(
            config.as_deref(),
            &data_dir,
            &out_dir,
            lambda,
            transe,
            seed,
            epochs,
            &overrides,
            kb_init.as_deref(),
            resume,
        )?,
        Command::Generate {
            checkpoint,
            data_dir,
            split,
            out,
            beam,
            max_len,
        } => generate(&checkpoint, &data_dir, split.into(), &out, beam, max_len)?,
        Command::Eval {
            generations,
            data_dir,
            split,
            out,
            annotate,
            seed,
        } => eval(&generations, &data_dir, split.into(), &out, annotate, seed)?,
        Command::Gradcheck { config, seed } => {
            if !gradcheck(config.as_deref(), seed)? {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Ablate {
            config,
            grid,
            data_dir,
            seeds,
            seed,
            out_dir,
        } => ablate(config.as_deref(), &grid, data_dir.as_deref(), &seeds, seed, &out_dir)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            match e.downcast_ref::<kbqg_core::Error>() {
                Some(kbqg_core::Error::Config(_)) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
