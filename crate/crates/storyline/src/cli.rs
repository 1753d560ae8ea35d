//! The `storyline` command line.
//!
//! Exit status is 0 on success, 2 on a usage error and 1 on a runtime error.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng as _;
use storyline_core::gan::{
    apply_policy, pretrain_discriminator, pretrain_generator, pretrain_generator_scheduled,
    resolve_starts, train, train_from, TrainConfig,
};
use storyline_core::harness::{baseline_pg_similarity, baseline_random, EvalReport};
use storyline_core::policy::{CandidateSet, Schedule, TrainingSet};
use storyline_core::seqdata::{
    slice_windows, synth_corpus, to_modal_sequence, EventCorpus, Role, Storyline, SynthSpec,
};
use storyline_core::{rng, Modality};

use crate::checkpoint::{save_mm, Model};
use crate::config::load_config;
use crate::dataset::{load_dataset, save_dataset, select_event, train_corpora};
use crate::pipeline::{embed_corpora, EmbedConfig};
use crate::storylines::{load_named, resolve, save_generated, write_generated, GeneratedRecord};

#[derive(Debug, Parser)]
#[command(
    name = "storyline",
    version,
    about = "Learn and apply storyline generation policies"
)]
pub struct Cli {
    /// Flat `key = value` training configuration.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the planted-successor synthetic dataset (a train and a test event).
    Synth(SynthArgs),
    /// Train the image-conditioned word model and add projected image vectors.
    EmbedMm(EmbedArgs),
    /// Pretrain the generator and discriminator.
    Pretrain(PretrainArgs),
    /// Run pretraining followed by adversarial rounds.
    Train(TrainArgs),
    /// Generate storylines with a trained model.
    Generate(GenerateArgs),
    /// Score generated storylines against references.
    Eval(EvalArgs),
    /// Train a baseline and generate storylines with it.
    Baseline(BaselineArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 20)]
    pub entities: usize,
    #[arg(long, default_value_t = 200)]
    pub storylines: usize,
    /// Text vector dimension.
    #[arg(long, default_value_t = 6)]
    pub k: usize,
    /// Image feature dimension.
    #[arg(long, default_value_t = 8)]
    pub d: usize,
}

#[derive(Debug, Args)]
pub struct EmbedArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Where to save the trained word model.
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[arg(long, default_value_t = EmbedConfig::default().rank)]
    pub rank: usize,
    #[arg(long, default_value_t = EmbedConfig::default().epochs)]
    pub epochs: usize,
    #[arg(long, default_value_t = EmbedConfig::default().rate)]
    pub rate: f64,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Training log, one JSON record per round.
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Start from the generator of a pretrained model.
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct Generation {
    #[arg(long)]
    pub data: PathBuf,
    /// Event to generate in; defaults to the first held-out event.
    #[arg(long)]
    pub event: Option<String>,
    /// Start entity; repeat for several. Random starts are drawn otherwise.
    #[arg(long = "start", value_name = "NAME")]
    pub starts: Vec<String>,
    /// Storyline length; defaults to the configured length.
    #[arg(long)]
    pub length: Option<usize>,
    /// Number of random starts when none are given.
    #[arg(long, default_value_t = 100)]
    pub count: usize,
    /// Output file; standard output otherwise.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub gen: Generation,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Reference storylines: a dataset or a generated-storyline file.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Generated storylines.
    #[arg(long)]
    pub gen: PathBuf,
    /// Dataset holding the entity vectors.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, value_parser = parse_modality)]
    pub channel: Modality,
    #[arg(long)]
    pub event: Option<String>,
    /// Label stored in the report.
    #[arg(long, default_value = "generated")]
    pub name: String,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineKind {
    /// Uniform no-repeat sampling.
    Random,
    /// Maximum-likelihood pretraining only.
    Lstm,
    /// Scheduled-sampling pretraining.
    Ss,
    /// Policy gradient rewarded by similarity to the demonstrations.
    Pg,
}

#[derive(Debug, Args)]
pub struct BaselineArgs {
    #[arg(value_enum)]
    pub kind: BaselineKind,
    /// Where to save the baseline generator (not for `random`).
    #[arg(long)]
    pub model_out: Option<PathBuf>,
    #[command(flatten)]
    pub gen: Generation,
}

fn parse_modality(s: &str) -> std::result::Result<Modality, String> {
    Modality::parse(s).ok_or_else(|| format!("expected one of txt, img, mm; got {s:?}"))
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

fn config(cli: &Cli) -> Result<TrainConfig> {
    let mut cfg = match &cli.config {
        Some(p) => load_config(p)?,
        None => TrainConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = config(cli)?;
    match &cli.command {
        Command::Synth(a) => synth(a, &cfg),
        Command::EmbedMm(a) => embed(a, &cfg),
        Command::Pretrain(a) => {
            let corpora = load_dataset(&a.data)?;
            let (data, gen) = pretrain_generator(&train_corpora(&corpora), &cfg)?;
            let (disc, _) = pretrain_discriminator(&gen, &data, &cfg)?;
            Model {
                gen,
                disc: Some(disc),
            }
            .save(&a.out)?;
            Ok(())
        }
        Command::Train(a) => train_cmd(a, &cfg),
        Command::Generate(a) => {
            let model = Model::load(&a.model)?;
            if let Some(t) = a.gen.length {
                cfg.length = t;
            }
            generate(&model, &a.gen, &cfg)
        }
        Command::Eval(a) => eval(a, cli.config.is_some().then_some(cfg)),
        Command::Baseline(a) => baseline(a, &mut cfg),
    }
}

fn synth(a: &SynthArgs, cfg: &TrainConfig) -> Result<()> {
    let spec = SynthSpec::new(a.entities, a.k, a.d, cfg.length, a.storylines, cfg.seed);
    let (train, mut test, _) = synth_corpus(&spec)?;
    test.role = Role::Test;
    save_dataset(&a.out, &[train, test])?;
    Ok(())
}

fn embed(a: &EmbedArgs, cfg: &TrainConfig) -> Result<()> {
    let mut corpora = load_dataset(&a.data)?;
    let ecfg = EmbedConfig {
        rank: a.rank,
        epochs: a.epochs,
        rate: a.rate,
        seed: cfg.seed,
    };
    let (model, _) = embed_corpora(&mut corpora, &ecfg).context("training the multimodal model")?;
    save_dataset(&a.out, &corpora)?;
    if let Some(p) = &a.model_out {
        save_mm(p, &model)?;
    }
    Ok(())
}

fn train_cmd(a: &TrainArgs, cfg: &TrainConfig) -> Result<()> {
    let corpora = train_corpora(&load_dataset(&a.data)?);
    let out = match &a.init {
        Some(p) => {
            let init = Model::load(p)?;
            let data = TrainingSet::from_corpora(&corpora, cfg.length)?;
            train_from(&data, &init.gen, cfg)?
        }
        None => train(&corpora, cfg)?,
    };
    Model {
        gen: out.gen,
        disc: Some(out.disc),
    }
    .save(&a.out)?;
    if let Some(p) = &a.log {
        let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut w = BufWriter::new(f);
        for r in &out.log {
            writeln!(w, "{}", serde_json::to_string(r)?)?;
        }
        w.flush()?;
    }
    Ok(())
}

fn emit(records: &[GeneratedRecord], out: Option<&Path>) -> Result<()> {
    match out {
        Some(p) => save_generated(p, records)?,
        None => write_generated(std::io::stdout().lock(), records)?,
    }
    Ok(())
}

fn generate(model: &Model, a: &Generation, cfg: &TrainConfig) -> Result<()> {
    let corpora = load_dataset(&a.data)?;
    let event = select_event(&corpora, a.event.as_deref())?;
    let starts = (!a.starts.is_empty())
        .then(|| resolve_starts(event, &a.starts))
        .transpose()?;
    let out = apply_policy(&model.gen, event, cfg, starts.as_deref(), a.count)?;
    let records: Vec<GeneratedRecord> = out
        .iter()
        .map(|s| GeneratedRecord::new(event, s, cfg.seed))
        .collect();
    emit(&records, a.out.as_deref())
}

fn random_starts(event: &EventCorpus, a: &Generation, seed: u64) -> Result<Vec<usize>> {
    if !a.starts.is_empty() {
        return Ok(resolve_starts(event, &a.starts)?);
    }
    let mut r = rng::stream(seed, 0);
    Ok((0..a.count)
        .map(|_| r.random_range(0..event.entities.len()))
        .collect())
}

fn baseline(a: &BaselineArgs, cfg: &mut TrainConfig) -> Result<()> {
    let corpora = load_dataset(&a.gen.data)?;
    let train_set = train_corpora(&corpora);
    let gen = match a.kind {
        BaselineKind::Random => {
            let length = a.gen.length.unwrap_or(cfg.length);
            let event = select_event(&corpora, a.gen.event.as_deref())?;
            let starts = random_starts(event, &a.gen, cfg.seed)?;
            let cands = CandidateSet::from_corpus(event)?;
            let out = baseline_random(&cands, &starts, length, cfg.seed)?;
            let records: Vec<GeneratedRecord> = out
                .iter()
                .map(|s| GeneratedRecord::new(event, s, cfg.seed))
                .collect();
            return emit(&records, a.gen.out.as_deref());
        }
        BaselineKind::Lstm => pretrain_generator(&train_set, cfg)?.1,
        BaselineKind::Ss => {
            let schedule = Schedule::Linear {
                from: cfg.ss_start,
                to: cfg.ss_end,
            };
            pretrain_generator_scheduled(&train_set, cfg, schedule)?.1
        }
        BaselineKind::Pg => {
            let (data, pre) = pretrain_generator(&train_set, cfg)?;
            baseline_pg_similarity(&pre, &data, cfg)?
        }
    };
    let model = Model { gen, disc: None };
    if let Some(p) = &a.model_out {
        model.save(p)?;
    }
    if let Some(t) = a.gen.length {
        cfg.length = t;
    }
    generate(&model, &a.gen, cfg)
}

fn eval(a: &EvalArgs, config: Option<TrainConfig>) -> Result<()> {
    let corpora = load_dataset(&a.data)?;
    let event = a.event.as_deref();
    let mut generated = Vec::new();
    let mut repeats = 0;
    for s in load_named(&a.gen)? {
        let (c, sl) = resolve(&corpora, &s, event)?;
        repeats += usize::from(sl.has_repeats());
        generated.push(to_modal_sequence(&c.entities, &sl, true)?);
    }
    let length = generated.first().map(|g| g.len());
    let mut reference = Vec::new();
    for s in load_named(&a.reference)? {
        if event.is_some() && s.event.is_some() && s.event.as_deref() != event {
            continue;
        }
        let (c, sl) = resolve(&corpora, &s, event)?;
        let pieces: Vec<Storyline> = match length {
            Some(t) if sl.len() > t => slice_windows(&sl, t),
            _ => vec![sl],
        };
        for p in &pieces {
            reference.push(to_modal_sequence(&c.entities, p, true)?);
        }
    }
    let report = EvalReport::build(
        a.name.clone(),
        &reference,
        &generated,
        a.channel,
        repeats,
        config,
    )?;
    let json = serde_json::to_string_pretty(&report)?;
    match &a.out {
        Some(p) => {
            std::fs::write(p, json + "\n").with_context(|| format!("writing {}", p.display()))?
        }
        None => println!("{json}"),
    }
    Ok(())
}
