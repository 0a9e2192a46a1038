//! Command-line entry point: synthesize corpora, train, embed, evaluate,
//! probe, and verify gradients.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use gesture_clr::config::{Profile, RunConfig};
use gesture_clr::eval::{
    build_pair_sets, embed_gestures, form_feature_correlation, hypothesis_battery, render_histogram,
    write_pair_scores, Downsample, EmbeddingTable, PairScope,
};
use gesture_clr::gradcheck::{check_model_config, full_gradient_check};
use gesture_clr::objectives::Objective;
use gesture_clr::pose::Corpus;
use gesture_clr::probing::{random_baseline_embeddings, run_probe_experiment};
use gesture_clr::rng::derive_seed;
use gesture_clr::synth::{flag_rates, generate, planted_geometry_check, shared_count_histogram};
use gesture_clr::towers::{Layer, Model};
use gesture_clr::trainer::{
    config_hash, fit, load_checkpoint, save_checkpoint, write_atomic, write_metrics, Dataset,
};
use gesture_clr::{Error, Exec};
use serde::Serialize;
use sha2::{Digest, Sha256};

#[derive(Debug, Parser)]
#[command(name = "gesture-clr", version, about = "Contrastive gesture representation toolkit")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Global {
    /// Flat `section.key = value` config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream; drawn from entropy and logged if omitted.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_parser = ["full", "desk"])]
    profile: Option<String>,
    /// Config override, `key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Run single-threaded.
    #[arg(long, global = true)]
    sequential: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic corpus with planted structure.
    Synth,
    /// Train both towers with a contrastive objective.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_parser = ["unimodal", "multimodal", "combined"])]
        mode: Option<String>,
    },
    /// Write per-gesture embeddings of a checkpoint.
    Embed {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, value_parser = ["projection", "encoder"])]
        layer: Option<String>,
    },
    /// Correlate embedding similarity with annotated form similarity.
    EvalForm {
        #[command(flatten)]
        input: EvalInput,
    },
    /// Referent, speaker, and dialogue hypothesis tests.
    EvalDialogue {
        #[command(flatten)]
        input: EvalInput,
    },
    /// Probe trained and random-init encoder embeddings for form features.
    Probe {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Finite-difference check of every loss through both towers.
    GradCheck,
}

#[derive(Debug, Args)]
struct EvalInput {
    /// Embedding CSV; computed from `--checkpoint` when omitted.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long, value_parser = ["projection", "encoder"])]
    layer: Option<String>,
}

/// A failure and the exit code it maps to.
struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::Config(_) | Error::Parse { .. } => 2,
            _ => 1,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: 2,
        message: message.into(),
    }
}

type CliResult<T> = Result<T, Failure>;

struct Context {
    cfg: RunConfig,
    seed: u64,
    out: PathBuf,
    exec: Exec,
}

impl Context {
    fn corpus(&self, flag: &Option<PathBuf>) -> CliResult<Corpus> {
        let dir = flag
            .clone()
            .or_else(|| self.cfg.data.corpus.clone())
            .ok_or_else(|| usage("no corpus: pass --corpus or set data.corpus"))?;
        log::info!("loading corpus from {}", dir.display());
        Ok(Corpus::load(&dir, self.cfg.data.window)?)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let path = self.out.join(name);
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
        bytes.push(b'\n');
        write_atomic(&path, &bytes)?;
        Ok(path)
    }

    fn layer(&self, flag: &Option<String>) -> CliResult<Layer> {
        match flag {
            Some(s) => s.parse().map_err(usage),
            None => Ok(self.cfg.eval.layer),
        }
    }
}

fn parse_overrides(raw: &[String]) -> CliResult<Vec<(String, String)>> {
    raw.iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| usage(format!("--set expects key=value, got {kv:?}")))
        })
        .collect()
}

fn context(global: &Global) -> CliResult<Context> {
    let profile = global
        .profile
        .as_deref()
        .map(|p| p.parse::<Profile>().map_err(usage))
        .transpose()?;
    let overrides = parse_overrides(&global.overrides)?;
    let mut cfg = RunConfig::load(global.config.as_deref(), profile, &overrides)?;
    let seed = match global.seed.or(cfg.seed) {
        Some(s) => s,
        None => {
            let s = rand::random::<u64>();
            log::warn!("no seed given; using entropy seed {s}");
            s
        }
    };
    cfg.seed = Some(seed);
    cfg.train.seed = seed;
    cfg.synth.seed = seed;
    let exec = if global.sequential { Exec::Sequential } else { Exec::default() };
    cfg.train.exec = exec;
    Ok(Context {
        cfg,
        seed,
        out: global.out.clone(),
        exec,
    })
}

/// Hex SHA-256 of every file under `dir`, keyed by relative path.
fn digest_tree(dir: &Path) -> CliResult<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let entries = std::fs::read_dir(&d).map_err(|e| usage(format!("{}: {e}", d.display())))?;
        for entry in entries {
            let path = entry.map_err(|e| usage(e.to_string()))?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let bytes = std::fs::read(&path).map_err(|e| usage(format!("{}: {e}", path.display())))?;
                let rel = path.strip_prefix(dir).expect("under dir").to_string_lossy().replace('\\', "/");
                out.insert(rel, hex::encode(Sha256::digest(bytes)));
            }
        }
    }
    Ok(out)
}

fn corpus_hash(files: &BTreeMap<String, String>) -> String {
    let mut h = Sha256::new();
    for (k, v) in files {
        h.update(k.as_bytes());
        h.update(b"\0");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

#[derive(Serialize)]
struct SynthReport {
    seed: u64,
    gestures: usize,
    pairs: usize,
    windows: usize,
    shared_count_histogram: [usize; 6],
    flag_rates: [f64; 5],
    geometry: gesture_clr::synth::GeometryReport,
    corpus_hash: String,
}

fn cmd_synth(ctx: &Context) -> CliResult<()> {
    let s = generate(&ctx.cfg.synth, ctx.exec)?;
    let dir = ctx.out.join("corpus");
    let parent = dir.parent().expect("joined path");
    std::fs::create_dir_all(parent).map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    // Written beside the target, then swapped in.
    let staging = tempfile::Builder::new()
        .prefix(".corpus-")
        .tempdir_in(parent)
        .map_err(|e| usage(format!("{}: {e}", parent.display())))?;
    s.corpus.save(staging.path())?;
    let files = digest_tree(staging.path())?;
    if dir.exists() {
        std::fs::remove_dir_all(&dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;
    }
    let staged = staging.keep();
    std::fs::rename(&staged, &dir).map_err(|e| usage(format!("{}: {e}", dir.display())))?;

    let report = SynthReport {
        seed: ctx.seed,
        gestures: s.corpus.records.len(),
        pairs: s.corpus.annotations.len(),
        windows: s.corpus.windows.len(),
        shared_count_histogram: shared_count_histogram(&s.corpus.annotations),
        flag_rates: flag_rates(&s.corpus.annotations),
        geometry: planted_geometry_check(&s.corpus)?,
        corpus_hash: corpus_hash(&files),
    };
    if !report.geometry.passed {
        log::warn!("planted geometry check failed: p = {:.3e}", report.geometry.p_value);
    }
    let truth: Vec<_> = s.truth.iter().collect();
    ctx.write_json("truth.json", &truth)?;
    let path = ctx.write_json("synth_report.json", &report)?;
    eprintln!(
        "{} gestures, {} pairs, histogram {:?}; report {}",
        report.gestures,
        report.pairs,
        report.shared_count_histogram,
        path.display()
    );
    println!("{}", report.corpus_hash);
    Ok(())
}

#[derive(Serialize)]
struct TrainReport {
    seed: u64,
    objective: Objective,
    profile: &'static str,
    config_hash: String,
    best_epoch: usize,
    best_val_loss: f64,
    epochs: usize,
    steps: usize,
    first_step_losses: Vec<f64>,
    train_windows: usize,
    val_windows: usize,
    checkpoint_digest: String,
}

fn cmd_train(ctx: &mut Context, corpus: &Option<PathBuf>, mode: &Option<String>) -> CliResult<()> {
    if let Some(m) = mode {
        ctx.cfg.train.objective = m.parse().map_err(usage)?;
    }
    let corpus = ctx.corpus(corpus)?;
    let train = &ctx.cfg.train;
    let data = Dataset::from_corpus(&corpus, train.objective.uses_speech(), ctx.cfg.data.per_gesture, ctx.exec)?;
    log::info!("{} training windows, objective {}", data.len(), train.objective.name());
    let init = Model::init(ctx.cfg.model.clone(), derive_seed(ctx.seed, gesture_clr::trainer::INIT_STREAM))?;
    let run = fit(&data, init, train)?;
    save_checkpoint(&ctx.out.join("checkpoint.bin"), &run.best)?;
    write_metrics(&ctx.out.join("metrics.jsonl"), &run.metrics)?;
    for m in &run.metrics {
        eprintln!("epoch {:>3}  train {:.4}  val {:.4}  {} ms", m.epoch, m.train_loss, m.val_loss, m.wall_ms);
    }
    let report = TrainReport {
        seed: ctx.seed,
        objective: train.objective,
        profile: ctx.cfg.profile.name(),
        config_hash: config_hash(train, &ctx.cfg.model),
        best_epoch: run.best.epoch,
        best_val_loss: run.best.val_history.last().copied().unwrap_or(f64::NAN),
        epochs: run.metrics.len().saturating_sub(1),
        steps: run.step_losses.len(),
        first_step_losses: run.step_losses.iter().take(5).copied().collect(),
        train_windows: run.train_indices.len(),
        val_windows: run.val_indices.len(),
        checkpoint_digest: run.best.digest(),
    };
    ctx.write_json("train_report.json", &report)?;
    Ok(())
}

fn load_model(ctx: &Context, path: &Path) -> CliResult<Model> {
    let ck = load_checkpoint(path)?;
    ck.check_config(&config_hash(&ctx.cfg.train, &ck.model.config));
    Ok(ck.model)
}

fn embeddings(ctx: &Context, input: &EvalInput, corpus: &Corpus) -> CliResult<EmbeddingTable> {
    match (&input.embeddings, &input.checkpoint) {
        (Some(path), _) => Ok(EmbeddingTable::read_csv(path)?),
        (None, Some(ck)) => {
            let model = load_model(ctx, ck)?;
            Ok(embed_gestures(&model, corpus, ctx.layer(&input.layer)?, ctx.cfg.eval.embed_batch, ctx.exec)?)
        }
        (None, None) => Err(usage("pass --embeddings or --checkpoint")),
    }
}

fn cmd_embed(ctx: &Context, checkpoint: &Path, corpus: &Option<PathBuf>, layer: &Option<String>) -> CliResult<()> {
    let corpus = ctx.corpus(corpus)?;
    let model = load_model(ctx, checkpoint)?;
    let layer = ctx.layer(layer)?;
    let table = embed_gestures(&model, &corpus, layer, ctx.cfg.eval.embed_batch, ctx.exec)?;
    let path = ctx.out.join("embeddings.csv");
    table.write_csv(&path)?;
    eprintln!("{} gestures × {} dims → {}", table.len(), table.dim, path.display());
    Ok(())
}

fn cmd_eval_form(ctx: &Context, input: &EvalInput) -> CliResult<()> {
    let corpus = ctx.corpus(&input.corpus)?;
    let table = embeddings(ctx, input, &corpus)?;
    let report = form_feature_correlation(&table, &corpus.annotations, ctx.cfg.eval.variance)?;
    write_pair_scores(&ctx.out.join("pair_scores.csv"), &table, &corpus.annotations)?;
    ctx.write_json("form_report.json", &report)?;
    eprint!("{}", render_histogram(&report));
    if let (Some(rho), Some(p)) = (report.rho, report.p_value) {
        eprintln!("spearman rho = {rho:.4} (p = {p:.3e}, {} pairs)", report.n_pairs);
    }
    Ok(())
}

fn cmd_eval_dialogue(ctx: &Context, input: &EvalInput) -> CliResult<()> {
    let corpus = ctx.corpus(&input.corpus)?;
    let table = embeddings(ctx, input, &corpus)?;
    let cap = ctx.cfg.eval.max_pairs.map(|max_pairs| Downsample {
        max_pairs,
        seed: derive_seed(ctx.seed, 6),
    });
    let sets = build_pair_sets(&corpus.records, PairScope::CrossDialogue, cap);
    let report = hypothesis_battery(&table, &corpus.records, &sets, ctx.cfg.eval.variance, ctx.cfg.eval.alpha)?;
    ctx.write_json("dialogue_report.json", &report)?;
    for g in report.within.groups.iter().chain(report.cross.iter().flat_map(|c| c.groups.iter())) {
        eprintln!("{:<28} n={:<7} mean={:?}", g.label, g.n, g.mean);
    }
    for v in &report.verdicts {
        eprintln!("{:<12} {} > {}: {:?}", v.hypothesis, v.greater, v.lesser, v.holds);
    }
    Ok(())
}

fn cmd_probe(ctx: &Context, checkpoint: &Path, corpus: &Option<PathBuf>) -> CliResult<()> {
    let corpus = ctx.corpus(corpus)?;
    let model = load_model(ctx, checkpoint)?;
    let batch = ctx.cfg.eval.embed_batch;
    let trained = embed_gestures(&model, &corpus, Layer::Encoder, batch, ctx.exec)?;
    let baseline = random_baseline_embeddings(&model.config, &corpus, derive_seed(ctx.seed, 7), ctx.exec)?;
    let report = run_probe_experiment(&corpus.annotations, &trained, &baseline, &ctx.cfg.probe, ctx.seed, ctx.exec)?;
    write_atomic(&ctx.out.join("probe_aucs.csv"), report.to_csv().as_bytes())?;
    ctx.write_json("probe_report.json", &report.results)?;
    for r in &report.results {
        eprintln!(
            "{:<11} {:<16} auc {:.3}  p_adj {:.3e}{}",
            r.feature,
            r.representation.tag(),
            r.auc_mean,
            r.p_adjusted,
            if r.significant { " *" } else { "" }
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct GradReport {
    tolerance: f64,
    passed: bool,
    checks: Vec<gesture_clr::gradcheck::TowerCheck>,
}

fn cmd_grad_check(ctx: &Context) -> CliResult<()> {
    let tolerance = 1e-4;
    let mut checks = full_gradient_check(&check_model_config(), ctx.seed)?;
    checks.extend(full_gradient_check(&ctx.cfg.model, ctx.seed)?);
    let passed = checks.iter().all(|c| c.result.max_rel_error < tolerance);
    for c in &checks {
        eprintln!(
            "{:<10} N={}  max rel err {:.3e}  ({} coords, {} ms)",
            c.objective.name(),
            c.batch,
            c.result.max_rel_error,
            c.result.checked,
            c.wall_ms
        );
    }
    ctx.write_json("grad_check.json", &GradReport { tolerance, passed, checks })?;
    if passed {
        Ok(())
    } else {
        Err(Failure {
            code: 1,
            message: format!("gradient check above {tolerance}"),
        })
    }
}

fn run(cli: Cli) -> CliResult<()> {
    let mut ctx = context(&cli.global)?;
    match &cli.command {
        Command::Synth => cmd_synth(&ctx),
        Command::Train { corpus, mode } => cmd_train(&mut ctx, corpus, mode),
        Command::Embed {
            checkpoint,
            corpus,
            layer,
        } => cmd_embed(&ctx, checkpoint, corpus, layer),
        Command::EvalForm { input } => cmd_eval_form(&ctx, input),
        Command::EvalDialogue { input } => cmd_eval_dialogue(&ctx, input),
        Command::Probe { checkpoint, corpus } => cmd_probe(&ctx, checkpoint, corpus),
        Command::GradCheck => cmd_grad_check(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
