//! Command-line driver.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use facetrec_core::eval::{evaluate_with, Ranker};
use facetrec_core::explain::{faithfulness_shift, Explainer, RemovalTarget, ShiftConfig, Strategy};
use facetrec_core::graph::{split_holdout, UserGroup};
use facetrec_core::trainer::{train_with_progress, ModelCheckpoint, TrainConfig, SELECTION_K};
use facetrec_core::NodeKind;

use crate::checkpoint::{encode_checkpoint, load_checkpoint, CHECKPOINT_FILE};
use crate::config::{parse_list, ConfigError, RunConfig};
use crate::data::{encode_dataset, id_map_tsv, load_dataset, load_graph, Dataset, GRAPH_FILE, IDS_FILE};
use crate::error::FormatError;
use crate::report;
use crate::run::RunDir;

#[derive(Parser)]
#[command(name = "facetrec", version, about = "Factorised graph recommender with traceable explanations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Load raw TSV files, build the graph and hold out validation/test users.
    Build(Common),
    /// Train a model and keep the epoch with the best validation NDCG@100.
    Train {
        #[command(flatten)]
        common: Common,
        /// Directory written by `build`; built from the config's data paths if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Recall@K and NDCG@K on held-out users.
    Eval {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, value_enum, default_value_t = Group::Test)]
        group: Group,
    },
    /// Item and entity importances behind recommendations.
    Explain {
        #[command(flatten)]
        model: ModelArgs,
        /// User id as it appears in the interaction file.
        #[arg(long, requires = "item")]
        user: Option<String>,
        /// Target item id.
        #[arg(long, requires = "user")]
        item: Option<String>,
        /// Contributions kept per node kind.
        #[arg(long, default_value_t = 5)]
        top: usize,
        /// Without --user/--item: explain the top recommendation of this many test users.
        #[arg(long, default_value_t = 10)]
        pairs: usize,
        #[arg(long, value_enum, default_value_t = ExplainFormat::Json)]
        format: ExplainFormat,
    },
    /// Recall@10 shift after removing the most important inputs.
    Faithfulness {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value = "1,2,3,4,5")]
        budgets: String,
        #[arg(long, default_value_t = 5)]
        runs: usize,
        #[arg(long, value_enum, default_value_t = StrategyArg::Both)]
        strategy: StrategyArg,
        #[arg(long, value_enum, default_value_t = RemovalArg::Both)]
        removal: RemovalArg,
        /// Seed for tie-breaking and random removals.
        #[arg(long, default_value_t = 0)]
        shift_seed: u64,
    },
    /// Item base embeddings with their argmax factor (1-based).
    ExportEmbeddings {
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Train and evaluate across factor counts.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Factor counts, applied to both entity and item factors.
        #[arg(id = "sweep_factors", long = "C", value_name = "LIST", default_value = "2,3,4,5")]
        factors: String,
        #[arg(long, value_enum, default_value_t = SweepMode::FixedD)]
        mode: SweepMode,
    },
}

#[derive(Args, Clone, Default)]
struct Common {
    /// `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Write artifacts here instead of a new timestamped directory.
    #[arg(long)]
    run_dir: Option<PathBuf>,
    #[arg(long)]
    output_dir: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    epochs: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    #[arg(long)]
    factors: Option<String>,
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long)]
    l2_weight: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
    #[arg(long)]
    softmax: Option<String>,
    #[arg(long)]
    decoder_tied: Option<String>,
    #[arg(long)]
    k_list: Option<String>,
    #[arg(long)]
    n_val: Option<String>,
    #[arg(long)]
    n_test: Option<String>,
    #[arg(long)]
    train_frac: Option<String>,
    #[arg(long)]
    split_seed: Option<String>,
    #[arg(long)]
    interactions: Option<String>,
    #[arg(long)]
    item_entity: Option<String>,
    #[arg(long)]
    entity_entity: Option<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    #[command(flatten)]
    common: Common,
    /// Checkpoint written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Directory holding graph.bin and ids.tsv; defaults to the checkpoint's directory.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Group {
    Val,
    Test,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ExplainFormat {
    Json,
    Dot,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Model,
    Random,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum RemovalArg {
    Items,
    Entities,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum SweepMode {
    /// Keep the per-factor dimension.
    FixedD,
    /// Keep factors x dimension constant.
    FixedTotal,
}

impl Common {
    fn resolve(&self) -> Result<RunConfig, ConfigError> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::parse_config(path)?,
            None => RunConfig::default(),
        };
        let flags = [
            ("output_dir", &self.output_dir),
            ("seed", &self.seed),
            ("epochs", &self.epochs),
            ("lr", &self.lr),
            ("batch_size", &self.batch_size),
            ("dim", &self.dim),
            ("factors", &self.factors),
            ("gamma", &self.gamma),
            ("l2_weight", &self.l2_weight),
            ("mc_samples", &self.mc_samples),
            ("softmax", &self.softmax),
            ("decoder_tied", &self.decoder_tied),
            ("k_list", &self.k_list),
            ("n_val", &self.n_val),
            ("n_test", &self.n_test),
            ("train_frac", &self.train_frac),
            ("split_seed", &self.split_seed),
            ("interactions", &self.interactions),
            ("item_entity", &self.item_entity),
            ("entity_entity", &self.entity_entity),
        ];
        for (key, value) in flags {
            if let Some(v) = value {
                cfg.set_flag(key, v)?;
            }
        }
        for kv in &self.set {
            let Some((k, v)) = kv.split_once('=') else {
                return Err(ConfigError {
                    key: kv.clone(),
                    origin: crate::config::Origin::Flag,
                    message: "expected KEY=VALUE".into(),
                });
            };
            cfg.set_flag(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parses `argv` (program name first), runs the command and returns the
/// process exit status. Errors are reported on stderr.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let argv: Vec<String> = argv.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli.command, &argv) {
        Ok(dir) => {
            println!("{}", dir.display());
            0
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            if let Some(f) = e.downcast_ref::<FormatError>() {
                i32::from(f.code())
            } else if e.downcast_ref::<ConfigError>().is_some() {
                3
            } else {
                1
            }
        }
    }
}

fn dispatch(command: Command, argv: &[String]) -> Result<PathBuf> {
    match command {
        Command::Build(common) => build(&common, argv),
        Command::Train { common, data } => train(&common, data.as_deref(), argv),
        Command::Eval { model, group } => eval(&model, group, argv),
        Command::Explain {
            model,
            user,
            item,
            top,
            pairs,
            format,
        } => explain(&model, user.zip(item), top, pairs, format, argv),
        Command::Faithfulness {
            model,
            budgets,
            runs,
            strategy,
            removal,
            shift_seed,
        } => faithfulness(&model, &budgets, runs, strategy, removal, shift_seed, argv),
        Command::ExportEmbeddings { model } => export_embeddings(&model, argv),
        Command::Sweep {
            common,
            data,
            factors,
            mode,
        } => sweep(&common, data.as_deref(), &factors, mode, argv),
    }
}

fn run_dir(command: &str, common: &Common, cfg: &RunConfig) -> Result<RunDir> {
    Ok(RunDir::create(command, common.run_dir.as_deref(), cfg.output_dir.as_deref())?)
}

/// Builds the dataset from the configured raw files.
fn build_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let (ui, ie, ee) = cfg.data_paths()?;
    let (graph, ids) = load_graph(ui, ie, ee)?;
    let (train, split) = split_holdout(&graph, cfg.split_seed, cfg.n_val, cfg.n_test, cfg.train_frac)?;
    Ok(Dataset { ids, train, split })
}

fn dataset_for(cfg: &RunConfig, data: Option<&Path>) -> Result<Dataset> {
    match data {
        Some(dir) => Ok(load_dataset(dir).with_context(|| format!("loading dataset from {}", dir.display()))?),
        None => build_dataset(cfg),
    }
}

fn write_dataset(dir: &mut RunDir, data: &Dataset) -> Result<()> {
    dir.write(IDS_FILE, id_map_tsv(&data.ids).as_bytes())?;
    dir.write(GRAPH_FILE, &encode_dataset(data))?;
    Ok(())
}

fn log_dataset(dir: &mut RunDir, data: &Dataset) {
    let g = &data.train;
    dir.log(&format!(
        "dataset users={} items={} entities={} train_interactions={} item_entity={} entity_entity={} val_users={} test_users={} digest={}",
        g.n_users(),
        g.n_items(),
        g.n_entities(),
        g.n_interactions(),
        g.item_entity_adjacency().n_edges(),
        g.entity_entity_adjacency().n_edges(),
        data.split.val.len(),
        data.split.test.len(),
        crate::binary::hex(&data.digest()),
    ));
}

fn build(common: &Common, argv: &[String]) -> Result<PathBuf> {
    let cfg = common.resolve()?;
    let data = build_dataset(&cfg)?;
    let mut dir = run_dir("build", common, &cfg)?;
    log_dataset(&mut dir, &data);
    write_dataset(&mut dir, &data)?;
    Ok(dir.finish(argv, &cfg)?)
}

fn train_model(dir: &mut RunDir, data: &Dataset, config: &TrainConfig) -> Result<ModelCheckpoint> {
    let mut lines = Vec::new();
    let outcome = train_with_progress(&data.train, &data.split, config, |r| {
        let val = r.val_ndcg.map_or_else(|| "NA".into(), |v| format!("{v:.5}"));
        let line = format!(
            "epoch {} loss {:.5} nll {:.5} kl {:.5} val_ndcg@{SELECTION_K} {val}",
            r.epoch, r.loss.total, r.loss.negative_log_likelihood, r.loss.kl
        );
        eprintln!("{line}");
        lines.push(line);
    })?;
    for l in lines {
        dir.log(&l);
    }
    dir.log(&format!("selected epoch {}", outcome.checkpoint.epoch));
    dir.write("loss_log.tsv", report::loss_log_tsv(&outcome.log).as_bytes())?;
    let mut ck = outcome.checkpoint;
    ck.graph_digest = data.digest();
    Ok(ck)
}

fn train(common: &Common, data: Option<&Path>, argv: &[String]) -> Result<PathBuf> {
    let cfg = common.resolve()?;
    let dataset = dataset_for(&cfg, data)?;
    let mut dir = run_dir("train", common, &cfg)?;
    log_dataset(&mut dir, &dataset);
    if cfg.train.softmax != facetrec_core::objective::SoftmaxMode::Full {
        dir.log("likelihood uses a sampled softmax over uniform negatives");
    }
    write_dataset(&mut dir, &dataset)?;
    let ck = train_model(&mut dir, &dataset, &cfg.train)?;
    dir.write(CHECKPOINT_FILE, &encode_checkpoint(&ck))?;
    Ok(dir.finish(argv, &cfg)?)
}

struct Loaded {
    cfg: RunConfig,
    data: Dataset,
    ck: ModelCheckpoint,
    dir: RunDir,
}

fn load_model(command: &str, args: &ModelArgs) -> Result<Loaded> {
    let mut cfg = args.common.resolve()?;
    let data_dir = match &args.data {
        Some(d) => d.clone(),
        None => args
            .checkpoint
            .parent()
            .map(Path::to_path_buf)
            .unwrap_or_else(|| PathBuf::from(".")),
    };
    let data = load_dataset(&data_dir).with_context(|| format!("loading dataset from {}", data_dir.display()))?;
    let ck = load_checkpoint(&args.checkpoint, Some(&data.digest()))
        .with_context(|| format!("loading {}", args.checkpoint.display()))?;
    // The model's own training settings are what the artifacts reflect.
    cfg.train = ck.config.clone();
    let mut dir = run_dir(command, &args.common, &cfg)?;
    dir.log(&format!("checkpoint {} (epoch {})", args.checkpoint.display(), ck.epoch));
    log_dataset(&mut dir, &data);
    Ok(Loaded { cfg, data, ck, dir })
}

fn eval(args: &ModelArgs, group: Group, argv: &[String]) -> Result<PathBuf> {
    let Loaded { cfg, data, ck, mut dir } = load_model("eval", args)?;
    let group = match group {
        Group::Val => UserGroup::Val,
        Group::Test => UserGroup::Test,
    };
    let ranker = Ranker::new(&ck.model, &data.train);
    let metrics = evaluate_with(&ranker, &data.split, group, &cfg.ks)?;
    let text = report::metrics_text(&metrics);
    dir.write("metrics.tsv", report::metrics_tsv(&metrics, &data.ids).as_bytes())?;
    dir.write("metrics.txt", text.as_bytes())?;
    for line in text.lines() {
        dir.log(line);
    }
    Ok(dir.finish(argv, &cfg)?)
}

fn lookup(data: &Dataset, kind: NodeKind, id: &str) -> Result<u32> {
    match data.ids.get(kind, id) {
        Some(i) => Ok(i),
        None => bail!("unknown {} `{id}`", kind.as_str()),
    }
}

fn file_safe(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

fn explain(
    args: &ModelArgs,
    pair: Option<(String, String)>,
    top: usize,
    pairs: usize,
    format: ExplainFormat,
    argv: &[String],
) -> Result<PathBuf> {
    let Loaded { cfg, data, ck, mut dir } = load_model("explain", args)?;
    let explainer = Explainer::new(&ck.model, &data.train);
    let targets: Vec<(u32, u32)> = match pair {
        Some((u, t)) => vec![(lookup(&data, NodeKind::User, &u)?, lookup(&data, NodeKind::Item, &t)?)],
        None => {
            let mut out = Vec::new();
            for &u in data.split.test.users.iter().take(pairs) {
                if let Some(&t) = explainer.ranker().rank(u, Some(1))?.first() {
                    out.push((u, t));
                }
            }
            out
        }
    };
    for (u, t) in targets {
        let ex = explainer.explain(u, t, top)?;
        let stem = format!(
            "explain-{}-{}",
            file_safe(data.ids.name(NodeKind::User, u).unwrap_or("?")),
            file_safe(data.ids.name(NodeKind::Item, t).unwrap_or("?"))
        );
        if format != ExplainFormat::Dot {
            dir.write(&format!("{stem}.json"), report::explanation_json(&ex, &data.ids).as_bytes())?;
        }
        if format != ExplainFormat::Json {
            dir.write(&format!("{stem}.dot"), report::explanation_dot(&ex, &data.ids, &data.train).as_bytes())?;
        }
        dir.log(&format!(
            "explained {stem}: {} items, {} entities, target factor {}",
            ex.item_contributions.len(),
            ex.entity_contributions.len(),
            ex.target_factor + 1
        ));
    }
    Ok(dir.finish(argv, &cfg)?)
}

fn faithfulness(
    args: &ModelArgs,
    budgets: &str,
    runs: usize,
    strategy: StrategyArg,
    removal: RemovalArg,
    seed: u64,
    argv: &[String],
) -> Result<PathBuf> {
    let Loaded { cfg, data, ck, mut dir } = load_model("faithfulness", args)?;
    let budgets = parse_list(budgets).map_err(|m| anyhow::anyhow!("--budgets: {m}"))?;
    let target = match removal {
        RemovalArg::Items => RemovalTarget::Items,
        RemovalArg::Entities => RemovalTarget::Entities,
        RemovalArg::Both => RemovalTarget::Both,
    };
    let strategies = match strategy {
        StrategyArg::Model => vec![Strategy::Model],
        StrategyArg::Random => vec![Strategy::Random],
        StrategyArg::Both => vec![Strategy::Model, Strategy::Random],
    };
    dir.log(&format!("shift_seed={seed} runs={runs} removal={}", target.as_str()));
    let mut tsv = String::from(report::SHIFT_HEADER);
    let mut summary = String::new();
    for strategy in strategies {
        let shift_cfg = ShiftConfig {
            budgets: budgets.clone(),
            strategy,
            target,
            runs,
            seed,
            k: 10,
        };
        let rep = faithfulness_shift(&ck.model, &data.train, &data.split, &shift_cfg)?;
        tsv.push_str(&report::shift_rows_tsv(&rep));
        let s = report::shift_summary(&rep);
        for line in s.lines() {
            dir.log(line);
        }
        summary.push_str(&s);
    }
    dir.write("shift.tsv", tsv.as_bytes())?;
    dir.write("shift_summary.txt", summary.as_bytes())?;
    Ok(dir.finish(argv, &cfg)?)
}

fn export_embeddings(args: &ModelArgs, argv: &[String]) -> Result<PathBuf> {
    let Loaded { cfg, data, ck, mut dir } = load_model("export-embeddings", args)?;
    dir.write("item_embeddings.tsv", report::embeddings_tsv(&ck.model, &data.ids).as_bytes())?;
    Ok(dir.finish(argv, &cfg)?)
}

fn sweep(common: &Common, data: Option<&Path>, factors: &str, mode: SweepMode, argv: &[String]) -> Result<PathBuf> {
    let cfg = common.resolve()?;
    let counts = parse_list(factors).map_err(|m| anyhow::anyhow!("--C: {m}"))?;
    let dataset = dataset_for(&cfg, data)?;
    let mut dir = run_dir("sweep", common, &cfg)?;
    log_dataset(&mut dir, &dataset);
    let total = cfg.train.item_factors * cfg.train.dim;
    let mut table = format!("C\tdim\ttotal_dim\tepoch\tndcg@{SELECTION_K}\n");
    for &c in &counts {
        let dim = match mode {
            SweepMode::FixedD => cfg.train.dim,
            SweepMode::FixedTotal => total / c,
        };
        if c == 0 || dim == 0 {
            bail!("cannot use {c} factors with total dimension {total}");
        }
        let config = TrainConfig {
            entity_factors: c,
            item_factors: c,
            dim,
            ..cfg.train.clone()
        };
        dir.log(&format!("sweep C={c} dim={dim}"));
        let ck = train_model(&mut dir, &dataset, &config)?;
        let ranker = Ranker::new(&ck.model, &dataset.train);
        let metrics = evaluate_with(&ranker, &dataset.split, UserGroup::Test, &[SELECTION_K])?;
        let line = format!("{c}\t{dim}\t{}\t{}\t{}", c * dim, ck.epoch, metrics.mean_ndcg[0]);
        dir.log(&line);
        table.push_str(&line);
        table.push('\n');
    }
    dir.write("sweep.tsv", table.as_bytes())?;
    Ok(dir.finish(argv, &cfg)?)
}
