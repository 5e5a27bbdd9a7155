//! Command-line front end. Each subcommand wraps one pipeline stage and
//! reads/writes named artifacts under the cache directory, so a full run can
//! be driven stage by stage (ingest → train-rec → confirm → align → augment)
//! or all at once (`run`, `sweep`). Flags override config-file values, which
//! override built-in defaults.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use recprofile::augment::{augment_all_lists, write_augmented_lists, Provenance, UnifiedEmbedding};
use recprofile::config::Config;
use recprofile::data::{partition_providers, split_dataset, Dataset, DatasetBuilder};
use recprofile::error::{Error, Result};
use recprofile::harness::{
    content_embeddings, read_csv, run_scenario, sweep, unified_space_fallback,
    unified_space_surrogate, write_predictions, AggregateRow, EmbeddingSource, ScenarioReport,
};
use recprofile::ingest::{
    filter_rare_items, generate_synthetic, load_dataset, load_embedding_table, parse_attributes,
    parse_interactions, parse_item_meta, save_dataset, write_embedding_table, InteractionFormat,
    SyntheticSpec,
};
use recprofile::rec::{hit_rate_at_k, train_recommender, RecKind, RecommenderModel, TrainConfig};
use recprofile::seed::{fnv1a, SeedPolicy};
use recprofile::surrogate::{confirm_surrogate, write_report, RecListSet};

/// Attribute inference from recommendation lists.
#[derive(Parser)]
#[command(name = "recprofile", version, about)]
struct Cli {
    /// Flat key = value configuration file.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Cache directory for datasets, models, and results.
    #[arg(long, global = true, value_name = "DIR")]
    cache: Option<PathBuf>,
    /// Parallel sweep cells.
    #[arg(long, global = true, value_name = "N")]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse raw interaction/attribute/item files into a cached dataset.
    Ingest(IngestArgs),
    /// Generate a planted synthetic dataset into the cache.
    Synth(SynthArgs),
    /// Train the deployed recommender on a cached dataset.
    TrainRec(TrainRecArgs),
    /// Pick the surrogate whose lists best match the deployed model's.
    Confirm(ConfirmArgs),
    /// Map item content vectors into the surrogate (or pseudo) space.
    Align(AlignArgs),
    /// Extend every served list with the most similar unseen items.
    Augment(AugmentArgs),
    /// Run one scenario end to end and print its report.
    Run(RunArgs),
    /// Run an (alpha, beta) grid and write result tables.
    Sweep(SweepArgs),
    /// Render an aggregated results CSV as an aligned table.
    Report(ReportArgs),
}

#[derive(Args)]
struct IngestArgs {
    /// Interaction rows: user, item[, weight[, timestamp]].
    #[arg(long, value_name = "PATH")]
    interactions: PathBuf,
    /// Field layout: tsv, csv, or movielens ("::").
    #[arg(long, default_value = "tsv")]
    format: String,
    /// Tab-separated user, attribute, value rows.
    #[arg(long, value_name = "PATH")]
    attributes: Option<PathBuf>,
    /// Tab-separated item, title, category rows.
    #[arg(long, value_name = "PATH")]
    items: Option<PathBuf>,
    /// Drop items with this many interactions or fewer.
    #[arg(long, default_value_t = 0)]
    min_count: usize,
    /// Dataset name in the cache.
    #[arg(long, default_value = "dataset")]
    name: String,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 500)]
    users: usize,
    #[arg(long, default_value_t = 200)]
    items: usize,
    #[arg(long, default_value_t = 2)]
    clusters: usize,
    /// Probability that an interaction stays inside the user's cluster.
    #[arg(long, default_value_t = 0.9)]
    affinity: f64,
    #[arg(long, default_value_t = 30)]
    per_user: usize,
    /// Attribute column carrying the planted cluster label.
    #[arg(long, default_value = "group")]
    attribute: String,
    /// Dataset name in the cache.
    #[arg(long, default_value = "synthetic")]
    name: String,
}

#[derive(Args)]
struct TrainRecArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    /// Recommender kind: mf, neumf, ngcf, lightgcn.
    #[arg(long)]
    kind: Option<String>,
    /// Checkpoint name (defaults to the kind).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Args)]
struct ConfirmArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    /// Deployed model checkpoint name.
    #[arg(long)]
    model: String,
    /// Fraction of users releasing interaction histories.
    #[arg(long)]
    alpha: Option<f64>,
    /// Fraction of users releasing attribute labels.
    #[arg(long)]
    beta: Option<f64>,
    /// Served list length.
    #[arg(long)]
    k: Option<usize>,
    /// Comma-separated candidate kinds.
    #[arg(long)]
    candidates: Option<String>,
    /// Checkpoint name for the winning surrogate.
    #[arg(long, default_value = "surrogate")]
    name: String,
}

#[derive(Args)]
struct AlignArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    /// Deployed model checkpoint (source of the observed lists).
    #[arg(long)]
    model: String,
    /// Surrogate checkpoint providing target embeddings; omitted, the
    /// co-occurrence pseudo-target fallback is used.
    #[arg(long)]
    surrogate: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    /// Output table name under the cache.
    #[arg(long, default_value = "aligned")]
    name: String,
}

#[derive(Args)]
struct AugmentArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    /// Deployed model checkpoint (source of the observed lists).
    #[arg(long)]
    model: String,
    /// Unified embedding table: a cached `align` output name or a file path.
    #[arg(long, default_value = "aligned")]
    embeddings: String,
    #[arg(long)]
    k: Option<usize>,
    /// Augmented list length.
    #[arg(long)]
    k2: Option<usize>,
    /// Output file name under the cache.
    #[arg(long, default_value = "augmented")]
    name: String,
}

#[derive(Args)]
struct RunArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    /// Analyst scenario, 1-4.
    #[arg(long)]
    scenario: Option<u8>,
    /// Attribute column to infer.
    #[arg(long)]
    attribute: Option<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    /// Classifier: dt, knn, mlp, or rapi.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    k2: Option<usize>,
    /// Replace this fraction of every served list with same-category items
    /// before inference.
    #[arg(long)]
    robustness: Option<f64>,
    /// Write per-user predictions to this TSV path.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Cached dataset name.
    #[arg(long)]
    dataset: String,
    #[arg(long)]
    scenario: Option<u8>,
    #[arg(long)]
    attribute: Option<String>,
    /// Comma-separated alpha grid.
    #[arg(long)]
    alphas: Option<String>,
    /// Comma-separated beta grid.
    #[arg(long)]
    betas: Option<String>,
    /// Comma-separated methods.
    #[arg(long)]
    methods: Option<String>,
    /// Comma-separated master seeds.
    #[arg(long)]
    seeds: Option<String>,
    /// Output directory (default: <cache>/sweep).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// A sweep output directory or an aggregated CSV file.
    path: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            // Every error Display is self-contained (sources are embedded),
            // so one line suffices.
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let ctx = Context::from_cli(&cli)?;
    match cli.cmd {
        Cmd::Ingest(a) => cmd_ingest(&ctx, a),
        Cmd::Synth(a) => cmd_synth(&ctx, a),
        Cmd::TrainRec(a) => cmd_train_rec(&ctx, a),
        Cmd::Confirm(a) => cmd_confirm(&ctx, a),
        Cmd::Align(a) => cmd_align(&ctx, a),
        Cmd::Augment(a) => cmd_augment(&ctx, a),
        Cmd::Run(a) => cmd_run(&ctx, a),
        Cmd::Sweep(a) => cmd_sweep(&ctx, a),
        Cmd::Report(a) => cmd_report(a),
    }
}

/// Config file plus global-flag overrides, resolved once.
struct Context {
    cfg: Config,
    cache: PathBuf,
    seed: u64,
    workers: usize,
}

impl Context {
    fn from_cli(cli: &Cli) -> Result<Context> {
        let mut cfg = match &cli.config {
            Some(path) => Config::parse_file(path)?,
            None => Config::new(),
        };
        if let Some(seed) = cli.seed {
            cfg.set("seed", &seed.to_string())?;
        }
        let seed = cfg.get_parsed("seed")?.unwrap_or(0);
        let cache = cli
            .cache
            .clone()
            .or_else(|| cfg.get("cache").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("cache"));
        let workers = match cli.workers {
            Some(w) => w,
            None => cfg.get_parsed("workers")?.unwrap_or(1),
        };
        Ok(Context {
            cfg,
            cache,
            seed,
            workers,
        })
    }

    fn dataset_dir(&self, name: &str) -> PathBuf {
        self.cache.join("datasets").join(name)
    }

    fn model_dir(&self, name: &str) -> PathBuf {
        self.cache.join("models").join(name)
    }

    fn open_dataset(&self, name: &str) -> Result<Dataset> {
        let dir = self.dataset_dir(name);
        if !dir.join("interactions.tsv").is_file() {
            return Err(Error::missing(
                "dataset",
                format!("{name}: not in the cache; produce it with `ingest` or `synth`"),
            ));
        }
        load_dataset(&dir)
    }

    fn open_model(&self, name: &str) -> Result<RecommenderModel> {
        let dir = self.model_dir(name);
        if !dir.join("manifest.json").is_file() {
            return Err(Error::missing(
                "model checkpoint",
                format!("{name}: not in the cache; produce it with `train-rec` or `confirm`"),
            ));
        }
        RecommenderModel::load(&dir)
    }

    /// Lists every user is served: top-k outside their full history.
    fn served_lists(
        &self,
        dataset: &Dataset,
        model: &RecommenderModel,
        k: usize,
    ) -> Result<RecListSet> {
        let users: Vec<u32> = (0..dataset.n_users() as u32).collect();
        RecListSet::from_model(model, &users, k, &dataset.user_items())
    }

    fn split_ratios(&self) -> Result<(f64, f64, f64)> {
        Ok((
            self.cfg.get_parsed("split.train")?.unwrap_or(0.8),
            self.cfg.get_parsed("split.validation")?.unwrap_or(0.1),
            self.cfg.get_parsed("split.test")?.unwrap_or(0.1),
        ))
    }

    fn k(&self, flag: Option<usize>) -> Result<usize> {
        Ok(match flag {
            Some(k) => k,
            None => self.cfg.get_parsed("k")?.unwrap_or(20),
        })
    }

    fn alpha_beta(&self, alpha: Option<f64>, beta: Option<f64>) -> Result<(f64, f64)> {
        Ok((
            match alpha {
                Some(a) => a,
                None => self.cfg.get_parsed("alpha")?.unwrap_or(0.1),
            },
            match beta {
                Some(b) => b,
                None => self.cfg.get_parsed("beta")?.unwrap_or(0.1),
            },
        ))
    }

    /// Content-vector source from the config: a file when given, otherwise
    /// the title hasher.
    fn embedding_source(&self) -> Result<EmbeddingSource> {
        Ok(match self.cfg.get("embedding.file") {
            Some(path) => EmbeddingSource::File(PathBuf::from(path)),
            None => EmbeddingSource::Hash {
                dim: self.cfg.get_parsed("embedding.dim")?.unwrap_or(32),
            },
        })
    }
}

/// Two-column block with aligned values, e.g. for run reports.
fn print_kv(rows: &[(&str, String)]) {
    let width = rows.iter().map(|(k, _)| k.len()).max().unwrap_or(0);
    for (k, v) in rows {
        println!("{k:<width$}  {v}");
    }
}

fn dataset_summary(name: &str, dataset: &Dataset) -> String {
    let m = dataset.n_users();
    let n = dataset.n_items();
    let x = dataset.interactions().len();
    let density = x as f64 / (m as f64 * n as f64).max(1.0);
    let mut out = String::new();
    let _ = writeln!(out, "dataset       {name}");
    let _ = writeln!(out, "users         {m}");
    let _ = writeln!(out, "items         {n}");
    let _ = writeln!(out, "interactions  {x}");
    let _ = writeln!(out, "density       {density:.6}");
    for col in dataset.attributes() {
        let labels = col.labels();
        if labels.len() <= 10 {
            let _ = writeln!(
                out,
                "attribute     {}: {} labels ({})",
                col.name(),
                labels.len(),
                labels.join(", ")
            );
        } else {
            let _ = writeln!(out, "attribute     {}: {} labels", col.name(), labels.len());
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct IngestStamp {
    fingerprint: String,
    summary: String,
}

fn cmd_ingest(ctx: &Context, args: IngestArgs) -> Result<()> {
    let format = match args.format.as_str() {
        "tsv" => InteractionFormat::Delimited('\t'),
        "csv" => InteractionFormat::Delimited(','),
        "movielens" => InteractionFormat::MovieLensDat,
        other => {
            return Err(Error::invalid(format!(
                "unknown format {other:?} (expected tsv, csv, or movielens)"
            )));
        }
    };
    // Fingerprint the inputs so re-ingesting unchanged files is a no-op.
    let mut fingerprint = format!("v1|{}|{}|", args.format, args.min_count);
    let mut feed = |path: &Path| -> Result<()> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let _ = write!(fingerprint, "{}:{:016x}|", path.display(), fnv1a(&bytes));
        Ok(())
    };
    feed(&args.interactions)?;
    for path in args.attributes.iter().chain(&args.items) {
        feed(path)?;
    }
    let fingerprint = format!("{:016x}", fnv1a(fingerprint.as_bytes()));

    let dir = ctx.dataset_dir(&args.name);
    let stamp_path = dir.join("stamp.json");
    if let Ok(raw) = fs::read_to_string(&stamp_path) {
        if let Ok(stamp) = serde_json::from_str::<IngestStamp>(&raw) {
            if stamp.fingerprint == fingerprint {
                eprintln!("inputs unchanged; keeping cached dataset {:?}", args.name);
                print!("{}", stamp.summary);
                return Ok(());
            }
        }
    }

    let mut builder = DatasetBuilder::new();
    parse_interactions(&args.interactions, format, &mut builder)?;
    if let Some(path) = &args.attributes {
        parse_attributes(path, &mut builder)?;
    }
    if let Some(path) = &args.items {
        parse_item_meta(path, &mut builder)?;
    }
    let mut dataset = builder.build();
    if args.min_count > 0 {
        dataset = filter_rare_items(&dataset, args.min_count);
    }
    if dataset.interactions().is_empty() {
        return Err(Error::Dataset("no interactions survived ingestion".into()));
    }
    save_dataset(&dir, &dataset)?;
    let summary = dataset_summary(&args.name, &dataset);
    let stamp = IngestStamp {
        fingerprint,
        summary: summary.clone(),
    };
    fs::write(
        &stamp_path,
        serde_json::to_string_pretty(&stamp).expect("stamp serializes"),
    )
    .map_err(|e| Error::io(&stamp_path, e))?;
    print!("{summary}");
    Ok(())
}

fn cmd_synth(ctx: &Context, args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_users: args.users,
        n_items: args.items,
        n_clusters: args.clusters,
        attribute_name: args.attribute,
        cluster_affinity: args.affinity,
        interactions_per_user: args.per_user,
    };
    let synth = generate_synthetic(&spec, ctx.seed)?;
    let dir = ctx.dataset_dir(&args.name);
    save_dataset(&dir, &synth.dataset)?;
    // A synthetic dataset is always regenerated; drop any stale ingest stamp.
    let _ = fs::remove_file(dir.join("stamp.json"));
    print!("{}", dataset_summary(&args.name, &synth.dataset));
    Ok(())
}

fn cmd_train_rec(ctx: &Context, args: TrainRecArgs) -> Result<()> {
    let dataset = ctx.open_dataset(&args.dataset)?;
    let kind: RecKind = match &args.kind {
        Some(k) => k.parse()?,
        None => match ctx.cfg.get("original") {
            Some(k) => k.parse()?,
            None => RecKind::LightGcn,
        },
    };
    let split = split_dataset(&dataset, ctx.split_ratios()?, ctx.seed)?;
    let mut train_cfg: TrainConfig = ctx.cfg.train_config()?;
    // Same derivation `run` uses for its deployed model, so the staged and
    // one-shot paths train identical models from one master seed.
    train_cfg.seed = SeedPolicy::new(ctx.seed).derive("harness.original");
    let model = train_recommender(&dataset, &split, &train_cfg, kind)?;

    let train_pos = dataset.user_items_from(&split.train);
    let val = dataset.user_items_from(&split.validation);
    let test = dataset.user_items_from(&split.test);
    let name = args.name.unwrap_or_else(|| kind.to_string());
    let dir = ctx.model_dir(&name);
    model.save(&dir)?;
    print_kv(&[
        ("kind", kind.to_string()),
        (
            "val_hit_rate",
            format!("{:.4}", hit_rate_at_k(&model, &train_pos, &val, train_cfg.eval_k)),
        ),
        (
            "test_hit_rate",
            format!("{:.4}", hit_rate_at_k(&model, &train_pos, &test, train_cfg.eval_k)),
        ),
        ("saved", dir.display().to_string()),
    ]);
    Ok(())
}

fn cmd_confirm(ctx: &Context, args: ConfirmArgs) -> Result<()> {
    let dataset = ctx.open_dataset(&args.dataset)?;
    let original = ctx.open_model(&args.model)?;
    let k = ctx.k(args.k)?;
    let (alpha, beta) = ctx.alpha_beta(args.alpha, args.beta)?;
    let lists = ctx.served_lists(&dataset, &original, k)?;
    let partition = partition_providers(&dataset, alpha, beta, ctx.seed)?;
    if partition.interaction_providers.is_empty() {
        return Err(Error::invalid(format!(
            "alpha = {alpha} yields no interaction providers to confirm against"
        )));
    }
    let kinds: Vec<RecKind> = match args.candidates.as_deref().or(ctx.cfg.get("candidates")) {
        Some(raw) => raw
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?,
        None => vec![RecKind::Mf, RecKind::NeuMf, RecKind::Ngcf],
    };
    let mut cand_cfg = ctx.cfg.train_config()?;
    cand_cfg.seed = SeedPolicy::new(ctx.seed).derive("harness.surrogate");
    let candidates: Vec<(RecKind, TrainConfig)> =
        kinds.into_iter().map(|kd| (kd, cand_cfg.clone())).collect();
    let split = split_dataset(&dataset, ctx.split_ratios()?, ctx.seed)?;
    let (report, surrogate) = confirm_surrogate(
        &dataset,
        &split,
        &partition.interaction_providers,
        &candidates,
        &lists,
    )?;

    let dir = ctx.model_dir(&args.name);
    surrogate.save(&dir)?;
    let report_path = ctx.cache.join("reports");
    fs::create_dir_all(&report_path).map_err(|e| Error::io(&report_path, e))?;
    let report_path = report_path.join(format!("confirm-{}.tsv", args.name));
    write_report(&report_path, &report)?;

    println!("kind      rls");
    for (kind, rls) in &report.rls {
        let marker = if *kind == report.chosen { "  <- chosen" } else { "" };
        println!("{:<8}  {rls:.4}{marker}", kind.to_string());
    }
    for (kind, why) in &report.failed {
        println!("{:<8}  failed: {why}", kind.to_string());
    }
    print_kv(&[
        ("saved", dir.display().to_string()),
        ("report", report_path.display().to_string()),
    ]);
    Ok(())
}

fn cmd_align(ctx: &Context, args: AlignArgs) -> Result<()> {
    let dataset = ctx.open_dataset(&args.dataset)?;
    let policy = SeedPolicy::new(ctx.seed);
    let content = content_embeddings(
        &dataset,
        &ctx.embedding_source()?,
        policy.derive("harness.content"),
    )?;
    let mut align_cfg = ctx.cfg.align_config()?;
    align_cfg.seed = policy.derive("harness.align");

    let (unified, stats, mode) = match &args.surrogate {
        Some(name) => {
            let surrogate = ctx.open_model(name)?;
            let (alpha, beta) = ctx.alpha_beta(args.alpha, args.beta)?;
            let partition = partition_providers(&dataset, alpha, beta, ctx.seed)?;
            let (e, stats) =
                unified_space_surrogate(&dataset, &surrogate, &partition, &content, &align_cfg)?;
            (e, stats, "surrogate")
        }
        None => {
            let original = ctx.open_model(&args.model)?;
            let lists = ctx.served_lists(&dataset, &original, ctx.k(args.k)?)?;
            let l3 = ctx.cfg.train_config()?.dim;
            let (e, stats) = unified_space_fallback(
                &dataset,
                &lists,
                &content,
                l3,
                &align_cfg,
                policy.derive("harness.fallback"),
            )?;
            (e, Some(stats), "co-occurrence fallback")
        }
    };

    let out_dir = ctx.cache.join("aligned");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let out = out_dir.join(format!("{}.txt", args.name));
    write_embedding_table(&out, &unified.to_table(&dataset))?;

    let mut rows = vec![("targets", mode.to_string())];
    match stats {
        Some(s) => {
            rows.push(("initial_res", format!("{:.4}", s.initial_train_res)));
            rows.push(("train_res", format!("{:.4}", s.train_res)));
            rows.push(("holdout_res", format!("{:.4}", s.holdout_res)));
        }
        None => rows.push(("note", "surrogate covers every item; nothing to align".into())),
    }
    rows.push(("saved", out.display().to_string()));
    print_kv(&rows);
    Ok(())
}

fn cmd_augment(ctx: &Context, args: AugmentArgs) -> Result<()> {
    let dataset = ctx.open_dataset(&args.dataset)?;
    let original = ctx.open_model(&args.model)?;
    let k = ctx.k(args.k)?;
    let k2 = match args.k2 {
        Some(v) => v,
        None => ctx.cfg.get_parsed("k2")?.unwrap_or(50),
    };
    let lists = ctx.served_lists(&dataset, &original, k)?;

    let cached = ctx.cache.join("aligned").join(format!("{}.txt", args.embeddings));
    let table_path = if cached.is_file() {
        cached
    } else if Path::new(&args.embeddings).is_file() {
        PathBuf::from(&args.embeddings)
    } else {
        return Err(Error::missing(
            "embedding table",
            format!("{}: not in the cache; produce it with `align`", args.embeddings),
        ));
    };
    let table = load_embedding_table(&table_path)?;
    let vecs = (0..dataset.n_items() as u32)
        .map(|i| {
            table
                .get(dataset.item_id(i))
                .map(|v| v.to_vec())
                .ok_or_else(|| {
                    Error::missing(
                        "embedding table row",
                        format!("item {}: re-run `align` for this dataset", dataset.item_id(i)),
                    )
                })
        })
        .collect::<Result<Vec<_>>>()?;
    let unified = UnifiedEmbedding::from_vectors(vecs, Provenance::Aligned)?;

    let rows = augment_all_lists(&unified, &lists, dataset.n_items(), k2)?;
    let out_dir = ctx.cache.join("augmented");
    fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let out = out_dir.join(format!("{}.tsv", args.name));
    write_augmented_lists(&out, &dataset, &rows)?;
    print_kv(&[
        ("lists", rows.len().to_string()),
        ("length", format!("{k} -> {k2}")),
        ("saved", out.display().to_string()),
    ]);
    Ok(())
}

fn print_scenario_report(dataset: &Dataset, report: &ScenarioReport) {
    let mut rows = vec![
        ("dataset", report.dataset.clone()),
        ("scenario", report.scenario.to_string()),
        ("method", report.method.clone()),
        ("attribute", report.attribute.clone()),
        ("alpha", report.alpha.to_string()),
        ("beta", report.beta.to_string()),
        ("seed", report.seed.to_string()),
        ("train_users", report.n_train.to_string()),
        ("eval_users", report.n_eval.to_string()),
        ("accuracy", format!("{:.4}", report.metrics.accuracy)),
        ("macro_f1", format!("{:.4}", report.metrics.macro_f1)),
        ("runtime_s", format!("{:.2}", report.runtime_s)),
    ];
    if let Some(s) = &report.surrogate {
        let table: Vec<String> = s
            .rls
            .iter()
            .map(|(kind, rls)| format!("{kind} {rls:.4}"))
            .collect();
        rows.push(("surrogate", format!("{} of [{}]", s.chosen, table.join(", "))));
    }
    if let Some(a) = &report.alignment {
        rows.push((
            "alignment",
            format!("res train {:.4}, holdout {:.4}", a.train_res, a.holdout_res),
        ));
    }
    if report.cooccurrence_fallback {
        rows.push(("note", "alignment used co-occurrence pseudo-targets".into()));
    }
    if report.single_class_truth {
        rows.push(("note", "evaluation truth covers a single class".into()));
    }
    print_kv(&rows);

    if let Some(attr) = dataset.attribute(&report.attribute) {
        println!();
        println!("class       precision  recall  f1      support");
        for (code, m) in report.metrics.per_class.iter().enumerate() {
            println!(
                "{:<10}  {:<9.4}  {:<6.4}  {:<6.4}  {}",
                attr.label_of(code as u32),
                m.precision,
                m.recall,
                m.f1,
                m.support
            );
        }
    }
}

fn cmd_run(ctx: &Context, args: RunArgs) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    cfg.set("dataset.name", &args.dataset)?;
    let flags: [(&str, Option<String>); 8] = [
        ("scenario", args.scenario.map(|v| v.to_string())),
        ("attribute", args.attribute.clone()),
        ("alpha", args.alpha.map(|v| v.to_string())),
        ("beta", args.beta.map(|v| v.to_string())),
        ("method", args.method.clone()),
        ("k", args.k.map(|v| v.to_string())),
        ("k2", args.k2.map(|v| v.to_string())),
        ("robustness.fraction", args.robustness.map(|v| v.to_string())),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    let scenario_cfg = cfg.scenario_config()?;
    let dataset = ctx.open_dataset(&args.dataset)?;
    let models_dir = ctx.cache.join("models");
    fs::create_dir_all(&models_dir).map_err(|e| Error::io(&models_dir, e))?;
    let report = run_scenario(&dataset, &scenario_cfg, Some(&models_dir))?;
    print_scenario_report(&dataset, &report);
    if let Some(out) = &args.out {
        write_predictions(out, &dataset, &report.attribute, &report.predictions)?;
        eprintln!("predictions written to {}", out.display());
    }
    Ok(())
}

fn cmd_sweep(ctx: &Context, args: SweepArgs) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    cfg.set("dataset.name", &args.dataset)?;
    let flags: [(&str, Option<String>); 6] = [
        ("scenario", args.scenario.map(|v| v.to_string())),
        ("attribute", args.attribute.clone()),
        ("sweep.alphas", args.alphas.clone()),
        ("sweep.betas", args.betas.clone()),
        ("sweep.methods", args.methods.clone()),
        ("sweep.seeds", args.seeds.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    let spec = cfg.sweep_spec(cfg.scenario_config()?)?;
    let dataset = ctx.open_dataset(&args.dataset)?;
    let out = args.out.clone().unwrap_or_else(|| ctx.cache.join("sweep"));
    let table = sweep(&dataset, &spec, &out, ctx.workers)?;
    for (cell, why) in &table.failed {
        eprintln!("{cell}: {why}");
    }
    print_kv(&[
        ("cells_ok", table.rows.len().to_string()),
        ("cells_failed", table.failed.len().to_string()),
        ("results", out.join("results.csv").display().to_string()),
        ("aggregated", out.join("aggregated.csv").display().to_string()),
    ]);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let path = if args.path.is_dir() {
        args.path.join("aggregated.csv")
    } else {
        args.path.clone()
    };
    if !path.is_file() {
        return Err(Error::missing(
            "aggregated results",
            format!("{}: produce them with `sweep`", path.display()),
        ));
    }
    let rows: Vec<AggregateRow> = read_csv(&path)?;
    let header = [
        "dataset", "scenario", "method", "attribute", "alpha", "beta", "seeds", "accuracy",
        "macro_f1",
    ];
    let mut cells: Vec<[String; 9]> = Vec::with_capacity(rows.len());
    for r in &rows {
        cells.push([
            r.dataset.clone(),
            r.scenario.to_string(),
            r.method.clone(),
            r.attribute.clone(),
            r.alpha.to_string(),
            r.beta.to_string(),
            r.n_seeds.to_string(),
            format!("{:.4}", r.accuracy),
            format!("{:.4}", r.macro_f1),
        ]);
    }
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in &cells {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let print_row = |cols: &[String]| {
        let line: Vec<String> = cols
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        println!("{}", line.join("  ").trim_end());
    };
    print_row(&header.map(String::from));
    for row in &cells {
        print_row(row);
    }
    Ok(())
}
