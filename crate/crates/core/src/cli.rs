//! Command-line driver for the full link-prediction workflow.
//!
//! Five stages share one run configuration and one output directory:
//!
//! 1. `split` — hold out a random fraction of incidences and build the
//!    balanced test set,
//! 2. `mine` — enumerate size-bounded formal concepts of the training
//!    context,
//! 3. `prepare` — turn concepts and context into padded training samples,
//! 4. `train` — fit the encoder classifier and write a checkpoint,
//! 5. `evaluate` — score the held-out pairs with the model or a baseline
//!    and report F1/AUC/AUPR.
//!
//! `pipeline` chains all five. Every stage reads its inputs from the output
//! directory (fixed file names), so running the stages manually one by one
//! produces byte-identical artifacts to a single `pipeline` invocation.
//!
//! Configuration precedence: built-in defaults, then a `--config` JSON file,
//! then individual flags. The effective configuration (seed included) is
//! echoed into every artifact's metadata: TSV/CSV artifacts get a
//! `<name>.meta.json` sidecar, while the samples file, the checkpoint, and
//! the evaluation reports carry it in-band.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::baselines::{Heuristic, SvdModel, heuristic_score};
use crate::concepts::{SizeBounds, mine_significant, read_concepts, write_concepts};
use crate::context::{
    generate_test_set, load_context_path, read_test_set, split_input_target, write_context,
    write_pairs, write_test_set,
};
use crate::encoder::{
    EncoderConfig, TrainOptions, TrainSample, load_checkpoint, predict, save_checkpoint, train,
};
use crate::{Error, Result};
use crate::metrics::{ScoredPair, compute_metrics_pairs, write_predictions, write_report};
use crate::samples::{
    Vocabulary, build_intermediate_sets, generate_concept_samples, generate_context_samples,
    pad_samples, read_samples, tokenize, write_samples,
};

/// Effective run configuration shared by all subcommands.
///
/// Serialized form is JSON with these field names; a config file may supply
/// any subset (missing fields keep their defaults, unknown fields are
/// rejected). Command-line flags override file values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Source context TSV ("object<TAB>attribute" lines); consumed by `split`.
    pub context: Option<PathBuf>,
    /// Directory all artifacts are written to and read from.
    pub out_dir: PathBuf,
    /// Fraction of incidences held out as test positives, in (0, 1).
    pub fraction: f64,
    /// Minimum extent size for mined concepts (required by `mine`).
    pub l1: Option<usize>,
    /// Maximum extent size; absent means unbounded.
    pub u1: Option<usize>,
    /// Minimum intent size for mined concepts (required by `mine`).
    pub l2: Option<usize>,
    /// Maximum intent size; absent means unbounded.
    pub u2: Option<usize>,
    /// Distractor corruption ratio in (0, 1): share of each concept side
    /// replaced by outsiders when negatives are generated.
    pub k: f64,
    /// Encoder size profile; individual dimension fields override it.
    pub profile: Profile,
    pub model_dim: Option<usize>,
    pub num_layers: Option<usize>,
    pub num_heads: Option<usize>,
    pub ffn_dim: Option<usize>,
    pub mlp_hidden: Option<usize>,
    /// Dropout probability applied while training.
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Adam learning rate.
    pub lr: f64,
    /// Decoupled weight decay; 0 disables it.
    pub weight_decay: f64,
    /// Rank of the truncated-SVD baseline.
    pub svd_rank: usize,
    /// Score threshold separating predicted links from non-links.
    pub threshold: f64,
    /// Scorers run by `evaluate` (and the pipeline).
    pub methods: Vec<Method>,
    /// Root seed; every random stream in every stage derives from it.
    pub seed: u64,
    /// Worker threads for training; 1 is sequential and bit-deterministic.
    pub threads: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            context: None,
            out_dir: PathBuf::from("out"),
            fraction: 0.1,
            l1: None,
            u1: None,
            l2: None,
            u2: None,
            k: 0.5,
            profile: Profile::Desk,
            model_dim: None,
            num_layers: None,
            num_heads: None,
            ffn_dim: None,
            mlp_hidden: None,
            dropout: 0.1,
            epochs: 30,
            batch_size: 24,
            lr: 1e-4,
            weight_decay: 0.0,
            svd_rank: 64,
            threshold: 0.5,
            methods: vec![Method::Model],
            seed: 7,
            threads: 1,
        }
    }
}

/// Encoder size presets. `desk` is small enough for laptops and CI; `full`
/// is the large configuration for real datasets. Any preset dimension can be
/// overridden individually via config or flags.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    Desk,
    Full,
}

/// Link scorers available to `evaluate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Common-neighbors count.
    Cn,
    /// Jaccard overlap.
    Jc,
    /// Adamic–Adar (inverse-log-degree weighting).
    Aa,
    /// Resource allocation (inverse-degree weighting).
    Ra,
    /// Truncated-SVD reconstruction score.
    Svd,
    /// The trained encoder classifier.
    Model,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Cn => "cn",
            Method::Jc => "jc",
            Method::Aa => "aa",
            Method::Ra => "ra",
            Method::Svd => "svd",
            Method::Model => "model",
        }
    }

    fn heuristic(self) -> Option<Heuristic> {
        match self {
            Method::Cn => Some(Heuristic::CommonNeighbors),
            Method::Jc => Some(Heuristic::Jaccard),
            Method::Aa => Some(Heuristic::AdamicAdar),
            Method::Ra => Some(Heuristic::ResourceAllocation),
            Method::Svd | Method::Model => None,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Fixed artifact locations inside the output directory.
pub struct Artifacts {
    dir: PathBuf,
}

impl Artifacts {
    pub fn new(dir: &Path) -> Self {
        Artifacts {
            dir: dir.to_path_buf(),
        }
    }

    /// Training context: the source context minus the held-out edges.
    pub fn input_context(&self) -> PathBuf {
        self.dir.join("input_context.tsv")
    }

    /// The held-out edges (test positives).
    pub fn removed_edges(&self) -> PathBuf {
        self.dir.join("removed_edges.tsv")
    }

    /// Balanced labeled test pairs.
    pub fn test_set(&self) -> PathBuf {
        self.dir.join("test_set.tsv")
    }

    /// Mined size-bounded concepts.
    pub fn concepts(&self) -> PathBuf {
        self.dir.join("concepts.tsv")
    }

    /// Padded training samples.
    pub fn samples(&self) -> PathBuf {
        self.dir.join("samples.jsonl")
    }

    /// Trained model checkpoint.
    pub fn checkpoint(&self) -> PathBuf {
        self.dir.join("model.ckpt")
    }

    /// Per-epoch training log.
    pub fn train_log(&self) -> PathBuf {
        self.dir.join("train_log.csv")
    }

    /// Per-pair scores for one evaluation method.
    pub fn predictions(&self, method: Method) -> PathBuf {
        self.dir.join(format!("predictions_{method}.tsv"))
    }

    /// Metrics report for one evaluation method.
    pub fn report(&self, method: Method) -> PathBuf {
        self.dir.join(format!("report_{method}.json"))
    }
}

/// Provenance sidecar written next to TSV/CSV artifacts (which have no room
/// for in-band metadata): `<artifact>.meta.json`.
pub fn sidecar_path(artifact: &Path) -> PathBuf {
    let mut name = artifact.as_os_str().to_os_string();
    name.push(".meta.json");
    PathBuf::from(name)
}

#[derive(Serialize)]
struct Sidecar<'a> {
    artifact: String,
    seed: u64,
    config: &'a RunConfig,
}

fn write_sidecar(artifact: &Path, cfg: &RunConfig) -> Result<()> {
    let meta = Sidecar {
        artifact: artifact
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        seed: cfg.seed,
        config: cfg,
    };
    let path = sidecar_path(artifact);
    let as_path = || path.display().to_string();
    let mut text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(as_path(), e))?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| Error::io(as_path(), e))
}

// ---------------------------------------------------------------------------
// argument parsing

#[derive(Parser, Debug)]
#[command(
    name = "bilink",
    version,
    about = "Link prediction in bipartite networks from significant maximal bi-cliques",
    long_about = "Link prediction in bipartite networks: mines size-bounded formal concepts \
                  (maximal bi-cliques) from an object-attribute incidence relation, turns them \
                  into positive/negative training samples, trains a set-input Transformer \
                  classifier on them, and evaluates link scores against neighborhood and SVD \
                  baselines."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Hold out a random fraction of incidences and build the balanced test set
    Split(SplitArgs),
    /// Mine size-bounded formal concepts from the training context
    Mine(MineArgs),
    /// Generate padded positive/negative training samples
    Prepare(PrepareArgs),
    /// Train the encoder classifier and write a checkpoint
    Train(TrainArgs),
    /// Score the held-out pairs and report F1/AUC/AUPR
    Evaluate(EvaluateArgs),
    /// Run split, mine, prepare, train, and evaluate in one go
    Pipeline(PipelineArgs),
}

/// Flags shared by every subcommand.
#[derive(Args, Debug, Default)]
pub struct CommonArgs {
    /// JSON run-configuration file; flags override its values
    #[arg(long, global = false)]
    pub config: Option<PathBuf>,
    /// Directory artifacts are written to and read from
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Root seed for every random stream
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for training (1 = sequential, bit-deterministic)
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct SplitFlags {
    /// Source context TSV ("object<TAB>attribute" lines)
    #[arg(long)]
    pub context: Option<PathBuf>,
    /// Held-out fraction of incidences, in (0, 1)
    #[arg(long)]
    pub fraction: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct BoundsFlags {
    /// Minimum extent (object-set) size
    #[arg(long)]
    pub l1: Option<usize>,
    /// Maximum extent size (omit for unbounded)
    #[arg(long)]
    pub u1: Option<usize>,
    /// Minimum intent (attribute-set) size
    #[arg(long)]
    pub l2: Option<usize>,
    /// Maximum intent size (omit for unbounded)
    #[arg(long)]
    pub u2: Option<usize>,
}

#[derive(Args, Debug, Default)]
pub struct PrepareFlags {
    /// Distractor corruption ratio, in (0, 1)
    #[arg(long)]
    pub k: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct ModelFlags {
    /// Encoder size profile
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Embedding/hidden width (overrides the profile)
    #[arg(long)]
    pub model_dim: Option<usize>,
    /// Encoder layer count (overrides the profile)
    #[arg(long)]
    pub num_layers: Option<usize>,
    /// Attention head count (overrides the profile)
    #[arg(long)]
    pub num_heads: Option<usize>,
    /// Feed-forward inner width (overrides the profile)
    #[arg(long)]
    pub ffn_dim: Option<usize>,
    /// Classification-head hidden width (overrides the profile)
    #[arg(long)]
    pub mlp_hidden: Option<usize>,
    /// Dropout probability while training
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Training epochs
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Mini-batch size
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Adam learning rate
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay (0 disables it)
    #[arg(long)]
    pub weight_decay: Option<f64>,
}

#[derive(Args, Debug, Default)]
pub struct EvalFlags {
    /// Scorer to run; repeat the flag to evaluate several
    #[arg(long = "method", value_enum)]
    pub methods: Vec<Method>,
    /// Rank of the truncated-SVD baseline
    #[arg(long)]
    pub svd_rank: Option<usize>,
    /// Score threshold separating predicted links from non-links
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SplitArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub split: SplitFlags,
}

#[derive(Args, Debug)]
pub struct MineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub bounds: BoundsFlags,
}

#[derive(Args, Debug)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub prepare: PrepareFlags,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub model: ModelFlags,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub eval: EvalFlags,
}

#[derive(Args, Debug)]
pub struct PipelineArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    #[command(flatten)]
    pub split: SplitFlags,
    #[command(flatten)]
    pub bounds: BoundsFlags,
    #[command(flatten)]
    pub prepare: PrepareFlags,
    #[command(flatten)]
    pub model: ModelFlags,
    #[command(flatten)]
    pub eval: EvalFlags,
}

impl CommonArgs {
    /// Defaults, overlaid by the config file, overlaid by the common flags.
    fn base_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                let as_path = || path.display().to_string();
                let text = std::fs::read_to_string(path).map_err(|e| Error::io(as_path(), e))?;
                serde_json::from_str(&text).map_err(|e| Error::json(as_path(), e))?
            }
            None => RunConfig::default(),
        };
        if let Some(dir) = &self.out_dir {
            cfg.out_dir = dir.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(threads) = self.threads {
            cfg.threads = threads;
        }
        if cfg.threads == 0 {
            return Err(Error::BadConfig("threads must be at least 1".into()));
        }
        Ok(cfg)
    }
}

impl SplitFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(context) = &self.context {
            cfg.context = Some(context.clone());
        }
        if let Some(fraction) = self.fraction {
            cfg.fraction = fraction;
        }
    }
}

impl BoundsFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(l1) = self.l1 {
            cfg.l1 = Some(l1);
        }
        if let Some(u1) = self.u1 {
            cfg.u1 = Some(u1);
        }
        if let Some(l2) = self.l2 {
            cfg.l2 = Some(l2);
        }
        if let Some(u2) = self.u2 {
            cfg.u2 = Some(u2);
        }
    }
}

impl PrepareFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(k) = self.k {
            cfg.k = k;
        }
    }
}

impl ModelFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if let Some(profile) = self.profile {
            cfg.profile = profile;
        }
        if let Some(v) = self.model_dim {
            cfg.model_dim = Some(v);
        }
        if let Some(v) = self.num_layers {
            cfg.num_layers = Some(v);
        }
        if let Some(v) = self.num_heads {
            cfg.num_heads = Some(v);
        }
        if let Some(v) = self.ffn_dim {
            cfg.ffn_dim = Some(v);
        }
        if let Some(v) = self.mlp_hidden {
            cfg.mlp_hidden = Some(v);
        }
        if let Some(v) = self.dropout {
            cfg.dropout = v;
        }
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
    }
}

impl EvalFlags {
    fn apply(&self, cfg: &mut RunConfig) {
        if !self.methods.is_empty() {
            cfg.methods = self.methods.clone();
        }
        if let Some(v) = self.svd_rank {
            cfg.svd_rank = v;
        }
        if let Some(v) = self.threshold {
            cfg.threshold = v;
        }
    }
}

impl SplitArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.split.apply(&mut cfg);
        Ok(cfg)
    }
}

impl MineArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.bounds.apply(&mut cfg);
        Ok(cfg)
    }
}

impl PrepareArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.prepare.apply(&mut cfg);
        Ok(cfg)
    }
}

impl TrainArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.model.apply(&mut cfg);
        Ok(cfg)
    }
}

impl EvaluateArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.eval.apply(&mut cfg);
        Ok(cfg)
    }
}

impl PipelineArgs {
    pub fn into_config(&self) -> Result<RunConfig> {
        let mut cfg = self.common.base_config()?;
        self.split.apply(&mut cfg);
        self.bounds.apply(&mut cfg);
        self.prepare.apply(&mut cfg);
        self.model.apply(&mut cfg);
        self.eval.apply(&mut cfg);
        Ok(cfg)
    }
}

/// Dispatch a parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Split(args) => cmd_split(&args.into_config()?),
        Command::Mine(args) => cmd_mine(&args.into_config()?),
        Command::Prepare(args) => cmd_prepare(&args.into_config()?),
        Command::Train(args) => cmd_train(&args.into_config()?),
        Command::Evaluate(args) => cmd_evaluate(&args.into_config()?),
        Command::Pipeline(args) => cmd_pipeline(&args.into_config()?),
    }
}

fn require_input(path: &Path, hint: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::MissingInput(format!("{} ({hint})", path.display())))
    }
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<Artifacts> {
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| Error::io(cfg.out_dir.display().to_string(), e))?;
    Ok(Artifacts::new(&cfg.out_dir))
}

fn bounds_from(cfg: &RunConfig) -> Result<SizeBounds> {
    let l1 = cfg
        .l1
        .ok_or_else(|| Error::BadConfig("mining needs l1, the minimum extent size".into()))?;
    let l2 = cfg
        .l2
        .ok_or_else(|| Error::BadConfig("mining needs l2, the minimum intent size".into()))?;
    SizeBounds::new(l1, cfg.u1, l2, cfg.u2)
}

/// Build the encoder configuration from the profile plus any overrides.
fn encoder_config(
    cfg: &RunConfig,
    vocab_size: usize,
    l_ext: usize,
    l_int: usize,
) -> Result<EncoderConfig> {
    let mut enc = match cfg.profile {
        Profile::Desk => EncoderConfig::desk(vocab_size, l_ext, l_int, cfg.seed),
        Profile::Full => EncoderConfig::full(vocab_size, l_ext, l_int, cfg.seed),
    };
    if let Some(v) = cfg.model_dim {
        enc.model_dim = v;
    }
    if let Some(v) = cfg.num_layers {
        enc.num_layers = v;
    }
    if let Some(v) = cfg.num_heads {
        enc.num_heads = v;
    }
    if let Some(v) = cfg.ffn_dim {
        enc.ffn_dim = v;
    }
    if let Some(v) = cfg.mlp_hidden {
        enc.mlp_hidden = v;
    }
    enc.dropout = cfg.dropout;
    enc.validate()?;
    Ok(enc)
}

/// Hold out `fraction` of the incidences, write the training context, the
/// removed edges, and a balanced test set whose negatives avoid both the
/// original relation and the training negatives that `prepare` will draw.
pub fn cmd_split(cfg: &RunConfig) -> Result<()> {
    let source = cfg.context.as_ref().ok_or_else(|| {
        Error::BadConfig("split needs a source context (--context or \"context\" in the config)".into())
    })?;
    require_input(source, "source context file")?;
    let ctx = load_context_path(source)?;
    let split = split_input_target(&ctx, cfg.fraction, cfg.seed)?;

    let art = ensure_out_dir(cfg)?;
    write_context(&art.input_context(), &split.input_context)?;
    write_sidecar(&art.input_context(), cfg)?;
    write_pairs(&art.removed_edges(), &split.input_context, &split.removed_edges)?;
    write_sidecar(&art.removed_edges(), cfg)?;

    // Re-read the training context exactly as `prepare` will, then preview
    // the training negatives it will draw, so the test negatives can avoid
    // them. The reloaded universe may be smaller (nodes that lost every edge
    // disappear), which is why the preview pairs are mapped back by name.
    let reduced = load_context_path(&art.input_context())?;
    let preview = generate_context_samples(&reduced, cfg.seed);
    let t_n: Vec<(usize, usize)> = preview
        .negatives
        .iter()
        .map(|&(g, m)| {
            let g = split
                .input_context
                .object_idx(reduced.object_id(g))
                .expect("reloaded objects are a subset of the split registry");
            let m = split
                .input_context
                .attribute_idx(reduced.attribute_id(m))
                .expect("reloaded attributes are a subset of the split registry");
            (g, m)
        })
        .collect();
    let test = generate_test_set(&split, &t_n, cfg.seed);
    for warning in &test.warnings {
        log::warn!("split: {warning}");
    }
    write_test_set(&art.test_set(), &split.input_context, &test)?;
    write_sidecar(&art.test_set(), cfg)?;

    log::info!(
        "split: kept {} incidences, held out {}, test set {}+{} pairs",
        split.input_context.n_incidences(),
        split.removed_edges.len(),
        test.positives.len(),
        test.negatives.len(),
    );
    Ok(())
}

/// Mine all formal concepts within the configured size bounds and write them
/// to `concepts.tsv`. Bounds that admit nothing still succeed: the file is
/// written empty (header only) and a warning is logged.
pub fn cmd_mine(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out_dir(cfg)?;
    require_input(&art.input_context(), "run `bilink split` first")?;
    let ctx = load_context_path(&art.input_context())?;
    let bounds = bounds_from(cfg)?;
    let set = mine_significant(&ctx, bounds)?;
    if set.concepts.is_empty() {
        log::warn!(
            "mine: bounds {bounds} admit no concepts; `prepare` will fail until they are loosened"
        );
    }
    write_concepts(&art.concepts(), &ctx, &set)?;
    write_sidecar(&art.concepts(), cfg)?;
    log::info!("mine: {} concepts within {bounds}", set.concepts.len());
    Ok(())
}

/// Corrupt the mined concepts into distractors and emit the padded sample
/// file: concept positives/negatives first, then edge positives/negatives.
pub fn cmd_prepare(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out_dir(cfg)?;
    require_input(&art.input_context(), "run `bilink split` first")?;
    require_input(&art.concepts(), "run `bilink mine` first")?;
    let ctx = load_context_path(&art.input_context())?;
    let set = read_concepts(&art.concepts(), &ctx)?;

    let sets = build_intermediate_sets(&set, &ctx, cfg.k, cfg.seed)?;
    for warning in &sets.warnings {
        log::warn!("prepare: {warning}");
    }
    let concept = generate_concept_samples(&sets, &ctx);
    for warning in &concept.warnings {
        log::warn!("prepare: {warning}");
    }
    let context = generate_context_samples(&ctx, cfg.seed);
    for warning in &context.warnings {
        log::warn!("prepare: {warning}");
    }
    let padded = pad_samples(&concept, &context);
    write_samples(&art.samples(), &ctx, &padded, cfg.k, cfg.seed, set.bounds)?;
    log::info!(
        "prepare: {} samples ({}+{} concept, {}+{} edge; l_ext {}, l_int {})",
        padded.samples.len(),
        padded.n_concept_pos,
        padded.n_concept_neg,
        padded.n_context_pos,
        padded.n_context_neg,
        padded.l_ext,
        padded.l_int,
    );
    Ok(())
}

/// Train the encoder on the prepared samples and write the checkpoint plus a
/// per-epoch `train_log.csv` (one data row per epoch).
pub fn cmd_train(cfg: &RunConfig) -> Result<()> {
    let art = ensure_out_dir(cfg)?;
    require_input(&art.input_context(), "run `bilink split` first")?;
    require_input(&art.samples(), "run `bilink prepare` first")?;
    let ctx = load_context_path(&art.input_context())?;
    let vocab = Vocabulary::from_context(&ctx)?;
    let (samples, _meta) = read_samples(&art.samples(), &vocab)?;

    let enc = encoder_config(cfg, vocab.size(), samples.l_ext, samples.l_int)?;
    let train_samples: Vec<TrainSample> = samples
        .samples
        .iter()
        .map(|s| {
            Ok(TrainSample {
                tokens: tokenize(s, &vocab)?,
                label: s.label,
            })
        })
        .collect::<Result<_>>()?;
    let opts = TrainOptions {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        weight_decay: cfg.weight_decay,
        threads: cfg.threads,
        ..TrainOptions::default()
    };
    let (params, report) = train(&train_samples, &enc, &opts)?;
    save_checkpoint(&art.checkpoint(), &enc, &vocab, &params)?;

    let mut log_text = String::from("epoch,mean_loss,seconds\n");
    for (i, (loss, secs)) in report
        .epoch_losses
        .iter()
        .zip(&report.epoch_seconds)
        .enumerate()
    {
        log_text.push_str(&format!("{},{},{:.3}\n", i + 1, loss, secs));
    }
    let log_path = art.train_log();
    std::fs::write(&log_path, log_text)
        .map_err(|e| Error::io(log_path.display().to_string(), e))?;
    write_sidecar(&log_path, cfg)?;

    log::info!(
        "train: {} epochs in {:.1}s{}",
        report.epochs_run(),
        report.wall_seconds,
        report
            .epoch_losses
            .last()
            .map(|l| format!(", final mean loss {l:.6}"))
            .unwrap_or_default(),
    );
    Ok(())
}

/// Score every test pair with each configured method, writing
/// `predictions_<method>.tsv` and `report_<method>.json`. Pairs naming nodes
/// outside the scorer's universe (all their edges were held out) score 0.0
/// and are counted in the report metadata.
pub fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    if cfg.methods.is_empty() {
        return Err(Error::BadConfig("evaluate needs at least one --method".into()));
    }
    let art = ensure_out_dir(cfg)?;
    require_input(&art.input_context(), "run `bilink split` first")?;
    require_input(&art.test_set(), "run `bilink split` first")?;
    if cfg.methods.contains(&Method::Model) {
        require_input(&art.checkpoint(), "run `bilink train` first")?;
    }
    let ctx = load_context_path(&art.input_context())?;
    let rows = read_test_set(&art.test_set())?;

    for &method in &cfg.methods {
        let (pairs, unknown) = score_pairs(cfg, &art, &ctx, &rows, method)?;
        if unknown > 0 {
            log::warn!(
                "evaluate[{method}]: {unknown} of {} pairs name nodes without training edges; scored 0.0",
                pairs.len(),
            );
        }
        let mut report = compute_metrics_pairs(&pairs, cfg.threshold)?;
        report.meta.insert("method".into(), method.as_str().into());
        report.meta.insert("seed".into(), cfg.seed.into());
        report
            .meta
            .insert("unknown_member_pairs".into(), (unknown as u64).into());
        report.meta.insert(
            "config".into(),
            serde_json::to_value(cfg)
                .map_err(|e| Error::json("run configuration".to_string(), e))?,
        );
        write_predictions(&art.predictions(method), &pairs)?;
        write_sidecar(&art.predictions(method), cfg)?;
        write_report(&art.report(method), &report)?;
        log::info!(
            "evaluate[{method}]: f1 {:.4}, auc {:.4}, aupr {:.4} on {} pairs",
            report.f1,
            report.auc,
            report.aupr,
            pairs.len(),
        );
    }
    Ok(())
}

fn score_pairs(
    cfg: &RunConfig,
    art: &Artifacts,
    ctx: &crate::context::FormalContext,
    rows: &[(String, String, bool)],
    method: Method,
) -> Result<(Vec<ScoredPair>, usize)> {
    type Scorer<'a> = Box<dyn FnMut(&str, &str) -> Result<f64> + 'a>;
    let mut unknown = 0usize;
    let mut score_one: Scorer<'_> = match method {
        Method::Model => {
            let (enc, vocab, params) = load_checkpoint(&art.checkpoint())?;
            Box::new(move |object, attribute| {
                predict(&params, &enc, &vocab, &[object], &[attribute])
            })
        }
        Method::Svd => {
            let model = SvdModel::fit(ctx, cfg.svd_rank)?;
            Box::new(move |object, attribute| model.score(ctx, object, attribute))
        }
        _ => {
            let kind = method.heuristic().expect("cn/jc/aa/ra map to a heuristic");
            Box::new(move |object, attribute| heuristic_score(ctx, object, attribute, kind))
        }
    };

    let mut pairs = Vec::with_capacity(rows.len());
    for (object, attribute, label) in rows {
        let score = match score_one(object, attribute) {
            Ok(s) => s,
            Err(Error::UnknownMember { .. }) | Err(Error::UnknownNode { .. }) => {
                unknown += 1;
                0.0
            }
            Err(e) => return Err(e),
        };
        pairs.push(ScoredPair {
            object: object.clone(),
            attribute: attribute.clone(),
            score,
            label: *label,
        });
    }
    Ok((pairs, unknown))
}

/// All five stages in order over one shared configuration. Each stage reads
/// its inputs back from the output directory, so the artifacts are identical
/// to running the subcommands manually.
pub fn cmd_pipeline(cfg: &RunConfig) -> Result<()> {
    cmd_split(cfg)?;
    cmd_mine(cfg)?;
    cmd_prepare(cfg)?;
    cmd_train(cfg)?;
    cmd_evaluate(cfg)
}
