//! The `seeds` command line.

use std::collections::HashMap;
use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seeds_core::bridge::{Bridge, BridgeConfig};
use seeds_core::composer::{CombinationJob, Composer, DEFAULT_SEEDS};
use seeds_core::decompose::{decompose, DecomposeParams};
use seeds_core::eval::{
    aggregate_user_study, run_combination_benchmark, score_decompositions, ClipInterpolationMethod, CombinationMethod,
    DescriptionRecord, OursMethod, PairRecord, StudyResponse,
};
use seeds_core::forge::{build_canvases, build_pool, mint_batch, PoolRecord, PoolSpec, TripletRecord, TripletStatus};
use seeds_core::manifest::{read_manifest, write_manifest, ManifestRecord, ManifestWriter};
use seeds_core::sae::{load_sae, mean_loss, synthetic_sparse_data, train_toy_sae};
use seeds_core::store::ImageStore;
use seeds_core::tuner::{emit_config, smoke_train_observed, MockBackend, TrainConfig};
use tracing_subscriber::EnvFilter;

use crate::api::{serve, AppState};

#[derive(Debug, Parser)]
#[command(name = "seeds", version, about = "Decompose, combine and evaluate images in CLIP space")]
pub struct Cli {
    /// Bridge configuration (TOML).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Use the deterministic offline models regardless of the config.
    #[arg(long, global = true)]
    pub mock: bool,
    /// Content-addressed store; manifests default to `<store>/manifests`.
    #[arg(long, global = true, env = "SEEDS_STORE", default_value = "seeds-store")]
    pub store: PathBuf,
    /// Worker threads for item-parallel commands.
    #[arg(long, global = true, default_value_t = 4)]
    pub workers: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Source image pool.
    #[command(subcommand)]
    Pool(PoolCmd),
    /// Split one image into two aspects.
    Decompose(DecomposeCmd),
    /// Triplets and conditioning canvases.
    #[command(subcommand)]
    Dataset(DatasetCmd),
    /// Fine-tuning configuration.
    #[command(subcommand, name = "train-config")]
    TrainConfig(TrainConfigCmd),
    /// Desk-scale training.
    #[command(subcommand)]
    Train(TrainCmd),
    /// Combine two images under a seed batch.
    Combine(CombineCmd),
    /// Reference methods.
    #[command(subcommand)]
    Baseline(BaselineCmd),
    /// Benchmarks and study aggregation.
    #[command(subcommand)]
    Eval(EvalCmd),
    /// Sparse autoencoder weights.
    #[command(subcommand)]
    Sae(SaeCmd),
    /// HTTP exploration API.
    Serve(ServeCmd),
}

#[derive(Debug, Subcommand)]
pub enum PoolCmd {
    /// Generate the pool images and write the pool manifest.
    Build {
        /// Pool spec (TOML); the built-in representative spec when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        limit: Option<usize>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct ParamArgs {
    #[arg(long, default_value_t = 32)]
    pub top_k: usize,
    #[arg(long, default_value_t = 0.7)]
    pub keep_fraction: f64,
    /// Keep edited embeddings at their raw length instead of the source norm.
    #[arg(long)]
    pub no_renormalize: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl ParamArgs {
    fn params(&self, edit_step: f64) -> DecomposeParams {
        DecomposeParams {
            top_k: self.top_k,
            edit_step,
            keep_fraction: self.keep_fraction,
            renormalize: !self.no_renormalize,
            rng_seed: self.seed,
        }
    }
}

#[derive(Debug, Args)]
pub struct DecomposeCmd {
    #[arg(long)]
    pub sae: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub edit_step: f64,
    #[command(flatten)]
    pub params: ParamArgs,
    /// Also decode both edited embeddings into images.
    #[arg(long)]
    pub render: bool,
}

#[derive(Debug, Subcommand)]
pub enum DatasetCmd {
    /// Decompose every pool image into a triplet.
    Mint {
        #[arg(long)]
        sae: PathBuf,
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Conditioning canvases for every ok triplet.
    Canvas {
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainConfigCmd {
    /// Print the default config, with `--set key=value` overrides.
    Emit {
        /// `key=value` override; repeatable.
        #[arg(long = "set")]
        set: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
pub enum TrainCmd {
    /// Short run against the mock trainer backend.
    Smoke {
        /// Training config (TOML); defaults otherwise.
        #[arg(long)]
        train_config: Option<PathBuf>,
        /// Triplet manifest, overriding the config's.
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        max_steps: u64,
    },
}

#[derive(Debug, Args)]
pub struct PairArgs {
    pub a: PathBuf,
    pub b: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
    pub seeds: Vec<u64>,
}

#[derive(Debug, Args)]
pub struct CombineCmd {
    #[command(flatten)]
    pub pair: PairArgs,
}

#[derive(Debug, Subcommand)]
pub enum BaselineCmd {
    /// Decode the mean of both image embeddings.
    #[command(name = "clip-interp")]
    ClipInterp(PairArgs),
}

#[derive(Debug, Subcommand)]
pub enum EvalCmd {
    /// Sample image pairs from a pool, preferring different prompts.
    Pairs {
        #[arg(long)]
        pool: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Judge-described combinations: word counts and trivial patterns.
    Describe {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "ours,clip_interpolation")]
        methods: Vec<String>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_SEEDS)]
        seeds: Vec<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Perceptual similarity of triplet aspects to their source.
    Decomp {
        #[arg(long)]
        triplets: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Mean description length per study answer.
    Study {
        #[arg(long)]
        responses: PathBuf,
        /// JSON object of item id → word count, or a descriptions manifest.
        #[arg(long)]
        lengths: PathBuf,
    },
}

#[derive(Debug, Subcommand)]
pub enum SaeCmd {
    /// Print shape and sparsity coefficient of a weight file.
    Inspect { file: PathBuf },
    /// Train on sparse combinations of a random dictionary.
    TrainToy {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, default_value_t = 8)]
        features: usize,
        #[arg(long, default_value_t = 8)]
        atoms: usize,
        #[arg(long, default_value_t = 2)]
        active: usize,
        #[arg(long, default_value_t = 512)]
        samples: usize,
        #[arg(long, default_value_t = 5000)]
        steps: usize,
        #[arg(long, default_value_t = 0.01)]
        sparsity: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Debug, Args)]
pub struct ServeCmd {
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub addr: SocketAddr,
    /// Images to seed the gallery with.
    #[arg(long)]
    pub seed_dir: Option<PathBuf>,
    /// Pool manifest whose images seed the gallery.
    #[arg(long)]
    pub seed_pool: Option<PathBuf>,
    /// Generation jobs running at once.
    #[arg(long, default_value_t = 1)]
    pub concurrency: usize,
}

struct Ctx<'a> {
    cli: &'a Cli,
}

impl Ctx<'_> {
    fn manifest(&self, explicit: &Option<PathBuf>, name: &str) -> PathBuf {
        explicit
            .clone()
            .unwrap_or_else(|| self.cli.store.join("manifests").join(format!("{name}.jsonl")))
    }

    fn bridge(&self) -> Result<Bridge> {
        let mut config = match &self.cli.config {
            Some(path) => BridgeConfig::load(path)?,
            None => BridgeConfig::default(),
        };
        if self.cli.mock {
            config.mock_mode = true;
        }
        let store = ImageStore::open(&self.cli.store)
            .with_context(|| format!("opening store {}", self.cli.store.display()))?;
        Ok(Bridge::from_config(&config, store))
    }
}

fn read_records<T: ManifestRecord>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        bail!("manifest {} does not exist", path.display());
    }
    let read = read_manifest::<T>(path)?;
    if !read.corrupt.is_empty() {
        eprintln!("warning: skipped {} corrupt line(s) in {}", read.corrupt.len(), path.display());
    }
    Ok(read.records)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

pub fn run(cli: &Cli) -> Result<()> {
    let ctx = Ctx { cli };
    match &cli.command {
        Command::Pool(PoolCmd::Build { spec, limit, out }) => {
            let mut spec = match spec {
                Some(path) => toml::from_str::<PoolSpec>(&fs::read_to_string(path)?)
                    .with_context(|| format!("parsing pool spec {}", path.display()))?,
                None => PoolSpec::representative(),
            };
            if limit.is_some() {
                spec.limit = *limit;
            }
            let records = build_pool(&spec, &ctx.bridge()?, cli.workers)?;
            let path = ctx.manifest(out, "pool");
            write_manifest(&path, &records)?;
            let failed = records.iter().filter(|r| r.image.is_none()).count();
            println!("{} pool rows ({failed} failed) -> {}", records.len(), path.display());
        }
        Command::Decompose(cmd) => {
            let bridge = ctx.bridge()?;
            let model = load_sae(&cmd.sae)?;
            let img = bridge.store().import(&cmd.image)?;
            let params = cmd.params.params(cmd.edit_step);
            let d = decompose(&model, &bridge.embed_image(&img)?, &params)?;
            let mut out = serde_json::json!({ "image": img.id, "summary": d.summary(), "params": params });
            if cmd.render {
                let a = bridge.render_embedding(&d.edited_a, params.rng_seed)?;
                let b = bridge.render_embedding(&d.edited_b, params.rng_seed.wrapping_add(1))?;
                out["a"] = serde_json::json!(a);
                out["b"] = serde_json::json!(b);
            }
            print_json(&out)?;
        }
        Command::Dataset(DatasetCmd::Mint { sae, pool, out, params }) => {
            let bridge = ctx.bridge()?;
            let model = load_sae(sae)?;
            let pool: Vec<PoolRecord> = read_records(&ctx.manifest(pool, "pool"))?;
            let images: Vec<_> = pool.into_iter().filter_map(|r| r.image).collect();
            let records = mint_batch(&images, &model, &params.params(0.5), &bridge, cli.workers)?;
            let path = ctx.manifest(out, "triplets");
            write_manifest(&path, &records)?;
            let count = |s| records.iter().filter(|r| r.status == s).count();
            println!(
                "{} triplets: {} ok, {} skipped, {} failed -> {}",
                records.len(),
                count(TripletStatus::Ok),
                count(TripletStatus::SkippedDegenerate),
                count(TripletStatus::Failed),
                path.display()
            );
        }
        Command::Dataset(DatasetCmd::Canvas { triplets, out }) => {
            let bridge = ctx.bridge()?;
            let triplets: Vec<TripletRecord> = read_records(&ctx.manifest(triplets, "triplets"))?;
            let records = build_canvases(&triplets, &bridge)?;
            let path = ctx.manifest(out, "canvases");
            write_manifest(&path, &records)?;
            println!("{} canvases -> {}", records.len(), path.display());
        }
        Command::TrainConfig(TrainConfigCmd::Emit { set, out }) => {
            let config = emit_config(set)?;
            match out {
                Some(path) => {
                    config.save(path)?;
                    println!("wrote {}", path.display());
                }
                None => print!("{}", config.to_toml()),
            }
        }
        Command::Train(TrainCmd::Smoke {
            train_config,
            dataset,
            max_steps,
        }) => {
            let mut config = match train_config {
                Some(path) => TrainConfig::load(path)?,
                None => TrainConfig {
                    dataset_manifest: ctx.manifest(&None, "triplets"),
                    ..TrainConfig::default()
                },
            };
            if let Some(d) = dataset {
                config.dataset_manifest = d.clone();
            }
            let report = smoke_train_observed(&config, &mut MockBackend::new(), *max_steps, |step, loss| {
                eprintln!("step {step:>5}  loss {loss:.6}");
            })?;
            print_json(&report)?;
        }
        Command::Combine(CombineCmd { pair }) => {
            let job = run_pair(&ctx, pair, false)?;
            print_json(&job)?;
        }
        Command::Baseline(BaselineCmd::ClipInterp(pair)) => {
            let job = run_pair(&ctx, pair, true)?;
            print_json(&job)?;
        }
        Command::Eval(cmd) => run_eval(&ctx, cmd)?,
        Command::Sae(SaeCmd::Inspect { file }) => {
            let model = load_sae(file)?;
            let norms: Vec<f64> = (0..model.m()).map(|j| model.atom(j).norm()).collect();
            let min = norms.iter().copied().fold(f64::INFINITY, f64::min);
            let max = norms.iter().copied().fold(0.0, f64::max);
            println!("features (m)        {}", model.m());
            println!("embedding dim (n)   {}", model.n());
            println!("sparsity coeff      {}", model.sparsity_coeff());
            println!("activation          {:?}", model.activation());
            println!("atom norm min/max   {min:.4} / {max:.4}");
        }
        Command::Sae(SaeCmd::TrainToy {
            out,
            dim,
            features,
            atoms,
            active,
            samples,
            steps,
            sparsity,
            seed,
        }) => {
            let (_, data) = synthetic_sparse_data(*atoms, *dim, *active, *samples, *seed)?;
            let model = train_toy_sae(&data, *features, *sparsity, *steps, *seed)?;
            model.save(out)?;
            println!("mean loss {:.6} after {steps} steps -> {}", mean_loss(&model, &data)?, out.display());
        }
        Command::Serve(cmd) => run_serve(&ctx, cmd)?,
    }
    Ok(())
}

fn run_pair(ctx: &Ctx, pair: &PairArgs, baseline: bool) -> Result<CombinationJob> {
    let bridge = Arc::new(ctx.bridge()?);
    let a = bridge.store().import(&pair.a)?;
    let b = bridge.store().import(&pair.b)?;
    let composer =
        Composer::new(Arc::clone(&bridge)).with_manifest(ManifestWriter::open(ctx.manifest(&None, "jobs"))?);
    let job = if baseline {
        composer.clip_interpolation_baseline(&a, &b, &pair.seeds)?
    } else {
        composer.combine(&a, &b, &pair.seeds)?
    };
    Ok(job)
}

fn sample_pairs(pool: &[PoolRecord], count: usize, seed: u64) -> Vec<PairRecord> {
    let usable: Vec<_> = pool.iter().filter(|r| r.image.is_some()).collect();
    let mut candidates = Vec::new();
    for (i, x) in usable.iter().enumerate() {
        for y in &usable[i + 1..] {
            if x.prompt != y.prompt {
                candidates.push((*x, *y));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    candidates.shuffle(&mut rng);
    candidates
        .into_iter()
        .take(count)
        .enumerate()
        .map(|(i, (x, y))| PairRecord {
            pair_id: format!("pair-{i:04}"),
            a: x.image.clone().expect("filtered"),
            b: y.image.clone().expect("filtered"),
        })
        .collect()
}

fn run_eval(ctx: &Ctx, cmd: &EvalCmd) -> Result<()> {
    match cmd {
        EvalCmd::Pairs { pool, count, seed, out } => {
            let pool: Vec<PoolRecord> = read_records(&ctx.manifest(pool, "pool"))?;
            let pairs = sample_pairs(&pool, *count, *seed);
            let path = ctx.manifest(out, "pairs");
            write_manifest(&path, &pairs)?;
            println!("{} pairs -> {}", pairs.len(), path.display());
        }
        EvalCmd::Describe {
            pairs,
            methods,
            seeds,
            out,
        } => {
            let bridge = ctx.bridge()?;
            let pairs: Vec<PairRecord> = read_records(&ctx.manifest(pairs, "pairs"))?;
            let mut chosen: Vec<&dyn CombinationMethod> = Vec::new();
            for m in methods {
                match m.as_str() {
                    "ours" => chosen.push(&OursMethod),
                    "clip_interpolation" => chosen.push(&ClipInterpolationMethod),
                    other => bail!("unknown method `{other}` (expected ours or clip_interpolation)"),
                }
            }
            let outcome = run_combination_benchmark(&pairs, &chosen, seeds, &bridge, ctx.cli.workers)?;
            let path = ctx.manifest(out, "descriptions");
            write_manifest(&path, &outcome.descriptions)?;
            write_manifest(&path.with_extension("exclusions.jsonl"), &outcome.exclusions)?;
            print!("{}", outcome.report.render());
            println!("{} descriptions -> {}", outcome.descriptions.len(), path.display());
        }
        EvalCmd::Decomp { triplets, out } => {
            let bridge = ctx.bridge()?;
            let triplets: Vec<TripletRecord> = read_records(&ctx.manifest(triplets, "triplets"))?;
            let outcome = score_decompositions(&triplets, &bridge);
            let path = ctx.manifest(out, "decomp_scores");
            write_manifest(&path, &outcome.scores)?;
            print!("{}", outcome.report.render());
        }
        EvalCmd::Study { responses, lengths } => {
            let responses: Vec<StudyResponse> = read_records(responses)?;
            let lengths: HashMap<String, usize> = if lengths.extension().is_some_and(|e| e == "jsonl") {
                read_records::<DescriptionRecord>(lengths)?
                    .into_iter()
                    .map(|d| (d.item_id(), d.word_count))
                    .collect()
            } else {
                serde_json::from_str(&fs::read_to_string(lengths)?)
                    .with_context(|| format!("parsing {}", lengths.display()))?
            };
            for (choice, mean) in aggregate_user_study(&responses, &lengths)? {
                println!("{:<16} {mean:.1}", serde_json::to_value(choice)?.as_str().unwrap_or_default());
            }
        }
    }
    Ok(())
}

fn run_serve(ctx: &Ctx, cmd: &ServeCmd) -> Result<()> {
    let bridge = Arc::new(ctx.bridge()?);
    let state = Arc::new(AppState::open(Arc::clone(&bridge), cmd.concurrency, None)?);
    if let Some(dir) = &cmd.seed_dir {
        let mut paths: Vec<_> = fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| matches!(e.to_str(), Some("png" | "jpg" | "jpeg"))))
            .collect();
        paths.sort();
        for p in paths {
            state.gallery().seed(bridge.store().import(&p)?)?;
        }
    }
    if let Some(pool) = &cmd.seed_pool {
        for r in read_records::<PoolRecord>(pool)? {
            if let Some(img) = r.image {
                state.gallery().seed(img)?;
            }
        }
    }
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(serve(state, cmd.addr, async {
        let _ = tokio::signal::ctrl_c().await;
    }))?;
    Ok(())
}

pub fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
