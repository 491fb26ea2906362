//! Command-line front end. Every subcommand reads its inputs, never writes
//! to them, and prints a JSON summary on stdout. Failures print
//! `{"error": {"kind": ..., "message": ...}}` on stderr.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::datapipe::{
    build_test_split, filter_by_rating, load_manifest, manifest_to_jsonl, observed_distribution, pair_instructions,
    InstructionBank, Manifest, TargetDistribution, DEFAULT_PER_TASK, DEFAULT_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::evalkit::{evaluate_records, read_records, AuList, EvalConfig, EvalResources};
use crate::frgca::{frgca_forward, init_frgca, AttentionVariant, FrgcaConfig, ScoreScale};
use crate::frlp::{frlp_forward, init_frlp, ProjectorMode};
use crate::geometry::{clip_masks, default_partition, LandmarkFile, PatchGrid, DEFAULT_MAX_FRAMES};
use crate::gradcheck::run_suite;
use crate::nn::{StoredTensor, TensorArchive};
use crate::toytrain::{
    build_pipeline, evaluate, init_model, make_datasets, trace_csv, train, Stage, TaskKind, TrainConfig,
};

const LOG_ENV: &str = "FACECOND_LOG";

/// Face-region landmark conditioning toolkit.
///
/// Structured inputs and outputs are JSON (records as JSONL); loss traces and
/// confusion matrices are CSV. `--config` takes a JSON or TOML file (by
/// extension) whose keys mirror the subcommand's flags in snake_case;
/// explicit flags win. `train` configs take the full training schema,
/// `eval` configs take au_list, taxonomies and negation_cues, and `enrich`
/// configs also accept score_scale and qkv_bias.
/// Set FACECOND_LOG (error, warn, info, debug) for diagnostics on stderr.
#[derive(Debug, Parser)]
#[command(name = "facecond", version)]
pub struct Cli {
    /// Subcommand configuration file (JSON or TOML)
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Seed for every random draw [default: 0, or the config's seed]
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads
    #[arg(long, global = true, default_value_t = 1)]
    pub threads: usize,
    /// Output directory; single-output subcommands print to stdout without it
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Landmarks -> per-frame region/patch proximity masks (mask.json)
    Mask(MaskArgs),
    /// Visual tokens + landmarks -> landmark-enriched tokens (enriched.json)
    Enrich(EnrichArgs),
    /// Finite-difference check of every hand-written gradient (gradcheck.json)
    Gradcheck,
    /// Toy two-stage training run (params.json, trace.csv, summary.json)
    Train(TrainArgs),
    /// Score generated descriptions (metrics.json, confusion_<task>.csv)
    Eval(EvalArgs),
    /// Split a manifest by overall rating (kept.jsonl, removed.jsonl)
    Filter(FilterArgs),
    /// Assign instructions to records lacking one (paired.jsonl)
    Pair(PairArgs),
    /// Build a stratified test split (split.jsonl, split_summary.json)
    Split(SplitArgs),
}

fn parse_named<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

#[derive(Debug, Args)]
pub struct MaskArgs {
    /// Landmark file: {"id": ..., "frames": [[[x, y] x68] xT]}
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Patch grid as ROWSxCOLS [default: 16x16]
    #[arg(long)]
    pub grid: Option<PatchGrid>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct MaskConfig {
    grid: Option<String>,
}

#[derive(Debug, Args)]
pub struct EnrichArgs {
    /// Visual tokens: {"shape": [T, N, d], "data": [...]}
    #[arg(long)]
    pub tokens: PathBuf,
    #[arg(long)]
    pub landmarks: PathBuf,
    /// Checkpoint with frlp.* and frgca.* tensors; random init from the seed otherwise
    #[arg(long)]
    pub params: Option<PathBuf>,
    /// Patch grid as ROWSxCOLS [default: square grid of N patches]
    #[arg(long)]
    pub grid: Option<PatchGrid>,
    /// frgca, simple or none
    #[arg(long, value_parser = parse_named::<AttentionVariant>)]
    pub variant: Option<AttentionVariant>,
    /// full, local_only or global_only
    #[arg(long, value_parser = parse_named::<ProjectorMode>)]
    pub projector: Option<ProjectorMode>,
    #[arg(long)]
    pub heads: Option<usize>,
    #[arg(long)]
    pub attn_dim: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct EnrichConfig {
    grid: Option<String>,
    variant: Option<AttentionVariant>,
    projector: Option<ProjectorMode>,
    heads: Option<usize>,
    attn_dim: Option<usize>,
    score_scale: Option<ScoreScale>,
    qkv_bias: Option<bool>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// pretrain or finetune
    #[arg(long, value_parser = parse_named::<Stage>)]
    pub stage: Option<Stage>,
    #[arg(long, value_parser = parse_named::<AttentionVariant>)]
    pub variant: Option<AttentionVariant>,
    #[arg(long, value_parser = parse_named::<ProjectorMode>)]
    pub projector: Option<ProjectorMode>,
    /// region_shift or random_label
    #[arg(long, value_parser = parse_named::<TaskKind>)]
    pub task: Option<TaskKind>,
    /// Base learning rate [default: 1e-4 pretrain, 2e-5 finetune]
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_size: Option<usize>,
    #[arg(long)]
    pub eval_size: Option<usize>,
    /// Start from a checkpoint written by an earlier run
    #[arg(long)]
    pub init: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL of {"id", "task", "text", "gt", "chunk"?}
    #[arg(long)]
    pub records: PathBuf,
    /// AU set for average F1: disfa or bp4d
    #[arg(long)]
    pub au_list: Option<AuList>,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Keep records whose overall rating exceeds this [default: 6]
    #[arg(long)]
    pub threshold: Option<u8>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FilterConfig {
    threshold: Option<u8>,
}

#[derive(Debug, Args)]
pub struct PairArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Instruction bank: {"task": ["... {media} ..."]}
    #[arg(long)]
    pub bank: PathBuf,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Records per task [default: 500]
    #[arg(long)]
    pub per_task: Option<usize>,
    /// Class weights {"task": {"class": weight}} [default: manifest frequencies]
    #[arg(long)]
    pub target: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitConfig {
    per_task: Option<usize>,
    target: Option<TargetDistribution>,
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if path.extension().is_some_and(|e| e == "toml") {
        toml::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    } else {
        Ok(serde_json::from_str(&text)?)
    }
}

fn optional_config<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    path.map_or_else(|| Ok(T::default()), read_config)
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
        ))
    }
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn pretty(value: &impl Serialize) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

/// Destination for output files; refuses to overwrite any input.
struct Outputs {
    dir: Option<PathBuf>,
    inputs: Vec<PathBuf>,
}

impl Outputs {
    fn new(dir: Option<&Path>, inputs: &[&Path]) -> Result<Self> {
        if let Some(d) = dir {
            std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
        }
        Ok(Self {
            dir: dir.map(Path::to_path_buf),
            inputs: inputs.iter().filter_map(|p| p.canonicalize().ok()).collect(),
        })
    }

    fn require_dir(&self, command: &str) -> Result<&Path> {
        self.dir
            .as_deref()
            .ok_or_else(|| Error::InvalidConfig(format!("{command} needs --out <dir>")))
    }

    fn write(&self, name: &str, contents: &str) -> Result<Option<PathBuf>> {
        let Some(dir) = &self.dir else {
            return Ok(None);
        };
        let path = dir.join(name);
        if let Ok(c) = path.canonicalize() {
            if self.inputs.contains(&c) {
                return Err(Error::InvalidConfig(format!(
                    "refusing to overwrite input file {}",
                    path.display()
                )));
            }
        }
        std::fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
        log::info!("wrote {}", path.display());
        Ok(Some(path))
    }

    /// Writes `name` when an output directory is set, else returns the text
    /// for stdout.
    fn primary(&self, name: &str, contents: String) -> Result<Option<String>> {
        Ok(match self.write(name, &contents)? {
            Some(_) => None,
            None => Some(contents),
        })
    }
}

fn square_grid(n: usize) -> Result<PatchGrid> {
    let side = (n as f64).sqrt().round() as usize;
    if side * side != n {
        return Err(Error::InvalidConfig(format!(
            "{n} tokens per frame is not a square grid; pass --grid"
        )));
    }
    PatchGrid::new(side, side)
}

fn parse_grid(s: Option<&str>) -> Result<Option<PatchGrid>> {
    s.map(str::parse).transpose()
}

/// Text for stdout on success.
fn execute(cli: &Cli) -> Result<String> {
    let config = cli.config.as_deref();
    if let Some(c) = config {
        require_file(c)?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::Mask(a) => {
            require_file(&a.landmarks)?;
            let cfg: MaskConfig = optional_config(config)?;
            let grid = match a.grid {
                Some(g) => g,
                None => parse_grid(cfg.grid.as_deref())?.unwrap_or_default(),
            };
            let file = LandmarkFile::read(&a.landmarks)?;
            let clip = file.to_clip(DEFAULT_MAX_FRAMES)?;
            let partition = default_partition();
            let masks = clip_masks(&clip, &partition, &grid)?;
            let doc = json!({
                "id": file.id,
                "grid": grid.to_string(),
                "regions": partition.groups().iter().map(|g| g.name.clone()).collect::<Vec<_>>(),
                "frames": masks.iter().map(|m| m.to_rows()).collect::<Vec<_>>(),
            });
            let out = Outputs::new(cli.out.as_deref(), &[&a.landmarks])?;
            Ok(out.primary("mask.json", pretty(&doc))?.unwrap_or_else(|| {
                pretty(&json!({"frames": masks.len(), "patches": grid.num_patches(), "regions": partition.len()}))
            }))
        }
        Command::Enrich(a) => {
            require_file(&a.tokens)?;
            require_file(&a.landmarks)?;
            if let Some(p) = &a.params {
                require_file(p)?;
            }
            let cfg: EnrichConfig = optional_config(config)?;
            let h_v = read_json::<StoredTensor>(&a.tokens)?.to_array3()?;
            let (t, n, d) = h_v.dim();
            let clip = LandmarkFile::read(&a.landmarks)?.to_clip(DEFAULT_MAX_FRAMES)?;
            let grid = match a.grid.or(parse_grid(cfg.grid.as_deref())?) {
                Some(g) => g,
                None => square_grid(n)?,
            };
            if grid.num_patches() != n || clip.num_frames() != t {
                return Err(Error::ShapeMismatch(format!(
                    "tokens are {t}x{n}x{d} but landmarks have {} frames and the grid {} patches",
                    clip.num_frames(),
                    grid.num_patches()
                )));
            }
            let variant = a.variant.or(cfg.variant).unwrap_or_default();
            let projector = a.projector.or(cfg.projector).unwrap_or_default();
            let mut fc = FrgcaConfig::default();
            fc.heads = a.heads.or(cfg.heads).unwrap_or(fc.heads);
            fc.attn_dim = a.attn_dim.or(cfg.attn_dim);
            fc.scale = cfg.score_scale.unwrap_or(fc.scale);
            fc.qkv_bias = cfg.qkv_bias.unwrap_or(fc.qkv_bias);
            let partition = default_partition();
            let mut rng = ChaCha8Rng::seed_from_u64(seed.unwrap_or(0));
            let mut frlp = init_frlp(d, &partition, rng.next_u64())?;
            let mut frgca = init_frgca(d, &fc, rng.next_u64())?;
            if let Some(p) = &a.params {
                let archive = TensorArchive::read(p)?;
                archive.restore(&mut frlp, "frlp")?;
                archive.restore(&mut frgca, "frgca")?;
            }
            let enriched = if variant == AttentionVariant::None {
                h_v
            } else {
                let tokens = frlp_forward(&clip, &partition, &frlp, projector)?;
                let masks = clip_masks(&clip, &partition, &grid)?;
                frgca_forward(&h_v, &tokens.combined, &masks, &frgca, variant)?.0
            };
            let mut inputs: Vec<&Path> = vec![&a.tokens, &a.landmarks];
            inputs.extend(a.params.as_deref());
            let out = Outputs::new(cli.out.as_deref(), &inputs)?;
            let shape = enriched.shape().to_vec();
            Ok(out
                .primary("enriched.json", serde_json::to_string(&StoredTensor::from_array3(&enriched))? + "\n")?
                .unwrap_or_else(|| pretty(&json!({"shape": shape, "variant": variant}))))
        }
        Command::Gradcheck => {
            let reports = run_suite(seed.unwrap_or(0))?;
            let out = Outputs::new(cli.out.as_deref(), &[])?;
            let text = pretty(&reports);
            out.write("gradcheck.json", &text)?;
            if let Some(bad) = reports.iter().find(|r| !r.passed) {
                return Err(Error::GradientCheck(format!(
                    "{}: max relative error {:e} exceeds {:e}",
                    bad.name, bad.max_relative_error, bad.tolerance
                )));
            }
            Ok(text)
        }
        Command::Train(a) => {
            let mut tc = match config {
                Some(p) => TrainConfig::from_path(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                tc.seed = s;
            }
            tc.stage = a.stage.unwrap_or(tc.stage);
            tc.variant = a.variant.unwrap_or(tc.variant);
            tc.projector = a.projector.unwrap_or(tc.projector);
            tc.task = a.task.unwrap_or(tc.task);
            tc.lr = a.lr.or(tc.lr);
            tc.epochs = a.epochs.unwrap_or(tc.epochs);
            tc.train_size = a.train_size.unwrap_or(tc.train_size);
            tc.eval_size = a.eval_size.unwrap_or(tc.eval_size);
            tc.validate()?;
            let mut inputs: Vec<&Path> = config.into_iter().collect();
            if let Some(p) = &a.init {
                require_file(p)?;
                inputs.push(p);
            }
            let out = Outputs::new(cli.out.as_deref(), &inputs)?;
            out.require_dir("train")?;
            let pipeline = build_pipeline(&tc)?;
            let mut params = init_model(&tc)?;
            if let Some(p) = &a.init {
                params.restore(&TensorArchive::read(p)?)?;
            }
            let (train_set, eval_set) = make_datasets(&tc)?;
            let before = evaluate(&pipeline, &params, &eval_set)?;
            log::info!("training {} steps", tc.epochs * train_set.len());
            let outcome = train(&tc, &pipeline, params, &train_set)?;
            let after = evaluate(&pipeline, &outcome.params, &eval_set)?;
            let summary = json!({
                "config": tc,
                "steps": outcome.trace.len(),
                "eval_before": before,
                "eval_after": after,
            });
            let archive = serde_json::to_string(&outcome.params.to_archive())? + "\n";
            out.write("params.json", &archive)?;
            out.write("trace.csv", &trace_csv(&outcome.trace))?;
            out.write("summary.json", &pretty(&summary))?;
            Ok(pretty(&summary))
        }
        Command::Eval(a) => {
            require_file(&a.records)?;
            let mut ec: EvalConfig = optional_config(config)?;
            if let Some(l) = a.au_list {
                ec.au_list = l;
            }
            let res = EvalResources::from_config(&ec)?;
            let records = read_records(&a.records)?;
            let report = evaluate_records(&records, &res)?;
            let mut inputs: Vec<&Path> = vec![&a.records];
            inputs.extend(config);
            let out = Outputs::new(cli.out.as_deref(), &inputs)?;
            for (task, m) in &report.tasks {
                if let Some(c) = &m.confusion {
                    out.write(&format!("confusion_{task}.csv"), &c.to_csv())?;
                }
            }
            let text = report.to_json();
            out.write("metrics.json", &text)?;
            Ok(text)
        }
        Command::Filter(a) => {
            require_file(&a.manifest)?;
            let cfg: FilterConfig = optional_config(config)?;
            let threshold = a.threshold.or(cfg.threshold).unwrap_or(DEFAULT_THRESHOLD);
            let Manifest { records, errors } = load_manifest(&a.manifest)?;
            let (kept, removed) = filter_by_rating(records, threshold);
            let out = Outputs::new(cli.out.as_deref(), &[&a.manifest])?;
            out.write("kept.jsonl", &manifest_to_jsonl(&kept))?;
            out.write("removed.jsonl", &manifest_to_jsonl(&removed))?;
            Ok(pretty(&json!({
                "threshold": threshold,
                "kept": kept.len(),
                "removed": removed.len(),
                "malformed": errors,
            })))
        }
        Command::Pair(a) => {
            require_file(&a.manifest)?;
            require_file(&a.bank)?;
            let Manifest { records, errors } = load_manifest(&a.manifest)?;
            let bank = InstructionBank::read(&a.bank)?;
            let total = records.len();
            let unpaired = records.iter().filter(|r| r.instruction.is_none()).count();
            let paired = pair_instructions(records, &bank, seed.unwrap_or(0))?;
            let out = Outputs::new(cli.out.as_deref(), &[&a.manifest, &a.bank])?;
            out.require_dir("pair")?;
            out.write("paired.jsonl", &manifest_to_jsonl(&paired))?;
            Ok(pretty(&json!({"records": total, "assigned": unpaired, "malformed": errors})))
        }
        Command::Split(a) => {
            require_file(&a.manifest)?;
            let cfg: SplitConfig = optional_config(config)?;
            let Manifest { records, errors } = load_manifest(&a.manifest)?;
            let target = match (&a.target, cfg.target) {
                (Some(p), _) => {
                    require_file(p)?;
                    read_json::<TargetDistribution>(p)?
                }
                (None, Some(t)) => t,
                (None, None) => observed_distribution(&records),
            };
            let per_task = a.per_task.or(cfg.per_task).unwrap_or(DEFAULT_PER_TASK);
            let split = build_test_split(&records, per_task, &target, seed.unwrap_or(0))?;
            let mut inputs: Vec<&Path> = vec![&a.manifest];
            inputs.extend(a.target.as_deref());
            let out = Outputs::new(cli.out.as_deref(), &inputs)?;
            out.require_dir("split")?;
            out.write("split.jsonl", &manifest_to_jsonl(&split.records))?;
            let summary = pretty(&split.summary);
            out.write("split_summary.json", &summary)?;
            if !errors.is_empty() {
                log::warn!("{} malformed manifest lines skipped", errors.len());
            }
            Ok(summary)
        }
    }
}

fn error_json(e: &Error) -> String {
    serde_json::to_string(&json!({"error": {"kind": e.kind(), "message": e.to_string()}})).expect("serializes")
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code: 0 on success, 1 on a runtime error, 2 on bad usage.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    if cli.threads == 0 {
        eprintln!("{}", error_json(&Error::InvalidConfig("--threads must be at least 1".into())));
        return 2;
    }
    let pool = match rayon::ThreadPoolBuilder::new().num_threads(cli.threads).build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("{}", error_json(&Error::InvalidConfig(e.to_string())));
            return 1;
        }
    };
    match pool.install(|| execute(&cli)) {
        Ok(text) => {
            print!("{text}");
            0
        }
        Err(e) => {
            log::debug!("{e:?}");
            eprintln!("{}", error_json(&e));
            1
        }
    }
}
