//! Command-line driver.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use kgbridge_core::bridge::Variant;
use kgbridge_core::encoder::{encode_all, fingerprint, EmbeddingCache, EncoderSpec, ImportTable};
use kgbridge_core::eval::{evaluate_link_prediction, semantic_similarity_eval, BridgeScorer, TailScorer};
use kgbridge_core::graph::KnowledgeGraph;
use kgbridge_core::index::retrieve_tails;
use kgbridge_core::kge::{train_kge, KgeFamily};
use kgbridge_core::negatives::known_positives;
use kgbridge_core::prompt::{assemble_prompt, PromptBundle, TemplateKind};
use kgbridge_core::split::{split_triples, SplitRatios, TripleSplit};
use kgbridge_core::trainer::train_bridge;

use crate::bench::{run_planted_bench, PlantedPreset};
use crate::cache::{load_cache, persist_cache, FingerprintCheck};
use crate::checkpoint::{load_bridge, load_model, save_bridge, save_kge, SavedModel};
use crate::config::{check_exist, required, RunConfig};
use crate::error::{read_json, write_file, write_json, Error, Result};
use crate::manifest::ManifestBuilder;
use crate::rag::{retrieve_for_rag, RagRole};
use crate::report::{read_matrix, write_ranks, JsonLines};
use crate::tsv::{load_graph, read_imports, read_split, write_split};

#[derive(Debug, Parser)]
#[command(
    name = "kgbridge",
    version,
    about = "Bridge frozen embeddings across modalities with knowledge-graph supervision"
)]
pub struct Cli {
    /// Run single-threaded with fixed seeds (recorded in the manifest).
    #[arg(long, global = true)]
    pub deterministic: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Stratified train/valid/test split of a triple file.
    Split(SplitArgs),
    /// Encode every node with the frozen encoders into a cache file.
    Encode(EncodeArgs),
    /// Train the bridge model.
    TrainBridge(ConfigArgs),
    /// Train a KGE baseline.
    TrainKge(TrainKgeArgs),
    /// Rank held-out tails with a checkpoint.
    Eval(EvalArgs),
    /// Top-k tails for one node.
    Retrieve(RetrieveArgs),
    /// Train and evaluate on a planted graph.
    PlantedBench(BenchArgs),
    /// Assemble a retrieval-augmented prompt.
    Prompt(PromptArgs),
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    #[arg(long, default_value = "0.8,0.1,0.1")]
    pub ratios: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct EncodeArgs {
    #[arg(long)]
    pub nodes: PathBuf,
    #[arg(long)]
    pub triples: PathBuf,
    /// JSON array of encoder specs, one per modality.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub imports: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    #[arg(long)]
    pub config: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainKgeArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `kge_family` from the config.
    #[arg(long)]
    pub family: Option<String>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `paths.checkpoint`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, conflicts_with = "raw")]
    pub filtered: bool,
    #[arg(long)]
    pub raw: bool,
    /// Which held-out part to rank: test or valid.
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Gold similarity matrix for one target modality, as ASPECT=PATH.
    #[arg(long)]
    pub gold: Vec<String>,
    #[arg(long, requires = "gold")]
    pub sim_head_modality: Option<String>,
    #[arg(long, requires = "gold")]
    pub sim_relation: Option<String>,
}

#[derive(Debug, Args)]
pub struct RetrieveArgs {
    #[arg(long)]
    pub config: PathBuf,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub node: String,
    #[arg(long)]
    pub tail_modality: String,
    #[arg(long)]
    pub relation: String,
    #[arg(short = 'k', long = "k", default_value_t = 10)]
    pub k: usize,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value = "small")]
    pub preset: String,
    #[arg(long, default_value_t = 13)]
    pub seed: u64,
    /// residual-additive, no-residual or rotate-multiplicative.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PromptArgs {
    /// molecule-qa, protein-qa or molecule-generation.
    #[arg(long)]
    pub template: String,
    /// Fully specified bundle as JSON; skips retrieval.
    #[arg(long, conflicts_with_all = ["config", "node", "role"])]
    pub bundle: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub node: Option<String>,
    /// LIST:TAIL_MODALITY:RELATION:K, repeatable.
    #[arg(long)]
    pub role: Vec<String>,
    /// Overrides the query node's feature as the structure string.
    #[arg(long)]
    pub structure: Option<String>,
    /// Question (QA templates) or text guidance (generation).
    #[arg(long)]
    pub text: Option<String>,
}

/// Parses `argv` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let argv: Vec<std::ffi::OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(err, "{e}");
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match dispatch(cli, &args, out, err) {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli, args: &[String], out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let det = cli.deterministic;
    match cli.command {
        Command::Split(a) => cmd_split(a, args, det),
        Command::Encode(a) => cmd_encode(a, args, det),
        Command::TrainBridge(a) => cmd_train_bridge(a, args, det, err),
        Command::TrainKge(a) => cmd_train_kge(a, args, det),
        Command::Eval(a) => cmd_eval(a, args, det, out),
        Command::Retrieve(a) => cmd_retrieve(a, args, det, out),
        Command::PlantedBench(a) => cmd_bench(a, args, det, out, err),
        Command::Prompt(a) => cmd_prompt(a, args, det, out),
    }
}

fn emit(out: &mut dyn Write, text: &str) -> Result<()> {
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io(Path::new("<stdout>"), e))
}

fn emit_json<T: serde::Serialize>(out: &mut dyn Write, v: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Error::json(Path::new("<stdout>"), e))?;
    s.push('\n');
    emit(out, &s)
}

fn parse_ratios(s: &str) -> Result<SplitRatios> {
    let v: Vec<f64> = s
        .split(',')
        .map(|x| x.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("bad --ratios `{s}`")))?;
    if v.len() != 3 {
        return Err(Error::Usage(format!("--ratios needs three values, got `{s}`")));
    }
    Ok(SplitRatios::new(v[0], v[1], v[2])?)
}

fn cmd_split(a: SplitArgs, args: &[String], det: bool) -> Result<()> {
    let ratios = parse_ratios(&a.ratios)?;
    check_exist(&[&a.nodes, &a.triples])?;
    let mut mb = ManifestBuilder::new("split", args, None, det);
    mb.seed(a.seed);
    mb.input(&a.nodes);
    mb.input(&a.triples);
    let kg = load_graph(&a.nodes, &a.triples)?;
    let split = split_triples(&kg, ratios, a.seed)?;
    for p in write_split(&a.out_dir, &split)? {
        mb.output(&p);
    }
    mb.write(&a.out_dir)?;
    Ok(())
}

fn cmd_encode(a: EncodeArgs, args: &[String], det: bool) -> Result<()> {
    check_exist(&[&a.nodes, &a.triples, &a.spec])?;
    if let Some(p) = &a.imports {
        check_exist(&[p])?;
    }
    let mut mb = ManifestBuilder::new("encode", args, None, det);
    mb.input(&a.nodes);
    mb.input(&a.triples);
    mb.input(&a.spec);
    let specs: Vec<EncoderSpec> = read_json(&a.spec)?;
    let imports = match &a.imports {
        Some(p) => {
            mb.input(p);
            read_imports(p)?
        }
        None => ImportTable::new(),
    };
    let kg = load_graph(&a.nodes, &a.triples)?;
    let cache = encode_all(&kg, &specs, &imports)?;
    persist_cache(&cache, &a.out)?;
    mb.output(&a.out);
    mb.write(a.out.parent().unwrap_or(Path::new(".")))?;
    Ok(())
}

/// Graph, split and (optionally) cache named by a run config.
struct Loaded {
    kg: KnowledgeGraph,
    split: TripleSplit,
}

fn load_inputs(cfg: &RunConfig, mb: &mut ManifestBuilder) -> Result<Loaded> {
    let nodes = required(&cfg.paths.nodes, "nodes")?;
    let triples = required(&cfg.paths.triples, "triples")?;
    check_exist(&[nodes, triples])?;
    if let Some(d) = &cfg.paths.split_dir {
        check_exist(&[d])?;
    }
    mb.input(nodes);
    mb.input(triples);
    let kg = load_graph(nodes, triples)?;
    let split = match &cfg.paths.split_dir {
        Some(d) => {
            for f in crate::tsv::SPLIT_FILES {
                mb.input(&d.join(f));
            }
            read_split(d)?
        }
        None => split_triples(&kg, cfg.split, cfg.train.seed)?,
    };
    Ok(Loaded { kg, split })
}

fn load_or_encode(
    cfg: &RunConfig,
    kg: &KnowledgeGraph,
    mb: &mut ManifestBuilder,
    err: Option<&mut dyn Write>,
) -> Result<EmbeddingCache> {
    if let Some(p) = &cfg.paths.cache {
        check_exist(&[p])?;
        mb.input(p);
        let expected = (!cfg.encoders.is_empty()).then(|| fingerprint(&cfg.encoders));
        let check = if cfg.strict_fingerprint {
            FingerprintCheck::Strict
        } else {
            FingerprintCheck::Warn
        };
        let loaded = load_cache(p, expected.as_ref(), check)?;
        if loaded.fingerprint_mismatch {
            if let Some(w) = err {
                let _ = writeln!(
                    w,
                    "warning: {}: encoder fingerprint differs from the configured encoders",
                    p.display()
                );
            }
        }
        return Ok(loaded.cache);
    }
    if cfg.encoders.is_empty() {
        return Err(Error::Usage("config needs `paths.cache` or `encoders`".into()));
    }
    let imports = match &cfg.paths.imports {
        Some(p) => {
            check_exist(&[p])?;
            mb.input(p);
            read_imports(p)?
        }
        None => ImportTable::new(),
    };
    Ok(encode_all(kg, &cfg.encoders, &imports)?)
}

fn output_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.output_dir.clone().unwrap_or_else(|| PathBuf::from("."))
}

fn cmd_train_bridge(a: ConfigArgs, args: &[String], det: bool, err: &mut dyn Write) -> Result<()> {
    check_exist(&[&a.config])?;
    let (cfg, raw) = RunConfig::load(&a.config)?;
    let ckpt = required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let mut mb = ManifestBuilder::new("train-bridge", args, Some(&raw), det);
    mb.seed(cfg.train.seed);
    mb.input(&a.config);
    let Loaded { kg, split } = load_inputs(&cfg, &mut mb)?;
    let cache = load_or_encode(&cfg, &kg, &mut mb, Some(err))?;
    let dir = output_dir(&cfg);
    let log_path = dir.join("train-bridge.log.jsonl");
    let mut log = JsonLines::create(&log_path)?;
    let mut log_err = None;
    let outcome = train_bridge(&kg, &split, &cache, &cfg.bridge, &cfg.train, &mut |rec| {
        if let Err(e) = log.write(rec) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.write(&serde_json::json!({
        "event": "done",
        "initial_loss": outcome.initial_loss,
        "final_loss": outcome.final_loss,
        "relaxed_draws": outcome.relaxed_draws,
    }))?;
    log.finish()?;
    mb.output(&log_path);
    save_bridge(&ckpt, &outcome.last)?;
    mb.output(&ckpt);
    if let Some(best) = &outcome.best {
        let p = ckpt.with_extension("best.bbr");
        save_bridge(&p, best)?;
        mb.output(&p);
    }
    mb.write(&dir)?;
    Ok(())
}

fn cmd_train_kge(a: TrainKgeArgs, args: &[String], det: bool) -> Result<()> {
    check_exist(&[&a.config])?;
    let (mut cfg, raw) = RunConfig::load(&a.config)?;
    if let Some(f) = &a.family {
        cfg.kge_family = KgeFamily::parse(f)?;
        cfg.kge.validate(cfg.kge_family)?;
    }
    let ckpt = required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf();
    let mut mb = ManifestBuilder::new("train-kge", args, Some(&raw), det);
    mb.seed(cfg.kge.seed);
    mb.input(&a.config);
    let Loaded { kg, split } = load_inputs(&cfg, &mut mb)?;
    let train = kg.resolve_all(&split.train)?;
    let dir = output_dir(&cfg);
    let log_path = dir.join("train-kge.log.jsonl");
    let mut log = JsonLines::create(&log_path)?;
    let mut log_err = None;
    let (model, _) = train_kge(&kg, &train, cfg.kge_family, &cfg.kge, &mut |rec, _| {
        if let Err(e) = log.write(rec) {
            log_err.get_or_insert(e);
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    log.finish()?;
    mb.output(&log_path);
    save_kge(&ckpt, &model)?;
    mb.output(&ckpt);
    mb.write(&dir)?;
    Ok(())
}

fn cmd_eval(a: EvalArgs, args: &[String], det: bool, out: &mut dyn Write) -> Result<()> {
    check_exist(&[&a.config])?;
    let (cfg, raw) = RunConfig::load(&a.config)?;
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf(),
    };
    check_exist(&[&ckpt])?;
    let mut gold = Vec::new();
    for g in &a.gold {
        let (aspect, path) = g
            .split_once('=')
            .ok_or_else(|| Error::Usage(format!("--gold expects ASPECT=PATH, got `{g}`")))?;
        check_exist(&[Path::new(path)])?;
        gold.push((aspect.to_string(), PathBuf::from(path)));
    }
    let mut mb = ManifestBuilder::new("eval", args, Some(&raw), det);
    mb.input(&a.config);
    mb.input(&ckpt);
    let Loaded { kg, split } = load_inputs(&cfg, &mut mb)?;
    let part = match a.split.as_str() {
        "test" => &split.test,
        "valid" => &split.valid,
        other => return Err(Error::Usage(format!("--split must be test or valid, got `{other}`"))),
    };
    let targets = kg.resolve_all(part)?;
    let seen = kg.resolve_all(&[split.train.as_slice(), split.valid.as_slice()].concat())?;
    let known = known_positives(&seen);
    let mut options = cfg.eval.clone();
    if a.filtered {
        options.filtered = true;
    }
    if a.raw {
        options.filtered = false;
    }
    let model = load_model(&ckpt)?;
    let dir = output_dir(&cfg);
    let cache;
    let (report, similarity) = match &model {
        SavedModel::Bridge(c) => {
            cache = load_or_encode(&cfg, &kg, &mut mb, None)?;
            let scorer = BridgeScorer {
                model: &c.model,
                cache: &cache,
            };
            let report = evaluate_link_prediction(&scorer as &dyn TailScorer, &kg, &targets, &known, &options)?;
            let similarity = if gold.is_empty() {
                None
            } else {
                let hm = a
                    .sim_head_modality
                    .as_deref()
                    .ok_or_else(|| Error::Usage("--gold needs --sim-head-modality".into()))?;
                let rel = a
                    .sim_relation
                    .as_deref()
                    .ok_or_else(|| Error::Usage("--gold needs --sim-relation".into()))?;
                let mut ids: Option<Vec<String>> = None;
                let mut mats = Vec::new();
                for (aspect, path) in &gold {
                    mb.input(path);
                    let (gids, m) = read_matrix(path)?;
                    if ids.as_ref().is_some_and(|i| *i != gids) {
                        return Err(Error::format(path, "gold matrices list different ids"));
                    }
                    ids = Some(gids);
                    mats.push((aspect.clone(), m));
                }
                let ids = ids.unwrap_or_default();
                let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
                Some(semantic_similarity_eval(&c.model, &cache, &refs, hm, rel, &mats)?)
            };
            (report, similarity)
        }
        SavedModel::Kge(m) => {
            if !gold.is_empty() {
                return Err(Error::Usage("--gold needs a bridge checkpoint".into()));
            }
            (
                evaluate_link_prediction(m.as_ref(), &kg, &targets, &known, &options)?,
                None,
            )
        }
    };
    let report_path = dir.join("eval-report.json");
    write_json(&report_path, &report)?;
    mb.output(&report_path);
    let ranks_path = dir.join("eval-ranks.tsv");
    write_ranks(&ranks_path, part, &report.ranks)?;
    mb.output(&ranks_path);
    if let Some(s) = &similarity {
        let p = dir.join("similarity.json");
        write_json(&p, s)?;
        mb.output(&p);
    }
    mb.write(&dir)?;
    emit_json(out, &report)
}

fn cmd_retrieve(a: RetrieveArgs, args: &[String], det: bool, out: &mut dyn Write) -> Result<()> {
    check_exist(&[&a.config])?;
    let (cfg, raw) = RunConfig::load(&a.config)?;
    let ckpt = match &a.checkpoint {
        Some(p) => p.clone(),
        None => required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf(),
    };
    check_exist(&[&ckpt])?;
    if a.k == 0 {
        return Err(Error::Usage("-k must be positive".into()));
    }
    let mut mb = ManifestBuilder::new("retrieve", args, Some(&raw), det);
    mb.input(&a.config);
    mb.input(&ckpt);
    let nodes = required(&cfg.paths.nodes, "nodes")?;
    let triples = required(&cfg.paths.triples, "triples")?;
    check_exist(&[nodes, triples])?;
    let kg = load_graph(nodes, triples)?;
    let checkpoint = load_bridge(&ckpt)?;
    let cache = load_or_encode(&cfg, &kg, &mut mb, None)?;
    let result = retrieve_tails(
        &checkpoint.model,
        &cache,
        &kg,
        &a.node,
        &a.tail_modality,
        &a.relation,
        a.k,
    )?;
    if let Some(dir) = &cfg.paths.output_dir {
        mb.write(dir)?;
    }
    emit_json(out, &result)
}

fn parse_variant(s: &str) -> Result<Variant> {
    serde_json::from_value(serde_json::Value::String(s.into())).map_err(|_| {
        Error::Usage(format!(
            "unknown variant `{s}` (residual-additive, no-residual, rotate-multiplicative)"
        ))
    })
}

fn cmd_bench(a: BenchArgs, args: &[String], det: bool, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let mut preset = PlantedPreset::by_name(&a.preset, a.seed)?;
    if let Some(v) = &a.variant {
        preset = preset.with_variant(parse_variant(v)?);
    }
    if let Some(e) = a.epochs {
        preset.train.epochs = e;
    }
    let mut mb = ManifestBuilder::new("planted-bench", args, None, det);
    mb.seed(a.seed);
    let bench = run_planted_bench(&preset, &mut |rec| {
        let _ = writeln!(err, "{}", serde_json::to_string(rec).unwrap_or_default());
    })?;
    let summary = bench.summary(&preset);
    if let Some(dir) = &a.out_dir {
        let p = dir.join("planted-bench.json");
        write_json(&p, &summary)?;
        mb.output(&p);
        let c = dir.join("planted-bench.bbr");
        save_bridge(&c, &bench.outcome.last)?;
        mb.output(&c);
        mb.write(dir)?;
    }
    emit_json(out, &summary)
}

fn cmd_prompt(a: PromptArgs, args: &[String], det: bool, out: &mut dyn Write) -> Result<()> {
    let kind = TemplateKind::parse(&a.template)?;
    let mut mb = ManifestBuilder::new("prompt", args, None, det);
    let mut out_dir = None;
    let mut bundle: PromptBundle = if let Some(p) = &a.bundle {
        check_exist(&[p])?;
        mb.input(p);
        let mut b: PromptBundle = read_json(p)?;
        b.kind = kind;
        b
    } else {
        let config = a
            .config
            .as_deref()
            .ok_or_else(|| Error::Usage("prompt needs --bundle, or --config with --node and --role".into()))?;
        let node = a
            .node
            .as_deref()
            .ok_or_else(|| Error::Usage("prompt needs --node".into()))?;
        let roles = a.role.iter().map(|r| r.parse()).collect::<Result<Vec<RagRole>>>()?;
        check_exist(&[config])?;
        let (cfg, _) = RunConfig::load(config)?;
        mb.input(config);
        let ckpt = match &a.checkpoint {
            Some(p) => p.clone(),
            None => required(&cfg.paths.checkpoint, "checkpoint")?.to_path_buf(),
        };
        let nodes = required(&cfg.paths.nodes, "nodes")?;
        let triples = required(&cfg.paths.triples, "triples")?;
        check_exist(&[&ckpt, nodes, triples])?;
        mb.input(&ckpt);
        let kg = load_graph(nodes, triples)?;
        let checkpoint = load_bridge(&ckpt)?;
        let cache = load_or_encode(&cfg, &kg, &mut mb, None)?;
        out_dir = cfg.paths.output_dir.clone();
        retrieve_for_rag(kind, node, &roles, None, &checkpoint.model, &cache, &kg)?.0
    };
    if let Some(s) = a.structure {
        bundle.structure = Some(s);
    }
    if let Some(t) = a.text {
        bundle.text = Some(t);
    }
    let text = assemble_prompt(&bundle)?;
    if let Some(dir) = out_dir {
        let p = dir.join("prompt.txt");
        write_file(&p, text.as_bytes())?;
        mb.output(&p);
        mb.write(&dir)?;
    }
    emit(out, &text)
}
