//! One function per pipeline stage. Each reads its inputs from the run
//! directory, skips work whose output is already fresh, and writes its
//! artifacts back.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use axcode::axial_clustering::{
    default_grid, embed_items, label_clusters, run_config, sweep, ClusterRunResult, ClusteringConfig, ClusteringError,
    SweepReport,
};
use axcode::axial_llm::{group_recursive, run_llm_grouping, run_llm_grouping_combined, AxialLlmError, LlmGroupingConfig};
use axcode::category::CategorySystem;
use axcode::concept_graph::build_graph;
use axcode::corpus::{load_corpus, Corpus, Utterance};
use axcode::embedding::{embed_keyed, EmbeddingMatrix, ReductionSpec};
use axcode::evaluation::{evaluate_systems, EvalError, ExtrinsicProviders, Level, MetricReport};
use axcode::open_coding::{run_open_coding, CodedUtterance, CodingBackends, OpenCodingError, RefinementConfig};

use crate::artifact::{
    is_fresh, peek_header, read_json, read_jsonl, slug, write_json, write_jsonl, write_text, Header, RunDir, Stage,
};
use crate::config::{parse_reduction, PipelineConfig};
use crate::error::CliError;
use crate::report;

pub const INGEST: Stage = Stage { name: "ingest", version: 1 };
pub const OPENCODE: Stage = Stage { name: "opencode", version: 1 };
pub const SWEEP: Stage = Stage { name: "sweep", version: 1 };
pub const AXIAL_CLUSTER: Stage = Stage { name: "axial-cluster", version: 1 };
pub const AXIAL_LLM: Stage = Stage { name: "axial-llm", version: 1 };
pub const AXIAL_LEVEL: Stage = Stage { name: "axial-level", version: 1 };
pub const EVAL: Stage = Stage { name: "eval", version: 1 };

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum MethodFilter {
    Clustering,
    Llm,
}

impl MethodFilter {
    fn stage(self) -> Stage {
        match self {
            Self::Clustering => AXIAL_CLUSTER,
            Self::Llm => AXIAL_LLM,
        }
    }
}

/// Everything a command needs besides its own inputs.
pub struct Ctx {
    pub cfg: PipelineConfig,
    pub hash: String,
    pub run: RunDir,
    pub force: bool,
    pub method: Option<MethodFilter>,
    pub level: Option<Level>,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, force: bool, method: Option<MethodFilter>, level: Option<Level>) -> Self {
        let hash = cfg.hash();
        let run = RunDir(cfg.out_dir.clone());
        Self { cfg, hash, run, force, method, level }
    }

    fn header(&self, stage: Stage) -> Header {
        stage.header(&self.hash)
    }

    fn fresh(&self, path: &Path, stage: Stage) -> bool {
        let fresh = !self.force && is_fresh(path, stage, &self.hash);
        if fresh {
            tracing::info!(stage = stage.name, path = %path.display(), "up to date; use --force to recompute");
        }
        fresh
    }

    fn corpus(&self) -> Result<Corpus, CliError> {
        let (_, utterances): (_, Vec<Utterance>) = read_jsonl(&self.run.corpus(), INGEST, "ingest")?;
        let name = self.cfg.corpus.path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        Corpus::new(name, utterances).map_err(|e| CliError::Validation(e.to_string()))
    }

    fn coded(&self) -> Result<Vec<CodedUtterance>, CliError> {
        Ok(read_jsonl(&self.run.coded(), OPENCODE, "opencode")?.1)
    }

    /// First-level category systems produced under the current config.
    pub fn systems(&self) -> Result<Vec<(PathBuf, CategorySystem)>, CliError> {
        let mut out = Vec::new();
        for path in self.run.system_files() {
            let Some(h) = peek_header(&path) else { continue };
            let stage = if h.stage == AXIAL_CLUSTER.name { AXIAL_CLUSTER } else { AXIAL_LLM };
            if self.method.is_some_and(|m| m.stage().name != stage.name) {
                continue;
            }
            if h.config_hash != self.hash {
                tracing::warn!(path = %path.display(), "written under a different config; ignored");
                continue;
            }
            let (_, s): (_, CategorySystem) = read_json(&path, stage, "axial-cluster or axial-llm")?;
            out.push((path, s));
        }
        if out.is_empty() {
            return Err(CliError::Upstream {
                artifact: format!("category systems in {}", self.run.systems().display()),
                command: "axial-cluster or axial-llm",
            });
        }
        Ok(out)
    }
}

fn opencode_err(e: OpenCodingError) -> CliError {
    match e {
        OpenCodingError::Embedding(e) => CliError::Backend(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn llm_err(e: AxialLlmError) -> CliError {
    match e {
        AxialLlmError::AllBatchesFailed(_) | AxialLlmError::Embedding(_) => CliError::Backend(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn cluster_err(e: ClusteringError) -> CliError {
    match e {
        ClusteringError::Embedding(e) => CliError::Backend(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

fn eval_err(e: EvalError) -> CliError {
    match e {
        EvalError::Embedding(e) => CliError::Backend(e.to_string()),
        other => CliError::Validation(other.to_string()),
    }
}

pub fn ingest(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.run.corpus();
    if ctx.fresh(&out, INGEST) {
        return Ok(());
    }
    let corpus = load_corpus(&ctx.cfg.corpus.path, ctx.cfg.corpus.format)
        .map_err(|e| CliError::Validation(format!("corpus {}: {e}", ctx.cfg.corpus.path.display())))?;
    write_jsonl(&out, ctx.header(INGEST), corpus.utterances())?;
    tracing::info!(utterances = corpus.len(), "ingested");
    Ok(())
}

pub fn opencode(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.run.coded();
    if ctx.fresh(&out, OPENCODE) {
        return Ok(());
    }
    let corpus = ctx.corpus()?;
    let oc = &ctx.cfg.open_coding;
    let backends = CodingBackends {
        coders: oc.coders.iter().map(|c| ctx.cfg.backend(c)).collect::<Result<_, _>>()?,
        moderator: ctx.cfg.backend(&oc.moderator)?,
        templates: ctx.cfg.templates()?,
        temperature: oc.temperature,
        seed: Some(ctx.cfg.seed),
    };
    let provider = ctx.cfg.embedder(&oc.embedder)?;
    let refinement = RefinementConfig { tau: oc.tau, comparison_provider: oc.embedder.clone() };
    let coded = run_open_coding(&corpus, &backends, &refinement, provider.as_ref(), oc.parallelism).map_err(opencode_err)?;
    if !coded.is_empty() && coded.iter().all(|c| c.uncodable) {
        let first = coded[0].failures.first().map(|f| f.error.clone()).unwrap_or_default();
        return Err(CliError::Backend(format!("every coder failed on every utterance; first error: {first}")));
    }
    write_jsonl(&out, ctx.header(OPENCODE), &coded)?;
    let codes: std::collections::BTreeSet<&str> = coded.iter().filter_map(|c| c.code()).collect();
    tracing::info!(utterances = coded.len(), codes = codes.len(), "open coding done");
    Ok(())
}

fn clustering_section(ctx: &Ctx) -> Result<&crate::config::ClusteringSection, CliError> {
    ctx.cfg.clustering.as_ref().ok_or_else(|| CliError::Validation("[clustering] section is missing".into()))
}

fn reduction(ctx: &Ctx, s: &str) -> Result<ReductionSpec, CliError> {
    parse_reduction(s, ctx.cfg.seed).ok_or_else(|| CliError::Validation(format!("unknown reduction `{s}`")))
}

fn item_embeddings(ctx: &Ctx, coded: &[CodedUtterance], names: &[String]) -> Result<BTreeMap<String, EmbeddingMatrix>, CliError> {
    let mut out = BTreeMap::new();
    for name in names {
        let provider = ctx.cfg.embedder(name)?;
        out.insert(name.clone(), embed_items(coded, provider.as_ref()).map_err(cluster_err)?);
    }
    Ok(out)
}

pub fn sweep_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.run.sweep();
    if ctx.fresh(&out, SWEEP) {
        return Ok(());
    }
    let section = clustering_section(ctx)?;
    let coded = ctx.coded()?;
    let embeddings = item_embeddings(ctx, &coded, &section.embedders)?;
    let mut grid = Vec::new();
    for e in &section.embedders {
        for r in &section.reductions {
            let r = reduction(ctx, r)?;
            if section.grid.is_empty() {
                grid.extend(default_grid(e, r, ctx.cfg.seed));
            } else {
                grid.extend(section.grid.iter().map(|a| {
                    ClusteringConfig::new(a.clone()).with_embedder(e.clone()).with_reduction(r).with_seed(ctx.cfg.seed)
                }));
            }
        }
    }
    let report = sweep(&embeddings, &grid);
    tracing::info!(ranked = report.ranked.len(), skipped = report.skipped.len(), failed = report.failed.len(), "sweep done");
    write_json(&out, ctx.header(SWEEP), &report)?;
    write_text(&ctx.run.0.join("sweep.csv"), &report::sweep_csv(&report))
}

fn chosen_run(ctx: &Ctx, coded: &[CodedUtterance]) -> Result<ClusterRunResult, CliError> {
    let section = clustering_section(ctx)?;
    if let Some(algo) = &section.fixed {
        let embedder = section.fixed_embedder.clone().unwrap_or_else(|| section.embedders[0].clone());
        let r = reduction(ctx, section.fixed_reduction.as_deref().unwrap_or("none"))?;
        let cfg = ClusteringConfig::new(algo.clone()).with_embedder(embedder.clone()).with_reduction(r).with_seed(ctx.cfg.seed);
        let m = item_embeddings(ctx, coded, &[embedder])?.into_values().next().expect("one embedder");
        return run_config(&m, &cfg).map_err(cluster_err);
    }
    let (_, report): (_, SweepReport) = read_json(&ctx.run.sweep(), SWEEP, "sweep")?;
    report
        .ranked
        .into_iter()
        .find(|r| r.n_clusters > 0)
        .ok_or_else(|| CliError::Validation("no sweep configuration produced any cluster".into()))
}

pub fn axial_cluster(ctx: &Ctx) -> Result<(), CliError> {
    let section = clustering_section(ctx)?;
    let stamp = ctx.run.systems().join("cluster.json");
    if ctx.fresh(&stamp, AXIAL_CLUSTER) {
        return Ok(());
    }
    let coded = ctx.coded()?;
    let run = chosen_run(ctx, &coded)?;
    let labeler = ctx.cfg.backend(&section.labeler)?;
    let mut opts = section.labeling.clone();
    opts.seed = opts.seed.or(Some(ctx.cfg.seed));
    let system = label_clusters(&run, &coded, labeler.as_ref(), &ctx.cfg.templates()?, &opts).map_err(cluster_err)?;
    tracing::info!(config = %run.config.label(), categories = system.categories.len(), "clustered");
    write_json(&stamp, ctx.header(AXIAL_CLUSTER), &system)
}

fn level_path(ctx: &Ctx, system_file: &Path, level: usize) -> PathBuf {
    let stem = system_file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    ctx.run.levels().join(format!("{stem}.level{level}.json"))
}

pub fn axial_llm(ctx: &Ctx) -> Result<(), CliError> {
    let section = ctx.cfg.llm.as_ref().ok_or_else(|| CliError::Validation("[llm] section is missing".into()))?;
    let coded = ctx.coded()?;
    let templates = ctx.cfg.templates()?;
    let provider = ctx.cfg.embedder(&section.policy.label_embedder)?;
    let cfg = LlmGroupingConfig {
        policy: section.policy.clone(),
        batch_size: section.batch_size,
        temperature: section.temperature,
        seed: Some(ctx.cfg.seed),
        parallelism: section.parallelism,
    };
    let groupers = section.groupers.iter().map(|g| ctx.cfg.backend(g)).collect::<Result<Vec<_>, _>>()?;
    let mut jobs: Vec<(PathBuf, Option<usize>)> =
        section.groupers.iter().enumerate().map(|(i, g)| (ctx.run.systems().join(format!("llm-{}.json", slug(g))), Some(i))).collect();
    if section.combined && groupers.len() > 1 {
        jobs.push((ctx.run.systems().join("llm-combined.json"), None));
    }
    for (path, which) in jobs {
        if ctx.fresh(&path, AXIAL_LLM) {
            continue;
        }
        let system = match which {
            Some(i) => run_llm_grouping(&coded, groupers[i].clone(), &templates, &cfg, provider.as_ref()),
            None => run_llm_grouping_combined(&coded, &groupers, &templates, &cfg, provider.as_ref()),
        }
        .map_err(llm_err)?;
        tracing::info!(system = %system.display_name(), categories = system.categories.len(), "grouped");
        write_json(&path, ctx.header(AXIAL_LLM), &system)?;
        if section.depth > 0 && !system.categories.is_empty() {
            let grouper = groupers[which.unwrap_or(0)].clone();
            let levels = group_recursive(&system, grouper, &templates, &cfg, provider.as_ref(), section.depth).map_err(llm_err)?;
            for (k, level) in levels.iter().enumerate() {
                write_json(&level_path(ctx, &path, k + 2), ctx.header(AXIAL_LEVEL), level)?;
            }
        }
    }
    Ok(())
}

pub fn eval(ctx: &Ctx) -> Result<(), CliError> {
    let out = ctx.run.metrics();
    if ctx.method.is_none() && ctx.level.is_none() && ctx.fresh(&out, EVAL) {
        return Ok(());
    }
    ctx.coded()?;
    let corpus = ctx.corpus()?;
    let systems = ctx.systems()?;
    let provider = ctx.cfg.embedder(&ctx.cfg.evaluation.embedder)?;
    let ids: Vec<String> = corpus.ids().map(str::to_string).collect();
    let texts: Vec<String> = corpus.utterances().iter().map(|u| u.text.clone()).collect();
    let embeddings = embed_keyed(provider.as_ref(), ids, &texts).map_err(|e| CliError::Backend(e.to_string()))?;
    let tokens = ctx.cfg.token_embedder();
    let providers = ExtrinsicProviders { sentence: provider.as_ref(), tokens: tokens.as_deref() };
    let refs: Vec<&CategorySystem> = systems.iter().map(|(_, s)| s).collect();
    let mut reports = evaluate_systems(
        &refs,
        &corpus,
        &embeddings,
        &providers,
        &ctx.cfg.evaluation.coherence,
        ctx.cfg.evaluation.averaging,
    )
    .map_err(eval_err)?;
    if let Some(level) = ctx.level {
        for r in &mut reports {
            match level {
                Level::Domain => r.extrinsic.subtopic = None,
                Level::Subtopic => r.extrinsic.domain = None,
            }
        }
    }
    write_json(&out, ctx.header(EVAL), &reports)?;
    for r in &reports {
        tracing::info!(system = %r.system, coverage = r.intrinsic.coverage, categories = r.intrinsic.n_categories, "evaluated");
    }
    Ok(())
}

pub fn graph(ctx: &Ctx) -> Result<(), CliError> {
    let coded = ctx.coded()?;
    for (path, system) in ctx.systems()? {
        let mut levels = vec![system];
        for k in 2.. {
            let p = level_path(ctx, &path, k);
            if !p.exists() {
                break;
            }
            let (h, s): (Header, CategorySystem) = read_json(&p, AXIAL_LEVEL, "axial-llm")?;
            if h.config_hash != ctx.hash {
                break;
            }
            levels.push(s);
        }
        let refs: Vec<&CategorySystem> = levels.iter().collect();
        let g = build_graph(&coded, &refs).map_err(|e| CliError::Validation(e.to_string()))?;
        let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        write_text(&ctx.run.graph().join(format!("{stem}.dot")), &g.to_dot())?;
        write_text(&ctx.run.graph().join(format!("{stem}.json")), &g.to_json().map_err(|e| CliError::Validation(e.to_string()))?)?;
    }
    Ok(())
}

pub fn report_cmd(ctx: &Ctx) -> Result<(), CliError> {
    let (_, reports): (_, Vec<MetricReport>) = read_json(&ctx.run.metrics(), EVAL, "eval")?;
    let reports: Vec<MetricReport> = match ctx.method {
        Some(MethodFilter::Clustering) => reports.into_iter().filter(|r| r.kind() == "cluster").collect(),
        Some(MethodFilter::Llm) => reports.into_iter().filter(|r| r.kind() == "llm").collect(),
        None => reports,
    };
    let dir = ctx.run.report();
    write_text(&dir.join("intrinsic.csv"), &report::intrinsic_csv(&reports))?;
    write_text(&dir.join("extrinsic.csv"), &report::extrinsic_csv(&reports))?;
    write_text(&dir.join("scatter.csv"), &report::scatter_csv(&reports, ctx.level.unwrap_or(Level::Subtopic)))?;
    write_text(&dir.join("report.md"), &report::markdown(&reports))?;
    Ok(())
}

/// Every stage in order. `--method` limits which axial path runs.
pub fn run_all(ctx: &Ctx) -> Result<(), CliError> {
    ingest(ctx)?;
    opencode(ctx)?;
    let want = |m: MethodFilter| ctx.method.is_none_or(|x| x == m);
    if want(MethodFilter::Clustering) {
        if let Some(c) = &ctx.cfg.clustering {
            if c.fixed.is_none() {
                sweep_cmd(ctx)?;
            }
            axial_cluster(ctx)?;
        }
    }
    if want(MethodFilter::Llm) && ctx.cfg.llm.is_some() {
        axial_llm(ctx)?;
    }
    eval(ctx)?;
    graph(ctx)?;
    report_cmd(ctx)
}
