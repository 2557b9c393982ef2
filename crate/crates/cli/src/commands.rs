use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::Serialize;

use curlab::corpus::{self, Document, Source, TokenCounter};
use curlab::factuality::{self, FixedJudge, HttpJudge, Judge, JudgeOptions, KeywordJudge, Verdict};
use curlab::filters::{self, PipelineConfig, Scorers};
use curlab::injection::{self, InjectionSpec, JunkKind, RandomJunkStream};
use curlab::runlog::{self, EvalSlice, ModelConfig, RunRecord};
use curlab::scaling::{self, CrossingRow, ThresholdLaw};
use curlab::theory::{self, DescentConfig};

use crate::args::*;
use crate::error::{CliError, Context};
use crate::manifest::Artifacts;

pub struct Env {
    pub seed: u64,
    pub counter: Box<dyn TokenCounter>,
}

type Outcome = Result<Artifacts, CliError>;

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| CliError::new("io", format!("{}: {e}", dir.display())))?;
    }
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn open(path: &Path) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    drop(create(path)?);
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).cat("io")?;
    w.write_all(b"\n").cat("io")?;
    w.flush().cat("io")
}

/// `dir/name.jsonl` with `suffix` becomes `dir/name.<suffix>`.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    path.with_extension(suffix)
}

pub fn sample(a: &SampleArgs, env: &Env) -> Outcome {
    let mut docs = Vec::new();
    for p in &a.input {
        docs.extend(corpus::read_documents(p, env.counter.as_ref()).cat("corpus")?);
    }
    let label = a.label.clone().unwrap_or_else(|| format!("pool-{}", a.target_tokens));
    let pool = corpus::sample_pool(docs, a.target_tokens, env.seed, label).cat("corpus")?;
    ensure_parent(&a.output)?;
    corpus::write_pool(&a.output, &pool, env.counter.as_ref()).cat("io")?;
    log::info!("sampled {} documents, {} tokens", pool.len(), pool.total_tokens);

    let mut art = Artifacts::default();
    a.input.iter().for_each(|p| {
        art.input(p);
    });
    art.output(&a.output).output(&corpus::header_path(&a.output)).seed("sample", env.seed);
    Ok(art)
}

fn load_pipeline(spec: &str) -> Result<(PipelineConfig, Option<PathBuf>), CliError> {
    if PipelineConfig::PRESETS.contains(&spec) {
        return Ok((PipelineConfig::preset(spec).cat("filter")?, None));
    }
    let path = PathBuf::from(spec);
    if !path.exists() {
        return Err(CliError::new(
            "filter",
            format!("`{spec}` is neither a preset ({}) nor a pipeline file", PipelineConfig::PRESETS.join(", ")),
        ));
    }
    let cfg: PipelineConfig = serde_json::from_reader(open(&path)?).cat("filter")?;
    Ok((cfg, Some(path)))
}

pub fn filter(a: &FilterArgs, env: &Env) -> Outcome {
    let pool = corpus::read_pool(&a.pool, env.counter.as_ref()).cat("corpus")?;
    let (mut cfg, cfg_path) = load_pipeline(&a.pipeline)?;
    if let Some(p) = &a.profile {
        cfg.profile = Some(p.clone());
        cfg.filter = None;
    }
    let scorers = Scorers::default();
    let report = if a.outcomes.is_some() {
        filters::run_pipeline_with_outcomes(&pool, &cfg, &scorers)
    } else {
        filters::run_pipeline(&pool, &cfg, &scorers)
    }
    .cat("filter")?;

    ensure_parent(&a.output)?;
    corpus::write_pool(&a.output, &report.pool, env.counter.as_ref()).cat("io")?;
    let stats_path = a.stats.clone().unwrap_or_else(|| sibling(&a.output, "stats.csv"));
    filters::write_stats_csv(&report, create(&stats_path)?).cat("io")?;

    let mut art = Artifacts::default();
    art.input(&a.pool);
    if let Some(p) = &cfg_path {
        art.input(p);
    }
    art.output(&a.output).output(&corpus::header_path(&a.output)).output(&stats_path);
    if let Some(path) = &a.outcomes {
        let outcomes: Vec<_> = report.stages.iter().flat_map(|s| s.outcomes.iter().map(move |o| (s.stage.as_str(), o))).collect();
        let mut w = create(path)?;
        for (stage, o) in outcomes {
            let line = serde_json::json!({"stage": stage, "doc_id": o.doc_id, "kept": o.kept, "failed_rules": o.failed_rules});
            serde_json::to_writer(&mut w, &line).cat("io")?;
            w.write_all(b"\n").cat("io")?;
        }
        w.flush().cat("io")?;
        art.output(path);
    }
    Ok(art)
}

pub fn inject(a: &InjectArgs, env: &Env) -> Outcome {
    let counter = env.counter.as_ref();
    let pool = corpus::read_pool(&a.pool, counter).cat("corpus")?;
    let kind: JunkKind = a.kind.parse().cat("injection")?;
    let spec = InjectionSpec {
        kind,
        ratio: a.ratio,
        seed: env.seed,
    };
    let mut art = Artifacts::default();
    art.input(&a.pool).seed("inject", env.seed);

    let injected = match kind {
        JunkKind::RandomStrings => {
            let vocab = injection::build_vocab(env.seed);
            let stream = RandomJunkStream::matching(&vocab, &pool, env.seed, counter).cat("injection")?;
            injection::inject(&pool, &spec, stream).cat("injection")?
        }
        JunkKind::ShuffledDocs => {
            let source: Vec<Document> = match &a.source {
                Some(p) => {
                    art.input(p);
                    corpus::read_documents(p, counter).cat("corpus")?
                }
                None => pool.documents.clone(),
            };
            if source.iter().all(|d| d.token_count == 0) {
                return Err(CliError::new("injection", "shuffle source has no tokens"));
            }
            // Cycle through the source; each pass gets fresh ids and so a fresh permutation.
            let stream = (0u64..).flat_map(|pass| {
                source.iter().map(move |d| {
                    let renamed = Document::new(format!("shuffled-{pass}-{}", d.id), d.text.clone(), Source::Other, counter);
                    injection::shuffle_document(&renamed, env.seed, counter)
                })
            });
            injection::inject(&pool, &spec, stream).cat("injection")?
        }
    };
    ensure_parent(&a.output)?;
    corpus::write_pool(&a.output, &injected, counter).cat("io")?;
    art.output(&a.output).output(&corpus::header_path(&a.output));
    Ok(art)
}

fn default_eval_sets(records: &[RunRecord], given: &[String]) -> Result<Vec<String>, CliError> {
    if !given.is_empty() {
        return Ok(given.to_vec());
    }
    let mut iter = records.iter();
    let Some(first) = iter.next() else {
        return Err(CliError::new("runlog", "no run records"));
    };
    let mut sets = first.common_eval_sets();
    for r in iter {
        let other = r.common_eval_sets();
        sets.retain(|s| other.contains(s));
    }
    if sets.is_empty() {
        return Err(CliError::new("runlog", "records share no eval set; pass --eval-sets"));
    }
    Ok(sets)
}

fn load_runs(input: &RunsInput) -> Result<(Vec<RunRecord>, Vec<String>), CliError> {
    let records = runlog::read_runs_many(&input.runs).cat("runlog")?;
    let sets = default_eval_sets(&records, &input.eval_sets)?;
    Ok((records, sets))
}

pub fn ingest(a: &IngestArgs) -> Outcome {
    let (records, _) = load_runs(&a.input)?;
    ensure_parent(&a.output)?;
    runlog::write_runs(&a.output, &records).cat("io")?;
    eprintln!("ingested {} records", records.len());
    let mut art = Artifacts::default();
    a.input.runs.iter().for_each(|p| {
        art.input(p);
    });
    art.output(&a.output);
    Ok(art)
}

pub fn validate(a: &ValidateArgs) -> Outcome {
    let (records, sets) = load_runs(&a.input)?;
    for r in &records {
        runlog::best_eval(r, &sets).cat("runlog")?;
    }
    println!("{} records valid; eval sets: {}", records.len(), sets.join(","));
    Ok(Artifacts::default())
}

pub fn report(a: &ReportArgs) -> Outcome {
    let (records, sets) = load_runs(&a.input)?;
    let rows = runlog::summarize(&records, &sets).cat("runlog")?;
    runlog::write_summary_csv(&rows, create(&a.output)?).cat("io")?;
    let mut art = Artifacts::default();
    a.input.runs.iter().for_each(|p| {
        art.input(p);
    });
    art.output(&a.output);
    Ok(art)
}

pub fn pareto(a: &ParetoArgs) -> Outcome {
    let (records, sets) = load_runs(&a.input)?;
    let points = scaling::frontier_points(&records, &sets).cat("scaling")?;
    let frontier = if a.by_label {
        let mut groups: BTreeMap<&str, Vec<scaling::FrontierPoint>> = BTreeMap::new();
        for p in &points {
            groups.entry(p.dataset_label.as_str()).or_default().push(p.clone());
        }
        groups.values().flat_map(|g| scaling::pareto_frontier(g)).collect()
    } else {
        scaling::pareto_frontier(&points)
    };
    scaling::write_csv(&frontier, create(&a.output)?).cat("io")?;
    let mut art = Artifacts::default();
    a.input.runs.iter().for_each(|p| {
        art.input(p);
    });
    art.output(&a.output);
    Ok(art)
}

pub fn crossing(a: &CrossingArgs) -> Outcome {
    let pool_runs = runlog::read_runs_many(&a.pool_runs).cat("runlog")?;
    let filtered_runs = runlog::read_runs_many(&a.filtered_runs).cat("runlog")?;
    let all: Vec<RunRecord> = pool_runs.iter().chain(&filtered_runs).cloned().collect();
    let sets = default_eval_sets(&all, &a.eval_sets)?;

    let mut points = Vec::new();
    for ((size, m), result) in scaling::crossing_grid(&pool_runs, &filtered_runs, &sets) {
        let cp = result.map_err(|e| CliError::new("scaling", format!("model {size}, pool {m}: {e}")))?;
        if cp.extreme_epochs {
            log::warn!("model {size}, pool {m}: crossing beyond {} epochs", scaling::EXTREME_EPOCHS);
        }
        points.push(cp);
    }
    let rows: Vec<CrossingRow> = points.iter().map(CrossingRow::from).collect();
    scaling::write_csv(&rows, create(&a.output)?).cat("io")?;

    let mut art = Artifacts::default();
    a.pool_runs.iter().chain(&a.filtered_runs).for_each(|p| {
        art.input(p);
    });
    art.output(&a.output);
    if let Some(p) = &a.details {
        write_json(p, &points)?;
        art.output(p);
    }
    Ok(art)
}

#[derive(Debug, Serialize, serde::Deserialize)]
pub struct LawSummary {
    pub law: ThresholdLaw,
    pub quadratics: Vec<scaling::QuadFit>,
    pub pool_tokens: f64,
    pub extrapolated_compute: f64,
}

fn load_models(path: Option<&Path>) -> Result<Vec<ModelConfig>, CliError> {
    match path {
        None => Ok(runlog::reference_models().into_iter().map(|m| m.config).collect()),
        Some(p) => serde_json::from_reader(open(p)?).cat("runlog"),
    }
}

pub fn scaling_law(a: &ScalingLawArgs) -> Outcome {
    let crossings = scaling::read_crossings_csv(open(&a.crossings)?).cat("scaling")?;
    let (quads, quad_warnings) = scaling::fit_quadratics(&crossings);
    let mut law = match a.method {
        Method::Tpp => {
            let models = load_models(a.models.as_deref())?;
            scaling::threshold_tokens_per_param(&quads, &models, a.ratio)
        }
        Method::Epoch => scaling::threshold_epoch_constraint(&quads, a.epochs),
    }
    .cat("scaling")?;
    law.warnings.splice(0..0, quad_warnings);
    scaling::write_csv(&law.points, create(&a.output)?).cat("io")?;

    let summary_path = a.summary.clone().unwrap_or_else(|| sibling(&a.output, "summary.json"));
    let summary = LawSummary {
        extrapolated_compute: scaling::extrapolate(&law, a.pool_tokens),
        pool_tokens: a.pool_tokens,
        quadratics: quads.into_values().collect(),
        law,
    };
    write_json(&summary_path, &summary)?;
    println!(
        "beta = {}, r2 = {}, compute at {:e} tokens = {:e} FLOPs",
        summary.law.beta, summary.law.r2, summary.pool_tokens, summary.extrapolated_compute
    );

    let mut art = Artifacts::default();
    art.input(&a.crossings);
    if let Some(p) = &a.models {
        art.input(p);
    }
    art.output(&a.output).output(&summary_path);
    Ok(art)
}

#[derive(Debug, Serialize)]
struct Extrapolation {
    pool_tokens: f64,
    compute: f64,
}

pub fn extrapolate(a: &ExtrapolateArgs) -> Outcome {
    let summary: LawSummary = serde_json::from_reader(open(&a.law)?).cat("scaling")?;
    if let Some(bad) = a.pool_tokens.iter().find(|m| !(**m > 0.0 && m.is_finite())) {
        return Err(CliError::new("scaling", format!("pool size must be positive, got {bad}")));
    }
    let rows: Vec<Extrapolation> = a
        .pool_tokens
        .iter()
        .map(|&m| Extrapolation {
            pool_tokens: m,
            compute: scaling::extrapolate(&summary.law, m),
        })
        .collect();
    for r in &rows {
        println!("{:e}\t{:e}", r.pool_tokens, r.compute);
    }
    let mut art = Artifacts::default();
    art.input(&a.law);
    if let Some(p) = &a.output {
        write_json(p, &rows)?;
        art.output(p);
    }
    Ok(art)
}

fn default_positions(context_length: usize) -> Vec<usize> {
    let mut t: Vec<usize> = std::iter::successors(Some(1usize), |x| x.checked_mul(2))
        .take_while(|&x| x < context_length)
        .collect();
    t.push(context_length);
    t
}

pub fn slice_loss(a: &SliceLossArgs) -> Outcome {
    let mut w = csv::Writer::from_writer(create(&a.output)?);
    w.write_record(["slice", "t", "loss"]).cat("io")?;
    let mut art = Artifacts::default();
    for path in &a.slice {
        let slice: EvalSlice = serde_json::from_reader(open(path)?).cat("runlog")?;
        let positions = if a.positions.is_empty() {
            default_positions(slice.context_length)
        } else {
            a.positions.clone()
        };
        let name = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        for t in positions {
            let loss = runlog::slice_loss(&slice, t).cat("runlog")?;
            w.write_record([name.clone(), t.to_string(), loss.to_string()]).cat("io")?;
        }
        art.input(path);
    }
    w.flush().cat("io")?;
    art.output(&a.output);
    Ok(art)
}

#[derive(Debug, Serialize)]
struct Aggregate {
    check: &'static str,
    trials: usize,
    passed: usize,
    max_abs_error: f64,
    tolerance: f64,
    pass: bool,
}

pub fn verify_theory(a: &VerifyTheoryArgs, env: &Env) -> Outcome {
    let mut art = Artifacts::default();
    art.seed("verify-theory", env.seed);
    if a.trials == 0 {
        return Err(CliError::new("theory", "--trials must be positive"));
    }
    let mut sections = serde_json::Map::new();
    let mut all_pass = true;
    let mut emit = |check: &'static str, verdicts: Vec<serde_json::Value>, passed: usize, max_err: f64, tol: f64| {
        for v in &verdicts {
            println!("{v}");
        }
        let agg = Aggregate {
            check,
            trials: verdicts.len(),
            passed,
            max_abs_error: max_err,
            tolerance: tol,
            pass: passed == verdicts.len(),
        };
        println!("{}", serde_json::to_string(&agg).expect("aggregate serializes"));
        all_pass &= agg.pass;
        sections.insert(check.to_string(), serde_json::json!({"verdicts": verdicts, "aggregate": agg}));
    };
    if a.prop1 {
        let tol = a.tol.unwrap_or(1e-4);
        let cfg = DescentConfig {
            steps: a.steps,
            restarts: a.restarts,
            seed: env.seed,
            ..DescentConfig::default()
        };
        let verdicts = theory::verify_prop1(a.trials, env.seed, tol, &cfg);
        let passed = verdicts.iter().filter(|v| v.pass).count();
        let max_err = verdicts.iter().flat_map(|v| v.checks.iter().map(|c| c.abs_error)).fold(0.0, f64::max);
        let json = verdicts.iter().map(|v| serde_json::to_value(v).expect("verdict serializes")).collect();
        emit("prop1", json, passed, max_err, tol);
    }
    if a.filter_fact {
        let tol = a.tol.unwrap_or(1e-12);
        let verdicts = theory::verify_filter_fact(a.trials, env.seed, tol);
        let passed = verdicts.iter().filter(|v| v.pass).count();
        let max_err = verdicts.iter().map(|v| v.abs_error).fold(0.0, f64::max);
        let json = verdicts.iter().map(|v| serde_json::to_value(v).expect("verdict serializes")).collect();
        emit("filter_fact", json, passed, max_err, tol);
    }
    if let Some(p) = &a.output {
        write_json(p, &sections)?;
        art.output(p);
    }
    if !all_pass {
        return Err(CliError::new("verification", "one or more trials failed"));
    }
    Ok(art)
}

fn mock_judge(name: &str) -> Result<Box<dyn Judge>, CliError> {
    if name == "keyword" {
        return Ok(Box::new(KeywordJudge));
    }
    Verdict::ALL
        .into_iter()
        .find(|v| v.label().eq_ignore_ascii_case(name))
        .map(|v| Box::new(FixedJudge(v)) as Box<dyn Judge>)
        .ok_or_else(|| CliError::new("factuality", format!("unknown mock `{name}`; use keyword, support, refute, related or unrelated")))
}

pub fn judge(a: &JudgeArgs, env: &Env) -> Outcome {
    let items = factuality::read_qa_items(&a.qa).cat("factuality")?;
    let docs: Vec<Document> = corpus::read_documents(&a.pool, env.counter.as_ref()).cat("corpus")?;
    let judge: Box<dyn Judge> = match (&a.mock, &a.endpoint) {
        (Some(m), _) => mock_judge(m)?,
        (None, Some(url)) => {
            if !(a.timeout_secs > 0.0 && a.timeout_secs.is_finite()) {
                return Err(CliError::new("factuality", "--timeout-secs must be positive"));
            }
            Box::new(HttpJudge::from_env(url.clone(), a.model.clone(), Duration::from_secs_f64(a.timeout_secs)))
        }
        (None, None) => unreachable!("clap requires a backend"),
    };
    let opts = JudgeOptions {
        max_concurrency: a.max_concurrency.max(1),
        max_attempts: a.max_attempts.max(1),
        backoff: Duration::from_millis(a.backoff_ms),
    };

    let mut outcomes = Vec::new();
    for qa in &items {
        let matched = factuality::keyword_match(&docs, qa);
        log::info!("{}: {} matching documents", qa.id, matched.len());
        outcomes.extend(factuality::judge_documents(&matched, qa, judge.as_ref(), &opts));
    }
    let failed = outcomes.iter().filter(|o| o.judgement().is_none()).count();
    if failed > 0 {
        log::warn!("{failed} of {} documents could not be judged", outcomes.len());
    }
    ensure_parent(&a.output)?;
    factuality::write_jsonl(&a.output, &outcomes).cat("io")?;
    let rows = factuality::aggregate_judgements(&outcomes, &items);
    let agg_path = a.aggregate.clone().unwrap_or_else(|| sibling(&a.output, "aggregate.csv"));
    factuality::write_aggregate_csv(&rows, create(&agg_path)?).cat("io")?;

    let mut art = Artifacts::default();
    art.input(&a.qa).input(&a.pool).output(&a.output).output(&agg_path);
    Ok(art)
}
