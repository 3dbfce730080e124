//! End-to-end commands: run a template over a corpus, evaluate
//! predictions, build pseudolabel training sets, derive reverse-substitution
//! datasets, and inspect replay stores.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::corpus::{self, CorpusError, GoldRecord, ReverseSubConfig, SenseInventory};
use crate::gateway::{
    open_store, GatewayError, Generator, LiveBackend, LiveConfig, LlmRequest, Recorder, ReplayStore, StoreError,
    StoreMode, VerifyReport,
};
use crate::metrics::{self, ArmMatchConfig, GroupedPair, MetricError, UnigramMode};
use crate::model::{Diagnostics, Snippet, StructuredOutput, TaskKind, TokenLabels};
use crate::prompting::{fill, Mode, PromptTemplate, RegistryError, TemplateRegistry};
use crate::resolvers::{resolve, GapFill, ResolveContext};
use crate::validate::validate_output;
use crate::weaksup::{self, Pseudolabel, SelectionConfig, TrainingExample, WeakSupError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
    #[error("{0}")]
    Api(String),
    #[error("{0}")]
    Mismatch(String),
}

impl PipelineError {
    /// 1 mismatch, 2 config, 3 I/O, 4 API.
    pub fn exit_code(&self) -> i32 {
        match self {
            PipelineError::Mismatch(_) => 1,
            PipelineError::Config(_) => 2,
            PipelineError::Io(_) => 3,
            PipelineError::Api(_) => 4,
        }
    }
}

impl From<CorpusError> for PipelineError {
    fn from(e: CorpusError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<StoreError> for PipelineError {
    fn from(e: StoreError) -> Self {
        PipelineError::Io(e.to_string())
    }
}

impl From<RegistryError> for PipelineError {
    fn from(e: RegistryError) -> Self {
        match e {
            RegistryError::Invalid { .. } => PipelineError::Config(e.to_string()),
            _ => PipelineError::Io(e.to_string()),
        }
    }
}

impl From<WeakSupError> for PipelineError {
    fn from(e: WeakSupError) -> Self {
        match e {
            WeakSupError::Io { .. } | WeakSupError::Parse { .. } => PipelineError::Io(e.to_string()),
            _ => PipelineError::Config(e.to_string()),
        }
    }
}

impl From<MetricError> for PipelineError {
    fn from(e: MetricError) -> Self {
        PipelineError::Mismatch(e.to_string())
    }
}

pub fn default_engine(task: TaskKind) -> &'static str {
    match task {
        TaskKind::SenseDisambiguation => "text-davinci-edit-001",
        _ => "text-davinci-002",
    }
}

/// Completion length per task; edit requests carry none.
pub fn default_max_tokens(task: TaskKind) -> Option<u32> {
    match task {
        TaskKind::SenseDisambiguation => None,
        TaskKind::ArmIdentification | TaskKind::EvidenceTokens => Some(128),
        TaskKind::Coreference => Some(64),
        TaskKind::MedStatus => Some(256),
        TaskKind::MedAttrToken | TaskKind::MedAttrPhrase | TaskKind::MedAttrRelation => Some(1024),
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Replay { store: PathBuf },
    /// Live API; with a store every exchange is appended to it.
    Live { record: Option<PathBuf> },
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub task: TaskKind,
    pub template: String,
    /// Registry file; the builtin templates when absent.
    pub templates: Option<PathBuf>,
    pub backend: Backend,
    pub snippets: PathBuf,
    /// Required for sense disambiguation.
    pub inventory: Option<PathBuf>,
    pub output: PathBuf,
    pub engine: Option<String>,
    pub max_tokens: Option<u32>,
    pub gap_fill: GapFill,
    /// Overrides `LiveConfig::from_env` (tests, custom endpoints).
    pub live: Option<LiveConfig>,
}

impl RunConfig {
    pub fn new(task: TaskKind, template: &str, backend: Backend, snippets: &Path, output: &Path) -> Self {
        Self {
            task,
            template: template.to_string(),
            templates: None,
            backend,
            snippets: snippets.to_path_buf(),
            inventory: None,
            output: output.to_path_buf(),
            engine: None,
            max_tokens: None,
            gap_fill: GapFill::default(),
            live: None,
        }
    }
}

/// One line of a predictions file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub raw_output: Option<String>,
    pub structured_output: Option<StructuredOutput>,
    pub diagnostics: Diagnostics,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub total: usize,
    pub failed: usize,
    pub api_failures: usize,
}

impl RunSummary {
    /// Unparseable outputs are recorded per line and do not fail the run;
    /// a request that never got an answer does.
    pub fn exit_code(&self) -> i32 {
        if self.api_failures > 0 {
            4
        } else {
            0
        }
    }
}

fn load_registry(path: Option<&Path>) -> Result<TemplateRegistry, PipelineError> {
    match path {
        Some(p) => Ok(TemplateRegistry::load(p)?),
        None => Ok(TemplateRegistry::builtin()),
    }
}

enum Failure {
    Api(String),
    Other(String),
}

/// The request `cmd_run` sends for one snippet, and the answer prefix the
/// response continues.
pub fn build_request(
    template: &PromptTemplate,
    snippet: &Snippet,
    engine: &str,
    max_tokens: Option<u32>,
) -> Result<(LlmRequest, Option<String>), crate::prompting::PromptError> {
    let filled = fill(template, snippet)?;
    let req = match template.mode {
        Mode::Edit => LlmRequest {
            mode: Mode::Edit,
            engine: engine.to_string(),
            prompt: filled.prompt,
            instruction: filled.instruction,
            temperature: 0.0,
            max_tokens: None,
        },
        Mode::Completion => LlmRequest {
            mode: Mode::Completion,
            engine: engine.to_string(),
            prompt: filled.prompt,
            instruction: None,
            temperature: 0.0,
            max_tokens,
        },
    };
    Ok((req, filled.answer_prefix))
}

struct Runner<'a> {
    task: TaskKind,
    template: &'a PromptTemplate,
    inventory: Option<&'a SenseInventory>,
    generator: &'a dyn Generator,
    engine: String,
    max_tokens: Option<u32>,
    gap_fill: GapFill,
}

impl Runner<'_> {
    fn request(&self, snippet: &Snippet) -> Result<(LlmRequest, Option<String>), Failure> {
        build_request(self.template, snippet, &self.engine, self.max_tokens).map_err(|e| Failure::Other(e.to_string()))
    }

    fn run_one(&self, snippet: &Snippet) -> (Prediction, Option<Failure>) {
        let mut pred = Prediction {
            id: snippet.id.clone(),
            raw_output: None,
            structured_output: None,
            diagnostics: Diagnostics::new(),
            error: None,
        };
        let fail = |mut pred: Prediction, f: Failure| {
            pred.error = Some(match &f {
                Failure::Api(m) | Failure::Other(m) => m.clone(),
            });
            (pred, Some(f))
        };
        let cands = if self.task == TaskKind::SenseDisambiguation {
            let found = snippet.side().and_then(|a| self.inventory.and_then(|inv| inv.get(a)));
            match found {
                Some(c) => Some(c),
                None => return fail(pred, Failure::Other("acronym missing from inventory".into())),
            }
        } else {
            None
        };
        let (req, prefix) = match self.request(snippet) {
            Ok(r) => r,
            Err(f) => return fail(pred, f),
        };
        let response = match self.generator.generate(&req) {
            Ok(r) => r,
            Err(e) => return fail(pred, Failure::Api(e.to_string())),
        };
        pred.raw_output = Some(response.clone());
        let guided = prefix.is_some() || self.template.demonstration.is_some();
        let resolver_input = format!("{}{}", prefix.unwrap_or_default(), response);
        let mut ctx = ResolveContext::new(snippet)
            .guided(guided)
            .edit_mode(self.template.mode == Mode::Edit)
            .gap_fill(self.gap_fill);
        if let Some(c) = cands {
            ctx = ctx.candidates(c);
        }
        match resolve(self.task, &resolver_input, ctx) {
            Ok(r) => {
                let cand_list = cands.map(|c| c.expansions.as_slice());
                if let Err(v) = validate_output(self.task, &r.output, snippet, cand_list) {
                    let msg = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
                    return fail(pred, Failure::Other(msg));
                }
                pred.structured_output = Some(r.output);
                pred.diagnostics = r.diagnostics;
                (pred, None)
            }
            Err(e) => fail(pred, Failure::Other(e.to_string())),
        }
    }
}

/// Runs the configured template over every snippet and writes one
/// prediction line per snippet, in input order.
pub fn cmd_run(config: &RunConfig) -> Result<RunSummary, PipelineError> {
    let registry = load_registry(config.templates.as_deref())?;
    let template = registry.get(config.task, &config.template).ok_or_else(|| {
        PipelineError::Config(format!(
            "no template `{}` for {} (available: {})",
            config.template,
            config.task,
            registry.names(config.task).join(", ")
        ))
    })?;
    let inventory = match (&config.inventory, config.task) {
        (Some(p), _) => Some(corpus::load_inventory(p)?),
        (None, TaskKind::SenseDisambiguation) => {
            return Err(PipelineError::Config("sense disambiguation needs --inventory".into()))
        }
        (None, _) => None,
    };
    let generator: Box<dyn Generator> = match &config.backend {
        Backend::Replay { store } => Box::new(open_store(store, StoreMode::Read)?),
        Backend::Live { record } => {
            let live = match &config.live {
                Some(l) => l.clone(),
                None => LiveConfig::from_env().map_err(|e| PipelineError::Config(e.to_string()))?,
            };
            let backend = LiveBackend::new(live).map_err(|e| PipelineError::Config(e.to_string()))?;
            match record {
                Some(path) => Box::new(Recorder::new(backend, open_store(path, StoreMode::Append)?)),
                None => Box::new(backend),
            }
        }
    };
    let snippets = corpus::load_snippets(&config.snippets)?;
    let runner = Runner {
        task: config.task,
        template,
        inventory: inventory.as_ref(),
        generator: generator.as_ref(),
        engine: config
            .engine
            .clone()
            .unwrap_or_else(|| default_engine(config.task).to_string()),
        max_tokens: config.max_tokens.or(default_max_tokens(config.task)),
        gap_fill: config.gap_fill,
    };
    let results: Vec<(Prediction, Option<Failure>)> = snippets.par_iter().map(|s| runner.run_one(s)).collect();
    let mut summary = RunSummary {
        total: results.len(),
        ..Default::default()
    };
    for (_, f) in &results {
        match f {
            Some(Failure::Api(_)) => {
                summary.failed += 1;
                summary.api_failures += 1;
            }
            Some(Failure::Other(_)) => summary.failed += 1,
            None => {}
        }
    }
    let preds: Vec<Prediction> = results.into_iter().map(|(p, _)| p).collect();
    corpus::write_jsonl(&config.output, &preds)?;
    Ok(summary)
}

pub fn load_predictions(path: &Path) -> Result<Vec<Prediction>, PipelineError> {
    let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let p: Prediction = serde_json::from_str(line)
            .map_err(|e| PipelineError::Io(format!("{}:{}: {e}", path.display(), i + 1)))?;
        out.push(p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct EvalOptions {
    pub unigram_mode: UnigramMode,
    pub arms: ArmMatchConfig,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    pub report: Value,
    pub csv: String,
}

fn flat_csv(v: &Value) -> String {
    fn walk(prefix: &str, v: &Value, rows: &mut Vec<(String, String)>) {
        match v {
            Value::Object(m) => {
                for (k, x) in m {
                    let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                    walk(&key, x, rows);
                }
            }
            other => rows.push((prefix.to_string(), other.to_string())),
        }
    }
    let mut rows = Vec::new();
    walk("", v, &mut rows);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["metric", "value"]).expect("in-memory write");
    for (k, x) in rows {
        w.write_record([k, x]).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

/// Scores predictions against gold with the task's metric set.
pub fn cmd_eval(predictions: &Path, gold: &Path, task: TaskKind, opts: &EvalOptions) -> Result<EvalOutput, PipelineError> {
    let gold = corpus::load_gold(gold, task)?;
    let preds = load_predictions(predictions)?;
    let p: Vec<(String, Option<StructuredOutput>)> =
        preds.into_iter().map(|x| (x.id, x.structured_output)).collect();
    let g: Vec<(String, GoldRecord)> = gold.records.iter().map(|r| (r.id().to_string(), r.clone())).collect();
    let aligned = metrics::align_by_id(&p, &g)?;
    let n = aligned.len();

    let mut csv = None;
    let metrics_value = match task {
        TaskKind::SenseDisambiguation => {
            let pairs: Vec<GroupedPair<usize>> = aligned
                .iter()
                .map(|(_, p, g)| {
                    let GoldRecord::Sense(s) = g else { unreachable!() };
                    let pred = match p {
                        Some(StructuredOutput::Choice(i)) => *i,
                        _ => usize::MAX,
                    };
                    GroupedPair {
                        group: s.acronym.clone(),
                        pred,
                        gold: s.label_index().expect("validated gold"),
                    }
                })
                .collect();
            let r = metrics::grouped_accuracy_macro_f1::<f64, _>(&pairs);
            csv = Some(r.to_csv());
            to_value(&r)
        }
        TaskKind::EvidenceTokens => {
            let mut docs = Vec::new();
            let empties: Vec<Vec<u8>> = aligned
                .iter()
                .map(|(_, _, g)| match g {
                    GoldRecord::Evidence(e) => vec![0; e.labels.len()],
                    _ => unreachable!(),
                })
                .collect();
            for ((id, p, g), empty) in aligned.iter().zip(&empties) {
                let GoldRecord::Evidence(e) = g else { unreachable!() };
                let pl = match p {
                    Some(StructuredOutput::TokenLabels(TokenLabels::Binary(l))) => l.as_slice(),
                    _ => empty.as_slice(),
                };
                docs.push((*id, pl, e.labels.as_slice()));
            }
            to_value(&metrics::corpus_token_f1::<f64>(&docs)?)
        }
        TaskKind::ArmIdentification => {
            let scores: Vec<_> = aligned
                .iter()
                .map(|(_, p, g)| {
                    let GoldRecord::Arms(a) = g else { unreachable!() };
                    let pred = match p {
                        Some(StructuredOutput::SpanList(v)) => v.clone(),
                        _ => Vec::new(),
                    };
                    metrics::arm_accuracy(&pred, &a.arms, &opts.arms)
                })
                .collect();
            let frac = |f: &dyn Fn(&metrics::ArmScore) -> bool| metrics::ratio::<f64>(scores.iter().filter(|s| f(s)).count(), n);
            json!({
                "accuracy": frac(&|s| s.correct()),
                "count_accuracy": frac(&|s| s.count_correct),
                "content_accuracy": frac(&|s| s.content_correct),
            })
        }
        TaskKind::Coreference => {
            let pairs: Vec<(String, String)> = aligned
                .iter()
                .map(|(_, p, g)| {
                    let GoldRecord::Coref(c) = g else { unreachable!() };
                    let pred = match p {
                        Some(StructuredOutput::Span(s)) => s.clone(),
                        _ => String::new(),
                    };
                    let best = metrics::best_gold(&pred, &c.antecedents, opts.unigram_mode)
                        .unwrap_or(c.antecedents[0].as_str())
                        .to_string();
                    (pred, best)
                })
                .collect();
            let refs: Vec<(&str, &str)> = pairs.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
            to_value(&metrics::macro_unigram::<f64>(&refs, opts.unigram_mode))
        }
        TaskKind::MedStatus => {
            let mut pred_lists = Vec::new();
            let mut gold_lists = Vec::new();
            for (_, p, g) in &aligned {
                let GoldRecord::MedStatus(m) = g else { unreachable!() };
                pred_lists.push(match p {
                    Some(StructuredOutput::MedStatusList(v)) => v.clone(),
                    _ => Vec::new(),
                });
                gold_lists.push(m.meds.clone());
            }
            let pairs: Vec<_> = pred_lists.iter().zip(&gold_lists).map(|(p, g)| (p.as_slice(), g.as_slice())).collect();
            let names = metrics::med_micro_pr::<f64>(&pairs);
            let status = match metrics::conditional_status_eval::<f64>(std::slice::from_ref(&pred_lists), &gold_lists) {
                Ok(r) => json!({
                    "subset_size": r.subset_size,
                    "gold_size": r.gold_size,
                    "accuracy": r.systems[0].accuracy,
                    "macro_f1": r.systems[0].macro_f1,
                }),
                Err(_) => Value::Null,
            };
            json!({ "names": to_value(&names), "status": status })
        }
        TaskKind::MedAttrToken => {
            let mut docs = Vec::new();
            for (id, p, g) in &aligned {
                let GoldRecord::MedAttrToken(t) = g else { unreachable!() };
                let pred = match p {
                    Some(StructuredOutput::TokenLabels(TokenLabels::Typed(l))) => l.clone(),
                    _ => vec![crate::model::TypedLabel::NONE; t.labels.len()],
                };
                docs.push((*id, pred, t.labels.as_slice()));
            }
            let refs: Vec<_> = docs.iter().map(|(i, p, g)| (*i, p.as_slice(), *g)).collect();
            to_value(&metrics::typed_token_f1::<f64>(&refs)?)
        }
        TaskKind::MedAttrPhrase => {
            let mut docs = Vec::new();
            for (id, p, g) in &aligned {
                let GoldRecord::MedAttrPhrase(t) = g else { unreachable!() };
                let pred = match p {
                    Some(StructuredOutput::TokenLabels(TokenLabels::Bio(l))) => l.clone(),
                    _ => vec![crate::model::BioTag::Outside; t.labels.len()],
                };
                docs.push((*id, pred, t.labels.as_slice()));
            }
            let refs: Vec<_> = docs.iter().map(|(i, p, g)| (*i, p.as_slice(), *g)).collect();
            to_value(&metrics::phrase_f1::<f64>(&refs)?)
        }
        TaskKind::MedAttrRelation => {
            let mut docs = Vec::new();
            for (_, p, g) in &aligned {
                let GoldRecord::MedAttrRelation(r) = g else { unreachable!() };
                let pred = match p {
                    Some(StructuredOutput::MedAttrRecords(v)) => v.clone(),
                    _ => Vec::new(),
                };
                docs.push((pred, r.records.as_slice()));
            }
            let refs: Vec<_> = docs.iter().map(|(p, g)| (p.as_slice(), *g)).collect();
            to_value(&metrics::relation_f1::<f64>(&refs))
        }
    };
    let report = json!({ "task": task.as_str(), "n": n, "metrics": metrics_value });
    let csv = csv.unwrap_or_else(|| flat_csv(&report["metrics"]));
    Ok(EvalOutput { report, csv })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PseudolabelSummary {
    pub input: usize,
    pub after_overlap_filter: usize,
    pub target: usize,
    pub selected: usize,
    pub extra_for_groups: usize,
    pub extra_for_agreement: usize,
}

/// Overlap filter, cut-statistic selection, training-set export. Without a
/// features file, TF-IDF vectors of the snippet texts are used.
pub fn cmd_pseudolabel(
    predictions: &Path,
    snippets: &Path,
    inventory: &Path,
    features: Option<&Path>,
    config: &SelectionConfig,
    output: &Path,
) -> Result<PseudolabelSummary, PipelineError> {
    config.check()?;
    let preds = load_predictions(predictions)?;
    let snippets: HashMap<String, Snippet> = corpus::load_snippets(snippets)?
        .into_iter()
        .map(|s| (s.id.clone(), s))
        .collect();
    let inventory = corpus::load_inventory(inventory)?;
    let mut labels = Vec::new();
    for p in &preds {
        let Some(StructuredOutput::Choice(i)) = p.structured_output else { continue };
        let snip = snippets
            .get(&p.id)
            .ok_or_else(|| PipelineError::Mismatch(format!("prediction `{}` has no snippet", p.id)))?;
        let mut l = Pseudolabel::new(&p.id, i, p.diagnostics.get("overlap_len"));
        l.group = snip.side.clone();
        labels.push(l);
    }
    let input = labels.len();
    let mut kept = weaksup::filter_by_overlap(labels, config.min_overlap);
    let after = kept.len();
    match features {
        Some(f) => weaksup::attach_features(&mut kept, &weaksup::load_features(f)?)?,
        None => {
            let texts: Vec<&str> = kept.iter().map(|l| snippets[&l.snippet_id].text.as_str()).collect();
            for (l, v) in kept.iter_mut().zip(weaksup::tfidf_vectors(&texts)) {
                l.features = Some(v);
            }
        }
    }
    let sel = weaksup::cut_statistic_select(&kept, config)?;
    let mut examples = Vec::new();
    for l in &sel.selected {
        let s = &snippets[&l.snippet_id];
        let cands = s
            .side()
            .and_then(|a| inventory.get(a))
            .ok_or_else(|| PipelineError::Mismatch(format!("`{}`: acronym missing from inventory", s.id)))?;
        examples.push(TrainingExample {
            snippet_id: s.id.clone(),
            text: s.text.clone(),
            side: s.side.clone(),
            candidates: cands.expansions.clone(),
            label_index: l.label,
        });
    }
    weaksup::export_training_set(output, &examples)?;
    Ok(PseudolabelSummary {
        input,
        after_overlap_filter: after,
        target: sel.target,
        selected: sel.selected.len(),
        extra_for_groups: sel.extra_for_groups,
        extra_for_agreement: sel.extra_for_agreement,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ReverseSubSummary {
    pub snippets: usize,
    pub derived: usize,
    pub roundtrip_failures: usize,
}

/// Writes the derived dataset, and optionally its snippets and sense gold.
pub fn cmd_reverse_sub(
    snippets: &Path,
    inventory: &Path,
    output: &Path,
    config: ReverseSubConfig,
    snippets_out: Option<&Path>,
    gold_out: Option<&Path>,
) -> Result<ReverseSubSummary, PipelineError> {
    let corpus_snippets = corpus::load_snippets(snippets)?;
    let inv = corpus::load_inventory(inventory)?;
    let derived = corpus::reverse_substitute(&corpus_snippets, &inv, config);
    let originals: HashMap<&str, &str> = corpus_snippets.iter().map(|s| (s.id.as_str(), s.text.as_str())).collect();
    let roundtrip_failures = derived
        .iter()
        .filter(|d| originals.get(d.source_id.as_str()) != Some(&d.reconstruct().as_str()))
        .count();
    corpus::write_jsonl(output, &derived)?;
    if let Some(p) = snippets_out {
        corpus::write_snippets(p, &derived.iter().map(|d| d.snippet()).collect::<Vec<_>>())?;
    }
    if let Some(p) = gold_out {
        corpus::write_jsonl(p, &derived.iter().map(|d| d.gold()).collect::<Vec<_>>())?;
    }
    Ok(ReverseSubSummary {
        snippets: corpus_snippets.len(),
        derived: derived.len(),
        roundtrip_failures,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CacheEntry {
    pub line: usize,
    pub digest: String,
    pub mode: Mode,
    pub engine: String,
    pub recorded_at: String,
    pub prompt_chars: usize,
    pub response_chars: usize,
}

pub fn cmd_cache_list(store: &Path) -> Result<Vec<CacheEntry>, PipelineError> {
    let s: ReplayStore = open_store(store, StoreMode::Read)?;
    Ok(s.exchanges()
        .iter()
        .enumerate()
        .map(|(i, e)| CacheEntry {
            line: i + 1,
            digest: e.digest.clone(),
            mode: e.mode,
            engine: e.engine.clone(),
            recorded_at: e.recorded_at.clone(),
            prompt_chars: e.prompt.chars().count(),
            response_chars: e.response.chars().count(),
        })
        .collect())
}

pub fn cmd_cache_verify(store: &Path) -> Result<VerifyReport, PipelineError> {
    Ok(ReplayStore::verify(store)?)
}

/// Groups an evaluation report's per-group table for display.
pub fn summarize_groups(report: &Value) -> BTreeMap<String, f64> {
    let mut out = BTreeMap::new();
    if let Some(groups) = report.pointer("/metrics/per_group").and_then(Value::as_object) {
        for (k, v) in groups {
            if let Some(a) = v.get("accuracy").and_then(Value::as_f64) {
                out.insert(k.clone(), a);
            }
        }
    }
    out
}

impl From<GatewayError> for PipelineError {
    fn from(e: GatewayError) -> Self {
        PipelineError::Api(e.to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_defaults() {
        assert_eq!(default_max_tokens(TaskKind::SenseDisambiguation), None);
        assert_eq!(default_max_tokens(TaskKind::ArmIdentification), Some(128));
        assert_eq!(default_max_tokens(TaskKind::Coreference), Some(64));
        assert_eq!(default_max_tokens(TaskKind::MedStatus), Some(256));
        assert_eq!(default_max_tokens(TaskKind::MedAttrRelation), Some(1024));
        assert_eq!(default_engine(TaskKind::SenseDisambiguation), "text-davinci-edit-001");
        assert_eq!(default_engine(TaskKind::MedStatus), "text-davinci-002");
    }

    #[test]
    fn exit_codes() {
        assert_eq!(PipelineError::Mismatch(String::new()).exit_code(), 1);
        assert_eq!(PipelineError::Config(String::new()).exit_code(), 2);
        assert_eq!(PipelineError::Io(String::new()).exit_code(), 3);
        assert_eq!(PipelineError::Api(String::new()).exit_code(), 4);
        let mut s = RunSummary { total: 3, failed: 1, api_failures: 0 };
        assert_eq!(s.exit_code(), 0);
        s.api_failures = 1;
        assert_eq!(s.exit_code(), 4);
    }

    #[test]
    fn flat_csv_paths() {
        let csv = flat_csv(&json!({"names": {"recall": 1.0}, "n": 2}));
        assert_eq!(csv, "metric,value\nn,2\nnames.recall,1.0\n");
    }

    #[test]
    fn edit_requests_carry_no_max_tokens() {
        let reg = TemplateRegistry::builtin();
        let t = reg.get(TaskKind::SenseDisambiguation, "edit").unwrap();
        let s = Snippet::new("s", "Lungs CTA.", Some("CTA".into())).unwrap();
        let (req, prefix) = build_request(t, &s, "e", Some(9)).unwrap();
        assert_eq!(req.mode, Mode::Edit);
        assert_eq!(req.max_tokens, None);
        assert_eq!(req.instruction.as_deref(), Some("Expand the abbreviation: CTA"));
        assert_eq!(prefix, None);
        assert!(req.check().is_ok());
    }
}
