//! Prompt templates: filling, guided one-shot construction, and the
//! template registry.
//!
//! A completion prompt is laid out as blocks separated by blank lines:
//!
//! ```text
//! [demo input]            } only for one-shot templates
//! [instruction]           }
//! [demo formatted answer] }
//! [input]
//! [instruction]
//! [answer prefix]         only for guided templates
//! ```
//!
//! When the instruction itself contains `{text}` it replaces the
//! input + instruction pair. Edit-mode templates send the snippet text as the
//! document and the filled instruction separately.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    AttrKind, BioTag, MedRecord, MedStatus, Snippet, Status, StructuredOutput, TaskKind,
    TokenLabels, TypedLabel,
};
use crate::resolvers::{resolve, ResolveContext};
use crate::tokenize::tokenize;
use crate::validate::validate_output;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Completion,
    Edit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub input_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
    pub formatted_answer: String,
    /// The structured answer `formatted_answer` encodes.
    pub answer: StructuredOutput,
}

impl Demonstration {
    fn snippet(&self) -> Snippet {
        Snippet {
            id: "demonstration".into(),
            text: self.input_text.clone(),
            side: self.side.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub task: TaskKind,
    pub mode: Mode,
    pub instruction: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demonstration: Option<Demonstration>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer_prefix: Option<String>,
    /// Whether the demonstration's answer is content-correct; bookkeeping
    /// only, guidance works either way.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demo_correct: Option<bool>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("template needs side information but snippet `{0}` has none")]
    MissingSide(String),
    #[error("unknown placeholder `{{{0}}}`")]
    UnboundPlaceholder(String),
    #[error("side `{side}` does not occur in snippet `{id}`")]
    SideNotInText { id: String, side: String },
    #[error("edit-mode templates take no demonstration, answer prefix, or {{text}}")]
    EditModeExtras,
    #[error("guided demonstrations are not supported for {0}")]
    UnsupportedTask(TaskKind),
    #[error("demonstration answer is invalid for {task}: {reason}")]
    InvalidDemo { task: TaskKind, reason: String },
    #[error("demonstration for {0} does not survive a format/resolve round trip")]
    DemoRoundTrip(TaskKind),
    #[error("template `{name}` is registered under {key} but targets {task}")]
    TaskMismatch {
        name: String,
        key: TaskKind,
        task: TaskKind,
    },
}

static PLACEHOLDER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"\{([A-Za-z_]+)\}").unwrap());

const KNOWN: [&str; 3] = ["text", "side", "sentence"];

fn placeholders(s: &str) -> impl Iterator<Item = &str> {
    PLACEHOLDER.captures_iter(s).map(|c| c.get(1).unwrap().as_str())
}

/// Splits at `.`/`!`/`?` followed by whitespace when the next visible
/// character is not lowercase (so `p.o. every` stays together).
pub fn sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    for k in 0..chars.len() {
        let (i, c) = chars[k];
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let Some(&(_, ws)) = chars.get(k + 1) else { continue };
        if !ws.is_whitespace() {
            continue;
        }
        let next = chars[k + 1..].iter().find(|(_, ch)| !ch.is_whitespace());
        if let Some(&(_, n)) = next {
            if n.is_lowercase() {
                continue;
            }
        }
        let end = i + c.len_utf8();
        let s = text[start..end].trim();
        if !s.is_empty() {
            out.push(s);
        }
        start = end;
    }
    let s = text[start..].trim();
    if !s.is_empty() {
        out.push(s);
    }
    out
}

fn has_word(hay: &str, word: &str, case_sensitive: bool) -> bool {
    hay.split(|c: char| !c.is_alphanumeric() && c != '\'' && c != '-')
        .any(|w| if case_sensitive { w == word } else { w.eq_ignore_ascii_case(word) })
}

/// First sentence of `text` that contains `word` as a whole word.
pub fn sentence_containing<'a>(text: &'a str, word: &str) -> Option<&'a str> {
    let sents = sentences(text);
    sents
        .iter()
        .find(|s| has_word(s, word, true))
        .or_else(|| sents.iter().find(|s| has_word(s, word, false)))
        .copied()
}

fn render(template: &str, snippet: &Snippet) -> Result<String, PromptError> {
    for name in placeholders(template) {
        if !KNOWN.contains(&name) {
            return Err(PromptError::UnboundPlaceholder(name.to_string()));
        }
    }
    let needs_side = placeholders(template).any(|p| p == "side" || p == "sentence");
    let side = match snippet.side() {
        Some(s) => s,
        None if needs_side => return Err(PromptError::MissingSide(snippet.id.clone())),
        None => "",
    };
    let sentence = if placeholders(template).any(|p| p == "sentence") {
        sentence_containing(&snippet.text, side).ok_or_else(|| PromptError::SideNotInText {
            id: snippet.id.clone(),
            side: side.to_string(),
        })?
    } else {
        ""
    };
    Ok(PLACEHOLDER
        .replace_all(template, |c: &regex::Captures<'_>| match &c[1] {
            "text" => snippet.text.clone(),
            "side" => side.to_string(),
            _ => sentence.to_string(),
        })
        .into_owned())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FilledPrompt {
    pub prompt: String,
    /// Present for edit mode only.
    pub instruction: Option<String>,
    /// The filled answer prefix, which the model's completion continues.
    pub answer_prefix: Option<String>,
}

impl PromptTemplate {
    pub fn completion(task: TaskKind, instruction: impl Into<String>) -> Self {
        Self {
            task,
            mode: Mode::Completion,
            instruction: instruction.into(),
            demonstration: None,
            answer_prefix: None,
            demo_correct: None,
        }
    }

    pub fn edit(task: TaskKind, instruction: impl Into<String>) -> Self {
        Self {
            mode: Mode::Edit,
            ..Self::completion(task, instruction)
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.answer_prefix = Some(prefix.into());
        self
    }

    pub fn is_guided(&self) -> bool {
        self.answer_prefix.is_some() || self.demonstration.is_some()
    }

    fn query_block(&self, snippet: &Snippet) -> Result<String, PromptError> {
        let instr = render(&self.instruction, snippet)?;
        if placeholders(&self.instruction).any(|p| p == "text") {
            Ok(instr)
        } else {
            Ok(format!("{}\n\n{}", snippet.text, instr))
        }
    }

    /// Structural checks: placeholders are known, edit mode carries no
    /// extras, and a demonstration parses back to its own answer.
    pub fn check(&self) -> Result<(), PromptError> {
        let texts = [Some(self.instruction.as_str()), self.answer_prefix.as_deref()];
        for t in texts.into_iter().flatten() {
            if let Some(p) = placeholders(t).find(|p| !KNOWN.contains(p)) {
                return Err(PromptError::UnboundPlaceholder(p.to_string()));
            }
        }
        if self.mode == Mode::Edit
            && (self.demonstration.is_some()
                || self.answer_prefix.is_some()
                || placeholders(&self.instruction).any(|p| p == "text"))
        {
            return Err(PromptError::EditModeExtras);
        }
        if let Some(demo) = &self.demonstration {
            if demo.formatted_answer.trim().is_empty() {
                return Err(PromptError::InvalidDemo {
                    task: self.task,
                    reason: "empty formatted answer".into(),
                });
            }
            if resolve_demonstration(self.task, demo).as_ref() != Some(&demo.answer) {
                return Err(PromptError::DemoRoundTrip(self.task));
            }
        }
        Ok(())
    }
}

/// Fills `template` for `snippet`.
pub fn fill(template: &PromptTemplate, snippet: &Snippet) -> Result<FilledPrompt, PromptError> {
    if template.mode == Mode::Edit {
        template.check()?;
        return Ok(FilledPrompt {
            prompt: snippet.text.clone(),
            instruction: Some(render(&template.instruction, snippet)?),
            answer_prefix: None,
        });
    }
    let mut blocks = Vec::new();
    if let Some(demo) = &template.demonstration {
        blocks.push(template.query_block(&demo.snippet())?);
        blocks.push(demo.formatted_answer.clone());
    }
    blocks.push(template.query_block(snippet)?);
    let answer_prefix = template
        .answer_prefix
        .as_deref()
        .map(|p| render(p, snippet))
        .transpose()?;
    if let Some(p) = &answer_prefix {
        blocks.push(p.clone());
    }
    Ok(FilledPrompt {
        prompt: blocks.join("\n\n"),
        instruction: None,
        answer_prefix,
    })
}

/// Runs the task's guided resolver over a demonstration's formatted answer.
pub fn resolve_demonstration(task: TaskKind, demo: &Demonstration) -> Option<StructuredOutput> {
    let snippet = demo.snippet();
    let ctx = ResolveContext::new(&snippet).guided(true);
    resolve(task, &demo.formatted_answer, ctx).ok().map(|r| r.output)
}

// ---- canonical surface forms ----

pub fn format_med_status(meds: &[MedStatus]) -> String {
    meds.iter()
        .map(|m| format!("-\"{}\" ({})", m.name, m.status))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_token_labels(text: &str, labels: &[TypedLabel]) -> String {
    tokenize(text)
        .iter()
        .zip(labels)
        .map(|(t, l)| format!("-\"{}\": {}", t.surface, l))
        .collect::<Vec<_>>()
        .join("\n")
}

/// One line per B-run, one line per `O` token.
pub fn format_phrases(text: &str, tags: &[BioTag]) -> String {
    let toks = tokenize(text);
    let mut lines = Vec::new();
    let mut i = 0;
    while i < toks.len().min(tags.len()) {
        let mut j = i + 1;
        if let BioTag::Begin(k) = tags[i] {
            while j < tags.len().min(toks.len()) && tags[j] == BioTag::Inside(k) {
                j += 1;
            }
        }
        let label = tags[i].kind().map_or("none", AttrKind::as_str);
        lines.push(format!("-\"{}\": {}", &text[toks[i].start..toks[j - 1].end], label));
        i = j;
    }
    lines.join("\n")
}

pub fn format_relations(records: &[MedRecord]) -> String {
    records
        .iter()
        .map(|r| {
            let mut parts = vec![format!("medication: \"{}\"", r.medication)];
            parts.extend(r.attributes().map(|(k, v)| format!("{k}: \"{v}\"")));
            format!("-{}", parts.join(", "))
        })
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn format_coref(pronoun: &str, antecedent: &str) -> String {
    format!("\"{pronoun}\" refers to \"{antecedent}\"")
}

pub fn format_arms(arms: &[String]) -> String {
    arms.iter().map(|a| format!("- {a}")).collect::<Vec<_>>().join("\n")
}

/// Default answer prefix for a guided template of `task`.
pub fn default_answer_prefix(task: TaskKind) -> Option<&'static str> {
    match task {
        TaskKind::MedStatus
        | TaskKind::MedAttrToken
        | TaskKind::MedAttrPhrase
        | TaskKind::MedAttrRelation => Some("-\""),
        TaskKind::Coreference => Some("\"{side}\" refers to \""),
        _ => None,
    }
}

/// Attaches a one-shot demonstration in the task's canonical answer format.
pub fn build_guided(
    template: &PromptTemplate,
    demo_snippet: &Snippet,
    demo_answer: &StructuredOutput,
) -> Result<PromptTemplate, PromptError> {
    let task = template.task;
    if template.mode == Mode::Edit {
        return Err(PromptError::UnsupportedTask(task));
    }
    validate_output(task, demo_answer, demo_snippet, None).map_err(|v| PromptError::InvalidDemo {
        task,
        reason: v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
    })?;
    let text = demo_snippet.text.as_str();
    let formatted = match (task, demo_answer) {
        (TaskKind::MedStatus, StructuredOutput::MedStatusList(m)) => format_med_status(m),
        (TaskKind::MedAttrToken, StructuredOutput::TokenLabels(TokenLabels::Typed(l))) => {
            format_token_labels(text, l)
        }
        (TaskKind::MedAttrPhrase, StructuredOutput::TokenLabels(TokenLabels::Bio(t))) => {
            format_phrases(text, t)
        }
        (TaskKind::MedAttrRelation, StructuredOutput::MedAttrRecords(r)) => format_relations(r),
        (TaskKind::Coreference, StructuredOutput::Span(s)) => {
            let pronoun = demo_snippet
                .side()
                .ok_or_else(|| PromptError::MissingSide(demo_snippet.id.clone()))?;
            format_coref(pronoun, s)
        }
        (TaskKind::ArmIdentification, StructuredOutput::SpanList(a)) => format_arms(a),
        _ => return Err(PromptError::UnsupportedTask(task)),
    };
    let mut out = template.clone();
    out.demonstration = Some(Demonstration {
        input_text: demo_snippet.text.clone(),
        side: demo_snippet.side.clone(),
        formatted_answer: formatted,
        answer: demo_answer.clone(),
    });
    if out.answer_prefix.is_none() {
        out.answer_prefix = default_answer_prefix(task).map(str::to_string);
    }
    out.check()?;
    Ok(out)
}

/// Templates keyed by task, then by name.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TemplateRegistry(BTreeMap<TaskKind, BTreeMap<String, PromptTemplate>>);

#[derive(Debug, Error)]
pub enum RegistryError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        source: serde_json::Error,
    },
    #[error("template {task}/{name}: {source}")]
    Invalid {
        task: TaskKind,
        name: String,
        source: PromptError,
    },
}

impl TemplateRegistry {
    pub fn register(&mut self, name: &str, template: PromptTemplate) -> Result<(), RegistryError> {
        let task = template.task;
        template.check().map_err(|source| RegistryError::Invalid {
            task,
            name: name.to_string(),
            source,
        })?;
        self.0.entry(task).or_default().insert(name.to_string(), template);
        Ok(())
    }

    pub fn get(&self, task: TaskKind, name: &str) -> Option<&PromptTemplate> {
        self.0.get(&task)?.get(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (TaskKind, &str, &PromptTemplate)> {
        self.0
            .iter()
            .flat_map(|(t, m)| m.iter().map(move |(n, tpl)| (*t, n.as_str(), tpl)))
    }

    pub fn names(&self, task: TaskKind) -> Vec<&str> {
        self.0
            .get(&task)
            .map(|m| m.keys().map(String::as_str).collect())
            .unwrap_or_default()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("registry serializes")
    }

    pub fn from_json(json: &str, origin: &str) -> Result<Self, RegistryError> {
        let raw: TemplateRegistry = serde_json::from_str(json).map_err(|source| RegistryError::Json {
            path: origin.to_string(),
            source,
        })?;
        let mut out = TemplateRegistry::default();
        for (task, name, tpl) in raw.iter() {
            if tpl.task != task {
                return Err(RegistryError::Invalid {
                    task,
                    name: name.to_string(),
                    source: PromptError::TaskMismatch {
                        name: name.to_string(),
                        key: task,
                        task: tpl.task,
                    },
                });
            }
            out.register(name, tpl.clone())?;
        }
        Ok(out)
    }

    pub fn load(path: &Path) -> Result<Self, RegistryError> {
        let json = std::fs::read_to_string(path).map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&json, &path.display().to_string())
    }

    pub fn save(&self, path: &Path) -> Result<(), RegistryError> {
        std::fs::write(path, self.to_json() + "\n").map_err(|source| RegistryError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    /// The hand-written templates shipped with the crate.
    pub fn builtin() -> Self {
        builtin::registry()
    }
}

mod builtin {
    use super::*;

    pub const ARMS: &str = "Create a bulleted list of the arms in this trial.";
    pub const COREF: &str = "What does \"{side}\" in the sentence \"{sentence}\" refer to?";
    pub const MED_STATUS: &str = "Create a bulleted list of which medications are mentioned and whether they are active, discontinued, or neither.";
    pub const MED_TOKEN: &str = "Input: {text}\n\nLabel the tokens: medication, dosage, route, frequency, duration, reason, or none. Ignore allergies.";
    pub const MED_PHRASE: &str = "Input: {text}\n\nLabel the tokens: medication, dosage, route, frequency, duration, reason, or none. Chunk the same entity together. Ignore allergies.";
    pub const MED_REL: &str = "Input: {text}\n\nLabel medications, ignoring allergies. Include dosage, route, frequency, duration, reason, if available.";

    const COREF_DEMO: &str = "[...] ASSESSMENT & PLAN: The patient has no physical evidence of progression of disease. It is somewhat worrisome that her CEA is up, but will be keep watching that to see if it is just within a normal swing for her. [...]";

    const STATUS_DEMO_A: &str = "[...] start her on Ativan 1 mg p.o. q. 8 hours and use Ativan 1 mg IV q. 4 hours p.r.n. for agitation. I will also start her on Inderal LA 60 mg p.o. q.d. for essential tremors. She does not want to take Celexa, and I will put her back on Lexapro 2 mg p.o. q.d. I will discontinue Esmolol.";
    const STATUS_DEMO_B: &str = "[...] start her on Ativan 1 mg p.o. q. 8 hours and use Ativan 1 mg IV q. 4 hours p.r.n. for agitation. I will also start her on Inderal LA 60 mg p.o. q.d. for essential tremors. She does not want to take Celexa, and I will put her back on Lexapro 2 mg p.o. q.d.";

    /// Seven entities: two medications, a dosage, a route, a frequency, a
    /// reason and a duration.
    pub const MED_ATTR_DEMO: &str =
        "She takes aspirin 325 mg by mouth daily for a TIA. Lisinopril was held for 2 days.";

    fn med_attr_token_labels() -> Vec<TypedLabel> {
        use AttrKind::*;
        let n = TypedLabel::NONE;
        let t = |k| TypedLabel(Some(k));
        // She takes aspirin 325 mg by mouth daily for a TIA . Lisinopril was held for 2 days .
        vec![
            n, n, t(Medication), t(Dosage), t(Dosage), t(Route), t(Route), t(Frequency), n, n,
            t(Reason), n, t(Medication), n, n, n, t(Duration), t(Duration), n,
        ]
    }

    fn med_attr_bio() -> Vec<BioTag> {
        let mut prev: Option<AttrKind> = None;
        med_attr_token_labels()
            .into_iter()
            .map(|l| {
                let tag = match l.0 {
                    None => BioTag::Outside,
                    Some(k) if prev == Some(k) => BioTag::Inside(k),
                    Some(k) => BioTag::Begin(k),
                };
                prev = l.0;
                tag
            })
            .collect()
    }

    fn med_attr_records() -> Vec<MedRecord> {
        let mut aspirin = MedRecord::new("aspirin");
        aspirin.push(AttrKind::Dosage, "325 mg");
        aspirin.push(AttrKind::Route, "by mouth");
        aspirin.push(AttrKind::Frequency, "daily");
        aspirin.push(AttrKind::Reason, "TIA");
        let mut lisinopril = MedRecord::new("Lisinopril");
        lisinopril.push(AttrKind::Duration, "2 days");
        vec![aspirin, lisinopril]
    }

    fn snip(text: &str, side: Option<&str>) -> Snippet {
        Snippet::new("demonstration", text, side.map(str::to_string)).expect("non-empty demo")
    }

    fn guided(base: PromptTemplate, demo: Snippet, answer: StructuredOutput, correct: bool) -> PromptTemplate {
        let mut t = build_guided(&base, &demo, &answer).expect("builtin demonstration is valid");
        t.demo_correct = Some(correct);
        t
    }

    pub fn registry() -> TemplateRegistry {
        use StructuredOutput as O;
        let mut r = TemplateRegistry::default();
        let mut add = |name: &str, t: PromptTemplate| r.register(name, t).expect("builtin template is valid");

        add(
            "edit",
            PromptTemplate::edit(TaskKind::SenseDisambiguation, "Expand the abbreviation: {side}"),
        );
        add("zero_shot", PromptTemplate::completion(TaskKind::ArmIdentification, ARMS));
        add("zero_shot", PromptTemplate::completion(TaskKind::EvidenceTokens, ARMS));

        let coref = PromptTemplate::completion(TaskKind::Coreference, COREF);
        add("zero_shot", coref.clone());
        let demo = snip(COREF_DEMO, Some("that"));
        add(
            "one_shot_incorrect",
            guided(coref.clone(), demo.clone(), O::Span("progression of disease".into()), false),
        );
        add(
            "one_shot_correct",
            guided(coref, demo, O::Span("her CEA".into()), true),
        );

        let status = PromptTemplate::completion(TaskKind::MedStatus, MED_STATUS);
        add("zero_shot", status.clone());
        add("zero_shot_guided", status.clone().with_prefix("-\""));
        let m = |n: &str, s| MedStatus::new(n, s);
        use Status::*;
        add(
            "one_shot_incorrect",
            guided(
                status.clone(),
                snip(STATUS_DEMO_A, None),
                O::MedStatusList(vec![
                    m("Ativan", Discontinued),
                    m("Inderal LA", Active),
                    m("Celexa", Neither),
                    m("Lexapro", Active),
                    m("Esmolol", Active),
                ]),
                false,
            ),
        );
        add(
            "one_shot_correct",
            guided(
                status,
                snip(STATUS_DEMO_B, None),
                O::MedStatusList(vec![
                    m("Ativan", Active),
                    m("Inderal LA", Active),
                    m("Lexapro", Active),
                    m("Celexa", Neither),
                ]),
                true,
            ),
        );

        let demo = snip(MED_ATTR_DEMO, None);
        add(
            "one_shot",
            guided(
                PromptTemplate::completion(TaskKind::MedAttrToken, MED_TOKEN),
                demo.clone(),
                O::TokenLabels(TokenLabels::Typed(med_attr_token_labels())),
                true,
            ),
        );
        add(
            "one_shot",
            guided(
                PromptTemplate::completion(TaskKind::MedAttrPhrase, MED_PHRASE),
                demo.clone(),
                O::TokenLabels(TokenLabels::Bio(med_attr_bio())),
                true,
            ),
        );
        add(
            "one_shot",
            guided(
                PromptTemplate::completion(TaskKind::MedAttrRelation, MED_REL),
                demo,
                O::MedAttrRecords(med_attr_records()),
                true,
            ),
        );
        r
    }
}
