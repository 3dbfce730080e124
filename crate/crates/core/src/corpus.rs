//! Corpus files: snippets, sense inventories, per-task gold annotations,
//! and reverse-substitution datasets.

use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{BioTag, MedRecord, MedStatus, Snippet, StructuredOutput, TaskKind, TokenLabels, TypedLabel};
use crate::resolvers::SenseCandidates;
use crate::validate::validate_with_token_count;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {field}: {message}")]
    Schema {
        path: PathBuf,
        line: usize,
        field: String,
        message: String,
    },
    #[error("{path}: duplicate id `{id}` on lines {first} and {second}")]
    DuplicateId {
        path: PathBuf,
        id: String,
        first: usize,
        second: usize,
    },
}

impl CorpusError {
    fn schema(path: &Path, line: usize, field: &str, message: impl Into<String>) -> Self {
        CorpusError::Schema {
            path: path.to_path_buf(),
            line,
            field: field.to_string(),
            message: message.into(),
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Best-effort field name from a serde error message.
fn field_of(msg: &str) -> String {
    static FIELD: std::sync::LazyLock<Regex> =
        std::sync::LazyLock::new(|| Regex::new(r"field `([^`]+)`").unwrap());
    FIELD
        .captures(msg)
        .map(|c| c[1].to_string())
        .unwrap_or_else(|| "-".to_string())
}

/// Parses every non-blank line as `T`, rejecting duplicate ids.
fn read_jsonl<T: DeserializeOwned>(path: &Path, id_of: impl Fn(&T) -> &str) -> Result<Vec<(usize, T)>, CorpusError> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            CorpusError::schema(path, line_no, &field_of(&msg), msg)
        })?;
        let id = id_of(&rec).to_string();
        if let Some(first) = seen.insert(id.clone(), line_no) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id,
                first,
                second: line_no,
            });
        }
        out.push((line_no, rec));
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, records: &[T]) -> Result<(), CorpusError> {
    let mut w = BufWriter::new(File::create(path).map_err(io_err(path))?);
    for r in records {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

// ---- snippets ----

pub fn load_snippets(path: &Path) -> Result<Vec<Snippet>, CorpusError> {
    read_jsonl::<Snippet>(path, |s| &s.id)?
        .into_iter()
        .map(|(line, s)| {
            if s.text.is_empty() {
                return Err(CorpusError::schema(path, line, "text", "empty text"));
            }
            Ok(Snippet::new(s.id, s.text, s.side).expect("text checked"))
        })
        .collect()
}

pub fn write_snippets(path: &Path, snippets: &[Snippet]) -> Result<(), CorpusError> {
    write_jsonl(path, snippets)
}

// ---- inventory ----

/// Acronym to ordered expansion list.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SenseInventory(BTreeMap<String, SenseCandidates>);

impl SenseInventory {
    pub fn from_map(map: BTreeMap<String, Vec<String>>) -> Result<Self, crate::resolvers::sense::CandidateError> {
        let mut out = BTreeMap::new();
        for (a, exps) in map {
            out.insert(a.clone(), SenseCandidates::new(a, exps)?);
        }
        Ok(Self(out))
    }

    pub fn get(&self, acronym: &str) -> Option<&SenseCandidates> {
        self.0.get(acronym)
    }

    pub fn iter(&self) -> impl Iterator<Item = &SenseCandidates> {
        self.0.values()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn to_map(&self) -> BTreeMap<String, Vec<String>> {
        self.0.iter().map(|(k, v)| (k.clone(), v.expansions.clone())).collect()
    }
}

pub fn load_inventory(path: &Path) -> Result<SenseInventory, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let map: BTreeMap<String, Vec<String>> = serde_json::from_str(&text).map_err(|e| {
        let line = e.line();
        CorpusError::schema(path, line, "-", e.to_string())
    })?;
    SenseInventory::from_map(map).map_err(|e| {
        let acronym = match &e {
            crate::resolvers::sense::CandidateError::Empty(a) | crate::resolvers::sense::CandidateError::Duplicate(a, _) => a,
        };
        let needle = format!("\"{acronym}\"");
        let line = text.lines().position(|l| l.contains(&needle)).map_or(0, |i| i + 1);
        CorpusError::schema(path, line, acronym, e.to_string())
    })
}

pub fn write_inventory(path: &Path, inv: &SenseInventory) -> Result<(), CorpusError> {
    let json = serde_json::to_string_pretty(&inv.to_map()).expect("inventory serializes");
    std::fs::write(path, json + "\n").map_err(io_err(path))
}

// ---- gold ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SenseLabel {
    Index(usize),
    Expansion(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SenseGold {
    pub id: String,
    pub acronym: String,
    pub candidates: Vec<String>,
    pub label: SenseLabel,
}

impl SenseGold {
    /// Index of the label in `candidates`, matched case-insensitively.
    pub fn label_index(&self) -> Option<usize> {
        match &self.label {
            SenseLabel::Index(i) => (*i < self.candidates.len()).then_some(*i),
            SenseLabel::Expansion(e) => self.candidates.iter().position(|c| c.to_lowercase() == e.to_lowercase()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenGold<L> {
    pub id: String,
    pub tokens: Vec<String>,
    pub labels: Vec<L>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmsGold {
    pub id: String,
    pub arms: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorefGold {
    pub id: String,
    pub pronoun: String,
    pub antecedents: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedStatusGold {
    pub id: String,
    pub meds: Vec<MedStatus>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelationGold {
    pub id: String,
    pub records: Vec<MedRecord>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GoldRecord {
    Sense(SenseGold),
    Evidence(TokenGold<u8>),
    Arms(ArmsGold),
    Coref(CorefGold),
    MedStatus(MedStatusGold),
    MedAttrToken(TokenGold<TypedLabel>),
    MedAttrPhrase(TokenGold<BioTag>),
    MedAttrRelation(RelationGold),
}

impl GoldRecord {
    pub fn id(&self) -> &str {
        match self {
            GoldRecord::Sense(g) => &g.id,
            GoldRecord::Evidence(g) => &g.id,
            GoldRecord::Arms(g) => &g.id,
            GoldRecord::Coref(g) => &g.id,
            GoldRecord::MedStatus(g) => &g.id,
            GoldRecord::MedAttrToken(g) => &g.id,
            GoldRecord::MedAttrPhrase(g) => &g.id,
            GoldRecord::MedAttrRelation(g) => &g.id,
        }
    }

    /// The record as a structured output; coreference uses its first
    /// antecedent.
    pub fn output(&self) -> StructuredOutput {
        match self {
            GoldRecord::Sense(g) => StructuredOutput::Choice(g.label_index().unwrap_or(usize::MAX)),
            GoldRecord::Evidence(g) => StructuredOutput::TokenLabels(TokenLabels::Binary(g.labels.clone())),
            GoldRecord::Arms(g) => StructuredOutput::SpanList(g.arms.clone()),
            GoldRecord::Coref(g) => StructuredOutput::Span(g.antecedents.first().cloned().unwrap_or_default()),
            GoldRecord::MedStatus(g) => StructuredOutput::MedStatusList(g.meds.clone()),
            GoldRecord::MedAttrToken(g) => StructuredOutput::TokenLabels(TokenLabels::Typed(g.labels.clone())),
            GoldRecord::MedAttrPhrase(g) => StructuredOutput::TokenLabels(TokenLabels::Bio(g.labels.clone())),
            GoldRecord::MedAttrRelation(g) => StructuredOutput::MedAttrRecords(g.records.clone()),
        }
    }

    fn token_count(&self) -> Option<usize> {
        match self {
            GoldRecord::Evidence(g) => Some(g.tokens.len()),
            GoldRecord::MedAttrToken(g) => Some(g.tokens.len()),
            GoldRecord::MedAttrPhrase(g) => Some(g.tokens.len()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldSet {
    pub task: TaskKind,
    pub records: Vec<GoldRecord>,
}

impl GoldSet {
    pub fn get(&self, id: &str) -> Option<&GoldRecord> {
        self.records.iter().find(|r| r.id() == id)
    }
}

fn load_typed<T, F>(path: &Path, wrap: F) -> Result<Vec<(usize, GoldRecord)>, CorpusError>
where
    T: DeserializeOwned,
    F: Fn(T) -> GoldRecord,
{
    // Parse first as T, then look up the id via the wrapped record.
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    let mut seen: HashMap<String, usize> = HashMap::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| {
            let msg = e.to_string();
            CorpusError::schema(path, line_no, &field_of(&msg), msg)
        })?;
        let rec = wrap(rec);
        if let Some(first) = seen.insert(rec.id().to_string(), line_no) {
            return Err(CorpusError::DuplicateId {
                path: path.to_path_buf(),
                id: rec.id().to_string(),
                first,
                second: line_no,
            });
        }
        out.push((line_no, rec));
    }
    Ok(out)
}

/// Loads and validates a gold file for `task`.
pub fn load_gold(path: &Path, task: TaskKind) -> Result<GoldSet, CorpusError> {
    let recs = match task {
        TaskKind::SenseDisambiguation => load_typed(path, GoldRecord::Sense)?,
        TaskKind::EvidenceTokens => load_typed(path, GoldRecord::Evidence)?,
        TaskKind::ArmIdentification => load_typed(path, GoldRecord::Arms)?,
        TaskKind::Coreference => load_typed(path, GoldRecord::Coref)?,
        TaskKind::MedStatus => load_typed(path, GoldRecord::MedStatus)?,
        TaskKind::MedAttrToken => load_typed(path, GoldRecord::MedAttrToken)?,
        TaskKind::MedAttrPhrase => load_typed(path, GoldRecord::MedAttrPhrase)?,
        TaskKind::MedAttrRelation => load_typed(path, GoldRecord::MedAttrRelation)?,
    };
    for (line, rec) in &recs {
        match rec {
            GoldRecord::Sense(g) => {
                if g.label_index().is_none() {
                    return Err(CorpusError::schema(path, *line, "label", "label is not one of the candidates"));
                }
                if let Err(e) = SenseCandidates::new(&g.acronym, g.candidates.clone()) {
                    return Err(CorpusError::schema(path, *line, "candidates", e.to_string()));
                }
            }
            GoldRecord::Coref(g) if g.antecedents.iter().all(|a| a.trim().is_empty()) => {
                return Err(CorpusError::schema(path, *line, "antecedents", "needs at least one antecedent"));
            }
            _ => {}
        }
        let cands = match rec {
            GoldRecord::Sense(g) => Some(g.candidates.as_slice()),
            _ => None,
        };
        if let Err(v) = validate_with_token_count(task, &rec.output(), rec.token_count(), cands) {
            let msg = v.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
            return Err(CorpusError::schema(path, *line, "labels", msg));
        }
    }
    Ok(GoldSet {
        task,
        records: recs.into_iter().map(|(_, r)| r).collect(),
    })
}

pub fn write_gold(path: &Path, gold: &GoldSet) -> Result<(), CorpusError> {
    write_jsonl(path, &gold.records)
}

// ---- reverse substitution ----

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedExample {
    /// `<source id>_<offset>`.
    pub id: String,
    pub source_id: String,
    /// Text with one expansion occurrence replaced by the acronym.
    pub text: String,
    pub acronym: String,
    /// Byte offset of the acronym in `text`.
    pub offset: usize,
    /// The removed surface text, verbatim.
    pub label: String,
    pub label_index: usize,
    pub candidates: Vec<String>,
}

impl DerivedExample {
    /// Undoes the substitution.
    pub fn reconstruct(&self) -> String {
        format!("{}{}{}", &self.text[..self.offset], self.label, &self.text[self.offset + self.acronym.len()..])
    }

    pub fn snippet(&self) -> Snippet {
        Snippet {
            id: self.id.clone(),
            text: self.text.clone(),
            side: Some(self.acronym.clone()),
        }
    }

    pub fn gold(&self) -> SenseGold {
        SenseGold {
            id: self.id.clone(),
            acronym: self.acronym.clone(),
            candidates: self.candidates.clone(),
            label: SenseLabel::Expansion(self.candidates[self.label_index].clone()),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ReverseSubConfig {
    pub seed: u64,
    /// Keep at most this many derived examples, sampled with `seed`.
    pub sample: Option<usize>,
}

fn is_word_char(c: Option<char>) -> bool {
    c.is_some_and(char::is_alphanumeric)
}

/// Every case-insensitive, word-bounded occurrence of an inventory
/// expansion becomes one derived example. At each position the longest
/// expansion wins and scanning resumes after it.
pub fn reverse_substitute(corpus: &[Snippet], inventory: &SenseInventory, config: ReverseSubConfig) -> Vec<DerivedExample> {
    // (pattern, acronym, expansion index), longest expansion first
    let mut pats: Vec<(Regex, &SenseCandidates, usize, usize)> = inventory
        .iter()
        .flat_map(|c| {
            c.expansions.iter().enumerate().map(move |(i, e)| {
                let re = Regex::new(&format!("(?i)^(?:{})", regex::escape(e))).expect("escaped pattern");
                (re, c, i, e.chars().count())
            })
        })
        .collect();
    pats.sort_by(|a, b| b.3.cmp(&a.3).then_with(|| a.1.acronym.cmp(&b.1.acronym)).then(a.2.cmp(&b.2)));

    let mut out = Vec::new();
    for s in corpus {
        let text = &s.text;
        let mut pos = 0;
        while pos < text.len() {
            let prev = text[..pos].chars().next_back();
            let here = &text[pos..];
            let hit = if is_word_char(prev) {
                None
            } else {
                pats.iter().find_map(|(re, c, i, _)| {
                    let m = re.find(here)?;
                    let end = pos + m.end();
                    (m.end() > 0 && !is_word_char(text[end..].chars().next())).then_some((end, *c, *i))
                })
            };
            match hit {
                Some((end, c, i)) => {
                    let new_text = format!("{}{}{}", &text[..pos], c.acronym, &text[end..]);
                    out.push(DerivedExample {
                        id: format!("{}_{}", s.id, pos),
                        source_id: s.id.clone(),
                        text: new_text,
                        acronym: c.acronym.clone(),
                        offset: pos,
                        label: text[pos..end].to_string(),
                        label_index: i,
                        candidates: c.expansions.clone(),
                    });
                    pos = end;
                }
                None => pos += here.chars().next().map_or(1, char::len_utf8),
            }
        }
    }
    if let Some(k) = config.sample.filter(|&k| k < out.len()) {
        let mut idx: Vec<usize> = (0..out.len()).collect();
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(config.seed));
        let mut keep = idx[..k].to_vec();
        keep.sort_unstable();
        out = keep.into_iter().map(|i| out[i].clone()).collect();
    }
    out
}

pub fn load_derived(path: &Path) -> Result<Vec<DerivedExample>, CorpusError> {
    Ok(read_jsonl::<DerivedExample>(path, |d| &d.id)?.into_iter().map(|(_, d)| d).collect())
}
