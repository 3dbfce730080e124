//! Task-agnostic data model shared by prompting, resolvers, metrics and the
//! corpus loaders.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One input example: the text to extract from plus optional side
/// information (the acronym to expand, the pronoun to resolve, ...).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snippet {
    pub id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub side: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("snippet `{0}` has empty text")]
pub struct EmptyText(pub String);

impl Snippet {
    pub fn new(
        id: impl Into<String>,
        text: impl Into<String>,
        side: Option<String>,
    ) -> Result<Self, EmptyText> {
        let id = id.into();
        let text = text.into();
        if text.is_empty() {
            return Err(EmptyText(id));
        }
        Ok(Self {
            id,
            text,
            side: side.filter(|s| !s.is_empty()),
        })
    }

    /// Side information, treating an empty string as absent.
    pub fn side(&self) -> Option<&str> {
        self.side.as_deref().filter(|s| !s.is_empty())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[serde(rename = "sense")]
    SenseDisambiguation,
    EvidenceTokens,
    #[serde(rename = "arms")]
    ArmIdentification,
    #[serde(rename = "coref")]
    Coreference,
    MedStatus,
    MedAttrToken,
    MedAttrPhrase,
    #[serde(rename = "med_attr_rel")]
    MedAttrRelation,
}

impl TaskKind {
    pub const ALL: [TaskKind; 8] = [
        TaskKind::SenseDisambiguation,
        TaskKind::EvidenceTokens,
        TaskKind::ArmIdentification,
        TaskKind::Coreference,
        TaskKind::MedStatus,
        TaskKind::MedAttrToken,
        TaskKind::MedAttrPhrase,
        TaskKind::MedAttrRelation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::SenseDisambiguation => "sense",
            TaskKind::EvidenceTokens => "evidence_tokens",
            TaskKind::ArmIdentification => "arms",
            TaskKind::Coreference => "coref",
            TaskKind::MedStatus => "med_status",
            TaskKind::MedAttrToken => "med_attr_token",
            TaskKind::MedAttrPhrase => "med_attr_phrase",
            TaskKind::MedAttrRelation => "med_attr_rel",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
#[error("unknown task `{0}`")]
pub struct UnknownTask(pub String);

impl FromStr for TaskKind {
    type Err = UnknownTask;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        TaskKind::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| UnknownTask(s.to_string()))
    }
}

/// Medication status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Status {
    Active,
    Discontinued,
    Neither,
}

impl Status {
    pub const ALL: [Status; 3] = [Status::Active, Status::Discontinued, Status::Neither];

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Active => "active",
            Status::Discontinued => "discontinued",
            Status::Neither => "neither",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown status `{0}`")]
pub struct UnknownStatus(pub String);

impl FromStr for Status {
    type Err = UnknownStatus;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "active" => Ok(Status::Active),
            "discontinued" => Ok(Status::Discontinued),
            "neither" => Ok(Status::Neither),
            _ => Err(UnknownStatus(s.to_string())),
        }
    }
}

impl TryFrom<String> for Status {
    type Error = UnknownStatus;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Status> for String {
    fn from(s: Status) -> String {
        s.as_str().to_string()
    }
}

/// The six medication entity types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum AttrKind {
    Medication,
    Dosage,
    Route,
    Frequency,
    Duration,
    Reason,
}

impl AttrKind {
    pub const ALL: [AttrKind; 6] = [
        AttrKind::Medication,
        AttrKind::Dosage,
        AttrKind::Route,
        AttrKind::Frequency,
        AttrKind::Duration,
        AttrKind::Reason,
    ];

    /// The five attributes attached to a medication.
    pub const ATTRIBUTES: [AttrKind; 5] = [
        AttrKind::Dosage,
        AttrKind::Route,
        AttrKind::Frequency,
        AttrKind::Duration,
        AttrKind::Reason,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AttrKind::Medication => "medication",
            AttrKind::Dosage => "dosage",
            AttrKind::Route => "route",
            AttrKind::Frequency => "frequency",
            AttrKind::Duration => "duration",
            AttrKind::Reason => "reason",
        }
    }
}

impl fmt::Display for AttrKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("unknown attribute `{0}`")]
pub struct UnknownAttr(pub String);

impl FromStr for AttrKind {
    type Err = UnknownAttr;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_lowercase().as_str() {
            "medication" => Ok(AttrKind::Medication),
            "dosage" | "dose" => Ok(AttrKind::Dosage),
            "route" => Ok(AttrKind::Route),
            "frequency" | "freq" => Ok(AttrKind::Frequency),
            "duration" => Ok(AttrKind::Duration),
            "reason" => Ok(AttrKind::Reason),
            _ => Err(UnknownAttr(s.to_string())),
        }
    }
}

impl TryFrom<String> for AttrKind {
    type Error = UnknownAttr;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<AttrKind> for String {
    fn from(k: AttrKind) -> String {
        k.as_str().to_string()
    }
}

/// Token-level medication label: one of the six types, or `none`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct TypedLabel(pub Option<AttrKind>);

impl TypedLabel {
    pub const NONE: TypedLabel = TypedLabel(None);
}

impl fmt::Display for TypedLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(k) => f.write_str(k.as_str()),
            None => f.write_str("none"),
        }
    }
}

impl FromStr for TypedLabel {
    type Err = UnknownAttr;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.trim().eq_ignore_ascii_case("none") {
            Ok(TypedLabel(None))
        } else {
            s.parse().map(|k| TypedLabel(Some(k)))
        }
    }
}

impl TryFrom<String> for TypedLabel {
    type Error = UnknownAttr;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<TypedLabel> for String {
    fn from(l: TypedLabel) -> String {
        l.to_string()
    }
}

/// BIO tag over the six medication types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum BioTag {
    Outside,
    Begin(AttrKind),
    Inside(AttrKind),
}

impl BioTag {
    pub fn kind(self) -> Option<AttrKind> {
        match self {
            BioTag::Outside => None,
            BioTag::Begin(k) | BioTag::Inside(k) => Some(k),
        }
    }
}

impl fmt::Display for BioTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BioTag::Outside => f.write_str("O"),
            BioTag::Begin(k) => write!(f, "B-{k}"),
            BioTag::Inside(k) => write!(f, "I-{k}"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("malformed BIO tag `{0}`")]
pub struct BadBioTag(pub String);

impl FromStr for BioTag {
    type Err = BadBioTag;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || BadBioTag(s.to_string());
        let s = s.trim();
        if s == "O" || s == "o" {
            return Ok(BioTag::Outside);
        }
        let (prefix, kind) = s.split_once('-').ok_or_else(bad)?;
        let kind: AttrKind = kind.parse().map_err(|_| bad())?;
        match prefix {
            "B" | "b" => Ok(BioTag::Begin(kind)),
            "I" | "i" => Ok(BioTag::Inside(kind)),
            _ => Err(bad()),
        }
    }
}

impl TryFrom<String> for BioTag {
    type Error = BadBioTag;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<BioTag> for String {
    fn from(t: BioTag) -> String {
        t.to_string()
    }
}

/// Index of the first `I-t` tag that does not continue a `B-t`/`I-t` run.
pub fn first_bio_violation(tags: &[BioTag]) -> Option<usize> {
    let mut prev = BioTag::Outside;
    for (i, &tag) in tags.iter().enumerate() {
        if let BioTag::Inside(k) = tag {
            if prev.kind() != Some(k) {
                return Some(i);
            }
        }
        prev = tag;
    }
    None
}

/// A medication with its (possibly multi-span) attributes.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MedRecord {
    pub medication: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dosage: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub route: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<Vec<String>>,
}

impl MedRecord {
    pub fn new(medication: impl Into<String>) -> Self {
        Self {
            medication: medication.into(),
            ..Default::default()
        }
    }

    pub fn attr(&self, kind: AttrKind) -> Option<&[String]> {
        match kind {
            AttrKind::Medication => None,
            AttrKind::Dosage => self.dosage.as_deref(),
            AttrKind::Route => self.route.as_deref(),
            AttrKind::Frequency => self.frequency.as_deref(),
            AttrKind::Duration => self.duration.as_deref(),
            AttrKind::Reason => self.reason.as_deref(),
        }
    }

    fn attr_slot(&mut self, kind: AttrKind) -> Option<&mut Option<Vec<String>>> {
        match kind {
            AttrKind::Medication => None,
            AttrKind::Dosage => Some(&mut self.dosage),
            AttrKind::Route => Some(&mut self.route),
            AttrKind::Frequency => Some(&mut self.frequency),
            AttrKind::Duration => Some(&mut self.duration),
            AttrKind::Reason => Some(&mut self.reason),
        }
    }

    /// Appends a value to an attribute list. Empty values and the
    /// `Medication` kind are ignored.
    pub fn push(&mut self, kind: AttrKind, value: impl Into<String>) {
        let value = value.into();
        if value.is_empty() {
            return;
        }
        if let Some(slot) = self.attr_slot(kind) {
            slot.get_or_insert_with(Vec::new).push(value);
        }
    }

    /// `(kind, value)` pairs in attribute order.
    pub fn attributes(&self) -> impl Iterator<Item = (AttrKind, &str)> + '_ {
        AttrKind::ATTRIBUTES.into_iter().flat_map(move |k| {
            self.attr(k)
                .unwrap_or_default()
                .iter()
                .map(move |v| (k, v.as_str()))
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MedStatus {
    pub name: String,
    pub status: Status,
}

impl MedStatus {
    pub fn new(name: impl Into<String>, status: Status) -> Self {
        Self {
            name: name.into(),
            status,
        }
    }
}

/// Per-token labels; the label alphabet depends on the task.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenLabels {
    Binary(Vec<u8>),
    Typed(Vec<TypedLabel>),
    Bio(Vec<BioTag>),
}

impl TokenLabels {
    pub fn len(&self) -> usize {
        match self {
            TokenLabels::Binary(v) => v.len(),
            TokenLabels::Typed(v) => v.len(),
            TokenLabels::Bio(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// The union of all task output spaces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StructuredOutput {
    Choice(usize),
    TokenLabels(TokenLabels),
    Span(String),
    SpanList(Vec<String>),
    MedStatusList(Vec<MedStatus>),
    MedAttrRecords(Vec<MedRecord>),
}

/// Resolver side channel: named counters (unparseable lines, overlap
/// length, alignment misses, ...).
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Diagnostics(pub BTreeMap<String, usize>);

impl Diagnostics {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: usize) {
        self.0.insert(key.to_string(), value);
    }

    pub fn bump(&mut self, key: &str) {
        *self.0.entry(key.to_string()).or_insert(0) += 1;
    }

    pub fn get(&self, key: &str) -> usize {
        self.0.get(key).copied().unwrap_or(0)
    }

    pub fn with(mut self, key: &str, value: usize) -> Self {
        self.set(key, value);
        self
    }
}
