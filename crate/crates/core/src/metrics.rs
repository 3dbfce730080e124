//! Evaluation metrics. Every score is generic over [`Scalar`] so the same
//! code runs on `f64` for reports and on exact rationals for oracle checks.
//!
//! Zero-denominator convention: precision, recall and F1 are 0.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt::Debug;
use std::hash::Hash;

use num_traits::{FromPrimitive, Num, ToPrimitive};
use serde::Serialize;
use thiserror::Error;

use crate::model::{first_bio_violation, AttrKind, BioTag, MedRecord, MedStatus, Status, TypedLabel};
use crate::tokenize::tokenize;

pub trait Scalar: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug {}
impl<T: Num + Clone + PartialOrd + FromPrimitive + ToPrimitive + Debug> Scalar for T {}

fn num<T: Scalar>(n: usize) -> T {
    T::from_usize(n).expect("count fits the scalar type")
}

/// `a / b`, or 0 when `b == 0`.
pub fn ratio<T: Scalar>(a: usize, b: usize) -> T {
    if b == 0 {
        T::zero()
    } else {
        num::<T>(a) / num::<T>(b)
    }
}

pub fn harmonic<T: Scalar>(p: &T, r: &T) -> T {
    let s = p.clone() + r.clone();
    if s == T::zero() {
        T::zero()
    } else {
        num::<T>(2) * p.clone() * r.clone() / s
    }
}

fn mean<T: Scalar>(xs: impl IntoIterator<Item = T>) -> T {
    let mut n = 0;
    let mut total = T::zero();
    for x in xs {
        total = total + x;
        n += 1;
    }
    if n == 0 {
        T::zero()
    } else {
        total / num::<T>(n)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricError {
    #[error("prediction/gold ids differ: {0}")]
    MismatchedIds(String),
    #[error("length mismatch in `{id}`: predicted {pred}, gold {gold}")]
    LengthMismatch { id: String, pred: usize, gold: usize },
    #[error("invalid BIO sequence in `{id}` at position {pos}")]
    InvalidBio { id: String, pos: usize },
    #[error("gold span is empty")]
    EmptyGold,
    #[error("no gold medication is found by every system")]
    EmptySubset,
}

/// Confusion counts for one positive class.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    pub fn add(&mut self, o: Counts) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
    }

    pub fn observe(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, true) => self.fn_ += 1,
            (false, false) => {}
        }
    }

    pub fn prf<T: Scalar>(&self) -> Prf<T> {
        Prf::new(ratio(self.tp, self.tp + self.fp), ratio(self.tp, self.tp + self.fn_))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Prf<T> {
    pub precision: T,
    pub recall: T,
    pub f1: T,
}

impl<T: Scalar> Prf<T> {
    pub fn new(precision: T, recall: T) -> Self {
        let f1 = harmonic(&precision, &recall);
        Self {
            precision,
            recall,
            f1,
        }
    }
}

// ---- grouped classification (sense disambiguation) ----

/// One aligned prediction for grouped evaluation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupedPair<L> {
    pub group: String,
    pub pred: L,
    pub gold: L,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupScore<T> {
    pub accuracy: T,
    pub macro_f1: T,
    pub micro_recall: T,
    pub micro_precision: T,
    pub support: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupedEvalReport<T> {
    pub per_group: BTreeMap<String, GroupScore<T>>,
    pub overall: GroupScore<T>,
}

/// Joins `preds` and `golds` on id; both sides must carry the same id set.
pub fn align_by_id<'a, P, G>(
    preds: &'a [(String, P)],
    golds: &'a [(String, G)],
) -> Result<Vec<(&'a str, &'a P, &'a G)>, MetricError> {
    let by_id: HashMap<&str, &P> = preds.iter().map(|(i, p)| (i.as_str(), p)).collect();
    if by_id.len() != preds.len() {
        return Err(MetricError::MismatchedIds("duplicate prediction id".into()));
    }
    let mut out = Vec::with_capacity(golds.len());
    let mut seen = HashSet::new();
    for (id, g) in golds {
        if !seen.insert(id.as_str()) {
            return Err(MetricError::MismatchedIds(format!("duplicate gold id `{id}`")));
        }
        let p = by_id
            .get(id.as_str())
            .ok_or_else(|| MetricError::MismatchedIds(format!("no prediction for `{id}`")))?;
        out.push((id.as_str(), *p, g));
    }
    if out.len() != preds.len() {
        let extra = preds.iter().find(|(i, _)| !seen.contains(i.as_str())).unwrap();
        return Err(MetricError::MismatchedIds(format!("no gold for `{}`", extra.0)));
    }
    Ok(out)
}

/// Macro F1 over the labels that have gold support in `pairs`.
pub fn macro_f1_gold_labels<T: Scalar, L: Ord>(pairs: &[(&L, &L)]) -> T {
    let labels: BTreeSet<&L> = pairs.iter().map(|(_, g)| *g).collect();
    mean(labels.into_iter().map(|l| {
        let mut c = Counts::default();
        for (p, g) in pairs {
            c.observe(*p == l, *g == l);
        }
        c.prf::<T>().f1
    }))
}

fn group_score<T: Scalar, L: Ord>(pairs: &[(&L, &L)]) -> GroupScore<T> {
    let correct = pairs.iter().filter(|(p, g)| p == g).count();
    let acc: T = ratio(correct, pairs.len());
    GroupScore {
        accuracy: acc.clone(),
        macro_f1: macro_f1_gold_labels(pairs),
        micro_recall: acc.clone(),
        micro_precision: acc,
        support: pairs.len(),
    }
}

/// Per-group accuracy and macro F1, then an unweighted mean over groups.
pub fn grouped_accuracy_macro_f1<T: Scalar, L: Ord>(pairs: &[GroupedPair<L>]) -> GroupedEvalReport<T> {
    let mut groups: BTreeMap<&str, Vec<(&L, &L)>> = BTreeMap::new();
    for p in pairs {
        groups.entry(&p.group).or_default().push((&p.pred, &p.gold));
    }
    let per_group: BTreeMap<String, GroupScore<T>> = groups
        .iter()
        .map(|(k, v)| (k.to_string(), group_score(v)))
        .collect();
    let overall = overall_of(&per_group);
    GroupedEvalReport { per_group, overall }
}

fn overall_of<T: Scalar>(per_group: &BTreeMap<String, GroupScore<T>>) -> GroupScore<T> {
    GroupScore {
        accuracy: mean(per_group.values().map(|g| g.accuracy.clone())),
        macro_f1: mean(per_group.values().map(|g| g.macro_f1.clone())),
        micro_recall: mean(per_group.values().map(|g| g.micro_recall.clone())),
        micro_precision: mean(per_group.values().map(|g| g.micro_precision.clone())),
        support: per_group.values().map(|g| g.support).sum(),
    }
}

impl<T: Scalar> GroupedEvalReport<T> {
    /// True when every value lies in [0, 1] and `overall` is the unweighted
    /// mean of the groups.
    pub fn is_consistent(&self) -> bool {
        let unit = |x: &T| *x >= T::zero() && *x <= T::one();
        let ok = |g: &GroupScore<T>| {
            unit(&g.accuracy) && unit(&g.macro_f1) && unit(&g.micro_recall) && unit(&g.micro_precision)
        };
        self.per_group.values().all(ok) && ok(&self.overall) && overall_of(&self.per_group) == self.overall
    }
}

impl GroupedEvalReport<f64> {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["group", "accuracy", "macro_f1", "micro_recall", "micro_precision", "support"])
            .expect("in-memory write");
        let rows = self
            .per_group
            .iter()
            .map(|(k, g)| (k.as_str(), g))
            .chain(std::iter::once(("overall", &self.overall)));
        for (k, g) in rows {
            w.write_record([
                k.to_string(),
                g.accuracy.to_string(),
                g.macro_f1.to_string(),
                g.micro_recall.to_string(),
                g.micro_precision.to_string(),
                g.support.to_string(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }
}

// ---- binary token labeling ----

pub fn token_counts(pred: &[u8], gold: &[u8]) -> Result<Counts, MetricError> {
    if pred.len() != gold.len() {
        return Err(MetricError::LengthMismatch {
            id: String::new(),
            pred: pred.len(),
            gold: gold.len(),
        });
    }
    let mut c = Counts::default();
    for (p, g) in pred.iter().zip(gold) {
        c.observe(*p == 1, *g == 1);
    }
    Ok(c)
}

/// Positive-class P/R/F1 for one document.
pub fn token_f1<T: Scalar>(pred: &[u8], gold: &[u8]) -> Result<Prf<T>, MetricError> {
    token_counts(pred, gold).map(|c| c.prf())
}

/// Micro P/R/F1 over every token of every document.
pub fn corpus_token_f1<T: Scalar>(docs: &[(&str, &[u8], &[u8])]) -> Result<Prf<T>, MetricError> {
    let mut total = Counts::default();
    for (id, p, g) in docs {
        let c = token_counts(p, g).map_err(|e| with_id(e, id))?;
        total.add(c);
    }
    Ok(total.prf())
}

fn with_id(e: MetricError, id: &str) -> MetricError {
    match e {
        MetricError::LengthMismatch { pred, gold, .. } => MetricError::LengthMismatch {
            id: id.to_string(),
            pred,
            gold,
        },
        MetricError::InvalidBio { pos, .. } => MetricError::InvalidBio { id: id.to_string(), pos },
        other => other,
    }
}

// ---- arms ----

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ArmMatchConfig {
    pub jaccard_threshold: f64,
}

impl Default for ArmMatchConfig {
    fn default() -> Self {
        Self { jaccard_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ArmScore {
    pub count_correct: bool,
    pub content_correct: bool,
}

impl ArmScore {
    pub fn correct(&self) -> bool {
        self.count_correct && self.content_correct
    }
}

fn arm_tokens(s: &str) -> Vec<String> {
    s.to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() || c.is_whitespace() { c } else { ' ' })
        .collect::<String>()
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

pub fn arms_match(a: &str, b: &str, cfg: &ArmMatchConfig) -> bool {
    let (ta, tb) = (arm_tokens(a), arm_tokens(b));
    if ta.is_empty() || tb.is_empty() {
        return ta.is_empty() && tb.is_empty();
    }
    let (ja, jb) = (ta.join(" "), tb.join(" "));
    if ja.contains(&jb) || jb.contains(&ja) {
        return true;
    }
    let sa: HashSet<&String> = ta.iter().collect();
    let sb: HashSet<&String> = tb.iter().collect();
    let inter = sa.intersection(&sb).count();
    let union = sa.union(&sb).count();
    inter as f64 / union as f64 >= cfg.jaccard_threshold
}

/// Count check plus maximum one-to-one content matching; content is correct
/// when every gold arm is matched. Independent of list order.
pub fn arm_accuracy(pred: &[String], gold: &[String], cfg: &ArmMatchConfig) -> ArmScore {
    let adj: Vec<Vec<usize>> = gold
        .iter()
        .map(|g| (0..pred.len()).filter(|&i| arms_match(&pred[i], g, cfg)).collect())
        .collect();
    let mut owner: Vec<Option<usize>> = vec![None; pred.len()];
    let matched = (0..gold.len())
        .filter(|&j| augment(j, &adj, &mut owner, &mut vec![false; pred.len()]))
        .count();
    ArmScore {
        count_correct: pred.len() == gold.len(),
        content_correct: matched == gold.len(),
    }
}

// Kuhn's augmenting path from gold arm `j`.
fn augment(j: usize, adj: &[Vec<usize>], owner: &mut [Option<usize>], seen: &mut [bool]) -> bool {
    for &i in &adj[j] {
        if seen[i] {
            continue;
        }
        seen[i] = true;
        if owner[i].is_none_or(|k| augment(k, adj, owner, seen)) {
            owner[i] = Some(j);
            return true;
        }
    }
    false
}

// ---- unigram overlap (coreference) ----

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum UnigramMode {
    #[default]
    Multiset,
    Set,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RecallPrecision<T> {
    pub recall: T,
    pub precision: T,
}

fn unigram_bag(s: &str, mode: UnigramMode) -> HashMap<String, usize> {
    let mut bag = HashMap::new();
    for t in tokenize(s) {
        let e = bag.entry(t.folded()).or_insert(0);
        *e = match mode {
            UnigramMode::Multiset => *e + 1,
            UnigramMode::Set => 1,
        };
    }
    bag
}

pub fn unigram_recall_precision<T: Scalar>(
    pred: &str,
    gold: &str,
    mode: UnigramMode,
) -> Result<RecallPrecision<T>, MetricError> {
    let g = unigram_bag(gold, mode);
    let p = unigram_bag(pred, mode);
    let gn: usize = g.values().sum();
    if gn == 0 {
        return Err(MetricError::EmptyGold);
    }
    let pn: usize = p.values().sum();
    let inter: usize = g.iter().map(|(k, c)| (*c).min(p.get(k).copied().unwrap_or(0))).sum();
    Ok(RecallPrecision {
        recall: ratio(inter, gn),
        precision: ratio(inter, pn),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnigramReport<T> {
    pub recall: T,
    pub precision: T,
    pub evaluated: usize,
    pub skipped_empty_gold: usize,
}

/// Macro mean over examples; examples with an empty gold span are skipped.
pub fn macro_unigram<T: Scalar>(pairs: &[(&str, &str)], mode: UnigramMode) -> UnigramReport<T> {
    let mut scores = Vec::new();
    let mut skipped = 0;
    for (p, g) in pairs {
        match unigram_recall_precision::<T>(p, g, mode) {
            Ok(s) => scores.push(s),
            Err(_) => skipped += 1,
        }
    }
    UnigramReport {
        recall: mean(scores.iter().map(|s| s.recall.clone())),
        precision: mean(scores.iter().map(|s| s.precision.clone())),
        evaluated: scores.len(),
        skipped_empty_gold: skipped,
    }
}

/// For each example, the gold candidate (one of several acceptable
/// antecedents) that scores best, by recall then precision.
pub fn best_gold<'a>(pred: &str, golds: &'a [String], mode: UnigramMode) -> Option<&'a str> {
    let mut best: Option<(&str, RecallPrecision<num_rational::BigRational>)> = None;
    for g in golds {
        let Ok(s) = unigram_recall_precision(pred, g, mode) else { continue };
        let better = best.as_ref().is_none_or(|(_, b)| {
            s.recall > b.recall || (s.recall == b.recall && s.precision > b.precision)
        });
        if better {
            best = Some((g.as_str(), s));
        }
    }
    best.map(|(g, _)| g)
}

// ---- medication status ----

pub fn normalize_name(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn name_set(meds: &[MedStatus]) -> BTreeSet<String> {
    meds.iter().map(|m| normalize_name(&m.name)).collect()
}

/// Name-only micro recall/precision over all examples.
pub fn med_micro_pr<T: Scalar>(examples: &[(&[MedStatus], &[MedStatus])]) -> Prf<T> {
    let mut c = Counts::default();
    for (pred, gold) in examples {
        let (p, g) = (name_set(pred), name_set(gold));
        let tp = p.intersection(&g).count();
        c.add(Counts {
            tp,
            fp: p.len() - tp,
            fn_: g.len() - tp,
        });
    }
    c.prf()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemStatusScore<T> {
    pub accuracy: T,
    pub macro_f1: T,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionalReport<T> {
    pub subset_size: usize,
    pub gold_size: usize,
    pub systems: Vec<SystemStatusScore<T>>,
}

fn status_map(meds: &[MedStatus]) -> HashMap<String, Status> {
    let mut m = HashMap::new();
    for x in meds {
        m.entry(normalize_name(&x.name)).or_insert(x.status);
    }
    m
}

/// Status accuracy and macro F1 restricted to the gold medications every
/// system found. `runs[s][e]` is system `s`'s answer for example `e`.
/// Macro F1 averages over the statuses present in the subset's gold or in
/// the system's predictions on it.
pub fn conditional_status_eval<T: Scalar>(
    runs: &[Vec<Vec<MedStatus>>],
    gold: &[Vec<MedStatus>],
) -> Result<ConditionalReport<T>, MetricError> {
    if runs.iter().any(|r| r.len() != gold.len()) {
        return Err(MetricError::MismatchedIds("system run length differs from gold".into()));
    }
    let maps: Vec<Vec<HashMap<String, Status>>> = runs
        .iter()
        .map(|r| r.iter().map(|e| status_map(e)).collect())
        .collect();
    // per system: (pred, gold) status pairs on the subset
    let mut pairs: Vec<Vec<(Status, Status)>> = vec![Vec::new(); runs.len()];
    let mut gold_size = 0;
    for (e, g) in gold.iter().enumerate() {
        let mut seen = HashSet::new();
        for m in g {
            let name = normalize_name(&m.name);
            if !seen.insert(name.clone()) {
                continue;
            }
            gold_size += 1;
            let found: Option<Vec<Status>> = maps.iter().map(|s| s[e].get(&name).copied()).collect();
            if let Some(found) = found {
                for (s, st) in found.into_iter().enumerate() {
                    pairs[s].push((st, m.status));
                }
            }
        }
    }
    let subset_size = pairs.first().map_or(0, Vec::len);
    if runs.is_empty() || subset_size == 0 {
        return Err(MetricError::EmptySubset);
    }
    let systems = pairs
        .iter()
        .map(|ps| {
            let correct = ps.iter().filter(|(p, g)| p == g).count();
            let classes: BTreeSet<Status> = ps.iter().flat_map(|(p, g)| [*p, *g]).collect();
            let macro_f1 = mean(classes.into_iter().map(|k| {
                let mut c = Counts::default();
                for (p, g) in ps {
                    c.observe(*p == k, *g == k);
                }
                c.prf::<T>().f1
            }));
            SystemStatusScore {
                accuracy: ratio(correct, ps.len()),
                macro_f1,
            }
        })
        .collect();
    Ok(ConditionalReport {
        subset_size,
        gold_size,
        systems,
    })
}

// ---- medication attributes ----

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TypedF1Report<T> {
    pub per_type: BTreeMap<AttrKind, Prf<T>>,
    /// Micro over all types.
    pub micro: Prf<T>,
    pub counts: BTreeMap<AttrKind, Counts>,
}

fn typed_report<T: Scalar>(counts: BTreeMap<AttrKind, Counts>) -> TypedF1Report<T> {
    let mut total = Counts::default();
    counts.values().for_each(|c| total.add(*c));
    TypedF1Report {
        per_type: counts.iter().map(|(k, c)| (*k, c.prf())).collect(),
        micro: total.prf(),
        counts,
    }
}

fn empty_counts() -> BTreeMap<AttrKind, Counts> {
    AttrKind::ALL.iter().map(|k| (*k, Counts::default())).collect()
}

/// Per-type micro F1 over tokens.
pub fn typed_token_f1<T: Scalar>(docs: &[(&str, &[TypedLabel], &[TypedLabel])]) -> Result<TypedF1Report<T>, MetricError> {
    let mut counts = empty_counts();
    for (id, pred, gold) in docs {
        if pred.len() != gold.len() {
            return Err(MetricError::LengthMismatch {
                id: id.to_string(),
                pred: pred.len(),
                gold: gold.len(),
            });
        }
        for (p, g) in pred.iter().zip(*gold) {
            for (k, c) in counts.iter_mut() {
                c.observe(p.0 == Some(*k), g.0 == Some(*k));
            }
        }
    }
    Ok(typed_report(counts))
}

/// `(start, end_exclusive, kind)` for each entity in a valid BIO sequence.
pub fn bio_spans(tags: &[BioTag]) -> Vec<(usize, usize, AttrKind)> {
    let mut out = Vec::new();
    let mut open: Option<(usize, AttrKind)> = None;
    for (i, t) in tags.iter().enumerate() {
        match *t {
            BioTag::Inside(k) if open.is_some_and(|(_, ok)| ok == k) => {}
            other => {
                if let Some((s, k)) = open.take() {
                    out.push((s, i, k));
                }
                if let BioTag::Begin(k) | BioTag::Inside(k) = other {
                    open = Some((i, k));
                }
            }
        }
    }
    if let Some((s, k)) = open {
        out.push((s, tags.len(), k));
    }
    out
}

/// Exact-boundary, exact-type span F1.
pub fn phrase_f1<T: Scalar>(docs: &[(&str, &[BioTag], &[BioTag])]) -> Result<TypedF1Report<T>, MetricError> {
    let mut counts = empty_counts();
    for (id, pred, gold) in docs {
        if pred.len() != gold.len() {
            return Err(MetricError::LengthMismatch {
                id: id.to_string(),
                pred: pred.len(),
                gold: gold.len(),
            });
        }
        for seq in [pred, gold] {
            if let Some(pos) = first_bio_violation(seq) {
                return Err(MetricError::InvalidBio { id: id.to_string(), pos });
            }
        }
        let ps: HashSet<_> = bio_spans(pred).into_iter().collect();
        let gs: HashSet<_> = bio_spans(gold).into_iter().collect();
        for &(s, e, k) in ps.union(&gs) {
            counts
                .get_mut(&k)
                .unwrap()
                .observe(ps.contains(&(s, e, k)), gs.contains(&(s, e, k)));
        }
    }
    Ok(typed_report(counts))
}

/// `(medication, type, value)` triples, case-folded; the medication itself
/// contributes one `Medication` triple.
pub fn relation_triples(records: &[MedRecord]) -> HashSet<(String, AttrKind, String)> {
    let mut out = HashSet::new();
    for r in records {
        let med = normalize_name(&r.medication);
        out.insert((med.clone(), AttrKind::Medication, med.clone()));
        for (k, v) in r.attributes() {
            out.insert((med.clone(), k, normalize_name(v)));
        }
    }
    out
}

pub fn relation_f1<T: Scalar>(docs: &[(&[MedRecord], &[MedRecord])]) -> TypedF1Report<T> {
    let mut counts = empty_counts();
    for (pred, gold) in docs {
        let (ps, gs) = (relation_triples(pred), relation_triples(gold));
        for t in ps.union(&gs) {
            counts
                .get_mut(&t.1)
                .unwrap()
                .observe(ps.contains(t), gs.contains(t));
        }
    }
    typed_report(counts)
}

/// Deduplicates while keeping first occurrences, for callers that want to
/// score multiset inputs.
pub fn dedup_by<T, K: Eq + Hash>(xs: &[T], key: impl Fn(&T) -> K) -> Vec<&T> {
    let mut seen = HashSet::new();
    xs.iter().filter(|x| seen.insert(key(x))).collect()
}
