//! Pseudolabel filtering and subset selection for distilling resolver
//! outputs into a smaller model.
//!
//! The cut statistic here is a k-nearest-neighbour agreement score: the
//! fraction of an example's neighbours (cosine distance) that carry the same
//! pseudolabel. Examples are ranked by it and the top fraction is kept.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tokenize::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pseudolabel {
    pub snippet_id: String,
    /// Index into the group's candidate list.
    pub label: usize,
    pub overlap_len: usize,
    /// Group key, the acronym for sense disambiguation.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub features: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cut_value: Option<f64>,
}

impl Pseudolabel {
    pub fn new(snippet_id: impl Into<String>, label: usize, overlap_len: usize) -> Self {
        Self {
            snippet_id: snippet_id.into(),
            label,
            overlap_len,
            group: None,
            features: None,
            cut_value: None,
        }
    }

    pub fn with_group(mut self, g: impl Into<String>) -> Self {
        self.group = Some(g.into());
        self
    }

    pub fn with_features(mut self, f: Vec<f64>) -> Self {
        self.features = Some(f);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionConfig {
    pub min_overlap: usize,
    pub keep_fraction: f64,
    pub k_neighbors: usize,
    pub stratify_by_group: bool,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            min_overlap: 5,
            keep_fraction: 0.75,
            k_neighbors: 10,
            stratify_by_group: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum WeakSupError {
    #[error("keep_fraction must be in (0, 1], got {0}")]
    BadKeepFraction(f64),
    #[error("k_neighbors must be at least 1")]
    BadK,
    #[error("`{0}` has no feature vector")]
    MissingFeatures(String),
    #[error("`{id}` has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("duplicate snippet id `{0}`")]
    DuplicateId(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
}

impl SelectionConfig {
    pub fn check(&self) -> Result<(), WeakSupError> {
        if !(self.keep_fraction > 0.0 && self.keep_fraction <= 1.0) {
            return Err(WeakSupError::BadKeepFraction(self.keep_fraction));
        }
        if self.k_neighbors == 0 {
            return Err(WeakSupError::BadK);
        }
        Ok(())
    }
}

pub fn filter_by_overlap(labels: Vec<Pseudolabel>, min_overlap: usize) -> Vec<Pseudolabel> {
    labels.into_iter().filter(|l| l.overlap_len >= min_overlap).collect()
}

/// `1 - cos(a, b)`; a zero vector is at distance 1 from everything.
pub fn cosine_distance<F: Float>(a: &[F], b: &[F]) -> F {
    let mut dot = F::zero();
    let mut na = F::zero();
    let mut nb = F::zero();
    for (x, y) in a.iter().zip(b) {
        dot = dot + *x * *y;
        na = na + *x * *x;
        nb = nb + *y * *y;
    }
    if na == F::zero() || nb == F::zero() {
        return F::one();
    }
    F::one() - dot / (na.sqrt() * nb.sqrt())
}

/// For each point, its `k` nearest eligible points by cosine distance, ties
/// broken by `keys`. `eligible(i, j)` restricts candidate neighbours.
pub fn knn<F, E>(vectors: &[Vec<F>], keys: &[&str], k: usize, eligible: E) -> Vec<Vec<usize>>
where
    F: Float + Send + Sync,
    E: Fn(usize, usize) -> bool + Sync,
{
    (0..vectors.len())
        .into_par_iter()
        .map(|i| {
            let mut cands: Vec<(F, usize)> = (0..vectors.len())
                .filter(|&j| j != i && eligible(i, j))
                .map(|j| (cosine_distance(&vectors[i], &vectors[j]), j))
                .collect();
            cands.sort_by(|a, b| {
                a.0.partial_cmp(&b.0)
                    .unwrap_or(std::cmp::Ordering::Equal)
                    .then_with(|| keys[a.1].cmp(keys[b.1]))
            });
            cands.into_iter().take(k).map(|(_, j)| j).collect()
        })
        .collect()
}

/// Fraction of each point's neighbours sharing its label; 1.0 when a point
/// has no neighbours.
pub fn cut_values<F: Float, L: PartialEq>(neighbors: &[Vec<usize>], labels: &[L]) -> Vec<F> {
    neighbors
        .iter()
        .enumerate()
        .map(|(i, ns)| {
            if ns.is_empty() {
                return F::one();
            }
            let agree = ns.iter().filter(|&&j| labels[j] == labels[i]).count();
            F::from(agree).unwrap() / F::from(ns.len()).unwrap()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Selection {
    /// Ranked by cut value (descending), then snippet id.
    pub selected: Vec<Pseudolabel>,
    pub target: usize,
    /// Items beyond `target` kept so that every group is represented.
    pub extra_for_groups: usize,
    /// Items beyond that kept so the selected mean agreement does not fall
    /// below the input mean.
    pub extra_for_agreement: usize,
}

fn validate_features(labels: &[Pseudolabel]) -> Result<(), WeakSupError> {
    let mut seen = HashSet::new();
    let mut dim = None;
    for l in labels {
        if !seen.insert(l.snippet_id.as_str()) {
            return Err(WeakSupError::DuplicateId(l.snippet_id.clone()));
        }
        let f = l
            .features
            .as_ref()
            .ok_or_else(|| WeakSupError::MissingFeatures(l.snippet_id.clone()))?;
        match dim {
            None => dim = Some(f.len()),
            Some(d) if d != f.len() => {
                return Err(WeakSupError::DimensionMismatch {
                    id: l.snippet_id.clone(),
                    expected: d,
                    got: f.len(),
                })
            }
            _ => {}
        }
    }
    Ok(())
}

/// Scores every label with its cut value and keeps the best
/// `round(keep_fraction * N)`. With stratification, neighbours come from the
/// same group and each group keeps at least its best example.
pub fn cut_statistic_select(labels: &[Pseudolabel], config: &SelectionConfig) -> Result<Selection, WeakSupError> {
    config.check()?;
    validate_features(labels)?;
    let n = labels.len();
    let vectors: Vec<Vec<f64>> = labels.iter().map(|l| l.features.clone().unwrap()).collect();
    let keys: Vec<&str> = labels.iter().map(|l| l.snippet_id.as_str()).collect();
    let groups: Vec<Option<&str>> = labels.iter().map(|l| l.group.as_deref()).collect();
    let label_keys: Vec<(Option<&str>, usize)> = labels.iter().map(|l| (l.group.as_deref(), l.label)).collect();
    let neighbors = knn(&vectors, &keys, config.k_neighbors, |i, j| {
        !config.stratify_by_group || groups[i] == groups[j]
    });
    let cuts: Vec<f64> = cut_values(&neighbors, &label_keys);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        cuts[b]
            .partial_cmp(&cuts[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| keys[a].cmp(keys[b]))
    });

    let target = (config.keep_fraction * n as f64).round() as usize;
    let mut chosen = vec![false; n];
    let mut count = 0;
    if config.stratify_by_group {
        let mut seen = HashSet::new();
        for &i in &order {
            if seen.insert(groups[i]) {
                chosen[i] = true;
                count += 1;
            }
        }
    }
    let forced = count;
    for &i in &order {
        if count >= target {
            break;
        }
        if !chosen[i] {
            chosen[i] = true;
            count += 1;
        }
    }
    let extra_for_groups = forced.saturating_sub(target);

    // Forced group representatives can drag the mean below the input mean;
    // extend with the next-best items until it recovers.
    let total: f64 = cuts.iter().sum();
    let mut sum: f64 = (0..n).filter(|&i| chosen[i]).map(|i| cuts[i]).sum();
    let mut extra_for_agreement = 0;
    for &i in &order {
        if n == 0 || count == 0 || sum * n as f64 >= total * count as f64 - 1e-9 {
            break;
        }
        if !chosen[i] {
            chosen[i] = true;
            count += 1;
            sum += cuts[i];
            extra_for_agreement += 1;
        }
    }

    let selected = order
        .iter()
        .filter(|&&i| chosen[i])
        .map(|&i| Pseudolabel {
            cut_value: Some(cuts[i]),
            ..labels[i].clone()
        })
        .collect();
    Ok(Selection {
        selected,
        target,
        extra_for_groups,
        extra_for_agreement,
    })
}

/// L2-normalised TF-IDF vectors over case-folded tokens, with smoothed idf
/// `ln((1 + N) / (1 + df)) + 1`. Vocabulary order is sorted.
pub fn tfidf_vectors(texts: &[&str]) -> Vec<Vec<f64>> {
    let docs: Vec<Vec<String>> = texts
        .iter()
        .map(|t| tokenize(t).into_iter().filter(|t| !t.is_punct()).map(|t| t.folded()).collect())
        .collect();
    let mut df: BTreeMap<&str, usize> = BTreeMap::new();
    for d in &docs {
        let uniq: HashSet<&str> = d.iter().map(String::as_str).collect();
        for w in uniq {
            *df.entry(w).or_default() += 1;
        }
    }
    let index: HashMap<&str, usize> = df.keys().enumerate().map(|(i, w)| (*w, i)).collect();
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.values().map(|&c| ((1.0 + n) / (1.0 + c as f64)).ln() + 1.0).collect();
    docs.iter()
        .map(|d| {
            let mut v = vec![0.0; idf.len()];
            for w in d {
                v[index[w.as_str()]] += 1.0;
            }
            for (x, w) in v.iter_mut().zip(&idf) {
                *x *= w;
            }
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            }
            v
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FeatureLine {
    snippet_id: String,
    vector: Vec<f64>,
}

fn jsonl_lines(path: &Path) -> Result<Vec<(usize, String)>, WeakSupError> {
    let io = |source| WeakSupError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io)?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io)?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

fn parse_line<T: for<'de> Deserialize<'de>>(path: &Path, line_no: usize, line: &str) -> Result<T, WeakSupError> {
    serde_json::from_str(line).map_err(|e| WeakSupError::Parse {
        path: path.to_path_buf(),
        line: line_no,
        message: e.to_string(),
    })
}

/// Reads a `{snippet_id, vector}` JSON Lines file.
pub fn load_features(path: &Path) -> Result<HashMap<String, Vec<f64>>, WeakSupError> {
    let mut out = HashMap::new();
    for (no, line) in jsonl_lines(path)? {
        let f: FeatureLine = parse_line(path, no, &line)?;
        if out.insert(f.snippet_id.clone(), f.vector).is_some() {
            return Err(WeakSupError::DuplicateId(f.snippet_id));
        }
    }
    Ok(out)
}

pub fn attach_features(labels: &mut [Pseudolabel], features: &HashMap<String, Vec<f64>>) -> Result<(), WeakSupError> {
    for l in labels.iter_mut() {
        let v = features
            .get(&l.snippet_id)
            .ok_or_else(|| WeakSupError::MissingFeatures(l.snippet_id.clone()))?;
        l.features = Some(v.clone());
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingExample {
    pub snippet_id: String,
    pub text: String,
    pub side: Option<String>,
    pub candidates: Vec<String>,
    pub label_index: usize,
}

pub const TRAINING_HEADER: &str = "# clinex training set: {snippet_id, text, side, candidates, label_index}";

/// Writes the header comment and one example per line, ids ascending.
pub fn export_training_set(path: &Path, examples: &[TrainingExample]) -> Result<(), WeakSupError> {
    let io = |source| WeakSupError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut sorted: Vec<&TrainingExample> = examples.iter().collect();
    sorted.sort_by(|a, b| a.snippet_id.cmp(&b.snippet_id));
    let mut f = std::io::BufWriter::new(File::create(path).map_err(io)?);
    writeln!(f, "{TRAINING_HEADER}").map_err(io)?;
    for e in sorted {
        writeln!(f, "{}", serde_json::to_string(e).expect("example serializes")).map_err(io)?;
    }
    f.flush().map_err(io)
}

pub fn load_training_set(path: &Path) -> Result<Vec<TrainingExample>, WeakSupError> {
    jsonl_lines(path)?
        .into_iter()
        .map(|(no, line)| parse_line(path, no, &line))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn overlap_filter_threshold() {
        let ls = vec![Pseudolabel::new("a", 0, 5), Pseudolabel::new("b", 0, 4), Pseudolabel::new("c", 1, 9)];
        let kept: Vec<_> = filter_by_overlap(ls.clone(), 5).into_iter().map(|l| l.snippet_id).collect();
        assert_eq!(kept, ["a", "c"]);
        assert_eq!(filter_by_overlap(ls.clone(), 0), ls);
        assert!(filter_by_overlap(vec![], 5).is_empty());
    }

    #[test]
    fn cosine_generic() {
        assert!((cosine_distance(&[1.0f32, 0.0], &[0.0, 1.0]) - 1.0).abs() < 1e-6);
        assert!(cosine_distance(&[2.0f64, 2.0], &[1.0, 1.0]).abs() < 1e-12);
        assert_eq!(cosine_distance(&[0.0f64, 0.0], &[1.0, 1.0]), 1.0);
    }

    #[test]
    fn identical_labels_keep_first_by_id() {
        let ls: Vec<_> = ["d", "b", "a", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| Pseudolabel::new(*id, 0, 9).with_group("X").with_features(vec![i as f64 + 1.0, 1.0]))
            .collect();
        let s = cut_statistic_select(&ls, &SelectionConfig::default()).unwrap();
        let ids: Vec<_> = s.selected.iter().map(|l| l.snippet_id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert!(s.selected.iter().all(|l| l.cut_value == Some(1.0)));
        let all = SelectionConfig {
            keep_fraction: 1.0,
            ..Default::default()
        };
        assert_eq!(cut_statistic_select(&ls, &all).unwrap().selected.len(), 4);
    }

    #[test]
    fn every_group_keeps_one() {
        let mut ls = Vec::new();
        for g in ["A", "B", "C", "D"] {
            ls.push(Pseudolabel::new(format!("{g}1"), 0, 9).with_group(g).with_features(vec![1.0, 0.0]));
        }
        let cfg = SelectionConfig {
            keep_fraction: 0.5,
            ..Default::default()
        };
        let s = cut_statistic_select(&ls, &cfg).unwrap();
        assert_eq!(s.selected.len(), 4);
        assert_eq!(s.target, 2);
        assert_eq!(s.extra_for_groups, 2);
    }

    #[test]
    fn feature_errors() {
        let ls = vec![Pseudolabel::new("a", 0, 9)];
        assert!(matches!(
            cut_statistic_select(&ls, &SelectionConfig::default()),
            Err(WeakSupError::MissingFeatures(_))
        ));
        let ls = vec![
            Pseudolabel::new("a", 0, 9).with_features(vec![1.0]),
            Pseudolabel::new("b", 0, 9).with_features(vec![1.0, 2.0]),
        ];
        assert!(matches!(
            cut_statistic_select(&ls, &SelectionConfig::default()),
            Err(WeakSupError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn tfidf_is_normalised_and_separates_topics() {
        let v = tfidf_vectors(&["clear to auscultation", "clear to auscultation bilaterally", "pulmonary artery"]);
        for x in &v {
            let n: f64 = x.iter().map(|a| a * a).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
        assert!(cosine_distance(&v[0], &v[1]) < cosine_distance(&v[0], &v[2]));
    }

    #[test]
    fn export_roundtrip_and_empty_header() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("train.jsonl");
        export_training_set(&p, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), format!("{TRAINING_HEADER}\n"));
        let ex = |id: &str, i| TrainingExample {
            snippet_id: id.into(),
            text: "LUNGS: CTA".into(),
            side: Some("CTA".into()),
            candidates: vec!["clear to auscultation".into(), "computed tomography angiography".into()],
            label_index: i,
        };
        let set = vec![ex("z", 1), ex("a", 0)];
        export_training_set(&p, &set).unwrap();
        let back = load_training_set(&p).unwrap();
        assert_eq!(back, vec![ex("a", 0), ex("z", 1)]);
    }

    #[test]
    fn features_file_errors_name_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("f.jsonl");
        std::fs::write(&p, "{\"snippet_id\":\"a\",\"vector\":[1.0]}\n{bad\n").unwrap();
        let e = load_features(&p).unwrap_err();
        assert!(matches!(e, WeakSupError::Parse { line: 2, .. }));
    }

    fn arb_labels() -> impl Strategy<Value = Vec<Pseudolabel>> {
        prop::collection::vec((0usize..3, 0usize..2, prop::collection::vec(-3i8..4, 3)), 1..30).prop_map(|v| {
            v.into_iter()
                .enumerate()
                .map(|(i, (g, l, f))| {
                    Pseudolabel::new(format!("s{i:03}"), l, 5)
                        .with_group(format!("g{g}"))
                        .with_features(f.into_iter().map(f64::from).collect())
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn selection_properties(ls in arb_labels(), seed in any::<u64>(), k in 1usize..6) {
            let cfg = SelectionConfig { k_neighbors: k, ..Default::default() };
            let s = cut_statistic_select(&ls, &cfg).unwrap();
            let groups: HashSet<_> = ls.iter().map(|l| l.group.clone()).collect();
            let got: HashSet<_> = s.selected.iter().map(|l| l.group.clone()).collect();
            prop_assert_eq!(&got, &groups);
            prop_assert_eq!(s.selected.len(), s.target.max(groups.len()) + s.extra_for_agreement);
            // permutation invariance
            let mut shuffled = ls.clone();
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let s2 = cut_statistic_select(&shuffled, &cfg).unwrap();
            let ids = |s: &Selection| s.selected.iter().map(|l| l.snippet_id.clone()).collect::<Vec<_>>();
            prop_assert_eq!(ids(&s), ids(&s2));
        }
    }
}
