use std::fmt;

use crate::model::{first_bio_violation, Snippet, StructuredOutput, TaskKind, TokenLabels};
use crate::tokenize::tokenize;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    WrongOutputKind { task: TaskKind },
    LengthMismatch { expected: usize, actual: usize },
    IndexOutOfRange { index: usize, len: usize },
    MissingCandidates,
    NonBinaryLabel { position: usize, value: u8 },
    InvalidBio { position: usize },
    EmptyName { position: usize },
    EmptyAttribute { position: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::WrongOutputKind { task } => write!(f, "output kind does not fit task {task}"),
            Violation::LengthMismatch { expected, actual } => {
                write!(f, "length mismatch: expected {expected} labels, got {actual}")
            }
            Violation::IndexOutOfRange { index, len } => {
                write!(f, "index out of range: {index} with {len} candidates")
            }
            Violation::MissingCandidates => f.write_str("choice given without candidate list"),
            Violation::NonBinaryLabel { position, value } => {
                write!(f, "non-binary label {value} at {position}")
            }
            Violation::InvalidBio { position } => write!(f, "invalid BIO sequence at {position}"),
            Violation::EmptyName { position } => write!(f, "empty medication name at {position}"),
            Violation::EmptyAttribute { position } => {
                write!(f, "empty attribute list or value in record {position}")
            }
        }
    }
}

/// Checks `out` against the invariants of `task`'s output space, using the
/// token count of `snippet.text` for token-level tasks.
pub fn validate_output(
    task: TaskKind,
    out: &StructuredOutput,
    snippet: &Snippet,
    candidates: Option<&[String]>,
) -> Result<(), Vec<Violation>> {
    let n_tokens = tokenize(&snippet.text).len();
    validate_with_token_count(task, out, Some(n_tokens), candidates)
}

/// Like [`validate_output`] with an explicit token count; `None` skips the
/// length check.
pub fn validate_with_token_count(
    task: TaskKind,
    out: &StructuredOutput,
    n_tokens: Option<usize>,
    candidates: Option<&[String]>,
) -> Result<(), Vec<Violation>> {
    let mut v = Vec::new();
    let check_len = |len: usize, v: &mut Vec<Violation>| {
        if let Some(expected) = n_tokens {
            if expected != len {
                v.push(Violation::LengthMismatch {
                    expected,
                    actual: len,
                });
            }
        }
    };
    use StructuredOutput as O;
    use TaskKind as T;
    match (task, out) {
        (T::SenseDisambiguation, O::Choice(i)) => match candidates {
            Some(c) if *i >= c.len() => v.push(Violation::IndexOutOfRange {
                index: *i,
                len: c.len(),
            }),
            Some(_) => {}
            None => v.push(Violation::MissingCandidates),
        },
        (T::EvidenceTokens, O::TokenLabels(TokenLabels::Binary(labels))) => {
            check_len(labels.len(), &mut v);
            for (position, &value) in labels.iter().enumerate() {
                if value > 1 {
                    v.push(Violation::NonBinaryLabel { position, value });
                }
            }
        }
        (T::MedAttrToken, O::TokenLabels(TokenLabels::Typed(labels))) => {
            check_len(labels.len(), &mut v)
        }
        (T::MedAttrPhrase, O::TokenLabels(TokenLabels::Bio(tags))) => {
            check_len(tags.len(), &mut v);
            if let Some(position) = first_bio_violation(tags) {
                v.push(Violation::InvalidBio { position });
            }
        }
        (T::ArmIdentification, O::SpanList(_)) | (T::Coreference, O::Span(_)) => {}
        (T::MedStatus, O::MedStatusList(meds)) => {
            for (position, m) in meds.iter().enumerate() {
                if m.name.trim().is_empty() {
                    v.push(Violation::EmptyName { position });
                }
            }
        }
        (T::MedAttrRelation, O::MedAttrRecords(records)) => {
            for (position, r) in records.iter().enumerate() {
                if r.medication.trim().is_empty() {
                    v.push(Violation::EmptyName { position });
                }
                let bad_attr = crate::model::AttrKind::ATTRIBUTES.iter().any(|&k| {
                    r.attr(k)
                        .is_some_and(|vals| vals.is_empty() || vals.iter().any(|s| s.is_empty()))
                });
                if bad_attr {
                    v.push(Violation::EmptyAttribute { position });
                }
            }
        }
        _ => v.push(Violation::WrongOutputKind { task }),
    }
    if v.is_empty() {
        Ok(())
    } else {
        Err(v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AttrKind, BioTag, MedRecord, MedStatus, Status};

    fn five_tokens() -> Snippet {
        Snippet::new("s", "one two three four five", None).unwrap()
    }

    #[test]
    fn token_length_checks() {
        let ok = StructuredOutput::TokenLabels(TokenLabels::Binary(vec![0, 1, 0, 0, 1]));
        assert!(validate_output(TaskKind::EvidenceTokens, &ok, &five_tokens(), None).is_ok());

        let short = StructuredOutput::TokenLabels(TokenLabels::Binary(vec![0, 1, 0, 0]));
        let err = validate_output(TaskKind::EvidenceTokens, &short, &five_tokens(), None).unwrap_err();
        assert_eq!(err, vec![Violation::LengthMismatch { expected: 5, actual: 4 }]);
        assert!(err[0].to_string().contains("length mismatch"));
    }

    #[test]
    fn choice_out_of_range() {
        let cands: Vec<String> = ["a", "b", "c"].map(String::from).to_vec();
        let err = validate_output(
            TaskKind::SenseDisambiguation,
            &StructuredOutput::Choice(3),
            &five_tokens(),
            Some(&cands),
        )
        .unwrap_err();
        assert_eq!(err, vec![Violation::IndexOutOfRange { index: 3, len: 3 }]);
        assert!(err[0].to_string().contains("index out of range"));
    }

    #[test]
    fn wrong_kind_and_bio() {
        let err = validate_output(
            TaskKind::Coreference,
            &StructuredOutput::Choice(0),
            &five_tokens(),
            None,
        )
        .unwrap_err();
        assert!(matches!(err[0], Violation::WrongOutputKind { .. }));

        let tags = vec![BioTag::Outside, BioTag::Inside(AttrKind::Dosage), BioTag::Outside, BioTag::Outside, BioTag::Outside];
        let err = validate_output(
            TaskKind::MedAttrPhrase,
            &StructuredOutput::TokenLabels(TokenLabels::Bio(tags)),
            &five_tokens(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, vec![Violation::InvalidBio { position: 1 }]);
    }

    #[test]
    fn records_and_names() {
        let mut r = MedRecord::new("aspirin");
        r.dosage = Some(vec![]);
        let err = validate_output(
            TaskKind::MedAttrRelation,
            &StructuredOutput::MedAttrRecords(vec![r]),
            &five_tokens(),
            None,
        )
        .unwrap_err();
        assert_eq!(err, vec![Violation::EmptyAttribute { position: 0 }]);

        let meds = vec![MedStatus::new(" ", Status::Active)];
        assert!(validate_output(
            TaskKind::MedStatus,
            &StructuredOutput::MedStatusList(meds),
            &five_tokens(),
            None
        )
        .is_err());
    }
}
