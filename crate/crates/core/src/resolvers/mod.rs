//! Resolvers map a raw LLM string (plus the original input) onto a task's
//! structured output space. All of them are pure functions.

pub mod arms;
pub mod coref;
pub mod evidence;
pub mod med_attr;
pub mod med_status;
pub mod sense;
pub mod stopwords;

pub use arms::resolve_arms;
pub use coref::{resolve_coref_guided, resolve_coref_unguided, EmptySpan};
pub use evidence::{resolve_evidence_tokens, GapFill};
pub use med_attr::{resolve_med_attr_phrase, resolve_med_attr_relations, resolve_med_attr_token};
pub use med_status::{resolve_med_status_guided, resolve_med_status_unguided};
pub use sense::{
    longest_common_substring_len, resolve_sense, resolve_sense_edit, SenseCandidates, SenseChoice,
};

use thiserror::Error;

use crate::model::{Diagnostics, Snippet, StructuredOutput, TaskKind, TokenLabels};
use crate::tokenize::tokenize;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ResolveError {
    #[error("sense resolution needs a candidate list")]
    MissingCandidates,
    #[error(transparent)]
    EmptySpan(#[from] EmptySpan),
}

/// Everything besides the raw output that a resolver may consult.
#[derive(Debug, Clone, Copy)]
pub struct ResolveContext<'a> {
    pub snippet: &'a Snippet,
    pub candidates: Option<&'a SenseCandidates>,
    /// Output came from a template with an answer prefix; `raw` then holds
    /// prefix + completion.
    pub guided: bool,
    /// Output is an edited copy of `snippet.text`.
    pub edit_mode: bool,
    pub gap_fill: GapFill,
}

impl<'a> ResolveContext<'a> {
    pub fn new(snippet: &'a Snippet) -> Self {
        Self {
            snippet,
            candidates: None,
            guided: false,
            edit_mode: false,
            gap_fill: GapFill::default(),
        }
    }

    pub fn guided(mut self, guided: bool) -> Self {
        self.guided = guided;
        self
    }

    pub fn edit_mode(mut self, edit: bool) -> Self {
        self.edit_mode = edit;
        self
    }

    pub fn candidates(mut self, c: &'a SenseCandidates) -> Self {
        self.candidates = Some(c);
        self
    }

    pub fn gap_fill(mut self, g: GapFill) -> Self {
        self.gap_fill = g;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Resolved {
    pub output: StructuredOutput,
    pub diagnostics: Diagnostics,
}

/// Task dispatch.
pub fn resolve(task: TaskKind, raw: &str, ctx: ResolveContext<'_>) -> Result<Resolved, ResolveError> {
    let plain = |output| Resolved {
        output,
        diagnostics: Diagnostics::new(),
    };
    Ok(match task {
        TaskKind::SenseDisambiguation => {
            let cands = ctx.candidates.ok_or(ResolveError::MissingCandidates)?;
            let choice = if ctx.edit_mode {
                resolve_sense_edit(&ctx.snippet.text, raw, cands)
            } else {
                resolve_sense(raw, cands)
            };
            Resolved {
                output: StructuredOutput::Choice(choice.index),
                diagnostics: Diagnostics::new().with("overlap_len", choice.overlap),
            }
        }
        TaskKind::EvidenceTokens => {
            let r = resolve_evidence_tokens(raw, &tokenize(&ctx.snippet.text), ctx.gap_fill);
            Resolved {
                output: StructuredOutput::TokenLabels(TokenLabels::Binary(r.labels)),
                diagnostics: r.diagnostics,
            }
        }
        TaskKind::ArmIdentification => plain(StructuredOutput::SpanList(resolve_arms(raw))),
        TaskKind::Coreference if ctx.guided => {
            plain(StructuredOutput::Span(coref::resolve_coref_guided_answer(raw)?))
        }
        TaskKind::Coreference => {
            let r = resolve_coref_unguided(raw, ctx.snippet);
            Resolved {
                output: StructuredOutput::Span(r.span),
                diagnostics: r.diagnostics,
            }
        }
        TaskKind::MedStatus => {
            let r = if ctx.guided {
                resolve_med_status_guided(raw)
            } else {
                resolve_med_status_unguided(raw, ctx.snippet)
            };
            Resolved {
                output: StructuredOutput::MedStatusList(r.meds),
                diagnostics: r.diagnostics,
            }
        }
        TaskKind::MedAttrToken => {
            let r = resolve_med_attr_token(raw, &tokenize(&ctx.snippet.text));
            Resolved {
                output: StructuredOutput::TokenLabels(TokenLabels::Typed(r.labels)),
                diagnostics: r.diagnostics,
            }
        }
        TaskKind::MedAttrPhrase => {
            let r = resolve_med_attr_phrase(raw, &tokenize(&ctx.snippet.text));
            Resolved {
                output: StructuredOutput::TokenLabels(TokenLabels::Bio(r.tags)),
                diagnostics: r.diagnostics,
            }
        }
        TaskKind::MedAttrRelation => {
            let r = resolve_med_attr_relations(raw);
            Resolved {
                output: StructuredOutput::MedAttrRecords(r.records),
                diagnostics: r.diagnostics,
            }
        }
    })
}
