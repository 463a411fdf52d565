//! Unanswerable question generation from altered descriptions, plus the
//! balanced evaluation-set builder.

use crate::corpus::{
    Answerability, DescriptionRecord, QAItem, RelationSubtype, UnanswerabilityKind, VideoRef,
};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, GENERATION_TEMPERATURE};
use crate::judge::RefusalLexicon;
use crate::perturb::AlteredDescription;
use crate::prompts::{TemplateName, Templates};
use crate::rng::item_rng;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeSet, HashMap};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum QagenError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("insufficient {kind} pool: have {have}, need {need}")]
    InsufficientPool {
        kind: String,
        have: usize,
        need: usize,
    },
    #[error("duplicate item id {0}")]
    DuplicateId(String),
    #[error("base description {0} not found")]
    UnknownBase(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationStatus {
    Accepted,
    FilteredSimilar,
    FilteredGrammar,
    ParseFailure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub id: String,
    pub status: GenerationStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub item: Option<QAItem>,
    pub raw: String,
}

/// Fields pulled from a generator completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedCompletion {
    Ok { question: String, answer: String },
    Similar,
    Ungrammatical,
}

fn tag_line<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    raw.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '-', ' ']);
        let (head, rest) = line.split_once(':')?;
        let head = head.trim().trim_matches('*');
        head.eq_ignore_ascii_case(tag)
            .then(|| rest.trim().trim_matches('*').trim())
    })
}

/// Line-tag parse. `None` means the completion lacks the required fields.
pub fn parse_completion(raw: &str, lexicon: &RefusalLexicon) -> Option<ParsedCompletion> {
    let verdict = tag_line(raw, "VERDICT")?.to_lowercase();
    let verdict = verdict.trim_end_matches('.');
    match verdict {
        "similar" => return Some(ParsedCompletion::Similar),
        "ungrammatical" => return Some(ParsedCompletion::Ungrammatical),
        "ok" => {}
        _ => return None,
    }
    let question = tag_line(raw, "QUESTION").filter(|q| !q.is_empty())?;
    let answer = tag_line(raw, "ANSWER").filter(|a| !a.is_empty())?;
    if !lexicon.detect(answer) {
        return None;
    }
    Some(ParsedCompletion::Ok {
        question: question.to_string(),
        answer: answer.to_string(),
    })
}

pub struct Generator<'a> {
    pub gateway: &'a Gateway,
    pub endpoint: &'a str,
    pub templates: &'a Templates,
    pub lexicon: &'a RefusalLexicon,
    pub seed: Option<u64>,
}

impl Generator<'_> {
    pub fn request(&self, ad: &AlteredDescription) -> ChatRequest {
        let template = TemplateName::for_generation(ad.alteration.kind);
        let prompt = self.templates.render(
            template,
            &[
                ("altered_description", &ad.altered.render()),
                ("change", &ad.alteration.describe()),
            ],
        );
        ChatRequest::new(self.endpoint, vec![Message::user(prompt)])
            .with_temperature(GENERATION_TEMPERATURE)
            .with_max_tokens(256)
            .with_seed(self.seed)
    }

    pub fn generate(
        &self,
        ad: &AlteredDescription,
        video: &VideoRef,
        relation_subtype: Option<RelationSubtype>,
    ) -> Result<GenerationOutcome, QagenError> {
        let resp = self.gateway.chat(&self.request(ad))?;
        let id = ad.derived_id();
        let kind = ad.alteration.kind.unanswerability_kind();
        let (status, item) = match parse_completion(&resp.text, self.lexicon) {
            None => (GenerationStatus::ParseFailure, None),
            Some(ParsedCompletion::Similar) => (GenerationStatus::FilteredSimilar, None),
            Some(ParsedCompletion::Ungrammatical) => (GenerationStatus::FilteredGrammar, None),
            Some(ParsedCompletion::Ok { question, answer }) => (
                GenerationStatus::Accepted,
                Some(QAItem {
                    id: id.clone(),
                    video: video.clone(),
                    question,
                    gt_answer: answer,
                    k: Answerability::Unanswerable,
                    unanswerability_kind: Some(kind),
                    relation_subtype: relation_subtype
                        .filter(|_| kind == UnanswerabilityKind::Relation),
                    provenance: Some(ad.clone()),
                }),
            ),
        };
        Ok(GenerationOutcome {
            id,
            status,
            item,
            raw: resp.text,
        })
    }

    /// Generate for every altered description. Each must reference a base
    /// record by `base_id`. Output is sorted by item id.
    pub fn generate_all(
        &self,
        altered: &[AlteredDescription],
        bases: &[DescriptionRecord],
    ) -> Result<Vec<GenerationOutcome>, QagenError> {
        let by_id: HashMap<&str, &DescriptionRecord> =
            bases.iter().map(|b| (b.id.as_str(), b)).collect();
        let mut outcomes = altered
            .par_iter()
            .map(|ad| {
                let base = by_id
                    .get(ad.base_id.as_str())
                    .ok_or_else(|| QagenError::UnknownBase(ad.base_id.clone()))?;
                self.generate(ad, &base.video, base.relation_subtype)
            })
            .collect::<Result<Vec<_>, _>>()?;
        outcomes.sort_by(|a, b| a.id.cmp(&b.id));
        Ok(outcomes)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub accepted: usize,
    pub filtered_similar: usize,
    pub filtered_grammar: usize,
    pub parse_failure: usize,
}

pub fn summarize(outcomes: &[GenerationOutcome]) -> GenerationSummary {
    let mut s = GenerationSummary::default();
    for o in outcomes {
        match o.status {
            GenerationStatus::Accepted => s.accepted += 1,
            GenerationStatus::FilteredSimilar => s.filtered_similar += 1,
            GenerationStatus::FilteredGrammar => s.filtered_grammar += 1,
            GenerationStatus::ParseFailure => s.parse_failure += 1,
        }
    }
    s
}

fn sample(
    mut pool: Vec<QAItem>,
    need: usize,
    seed: u64,
    stream: &str,
    kind: &str,
) -> Result<Vec<QAItem>, QagenError> {
    if pool.len() < need {
        return Err(QagenError::InsufficientPool {
            kind: kind.to_string(),
            have: pool.len(),
            need,
        });
    }
    pool.sort_by(|a, b| a.id.cmp(&b.id));
    pool.shuffle(&mut item_rng(seed, stream));
    pool.truncate(need);
    Ok(pool)
}

/// `per_category` unanswerable items of each kind plus `3 * per_category`
/// answerable items, in a seed-determined order.
pub fn build_balanced_dataset(
    unanswerable_pool: &[QAItem],
    answerable_pool: &[QAItem],
    per_category: usize,
    seed: u64,
) -> Result<Vec<QAItem>, QagenError> {
    let mut out = Vec::with_capacity(per_category * 6);
    for kind in UnanswerabilityKind::ALL {
        let pool: Vec<QAItem> = unanswerable_pool
            .iter()
            .filter(|i| i.k == Answerability::Unanswerable && i.unanswerability_kind == Some(kind))
            .cloned()
            .collect();
        out.extend(sample(
            pool,
            per_category,
            seed,
            &format!("build/{kind}"),
            kind.as_str(),
        )?);
    }
    let answerable: Vec<QAItem> = answerable_pool
        .iter()
        .filter(|i| i.k == Answerability::Answerable)
        .cloned()
        .collect();
    out.extend(sample(
        answerable,
        3 * per_category,
        seed,
        "build/answerable",
        "answerable",
    )?);

    let mut seen = BTreeSet::new();
    for item in &out {
        if !seen.insert(item.id.as_str()) {
            return Err(QagenError::DuplicateId(item.id.clone()));
        }
    }
    out.sort_by(|a, b| a.id.cmp(&b.id));
    out.shuffle(&mut item_rng(seed, "build/order"));
    Ok(out)
}
