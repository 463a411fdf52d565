//! SFT and DPO training files.

use crate::corpus::{Answerability, QAItem, VideoRef};
use crate::harness::{score, RunRecord};
use crate::judge::{judge_rules, RefusalLexicon};
use crate::rng::item_rng;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum ExportError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("no score-0 response for item {0}")]
    NoRejectedCandidate(String),
    #[error("pair for item {id} fails the preference check: {reason}")]
    InvalidPair { id: String, reason: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub video: VideoRef,
    pub question: String,
    pub target: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpoExample {
    pub video: VideoRef,
    pub question: String,
    pub chosen: String,
    pub rejected: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DpoMode {
    Run,
    Synthetic,
}

/// First line of every DPO file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DpoHeader {
    pub dpo_mode: DpoMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

pub enum RejectedSource<'a> {
    Run(&'a RunRecord),
    Synthetic { seed: u64 },
}

fn write_lines<T: Serialize>(
    path: &Path,
    header: Option<&DpoHeader>,
    rows: &[T],
) -> Result<usize, ExportError> {
    let io = |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    };
    let mut out = std::io::BufWriter::new(std::fs::File::create(path).map_err(io)?);
    if let Some(h) = header {
        serde_json::to_writer(&mut out, h).map_err(|e| io(e.into()))?;
        out.write_all(b"\n").map_err(io)?;
    }
    let n = crate::jsonl::write_to(&mut out, rows).map_err(io)?;
    out.flush().map_err(io)?;
    Ok(n)
}

pub fn sft_examples(dataset: &[QAItem]) -> Vec<SftExample> {
    dataset
        .iter()
        .map(|i| SftExample {
            video: i.video.clone(),
            question: i.question.clone(),
            target: i.gt_answer.clone(),
        })
        .collect()
}

pub fn export_sft(dataset: &[QAItem], out: &Path) -> Result<usize, ExportError> {
    write_lines(out, None, &sft_examples(dataset))
}

const DIRECT_ANSWERS: [&str; 3] = [
    "Yes, the {x} is clearly visible in the video, just as the question describes.",
    "The video shows the {x} right there; that is what the question is about.",
    "Looking at the frames, the {x} can be seen plainly.",
];

const REFUSALS: [&str; 3] = [
    "The question is unanswerable because the video does not show enough to tell.",
    "This cannot be answered from the video.",
    "The question is not answerable based on what the video contains.",
];

/// Seeded stand-in for a model failure on `item`.
pub fn synthetic_rejected(item: &QAItem, seed: u64) -> String {
    let mut rng = item_rng(seed, &format!("dpo/{}", item.id));
    match item.k {
        Answerability::Unanswerable => {
            let replacement = item
                .provenance
                .as_ref()
                .map(|p| p.alteration.replacement.as_str())
                .unwrap_or("thing asked about");
            DIRECT_ANSWERS[rng.random_range(0..DIRECT_ANSWERS.len())].replace("{x}", replacement)
        }
        Answerability::Answerable => REFUSALS[rng.random_range(0..REFUSALS.len())].to_string(),
    }
}

/// Chosen must score 1 and rejected 0 under rules-mode judging.
pub fn check_pair(
    item: &QAItem,
    pair: &DpoExample,
    lexicon: &RefusalLexicon,
) -> Result<(), ExportError> {
    let bad = |reason: String| ExportError::InvalidPair {
        id: item.id.clone(),
        reason,
    };
    let chosen = judge_rules(item, &pair.chosen, lexicon);
    if score(item, &chosen) != 1 {
        return Err(bad(format!("chosen judged {}", chosen.rtype.as_str())));
    }
    let rejected = judge_rules(item, &pair.rejected, lexicon);
    if score(item, &rejected) != 0 {
        return Err(bad(format!("rejected judged {}", rejected.rtype.as_str())));
    }
    Ok(())
}

pub fn dpo_pairs(
    dataset: &[QAItem],
    source: &RejectedSource,
    lexicon: &RefusalLexicon,
) -> Result<Vec<DpoExample>, ExportError> {
    dataset
        .iter()
        .map(|item| {
            let rejected = match source {
                RejectedSource::Synthetic { seed } => synthetic_rejected(item, *seed),
                RejectedSource::Run(run) => run
                    .responses
                    .get(&item.id)
                    .filter(|j| score(item, j) == 0)
                    .map(|j| j.raw_text.clone())
                    .ok_or_else(|| ExportError::NoRejectedCandidate(item.id.clone()))?,
            };
            let pair = DpoExample {
                video: item.video.clone(),
                question: item.question.clone(),
                chosen: item.gt_answer.clone(),
                rejected,
            };
            check_pair(item, &pair, lexicon)?;
            Ok(pair)
        })
        .collect()
}

pub fn export_dpo(
    dataset: &[QAItem],
    source: &RejectedSource,
    lexicon: &RefusalLexicon,
    out: &Path,
) -> Result<usize, ExportError> {
    let pairs = dpo_pairs(dataset, source, lexicon)?;
    let header = match source {
        RejectedSource::Run(r) => DpoHeader {
            dpo_mode: DpoMode::Run,
            run_id: Some(r.run_id.clone()),
        },
        RejectedSource::Synthetic { .. } => DpoHeader {
            dpo_mode: DpoMode::Synthetic,
            run_id: None,
        },
    };
    write_lines(out, Some(&header), &pairs)
}
