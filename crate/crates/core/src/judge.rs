//! Response typing: correct, wrong, unanswerable_w, unanswerable_c.
//!
//! Two modes. `llm` asks a judge endpoint for a `TYPE:`/`SCORE:` verdict;
//! `rules` is an offline fallback built on refusal-lexicon matching and
//! normalized substring checks.

use crate::corpus::{Answerability, QAItem};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, JUDGE_TEMPERATURE};
use crate::prompts::{TemplateName, Templates};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const DEFAULT_REFUSAL_PHRASES: [&str; 5] = [
    "unanswerable",
    "cannot be answered",
    "not answerable",
    "cannot answer this question",
    "is not possible to answer",
];

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum JudgeError {
    #[error("could not parse judge verdict: {0:?}")]
    JudgeParseFailure(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("llm judging needs a gateway and judge endpoint")]
    MissingBackend,
    #[error("item {0} has an empty question or response")]
    EmptyInput(String),
}

fn collapse_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Phrases whose presence marks a response as a refusal.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefusalLexicon {
    phrases: Vec<String>,
}

impl Default for RefusalLexicon {
    fn default() -> Self {
        RefusalLexicon::new(DEFAULT_REFUSAL_PHRASES.iter().map(|s| s.to_string()))
            .expect("default lexicon non-empty")
    }
}

impl RefusalLexicon {
    /// Returns `None` for an empty phrase list.
    pub fn new(phrases: impl IntoIterator<Item = String>) -> Option<Self> {
        let phrases: Vec<String> = phrases
            .into_iter()
            .map(|p| collapse_ws(&p.to_lowercase()))
            .filter(|p| !p.is_empty())
            .collect();
        (!phrases.is_empty()).then_some(RefusalLexicon { phrases })
    }

    /// One phrase per line; blank lines and `#` comments skipped.
    pub fn load(path: &Path) -> std::io::Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let phrases = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(String::from);
        RefusalLexicon::new(phrases).ok_or_else(|| {
            std::io::Error::new(std::io::ErrorKind::InvalidData, "refusal lexicon is empty")
        })
    }

    pub fn phrases(&self) -> &[String] {
        &self.phrases
    }

    pub fn detect(&self, text: &str) -> bool {
        detect_refusal(text, self)
    }
}

/// Case-insensitive, whitespace-normalized phrase containment.
pub fn detect_refusal(text: &str, lexicon: &RefusalLexicon) -> bool {
    let norm = collapse_ws(&text.to_lowercase());
    lexicon.phrases.iter().any(|p| norm.contains(p.as_str()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResponseType {
    Correct,
    Wrong,
    #[serde(rename = "unanswerable_w")]
    UnanswerableW,
    #[serde(rename = "unanswerable_c")]
    UnanswerableC,
}

/// Collapsed view used for answerable items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AnswerableView {
    Correct,
    Wrong,
    Unanswerable,
}

/// Collapsed view used for unanswerable items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum UnanswerableView {
    Answered,
    UnanswerableW,
    UnanswerableC,
}

impl ResponseType {
    pub const ALL: [ResponseType; 4] = [
        ResponseType::Correct,
        ResponseType::Wrong,
        ResponseType::UnanswerableW,
        ResponseType::UnanswerableC,
    ];

    /// t(y): 1 for correct, -1 for a refusal with the right reason, else 0.
    pub fn t_value(self) -> i8 {
        match self {
            ResponseType::Correct => 1,
            ResponseType::Wrong | ResponseType::UnanswerableW => 0,
            ResponseType::UnanswerableC => -1,
        }
    }

    pub fn is_refusal(self) -> bool {
        matches!(
            self,
            ResponseType::UnanswerableW | ResponseType::UnanswerableC
        )
    }

    pub fn answerable_view(self) -> AnswerableView {
        match self {
            ResponseType::Correct => AnswerableView::Correct,
            ResponseType::Wrong => AnswerableView::Wrong,
            ResponseType::UnanswerableW | ResponseType::UnanswerableC => {
                AnswerableView::Unanswerable
            }
        }
    }

    pub fn unanswerable_view(self) -> UnanswerableView {
        match self {
            ResponseType::Correct | ResponseType::Wrong => UnanswerableView::Answered,
            ResponseType::UnanswerableW => UnanswerableView::UnanswerableW,
            ResponseType::UnanswerableC => UnanswerableView::UnanswerableC,
        }
    }

    /// Score used in rules mode.
    pub fn rubric_score(self) -> u8 {
        match self {
            ResponseType::Correct | ResponseType::UnanswerableC => 4,
            ResponseType::UnanswerableW => 2,
            ResponseType::Wrong => 0,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ResponseType::Correct => "correct",
            ResponseType::Wrong => "wrong",
            ResponseType::UnanswerableW => "unanswerable_w",
            ResponseType::UnanswerableC => "unanswerable_c",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JudgeMode {
    Llm,
    Rules,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JudgedResponse {
    pub item_id: String,
    pub raw_text: String,
    pub refusal_detected: bool,
    pub rtype: ResponseType,
    pub llm_score: u8,
    pub judge_mode: JudgeMode,
}

impl JudgedResponse {
    pub fn is_consistent(&self) -> bool {
        self.rtype.is_refusal() == self.refusal_detected && self.llm_score <= 5
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerabilityPrediction {
    Answerable,
    Unanswerable,
}

pub fn answerability_prediction(j: &JudgedResponse) -> AnswerabilityPrediction {
    if j.refusal_detected {
        AnswerabilityPrediction::Unanswerable
    } else {
        AnswerabilityPrediction::Answerable
    }
}

/// Lowercase, punctuation to spaces, whitespace collapsed.
pub fn normalize_answer(s: &str) -> String {
    let mapped: String = s
        .chars()
        .map(|c| {
            if c.is_alphanumeric() {
                c.to_ascii_lowercase()
            } else {
                ' '
            }
        })
        .flat_map(char::to_lowercase)
        .collect();
    collapse_ws(&mapped)
}

/// Word-aligned containment of `needle` in `haystack` after normalization.
pub fn contains_normalized(haystack: &str, needle: &str) -> bool {
    let needle = normalize_answer(needle);
    if needle.is_empty() {
        return false;
    }
    format!(" {} ", normalize_answer(haystack)).contains(&format!(" {needle} "))
}

/// Keyphrases a refusal must mention to count as giving the right reason.
pub fn reason_keyphrases(item: &QAItem) -> Vec<String> {
    item.provenance
        .as_ref()
        .map(|p| vec![p.alteration.replacement.clone()])
        .unwrap_or_default()
}

/// Offline classification.
pub fn judge_rules(item: &QAItem, text: &str, lexicon: &RefusalLexicon) -> JudgedResponse {
    let refusal = lexicon.detect(text);
    let rtype = match (refusal, item.k) {
        (true, Answerability::Unanswerable) => {
            let cites_reason = contains_normalized(text, &item.gt_answer)
                || reason_keyphrases(item)
                    .iter()
                    .any(|k| contains_normalized(text, k));
            if cites_reason {
                ResponseType::UnanswerableC
            } else {
                ResponseType::UnanswerableW
            }
        }
        (true, Answerability::Answerable) => ResponseType::UnanswerableW,
        (false, _) => {
            if contains_normalized(text, &item.gt_answer) {
                ResponseType::Correct
            } else {
                ResponseType::Wrong
            }
        }
    };
    JudgedResponse {
        item_id: item.id.clone(),
        raw_text: text.to_string(),
        refusal_detected: refusal,
        rtype,
        llm_score: rtype.rubric_score(),
        judge_mode: JudgeMode::Rules,
    }
}

fn tagged_value<'a>(raw: &'a str, tag: &str) -> Option<&'a str> {
    raw.lines().find_map(|line| {
        let line = line.trim().trim_start_matches(['*', '#', '-', ' ']);
        let (head, rest) = line.split_once(':')?;
        head.trim()
            .trim_matches('*')
            .eq_ignore_ascii_case(tag)
            .then(|| rest.trim().trim_matches('*').trim())
    })
}

/// Parse a `TYPE:` / `SCORE:` verdict. Answerable-item judges may answer a
/// bare `unanswerable`, which is recorded as `UnanswerableW`.
pub fn parse_verdict(raw: &str) -> Result<(ResponseType, u8), JudgeError> {
    let fail = || JudgeError::JudgeParseFailure(raw.to_string());
    let label = tagged_value(raw, "TYPE").ok_or_else(fail)?;
    let label: String = label
        .to_lowercase()
        .chars()
        .map(|c| if c == '-' || c == ' ' { '_' } else { c })
        .filter(|c| c.is_alphanumeric() || *c == '_')
        .collect();
    let rtype = match label.as_str() {
        "correct" => ResponseType::Correct,
        "wrong" | "incorrect" => ResponseType::Wrong,
        "unanswerable_c" => ResponseType::UnanswerableC,
        "unanswerable_w" | "unanswerable" => ResponseType::UnanswerableW,
        _ => return Err(fail()),
    };
    let score_text = tagged_value(raw, "SCORE").ok_or_else(fail)?;
    let digits: String = score_text
        .chars()
        .take_while(char::is_ascii_digit)
        .collect();
    let score: u8 = digits.parse().map_err(|_| fail())?;
    if score > 5 {
        return Err(fail());
    }
    Ok((rtype, score))
}

/// Reconcile a judge verdict with lexicon refusal detection: the lexicon owns
/// the refusal bit, the judge's verdict picks which side of it.
pub fn coerce(rtype: ResponseType, refusal_detected: bool) -> ResponseType {
    match (rtype.is_refusal(), refusal_detected) {
        (true, true) | (false, false) => rtype,
        (false, true) => match rtype {
            ResponseType::Correct => ResponseType::UnanswerableC,
            _ => ResponseType::UnanswerableW,
        },
        (true, false) => match rtype {
            ResponseType::UnanswerableC => ResponseType::Correct,
            _ => ResponseType::Wrong,
        },
    }
}

/// Judging context: mode plus whatever llm mode needs.
#[derive(Clone, Copy)]
pub struct Judge<'a> {
    pub mode: JudgeMode,
    pub lexicon: &'a RefusalLexicon,
    pub templates: &'a Templates,
    pub gateway: Option<&'a Gateway>,
    pub endpoint: &'a str,
}

impl<'a> Judge<'a> {
    pub fn rules(lexicon: &'a RefusalLexicon, templates: &'a Templates) -> Self {
        Judge {
            mode: JudgeMode::Rules,
            lexicon,
            templates,
            gateway: None,
            endpoint: "",
        }
    }

    pub fn llm(
        lexicon: &'a RefusalLexicon,
        templates: &'a Templates,
        gateway: &'a Gateway,
        endpoint: &'a str,
    ) -> Self {
        Judge {
            mode: JudgeMode::Llm,
            lexicon,
            templates,
            gateway: Some(gateway),
            endpoint,
        }
    }

    /// Number of backend calls one [`Judge::judge`] makes.
    pub fn calls_per_judgement(&self) -> u32 {
        match self.mode {
            JudgeMode::Llm => 1,
            JudgeMode::Rules => 0,
        }
    }

    pub fn judge(&self, item: &QAItem, text: &str) -> Result<JudgedResponse, JudgeError> {
        if item.question.trim().is_empty() || text.trim().is_empty() {
            return Err(JudgeError::EmptyInput(item.id.clone()));
        }
        match self.mode {
            JudgeMode::Rules => Ok(judge_rules(item, text, self.lexicon)),
            JudgeMode::Llm => self.judge_llm(item, text),
        }
    }

    fn judge_llm(&self, item: &QAItem, text: &str) -> Result<JudgedResponse, JudgeError> {
        let gateway = self.gateway.ok_or(JudgeError::MissingBackend)?;
        if self.endpoint.is_empty() {
            return Err(JudgeError::MissingBackend);
        }
        let template = match item.k {
            Answerability::Answerable => TemplateName::JudgeAnswerable,
            Answerability::Unanswerable => TemplateName::JudgeUnanswerable,
        };
        let prompt = self.templates.render(
            template,
            &[
                ("question", &item.question),
                ("gt_answer", &item.gt_answer),
                ("response", text),
            ],
        );
        let req = ChatRequest::new(self.endpoint, vec![Message::user(prompt)])
            .with_temperature(JUDGE_TEMPERATURE)
            .with_max_tokens(64);
        let resp = gateway.chat(&req)?;
        let (rtype, score) = parse_verdict(&resp.text)?;
        let refusal = self.lexicon.detect(text);
        Ok(JudgedResponse {
            item_id: item.id.clone(),
            raw_text: text.to_string(),
            refusal_detected: refusal,
            rtype: coerce(rtype, refusal),
            llm_score: score,
            judge_mode: JudgeMode::Llm,
        })
    }
}
