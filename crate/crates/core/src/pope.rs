//! Existence-probe baseline: split a question into yes/no existence checks,
//! ask the model each one, and only ask the original question when every
//! check comes back "yes".

use crate::corpus::{Answerability, QAItem};
use crate::gateway::{ChatRequest, Gateway, GatewayError, Message, JUDGE_TEMPERATURE};
use crate::harness::RunRecord;
use crate::judge::{contains_normalized, Judge, JudgeError, JudgedResponse, ResponseType};
use crate::prompts::{TemplateName, Templates};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PopeError {
    #[error("no yes/no questions in decomposition: {0:?}")]
    ParseFailure(String),
    #[error("all probes answered yes but the original question outcome is missing")]
    MissingOriginalOutcome,
    #[error("probe {0} has no usable yes/no answer")]
    UnparsedProbe(usize),
    #[error("item {0} has an empty question")]
    EmptyQuestion(String),
    #[error("cost report needs at least one outcome and a positive baseline")]
    EmptyCost,
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Judge(#[from] JudgeError),
}

impl PopeError {
    pub fn is_external(&self) -> bool {
        match self {
            PopeError::Gateway(e) | PopeError::Judge(JudgeError::Gateway(e)) => e.is_external(),
            _ => false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum YesNo {
    Yes,
    No,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeAnswer {
    Yes,
    No,
    Unparsed,
}

impl ProbeAnswer {
    pub fn as_yes_no(self) -> Option<YesNo> {
        match self {
            ProbeAnswer::Yes => Some(YesNo::Yes),
            ProbeAnswer::No => Some(YesNo::No),
            ProbeAnswer::Unparsed => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExistenceProbe {
    pub sub_question: String,
    pub expected: YesNo,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_answer: Option<ProbeAnswer>,
}

impl ExistenceProbe {
    pub fn new(q: impl Into<String>, expected: YesNo) -> Self {
        ExistenceProbe {
            sub_question: q.into(),
            expected,
            model_answer: None,
        }
    }

    pub fn answered(mut self, a: ProbeAnswer) -> Self {
        self.model_answer = Some(a);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopeOutcome {
    pub item_id: String,
    pub probes: Vec<ExistenceProbe>,
    pub final_rtype: ResponseType,
    pub model_calls: u64,
    pub judge_calls: u64,
    /// Judged reply to the original question, when it was asked.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub original: Option<JudgedResponse>,
}

const AUXILIARIES: [&str; 14] = [
    "is", "are", "was", "were", "does", "do", "did", "can", "could", "has", "have", "had", "will",
    "would",
];

/// Strip list numbering and keep lines that read as closed yes/no questions.
pub fn parse_probes(raw: &str) -> Vec<String> {
    raw.lines()
        .filter_map(|line| {
            let l = line.trim();
            let l = l.trim_start_matches(|c: char| c.is_ascii_digit());
            let l = l.trim_start_matches(['.', ')', '-', '*', ':']).trim();
            let first = l.split_whitespace().next()?.to_lowercase();
            (l.ends_with('?') && AUXILIARIES.contains(&first.as_str())).then(|| l.to_string())
        })
        .collect()
}

/// Leading-token yes/no. `None` means the reply is ambiguous.
pub fn parse_yes_no(reply: &str) -> Option<YesNo> {
    let first = reply
        .split(|c: char| !c.is_alphanumeric())
        .find(|w| !w.is_empty())?
        .to_lowercase();
    match first.as_str() {
        "yes" => Some(YesNo::Yes),
        "no" => Some(YesNo::No),
        _ => None,
    }
}

/// Expected answer from provenance: the probe mentioning the swapped-in
/// element expects "no", every other probe "yes". Answerable items expect
/// "yes" throughout. `None` when an unanswerable item has no provenance.
pub fn expected_from_provenance(item: &QAItem, probe: &str) -> Option<YesNo> {
    match item.k {
        Answerability::Answerable => Some(YesNo::Yes),
        Answerability::Unanswerable => {
            let p = item.provenance.as_ref()?;
            Some(if contains_normalized(probe, &p.alteration.replacement) {
                YesNo::No
            } else {
                YesNo::Yes
            })
        }
    }
}

/// Outcome from answered probes. `original` is consulted only when every
/// probe was answered "yes"; it is collapsed to Correct or Wrong.
pub fn classify_pope(
    probes: &[ExistenceProbe],
    original: Option<ResponseType>,
) -> Result<ResponseType, PopeError> {
    let mut answers = Vec::with_capacity(probes.len());
    for (i, p) in probes.iter().enumerate() {
        let a = p
            .model_answer
            .and_then(ProbeAnswer::as_yes_no)
            .ok_or(PopeError::UnparsedProbe(i))?;
        answers.push((a, p.expected));
    }
    if answers.iter().any(|(a, _)| *a == YesNo::No) {
        return Ok(if answers.iter().all(|(a, e)| a == e) {
            ResponseType::UnanswerableC
        } else {
            ResponseType::UnanswerableW
        });
    }
    match original.ok_or(PopeError::MissingOriginalOutcome)? {
        ResponseType::Correct => Ok(ResponseType::Correct),
        _ => Ok(ResponseType::Wrong),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExpectedSource {
    /// From item provenance; falls back to the verifier when absent.
    Provenance,
    /// Ask the verifier endpoint for every probe.
    Verifier,
}

pub struct PopeConfig<'a> {
    pub gateway: &'a Gateway,
    pub model: &'a str,
    pub decomposer: &'a str,
    pub verifier: &'a str,
    pub judge: Judge<'a>,
    pub templates: &'a Templates,
    pub expected: ExpectedSource,
    pub seed: Option<u64>,
}

impl PopeConfig<'_> {
    fn ask_judge(
        &self,
        endpoint: &str,
        prompt: String,
        max_tokens: u32,
    ) -> Result<String, GatewayError> {
        let req = ChatRequest::new(endpoint, vec![Message::user(prompt)])
            .with_temperature(JUDGE_TEMPERATURE)
            .with_max_tokens(max_tokens);
        Ok(self.gateway.chat(&req)?.text)
    }

    fn ask_model(&self, item: &QAItem, question: &str) -> Result<String, GatewayError> {
        let req = ChatRequest::new(
            self.model,
            vec![Message::user_with_frames(&item.video.frame_uris, question)],
        )
        .with_temperature(0.0)
        .with_max_tokens(256)
        .with_seed(self.seed);
        Ok(self.gateway.chat(&req)?.text)
    }

    /// One decomposer call.
    pub fn decompose(&self, question: &str) -> Result<Vec<String>, PopeError> {
        let raw = self.ask_judge(
            self.decomposer,
            self.templates
                .render(TemplateName::PopeDecompose, &[("question", question)]),
            256,
        )?;
        let probes = parse_probes(&raw);
        if probes.is_empty() {
            return Err(PopeError::ParseFailure(raw));
        }
        Ok(probes)
    }

    fn verify(&self, item: &QAItem, probe: &str) -> Result<YesNo, PopeError> {
        let raw = self.ask_judge(
            self.verifier,
            self.templates.render(
                TemplateName::PopeVerify,
                &[
                    ("question", &item.question),
                    ("gt_answer", &item.gt_answer),
                    ("probe", probe),
                ],
            ),
            8,
        )?;
        parse_yes_no(&raw).ok_or(PopeError::ParseFailure(raw))
    }

    pub fn run_item(&self, item: &QAItem) -> Result<PopeOutcome, PopeError> {
        if item.question.trim().is_empty() {
            return Err(PopeError::EmptyQuestion(item.id.clone()));
        }
        let mut judge_calls = 1;
        let mut model_calls = 0;
        let mut probes = Vec::new();
        for q in self.decompose(&item.question)? {
            let from_provenance = match self.expected {
                ExpectedSource::Provenance => expected_from_provenance(item, &q),
                ExpectedSource::Verifier => None,
            };
            let expected = match from_provenance {
                Some(e) => e,
                None => {
                    judge_calls += 1;
                    self.verify(item, &q)?
                }
            };
            probes.push(ExistenceProbe::new(q, expected));
        }
        for p in &mut probes {
            let reply = self.ask_model(item, &p.sub_question)?;
            model_calls += 1;
            let answer = match parse_yes_no(&reply) {
                Some(a) => a.into(),
                None => {
                    judge_calls += 1;
                    let verdict = self.ask_judge(
                        self.verifier,
                        self.templates.render(
                            TemplateName::PopeAnswer,
                            &[("probe", &p.sub_question), ("response", &reply)],
                        ),
                        8,
                    )?;
                    parse_yes_no(&verdict).map_or(ProbeAnswer::Unparsed, ProbeAnswer::from)
                }
            };
            p.model_answer = Some(answer);
        }
        let all_yes = probes
            .iter()
            .all(|p| p.model_answer == Some(ProbeAnswer::Yes));
        let original = if all_yes {
            let reply = self.ask_model(item, &item.question)?;
            model_calls += 1;
            judge_calls += u64::from(self.judge.calls_per_judgement());
            Some(self.judge.judge(item, &reply)?)
        } else {
            None
        };
        let final_rtype = classify_pope(&probes, original.as_ref().map(|j| j.rtype))?;
        Ok(PopeOutcome {
            item_id: item.id.clone(),
            probes,
            final_rtype,
            model_calls,
            judge_calls,
            original,
        })
    }

    /// Items in parallel, output sorted by item id; the first failure aborts.
    pub fn run(&self, dataset: &[QAItem]) -> Result<Vec<PopeOutcome>, PopeError> {
        let mut out = dataset
            .par_iter()
            .map(|i| self.run_item(i))
            .collect::<Result<Vec<_>, _>>()?;
        out.sort_by(|a, b| a.item_id.cmp(&b.item_id));
        Ok(out)
    }
}

impl From<YesNo> for ProbeAnswer {
    fn from(y: YesNo) -> Self {
        match y {
            YesNo::Yes => ProbeAnswer::Yes,
            YesNo::No => ProbeAnswer::No,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub items: u64,
    pub probes: u64,
    pub model_calls: u64,
    pub judge_calls: u64,
    pub direct_baseline_calls: u64,
    pub dataset_multiplier: f64,
    pub eval_cost_multiplier: f64,
}

pub fn cost_report(
    outcomes: &[PopeOutcome],
    direct_baseline_calls: u64,
) -> Result<CostReport, PopeError> {
    if outcomes.is_empty() || direct_baseline_calls == 0 {
        return Err(PopeError::EmptyCost);
    }
    let items = outcomes.len() as u64;
    let probes: u64 = outcomes.iter().map(|o| o.probes.len() as u64).sum();
    let model_calls: u64 = outcomes.iter().map(|o| o.model_calls).sum();
    let judge_calls: u64 = outcomes.iter().map(|o| o.judge_calls).sum();
    Ok(CostReport {
        items,
        probes,
        model_calls,
        judge_calls,
        direct_baseline_calls,
        dataset_multiplier: probes as f64 / items as f64,
        eval_cost_multiplier: (model_calls + judge_calls) as f64 / direct_baseline_calls as f64,
    })
}

/// Response text recorded for a probe-derived refusal.
pub fn refusal_text(outcome: &PopeOutcome) -> String {
    let denied: Vec<&str> = outcome
        .probes
        .iter()
        .filter(|p| p.model_answer == Some(ProbeAnswer::No))
        .map(|p| p.sub_question.as_str())
        .collect();
    format!(
        "The question is unanswerable. Existence checks answered no: {}",
        denied.join(" ")
    )
}

/// Convert outcomes to a harness run file so the usual metrics apply.
pub fn to_run_record(
    outcomes: &[PopeOutcome],
    run_id: &str,
    model: &str,
    judge: &Judge,
) -> RunRecord {
    let mut run = RunRecord::new(run_id, model, judge.mode);
    for o in outcomes {
        let (raw_text, llm_score) = match &o.original {
            Some(j) if !o.final_rtype.is_refusal() => (j.raw_text.clone(), j.llm_score),
            _ => (refusal_text(o), o.final_rtype.rubric_score()),
        };
        run.insert(JudgedResponse {
            item_id: o.item_id.clone(),
            raw_text,
            refusal_detected: o.final_rtype.is_refusal(),
            rtype: o.final_rtype,
            llm_score,
            judge_mode: judge.mode,
        });
    }
    run
}

#[cfg(test)]
mod tests {
    use super::*;
    use ProbeAnswer as A;
    use YesNo::*;

    fn probe(answer: ProbeAnswer, expected: YesNo) -> ExistenceProbe {
        ExistenceProbe::new("Is there a cat in the video?", expected).answered(answer)
    }

    #[test]
    fn rule_table() {
        assert_eq!(
            classify_pope(&[probe(A::No, No), probe(A::Yes, Yes)], None),
            Ok(ResponseType::UnanswerableC)
        );
        assert_eq!(
            classify_pope(&[probe(A::No, Yes)], None),
            Ok(ResponseType::UnanswerableW)
        );
        assert_eq!(
            classify_pope(
                &[probe(A::Yes, Yes), probe(A::Yes, Yes)],
                Some(ResponseType::Correct)
            ),
            Ok(ResponseType::Correct)
        );
        assert_eq!(
            classify_pope(&[probe(A::Yes, No)], Some(ResponseType::Wrong)),
            Ok(ResponseType::Wrong)
        );
        assert_eq!(
            classify_pope(&[probe(A::Yes, Yes)], None),
            Err(PopeError::MissingOriginalOutcome)
        );
        assert_eq!(
            classify_pope(&[probe(A::Unparsed, Yes)], None),
            Err(PopeError::UnparsedProbe(0))
        );
        assert_eq!(
            classify_pope(&[probe(A::Yes, Yes)], Some(ResponseType::UnanswerableC)),
            Ok(ResponseType::Wrong)
        );
    }

    #[test]
    fn rule_table_exhaustive() {
        let answers = [A::Yes, A::No];
        for a1 in answers {
            for a2 in answers {
                for e1 in [Yes, No] {
                    for e2 in [Yes, No] {
                        for orig in [None, Some(ResponseType::Correct), Some(ResponseType::Wrong)] {
                            let ps = [probe(a1, e1), probe(a2, e2)];
                            let all_yes = a1 == A::Yes && a2 == A::Yes;
                            match classify_pope(&ps, orig) {
                                Ok(r) => assert_eq!(r.is_refusal(), !all_yes),
                                Err(e) => assert!(all_yes && orig.is_none(), "{e}"),
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn probe_parsing() {
        let raw = "1. Is there a cat in the video?\n2) Is the cat lying on a sofa?\nHere you go\n- Does the cat have a collar?\n3. What breed?";
        assert_eq!(
            parse_probes(raw),
            vec![
                "Is there a cat in the video?",
                "Is the cat lying on a sofa?",
                "Does the cat have a collar?"
            ]
        );
        assert!(parse_probes("no questions here").is_empty());
        assert_eq!(parse_yes_no("Yes, there is."), Some(Yes));
        assert_eq!(parse_yes_no("  no."), Some(No));
        assert_eq!(parse_yes_no("I think so"), None);
        assert_eq!(parse_yes_no("Nope"), None);
    }

    fn outcome(probes: usize, model_calls: u64, judge_calls: u64) -> PopeOutcome {
        PopeOutcome {
            item_id: "x".into(),
            probes: vec![probe(A::Yes, Yes); probes],
            final_rtype: ResponseType::Correct,
            model_calls,
            judge_calls,
            original: None,
        }
    }

    #[test]
    fn cost_arithmetic() {
        let outs: Vec<PopeOutcome> = (0..100).map(|_| outcome(3, 4, 0)).collect();
        let c = cost_report(&outs, 200).unwrap();
        assert_eq!((c.dataset_multiplier, c.model_calls), (3.0, 400));
        assert_eq!(cost_report(&[], 1), Err(PopeError::EmptyCost));
    }
}
