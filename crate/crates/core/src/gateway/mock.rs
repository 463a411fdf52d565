//! Deterministic playbook backend.
//!
//! A playbook is an ordered list of rules; the first rule whose regex matches
//! the rendered prompt wins. Completions may reference capture groups with
//! `$1` or `${name}` (write `$$` for a literal dollar sign). A rule with
//! `status` instead of `completion` simulates an HTTP failure.

use super::{ChatRequest, Completion, Endpoint, GatewayError, Transport, TransportError};
use regex::Regex;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleSpec {
    pub matcher: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<u16>,
    /// Restrict the rule to one endpoint id.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl RuleSpec {
    pub fn new(matcher: &str, completion: &str) -> Self {
        RuleSpec {
            matcher: matcher.into(),
            completion: Some(completion.into()),
            status: None,
            endpoint: None,
        }
    }

    pub fn for_endpoint(mut self, endpoint: &str) -> Self {
        self.endpoint = Some(endpoint.into());
        self
    }

    pub fn failing(matcher: &str, status: u16) -> Self {
        RuleSpec {
            matcher: matcher.into(),
            completion: None,
            status: Some(status),
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone)]
struct Rule {
    spec: RuleSpec,
    regex: Regex,
}

#[derive(Debug, Clone)]
pub struct Playbook {
    rules: Vec<Rule>,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum PlaybookFile {
    List(Vec<RuleSpec>),
    Wrapped { rules: Vec<RuleSpec> },
}

impl Playbook {
    pub fn new(specs: Vec<RuleSpec>) -> Result<Self, GatewayError> {
        let rules = specs
            .into_iter()
            .map(|spec| {
                if spec.completion.is_none() && spec.status.is_none() {
                    return Err(GatewayError::InvalidRequest(format!(
                        "playbook rule {:?} needs a completion or a status",
                        spec.matcher
                    )));
                }
                let regex = Regex::new(&spec.matcher).map_err(|e| {
                    GatewayError::InvalidRequest(format!("bad matcher {:?}: {e}", spec.matcher))
                })?;
                Ok(Rule { spec, regex })
            })
            .collect::<Result<_, _>>()?;
        Ok(Playbook { rules })
    }

    pub fn from_json(text: &str) -> Result<Self, GatewayError> {
        let file: PlaybookFile = serde_json::from_str(text)
            .map_err(|e| GatewayError::InvalidRequest(format!("playbook: {e}")))?;
        let specs = match file {
            PlaybookFile::List(s) | PlaybookFile::Wrapped { rules: s } => s,
        };
        Self::new(specs)
    }

    pub fn load(path: &Path) -> Result<Self, GatewayError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| GatewayError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn specs(&self) -> impl Iterator<Item = &RuleSpec> {
        self.rules.iter().map(|r| &r.spec)
    }
}

fn excerpt(prompt: &str) -> String {
    let flat: String = prompt.split_whitespace().collect::<Vec<_>>().join(" ");
    let mut end = flat.len().min(120);
    while !flat.is_char_boundary(end) {
        end -= 1;
    }
    flat[..end].to_string()
}

/// Evaluate the playbook against one request.
pub fn mock_chat(req: &ChatRequest, playbook: &Playbook) -> Result<Completion, TransportError> {
    let prompt = req.rendered_prompt();
    for rule in &playbook.rules {
        if rule
            .spec
            .endpoint
            .as_deref()
            .is_some_and(|e| e != req.endpoint_id)
        {
            continue;
        }
        let Some(caps) = rule.regex.captures(&prompt) else {
            continue;
        };
        if let Some(code) = rule.spec.status {
            return Err(TransportError::Status {
                code,
                body: format!("scripted failure for {:?}", rule.spec.matcher),
            });
        }
        let mut text = String::new();
        caps.expand(
            rule.spec.completion.as_deref().unwrap_or_default(),
            &mut text,
        );
        return Ok(Completion {
            text,
            prompt_tokens: 0,
            completion_tokens: 0,
        });
    }
    Err(TransportError::MockMiss(excerpt(&prompt)))
}

pub struct MockTransport {
    playbook: Playbook,
}

impl MockTransport {
    pub fn new(playbook: Playbook) -> Self {
        MockTransport { playbook }
    }
}

impl Transport for MockTransport {
    fn send(&self, _endpoint: &Endpoint, req: &ChatRequest) -> Result<Completion, TransportError> {
        mock_chat(req, &self.playbook)
    }

    fn is_mock(&self) -> bool {
        true
    }
}
