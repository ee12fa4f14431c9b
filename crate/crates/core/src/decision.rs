//! Pluggable deciders that turn (question, rationale) into one of three
//! labels: ACCEPT, RECOMMEND, REJECT.
//!
//! The rule-based decider asks the model only for a constraint checklist
//! and recomputes the label locally with [`rule`]; whatever label the model
//! itself announces is ignored. That keeps the decider a literal-intent
//! engine: ACCEPT means every constraint was met, not "felt right".

use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::modelgate::{GatewayError, ModelGateway};
use crate::prompt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum DecisionLabel {
    Accept,
    Recommend,
    Reject,
}

impl DecisionLabel {
    pub const ALL: [DecisionLabel; 3] = [
        DecisionLabel::Accept,
        DecisionLabel::Recommend,
        DecisionLabel::Reject,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            DecisionLabel::Accept => "ACCEPT",
            DecisionLabel::Recommend => "RECOMMEND",
            DecisionLabel::Reject => "REJECT",
        }
    }

    pub fn parse(token: &str) -> Option<DecisionLabel> {
        match token.trim().trim_end_matches(['.', '!']).to_uppercase().as_str() {
            "ACCEPT" => Some(DecisionLabel::Accept),
            "RECOMMEND" => Some(DecisionLabel::Recommend),
            "REJECT" => Some(DecisionLabel::Reject),
            _ => None,
        }
    }
}

impl fmt::Display for DecisionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstraintStatus {
    Met,
    NotMet,
    Unverifiable,
}

impl ConstraintStatus {
    fn parse(token: &str) -> Option<ConstraintStatus> {
        match token {
            "met" => Some(ConstraintStatus::Met),
            "not_met" => Some(ConstraintStatus::NotMet),
            "unverifiable" => Some(ConstraintStatus::Unverifiable),
            _ => None,
        }
    }
}

/// Atomic constraints extracted from a question, each judged against the
/// rationale. Construction enforces the pairing, so the two lists can
/// never drift apart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConstraintChecklist {
    constraints: Vec<String>,
    satisfied: Vec<ConstraintStatus>,
}

impl ConstraintChecklist {
    pub fn new(items: Vec<(ConstraintStatus, String)>) -> Result<ConstraintChecklist, DecisionError> {
        if items.is_empty() {
            return Err(DecisionError::MalformedChecklist(
                "checklist has no constraints".to_string(),
            ));
        }
        let (satisfied, constraints) = items.into_iter().unzip();
        Ok(ConstraintChecklist {
            constraints,
            satisfied,
        })
    }

    pub fn constraints(&self) -> &[String] {
        &self.constraints
    }

    pub fn satisfied(&self) -> &[ConstraintStatus] {
        &self.satisfied
    }

    pub fn len(&self) -> usize {
        self.constraints.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor rejects empty checklists
    }
}

#[derive(Debug, Error)]
pub enum DecisionError {
    #[error("rationale text is empty")]
    EmptyRationale,
    #[error("malformed checklist: {0}")]
    MalformedChecklist(String),
    #[error("checklist could not be parsed after repair: {0}")]
    UnparseableChecklist(String),
    #[error("decision label could not be parsed after repair: got `{0}`")]
    UnparseableLabel(String),
    #[error("remote classifier transport: {0}")]
    Transport(String),
    #[error("remote classifier returned invalid label `{0}`")]
    InvalidLabel(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// The literal counting rule: ACCEPT when all constraints are met,
/// RECOMMEND when some but not all are, REJECT when none are. An
/// unverifiable constraint counts as not met.
pub fn rule(checklist: &ConstraintChecklist) -> DecisionLabel {
    let met = checklist
        .satisfied()
        .iter()
        .filter(|s| **s == ConstraintStatus::Met)
        .count();
    if met == checklist.len() {
        DecisionLabel::Accept
    } else if met > 0 {
        DecisionLabel::Recommend
    } else {
        DecisionLabel::Reject
    }
}

fn parse_checklist_block(text: &str) -> Result<ConstraintChecklist, String> {
    let (_, block) = prompt::extract_fenced(text, "checklist")
        .ok_or_else(|| "no fenced checklist block found".to_string())?;
    let mut items = Vec::new();
    for line in block.lines() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let line = line.strip_prefix('-').unwrap_or(line).trim_start();
        let rest = line
            .strip_prefix('[')
            .ok_or_else(|| format!("checklist line missing [status]: `{line}`"))?;
        let (status_token, text) = rest
            .split_once(']')
            .ok_or_else(|| format!("checklist line missing closing bracket: `{line}`"))?;
        let status = ConstraintStatus::parse(status_token.trim())
            .ok_or_else(|| format!("unknown constraint status `{}`", status_token.trim()))?;
        items.push((status, text.trim().to_string()));
    }
    if items.is_empty() {
        return Err("checklist block has no constraint lines".to_string());
    }
    ConstraintChecklist::new(items).map_err(|e| e.to_string())
}

/// Checklist-driven decision. One completion enumerates and judges the
/// question's constraints; the label comes from [`rule`] over the parsed
/// checklist, never from the model's own verdict. One repair round-trip
/// when the checklist fails to parse.
pub fn decide_rule_based(
    question: &str,
    rationale: &str,
    gateway: &ModelGateway,
) -> Result<(DecisionLabel, ConstraintChecklist), DecisionError> {
    if rationale.trim().is_empty() {
        return Err(DecisionError::EmptyRationale);
    }
    let request = prompt::DECIDE_RULE.request(
        gateway.model_id(),
        &[("question", question), ("rationale", rationale)],
    );
    let first = gateway.complete(&request)?.text;
    let problem = match parse_checklist_block(&first) {
        Ok(checklist) => {
            let label = rule(&checklist);
            return Ok((label, checklist));
        }
        Err(problem) => problem,
    };

    let repair = prompt::DECIDE_RULE_REPAIR.request(
        gateway.model_id(),
        &[
            ("question", question),
            ("rationale", rationale),
            ("previous", &first),
            ("error", &problem),
        ],
    );
    let second = gateway.complete(&repair)?.text;
    match parse_checklist_block(&second) {
        Ok(checklist) => {
            let label = rule(&checklist);
            Ok((label, checklist))
        }
        Err(problem) => Err(DecisionError::UnparseableChecklist(problem)),
    }
}

fn parse_final_label(text: &str) -> Result<DecisionLabel, String> {
    let last_line = text
        .lines()
        .rev()
        .find(|l| !l.trim().is_empty())
        .unwrap_or("");
    let mut tokens = last_line.split_whitespace();
    match (tokens.next(), tokens.next()) {
        (Some(token), None) => {
            DecisionLabel::parse(token).ok_or_else(|| token.to_string())
        }
        _ => Err(last_line.trim().to_string()),
    }
}

/// Free-form judged decision: the model weighs essential versus secondary
/// requirements and the label is read from its single-token final line.
/// One repair round-trip when the final line is not a valid label.
pub fn decide_descriptive(
    question: &str,
    rationale: &str,
    gateway: &ModelGateway,
) -> Result<DecisionLabel, DecisionError> {
    if rationale.trim().is_empty() {
        return Err(DecisionError::EmptyRationale);
    }
    let request = prompt::DECIDE_DESCRIPTIVE.request(
        gateway.model_id(),
        &[("question", question), ("rationale", rationale)],
    );
    let first = gateway.complete(&request)?.text;
    let bad_token = match parse_final_label(&first) {
        Ok(label) => return Ok(label),
        Err(token) => token,
    };

    let repair = prompt::DECIDE_DESCRIPTIVE_REPAIR.request(
        gateway.model_id(),
        &[
            ("question", question),
            ("rationale", rationale),
            ("previous", &first),
            ("error", &format!("`{bad_token}` is not a valid label")),
        ],
    );
    let second = gateway.complete(&repair)?.text;
    parse_final_label(&second).map_err(DecisionError::UnparseableLabel)
}

/// Client for a remote specialist classifier: POST {question, rationale},
/// expect {label}.
pub fn decide_remote(
    question: &str,
    rationale: &str,
    endpoint: &str,
) -> Result<DecisionLabel, DecisionError> {
    if rationale.trim().is_empty() {
        return Err(DecisionError::EmptyRationale);
    }
    #[derive(Deserialize)]
    struct Reply {
        label: String,
    }
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(Duration::from_secs(30)))
        .build()
        .into();
    let mut resp = agent
        .post(endpoint)
        .send_json(serde_json::json!({
            "question": question,
            "rationale": rationale,
        }))
        .map_err(|e| DecisionError::Transport(e.to_string()))?;
    let reply: Reply = resp
        .body_mut()
        .read_json()
        .map_err(|e| DecisionError::Transport(format!("malformed reply: {e}")))?;
    DecisionLabel::parse(&reply.label).ok_or(DecisionError::InvalidLabel(reply.label))
}

/// Anything that can label a (question, rationale) pair. The multimodal
/// pipeline takes its decider through this trait.
pub trait Decider: Send + Sync {
    fn decide(&self, question: &str, rationale: &str) -> Result<DecisionLabel, DecisionError>;
    fn name(&self) -> &'static str;
}

pub struct RuleBasedDecider<'g> {
    pub gateway: &'g ModelGateway,
}

impl Decider for RuleBasedDecider<'_> {
    fn decide(&self, question: &str, rationale: &str) -> Result<DecisionLabel, DecisionError> {
        decide_rule_based(question, rationale, self.gateway).map(|(label, _)| label)
    }
    fn name(&self) -> &'static str {
        "rule_based"
    }
}

pub struct DescriptiveDecider<'g> {
    pub gateway: &'g ModelGateway,
}

impl Decider for DescriptiveDecider<'_> {
    fn decide(&self, question: &str, rationale: &str) -> Result<DecisionLabel, DecisionError> {
        decide_descriptive(question, rationale, self.gateway)
    }
    fn name(&self) -> &'static str {
        "descriptive"
    }
}

pub struct RemoteDecider {
    pub endpoint: String,
}

impl Decider for RemoteDecider {
    fn decide(&self, question: &str, rationale: &str) -> Result<DecisionLabel, DecisionError> {
        decide_remote(question, rationale, &self.endpoint)
    }
    fn name(&self) -> &'static str {
        "remote"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelgate::{AssetResolver, Backend, ModelResponse, ResolvedRequest};
    use std::collections::VecDeque;
    use std::sync::Mutex;

    struct Script {
        responses: Mutex<VecDeque<String>>,
    }

    impl Backend for Script {
        fn complete(&self, _request: &ResolvedRequest) -> Result<ModelResponse, GatewayError> {
            let text = self
                .responses
                .lock()
                .unwrap()
                .pop_front()
                .expect("script exhausted");
            Ok(ModelResponse {
                text,
                usage: None,
                backend_id: self.id(),
            })
        }
        fn id(&self) -> String {
            "script".to_string()
        }
    }

    fn gateway_with(responses: &[&str]) -> ModelGateway {
        ModelGateway::live(
            Box::new(Script {
                responses: Mutex::new(responses.iter().map(|s| s.to_string()).collect()),
            }),
            AssetResolver::default(),
        )
    }

    fn checklist(statuses: &[ConstraintStatus]) -> ConstraintChecklist {
        ConstraintChecklist::new(
            statuses
                .iter()
                .enumerate()
                .map(|(i, s)| (*s, format!("constraint {i}")))
                .collect(),
        )
        .unwrap()
    }

    use ConstraintStatus::{Met, NotMet, Unverifiable};

    #[test]
    fn rule_all_some_none() {
        assert_eq!(rule(&checklist(&[Met, Met])), DecisionLabel::Accept);
        assert_eq!(rule(&checklist(&[NotMet])), DecisionLabel::Reject);
        assert_eq!(
            rule(&checklist(&[Met, NotMet, NotMet])),
            DecisionLabel::Recommend
        );
    }

    #[test]
    fn rule_treats_unverifiable_as_not_met() {
        assert_eq!(rule(&checklist(&[Unverifiable])), DecisionLabel::Reject);
        assert_eq!(
            rule(&checklist(&[Met, Unverifiable])),
            DecisionLabel::Recommend
        );
        assert_eq!(
            rule(&checklist(&[Unverifiable, NotMet])),
            DecisionLabel::Reject
        );
    }

    #[test]
    fn rule_matches_brute_force_definition_up_to_length_five() {
        // oracle phrased with all()/any() rather than counting
        fn oracle(statuses: &[ConstraintStatus]) -> DecisionLabel {
            let is_met = |s: &ConstraintStatus| *s == Met;
            if statuses.iter().all(is_met) {
                DecisionLabel::Accept
            } else if statuses.iter().any(is_met) {
                DecisionLabel::Recommend
            } else {
                DecisionLabel::Reject
            }
        }
        let all = [Met, NotMet, Unverifiable];
        let mut checked = 0;
        for n in 1..=5usize {
            let mut indices = vec![0usize; n];
            loop {
                let statuses: Vec<ConstraintStatus> = indices.iter().map(|&i| all[i]).collect();
                assert_eq!(rule(&checklist(&statuses)), oracle(&statuses), "{statuses:?}");
                checked += 1;
                // odometer increment over base-3 digits
                let mut pos = 0;
                loop {
                    if pos == n {
                        break;
                    }
                    indices[pos] += 1;
                    if indices[pos] < 3 {
                        break;
                    }
                    indices[pos] = 0;
                    pos += 1;
                }
                if pos == n {
                    break;
                }
            }
        }
        assert_eq!(checked, 3 + 9 + 27 + 81 + 243);
    }

    #[test]
    fn empty_checklist_rejected_at_construction() {
        assert!(matches!(
            ConstraintChecklist::new(vec![]),
            Err(DecisionError::MalformedChecklist(_))
        ));
    }

    #[test]
    fn checklist_block_parses_statuses_and_text() {
        let text = "Reasoning...\n```checklist\n- [met] under 50 dollars\n- [not_met] has a green lid\n- [unverifiable] dishwasher safe\n```\nLABEL: ACCEPT";
        let parsed = parse_checklist_block(text).unwrap();
        assert_eq!(parsed.len(), 3);
        assert_eq!(parsed.satisfied(), &[Met, NotMet, Unverifiable]);
        assert_eq!(parsed.constraints()[0], "under 50 dollars");
    }

    #[test]
    fn checklist_block_rejects_unknown_status() {
        let text = "```checklist\n- [kinda] maybe\n```";
        assert!(parse_checklist_block(text).unwrap_err().contains("kinda"));
    }

    #[test]
    fn rule_based_ignores_the_models_announced_label() {
        // model claims ACCEPT but its own checklist says 1 of 2 met
        let gw = gateway_with(&[
            "```checklist\n- [met] price under 50\n- [not_met] green lid\n```\nLABEL: ACCEPT",
        ]);
        let (label, checklist) = decide_rule_based("q", "rationale text", &gw).unwrap();
        assert_eq!(label, DecisionLabel::Recommend);
        assert_eq!(label, rule(&checklist));
    }

    #[test]
    fn rule_based_repairs_once_then_errors() {
        let gw = gateway_with(&[
            "no block here",
            "```checklist\n- [met] only constraint\n```",
        ]);
        let (label, _) = decide_rule_based("q", "r", &gw).unwrap();
        assert_eq!(label, DecisionLabel::Accept);
        assert_eq!(gw.completions_served(), 2);

        let gw = gateway_with(&["garbage", "more garbage"]);
        assert!(matches!(
            decide_rule_based("q", "r", &gw),
            Err(DecisionError::UnparseableChecklist(_))
        ));
    }

    #[test]
    fn rule_based_requires_a_rationale() {
        let gw = gateway_with(&[]);
        assert!(matches!(
            decide_rule_based("q", "   ", &gw),
            Err(DecisionError::EmptyRationale)
        ));
    }

    #[test]
    fn descriptive_reads_the_final_line() {
        let gw = gateway_with(&["The record fits well overall.\n\nACCEPT"]);
        assert_eq!(
            decide_descriptive("q", "r", &gw).unwrap(),
            DecisionLabel::Accept
        );
        let gw = gateway_with(&["close but missing the pump.\nreject"]);
        assert_eq!(
            decide_descriptive("q", "r", &gw).unwrap(),
            DecisionLabel::Reject
        );
        let gw = gateway_with(&["verdict:\nRECOMMEND."]);
        assert_eq!(
            decide_descriptive("q", "r", &gw).unwrap(),
            DecisionLabel::Recommend
        );
    }

    #[test]
    fn descriptive_repairs_an_invalid_label() {
        let gw = gateway_with(&["MAYBE", "REJECT"]);
        assert_eq!(
            decide_descriptive("q", "r", &gw).unwrap(),
            DecisionLabel::Reject
        );
        assert_eq!(gw.completions_served(), 2);

        let gw = gateway_with(&["MAYBE", "STILL MAYBE"]);
        match decide_descriptive("q", "r", &gw) {
            Err(DecisionError::UnparseableLabel(token)) => {
                assert_eq!(token, "STILL MAYBE");
            }
            other => panic!("expected label error, got {other:?}"),
        }
    }

    #[test]
    fn remote_decider_round_trip() {
        use dynaquery_testsupport::{StubHttpServer, StubResponse};
        let server = StubHttpServer::start(|req| {
            assert_eq!(req.json()["question"], "q");
            StubResponse::json(serde_json::json!({"label": "RECOMMEND"}))
        });
        let label = decide_remote("q", "r", &server.url("/classify")).unwrap();
        assert_eq!(label, DecisionLabel::Recommend);
    }

    #[test]
    fn remote_decider_maps_failures() {
        use dynaquery_testsupport::{StubHttpServer, StubResponse};
        let server = StubHttpServer::respond_with(StubResponse::status(500));
        assert!(matches!(
            decide_remote("q", "r", &server.url("/classify")),
            Err(DecisionError::Transport(_))
        ));
        let server =
            StubHttpServer::respond_with(StubResponse::json(serde_json::json!({"label": "SHRUG"})));
        assert!(matches!(
            decide_remote("q", "r", &server.url("/classify")),
            Err(DecisionError::InvalidLabel(_))
        ));
    }

    #[test]
    fn label_serialization_uses_upper_case() {
        assert_eq!(
            serde_json::to_string(&DecisionLabel::Accept).unwrap(),
            "\"ACCEPT\""
        );
        assert_eq!(DecisionLabel::parse("recommend"), Some(DecisionLabel::Recommend));
        assert_eq!(DecisionLabel::parse("bogus"), None);
    }
}
