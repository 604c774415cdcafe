//! Response schemas for the agents, strict parsing with a failure taxonomy,
//! and lenient recovery.
//!
//! Strict parsing reports every violation it finds, not just the first.
//! Recovery never erases the failure record: callers keep the failures from
//! the strict pass and attach the recovered value next to them.

mod code;
mod lexer;
mod schema;

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::role::AgentRole;
use lexer::escape_text;
use schema::{build, serialize_pruned, validate_element, Element, Node};

pub use code::{canonical_language, extract_code, extract_code_for};
pub use schema::{
    reference_document, Content, DocumentSchema, ElementSpec, Occurs, PLANNING, RETRIEVAL,
    SCHEMA_VERSION, SUPERVISOR,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FailureKind {
    NotWellFormed,
    MissingTag,
    UnclosedTag,
    UnexpectedTag,
    BadConfidence,
    NoCodeBlock,
}

impl FailureKind {
    pub const ALL: [FailureKind; 6] = [
        FailureKind::NotWellFormed,
        FailureKind::MissingTag,
        FailureKind::UnclosedTag,
        FailureKind::UnexpectedTag,
        FailureKind::BadConfidence,
        FailureKind::NoCodeBlock,
    ];
}

/// A classified schema violation.
///
/// `detail` holds the tag name for `MissingTag`, `UnclosedTag` and
/// `UnexpectedTag`; the offending fragment for `NotWellFormed` and
/// `BadConfidence`; and is empty for `NoCodeBlock`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FormatFailure {
    pub role: AgentRole,
    pub kind: FailureKind,
    pub detail: String,
}

impl FormatFailure {
    pub fn new(role: AgentRole, kind: FailureKind, detail: impl Into<String>) -> Self {
        FormatFailure {
            role,
            kind,
            detail: detail.into(),
        }
    }
}

impl fmt::Display for FormatFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            FailureKind::MissingTag => write!(f, "missing <{}>", self.detail),
            FailureKind::UnclosedTag => write!(f, "unclosed <{}>", self.detail),
            FailureKind::UnexpectedTag => write!(f, "unexpected <{}>", self.detail),
            FailureKind::BadConfidence => write!(f, "confidence must be an integer 0-100, got `{}`", self.detail),
            FailureKind::NotWellFormed => write!(f, "not well-formed: {}", self.detail),
            FailureKind::NoCodeBlock => write!(f, "no fenced code block"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalOutput {
    pub algorithm_name: String,
    pub tutorial: String,
}

impl RetrievalOutput {
    pub fn to_xml(&self) -> String {
        format!(
            "<root>\n<algorithm>{}</algorithm>\n<tutorial>{}</tutorial>\n</root>",
            escape_text(&self.algorithm_name),
            escape_text(&self.tutorial)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub steps: String,
    pub confidence: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanSet {
    pub plans: Vec<Plan>,
}

impl PlanSet {
    pub fn to_xml(&self) -> String {
        let mut out = String::from("<root>\n");
        for p in &self.plans {
            out.push_str(&format!(
                "<plan>\n<steps>{}</steps>\n<confidence>{}</confidence>\n</plan>\n",
                escape_text(&p.steps),
                p.confidence
            ));
        }
        out.push_str("</root>");
        out
    }
}

/// Upstream roles the supervisor may hold responsible.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlamedRole {
    Retrieval,
    Planning,
    Coding,
}

impl BlamedRole {
    pub fn agent_role(self) -> AgentRole {
        match self {
            BlamedRole::Retrieval => AgentRole::Retrieval,
            BlamedRole::Planning => AgentRole::Planning,
            BlamedRole::Coding => AgentRole::Coding,
        }
    }

    fn parse(text: &str) -> Option<Self> {
        let lowered = text.trim().to_ascii_lowercase();
        let name = lowered.strip_suffix(" agent").unwrap_or(&lowered).trim();
        match name {
            "retrieval" | "retriever" => Some(BlamedRole::Retrieval),
            "planning" | "planner" => Some(BlamedRole::Planning),
            "coding" | "coder" => Some(BlamedRole::Coding),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlameReport {
    pub blamed_role: BlamedRole,
    pub feedback: String,
}

impl BlameReport {
    pub fn to_xml(&self) -> String {
        format!(
            "<verdict>\n<agent>{}</agent>\n<feedback>{}</feedback>\n</verdict>",
            self.blamed_role.agent_role(),
            escape_text(&self.feedback)
        )
    }
}

/// The typed result of parsing any agent's response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "lowercase")]
pub enum ParsedResponse {
    Retrieval(RetrievalOutput),
    Plans(PlanSet),
    Code(String),
    Blame(BlameReport),
}

impl ParsedResponse {
    pub fn as_retrieval(&self) -> Option<&RetrievalOutput> {
        match self {
            ParsedResponse::Retrieval(r) => Some(r),
            _ => None,
        }
    }

    pub fn as_plans(&self) -> Option<&PlanSet> {
        match self {
            ParsedResponse::Plans(p) => Some(p),
            _ => None,
        }
    }

    pub fn as_code(&self) -> Option<&str> {
        match self {
            ParsedResponse::Code(c) => Some(c),
            _ => None,
        }
    }

    pub fn as_blame(&self) -> Option<&BlameReport> {
        match self {
            ParsedResponse::Blame(b) => Some(b),
            _ => None,
        }
    }
}

/// Removes a single markdown fence wrapping the whole response.
fn strip_wrapping_fence(raw: &str) -> &str {
    let trimmed = raw.trim();
    if !trimmed.starts_with("```") || !trimmed.ends_with("```") || trimmed.len() < 6 {
        return raw;
    }
    let Some(first_nl) = trimmed.find('\n') else {
        return raw;
    };
    let inner = &trimmed[first_nl + 1..trimmed.len() - 3];
    if inner.contains("```") {
        return raw;
    }
    inner
}

/// Strict structural pass shared by all XML schemas.
fn strict_document(raw: &str, schema: &DocumentSchema) -> Result<Element, Vec<FormatFailure>> {
    let role = schema.role;
    let body = strip_wrapping_fence(raw);
    if body.trim().is_empty() {
        return Err(vec![FormatFailure::new(role, FailureKind::NotWellFormed, "empty response")]);
    }
    let collected = build(body, schema);
    let mut failures = collected.failures;
    let root_idx = collected
        .top
        .iter()
        .position(|n| matches!(n, Node::Elem(e) if e.name == schema.root));
    let Some(root_idx) = root_idx else {
        let has_elements = collected.top.iter().any(|n| matches!(n, Node::Elem(_)));
        let failure = if has_elements {
            FormatFailure::new(role, FailureKind::MissingTag, schema.root)
        } else {
            FormatFailure::new(role, FailureKind::NotWellFormed, "no XML elements found")
        };
        return Err(vec![failure]);
    };
    for (i, node) in collected.top.iter().enumerate() {
        match node {
            Node::Text(t, offset) if !t.trim().is_empty() => failures.push((
                *offset,
                FormatFailure::new(
                    role,
                    FailureKind::NotWellFormed,
                    format!("text outside <{}>: {}", schema.root, schema::fragment(t)),
                ),
            )),
            Node::Elem(e) if i != root_idx => failures.push((
                e.offset,
                FormatFailure::new(role, FailureKind::UnexpectedTag, e.name.clone()),
            )),
            _ => {}
        }
    }
    let Node::Elem(root) = &collected.top[root_idx] else {
        unreachable!()
    };
    validate_element(schema, root, &mut failures);
    if failures.is_empty() {
        Ok(root.clone())
    } else {
        failures.sort_by_key(|(offset, _)| *offset);
        Err(failures.into_iter().map(|(_, f)| f).collect())
    }
}

fn typed(root: &Element, schema: &DocumentSchema) -> Result<ParsedResponse, Vec<FormatFailure>> {
    let text_of = |el: &Element, name: &str| el.child(name).map(|c| c.text()).unwrap_or_default();
    match schema.role {
        AgentRole::Retrieval => Ok(ParsedResponse::Retrieval(RetrievalOutput {
            algorithm_name: text_of(root, "algorithm"),
            tutorial: text_of(root, "tutorial"),
        })),
        AgentRole::Planning => {
            let plans = root
                .elements()
                .filter(|e| e.name == "plan")
                .map(|p| Plan {
                    steps: text_of(p, "steps"),
                    confidence: text_of(p, "confidence").parse().expect("validated confidence"),
                })
                .collect();
            Ok(ParsedResponse::Plans(PlanSet { plans }))
        }
        AgentRole::Supervisor => {
            let agent = text_of(root, "agent");
            match BlamedRole::parse(&agent) {
                Some(blamed_role) => Ok(ParsedResponse::Blame(BlameReport {
                    blamed_role,
                    feedback: text_of(root, "feedback"),
                })),
                None => Err(vec![FormatFailure::new(
                    AgentRole::Supervisor,
                    FailureKind::UnexpectedTag,
                    agent.to_ascii_lowercase(),
                )]),
            }
        }
        AgentRole::Coding | AgentRole::Debugging => unreachable!("code roles have no XML schema"),
    }
}

/// Strictly parses `raw` against `schema`.
pub fn parse_document(raw: &str, schema: &DocumentSchema) -> Result<ParsedResponse, Vec<FormatFailure>> {
    let root = strict_document(raw, schema)?;
    typed(&root, schema)
}

pub fn parse_retrieval(raw: &str) -> Result<RetrievalOutput, Vec<FormatFailure>> {
    match parse_document(raw, &RETRIEVAL)? {
        ParsedResponse::Retrieval(r) => Ok(r),
        _ => unreachable!(),
    }
}

pub fn parse_plans(raw: &str) -> Result<PlanSet, Vec<FormatFailure>> {
    match parse_document(raw, &PLANNING)? {
        ParsedResponse::Plans(p) => Ok(p),
        _ => unreachable!(),
    }
}

pub fn parse_supervisor(raw: &str) -> Result<BlameReport, Vec<FormatFailure>> {
    match parse_document(raw, &SUPERVISOR)? {
        ParsedResponse::Blame(b) => Ok(b),
        _ => unreachable!(),
    }
}

/// Strict parse for any role: XML schemas for retrieval, planning and the
/// supervisor; fenced code for coding and debugging.
pub fn parse_for_role(role: AgentRole, raw: &str, language: &str) -> Result<ParsedResponse, Vec<FormatFailure>> {
    match DocumentSchema::for_role(role) {
        Some(schema) => parse_document(raw, schema),
        None => extract_code_for(role, raw, language)
            .map(ParsedResponse::Code)
            .map_err(|f| vec![f]),
    }
}

/// Best-effort repair after a failed strict parse.
///
/// Text before the first `<root>` and after the last `</root>` is trimmed,
/// unknown elements are dropped, and unclosed known elements are closed at
/// the end of input. A value is returned only when the repaired document
/// passes the strict parser.
pub fn lenient_recover(raw: &str, schema: &DocumentSchema) -> Option<ParsedResponse> {
    let body = strip_wrapping_fence(raw);
    let tokens = lexer::tokenize(body);
    let start = tokens.iter().find_map(|t| match t {
        lexer::Token::Open { name, offset } if name == schema.root => Some(*offset),
        _ => None,
    })?;
    let close_tag = format!("</{}>", schema.root);
    let end = tokens
        .iter()
        .rev()
        .find_map(|t| match t {
            lexer::Token::Close { name, offset } if name == schema.root && *offset >= start => {
                body[*offset..].find('>').map(|gt| offset + gt + 1)
            }
            _ => None,
        })
        .unwrap_or(body.len());
    let slice = &body[start..end];
    debug_assert!(end == body.len() || slice.ends_with('>') || slice.ends_with(&close_tag));
    let collected = build(slice, schema);
    let root = collected.top.iter().find_map(|n| match n {
        Node::Elem(e) if e.name == schema.root => Some(e),
        _ => None,
    })?;
    let repaired = serialize_pruned(schema, root);
    parse_document(&repaired, schema).ok()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn kinds(f: &[FormatFailure]) -> Vec<(FailureKind, &str)> {
        f.iter().map(|f| (f.kind, f.detail.as_str())).collect()
    }

    const FAILURE_CASE: &str = "<root>\n<algorithm>Sliding Window\n<description>Keep a window over the input and move it.</description>\n</algorithm>\n<tutorial>Maintain two pointers and count matches.</tutorial>\n";

    #[test]
    fn valid_retrieval() {
        let raw = "<root><algorithm>Counting and Matching Pairs</algorithm><tutorial>Count each command and pair opposites.</tutorial></root>";
        let r = parse_retrieval(raw).unwrap();
        assert_eq!(r.algorithm_name, "Counting and Matching Pairs");
        assert_eq!(r.tutorial, "Count each command and pair opposites.");
    }

    #[test]
    fn wrapped_in_fence_is_accepted() {
        let raw = "```xml\n<root><algorithm>A</algorithm><tutorial>T</tutorial></root>\n```";
        assert!(parse_retrieval(raw).is_ok());
    }

    #[test]
    fn extraneous_description_and_missing_root_close() {
        let f = parse_retrieval(FAILURE_CASE).unwrap_err();
        assert_eq!(
            kinds(&f),
            vec![(FailureKind::UnexpectedTag, "description"), (FailureKind::UnclosedTag, "root")]
        );
        let recovered = lenient_recover(FAILURE_CASE, &RETRIEVAL).unwrap();
        let r = recovered.as_retrieval().unwrap();
        assert_eq!(r.algorithm_name, "Sliding Window");
        assert!(parse_retrieval(&r.to_xml()).is_ok());
    }

    #[test]
    fn empty_text_is_not_well_formed() {
        assert_eq!(kinds(&parse_retrieval("").unwrap_err()), vec![(FailureKind::NotWellFormed, "empty response")]);
        assert_eq!(parse_retrieval("no tags at all").unwrap_err()[0].kind, FailureKind::NotWellFormed);
        assert!(lenient_recover("no tags at all", &RETRIEVAL).is_none());
    }

    #[test]
    fn prose_around_root_is_flagged_then_recovered() {
        let raw = "Sure! Here you go:\n<root><algorithm>Greedy</algorithm><tutorial>Pick the best.</tutorial></root>\nHope it helps.";
        let f = parse_retrieval(raw).unwrap_err();
        assert_eq!(f.len(), 2);
        assert!(f.iter().all(|f| f.kind == FailureKind::NotWellFormed));
        assert!(lenient_recover(raw, &RETRIEVAL).is_some());
    }

    #[test]
    fn plans_preserve_generation_order() {
        let raw = "<root><plan><steps>a</steps><confidence>90</confidence></plan><plan><steps>b</steps><confidence>60</confidence></plan><plan><steps>c</steps><confidence>90</confidence></plan></root>";
        let ps = parse_plans(raw).unwrap();
        let got: Vec<_> = ps.plans.iter().map(|p| (p.steps.as_str(), p.confidence)).collect();
        assert_eq!(got, [("a", 90), ("b", 60), ("c", 90)]);
        assert_eq!(parse_plans(&ps.to_xml()).unwrap(), ps);
    }

    #[test]
    fn confidence_rules() {
        let tmpl = |c: &str| format!("<root><plan><steps>s</steps><confidence>{c}</confidence></plan></root>");
        assert_eq!(kinds(&parse_plans(&tmpl("high")).unwrap_err()), vec![(FailureKind::BadConfidence, "high")]);
        assert_eq!(kinds(&parse_plans(&tmpl("101")).unwrap_err()), vec![(FailureKind::BadConfidence, "101")]);
        assert_eq!(kinds(&parse_plans(&tmpl("-1")).unwrap_err()), vec![(FailureKind::BadConfidence, "-1")]);
        assert_eq!(parse_plans(&tmpl(" 0 ")).unwrap().plans[0].confidence, 0);
        assert_eq!(parse_plans(&tmpl("100")).unwrap().plans[0].confidence, 100);
        let absent = "<root><plan><steps>s</steps></plan></root>";
        assert_eq!(kinds(&parse_plans(absent).unwrap_err()), vec![(FailureKind::BadConfidence, "")]);
        let no_steps = "<root><plan><confidence>5</confidence></plan></root>";
        assert_eq!(kinds(&parse_plans(no_steps).unwrap_err()), vec![(FailureKind::MissingTag, "steps")]);
    }

    #[test]
    fn zero_plans() {
        assert_eq!(kinds(&parse_plans("<root></root>").unwrap_err()), vec![(FailureKind::MissingTag, "plan")]);
    }

    #[test]
    fn supervisor_verdicts() {
        let ok = "<verdict><agent>Planning</agent><feedback>The plan misses the case where w is 2.</feedback></verdict>";
        let b = parse_supervisor(ok).unwrap();
        assert_eq!(b.blamed_role, BlamedRole::Planning);
        assert!(b.feedback.contains("w is 2"));

        let bad = "<verdict><agent>debugging</agent><feedback>x</feedback></verdict>";
        assert_eq!(kinds(&parse_supervisor(bad).unwrap_err()), vec![(FailureKind::UnexpectedTag, "debugging")]);

        let missing = "<verdict><agent>coding</agent></verdict>";
        assert_eq!(kinds(&parse_supervisor(missing).unwrap_err()), vec![(FailureKind::MissingTag, "feedback")]);
    }

    #[test]
    fn duplicate_single_child_is_unexpected() {
        let raw = "<root><algorithm>A</algorithm><algorithm>B</algorithm><tutorial>T</tutorial></root>";
        assert_eq!(kinds(&parse_retrieval(raw).unwrap_err()), vec![(FailureKind::UnexpectedTag, "algorithm")]);
        let rec = lenient_recover(raw, &RETRIEVAL).unwrap();
        assert_eq!(rec.as_retrieval().unwrap().algorithm_name, "A");
    }

    #[test]
    fn stray_close_is_not_well_formed() {
        let raw = "<root><algorithm>A</algorithm></tutorial><tutorial>T</tutorial></root>";
        assert_eq!(parse_retrieval(raw).unwrap_err()[0].kind, FailureKind::NotWellFormed);
    }

    #[test]
    fn recovery_of_truncated_plans() {
        let raw = "<root><plan><steps>read n</steps><confidence>70</confidence></plan><plan><steps>brute";
        let f = parse_plans(raw).unwrap_err();
        assert!(f.iter().any(|f| f.kind == FailureKind::UnclosedTag));
        let rec = lenient_recover(raw, &PLANNING);
        // second plan lacks confidence, so repair cannot satisfy the schema
        assert!(rec.is_none());
    }

    #[test]
    fn parse_for_role_dispatches() {
        let code = parse_for_role(AgentRole::Debugging, "```python\nprint(1)\n```", "python").unwrap();
        assert_eq!(code.as_code(), Some("print(1)\n"));
        let f = parse_for_role(AgentRole::Coding, "print(1)", "python").unwrap_err();
        assert_eq!(f[0].role, AgentRole::Coding);
    }
}
