//! Declarative element trees for every XML-speaking agent.
//!
//! The same tables drive the strict parser, lenient recovery, the format
//! section of prompts, and the shipped schema reference document.

use super::lexer::{escape_text, tokenize, Token};
use super::{FailureKind, FormatFailure};
use crate::role::AgentRole;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Occurs {
    One,
    OneOrMore,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Content {
    Text,
    Integer { min: i64, max: i64 },
    Children(&'static [(&'static str, Occurs)]),
}

#[derive(Debug, Clone, Copy)]
pub struct ElementSpec {
    pub name: &'static str,
    pub content: Content,
    /// Failure reported when a required occurrence is absent.
    pub missing: FailureKind,
    pub doc: &'static str,
}

#[derive(Debug, Clone, Copy)]
pub struct DocumentSchema {
    pub role: AgentRole,
    pub root: &'static str,
    pub elements: &'static [ElementSpec],
}

const fn text(name: &'static str, doc: &'static str) -> ElementSpec {
    ElementSpec {
        name,
        content: Content::Text,
        missing: FailureKind::MissingTag,
        doc,
    }
}

pub static RETRIEVAL: DocumentSchema = DocumentSchema {
    role: AgentRole::Retrieval,
    root: "root",
    elements: &[
        ElementSpec {
            name: "root",
            content: Content::Children(&[("algorithm", Occurs::One), ("tutorial", Occurs::One)]),
            missing: FailureKind::MissingTag,
            doc: "document element",
        },
        text("algorithm", "name of the core algorithm or technique"),
        text("tutorial", "explanation of how the approach solves this kind of problem"),
    ],
};

pub static PLANNING: DocumentSchema = DocumentSchema {
    role: AgentRole::Planning,
    root: "root",
    elements: &[
        ElementSpec {
            name: "root",
            content: Content::Children(&[("plan", Occurs::OneOrMore)]),
            missing: FailureKind::MissingTag,
            doc: "document element",
        },
        ElementSpec {
            name: "plan",
            content: Content::Children(&[("steps", Occurs::One), ("confidence", Occurs::One)]),
            missing: FailureKind::MissingTag,
            doc: "one candidate plan, in generation order",
        },
        text("steps", "step-by-step execution plan"),
        ElementSpec {
            name: "confidence",
            content: Content::Integer { min: 0, max: 100 },
            missing: FailureKind::BadConfidence,
            doc: "base-10 integer from 0 to 100",
        },
    ],
};

pub static SUPERVISOR: DocumentSchema = DocumentSchema {
    role: AgentRole::Supervisor,
    root: "verdict",
    elements: &[
        ElementSpec {
            name: "verdict",
            content: Content::Children(&[("agent", Occurs::One), ("feedback", Occurs::One)]),
            missing: FailureKind::MissingTag,
            doc: "document element",
        },
        text("agent", "responsible agent: retrieval, planning or coding"),
        text("feedback", "concrete guidance for the responsible agent"),
    ],
};

impl DocumentSchema {
    pub fn for_role(role: AgentRole) -> Option<&'static DocumentSchema> {
        match role {
            AgentRole::Retrieval => Some(&RETRIEVAL),
            AgentRole::Planning => Some(&PLANNING),
            AgentRole::Supervisor => Some(&SUPERVISOR),
            AgentRole::Coding | AgentRole::Debugging => None,
        }
    }

    pub fn element(&self, name: &str) -> Option<&'static ElementSpec> {
        self.elements.iter().find(|e| e.name == name)
    }

    fn allows_child(&self, parent: &str, child: &str) -> bool {
        match self.element(parent).map(|e| e.content) {
            Some(Content::Children(children)) => children.iter().any(|(c, _)| *c == child),
            _ => false,
        }
    }

    /// Skeleton document shown to the model in prompts.
    pub fn skeleton(&self) -> String {
        let mut out = String::new();
        self.skeleton_into(self.root, 0, &mut out);
        out
    }

    fn skeleton_into(&self, name: &str, depth: usize, out: &mut String) {
        let indent = "  ".repeat(depth);
        let spec = self.element(name).expect("schema element");
        match spec.content {
            Content::Children(children) => {
                out.push_str(&format!("{indent}<{name}>\n"));
                for (child, occurs) in children {
                    self.skeleton_into(child, depth + 1, out);
                    if *occurs == Occurs::OneOrMore {
                        out.push_str(&format!("{indent}  <!-- more <{child}> elements may follow -->\n"));
                    }
                }
                out.push_str(&format!("{indent}</{name}>\n"));
            }
            _ => out.push_str(&format!("{indent}<{name}>{}</{name}>\n", spec.doc)),
        }
    }

    /// Human-readable description of the element tree.
    pub fn describe(&self) -> String {
        let mut out = format!("## {} (root `<{}>`)\n\n", self.role, self.root);
        for e in self.elements {
            let content = match e.content {
                Content::Text => "text".to_string(),
                Content::Integer { min, max } => format!("integer in [{min}, {max}]"),
                Content::Children(children) => children
                    .iter()
                    .map(|(c, o)| match o {
                        Occurs::One => format!("<{c}> exactly once"),
                        Occurs::OneOrMore => format!("<{c}> one or more"),
                    })
                    .collect::<Vec<_>>()
                    .join(", "),
            };
            out.push_str(&format!("- `<{}>`: {content}. {}\n", e.name, e.doc));
        }
        out
    }
}

/// Renders the schema reference for every role.
pub fn reference_document() -> String {
    let mut out = format!(
        "# Agent response schemas (version {SCHEMA_VERSION})\n\n\
         Generated from the parser's schema table. Coding and debugging agents reply with\n\
         a fenced code block instead of XML.\n\n"
    );
    for s in [&RETRIEVAL, &PLANNING, &SUPERVISOR] {
        out.push_str(&s.describe());
        out.push('\n');
        out.push_str("```xml\n");
        out.push_str(&s.skeleton());
        out.push_str("```\n\n");
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Node {
    Elem(Element),
    Text(String, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Element {
    pub name: String,
    pub children: Vec<Node>,
    pub offset: usize,
    pub end: usize,
}

impl Element {
    fn new(name: String, offset: usize) -> Self {
        Element {
            name,
            children: Vec::new(),
            offset,
            end: offset,
        }
    }

    pub fn text(&self) -> String {
        let mut s = String::new();
        for c in &self.children {
            if let Node::Text(t, _) = c {
                s.push_str(t);
            }
        }
        s.trim().to_string()
    }

    pub fn elements(&self) -> impl Iterator<Item = &Element> {
        self.children.iter().filter_map(|c| match c {
            Node::Elem(e) => Some(e),
            Node::Text(..) => None,
        })
    }

    pub fn child(&self, name: &str) -> Option<&Element> {
        self.elements().find(|e| e.name == name)
    }
}

pub(crate) struct Collected {
    pub top: Vec<Node>,
    pub failures: Vec<(usize, FormatFailure)>,
}

/// Builds a forest from `src`, closing elements the schema says cannot hold
/// the next opened element. Every repair is reported as a failure.
pub(crate) fn build(src: &str, schema: &DocumentSchema) -> Collected {
    let role = schema.role;
    let mut failures = Vec::new();
    let mut top: Vec<Node> = Vec::new();
    let mut stack: Vec<Element> = Vec::new();

    fn attach(stack: &mut [Element], top: &mut Vec<Node>, node: Node) {
        match stack.last_mut() {
            Some(parent) => parent.children.push(node),
            None => top.push(node),
        }
    }
    fn pop_into(stack: &mut Vec<Element>, top: &mut Vec<Node>, end: usize) {
        let mut done = stack.pop().expect("non-empty stack");
        done.end = end;
        attach(stack, top, Node::Elem(done));
    }

    for tok in tokenize(src) {
        match tok {
            Token::Text { text, offset } => attach(&mut stack, &mut top, Node::Text(text, offset)),
            tok @ (Token::Open { .. } | Token::SelfClose { .. }) => {
                let (name, offset, self_closing) = match tok {
                    Token::Open { name, offset } => (name, offset, false),
                    Token::SelfClose { name, offset } => (name, offset, true),
                    _ => unreachable!(),
                };
                // A known element closes whatever cannot contain it, up to the
                // nearest ancestor that can.
                if schema.element(&name).is_some() {
                    if let Some(pos) = stack.iter().rposition(|e| schema.allows_child(&e.name, &name)) {
                        while stack.len() > pos + 1 {
                            let unclosed = stack.last().expect("stack").name.clone();
                            failures.push((
                                offset,
                                FormatFailure::new(role, FailureKind::UnclosedTag, unclosed),
                            ));
                            pop_into(&mut stack, &mut top, offset);
                        }
                    }
                }
                stack.push(Element::new(name, offset));
                if self_closing {
                    pop_into(&mut stack, &mut top, offset);
                }
            }
            Token::Close { name, offset } => {
                match stack.iter().rposition(|e| e.name == name) {
                    Some(pos) => {
                        while stack.len() > pos + 1 {
                            let unclosed = stack.last().expect("stack").name.clone();
                            failures.push((
                                offset,
                                FormatFailure::new(role, FailureKind::UnclosedTag, unclosed),
                            ));
                            pop_into(&mut stack, &mut top, offset);
                        }
                        pop_into(&mut stack, &mut top, offset);
                    }
                    None => failures.push((
                        offset,
                        FormatFailure::new(
                            role,
                            FailureKind::NotWellFormed,
                            format!("unmatched </{name}>"),
                        ),
                    )),
                }
            }
        }
    }
    let eof = src.len();
    while let Some(open) = stack.last() {
        failures.push((
            eof,
            FormatFailure::new(role, FailureKind::UnclosedTag, open.name.clone()),
        ));
        pop_into(&mut stack, &mut top, eof);
    }
    Collected { top, failures }
}

/// Checks a built element against its spec, pushing every violation.
pub(crate) fn validate_element(
    schema: &DocumentSchema,
    el: &Element,
    failures: &mut Vec<(usize, FormatFailure)>,
) {
    let role = schema.role;
    let Some(spec) = schema.element(&el.name) else {
        return;
    };
    match spec.content {
        Content::Text | Content::Integer { .. } => {
            for child in el.elements() {
                failures.push((
                    child.offset,
                    FormatFailure::new(role, FailureKind::UnexpectedTag, child.name.clone()),
                ));
            }
            let text = el.text();
            match spec.content {
                Content::Text if text.is_empty() => failures.push((
                    el.offset,
                    FormatFailure::new(role, spec.missing, el.name.clone()),
                )),
                Content::Integer { min, max } => match text.parse::<i64>() {
                    Ok(v) if (min..=max).contains(&v) => {}
                    _ => failures.push((
                        el.offset,
                        FormatFailure::new(role, FailureKind::BadConfidence, text),
                    )),
                },
                _ => {}
            }
        }
        Content::Children(allowed) => {
            for node in &el.children {
                match node {
                    Node::Text(t, offset) if !t.trim().is_empty() => failures.push((
                        *offset,
                        FormatFailure::new(
                            role,
                            FailureKind::NotWellFormed,
                            format!("stray text inside <{}>: {}", el.name, fragment(t)),
                        ),
                    )),
                    Node::Text(..) => {}
                    Node::Elem(child) => {
                        if !allowed.iter().any(|(n, _)| *n == child.name) {
                            failures.push((
                                child.offset,
                                FormatFailure::new(role, FailureKind::UnexpectedTag, child.name.clone()),
                            ));
                        }
                    }
                }
            }
            for (name, occurs) in allowed {
                let matching: Vec<&Element> = el.elements().filter(|c| c.name == *name).collect();
                if matching.is_empty() {
                    let missing = schema.element(name).map(|s| s.missing).unwrap_or(FailureKind::MissingTag);
                    let detail = if missing == FailureKind::BadConfidence {
                        String::new()
                    } else {
                        name.to_string()
                    };
                    failures.push((el.end, FormatFailure::new(role, missing, detail)));
                }
                if *occurs == Occurs::One {
                    for dup in matching.iter().skip(1) {
                        failures.push((
                            dup.offset,
                            FormatFailure::new(role, FailureKind::UnexpectedTag, name.to_string()),
                        ));
                    }
                }
                for c in &matching {
                    validate_element(schema, c, failures);
                }
            }
        }
    }
}

pub(crate) fn fragment(s: &str) -> String {
    let t = s.trim();
    let cut: String = t.chars().take(60).collect();
    if cut.len() < t.len() {
        format!("{cut}...")
    } else {
        cut
    }
}

/// Serializes a known-element tree canonically, dropping unknown elements,
/// stray container text, and surplus single-occurrence children.
pub(crate) fn serialize_pruned(schema: &DocumentSchema, el: &Element) -> String {
    let mut out = String::new();
    pruned_into(schema, el, &mut out);
    out
}

fn pruned_into(schema: &DocumentSchema, el: &Element, out: &mut String) {
    let Some(spec) = schema.element(&el.name) else {
        return;
    };
    out.push('<');
    out.push_str(&el.name);
    out.push('>');
    match spec.content {
        Content::Text | Content::Integer { .. } => out.push_str(&escape_text(&el.text())),
        Content::Children(allowed) => {
            let mut seen: Vec<&str> = Vec::new();
            for child in el.elements() {
                let Some((name, occurs)) = allowed.iter().find(|(n, _)| *n == child.name) else {
                    continue;
                };
                if *occurs == Occurs::One && seen.contains(name) {
                    continue;
                }
                seen.push(name);
                pruned_into(schema, child, out);
            }
        }
    }
    out.push_str("</");
    out.push_str(&el.name);
    out.push('>');
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn skeleton_names_every_element() {
        let s = PLANNING.skeleton();
        for e in PLANNING.elements {
            assert!(s.contains(&format!("<{}>", e.name)), "{s}");
        }
        assert!(reference_document().contains("version 1"));
    }

    #[test]
    fn auto_close_reports_once() {
        let c = build(
            "<root><algorithm>A<tutorial>T</tutorial></root>",
            &RETRIEVAL,
        );
        let kinds: Vec<_> = c.failures.iter().map(|(_, f)| (f.kind, f.detail.clone())).collect();
        assert_eq!(kinds, vec![(FailureKind::UnclosedTag, "algorithm".to_string())]);
        let Node::Elem(root) = &c.top[0] else { panic!() };
        assert_eq!(root.elements().count(), 2);
    }
}
