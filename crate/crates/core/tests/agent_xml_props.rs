use mapforge::agent_xml::{
    lenient_recover, parse_for_role, parse_plans, parse_retrieval, reference_document, DocumentSchema, PlanSet,
    RetrievalOutput, Plan, PLANNING, RETRIEVAL,
};
use mapforge::AgentRole;
use proptest::prelude::*;

const SCHEMA_DOC: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/../../docs/agent_schemas.md");

fn text() -> impl Strategy<Value = String> {
    "[a-zA-Z0-9 .,;:()+*=<>&'\"-]{1,40}".prop_filter("non-blank", |s| !s.trim().is_empty())
}

fn fragment() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("<root>".to_string()),
        Just("</root>".to_string()),
        Just("<algorithm>".to_string()),
        Just("</algorithm>".to_string()),
        Just("<tutorial>".to_string()),
        Just("</tutorial>".to_string()),
        Just("<plan>".to_string()),
        Just("</plan>".to_string()),
        Just("<confidence>".to_string()),
        Just("</confidence>".to_string()),
        Just("<steps>".to_string()),
        Just("</steps>".to_string()),
        Just("<![CDATA[".to_string()),
        Just("]]>".to_string()),
        Just("&amp;".to_string()),
        Just("```".to_string()),
        "[ -~\n]{0,12}",
    ]
}

proptest! {
    #[test]
    fn parsers_never_panic(parts in prop::collection::vec(fragment(), 0..30)) {
        let raw: String = parts.concat();
        for role in AgentRole::ALL {
            let _ = parse_for_role(role, &raw, "python");
        }
        let _ = lenient_recover(&raw, &RETRIEVAL);
        let _ = lenient_recover(&raw, &PLANNING);
    }

    #[test]
    fn serialized_outputs_parse_back(name in text(), tutorial in text(), plans in prop::collection::vec((text(), 0u8..=100), 1..5)) {
        let r = RetrievalOutput { algorithm_name: name.trim().to_string(), tutorial: tutorial.trim().to_string() };
        prop_assert_eq!(parse_retrieval(&r.to_xml()).unwrap(), r);
        let ps = PlanSet { plans: plans.into_iter().map(|(s, c)| Plan { steps: s.trim().to_string(), confidence: c }).collect() };
        prop_assert_eq!(parse_plans(&ps.to_xml()).unwrap(), ps);
    }

    /// Recovery output, once re-serialized, satisfies the strict schema.
    #[test]
    fn recovery_is_sound(parts in prop::collection::vec(fragment(), 0..30)) {
        let raw: String = parts.concat();
        for schema in [&RETRIEVAL, &PLANNING] {
            if let Some(v) = lenient_recover(&raw, schema) {
                match (schema_role(schema), v) {
                    (AgentRole::Retrieval, mapforge::agent_xml::ParsedResponse::Retrieval(r)) => {
                        prop_assert!(parse_retrieval(&r.to_xml()).is_ok());
                    }
                    (AgentRole::Planning, mapforge::agent_xml::ParsedResponse::Plans(p)) => {
                        prop_assert!(parse_plans(&p.to_xml()).is_ok());
                    }
                    (role, other) => prop_assert!(false, "{role} recovered as {other:?}"),
                }
            }
        }
    }
}

fn schema_role(schema: &DocumentSchema) -> AgentRole {
    if std::ptr::eq(schema, &RETRIEVAL) {
        AgentRole::Retrieval
    } else {
        AgentRole::Planning
    }
}

/// The shipped schema reference must match the code. Set
/// `MAPFORGE_BLESS=1` to regenerate it.
#[test]
fn schema_reference_is_current() {
    let doc = reference_document();
    if std::env::var_os("MAPFORGE_BLESS").is_some() {
        std::fs::write(SCHEMA_DOC, &doc).unwrap();
    }
    let shipped = std::fs::read_to_string(SCHEMA_DOC).expect("docs/agent_schemas.md");
    assert_eq!(shipped, doc);
}
