use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::session::Action;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentResponse {
    pub rationale: String,
    pub action: Action,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IllegalCause {
    NotJson,
    SchemaViolation,
    UnknownActionType,
    UnresolvableTarget,
}

/// Model output that could not be turned into a legal action.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IllegalOutput {
    pub raw: String,
    pub cause: IllegalCause,
}

/// Strips surrounding whitespace and at most one fenced code block.
fn unfence(raw: &str) -> &str {
    let t = raw.trim();
    let Some(rest) = t.strip_prefix("```") else { return t };
    let Some(inner) = rest.strip_suffix("```") else { return t };
    // Drop an info string such as `json` on the opening line.
    let inner = match inner.split_once('\n') {
        Some((info, body)) if !info.trim_start().starts_with('{') => body,
        _ => inner,
    };
    if inner.contains("```") {
        return t;
    }
    inner.trim()
}

fn string_field<'a>(m: &'a Map<String, Value>, key: &str) -> Option<&'a str> {
    m.get(key).and_then(Value::as_str)
}

fn parse_action(v: &Value) -> Result<Action, IllegalCause> {
    let m = v.as_object().ok_or(IllegalCause::SchemaViolation)?;
    let ty = string_field(m, "type").ok_or(IllegalCause::SchemaViolation)?;
    let expect = |keys: &[&str]| -> Result<(), IllegalCause> {
        let ok = m.len() == keys.len() && keys.iter().all(|k| m.contains_key(*k));
        ok.then_some(()).ok_or(IllegalCause::SchemaViolation)
    };
    match ty {
        "terminate" => {
            expect(&["type"])?;
            Ok(Action::Terminate)
        }
        "click" => {
            expect(&["type", "name"])?;
            let name = string_field(m, "name").ok_or(IllegalCause::SchemaViolation)?;
            Ok(Action::click(name))
        }
        "type_and_submit" => {
            expect(&["type", "name", "text"])?;
            let name = string_field(m, "name").ok_or(IllegalCause::SchemaViolation)?;
            let text = string_field(m, "text").ok_or(IllegalCause::SchemaViolation)?;
            Ok(Action::type_and_submit(name, text))
        }
        _ => Err(IllegalCause::UnknownActionType),
    }
}

/// Parses `{"action": {...}, "rationale": "..."}` and nothing else. Total:
/// every input yields a response or an [`IllegalOutput`].
pub fn parse_agent_output(raw: &str) -> Result<AgentResponse, IllegalOutput> {
    let illegal = |cause| IllegalOutput {
        raw: raw.to_owned(),
        cause,
    };
    let v: Value = serde_json::from_str(unfence(raw)).map_err(|_| illegal(IllegalCause::NotJson))?;
    let m = v.as_object().ok_or_else(|| illegal(IllegalCause::SchemaViolation))?;
    if m.len() != 2 {
        return Err(illegal(IllegalCause::SchemaViolation));
    }
    let rationale = string_field(m, "rationale").ok_or_else(|| illegal(IllegalCause::SchemaViolation))?;
    let action = m
        .get("action")
        .ok_or_else(|| illegal(IllegalCause::SchemaViolation))
        .and_then(|a| parse_action(a).map_err(illegal))?;
    if action.target().is_some_and(str::is_empty) {
        return Err(illegal(IllegalCause::SchemaViolation));
    }
    Ok(AgentResponse {
        rationale: rationale.to_owned(),
        action,
    })
}

/// [`parse_agent_output`] over arbitrary bytes, decoding invalid UTF-8
/// lossily.
pub fn parse_agent_output_bytes(raw: &[u8]) -> Result<AgentResponse, IllegalOutput> {
    parse_agent_output(&String::from_utf8_lossy(raw))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cause(raw: &str) -> IllegalCause {
        parse_agent_output(raw).unwrap_err().cause
    }

    #[test]
    fn terminate_schema() {
        let r = parse_agent_output(r#"{"action":{"type":"terminate"},"rationale":"nothing fits"}"#).unwrap();
        assert_eq!(r.action, Action::Terminate);
        assert_eq!(r.rationale, "nothing fits");
    }

    #[test]
    fn search_and_click() {
        let r = parse_agent_output(
            r#"  {"action": {"type": "type_and_submit", "name": "search_bar.search_input", "text": "disney gift card"}, "rationale": "gift"}
"#,
        )
        .unwrap();
        assert_eq!(r.action, Action::type_and_submit("search_bar.search_input", "disney gift card"));
        let r = parse_agent_output("```json\n{\"rationale\":\"x\",\"action\":{\"name\":\"a.b\",\"type\":\"click\"}}\n```").unwrap();
        assert_eq!(r.action, Action::click("a.b"));
        let r = parse_agent_output("```{\"rationale\":\"x\",\"action\":{\"type\":\"terminate\"}}```").unwrap();
        assert_eq!(r.action, Action::Terminate);
    }

    #[test]
    fn schema_violations() {
        assert_eq!(cause(r#"{"action":{"type":"click"}}"#), IllegalCause::SchemaViolation);
        assert_eq!(cause(r#"{"action":{"type":"click","name":"x"}}"#), IllegalCause::SchemaViolation);
        assert_eq!(
            cause(r#"{"action":{"type":"click","name":"x"},"rationale":"r","extra":1}"#),
            IllegalCause::SchemaViolation
        );
        assert_eq!(
            cause(r#"{"action":{"type":"terminate","name":"x"},"rationale":"r"}"#),
            IllegalCause::SchemaViolation
        );
        assert_eq!(cause(r#"{"action":{"type":"click","name":""},"rationale":"r"}"#), IllegalCause::SchemaViolation);
        assert_eq!(cause(r#"{"action":{"type":"click","name":3},"rationale":"r"}"#), IllegalCause::SchemaViolation);
        assert_eq!(cause(r#"[1,2]"#), IllegalCause::SchemaViolation);
    }

    #[test]
    fn unknown_type() {
        assert_eq!(
            cause(r#"{"action":{"type":"scroll","name":"x"},"rationale":"r"}"#),
            IllegalCause::UnknownActionType
        );
    }

    #[test]
    fn not_json() {
        assert_eq!(
            cause(r#"Sure! {"action":{"type":"terminate"},"rationale":"r"}"#),
            IllegalCause::NotJson
        );
        assert_eq!(cause(""), IllegalCause::NotJson);
        assert_eq!(
            cause("```json\n{}\n```\n```json\n{}\n```"),
            IllegalCause::NotJson
        );
        assert_eq!(
            cause(r#"{"action":{"type":"terminate"},"rationale":"r"} {"x":1}"#),
            IllegalCause::NotJson
        );
    }

    #[test]
    fn raw_is_preserved() {
        let e = parse_agent_output("nope").unwrap_err();
        assert_eq!(e.raw, "nope");
    }
}
