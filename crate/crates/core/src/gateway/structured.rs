//! Extraction of typed values from model replies.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;
use thiserror::Error;

use super::SchemaId;
use crate::model::{Actor, ApiMapping, Critique, HighLevelRecord, LowLevelRecord};

#[derive(Debug, Error, PartialEq)]
pub enum ParseError {
    #[error("no conforming {schema:?} document: {reason}")]
    OutputParseFailure { schema: SchemaId, reason: String },
    #[error("could not parse critique: {0}")]
    CritiqueParseFailure(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum StructuredOutput {
    Description(String),
    Actors(Vec<Actor>),
    HighLevel(Vec<HighLevelRecord>),
    LowLevel(Vec<LowLevelRecord>),
    Critique(Critique),
    ApiMappings(Vec<ApiMapping>),
}

/// Finds exactly one JSON document in `raw` that conforms to `schema`.
/// Surrounding prose and code fences are ignored.
pub fn parse_structured_output(raw: &str, schema: SchemaId) -> Result<StructuredOutput, ParseError> {
    if schema == SchemaId::Description {
        let text = raw.trim();
        if text.is_empty() {
            return Err(failure(schema, "empty reply"));
        }
        return Ok(StructuredOutput::Description(text.to_string()));
    }
    let mut matches = Vec::new();
    let mut last_reason = "no JSON document found".to_string();
    for value in json_documents(raw) {
        match conform(value, schema) {
            Ok(v) => matches.push(v),
            Err(reason) => last_reason = reason,
        }
    }
    match matches.len() {
        1 => Ok(matches.pop().expect("one match")),
        0 => Err(failure(schema, &last_reason)),
        n => Err(failure(schema, &format!("{n} conforming documents, expected one"))),
    }
}

fn failure(schema: SchemaId, reason: &str) -> ParseError {
    ParseError::OutputParseFailure {
        schema,
        reason: reason.to_string(),
    }
}

/// Top-level JSON values embedded in free text, in order of appearance.
fn json_documents(raw: &str) -> Vec<Value> {
    let mut out = Vec::new();
    let mut pos = 0;
    while pos < raw.len() {
        let Some(offset) = raw[pos..].find(['{', '[']) else {
            break;
        };
        let start = pos + offset;
        let mut stream = serde_json::Deserializer::from_str(&raw[start..]).into_iter::<Value>();
        match stream.next() {
            Some(Ok(value)) => {
                out.push(value);
                pos = start + stream.byte_offset();
            }
            _ => pos = start + 1,
        }
    }
    out
}

fn unwrap_list(value: Value, keys: &[&str]) -> Result<Vec<Value>, String> {
    match value {
        Value::Array(items) => Ok(items),
        Value::Object(mut map) => {
            for key in keys {
                if let Some(Value::Array(items)) = map.remove(*key) {
                    return Ok(items);
                }
            }
            Err(format!("object without any of the keys {keys:?}"))
        }
        other => Err(format!("expected a list, found {other}")),
    }
}

fn string_field(item: &Value, keys: &[&str]) -> Option<String> {
    keys.iter()
        .find_map(|k| item.get(*k).and_then(Value::as_str))
        .map(|s| s.trim().to_string())
}

fn non_empty_field(item: &Value, keys: &[&str], what: &str) -> Result<String, String> {
    string_field(item, keys)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| format!("item without a non-empty {what}"))
}

fn conform(value: Value, schema: SchemaId) -> Result<StructuredOutput, String> {
    match schema {
        SchemaId::Description => unreachable!("prose is handled before JSON extraction"),
        SchemaId::ActorList => {
            let items = unwrap_list(value, &["actors"])?;
            items
                .iter()
                .map(|item| {
                    Ok(Actor::new(
                        non_empty_field(item, &["name"], "name")?,
                        string_field(item, &["descr", "description"]).unwrap_or_default(),
                    ))
                })
                .collect::<Result<_, String>>()
                .map(StructuredOutput::Actors)
        }
        SchemaId::HighLevelGoalList => {
            let items = unwrap_list(value, &["goals", "high_level", "high_level_goals"])?;
            items
                .iter()
                .map(|item| {
                    Ok(HighLevelRecord {
                        text: non_empty_field(item, &["text", "goal"], "text")?,
                        actor: Some(non_empty_field(item, &["actor"], "actor")?),
                    })
                })
                .collect::<Result<_, String>>()
                .map(StructuredOutput::HighLevel)
        }
        SchemaId::LowLevelGoalList => {
            let items = unwrap_list(value, &["goals", "low_level", "low_level_goals"])?;
            items
                .iter()
                .map(|item| {
                    let parent = item
                        .get("parent")
                        .and_then(Value::as_u64)
                        .ok_or("item without an integer parent")?;
                    Ok(LowLevelRecord {
                        text: non_empty_field(item, &["text", "goal"], "text")?,
                        parent: Some(parent as usize),
                    })
                })
                .collect::<Result<_, String>>()
                .map(StructuredOutput::LowLevel)
        }
        SchemaId::Critique => {
            let score = match value.get("score") {
                Some(Value::Number(n)) => n.as_f64(),
                Some(Value::String(s)) => s.trim().trim_end_matches("/10").trim().parse().ok(),
                _ => None,
            }
            .ok_or("object without a numeric score")?;
            let comment = string_field(&value, &["comment", "feedback"]).unwrap_or_default();
            Critique::new(score, comment)
                .map(StructuredOutput::Critique)
                .ok_or_else(|| format!("score {score} outside [0, 10]"))
        }
        SchemaId::ApiMappingList => {
            let items = unwrap_list(value, &["mappings", "api_mappings"])?;
            items
                .iter()
                .map(|item| {
                    Ok(ApiMapping {
                        high_level_goal: string_field(item, &["high_level_goal"]).unwrap_or_default(),
                        low_level_goal: non_empty_field(item, &["low_level_goal"], "low_level_goal")?,
                        api_name: non_empty_field(item, &["api_name"], "api_name")?,
                    })
                })
                .collect::<Result<_, String>>()
                .map(StructuredOutput::ApiMappings)
        }
    }
}

fn score_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)score\W{0,4}:\W{0,4}?\s*([+-]?\d+(?:\.\d+)?)(?:\s*/\s*10)?").expect("valid regex")
    })
}

fn comment_pattern() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?is)comment[\s*_]*:[\s*_]*(.*)$").expect("valid regex"))
}

/// Accepts the JSON form `{"score": 8.6, "comment": "..."}` or the textual
/// form `Score: 3/10 Comment: ...`.
pub fn parse_critique(raw: &str) -> Result<Critique, ParseError> {
    if let Ok(StructuredOutput::Critique(c)) = parse_structured_output(raw, SchemaId::Critique) {
        return Ok(c);
    }
    let caps = score_pattern()
        .captures(raw)
        .ok_or_else(|| ParseError::CritiqueParseFailure(format!("no score in {raw:?}")))?;
    let score: f64 = caps[1]
        .parse()
        .map_err(|_| ParseError::CritiqueParseFailure(format!("bad score {:?}", &caps[1])))?;
    let comment = comment_pattern()
        .captures(raw)
        .map(|c| c[1].trim().trim_end_matches('*').trim().to_string())
        .unwrap_or_default();
    Critique::new(score, comment)
        .ok_or_else(|| ParseError::CritiqueParseFailure(format!("score {score} outside [0, 10]")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn actor_list_bare_array() {
        let out = parse_structured_output(
            r#"[{"name":"Citizens","descr":"residents reporting issues"}]"#,
            SchemaId::ActorList,
        )
        .unwrap();
        let StructuredOutput::Actors(a) = out else { panic!() };
        assert_eq!(a, vec![Actor::new("Citizens", "residents reporting issues")]);
    }

    #[test]
    fn tolerates_prose_and_fences() {
        let raw = "Sure! Here are the actors:\n```json\n{\"actors\": [{\"name\": \"Admin\", \"description\": \"d\"}]}\n```\nLet me know [if] you need more.";
        let StructuredOutput::Actors(a) = parse_structured_output(raw, SchemaId::ActorList).unwrap() else {
            panic!()
        };
        assert_eq!(a[0].name, "Admin");
    }

    #[test]
    fn prose_without_json_fails() {
        assert!(matches!(
            parse_structured_output("I cannot find any actors.", SchemaId::ActorList),
            Err(ParseError::OutputParseFailure { .. })
        ));
    }

    #[test]
    fn two_conforming_documents_fail() {
        let raw = r#"[{"name":"A"}] or maybe [{"name":"B"}]"#;
        assert!(parse_structured_output(raw, SchemaId::ActorList).is_err());
    }

    #[test]
    fn goal_lists_require_links() {
        let hl = parse_structured_output(r#"[{"actor":"A","goal":"g"}]"#, SchemaId::HighLevelGoalList).unwrap();
        assert_eq!(
            hl,
            StructuredOutput::HighLevel(vec![HighLevelRecord { text: "g".into(), actor: Some("A".into()) }])
        );
        assert!(parse_structured_output(r#"["g"]"#, SchemaId::HighLevelGoalList).is_err());
        assert!(parse_structured_output(r#"[{"text":"l"}]"#, SchemaId::LowLevelGoalList).is_err());
        let ll = parse_structured_output(r#"[{"parent":1,"text":"l"}]"#, SchemaId::LowLevelGoalList).unwrap();
        assert_eq!(
            ll,
            StructuredOutput::LowLevel(vec![LowLevelRecord { text: "l".into(), parent: Some(1) }])
        );
    }

    #[test]
    fn critique_json_object() {
        let out = parse_structured_output(r#"{"score": 3, "comment": "Out of context"}"#, SchemaId::Critique).unwrap();
        assert_eq!(out, StructuredOutput::Critique(Critique::new(3.0, "Out of context").unwrap()));
    }

    #[test]
    fn api_mappings() {
        let raw = r#"[{"high_level_goal":"Manage","low_level_goal":"Register","api_name":"insertUsingPOST"}]"#;
        let StructuredOutput::ApiMappings(m) = parse_structured_output(raw, SchemaId::ApiMappingList).unwrap() else {
            panic!()
        };
        assert_eq!(m[0].api_name, "insertUsingPOST");
    }

    #[test]
    fn critique_forms() {
        let c = parse_critique(r#"{"score": 8.6, "comment": "minor phrasing issues"}"#).unwrap();
        assert_eq!(c.score, 8.6);
        assert_eq!(c.comment, "minor phrasing issues");

        let c = parse_critique("***Score:*** 3/10 ***Comment:*** Out of context.").unwrap();
        assert_eq!(c, Critique::new(3.0, "Out of context.").unwrap());

        let c = parse_critique("Score: 7.5\nComment: missing actors").unwrap();
        assert_eq!(c.score, 7.5);
        assert_eq!(c.comment, "missing actors");

        assert!(matches!(parse_critique("Score: eleven"), Err(ParseError::CritiqueParseFailure(_))));
        assert!(parse_critique("Score: 11/10").is_err());
        assert!(parse_critique("Score: -1").is_err());
        assert!(parse_critique(r#"{"score": 12}"#).is_err());
    }

    #[test]
    fn description_is_trimmed_prose() {
        assert_eq!(
            parse_structured_output("  A system.  ", SchemaId::Description).unwrap(),
            StructuredOutput::Description("A system.".into())
        );
        assert!(parse_structured_output("  ", SchemaId::Description).is_err());
    }
}
