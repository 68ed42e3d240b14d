//! Decoding model output into tool calls.
//!
//! The shipped codec reads a fenced block tagged `action` holding JSON:
//!
//! ````text
//! Thought: I should read the idea first.
//! ```action
//! {"tool": "see_file", "args": {"filename": "working_idea.json"}}
//! ```
//! ````
//!
//! The block may also hold a JSON array of such objects; calls run in order.

use serde_json::Value;
use thiserror::Error;

use crate::runtime::tool::ToolCall;

pub const ACTION_FENCE: &str = "```action";

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedAction {
    pub reasoning: String,
    pub calls: Vec<ToolCall>,
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("{message}")]
pub struct ActionParseError {
    pub message: String,
    /// Free text that preceded the failure, kept as the step's reasoning.
    pub reasoning: String,
}

/// Seam between model output and tool calls.
pub trait ActionCodec: Send + Sync {
    fn decode(&self, model_output: &str) -> Result<ParsedAction, ActionParseError>;
}

#[derive(Debug, Default, Clone, Copy)]
pub struct JsonActionCodec;

impl ActionCodec for JsonActionCodec {
    fn decode(&self, model_output: &str) -> Result<ParsedAction, ActionParseError> {
        parse_action(model_output)
    }
}

pub fn parse_action(model_output: &str) -> Result<ParsedAction, ActionParseError> {
    let Some(start) = model_output.find(ACTION_FENCE) else {
        return Err(ActionParseError {
            message: format!(
                "no action block found. Wrap your tool calls in a {ACTION_FENCE} fenced block \
                 containing a JSON object like {{\"tool\": \"final_answer\", \"args\": {{\"answer\": \"...\"}}}}."
            ),
            reasoning: clean_reasoning(model_output),
        });
    };
    let reasoning = clean_reasoning(&model_output[..start]);
    let fail = |message: String| ActionParseError {
        message,
        reasoning: reasoning.clone(),
    };

    let after_fence = &model_output[start + ACTION_FENCE.len()..];
    let body_start = match after_fence.find('\n') {
        Some(nl) if after_fence[..nl].trim().is_empty() => nl + 1,
        Some(_) | None if after_fence.trim_start().starts_with(['{', '[']) => {
            after_fence.len() - after_fence.trim_start().len()
        }
        _ => return Err(fail("malformed action block: expected a newline after the opening fence".into())),
    };
    let body = &after_fence[body_start..];

    let mut stream = serde_json::Deserializer::from_str(body).into_iter::<Value>();
    let value = match stream.next() {
        Some(Ok(value)) => value,
        Some(Err(err)) => return Err(fail(format!("malformed action block: {err}"))),
        None => return Err(fail("empty action block".into())),
    };
    let rest = &body[stream.byte_offset()..];
    if !rest.trim_start().starts_with("```") {
        return Err(fail(
            "malformed action block: expected a closing ``` fence right after the JSON".into(),
        ));
    }

    let items = match value {
        Value::Array(items) => items,
        obj @ Value::Object(_) => vec![obj],
        _ => {
            return Err(fail(
                "malformed action block: expected a tool call object or a list of them".into(),
            ))
        }
    };
    if items.is_empty() {
        return Err(fail("empty action block: no tool calls given".into()));
    }
    let mut calls = Vec::with_capacity(items.len());
    for (i, item) in items.into_iter().enumerate() {
        calls.push(decode_call(item).map_err(|m| fail(format!("malformed tool call #{}: {m}", i + 1)))?);
    }
    Ok(ParsedAction { reasoning, calls })
}

fn decode_call(item: Value) -> Result<ToolCall, String> {
    let Value::Object(mut obj) = item else {
        return Err("each tool call must be a JSON object".into());
    };
    let tool = match obj.remove("tool") {
        Some(Value::String(name)) if !name.is_empty() => name,
        _ => return Err("missing string field \"tool\"".into()),
    };
    let args = match obj.remove("args") {
        None | Some(Value::Null) => serde_json::Map::new(),
        Some(Value::Object(map)) => map,
        Some(_) => return Err(format!("\"args\" of {tool} must be a JSON object")),
    };
    if let Some(key) = obj.keys().next() {
        return Err(format!("unexpected field \"{key}\" in call to {tool}"));
    }
    Ok(ToolCall { tool, args })
}

fn clean_reasoning(text: &str) -> String {
    let trimmed = text.trim();
    trimmed
        .strip_prefix("Thought:")
        .map(str::trim_start)
        .unwrap_or(trimmed)
        .to_string()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn single_call_decodes() {
        let out = "Thought: read it\n```action\n{\"tool\": \"see_file\", \"args\": {\"filename\": \"a.txt\"}}\n```";
        let parsed = parse_action(out).unwrap();
        assert_eq!(parsed.reasoning, "read it");
        assert_eq!(
            parsed.calls,
            vec![ToolCall::new("see_file", json!({"filename": "a.txt"}))]
        );
    }

    #[test]
    fn two_calls_in_order() {
        let out = "```action\n[\n {\"tool\": \"create_file_with_content\", \"args\": {\"filename\": \"x.md\", \"content\": \"```not a fence```\"}},\n {\"tool\": \"see_file\", \"args\": {\"filename\": \"x.md\"}}\n]\n```\n";
        let parsed = parse_action(out).unwrap();
        let expected = vec![
            ToolCall::new(
                "create_file_with_content",
                json!({"filename": "x.md", "content": "```not a fence```"}),
            ),
            ToolCall::new("see_file", json!({"filename": "x.md"})),
        ];
        assert_eq!(parsed.calls, expected);
        assert_eq!(parsed.reasoning, "");
    }

    #[test]
    fn missing_block_is_reported() {
        let err = parse_action("I think I am done.").unwrap_err();
        assert!(err.message.starts_with("no action block found"));
        assert_eq!(err.reasoning, "I think I am done.");
    }

    #[test]
    fn malformed_json_and_unterminated_blocks() {
        assert!(parse_action("```action\n{\"tool\": \n```")
            .unwrap_err()
            .message
            .starts_with("malformed action block"));
        assert!(parse_action("```action\n{\"tool\": \"x\"}\n")
            .unwrap_err()
            .message
            .contains("closing ``` fence"));
        assert!(parse_action("```action\n[]\n```")
            .unwrap_err()
            .message
            .starts_with("empty action block"));
        assert!(parse_action("```action\n{\"args\": {}}\n```")
            .unwrap_err()
            .message
            .contains("missing string field \"tool\""));
    }
}
