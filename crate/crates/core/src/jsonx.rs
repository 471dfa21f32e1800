//! Tolerant extraction of JSON payloads from free-form model output.

use serde_json::{Map, Value};

/// Removes a surrounding markdown code fence (```` ```json ... ``` ````) and
/// outer whitespace. Text without a leading fence is only trimmed.
pub fn strip_fences(raw: &str) -> &str {
    let trimmed = raw.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    // Drop the info string (e.g. `json`) on the opening fence line.
    let body = match rest.find('\n') {
        Some(nl) => &rest[nl + 1..],
        None => rest.trim_start_matches(|c: char| c.is_ascii_alphanumeric()),
    };
    let body = body.trim_end();
    body.strip_suffix("```").unwrap_or(body).trim()
}

/// Returns the first well-formed JSON object embedded in `text`, scanning
/// each `{` in order.
pub fn first_json_object(text: &str) -> Option<Map<String, Value>> {
    for (idx, _) in text.match_indices('{') {
        let mut stream = serde_json::Deserializer::from_str(&text[idx..]).into_iter::<Value>();
        if let Some(Ok(Value::Object(map))) = stream.next() {
            return Some(map);
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strips_language_fence() {
        assert_eq!(strip_fences("```json\n{\"a\": 1}\n```"), "{\"a\": 1}");
        assert_eq!(strip_fences("  ```\nX\n```  "), "X");
        assert_eq!(strip_fences("plain"), "plain");
    }

    #[test]
    fn finds_object_after_prose() {
        let map = first_json_object("Sure! Here it is: {\"k\": [1, 2]} thanks").unwrap();
        assert_eq!(map["k"], serde_json::json!([1, 2]));
    }

    #[test]
    fn skips_broken_leading_brace() {
        let map = first_json_object("{ broken {\"ok\": true}").unwrap();
        assert_eq!(map["ok"], Value::Bool(true));
        assert!(first_json_object("no braces here").is_none());
        assert!(first_json_object("[1, 2, 3]").is_none());
    }
}
