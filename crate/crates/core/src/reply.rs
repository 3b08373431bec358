//! Helpers for pulling structured payloads out of model replies.
//!
//! Models often wrap JSON in markdown fences or add a sentence before it.
//! These helpers locate the payload; the callers still parse it strictly.

/// Strips a surrounding markdown code fence, if present.
pub fn strip_fence(text: &str) -> &str {
    let t = text.trim();
    if let Some(rest) = t.strip_prefix("```") {
        // drop the info string (e.g. `json`, `sql`)
        let body = match rest.find('\n') {
            Some(i) => &rest[i + 1..],
            None => rest,
        };
        let body = body.trim_end();
        return body.strip_suffix("```").unwrap_or(body).trim();
    }
    t
}

/// Returns the outermost JSON object or array in `text`.
pub fn json_payload(text: &str) -> Option<&str> {
    let t = strip_fence(text);
    let start = t.find(['{', '['])?;
    let close = match t.as_bytes()[start] {
        b'{' => '}',
        _ => ']',
    };
    let end = t.rfind(close)?;
    (end > start).then(|| &t[start..=end])
}

/// Parses the JSON payload of a reply into `T`.
pub fn parse_json<T: serde::de::DeserializeOwned>(text: &str) -> Option<T> {
    serde_json::from_str(json_payload(text)?).ok()
}
