use super::{Action, StepProposal};

const THOUGHT: &str = "Thought:";
const ACTION: &str = "Action:";

fn strip_prefix_ci<'a>(s: &'a str, prefix: &str) -> Option<&'a str> {
    let head = s.get(..prefix.len())?;
    head.eq_ignore_ascii_case(prefix).then(|| &s[prefix.len()..])
}

/// Parses the text following an `Action:` marker.
fn parse_action(s: &str) -> Option<(Action, Option<String>)> {
    let s = s.trim_start();
    if let Some(rest) = strip_prefix_ci(s, "search[") {
        let query = rest[..rest.find(']')?].trim();
        if query.is_empty() {
            return None;
        }
        return Some((Action::Search, Some(query.to_owned())));
    }
    if let Some(rest) = strip_prefix_ci(s, "finish[") {
        rest.find(']')?;
        return Some((Action::Finish, None));
    }
    None
}

/// Extracts the thought and the first well-formed action from raw model output.
///
/// The thought is the text between the first `Thought:` (or the start of the
/// output, since prompts end with a `Thought:` cue) and the first `Action:`.
/// Text after the first well-formed action is ignored.
pub fn parse_step(raw: &str) -> StepProposal {
    let body = match raw.find(THOUGHT) {
        Some(i) => &raw[i + THOUGHT.len()..],
        None => raw,
    };
    let mut thought_end = None;
    let mut from = 0;
    while let Some(pos) = body[from..].find(ACTION) {
        let at = from + pos;
        let end = *thought_end.get_or_insert(at);
        if let Some((action, search_query)) = parse_action(&body[at + ACTION.len()..]) {
            return StepProposal {
                thought: body[..end].trim().to_owned(),
                action,
                search_query,
                raw_text: raw.to_owned(),
                parse_ok: true,
            };
        }
        from = at + ACTION.len();
    }
    StepProposal::failed(raw)
}
