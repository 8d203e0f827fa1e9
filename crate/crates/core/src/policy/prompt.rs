use std::fmt::Write;

use super::{Action, PromptSet, StepProposal};
use crate::qa::Document;
use crate::retrieval::RetrievedSet;
use crate::rollout::HopRecord;

const DEMO_SEPARATOR: &str = "---";

/// The model-output form of a step: `Thought: ...` then the action line.
pub fn render_step(step: &StepProposal) -> String {
    match step.action {
        Action::Finish => format!("Thought: {}\nAction: Finish[]", step.thought),
        Action::Search => format!(
            "Thought: {}\nAction: Search[{}]",
            step.thought,
            step.search_query.as_deref().unwrap_or_default()
        ),
    }
}

pub fn render_observation<'a>(docs: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::from("Observation:");
    let mut any = false;
    for (i, doc) in docs.into_iter().enumerate() {
        any = true;
        let _ = write!(out, "\n[{}] {}: {}", i + 1, doc.title, doc.text);
    }
    if !any {
        out.push_str(" No new documents.");
    }
    out
}

/// Question, initial observation and every hop, without instruction or cue.
/// Demonstrations use exactly this format.
pub fn render_trace(question: &str, initial: &RetrievedSet, hops: &[HopRecord]) -> String {
    let mut out = format!("Question: {question}");
    if !initial.is_empty() {
        out.push('\n');
        out.push_str(&render_observation(initial.documents()));
    }
    for hop in hops {
        out.push('\n');
        if hop.proposal.parse_ok {
            out.push_str(&render_step(&hop.proposal));
            if hop.proposal.action == Action::Search {
                out.push('\n');
                if hop.retrieval_ok {
                    out.push_str(&render_observation(hop.retrieved.documents()));
                } else {
                    out.push_str("Observation: Search failed.");
                }
            }
        } else {
            let _ = write!(
                out,
                "Thought: {}\nAction: Invalid[]\nObservation: The previous output did not follow the Thought/Action format.",
                hop.proposal.thought
            );
        }
    }
    out
}

/// Full prompt for the next step: instruction, demos, the trace so far and a
/// trailing `Thought:` cue.
pub fn render_react_prompt(
    question: &str,
    initial: &RetrievedSet,
    hops: &[HopRecord],
    prompt_set: &PromptSet,
) -> String {
    let mut out = String::with_capacity(1024);
    out.push_str(&prompt_set.instruction);
    out.push_str("\n\n");
    for demo in &prompt_set.demos {
        out.push_str(DEMO_SEPARATOR);
        out.push('\n');
        out.push_str(demo);
        out.push('\n');
    }
    if !prompt_set.demos.is_empty() {
        out.push_str(DEMO_SEPARATOR);
        out.push_str("\n\n");
    }
    out.push_str(&render_trace(question, initial, hops));
    out.push_str("\nThought:");
    out
}

/// Prompt for the answer generator over the accumulated context.
pub fn render_answer_prompt<'a>(question: &str, context: impl IntoIterator<Item = &'a Document>) -> String {
    let mut out = String::from(
        "Answer the question using the documents below. Reply with a short answer only.\n\nDocuments:",
    );
    for (i, doc) in context.into_iter().enumerate() {
        let _ = write!(out, "\n[{}] {}: {}", i + 1, doc.title, doc.text);
    }
    let _ = write!(out, "\n\nQuestion: {question}\nAnswer:");
    out
}
