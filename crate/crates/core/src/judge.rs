use std::sync::Arc;

use crate::backend::{ChatBackend, ChatMessage, ChatRequest};
use crate::error::{Error, Result};

/// Case-folded, trimmed, whitespace-collapsed form of an answer.
pub fn normalize_answer(s: &str) -> String {
    s.split_whitespace().map(str::to_lowercase).collect::<Vec<_>>().join(" ")
}

pub trait Judge: Send + Sync {
    fn judge(&self, predicted: &str, gold: &str) -> Result<bool>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExactMatchJudge;

impl Judge for ExactMatchJudge {
    fn judge(&self, predicted: &str, gold: &str) -> Result<bool> {
        Ok(normalize_answer(predicted) == normalize_answer(gold))
    }
}

/// Asks a chat model whether a prediction matches the reference answer.
pub struct RemoteJudge {
    backend: Arc<dyn ChatBackend>,
}

impl RemoteJudge {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        RemoteJudge { backend }
    }
}

impl Judge for RemoteJudge {
    fn judge(&self, predicted: &str, gold: &str) -> Result<bool> {
        let prompt = format!(
            "Reference answer: {gold}\nPredicted answer: {predicted}\n\
             Does the predicted answer mean the same as the reference? \
             Reply with exactly one word: CORRECT or INCORRECT."
        );
        let req = ChatRequest::new(vec![ChatMessage::user(prompt)]).with_temperature(0.0);
        let choice = self
            .backend
            .complete(&req)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::ParseFailure("judge returned no choices".into()))?;
        let verdict = choice.content.trim().to_uppercase();
        if verdict.starts_with("INCORRECT") {
            Ok(false)
        } else if verdict.starts_with("CORRECT") {
            Ok(true)
        } else {
            Err(Error::ParseFailure(format!("unrecognized verdict `{}`", choice.content.trim())))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_match_normalizes() {
        let j = ExactMatchJudge;
        assert!(j.judge("  Paris ", "paris").unwrap());
        assert!(j.judge("New   York\n", "new york").unwrap());
        assert!(!j.judge("New York City", "new york").unwrap());
    }
}
