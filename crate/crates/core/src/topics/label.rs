use rayon::prelude::*;

use super::{LabelingConfig, TopicModel, UNLABELED};
use crate::driver_gen::ItemError;
use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway};

pub const LABEL_PROMPT: &str = "[INST] Generate a title in up to five words for the following phrases: {}; and most common words: {}. [/INST]";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelOutcome {
    pub label: String,
    /// The reply ran past the word cap and was cut.
    pub flagged: bool,
}

pub fn label_prompt(template: &str, representatives: &[String], keywords: &[String]) -> String {
    template
        .replacen("{}", &representatives.join("; "), 1)
        .replacen("{}", &keywords.join(", "), 1)
}

/// Asks the base model (no adapter) for a short title.
pub fn label_cluster(
    representatives: &[String],
    keywords: &[String],
    gw: &Gateway,
    cfg: &LabelingConfig,
) -> Result<LabelOutcome> {
    if representatives.is_empty() {
        return Err(Error::Validation("labeling needs at least one representative".into()));
    }
    let mut req = CompletionRequest::new(label_prompt(&cfg.prompt_template, representatives, keywords));
    req.max_tokens = cfg.max_tokens;
    let reply = gw.complete(&req)?;
    let line = reply.text.trim().lines().next().unwrap_or("").trim();
    let words: Vec<&str> = line.split_whitespace().collect();
    if words.is_empty() {
        return Err(Error::Validation("backend returned an empty label".into()));
    }
    let flagged = words.len() > cfg.max_label_words;
    Ok(LabelOutcome {
        label: words[..words.len().min(cfg.max_label_words)].join(" "),
        flagged,
    })
}

/// Labels every cluster in parallel. A failing cluster keeps the placeholder
/// and its error is returned; the model version moves forward once.
pub fn label_model(model: &mut TopicModel, gw: &Gateway, cfg: &LabelingConfig) -> Result<Vec<ItemError>> {
    cfg.validate()?;
    let outcomes: Vec<Result<LabelOutcome>> = model
        .clusters
        .par_iter()
        .map(|c| label_cluster(&c.representatives, &c.keywords, gw, cfg))
        .collect();
    let mut errors = Vec::new();
    for (index, (c, r)) in model.clusters.iter_mut().zip(outcomes).enumerate() {
        match r {
            Ok(o) => {
                if o.flagged {
                    tracing::warn!(cluster = c.id, label = %o.label, "label cut to word cap");
                }
                c.label = o.label;
                c.label_flagged = o.flagged;
            }
            Err(e) => {
                tracing::warn!(cluster = c.id, error = %e, "labeling failed");
                c.label = UNLABELED.into();
                c.label_flagged = false;
                errors.push(ItemError {
                    item: format!("cluster {}", c.id),
                    index,
                    error: e.to_string(),
                });
            }
        }
    }
    model.version += 1;
    Ok(errors)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Completer, Completion, MockCompleter};
    use crate::topics::tests::{epoch, themed_drivers};
    use crate::topics::build_topic_model;
    use crate::cluster::ClusterParams;
    use std::sync::Arc;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn prompt_is_filled_exactly() {
        let p = label_prompt(LABEL_PROMPT, &s(&["reset password", "unlock account"]), &s(&["password", "reset", "account"]));
        assert_eq!(
            p,
            "[INST] Generate a title in up to five words for the following phrases: reset password; unlock account; and most common words: password, reset, account. [/INST]"
        );
    }

    #[test]
    fn fixture_label_is_used() {
        let cfg = LabelingConfig::default();
        let reps = s(&["Caller wants to roll over a 401k"]);
        let kw = s(&["retirement", "plan", "rollover"]);
        let prompt = label_prompt(&cfg.prompt_template, &reps, &kw);
        let gw = Gateway::mock_with(
            MockCompleter::default().with_fixture(&prompt, "Discussing Retirement Planning Challenges\n"),
            64,
        );
        let o = label_cluster(&reps, &kw, &gw, &cfg).unwrap();
        assert_eq!(o.label, "Discussing Retirement Planning Challenges");
        assert!(!o.flagged);
    }

    #[test]
    fn long_label_is_cut_and_flagged() {
        let cfg = LabelingConfig::default();
        let reps = s(&["x"]);
        let kw = s(&["y"]);
        let prompt = label_prompt(&cfg.prompt_template, &reps, &kw);
        let gw = Gateway::mock_with(
            MockCompleter::default().with_fixture(&prompt, "one two three four five six seven eight nine ten"),
            64,
        );
        let o = label_cluster(&reps, &kw, &gw, &cfg).unwrap();
        assert_eq!(o.label, "one two three four five six seven eight");
        assert!(o.flagged);
    }

    #[test]
    fn mock_label_is_deterministic_keywords() {
        let o = label_cluster(&s(&["reset password"]), &s(&["password", "reset"]), &Gateway::mock(), &LabelingConfig::default()).unwrap();
        assert_eq!(o.label, "Password Reset");
    }

    struct Down;
    impl Completer for Down {
        fn complete(&self, _: &CompletionRequest) -> Result<Completion> {
            Err(Error::Transport("down".into()))
        }
    }

    #[test]
    fn failures_keep_placeholder_and_are_recorded() {
        let (mut model, _) = build_topic_model(
            &themed_drivers(6),
            &Gateway::mock(),
            &[ClusterParams::new(5, 1)],
            &LabelingConfig::default(),
            epoch(),
        )
        .unwrap();
        let mut gw = Gateway::mock();
        gw.completer = Arc::new(Down);
        let v = model.version;
        let errors = label_model(&mut model, &gw, &LabelingConfig::default()).unwrap();
        assert_eq!(errors.len(), model.clusters.len());
        assert!(model.clusters.iter().all(|c| c.label == UNLABELED));
        assert_eq!(model.version, v + 1);

        let errors = label_model(&mut model, &Gateway::mock(), &LabelingConfig::default()).unwrap();
        assert!(errors.is_empty());
        assert!(model.clusters.iter().all(|c| c.is_labeled()));
    }
}
