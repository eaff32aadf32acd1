//! Call-driver generation: one short statement of why the customer called,
//! produced by the call-driver adapter for each transcript.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gateway::{CompletionRequest, Gateway};
use crate::transcript::{CallDriver, Transcript};

pub const TRANSCRIPT_SLOT: &str = "{transcript}";

pub const DEFAULT_DRIVER_PROMPT: &str = "[INST] Read the customer call transcript below and state the caller's single primary reason for calling, in at most 20 words. Reply with the reason only, with no preamble.\n\n{transcript} [/INST]";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DriverGenConfig {
    pub prompt_template: String,
    pub adapter: String,
    pub max_words_soft: usize,
    pub max_tokens: u32,
    pub seed: u64,
}

impl Default for DriverGenConfig {
    fn default() -> Self {
        DriverGenConfig {
            prompt_template: DEFAULT_DRIVER_PROMPT.into(),
            adapter: "call-driver".into(),
            max_words_soft: 20,
            max_tokens: 64,
            seed: 0,
        }
    }
}

impl DriverGenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.prompt_template.matches(TRANSCRIPT_SLOT).count() != 1 {
            return Err(Error::Config(format!(
                "driver prompt template must contain exactly one {TRANSCRIPT_SLOT}"
            )));
        }
        if self.max_words_soft < 1 {
            return Err(Error::Config("max_words_soft must be >= 1".into()));
        }
        Ok(())
    }

    pub fn prompt(&self, t: &Transcript) -> String {
        self.prompt_template.replacen(TRANSCRIPT_SLOT, &t.render(), 1)
    }
}

pub fn generate_driver(t: &Transcript, cfg: &DriverGenConfig, gw: &Gateway) -> Result<CallDriver> {
    cfg.validate()?;
    if t.utterances.is_empty() {
        return Err(Error::Validation(format!("transcript {:?} is empty", t.id)));
    }
    let req = CompletionRequest {
        prompt: cfg.prompt(t),
        adapter: Some(cfg.adapter.clone()),
        max_tokens: cfg.max_tokens,
        temperature: 0.0,
        seed: Some(cfg.seed),
    };
    let completion = gw.complete(&req).map_err(|e| Error::Job {
        item: t.id.clone(),
        source: Box::new(e),
    })?;
    if completion.truncated {
        tracing::warn!(item = %t.id, "driver completion hit max_tokens");
    }
    let text = completion.text.trim().lines().next().unwrap_or("").trim();
    if text.is_empty() {
        return Err(Error::EmptyDriver(t.id.clone()));
    }
    let mut driver = CallDriver::new(&t.id, text);
    driver.flagged = driver.word_count > cfg.max_words_soft;
    if driver.flagged {
        tracing::warn!(item = %t.id, words = driver.word_count, "driver longer than soft limit");
    }
    Ok(driver)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemError {
    pub item: String,
    pub index: usize,
    pub error: String,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DriverBatch {
    pub drivers: Vec<CallDriver>,
    pub errors: Vec<ItemError>,
}

/// Generates drivers for every transcript. Output order follows input order;
/// a failing transcript lands in `errors` without stopping the batch.
pub fn generate_batch(ts: &[Transcript], cfg: &DriverGenConfig, gw: &Gateway) -> Result<DriverBatch> {
    cfg.validate()?;
    let results: Vec<Result<CallDriver>> = ts
        .par_iter()
        .map(|t| generate_driver(t, cfg, gw))
        .collect();
    let mut batch = DriverBatch::default();
    for (index, (t, r)) in ts.iter().zip(results).enumerate() {
        match r {
            Ok(d) => batch.drivers.push(d),
            Err(e) => batch.errors.push(ItemError {
                item: t.id.clone(),
                index,
                error: e.to_string(),
            }),
        }
    }
    Ok(batch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::{Completer, Completion, MockCompleter};
    use crate::transcript::{Speaker, Utterance};
    use std::sync::Arc;

    fn transcript(id: &str, caller: &str) -> Transcript {
        Transcript {
            id: id.into(),
            domain_tag: Some("it-helpdesk".into()),
            utterances: vec![
                Utterance {
                    speaker: Speaker::Agent,
                    text: "IT help desk, how can I help?".into(),
                    index: 0,
                    start_ms: None,
                    end_ms: None,
                },
                Utterance {
                    speaker: Speaker::Caller,
                    text: caller.into(),
                    index: 1,
                    start_ms: None,
                    end_ms: None,
                },
            ],
        }
    }

    fn gateway_with(completer: MockCompleter) -> Gateway {
        Gateway::mock_with(completer, 64)
    }

    #[test]
    fn fixture_driver_is_returned_trimmed() {
        let t = transcript("t1", "My laptop died and I need a loaner until it is fixed.");
        let cfg = DriverGenConfig::default();
        let gw = gateway_with(
            MockCompleter::default().with_fixture(&cfg.prompt(&t), "  To request a loaner laptop.\nSure thing!"),
        );
        let d = generate_driver(&t, &cfg, &gw).unwrap();
        assert_eq!(d.text, "To request a loaner laptop.");
        assert_eq!(d.word_count, 5);
        assert!(!d.flagged);
    }

    #[test]
    fn verbose_driver_is_flagged_not_truncated() {
        let t = transcript("t1", "laptop");
        let cfg = DriverGenConfig::default();
        let verbose = "Caller requested information on how to request an additional laptop with specifications and inquired about the approval and delivery process.";
        let gw = gateway_with(MockCompleter::default().with_fixture(&cfg.prompt(&t), verbose));
        let d = generate_driver(&t, &cfg, &gw).unwrap();
        assert_eq!(d.text, verbose);
        assert_eq!(d.word_count, 20);
        assert!(!d.flagged, "20 words sits exactly on the soft limit");

        let strict = DriverGenConfig {
            max_words_soft: 15,
            ..cfg.clone()
        };
        let gw = gateway_with(MockCompleter::default().with_fixture(&strict.prompt(&t), verbose));
        let d = generate_driver(&t, &strict, &gw).unwrap();
        assert_eq!(d.text, verbose);
        assert!(d.flagged);
    }

    #[test]
    fn empty_completion_is_an_error() {
        let t = transcript("t1", "x");
        let cfg = DriverGenConfig::default();
        let gw = gateway_with(MockCompleter::default().with_fixture(&cfg.prompt(&t), "   \n"));
        assert!(matches!(generate_driver(&t, &cfg, &gw), Err(Error::EmptyDriver(_))));
    }

    #[test]
    fn template_needs_exactly_one_slot() {
        let mut cfg = DriverGenConfig::default();
        cfg.prompt_template = "no slot".into();
        assert!(cfg.validate().is_err());
        cfg.prompt_template = "{transcript} {transcript}".into();
        assert!(cfg.validate().is_err());
    }

    struct FailOn(&'static str);
    impl Completer for FailOn {
        fn complete(&self, req: &CompletionRequest) -> Result<Completion> {
            if req.prompt.contains(self.0) {
                Err(Error::Transport("boom".into()))
            } else {
                MockCompleter::default().complete(req)
            }
        }
    }

    #[test]
    fn batch_isolates_failures_and_keeps_order() {
        let ts = vec![
            transcript("a", "I need a loaner laptop."),
            transcript("b", "POISON please."),
            transcript("c", "My password expired."),
        ];
        let mut gw = Gateway::mock();
        gw.completer = Arc::new(FailOn("POISON"));
        let batch = generate_batch(&ts, &DriverGenConfig::default(), &gw).unwrap();
        let ids: Vec<&str> = batch.drivers.iter().map(|d| d.transcript_id.as_str()).collect();
        assert_eq!(ids, vec!["a", "c"]);
        assert_eq!(batch.errors.len(), 1);
        assert_eq!(batch.errors[0].item, "b");
        assert_eq!(batch.errors[0].index, 1);
    }

    #[test]
    fn empty_batch() {
        let batch = generate_batch(&[], &DriverGenConfig::default(), &Gateway::mock()).unwrap();
        assert!(batch.drivers.is_empty() && batch.errors.is_empty());
    }

    #[test]
    fn large_mock_batch_is_ordered_and_deterministic() {
        let ts: Vec<Transcript> = (0..100)
            .map(|i| transcript(&format!("t{i:03}"), &format!("I need help with ticket {i}.")))
            .collect();
        let cfg = DriverGenConfig::default();
        let a = generate_batch(&ts, &cfg, &Gateway::mock()).unwrap();
        let b = generate_batch(&ts, &cfg, &Gateway::mock()).unwrap();
        assert_eq!(a.drivers.len(), 100);
        assert_eq!(a, b);
        for (t, d) in ts.iter().zip(&a.drivers) {
            assert_eq!(t.id, d.transcript_id);
            assert_eq!(d.word_count, crate::text::word_count(&d.text));
        }
    }
}
