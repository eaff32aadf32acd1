//! Seeded synthetic transcripts for demos and end-to-end tests.
//!
//! Most calls follow one of a handful of help-desk and shipping themes; the
//! rest are one-off requests with their own vocabulary. Every caller opens
//! with the reason for the call followed by a question, which is what the mock
//! completer and the FAQ tracer key on.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::transcript::{Speaker, Transcript, Utterance};

struct Theme {
    domain: &'static str,
    leads: &'static [&'static str],
    questions: &'static [&'static str],
    followups: &'static [&'static str],
}

const THEMES: &[Theme] = &[
    Theme {
        domain: "it-helpdesk",
        leads: &[
            "I need a loaner laptop while my laptop is being repaired.",
            "I am requesting a loaner laptop because my laptop broke.",
            "My laptop broke and I need a loaner laptop.",
            "Could I get a loaner laptop until my laptop is repaired?",
        ],
        questions: &[
            "How long can I keep the loaner laptop?",
            "Where do I pick up the loaner laptop?",
            "Does the loaner laptop come with my software?",
        ],
        followups: &["Thanks, I will pick it up today.", "Great, that works for me."],
    },
    Theme {
        domain: "it-helpdesk",
        leads: &[
            "I forgot my password and need a password reset.",
            "My account password expired and I need a reset.",
            "I need a password reset for my account.",
            "Please reset my account password, it stopped working.",
        ],
        questions: &[
            "How often do I have to change my password?",
            "Can I reset my password myself next time?",
            "Why did my password expire so soon?",
        ],
        followups: &["Okay, I can log in now.", "That worked, thank you."],
    },
    Theme {
        domain: "it-helpdesk",
        leads: &[
            "My VPN connection keeps dropping when I work from home.",
            "The VPN connection drops every few minutes at home.",
            "I cannot keep a stable VPN connection from home.",
            "My VPN keeps disconnecting while working from home.",
        ],
        questions: &[
            "Is there a newer VPN client I should install?",
            "Does the VPN work on my home router?",
            "Why does the VPN disconnect so often?",
        ],
        followups: &["I will try reinstalling the client.", "Okay, I will restart my router."],
    },
    Theme {
        domain: "it-helpdesk",
        leads: &[
            "I want to order a new monitor for my desk.",
            "I need to order equipment, a second monitor for my desk.",
            "Can I order a new monitor and keyboard for my desk?",
            "I would like to order a monitor for my new desk.",
        ],
        questions: &[
            "Who approves equipment orders?",
            "How long does monitor delivery take?",
            "Can I choose the monitor size?",
        ],
        followups: &["I will submit the order form.", "Thanks, I will wait for approval."],
    },
    Theme {
        domain: "shipping",
        leads: &[
            "My package has not arrived and tracking shows no update.",
            "The package tracking has not updated in a week.",
            "I am still waiting for my package, tracking is stuck.",
            "My package tracking shows no movement and it has not arrived.",
        ],
        questions: &[
            "When will my package be delivered?",
            "Can you open an investigation for my package?",
            "Why is the tracking not updating?",
        ],
        followups: &["Please email me when it moves.", "Okay, I will check tomorrow."],
    },
    Theme {
        domain: "shipping",
        leads: &[
            "My parcel arrived damaged and I want a refund.",
            "The parcel was damaged in delivery, I need a refund.",
            "I received a damaged parcel and would like a refund.",
            "I want a refund because my parcel arrived broken and damaged.",
        ],
        questions: &[
            "How long does a refund take?",
            "Do I need to send the damaged parcel back?",
            "Can I get a replacement instead of a refund?",
        ],
        followups: &["I will upload the photos tonight.", "Thanks, I will keep the box."],
    },
    Theme {
        domain: "shipping",
        leads: &[
            "I need to change the delivery address on my order.",
            "Can I change the delivery address for my order?",
            "I moved and need to update the delivery address on my order.",
            "Please change my order delivery address to my new home.",
        ],
        questions: &[
            "Is there a fee to change the delivery address?",
            "Can I change the address after the order ships?",
            "Will the delivery date change?",
        ],
        followups: &["The new address is on file now.", "Perfect, thank you."],
    },
    Theme {
        domain: "shipping",
        leads: &[
            "I was charged twice for the same shipping order.",
            "My card shows a double charge for shipping.",
            "There is a duplicate shipping charge on my card.",
            "I see two charges for one shipping order on my card.",
        ],
        questions: &[
            "When will the duplicate charge be reversed?",
            "Can you confirm which charge is valid?",
            "Will I get an email receipt for the refund?",
        ],
        followups: &["I will watch my statement.", "Thanks for fixing the charge."],
    },
];

const RARE: &[&str] = &[
    "volcano", "zoning", "beekeeping", "harpsichord", "meteorite", "glacier", "origami", "telescope",
    "lighthouse", "saffron", "tapestry", "quartz", "falconry", "sundial", "gondola", "kayak",
    "marimba", "obsidian", "parchment", "quilting", "rhubarb", "sextant", "tundra", "ukulele",
    "walrus", "yodeling", "zeppelin", "abacus", "bonsai", "calligraphy",
];

const GREETINGS: &[&str] = &[
    "Thank you for calling, how can I help you today?",
    "Hello, you are through to support, what can I do for you?",
    "Good morning, how may I help?",
];

const CLOSINGS: &[&str] = &[
    "Is there anything else I can help with?",
    "I have noted that on your case. Have a good day.",
    "You are all set. Thanks for calling.",
];

fn utterance(speaker: Speaker, index: usize, text: String) -> Utterance {
    Utterance {
        speaker,
        text,
        index,
        start_ms: None,
        end_ms: None,
    }
}

/// `n` transcripts; about one in ten is a one-off request outside the themes.
pub fn synthetic_transcripts(n: usize, seed: u64) -> Vec<Transcript> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let id = format!("syn-{i:04}");
            let greeting = GREETINGS.choose(&mut rng).expect("non-empty").to_string();
            let closing = CLOSINGS.choose(&mut rng).expect("non-empty").to_string();
            if rng.gen_bool(0.1) {
                let picked: Vec<&str> = RARE.choose_multiple(&mut rng, 3).copied().collect();
                let opener = format!(
                    "I have an unusual request about {} {} {}. Can you help with the {}?",
                    picked[0], picked[1], picked[2], picked[0]
                );
                return Transcript {
                    id,
                    domain_tag: Some("other".into()),
                    utterances: vec![
                        utterance(Speaker::Agent, 0, greeting),
                        utterance(Speaker::Caller, 1, opener),
                        utterance(Speaker::Agent, 2, "Let me find the right team for that.".into()),
                        utterance(Speaker::Caller, 3, "Okay, I can wait.".into()),
                        utterance(Speaker::Agent, 4, closing),
                    ],
                };
            }
            let theme = &THEMES[rng.gen_range(0..THEMES.len())];
            let lead = theme.leads.choose(&mut rng).expect("non-empty");
            let question = theme.questions.choose(&mut rng).expect("non-empty");
            let followup = theme.followups.choose(&mut rng).expect("non-empty");
            Transcript {
                id,
                domain_tag: Some(theme.domain.into()),
                utterances: vec![
                    utterance(Speaker::Agent, 0, greeting),
                    utterance(Speaker::Caller, 1, format!("{lead} {question}")),
                    utterance(Speaker::Agent, 2, "Sure, let me look into that for you.".into()),
                    utterance(Speaker::Caller, 3, followup.to_string()),
                    utterance(Speaker::Agent, 4, closing),
                ],
            }
        })
        .collect()
}
