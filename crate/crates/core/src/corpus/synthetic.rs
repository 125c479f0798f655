//! Template-generated raw corpus for offline, desk-scale experiments.
//!
//! Each sentence carries one key word in a shared template: a toxic word for
//! toxic samples, a benign word of the same grammatical slot otherwise. A
//! set of topic words co-occurs with the toxic label more often than not,
//! which gives the spurious-correlation selector something to find.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::LabeledText;
use crate::perturb::Lexicons;

const TEMPLATES: &[&str] = &[
    "you are such a {w} and everyone here knows it",
    "honestly {name} is the biggest {w} i have ever met",
    "what a {w} you turned out to be after all that {topic} talk",
    "only a {w} would write that about {topic}",
    "my neighbor {name} is a total {w} when it comes to {topic}",
    "listen {name} you are acting like a {w} again",
    "that reply about {topic} was written by a real {w}",
    "i cannot believe this {w} is in charge of {topic} now",
    "every comment from {name} proves they are a {w}",
    "stop posting about {topic} you {w}",
    "the new manager is a {w} and the team agrees",
    "people who argue about {topic} like {name} are {w} types",
    "{name} called me a {w} during the meeting yesterday",
    "what kind of {w} talks like that about {topic}",
    "you sound like a {w} every single time",
    "this thread about {topic} is full of {w} energy",
    "our coach {name} is a {w} and always has been",
    "go tell {name} that the {w} act is getting old",
    "seriously you are a {w} and i am done with this",
    "the {w} from the {topic} forum replied again",
];

const BENIGN_KEYS: &[&str] = &[
    "genius", "friend", "hero", "legend", "champion", "gentleman", "scholar", "angel", "sweetheart",
    "sweetie", "darling", "treasure", "star", "gem", "saint", "sage", "pro", "expert", "master",
    "wizard", "artist", "poet", "thinker", "leader", "mentor", "teacher", "helper", "partner",
    "buddy", "pal", "mate", "sunshine", "delight", "blessing", "wonder", "marvel", "visionary",
    "pioneer", "optimist", "romantic", "dreamer", "believer", "charmer", "original", "natural",
    "talent", "prodigy", "virtuoso", "maestro", "diplomat", "peacemaker", "rockstar", "superstar",
    "sweetpea", "cupcake", "honeybee", "bookworm", "gardener", "traveler", "explorer", "inventor",
    "builder", "creator", "designer", "engineer", "doctor", "nurse", "volunteer", "neighbor",
    "listener", "storyteller", "comedian", "entertainer", "athlete", "runner", "climber",
    "sailor", "captain", "guardian", "keeper",
];

const NAMES: &[&str] = &[
    "alex", "sam", "jordan", "taylor", "morgan", "casey", "riley", "jamie", "drew", "quinn",
    "robin", "avery", "parker", "reese", "rowan", "sky", "kai", "noel", "emery", "sage",
];

const CHARGED_TOPICS: &[&str] = &[
    "politics", "elections", "immigration", "religion", "taxes", "protests", "government",
    "media", "congress", "senate",
];

const NEUTRAL_TOPICS: &[&str] = &[
    "gardening", "cooking", "football", "movies", "music", "weather", "travel", "history",
    "chess", "painting", "hiking", "baking", "science", "poetry", "photography", "cycling",
];

/// Generated corpus plus the key-word vocabularies used to build it.
#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub samples: Vec<LabeledText>,
    pub toxic_keys: Vec<String>,
    pub benign_keys: Vec<String>,
}

impl SyntheticCorpus {
    /// `per_class` toxic and `per_class` non-toxic sentences.
    pub fn generate(per_class: usize, seed: u64, lexicons: &Lexicons) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let toxic_keys: Vec<String> = lexicons.toxic_words.iter().cloned().collect();
        let benign_keys: Vec<String> = BENIGN_KEYS.iter().map(|s| s.to_string()).collect();
        let mut samples = Vec::with_capacity(2 * per_class);
        for i in 0..per_class {
            for label in [1u8, 0u8] {
                let keys = if label == 1 { &toxic_keys } else { &benign_keys };
                let key = keys.choose(&mut rng).expect("non-empty key list");
                let charged_p = if label == 1 { 0.7 } else { 0.3 };
                let topic = if rng.gen_bool(charged_p) {
                    CHARGED_TOPICS.choose(&mut rng)
                } else {
                    NEUTRAL_TOPICS.choose(&mut rng)
                }
                .expect("non-empty topics");
                let name = NAMES.choose(&mut rng).expect("non-empty names");
                let template = TEMPLATES.choose(&mut rng).expect("non-empty templates");
                let text = template
                    .replace("{w}", key)
                    .replace("{name}", name)
                    .replace("{topic}", topic);
                let prefix = if label == 1 { "t" } else { "n" };
                samples.push(LabeledText::new(format!("syn-{prefix}{i}"), text, label));
            }
        }
        Self {
            samples,
            toxic_keys,
            benign_keys,
        }
    }

    /// Every word the generator can emit; the spell-check dictionary.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = TEMPLATES
            .iter()
            .flat_map(|t| t.split_whitespace())
            .filter(|w| !w.starts_with('{'))
            .map(str::to_string)
            .chain(self.toxic_keys.iter().cloned())
            .chain(self.benign_keys.iter().cloned())
            .chain(NAMES.iter().map(|s| s.to_string()))
            .chain(CHARGED_TOPICS.iter().map(|s| s.to_string()))
            .chain(NEUTRAL_TOPICS.iter().map(|s| s.to_string()))
            .collect();
        words.sort();
        words.dedup();
        words
    }

    /// Lexicons whose perturbation targets include the benign key words, so
    /// both labels are perturbed at the key slot.
    pub fn lexicons(&self, base: &Lexicons) -> Lexicons {
        let mut lex = base.clone();
        lex.toxic_relevant_words.extend(self.benign_keys.iter().cloned());
        lex.toxic_relevant_words.extend(self.toxic_keys.iter().cloned());
        lex
    }
}
