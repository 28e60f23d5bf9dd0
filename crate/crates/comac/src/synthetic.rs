//! Seeded synthetic dialogue corpora with a known grounding signal.
//!
//! Every entry is built from common filler words (one pool per role) plus a
//! few rare pseudo-words. The labeled knowledge entry shares its two rare words with
//! the final utterance turn, and so does every relevant persona with its one
//! rare word. Persona relevance is drawn independently per entry.

use comac_core::corpus::DialogueRound;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const QUESTION_WORDS: [&str; 32] = [
    "what", "where", "when", "who", "how", "tell", "me", "about", "can", "you", "do", "know", "is", "it", "this",
    "that", "there", "would", "should", "we", "go", "see", "again", "please", "really", "okay", "so", "then", "now",
    "next", "which", "one",
];

const KNOWLEDGE_WORDS: [&str; 32] = [
    "the", "a", "of", "in", "was", "built", "by", "its", "as", "at", "from", "century", "located", "city", "famous",
    "old", "known", "named", "after", "during", "largest", "river", "north", "south", "church", "tower", "museum",
    "founded", "since", "area", "region", "national",
];

const PERSONA_WORDS: [&str; 16] = [
    "like", "love", "have", "want", "enjoy", "visited", "collect", "prefer", "hate", "am", "my", "favorite", "own",
    "read", "study", "miss",
];

const ONSETS: [&str; 16] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "sh",
];
const NUCLEI: [&str; 8] = ["a", "e", "i", "o", "u", "ai", "ou", "ei"];

/// Number of distinct rare pseudo-words.
pub const RARE_POOL: usize = 4096;

/// The `i`-th rare pseudo-word, three syllables drawn from a fixed table.
/// Distinct indices below [`RARE_POOL`] give distinct words.
pub fn rare_word(i: usize) -> String {
    let mut out = String::new();
    let mut rest = i;
    for _ in 0..3 {
        let syl = rest % 16;
        rest /= 16;
        out.push_str(ONSETS[syl]);
        out.push_str(NUCLEI[(syl + rest) % 8]);
    }
    out.push_str(ONSETS[(i / 4096 + i) % 16]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub rounds: usize,
    pub n_personas: usize,
    pub n_knowledges: usize,
    pub positive_rate: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            rounds: 600,
            n_personas: 5,
            n_knowledges: 10,
            positive_rate: 0.13,
            seed: 7,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_knowledges < 2 {
            return Err(Error::Config(format!(
                "need at least 2 knowledge entries, got {}",
                self.n_knowledges
            )));
        }
        if self.n_personas < 1 {
            return Err(Error::Config("need at least 1 persona entry".into()));
        }
        if !(0.0..=1.0).contains(&self.positive_rate) {
            return Err(Error::Config(format!(
                "positive rate {} outside [0, 1]",
                self.positive_rate
            )));
        }
        Ok(())
    }
}

/// Between `lo` and `hi` distinct words from `pool`.
fn filler<R: Rng>(rng: &mut R, pool: &[&str], lo: usize, hi: usize) -> Vec<String> {
    let n = rng.random_range(lo..=hi);
    pool.choose_multiple(rng, n).map(|w| w.to_string()).collect()
}

fn insert_all<R: Rng>(rng: &mut R, words: &mut Vec<String>, extra: &[String]) {
    for w in extra {
        let at = rng.random_range(0..=words.len());
        words.insert(at, w.clone());
    }
}

/// Generates `spec.rounds` rounds from a single seeded stream. Dialogue ids
/// are `syn-{index}`; every round is round 0 of its own dialogue.
pub fn generate(spec: &SyntheticSpec) -> Result<Vec<DialogueRound>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let per_round = 2 * spec.n_knowledges + spec.n_personas;
    if per_round > RARE_POOL {
        return Err(Error::Config(
            "too many entries per round for the rare-word pool".into(),
        ));
    }
    let pool: Vec<usize> = (0..RARE_POOL).collect();
    let mut rounds = Vec::with_capacity(spec.rounds);
    for idx in 0..spec.rounds {
        let mut rare = pool.choose_multiple(&mut rng, per_round).map(|&i| rare_word(i));
        let knowledge_rare: Vec<[String; 2]> = (0..spec.n_knowledges)
            .map(|_| [rare.next().unwrap(), rare.next().unwrap()])
            .collect();
        let persona_rare: Vec<String> = (0..spec.n_personas).map(|_| rare.next().unwrap()).collect();

        let label = rng.random_range(0..spec.n_knowledges);
        let persona_labels: Vec<bool> = (0..spec.n_personas)
            .map(|_| rng.random_bool(spec.positive_rate))
            .collect();

        let knowledges: Vec<String> = knowledge_rare
            .iter()
            .map(|r| {
                let mut words = filler(&mut rng, &KNOWLEDGE_WORDS, 8, 14);
                insert_all(&mut rng, &mut words, r);
                words.join(" ")
            })
            .collect();
        let personas: Vec<String> = persona_rare
            .iter()
            .map(|r| {
                let mut words = vec!["i".to_string()];
                words.extend(filler(&mut rng, &PERSONA_WORDS, 2, 4));
                insert_all(&mut rng, &mut words, std::slice::from_ref(r));
                words.push(".".into());
                words.join(" ")
            })
            .collect();

        // Utterance filler words are distinct across turns.
        let mut words = filler(&mut rng, &QUESTION_WORDS, 5, 14);
        let mut history = Vec::new();
        if words.len() > 8 && rng.random_bool(0.5) {
            let rest = words.split_off(words.len() - 5);
            history.push(words.join(" "));
            words = rest;
        }
        let mut question = words;
        let mut cues: Vec<String> = knowledge_rare[label].to_vec();
        cues.extend(
            persona_rare
                .iter()
                .zip(&persona_labels)
                .filter(|(_, &y)| y)
                .map(|(w, _)| w.clone()),
        );
        cues.shuffle(&mut rng);
        insert_all(&mut rng, &mut question, &cues);
        question.push("?".into());
        history.push(question.join(" "));

        rounds.push(DialogueRound::from_texts(
            format!("syn-{idx:05}"),
            0,
            history,
            &personas,
            &knowledges,
            persona_labels,
            label,
        )?);
    }
    Ok(rounds)
}
