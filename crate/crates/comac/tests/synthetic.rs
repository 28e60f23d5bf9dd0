use std::collections::HashSet;

use comac::corpus_io::write_corpus;
use comac::synthetic::{generate, rare_word, SyntheticSpec, RARE_POOL};
use comac::Error;

fn bytes(spec: &SyntheticSpec) -> Vec<u8> {
    let mut buf = Vec::new();
    write_corpus(&mut buf, &generate(spec).unwrap()).unwrap();
    buf
}

#[test]
fn same_seed_same_bytes() {
    let spec = SyntheticSpec {
        rounds: 50,
        ..SyntheticSpec::default()
    };
    assert_eq!(bytes(&spec), bytes(&spec));
    assert_ne!(bytes(&spec), bytes(&SyntheticSpec { seed: 8, ..spec }));
}

#[test]
fn round_shape() {
    let spec = SyntheticSpec {
        rounds: 300,
        n_personas: 4,
        n_knowledges: 7,
        ..SyntheticSpec::default()
    };
    let rounds = generate(&spec).unwrap();
    assert_eq!(rounds.len(), 300);
    let mut ids = HashSet::new();
    for r in &rounds {
        assert_eq!(r.personas.len(), 4);
        assert_eq!(r.knowledges.len(), 7);
        assert_eq!(r.persona_labels.len(), 4);
        assert!(r.knowledge_label < 7);
        assert!(!r.history.is_empty() && r.history.len() <= 2);
        assert!(ids.insert(r.dialog_id.clone()));
        r.validate().unwrap();
    }
}

#[test]
fn labeled_knowledge_shares_cue_words() {
    let rounds = generate(&SyntheticSpec {
        rounds: 200,
        ..SyntheticSpec::default()
    })
    .unwrap();
    for r in &rounds {
        let question: HashSet<&str> = r.history.last().unwrap().split_whitespace().collect();
        let overlap = |text: &str| text.split_whitespace().filter(|w| question.contains(w)).count();
        let hits: Vec<usize> = r.knowledges.iter().map(|k| overlap(&k.text)).collect();
        let best = hits.iter().copied().max().unwrap();
        assert_eq!(hits[r.knowledge_label], best);
        assert_eq!(hits.iter().filter(|&&h| h == best).count(), 1);
    }
}

#[test]
fn persona_positive_rate() {
    let rounds = generate(&SyntheticSpec {
        rounds: 2000,
        ..SyntheticSpec::default()
    })
    .unwrap();
    let labels: Vec<bool> = rounds.iter().flat_map(|r| r.persona_labels.iter().copied()).collect();
    assert_eq!(labels.len(), 10_000);
    let rate = labels.iter().filter(|&&y| y).count() as f64 / labels.len() as f64;
    assert!((rate - 0.13).abs() <= 0.01, "{rate}");
}

#[test]
fn too_few_knowledges_rejected() {
    for n_knowledges in [0, 1] {
        let spec = SyntheticSpec {
            n_knowledges,
            ..SyntheticSpec::default()
        };
        assert!(matches!(generate(&spec), Err(Error::Config(_))));
    }
    assert!(matches!(
        generate(&SyntheticSpec {
            n_personas: 0,
            ..SyntheticSpec::default()
        }),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        generate(&SyntheticSpec {
            positive_rate: 1.5,
            ..SyntheticSpec::default()
        }),
        Err(Error::Config(_))
    ));
}

#[test]
fn rare_words_are_distinct() {
    let words: HashSet<String> = (0..RARE_POOL).map(rare_word).collect();
    assert_eq!(words.len(), RARE_POOL);
    assert!(words.iter().all(|w| w.chars().all(|c| c.is_ascii_lowercase())));
}
