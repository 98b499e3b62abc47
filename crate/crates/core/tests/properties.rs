mod common;

use std::collections::BTreeSet;

use common::*;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tofner::convert::{mrc_to_ner, ner_to_mrc};
use tofner::corpus::{
    repair_bio, tags_to_spans, validate_bio, LabelSet, Tag, TaggedSentence,
};
use tofner::eval::entity_f1;
use tofner::masking::{mask_corpus, MaskingParams};
use tofner::model::vocab::is_special;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ner_to_mrc_round_trips(seed in any::<u64>(), n in 1usize..30) {
        let corpus = random_corpus(seed, n, 15);
        let examples = ner_to_mrc(&corpus, &templates()).unwrap();
        prop_assert_eq!(examples.len(), 4 * corpus.len());
        let back = mrc_to_ner(&examples, &LabelSet::conll()).unwrap();
        prop_assert_eq!(&back, &corpus);
        for (s, group) in corpus.iter().zip(examples.chunks(4)) {
            let from_answers: BTreeSet<_> = group
                .iter()
                .flat_map(|e| {
                    let ty = e.entity_type.clone().unwrap();
                    e.answers.iter().map(move |&(a, b)| (ty.clone(), a, b))
                })
                .collect();
            prop_assert_eq!(from_answers, oracle_spans(&s.tags));
        }
    }

    #[test]
    fn f1_counts_match_set_oracle(seed in any::<u64>(), n in 1usize..40) {
        let gold = random_corpus(seed, n, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(1));
        let pred: Vec<_> = gold.iter().map(|s| perturbed(&mut rng, s)).collect();
        let score = entity_f1(&gold, &pred).unwrap();
        let (g, p, c) = oracle_counts(&gold, &pred);
        prop_assert_eq!((score.gold, score.predicted, score.correct), (g, p, c));
        let (pr, rc, f1) = oracle_prf(g, p, c);
        prop_assert_eq!((score.precision, score.recall, score.f1), (pr, rc, f1));
    }

    #[test]
    fn swapping_gold_and_pred_swaps_precision_and_recall(seed in any::<u64>()) {
        let gold = random_corpus(seed, 20, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
        let pred: Vec<_> = gold.iter().map(|s| perturbed(&mut rng, s)).collect();
        let a = entity_f1(&gold, &pred).unwrap();
        let b = entity_f1(&pred, &gold).unwrap();
        prop_assert_eq!(a.precision, b.recall);
        prop_assert_eq!(a.recall, b.precision);
        prop_assert_eq!(a.f1, b.f1);
    }

    #[test]
    fn f1_ignores_sentence_order(seed in any::<u64>()) {
        let gold = random_corpus(seed, 25, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xdef);
        let pred: Vec<_> = gold.iter().map(|s| perturbed(&mut rng, s)).collect();
        let mut order: Vec<usize> = (0..gold.len()).collect();
        order.shuffle(&mut rng);
        let g2: Vec<_> = order.iter().map(|&i| gold[i].clone()).collect();
        let p2: Vec<_> = order.iter().map(|&i| pred[i].clone()).collect();
        prop_assert_eq!(entity_f1(&gold, &pred).unwrap(), entity_f1(&g2, &p2).unwrap());
    }

    #[test]
    fn masking_selects_real_tokens_only(seed in any::<u64>(), n in 1usize..20) {
        let mut corpus = random_corpus(seed, n, 25);
        // sprinkle special tokens that must never be selected
        for (i, s) in corpus.iter_mut().enumerate() {
            if i % 3 == 0 && s.tokens.len() > 1 {
                s.tokens[0] = "[CLS]".into();
            }
        }
        let params = MaskingParams::default();
        let out = mask_corpus(&corpus, &params, &[], seed).unwrap();
        prop_assert_eq!(out.len(), corpus.len() * params.k);
        for (s, group) in corpus.iter().zip(out.chunks(params.k)) {
            for inst in group {
                prop_assert_eq!(inst.tokens.len(), s.tokens.len());
                prop_assert!(!inst.targets.is_empty());
                for (&pos, original) in &inst.targets {
                    prop_assert!(!is_special(&s.tokens[pos]));
                    prop_assert_eq!(original, &s.tokens[pos]);
                }
                for (i, (a, b)) in inst.tokens.iter().zip(&s.tokens).enumerate() {
                    if a != b {
                        prop_assert!(inst.targets.contains_key(&i));
                    }
                }
            }
        }
    }

    #[test]
    fn repaired_tags_are_valid(raw in proptest::collection::vec(0usize..9, 0..30)) {
        let ls = LabelSet::conll();
        let mut tags: Vec<Tag> = raw.iter().map(|&i| ls.tag_at(i).unwrap()).collect();
        repair_bio(&mut tags);
        prop_assert!(validate_bio(&tags, &ls).is_valid());
        prop_assert!(tags_to_spans(&tags).is_ok());
    }
}

#[test]
fn generated_sentences_are_bio_valid() {
    let ls = LabelSet::conll();
    for s in random_corpus(1, 300, 20) {
        assert!(validate_bio(&s.tags, &ls).is_valid());
    }
}

#[test]
fn oracle_agrees_with_hand_count() {
    let ls = LabelSet::conll();
    let mk = |tags: &[&str]| {
        TaggedSentence::new(
            "x",
            (0..tags.len()).map(|i| format!("t{i}")).collect(),
            tags.iter().map(|t| t.parse().unwrap()).collect(),
            &ls,
        )
        .unwrap()
    };
    let gold = [mk(&["B-PER", "I-PER", "O", "B-LOC"])];
    let pred = [mk(&["B-PER", "I-PER", "O", "B-ORG"])];
    assert_eq!(oracle_counts(&gold, &pred), (2, 2, 1));
    assert_eq!(oracle_prf(2, 2, 1), (0.5, 0.5, 0.5));
}
