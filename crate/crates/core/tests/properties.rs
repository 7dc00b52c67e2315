use proptest::collection::{btree_set, vec};
use proptest::prelude::*;

use coprompt::corpus::synth::{generate, SynthConfig};
use coprompt::corpus::{inject_noise, LabelSet, NoiseSpec};
use coprompt::corrector::{
    correct_labels, divergence_score, eliminate_labels, recall_labels, CorrectionConfig, RecallRule,
};
use coprompt::eval::evaluate;
use coprompt::model::{CoPredictionLogits, CoPredictionScores};
use coprompt::trainer::{coprediction_loss, coprediction_loss_from_logits, gamma_schedule, is_divergent};

const T: usize = 6;

fn prob() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(0.5), Just(1.0), 0.0..=1.0f64]
}

fn scores() -> impl Strategy<Value = CoPredictionScores> {
    (vec(prob(), T), vec(prob(), T)).prop_map(|(p, n)| CoPredictionScores::new(p, n).unwrap())
}

fn labels() -> impl Strategy<Value = LabelSet> {
    btree_set(0..T, 0..=T)
}

fn config() -> impl Strategy<Value = CorrectionConfig> {
    (0.0..=1.0f64, 0.05..0.95f64, any::<bool>(), any::<bool>()).prop_map(|(epsilon, thr, both, protect)| {
        CorrectionConfig {
            epsilon,
            positive_threshold: thr,
            recall_rule: if both {
                RecallRule::UnionBothMasks
            } else {
                RecallRule::PmaskOnly
            },
            protect_gold: protect,
        }
    })
}

proptest! {
    #[test]
    fn delta_in_unit_interval(p in prob(), n in prob()) {
        let d = divergence_score(p, n);
        prop_assert!((0.0..=1.0).contains(&d));
        prop_assert_eq!(d == 0.0, p == 1.0 - n);
    }

    #[test]
    fn divergence_symmetric(p in prob(), n in prob()) {
        prop_assert_eq!(is_divergent(p, n), is_divergent(n, p));
    }

    #[test]
    fn gamma_one_is_unweighted(z in vec(-8.0..8.0f64, 2 * T), gold in labels()) {
        let logits = CoPredictionLogits { pos: z[..T].to_vec(), neg: Some(z[T..].to_vec()) };
        let weighted = coprediction_loss_from_logits(&logits, &gold, 1.0).unwrap();
        let s = logits.scores();
        let mut plain = 0.0;
        for y in 0..T {
            let t = if gold.contains(&y) { 1.0 } else { 0.0 };
            let one = CoPredictionScores::new(vec![s.p_pos[y]], vec![s.p_neg[y]]).unwrap();
            let g: LabelSet = if t == 1.0 { [0].into() } else { LabelSet::new() };
            plain += coprediction_loss(&one, &g, 1.0).unwrap();
        }
        prop_assert!((weighted.loss - plain).abs() <= 1e-9 * plain.max(1.0));
        prop_assert_eq!(coprediction_loss(&s, &gold, 1.0).unwrap(), coprediction_loss(&s, &gold, 1.0).unwrap());
        prop_assert!(weighted.d_pos.iter().all(|d| d.abs() <= 1.0));
    }

    #[test]
    fn loss_nonnegative(s in scores(), gold in labels(), gamma in 0.001..=1.0f64) {
        let l = coprediction_loss(&s, &gold, gamma).unwrap();
        prop_assert!(l >= 0.0);
    }

    #[test]
    fn loss_zero_at_exact_targets(gold in labels(), gamma in 0.001..=1.0f64) {
        let p: Vec<f64> = (0..T).map(|y| if gold.contains(&y) { 1.0 } else { 0.0 }).collect();
        let n: Vec<f64> = p.iter().map(|v| 1.0 - v).collect();
        let s = CoPredictionScores::new(p, n).unwrap();
        prop_assert_eq!(coprediction_loss(&s, &gold, gamma).unwrap(), 0.0);
    }

    #[test]
    fn gamma_schedule_shape(e in 0usize..200, min in 0.001..=1.0f64, decay in 0.01..=1.0f64) {
        let g = gamma_schedule(e, min, decay);
        prop_assert!(g >= min && g <= 1.0);
        prop_assert!(gamma_schedule(e + 1, min, decay) <= g);
        prop_assert_eq!(gamma_schedule(0, min, decay), 1.0);
    }

    #[test]
    fn epsilon_monotone(s in scores(), gold in labels(), c in config(), e2 in 0.0..=1.0f64) {
        let lo = CorrectionConfig { epsilon: c.epsilon.min(e2), ..c.clone() };
        let hi = CorrectionConfig { epsilon: c.epsilon.max(e2), ..c };
        let cand = recall_labels(&s, &gold, &lo);
        prop_assert!(eliminate_labels(&cand, &s, &lo).is_subset(&eliminate_labels(&cand, &s, &hi)));
        prop_assert!(correct_labels(&s, &gold, &lo).final_labels.is_subset(&correct_labels(&s, &gold, &hi).final_labels));
    }

    #[test]
    fn eliminate_idempotent(s in scores(), cand in labels(), c in config()) {
        let once = eliminate_labels(&cand, &s, &c);
        prop_assert_eq!(eliminate_labels(&once, &s, &c), once.clone());
        prop_assert!(once.is_subset(&cand));
    }

    #[test]
    fn report_invariants(s in scores(), gold in labels(), c in config()) {
        let r = correct_labels(&s, &gold, &c);
        prop_assert!(r.recalled.is_disjoint(&gold));
        let cand = recall_labels(&s, &gold, &c);
        prop_assert!(r.eliminated.is_subset(&cand));
        prop_assert!(r.final_labels.is_subset(&cand));
        prop_assert_eq!(r.final_labels.is_empty(), cand.is_empty());
    }

    #[test]
    fn metrics_permutation_invariant(pairs in vec((labels(), labels()), 1..15), seed in any::<u64>()) {
        let (pred, gold): (Vec<_>, Vec<_>) = pairs.iter().cloned().unzip();
        let a = evaluate(&pred, &gold).unwrap();
        let mut idx: Vec<usize> = (0..pairs.len()).collect();
        let k = (seed as usize) % idx.len();
        idx.rotate_left(k);
        idx.reverse();
        let pred2: Vec<_> = idx.iter().map(|&i| pred[i].clone()).collect();
        let gold2: Vec<_> = idx.iter().map(|&i| gold[i].clone()).collect();
        let b = evaluate(&pred2, &gold2).unwrap();
        for (x, y) in [(a.strict_accuracy, b.strict_accuracy), (a.macro_p, b.macro_p), (a.macro_r, b.macro_r), (a.micro_p, b.micro_p), (a.micro_r, b.micro_r)] {
            prop_assert!((x - y).abs() <= 1e-12);
        }
        for m in [a.strict_accuracy, a.macro_p, a.macro_r, a.macro_f1, a.micro_p, a.micro_r, a.micro_f1] {
            prop_assert!((0.0..=1.0).contains(&m));
        }
        if a.strict_accuracy == 1.0 {
            prop_assert!(a.macro_f1 == 1.0 && a.micro_f1 == 1.0);
        }
    }

    #[test]
    fn self_evaluation_is_perfect(gold in vec(btree_set(0..T, 1..=T), 1..10)) {
        let r = evaluate(&gold, &gold).unwrap();
        prop_assert!(r.macro_f1 == 1.0 && r.micro_f1 == 1.0 && r.strict_accuracy == 1.0);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn noise_is_seed_deterministic(seed in any::<u64>(), swap in 0.0..=1.0f64, drop in 0.0..=1.0f64) {
        let c = generate(&SynthConfig { n_train: 30, n_dev: 5, seed: 1, ..Default::default() }).unwrap();
        let spec = NoiseSpec::new(swap, drop, seed).unwrap();
        let (a, truth) = inject_noise(&c.train, &spec).unwrap();
        let (b, _) = inject_noise(&c.train, &spec).unwrap();
        prop_assert_eq!(a.label_sets(), b.label_sets());
        prop_assert_eq!(truth.label_sets(), c.train.label_sets());
        prop_assert!(a.examples.iter().all(|e| !e.labels.is_empty()));
    }
}
