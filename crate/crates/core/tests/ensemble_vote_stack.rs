mod common;

use canopy_core::ensemble::{
    assemble_oof, holdout_chunks, stack_train, weighted_vote, MetaConfig, ModelWeights, StackedFeatures,
};
use canopy_core::metrics::sample_fbeta;
use canopy_core::nn::TrainConfig;
use canopy_core::split::stratified_kfold;
use canopy_core::threshold::{apply_thresholds, ThresholdVector};
use canopy_core::{LabelMatrix, ProbMatrix, RngSeed};
use common::{brute_vote, noisy_probs, random_labels, vocab};
use ndarray::Array2;
use proptest::prelude::*;

fn hard(rng: &mut canopy_core::data::Rng, models: usize, n: usize, k: usize) -> Vec<LabelMatrix> {
    (0..models).map(|_| random_labels(rng, n, k, 0.5)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn vote_matches_enumeration(seed in 0u64..10_000, models in 1usize..6, w in proptest::collection::vec(1u32..5, 6)) {
        let mut rng = RngSeed(seed).rng();
        let preds = hard(&mut rng, models, 7, 3);
        let weights = ModelWeights::new(w[..models].to_vec()).unwrap();
        let out = weighted_vote(&preds, &weights).unwrap();
        for i in 0..7 {
            for j in 0..3 {
                let votes: Vec<u8> = preds.iter().map(|p| p.values()[[i, j]]).collect();
                prop_assert_eq!(out.values()[[i, j]], brute_vote(&votes, weights.weights()));
            }
        }
        let scaled = ModelWeights::new(weights.weights().iter().map(|x| x * 3).collect()).unwrap();
        prop_assert_eq!(&weighted_vote(&preds, &scaled).unwrap(), &out);
    }

    #[test]
    fn single_model_vote_is_identity(seed in 0u64..10_000) {
        let mut rng = RngSeed(seed).rng();
        let preds = hard(&mut rng, 1, 9, 4);
        let out = weighted_vote(&preds, &ModelWeights::new(vec![5]).unwrap()).unwrap();
        prop_assert_eq!(&out, &preds[0]);
    }

    #[test]
    fn oof_ignores_in_fold_predictions(seed in 0u64..10_000) {
        let mut rng = RngSeed(seed).rng();
        let truth = random_labels(&mut rng, 30, 3, 0.4);
        let folds = stratified_kfold(&truth, 3, RngSeed(seed)).unwrap();
        let full: Vec<Vec<ProbMatrix>> = (0..2)
            .map(|_| (0..3).map(|_| noisy_probs(&truth, 1.0, &[0.0; 3], &mut rng)).collect())
            .collect();
        let zeroed: Vec<Vec<ProbMatrix>> = full
            .iter()
            .map(|per_fold| {
                per_fold
                    .iter()
                    .enumerate()
                    .map(|(f, p)| {
                        let mut v = p.values().clone();
                        for i in folds.training(f) {
                            v.row_mut(i).fill(0.0);
                        }
                        ProbMatrix::new(v, p.vocab().clone()).unwrap()
                    })
                    .collect()
            })
            .collect();
        let build = |src: &Vec<Vec<ProbMatrix>>, reverse: bool| {
            let per_model: Vec<_> = src
                .iter()
                .map(|pf| {
                    let mut chunks = holdout_chunks(pf, &folds).unwrap();
                    if reverse {
                        chunks.reverse();
                    }
                    chunks
                })
                .collect();
            assemble_oof(30, &per_model).unwrap()
        };
        let a = build(&full, false);
        prop_assert_eq!(&a, &build(&zeroed, false));
        prop_assert_eq!(&a, &build(&full, true));
        prop_assert_eq!(a.values().ncols(), 6);
        for f in 0..3 {
            for i in folds.holdout(f) {
                prop_assert_eq!(a.values()[[i, 0]], full[0][f].values()[[i, 0]]);
                prop_assert_eq!(a.values()[[i, 3]], full[1][f].values()[[i, 0]]);
            }
        }
    }
}

#[test]
fn equal_weights_is_strict_majority() {
    let mut rng = RngSeed(5).rng();
    let preds = hard(&mut rng, 4, 20, 2);
    let out = weighted_vote(&preds, &ModelWeights::uniform(4).unwrap()).unwrap();
    for ((i, j), &x) in out.values().indexed_iter() {
        let yes = preds.iter().filter(|p| p.get(i, j)).count();
        assert_eq!(x, u8::from(yes > 2));
    }
}

#[test]
fn single_fold_oof_is_identity() {
    let mut rng = RngSeed(1).rng();
    let truth = random_labels(&mut rng, 5, 2, 0.5);
    let p = noisy_probs(&truth, 1.0, &[0.0, 0.0], &mut rng);
    let chunk = canopy_core::ensemble::HoldoutChunk { rows: (0..5).collect(), probs: p.clone() };
    let s = assemble_oof(5, &[vec![chunk]]).unwrap();
    assert_eq!(s.values(), p.values());
}

fn small_meta(seed: u64) -> MetaConfig {
    MetaConfig {
        hidden_units: 16,
        train: TrainConfig { batch_size: 32, max_epochs: 300, seed: RngSeed(seed), ..MetaConfig::default().train },
        ..MetaConfig::default()
    }
}

#[test]
fn stacking_perfect_models_and_determinism() {
    let mut rng = RngSeed(8).rng();
    let truth = random_labels(&mut rng, 300, 4, 0.4);
    let perfect = ProbMatrix::new(truth.to_f64().mapv(|v| 0.05 + 0.9 * v), truth.vocab().clone()).unwrap();
    let noise = noisy_probs(&truth, 0.0, &[0.0; 4], &mut rng);
    let stacked = StackedFeatures::from_models(&[perfect, noise]).unwrap();
    let tr: Vec<usize> = (0..200).collect();
    let va: Vec<usize> = (200..300).collect();
    let (ft, fv) = (stacked.select_rows(&tr), stacked.select_rows(&va));
    let (tt, tv) = (truth.select_rows(&tr), truth.select_rows(&va));
    let a = stack_train(&ft, &tt, Some((&fv, &tv)), &small_meta(2)).unwrap();
    let b = stack_train(&ft, &tt, Some((&fv, &tv)), &small_meta(2)).unwrap();
    assert_eq!(a.model.history, b.model.history);
    let pred = apply_thresholds(&a.predict(&fv).unwrap(), &ThresholdVector::uniform(0.5, truth.vocab().clone()).unwrap()).unwrap();
    let f2 = sample_fbeta(&pred, &tv, 2.0).unwrap();
    let best_possible = sample_fbeta(&tv, &tv, 2.0).unwrap();
    assert!(f2 >= 0.99 * best_possible, "{f2} vs {best_possible}");
}

#[test]
fn stacked_columns_are_model_major() {
    let v = vocab(17);
    let a = ProbMatrix::new(Array2::from_elem((2, 17), 0.1), v.clone()).unwrap();
    let b = ProbMatrix::new(Array2::from_elem((2, 17), 0.9), v).unwrap();
    let s = StackedFeatures::from_models(&[a, b]).unwrap();
    assert_eq!(s.values().ncols(), 34);
    assert!(s.values().slice(ndarray::s![.., ..17]).iter().all(|&x| x == 0.1));
    assert!(s.values().slice(ndarray::s![.., 17..]).iter().all(|&x| x == 0.9));
}
