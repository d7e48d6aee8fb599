use std::sync::Arc;

use canopy_core::data::{LabelMatrix, LabelVocabulary, ProbMatrix};
use canopy_core::io::{read_probs, read_tags, read_thresholds, write_probs, write_tags, write_thresholds, VocabSource};
use canopy_core::threshold::ThresholdVector;
use ndarray::Array2;
use proptest::prelude::*;

fn planet() -> Arc<LabelVocabulary> {
    Arc::new(LabelVocabulary::planet())
}

proptest! {
    #[test]
    fn tags_round_trip(bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 17), 1..30)) {
        let vocab = planet();
        let rows: Vec<Vec<u8>> = bits.iter().map(|r| r.iter().map(|&b| u8::from(b)).collect()).collect();
        let labels = LabelMatrix::from_rows(&rows, vocab.clone()).unwrap();
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("train_{i}")).collect();
        let mut buf = Vec::new();
        write_tags(&mut buf, &ids, &labels).unwrap();
        let (ids2, back) = read_tags(buf.as_slice(), "mem", &VocabSource::Explicit(vocab)).unwrap();
        prop_assert_eq!(ids2, ids);
        prop_assert_eq!(back, labels);
    }

    #[test]
    fn six_decimal_probs_round_trip(cells in prop::collection::vec(0u32..=1_000_000, 17 * 4)) {
        let vocab = planet();
        let values = Array2::from_shape_vec((4, 17), cells.iter().map(|&c| f64::from(c) / 1e6).collect()).unwrap();
        let probs = ProbMatrix::new(values, vocab.clone()).unwrap();
        let ids: Vec<String> = (0..4).map(|i| format!("s{i}")).collect();
        let mut buf = Vec::new();
        write_probs(&mut buf, &ids, &probs).unwrap();
        let (_, back) = read_probs(buf.as_slice(), "mem", &vocab).unwrap();
        prop_assert_eq!(back, probs);
    }
}

#[test]
fn thresholds_round_trip() {
    let vocab = planet();
    let cut: Vec<f64> = (0..17).map(|i| f64::from(i * 50_000 + 10_000) / 1e6).collect();
    let t = ThresholdVector::new(cut, vocab.clone()).unwrap();
    let mut buf = Vec::new();
    write_thresholds(&mut buf, &t).unwrap();
    assert!(String::from_utf8(buf.clone()).unwrap().starts_with("label,threshold\nclear,0.010000\n"));
    assert_eq!(read_thresholds(buf.as_slice(), "mem", &vocab).unwrap(), t);
}

#[test]
fn errors_name_file_and_row() {
    let vocab = planet();
    let text = "image_name,tags\ntrain_0,clear primary\ntrain_1,haze lake\n";
    let err = read_tags(text.as_bytes(), "t.csv", &VocabSource::Explicit(vocab)).unwrap_err().to_string();
    assert!(err.contains("t.csv") && err.contains('3') && err.contains("lake"), "{err}");
}
