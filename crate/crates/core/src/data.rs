//! Shared data model: label vocabulary, label/probability/feature matrices
//! and the seeded random stream used by every randomized routine.
//!
//! Matrices are immutable once built and hold their vocabulary behind an
//! [`Arc`], so they can be shared read-only across threads.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, ArrayView1, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The PRNG behind every seeded operation. ChaCha8 keyed by
/// `seed_from_u64`; independent substreams use the ChaCha stream id.
pub type Rng = ChaCha8Rng;

/// The 17 labels of the Amazon satellite-chip dataset, weather labels first.
pub const PLANET_LABELS: [&str; 17] = [
    "clear",
    "cloudy",
    "haze",
    "partly_cloudy",
    "agriculture",
    "artisinal_mine",
    "bare_ground",
    "blooming",
    "blow_down",
    "conventional_mine",
    "cultivation",
    "habitation",
    "primary",
    "road",
    "selective_logging",
    "slash_burn",
    "water",
];

/// Number of mutually exclusive weather labels at the front of [`PLANET_LABELS`].
pub const PLANET_WEATHER_COUNT: usize = 4;

/// Ordered, unique label names. The first `weather_count` names form a
/// mutually exclusive block (exactly one is active per sample); zero
/// disables that constraint.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "VocabularyRepr", into = "VocabularyRepr")]
pub struct LabelVocabulary {
    names: Vec<String>,
    weather_count: usize,
    index: HashMap<String, usize>,
}

#[derive(Serialize, Deserialize)]
struct VocabularyRepr {
    names: Vec<String>,
    weather_count: usize,
}

impl TryFrom<VocabularyRepr> for LabelVocabulary {
    type Error = Error;

    fn try_from(repr: VocabularyRepr) -> Result<Self> {
        LabelVocabulary::new(repr.names, repr.weather_count)
    }
}

impl From<LabelVocabulary> for VocabularyRepr {
    fn from(vocab: LabelVocabulary) -> Self {
        VocabularyRepr {
            names: vocab.names,
            weather_count: vocab.weather_count,
        }
    }
}

impl PartialEq for LabelVocabulary {
    fn eq(&self, other: &Self) -> bool {
        self.names == other.names && self.weather_count == other.weather_count
    }
}

impl Eq for LabelVocabulary {}

impl LabelVocabulary {
    pub fn new<S: Into<String>>(names: Vec<S>, weather_count: usize) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if weather_count > names.len() {
            return Err(Error::invalid(format!(
                "weather_count {} exceeds vocabulary size {}",
                weather_count,
                names.len()
            )));
        }
        let mut index = HashMap::with_capacity(names.len());
        for (i, name) in names.iter().enumerate() {
            if name.is_empty() || name.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!(
                    "label names must be non-empty and whitespace-free, got {name:?}"
                )));
            }
            if index.insert(name.clone(), i).is_some() {
                return Err(Error::invalid(format!("duplicate label `{name}`")));
            }
        }
        Ok(LabelVocabulary {
            names,
            weather_count,
            index,
        })
    }

    /// The 17-label schema with its 4-label weather block.
    pub fn planet() -> Self {
        LabelVocabulary::new(PLANET_LABELS.to_vec(), PLANET_WEATHER_COUNT)
            .expect("built-in vocabulary is valid")
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn weather_count(&self) -> usize {
        self.weather_count
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }
}

/// Binary `n_samples × n_labels` assignment matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMatrix {
    values: Array2<u8>,
    vocab: Arc<LabelVocabulary>,
}

impl LabelMatrix {
    pub fn new(values: Array2<u8>, vocab: Arc<LabelVocabulary>) -> Result<Self> {
        if values.ncols() != vocab.len() {
            return Err(Error::shape(format!(
                "label matrix has {} columns but vocabulary has {} labels",
                values.ncols(),
                vocab.len()
            )));
        }
        if let Some(bad) = values.iter().find(|&&v| v > 1) {
            return Err(Error::invalid(format!("label entries must be 0 or 1, found {bad}")));
        }
        Ok(LabelMatrix { values, vocab })
    }

    /// Builds a matrix from row-major boolean-like rows.
    pub fn from_rows(rows: &[Vec<u8>], vocab: Arc<LabelVocabulary>) -> Result<Self> {
        let n_labels = vocab.len();
        let mut values = Array2::zeros((rows.len(), n_labels));
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_labels {
                return Err(Error::shape(format!(
                    "row {i} has {} entries, expected {n_labels}",
                    row.len()
                )));
            }
            for (j, &v) in row.iter().enumerate() {
                values[[i, j]] = v;
            }
        }
        LabelMatrix::new(values, vocab)
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn vocab(&self) -> &Arc<LabelVocabulary> {
        &self.vocab
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, sample: usize, label: usize) -> bool {
        self.values[[sample, label]] == 1
    }

    pub fn row(&self, sample: usize) -> ArrayView1<'_, u8> {
        self.values.row(sample)
    }

    pub fn column(&self, label: usize) -> ArrayView1<'_, u8> {
        self.values.column(label)
    }

    /// Rows `indices`, in that order.
    pub fn select_rows(&self, indices: &[usize]) -> LabelMatrix {
        LabelMatrix {
            values: self.values.select(Axis(0), indices),
            vocab: Arc::clone(&self.vocab),
        }
    }

    /// Labels as 0.0 / 1.0 reals, the form the learners train on.
    pub fn to_f64(&self) -> Array2<f64> {
        self.values.mapv(f64::from)
    }

    /// Number of positive samples per label.
    pub fn positives_per_label(&self) -> Vec<usize> {
        self.values
            .columns()
            .into_iter()
            .map(|c| c.iter().filter(|&&v| v == 1).count())
            .collect()
    }

    pub(crate) fn same_shape(&self, other: &LabelMatrix, what: &str) -> Result<()> {
        if self.values.dim() != other.values.dim() {
            return Err(Error::shape(format!(
                "{what}: {:?} vs {:?}",
                self.values.dim(),
                other.values.dim()
            )));
        }
        if self.vocab != other.vocab {
            return Err(Error::shape(format!("{what}: vocabularies differ")));
        }
        Ok(())
    }
}

/// Real `n_samples × n_labels` score matrix with every entry in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbMatrix {
    values: Array2<f64>,
    vocab: Arc<LabelVocabulary>,
}

impl ProbMatrix {
    pub fn new(values: Array2<f64>, vocab: Arc<LabelVocabulary>) -> Result<Self> {
        if values.ncols() != vocab.len() {
            return Err(Error::shape(format!(
                "probability matrix has {} columns but vocabulary has {} labels",
                values.ncols(),
                vocab.len()
            )));
        }
        if let Some(((i, j), v)) = values
            .indexed_iter()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(Error::invalid(format!(
                "probability at row {i}, label `{}` is {v}, outside [0, 1]",
                vocab.names()[j]
            )));
        }
        Ok(ProbMatrix { values, vocab })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn vocab(&self) -> &Arc<LabelVocabulary> {
        &self.vocab
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_labels(&self) -> usize {
        self.values.ncols()
    }

    pub fn column(&self, label: usize) -> ArrayView1<'_, f64> {
        self.values.column(label)
    }

    pub fn select_rows(&self, indices: &[usize]) -> ProbMatrix {
        ProbMatrix {
            values: self.values.select(Axis(0), indices),
            vocab: Arc::clone(&self.vocab),
        }
    }
}

/// Real `n_samples × n_features` design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Array2<f64>,
    feature_names: Option<Vec<String>>,
}

impl FeatureMatrix {
    pub fn new(values: Array2<f64>, feature_names: Option<Vec<String>>) -> Result<Self> {
        if let Some(names) = &feature_names {
            if names.len() != values.ncols() {
                return Err(Error::shape(format!(
                    "{} feature names for {} columns",
                    names.len(),
                    values.ncols()
                )));
            }
        }
        if let Some(((i, j), v)) = values.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::invalid(format!("feature ({i}, {j}) is not finite: {v}")));
        }
        Ok(FeatureMatrix {
            values,
            feature_names,
        })
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn feature_names(&self) -> Option<&[String]> {
        self.feature_names.as_deref()
    }

    pub fn n_samples(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.values.ncols()
    }

    pub fn select_rows(&self, indices: &[usize]) -> FeatureMatrix {
        FeatureMatrix {
            values: self.values.select(Axis(0), indices),
            feature_names: self.feature_names.clone(),
        }
    }
}

/// Seed for every randomized operation. A fixed seed yields a bit-identical
/// sequence on a given build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RngSeed(pub u64);

impl RngSeed {
    pub fn rng(self) -> Rng {
        Rng::seed_from_u64(self.0)
    }

    /// Independent stream `stream` under the same key, used to give each
    /// tree, label model or fold its own reproducible sequence regardless
    /// of execution order.
    pub fn substream(self, stream: u64) -> Rng {
        let mut rng = Rng::seed_from_u64(self.0);
        rng.set_stream(stream);
        rng
    }

    /// A new seed mixed from this one and `salt` (splitmix64 finalizer).
    pub fn derive(self, salt: u64) -> RngSeed {
        let mut z = self
            .0
            .wrapping_add(salt.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        RngSeed(z ^ (z >> 31))
    }
}

impl Default for RngSeed {
    fn default() -> Self {
        RngSeed(42)
    }
}
