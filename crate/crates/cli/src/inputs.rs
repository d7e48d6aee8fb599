//! Loading and row alignment of the CSV inputs.

use std::collections::{BTreeSet, HashMap};
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context};
use canopy_core::data::{PLANET_LABELS, PLANET_WEATHER_COUNT};
use canopy_core::io::{self, VocabSource, ID_COLUMN};
use canopy_core::{FeatureMatrix, LabelMatrix, LabelVocabulary, ProbMatrix};

use crate::manifest::Run;

fn header(path: &Path) -> anyhow::Result<Vec<String>> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let h = rdr.headers().with_context(|| format!("{}: reading header", path.display()))?;
    Ok(h.iter().map(|s| s.trim_start_matches('\u{feff}').to_string()).collect())
}

/// True for an `image_name,tags` file.
pub fn is_tag_file(path: &Path) -> anyhow::Result<bool> {
    let h = header(path)?;
    Ok(h.len() == 2 && h[0] == ID_COLUMN && h[1] == "tags")
}

/// Vocabulary named by a probability file's header. The 17 planet labels
/// (in any column order) give the planet vocabulary with its weather block.
pub fn vocab_from_probs(path: &Path) -> anyhow::Result<Arc<LabelVocabulary>> {
    let h = header(path)?;
    if h.first().map(String::as_str) != Some(ID_COLUMN) {
        bail!("{}: line 1: first column must be `{ID_COLUMN}`", path.display());
    }
    let names: Vec<String> = h[1..].to_vec();
    let planet: BTreeSet<&str> = PLANET_LABELS.iter().copied().collect();
    let given: BTreeSet<&str> = names.iter().map(String::as_str).collect();
    if given == planet && names.len() == PLANET_LABELS.len() {
        return Ok(Arc::new(LabelVocabulary::planet()));
    }
    LabelVocabulary::new(names, 0).map(Arc::new).with_context(|| format!("{}: header", path.display()))
}

pub fn probs(path: &Path, vocab: &Arc<LabelVocabulary>, run: &mut Run) -> anyhow::Result<(Vec<String>, ProbMatrix)> {
    run.input(path);
    Ok(io::load_probs(path, vocab)?)
}

/// Planet vocabulary for a tag set drawn from the planet labels that
/// includes every weather label; otherwise the sorted tags.
pub fn vocab_for_tags(names: &BTreeSet<String>) -> anyhow::Result<Arc<LabelVocabulary>> {
    let planet = names.iter().all(|n| PLANET_LABELS.contains(&n.as_str()))
        && PLANET_LABELS[..PLANET_WEATHER_COUNT].iter().all(|w| names.contains(*w));
    if planet {
        return Ok(Arc::new(LabelVocabulary::planet()));
    }
    Ok(Arc::new(LabelVocabulary::new(names.iter().cloned().collect(), 0)?))
}

/// Tags under `vocab`, or under [`vocab_for_tags`] of the file's own tags.
pub fn truth(
    path: &Path,
    vocab: Option<&Arc<LabelVocabulary>>,
    run: &mut Run,
) -> anyhow::Result<(Vec<String>, LabelMatrix)> {
    run.input(path);
    if let Some(v) = vocab {
        return Ok(io::load_tags(path, &VocabSource::Explicit(v.clone()))?);
    }
    let (ids, labels) = io::load_tags(path, &VocabSource::Infer)?;
    let vocab = vocab_for_tags(&labels.vocab().names().iter().cloned().collect())?;
    if vocab.len() == labels.n_labels() && vocab.weather_count() == 0 {
        return Ok((ids, labels));
    }
    Ok(io::load_tags(path, &VocabSource::Explicit(vocab))?)
}

pub fn features(path: &Path, run: &mut Run) -> anyhow::Result<(Vec<String>, FeatureMatrix)> {
    run.input(path);
    Ok(io::load_features(path)?)
}

/// Row index in `ids` of every id in `want`, in `want` order.
pub fn align(want: &[String], want_file: &Path, ids: &[String], ids_file: &Path) -> anyhow::Result<Vec<usize>> {
    let index: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    want.iter()
        .enumerate()
        .map(|(row, id)| {
            index.get(id.as_str()).copied().ok_or_else(|| {
                anyhow::anyhow!(
                    "{}: line {}: sample `{id}` is missing from {}",
                    want_file.display(),
                    row + 2,
                    ids_file.display()
                )
            })
        })
        .collect()
}
