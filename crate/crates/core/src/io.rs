//! CSV readers and writers for tag files, probability matrices, feature
//! matrices, threshold vectors and fold assignments.
//!
//! Every reader has a `read_*` form over any [`Read`] (with an `origin`
//! string used in error messages) and a `load_*` convenience over a path.
//! Floats are written with 6 decimal places.

use std::collections::{BTreeSet, HashSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use ndarray::Array2;

use crate::data::{FeatureMatrix, LabelMatrix, LabelVocabulary, ProbMatrix};
use crate::error::{Error, Result};
use crate::split::FoldAssignment;
use crate::threshold::ThresholdVector;

/// Header of the sample-id column in every CSV.
pub const ID_COLUMN: &str = "image_name";

/// Where the label vocabulary of a tag file comes from.
#[derive(Debug, Clone)]
pub enum VocabSource {
    /// A closed vocabulary; any other tag is an error.
    Explicit(Arc<LabelVocabulary>),
    /// Lexicographically sorted distinct tags of the file, no weather block.
    Infer,
}

fn open(path: &Path) -> Result<File> {
    File::open(path).map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|e| Error::io(path, e))
}

fn reader<R: Read>(input: R) -> csv::Reader<R> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input)
}

fn csv_err(origin: &str, e: csv::Error) -> Error {
    let line = e.position().map(|p| p.line()).unwrap_or(0);
    Error::parse(origin, line, e.to_string())
}

fn record_line(record: &csv::StringRecord) -> u64 {
    record.position().map(|p| p.line()).unwrap_or(0)
}

fn check_id_header(origin: &str, headers: &csv::StringRecord) -> Result<()> {
    match headers.get(0) {
        Some(h) if h.trim_start_matches('\u{feff}') == ID_COLUMN => Ok(()),
        other => Err(Error::parse(
            origin,
            1,
            format!("first column must be `{ID_COLUMN}`, found {other:?}"),
        )),
    }
}

fn parse_unit(origin: &str, line: u64, column: &str, cell: &str) -> Result<f64> {
    let v: f64 = cell.parse().map_err(|_| {
        Error::parse(origin, line, format!("column `{column}`: `{cell}` is not a number"))
    })?;
    if !(v.is_finite() && (0.0..=1.0).contains(&v)) {
        return Err(Error::parse(
            origin,
            line,
            format!("column `{column}`: value {cell} is outside [0, 1]"),
        ));
    }
    Ok(v)
}

/// Reads a Kaggle-style `image_name,tags` file.
pub fn read_tags<R: Read>(
    input: R,
    origin: &str,
    vocab: &VocabSource,
) -> Result<(Vec<String>, LabelMatrix)> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    check_id_header(origin, &headers)?;
    if headers.len() != 2 || &headers[1] != "tags" {
        return Err(Error::parse(origin, 1, "header must be `image_name,tags`"));
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut tag_rows: Vec<(u64, Vec<String>)> = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(origin, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(Error::parse(origin, line, "empty sample id"));
        }
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate sample id `{id}`")));
        }
        ids.push(id);
        tag_rows.push((line, record[1].split_whitespace().map(str::to_string).collect()));
    }

    let vocab = match vocab {
        VocabSource::Explicit(v) => Arc::clone(v),
        VocabSource::Infer => {
            let distinct: BTreeSet<&str> = tag_rows
                .iter()
                .flat_map(|(_, tags)| tags.iter().map(String::as_str))
                .collect();
            Arc::new(LabelVocabulary::new(distinct.into_iter().collect(), 0)?)
        }
    };

    let mut values = Array2::zeros((ids.len(), vocab.len()));
    for (i, (line, tags)) in tag_rows.iter().enumerate() {
        for tag in tags {
            let j = vocab.index_of(tag).ok_or_else(|| {
                Error::parse(origin, *line, format!("unknown label `{tag}`"))
            })?;
            values[[i, j]] = 1;
        }
    }
    Ok((ids, LabelMatrix::new(values, vocab)?))
}

pub fn load_tags(path: impl AsRef<Path>, vocab: &VocabSource) -> Result<(Vec<String>, LabelMatrix)> {
    let path = path.as_ref();
    read_tags(open(path)?, &path.display().to_string(), vocab)
}

pub fn write_tags<W: Write>(output: W, ids: &[String], labels: &LabelMatrix) -> Result<()> {
    if ids.len() != labels.n_samples() {
        return Err(Error::shape(format!(
            "{} ids for {} rows",
            ids.len(),
            labels.n_samples()
        )));
    }
    let mut wtr = csv::Writer::from_writer(output);
    let io_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    wtr.write_record([ID_COLUMN, "tags"]).map_err(io_err)?;
    let names = labels.vocab().names();
    for (i, id) in ids.iter().enumerate() {
        let tags: Vec<&str> = labels
            .row(i)
            .iter()
            .zip(names)
            .filter(|(&v, _)| v == 1)
            .map(|(_, n)| n.as_str())
            .collect();
        wtr.write_record([id.as_str(), &tags.join(" ")]).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_tags(path: impl AsRef<Path>, ids: &[String], labels: &LabelMatrix) -> Result<()> {
    write_tags(create(path.as_ref())?, ids, labels)
}

/// Reads `image_name,<label1>,...,<labelK>` with the label columns in any
/// order; columns are realigned to `vocab` order.
pub fn read_probs<R: Read>(
    input: R,
    origin: &str,
    vocab: &Arc<LabelVocabulary>,
) -> Result<(Vec<String>, ProbMatrix)> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    check_id_header(origin, &headers)?;

    // column position in the file for each vocabulary label
    let mut position = vec![usize::MAX; vocab.len()];
    for (col, name) in headers.iter().enumerate().skip(1) {
        let j = vocab.index_of(name).ok_or_else(|| Error::UnknownLabel {
            label: name.to_string(),
            context: format!("{origin}: header column {}", col + 1),
        })?;
        if position[j] != usize::MAX {
            return Err(Error::parse(origin, 1, format!("duplicate column `{name}`")));
        }
        position[j] = col;
    }
    if let Some(j) = position.iter().position(|&p| p == usize::MAX) {
        return Err(Error::parse(
            origin,
            1,
            format!("missing label column `{}`", vocab.names()[j]),
        ));
    }

    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut flat = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(origin, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate sample id `{id}`")));
        }
        for (j, &col) in position.iter().enumerate() {
            flat.push(parse_unit(origin, line, &vocab.names()[j], &record[col])?);
        }
        ids.push(id);
    }
    let values = Array2::from_shape_vec((ids.len(), vocab.len()), flat)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok((ids, ProbMatrix::new(values, Arc::clone(vocab))?))
}

pub fn load_probs(
    path: impl AsRef<Path>,
    vocab: &Arc<LabelVocabulary>,
) -> Result<(Vec<String>, ProbMatrix)> {
    let path = path.as_ref();
    read_probs(open(path)?, &path.display().to_string(), vocab)
}

fn write_matrix<W: Write>(
    output: W,
    ids: &[String],
    columns: &[String],
    values: &Array2<f64>,
) -> Result<()> {
    if ids.len() != values.nrows() {
        return Err(Error::shape(format!("{} ids for {} rows", ids.len(), values.nrows())));
    }
    let mut wtr = csv::Writer::from_writer(output);
    let io_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    let mut header = vec![ID_COLUMN.to_string()];
    header.extend(columns.iter().cloned());
    wtr.write_record(&header).map_err(io_err)?;
    for (id, row) in ids.iter().zip(values.rows()) {
        let mut rec = vec![id.clone()];
        rec.extend(row.iter().map(|v| format!("{v:.6}")));
        wtr.write_record(&rec).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn write_probs<W: Write>(output: W, ids: &[String], probs: &ProbMatrix) -> Result<()> {
    write_matrix(output, ids, probs.vocab().names(), probs.values())
}

pub fn save_probs(path: impl AsRef<Path>, ids: &[String], probs: &ProbMatrix) -> Result<()> {
    write_probs(create(path.as_ref())?, ids, probs)
}

/// Reads `image_name,<f1>,...,<fd>` into a feature matrix.
pub fn read_features<R: Read>(input: R, origin: &str) -> Result<(Vec<String>, FeatureMatrix)> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    check_id_header(origin, &headers)?;
    let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
    let mut ids = Vec::new();
    let mut seen = HashSet::new();
    let mut flat = Vec::new();
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(origin, e))?;
        let line = record_line(&record);
        let id = record[0].to_string();
        if !seen.insert(id.clone()) {
            return Err(Error::parse(origin, line, format!("duplicate sample id `{id}`")));
        }
        for (cell, name) in record.iter().skip(1).zip(&names) {
            let v: f64 = cell.parse().map_err(|_| {
                Error::parse(origin, line, format!("column `{name}`: `{cell}` is not a number"))
            })?;
            if !v.is_finite() {
                return Err(Error::parse(origin, line, format!("column `{name}` is not finite")));
            }
            flat.push(v);
        }
        ids.push(id);
    }
    let values = Array2::from_shape_vec((ids.len(), names.len()), flat)
        .map_err(|e| Error::shape(e.to_string()))?;
    Ok((ids, FeatureMatrix::new(values, Some(names))?))
}

pub fn load_features(path: impl AsRef<Path>) -> Result<(Vec<String>, FeatureMatrix)> {
    let path = path.as_ref();
    read_features(open(path)?, &path.display().to_string())
}

pub fn save_features(path: impl AsRef<Path>, ids: &[String], features: &FeatureMatrix) -> Result<()> {
    let names: Vec<String> = match features.feature_names() {
        Some(n) => n.to_vec(),
        None => (0..features.n_features()).map(|j| format!("f{j}")).collect(),
    };
    write_matrix(create(path.as_ref())?, ids, &names, features.values())
}

/// Two-column `label,threshold` file; rows may be in any label order.
pub fn read_thresholds<R: Read>(
    input: R,
    origin: &str,
    vocab: &Arc<LabelVocabulary>,
) -> Result<ThresholdVector> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    if headers.len() != 2 || &headers[0] != "label" || &headers[1] != "threshold" {
        return Err(Error::parse(origin, 1, "header must be `label,threshold`"));
    }
    let mut cutoffs = vec![f64::NAN; vocab.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(origin, e))?;
        let line = record_line(&record);
        let j = vocab.index_of(&record[0]).ok_or_else(|| {
            Error::parse(origin, line, format!("unknown label `{}`", &record[0]))
        })?;
        if !cutoffs[j].is_nan() {
            return Err(Error::parse(origin, line, format!("duplicate label `{}`", &record[0])));
        }
        cutoffs[j] = parse_unit(origin, line, "threshold", &record[1])?;
    }
    if let Some(j) = cutoffs.iter().position(|c| c.is_nan()) {
        return Err(Error::parse(
            origin,
            0,
            format!("no threshold for label `{}`", vocab.names()[j]),
        ));
    }
    ThresholdVector::new(cutoffs, Arc::clone(vocab))
}

pub fn load_thresholds(path: impl AsRef<Path>, vocab: &Arc<LabelVocabulary>) -> Result<ThresholdVector> {
    let path = path.as_ref();
    read_thresholds(open(path)?, &path.display().to_string(), vocab)
}

pub fn write_thresholds<W: Write>(output: W, thresholds: &ThresholdVector) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(output);
    let io_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    wtr.write_record(["label", "threshold"]).map_err(io_err)?;
    for (name, c) in thresholds.vocab().names().iter().zip(thresholds.cutoffs()) {
        wtr.write_record([name.as_str(), &format!("{c:.6}")]).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_thresholds(path: impl AsRef<Path>, thresholds: &ThresholdVector) -> Result<()> {
    write_thresholds(create(path.as_ref())?, thresholds)
}

/// Reads `image_name,fold` and orders the assignment by `ids`.
pub fn read_folds<R: Read>(input: R, origin: &str, ids: &[String]) -> Result<FoldAssignment> {
    let mut rdr = reader(input);
    let headers = rdr.headers().map_err(|e| csv_err(origin, e))?.clone();
    check_id_header(origin, &headers)?;
    if headers.len() != 2 || &headers[1] != "fold" {
        return Err(Error::parse(origin, 1, "header must be `image_name,fold`"));
    }
    let index: std::collections::HashMap<&str, usize> =
        ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let mut fold_of = vec![usize::MAX; ids.len()];
    for record in rdr.records() {
        let record = record.map_err(|e| csv_err(origin, e))?;
        let line = record_line(&record);
        let &i = index.get(&record[0]).ok_or_else(|| {
            Error::parse(origin, line, format!("sample `{}` is not in the dataset", &record[0]))
        })?;
        if fold_of[i] != usize::MAX {
            return Err(Error::parse(origin, line, format!("duplicate sample `{}`", &record[0])));
        }
        fold_of[i] = record[1].parse().map_err(|_| {
            Error::parse(origin, line, format!("fold `{}` is not a non-negative integer", &record[1]))
        })?;
    }
    if let Some(i) = fold_of.iter().position(|&f| f == usize::MAX) {
        return Err(Error::parse(origin, 0, format!("sample `{}` has no fold", ids[i])));
    }
    let k = fold_of.iter().max().map_or(0, |m| m + 1);
    FoldAssignment::new(fold_of, k)
}

pub fn load_folds(path: impl AsRef<Path>, ids: &[String]) -> Result<FoldAssignment> {
    let path = path.as_ref();
    read_folds(open(path)?, &path.display().to_string(), ids)
}

pub fn write_folds<W: Write>(output: W, ids: &[String], folds: &FoldAssignment) -> Result<()> {
    if ids.len() != folds.n_samples() {
        return Err(Error::shape(format!("{} ids for {} samples", ids.len(), folds.n_samples())));
    }
    let mut wtr = csv::Writer::from_writer(output);
    let io_err = |e: csv::Error| Error::invalid(format!("csv write failed: {e}"));
    wtr.write_record([ID_COLUMN, "fold"]).map_err(io_err)?;
    for (id, f) in ids.iter().zip(folds.fold_of()) {
        wtr.write_record([id.as_str(), &f.to_string()]).map_err(io_err)?;
    }
    wtr.flush().map_err(|e| Error::invalid(format!("csv flush failed: {e}")))?;
    Ok(())
}

pub fn save_folds(path: impl AsRef<Path>, ids: &[String], folds: &FoldAssignment) -> Result<()> {
    write_folds(create(path.as_ref())?, ids, folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn planet() -> Arc<LabelVocabulary> {
        Arc::new(LabelVocabulary::planet())
    }

    #[test]
    fn tags_row_maps_to_binary_vector() {
        let csv = "image_name,tags\ntrain_0,haze primary\ntrain_1,\r\n";
        let (ids, m) = read_tags(csv.as_bytes(), "t.csv", &VocabSource::Explicit(planet())).unwrap();
        assert_eq!(ids, ["train_0", "train_1"]);
        let row: Vec<u8> = m.row(0).to_vec();
        let mut expected = vec![0u8; 17];
        expected[2] = 1;
        expected[12] = 1;
        assert_eq!(row, expected);
        assert!(m.row(1).iter().all(|&v| v == 0));
    }

    #[test]
    fn unknown_tag_is_rejected_with_line() {
        let csv = "image_name,tags\ntrain_0,clear\ntrain_1,fog\n";
        let err = read_tags(csv.as_bytes(), "t.csv", &VocabSource::Explicit(planet())).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("fog") && msg.contains("line 3"), "{msg}");
    }

    #[test]
    fn duplicate_id_is_rejected() {
        let csv = "image_name,tags\na,clear\na,haze\n";
        assert!(read_tags(csv.as_bytes(), "t", &VocabSource::Explicit(planet())).is_err());
    }

    #[test]
    fn inferred_vocab_is_sorted() {
        let csv = "image_name,tags\na,water clear\nb,agriculture\n";
        let (_, m) = read_tags(csv.as_bytes(), "t", &VocabSource::Infer).unwrap();
        assert_eq!(m.vocab().names(), ["agriculture", "clear", "water"]);
        assert_eq!(m.vocab().weather_count(), 0);
    }

    #[test]
    fn probs_columns_are_realigned() {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a", "b", "c"], 0).unwrap());
        let canonical = "image_name,a,b,c\nx,0.1,0.2,0.3\ny,0.4,0.5,0.6\n";
        let permuted = "image_name,c,a,b\nx,0.3,0.1,0.2\ny,0.6,0.4,0.5\n";
        let (_, p1) = read_probs(canonical.as_bytes(), "p", &vocab).unwrap();
        let (_, p2) = read_probs(permuted.as_bytes(), "p", &vocab).unwrap();
        assert_eq!(p1, p2);
    }

    #[test]
    fn probs_range_and_missing_column_errors() {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a", "b"], 0).unwrap());
        let bad = "image_name,a,b\nx,1.2,0.1\n";
        let err = read_probs(bad.as_bytes(), "p", &vocab).unwrap_err().to_string();
        assert!(err.contains("outside [0, 1]"), "{err}");
        let missing = "image_name,a\nx,0.5\n";
        assert!(read_probs(missing.as_bytes(), "p", &vocab).is_err());
        let nan = "image_name,a,b\nx,abc,0.1\n";
        assert!(read_probs(nan.as_bytes(), "p", &vocab).is_err());
    }

    #[test]
    fn probs_round_trip() {
        let vocab = Arc::new(LabelVocabulary::new(vec!["a", "b"], 0).unwrap());
        let src = "image_name,a,b\nx,0.125000,0.333333\ny,1.000000,0.000000\n";
        let (ids, p) = read_probs(src.as_bytes(), "p", &vocab).unwrap();
        let mut out = Vec::new();
        write_probs(&mut out, &ids, &p).unwrap();
        assert_eq!(String::from_utf8(out.clone()).unwrap(), src);
        let (ids2, p2) = read_probs(out.as_slice(), "p", &vocab).unwrap();
        assert_eq!(ids, ids2);
        assert_eq!(p, p2);
    }

    #[test]
    fn folds_round_trip() {
        let ids: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let folds = FoldAssignment::new(vec![1, 0, 1], 2).unwrap();
        let mut out = Vec::new();
        write_folds(&mut out, &ids, &folds).unwrap();
        let back = read_folds(out.as_slice(), "f", &ids).unwrap();
        assert_eq!(back, folds);
    }
}
