//! Meta-knowledge base construction: each labeled dataset's ground truth
//! is corrupted at a grid of noise levels, and every corrupted partition
//! becomes one training row (meta-features, SIL, DBS) -> ARI.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::core::{canonicalize, fmt_float, Dataset, PairwiseDistances, Partition, RngStream};
use crate::cvi::{adjusted_rand_index, CviScores};
use crate::metafeatures::{self, MetaFeatureVector, META_FEATURE_NAMES};
use crate::{Error, Result};

/// One training observation: where a corrupted partition of one dataset
/// landed in (SIL, DBS) space, and the ARI it actually achieved.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaBaseRow {
    pub dataset_id: String,
    pub noise_level: f64,
    pub metafeatures: MetaFeatureVector,
    pub sil: f64,
    pub dbs: f64,
    pub ari: f64,
}

/// Pre-canonical corruption: per point, with probability `noise_level` the
/// label is redrawn uniformly over all k labels. Redrawing over all labels
/// (rather than the other k-1) makes full noise exactly chance-level
/// labeling, so mean ARI degrades monotonically to 0; excluding the old
/// label would make noise 1 anti-correlated with the truth (at k=2 it
/// reproduces the truth exactly). One trigger draw is consumed per point
/// regardless of the outcome.
fn corrupt_raw(truth: &Partition, noise_level: f64, rng: &mut impl Rng) -> Vec<i64> {
    let k = truth.k();
    truth
        .assignments()
        .iter()
        .map(|&label| {
            if rng.random::<f64>() < noise_level {
                rng.random_range(0..k) as i64
            } else {
                label as i64
            }
        })
        .collect()
}

/// Corrupts a ground-truth partition at the given noise level. Noise 0
/// returns the truth unchanged; noise 1 relabels every point.
pub fn corrupt_labels(truth: &Partition, noise_level: f64, stream: RngStream) -> Result<Partition> {
    if truth.k() < 2 {
        return Err(Error::DegenerateTruth(truth.k()));
    }
    if !(0.0..=1.0).contains(&noise_level) {
        return Err(Error::InvalidInput(format!(
            "noise level {noise_level} outside [0, 1]"
        )));
    }
    canonicalize(&corrupt_raw(truth, noise_level, &mut stream.rng()))
}

/// The evenly spaced noise grid {j/(c-1) : j = 0..c-1}.
fn noise_grid(corruptions: usize) -> Vec<f64> {
    (0..corruptions)
        .map(|j| j as f64 / (corruptions - 1) as f64)
        .collect()
}

/// Builds the meta-base: for every dataset, meta-features are extracted
/// once and each grid level contributes one corrupted partition scored by
/// SIL/DBS on the original features and ARI against the truth. Rows come
/// back sorted by (dataset_id, noise_level); the same seed gives identical
/// rows regardless of thread schedule.
pub fn build(datasets: &[Dataset], corruptions: usize, seed: u64) -> Result<Vec<MetaBaseRow>> {
    if corruptions < 2 {
        return Err(Error::ConfigError(format!(
            "corruptions per dataset must be at least 2, got {corruptions}"
        )));
    }
    for d in datasets {
        if d.labels().is_none() {
            return Err(Error::MissingLabels(d.id().to_string()));
        }
    }
    let mut order: Vec<usize> = (0..datasets.len()).collect();
    order.sort_by(|&a, &b| datasets[a].id().cmp(datasets[b].id()));
    let grid = noise_grid(corruptions);
    let root = RngStream::new(seed);

    let per_dataset: Vec<Result<Vec<MetaBaseRow>>> = order
        .par_iter()
        .enumerate()
        .map(|(rank, &di)| {
            let dataset = &datasets[di];
            let truth = dataset.truth().expect("labels checked above");
            let mf = metafeatures::extract(dataset)?;
            let pd = PairwiseDistances::compute(dataset.features());
            let stream = root.substream(rank as u64);
            grid.iter()
                .enumerate()
                .map(|(j, &level)| {
                    let corrupted = corrupt_labels(&truth, level, stream.substream(j as u64))?;
                    let scores = CviScores::measure(dataset, &corrupted, &pd);
                    let ari = adjusted_rand_index(&truth, &corrupted)?;
                    Ok(MetaBaseRow {
                        dataset_id: dataset.id().to_string(),
                        noise_level: level,
                        metafeatures: mf.clone(),
                        sil: scores.sil,
                        dbs: scores.dbs,
                        ari,
                    })
                })
                .collect()
        })
        .collect();

    let mut rows = Vec::with_capacity(datasets.len() * corruptions);
    for r in per_dataset {
        rows.extend(r?);
    }
    Ok(rows)
}

/// Writes rows as CSV: dataset_id, noise_level, the 38 meta-feature
/// columns, sil, dbs, ari. NaN is spelled "nan".
pub fn write_csv(rows: &[MetaBaseRow], path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    let mut header = vec!["dataset_id".to_string(), "noise_level".to_string()];
    header.extend(META_FEATURE_NAMES.iter().map(|n| n.to_string()));
    header.extend(["sil", "dbs", "ari"].map(String::from));
    writeln!(w, "{}", header.join(","))?;
    for row in rows {
        let mut cells = vec![row.dataset_id.clone(), fmt_float(row.noise_level)];
        cells.extend(row.metafeatures.values().iter().map(|&v| fmt_float(v)));
        cells.push(fmt_float(row.sil));
        cells.push(fmt_float(row.dbs));
        cells.push(fmt_float(row.ari));
        writeln!(w, "{}", cells.join(","))?;
    }
    w.flush()?;
    Ok(())
}

fn parse_cell(cell: &str, row: usize, column: usize) -> Result<f64> {
    cell.parse::<f64>().map_err(|_| Error::ParseError {
        row,
        column,
        message: format!("expected a number, got {cell:?}"),
    })
}

/// Reads a meta-base CSV produced by [`write_csv`], validating the header.
pub fn read_csv(path: &Path) -> Result<Vec<MetaBaseRow>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(BufReader::new(File::open(path)?));
    let expected_len = 2 + META_FEATURE_NAMES.len() + 3;
    {
        let headers = reader.headers().map_err(csv_error)?;
        let mut expected = vec!["dataset_id", "noise_level"];
        expected.extend(META_FEATURE_NAMES);
        expected.extend(["sil", "dbs", "ari"]);
        let got: Vec<&str> = headers.iter().collect();
        if got != expected {
            return Err(Error::FormatError(
                "meta-base header does not match the canonical column list".to_string(),
            ));
        }
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(csv_error)?;
        // Header is row 1.
        let file_row = i + 2;
        if record.len() != expected_len {
            return Err(Error::ParseError {
                row: file_row,
                column: record.len(),
                message: format!("expected {expected_len} cells, got {}", record.len()),
            });
        }
        let cell = |c: usize| parse_cell(&record[c], file_row, c + 1);
        let mut values = vec![0.0; META_FEATURE_NAMES.len()];
        for (j, v) in values.iter_mut().enumerate() {
            *v = cell(2 + j)?;
        }
        rows.push(MetaBaseRow {
            dataset_id: record[0].to_string(),
            noise_level: cell(1)?,
            metafeatures: MetaFeatureVector::from_values(values)?,
            sil: cell(expected_len - 3)?,
            dbs: cell(expected_len - 2)?,
            ari: cell(expected_len - 1)?,
        });
    }
    Ok(rows)
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::IoError(io),
        other => Error::ParseError {
            row: 0,
            column: 0,
            message: format!("{other:?}"),
        },
    }
}
