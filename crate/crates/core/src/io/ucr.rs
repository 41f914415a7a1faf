//! UCR archive text format: one series per line, label first, then values,
//! separated by tabs, commas or runs of spaces.

use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use crate::error::{Result, RtfnError};

pub const SIGMA_FLOOR: f64 = 1e-8;

/// One parsed line before label remapping and preprocessing.
#[derive(Clone, Debug, PartialEq)]
pub struct RawSeries {
    pub label: String,
    /// `NaN` marks a missing value.
    pub values: Vec<f64>,
    pub line: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub series: Vec<f64>,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SeriesDataset {
    pub name: String,
    pub train: Vec<Sample>,
    pub test: Vec<Sample>,
    /// Raw labels in class-id order.
    pub class_labels: Vec<String>,
    pub input_length: usize,
}

impl SeriesDataset {
    pub fn num_classes(&self) -> usize {
        self.class_labels.len()
    }
}

/// Borrowed series of a split, in order.
pub fn series_of(split: &[Sample]) -> Vec<&[f64]> {
    split.iter().map(|s| s.series.as_slice()).collect()
}

pub fn labels_of(split: &[Sample]) -> Vec<usize> {
    split.iter().map(|s| s.label).collect()
}

/// `(x - mean) / max(population std, 1e-8)`.
pub fn z_normalize(series: &[f64]) -> Vec<f64> {
    let n = series.len() as f64;
    let rough = series.iter().sum::<f64>() / n;
    // second pass removes the rounding residue so constant series map to exact zeros
    let mean = rough + series.iter().map(|x| x - rough).sum::<f64>() / n;
    let var = series.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    let sd = var.sqrt().max(SIGMA_FLOOR);
    series.iter().map(|x| (x - mean) / sd).collect()
}

fn is_missing(token: &str) -> bool {
    token.is_empty() || token.eq_ignore_ascii_case("nan") || token == "?"
}

fn split_fields(line: &str) -> Vec<&str> {
    if line.contains('\t') {
        line.split('\t').map(str::trim).collect()
    } else if line.contains(',') {
        line.split(',').map(str::trim).collect()
    } else {
        line.split_whitespace().collect()
    }
}

/// Parses UCR text. `path` only labels error messages.
pub fn parse_ucr(text: &str, path: &Path) -> Result<Vec<RawSeries>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let trimmed = raw.trim_end();
        if trimmed.trim().is_empty() {
            continue;
        }
        let fields = split_fields(trimmed);
        let label = fields[0].trim();
        if label.is_empty() {
            return Err(RtfnError::data_at("missing label", path, line));
        }
        let values = fields[1..]
            .iter()
            .enumerate()
            .map(|(j, tok)| {
                if is_missing(tok) {
                    return Ok(f64::NAN);
                }
                match tok.parse::<f64>() {
                    Ok(v) if v.is_finite() => Ok(v),
                    _ => Err(RtfnError::data_at(
                        format!("non-numeric value {tok:?} in field {}", j + 2),
                        path,
                        line,
                    )),
                }
            })
            .collect::<Result<Vec<f64>>>()?;
        if values.iter().all(|v| v.is_nan()) {
            return Err(RtfnError::data_at("series has no values", path, line));
        }
        out.push(RawSeries {
            label: label.to_string(),
            values,
            line,
        });
    }
    if out.is_empty() {
        return Err(RtfnError::Data {
            message: "file contains no series".into(),
            path: Some(path.to_path_buf()),
            line: None,
        });
    }
    Ok(out)
}

/// Re-emits parsed series as tab-separated UCR text (`NaN` for missing).
pub fn write_ucr(series: &[RawSeries]) -> String {
    let mut s = String::new();
    for r in series {
        s.push_str(&r.label);
        for v in &r.values {
            s.push('\t');
            if v.is_nan() {
                s.push_str("NaN");
            } else {
                s.push_str(&v.to_string());
            }
        }
        s.push('\n');
    }
    s
}

/// Fills `NaN` gaps by linear interpolation between the nearest present
/// neighbours; leading and trailing gaps copy the nearest present value.
pub fn interpolate_missing(values: &mut [f64]) {
    let present: Vec<usize> = (0..values.len()).filter(|&i| !values[i].is_nan()).collect();
    let (Some(&first), Some(&last)) = (present.first(), present.last()) else {
        return;
    };
    let head = values[first];
    values[..first].fill(head);
    let tail = values[last];
    values[last + 1..].fill(tail);
    for w in present.windows(2) {
        let (a, b) = (w[0], w[1]);
        let (va, vb) = (values[a], values[b]);
        for i in a + 1..b {
            let frac = (i - a) as f64 / (b - a) as f64;
            values[i] = va + frac * (vb - va);
        }
    }
}

fn compare_labels(a: &str, b: &str, numeric: bool) -> Ordering {
    if numeric {
        let (x, y) = (a.parse::<f64>().unwrap(), b.parse::<f64>().unwrap());
        x.partial_cmp(&y).unwrap_or(Ordering::Equal).then_with(|| a.cmp(b))
    } else {
        a.cmp(b)
    }
}

/// Distinct raw labels in ascending order: numeric when every label parses
/// as a number, lexicographic otherwise.
pub fn sorted_labels<'a>(labels: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut v: Vec<String> = labels.into_iter().map(str::to_string).collect();
    let numeric = v.iter().all(|l| l.parse::<f64>().is_ok_and(f64::is_finite));
    v.sort_by(|a, b| compare_labels(a, b, numeric));
    v.dedup();
    v
}

fn read(path: &Path) -> Result<Vec<RawSeries>> {
    let text = std::fs::read_to_string(path).map_err(|e| RtfnError::io(path, e))?;
    parse_ucr(&text, path)
}

/// Maps labels through `class_labels`, fills gaps, zero-pads to `length` and
/// z-normalizes each series.
pub fn preprocess(raw: Vec<RawSeries>, class_labels: &[String], length: usize, path: &Path) -> Result<Vec<Sample>> {
    raw.into_iter()
        .map(|r| {
            let label = class_labels.iter().position(|l| *l == r.label).ok_or_else(|| {
                RtfnError::data_at(format!("label {:?} does not occur in the training split", r.label), path, r.line)
            })?;
            if r.values.len() > length {
                return Err(RtfnError::data_at(
                    format!("series has {} values, longer than the training length {length}", r.values.len()),
                    path,
                    r.line,
                ));
            }
            let mut values = r.values;
            interpolate_missing(&mut values);
            values.resize(length, 0.0);
            Ok(Sample {
                series: z_normalize(&values),
                label,
            })
        })
        .collect()
}

/// Loads a train/test pair. Labels are remapped to `0..C` by ascending sort
/// of the training labels; a test label unseen in training is an error.
pub fn load_ucr_dataset(train_path: &Path, test_path: &Path) -> Result<SeriesDataset> {
    let train_raw = read(train_path)?;
    let test_raw = read(test_path)?;
    let class_labels = sorted_labels(train_raw.iter().map(|r| r.label.as_str()));
    let input_length = train_raw.iter().map(|r| r.values.len()).max().expect("nonempty split");
    let train = preprocess(train_raw, &class_labels, input_length, train_path)?;
    let test = preprocess(test_raw, &class_labels, input_length, test_path)?;
    Ok(SeriesDataset {
        name: dataset_name(train_path),
        train,
        test,
        class_labels,
        input_length,
    })
}

/// Loads one split against an existing label map and length, as stored in a
/// checkpoint.
pub fn load_split(path: &Path, class_labels: &[String], length: usize) -> Result<Vec<Sample>> {
    preprocess(read(path)?, class_labels, length, path)
}

/// `Coffee` for `.../Coffee_TRAIN.tsv`.
pub fn dataset_name(path: &Path) -> String {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    for suffix in ["_TRAIN", "_TEST"] {
        if let Some(base) = stem.strip_suffix(suffix) {
            return base.to_string();
        }
    }
    stem
}

/// `DIR/NAME/NAME_TRAIN.tsv` and `DIR/NAME/NAME_TEST.tsv`.
pub fn archive_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    let base = dir.join(name);
    (
        base.join(format!("{name}_TRAIN.tsv")),
        base.join(format!("{name}_TEST.tsv")),
    )
}
