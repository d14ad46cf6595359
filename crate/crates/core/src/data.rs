//! Loading sparse multi-label files and turning them into training sets.
//!
//! Input lines look like `label[,label...] idx:val idx:val ...`. Only the
//! first label is kept. A leading header line of three integers
//! (`N D K`, as written by the extreme-classification repository) is skipped.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sparse::SparseVector;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed token {token:?}: {reason}")]
    Malformed { line: usize, token: String, reason: &'static str },
    #[error("line {line}: duplicate feature index {index}")]
    DuplicateFeature { line: usize, index: u64 },
    #[error("no examples survive preprocessing")]
    EmptyDataset,
    #[error("need at least two classes, found {0}")]
    TooFewClasses(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexBase {
    Zero,
    One,
}

impl IndexBase {
    pub fn offset(self) -> u64 {
        match self {
            IndexBase::Zero => 0,
            IndexBase::One => 1,
        }
    }
}

/// One parsed line before preprocessing. Feature ids are already 0-based.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub line: usize,
    pub label: Option<u64>,
    pub features: Vec<(u32, f64)>,
}

impl RawExample {
    /// Lines with no label or no features are dropped by `preprocess`.
    pub fn flagged_for_discard(&self) -> bool {
        self.label.is_none() || self.features.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawFile {
    pub header: Option<[u64; 3]>,
    pub examples: Vec<RawExample>,
}

pub fn parse_sparse_file(path: &Path, base: IndexBase) -> Result<RawFile, DataError> {
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_sparse_reader(BufReader::new(file), base).map_err(|e| match e {
        DataError::Io { source, .. } => DataError::Io { path: path.to_path_buf(), source },
        other => other,
    })
}

pub fn parse_sparse_reader<R: BufRead>(reader: R, base: IndexBase) -> Result<RawFile, DataError> {
    let mut header = None;
    let mut examples = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| DataError::Io { path: PathBuf::new(), source })?;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        if idx == 0 {
            if let Some(h) = parse_header(line) {
                header = Some(h);
                continue;
            }
        }
        examples.push(parse_line(line, line_no, base)?);
    }
    Ok(RawFile { header, examples })
}

fn parse_header(line: &str) -> Option<[u64; 3]> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse().ok()?;
    let b = it.next()?.parse().ok()?;
    let c = it.next()?.parse().ok()?;
    it.next().is_none().then_some([a, b, c])
}

/// Parses one data line; `line_no` is only used in error messages.
pub fn parse_line(line: &str, line_no: usize, base: IndexBase) -> Result<RawExample, DataError> {
    let malformed = |token: &str, reason| DataError::Malformed {
        line: line_no,
        token: token.to_string(),
        reason,
    };
    let mut tokens = line.split_whitespace().peekable();
    // A line starting with whitespace, or whose first token is a feature, has no labels.
    let label = match tokens.peek() {
        Some(tok) if !line.starts_with(char::is_whitespace) && !tok.contains(':') => {
            let tok = tokens.next().unwrap();
            let first = tok.split(',').next().unwrap_or("");
            for part in tok.split(',') {
                if part.parse::<u64>().is_err() {
                    return Err(malformed(tok, "label is not a nonnegative integer"));
                }
            }
            Some(first.parse::<u64>().unwrap())
        }
        _ => None,
    };

    let mut features: Vec<(u32, f64)> = Vec::new();
    for tok in tokens {
        let (idx, val) = tok.split_once(':').ok_or_else(|| malformed(tok, "expected idx:val"))?;
        let idx: u64 = idx.parse().map_err(|_| malformed(tok, "bad feature index"))?;
        let val: f64 = val.parse().map_err(|_| malformed(tok, "bad feature value"))?;
        if !val.is_finite() {
            return Err(malformed(tok, "non-finite feature value"));
        }
        let idx = idx
            .checked_sub(base.offset())
            .ok_or_else(|| malformed(tok, "feature index below index base"))?;
        let idx = u32::try_from(idx).map_err(|_| malformed(tok, "feature index too large"))?;
        features.push((idx, val));
    }
    let mut seen: Vec<u32> = features.iter().map(|f| f.0).collect();
    seen.sort_unstable();
    if let Some(w) = seen.windows(2).find(|w| w[0] == w[1]) {
        return Err(DataError::DuplicateFeature { line: line_no, index: w[0] as u64 + base.offset() });
    }
    features.retain(|f| f.1 != 0.0);
    Ok(RawExample { line: line_no, label, features })
}

/// Writes raw examples back in the input format.
pub fn write_raw<W: Write>(out: &mut W, file: &RawFile, base: IndexBase) -> std::io::Result<()> {
    if let Some([n, d, k]) = file.header {
        writeln!(out, "{n} {d} {k}")?;
    }
    for ex in &file.examples {
        let mut line = String::new();
        if let Some(label) = ex.label {
            write!(line, "{label}").unwrap();
        }
        for &(idx, val) in &ex.features {
            write!(line, " {}:{}", idx as u64 + base.offset(), val).unwrap();
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct Example {
    pub label: usize,
    pub x: SparseVector,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub examples: Vec<Example>,
    num_classes: usize,
    dim: usize,
    class_counts: Vec<usize>,
    /// Original label for each dense class id.
    pub label_map: Vec<u64>,
}

#[derive(Debug, Clone, Copy)]
pub struct PreprocessOptions {
    pub max_features: usize,
    pub max_examples: usize,
}

impl Default for PreprocessOptions {
    fn default() -> Self {
        Self { max_features: 10_000, max_examples: 100_000 }
    }
}

/// Feature truncation, then discarding empty examples, then example-count
/// truncation (file order), then unit L2 normalization and dense label remap.
pub fn preprocess(name: &str, raw: &RawFile, opts: PreprocessOptions) -> Result<Dataset, DataError> {
    let limit = u32::try_from(opts.max_features).unwrap_or(u32::MAX);
    let mut kept: Vec<(u64, SparseVector)> = Vec::new();
    for ex in &raw.examples {
        if kept.len() == opts.max_examples {
            break;
        }
        let Some(label) = ex.label else { continue };
        let mut x = SparseVector::from_pairs(ex.features.clone()).ok_or(DataError::DuplicateFeature {
            line: ex.line,
            index: 0,
        })?;
        x.truncate_dim(limit);
        if x.is_empty() {
            continue;
        }
        x.normalize();
        kept.push((label, x));
    }
    if kept.is_empty() {
        return Err(DataError::EmptyDataset);
    }

    let label_map: Vec<u64> = {
        let mut labels: Vec<u64> = kept.iter().map(|e| e.0).collect();
        labels.sort_unstable();
        labels.dedup();
        labels
    };
    let examples: Vec<Example> = kept
        .into_iter()
        .map(|(label, x)| Example { label: label_map.binary_search(&label).unwrap(), x })
        .collect();

    let max_seen = examples.iter().filter_map(|e| e.x.max_index()).max().map_or(0, |m| m as usize + 1);
    let dim = match raw.header {
        Some([_, d, _]) => (d as usize).min(opts.max_features).max(max_seen),
        None => max_seen,
    };
    Ok(Dataset::with_label_map(name, examples, label_map.len(), dim, label_map))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub name: String,
    #[serde(rename = "N")]
    pub n: usize,
    #[serde(rename = "K")]
    pub k: usize,
    #[serde(rename = "D")]
    pub d: usize,
    /// Number of classes having each example count.
    pub class_counts_histogram: BTreeMap<usize, usize>,
}

impl Dataset {
    pub fn new(name: &str, examples: Vec<Example>, num_classes: usize, dim: usize) -> Self {
        let label_map = (0..num_classes as u64).collect();
        Self::with_label_map(name, examples, num_classes, dim, label_map)
    }

    fn with_label_map(
        name: &str,
        examples: Vec<Example>,
        num_classes: usize,
        dim: usize,
        label_map: Vec<u64>,
    ) -> Self {
        let mut class_counts = vec![0; num_classes];
        for ex in &examples {
            assert!(ex.label < num_classes, "label {} out of range", ex.label);
            class_counts[ex.label] += 1;
        }
        Self { name: name.to_string(), examples, num_classes, dim, class_counts, label_map }
    }

    pub fn n(&self) -> usize {
        self.examples.len()
    }

    pub fn k(&self) -> usize {
        self.num_classes
    }

    pub fn d(&self) -> usize {
        self.dim
    }

    pub fn class_counts(&self) -> &[usize] {
        &self.class_counts
    }

    pub fn x(&self, i: usize) -> &SparseVector {
        &self.examples[i].x
    }

    pub fn y(&self, i: usize) -> usize {
        self.examples[i].label
    }

    /// Examples at `indices`, keeping the class space and dimension.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let examples = indices.iter().map(|&i| self.examples[i].clone()).collect();
        Self::with_label_map(&self.name, examples, self.num_classes, self.dim, self.label_map.clone())
    }

    pub fn max_x_norm(&self) -> f64 {
        self.examples.iter().map(|e| e.x.norm()).fold(0.0, f64::max)
    }

    pub fn summary(&self) -> DatasetSummary {
        let mut class_counts_histogram = BTreeMap::new();
        for &c in &self.class_counts {
            *class_counts_histogram.entry(c).or_insert(0) += 1;
        }
        DatasetSummary {
            name: self.name.clone(),
            n: self.n(),
            k: self.k(),
            d: self.d(),
            class_counts_histogram,
        }
    }
}

/// Per-class ridge weights `β_j`, the inverse probability that class `j`
/// takes part in one sampled term.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub beta: Vec<f64>,
}

impl ClassWeights {
    /// Weights for one datapoint and one uniformly drawn class `k ≠ y_i`:
    /// `β_j = N / (n_j + (N - n_j)/(K - 1))`.
    pub fn single(ds: &Dataset) -> Result<Self, DataError> {
        Self::for_subset_size(ds, 1)
    }

    /// Weights when `m` distinct classes are drawn without replacement from
    /// the `K-1` non-target classes, so each is included with probability
    /// `m/(K-1)`. Equal to `single` for `m = 1`.
    pub fn for_subset_size(ds: &Dataset, m: usize) -> Result<Self, DataError> {
        let k = ds.k();
        if k < 2 {
            return Err(DataError::TooFewClasses(k));
        }
        let n = ds.n() as f64;
        let p_in = (m.min(k - 1)) as f64 / (k - 1) as f64;
        let beta = ds
            .class_counts()
            .iter()
            .map(|&nj| {
                let nj = nj as f64;
                n / (nj + p_in * (n - nj))
            })
            .collect();
        Ok(Self { beta })
    }

    pub fn max(&self) -> f64 {
        self.beta.iter().copied().fold(0.0, f64::max)
    }
}

/// Inverse inclusion probability `(K-1)/m` of a class in a size-`m` subset.
pub fn subset_scale(k: usize, m: usize) -> f64 {
    (k - 1) as f64 / m.min(k - 1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> RawFile {
        parse_sparse_reader(text.as_bytes(), IndexBase::Zero).unwrap()
    }

    #[test]
    fn first_label_kept() {
        let ex = parse_line("3,7 1:0.5 4:0.5", 1, IndexBase::Zero).unwrap();
        assert_eq!(ex.label, Some(3));
        assert_eq!(ex.features, vec![(1, 0.5), (4, 0.5)]);
        let ex = parse_line("0 2:1.0", 1, IndexBase::Zero).unwrap();
        assert_eq!(ex.label, Some(0));
        assert_eq!(ex.features, vec![(2, 1.0)]);
    }

    #[test]
    fn empty_features_flagged() {
        let ex = parse_line("5 ", 1, IndexBase::Zero).unwrap();
        assert!(ex.flagged_for_discard());
        let ex = parse_line(" 1:0.3", 1, IndexBase::Zero).unwrap();
        assert_eq!(ex.label, None);
        assert!(ex.flagged_for_discard());
    }

    #[test]
    fn one_based_indices() {
        let ex = parse_line("1 1:2.0 3:1.0", 1, IndexBase::One).unwrap();
        assert_eq!(ex.features, vec![(0, 2.0), (2, 1.0)]);
        assert!(matches!(
            parse_line("1 0:2.0", 4, IndexBase::One),
            Err(DataError::Malformed { line: 4, .. })
        ));
    }

    #[test]
    fn malformed_lines_report_line_numbers() {
        let err = parse_sparse_reader("0 1:1\n1 2-1\n".as_bytes(), IndexBase::Zero).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 2, .. }), "{err}");
        let err = parse_sparse_reader("x 1:1\n".as_bytes(), IndexBase::Zero).unwrap_err();
        assert!(matches!(err, DataError::Malformed { line: 1, .. }));
        let err = parse_sparse_reader("0 1:1 1:2\n".as_bytes(), IndexBase::Zero).unwrap_err();
        assert!(matches!(err, DataError::DuplicateFeature { line: 1, index: 1 }));
    }

    #[test]
    fn header_and_crlf() {
        let raw = parse("2 5 3\r\n1 0:1\r\n2 4:2\r\n");
        assert_eq!(raw.header, Some([2, 5, 3]));
        assert_eq!(raw.examples.len(), 2);
        let ds = preprocess("h", &raw, PreprocessOptions::default()).unwrap();
        assert_eq!(ds.d(), 5);
    }

    #[test]
    fn normalization_and_remap() {
        let raw = parse("9 0:3 1:4\n42 2:1\n");
        let ds = preprocess("t", &raw, PreprocessOptions::default()).unwrap();
        assert_eq!(ds.k(), 2);
        assert_eq!(ds.y(0), 0);
        assert_eq!(ds.y(1), 1);
        assert_eq!(ds.label_map, vec![9, 42]);
        assert_eq!(ds.x(0).values(), &[0.6, 0.8]);
        assert_eq!(ds.class_counts(), &[1, 1]);
    }

    #[test]
    fn truncation_order() {
        // The second example loses its only feature and is dropped before
        // the example cap applies, so the third example survives.
        let raw = parse("0 0:1\n1 7:1\n2 1:1\n3 2:1\n");
        let ds = preprocess("t", &raw, PreprocessOptions { max_features: 5, max_examples: 2 }).unwrap();
        assert_eq!(ds.n(), 2);
        assert_eq!(ds.label_map, vec![0, 2]);
    }

    #[test]
    fn all_discarded_is_an_error() {
        let raw = parse("0 9:1\n1 \n");
        let err = preprocess("t", &raw, PreprocessOptions { max_features: 5, max_examples: 10 });
        assert!(matches!(err, Err(DataError::EmptyDataset)));
    }

    fn counts_dataset(n: usize, k: usize, counts: &[usize]) -> Dataset {
        let mut examples = Vec::new();
        for (c, &cnt) in counts.iter().enumerate() {
            for _ in 0..cnt {
                examples.push(Example { label: c, x: SparseVector::dense(&[1.0]) });
            }
        }
        assert_eq!(examples.len(), n);
        Dataset::new("c", examples, k, 1)
    }

    #[test]
    fn class_weight_values() {
        // N=4, K=3, counts (2, 2, 0): β = 4/(2 + 2/2) and 4/(0 + 4/2).
        let ds = counts_dataset(4, 3, &[2, 2, 0]);
        let w = ClassWeights::single(&ds).unwrap();
        assert!((w.beta[0] - 4.0 / 3.0).abs() < 1e-15);
        assert!((w.beta[2] - 2.0).abs() < 1e-15);
        // N=6, K=3, balanced: 6/(2 + 4/2) = 1.5
        let ds = counts_dataset(6, 3, &[2, 2, 2]);
        let w = ClassWeights::single(&ds).unwrap();
        assert!(w.beta.iter().all(|&b| (b - 1.5).abs() < 1e-15));
    }

    #[test]
    fn class_weights_need_two_classes() {
        let ds = counts_dataset(2, 1, &[2]);
        assert!(matches!(ClassWeights::single(&ds), Err(DataError::TooFewClasses(1))));
    }

    #[test]
    fn summary_histogram() {
        let ds = counts_dataset(6, 4, &[2, 2, 2, 0]);
        let s = ds.summary();
        assert_eq!(s.class_counts_histogram.get(&2), Some(&3));
        assert_eq!(s.class_counts_histogram.get(&0), Some(&1));
        let json = serde_json::to_string(&s).unwrap();
        assert!(json.contains("\"N\":6"));
    }
}
