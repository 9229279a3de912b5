//! Feature matrices, labels, standardization and synthetic data.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrixView;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{EshError, Result};

/// Standard deviations below this are clamped before dividing.
pub const STD_FLOOR: f64 = 1e-12;

const FEATURE_MAGIC: &[u8; 4] = b"ESHF";
const FEATURE_VERSION: u8 = 1;

/// Dense n×d matrix of real features, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    rows: usize,
    dims: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    /// Builds a matrix from row-major values, rejecting empty shapes and
    /// non-finite entries.
    pub fn new(rows: usize, dims: usize, values: Vec<f64>) -> Result<Self> {
        if rows == 0 || dims == 0 {
            return Err(EshError::Shape(format!(
                "feature matrix must be non-empty, got {rows}x{dims}"
            )));
        }
        if values.len() != rows * dims {
            return Err(EshError::Shape(format!(
                "expected {} values for {rows}x{dims}, got {}",
                rows * dims,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(EshError::NonFinite {
                row: pos / dims,
                col: pos % dims,
            });
        }
        Ok(Self { rows, dims, values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dims = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != dims) {
            return Err(EshError::DimensionMismatch {
                expected: dims,
                actual: bad.len(),
            });
        }
        Self::new(rows.len(), dims, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.dims..(i + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn iter_rows(&self) -> std::slice::ChunksExact<'_, f64> {
        self.values.chunks_exact(self.dims)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dims + j]
    }

    /// Rows `start..start+len` as a d×len column-major view, i.e. the
    /// transpose of that block. Multiply with `tr_mul` to get `X·W`.
    pub fn view_rows_transposed(&self, start: usize, len: usize) -> DMatrixView<'_, f64> {
        let data = &self.values[start * self.dims..(start + len) * self.dims];
        DMatrixView::from_slice(data, self.dims, len)
    }

    pub fn view_transposed(&self) -> DMatrixView<'_, f64> {
        self.view_rows_transposed(0, self.rows)
    }

    pub fn select_rows(&self, indices: &[usize]) -> Result<Self> {
        let mut values = Vec::with_capacity(indices.len() * self.dims);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self::new(indices.len(), self.dims, values)
    }
}

/// Per-column mean and (floored) population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardizationStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl StandardizationStats {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        if mean.len() != std.len() {
            return Err(EshError::DimensionMismatch {
                expected: mean.len(),
                actual: std.len(),
            });
        }
        if mean.iter().chain(&std).any(|v| !v.is_finite()) {
            return Err(EshError::InvalidArgument(
                "standardization stats must be finite".into(),
            ));
        }
        let std = std.into_iter().map(|s| s.max(STD_FLOOR)).collect();
        Ok(Self { mean, std })
    }

    pub fn dims(&self) -> usize {
        self.mean.len()
    }
}

/// Centers each column and scales it to unit population variance.
pub fn standardize(x: &FeatureMatrix) -> Result<(FeatureMatrix, StandardizationStats)> {
    let (n, d) = (x.rows(), x.dims());
    if n < 2 {
        return Err(EshError::Shape(format!(
            "standardization needs at least 2 rows, got {n}"
        )));
    }
    let mut mean = vec![0.0; d];
    for row in x.iter_rows() {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = vec![0.0; d];
    for row in x.iter_rows() {
        for ((s, v), m) in var.iter_mut().zip(row).zip(&mean) {
            let c = v - m;
            *s += c * c;
        }
    }
    let std = var.into_iter().map(|s| (s / n as f64).sqrt()).collect();
    let stats = StandardizationStats::new(mean, std)?;
    let out = apply_standardization_matrix(x, &stats)?;
    Ok((out, stats))
}

/// `(x - mean) / std` elementwise.
pub fn apply_standardization(x: &[f64], stats: &StandardizationStats) -> Result<Vec<f64>> {
    if x.len() != stats.dims() {
        return Err(EshError::DimensionMismatch {
            expected: stats.dims(),
            actual: x.len(),
        });
    }
    Ok(x.iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| (v - m) / s)
        .collect())
}

pub fn apply_standardization_matrix(
    x: &FeatureMatrix,
    stats: &StandardizationStats,
) -> Result<FeatureMatrix> {
    if x.dims() != stats.dims() {
        return Err(EshError::DimensionMismatch {
            expected: stats.dims(),
            actual: x.dims(),
        });
    }
    let mut values = Vec::with_capacity(x.as_slice().len());
    for row in x.iter_rows() {
        values.extend(
            row.iter()
                .zip(stats.mean.iter().zip(&stats.std))
                .map(|(v, (m, s))| (v - m) / s),
        );
    }
    FeatureMatrix::new(x.rows(), x.dims(), values)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LabelKind {
    Single,
    Multi,
}

/// Per-row label ids. Each row's ids are sorted and deduplicated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSet {
    kind: LabelKind,
    labels: Vec<Vec<u32>>,
}

impl LabelSet {
    pub fn new(labels: Vec<Vec<u32>>) -> Result<Self> {
        let mut labels = labels;
        for (i, row) in labels.iter_mut().enumerate() {
            if row.is_empty() {
                return Err(EshError::InvalidArgument(format!("row {i} has no label")));
            }
            row.sort_unstable();
            row.dedup();
        }
        let kind = if labels.iter().all(|r| r.len() == 1) {
            LabelKind::Single
        } else {
            LabelKind::Multi
        };
        Ok(Self { kind, labels })
    }

    pub fn single(labels: Vec<u32>) -> Self {
        Self {
            kind: LabelKind::Single,
            labels: labels.into_iter().map(|l| vec![l]).collect(),
        }
    }

    pub fn kind(&self) -> LabelKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn get(&self, i: usize) -> &[u32] {
        &self.labels[i]
    }

    /// True when rows `i` of `self` and `j` of `other` share any label.
    pub fn shares_label(&self, i: usize, other: &LabelSet, j: usize) -> bool {
        let (a, b) = (&self.labels[i], &other.labels[j]);
        let (mut p, mut q) = (0, 0);
        while p < a.len() && q < b.len() {
            match a[p].cmp(&b[q]) {
                std::cmp::Ordering::Equal => return true,
                std::cmp::Ordering::Less => p += 1,
                std::cmp::Ordering::Greater => q += 1,
            }
        }
        false
    }

    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            kind: self.kind,
            labels: indices.iter().map(|&i| self.labels[i].clone()).collect(),
        }
    }

    /// Distinct label ids in ascending order.
    pub fn classes(&self) -> Vec<u32> {
        let mut all: Vec<u32> = self.labels.iter().flatten().copied().collect();
        all.sort_unstable();
        all.dedup();
        all
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureFormat {
    Csv,
    Binary,
}

impl FeatureFormat {
    /// `.csv` (any case) is CSV; everything else is the binary container.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => FeatureFormat::Csv,
            _ => FeatureFormat::Binary,
        }
    }
}

pub fn load_features(path: &Path, format: FeatureFormat) -> Result<FeatureMatrix> {
    let file = File::open(path).map_err(|e| EshError::io(path, e))?;
    match format {
        FeatureFormat::Csv => read_features_csv(BufReader::new(file)),
        FeatureFormat::Binary => {
            let mut buf = Vec::new();
            BufReader::new(file)
                .read_to_end(&mut buf)
                .map_err(|e| EshError::io(path, e))?;
            decode_features_binary(&buf)
        }
    }
}

pub fn save_features(x: &FeatureMatrix, path: &Path, format: FeatureFormat) -> Result<()> {
    let file = File::create(path).map_err(|e| EshError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = match format {
        FeatureFormat::Csv => write_features_csv(x, &mut w),
        FeatureFormat::Binary => w.write_all(&encode_features_binary(x)),
    };
    res.and_then(|_| w.flush()).map_err(|e| EshError::io(path, e))
}

pub fn read_features_csv<R: BufRead>(reader: R) -> Result<FeatureMatrix> {
    let mut values = Vec::new();
    let mut dims = None;
    let mut rows = 0;
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EshError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let start = values.len();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| EshError::Parse {
                line: lineno + 1,
                message: format!("cannot parse {:?} as a number", field.trim()),
            })?;
            if !v.is_finite() {
                return Err(EshError::NonFinite { row: rows, col });
            }
            values.push(v);
        }
        let width = values.len() - start;
        match dims {
            None => dims = Some(width),
            Some(d) if d != width => {
                return Err(EshError::Parse {
                    line: lineno + 1,
                    message: format!("expected {d} columns, found {width}"),
                })
            }
            _ => {}
        }
        rows += 1;
    }
    FeatureMatrix::new(rows, dims.unwrap_or(0), values)
}

pub fn write_features_csv<W: Write>(x: &FeatureMatrix, w: &mut W) -> std::io::Result<()> {
    for row in x.iter_rows() {
        let line: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        writeln!(w, "{}", line.join(","))?;
    }
    Ok(())
}

pub fn encode_features_binary(x: &FeatureMatrix) -> Vec<u8> {
    let mut out = Vec::with_capacity(21 + x.as_slice().len() * 4);
    out.extend_from_slice(FEATURE_MAGIC);
    out.push(FEATURE_VERSION);
    out.extend_from_slice(&(x.rows() as u64).to_le_bytes());
    out.extend_from_slice(&(x.dims() as u64).to_le_bytes());
    for v in x.as_slice() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn decode_features_binary(buf: &[u8]) -> Result<FeatureMatrix> {
    if buf.len() < 21 || &buf[..4] != FEATURE_MAGIC {
        return Err(EshError::Shape("missing ESHF header".into()));
    }
    if buf[4] != FEATURE_VERSION {
        return Err(EshError::Version(buf[4]));
    }
    let n = u64::from_le_bytes(buf[5..13].try_into().unwrap()) as usize;
    let d = u64::from_le_bytes(buf[13..21].try_into().unwrap()) as usize;
    if n == 0 || d == 0 {
        return Err(EshError::Shape(format!("header declares {n}x{d}")));
    }
    let expected = n
        .checked_mul(d)
        .and_then(|c| c.checked_mul(4))
        .ok_or_else(|| EshError::Shape("declared shape overflows".into()))?;
    let body = &buf[21..];
    if body.len() != expected {
        return Err(EshError::Shape(format!(
            "header declares {n}x{d} ({expected} bytes), body has {} bytes",
            body.len()
        )));
    }
    let values = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    FeatureMatrix::new(n, d, values)
}

pub fn load_labels(path: &Path) -> Result<LabelSet> {
    let file = File::open(path).map_err(|e| EshError::io(path, e))?;
    read_labels(BufReader::new(file))
}

pub fn read_labels<R: BufRead>(reader: R) -> Result<LabelSet> {
    let mut rows = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| EshError::Parse {
            line: lineno + 1,
            message: e.to_string(),
        })?;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let ids = line
            .split(';')
            .map(|f| {
                f.trim().parse::<u32>().map_err(|_| EshError::Parse {
                    line: lineno + 1,
                    message: format!("cannot parse label {:?}", f.trim()),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(ids);
    }
    LabelSet::new(rows)
}

pub fn save_labels(labels: &LabelSet, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| EshError::io(path, e))?;
    let mut w = BufWriter::new(file);
    let res = (0..labels.len())
        .try_for_each(|i| {
            let ids: Vec<String> = labels.get(i).iter().map(u32::to_string).collect();
            writeln!(w, "{}", ids.join(";"))
        })
        .and_then(|_| w.flush());
    res.map_err(|e| EshError::io(path, e))
}

/// Gaussian blobs: `clusters` centers drawn from N(0, I_d), each with
/// `per_cluster` isotropic samples of standard deviation `spread`. Rows are
/// grouped by cluster; the label of a row is its cluster id.
pub fn generate_synthetic(
    clusters: usize,
    per_cluster: usize,
    dims: usize,
    spread: f64,
    seed: u64,
) -> Result<(FeatureMatrix, LabelSet)> {
    if clusters < 2 {
        return Err(EshError::InvalidArgument(format!(
            "need at least 2 clusters, got {clusters}"
        )));
    }
    if per_cluster == 0 || dims == 0 {
        return Err(EshError::InvalidArgument(
            "per_cluster and dims must be positive".into(),
        ));
    }
    if !(spread > 0.0 && spread.is_finite()) {
        return Err(EshError::InvalidArgument(format!(
            "spread must be positive, got {spread}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers: Vec<f64> = (0..clusters * dims)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut values = Vec::with_capacity(clusters * per_cluster * dims);
    let mut labels = Vec::with_capacity(clusters * per_cluster);
    for c in 0..clusters {
        let center = &centers[c * dims..(c + 1) * dims];
        for _ in 0..per_cluster {
            for &mu in center {
                let z: f64 = StandardNormal.sample(&mut rng);
                values.push(mu + spread * z);
            }
            labels.push(c as u32);
        }
    }
    let x = FeatureMatrix::new(clusters * per_cluster, dims, values)?;
    Ok((x, LabelSet::single(labels)))
}

/// Stratified hold-out: for every class (first label of each row) a
/// `fraction` share, rounded, is moved to the query side. Returns
/// `(train_indices, query_indices)`, each ascending.
pub fn holdout_split(labels: &LabelSet, fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(EshError::InvalidArgument(format!(
            "holdout fraction must be in [0, 1), got {fraction}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: std::collections::BTreeMap<u32, Vec<usize>> = Default::default();
    for i in 0..labels.len() {
        by_class.entry(labels.get(i)[0]).or_default().push(i);
    }
    let mut train = Vec::new();
    let mut query = Vec::new();
    for (_, mut members) in by_class {
        members.shuffle(&mut rng);
        let take = (members.len() as f64 * fraction).round() as usize;
        query.extend_from_slice(&members[..take]);
        train.extend_from_slice(&members[take..]);
    }
    train.sort_unstable();
    query.sort_unstable();
    Ok((train, query))
}
