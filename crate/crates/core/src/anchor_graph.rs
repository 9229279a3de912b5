//! Anchor-graph affinity.
//!
//! The n×n affinity `A = Z Λ⁻¹ Zᵀ` is never formed. Each sample keeps weights
//! to its `s` nearest anchors (a row of `Z`), `Λ = diag(Zᵀ1)`, and the d×d
//! matrix `S = XᵀAX` is assembled through the m-wide factor `XᵀZ`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::error::{EshError, Result};
use crate::par;

/// Degrees below this mark an anchor as dead.
pub const LAMBDA_FLOOR: f64 = 1e-12;

/// Largest n accepted by [`dense_affinity`].
pub const DENSE_ORACLE_CAP: usize = 1000;

/// Anchor centers with the Gaussian kernel bandwidth and neighborhood size.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    centers: Vec<f64>,
    count: usize,
    dims: usize,
    sigma2: f64,
    neighbors: usize,
}

impl AnchorSet {
    /// Validates `1 <= s <= m` and a finite positive bandwidth.
    pub fn new(centers: Vec<f64>, dims: usize, sigma2: f64, neighbors: usize) -> Result<Self> {
        if dims == 0 || centers.is_empty() || !centers.len().is_multiple_of(dims) {
            return Err(EshError::Shape(format!(
                "{} center values do not form rows of width {dims}",
                centers.len()
            )));
        }
        let count = centers.len() / dims;
        if neighbors == 0 || neighbors > count {
            return Err(EshError::InvalidArgument(format!(
                "need 1 <= s <= m, got s={neighbors}, m={count}"
            )));
        }
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(EshError::InvalidArgument(format!(
                "sigma2 must be finite and positive, got {sigma2}"
            )));
        }
        if centers.iter().any(|v| !v.is_finite()) {
            return Err(EshError::InvalidArgument("anchor centers must be finite".into()));
        }
        Ok(Self {
            centers,
            count,
            dims,
            sigma2,
            neighbors,
        })
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn sigma2(&self) -> f64 {
        self.sigma2
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn center(&self, j: usize) -> &[f64] {
        &self.centers[j * self.dims..(j + 1) * self.dims]
    }

    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn with_sigma2(mut self, sigma2: f64) -> Result<Self> {
        if !(sigma2 > 0.0 && sigma2.is_finite()) {
            return Err(EshError::InvalidArgument(format!(
                "sigma2 must be finite and positive, got {sigma2}"
            )));
        }
        self.sigma2 = sigma2;
        Ok(self)
    }

    /// The `s` nearest anchors of `x` as `(index, squared distance)`,
    /// ascending by distance with ties broken by lower index.
    pub fn nearest(&self, x: &[f64]) -> Vec<(u32, f64)> {
        nearest_in(&self.centers, self.dims, x, self.neighbors)
    }

    /// One row of `Z` for an arbitrary point: the nearest anchors and their
    /// normalized kernel weights.
    pub fn affinity_row(&self, x: &[f64]) -> Result<Vec<(u32, f64)>> {
        if x.len() != self.dims {
            return Err(EshError::DimensionMismatch {
                expected: self.dims,
                actual: x.len(),
            });
        }
        Ok(kernel_weights(self.nearest(x), self.sigma2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorParams {
    pub anchors: usize,
    pub neighbors: usize,
    pub kmeans_iters: usize,
    /// Kernel bandwidth override; `None` self-scales from the data.
    pub sigma2: Option<f64>,
}

impl Default for AnchorParams {
    fn default() -> Self {
        Self {
            anchors: 300,
            neighbors: 3,
            kmeans_iters: 10,
            sigma2: None,
        }
    }
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

fn nearest_in(centers: &[f64], dims: usize, x: &[f64], s: usize) -> Vec<(u32, f64)> {
    // insertion into a short sorted buffer; s is tiny
    let mut best: Vec<(u32, f64)> = Vec::with_capacity(s + 1);
    for (j, c) in centers.chunks_exact(dims).enumerate() {
        let d2 = squared_distance(x, c);
        if best.len() == s && d2 >= best[s - 1].1 {
            continue;
        }
        let pos = best.partition_point(|&(_, b)| b <= d2);
        best.insert(pos, (j as u32, d2));
        best.truncate(s);
    }
    best
}

/// Gaussian weights `exp(-‖x-u‖²/σ²)` normalized to sum to one. Distances
/// are shifted by the smallest one first; the shift cancels in the
/// normalization and keeps far-away points from underflowing to zero.
fn kernel_weights(nearest: Vec<(u32, f64)>, sigma2: f64) -> Vec<(u32, f64)> {
    let d0 = nearest.first().map_or(0.0, |&(_, d)| d);
    let raw: Vec<f64> = nearest.iter().map(|&(_, d)| (-(d - d0) / sigma2).exp()).collect();
    let norm: f64 = raw.iter().sum();
    nearest
        .into_iter()
        .zip(raw)
        .map(|((j, _), w)| (j, w / norm))
        .collect()
}

fn nearest_index(centers: &[f64], dims: usize, x: &[f64]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centers.chunks_exact(dims).enumerate() {
        let d2 = squared_distance(x, c);
        if d2 < best.1 {
            best = (j, d2);
        }
    }
    best
}

fn assign(x: &FeatureMatrix, centers: &[f64]) -> Vec<(usize, f64)> {
    let d = x.dims();
    par::map_chunks(x.rows(), par::ROW_CHUNK, |r| {
        r.map(|i| nearest_index(centers, d, x.row(i))).collect::<Vec<_>>()
    })
    .concat()
}

/// k-means++ seeding: first center uniform, then each next one drawn with
/// probability proportional to the squared distance to the closest chosen
/// center.
fn seed_centers(x: &FeatureMatrix, m: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let (n, d) = (x.rows(), x.dims());
    let mut centers = Vec::with_capacity(m * d);
    let first = rng.random_range(0..n);
    centers.extend_from_slice(x.row(first));
    let mut closest: Vec<f64> = (0..n).map(|i| squared_distance(x.row(i), x.row(first))).collect();
    while centers.len() < m * d {
        let total: f64 = closest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, &w) in closest.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        let new = x.row(pick).to_vec();
        let updated = par::map_chunks(n, par::ROW_CHUNK, |r| {
            r.map(|i| squared_distance(x.row(i), &new)).collect::<Vec<_>>()
        })
        .concat();
        for (c, u) in closest.iter_mut().zip(updated) {
            *c = c.min(u);
        }
        centers.extend_from_slice(&new);
    }
    centers
}

/// Lloyd's k-means with seeded k-means++ initialization. Empty clusters are
/// reseeded to the points farthest from their assigned centers. Stops after
/// `iters` rounds or once assignments stop changing.
pub fn kmeans(x: &FeatureMatrix, m: usize, iters: usize, seed: u64) -> Result<Vec<f64>> {
    let (n, d) = (x.rows(), x.dims());
    if m == 0 || m > n {
        return Err(EshError::InvalidArgument(format!(
            "need 1 <= m <= n, got m={m}, n={n}"
        )));
    }
    if iters == 0 {
        return Err(EshError::InvalidArgument("k-means needs at least one iteration".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = seed_centers(x, m, &mut rng);
    let mut previous: Option<Vec<usize>> = None;
    for _ in 0..iters {
        let assignment = assign(x, &centers);
        let labels: Vec<usize> = assignment.iter().map(|&(j, _)| j).collect();
        if previous.as_ref() == Some(&labels) {
            break;
        }
        let mut sums = vec![0.0; m * d];
        let mut counts = vec![0usize; m];
        for (i, &j) in labels.iter().enumerate() {
            counts[j] += 1;
            for (s, v) in sums[j * d..(j + 1) * d].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        let empty: Vec<usize> = (0..m).filter(|&j| counts[j] == 0).collect();
        if !empty.is_empty() {
            let mut far: Vec<usize> = (0..n).collect();
            far.sort_by(|&a, &b| assignment[b].1.total_cmp(&assignment[a].1).then(a.cmp(&b)));
            for (&j, &i) in empty.iter().zip(&far) {
                sums[j * d..(j + 1) * d].copy_from_slice(x.row(i));
                counts[j] = 1;
            }
        }
        for j in 0..m {
            let inv = 1.0 / counts[j] as f64;
            for (c, s) in centers[j * d..(j + 1) * d].iter_mut().zip(&sums[j * d..(j + 1) * d]) {
                *c = s * inv;
            }
        }
        previous = Some(labels);
    }
    Ok(centers)
}

/// Fits `m` anchors by k-means and sets the kernel bandwidth: the override
/// if given, otherwise the mean squared distance from each sample to its
/// `s`-th nearest anchor (1.0 if that mean vanishes).
pub fn fit_anchors(x: &FeatureMatrix, params: &AnchorParams, seed: u64) -> Result<AnchorSet> {
    let AnchorParams {
        anchors: m,
        neighbors: s,
        kmeans_iters,
        sigma2,
    } = *params;
    if s == 0 || s > m {
        return Err(EshError::InvalidArgument(format!(
            "need 1 <= s <= m, got s={s}, m={m}"
        )));
    }
    let centers = kmeans(x, m, kmeans_iters, seed)?;
    let sigma2 = match sigma2 {
        Some(v) => v,
        None => {
            let d = x.dims();
            let per_chunk = par::map_chunks(x.rows(), par::ROW_CHUNK, |r| {
                r.map(|i| nearest_in(&centers, d, x.row(i), s)[s - 1].1)
                    .sum::<f64>()
            });
            let mean = per_chunk.iter().sum::<f64>() / x.rows() as f64;
            if mean > 1e-12 {
                mean
            } else {
                1.0
            }
        }
    };
    AnchorSet::new(centers, x.dims(), sigma2, s)
}

/// Sparse row-stochastic `Z`: exactly `s` (anchor, weight) entries per row.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseAffinityRows {
    rows: usize,
    anchors: usize,
    neighbors: usize,
    indices: Vec<u32>,
    weights: Vec<f64>,
}

impl SparseAffinityRows {
    /// Validates shape, index range, distinctness and row sums.
    pub fn new(anchors: usize, neighbors: usize, indices: Vec<u32>, weights: Vec<f64>) -> Result<Self> {
        if neighbors == 0 || indices.len() != weights.len() || !indices.len().is_multiple_of(neighbors) {
            return Err(EshError::Shape("inconsistent sparse affinity layout".into()));
        }
        let rows = indices.len() / neighbors;
        for (i, (idx, w)) in indices
            .chunks_exact(neighbors)
            .zip(weights.chunks_exact(neighbors))
            .enumerate()
        {
            if idx.iter().any(|&j| j as usize >= anchors) {
                return Err(EshError::Shape(format!("row {i} references an anchor >= {anchors}")));
            }
            let mut sorted = idx.to_vec();
            sorted.sort_unstable();
            sorted.dedup();
            if sorted.len() != neighbors {
                return Err(EshError::Shape(format!("row {i} repeats an anchor")));
            }
            let sum: f64 = w.iter().sum();
            if w.iter().any(|&v| !(v >= 0.0)) || (sum - 1.0).abs() > 1e-6 {
                return Err(EshError::Shape(format!("row {i} weights are not a distribution")));
            }
        }
        Ok(Self {
            rows,
            anchors,
            neighbors,
            indices,
            weights,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn anchors(&self) -> usize {
        self.anchors
    }

    pub fn neighbors(&self) -> usize {
        self.neighbors
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = i * self.neighbors..(i + 1) * self.neighbors;
        self.indices[r.clone()]
            .iter()
            .zip(&self.weights[r])
            .map(|(&j, &w)| (j as usize, w))
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut z = DMatrix::zeros(self.rows, self.anchors);
        for i in 0..self.rows {
            for (j, w) in self.row(i) {
                z[(i, j)] += w;
            }
        }
        z
    }
}

/// Builds `Z` row by row: nearest `s` anchors, Gaussian kernel, normalized.
pub fn build_z(x: &FeatureMatrix, anchors: &AnchorSet) -> Result<SparseAffinityRows> {
    if x.dims() != anchors.dims() {
        return Err(EshError::DimensionMismatch {
            expected: anchors.dims(),
            actual: x.dims(),
        });
    }
    let s = anchors.neighbors();
    let rows: Vec<Vec<(u32, f64)>> = par::map_chunks(x.rows(), par::ROW_CHUNK, |r| {
        r.map(|i| kernel_weights(anchors.nearest(x.row(i)), anchors.sigma2()))
            .collect::<Vec<_>>()
    })
    .concat();
    let mut indices = Vec::with_capacity(x.rows() * s);
    let mut weights = Vec::with_capacity(x.rows() * s);
    for row in rows {
        for (j, w) in row {
            indices.push(j);
            weights.push(w);
        }
    }
    Ok(SparseAffinityRows {
        rows: x.rows(),
        anchors: anchors.count(),
        neighbors: s,
        indices,
        weights,
    })
}

/// `Λ = diag(Zᵀ1)`, stored as its diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorDegrees {
    lambda: Vec<f64>,
}

impl AnchorDegrees {
    pub fn new(lambda: Vec<f64>) -> Result<Self> {
        if lambda.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
            return Err(EshError::InvalidArgument("anchor degrees must be finite and >= 0".into()));
        }
        Ok(Self { lambda })
    }

    pub fn values(&self) -> &[f64] {
        &self.lambda
    }

    pub fn len(&self) -> usize {
        self.lambda.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lambda.is_empty()
    }

    pub fn is_live(&self, j: usize) -> bool {
        self.lambda[j] >= LAMBDA_FLOOR
    }

    /// `1/λ_j` for live anchors and 0 for dead ones, which drops the column.
    pub fn inverse(&self, j: usize) -> f64 {
        if self.is_live(j) {
            1.0 / self.lambda[j]
        } else {
            0.0
        }
    }

    pub fn dead_anchors(&self) -> Vec<usize> {
        (0..self.lambda.len()).filter(|&j| !self.is_live(j)).collect()
    }
}

pub fn compute_lambda(z: &SparseAffinityRows) -> AnchorDegrees {
    let mut lambda = vec![0.0; z.anchors()];
    for i in 0..z.rows() {
        for (j, w) in z.row(i) {
            lambda[j] += w;
        }
    }
    AnchorDegrees { lambda }
}

/// Symmetric d×d matrix `S = XᵀAX`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompressedSimilarity(DMatrix<f64>);

impl CompressedSimilarity {
    /// Wraps a square matrix, symmetrizing it.
    pub fn new(s: DMatrix<f64>) -> Result<Self> {
        if !s.is_square() {
            return Err(EshError::Shape(format!("S must be square, got {:?}", s.shape())));
        }
        let sym = (&s + s.transpose()) * 0.5;
        Ok(Self(sym))
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn dims(&self) -> usize {
        self.0.nrows()
    }
}

/// `S = (XᵀZ) Λ⁻¹ (ZᵀX)` through the d×m factor `XᵀZ`. Dead anchors
/// contribute nothing.
pub fn compute_s(
    x: &FeatureMatrix,
    z: &SparseAffinityRows,
    lambda: &AnchorDegrees,
) -> Result<CompressedSimilarity> {
    if x.rows() != z.rows() {
        return Err(EshError::DimensionMismatch {
            expected: x.rows(),
            actual: z.rows(),
        });
    }
    if lambda.len() != z.anchors() {
        return Err(EshError::DimensionMismatch {
            expected: z.anchors(),
            actual: lambda.len(),
        });
    }
    let (d, m) = (x.dims(), z.anchors());
    // XᵀZ accumulated per row chunk, reduced in chunk order
    let partials = par::map_chunks(x.rows(), par::ROW_CHUNK, |r| {
        let mut acc = vec![0.0; m * d];
        for i in r {
            let xi = x.row(i);
            for (j, w) in z.row(i) {
                for (a, v) in acc[j * d..(j + 1) * d].iter_mut().zip(xi) {
                    *a += w * v;
                }
            }
        }
        acc
    });
    let mut xz = vec![0.0; m * d];
    for p in partials {
        for (a, v) in xz.iter_mut().zip(p) {
            *a += v;
        }
    }
    // column j of the scaled factor is (XᵀZ)_j / sqrt(λ_j)
    let mut scaled = DMatrix::<f64>::zeros(d, m);
    for j in 0..m {
        let f = lambda.inverse(j).sqrt();
        if f == 0.0 {
            continue;
        }
        for r in 0..d {
            scaled[(r, j)] = xz[j * d + r] * f;
        }
    }
    CompressedSimilarity::new(&scaled * scaled.transpose())
}

/// Dense `A = ZΛ⁻¹Zᵀ`. Only for validation on small inputs.
pub fn dense_affinity(z: &SparseAffinityRows, lambda: &AnchorDegrees, cap: usize) -> Result<DMatrix<f64>> {
    if z.rows() > cap {
        return Err(EshError::InvalidArgument(format!(
            "dense affinity limited to n <= {cap}, got {}",
            z.rows()
        )));
    }
    let mut scaled = z.to_dense();
    for j in 0..z.anchors() {
        let f = lambda.inverse(j);
        scaled.column_mut(j).scale_mut(f);
    }
    Ok(&scaled * z.to_dense().transpose())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic, standardize};

    fn blobs(seed: u64) -> FeatureMatrix {
        let (x, _) = generate_synthetic(4, 40, 5, 0.8, seed).unwrap();
        standardize(&x).unwrap().0
    }

    fn one_row_set(rows: Vec<Vec<(u32, f64)>>, m: usize) -> SparseAffinityRows {
        let s = rows[0].len();
        let (idx, w) = rows.into_iter().flatten().unzip();
        SparseAffinityRows::new(m, s, idx, w).unwrap()
    }

    #[test]
    fn m_equal_n_recovers_points() {
        let x = FeatureMatrix::new(5, 2, vec![0., 0., 1., 0., 0., 3., 5., 5., -2., 1.]).unwrap();
        let mut centers: Vec<Vec<f64>> = kmeans(&x, 5, 10, 3)
            .unwrap()
            .chunks(2)
            .map(<[f64]>::to_vec)
            .collect();
        centers.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut rows: Vec<Vec<f64>> = x.iter_rows().map(<[f64]>::to_vec).collect();
        rows.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(centers, rows);
    }

    #[test]
    fn two_blobs_give_their_means() {
        let mut rows = Vec::new();
        for i in 0..50 {
            let t = i as f64 * 0.01;
            rows.push(vec![-10.0 + t, 0.0 - t]);
            rows.push(vec![10.0 - t, 5.0 + t]);
        }
        let x = FeatureMatrix::from_rows(&rows).unwrap();
        let centers = kmeans(&x, 2, 10, 1).unwrap();
        let mut got: Vec<(f64, f64)> = centers.chunks(2).map(|c| (c[0], c[1])).collect();
        got.sort_by(|a, b| a.0.total_cmp(&b.0));
        let mean_t = 0.245;
        assert!((got[0].0 - (-10.0 + mean_t)).abs() < 1e-9);
        assert!((got[0].1 - (-mean_t)).abs() < 1e-9);
        assert!((got[1].0 - (10.0 - mean_t)).abs() < 1e-9);
        assert!((got[1].1 - (5.0 + mean_t)).abs() < 1e-9);
    }

    #[test]
    fn kmeans_is_deterministic_and_validates() {
        let x = blobs(2);
        assert_eq!(kmeans(&x, 7, 5, 11).unwrap(), kmeans(&x, 7, 5, 11).unwrap());
        assert!(kmeans(&x, x.rows() + 1, 5, 0).is_err());
        assert!(kmeans(&x, 3, 0, 0).is_err());
    }

    #[test]
    fn single_neighbor_rows_are_one_hot() {
        let x = blobs(3);
        let params = AnchorParams { anchors: 6, neighbors: 1, ..Default::default() };
        let anchors = fit_anchors(&x, &params, 0).unwrap();
        let z = build_z(&x, &anchors).unwrap();
        for i in 0..x.rows() {
            let row: Vec<_> = z.row(i).collect();
            assert_eq!(row.len(), 1);
            assert_eq!(row[0].1, 1.0);
        }
    }

    #[test]
    fn equidistant_anchors_share_weight() {
        let anchors = AnchorSet::new(vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 0.0, -1.0, 5.0, 5.0], 2, 0.7, 4).unwrap();
        let row = anchors.affinity_row(&[0.0, 0.0]).unwrap();
        assert_eq!(row.iter().map(|r| r.0).collect::<Vec<_>>(), vec![0, 1, 2, 3]);
        for (_, w) in row {
            assert!((w - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn z_rows_match_brute_force_scan() {
        let x = blobs(4);
        let params = AnchorParams { anchors: 12, neighbors: 3, ..Default::default() };
        let anchors = fit_anchors(&x, &params, 5).unwrap();
        let z = build_z(&x, &anchors).unwrap();
        for i in 0..x.rows() {
            let mut all: Vec<(usize, f64)> = (0..anchors.count())
                .map(|j| {
                    let d2: f64 = x.row(i).iter().zip(anchors.center(j)).map(|(a, b)| (a - b).powi(2)).sum();
                    (j, d2)
                })
                .collect();
            all.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let expect: Vec<usize> = all[..3].iter().map(|a| a.0).collect();
            let got: Vec<usize> = z.row(i).map(|(j, _)| j).collect();
            assert_eq!(got, expect, "row {i}");
            let sum: f64 = z.row(i).map(|(_, w)| w).sum();
            assert!((sum - 1.0).abs() < 1e-12);
            // unnormalized kernel ratios
            let k: Vec<f64> = all[..3].iter().map(|a| (-a.1 / anchors.sigma2()).exp()).collect();
            let ksum: f64 = k.iter().sum();
            for ((_, w), kj) in z.row(i).zip(&k) {
                assert!((w - kj / ksum).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn sigma_defaults_to_mean_sth_distance() {
        let x = blobs(6);
        let params = AnchorParams { anchors: 8, neighbors: 2, ..Default::default() };
        let anchors = fit_anchors(&x, &params, 1).unwrap();
        let expect = x.iter_rows().map(|r| anchors.nearest(r)[1].1).sum::<f64>() / x.rows() as f64;
        assert!((anchors.sigma2() - expect).abs() < 1e-9 * expect);
        let fixed = fit_anchors(&x, &AnchorParams { sigma2: Some(2.5), ..params }, 1).unwrap();
        assert_eq!(fixed.sigma2(), 2.5);
    }

    #[test]
    fn s_larger_than_m_is_rejected() {
        let x = blobs(1);
        let params = AnchorParams { anchors: 2, neighbors: 3, ..Default::default() };
        assert!(fit_anchors(&x, &params, 0).is_err());
    }

    #[test]
    fn lambda_small_cases() {
        let z = one_row_set(vec![vec![(0, 1.0)]; 7], 1);
        assert_eq!(compute_lambda(&z).values(), &[7.0]);
        let z = one_row_set(vec![vec![(0, 0.5), (1, 0.5)], vec![(0, 0.5), (1, 0.5)]], 2);
        assert_eq!(compute_lambda(&z).values(), &[1.0, 1.0]);
    }

    #[test]
    fn lambda_matches_dense_column_sums() {
        let x = blobs(7);
        let params = AnchorParams { anchors: 10, neighbors: 3, ..Default::default() };
        let z = build_z(&x, &fit_anchors(&x, &params, 2).unwrap()).unwrap();
        let lambda = compute_lambda(&z);
        let dense = z.to_dense();
        for j in 0..10 {
            assert!((dense.column(j).sum() - lambda.values()[j]).abs() < 1e-12);
        }
        assert!((lambda.values().iter().sum::<f64>() - x.rows() as f64).abs() < 1e-9);
    }

    #[test]
    fn zero_features_give_zero_s() {
        let x = FeatureMatrix::new(4, 3, vec![0.0; 12]).unwrap();
        let z = one_row_set(vec![vec![(0, 0.5), (1, 0.5)]; 4], 2);
        let s = compute_s(&x, &z, &compute_lambda(&z)).unwrap();
        assert!(s.matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_single_anchor_case() {
        let vals = vec![0.5, -1.25, 2.0, 3.5];
        let x = FeatureMatrix::new(4, 1, vals.clone()).unwrap();
        let z = one_row_set(vec![vec![(0, 1.0)]; 4], 1);
        let s = compute_s(&x, &z, &compute_lambda(&z)).unwrap();
        let sum: f64 = vals.iter().sum();
        assert!((s.matrix()[(0, 0)] - sum * sum / 4.0).abs() < 1e-12);
    }

    #[test]
    fn single_anchor_affinity_is_uniform() {
        let z = one_row_set(vec![vec![(0, 1.0)]; 5], 1);
        let a = dense_affinity(&z, &compute_lambda(&z), DENSE_ORACLE_CAP).unwrap();
        assert!(a.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn dense_affinity_respects_cap() {
        let z = one_row_set(vec![vec![(0, 1.0)]; 5], 1);
        assert!(dense_affinity(&z, &compute_lambda(&z), 4).is_err());
    }

    #[test]
    fn dense_affinity_is_symmetric_psd() {
        let (x, _) = generate_synthetic(3, 17, 4, 1.0, 9).unwrap();
        let x = x.select_rows(&(0..50).collect::<Vec<_>>()).unwrap();
        let params = AnchorParams { anchors: 9, neighbors: 3, ..Default::default() };
        let z = build_z(&x, &fit_anchors(&x, &params, 4).unwrap()).unwrap();
        let a = dense_affinity(&z, &compute_lambda(&z), DENSE_ORACLE_CAP).unwrap();
        assert!((&a - a.transpose()).amax() < 1e-12);
        for i in 0..50 {
            assert!((a.row(i).sum() - 1.0).abs() < 1e-10);
        }
        let eig = a.symmetric_eigenvalues();
        assert!(eig.min() > -1e-9);
    }

    #[test]
    fn dead_anchor_is_dropped() {
        // anchor 2 is never used
        let z = one_row_set(vec![vec![(0, 0.75), (1, 0.25)], vec![(1, 0.5), (0, 0.5)]], 3);
        let lambda = compute_lambda(&z);
        assert_eq!(lambda.dead_anchors(), vec![2]);
        let x = FeatureMatrix::new(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        let s = compute_s(&x, &z, &lambda).unwrap();
        let a = dense_affinity(&z, &lambda, DENSE_ORACLE_CAP).unwrap();
        let xd = DMatrix::from_row_slice(2, 2, x.as_slice());
        let dense_s = xd.transpose() * a * xd;
        assert!((s.matrix() - dense_s).norm() < 1e-12);
        assert!(s.matrix().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn sparse_rows_validate() {
        assert!(SparseAffinityRows::new(2, 2, vec![0, 0], vec![0.5, 0.5]).is_err());
        assert!(SparseAffinityRows::new(2, 1, vec![2], vec![1.0]).is_err());
        assert!(SparseAffinityRows::new(2, 1, vec![1], vec![0.9]).is_err());
    }
}
