//! Hash codes for training data and unseen queries, and the persisted model.
//!
//! Training points are encoded as `sgn(XW)`. Queries are encoded either the
//! same way (`linear`) or by the anchor-graph vote `sgn(BᵀZΛ⁻¹ z(x))`
//! (`graph`), where `BᵀZΛ⁻¹` is precomputed as a k×m vote matrix so query
//! cost does not depend on the training set size.
//!
//! Matrices in the model file are stored as 32-bit floats. The model keeps
//! them rounded to f32 in memory as well, so codes computed before saving and
//! after loading are identical.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::anchor_graph::{AnchorDegrees, AnchorSet, SparseAffinityRows};
use crate::codes::{words_for, PackedCodes};
use crate::dataset::{apply_standardization, FeatureMatrix, StandardizationStats};
use crate::error::{EshError, Result};
use crate::optimizer::{sign_value, ProjectionMatrix, ZeroRule};
use crate::par;

const MODEL_MAGIC: &[u8; 4] = b"ESHM";
pub const MODEL_VERSION: u8 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryMode {
    #[default]
    Graph,
    Linear,
}

impl FromStr for QueryMode {
    type Err = EshError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "graph" => Ok(QueryMode::Graph),
            "linear" => Ok(QueryMode::Linear),
            other => Err(EshError::InvalidArgument(format!("unknown query mode {other:?}"))),
        }
    }
}

impl fmt::Display for QueryMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QueryMode::Graph => "graph",
            QueryMode::Linear => "linear",
        })
    }
}

fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Rounds anchor centers to f32 so they survive a save/load unchanged.
pub fn quantize_anchors(anchors: &AnchorSet) -> Result<AnchorSet> {
    let centers = anchors.centers().iter().map(|&v| round_f32(v)).collect();
    AnchorSet::new(centers, anchors.dims(), anchors.sigma2(), anchors.neighbors())
}

fn project_row(x: &[f64], w: &DMatrix<f64>) -> Vec<f64> {
    (0..w.ncols())
        .map(|c| x.iter().enumerate().map(|(j, v)| v * w[(j, c)]).sum())
        .collect()
}

fn pack_signs(values: &[f64]) -> Vec<u64> {
    let mut code = vec![0u64; words_for(values.len())];
    for (c, &v) in values.iter().enumerate() {
        if sign_value(v, ZeroRule::Positive) > 0.0 {
            code[c / 64] |= 1 << (c % 64);
        }
    }
    code
}

fn collect_codes(bits: usize, codes: Vec<Vec<u64>>) -> Result<PackedCodes> {
    let count = codes.len();
    PackedCodes::from_words(count, bits, codes.concat())
}

/// `sgn(XW)` with zero mapped to +1, for standardized rows of `x`.
pub fn encode_train(x: &FeatureMatrix, w: &DMatrix<f64>) -> Result<PackedCodes> {
    if x.dims() != w.nrows() {
        return Err(EshError::DimensionMismatch { expected: w.nrows(), actual: x.dims() });
    }
    let codes = par::map_indices(x.rows(), |i| pack_signs(&project_row(x.row(i), w)));
    collect_codes(w.ncols(), codes)
}

/// `BᵀZΛ⁻¹` as a k×m matrix; columns of dead anchors are zero.
pub fn vote_matrix(codes: &PackedCodes, z: &SparseAffinityRows, lambda: &AnchorDegrees) -> Result<DMatrix<f64>> {
    if codes.len() != z.rows() {
        return Err(EshError::DimensionMismatch { expected: z.rows(), actual: codes.len() });
    }
    if lambda.len() != z.anchors() {
        return Err(EshError::DimensionMismatch { expected: z.anchors(), actual: lambda.len() });
    }
    let k = codes.bits();
    let mut vote = DMatrix::<f64>::zeros(k, z.anchors());
    for i in 0..z.rows() {
        for (j, w) in z.row(i) {
            for c in 0..k {
                vote[(c, j)] += codes.sign(i, c) * w;
            }
        }
    }
    for j in 0..z.anchors() {
        let inv = lambda.inverse(j);
        vote.column_mut(j).scale_mut(inv);
    }
    Ok(vote)
}

/// Everything needed to encode new points.
#[derive(Debug, Clone, PartialEq)]
pub struct HashModel {
    w: DMatrix<f64>,
    stats: StandardizationStats,
    anchors: AnchorSet,
    lambda: AnchorDegrees,
    vote: DMatrix<f64>,
    query_mode: QueryMode,
    train_size: usize,
    train_codes: Option<PackedCodes>,
    train_z: Option<SparseAffinityRows>,
}

/// Inputs for [`HashModel::fit`]. `x` is the standardized training matrix;
/// `z` and `lambda` must have been built from `anchors`.
pub struct ModelParts<'a> {
    pub x: &'a FeatureMatrix,
    pub w: &'a ProjectionMatrix,
    pub stats: StandardizationStats,
    pub anchors: AnchorSet,
    pub z: SparseAffinityRows,
    pub lambda: AnchorDegrees,
    pub query_mode: QueryMode,
    /// Keep `B` and `Z` in the model so the vote matrix can be rebuilt.
    pub retain_training: bool,
}

impl HashModel {
    /// Rounds `W` and the anchors to f32, encodes the training set with the
    /// rounded `W` and precomputes the vote matrix. Returns the model and the
    /// training codes `B`.
    pub fn fit(parts: ModelParts<'_>) -> Result<(Self, PackedCodes)> {
        let ModelParts { x, w, stats, anchors, z, lambda, query_mode, retain_training } = parts;
        let w = w.matrix().map(round_f32);
        if stats.dims() != w.nrows() || anchors.dims() != w.nrows() {
            return Err(EshError::DimensionMismatch { expected: w.nrows(), actual: stats.dims() });
        }
        let anchors = quantize_anchors(&anchors)?;
        let codes = encode_train(x, &w)?;
        let vote = vote_matrix(&codes, &z, &lambda)?.map(round_f32);
        let z = retain_training.then(|| quantize_z(&z)).transpose()?;
        let model = Self {
            w,
            stats,
            anchors,
            lambda,
            vote,
            query_mode,
            train_size: x.rows(),
            train_codes: retain_training.then(|| codes.clone()),
            train_z: z,
        };
        Ok((model, codes))
    }

    pub fn dims(&self) -> usize {
        self.w.nrows()
    }

    pub fn bits(&self) -> usize {
        self.w.ncols()
    }

    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }

    pub fn stats(&self) -> &StandardizationStats {
        &self.stats
    }

    pub fn anchors(&self) -> &AnchorSet {
        &self.anchors
    }

    pub fn lambda(&self) -> &AnchorDegrees {
        &self.lambda
    }

    pub fn vote(&self) -> &DMatrix<f64> {
        &self.vote
    }

    pub fn query_mode(&self) -> QueryMode {
        self.query_mode
    }

    pub fn set_query_mode(&mut self, mode: QueryMode) {
        self.query_mode = mode;
    }

    pub fn train_size(&self) -> usize {
        self.train_size
    }

    pub fn train_codes(&self) -> Option<&PackedCodes> {
        self.train_codes.as_ref()
    }

    pub fn train_z(&self) -> Option<&SparseAffinityRows> {
        self.train_z.as_ref()
    }

    /// `BᵀZΛ⁻¹ z(x)` for a raw query: the real-valued vote before `sgn`.
    pub fn graph_vote(&self, x_raw: &[f64]) -> Result<Vec<f64>> {
        let x = apply_standardization(x_raw, &self.stats)?;
        let row = self.anchors.affinity_row(&x)?;
        if row.iter().all(|&(j, _)| !self.lambda.is_live(j as usize)) {
            return Err(EshError::DegenerateQuery);
        }
        let mut v = vec![0.0; self.bits()];
        for (j, w) in row {
            for (c, acc) in v.iter_mut().enumerate() {
                *acc += w * self.vote[(c, j as usize)];
            }
        }
        Ok(v)
    }

    pub fn encode_query_graph(&self, x_raw: &[f64]) -> Result<Vec<u64>> {
        Ok(pack_signs(&self.graph_vote(x_raw)?))
    }

    pub fn encode_query_linear(&self, x_raw: &[f64]) -> Result<Vec<u64>> {
        let x = apply_standardization(x_raw, &self.stats)?;
        Ok(pack_signs(&project_row(&x, &self.w)))
    }

    pub fn encode_query(&self, x_raw: &[f64], mode: QueryMode) -> Result<Vec<u64>> {
        match mode {
            QueryMode::Graph => self.encode_query_graph(x_raw),
            QueryMode::Linear => self.encode_query_linear(x_raw),
        }
    }

    /// Encodes every row of a raw feature matrix.
    pub fn encode_queries(&self, x_raw: &FeatureMatrix, mode: QueryMode) -> Result<PackedCodes> {
        if x_raw.dims() != self.dims() {
            return Err(EshError::DimensionMismatch { expected: self.dims(), actual: x_raw.dims() });
        }
        let codes = par::map_indices(x_raw.rows(), |i| self.encode_query(x_raw.row(i), mode))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        collect_codes(self.bits(), codes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| EshError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = std::fs::read(path).map_err(|e| EshError::io(path, e))?;
        Self::from_bytes(&buf)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let (d, k, m) = (self.dims(), self.bits(), self.anchors.count());
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC);
        out.push(MODEL_VERSION);

        let mut head = Vec::new();
        for v in [d, k, m, self.anchors.neighbors(), self.train_size] {
            put_u64(&mut head, v as u64);
        }
        head.push(match self.query_mode {
            QueryMode::Graph => 0,
            QueryMode::Linear => 1,
        });
        put_section(&mut out, b"HEAD", &head);

        let mut stat = Vec::new();
        self.stats.mean.iter().chain(&self.stats.std).for_each(|&v| put_f64(&mut stat, v));
        put_section(&mut out, b"STAT", &stat);

        let mut anch = Vec::new();
        put_f64(&mut anch, self.anchors.sigma2());
        self.anchors.centers().iter().for_each(|&v| put_f32(&mut anch, v));
        put_section(&mut out, b"ANCH", &anch);

        let mut lamb = Vec::new();
        self.lambda.values().iter().for_each(|&v| put_f64(&mut lamb, v));
        put_section(&mut out, b"LAMB", &lamb);

        let mut proj = Vec::new();
        for r in 0..d {
            for c in 0..k {
                put_f32(&mut proj, self.w[(r, c)]);
            }
        }
        put_section(&mut out, b"PROJ", &proj);

        let mut vote = Vec::new();
        for c in 0..k {
            for j in 0..m {
                put_f32(&mut vote, self.vote[(c, j)]);
            }
        }
        put_section(&mut out, b"VOTE", &vote);

        if let Some(codes) = &self.train_codes {
            put_section(&mut out, b"CODE", &codes.encode());
        }
        if let Some(z) = &self.train_z {
            let mut zm = Vec::new();
            put_u64(&mut zm, z.rows() as u64);
            put_u64(&mut zm, z.neighbors() as u64);
            for (&j, &w) in z.indices().iter().zip(z.weights()) {
                zm.extend_from_slice(&j.to_le_bytes());
                put_f32(&mut zm, w);
            }
            put_section(&mut out, b"ZMAT", &zm);
        }

        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        if buf.len() < 5 || &buf[..4] != MODEL_MAGIC {
            return Err(EshError::Corrupt("missing ESHM header".into()));
        }
        if buf[4] != MODEL_VERSION {
            return Err(EshError::Version(buf[4]));
        }
        if buf.len() < 9 {
            return Err(EshError::Corrupt("model file truncated".into()));
        }
        let (body, trailer) = buf.split_at(buf.len() - 4);
        let stored = u32::from_le_bytes(trailer.try_into().unwrap());
        if crc32fast::hash(body) != stored {
            return Err(EshError::Corrupt("checksum mismatch".into()));
        }
        let mut r = Reader { buf: &body[5..] };

        let mut head = r.section(b"HEAD")?;
        let d = head.usize()?;
        let k = head.usize()?;
        let m = head.usize()?;
        let s = head.usize()?;
        let train_size = head.usize()?;
        let query_mode = match head.u8()? {
            0 => QueryMode::Graph,
            1 => QueryMode::Linear,
            other => return Err(EshError::Corrupt(format!("unknown query mode tag {other}"))),
        };
        head.finish()?;
        if d == 0 || k == 0 || k > d || m == 0 {
            return Err(EshError::Corrupt(format!("implausible shape d={d} k={k} m={m}")));
        }

        let mut stat = r.section(b"STAT")?;
        let mean = stat.f64s(d)?;
        let std = stat.f64s(d)?;
        stat.finish()?;
        let stats = StandardizationStats::new(mean, std)?;

        let mut anch = r.section(b"ANCH")?;
        let sigma2 = anch.f64()?;
        let centers = anch.f32s(m * d)?;
        anch.finish()?;
        let anchors = AnchorSet::new(centers, d, sigma2, s).map_err(|e| EshError::Corrupt(e.to_string()))?;

        let mut lamb = r.section(b"LAMB")?;
        let lambda = AnchorDegrees::new(lamb.f64s(m)?)?;
        lamb.finish()?;

        let mut proj = r.section(b"PROJ")?;
        let w = DMatrix::from_row_slice(d, k, &proj.f32s(d * k)?);
        proj.finish()?;

        let mut vote = r.section(b"VOTE")?;
        let vote_m = DMatrix::from_row_slice(k, m, &vote.f32s(k * m)?);
        vote.finish()?;

        let mut train_codes = None;
        let mut train_z = None;
        while !r.buf.is_empty() {
            let (tag, payload) = r.any_section()?;
            match &tag {
                b"CODE" => {
                    let codes = PackedCodes::decode(payload)?;
                    if codes.bits() != k || codes.len() != train_size {
                        return Err(EshError::Corrupt("stored codes do not match the model".into()));
                    }
                    train_codes = Some(codes);
                }
                b"ZMAT" => {
                    let mut z = Reader { buf: payload };
                    let n = z.usize()?;
                    let ns = z.usize()?;
                    let mut idx = Vec::with_capacity(n * ns);
                    let mut wts = Vec::with_capacity(n * ns);
                    for _ in 0..n * ns {
                        idx.push(z.u32()?);
                        wts.push(z.f32()?);
                    }
                    z.finish()?;
                    train_z = Some(
                        SparseAffinityRows::new(m, ns, idx, wts).map_err(|e| EshError::Corrupt(e.to_string()))?,
                    );
                }
                other => {
                    return Err(EshError::Corrupt(format!(
                        "unknown section {:?}",
                        String::from_utf8_lossy(other)
                    )))
                }
            }
        }

        Ok(Self {
            w,
            stats,
            anchors,
            lambda,
            vote: vote_m,
            query_mode,
            train_size,
            train_codes,
            train_z,
        })
    }
}

fn quantize_z(z: &SparseAffinityRows) -> Result<SparseAffinityRows> {
    let weights = z.weights().iter().map(|&w| round_f32(w)).collect();
    SparseAffinityRows::new(z.anchors(), z.neighbors(), z.indices().to_vec(), weights)
}

fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_f32(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&(v as f32).to_le_bytes());
}

fn put_section(out: &mut Vec<u8>, tag: &[u8; 4], payload: &[u8]) {
    out.extend_from_slice(tag);
    put_u64(out, payload.len() as u64);
    out.extend_from_slice(payload);
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(EshError::Corrupt("unexpected end of data".into()));
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(v).map_err(|_| EshError::Corrupt("size overflows".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f32(&mut self) -> Result<f64> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()) as f64)
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn f32s(&mut self, n: usize) -> Result<Vec<f64>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| EshError::Corrupt("size overflows".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn any_section(&mut self) -> Result<([u8; 4], &'a [u8])> {
        let tag: [u8; 4] = self.take(4)?.try_into().unwrap();
        let len = self.usize()?;
        Ok((tag, self.take(len)?))
    }

    fn section(&mut self, expected: &[u8; 4]) -> Result<Reader<'a>> {
        let (tag, payload) = self.any_section()?;
        if &tag != expected {
            return Err(EshError::Corrupt(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(expected),
                String::from_utf8_lossy(&tag)
            )));
        }
        Ok(Reader { buf: payload })
    }

    fn finish(&self) -> Result<()> {
        if self.buf.is_empty() {
            Ok(())
        } else {
            Err(EshError::Corrupt("trailing bytes in section".into()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anchor_graph::{build_z, compute_lambda, fit_anchors, AnchorParams};
    use crate::dataset::{generate_synthetic, standardize};
    use crate::optimizer::init_w;

    fn small_model(retain: bool) -> (HashModel, PackedCodes, FeatureMatrix, FeatureMatrix) {
        let (raw, _) = generate_synthetic(4, 25, 6, 0.7, 21).unwrap();
        let (x, stats) = standardize(&raw).unwrap();
        let params = AnchorParams { anchors: 12, ..Default::default() };
        let anchors = quantize_anchors(&fit_anchors(&x, &params, 3).unwrap()).unwrap();
        let z = build_z(&x, &anchors).unwrap();
        let lambda = compute_lambda(&z);
        let w = init_w(6, 5, 8).unwrap();
        let (model, codes) = HashModel::fit(ModelParts {
            x: &x,
            w: &w,
            stats,
            anchors,
            z,
            lambda,
            query_mode: QueryMode::Graph,
            retain_training: retain,
        })
        .unwrap();
        (model, codes, x, raw)
    }

    #[test]
    fn zero_projection_encodes_positive() {
        let w = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
        let x = FeatureMatrix::new(2, 3, vec![1.0, 2.0, 0.0, 1.0, 1.0, -1.0]).unwrap();
        let codes = encode_train(&x, &w).unwrap();
        assert_eq!(codes.unpack().row(0).iter().copied().collect::<Vec<_>>(), vec![1.0, 1.0]);
        assert_eq!(codes.unpack().row(1).iter().copied().collect::<Vec<_>>(), vec![-1.0, -1.0]);
    }

    #[test]
    fn negated_column_flips_its_bit() {
        let (_, _, x, _) = small_model(false);
        let w = init_w(6, 4, 2).unwrap().into_inner();
        let mut flipped = w.clone();
        flipped.column_mut(2).neg_mut();
        let a = encode_train(&x, &w).unwrap().unpack();
        let b = encode_train(&x, &flipped).unwrap().unpack();
        for i in 0..x.rows() {
            for c in 0..4 {
                let expect = if c == 2 { -a[(i, c)] } else { a[(i, c)] };
                assert_eq!(b[(i, c)], expect);
            }
        }
    }

    #[test]
    fn train_codes_match_sign_oracle() {
        let (raw, _) = generate_synthetic(2, 10, 5, 1.0, 4).unwrap();
        let w = init_w(5, 3, 9).unwrap().into_inner();
        let codes = encode_train(&raw, &w).unwrap().unpack();
        for i in 0..20 {
            for c in 0..3 {
                let p: f64 = (0..5).map(|j| raw.get(i, j) * w[(j, c)]).sum();
                assert_eq!(codes[(i, c)], if p >= 0.0 { 1.0 } else { -1.0 });
            }
        }
    }

    #[test]
    fn one_hot_affinity_reads_a_vote_column() {
        let (model, _, _, _) = small_model(false);
        // a query placed exactly on a live anchor, with s = 1
        let mut one = model.clone();
        let j = (0..one.anchors().count()).find(|&j| one.lambda().is_live(j)).unwrap();
        one.anchors = AnchorSet::new(one.anchors.centers().to_vec(), 6, one.anchors.sigma2(), 1).unwrap();
        let center: Vec<f64> = one
            .anchors
            .center(j)
            .iter()
            .zip(one.stats.mean.iter().zip(&one.stats.std))
            .map(|(c, (m, s))| c * s + m)
            .collect();
        let v = one.graph_vote(&center).unwrap();
        for (c, vc) in v.iter().enumerate() {
            assert!((vc - one.vote[(c, j)]).abs() < 1e-9);
        }
    }

    #[test]
    fn linear_query_replays_training_codes() {
        let (model, codes, _, raw) = small_model(false);
        for i in 0..raw.rows() {
            assert_eq!(model.encode_query_linear(raw.row(i)).unwrap(), codes.code(i));
        }
        let zero_query = model.stats.mean.clone();
        let code = model.encode_query_linear(&zero_query).unwrap();
        assert_eq!(code, vec![(1u64 << model.bits()) - 1]);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let (model, _, _, _) = small_model(false);
        assert!(model.encode_query_graph(&[1.0; 5]).is_err());
        assert!(model.encode_query_linear(&[1.0; 7]).is_err());
    }

    #[test]
    fn unanimous_neighborhood_decides_the_bit() {
        let (model, codes, x, raw) = small_model(true);
        let z = model.train_z().unwrap();
        for i in 0..raw.rows() {
            let nearest = model.anchors.nearest(x.row(i));
            let members: Vec<usize> = (0..z.rows())
                .filter(|&r| z.row(r).any(|(j, _)| nearest.iter().any(|&(a, _)| a as usize == j)))
                .collect();
            let code = model.encode_query_graph(raw.row(i)).unwrap();
            for c in 0..model.bits() {
                let first = codes.sign(members[0], c);
                if members.iter().all(|&r| codes.sign(r, c) == first) {
                    let bit = if code[0] >> c & 1 == 1 { 1.0 } else { -1.0 };
                    assert_eq!(bit, first);
                }
            }
        }
    }

    #[test]
    fn model_roundtrip_is_exact() {
        for retain in [false, true] {
            let (model, _, _, raw) = small_model(retain);
            let bytes = model.to_bytes();
            let back = HashModel::from_bytes(&bytes).unwrap();
            assert_eq!(back, model);
            for i in 0..raw.rows() {
                assert_eq!(back.encode_query_graph(raw.row(i)).unwrap(), model.encode_query_graph(raw.row(i)).unwrap());
            }
        }
    }

    #[test]
    fn stored_training_data_rebuilds_vote() {
        let (model, _, _, _) = small_model(true);
        let rebuilt = vote_matrix(model.train_codes().unwrap(), model.train_z().unwrap(), model.lambda()).unwrap();
        assert!((rebuilt - model.vote()).amax() < 1e-5);
    }

    #[test]
    fn damaged_files_are_rejected() {
        let (model, _, _, _) = small_model(true);
        let bytes = model.to_bytes();
        assert!(matches!(HashModel::from_bytes(&bytes[..bytes.len() - 10]), Err(EshError::Corrupt(_))));
        let mut flipped = bytes.clone();
        flipped[40] ^= 0x10;
        assert!(matches!(HashModel::from_bytes(&flipped), Err(EshError::Corrupt(_))));
        let mut version = bytes;
        version[4] = 7;
        assert!(matches!(HashModel::from_bytes(&version), Err(EshError::Version(7))));
    }
}
