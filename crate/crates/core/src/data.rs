//! Transition records, the on-disk dataset format, state normalization and
//! mini-batch sampling.
//!
//! Dataset files (`STCDS01`): the 7-byte magic, `u32` obs_dim, `u32` act_dim,
//! `u64` record count, then every record as little-endian `f32`s laid out as
//! `[s | a | r | s_next | done]` with `done` stored as 0.0 or 1.0.

use std::fs;
use std::path::Path;

use rand::Rng;

use crate::bytes::{put_f32s, Reader};
use crate::error::{Error, Result};

pub const DATASET_MAGIC: &[u8; 7] = b"STCDS01";

/// Smallest standard deviation a normalized dimension may have.
pub const STD_FLOOR: f32 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f32>,
    pub action: Vec<f32>,
    pub reward: f32,
    pub next_state: Vec<f32>,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum DomainTag {
    Source,
    Target,
    Corrected,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    obs_dim: usize,
    act_dim: usize,
    tag: DomainTag,
    records: Vec<Transition>,
}

impl TransitionDataset {
    pub fn new(obs_dim: usize, act_dim: usize, tag: DomainTag) -> Self {
        Self { obs_dim, act_dim, tag, records: Vec::new() }
    }

    pub fn from_records(obs_dim: usize, act_dim: usize, tag: DomainTag, records: Vec<Transition>) -> Result<Self> {
        let mut ds = Self::new(obs_dim, act_dim, tag);
        ds.records.reserve(records.len());
        for r in records {
            ds.push(r)?;
        }
        Ok(ds)
    }

    /// Appends a record; actions are clipped to `[-1, 1]`.
    pub fn push(&mut self, mut t: Transition) -> Result<()> {
        if t.state.len() != self.obs_dim || t.next_state.len() != self.obs_dim || t.action.len() != self.act_dim {
            return Err(Error::shape(format!(
                "record with state {}, next state {}, action {} does not fit a ({}, {}) dataset",
                t.state.len(),
                t.next_state.len(),
                t.action.len(),
                self.obs_dim,
                self.act_dim
            )));
        }
        for a in &mut t.action {
            *a = a.clamp(-1.0, 1.0);
        }
        self.records.push(t);
        Ok(())
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn tag(&self) -> DomainTag {
        self.tag
    }

    pub fn with_tag(mut self, tag: DomainTag) -> Self {
        self.tag = tag;
        self
    }

    pub fn records(&self) -> &[Transition] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, i: usize) -> Option<&Transition> {
        self.records.get(i)
    }

    /// Dataset restricted to the given record indices, in that order.
    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            obs_dim: self.obs_dim,
            act_dim: self.act_dim,
            tag: self.tag,
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    fn record_width(&self) -> usize {
        2 * self.obs_dim + self.act_dim + 2
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(23 + 4 * self.record_width() * self.len());
        out.extend_from_slice(DATASET_MAGIC);
        out.extend_from_slice(&(self.obs_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.act_dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.records.len() as u64).to_le_bytes());
        for t in &self.records {
            put_f32s(&mut out, &t.state);
            put_f32s(&mut out, &t.action);
            put_f32s(&mut out, &[t.reward]);
            put_f32s(&mut out, &t.next_state);
            put_f32s(&mut out, &[if t.done { 1.0 } else { 0.0 }]);
        }
        out
    }

    /// Decodes a dataset file. The format carries no domain tag, so the
    /// caller states which role the file plays.
    pub fn from_bytes(bytes: &[u8], tag: DomainTag) -> Result<Self> {
        let mut r = Reader::new(bytes);
        r.expect_magic(DATASET_MAGIC)?;
        let obs_dim = r.u32("obs_dim")? as usize;
        let act_dim = r.u32("act_dim")? as usize;
        if obs_dim == 0 || act_dim == 0 {
            return Err(r.error(format!("dimensions must be positive, got obs {obs_dim}, act {act_dim}")));
        }
        let count = r.u64("record count")?;
        let mut ds = Self::new(obs_dim, act_dim, tag);
        let width = ds.record_width();
        let needed = (count as u128) * (width as u128) * 4;
        if needed > r.remaining() as u128 {
            return Err(r.error(format!(
                "truncated: {count} records need {needed} bytes, {} available ({} missing)",
                r.remaining(),
                needed - r.remaining() as u128
            )));
        }
        ds.records.reserve(count as usize);
        let mut row = Vec::with_capacity(width);
        for _ in 0..count {
            row.clear();
            r.f32s(width, "record", &mut row)?;
            let (state, rest) = row.split_at(obs_dim);
            let (action, rest) = rest.split_at(act_dim);
            let reward = rest[0];
            let next_state = &rest[1..1 + obs_dim];
            let done = match rest[1 + obs_dim] {
                x if x == 0.0 => false,
                x if x == 1.0 => true,
                x => return Err(r.error(format!("done flag must be 0.0 or 1.0, found {x}"))),
            };
            ds.records.push(Transition {
                state: state.to_vec(),
                action: action.to_vec(),
                reward,
                next_state: next_state.to_vec(),
                done,
            });
        }
        r.finish()?;
        Ok(ds)
    }
}

pub fn save_dataset(ds: &TransitionDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, ds.to_bytes())?;
    Ok(())
}

pub fn load_dataset(path: impl AsRef<Path>, tag: DomainTag) -> Result<TransitionDataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    TransitionDataset::from_bytes(&fs::read(path)?, tag)
}

/// Per-dimension state mean and (population) standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct NormStats {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        Self { mean: vec![0.0; dim], std: vec![1.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, s: &[f32]) -> Vec<f32> {
        let mut out = Vec::with_capacity(s.len());
        self.normalize_into(s, &mut out);
        out
    }

    pub fn normalize_into(&self, s: &[f32], out: &mut Vec<f32>) {
        debug_assert_eq!(s.len(), self.dim());
        out.extend(s.iter().zip(self.mean.iter().zip(&self.std)).map(|(&x, (&m, &sd))| (x - m) / sd));
    }

    pub fn to_text(&self) -> String {
        let join = |v: &[f32]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(",");
        format!("mean={}\nstd={}\n", join(&self.mean), join(&self.std))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut mean = None;
        let mut std = None;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::config(format!("malformed normalization line {line:?}")))?;
            let parsed: std::result::Result<Vec<f32>, _> = value.split(',').map(|x| x.trim().parse::<f32>()).collect();
            let parsed = parsed.map_err(|e| Error::config(format!("bad normalization value in {line:?}: {e}")))?;
            match key.trim() {
                "mean" => mean = Some(parsed),
                "std" => std = Some(parsed),
                other => return Err(Error::config(format!("unknown normalization key {other:?}"))),
            }
        }
        match (mean, std) {
            (Some(mean), Some(std)) if mean.len() == std.len() => Ok(Self { mean, std }),
            _ => Err(Error::config("normalization file needs mean and std of equal length")),
        }
    }
}

pub fn compute_stats(ds: &TransitionDataset) -> Result<NormStats> {
    if ds.is_empty() {
        return Err(Error::usage("cannot compute statistics of an empty dataset"));
    }
    let n = ds.len() as f64;
    let d = ds.obs_dim();
    let mut mean = vec![0.0f64; d];
    for t in ds.records() {
        for (m, &x) in mean.iter_mut().zip(&t.state) {
            *m += x as f64;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0f64; d];
    for t in ds.records() {
        for ((v, &x), m) in var.iter_mut().zip(&t.state).zip(&mean) {
            *v += (x as f64 - m).powi(2);
        }
    }
    Ok(NormStats {
        mean: mean.iter().map(|&m| m as f32).collect(),
        std: var.iter().map(|&v| ((v / n).sqrt() as f32).max(STD_FLOOR)).collect(),
    })
}

/// Uniform draw of `n` record indices with replacement. Indices come from
/// integer sampling only.
pub fn sample_indices<R: Rng + ?Sized>(len: usize, n: usize, rng: &mut R) -> Result<Vec<usize>> {
    if len == 0 {
        return Err(Error::usage("cannot sample from an empty dataset"));
    }
    if n == 0 {
        return Err(Error::usage("batch size must be at least 1"));
    }
    Ok((0..n).map(|_| rng.random_range(0..len as u64) as usize).collect())
}

pub fn sample_batch<'a, R: Rng + ?Sized>(
    ds: &'a TransitionDataset,
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'a Transition>> {
    Ok(sample_indices(ds.len(), n, rng)?.into_iter().map(|i| &ds.records[i]).collect())
}

/// Half of `total_n` from each dataset, source half first.
pub fn symmetric_batch<'a, R: Rng + ?Sized>(
    src: &'a TransitionDataset,
    tar: &'a TransitionDataset,
    total_n: usize,
    rng: &mut R,
) -> Result<(Vec<&'a Transition>, Vec<&'a Transition>)> {
    if total_n % 2 != 0 || total_n == 0 {
        return Err(Error::usage(format!("symmetric batch size must be positive and even, got {total_n}")));
    }
    let half = total_n / 2;
    Ok((sample_batch(src, half, rng)?, sample_batch(tar, half, rng)?))
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn record(x: f32) -> Transition {
        Transition { state: vec![x, -x], action: vec![0.5], reward: x * 0.1, next_state: vec![x + 1.0, 0.0], done: x > 2.0 }
    }

    fn small() -> TransitionDataset {
        TransitionDataset::from_records(2, 1, DomainTag::Source, (0..5).map(|i| record(i as f32)).collect()).unwrap()
    }

    #[test]
    fn round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.stcds");
        let ds = small();
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path, DomainTag::Source).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_is_a_legal_file() {
        let ds = TransitionDataset::new(3, 2, DomainTag::Target);
        let bytes = ds.to_bytes();
        assert_eq!(bytes.len(), 7 + 4 + 4 + 8);
        let back = TransitionDataset::from_bytes(&bytes, DomainTag::Target).unwrap();
        assert!(back.is_empty());
        assert_eq!((back.obs_dim(), back.act_dim()), (3, 2));
    }

    #[test]
    fn truncated_file_names_missing_bytes() {
        let bytes = small().to_bytes();
        let cut = &bytes[..bytes.len() - 6];
        match TransitionDataset::from_bytes(cut, DomainTag::Source) {
            Err(Error::Format { offset, message }) => {
                assert_eq!(offset, 23);
                assert!(message.contains("6 missing"), "{message}");
            }
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut bytes = small().to_bytes();
        bytes[3] = b'X';
        assert!(matches!(TransitionDataset::from_bytes(&bytes, DomainTag::Source), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn push_rejects_dimension_mismatch_and_clips_actions() {
        let mut ds = TransitionDataset::new(2, 1, DomainTag::Source);
        let mut t = record(1.0);
        t.action = vec![3.0];
        ds.push(t).unwrap();
        assert_eq!(ds.records()[0].action, vec![1.0]);
        let mut bad = record(1.0);
        bad.state.push(0.0);
        assert!(matches!(ds.push(bad), Err(Error::Shape(_))));
    }

    #[test]
    fn single_record_sampled_repeatedly() {
        let ds = small().subset(&[2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let b = sample_batch(&ds, 3, &mut rng).unwrap();
        assert_eq!(b.len(), 3);
        assert!(b.iter().all(|t| **t == ds.records()[0]));
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let ds = small();
        let draw = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_indices(ds.len(), 32, &mut rng).unwrap()
        };
        assert_eq!(draw(4), draw(4));
        assert_ne!(draw(4), draw(5));
    }

    #[test]
    fn empty_dataset_cannot_be_sampled() {
        let ds = TransitionDataset::new(2, 1, DomainTag::Target);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_batch(&ds, 1, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn symmetric_halves() {
        let (src, tar) = (small(), small().with_tag(DomainTag::Target));
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (a, b) = symmetric_batch(&src, &tar, 256, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (128, 128));
        let (a, b) = symmetric_batch(&src, &tar, 2, &mut rng).unwrap();
        assert_eq!((a.len(), b.len()), (1, 1));
        assert!(matches!(symmetric_batch(&src, &tar, 3, &mut rng), Err(Error::Usage(_))));
    }

    #[test]
    fn stats_of_two_points() {
        let recs = [0.0f32, 2.0]
            .iter()
            .map(|&x| Transition { state: vec![x], action: vec![0.0], reward: 0.0, next_state: vec![x], done: false })
            .collect();
        let ds = TransitionDataset::from_records(1, 1, DomainTag::Target, recs).unwrap();
        let s = compute_stats(&ds).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.std, vec![1.0]);
    }

    #[test]
    fn constant_states_hit_the_floor() {
        let recs = (0..4).map(|_| record(1.5)).collect();
        let ds = TransitionDataset::from_records(2, 1, DomainTag::Target, recs).unwrap();
        let s = compute_stats(&ds).unwrap();
        assert_eq!(s.std, vec![STD_FLOOR, STD_FLOOR]);
    }

    #[test]
    fn standardized_dataset_has_unit_stats() {
        let ds = small();
        let s = compute_stats(&ds).unwrap();
        let recs = ds
            .records()
            .iter()
            .map(|t| Transition { state: s.normalize(&t.state), ..t.clone() })
            .collect();
        let z = TransitionDataset::from_records(2, 1, DomainTag::Source, recs).unwrap();
        let zs = compute_stats(&z).unwrap();
        for (m, sd) in zs.mean.iter().zip(&zs.std) {
            assert!(m.abs() < 1e-5);
            assert!((sd - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn stats_text_round_trip() {
        let s = NormStats { mean: vec![0.1, -3.25], std: vec![1e-6, 2.5] };
        assert_eq!(NormStats::from_text(&s.to_text()).unwrap(), s);
    }

    #[test]
    fn stats_of_empty_dataset_is_usage_error() {
        let ds = TransitionDataset::new(1, 1, DomainTag::Target);
        assert!(matches!(compute_stats(&ds), Err(Error::Usage(_))));
    }
}
