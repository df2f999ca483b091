//! Action-distribution comparison between source, corrected and target data.
//!
//! Each target transition is matched to its nearest source transition in
//! `(s, s')` space; the source action, its corrected counterpart and the
//! target action form one triple. Per action dimension the three columns are
//! summarized by histograms, Gaussian KDE curves and 1-D Wasserstein-1
//! distances to the target column.

use std::fmt::Write as _;

use crate::data::TransitionDataset;
use crate::error::{Error, Result};

pub const HIST_BINS: usize = 64;
pub const KDE_POINTS: usize = 256;
/// Grid padding in bandwidths beyond the action box.
const KDE_PAD: f64 = 4.0;
// Two grid spacings over the action box; narrower kernels fall between
// grid points and the sampled curve stops being a density.
const MIN_BANDWIDTH: f64 = 4.0 / (KDE_POINTS - 1) as f64;

#[derive(Debug, Clone)]
struct Node {
    point: usize,
    axis: usize,
    left: Option<usize>,
    right: Option<usize>,
}

/// Exact Euclidean nearest-neighbor index over fixed-dimension points.
#[derive(Debug, Clone)]
pub struct KdTree {
    dim: usize,
    points: Vec<f64>,
    nodes: Vec<Node>,
    root: Option<usize>,
}

impl KdTree {
    /// `points` is row-major with `dim` coordinates per point.
    pub fn build(points: Vec<f64>, dim: usize) -> Result<Self> {
        if dim == 0 || points.is_empty() {
            return Err(Error::usage("kd-tree needs at least one point of positive dimension"));
        }
        if points.len() % dim != 0 {
            return Err(Error::shape(format!("{} coordinates do not split into {dim}-dim points", points.len())));
        }
        let n = points.len() / dim;
        let mut tree = KdTree { dim, points, nodes: Vec::with_capacity(n), root: None };
        let mut idx: Vec<usize> = (0..n).collect();
        tree.root = tree.build_rec(&mut idx, 0);
        Ok(tree)
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    fn coord(&self, i: usize, axis: usize) -> f64 {
        self.points[i * self.dim + axis]
    }

    fn build_rec(&mut self, idx: &mut [usize], depth: usize) -> Option<usize> {
        if idx.is_empty() {
            return None;
        }
        let axis = depth % self.dim;
        let mid = idx.len() / 2;
        let pts = &self.points;
        let dim = self.dim;
        idx.select_nth_unstable_by(mid, |&a, &b| {
            pts[a * dim + axis].total_cmp(&pts[b * dim + axis]).then(a.cmp(&b))
        });
        let point = idx[mid];
        let (lo, rest) = idx.split_at_mut(mid);
        let hi = &mut rest[1..];
        let left = self.build_rec(lo, depth + 1);
        let right = self.build_rec(hi, depth + 1);
        self.nodes.push(Node { point, axis, left, right });
        Some(self.nodes.len() - 1)
    }

    /// `(index, distance)` of the nearest stored point; ties go to the
    /// lowest index.
    pub fn nearest(&self, query: &[f64]) -> Result<(usize, f64)> {
        if query.len() != self.dim {
            return Err(Error::shape(format!("query has {} dims, tree has {}", query.len(), self.dim)));
        }
        let mut best = (usize::MAX, f64::INFINITY);
        self.search(self.root, query, &mut best);
        Ok((best.0, best.1.sqrt()))
    }

    fn search(&self, node: Option<usize>, q: &[f64], best: &mut (usize, f64)) {
        let Some(id) = node else { return };
        let node = &self.nodes[id];
        let p = &self.points[node.point * self.dim..(node.point + 1) * self.dim];
        let d2: f64 = p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.1 || (d2 == best.1 && node.point < best.0) {
            *best = (node.point, d2);
        }
        let diff = q[node.axis] - self.coord(node.point, node.axis);
        let (near, far) = if diff < 0.0 { (node.left, node.right) } else { (node.right, node.left) };
        self.search(near, q, best);
        // Equal distance may still hide a lower-index tie on the far side.
        if diff * diff <= best.1 {
            self.search(far, q, best);
        }
    }
}

/// Linear-scan reference used to cross-check the tree.
pub fn brute_force_nearest(points: &[f64], dim: usize, query: &[f64]) -> (usize, f64) {
    let mut best = (usize::MAX, f64::INFINITY);
    for (i, p) in points.chunks_exact(dim).enumerate() {
        let d2: f64 = p.iter().zip(query).map(|(a, b)| (a - b) * (a - b)).sum();
        if d2 < best.1 {
            best = (i, d2);
        }
    }
    (best.0, best.1.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ActionTriple {
    pub target_index: usize,
    pub source_index: usize,
    pub source: Vec<f32>,
    pub corrected: Vec<f32>,
    pub target: Vec<f32>,
}

fn key(t: &crate::data::Transition) -> impl Iterator<Item = f64> + '_ {
    t.state.iter().chain(&t.next_state).map(|&x| x as f64)
}

pub fn pair_actions(
    src: &TransitionDataset,
    corrected: &TransitionDataset,
    tar: &TransitionDataset,
) -> Result<Vec<ActionTriple>> {
    if src.len() != corrected.len() {
        return Err(Error::usage(format!(
            "source ({}) and corrected ({}) datasets are not index-aligned",
            src.len(),
            corrected.len()
        )));
    }
    if let Some(i) = src
        .records()
        .iter()
        .zip(corrected.records())
        .position(|(a, b)| a.state != b.state || a.next_state != b.next_state)
    {
        return Err(Error::usage(format!("corrected record {i} does not match source record {i}")));
    }
    if src.obs_dim() != tar.obs_dim() || src.act_dim() != tar.act_dim() {
        return Err(Error::shape("source and target datasets differ in dimensions"));
    }
    if tar.is_empty() {
        return Err(Error::usage("target dataset is empty"));
    }
    let points: Vec<f64> = src.records().iter().flat_map(key).collect();
    let tree = KdTree::build(points, 2 * src.obs_dim())?;
    tar.records()
        .iter()
        .enumerate()
        .map(|(ti, t)| {
            let q: Vec<f64> = key(t).collect();
            let (si, _) = tree.nearest(&q)?;
            Ok(ActionTriple {
                target_index: ti,
                source_index: si,
                source: src.records()[si].action.clone(),
                corrected: corrected.records()[si].action.clone(),
                target: t.action.clone(),
            })
        })
        .collect()
}

pub fn triples_csv(triples: &[ActionTriple]) -> String {
    let dim = triples.first().map_or(0, |t| t.target.len());
    let mut out = String::from("target_index,source_index");
    for col in ["src", "corr", "tar"] {
        for j in 0..dim {
            let _ = write!(out, ",{col}_a{j}");
        }
    }
    out.push('\n');
    for t in triples {
        let _ = write!(out, "{},{}", t.target_index, t.source_index);
        for v in t.source.iter().chain(&t.corrected).chain(&t.target) {
            let _ = write!(out, ",{v:?}");
        }
        out.push('\n');
    }
    out
}

/// Densities of a 64-bin histogram over `[-1, 1]`; values outside are
/// clamped into the edge bins.
pub fn histogram(samples: &[f64]) -> Vec<f64> {
    let width = 2.0 / HIST_BINS as f64;
    let mut counts = vec![0usize; HIST_BINS];
    for &x in samples {
        let b = ((x.clamp(-1.0, 1.0) + 1.0) / width).floor() as usize;
        counts[b.min(HIST_BINS - 1)] += 1;
    }
    let scale = 1.0 / (samples.len() as f64 * width);
    counts.into_iter().map(|c| c as f64 * scale).collect()
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Silverman's rule `0.9·min(σ, IQR/1.34)·n^(-1/5)`, with fallbacks when the
/// spread estimates vanish.
pub fn silverman_bandwidth(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let sd = (samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0)).sqrt();
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > 0.0, iqr > 0.0) {
        (true, true) => sd.min(iqr / 1.34),
        (true, false) => sd,
        (false, true) => iqr / 1.34,
        (false, false) => 0.0,
    };
    (0.9 * spread * n.powf(-0.2)).max(MIN_BANDWIDTH)
}

pub fn kde(samples: &[f64], grid: &[f64], h: f64) -> Vec<f64> {
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    grid.iter()
        .map(|&x| samples.iter().map(|&s| (-0.5 * ((x - s) / h).powi(2)).exp()).sum::<f64>() * norm)
        .collect()
}

/// Wasserstein-1 distance between two empirical distributions,
/// `∫ |F(x) − G(x)| dx`. Sample counts may differ.
pub fn wasserstein1(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::usage("Wasserstein distance needs non-empty samples"));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len() as f64, xb.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut prev = xa[0].min(xb[0]);
    let mut total = 0.0;
    while i < xa.len() || j < xb.len() {
        let next = match (xa.get(i), xb.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < xa.len() && xa[i] == next {
            i += 1;
        }
        while j < xb.len() && xb[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimReport {
    pub dim: usize,
    pub hist: [Vec<f64>; 3],
    pub grid: Vec<f64>,
    pub kde: [Vec<f64>; 3],
    pub bandwidth: [f64; 3],
    pub w1_source_target: f64,
    pub w1_corrected_target: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistributionReport {
    pub dims: Vec<DimReport>,
}

impl DistributionReport {
    pub fn mean_w1(&self) -> (f64, f64) {
        let n = self.dims.len() as f64;
        (
            self.dims.iter().map(|d| d.w1_source_target).sum::<f64>() / n,
            self.dims.iter().map(|d| d.w1_corrected_target).sum::<f64>() / n,
        )
    }

    /// Long-format table with columns `dim,kind,x,source,corrected,target`.
    /// `kind` is `hist`, `kde`, `bandwidth` or `w1`; the `w1` row holds the
    /// distance of each column to the target column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("dim,kind,x,source,corrected,target\n");
        let width = 2.0 / HIST_BINS as f64;
        for d in &self.dims {
            for b in 0..HIST_BINS {
                let x = -1.0 + (b as f64 + 0.5) * width;
                let _ = writeln!(out, "{},hist,{x:?},{:?},{:?},{:?}", d.dim, d.hist[0][b], d.hist[1][b], d.hist[2][b]);
            }
            for (k, x) in d.grid.iter().enumerate() {
                let _ = writeln!(out, "{},kde,{x:?},{:?},{:?},{:?}", d.dim, d.kde[0][k], d.kde[1][k], d.kde[2][k]);
            }
            let _ = writeln!(out, "{},bandwidth,,{:?},{:?},{:?}", d.dim, d.bandwidth[0], d.bandwidth[1], d.bandwidth[2]);
            let _ = writeln!(out, "{},w1,,{:?},{:?},0.0", d.dim, d.w1_source_target, d.w1_corrected_target);
        }
        out
    }
}

pub fn distribution_report(triples: &[ActionTriple]) -> Result<DistributionReport> {
    distribution_report_with(triples, None)
}

/// As [`distribution_report`] with an optional fixed KDE bandwidth.
pub fn distribution_report_with(triples: &[ActionTriple], bandwidth: Option<f64>) -> Result<DistributionReport> {
    if triples.len() < 2 {
        return Err(Error::usage("distribution report needs at least two samples"));
    }
    if let Some(h) = bandwidth {
        if !(h.is_finite() && h > 0.0) {
            return Err(Error::usage(format!("bandwidth must be > 0, got {h}")));
        }
    }
    let act_dim = triples[0].target.len();
    let mut dims = Vec::with_capacity(act_dim);
    for j in 0..act_dim {
        let cols: [Vec<f64>; 3] = [
            triples.iter().map(|t| t.source[j] as f64).collect(),
            triples.iter().map(|t| t.corrected[j] as f64).collect(),
            triples.iter().map(|t| t.target[j] as f64).collect(),
        ];
        let bw = [0, 1, 2].map(|c| bandwidth.unwrap_or_else(|| silverman_bandwidth(&cols[c])));
        let h_max = bw.iter().copied().fold(0.0, f64::max);
        let (lo, hi) = (-1.0 - KDE_PAD * h_max, 1.0 + KDE_PAD * h_max);
        let grid: Vec<f64> = (0..KDE_POINTS).map(|k| lo + (hi - lo) * k as f64 / (KDE_POINTS - 1) as f64).collect();
        dims.push(DimReport {
            dim: j,
            hist: [0, 1, 2].map(|c| histogram(&cols[c])),
            kde: [0, 1, 2].map(|c| kde(&cols[c], &grid, bw[c])),
            grid,
            bandwidth: bw,
            w1_source_target: wasserstein1(&cols[0], &cols[2])?,
            w1_corrected_target: wasserstein1(&cols[1], &cols[2])?,
        });
    }
    Ok(DistributionReport { dims })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{DomainTag, Transition};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tree_small_examples() {
        let tree = KdTree::build(vec![0.0, 0.0, 1.0, 1.0, 2.0, 2.0], 2).unwrap();
        assert_eq!(tree.nearest(&[0.9, 0.9]).unwrap().0, 1);
        assert_eq!(tree.nearest(&[2.0, 2.0]).unwrap(), (2, 0.0));
        assert!(KdTree::build(vec![], 2).is_err());
        assert!(tree.nearest(&[0.0]).is_err());
    }

    #[test]
    fn ties_go_to_lowest_index() {
        let pts = vec![1.0, 0.0, -1.0, 0.0, 0.0, 1.0, 5.0, 5.0, 1.0, 0.0];
        let tree = KdTree::build(pts, 2).unwrap();
        assert_eq!(tree.nearest(&[0.0, 0.0]).unwrap().0, 0);
        assert_eq!(tree.nearest(&[1.0, 0.0]).unwrap().0, 0);
    }

    #[test]
    fn tree_matches_linear_scan() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let dim = 4;
        let pts: Vec<f64> = (0..1000 * dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tree = KdTree::build(pts.clone(), dim).unwrap();
        for _ in 0..100 {
            let q: Vec<f64> = (0..dim).map(|_| rng.random_range(-1.2..1.2)).collect();
            let (i, d) = tree.nearest(&q).unwrap();
            let (bi, bd) = brute_force_nearest(&pts, dim, &q);
            assert_eq!(i, bi);
            assert_eq!(d, bd);
        }
        for i in (0..1000).step_by(97) {
            let (j, d) = tree.nearest(&pts[i * dim..(i + 1) * dim]).unwrap();
            assert_eq!((j, d), (i, 0.0));
        }
    }

    #[test]
    fn wasserstein_examples() {
        assert_eq!(wasserstein1(&[0.2, 0.4], &[0.4, 0.2]).unwrap(), 0.0);
        assert_eq!(wasserstein1(&[-1.0; 5], &[1.0; 5]).unwrap(), 2.0);
        assert!((wasserstein1(&[0.0, 1.0], &[0.5, 0.5]).unwrap() - 0.5).abs() < 1e-12);
        // Unequal sizes: {0} vs {0, 1} → half the mass moves by 1.
        assert!((wasserstein1(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn wasserstein_symmetry_and_triangle() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            let mut draw = |n| (0..n).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
            let (a, b, c) = (draw(30), draw(30), draw(30));
            let ab = wasserstein1(&a, &b).unwrap();
            assert!((ab - wasserstein1(&b, &a).unwrap()).abs() < 1e-12);
            assert!(ab <= wasserstein1(&a, &c).unwrap() + wasserstein1(&c, &b).unwrap() + 1e-12);
        }
    }

    #[test]
    fn histogram_is_a_density() {
        let xs = [-1.0, -0.99, 0.0, 0.5, 1.0, 3.0];
        let h = histogram(&xs);
        let width = 2.0 / HIST_BINS as f64;
        assert!((h.iter().sum::<f64>() * width - 1.0).abs() < 1e-12);
        assert!(h[HIST_BINS - 1] > 0.0);
    }

    #[test]
    fn kde_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs: Vec<f64> = (0..500).map(|_| rng.random_range(-1.0..1.0f64).powi(3)).collect();
        let triples: Vec<ActionTriple> = xs
            .iter()
            .map(|&x| ActionTriple { target_index: 0, source_index: 0, source: vec![x as f32], corrected: vec![x as f32], target: vec![0.9] })
            .collect();
        let rep = distribution_report(&triples).unwrap();
        let d = &rep.dims[0];
        for series in &d.kde {
            let area: f64 = d.grid.windows(2).zip(series.windows(2)).map(|(x, y)| 0.5 * (y[0] + y[1]) * (x[1] - x[0])).sum();
            assert!((area - 1.0).abs() < 0.02, "{area}");
        }
        assert_eq!(d.w1_source_target, d.w1_corrected_target);
        assert!(rep.to_csv().lines().count() > HIST_BINS + KDE_POINTS);
    }

    fn ds(actions: &[f32], tag: DomainTag) -> TransitionDataset {
        let records = actions
            .iter()
            .enumerate()
            .map(|(i, &a)| Transition { state: vec![i as f32], action: vec![a], reward: 0.0, next_state: vec![i as f32 + 0.5], done: false })
            .collect();
        TransitionDataset::from_records(1, 1, tag, records).unwrap()
    }

    #[test]
    fn pairing_uses_nearest_transition() {
        let src = ds(&[0.1, 0.2, 0.3], DomainTag::Source);
        let corr = ds(&[-0.1, -0.2, -0.3], DomainTag::Corrected);
        let tar = ds(&[0.9, 0.8], DomainTag::Target);
        let t = pair_actions(&src, &corr, &tar).unwrap();
        assert_eq!(t.len(), 2);
        assert_eq!((t[1].source_index, t[1].source[0], t[1].corrected[0], t[1].target[0]), (1, 0.2, -0.2, 0.8));
        let same = pair_actions(&src, &src, &tar).unwrap();
        assert!(same.iter().all(|t| t.source == t.corrected));
        let one = pair_actions(&ds(&[0.5], DomainTag::Source), &ds(&[0.5], DomainTag::Corrected), &tar).unwrap();
        assert!(one.iter().all(|t| t.source_index == 0));
        assert!(matches!(pair_actions(&src, &ds(&[0.0], DomainTag::Corrected), &tar), Err(Error::Usage(_))));
    }

    #[test]
    fn report_needs_two_samples() {
        let t = ActionTriple { target_index: 0, source_index: 0, source: vec![0.0], corrected: vec![0.0], target: vec![0.0] };
        assert!(distribution_report(&[t]).is_err());
    }
}
