//! Point-set subsampling and neighbourhood search.
//!
//! Every routine is brute force and breaks distance ties by the lower index,
//! so results are fully determined by the inputs. Distances are compared as
//! squared Euclidean distances.

use rayon::prelude::*;
use thiserror::Error;

use crate::geom::Point3;
use crate::rng::SplitMix64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SamplingError {
    #[error("input point set is empty")]
    Empty,
    #[error("requested {k} samples from {n} points")]
    TooMany { k: usize, n: usize },
    #[error("sample count must be at least 1")]
    ZeroCount,
    #[error("index {index} out of range for {len} points")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("duplicate index {0}")]
    Duplicate(usize),
    #[error("invalid radius {0}")]
    BadRadius(f64),
}

/// Ordered, duplicate-free indices into a source cloud.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct IndexSet(Vec<usize>);

impl IndexSet {
    pub fn new(indices: Vec<usize>, source_len: usize) -> Result<Self, SamplingError> {
        let mut seen = vec![false; source_len];
        for &i in &indices {
            if i >= source_len {
                return Err(SamplingError::IndexOutOfRange { index: i, len: source_len });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(SamplingError::Duplicate(i));
            }
        }
        Ok(Self(indices))
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<usize> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl std::ops::Deref for IndexSet {
    type Target = [usize];
    fn deref(&self) -> &[usize] {
        &self.0
    }
}

/// Greedy max-min selection starting from `start`.
pub fn farthest_point_sample(points: &[Point3], k: usize, start: usize) -> Result<IndexSet, SamplingError> {
    let n = points.len();
    if n == 0 {
        return Err(SamplingError::Empty);
    }
    if k == 0 {
        return Err(SamplingError::ZeroCount);
    }
    if k > n {
        return Err(SamplingError::TooMany { k, n });
    }
    if start >= n {
        return Err(SamplingError::IndexOutOfRange { index: start, len: n });
    }
    let mut selected = Vec::with_capacity(k);
    let mut min_dist = vec![f64::INFINITY; n];
    let mut taken = vec![false; n];
    let mut current = start;
    for _ in 0..k {
        selected.push(current);
        taken[current] = true;
        let c = points[current];
        let mut best = usize::MAX;
        let mut best_d = f64::NEG_INFINITY;
        for (i, p) in points.iter().enumerate() {
            let d = p.dist_sq(c);
            if d < min_dist[i] {
                min_dist[i] = d;
            }
            if !taken[i] && min_dist[i] > best_d {
                best_d = min_dist[i];
                best = i;
            }
        }
        current = best;
    }
    Ok(IndexSet(selected))
}

/// Result of [`random_sample`]. When more samples than points were requested
/// the tail is drawn with replacement and `with_replacement` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RandomSample {
    pub indices: Vec<usize>,
    pub with_replacement: bool,
}

/// Partial Fisher–Yates shuffle driven by [`SplitMix64`]; for `k > n` a full
/// permutation followed by `k - n` uniform draws.
pub fn random_sample(points: &[Point3], k: usize, rng_seed: u64) -> Result<RandomSample, SamplingError> {
    let mut rng = SplitMix64::new(rng_seed);
    random_sample_with(points.len(), k, &mut rng)
}

pub(crate) fn random_sample_with(n: usize, k: usize, rng: &mut SplitMix64) -> Result<RandomSample, SamplingError> {
    if n == 0 {
        return Err(SamplingError::Empty);
    }
    if k == 0 {
        return Err(SamplingError::ZeroCount);
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let take = k.min(n);
    for i in 0..take {
        let j = i + rng.below(n - i);
        perm.swap(i, j);
    }
    perm.truncate(take);
    let with_replacement = k > n;
    for _ in n..k {
        perm.push(rng.below(n));
    }
    Ok(RandomSample { indices: perm, with_replacement })
}

fn sorted_by_distance(query: Point3, points: &[Point3]) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist_sq(query), i)).collect();
    d.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d
}

fn knn_one(query: Point3, points: &[Point3], k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = points.iter().enumerate().map(|(i, p)| (p.dist_sq(query), i)).collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k, cmp);
        d.truncate(k);
    }
    d.sort_unstable_by(cmp);
    d.into_iter().map(|(_, i)| i).collect()
}

/// The `k` nearest points of each query, ascending by `(distance, index)`.
pub fn knn(queries: &[Point3], points: &[Point3], k: usize) -> Result<Vec<IndexSet>, SamplingError> {
    if k == 0 {
        return Err(SamplingError::ZeroCount);
    }
    if k > points.len() {
        return Err(SamplingError::TooMany { k, n: points.len() });
    }
    let run = |q: &Point3| IndexSet(knn_one(*q, points, k));
    // order of results does not depend on the split
    if queries.len() * points.len() > 1 << 16 {
        Ok(queries.par_iter().map(run).collect())
    } else {
        Ok(queries.iter().map(run).collect())
    }
}

/// Up to `max_count` points within `radius` of each query, ascending by
/// `(distance, index)`. A query with nothing in range gets its single nearest
/// point, so groups are never empty.
pub fn ball_query(
    queries: &[Point3],
    points: &[Point3],
    radius: f64,
    max_count: usize,
) -> Result<Vec<IndexSet>, SamplingError> {
    if points.is_empty() {
        return Err(SamplingError::Empty);
    }
    if !(radius > 0.0) || !radius.is_finite() {
        return Err(SamplingError::BadRadius(radius));
    }
    if max_count == 0 {
        return Err(SamplingError::ZeroCount);
    }
    let r2 = radius * radius;
    let run = |q: &Point3| {
        let mut within: Vec<(f64, usize)> = points
            .iter()
            .enumerate()
            .map(|(i, p)| (p.dist_sq(*q), i))
            .filter(|(d, _)| *d <= r2)
            .collect();
        if within.is_empty() {
            return IndexSet(vec![sorted_by_distance(*q, points)[0].1]);
        }
        within.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        within.truncate(max_count);
        IndexSet(within.into_iter().map(|(_, i)| i).collect())
    };
    Ok(queries.iter().map(run).collect())
}

/// Pads (by repeating the first entry) or truncates a group to exactly `size`.
pub fn pad_group(group: &[usize], size: usize) -> Vec<usize> {
    let mut out: Vec<usize> = group.iter().copied().take(size).collect();
    let first = out[0];
    out.resize(size, first);
    out
}
