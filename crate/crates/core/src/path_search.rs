//! Search over previously visited parameters for a low-variance estimator
//! path.
//!
//! Every (θ, S(x)) pair produced by a sampler run is appended to a
//! [`HistoryIndex`], a KD-tree over θ. Given a particle θ and an anchor
//! θ̂, [`build_path`] selects intermediate points for the telescoping
//! ratio estimator:
//!
//! 1. range-search the minimum bounding box of θ and θ̂ — points outside
//!    it can only increase the summed squared hop lengths;
//! 2. sort the candidates by Euclidean distance to the segment θ—θ̂;
//! 3. rank each candidate by (index when sorted by distance to θ,
//!    ascending) + (index when sorted by distance to θ̂, descending);
//!    this combined rank fixes where along the path a candidate may sit;
//! 4. grow greedily: starting from the direct path, try candidates in
//!    step-2 order, splicing each at its rank position and keeping it only
//!    when the quadratic score D = Σ ΔθᵀV̂Δθ strictly drops.
//!
//! The final score never exceeds the direct path's, and in one dimension
//! the procedure picks up every stored point lying strictly between the
//! endpoints, in monotone order.

use std::collections::HashMap;

use crate::estimators::{AuxDraw, Path};
use crate::types::{Error, Result, SuffStats, Theta};

/// Axis-aligned box with inclusive bounds.
#[derive(Clone, Debug)]
pub struct BoundingBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl BoundingBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::DimensionMismatch { expected: lo.len(), got: hi.len() });
        }
        if lo.iter().zip(&hi).any(|(a, b)| a > b) {
            return Err(Error::InvalidInput("box needs lo <= hi componentwise".into()));
        }
        Ok(BoundingBox { lo, hi })
    }

    /// Minimum bounding box of two points.
    pub fn of(a: &Theta, b: &Theta) -> Result<Self> {
        if a.dim() != b.dim() {
            return Err(Error::DimensionMismatch { expected: a.dim(), got: b.dim() });
        }
        let lo = a.0.iter().zip(&b.0).map(|(x, y)| x.min(*y)).collect();
        let hi = a.0.iter().zip(&b.0).map(|(x, y)| x.max(*y)).collect();
        Ok(BoundingBox { lo, hi })
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(p, (lo, hi))| *p >= *lo && *p <= *hi)
    }
}

/// Empirical covariance of the population statistics, the variance proxy
/// in the path score.
#[derive(Clone, Debug)]
pub struct StatsVariance {
    dim: usize,
    /// Row-major d×d, symmetrised.
    pub matrix: Vec<f64>,
}

impl StatsVariance {
    pub fn identity(dim: usize) -> Self {
        let mut matrix = vec![0.0; dim * dim];
        for i in 0..dim {
            matrix[i * dim + i] = 1.0;
        }
        StatsVariance { dim, matrix }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// dᵀ V d.
    fn quad_form(&self, d: &[f64]) -> f64 {
        let n = self.dim;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += d[i] * self.matrix[i * n + j] * d[j];
            }
        }
        acc
    }
}

/// Unbiased sample covariance of the statistics vectors (divisor n−1),
/// symmetrised. Needs at least two vectors.
pub fn estimate_v(population_stats: &[SuffStats]) -> Result<StatsVariance> {
    let n = population_stats.len();
    if n < 2 {
        return Err(Error::InvalidInput("covariance needs at least 2 vectors".into()));
    }
    let d = population_stats[0].dim();
    if population_stats.iter().any(|s| s.dim() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: 0 });
    }
    let mut mean = vec![0.0; d];
    for s in population_stats {
        for (m, v) in mean.iter_mut().zip(&s.0) {
            *m += v;
        }
    }
    for m in mean.iter_mut() {
        *m /= n as f64;
    }
    let mut matrix = vec![0.0; d * d];
    for s in population_stats {
        for i in 0..d {
            for j in 0..d {
                matrix[i * d + j] += (s.0[i] - mean[i]) * (s.0[j] - mean[j]);
            }
        }
    }
    for v in matrix.iter_mut() {
        *v /= (n - 1) as f64;
    }
    // symmetrise against accumulation-order asymmetry
    for i in 0..d {
        for j in (i + 1)..d {
            let avg = 0.5 * (matrix[i * d + j] + matrix[j * d + i]);
            matrix[i * d + j] = avg;
            matrix[j * d + i] = avg;
        }
    }
    Ok(StatsVariance { dim: d, matrix })
}

/// Quadratic path score Σᵢ (θ_{i+1}−θ_i)ᵀ V̂ (θ_{i+1}−θ_i).
pub fn score_path(path: &Path, v: &StatsVariance) -> Result<f64> {
    let thetas: Vec<&Theta> = path.thetas().collect();
    score_theta_seq(&thetas, v)
}

fn score_theta_seq(thetas: &[&Theta], v: &StatsVariance) -> Result<f64> {
    if thetas.len() < 2 {
        return Err(Error::InvalidInput("score needs at least two points".into()));
    }
    if thetas.iter().any(|t| t.dim() != v.dim()) {
        return Err(Error::DimensionMismatch { expected: v.dim(), got: thetas[0].dim() });
    }
    let mut total = 0.0;
    for w in thetas.windows(2) {
        let d: Vec<f64> = w[1].0.iter().zip(&w[0].0).map(|(a, b)| a - b).collect();
        total += v.quad_form(&d);
    }
    Ok(total)
}

/// Euclidean distance from `p` to the closed segment [a, b].
fn segment_distance(p: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let mut ab2 = 0.0;
    let mut ap_ab = 0.0;
    for k in 0..p.len() {
        let ab = b[k] - a[k];
        ab2 += ab * ab;
        ap_ab += (p[k] - a[k]) * ab;
    }
    let t = if ab2 > 0.0 { (ap_ab / ab2).clamp(0.0, 1.0) } else { 0.0 };
    p.iter()
        .enumerate()
        .map(|(k, pk)| {
            let proj = a[k] + t * (b[k] - a[k]);
            (pk - proj).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

// ---------------------------------------------------------------------------
// KD-tree over the visit history
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct HistoryPoint {
    pub theta: Theta,
    pub stats: SuffStats,
    pub iteration: usize,
}

struct Node {
    point: usize, // index into the store
    axis: usize,
    left: Option<Box<Node>>,
    right: Option<Box<Node>>,
}

/// Append-only store of visited (θ, S(x)) pairs with a KD-tree over θ.
///
/// Points exactly equal in coordinates to an existing entry are dropped at
/// insertion: duplicates (e.g. resampled copies) would only add zero-length
/// hops. Inserts go to a leaf without restructuring; once the number of
/// inserts since the last rebuild exceeds the size at that rebuild, the
/// tree is rebuilt balanced by median splits, keeping queries logarithmic
/// at amortised logarithmic insert cost.
pub struct HistoryIndex {
    dim: usize,
    points: Vec<HistoryPoint>,
    root: Option<Box<Node>>,
    inserted_since_rebuild: usize,
    size_at_rebuild: usize,
    seen: HashMap<Vec<u64>, ()>,
}

impl HistoryIndex {
    pub fn new(dim: usize) -> Self {
        HistoryIndex {
            dim,
            points: Vec::new(),
            root: None,
            inserted_since_rebuild: 0,
            size_at_rebuild: 0,
            seen: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, idx: usize) -> &HistoryPoint {
        &self.points[idx]
    }

    /// Insert one visited point; duplicates by exact coordinates are
    /// ignored. Returns whether the point was stored.
    pub fn insert(&mut self, theta: Theta, stats: SuffStats, iteration: usize) -> Result<bool> {
        if theta.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: theta.dim() });
        }
        let key: Vec<u64> = theta.0.iter().map(|v| v.to_bits()).collect();
        if self.seen.contains_key(&key) {
            return Ok(false);
        }
        self.seen.insert(key, ());
        let idx = self.points.len();
        self.points.push(HistoryPoint { theta, stats, iteration });
        Self::insert_node(&mut self.root, &self.points, idx, 0, self.dim);
        self.inserted_since_rebuild += 1;
        if self.inserted_since_rebuild > self.size_at_rebuild {
            self.rebalance();
        }
        Ok(true)
    }

    fn insert_node(
        slot: &mut Option<Box<Node>>,
        points: &[HistoryPoint],
        idx: usize,
        depth: usize,
        dim: usize,
    ) {
        match slot {
            None => {
                *slot =
                    Some(Box::new(Node { point: idx, axis: depth % dim, left: None, right: None }));
            }
            Some(node) => {
                let axis = node.axis;
                // strictly-less goes left; ties right, consistent with the
                // <= pivot / >= pivot split produced by rebuilds
                if points[idx].theta.0[axis] < points[node.point].theta.0[axis] {
                    Self::insert_node(&mut node.left, points, idx, depth + 1, dim);
                } else {
                    Self::insert_node(&mut node.right, points, idx, depth + 1, dim);
                }
            }
        }
    }

    /// Rebuild the tree balanced. Queries are unaffected except for cost.
    pub fn rebalance(&mut self) {
        let mut indices: Vec<usize> = (0..self.points.len()).collect();
        self.root = Self::build_balanced(&mut indices, &self.points, 0, self.dim);
        self.inserted_since_rebuild = 0;
        self.size_at_rebuild = self.points.len();
    }

    fn build_balanced(
        indices: &mut [usize],
        points: &[HistoryPoint],
        depth: usize,
        dim: usize,
    ) -> Option<Box<Node>> {
        if indices.is_empty() {
            return None;
        }
        let axis = depth % dim;
        let mid = indices.len() / 2;
        indices.select_nth_unstable_by(mid, |&a, &b| {
            points[a].theta.0[axis]
                .partial_cmp(&points[b].theta.0[axis])
                .expect("theta coordinates are finite")
        });
        let point = indices[mid];
        let (left, rest) = indices.split_at_mut(mid);
        let right = &mut rest[1..];
        Some(Box::new(Node {
            point,
            axis,
            left: Self::build_balanced(left, points, depth + 1, dim),
            right: Self::build_balanced(right, points, depth + 1, dim),
        }))
    }

    /// Indices of all stored points inside the box (inclusive bounds),
    /// ascending by insertion order.
    pub fn range_search(&self, bbox: &BoundingBox) -> Vec<usize> {
        let mut out = Vec::new();
        if let Some(root) = &self.root {
            self.search_node(root, bbox, &mut out);
        }
        out.sort_unstable();
        out
    }

    fn search_node(&self, node: &Node, bbox: &BoundingBox, out: &mut Vec<usize>) {
        let coords = &self.points[node.point].theta.0;
        if bbox.contains(coords) {
            out.push(node.point);
        }
        let split = coords[node.axis];
        // left holds coords <= split, right holds coords >= split
        if let Some(left) = &node.left {
            if bbox.lo[node.axis] <= split {
                self.search_node(left, bbox, out);
            }
        }
        if let Some(right) = &node.right {
            if bbox.hi[node.axis] >= split {
                self.search_node(right, bbox, out);
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(node: &Option<Box<Node>>) -> usize {
            node.as_ref().map_or(0, |n| 1 + walk(&n.left).max(walk(&n.right)))
        }
        walk(&self.root)
    }
}

// ---------------------------------------------------------------------------
// Greedy path construction
// ---------------------------------------------------------------------------

/// Pick a path from `start` (a particle with its fresh draw statistics) to
/// the anchor `end`, reusing stored points from iterations
/// `>= min_iteration`. Falls back to the direct path when the box holds no
/// usable candidate. The returned path's score never exceeds the direct
/// path's.
pub fn build_path(
    index: &HistoryIndex,
    start: &Theta,
    start_stats: &SuffStats,
    end: &Theta,
    v: &StatsVariance,
    min_iteration: usize,
) -> Result<Path> {
    let direct = Path::direct(AuxDraw::single(start.clone(), start_stats.clone())?, end.clone())?;
    if index.is_empty() || start.0 == end.0 {
        return Ok(direct);
    }
    let bbox = BoundingBox::of(start, end)?;
    let candidates: Vec<usize> = index
        .range_search(&bbox)
        .into_iter()
        .filter(|&i| {
            let p = index.point(i);
            p.iteration >= min_iteration && p.theta.0 != start.0 && p.theta.0 != end.0
        })
        .collect();
    if candidates.is_empty() {
        return Ok(direct);
    }

    // step 2: try-order by distance to the segment (stable in store order)
    let mut try_order = candidates.clone();
    try_order.sort_by(|&a, &b| {
        let da = segment_distance(&index.point(a).theta.0, &start.0, &end.0);
        let db = segment_distance(&index.point(b).theta.0, &start.0, &end.0);
        da.partial_cmp(&db).expect("distances are finite")
    });

    // step 3: combined rank = index in (ascending distance to start)
    // + index in (descending distance to end)
    let mut by_start = candidates.clone();
    by_start.sort_by(|&a, &b| {
        let da = euclid(&index.point(a).theta.0, &start.0);
        let db = euclid(&index.point(b).theta.0, &start.0);
        da.partial_cmp(&db).expect("distances are finite")
    });
    let mut by_end_desc = candidates.clone();
    by_end_desc.sort_by(|&a, &b| {
        let da = euclid(&index.point(a).theta.0, &end.0);
        let db = euclid(&index.point(b).theta.0, &end.0);
        db.partial_cmp(&da).expect("distances are finite")
    });
    let mut combined: HashMap<usize, usize> = HashMap::with_capacity(candidates.len());
    for (rank, &i) in by_start.iter().enumerate() {
        combined.insert(i, rank);
    }
    for (rank, &i) in by_end_desc.iter().enumerate() {
        *combined.get_mut(&i).unwrap() += rank;
    }
    // position rank: ties by store order, matching the stable sorts above
    let mut order_rank: HashMap<usize, usize> = HashMap::with_capacity(candidates.len());
    let mut position_list = candidates.clone();
    position_list.sort_by_key(|&i| (combined[&i], i));
    for (rank, &i) in position_list.iter().enumerate() {
        order_rank.insert(i, rank);
    }

    // step 4: greedy growth from the direct path
    let quad = |a: &[f64], b: &[f64]| -> f64 {
        let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
        v.quad_form(&d)
    };
    let mut accepted: Vec<usize> = Vec::new(); // store indices, kept sorted by order_rank
    let mut score = quad(&start.0, &end.0);
    for &cand in &try_order {
        let rank = order_rank[&cand];
        let pos = accepted.partition_point(|&i| order_rank[&i] < rank);
        let prev = if pos == 0 { &start.0 } else { &index.point(accepted[pos - 1]).theta.0 };
        let next =
            if pos == accepted.len() { &end.0 } else { &index.point(accepted[pos]).theta.0 };
        let cand_coords = &index.point(cand).theta.0;
        let proposed = score - quad(prev, next) + quad(prev, cand_coords) + quad(cand_coords, next);
        if proposed < score {
            accepted.insert(pos, cand);
            score = proposed;
        }
    }

    if accepted.is_empty() {
        return Ok(direct);
    }
    let mut hops = Vec::with_capacity(accepted.len() + 1);
    hops.push(AuxDraw::single(start.clone(), start_stats.clone())?);
    for &i in &accepted {
        let p = index.point(i);
        hops.push(AuxDraw::single(p.theta.clone(), p.stats.clone())?);
    }
    Path::new(hops, end.clone())
}
