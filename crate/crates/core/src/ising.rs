//! Square-lattice Ising models with free boundaries.
//!
//! Spins live on a width × height grid and take values in {−1, +1}. The
//! first-order model couples horizontally and vertically adjacent sites
//! (pair set N₁); the second-order model additionally couples diagonal
//! neighbours (pair set N₂). The density is
//!
//! ```text
//! f(x | θ) ∝ exp(θ₁ S₁(x) + θ₂ S₂(x)),   Sᵣ(x) = Σ_{(i,j) ∈ Nᵣ} xᵢ xⱼ,
//! ```
//!
//! with θ₂/S₂ present only for the second-order model. Simulation uses a
//! single-site Gibbs sampler in fixed raster order. Lattices of up to
//! [`MAX_ENUM_NODES`] nodes can be enumerated exhaustively, which gives
//! exact partition functions, exact samplers, and quadrature posteriors
//! used as ground truth elsewhere.

use std::collections::BTreeMap;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::model::{GibbsTransition, Model, SweepTransition};
use crate::prior::Prior;
use crate::types::{dot_unchecked, Error, Result, SuffStats, Theta};

/// Largest node count for exhaustive enumeration (2^n states).
pub const MAX_ENUM_NODES: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NeighbourOrder {
    First,
    Second,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IsingSpec {
    pub width: usize,
    pub height: usize,
    pub order: NeighbourOrder,
}

impl IsingSpec {
    pub fn new(width: usize, height: usize, order: NeighbourOrder) -> Result<Self> {
        if width < 2 || height < 2 {
            return Err(Error::InvalidInput(format!(
                "lattice must be at least 2x2, got {width}x{height}"
            )));
        }
        Ok(IsingSpec { width, height, order })
    }

    pub fn nodes(&self) -> usize {
        self.width * self.height
    }

    pub fn dim(&self) -> usize {
        match self.order {
            NeighbourOrder::First => 1,
            NeighbourOrder::Second => 2,
        }
    }
}

/// Binary spin configuration on the grid, row-major, entries in {−1, +1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LatticeState {
    width: usize,
    height: usize,
    spins: Vec<i8>,
}

impl LatticeState {
    pub fn new(width: usize, height: usize, spins: Vec<i8>) -> Result<Self> {
        if spins.len() != width * height {
            return Err(Error::MalformedData(format!(
                "expected {} spins for a {width}x{height} grid, got {}",
                width * height,
                spins.len()
            )));
        }
        if spins.iter().any(|s| *s != 1 && *s != -1) {
            return Err(Error::MalformedData("spins must be +1 or -1".into()));
        }
        Ok(LatticeState { width, height, spins })
    }

    pub fn constant(width: usize, height: usize, spin: i8) -> Result<Self> {
        Self::new(width, height, vec![spin; width * height])
    }

    pub fn random(width: usize, height: usize, rng: &mut dyn RngCore) -> Self {
        let spins = (0..width * height)
            .map(|_| if rng.gen::<bool>() { 1 } else { -1 })
            .collect();
        LatticeState { width, height, spins }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn spins(&self) -> &[i8] {
        &self.spins
    }

    pub fn flipped(&self) -> LatticeState {
        LatticeState {
            width: self.width,
            height: self.height,
            spins: self.spins.iter().map(|s| -s).collect(),
        }
    }

    fn matches(&self, spec: &IsingSpec) -> Result<()> {
        if self.width != spec.width || self.height != spec.height {
            return Err(Error::InvalidInput(format!(
                "state is {}x{} but the model is {}x{}",
                self.width, self.height, spec.width, spec.height
            )));
        }
        Ok(())
    }
}

/// An Ising model with precomputed neighbour structure.
pub struct IsingModel {
    spec: IsingSpec,
    pairs1: Vec<(u32, u32)>,
    pairs2: Vec<(u32, u32)>,
    // CSR adjacency per site, first- and second-order neighbours
    adj1_off: Vec<u32>,
    adj1: Vec<u32>,
    adj2_off: Vec<u32>,
    adj2: Vec<u32>,
}

impl IsingModel {
    pub fn new(spec: IsingSpec) -> Self {
        let (w, h) = (spec.width, spec.height);
        let idx = |r: usize, c: usize| (r * w + c) as u32;

        let mut pairs1 = Vec::with_capacity(w * (h - 1) + h * (w - 1));
        let mut pairs2 = Vec::new();
        for r in 0..h {
            for c in 0..w {
                if c + 1 < w {
                    pairs1.push((idx(r, c), idx(r, c + 1)));
                }
                if r + 1 < h {
                    pairs1.push((idx(r, c), idx(r + 1, c)));
                }
                if spec.order == NeighbourOrder::Second && r + 1 < h {
                    if c + 1 < w {
                        pairs2.push((idx(r, c), idx(r + 1, c + 1)));
                    }
                    if c >= 1 {
                        pairs2.push((idx(r, c), idx(r + 1, c - 1)));
                    }
                }
            }
        }

        let build_adj = |pairs: &[(u32, u32)]| {
            let n = w * h;
            let mut lists = vec![Vec::new(); n];
            for &(a, b) in pairs {
                lists[a as usize].push(b);
                lists[b as usize].push(a);
            }
            let mut off = Vec::with_capacity(n + 1);
            let mut flat = Vec::new();
            off.push(0u32);
            for l in lists {
                flat.extend_from_slice(&l);
                off.push(flat.len() as u32);
            }
            (off, flat)
        };

        let (adj1_off, adj1) = build_adj(&pairs1);
        let (adj2_off, adj2) = build_adj(&pairs2);

        IsingModel { spec, pairs1, pairs2, adj1_off, adj1, adj2_off, adj2 }
    }

    pub fn spec(&self) -> &IsingSpec {
        &self.spec
    }

    pub fn pair_count(&self) -> (usize, usize) {
        (self.pairs1.len(), self.pairs2.len())
    }

    fn check_theta(&self, theta: &Theta) -> Result<()> {
        if theta.dim() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: theta.dim() });
        }
        if !theta.is_finite() {
            return Err(Error::InvalidInput("theta must be finite".into()));
        }
        Ok(())
    }

    fn neighbour_sum(&self, spins: &[i8], off: &[u32], adj: &[u32], k: usize) -> i32 {
        let (a, b) = (off[k] as usize, off[k + 1] as usize);
        adj[a..b].iter().map(|&j| spins[j as usize] as i32).sum()
    }

    /// Per-site conditional P(spin = +1 | neighbours), tabulated over the
    /// possible neighbour sums so a sweep costs no exp calls per site.
    /// Index: (h₁+4) for first order, (h₁+4)·9 + (h₂+4) for second.
    fn conditional_table(&self, theta: &Theta) -> CondTable {
        let mut p = Vec::new();
        let mut log_p = Vec::new();
        let mut log_m = Vec::new();
        let mut push = |z: f64| {
            // z = θᵀ(neighbour sums); conditional odds for +1 vs −1 are exp(2z)
            p.push(1.0 / (1.0 + (-2.0 * z).exp()));
            log_p.push(-(-2.0 * z).exp().ln_1p());
            log_m.push(-(2.0 * z).exp().ln_1p());
        };
        match self.spec.order {
            NeighbourOrder::First => {
                for h1 in -4..=4 {
                    push(theta.0[0] * h1 as f64);
                }
            }
            NeighbourOrder::Second => {
                for h1 in -4..=4 {
                    for h2 in -4..=4 {
                        push(theta.0[0] * h1 as f64 + theta.0[1] * h2 as f64);
                    }
                }
            }
        }
        CondTable { p, log_p, log_m }
    }

    fn table_index(&self, spins: &[i8], k: usize) -> usize {
        let h1 = self.neighbour_sum(spins, &self.adj1_off, &self.adj1, k);
        match self.spec.order {
            NeighbourOrder::First => (h1 + 4) as usize,
            NeighbourOrder::Second => {
                let h2 = self.neighbour_sum(spins, &self.adj2_off, &self.adj2, k);
                ((h1 + 4) * 9 + (h2 + 4)) as usize
            }
        }
    }

    /// Sufficient statistics (S₁) or (S₁, S₂), each unordered pair counted
    /// once.
    pub fn suff_stats_checked(&self, state: &LatticeState) -> Result<SuffStats> {
        state.matches(&self.spec)?;
        let s = &state.spins;
        let sum = |pairs: &[(u32, u32)]| -> f64 {
            pairs
                .iter()
                .map(|&(a, b)| (s[a as usize] as i32 * s[b as usize] as i32) as i64)
                .sum::<i64>() as f64
        };
        let mut v = vec![sum(&self.pairs1)];
        if self.spec.order == NeighbourOrder::Second {
            v.push(sum(&self.pairs2));
        }
        Ok(SuffStats(v))
    }

    /// `sweeps` Gibbs sweeps from an explicit initial state.
    pub fn simulate_from(
        &self,
        theta: &Theta,
        sweeps: usize,
        init: &LatticeState,
        rng: &mut dyn RngCore,
    ) -> Result<(LatticeState, SuffStats)> {
        if sweeps == 0 {
            return Err(Error::InvalidInput("sweeps must be >= 1".into()));
        }
        init.matches(&self.spec)?;
        let mut state = init.clone();
        for _ in 0..sweeps {
            self.gibbs_sweep(theta, &mut state, rng)?;
        }
        let stats = self.suff_stats(&state);
        Ok((state, stats))
    }
}

struct CondTable {
    p: Vec<f64>,
    log_p: Vec<f64>,
    log_m: Vec<f64>,
}

impl Model for IsingModel {
    type State = LatticeState;

    fn dim(&self) -> usize {
        self.spec.dim()
    }

    fn suff_stats(&self, state: &Self::State) -> SuffStats {
        self.suff_stats_checked(state).expect("state/spec mismatch")
    }

    fn random_state(&self, rng: &mut dyn RngCore) -> LatticeState {
        LatticeState::random(self.spec.width, self.spec.height, rng)
    }

    fn gibbs_sweep(
        &self,
        theta: &Theta,
        state: &mut LatticeState,
        rng: &mut dyn RngCore,
    ) -> Result<()> {
        self.check_theta(theta)?;
        state.matches(&self.spec)?;
        let table = self.conditional_table(theta);
        for k in 0..state.spins.len() {
            let p_plus = table.p[self.table_index(&state.spins, k)];
            state.spins[k] = if rng.gen::<f64>() < p_plus { 1 } else { -1 };
        }
        Ok(())
    }
}

impl GibbsTransition for IsingModel {
    /// As [`Model::gibbs_sweep`], additionally accumulating the log
    /// transition probability of the realised move and of its time
    /// reversal (the sweep in reversed site order). Finite for moderate
    /// |θᵀh|; the per-site conditionals are evaluated with log1p.
    fn gibbs_sweep_logged(
        &self,
        theta: &Theta,
        state: &mut LatticeState,
        rng: &mut dyn RngCore,
    ) -> Result<SweepTransition> {
        self.check_theta(theta)?;
        state.matches(&self.spec)?;
        let table = self.conditional_table(theta);
        let mut log_forward = 0.0;
        let mut log_reverse = 0.0;
        for k in 0..state.spins.len() {
            let idx = self.table_index(&state.spins, k);
            let old = state.spins[k];
            let new = if rng.gen::<f64>() < table.p[idx] { 1 } else { -1 };
            log_forward += if new == 1 { table.log_p[idx] } else { table.log_m[idx] };
            log_reverse += if old == 1 { table.log_p[idx] } else { table.log_m[idx] };
            state.spins[k] = new;
        }
        Ok(SweepTransition { log_forward, log_reverse })
    }
}

// ---------------------------------------------------------------------------
// Exhaustive enumeration
// ---------------------------------------------------------------------------

fn check_enumerable(model: &IsingModel) -> Result<usize> {
    let n = model.spec.nodes();
    if n > MAX_ENUM_NODES {
        return Err(Error::TooLargeForEnumeration { nodes: n, max: MAX_ENUM_NODES });
    }
    Ok(n)
}

fn state_from_mask(spec: &IsingSpec, mask: u64) -> LatticeState {
    let spins = (0..spec.nodes())
        .map(|k| if mask >> k & 1 == 1 { 1i8 } else { -1 })
        .collect();
    LatticeState { width: spec.width, height: spec.height, spins }
}

/// Counts of states per distinct value of S(x), from enumerating all 2^n
/// configurations. Ising statistics are integers, so the exact counts fit
/// in a map keyed by integer vectors.
pub struct StatsHistogram {
    dim: usize,
    entries: Vec<(Vec<i32>, u64)>,
}

impl StatsHistogram {
    pub fn build(model: &IsingModel) -> Result<Self> {
        let n = check_enumerable(model)?;
        let mut map: BTreeMap<Vec<i32>, u64> = BTreeMap::new();
        for mask in 0..1u64 << n {
            let state = state_from_mask(&model.spec, mask);
            let stats = model.suff_stats(&state);
            let key: Vec<i32> = stats.0.iter().map(|v| *v as i32).collect();
            *map.entry(key).or_insert(0) += 1;
        }
        Ok(StatsHistogram { dim: model.dim(), entries: map.into_iter().collect() })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn entries(&self) -> &[(Vec<i32>, u64)] {
        &self.entries
    }

    /// log Z(θ) = log Σ_x exp(θᵀS(x)), max-shifted over the distinct
    /// statistic values.
    pub fn log_z(&self, theta: &Theta) -> Result<f64> {
        if theta.dim() != self.dim {
            return Err(Error::DimensionMismatch { expected: self.dim, got: theta.dim() });
        }
        let terms: Vec<f64> = self
            .entries
            .iter()
            .map(|(s, count)| {
                let dot: f64 = theta.0.iter().zip(s).map(|(t, v)| t * *v as f64).sum();
                dot + (*count as f64).ln()
            })
            .collect();
        Ok(crate::math::logsumexp(&terms))
    }

    /// Exact distribution of S(x) under f(·|θ).
    pub fn distribution(&self, theta: &Theta) -> Result<Vec<(SuffStats, f64)>> {
        let log_z = self.log_z(theta)?;
        Ok(self
            .entries
            .iter()
            .map(|(s, count)| {
                let dot: f64 = theta.0.iter().zip(s).map(|(t, v)| t * *v as f64).sum();
                let stats = SuffStats(s.iter().map(|v| *v as f64).collect());
                (stats, (dot + (*count as f64).ln() - log_z).exp())
            })
            .collect())
    }

    /// Exact mean of S(x) under f(·|θ).
    pub fn mean_stats(&self, theta: &Theta) -> Result<Vec<f64>> {
        let dist = self.distribution(theta)?;
        let mut mean = vec![0.0; self.dim];
        for (s, p) in &dist {
            for (m, v) in mean.iter_mut().zip(&s.0) {
                *m += p * v;
            }
        }
        Ok(mean)
    }

    /// Exact covariance of S(x) under f(·|θ), row-major d×d.
    pub fn var_stats(&self, theta: &Theta) -> Result<Vec<f64>> {
        let dist = self.distribution(theta)?;
        let mean = self.mean_stats(theta)?;
        let d = self.dim;
        let mut cov = vec![0.0; d * d];
        for (s, p) in &dist {
            for i in 0..d {
                for j in 0..d {
                    cov[i * d + j] += p * (s.0[i] - mean[i]) * (s.0[j] - mean[j]);
                }
            }
        }
        Ok(cov)
    }
}

/// log Z(θ) by full enumeration. Refuses lattices above
/// [`MAX_ENUM_NODES`] nodes.
pub fn brute_force_log_z(model: &IsingModel, theta: &Theta) -> Result<f64> {
    StatsHistogram::build(model)?.log_z(theta)
}

/// Exact sampler for f(·|θ) on an enumerable lattice: the full state
/// distribution is tabulated once, then draws are inverse-CDF lookups.
pub struct ExactSampler<'a> {
    model: &'a IsingModel,
    cum: Vec<f64>,
}

impl<'a> ExactSampler<'a> {
    pub fn new(model: &'a IsingModel, theta: &Theta) -> Result<Self> {
        let n = check_enumerable(model)?;
        if theta.dim() != model.dim() {
            return Err(Error::DimensionMismatch { expected: model.dim(), got: theta.dim() });
        }
        let count = 1usize << n;
        let mut logp = Vec::with_capacity(count);
        for mask in 0..count as u64 {
            let state = state_from_mask(&model.spec, mask);
            let stats = model.suff_stats(&state);
            logp.push(dot_unchecked(&theta.0, &stats.0));
        }
        let log_z = crate::math::logsumexp(&logp);
        let mut cum = Vec::with_capacity(count);
        let mut acc = 0.0;
        for lp in &logp {
            acc += (lp - log_z).exp();
            cum.push(acc);
        }
        cum[count - 1] = 1.0;
        Ok(ExactSampler { model, cum })
    }

    pub fn sample(&self, rng: &mut dyn RngCore) -> LatticeState {
        let u: f64 = rng.gen();
        let mask = self.cum.partition_point(|c| *c <= u);
        state_from_mask(&self.model.spec, mask as u64)
    }

    pub fn sample_stats(&self, rng: &mut dyn RngCore) -> SuffStats {
        self.model.suff_stats(&self.sample(rng))
    }
}

/// Quadrature posterior over a fixed grid of θ values, using the exact
/// partition function at every grid point.
pub struct PosteriorTable {
    pub thetas: Vec<Theta>,
    pub weights: Vec<f64>,
    pub mean: Theta,
    /// Row-major d×d posterior covariance over the grid.
    pub cov: Vec<f64>,
    /// log ∫ p(θ) f(y|θ) dθ by the midpoint rule (needs `cell_volume`).
    pub log_evidence: f64,
}

pub fn brute_force_posterior(
    model: &IsingModel,
    prior: &Prior,
    y_stats: &SuffStats,
    grid: &[Theta],
    cell_volume: f64,
) -> Result<PosteriorTable> {
    if grid.is_empty() {
        return Err(Error::InvalidInput("posterior grid is empty".into()));
    }
    let hist = StatsHistogram::build(model)?;
    let mut raw = Vec::with_capacity(grid.len());
    for theta in grid {
        let log_lik = theta.dot(y_stats)? - hist.log_z(theta)?;
        raw.push(prior.log_density(theta) + log_lik);
    }
    let lse = crate::math::logsumexp(&raw);
    if !lse.is_finite() {
        return Err(Error::InvalidInput(
            "posterior has zero mass on the supplied grid".into(),
        ));
    }
    let weights: Vec<f64> = raw.iter().map(|r| (r - lse).exp()).collect();
    let d = model.dim();
    let mut mean = vec![0.0; d];
    for (w, theta) in weights.iter().zip(grid) {
        for (m, t) in mean.iter_mut().zip(&theta.0) {
            *m += w * t;
        }
    }
    let mut cov = vec![0.0; d * d];
    for (w, theta) in weights.iter().zip(grid) {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += w * (theta.0[i] - mean[i]) * (theta.0[j] - mean[j]);
            }
        }
    }
    Ok(PosteriorTable {
        thetas: grid.to_vec(),
        weights,
        mean: Theta(mean),
        cov,
        log_evidence: lse + cell_volume.ln(),
    })
}

/// Midpoint-rule grid over the box [lo, hi]: `per_dim` points per
/// dimension, returned with the cell volume.
pub fn midpoint_grid(lo: &[f64], hi: &[f64], per_dim: usize) -> (Vec<Theta>, f64) {
    assert_eq!(lo.len(), hi.len());
    assert!(per_dim >= 1);
    let d = lo.len();
    let steps: Vec<f64> = lo.iter().zip(hi).map(|(a, b)| (b - a) / per_dim as f64).collect();
    let mut grid = Vec::with_capacity(per_dim.pow(d as u32));
    let mut idx = vec![0usize; d];
    loop {
        grid.push(Theta(
            (0..d).map(|k| lo[k] + (idx[k] as f64 + 0.5) * steps[k]).collect(),
        ));
        let mut k = 0;
        loop {
            idx[k] += 1;
            if idx[k] < per_dim {
                break;
            }
            idx[k] = 0;
            k += 1;
            if k == d {
                return (grid, steps.iter().product());
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Lattice file formats
// ---------------------------------------------------------------------------

pub mod io {
    //! Plain-text grids (rows of space-separated +1/−1 tokens) and the
    //! JSON object form {width, height, spins}.

    use std::path::Path;

    use serde::{Deserialize, Serialize};

    use super::LatticeState;
    use crate::types::{Error, Result};

    #[derive(Serialize, Deserialize)]
    pub struct LatticeJson {
        pub width: usize,
        pub height: usize,
        pub spins: Vec<Vec<i8>>,
    }

    impl From<&LatticeState> for LatticeJson {
        fn from(state: &LatticeState) -> Self {
            let spins = state
                .spins()
                .chunks(state.width())
                .map(|row| row.to_vec())
                .collect();
            LatticeJson { width: state.width(), height: state.height(), spins }
        }
    }

    impl TryFrom<LatticeJson> for LatticeState {
        type Error = Error;

        fn try_from(raw: LatticeJson) -> Result<LatticeState> {
            if raw.spins.len() != raw.height || raw.spins.iter().any(|r| r.len() != raw.width) {
                return Err(Error::MalformedData(format!(
                    "spins must be {} rows of {} entries",
                    raw.height, raw.width
                )));
            }
            LatticeState::new(raw.width, raw.height, raw.spins.concat())
        }
    }

    pub fn parse_grid_text(text: &str) -> Result<LatticeState> {
        let mut rows: Vec<Vec<i8>> = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let mut row = Vec::new();
            for tok in line.split_whitespace() {
                let spin = match tok {
                    "1" | "+1" => 1,
                    "-1" => -1,
                    other => {
                        return Err(Error::MalformedData(format!(
                            "line {}: unexpected token '{other}'",
                            lineno + 1
                        )))
                    }
                };
                row.push(spin);
            }
            rows.push(row);
        }
        if rows.is_empty() {
            return Err(Error::MalformedData("empty grid file".into()));
        }
        let width = rows[0].len();
        if rows.iter().any(|r| r.len() != width) {
            return Err(Error::MalformedData("ragged rows in grid file".into()));
        }
        let height = rows.len();
        LatticeState::new(width, height, rows.concat())
    }

    pub fn to_grid_text(state: &LatticeState) -> String {
        state
            .spins()
            .chunks(state.width())
            .map(|row| {
                row.iter().map(|s| if *s == 1 { "+1" } else { "-1" }).collect::<Vec<_>>().join(" ")
            })
            .collect::<Vec<_>>()
            .join("\n")
            + "\n"
    }

    /// Load a lattice, dispatching on the `.json` extension.
    pub fn load_lattice(path: &Path) -> Result<LatticeState> {
        let text = std::fs::read_to_string(path)?;
        if path.extension().is_some_and(|e| e == "json") {
            let raw: LatticeJson = serde_json::from_str(&text)?;
            raw.try_into()
        } else {
            parse_grid_text(&text)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::derive_rng;

    fn model(w: usize, h: usize, order: NeighbourOrder) -> IsingModel {
        IsingModel::new(IsingSpec::new(w, h, order).unwrap())
    }

    fn checkerboard(w: usize, h: usize) -> LatticeState {
        let spins = (0..w * h)
            .map(|k| if (k / w + k % w) % 2 == 0 { 1i8 } else { -1 })
            .collect();
        LatticeState::new(w, h, spins).unwrap()
    }

    #[test]
    fn neighbour_pair_counts_match_grid_formulas() {
        for (w, h) in [(2, 2), (3, 3), (4, 5), (10, 10)] {
            let m = model(w, h, NeighbourOrder::Second);
            let (n1, n2) = m.pair_count();
            assert_eq!(n1, w * (h - 1) + h * (w - 1));
            assert_eq!(n2, 2 * (w - 1) * (h - 1));
        }
    }

    #[test]
    fn suff_stats_on_hand_worked_grids() {
        let ones = LatticeState::constant(2, 2, 1).unwrap();
        let first = model(2, 2, NeighbourOrder::First);
        assert_eq!(first.suff_stats(&ones).0, vec![4.0]);

        let second = model(2, 2, NeighbourOrder::Second);
        assert_eq!(second.suff_stats(&ones).0, vec![4.0, 2.0]);

        assert_eq!(first.suff_stats(&checkerboard(2, 2)).0, vec![-4.0]);
    }

    #[test]
    fn suff_stats_rejects_mismatched_dimensions() {
        let m = model(3, 3, NeighbourOrder::First);
        let wrong = LatticeState::constant(2, 2, 1).unwrap();
        assert!(m.suff_stats_checked(&wrong).is_err());
    }

    #[test]
    fn log_gamma_is_the_dot_product() {
        let m = model(3, 3, NeighbourOrder::First);
        assert_eq!(m.log_gamma(&Theta(vec![0.0]), &SuffStats(vec![7.0])).unwrap(), 0.0);
        let v = m.log_gamma(&Theta(vec![0.3]), &SuffStats(vec![4.0])).unwrap();
        assert!((v - 1.2).abs() < 1e-15);
        assert!(m.log_gamma(&Theta(vec![0.3, 0.1]), &SuffStats(vec![4.0])).is_err());
    }

    #[test]
    fn log_gamma_difference_identity() {
        let m = model(4, 3, NeighbourOrder::Second);
        let mut rng = derive_rng(5, &[1]);
        for _ in 0..50 {
            let s = m.suff_stats(&m.random_state(&mut rng));
            let a = Theta(vec![rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5]);
            let b = Theta(vec![rng.gen::<f64>() - 0.5, rng.gen::<f64>() - 0.5]);
            let lhs = m.log_gamma(&a, &s).unwrap() - m.log_gamma(&b, &s).unwrap();
            let rhs = a.sub(&b).unwrap().dot(&s).unwrap();
            assert!((lhs - rhs).abs() < 1e-12);
        }
    }

    #[test]
    fn stats_invariant_under_global_flip() {
        let m = model(4, 4, NeighbourOrder::Second);
        let mut rng = derive_rng(5, &[2]);
        for _ in 0..20 {
            let s = m.random_state(&mut rng);
            assert_eq!(m.suff_stats(&s), m.suff_stats(&s.flipped()));
        }
    }

    #[test]
    fn gibbs_at_zero_theta_gives_fair_spins() {
        let m = model(4, 4, NeighbourOrder::First);
        let theta = Theta(vec![0.0]);
        let mut rng = derive_rng(5, &[3]);
        let mut state = m.random_state(&mut rng);
        let sweeps = 10_000;
        let mut total = 0i64;
        for _ in 0..sweeps {
            m.gibbs_sweep(&theta, &mut state, &mut rng).unwrap();
            total += state.spins().iter().map(|s| *s as i64).sum::<i64>();
        }
        let draws = (sweeps * 16) as f64;
        let mean = total as f64 / draws;
        // at θ=0 every site is an independent fair ±1 draw
        assert!(mean.abs() < 3.0 / draws.sqrt(), "mean spin {mean}");
    }

    #[test]
    fn single_site_conditional_satisfies_detailed_balance() {
        let m = model(3, 3, NeighbourOrder::Second);
        let theta = Theta(vec![0.23, -0.41]);
        let mut rng = derive_rng(5, &[4]);
        let table = m.conditional_table(&theta);
        for _ in 0..200 {
            let state = m.random_state(&mut rng);
            let k = rng.gen_range(0..9);
            let mut flipped = state.clone();
            flipped.spins[k] = -flipped.spins[k];

            let idx = m.table_index(state.spins(), k);
            // K(x'|x) redraws site k; the conditioning neighbours are
            // identical in both directions.
            let (p_to_flipped, p_to_current) = if flipped.spins[k] == 1 {
                (table.log_p[idx], table.log_m[idx])
            } else {
                (table.log_m[idx], table.log_p[idx])
            };
            let lhs = p_to_flipped - p_to_current;
            let rhs = m.log_gamma(&theta, &m.suff_stats(&flipped)).unwrap()
                - m.log_gamma(&theta, &m.suff_stats(&state)).unwrap();
            assert!((lhs - rhs).abs() < 1e-12, "lhs {lhs} rhs {rhs}");
        }
    }

    /// Pearson chi-squared against exact enumeration probabilities, with
    /// small-expectation bins pooled.
    fn chi_squared_ok(observed: &BTreeMap<Vec<i32>, u64>, expected: &[(Vec<i32>, f64)], n: u64) -> bool {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let mut obs_pooled = 0.0;
        let mut exp_pooled = 0.0;
        let mut stat = 0.0;
        let mut bins = 0usize;
        for (key, p) in expected {
            let e = p * n as f64;
            let o = *observed.get(key).unwrap_or(&0) as f64;
            if e < 5.0 {
                obs_pooled += o;
                exp_pooled += e;
            } else {
                stat += (o - e).powi(2) / e;
                bins += 1;
            }
        }
        if exp_pooled > 0.0 {
            stat += (obs_pooled - exp_pooled).powi(2) / exp_pooled;
            bins += 1;
        }
        let df = (bins - 1) as f64;
        let crit = ChiSquared::new(df).unwrap().inverse_cdf(0.99);
        stat < crit
    }

    #[test]
    fn gibbs_long_run_matches_enumeration() {
        let m = model(3, 3, NeighbourOrder::First);
        let theta = Theta(vec![0.3]);
        let hist = StatsHistogram::build(&m).unwrap();
        let expected: Vec<(Vec<i32>, f64)> = hist
            .distribution(&theta)
            .unwrap()
            .into_iter()
            .map(|(s, p)| (s.0.iter().map(|v| *v as i32).collect(), p))
            .collect();

        let mut rng = derive_rng(5, &[5]);
        let mut state = m.random_state(&mut rng);
        for _ in 0..1_000 {
            m.gibbs_sweep(&theta, &mut state, &mut rng).unwrap();
        }
        let n = 20_000u64;
        let thin = 10;
        let mut observed: BTreeMap<Vec<i32>, u64> = BTreeMap::new();
        for _ in 0..n {
            for _ in 0..thin {
                m.gibbs_sweep(&theta, &mut state, &mut rng).unwrap();
            }
            let key: Vec<i32> = m.suff_stats(&state).0.iter().map(|v| *v as i32).collect();
            *observed.entry(key).or_insert(0) += 1;
        }
        assert!(chi_squared_ok(&observed, &expected, n));
    }

    #[test]
    fn gibbs_state_distribution_close_in_total_variation() {
        let m = model(3, 3, NeighbourOrder::First);
        let theta = Theta(vec![0.3]);

        // exact state probabilities
        let mut logp = Vec::with_capacity(512);
        for mask in 0..512u64 {
            let s = state_from_mask(&m.spec, mask);
            logp.push(theta.dot(&m.suff_stats(&s)).unwrap());
        }
        let log_z = crate::math::logsumexp(&logp);

        let mut rng = derive_rng(5, &[6]);
        let mut state = m.random_state(&mut rng);
        for _ in 0..1_000 {
            m.gibbs_sweep(&theta, &mut state, &mut rng).unwrap();
        }
        let n = 1_000_000u64;
        let mut counts = vec![0u64; 512];
        for _ in 0..n {
            m.gibbs_sweep(&theta, &mut state, &mut rng).unwrap();
            let mask: usize = state
                .spins()
                .iter()
                .enumerate()
                .map(|(k, s)| if *s == 1 { 1 << k } else { 0 })
                .sum();
            counts[mask] += 1;
        }
        let tv: f64 = counts
            .iter()
            .zip(&logp)
            .map(|(c, lp)| (*c as f64 / n as f64 - (lp - log_z).exp()).abs())
            .sum::<f64>()
            / 2.0;
        assert!(tv < 0.02, "total variation {tv}");
    }

    #[test]
    fn simulate_returns_stats_of_final_state_and_is_deterministic() {
        let m = model(4, 4, NeighbourOrder::Second);
        let theta = Theta(vec![0.2, 0.05]);
        let init = LatticeState::constant(4, 4, -1).unwrap();
        let run = |seed: u64| {
            let mut rng = derive_rng(seed, &[7]);
            m.simulate_from(&theta, 100, &init, &mut rng).unwrap()
        };
        let (s1, st1) = run(9);
        let (s2, st2) = run(9);
        assert_eq!(s1, s2);
        assert_eq!(st1, st2);
        assert_eq!(st1, m.suff_stats(&s1));
        assert!(m.simulate_from(&theta, 0, &init, &mut derive_rng(9, &[7])).is_err());
    }

    #[test]
    fn simulate_at_zero_theta_matches_independent_spin_enumeration() {
        let m = model(3, 3, NeighbourOrder::First);
        let theta = Theta(vec![0.0]);
        let hist = StatsHistogram::build(&m).unwrap();
        let expected: Vec<(Vec<i32>, f64)> = hist
            .distribution(&theta)
            .unwrap()
            .into_iter()
            .map(|(s, p)| (s.0.iter().map(|v| *v as i32).collect(), p))
            .collect();
        let mut rng = derive_rng(5, &[8]);
        let n = 20_000u64;
        let mut observed: BTreeMap<Vec<i32>, u64> = BTreeMap::new();
        for _ in 0..n {
            let (_, stats) = m.simulate(&theta, 100, &mut rng).unwrap();
            let key: Vec<i32> = stats.0.iter().map(|v| *v as i32).collect();
            *observed.entry(key).or_insert(0) += 1;
        }
        assert!(chi_squared_ok(&observed, &expected, n));
    }

    #[test]
    fn brute_force_log_z_closed_forms() {
        let m = model(2, 2, NeighbourOrder::First);
        assert!((brute_force_log_z(&m, &Theta(vec![0.0])).unwrap() - 4.0 * 2f64.ln()).abs() < 1e-12);

        // S₁ over the 16 states takes values {−4, 0, 4} with counts {2, 12, 2}
        let hist = StatsHistogram::build(&m).unwrap();
        let counts: BTreeMap<i32, u64> =
            hist.entries().iter().map(|(s, c)| (s[0], *c)).collect();
        assert_eq!(counts, BTreeMap::from([(-4, 2), (0, 12), (4, 2)]));

        let z = brute_force_log_z(&m, &Theta(vec![0.3])).unwrap();
        let direct = (12.0 + 2.0 * (1.2f64).exp() + 2.0 * (-1.2f64).exp()).ln();
        assert!((z - direct).abs() < 1e-12);

        let m9 = model(3, 3, NeighbourOrder::First);
        assert!(
            (brute_force_log_z(&m9, &Theta(vec![0.0])).unwrap() - 9.0 * 2f64.ln()).abs() < 1e-12
        );
    }

    #[test]
    fn log_z_strictly_increasing_in_positive_theta() {
        let m = model(3, 3, NeighbourOrder::First);
        let hist = StatsHistogram::build(&m).unwrap();
        let mut prev = hist.log_z(&Theta(vec![1e-3])).unwrap();
        for k in 1..30 {
            let z = hist.log_z(&Theta(vec![1e-3 + 0.05 * k as f64])).unwrap();
            assert!(z > prev);
            prev = z;
        }
    }

    #[test]
    fn enumeration_refuses_large_lattices() {
        let m = model(5, 5, NeighbourOrder::First);
        assert!(matches!(
            brute_force_log_z(&m, &Theta(vec![0.1])),
            Err(Error::TooLargeForEnumeration { .. })
        ));
    }

    #[test]
    fn exact_sampler_matches_enumeration_distribution() {
        let m = model(3, 3, NeighbourOrder::First);
        let theta = Theta(vec![0.25]);
        let sampler = ExactSampler::new(&m, &theta).unwrap();
        let hist = StatsHistogram::build(&m).unwrap();
        let expected: Vec<(Vec<i32>, f64)> = hist
            .distribution(&theta)
            .unwrap()
            .into_iter()
            .map(|(s, p)| (s.0.iter().map(|v| *v as i32).collect(), p))
            .collect();
        let mut rng = derive_rng(5, &[9]);
        let n = 50_000u64;
        let mut observed: BTreeMap<Vec<i32>, u64> = BTreeMap::new();
        for _ in 0..n {
            let key: Vec<i32> =
                sampler.sample_stats(&mut rng).0.iter().map(|v| *v as i32).collect();
            *observed.entry(key).or_insert(0) += 1;
        }
        assert!(chi_squared_ok(&observed, &expected, n));
    }

    #[test]
    fn posterior_single_point_and_symmetry() {
        let m = model(3, 3, NeighbourOrder::First);
        let prior = Prior::Uniform { lo: vec![-1.0], hi: vec![1.0] };

        let single = brute_force_posterior(
            &m,
            &prior,
            &SuffStats(vec![4.0]),
            &[Theta(vec![0.2])],
            0.1,
        )
        .unwrap();
        assert_eq!(single.weights, vec![1.0]);
        assert_eq!(single.mean.0, vec![0.2]);

        let (grid, vol) = midpoint_grid(&[-1.0], &[1.0], 100);
        let sym = brute_force_posterior(&m, &prior, &SuffStats(vec![0.0]), &grid, vol).unwrap();
        assert!(sym.mean.0[0].abs() < 1e-12);
    }

    #[test]
    fn posterior_rejects_empty_grid() {
        let m = model(3, 3, NeighbourOrder::First);
        let prior = Prior::Uniform { lo: vec![0.0], hi: vec![1.0] };
        assert!(brute_force_posterior(&m, &prior, &SuffStats(vec![0.0]), &[], 1.0).is_err());
    }

    #[test]
    fn grid_text_roundtrip_and_errors() {
        let state = checkerboard(3, 2);
        let text = io::to_grid_text(&state);
        assert_eq!(io::parse_grid_text(&text).unwrap(), state);
        assert!(io::parse_grid_text("+1 0\n-1 +1\n").is_err());
        assert!(io::parse_grid_text("+1 -1\n-1\n").is_err());
        assert!(io::parse_grid_text("").is_err());
    }

    #[test]
    fn json_roundtrip_and_validation() {
        let state = checkerboard(2, 3);
        let json = serde_json::to_string(&io::LatticeJson::from(&state)).unwrap();
        let parsed: io::LatticeJson = serde_json::from_str(&json).unwrap();
        assert_eq!(LatticeState::try_from(parsed).unwrap(), state);

        let bad: io::LatticeJson =
            serde_json::from_str(r#"{"width":2,"height":2,"spins":[[1,2],[1,1]]}"#).unwrap();
        assert!(LatticeState::try_from(bad).is_err());
    }

    #[test]
    fn midpoint_grid_covers_box() {
        let (grid, vol) = midpoint_grid(&[0.0, -1.0], &[1.0, 1.0], 4);
        assert_eq!(grid.len(), 16);
        assert!((vol - 0.25 * 0.5).abs() < 1e-15);
        assert!((grid[0].0[0] - 0.125).abs() < 1e-15);
        assert!((grid[0].0[1] - -0.75).abs() < 1e-15);
    }
}
