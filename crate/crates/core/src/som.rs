//! Rectangular self-organizing map.
//!
//! Nodes are numbered from 1 at the bottom-left corner, row by row, up to
//! `rows * cols` at the top-right. Codebooks are stored in node order.
//!
//! Training is online: each presentation moves every codebook towards the
//! sample by `eta(n) * h(n) * (x - w)` with a Gaussian neighbourhood `h` over
//! grid distance to the best matching unit. Learning rate and radius decay
//! exponentially with the presentation count.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::NumericTable;

/// Minimum nodes per rayon task when scanning or updating the grid.
const NODES_PER_TASK: usize = 16;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SomGrid {
    pub rows: usize,
    pub cols: usize,
    pub dim: usize,
    pub seed: u64,
    pub codebooks: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub features: Vec<String>,
}

impl SomGrid {
    /// Seeded uniform initialization within each feature's observed range.
    pub fn init(rows: usize, cols: usize, dim: usize, seed: u64, data: &[Vec<f64>]) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Som("grid needs at least one row and column".into()));
        }
        if data.is_empty() {
            return Err(Error::Som("initialization needs at least one complete row".into()));
        }
        if let Some(r) = data.iter().find(|r| r.len() != dim) {
            return Err(Error::Som(format!(
                "data row has {} features, grid dim is {dim}",
                r.len()
            )));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Som("non-finite value in initialization data".into()));
        }
        let lo: Vec<f64> = (0..dim)
            .map(|d| data.iter().map(|r| r[d]).fold(f64::INFINITY, f64::min))
            .collect();
        let hi: Vec<f64> = (0..dim)
            .map(|d| data.iter().map(|r| r[d]).fold(f64::NEG_INFINITY, f64::max))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let codebooks = (0..rows * cols)
            .map(|_| {
                (0..dim)
                    .map(|d| lo[d] + (hi[d] - lo[d]) * rng.gen::<f64>())
                    .collect()
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            dim,
            seed,
            codebooks,
            features: Vec::new(),
        })
    }

    pub fn init_from_table(
        rows: usize,
        cols: usize,
        seed: u64,
        table: &NumericTable,
        features: &[String],
    ) -> Result<Self> {
        let (_, data) = table.complete_rows(features)?;
        let mut grid = Self::init(rows, cols, features.len(), seed, &data)?;
        grid.features = features.to_vec();
        Ok(grid)
    }

    pub fn n_nodes(&self) -> usize {
        self.rows * self.cols
    }

    /// `(row, col)` of a 1-based node, row 0 being the bottom row.
    pub fn position(&self, node: usize) -> (usize, usize) {
        debug_assert!(node >= 1 && node <= self.n_nodes());
        ((node - 1) / self.cols, (node - 1) % self.cols)
    }

    pub fn node_at(&self, row: usize, col: usize) -> usize {
        row * self.cols + col + 1
    }

    pub fn codebook(&self, node: usize) -> &[f64] {
        &self.codebooks[node - 1]
    }

    fn grid_dist2(&self, a: usize, b: usize) -> f64 {
        let (ra, ca) = self.position(a);
        let (rb, cb) = self.position(b);
        let dr = ra as f64 - rb as f64;
        let dc = ca as f64 - cb as f64;
        dr * dr + dc * dc
    }

    fn check_sample(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim {
            return Err(Error::Som(format!(
                "sample has {} features, grid dim is {}",
                x.len(),
                self.dim
            )));
        }
        if x.iter().any(|v| v.is_nan()) {
            return Err(Error::Som("NaN in sample".into()));
        }
        Ok(())
    }

    /// Best matching unit and its Euclidean distance. Ties go to the lowest node.
    pub fn bmu(&self, x: &[f64]) -> Result<(usize, f64)> {
        self.check_sample(x)?;
        Ok(self.bmu_unchecked(x))
    }

    fn bmu_unchecked(&self, x: &[f64]) -> (usize, f64) {
        let d2: Vec<f64> = self
            .codebooks
            .par_iter()
            .with_min_len(NODES_PER_TASK)
            .map(|w| sq_dist(w, x))
            .collect();
        let mut best = 0;
        for (j, d) in d2.iter().enumerate().skip(1) {
            if *d < d2[best] {
                best = j;
            }
        }
        (best + 1, d2[best].sqrt())
    }

    /// One update step towards `x` around `winner`: every node moves by
    /// `eta * exp(-d^2 / (2 sigma^2)) * (x - w)`.
    pub fn update(&mut self, x: &[f64], winner: usize, eta: f64, sigma: f64) -> Result<()> {
        self.check_sample(x)?;
        if winner == 0 || winner > self.n_nodes() {
            return Err(Error::Som(format!("node {winner} out of range")));
        }
        self.update_unchecked(x, winner, eta, sigma);
        Ok(())
    }

    fn update_unchecked(&mut self, x: &[f64], winner: usize, eta: f64, sigma: f64) {
        let denom = 2.0 * sigma * sigma;
        let factors: Vec<f64> = (1..=self.n_nodes())
            .map(|j| eta * (-self.grid_dist2(j, winner) / denom).exp())
            .collect();
        self.codebooks
            .par_iter_mut()
            .with_min_len(NODES_PER_TASK)
            .zip(factors.par_iter())
            .for_each(|(w, &f)| {
                if f == 0.0 {
                    return;
                }
                for (wi, xi) in w.iter_mut().zip(x) {
                    *wi += f * (xi - *wi);
                }
            });
    }

    /// Mean BMU distance over `data`.
    pub fn quantization_error(&self, data: &[Vec<f64>]) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::Som("empty data".into()));
        }
        let mut sum = 0.0;
        for x in data {
            sum += self.bmu(x)?.1;
        }
        Ok(sum / data.len() as f64)
    }

    /// Online training. Sample order is reshuffled every epoch from the grid seed.
    pub fn train(&self, data: &[Vec<f64>], schedule: &TrainingSchedule) -> Result<TrainingOutcome> {
        schedule.validate()?;
        if data.is_empty() {
            return Err(Error::Som("empty training data".into()));
        }
        for x in data {
            self.check_sample(x)?;
        }
        let total = schedule.epochs * data.len();
        let decay = schedule.decay(total);
        let mut grid = self.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(1);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut qe = Vec::with_capacity(schedule.epochs);
        let mut step = 0usize;
        for _ in 0..schedule.epochs {
            order.shuffle(&mut rng);
            for &i in &order {
                let x = &data[i];
                let (winner, _) = grid.bmu_unchecked(x);
                grid.update_unchecked(x, winner, decay.eta(step), decay.sigma(step));
                step += 1;
            }
            qe.push(grid.quantization_error(data)?);
        }
        Ok(TrainingOutcome {
            grid,
            quantization_error: qe,
        })
    }

    /// Mean distance from each codebook to its 4-connected neighbours; 0 for an isolated node.
    pub fn u_matrix(&self) -> Vec<f64> {
        (1..=self.n_nodes())
            .map(|node| {
                let (r, c) = self.position(node);
                let mut neigh = Vec::with_capacity(4);
                if r > 0 {
                    neigh.push(self.node_at(r - 1, c));
                }
                if r + 1 < self.rows {
                    neigh.push(self.node_at(r + 1, c));
                }
                if c > 0 {
                    neigh.push(self.node_at(r, c - 1));
                }
                if c + 1 < self.cols {
                    neigh.push(self.node_at(r, c + 1));
                }
                if neigh.is_empty() {
                    return 0.0;
                }
                let w = self.codebook(node);
                neigh
                    .iter()
                    .map(|&n| sq_dist(w, self.codebook(n)).sqrt())
                    .sum::<f64>()
                    / neigh.len() as f64
            })
            .collect()
    }

    pub fn component_plane(&self, feature: usize) -> Result<Vec<f64>> {
        if feature >= self.dim {
            return Err(Error::Som(format!(
                "feature {feature} out of range for dim {}",
                self.dim
            )));
        }
        Ok(self.codebooks.iter().map(|w| w[feature]).collect())
    }

    /// Assigns every sample to its BMU.
    pub fn map_samples(&self, samples: &SomDataset) -> Result<MapOverlay> {
        let mut members = vec![Vec::new(); self.n_nodes()];
        for ((x, id), label) in samples.data.iter().zip(&samples.row_ids).zip(&samples.labels) {
            let (node, _) = self.bmu(x)?;
            members[node - 1].push(OverlayEntry {
                row_id: id.clone(),
                label: label.clone(),
            });
        }
        Ok(MapOverlay {
            rows: self.rows,
            cols: self.cols,
            members,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let g: Self = serde_json::from_str(text)?;
        if g.rows == 0 || g.cols == 0 || g.codebooks.len() != g.rows * g.cols {
            return Err(Error::Som("checkpoint node count mismatch".into()));
        }
        if g.codebooks.iter().any(|w| w.len() != g.dim || w.iter().any(|v| !v.is_finite())) {
            return Err(Error::Som("checkpoint codebook has wrong length or non-finite entry".into()));
        }
        Ok(g)
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Neighborhood {
    #[default]
    Gaussian,
}

/// Learning-rate and radius schedule. Both decay exponentially over the
/// presentations, with time constants chosen so that the last presentation
/// reaches `eta_final` / `sigma_final` (or stays constant if the start value
/// is already at or below the target).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub epochs: usize,
    pub eta0: f64,
    pub sigma0: f64,
    pub eta_final: f64,
    pub sigma_final: f64,
    #[serde(default)]
    pub neighborhood: Neighborhood,
}

impl TrainingSchedule {
    pub fn default_for(rows: usize, cols: usize) -> Self {
        Self {
            epochs: 500,
            eta0: 0.5,
            sigma0: rows.max(cols) as f64 / 2.0,
            eta_final: 0.01,
            sigma_final: 0.5,
            neighborhood: Neighborhood::Gaussian,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Som("epochs must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.eta0) {
            return Err(Error::Som(format!("eta0 {} outside [0, 1]", self.eta0)));
        }
        if !(self.sigma0 > 0.0 && self.eta_final > 0.0 && self.sigma_final > 0.0) {
            return Err(Error::Som("sigma0, eta_final and sigma_final must be positive".into()));
        }
        Ok(())
    }

    /// Time constants for a run of `total_steps` presentations.
    pub fn decay(&self, total_steps: usize) -> Decay {
        let span = total_steps.saturating_sub(1) as f64;
        let tau = |start: f64, end: f64| {
            if start <= end || span == 0.0 {
                f64::INFINITY
            } else {
                span / (start / end).ln()
            }
        };
        Decay {
            eta0: self.eta0,
            sigma0: self.sigma0,
            tau_eta: tau(self.eta0, self.eta_final),
            tau_sigma: tau(self.sigma0, self.sigma_final),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Decay {
    pub eta0: f64,
    pub sigma0: f64,
    pub tau_eta: f64,
    pub tau_sigma: f64,
}

impl Decay {
    pub fn eta(&self, n: usize) -> f64 {
        self.eta0 * (-(n as f64) / self.tau_eta).exp()
    }

    pub fn sigma(&self, n: usize) -> f64 {
        self.sigma0 * (-(n as f64) / self.tau_sigma).exp()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingOutcome {
    pub grid: SomGrid,
    /// Mean BMU distance after each epoch.
    pub quantization_error: Vec<f64>,
}

/// Complete feature rows with identifiers and overlay labels.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SomDataset {
    pub row_ids: Vec<String>,
    pub data: Vec<Vec<f64>>,
    pub labels: Vec<Option<String>>,
    /// Rows left out because a selected feature was missing.
    pub excluded: Vec<String>,
}

impl SomDataset {
    /// Selects `features` from `table`; `label_of` supplies the overlay label of a row id.
    pub fn from_table<F>(table: &NumericTable, features: &[String], label_of: F) -> Result<Self>
    where
        F: Fn(&str) -> Option<String>,
    {
        let (rows, data) = table.complete_rows(features)?;
        let ids = table.row_ids();
        let mut keep = vec![false; table.n_rows()];
        for &r in &rows {
            keep[r] = true;
        }
        let row_ids: Vec<String> = rows.iter().map(|&r| ids[r].clone()).collect();
        Ok(Self {
            labels: row_ids.iter().map(|id| label_of(id)).collect(),
            row_ids,
            data,
            excluded: ids
                .iter()
                .zip(&keep)
                .filter(|(_, k)| !**k)
                .map(|(id, _)| id.clone())
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlayEntry {
    pub row_id: String,
    pub label: Option<String>,
}

/// Samples grouped by the node they map to.
#[derive(Debug, Clone, PartialEq)]
pub struct MapOverlay {
    pub rows: usize,
    pub cols: usize,
    /// `members[node - 1]`, in input order.
    pub members: Vec<Vec<OverlayEntry>>,
}

impl MapOverlay {
    pub fn node_of(&self, row_id: &str) -> Option<usize> {
        self.members
            .iter()
            .position(|m| m.iter().any(|e| e.row_id == row_id))
            .map(|i| i + 1)
    }

    pub fn total(&self) -> usize {
        self.members.iter().map(Vec::len).sum()
    }

    /// JSON object keyed by node index (non-empty nodes only).
    pub fn to_json(&self) -> Result<String> {
        let map: BTreeMap<usize, &Vec<OverlayEntry>> = self
            .members
            .iter()
            .enumerate()
            .filter(|(_, m)| !m.is_empty())
            .map(|(i, m)| (i + 1, m))
            .collect();
        Ok(serde_json::to_string_pretty(&map)?)
    }
}

/// Per-node scalars as a JSON object keyed by node index.
pub fn node_values_json(values: &[f64]) -> Result<String> {
    let map: BTreeMap<usize, f64> = values.iter().enumerate().map(|(i, v)| (i + 1, *v)).collect();
    Ok(serde_json::to_string_pretty(&map)?)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn grid() -> impl Strategy<Value = (SomGrid, Vec<Vec<f64>>)> {
        (1usize..6, 1usize..6, 1usize..4, any::<u64>()).prop_flat_map(|(r, c, d, seed)| {
            prop::collection::vec(prop::collection::vec(-10f64..10.0, d), 1..30)
                .prop_map(move |data| (SomGrid::init(r, c, d, seed, &data).unwrap(), data))
        })
    }

    proptest! {
        #[test]
        fn update_moves_every_node_towards_the_sample(
            (g, data) in grid(),
            pick in any::<prop::sample::Index>(),
            winner in any::<prop::sample::Index>(),
            eta in 0f64..=1.0,
            sigma in 0.1f64..5.0,
        ) {
            let x = pick.get(&data).clone();
            let winner = winner.index(g.n_nodes()) + 1;
            let mut h = g.clone();
            h.update(&x, winner, eta, sigma).unwrap();
            for (before, after) in g.codebooks.iter().zip(&h.codebooks) {
                prop_assert!(sq_dist(after, &x) <= sq_dist(before, &x) + 1e-12);
                for ((b, a), xi) in before.iter().zip(after).zip(&x) {
                    let (lo, hi) = if b <= xi { (b, xi) } else { (xi, b) };
                    prop_assert!(*lo - 1e-12 <= *a && *a <= *hi + 1e-12);
                }
            }
            let (wr, wc) = g.position(winner);
            let d2 = |j: usize| {
                let (r, c) = g.position(j);
                (r as f64 - wr as f64).powi(2) + (c as f64 - wc as f64).powi(2)
            };
            for j in 1..=g.n_nodes() {
                let factor = 1.0 - eta * (-d2(j) / (2.0 * sigma * sigma)).exp();
                let before = sq_dist(g.codebook(j), &x).sqrt();
                let after = sq_dist(h.codebook(j), &x).sqrt();
                prop_assert!((after - factor * before).abs() <= 1e-12 * before.max(1.0));
            }
        }

        #[test]
        fn u_matrix_is_non_negative((g, _) in grid()) {
            prop_assert!(g.u_matrix().iter().all(|v| *v >= 0.0));
        }

        #[test]
        fn constant_grid_has_flat_u_matrix(r in 1usize..6, c in 1usize..6, v in -5f64..5.0) {
            let g = SomGrid::init(r, c, 2, 1, &[vec![v, -v]]).unwrap();
            prop_assert!(g.u_matrix().iter().all(|u| *u == 0.0));
        }

        #[test]
        fn mapping_partitions_rows((g, data) in grid()) {
            let ds = SomDataset {
                row_ids: (0..data.len()).map(|i| format!("r{i}")).collect(),
                labels: vec![None; data.len()],
                data,
                excluded: Vec::new(),
            };
            let overlay = g.map_samples(&ds).unwrap();
            prop_assert_eq!(overlay.total(), ds.row_ids.len());
            let mut seen: Vec<&str> = overlay.members.iter().flatten().map(|e| e.row_id.as_str()).collect();
            seen.sort_unstable();
            seen.dedup();
            prop_assert_eq!(seen.len(), ds.row_ids.len());
        }
    }
}
