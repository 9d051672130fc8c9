//! SIMT warp simulation of the blend stage's memory traffic.
//!
//! The model is deliberately cache-free: threads are grouped into warps of
//! consecutive ranks within a tile, every blend iteration each unfinished
//! thread fetches the next record of its own (tile, cluster) splat list, and
//! the fetch addresses are bucketed into aligned transaction segments. It
//! measures layout coherence only — opacity-based early termination and
//! cache hierarchies are ignored, which makes the remapping benefit a
//! property of the thread order rather than of any particular hardware.

use crate::camera::Clustering;
use crate::display::{RemapTable, ViewpointMatrix};
use crate::raster::GaussianRangeTable;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CoalesceError {
    #[error("inconsistent inputs: {0}")]
    InconsistentInputs(String),
    #[error("invalid warp model: {0}")]
    InvalidModel(String),
}

/// Simulated-hardware parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WarpModel {
    /// Threads per warp.
    pub warp_size: u32,
    /// Aligned memory segment size in bytes.
    pub transaction_bytes: u32,
    /// Bytes fetched per splat record (conic + color + opacity + mean ref).
    pub element_bytes: u32,
}

impl Default for WarpModel {
    fn default() -> Self {
        Self {
            warp_size: 32,
            transaction_bytes: 128,
            element_bytes: 32,
        }
    }
}

impl WarpModel {
    pub fn validate(&self) -> Result<(), CoalesceError> {
        if self.warp_size == 0 || self.transaction_bytes == 0 || self.element_bytes == 0 {
            return Err(CoalesceError::InvalidModel("zero-sized parameter".into()));
        }
        if self.transaction_bytes % self.element_bytes != 0 {
            return Err(CoalesceError::InvalidModel(
                "transaction_bytes must be a multiple of element_bytes".into(),
            ));
        }
        Ok(())
    }
}

/// Thread-to-subpixel assignment being simulated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MappingKind {
    Raster,
    Remapped,
}

impl std::str::FromStr for MappingKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "raster" => Ok(Self::Raster),
            "remapped" => Ok(Self::Remapped),
            other => Err(format!("unknown mapping {other:?}")),
        }
    }
}

/// Aggregate access statistics for one mapping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingStats {
    pub total_warps: u64,
    /// Warps with at least one thread owning a non-empty list.
    pub nonempty_warps: u64,
    /// Mean distinct (tile, cluster) lists per non-empty warp.
    pub distinct_lists_mean: f64,
    /// `histogram[d]` counts warps touching exactly `d` distinct lists.
    pub distinct_lists_histogram: Vec<u64>,
    /// Aligned segment fetches summed over all warp blend steps.
    pub transactions_total: u64,
    /// Lower bound: one segment per warp step.
    pub transactions_ideal: u64,
    pub divergence_ratio: f64,
}

/// Side-by-side comparison of both mappings for one rendered frame.
#[derive(Debug, Clone, Serialize)]
pub struct CoalesceReport {
    pub schema_version: u32,
    /// Cost-model definition: warps of `warp_size` consecutive ranks within
    /// a tile; each blend step every unfinished thread fetches record
    /// `s` of its own list at `(start + s) * element_bytes`, addresses are
    /// bucketed into `transaction_bytes` segments, early termination and
    /// caches ignored.
    pub model: WarpModel,
    pub raster: MappingStats,
    pub remapped: MappingStats,
    /// transactions_total(raster) / transactions_total(remapped)
    pub transaction_reduction: f64,
}

#[derive(Default, Clone)]
struct Accumulator {
    total_warps: u64,
    nonempty_warps: u64,
    distinct_sum: u64,
    histogram: Vec<u64>,
    transactions_total: u64,
    transactions_ideal: u64,
}

impl Accumulator {
    fn merge(mut self, other: Self) -> Self {
        self.total_warps += other.total_warps;
        self.nonempty_warps += other.nonempty_warps;
        self.distinct_sum += other.distinct_sum;
        if self.histogram.len() < other.histogram.len() {
            self.histogram.resize(other.histogram.len(), 0);
        }
        for (i, v) in other.histogram.iter().enumerate() {
            self.histogram[i] += v;
        }
        self.transactions_total += other.transactions_total;
        self.transactions_ideal += other.transactions_ideal;
        self
    }

    fn bump_histogram(&mut self, distinct: usize) {
        if self.histogram.len() <= distinct {
            self.histogram.resize(distinct + 1, 0);
        }
        self.histogram[distinct] += 1;
    }
}

/// Simulates the blend stage's warp memory traffic under one mapping.
pub fn simulate_blend_access(
    ranges: &GaussianRangeTable,
    remap: &RemapTable,
    matrix: &ViewpointMatrix,
    clustering: &Clustering,
    model: &WarpModel,
    mapping: MappingKind,
) -> Result<MappingStats, CoalesceError> {
    model.validate()?;
    if matrix.config() != remap.config() {
        return Err(CoalesceError::InconsistentInputs(
            "matrix and remap table configs differ".into(),
        ));
    }
    if clustering.num_views() != matrix.config().num_views
        || ranges.num_clusters() != clustering.num_clusters()
        || ranges.num_tiles() != remap.grid().num_tiles()
    {
        return Err(CoalesceError::InconsistentInputs(
            "range table does not match display and clustering".into(),
        ));
    }

    let grid = *remap.grid();
    let warp_size = model.warp_size as usize;
    let records_per_txn = (model.transaction_bytes / model.element_bytes) as u64;

    let acc = (0..grid.num_tiles())
        .into_par_iter()
        .map(|t| {
            let mut acc = Accumulator::default();
            let subpixels: Vec<u32> = match mapping {
                MappingKind::Remapped => remap.tile_perm(t).to_vec(),
                MappingKind::Raster => grid.tile_subpixels(t).collect(),
            };
            let mut lists: Vec<(u64, u64)> = Vec::with_capacity(warp_size);
            for warp in subpixels.chunks(warp_size) {
                acc.total_warps += 1;
                lists.clear();
                for &s in warp {
                    let view = matrix.get_linear(s as usize);
                    let cluster = clustering.cluster_of(view);
                    let (start, end) = ranges.get(t, cluster);
                    if end > start {
                        lists.push((start as u64, (end - start) as u64));
                    }
                }
                if lists.is_empty() {
                    acc.bump_histogram(0);
                    continue;
                }
                acc.nonempty_warps += 1;
                let mut starts: Vec<u64> = lists.iter().map(|l| l.0).collect();
                starts.sort_unstable();
                starts.dedup();
                let distinct = starts.len();
                acc.distinct_sum += distinct as u64;
                acc.bump_histogram(distinct);

                let max_len = lists.iter().map(|l| l.1).max().unwrap();
                acc.transactions_ideal += max_len;
                let mut segments: Vec<u64> = Vec::with_capacity(lists.len());
                for step in 0..max_len {
                    segments.clear();
                    for &(start, len) in &lists {
                        if step < len {
                            segments.push((start + step) / records_per_txn);
                        }
                    }
                    segments.sort_unstable();
                    segments.dedup();
                    acc.transactions_total += segments.len() as u64;
                }
            }
            acc
        })
        .reduce(Accumulator::default, Accumulator::merge);

    let distinct_lists_mean = if acc.nonempty_warps > 0 {
        acc.distinct_sum as f64 / acc.nonempty_warps as f64
    } else {
        0.0
    };
    let divergence_ratio = if acc.transactions_ideal > 0 {
        acc.transactions_total as f64 / acc.transactions_ideal as f64
    } else {
        1.0
    };
    Ok(MappingStats {
        total_warps: acc.total_warps,
        nonempty_warps: acc.nonempty_warps,
        distinct_lists_mean,
        distinct_lists_histogram: acc.histogram,
        transactions_total: acc.transactions_total,
        transactions_ideal: acc.transactions_ideal,
        divergence_ratio,
    })
}

/// Runs both mappings and assembles the comparison report.
pub fn coalesce_report(
    ranges: &GaussianRangeTable,
    remap: &RemapTable,
    matrix: &ViewpointMatrix,
    clustering: &Clustering,
    model: &WarpModel,
) -> Result<CoalesceReport, CoalesceError> {
    let raster = simulate_blend_access(ranges, remap, matrix, clustering, model, MappingKind::Raster)?;
    let remapped =
        simulate_blend_access(ranges, remap, matrix, clustering, model, MappingKind::Remapped)?;
    let transaction_reduction = if remapped.transactions_total > 0 {
        raster.transactions_total as f64 / remapped.transactions_total as f64
    } else {
        1.0
    };
    Ok(CoalesceReport {
        schema_version: crate::SCHEMA_VERSION,
        model: *model,
        raster,
        remapped,
        transaction_reduction,
    })
}

/// CSV rows `distinct_lists,raster_warps,remapped_warps` from a report.
pub fn histogram_csv(report: &CoalesceReport) -> String {
    let len = report
        .raster
        .distinct_lists_histogram
        .len()
        .max(report.remapped.distinct_lists_histogram.len());
    let mut out = String::from("distinct_lists,raster_warps,remapped_warps\n");
    for d in 0..len {
        let r = report.raster.distinct_lists_histogram.get(d).copied().unwrap_or(0);
        let m = report
            .remapped
            .distinct_lists_histogram
            .get(d)
            .copied()
            .unwrap_or(0);
        out.push_str(&format!("{d},{r},{m}\n"));
    }
    out
}
