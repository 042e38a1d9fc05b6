//! Budgeted downsampling of fused frames.
//!
//! [`point_based_downsample`] thins the fused cloud at model voxel size:
//! cells holding a reference point keep only their reference points, other
//! cells keep one random point if it lies in the accumulation band.
//! [`density_based_downsample`] then drops non-reference points far from the
//! reference cloud and repeatedly thins non-reference points over growing
//! windows until the occupied-voxel count fits `max_voxel`. Reference points
//! are never removed by either stage.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use tracing::debug;

use crate::accumulate::{accumulate_window, AccumMode, FusedPoint, WindowScan};
use crate::error::{Error, Result};
use crate::rng;
use crate::seqio::{self, MovingMask, Provenance, ScanRecord};
use crate::voxelgrid::{count_occupied, voxelize, VoxelKey};
use crate::window::{select_window, WindowParams};

const STAGE_POINT: u64 = 1;
const STAGE_DENSITY: u64 = 2;
const STAGE_FALLBACK: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DownsampleParams {
    /// Model voxel size, meters.
    pub voxel_size: f64,
    /// Accumulation band `[lower_range, upper_range)`, meters.
    pub lower_range: f64,
    pub upper_range: f64,
    pub max_voxel: usize,
    /// Coarse cell size for the reference-proximity filter, meters.
    pub ref_dist: f64,
    pub rng_seed: u64,
    /// Factor applied to the window size on every thinning pass.
    pub window_growth: f64,
}

impl DownsampleParams {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if !(self.voxel_size > 0.0 && self.voxel_size.is_finite()) {
            return bad(format!("voxel_size must be positive, got {}", self.voxel_size));
        }
        if !(self.lower_range >= 0.0 && self.lower_range < self.upper_range) {
            return bad(format!(
                "need 0 <= lower_range < upper_range, got [{}, {})",
                self.lower_range, self.upper_range
            ));
        }
        if !(self.voxel_size < self.ref_dist && self.ref_dist.is_finite()) {
            return bad(format!(
                "need voxel_size < ref_dist, got {} and {}",
                self.voxel_size, self.ref_dist
            ));
        }
        if self.max_voxel == 0 {
            return bad("max_voxel must be positive".into());
        }
        if !(self.window_growth > 1.0 && self.window_growth.is_finite()) {
            return bad(format!("window_growth must exceed 1, got {}", self.window_growth));
        }
        Ok(())
    }

    fn in_band(&self, r: f64) -> bool {
        r >= self.lower_range && r < self.upper_range
    }
}

/// A fused frame after both downsampling stages.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiScanFrame {
    pub reference_scan: u32,
    pub points: Vec<FusedPoint>,
    pub params: DownsampleParams,
    /// Occupied cells at `voxel_size`.
    pub voxel_count: usize,
    /// Number of window-thinning passes that ran.
    pub passes: usize,
}

impl MultiScanFrame {
    pub fn reference_count(&self) -> usize {
        self.points.iter().filter(|p| p.is_reference).count()
    }
}

fn key_words(key: &VoxelKey) -> [u64; 3] {
    [key.i as u64, key.j as u64, key.k as u64]
}

fn retain_by_mask(fused: &[FusedPoint], keep: &[bool]) -> Vec<FusedPoint> {
    fused.iter().zip(keep).filter(|(_, &k)| k).map(|(p, _)| *p).collect()
}

/// Point-based thinning at `voxel_size`. `frame` keys the random choices.
pub fn point_based_downsample(fused: &[FusedPoint], params: &DownsampleParams, frame: u32) -> Result<Vec<FusedPoint>> {
    params.validate()?;
    let grid = voxelize(fused.iter().map(|f| &f.point), params.voxel_size)?;
    let mut keep = vec![false; fused.len()];
    for (key, members) in grid.iter() {
        if members.iter().any(|&m| fused[m as usize].is_reference) {
            for &m in members {
                keep[m as usize] = fused[m as usize].is_reference;
            }
            continue;
        }
        let pick = if members.len() == 1 {
            members[0]
        } else {
            let [i, j, k] = key_words(key);
            let mut r = rng::keyed(params.rng_seed, &[frame as u64, STAGE_POINT, i, j, k]);
            members[r.random_range(0..members.len())]
        };
        if params.in_band(fused[pick as usize].point.radius()) {
            keep[pick as usize] = true;
        }
    }
    Ok(retain_by_mask(fused, &keep))
}

/// Keeps only points whose `ref_dist` cell holds at least one reference point.
pub fn coarse_reference_filter(fused: &[FusedPoint], ref_dist: f64) -> Result<Vec<FusedPoint>> {
    let grid = voxelize(fused.iter().map(|f| &f.point), ref_dist)?;
    let mut keep = vec![false; fused.len()];
    for (_, members) in grid.iter() {
        if members.iter().any(|&m| fused[m as usize].is_reference) {
            for &m in members {
                keep[m as usize] = true;
            }
        }
    }
    Ok(retain_by_mask(fused, &keep))
}

/// One thinning pass: inside each `window`-sized cell keep every reference
/// point and one random non-reference point.
fn down_voxels(points: &[FusedPoint], window: f64, seed: u64, frame: u32, pass: usize) -> Result<Vec<FusedPoint>> {
    let grid = voxelize(points.iter().map(|f| &f.point), window)?;
    let mut keep = vec![false; points.len()];
    let mut others = Vec::new();
    for (key, members) in grid.iter() {
        others.clear();
        for &m in members {
            if points[m as usize].is_reference {
                keep[m as usize] = true;
            } else {
                others.push(m);
            }
        }
        let pick = match others.len() {
            0 => continue,
            1 => others[0],
            n => {
                let [i, j, k] = key_words(key);
                let mut r = rng::keyed(seed, &[frame as u64, STAGE_DENSITY, pass as u64, i, j, k]);
                others[r.random_range(0..n)]
            }
        };
        keep[pick as usize] = true;
    }
    Ok(retain_by_mask(points, &keep))
}

fn occupied(points: &[FusedPoint], cell: f64) -> Result<usize> {
    count_occupied(points.iter().map(|f| &f.point), cell)
}

/// Density-based thinning down to the voxel budget.
///
/// Fails with [`Error::BudgetInfeasible`] when the reference points alone
/// occupy more than `max_voxel` cells.
pub fn density_based_downsample(fused: &[FusedPoint], params: &DownsampleParams, frame: u32) -> Result<MultiScanFrame> {
    params.validate()?;
    let reference_voxels = count_occupied(
        fused.iter().filter(|f| f.is_reference).map(|f| &f.point),
        params.voxel_size,
    )?;
    if reference_voxels > params.max_voxel {
        return Err(Error::BudgetInfeasible {
            reference_voxels,
            max_voxel: params.max_voxel,
        });
    }

    let mut points = coarse_reference_filter(fused, params.ref_dist)?;
    // Once the window exceeds every |coordinate| the grid is down to its
    // eight origin octants and further growth cannot thin anything.
    let extent = points
        .iter()
        .map(|f| f.point.x.abs().max(f.point.y.abs()).max(f.point.z.abs()))
        .fold(0.0f64, f64::max);
    let mut window = params.voxel_size;
    let mut passes = 0;
    loop {
        let count = occupied(&points, params.voxel_size)?;
        if count <= params.max_voxel {
            debug!(frame, passes, count, points = points.len(), "density downsampling done");
            return Ok(MultiScanFrame {
                reference_scan: frame,
                points,
                params: *params,
                voxel_count: count,
                passes,
            });
        }
        if window > extent {
            points = drop_until_within_budget(points, params, frame)?;
            continue;
        }
        window *= params.window_growth;
        passes += 1;
        points = down_voxels(&points, window, params.rng_seed, frame, passes)?;
    }
}

/// Last resort when window growth has saturated: remove the remaining
/// non-reference points in keyed random order until the budget holds.
fn drop_until_within_budget(mut points: Vec<FusedPoint>, params: &DownsampleParams, frame: u32) -> Result<Vec<FusedPoint>> {
    let mut order: Vec<(u64, Provenance)> = points
        .iter()
        .filter(|f| !f.is_reference)
        .map(|f| {
            let p = f.provenance;
            let key = rng::mix(params.rng_seed, &[frame as u64, STAGE_FALLBACK, p.source_scan as u64, p.source_point as u64]);
            (key, p)
        })
        .collect();
    order.sort_unstable();
    for (_, victim) in order {
        points.retain(|f| f.is_reference || f.provenance != victim);
        if occupied(&points, params.voxel_size)? <= params.max_voxel {
            break;
        }
    }
    Ok(points)
}

/// Everything needed to build the frames of one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PreprocessConfig {
    pub window: WindowParams,
    pub mode: AccumMode,
    pub downsample: DownsampleParams,
    /// Keep ground-truth labels on accumulated points (training data).
    pub carry_labels: bool,
}

/// Window selection, fusion and both downsampling stages for one reference scan.
pub fn preprocess_frame(
    scans: &[ScanRecord],
    masks: Option<&[MovingMask]>,
    ref_idx: usize,
    config: &PreprocessConfig,
) -> Result<MultiScanFrame> {
    let poses: Vec<_> = scans.iter().map(|s| s.pose).collect();
    let window = select_window(&poses, ref_idx, &config.window)?;
    let sources: Vec<WindowScan<'_>> = window
        .scan_indices()
        .map(|i| WindowScan {
            scan: &scans[i],
            mask: masks.map(|m| &m[i]),
        })
        .collect();
    let reference = &scans[ref_idx];
    let fused = accumulate_window(reference, &sources, config.mode, config.carry_labels)?;
    let thinned = point_based_downsample(&fused, &config.downsample, reference.scan_index)?;
    density_based_downsample(&thinned, &config.downsample, reference.scan_index)
}

pub const POINTS_DIR: &str = "points";
pub const LABELS_DIR: &str = "labels";
pub const PROV_DIR: &str = "prov";

/// Writes `points/<frame>.bin`, `prov/<frame>.prov` and, when requested,
/// `labels/<frame>.label` under `dir`.
pub fn write_frame(dir: &Path, frame: &MultiScanFrame, with_labels: bool) -> Result<()> {
    let name = seqio::frame_name(frame.reference_scan);
    let points: Vec<_> = frame.points.iter().map(|f| f.point).collect();
    seqio::write_points(dir.join(POINTS_DIR).join(format!("{name}.bin")), &points)?;
    let prov: Vec<_> = frame.points.iter().map(|f| f.provenance).collect();
    seqio::write_provenance(dir.join(PROV_DIR).join(format!("{name}.prov")), &prov)?;
    if with_labels {
        let labels = frame
            .points
            .iter()
            .enumerate()
            .map(|(i, f)| {
                f.label.ok_or_else(|| Error::Alignment {
                    frame: name.clone(),
                    index: i,
                    detail: "point has no label to write".into(),
                })
            })
            .collect::<Result<Vec<u16>>>()?;
        seqio::write_labels(dir.join(LABELS_DIR).join(format!("{name}.label")), &labels)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FrameStats {
    pub reference_scan: u32,
    pub points: usize,
    pub reference_points: usize,
    pub voxel_count: usize,
    pub passes: usize,
}

/// Builds and writes one frame per scan, in parallel on the current rayon
/// pool. Output files do not depend on the pool size.
pub fn preprocess_sequence(
    scans: &[ScanRecord],
    masks: Option<&[MovingMask]>,
    config: &PreprocessConfig,
    out_dir: &Path,
) -> Result<Vec<FrameStats>> {
    config.window.validate()?;
    config.downsample.validate()?;
    if config.mode == AccumMode::NonSmearing && masks.is_none() && scans.len() > 1 {
        return Err(Error::MissingMask {
            scan: scans[0].scan_index,
        });
    }
    (0..scans.len())
        .into_par_iter()
        .map(|i| {
            let frame = preprocess_frame(scans, masks, i, config)?;
            write_frame(out_dir, &frame, config.carry_labels)?;
            let stats = FrameStats {
                reference_scan: frame.reference_scan,
                points: frame.points.len(),
                reference_points: frame.reference_count(),
                voxel_count: frame.voxel_count,
                passes: frame.passes,
            };
            tracing::info!(
                frame = stats.reference_scan,
                points = stats.points,
                voxels = stats.voxel_count,
                passes = stats.passes,
                "frame written"
            );
            Ok(stats)
        })
        .collect()
}
