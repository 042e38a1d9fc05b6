//! Range-bucketed confusion matrices, IoU / mIoU and voxel-distribution
//! statistics.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{bucket_of, radius, Point3, RangeBucket};
use crate::seqio;
use crate::voxelgrid::voxelize;

/// Square confusion matrix, ground truth rows by predicted columns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    num_ids: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(num_ids: usize) -> Self {
        ConfusionMatrix {
            num_ids,
            counts: vec![0; num_ids * num_ids],
        }
    }

    pub fn num_ids(&self) -> usize {
        self.num_ids
    }

    pub fn get(&self, gt: u16, pred: u16) -> u64 {
        self.counts[gt as usize * self.num_ids + pred as usize]
    }

    pub fn increment(&mut self, gt: u16, pred: u16) {
        self.counts[gt as usize * self.num_ids + pred as usize] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        assert_eq!(self.num_ids, other.num_ids, "merging matrices of different size");
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
    }

    /// `(tp, fp, fn)` of class `c`.
    pub fn class_counts(&self, c: u16) -> (u64, u64, u64) {
        let c = c as usize;
        let n = self.num_ids;
        let tp = self.counts[c * n + c];
        let col: u64 = (0..n).map(|g| self.counts[g * n + c]).sum();
        let row: u64 = self.counts[c * n..(c + 1) * n].iter().sum();
        (tp, col - tp, row - tp)
    }
}

/// Percent IoU of class `c`; `None` when the class appears in neither
/// ground truth nor prediction.
pub fn iou(matrix: &ConfusionMatrix, c: u16) -> Option<f64> {
    let (tp, fp, fn_) = matrix.class_counts(c);
    let union = tp + fp + fn_;
    (union > 0).then(|| 100.0 * tp as f64 / union as f64)
}

/// Mean IoU over the classes of `classes` that have a non-empty union.
pub fn miou(matrix: &ConfusionMatrix, classes: &[u16]) -> Result<f64> {
    let defined: Vec<f64> = classes.iter().filter_map(|&c| iou(matrix, c)).collect();
    if defined.is_empty() {
        return Err(Error::EmptyReport);
    }
    Ok(defined.iter().sum::<f64>() / defined.len() as f64)
}

/// One overall matrix plus one per range bucket.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RangeConfusion {
    pub overall: ConfusionMatrix,
    pub buckets: [ConfusionMatrix; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Ids `0..num_ids` are valid labels.
    pub num_ids: usize,
    /// Ground-truth id excluded from every matrix.
    pub ignore: Option<u16>,
}

impl EvalConfig {
    /// Classes scored by mIoU: every id except the ignore id.
    pub fn classes(&self) -> Vec<u16> {
        (0..self.num_ids as u16).filter(|&c| Some(c) != self.ignore).collect()
    }
}

impl RangeConfusion {
    pub fn new(num_ids: usize) -> Self {
        RangeConfusion {
            overall: ConfusionMatrix::new(num_ids),
            buckets: std::array::from_fn(|_| ConfusionMatrix::new(num_ids)),
        }
    }

    pub fn bucket(&self, b: RangeBucket) -> &ConfusionMatrix {
        &self.buckets[b.index()]
    }

    pub fn merge(&mut self, other: &RangeConfusion) {
        self.overall.merge(&other.overall);
        for (a, b) in self.buckets.iter_mut().zip(&other.buckets) {
            a.merge(b);
        }
    }
}

/// Adds one point per index to its range bucket and to the overall matrix.
/// Points whose ground truth is the ignore id are skipped.
pub fn accumulate_confusion(
    gt: &[u16],
    pred: &[u16],
    radii: &[f64],
    config: &EvalConfig,
    matrices: &mut RangeConfusion,
) -> Result<()> {
    for (what, len) in [("predictions", pred.len()), ("radii", radii.len())] {
        if len != gt.len() {
            return Err(Error::LengthMismatch {
                what: what.into(),
                expected: gt.len(),
                found: len,
            });
        }
    }
    let check = |c: u16| {
        if (c as usize) < config.num_ids {
            Ok(())
        } else {
            Err(Error::UnknownClass {
                class: c,
                num_ids: config.num_ids,
            })
        }
    };
    for i in 0..gt.len() {
        if Some(gt[i]) == config.ignore {
            continue;
        }
        check(gt[i])?;
        check(pred[i])?;
        matrices.overall.increment(gt[i], pred[i]);
        matrices.buckets[bucket_of(radii[i]).index()].increment(gt[i], pred[i]);
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct BucketReport {
    pub name: &'static str,
    /// Percent IoU per scored class (same order as [`RangeReport::classes`]).
    pub ious: Vec<Option<f64>>,
    pub miou: Option<f64>,
    /// Share of evaluated points in this bucket, percent.
    pub share: f64,
    pub points: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RangeReport {
    pub classes: Vec<u16>,
    /// Overall, close, medium, far.
    pub rows: Vec<BucketReport>,
}

impl RangeReport {
    pub fn from_confusion(conf: &RangeConfusion, config: &EvalConfig) -> Self {
        let classes = config.classes();
        let total = conf.overall.total();
        let row = |name, m: &ConfusionMatrix| {
            let points = m.total();
            BucketReport {
                name,
                ious: classes.iter().map(|&c| iou(m, c)).collect(),
                miou: miou(m, &classes).ok(),
                share: if total == 0 { 0.0 } else { 100.0 * points as f64 / total as f64 },
                points,
            }
        };
        let mut rows = vec![row("overall", &conf.overall)];
        rows.extend(RangeBucket::ALL.iter().map(|&b| row(b.name(), conf.bucket(b))));
        RangeReport { classes, rows }
    }

    pub fn row(&self, name: &str) -> Option<&BucketReport> {
        self.rows.iter().find(|r| r.name == name)
    }

    /// Machine-readable `key=value` lines.
    pub fn to_kv(&self, names: Option<&[&str]>) -> String {
        let mut out = String::from("absent_class_policy=excluded\n");
        for r in &self.rows {
            let _ = writeln!(out, "{}.points={}", r.name, r.points);
            let _ = writeln!(out, "{}.share={:.4}", r.name, r.share);
            let _ = writeln!(out, "{}.miou={}", r.name, fmt_opt(r.miou, 4));
            for (c, v) in self.classes.iter().zip(&r.ious) {
                let _ = writeln!(out, "{}.iou.{}={}", r.name, class_name(*c, names), fmt_opt(*v, 4));
            }
        }
        out
    }

    /// Aligned table: one row per range, mIoU first, then per-class IoU.
    pub fn to_table(&self, names: Option<&[&str]>) -> String {
        let headers: Vec<String> = ["range".to_string(), "share%".into(), "mIoU".into()]
            .into_iter()
            .chain(self.classes.iter().map(|&c| class_name(c, names)))
            .collect();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                [r.name.to_string(), format!("{:.1}", r.share), fmt_opt(r.miou, 1)]
                    .into_iter()
                    .chain(r.ious.iter().map(|v| fmt_opt(*v, 1)))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..headers.len())
            .map(|i| body.iter().map(|r| r[i].len()).chain([headers[i].len()]).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for line in std::iter::once(&headers).chain(&body) {
            let cells: Vec<String> = line
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(i, (c, &w))| if i == 0 { format!("{c:<w$}") } else { format!("{c:>w$}") })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

fn fmt_opt(v: Option<f64>, digits: usize) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{v:.digits$}"))
}

fn class_name(c: u16, names: Option<&[&str]>) -> String {
    names
        .and_then(|n| n.get(c as usize))
        .map_or_else(|| c.to_string(), |s| s.to_string())
}

/// Occupied voxels per range bucket; a voxel's bucket is that of its center.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct VoxelDistribution {
    pub counts: [usize; 3],
}

impl VoxelDistribution {
    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    /// Percent per bucket (all zero for an empty input).
    pub fn shares(&self) -> [f64; 3] {
        let total = self.total();
        if total == 0 {
            return [0.0; 3];
        }
        self.counts.map(|c| 100.0 * c as f64 / total as f64)
    }

    pub fn add(&mut self, other: &VoxelDistribution) {
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
    }
}

pub fn voxel_distribution<'a>(points: impl IntoIterator<Item = &'a Point3>, voxel_size: f64) -> Result<VoxelDistribution> {
    let grid = voxelize(points, voxel_size)?;
    let mut dist = VoxelDistribution::default();
    for (key, _) in grid.iter() {
        dist.counts[bucket_of(radius(&key.center(voxel_size))).index()] += 1;
    }
    Ok(dist)
}

/// Where [`evaluate_sequence`] finds its inputs. Files are matched by stem.
#[derive(Debug, Clone)]
pub struct EvalPaths {
    /// Ground-truth labels of the original scans.
    pub gt: PathBuf,
    /// Original scan point files (radii come from these).
    pub points: PathBuf,
    /// Predictions; one file per scan, or per multi-scan frame with `prov`.
    pub pred: PathBuf,
    /// When set, predictions belong to multi-scan frames and only the
    /// reference points of each frame are evaluated.
    pub prov: Option<PathBuf>,
}

/// Confusion over every prediction file in `paths.pred`. Points farther
/// than `max_range` (when given) are left out.
pub fn evaluate_sequence(paths: &EvalPaths, config: &EvalConfig, max_range: Option<f64>) -> Result<RangeConfusion> {
    let files = seqio::list_files(&paths.pred, "label")?;
    let partials: Vec<RangeConfusion> = files
        .par_iter()
        .map(|pred_path| evaluate_file(paths, pred_path, config, max_range))
        .collect::<Result<_>>()?;
    let mut total = RangeConfusion::new(config.num_ids);
    for p in &partials {
        total.merge(p);
    }
    Ok(total)
}

fn evaluate_file(paths: &EvalPaths, pred_path: &Path, config: &EvalConfig, max_range: Option<f64>) -> Result<RangeConfusion> {
    let stem = pred_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let gt = seqio::read_labels(paths.gt.join(format!("{stem}.label")))?;
    let points = seqio::read_points(paths.points.join(format!("{stem}.bin")))?;
    if gt.len() != points.len() {
        return Err(Error::Alignment {
            frame: stem,
            index: gt.len().min(points.len()),
            detail: format!("{} ground-truth labels for {} points", gt.len(), points.len()),
        });
    }
    let raw_pred = seqio::read_labels(pred_path)?;
    let pred = match &paths.prov {
        None => raw_pred,
        Some(prov_dir) => {
            let frame = seqio::parse_frame_name(pred_path).ok_or_else(|| Error::Alignment {
                frame: stem.clone(),
                index: 0,
                detail: "prediction file name is not a frame number".into(),
            })?;
            let prov = seqio::read_provenance(prov_dir.join(format!("{stem}.prov")))?;
            reference_predictions(&stem, frame, &raw_pred, &prov, points.len())?
        }
    };
    if pred.len() != gt.len() {
        return Err(Error::Alignment {
            frame: stem,
            index: pred.len().min(gt.len()),
            detail: format!("{} predictions for {} points", pred.len(), gt.len()),
        });
    }
    let radii: Vec<f64> = points.iter().map(radius).collect();
    let mut conf = RangeConfusion::new(config.num_ids);
    match max_range {
        None => accumulate_confusion(&gt, &pred, &radii, config, &mut conf)?,
        Some(limit) => {
            let keep: Vec<usize> = (0..gt.len()).filter(|&i| radii[i] <= limit).collect();
            let pick = |v: &[u16]| keep.iter().map(|&i| v[i]).collect::<Vec<u16>>();
            let r: Vec<f64> = keep.iter().map(|&i| radii[i]).collect();
            accumulate_confusion(&pick(&gt), &pick(&pred), &r, config, &mut conf)?;
        }
    }
    Ok(conf)
}

/// Pulls the reference-point predictions of a multi-scan frame back into
/// original scan order.
fn reference_predictions(stem: &str, frame: u32, pred: &[u16], prov: &[seqio::Provenance], n: usize) -> Result<Vec<u16>> {
    if prov.len() != pred.len() {
        return Err(Error::LengthMismatch {
            what: format!("provenance of frame {stem}"),
            expected: pred.len(),
            found: prov.len(),
        });
    }
    let mut out = vec![None; n];
    for (i, p) in prov.iter().enumerate().filter(|(_, p)| p.source_scan == frame) {
        let slot = out.get_mut(p.source_point as usize).ok_or_else(|| Error::Alignment {
            frame: stem.into(),
            index: i,
            detail: format!("reference point {} beyond the scan's {n} points", p.source_point),
        })?;
        *slot = Some(pred[i]);
    }
    out.into_iter()
        .enumerate()
        .map(|(i, v)| {
            v.ok_or_else(|| Error::Alignment {
                frame: stem.into(),
                index: i,
                detail: "scan point has no reference prediction".into(),
            })
        })
        .collect()
}
