//! Readers and writers for scans, labels, poses, moving masks, provenance
//! sidecars and sequence manifests.
//!
//! Binary layouts (all little-endian):
//!
//! | file      | record                                   |
//! |-----------|------------------------------------------|
//! | `.bin`    | `f32 x, f32 y, f32 z, f32 intensity`     |
//! | `.label`  | `u32`, semantic class in the low 16 bits |
//! | `.mask`   | `u8`, 0 = static, 1 = moving             |
//! | `.prov`   | `u32 source_scan, u32 source_point`      |
//!
//! Poses are text, one row-major 3×4 matrix (12 reals) per line.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::geom::{Point3, Pose};

pub const POINT_RECORD: usize = 16;
pub const LABEL_RECORD: usize = 4;
pub const PROV_RECORD: usize = 8;

/// Conventional file stem for frame / scan `index`: six zero-padded digits.
pub fn frame_name(index: u32) -> String {
    format!("{index:06}")
}

/// Parses a file stem produced by [`frame_name`] (any decimal stem works).
pub fn parse_frame_name(path: &Path) -> Option<u32> {
    path.file_stem()?.to_str()?.parse().ok()
}

fn read_records(path: &Path, record: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % record != 0 {
        return Err(Error::TruncatedFile {
            path: path.to_path_buf(),
            len: bytes.len() as u64,
            record,
        });
    }
    Ok(bytes)
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn f32_at(chunk: &[u8], i: usize) -> f32 {
    f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap())
}

fn u32_at(chunk: &[u8], i: usize) -> u32 {
    u32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap())
}

pub fn read_points(path: impl AsRef<Path>) -> Result<Vec<Point3>> {
    let path = path.as_ref();
    let bytes = read_records(path, POINT_RECORD)?;
    let points: Vec<Point3> = bytes
        .chunks_exact(POINT_RECORD)
        .map(|c| {
            Point3::with_intensity(
                f32_at(c, 0) as f64,
                f32_at(c, 1) as f64,
                f32_at(c, 2) as f64,
                f32_at(c, 3),
            )
        })
        .collect();
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("point coordinates"));
    }
    Ok(points)
}

/// Writes points at 32-bit precision.
pub fn write_points(path: impl AsRef<Path>, points: &[Point3]) -> Result<()> {
    let mut bytes = Vec::with_capacity(points.len() * POINT_RECORD);
    for p in points {
        for v in [p.x as f32, p.y as f32, p.z as f32, p.intensity] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    write_bytes(path.as_ref(), &bytes)
}

/// A label word as stored on disk: semantic class in the low half,
/// instance id in the high half.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RawLabel(pub u32);

impl RawLabel {
    pub fn class(self) -> u16 {
        (self.0 & 0xFFFF) as u16
    }

    pub fn instance(self) -> u16 {
        (self.0 >> 16) as u16
    }
}

pub fn read_raw_labels(path: impl AsRef<Path>) -> Result<Vec<RawLabel>> {
    let path = path.as_ref();
    let bytes = read_records(path, LABEL_RECORD)?;
    Ok(bytes.chunks_exact(LABEL_RECORD).map(|c| RawLabel(u32_at(c, 0))).collect())
}

/// Semantic class ids (low 16 bits of each label word).
pub fn read_labels(path: impl AsRef<Path>) -> Result<Vec<u16>> {
    Ok(read_raw_labels(path)?.into_iter().map(RawLabel::class).collect())
}

/// Writes class ids with a zero instance half.
pub fn write_labels(path: impl AsRef<Path>, classes: &[u16]) -> Result<()> {
    let bytes: Vec<u8> = classes.iter().flat_map(|&c| (c as u32).to_le_bytes()).collect();
    write_bytes(path.as_ref(), &bytes)
}

pub fn read_poses(path: impl AsRef<Path>) -> Result<Vec<Pose>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_poses(&text, path)
}

pub(crate) fn parse_poses(text: &str, path: &Path) -> Result<Vec<Pose>> {
    let mut poses = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let values = line
            .split_whitespace()
            .map(|tok| tok.parse::<f64>())
            .collect::<Result<Vec<f64>, _>>()
            .map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: e.to_string(),
            })?;
        if values.len() != 12 {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("expected 12 values, found {}", values.len()),
            });
        }
        let pose = pose_from_row_major(&values).map_err(|e| match e {
            Error::OrthonormalityViolation { deviation, .. } => Error::OrthonormalityViolation {
                line: Some(line_no),
                deviation,
            },
            Error::NonFinite(_) => Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: "non-finite value".into(),
            },
            other => other,
        })?;
        poses.push(pose);
    }
    Ok(poses)
}

fn pose_from_row_major(v: &[f64]) -> Result<Pose> {
    Pose::from_parts(
        [[v[0], v[1], v[2]], [v[4], v[5], v[6]], [v[8], v[9], v[10]]],
        [v[3], v[7], v[11]],
    )
}

pub fn write_poses(path: impl AsRef<Path>, poses: &[Pose]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for pose in poses {
        let m = pose.to_matrix();
        let row: Vec<String> = m[..3].iter().flatten().map(|v| format!("{v:e}")).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    write_bytes(path, out.as_bytes())
}

/// Per-point moving flags for one scan.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct MovingMask(pub Vec<bool>);

impl MovingMask {
    /// Marks every point whose ground-truth class is in `moving_classes`.
    pub fn from_labels(labels: &[u16], moving_classes: &[u16]) -> Self {
        MovingMask(labels.iter().map(|c| moving_classes.contains(c)).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn moving_count(&self) -> usize {
        self.0.iter().filter(|&&m| m).count()
    }
}

pub fn read_mask(path: impl AsRef<Path>) -> Result<MovingMask> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    bytes
        .iter()
        .enumerate()
        .map(|(index, &value)| match value {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(Error::InvalidMask {
                path: path.to_path_buf(),
                index,
                value,
            }),
        })
        .collect::<Result<Vec<bool>>>()
        .map(MovingMask)
}

pub fn write_mask(path: impl AsRef<Path>, mask: &MovingMask) -> Result<()> {
    let bytes: Vec<u8> = mask.0.iter().map(|&m| m as u8).collect();
    write_bytes(path.as_ref(), &bytes)
}

/// Identity of a physical point in a sequence: its scan and its record
/// index within that scan's original point file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct Provenance {
    pub source_scan: u32,
    pub source_point: u32,
}

impl Provenance {
    pub fn new(source_scan: u32, source_point: u32) -> Self {
        Provenance {
            source_scan,
            source_point,
        }
    }
}

pub fn read_provenance(path: impl AsRef<Path>) -> Result<Vec<Provenance>> {
    let path = path.as_ref();
    let bytes = read_records(path, PROV_RECORD)?;
    Ok(bytes
        .chunks_exact(PROV_RECORD)
        .map(|c| Provenance::new(u32_at(c, 0), u32_at(c, 1)))
        .collect())
}

pub fn write_provenance(path: impl AsRef<Path>, records: &[Provenance]) -> Result<()> {
    let mut bytes = Vec::with_capacity(records.len() * PROV_RECORD);
    for r in records {
        bytes.extend_from_slice(&r.source_scan.to_le_bytes());
        bytes.extend_from_slice(&r.source_point.to_le_bytes());
    }
    write_bytes(path.as_ref(), &bytes)
}

/// Reads a frame's point file together with its provenance sidecar,
/// rejecting pairs of different length.
pub fn read_frame_with_provenance(
    points: impl AsRef<Path>,
    prov: impl AsRef<Path>,
) -> Result<(Vec<Point3>, Vec<Provenance>)> {
    let pts = read_points(&points)?;
    let prov_records = read_provenance(&prov)?;
    if pts.len() != prov_records.len() {
        return Err(Error::LengthMismatch {
            what: format!("provenance {}", prov.as_ref().display()),
            expected: pts.len(),
            found: prov_records.len(),
        });
    }
    Ok((pts, prov_records))
}

/// One timestamp of a sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanRecord {
    pub scan_index: u32,
    pub points: Vec<Point3>,
    pub labels: Option<Vec<u16>>,
    pub pose: Pose,
}

impl ScanRecord {
    pub fn new(scan_index: u32, points: Vec<Point3>, labels: Option<Vec<u16>>, pose: Pose) -> Result<Self> {
        if let Some(l) = &labels {
            if l.len() != points.len() {
                return Err(Error::LengthMismatch {
                    what: format!("labels of scan {scan_index}"),
                    expected: points.len(),
                    found: l.len(),
                });
            }
        }
        Ok(ScanRecord {
            scan_index,
            points,
            labels,
            pose,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    profile: Option<String>,
    poses: PathBuf,
    scans: Option<Vec<PathBuf>>,
    scan_dir: Option<PathBuf>,
    labels: Option<PathBuf>,
    masks: Option<PathBuf>,
    /// Row-major 3×4 sensor-to-pose-frame calibration.
    calibration: Option<Vec<f64>>,
}

/// Everything needed to load one sequence. Relative paths in a manifest
/// file are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct SequenceManifest {
    /// Scan files in timestamp order.
    pub scans: Vec<PathBuf>,
    pub poses: PathBuf,
    pub labels: Option<PathBuf>,
    pub masks: Option<PathBuf>,
    pub profile: Option<String>,
    /// When present, poses are converted to the LiDAR frame as
    /// `calib⁻¹ · pose · calib`.
    pub calibration: Option<Pose>,
}

pub const MANIFEST_FILE: &str = "manifest.toml";

impl SequenceManifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base, path)
    }

    fn parse(text: &str, base: &Path, origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Manifest {
            path: origin.to_path_buf(),
            message,
        };
        let file: ManifestFile = toml::from_str(text).map_err(|e| bad(e.to_string()))?;
        let scans = match (file.scans, file.scan_dir) {
            (Some(list), None) => list.into_iter().map(|p| base.join(p)).collect(),
            (None, Some(dir)) => list_files(&base.join(dir), "bin")?,
            _ => return Err(bad("exactly one of `scans` or `scan_dir` is required".into())),
        };
        let calibration = match file.calibration {
            None => None,
            Some(v) if v.len() == 12 => Some(pose_from_row_major(&v)?),
            Some(v) => return Err(bad(format!("calibration needs 12 values, found {}", v.len()))),
        };
        Ok(SequenceManifest {
            scans,
            poses: base.join(file.poses),
            labels: file.labels.map(|p| base.join(p)),
            masks: file.masks.map(|p| base.join(p)),
            profile: file.profile,
            calibration,
        })
    }

    /// Resolves a sequence directory: uses `manifest.toml` when present,
    /// otherwise the layout `velodyne/*.bin`, `poses.txt`, and optional
    /// `labels/` and `masks/` directories.
    pub fn from_dir(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let manifest = dir.join(MANIFEST_FILE);
        if manifest.is_file() {
            return Self::load(manifest);
        }
        let optional = |name: &str| Some(dir.join(name)).filter(|p| p.is_dir());
        Ok(SequenceManifest {
            scans: list_files(&dir.join("velodyne"), "bin")?,
            poses: dir.join("poses.txt"),
            labels: optional("labels"),
            masks: optional("masks"),
            profile: None,
            calibration: None,
        })
    }

    /// Loads from a manifest file or a sequence directory.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            Self::from_dir(path)
        } else {
            Self::load(path)
        }
    }

    fn companion(&self, dir: &Path, scan: &Path, ext: &str) -> PathBuf {
        let stem = scan.file_stem().unwrap_or_default();
        dir.join(stem).with_extension(ext)
    }

    pub fn label_path(&self, scan: usize) -> Option<PathBuf> {
        self.labels.as_ref().map(|d| self.companion(d, &self.scans[scan], "label"))
    }

    pub fn mask_path(&self, scan: usize) -> Option<PathBuf> {
        self.masks.as_ref().map(|d| self.companion(d, &self.scans[scan], "mask"))
    }

    /// File stem of scan `i` (used to name per-scan outputs).
    pub fn scan_stem(&self, i: usize) -> String {
        self.scans[i]
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| frame_name(i as u32))
    }
}

/// Sorted list of files with extension `ext` in `dir`.
pub fn list_files(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|e| e == ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Loads every scan of the sequence eagerly. Scan `i` of the manifest gets
/// `scan_index = i`; point order equals file record order.
pub fn load_sequence(manifest: &SequenceManifest) -> Result<Vec<ScanRecord>> {
    let mut poses = read_poses(&manifest.poses)?;
    if poses.len() != manifest.scans.len() {
        return Err(Error::LengthMismatch {
            what: format!("poses in {}", manifest.poses.display()),
            expected: manifest.scans.len(),
            found: poses.len(),
        });
    }
    if let Some(calib) = &manifest.calibration {
        let inv = calib.invert();
        for p in &mut poses {
            *p = inv.compose(p).compose(calib);
        }
    }
    manifest
        .scans
        .par_iter()
        .zip(poses.into_par_iter())
        .enumerate()
        .map(|(i, (scan_path, pose))| {
            let points = read_points(scan_path)?;
            let labels = match manifest.label_path(i) {
                Some(p) => {
                    let labels = read_labels(&p)?;
                    if labels.len() != points.len() {
                        return Err(Error::LengthMismatch {
                            what: format!("labels {}", p.display()),
                            expected: points.len(),
                            found: labels.len(),
                        });
                    }
                    Some(labels)
                }
                None => None,
            };
            ScanRecord::new(i as u32, points, labels, pose)
        })
        .collect()
}

/// Loads the moving masks listed by the manifest, one per scan, checking
/// each against its scan's point count. `None` when the manifest has no
/// mask directory.
pub fn load_masks(manifest: &SequenceManifest, scans: &[ScanRecord]) -> Result<Option<Vec<MovingMask>>> {
    if manifest.masks.is_none() {
        return Ok(None);
    }
    scans
        .par_iter()
        .enumerate()
        .map(|(i, scan)| {
            let path = manifest.mask_path(i).expect("mask dir checked above");
            let mask = read_mask(&path)?;
            if mask.len() != scan.len() {
                return Err(Error::LengthMismatch {
                    what: format!("mask {}", path.display()),
                    expected: scan.len(),
                    found: mask.len(),
                });
            }
            Ok(mask)
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}
