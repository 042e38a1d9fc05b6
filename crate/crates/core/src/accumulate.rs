//! Egomotion-compensated fusion of a scan window into the reference frame.

use crate::error::{Error, Result};
use crate::geom::{relative_to_reference, Point3};
use crate::seqio::{MovingMask, Provenance, ScanRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AccumMode {
    /// Moving points of non-reference scans are removed before fusion.
    NonSmearing,
    /// Everything is fused, moving objects included.
    Smearing,
}

impl std::str::FromStr for AccumMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "non-smearing" | "nonsmearing" | "non_smearing" => Ok(AccumMode::NonSmearing),
            "smearing" => Ok(AccumMode::Smearing),
            _ => Err(format!("unknown accumulation mode `{s}` (expected smearing or non-smearing)")),
        }
    }
}

/// A point of a multi-scan frame, in reference-scan coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedPoint {
    pub point: Point3,
    pub is_reference: bool,
    pub provenance: Provenance,
    pub label: Option<u16>,
}

/// Result of [`strip_moving`]: the surviving points plus the original index
/// of each survivor, so provenance stays attached.
#[derive(Debug, Clone, PartialEq)]
pub struct StrippedScan {
    pub record: ScanRecord,
    pub source_points: Vec<u32>,
}

/// Removes points flagged as moving. Survivor order is preserved.
pub fn strip_moving(scan: &ScanRecord, mask: &MovingMask) -> Result<StrippedScan> {
    if mask.len() != scan.len() {
        return Err(Error::LengthMismatch {
            what: format!("moving mask of scan {}", scan.scan_index),
            expected: scan.len(),
            found: mask.len(),
        });
    }
    let keep: Vec<u32> = (0..scan.len() as u32).filter(|&i| !mask.0[i as usize]).collect();
    let points = keep.iter().map(|&i| scan.points[i as usize]).collect();
    let labels = scan
        .labels
        .as_ref()
        .map(|l| keep.iter().map(|&i| l[i as usize]).collect());
    Ok(StrippedScan {
        record: ScanRecord {
            scan_index: scan.scan_index,
            points,
            labels,
            pose: scan.pose,
        },
        source_points: keep,
    })
}

/// One non-reference scan of a window with its optional moving mask.
#[derive(Debug, Clone, Copy)]
pub struct WindowScan<'a> {
    pub scan: &'a ScanRecord,
    pub mask: Option<&'a MovingMask>,
}

/// Fuses `sources` into the frame of `reference`.
///
/// Reference points come first, untransformed and in file order. Each
/// source scan follows in the given order. Non-reference points keep their
/// ground-truth label only when `carry_labels` is set (training data).
pub fn accumulate_window(
    reference: &ScanRecord,
    sources: &[WindowScan<'_>],
    mode: AccumMode,
    carry_labels: bool,
) -> Result<Vec<FusedPoint>> {
    if mode == AccumMode::NonSmearing {
        if let Some(missing) = sources.iter().find(|s| s.mask.is_none()) {
            return Err(Error::MissingMask {
                scan: missing.scan.scan_index,
            });
        }
    }
    let capacity = reference.len() + sources.iter().map(|s| s.scan.len()).sum::<usize>();
    let mut fused = Vec::with_capacity(capacity);

    let ref_labels = reference.labels.as_deref();
    fused.extend(reference.points.iter().enumerate().map(|(i, p)| FusedPoint {
        point: *p,
        is_reference: true,
        provenance: Provenance::new(reference.scan_index, i as u32),
        label: ref_labels.map(|l| l[i]),
    }));

    for source in sources {
        let scan = source.scan;
        let moving = match (mode, source.mask) {
            (AccumMode::NonSmearing, Some(mask)) => {
                if mask.len() != scan.len() {
                    return Err(Error::LengthMismatch {
                        what: format!("moving mask of scan {}", scan.scan_index),
                        expected: scan.len(),
                        found: mask.len(),
                    });
                }
                Some(&mask.0)
            }
            _ => None,
        };
        let to_ref = relative_to_reference(&reference.pose, &scan.pose);
        let labels = scan.labels.as_deref().filter(|_| carry_labels);
        for (i, p) in scan.points.iter().enumerate() {
            if moving.is_some_and(|m| m[i]) {
                continue;
            }
            fused.push(FusedPoint {
                point: to_ref.transform_point(p),
                is_reference: false,
                provenance: Provenance::new(scan.scan_index, i as u32),
                label: labels.map(|l| l[i]),
            });
        }
    }
    Ok(fused)
}
