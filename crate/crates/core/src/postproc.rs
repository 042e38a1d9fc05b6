//! Prediction fusion: close-range ensemble of a single-scan and a multi-scan
//! prediction stream, followed by sequence-wise voting weighted by range.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geom::{self, CLOSE_LIMIT};
use crate::seqio::{self, Provenance};

/// Radius below which the single-scan stream wins the ensemble, meters.
pub const DEFAULT_BOUNDARY: f64 = CLOSE_LIMIT;
/// Lower clamp of the range weight.
pub const MIN_WEIGHT: f64 = 0.1;
/// Scale of the range weight, meters.
pub const WEIGHT_SCALE: f64 = 20.0;

/// `max(0.1, 20 / (r + 20))`: 1 at the sensor, 0.5 at 20 m, clamped to 0.1
/// from 180 m on.
pub fn range_weight(r: f64) -> Result<f64> {
    if r.is_nan() || r < 0.0 {
        return Err(Error::NegativeRadius(r));
    }
    Ok(MIN_WEIGHT.max(WEIGHT_SCALE / (r + WEIGHT_SCALE)))
}

/// Hard-label predictions for every point of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePredictions {
    pub frame: u32,
    pub labels: Vec<u16>,
    /// Radius of each point in this frame's reference coordinates.
    pub radii: Vec<f64>,
    pub provenance: Vec<Provenance>,
    pub is_reference: Vec<bool>,
}

impl FramePredictions {
    pub fn new(
        frame: u32,
        labels: Vec<u16>,
        radii: Vec<f64>,
        provenance: Vec<Provenance>,
        is_reference: Vec<bool>,
    ) -> Result<Self> {
        let n = labels.len();
        for (what, len) in [("radii", radii.len()), ("provenance", provenance.len()), ("reference flags", is_reference.len())] {
            if len != n {
                return Err(Error::LengthMismatch {
                    what: format!("{what} of frame {frame}"),
                    expected: n,
                    found: len,
                });
            }
        }
        if let Some(&r) = radii.iter().find(|r| r.is_nan() || **r < 0.0) {
            return Err(Error::NegativeRadius(r));
        }
        Ok(FramePredictions {
            frame,
            labels,
            radii,
            provenance,
            is_reference,
        })
    }

    /// Predictions whose reference flag follows from provenance: a point is
    /// a reference point iff it came from scan `frame`.
    pub fn from_provenance(frame: u32, labels: Vec<u16>, radii: Vec<f64>, provenance: Vec<Provenance>) -> Result<Self> {
        let is_reference = provenance.iter().map(|p| p.source_scan == frame).collect();
        Self::new(frame, labels, radii, provenance, is_reference)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Takes the single-scan label for reference points closer than `boundary`
/// and the multi-scan label everywhere else.
pub fn ensemble_merge(single: &FramePredictions, multi: &FramePredictions, boundary: f64) -> Result<FramePredictions> {
    let mismatch = |detail: String| Error::KeyMismatch {
        frame: multi.frame,
        detail,
    };
    let single_index: HashMap<Provenance, usize> =
        single.provenance.iter().enumerate().map(|(i, p)| (*p, i)).collect();
    let mut merged = multi.clone();
    let mut matched = 0usize;
    for i in 0..multi.len() {
        if !multi.is_reference[i] {
            continue;
        }
        let key = multi.provenance[i];
        let Some(&j) = single_index.get(&key) else {
            return Err(mismatch(format!(
                "reference point {key:?} has no single-scan prediction"
            )));
        };
        matched += 1;
        if multi.radii[i] < boundary {
            merged.labels[i] = single.labels[j];
        }
    }
    if matched != single.len() {
        let present: std::collections::HashSet<Provenance> = multi
            .provenance
            .iter()
            .zip(&multi.is_reference)
            .filter(|(_, &r)| r)
            .map(|(p, _)| *p)
            .collect();
        let missing = single.provenance.iter().find(|p| !present.contains(p));
        return Err(mismatch(match missing {
            Some(p) => format!("single-scan point {p:?} is not a reference point of the multi-scan frame"),
            None => "duplicate reference points in the multi-scan frame".into(),
        }));
    }
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Observation {
    frame: u32,
    class: u16,
    weight: f64,
}

/// Weighted class observations per physical point.
///
/// Contributions are kept individually and summed in `(frame, class)` order
/// when read, so the totals are bit-identical for any frame order and any
/// way of splitting the work into partial tallies.
#[derive(Debug, Clone, Default)]
pub struct VoteTally {
    points: HashMap<Provenance, Vec<Observation>>,
}

impl VoteTally {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_frame(&mut self, frame: &FramePredictions) -> Result<()> {
        for i in 0..frame.len() {
            let weight = range_weight(frame.radii[i])?;
            self.points.entry(frame.provenance[i]).or_default().push(Observation {
                frame: frame.frame,
                class: frame.labels[i],
                weight,
            });
        }
        Ok(())
    }

    /// Adds every observation of `other`.
    pub fn merge(&mut self, other: VoteTally) {
        for (key, mut obs) in other.points {
            self.points.entry(key).or_default().append(&mut obs);
        }
    }

    pub fn point_count(&self) -> usize {
        self.points.len()
    }

    pub fn observation_count(&self) -> usize {
        self.points.values().map(Vec::len).sum()
    }

    pub fn contains(&self, point: &Provenance) -> bool {
        self.points.contains_key(point)
    }

    /// Accumulated weight per class, ordered by class id.
    pub fn weights(&self, point: &Provenance) -> Result<BTreeMap<u16, f64>> {
        let obs = self.points.get(point).ok_or(Error::UnseenPoint(*point))?;
        let mut sorted = obs.clone();
        sorted.sort_by(|a, b| {
            (a.frame, a.class)
                .cmp(&(b.frame, b.class))
                .then(a.weight.total_cmp(&b.weight))
        });
        let mut sums = BTreeMap::new();
        for o in sorted {
            *sums.entry(o.class).or_insert(0.0) += o.weight;
        }
        Ok(sums)
    }

    pub fn points(&self) -> impl Iterator<Item = &Provenance> {
        self.points.keys()
    }
}

pub fn accumulate_votes<'a>(frames: impl IntoIterator<Item = &'a FramePredictions>) -> Result<VoteTally> {
    let mut tally = VoteTally::new();
    for f in frames {
        tally.add_frame(f)?;
    }
    Ok(tally)
}

/// Class with the largest accumulated weight; ties go to the lowest id.
pub fn argmax_class(weights: &BTreeMap<u16, f64>) -> Option<u16> {
    let mut best: Option<(u16, f64)> = None;
    for (&class, &w) in weights {
        if best.is_none_or(|(_, bw)| w > bw) {
            best = Some((class, w));
        }
    }
    best.map(|(c, _)| c)
}

pub fn finalize_votes(tally: &VoteTally, point: &Provenance) -> Result<u16> {
    let weights = tally.weights(point)?;
    Ok(argmax_class(&weights).expect("tallied points have at least one observation"))
}

/// Input and output locations for [`postprocess_sequence`]. Every directory
/// holds one file per frame named by the reference scan (`000042.label`).
#[derive(Debug, Clone)]
pub struct PostprocessPaths {
    /// Single-scan predictions, one label per point of the original scan.
    pub single: PathBuf,
    /// Multi-scan predictions, aligned with the frame point files.
    pub multi: PathBuf,
    /// Provenance sidecars of the multi-scan frames.
    pub prov: PathBuf,
    /// Multi-scan frame point files (radii are taken from these).
    pub points: PathBuf,
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PostprocessSummary {
    pub frames: usize,
    pub points: usize,
    pub observations: usize,
}

fn frame_file(dir: &Path, frame: u32, ext: &str) -> PathBuf {
    dir.join(format!("{}.{ext}", seqio::frame_name(frame)))
}

/// Loads the ensemble-merged predictions of one frame plus the point count
/// of its reference scan.
fn load_merged_frame(paths: &PostprocessPaths, frame: u32, boundary: f64) -> Result<(FramePredictions, usize)> {
    let name = seqio::frame_name(frame);
    let (points, prov) = seqio::read_frame_with_provenance(
        frame_file(&paths.points, frame, "bin"),
        frame_file(&paths.prov, frame, "prov"),
    )?;
    let multi_labels = seqio::read_labels(frame_file(&paths.multi, frame, "label"))?;
    if multi_labels.len() != points.len() {
        return Err(Error::Alignment {
            frame: name,
            index: multi_labels.len().min(points.len()),
            detail: format!(
                "multi-scan prediction has {} labels for {} points",
                multi_labels.len(),
                points.len()
            ),
        });
    }
    let radii: Vec<f64> = points.iter().map(geom::radius).collect();
    let multi = FramePredictions::from_provenance(frame, multi_labels, radii, prov)?;

    let single_labels = seqio::read_labels(frame_file(&paths.single, frame, "label"))?;
    let mut ref_radius = vec![None; single_labels.len()];
    for i in (0..multi.len()).filter(|&i| multi.is_reference[i]) {
        let sp = multi.provenance[i].source_point as usize;
        if sp >= ref_radius.len() {
            return Err(Error::Alignment {
                frame: name,
                index: i,
                detail: format!(
                    "reference point {sp} beyond the {} single-scan predictions",
                    single_labels.len()
                ),
            });
        }
        ref_radius[sp] = Some(multi.radii[i]);
    }
    let single_radii = ref_radius
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            r.ok_or_else(|| Error::Alignment {
                frame: name.clone(),
                index: i,
                detail: "single-scan point missing from the multi-scan frame".into(),
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = single_labels.len();
    let single = FramePredictions::new(
        frame,
        single_labels,
        single_radii,
        (0..n as u32).map(|i| Provenance::new(frame, i)).collect(),
        vec![true; n],
    )?;
    Ok((ensemble_merge(&single, &multi, boundary)?, n))
}

/// Ensemble per frame, weighted voting over the whole sequence, then one
/// final label file per scan.
pub fn postprocess_sequence(paths: &PostprocessPaths, boundary: f64) -> Result<PostprocessSummary> {
    let frames: Vec<u32> = seqio::list_files(&paths.prov, "prov")?
        .iter()
        .map(|p| {
            seqio::parse_frame_name(p).ok_or_else(|| Error::Alignment {
                frame: p.display().to_string(),
                index: 0,
                detail: "provenance file name is not a frame number".into(),
            })
        })
        .collect::<Result<_>>()?;

    let partials: Vec<(VoteTally, (u32, usize))> = frames
        .par_iter()
        .map(|&f| {
            let (merged, n) = load_merged_frame(paths, f, boundary)?;
            let mut tally = VoteTally::new();
            tally.add_frame(&merged)?;
            Ok((tally, (f, n)))
        })
        .collect::<Result<_>>()?;

    let mut tally = VoteTally::new();
    let mut sizes = Vec::with_capacity(partials.len());
    for (partial, size) in partials {
        tally.merge(partial);
        sizes.push(size);
    }

    let written: Vec<usize> = sizes
        .par_iter()
        .map(|&(f, n)| {
            let labels = (0..n as u32)
                .map(|i| finalize_votes(&tally, &Provenance::new(f, i)))
                .collect::<Result<Vec<u16>>>()?;
            seqio::write_labels(frame_file(&paths.out, f, "label"), &labels)?;
            Ok(n)
        })
        .collect::<Result<_>>()?;

    Ok(PostprocessSummary {
        frames: frames.len(),
        points: written.iter().sum(),
        observations: tally.observation_count(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const CAR: u16 = 1;
    const TRUCK: u16 = 4;

    #[test]
    fn weight_anchors() {
        assert_eq!(range_weight(0.0).unwrap(), 1.0);
        assert_eq!(range_weight(20.0).unwrap(), 0.5);
        assert!((range_weight(180.0).unwrap() - 0.1).abs() <= 1e-12);
        assert_eq!(range_weight(380.0).unwrap(), 0.1);
        assert!(matches!(range_weight(-1.0), Err(Error::NegativeRadius(_))));
        assert!(range_weight(f64::NAN).is_err());
    }

    fn frame(frame: u32, rows: &[(u32, u32, u16, f64)]) -> FramePredictions {
        FramePredictions::from_provenance(
            frame,
            rows.iter().map(|r| r.2).collect(),
            rows.iter().map(|r| r.3).collect(),
            rows.iter().map(|r| Provenance::new(r.0, r.1)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ensemble_examples() {
        let single = frame(0, &[(0, 0, CAR, 10.0), (0, 1, CAR, 35.0)]);
        let multi = frame(0, &[(0, 0, TRUCK, 10.0), (0, 1, TRUCK, 35.0), (3, 9, TRUCK, 5.0)]);
        let merged = ensemble_merge(&single, &multi, DEFAULT_BOUNDARY).unwrap();
        assert_eq!(merged.labels, vec![CAR, TRUCK, TRUCK]);
        assert_eq!(merged.provenance, multi.provenance);
    }

    #[test]
    fn ensemble_key_mismatch() {
        let single = frame(0, &[(0, 0, CAR, 10.0)]);
        let multi = frame(0, &[(0, 0, TRUCK, 10.0), (0, 1, TRUCK, 12.0)]);
        assert!(matches!(ensemble_merge(&single, &multi, 20.0), Err(Error::KeyMismatch { .. })));

        let single = frame(0, &[(0, 0, CAR, 10.0), (0, 1, CAR, 12.0)]);
        let multi = frame(0, &[(0, 0, TRUCK, 10.0)]);
        assert!(matches!(ensemble_merge(&single, &multi, 20.0), Err(Error::KeyMismatch { .. })));
    }

    #[test]
    fn tally_examples() {
        let p = Provenance::new(5, 5);
        let t = accumulate_votes([&frame(5, &[(5, 5, CAR, 0.0)])]).unwrap();
        assert_eq!(t.weights(&p).unwrap(), BTreeMap::from([(CAR, 1.0)]));

        let frames = [
            frame(1, &[(5, 5, 1, 10.0)]),
            frame(2, &[(5, 5, 2, 60.0)]),
            frame(3, &[(5, 5, 2, 70.0)]),
        ];
        let t = accumulate_votes(&frames).unwrap();
        let w = t.weights(&p).unwrap();
        assert!((w[&1] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[&2] - (0.25 + 2.0 / 9.0)).abs() < 1e-12);
        assert!((w[&2] - 0.4722).abs() < 1e-4);
        assert_eq!(finalize_votes(&t, &p).unwrap(), 1);

        let mut split = accumulate_votes(&frames[..1]).unwrap();
        split.merge(accumulate_votes(&frames[1..]).unwrap());
        assert_eq!(split.weights(&p).unwrap(), w);
    }

    #[test]
    fn finalize_rules() {
        let p = Provenance::new(0, 0);
        let tie = accumulate_votes(&[frame(1, &[(0, 0, 7, 20.0)]), frame(2, &[(0, 0, 3, 20.0)])]).unwrap();
        assert_eq!(finalize_votes(&tie, &p).unwrap(), 3);

        let single = accumulate_votes(&[frame(1, &[(0, 0, 12, 90.0)])]).unwrap();
        assert_eq!(finalize_votes(&single, &p).unwrap(), 12);

        assert!(matches!(
            finalize_votes(&single, &Provenance::new(1, 1)),
            Err(Error::UnseenPoint(_))
        ));
    }

    #[test]
    fn near_majority_beats_far_outlier() {
        let p = Provenance::new(0, 0);
        let mut frames: Vec<_> = (0..5).map(|f| frame(f, &[(0, 0, CAR, 8.0 + f as f64 * 3.0)])).collect();
        frames.push(frame(9, &[(0, 0, TRUCK, 2.0)]));
        assert_eq!(finalize_votes(&accumulate_votes(&frames).unwrap(), &p).unwrap(), CAR);
    }

    proptest! {
        #[test]
        fn weight_bounded_and_monotone(a in 0.0f64..1e4, b in 0.0f64..1e4) {
            let (wa, wb) = (range_weight(a).unwrap(), range_weight(b).unwrap());
            prop_assert!((0.1..=1.0).contains(&wa));
            if a > 0.0 { prop_assert!(wa < 1.0); }
            if a <= b { prop_assert!(wa >= wb); }
        }

        #[test]
        fn argmax_invariant_under_scaling(ws in prop::collection::btree_map(0u16..20, 0.1f64..40.0, 1..10), s in 0.01f64..100.0) {
            let scaled: BTreeMap<u16, f64> = ws.iter().map(|(&c, &w)| (c, w * s)).collect();
            let before = argmax_class(&ws).unwrap();
            let after = argmax_class(&scaled).unwrap();
            // Scaling by s is monotone, so only exact ties can move.
            prop_assert!(before == after || (ws[&before] * s == scaled[&after]));
            prop_assert!(ws[&before] > 0.0);
        }
    }
}
