//! Distance-based selection of the scans accumulated around a reference scan.
//!
//! Two greedy chains walk away from the reference, one into the past and one
//! into the future. Each chain accepts a scan when its translation is at
//! least `min_dist` from the chain's last accepted pose (initially the
//! reference). The `accumulate_length` accepted scans closest in translation
//! to the reference form the window.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::geom::Pose;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowParams {
    /// Number of scans accumulated besides the reference.
    pub accumulate_length: usize,
    /// Minimum translation between consecutive selected scans, meters.
    pub min_dist: f64,
}

impl WindowParams {
    pub fn validate(&self) -> Result<()> {
        if self.accumulate_length == 0 {
            return Err(Error::InvalidParams("accumulate_length must be positive".into()));
        }
        if !(self.min_dist > 0.0 && self.min_dist.is_finite()) {
            return Err(Error::InvalidParams(format!(
                "min_dist must be positive, got {}",
                self.min_dist
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Direction {
    Past,
    Future,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowEntry {
    pub scan_index: usize,
    pub direction: Direction,
    /// Translation distance to the reference pose.
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanWindow {
    pub reference: usize,
    /// Ordered by distance to the reference (then temporal offset, past first).
    pub selected: Vec<WindowEntry>,
}

impl ScanWindow {
    pub fn scan_indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.selected.iter().map(|e| e.scan_index)
    }
}

/// Greedy chain in one direction; `order` yields scan indices walking away
/// from the reference.
fn chain(poses: &[Pose], reference: usize, order: impl Iterator<Item = usize>, min_dist: f64) -> Vec<usize> {
    let mut anchor = &poses[reference];
    let mut accepted = Vec::new();
    for i in order {
        if poses[i].translation_distance(anchor) >= min_dist {
            accepted.push(i);
            anchor = &poses[i];
        }
    }
    accepted
}

/// All chain candidates before truncation to `accumulate_length`.
pub fn window_candidates(poses: &[Pose], ref_idx: usize, min_dist: f64) -> Result<Vec<WindowEntry>> {
    if ref_idx >= poses.len() {
        return Err(Error::IndexOutOfRange {
            index: ref_idx,
            len: poses.len(),
        });
    }
    let reference = &poses[ref_idx];
    let entry = |scan_index, direction| WindowEntry {
        scan_index,
        direction,
        distance: poses[scan_index].translation_distance(reference),
    };
    let past = chain(poses, ref_idx, (0..ref_idx).rev(), min_dist);
    let future = chain(poses, ref_idx, ref_idx + 1..poses.len(), min_dist);
    let mut candidates: Vec<WindowEntry> = past
        .into_iter()
        .map(|i| entry(i, Direction::Past))
        .chain(future.into_iter().map(|i| entry(i, Direction::Future)))
        .collect();
    candidates.sort_by(|a, b| {
        a.distance
            .partial_cmp(&b.distance)
            .unwrap_or(Ordering::Equal)
            .then(a.scan_index.abs_diff(ref_idx).cmp(&b.scan_index.abs_diff(ref_idx)))
            .then(a.direction.cmp(&b.direction))
    });
    Ok(candidates)
}

pub fn select_window(poses: &[Pose], ref_idx: usize, params: &WindowParams) -> Result<ScanWindow> {
    params.validate()?;
    let mut selected = window_candidates(poses, ref_idx, params.min_dist)?;
    selected.truncate(params.accumulate_length);
    Ok(ScanWindow {
        reference: ref_idx,
        selected,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn x_axis(n: usize, spacing: f64) -> Vec<Pose> {
        (0..n).map(|i| Pose::translation(i as f64 * spacing, 0.0, 0.0)).collect()
    }

    #[test]
    fn unit_spacing_example() {
        let poses = x_axis(21, 1.0);
        let params = WindowParams {
            accumulate_length: 4,
            min_dist: 2.0,
        };
        let w = select_window(&poses, 10, &params).unwrap();
        assert_eq!(w.scan_indices().collect::<Vec<_>>(), vec![8, 12, 6, 14]);
        assert_eq!(w.selected[0].direction, Direction::Past);
        assert_eq!(w.selected[1].direction, Direction::Future);
    }

    #[test]
    fn stationary_vehicle_selects_nothing() {
        let poses = vec![Pose::translation(3.0, 1.0, 0.0); 30];
        let params = WindowParams {
            accumulate_length: 20,
            min_dist: 2.0,
        };
        assert!(select_window(&poses, 15, &params).unwrap().selected.is_empty());
    }

    #[test]
    fn coverage_scales_with_length_times_min_dist() {
        // Dense poses (0.1 m apart) so the chains land almost exactly on
        // multiples of min_dist; 20 scans alternate past/future.
        let poses = x_axis(2001, 0.1);
        let params = WindowParams {
            accumulate_length: 20,
            min_dist: 2.0,
        };
        let w = select_window(&poses, 1000, &params).unwrap();
        assert_eq!(w.selected.len(), 20);
        let lo = w.scan_indices().min().unwrap() as f64 * 0.1;
        let hi = w.scan_indices().max().unwrap() as f64 * 0.1;
        assert!(((hi - lo) - 40.0).abs() <= 2.0 + 1e-9, "span {}", hi - lo);
    }

    #[test]
    fn short_sequences_return_fewer() {
        let poses = x_axis(3, 5.0);
        let params = WindowParams {
            accumulate_length: 10,
            min_dist: 2.0,
        };
        let w = select_window(&poses, 0, &params).unwrap();
        assert_eq!(w.scan_indices().collect::<Vec<_>>(), vec![1, 2]);
        assert!(select_window(&poses, 0, &WindowParams { accumulate_length: 1, ..params })
            .unwrap()
            .selected
            .len()
            == 1);
    }

    #[test]
    fn skips_scans_below_threshold() {
        // Anchor stays at the reference until a scan clears min_dist.
        let xs = [0.0, 0.5, 1.0, 1.9, 2.5, 3.0, 5.0];
        let poses: Vec<Pose> = xs.iter().map(|&x| Pose::translation(x, 0.0, 0.0)).collect();
        let w = select_window(&poses, 0, &WindowParams { accumulate_length: 10, min_dist: 2.0 }).unwrap();
        assert_eq!(w.scan_indices().collect::<Vec<_>>(), vec![4, 6]);
    }

    #[test]
    fn rejects_bad_reference() {
        let poses = x_axis(3, 1.0);
        let params = WindowParams {
            accumulate_length: 2,
            min_dist: 1.0,
        };
        assert!(matches!(
            select_window(&poses, 3, &params),
            Err(Error::IndexOutOfRange { index: 3, len: 3 })
        ));
    }

    fn arb_track() -> impl Strategy<Value = Vec<Pose>> {
        prop::collection::vec((0.0f64..3.0, -0.5f64..0.5), 1..60).prop_map(|steps| {
            let mut x = 0.0;
            let mut y = 0.0;
            steps
                .into_iter()
                .map(|(dx, dy)| {
                    x += dx;
                    y += dy;
                    Pose::translation(x, y, 0.0)
                })
                .collect()
        })
    }

    proptest! {
        #[test]
        fn consecutive_selected_scans_are_spaced(poses in arb_track(), r in 0usize..60, len in 1usize..25, d in 0.1f64..4.0) {
            let r = r % poses.len();
            let params = WindowParams { accumulate_length: len, min_dist: d };
            let w = select_window(&poses, r, &params).unwrap();
            prop_assert!(w.selected.len() <= len);
            for dir in [Direction::Past, Direction::Future] {
                let mut chain: Vec<usize> = w.selected.iter().filter(|e| e.direction == dir).map(|e| e.scan_index).collect();
                chain.sort_by_key(|&i| i.abs_diff(r));
                let mut anchor = r;
                for i in chain {
                    prop_assert!(poses[i].translation_distance(&poses[anchor]) >= d);
                    anchor = i;
                }
            }
        }

        #[test]
        fn smaller_min_dist_never_fewer_candidates(poses in arb_track(), r in 0usize..60, d in 0.2f64..4.0, shrink in 0.1f64..1.0) {
            let r = r % poses.len();
            let big = window_candidates(&poses, r, d).unwrap().len();
            let small = window_candidates(&poses, r, d * shrink).unwrap().len();
            prop_assert!(small >= big);
        }
    }
}
