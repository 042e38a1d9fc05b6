use std::collections::{BTreeMap, HashSet};

use multiscan::evaluate::{accumulate_confusion, iou, miou, EvalConfig, RangeConfusion, RangeReport};
use multiscan::geom::{bucket_of, RangeBucket};
use multiscan::postproc::{accumulate_votes, finalize_votes, range_weight, FramePredictions};
use multiscan::seqio::Provenance;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Random frames over `points` physical points; each point gets up to
/// `max_obs` observations spread over distinct frames.
fn random_frames(seed: u64, points: u32, max_obs: usize, classes: u16) -> Vec<FramePredictions> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_frames = max_obs as u32;
    let mut rows: Vec<Vec<(Provenance, u16, f64)>> = vec![Vec::new(); n_frames as usize];
    for p in 0..points {
        let prov = Provenance::new(p % n_frames, p);
        let k = rng.random_range(1..=max_obs);
        let mut frames: Vec<u32> = (0..n_frames).collect();
        frames.shuffle(&mut rng);
        for &f in &frames[..k] {
            rows[f as usize].push((prov, rng.random_range(1..=classes), rng.random_range(0.0..200.0)));
        }
    }
    rows.into_iter()
        .enumerate()
        .map(|(f, r)| {
            FramePredictions::from_provenance(
                f as u32,
                r.iter().map(|x| x.1).collect(),
                r.iter().map(|x| x.2).collect(),
                r.iter().map(|x| x.0).collect(),
            )
            .unwrap()
        })
        .collect()
}

/// Independent recomputation: per point, per class, sum weights with an
/// explicit loop and pick the strict maximum scanning classes upward.
fn brute_force_votes(frames: &[FramePredictions]) -> BTreeMap<Provenance, u16> {
    let mut sums: BTreeMap<Provenance, BTreeMap<u16, Vec<(u32, f64)>>> = BTreeMap::new();
    for f in frames {
        for i in 0..f.labels.len() {
            let w = (20.0 / (f.radii[i] + 20.0)).max(0.1);
            sums.entry(f.provenance[i]).or_default().entry(f.labels[i]).or_default().push((f.frame, w));
        }
    }
    sums.into_iter()
        .map(|(p, classes)| {
            let mut best = (0u16, f64::NEG_INFINITY);
            for (c, mut obs) in classes {
                obs.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let total: f64 = obs.iter().map(|o| o.1).sum();
                if total > best.1 {
                    best = (c, total);
                }
            }
            (p, best.0)
        })
        .collect()
}

#[test]
fn voting_matches_brute_force_and_ignores_frame_order() {
    for seed in 0..4 {
        let mut frames = random_frames(seed, 1000, 40, 6);
        let expected = brute_force_votes(&frames);
        let tally = accumulate_votes(&frames).unwrap();
        assert_eq!(tally.point_count(), expected.len());
        for (p, c) in &expected {
            assert_eq!(finalize_votes(&tally, p).unwrap(), *c, "point {p:?}");
        }
        frames.reverse();
        frames.shuffle(&mut ChaCha8Rng::seed_from_u64(seed + 100));
        let shuffled = accumulate_votes(&frames).unwrap();
        for p in expected.keys() {
            assert_eq!(tally.weights(p).unwrap(), shuffled.weights(p).unwrap());
        }
    }
}

#[test]
fn weight_clamps_and_decreases() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut radii: Vec<f64> = (0..100_000).map(|_| rng.random_range(0.0..400.0)).collect();
    radii.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let w: Vec<f64> = radii.iter().map(|&r| range_weight(r).unwrap()).collect();
    assert!(w.iter().all(|&x| (0.1..=1.0).contains(&x)));
    assert!(w.windows(2).all(|p| p[1] <= p[0]));
    for (&r, &x) in radii.iter().zip(&w) {
        if r >= 180.0 {
            assert_eq!(x, 0.1);
        }
    }
}

struct Instance {
    gt: Vec<u16>,
    pred: Vec<u16>,
    radii: Vec<f64>,
}

fn random_instance(seed: u64, n: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Instance {
        gt: (0..n).map(|_| rng.random_range(0..=5)).collect(),
        pred: (0..n).map(|_| rng.random_range(0..=5)).collect(),
        radii: (0..n).map(|_| rng.random_range(0.0..90.0)).collect(),
    }
}

/// IoU from explicit point-index sets, skipping ignored ground truth.
fn set_iou(inst: &Instance, class: u16, bucket: Option<RangeBucket>) -> Option<f64> {
    let idx = |v: &[u16]| -> HashSet<usize> {
        (0..inst.gt.len())
            .filter(|&i| inst.gt[i] != 0 && bucket.is_none_or(|b| bucket_of(inst.radii[i]) == b) && v[i] == class)
            .collect()
    };
    let g = idx(&inst.gt);
    let p = idx(&inst.pred);
    let union = g.union(&p).count();
    (union > 0).then(|| 100.0 * g.intersection(&p).count() as f64 / union as f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn evaluator_matches_set_oracle(seed in any::<u64>(), n in 0usize..1000) {
        let inst = random_instance(seed, n);
        let config = EvalConfig { num_ids: 6, ignore: Some(0) };
        let mut conf = RangeConfusion::new(6);
        accumulate_confusion(&inst.gt, &inst.pred, &inst.radii, &config, &mut conf).unwrap();

        let mut sum = conf.buckets[0].clone();
        sum.merge(&conf.buckets[1]);
        sum.merge(&conf.buckets[2]);
        prop_assert_eq!(&sum, &conf.overall);

        let classes = config.classes();
        prop_assert_eq!(&classes, &vec![1, 2, 3, 4, 5]);
        for (matrix, bucket) in [(&conf.overall, None)].into_iter().chain(RangeBucket::ALL.iter().map(|&b| (conf.bucket(b), Some(b)))) {
            let oracle: Vec<Option<f64>> = classes.iter().map(|&c| set_iou(&inst, c, bucket)).collect();
            for (&c, o) in classes.iter().zip(&oracle) {
                match (iou(matrix, c), o) {
                    (Some(a), Some(b)) => prop_assert!((a - b).abs() <= 1e-12),
                    (a, b) => prop_assert_eq!(a, *b),
                }
            }
            let defined: Vec<f64> = oracle.iter().flatten().copied().collect();
            match miou(matrix, &classes) {
                Ok(m) => prop_assert!((m - defined.iter().sum::<f64>() / defined.len() as f64).abs() <= 1e-12),
                Err(_) => prop_assert!(defined.is_empty()),
            }
        }
        let report = RangeReport::from_confusion(&conf, &config);
        prop_assert_eq!(report.rows.len(), 4);
    }
}
