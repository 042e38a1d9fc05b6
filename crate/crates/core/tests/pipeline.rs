use multiscan::accumulate::AccumMode;
use multiscan::downsample::{preprocess_frame, preprocess_sequence, DownsampleParams, PreprocessConfig};
use multiscan::evaluate::voxel_distribution;
use multiscan::geom::Pose;
use multiscan::seqio::{self, load_masks, load_sequence, ScanRecord, SequenceManifest};
use multiscan::synth::{generate_sequence, SceneSpec};
use multiscan::voxelgrid::voxelize;
use multiscan::window::WindowParams;
use multiscan::Error;

fn config(mode: AccumMode) -> PreprocessConfig {
    PreprocessConfig {
        window: WindowParams { accumulate_length: 40, min_dist: 2.0 },
        mode,
        downsample: DownsampleParams {
            voxel_size: 0.1,
            lower_range: 20.0,
            upper_range: 120.0,
            max_voxel: 120_000,
            ref_dist: 5.0,
            rng_seed: 3,
            window_growth: 2.0,
        },
        carry_labels: true,
    }
}

#[test]
fn single_scan_keeps_its_points() {
    let spec = SceneSpec::street(2, 1);
    let scan = multiscan::synth::generate_scan(&spec, 0);
    let record = ScanRecord::new(0, scan.points.clone(), Some(scan.labels.clone()), Pose::identity()).unwrap();
    let frame = preprocess_frame(&[record], None, 0, &config(AccumMode::Smearing)).unwrap();
    assert_eq!(frame.points.len(), scan.points.len());
    assert!(frame.points.iter().all(|f| f.is_reference));
    let pts: Vec<_> = frame.points.iter().map(|f| f.point).collect();
    assert_eq!(pts, scan.points);
}

#[test]
fn synthetic_sequence_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let seq = dir.path().join("seq");
    generate_sequence(&SceneSpec::street(4, 12), &seq).unwrap();
    let manifest = SequenceManifest::from_dir(&seq).unwrap();
    let scans = load_sequence(&manifest).unwrap();
    let masks = load_masks(&manifest, &scans).unwrap().unwrap();
    assert_eq!(scans.len(), 12);

    let cfg = config(AccumMode::NonSmearing);
    assert!(matches!(preprocess_sequence(&scans, None, &cfg, &dir.path().join("x")), Err(Error::MissingMask { .. })));

    let out = dir.path().join("out");
    let stats = preprocess_sequence(&scans, Some(&masks), &cfg, &out).unwrap();
    assert_eq!(stats.len(), 12);
    for (s, scan) in stats.iter().zip(&scans) {
        assert_eq!(s.reference_points, scan.len());
        assert!(s.voxel_count <= 120_000);
        assert!(s.points >= s.reference_points);
        let name = seqio::frame_name(s.reference_scan);
        let (pts, prov) = seqio::read_frame_with_provenance(
            out.join("points").join(format!("{name}.bin")),
            out.join("prov").join(format!("{name}.prov")),
        )
        .unwrap();
        assert_eq!(pts.len(), s.points);
        assert_eq!(voxelize(&pts, 0.1).unwrap().len(), s.voxel_count);
        // Moving points only appear from the reference scan.
        for p in prov.iter().filter(|p| p.source_scan != s.reference_scan) {
            assert!(!masks[p.source_scan as usize].0[p.source_point as usize]);
        }
        let labels = seqio::read_labels(out.join("labels").join(format!("{name}.label"))).unwrap();
        for (l, p) in labels.iter().zip(&prov) {
            assert_eq!(*l, scans[p.source_scan as usize].labels.as_ref().unwrap()[p.source_point as usize]);
        }
    }

    let before = voxel_distribution(&scans[6].points, 0.1).unwrap().shares();
    let frame = seqio::read_points(out.join("points/000006.bin")).unwrap();
    let after = voxel_distribution(&frame, 0.1).unwrap().shares();
    assert!(after[2] > before[2], "{before:?} -> {after:?}");
}
