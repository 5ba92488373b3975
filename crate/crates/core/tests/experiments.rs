//! Small end-to-end runs of the library on synthetic scenes.

use pvdeblur::io::{
    load_flo, load_png, load_pvol, save_flo, save_png, save_pvol, SequenceManifest,
};
use pvdeblur::metrics::{aligned_metric, endpoint_error, interior_mask, psnr, Metric};
use pvdeblur::pipeline::{deblur_sequence, evaluate_sequence, stabilization_curve};
use pvdeblur::synth::{bim_loss, render_sequence, PairKind, PairSet};
use pvdeblur::tvl1::estimate_flow;
use pvdeblur::volume::{
    build_naive_pixel_volume, build_pixel_volume, center_slice, ideal_warp, majority_warp,
    pv_statistics,
};
use pvdeblur::warp::backward_warp;
use pvdeblur::{FlowField, FlowParams, PipelineConfig, SceneSpec};

fn scene(seed: u64, velocity: (f64, f64)) -> SceneSpec {
    SceneSpec {
        seed,
        width: 64,
        height: 64,
        frames: 2,
        velocity,
        ..Default::default()
    }
}

#[test]
fn flow_recovers_translation_and_rotation() {
    let mask = interior_mask(64, 64, 0.8);
    let seq = render_sequence(&scene(1, (3.0, -2.0))).unwrap();
    let flow = estimate_flow(&seq.sharp[1], &seq.sharp[0], &FlowParams::default()).unwrap();
    assert!(endpoint_error(&flow, &seq.flows[0], &mask).unwrap() < 0.1);

    let seq = render_sequence(&SceneSpec {
        rotation_deg: 1.0,
        ..scene(2, (0.0, 0.0))
    })
    .unwrap();
    let flow = estimate_flow(&seq.sharp[1], &seq.sharp[0], &FlowParams::default()).unwrap();
    assert!(endpoint_error(&flow, &seq.flows[0], &mask).unwrap() < 0.25);
}

#[test]
fn estimated_flow_warps_previous_onto_current() {
    let seq = render_sequence(&scene(3, (1.5, 0.5))).unwrap();
    let flow = estimate_flow(&seq.sharp[1], &seq.sharp[0], &FlowParams::default()).unwrap();
    let (warped, mask) = backward_warp(&seq.sharp[0], &flow).unwrap();
    let zero = FlowField::zeros(64, 64);
    let estimated = bim_loss(&flow, &seq.sharp[0], &seq.sharp[1]).unwrap();
    assert!(estimated < bim_loss(&zero, &seq.sharp[0], &seq.sharp[1]).unwrap() / 10.0);
    assert!(mask.count_valid() > 64 * 60);
    assert!(psnr(&warped, &seq.sharp[1]).unwrap() > 30.0);
}

#[test]
fn majority_beats_plain_and_naive_warps_under_outliers() {
    let seq = render_sequence(&scene(4, (2.0, 1.0))).unwrap();
    let gt = &seq.flows[0];
    // every seventh vector points far away
    let bad = FlowField::from_fn(64, 64, |x, y| {
        let (u, v) = gt.at(x, y);
        if (x * 13 + y * 7) % 7 == 0 {
            (u + 9.0, v - 7.0)
        } else {
            (u, v)
        }
    })
    .unwrap();
    let target = &seq.sharp[1];
    let pv = build_pixel_volume(&seq.sharp[0], &bad, 5).unwrap();
    let naive = build_naive_pixel_volume(&seq.sharp[0], &bad, 5).unwrap();
    let score = |f: &pvdeblur::Frame| aligned_metric(f, target, 4, Metric::Psnr).unwrap().score;
    let majority = score(&majority_warp(&pv).0);
    assert!(majority > score(&center_slice(&pv)) + 1.0);
    assert!(majority > score(&majority_warp(&naive).0) + 1.0);
    assert!(score(&ideal_warp(&pv, target).unwrap()) >= majority);
    assert!(pv_statistics(&pv, target, &[0]).unwrap().majority_fraction > 0.9);
}

#[test]
fn pipeline_denoises_a_noisy_sequence() {
    let seq = render_sequence(&SceneSpec {
        seed: 5,
        width: 64,
        height: 64,
        frames: 8,
        substeps: 3,
        velocity: (1.0, -1.0),
        noise_sigma: 0.03,
        ..Default::default()
    })
    .unwrap();
    let est = deblur_sequence(&seq.blurred, &PipelineConfig::default()).unwrap();
    assert_eq!(est[0], seq.blurred[0]);
    let input = evaluate_sequence(&seq.blurred, &seq.sharp, 4).unwrap();
    let output = evaluate_sequence(&est, &seq.sharp, 4).unwrap();
    let curve = stabilization_curve(std::slice::from_ref(&output)).unwrap();
    assert!(curve[7].mean_aligned_psnr > curve[0].mean_aligned_psnr + 1.0);
    assert!(output[7].aligned_psnr > input[7].aligned_psnr + 1.0);
}

#[test]
fn pair_kinds_select_frames() {
    let seq = render_sequence(&SceneSpec {
        frames: 3,
        substeps: 5,
        ..scene(6, (2.0, 0.0))
    })
    .unwrap();
    let pairs = PairSet::from_sequence(&seq);
    assert_eq!(pairs.len(), 2);
    let p = &pairs.pairs[1];
    assert_eq!(
        p.frames(PairKind::BlurSharp),
        (&seq.blurred[1], &seq.sharp[2])
    );
    assert_eq!(
        p.frames(PairKind::SharpBlur),
        (&seq.sharp[1], &seq.blurred[2])
    );
    assert_eq!(p.gt_flow, seq.flows[1]);
}

#[test]
fn files_round_trip_through_disk() {
    let dir = tempfile::tempdir().unwrap();
    let seq = render_sequence(&scene(7, (1.0, 1.0))).unwrap();
    let png = dir.path().join("f.png");
    save_png(&seq.sharp[0], &png).unwrap();
    assert_eq!(load_png(&png).unwrap(), seq.sharp[0]);

    let flo = dir.path().join("f.flo");
    save_flo(&seq.flows[0], &flo).unwrap();
    assert_eq!(load_flo(&flo).unwrap(), seq.flows[0]);

    let pv = build_pixel_volume(&seq.sharp[0], &seq.flows[0], 3).unwrap();
    let pvol = dir.path().join("v.pvol");
    save_pvol(&pv, &pvol).unwrap();
    assert_eq!(load_pvol(&pvol).unwrap(), pv);

    let manifest = SequenceManifest {
        sharp: vec!["f.png".into()],
        blurred: vec!["f.png".into()],
        flows: vec![],
        metadata: vec![("seed".into(), "7".into())],
    };
    let path = dir.path().join("manifest.txt");
    manifest.save(&path).unwrap();
    let (back, base) = SequenceManifest::load(&path).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(base, dir.path());
    assert_eq!(back.metadata_value("seed"), Some("7"));
    assert!(load_png(dir.path().join("missing.png")).is_err());
}
