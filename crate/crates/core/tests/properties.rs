use numpro_core::metrics::iou;
use numpro_core::overlay::{annotate_sequence, plan_indices, FrameImage, OverlayConfig, Rgb, SamplingPlan, SamplingRatio};
use numpro_core::parse::{parse_moment, Validity};
use numpro_core::prompt::{build_qa, seconds_to_frames};
use numpro_core::span::{frames_to_seconds, TemporalSpan};
use proptest::prelude::*;

fn ordered(a: f64, b: f64) -> (f64, f64) {
    (a.min(b), a.max(b))
}

proptest! {
    #[test]
    fn iou_is_scale_invariant(a in 0.0..100.0f64, b in 0.0..100.0f64, c in 0.0..100.0f64, d in 0.0..100.0f64, k in 1u32..16) {
        let (p, q) = (ordered(a, b), ordered(c, d));
        let base = iou(&TemporalSpan::seconds(p.0, p.1).unwrap(), &TemporalSpan::seconds(q.0, q.1).unwrap()).unwrap();
        let k = k as f64;
        let scaled = iou(
            &TemporalSpan::seconds(p.0 * k, p.1 * k).unwrap(),
            &TemporalSpan::seconds(q.0 * k, q.1 * k).unwrap(),
        )
        .unwrap();
        prop_assert!((base - scaled).abs() < 1e-9);
    }

    #[test]
    fn frame_iou_matches_seconds_iou(a in 0u32..500, b in 0u32..500, c in 0u32..500, d in 0u32..500, fps in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0])) {
        let (p, q) = (ordered(a as f64, b as f64), ordered(c as f64, d as f64));
        let (pf, qf) = (TemporalSpan::frames(p.0, p.1).unwrap(), TemporalSpan::frames(q.0, q.1).unwrap());
        let in_frames = iou(&pf, &qf).unwrap();
        let in_seconds = iou(&frames_to_seconds(pf, fps).unwrap(), &frames_to_seconds(qf, fps).unwrap()).unwrap();
        prop_assert!((in_frames - in_seconds).abs() < 1e-9);
    }

    #[test]
    fn templated_answers_parse_back(start_tenths in 0u32..3000, len_tenths in 0u32..3000, fps in prop::sample::select(vec![0.5, 1.0, 2.0])) {
        let n_frames = 700;
        let (s, e) = (start_tenths as f64 / 10.0, (start_tenths + len_tenths) as f64 / 10.0);
        let (a, b) = seconds_to_frames(s, e, fps, n_frames).unwrap();
        let (_, answer) = build_qa("someone waves", a, b).unwrap();
        let o = parse_moment(&answer, n_frames, fps);
        prop_assert_eq!(o.validity, Validity::Valid);
        prop_assert_eq!(o.span, Some(TemporalSpan::frames(a as f64, b as f64).unwrap()));
    }

    #[test]
    fn unselected_frames_are_untouched(n in 1usize..12, tenths in 1u32..=10) {
        let frames: Vec<FrameImage> = (0..n)
            .map(|i| FrameImage::filled(96, 64, Rgb { r: 10 * i as u8, g: 40, b: 90 }).unwrap())
            .collect();
        let plan = SamplingPlan::uniform(SamplingRatio::new(tenths as f64 / 10.0).unwrap());
        let config = OverlayConfig { font_size_px: 16, ..OverlayConfig::default() };
        let out = annotate_sequence(&frames, &plan, &config, 1.0).unwrap();
        let picked = plan_indices(n, &plan);
        prop_assert_eq!(out.annotations.iter().map(|a| a.index).collect::<Vec<_>>(), picked.clone());
        for (i, (got, orig)) in out.frames.iter().zip(&frames).enumerate() {
            prop_assert_eq!(got == orig, !picked.contains(&i));
        }
    }

    #[test]
    fn more_frames_never_means_fewer_picks(n in 1usize..2000, tenths in 1u32..=10) {
        let plan = SamplingPlan::uniform(SamplingRatio::new(tenths as f64 / 10.0).unwrap());
        prop_assert!(plan_indices(n + 1, &plan).len() >= plan_indices(n, &plan).len());
    }
}

#[test]
fn float_products_just_off_an_integer_snap() {
    assert_eq!(SamplingRatio::new(0.07).unwrap().count(100), 7);
    assert_eq!(seconds_to_frames(1.16, 2.0, 25.0, 100).unwrap(), (29, 50));
}
