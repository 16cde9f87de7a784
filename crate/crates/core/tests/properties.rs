use imagit_core::config::RunConfig;
use imagit_core::data::{all_scenes, inverse_oracle, render, render_rgb8, token_class, translate_oracle, ShapeScene, TokenClass, PALETTE};
use imagit_core::eval::{bleu, degrade, retrieval_recall, DegradationKind, DegradationSpec};
use imagit_core::model::ImagiT;
use imagit_core::nn::Fwd;
use imagit_core::numerics::{GradPolicy, Graph, Schedule};
use imagit_core::text_encoder::TokenSeq;
use proptest::prelude::*;

fn scene() -> impl Strategy<Value = ShapeScene> {
    let n = all_scenes().len();
    (0..n).prop_map(|i| all_scenes()[i])
}

fn sentence() -> impl Strategy<Value = String> {
    proptest::collection::vec(0usize..6, 0..8).prop_map(|w| w.iter().map(|i| ["a", "b", "c", "d", "e", "f"][*i]).collect::<Vec<_>>().join(" "))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oracle_is_a_bijection(s in scene()) {
        let tgt = translate_oracle(&s.source()).unwrap();
        prop_assert_eq!(inverse_oracle(&tgt).unwrap(), s.source());
        prop_assert_eq!(ShapeScene::parse_target(&tgt).unwrap(), s);
    }

    #[test]
    fn bleu_bounded_and_permutation_invariant(pairs in proptest::collection::vec((sentence(), sentence()), 1..8), rot in 0usize..8) {
        let (h, r): (Vec<String>, Vec<String>) = pairs.iter().cloned().unzip();
        let b = bleu(&h, &r).unwrap();
        prop_assert!((0.0..=100.0 + 1e-9).contains(&b));
        let k = rot % h.len();
        let mut h2 = h.clone();
        let mut r2 = r.clone();
        h2.rotate_left(k);
        r2.rotate_left(k);
        h2.reverse();
        r2.reverse();
        prop_assert_eq!(b, bleu(&h2, &r2).unwrap());
    }

    #[test]
    fn recall_monotone_in_k(seed in 0u64..1000, n in 2usize..20) {
        let feat = |off: u64| -> Vec<Vec<f64>> {
            (0..n).map(|i| (0..4).map(|j| (((i * 7 + j) as u64 * 2654435761 + seed * 97 + off) % 1009) as f64 - 504.0).collect()).collect()
        };
        let (a, b) = (feat(0), feat(13));
        let mut prev = 0.0;
        for k in 1..=n {
            let r = retrieval_recall(&a, &b, k).unwrap();
            prop_assert!(r >= prev);
            prev = r;
        }
        prop_assert_eq!(prev, 1.0);
    }

    #[test]
    fn degrade_touches_only_its_class(s in scene(), frac in 0.0f64..=1.0, seed in 0u64..100) {
        let src = vec![s.source()];
        for kind in [DegradationKind::ColorDeprivation, DegradationKind::EntityMasking] {
            let out = degrade(&src, &DegradationSpec { kind, mask_fraction: frac, seed }).unwrap();
            let want = match kind { DegradationKind::ColorDeprivation => TokenClass::Color, DegradationKind::EntityMasking => TokenClass::Entity };
            let (a, b): (Vec<&str>, Vec<&str>) = (src[0].split(' ').collect(), out[0].split(' ').collect());
            prop_assert_eq!(a.len(), b.len());
            for (x, y) in a.iter().zip(&b) {
                prop_assert!(x == y || (*y == "[M]" && token_class(x) == want));
            }
            prop_assert_eq!(&out, &degrade(&src, &DegradationSpec { kind, mask_fraction: frac, seed }).unwrap());
        }
        let id = degrade(&src, &DegradationSpec { kind: DegradationKind::EntityMasking, mask_fraction: 0.0, seed }).unwrap();
        prop_assert_eq!(id, src);
    }

    #[test]
    fn render_is_normalised_and_colors_are_recoverable(s in scene()) {
        let t = render(&s, 32).unwrap();
        prop_assert!(t.data().iter().all(|v| (-1.0..=1.0).contains(v)));
        let px = render_rgb8(&s, 32);
        let mut seen: Vec<usize> = px.chunks(3).filter_map(|p| PALETTE.iter().position(|c| c == p)).collect();
        seen.sort_unstable();
        seen.dedup();
        let mut want = vec![s.object1.color, s.object2.color];
        want.sort_unstable();
        want.dedup();
        prop_assert_eq!(seen, want);
    }

    #[test]
    fn warmup_schedule_closed_form(step in 1u64..100_000, warmup in 1u64..20_000) {
        let lr = Schedule::TransformerWarmup { d_model: 512, warmup_steps: warmup }.lr(step).unwrap();
        let s = step as f64;
        let want = 512f64.powf(-0.5) * s.powf(-0.5).min(s * (warmup as f64).powf(-1.5));
        prop_assert!((lr - want).abs() <= 1e-12 * want);
    }
}

#[test]
fn distinct_scenes_render_differently() {
    let scenes = all_scenes();
    let mut images: Vec<Vec<u8>> = scenes.iter().map(|s| render_rgb8(s, 32)).collect();
    images.sort();
    images.dedup();
    assert_eq!(images.len(), scenes.len());
}

#[test]
fn leftof_puts_object1_left() {
    let s = ShapeScene::parse_source("a red circle leftof a blue square").unwrap();
    let px = render_rgb8(&s, 32);
    let xs = |c: [u8; 3]| -> Vec<usize> { px.chunks(3).enumerate().filter(|(_, p)| *p == c).map(|(i, _)| i % 32).collect() };
    let (red, blue) = (xs(PALETTE[0]), xs(PALETTE[2]));
    assert!(red.iter().max() < blue.iter().min());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn encoder_ignores_padding(ids in proptest::collection::vec(5usize..20, 1..8), extra in 1usize..5) {
        let cfg = RunConfig::desk();
        let m = ImagiT::new(&cfg.model, 20, 20);
        let store = m.init(1).unwrap();
        let run = |seq: &TokenSeq| {
            let mut g = Graph::new();
            let mut f = Fwd::new(&mut g, &store, &GradPolicy::None);
            let enc = m.encoder.encode(&mut f, seq).unwrap();
            (g.value(enc.w).clone(), g.value(enc.s).clone())
        };
        let seq = TokenSeq::new(ids.clone());
        let (w, s) = run(&seq);
        let (wp, sp) = run(&seq.padded(ids.len() + extra));
        prop_assert!(w.max_abs_diff(&wp) < 1e-12);
        prop_assert!(s.max_abs_diff(&sp) < 1e-12);
    }
}
