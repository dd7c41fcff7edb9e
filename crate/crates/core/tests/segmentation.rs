use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rgl_core::lstm_vanilla::{VanillaLstm, VanillaLstmParams};
use rgl_core::segmentation::*;
use rgl_core::Vector;

fn sequence(n: usize) -> SequenceData {
    SequenceData::new((0..n).map(|i| Vector::new(vec![i as f64, -(i as f64)]).unwrap()).collect(), None).unwrap()
}

proptest! {
    #[test]
    fn windows_partition_the_sequence(lengths in prop::collection::vec(1usize..8, 1..8)) {
        let plan = SegmentPlan::new(lengths).unwrap();
        let total = plan.total() as i64;
        for n in -2..total + 2 {
            let covered: u32 = (0..plan.num_segments()).map(|m| u32::from(plan.window(m, n).unwrap())).sum();
            prop_assert_eq!(covered, u32::from((0..total).contains(&n)));
        }
    }

    #[test]
    fn concatenation_restores_the_sequence(lengths in prop::collection::vec(1usize..8, 1..8), seed in 0u64..1000) {
        let plan = SegmentPlan::new(lengths).unwrap();
        let data = sequence(plan.total());
        let mut segments = extract_segments(&data, &plan, Padding::Exact).unwrap();
        // Index order, not storage order, defines the concatenation.
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(segments.as_mut_slice(), &mut rng);
        prop_assert_eq!(concatenate(&segments), data.inputs.clone());
        for s in &segments {
            for (n, x) in s.inputs.iter().enumerate() {
                prop_assert_eq!(x, &data.inputs[s.offset + n]);
            }
        }
    }

    #[test]
    fn segments_are_independent(lengths in prop::collection::vec(1usize..6, 2..6), target in 0usize..6, seed in 0u64..1000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let cell = VanillaLstm::new(VanillaLstmParams::random(2, 3, &mut rng, 1.0)).unwrap();
        let plan = SegmentPlan::new(lengths).unwrap();
        let data = sequence(plan.total());
        let segments = extract_segments(&data, &plan, Padding::Exact).unwrap();
        let forward = run_segments(&cell, &segments).unwrap();

        let reversed: Vec<Segment> = segments.iter().rev().cloned().collect();
        let backward = run_segments(&cell, &reversed).unwrap();
        for (i, t) in forward.iter().enumerate() {
            prop_assert_eq!(t, &backward[segments.len() - 1 - i]);
        }

        let m = target % segments.len();
        let mut perturbed = segments.clone();
        for x in &mut perturbed[m].inputs {
            *x = x.map(|z| z + 0.5);
        }
        let after = run_segments(&cell, &perturbed).unwrap();
        for (i, (a, b)) in forward.iter().zip(&after).enumerate() {
            if i == m {
                prop_assert_ne!(a, b);
            } else {
                prop_assert_eq!(a, b);
            }
        }
    }
}

#[test]
fn every_segment_starts_from_rest() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cell = VanillaLstm::new(VanillaLstmParams::random(2, 3, &mut rng, 1.0)).unwrap();
    let plan = SegmentPlan::new(vec![4, 3, 5]).unwrap();
    let segments = extract_segments(&sequence(12), &plan, Padding::Exact).unwrap();
    for (seg, trace) in segments.iter().zip(run_segments(&cell, &segments).unwrap()) {
        assert_eq!(trace[0].state_prev, Vector::zeros(3));
        assert_eq!(trace[0].value_prev, Vector::zeros(3));
        assert_eq!(trace, cell.forward_segment(&seg.inputs).unwrap());
    }
}
