use fusion_core::gcfat::{gcfat_forward, init_gcfat, GcfatConfig, WindowPartition};
use fusion_core::numerics::testing::random_tensor;
use fusion_core::numerics::ParamSet;
use fusion_core::scene::DepthMap;
use proptest::prelude::*;

proptest! {
    #[test]
    fn window_partition_round_trip_is_bitwise(
        h in 1usize..12, w in 1usize..12, hp in 1usize..5, wp in 1usize..5, c in 1usize..5, seed in any::<u64>()
    ) {
        let part = WindowPartition::new((h, w), (hp, wp)).unwrap();
        let x = random_tensor(&[h, w, c], seed);
        let blocks: Vec<_> = part.partition(&x).unwrap().into_iter().map(|(b, _)| b).collect();
        prop_assert_eq!(blocks.len(), h.div_ceil(hp) * w.div_ceil(wp));
        prop_assert_eq!(part.reverse(&blocks).unwrap(), x);
    }
}

#[test]
fn far_depth_changes_reach_the_encoder_output() {
    let cfg = GcfatConfig::default();
    let mut p = ParamSet::new(2);
    init_gcfat(&mut p, &cfg);
    let (h, w) = (64, 64);
    let img = random_tensor(&[h, w, 3], 9).map(|v| 0.5 + 0.5 * v);
    let near: Vec<f64> = (0..h * w).map(|i| if i % 3 == 0 { 0.0 } else { 12.0 }).collect();
    let mut far = near.clone();
    // a distant patch in the upper rows
    for r in 0..8 {
        for c in 40..56 {
            if far[r * w + c] > 0.0 {
                far[r * w + c] = 45.0;
            }
        }
    }
    let a = gcfat_forward(&img, &DepthMap::from_raw(h, w, near).unwrap(), &cfg, &p, 0).unwrap();
    let b = gcfat_forward(&img, &DepthMap::from_raw(h, w, far).unwrap(), &cfg, &p, 0).unwrap();
    assert!(a.max_abs_diff(&b) > 0.0);
}
