mod common;

use rand::Rng;
use rand_distr::{Distribution, LogNormal};
use urbanseg::tiling::{assign_counts, build_blocks, Split, SplitTargets};
use urbanseg::PointCloud;

#[test]
fn district_footprint_gives_about_57_blocks() {
    let side = 25_000f64.sqrt();
    let (w, h) = (5.9 * side, 9.69 * side);
    assert!(((w * h) / 1e6 - 1.43).abs() < 0.01);
    let mut rng = common::rng(1);
    let n = 200_000;
    let cloud = PointCloud::from_xyz(
        (0..n).map(|_| rng.random_range(0.0..w)).collect(),
        (0..n).map(|_| rng.random_range(0.0..h)).collect(),
        vec![0.0; n],
    );
    let grid = build_blocks(&cloud, 25_000.0).unwrap();
    let count = grid.blocks.len() as i64;
    assert!((count - 57).abs() <= 3, "{count} blocks");
    assert_eq!(grid.total_points(), n);
}

#[test]
fn fifty_seven_blocks_hold_val_test_near_thirty_percent() {
    let mut rng = common::rng(2);
    let lognormal = LogNormal::<f64>::new(10.0, 0.6).unwrap();
    for seed in 0..10 {
        let counts: Vec<usize> = (0..57).map(|_| lognormal.sample(&mut rng) as usize + 1).collect();
        let ids: Vec<usize> = (0..57).collect();
        let a = assign_counts(&ids, &counts, SplitTargets::default(), seed, None).unwrap();
        let held_out = a.fractions[1] + a.fractions[2];
        assert!((held_out - 0.3).abs() <= 0.05, "val+test fraction {held_out}");
        let blocks = a.blocks_in(Split::Val).len() + a.blocks_in(Split::Test).len();
        assert!(blocks > 0 && blocks < 57);
    }
}
