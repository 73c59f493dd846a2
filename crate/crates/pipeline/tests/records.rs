use proptest::prelude::*;
use pwt::records::{build_phantom, draw, target_map};
use pwt::{PipelineConfig, Split};
use pwt_core::phantom::compute_aeration;
use pwt_core::Grid;

/// Two-sided one-sample Kolmogorov-Smirnov statistic against U(lo, hi).
fn ks_uniform(values: &[f64], lo: f64, hi: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| {
            let f = ((x - lo) / (hi - lo)).clamp(0.0, 1.0);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

#[test]
fn ks_oracle_sanity() {
    let even: Vec<f64> = (0..100).map(|i| (i as f64 + 0.5) / 100.0).collect();
    assert!((ks_uniform(&even, 0.0, 1.0) - 0.005).abs() < 1e-12);
    let low: Vec<f64> = (0..100).map(|i| i as f64 / 400.0).collect();
    assert!(ks_uniform(&low, 0.0, 1.0) > 0.7);
}

#[test]
fn achieved_aeration_is_uniform_over_the_configured_range() {
    let cfg = PipelineConfig::tiny();
    let [lo, hi] = cfg.phantom.aeration;
    let gammas: Vec<f64> = (0..200)
        .map(|i| {
            let d = draw(&cfg, Split::Train, i);
            let p = build_phantom(&cfg, &d).unwrap();
            let g = compute_aeration(&p.map);
            let n = (p.map.rows() * p.map.cols()) as f64;
            assert!((g - d.target_aeration).abs() <= 1.0 / n + 1e-12, "record {i}: {g} vs {}", d.target_aeration);
            g
        })
        .collect();
    let d = ks_uniform(&gammas, lo, hi);
    assert!(d < 0.1, "KS statistic {d}");
}

#[test]
fn pleural_depths_are_uniform_too() {
    let cfg = PipelineConfig::tiny();
    let [lo, hi] = cfg.phantom.pleura_depth_m;
    let depths: Vec<f64> = (0..200).map(|i| draw(&cfg, Split::Eval, i).pleura_depth_m).collect();
    assert!(ks_uniform(&depths, lo, hi) < 0.1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// When events tile the map exactly, the target is the block mean of the
    /// map and total air is preserved.
    #[test]
    fn tiled_targets_are_block_means(
        bits in prop::collection::vec(any::<bool>(), 12 * 12),
        width in 1usize..=4,
        out_rows in prop::sample::select(vec![1usize, 2, 3, 4, 6, 12]),
    ) {
        let n_e = 12 / width;
        let map = Grid::from_vec(12, n_e * width, bits[..12 * n_e * width].iter().map(|&b| b as u8 as f64).collect()).unwrap();
        let cols: Vec<f64> = (0..n_e).map(|e| (e * width) as f64 + 0.5 * (width as f64 - 1.0)).collect();
        let t = target_map(&map, &cols, width as f64, out_rows);
        let block = 12 / out_rows;
        for h in 0..out_rows {
            for e in 0..n_e {
                let mut s = 0.0;
                for i in h * block..(h + 1) * block {
                    for j in e * width..(e + 1) * width {
                        s += map[(i, j)];
                    }
                }
                prop_assert!((t[(h, e)] - s / (block * width) as f64).abs() < 1e-12);
            }
        }
        let total = |g: &Grid<f64>| g.data().iter().sum::<f64>() / g.len() as f64;
        prop_assert!((total(&t) - total(&map)).abs() < 1e-12);
    }

    /// Arbitrary geometry: values stay within the range of the map.
    #[test]
    fn targets_are_air_fractions(
        vals in prop::collection::vec(0.0f64..=1.0, 10 * 17),
        offset in -3.0f64..3.0,
        width in 0.5f64..5.0,
        out_rows in 1usize..14,
    ) {
        let map = Grid::from_vec(10, 17, vals).unwrap();
        let cols: Vec<f64> = (0..5).map(|e| offset + 4.0 * e as f64).collect();
        let t = target_map(&map, &cols, width, out_rows);
        prop_assert_eq!((t.rows(), t.cols()), (out_rows, 5));
        prop_assert!(t.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
