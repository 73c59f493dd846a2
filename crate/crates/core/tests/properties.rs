use proptest::prelude::*;
use pwt_core::beamform::das_sum;
use pwt_core::io::{Tensor, TensorData};
use pwt_core::metrics::{dice, nmse, psnr};
use pwt_core::phantom::{column_aeration, compute_aeration, derecruit_to_target_traced, AerationMap};
use pwt_core::sequence::{RfMeta, RfTensor};
use pwt_core::Grid;

fn binary_map() -> impl Strategy<Value = AerationMap> {
    (4usize..20, 4usize..20).prop_flat_map(|(r, c)| {
        prop::collection::vec(any::<bool>(), r * c).prop_map(move |v| {
            let g = Grid::from_vec(r, c, v.into_iter().map(|b| b as u8 as f64).collect()).unwrap();
            AerationMap::new(g, 1e-4).unwrap()
        })
    })
}

/// Pixels of `class` with a 4-neighbour of the other class, recomputed
/// independently of the library.
fn interface_oracle(g: &Grid<f64>, class: f64) -> Vec<usize> {
    let (r, c) = (g.rows() as isize, g.cols() as isize);
    let mut out = Vec::new();
    for i in 0..r {
        for j in 0..c {
            if g[(i as usize, j as usize)] != class {
                continue;
            }
            let other = [(i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)]
                .iter()
                .any(|&(a, b)| a >= 0 && b >= 0 && a < r && b < c && g[(a as usize, b as usize)] != class);
            if other {
                out.push((i * c + j) as usize);
            }
        }
    }
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn derecruitment_reaches_target_through_interfaces(map in binary_map(), target in 0.0f64..=1.0, seed in any::<u64>()) {
        let (out, passes) = derecruit_to_target_traced(&map, target, seed).unwrap();
        let n = map.grid().len();
        prop_assert!((compute_aeration(&out) - target).abs() <= 1.0 / n as f64 + 1e-12);
        let before = map.air_count();
        let after = out.air_count();
        // Monotone: only the class being removed ever flips.
        for k in 0..n {
            let (a, b) = (map.grid().data()[k], out.grid().data()[k]);
            if after < before { prop_assert!(!(a == 0.0 && b == 1.0)); }
            if after > before { prop_assert!(!(a == 1.0 && b == 0.0)); }
        }
        let mut g = map.grid().clone();
        for (p, pass) in passes.iter().enumerate() {
            let class = if pass.to_tissue { 1.0 } else { 0.0 };
            let iface = interface_oracle(&g, class);
            if !iface.is_empty() {
                for k in &pass.flipped {
                    prop_assert!(iface.binary_search(k).is_ok(), "pass {} flipped non-interface pixel {}", p, k);
                }
            }
            // Only the last pass may stop short of flipping the whole interface.
            if p + 1 < passes.len() && !iface.is_empty() {
                prop_assert_eq!(pass.flipped.len(), iface.len());
            }
            for &k in &pass.flipped {
                g.data_mut()[k] = 1.0 - class;
            }
        }
        prop_assert_eq!(&g, out.grid());
        if let Some(first) = passes.first() {
            let need = before.abs_diff(after);
            let iface = interface_oracle(map.grid(), if first.to_tissue { 1.0 } else { 0.0 });
            if iface.len() >= need {
                prop_assert_eq!(passes.len(), 1);
                prop_assert_eq!(first.flipped.len(), need);
            }
        }
    }

    #[test]
    fn aeration_identities(map in binary_map()) {
        let gamma = compute_aeration(&map);
        prop_assert!((gamma - map.air_count() as f64 / map.grid().len() as f64).abs() < 1e-12);
        let cols = column_aeration(&map);
        let mean = cols.iter().sum::<f64>() / cols.len() as f64;
        prop_assert!((mean - gamma).abs() < 1e-12);
    }

    #[test]
    fn tensor_round_trip(dims in prop::collection::vec(0usize..5, 0..4), bits in prop::collection::vec(any::<u64>(), 0..200), key in "[a-z]{0,8}") {
        let n: usize = dims.iter().product();
        prop_assume!(n <= bits.len());
        let meta = serde_json::json!({ key: n });
        let f64s: Vec<f64> = bits[..n].iter().map(|&b| f64::from_bits(b)).collect();
        let f32s: Vec<f32> = bits[..n].iter().map(|&b| f32::from_bits(b as u32)).collect();
        let u8s: Vec<u8> = bits[..n].iter().map(|&b| b as u8).collect();
        for data in [TensorData::F64(f64s), TensorData::F32(f32s), TensorData::U8(u8s)] {
            let t = Tensor::new(dims.clone(), data, meta.clone()).unwrap();
            let bytes = t.to_bytes();
            let back = Tensor::from_bytes(&bytes).unwrap();
            prop_assert_eq!(back.to_bytes(), bytes);
            prop_assert_eq!(&back.dims, &dims);
        }
    }

    #[test]
    fn metrics_are_permutation_invariant(values in prop::collection::vec((0.0f64..1.0, 0.01f64..1.0), 16..64), seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let n = values.len();
        let pred = Grid::from_vec(1, n, values.iter().map(|v| v.0).collect()).unwrap();
        let truth = Grid::from_vec(1, n, values.iter().map(|v| v.1).collect()).unwrap();
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut pwt_core::rng::seeded(seed, 0));
        let pp = Grid::from_fn(1, n, |_, j| pred.data()[perm[j]]);
        let tp = Grid::from_fn(1, n, |_, j| truth.data()[perm[j]]);
        prop_assert!((nmse(&pred, &truth).unwrap() - nmse(&pp, &tp).unwrap()).abs() < 1e-12);
        prop_assert!((psnr(&pred, &truth).unwrap() - psnr(&pp, &tp).unwrap()).abs() < 1e-9);
        let (a, b) = (pred.map(|v| *v > 0.5), truth.map(|v| *v > 0.5));
        let (ap, bp) = (pp.map(|v| *v > 0.5), tp.map(|v| *v > 0.5));
        let d = dice(&a, &b).unwrap();
        prop_assert_eq!(d, dice(&ap, &bp).unwrap());
        prop_assert_eq!(d, dice(&b, &a).unwrap());
        prop_assert!((0.0..=1.0).contains(&d));
    }

    #[test]
    fn das_is_linear(seed in any::<u64>(), a in -3.0f64..3.0, b in -3.0f64..3.0) {
        use rand::Rng;
        let mut rng = pwt_core::rng::seeded(seed, 0);
        let meta = RfMeta {
            fs: 20e6,
            t0: 2e-6,
            pitch_m: 2e-4,
            f_c: 5e6,
            c_ref: 1540.0,
            element_offsets_m: (0..4).map(|m| (m as f64 - 1.5) * 2e-4).collect(),
            event_centers_m: vec![0.0, 2e-4],
            focal_depths_m: vec![0.01; 2],
            first_event: 0,
        };
        let mut x = RfTensor::zeros(64, 4, 2, meta.clone());
        let mut y = RfTensor::zeros(64, 4, 2, meta);
        x.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        y.data.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        let mut z = x.clone();
        z.data.iter_mut().zip(&y.data).zip(&x.data).for_each(|((o, yv), xv)| *o = a * xv + b * yv);
        let (dx, dy, dz) = (das_sum(&x), das_sum(&y), das_sum(&z));
        let scale = dz.data().iter().fold(1.0f64, |m, v| m.max(v.abs()));
        for k in 0..dz.len() {
            prop_assert!((dz.data()[k] - (a * dx.data()[k] + b * dy.data()[k])).abs() <= 1e-12 * scale);
        }
    }
}
