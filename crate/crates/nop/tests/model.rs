//! Forward-pass invariants of the reconstruction and segmentation networks.

use pwt_core::sequence::{RfMeta, RfTensor};
use pwt_nop::layers::FnoLayer;
use pwt_nop::optim::{Adam, AdamConfig};
use pwt_nop::seg::{pleural_line, softmax2, wall_mask};
use pwt_nop::tape::gelu;
use pwt_nop::{Ctx, Luna, LunaConfig, LunaInput, Mode, ParamStore, SegConfig, SegNet, Tensor};
use rand::Rng;

fn config(magnitude_only: bool) -> LunaConfig {
    LunaConfig { magnitude_only, ..LunaConfig::desk(40, 4, 8, 6) }
}

fn rf(cfg: &LunaConfig, seed: u64) -> RfTensor {
    let meta = RfMeta {
        fs: 20e6,
        t0: 0.0,
        pitch_m: 2e-4,
        f_c: 5e6,
        c_ref: 1540.0,
        element_offsets_m: vec![0.0; cfg.n_receivers],
        event_centers_m: vec![0.0; cfg.n_events],
        focal_depths_m: vec![0.01; cfg.n_events],
        first_event: 0,
    };
    let mut x = RfTensor::zeros(cfg.n_samples, cfg.n_receivers, cfg.n_events, meta);
    let mut rng = pwt_core::rng::seeded(seed, 0);
    x.data.iter_mut().for_each(|v| *v = rng.random_range(-1e6..1e6));
    x
}

fn shifted(x: &RfTensor, d: usize) -> RfTensor {
    let mut y = x.clone();
    for i in 0..x.n_samples {
        for r in 0..x.n_receivers {
            for e in 0..x.n_events {
                y.set((i + d) % x.n_samples, r, e, x.get(i, r, e));
            }
        }
    }
    y
}

fn predict(model: &Luna, params: &ParamStore, batch: &[LunaInput]) -> Tensor {
    let mut cx = Ctx::new(params, Mode::Eval);
    let y = model.forward(&mut cx, batch);
    cx.tape.value(y).clone()
}

#[test]
fn outputs_are_probabilities_of_the_configured_shape() {
    let cfg = config(false);
    let mut p = ParamStore::new();
    let model = Luna::new(cfg.clone(), &mut p, &mut pwt_core::rng::seeded(1, 0)).unwrap();
    let x = rf(&cfg, 2);
    let d = vec![0.01; cfg.n_events];
    let y = predict(&model, &p, &[LunaInput { rf: &x, pleura_depth_m: &d }]);
    assert_eq!(y.shape, vec![1, cfg.out_rows, cfg.n_events]);
    assert!(y.data.iter().all(|&v| v > 0.0 && v < 1.0));
    assert_eq!(model.output_shape().unwrap(), [cfg.out_rows, cfg.n_events]);
}

#[test]
fn magnitude_only_forward_ignores_circular_shifts() {
    let cfg = config(true);
    let mut p = ParamStore::new();
    let model = Luna::new(cfg.clone(), &mut p, &mut pwt_core::rng::seeded(3, 0)).unwrap();
    let x = rf(&cfg, 4);
    let d = vec![0.012; cfg.n_events];
    let base = predict(&model, &p, &[LunaInput { rf: &x, pleura_depth_m: &d }]);
    for shift in [1, 7, 39] {
        let xs = shifted(&x, shift);
        let y = predict(&model, &p, &[LunaInput { rf: &xs, pleura_depth_m: &d }]);
        let rel = y.max_abs_diff(&base) / base.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(rel < 1e-8, "shift {shift}: {rel:e}");
    }
    // With phase channels the same shift is visible.
    let cfg = config(false);
    let mut p = ParamStore::new();
    let model = Luna::new(cfg, &mut p, &mut pwt_core::rng::seeded(3, 0)).unwrap();
    let xs = shifted(&x, 7);
    let a = predict(&model, &p, &[LunaInput { rf: &x, pleura_depth_m: &d }]);
    let b = predict(&model, &p, &[LunaInput { rf: &xs, pleura_depth_m: &d }]);
    assert!(a.max_abs_diff(&b) > 1e-8);
}

#[test]
fn batch_items_do_not_interact() {
    let cfg = config(false);
    let mut p = ParamStore::new();
    let model = Luna::new(cfg.clone(), &mut p, &mut pwt_core::rng::seeded(5, 0)).unwrap();
    let (x1, x2) = (rf(&cfg, 6), rf(&cfg, 7));
    let (d1, d2) = (vec![0.008; cfg.n_events], vec![0.014; cfg.n_events]);
    let both = predict(&model, &p, &[LunaInput { rf: &x1, pleura_depth_m: &d1 }, LunaInput { rf: &x2, pleura_depth_m: &d2 }]);
    let a = predict(&model, &p, &[LunaInput { rf: &x1, pleura_depth_m: &d1 }]);
    let b = predict(&model, &p, &[LunaInput { rf: &x2, pleura_depth_m: &d2 }]);
    assert!(both.max_abs_diff(&Tensor::stack_batch(&[a, b])) < 1e-10);
}

#[test]
fn fno_layer_anchors() {
    let mut p = ParamStore::new();
    let layer = FnoLayer::new(&mut p, "f", 2, 2, 3, &mut pwt_core::rng::seeded(8, 0));
    let x = Tensor::new(vec![1, 2, 10], (0..20).map(|v| (v as f64 * 0.4).sin()).collect());
    let run = |p: &ParamStore| {
        let mut cx = Ctx::new(p, Mode::Eval);
        let xv = cx.tape.leaf(x.clone());
        let y = layer.forward(&mut cx, xv);
        cx.tape.value(y).clone()
    };
    let mut zero = p.clone();
    zero.entries_mut().iter_mut().for_each(|e| e.value.data.iter_mut().for_each(|v| *v = 0.0));
    assert!(run(&zero).data.iter().all(|&v| v == gelu(0.0)));
    let mut ident = zero.clone();
    let pw = ident.entries_mut().iter_mut().find(|e| e.name == "f.pointwise").unwrap();
    pw.value.data = vec![1.0, 0.0, 0.0, 1.0];
    assert!(run(&ident).max_abs_diff(&x.map(gelu)) < 1e-15);
}

#[test]
fn full_scale_shapes_construct() {
    let mut p = ParamStore::new();
    let mut rng = pwt_core::rng::seeded(9, 0);
    let model = Luna::new(LunaConfig::full(), &mut p, &mut rng).unwrap();
    assert_eq!(model.output_shape().unwrap(), [128, 128]);
    let spectral = p.by_name("luna.fno0.spectral_re").unwrap();
    assert_eq!(spectral.shape, vec![87, 32, 32]);
    let luna_count = p.count();
    assert!(luna_count > 1_000_000);

    let mut q = ParamStore::new();
    let seg = SegNet::new(SegConfig::full(), &mut q, &mut rng).unwrap();
    assert_eq!(seg.bottleneck(), 25);
    assert!(q.count() > 1_000_000);
    println!("full-scale parameters: reconstruction {luna_count}, segmentation {}", q.count());

    let mut bad = LunaConfig::full();
    bad.modes = 1822 / 2 + 2;
    assert!(bad.validate().is_err());
}

#[test]
fn training_is_deterministic() {
    let run = || {
        let cfg = SegConfig { size: 16, widths: vec![4, 8] };
        let mut p = ParamStore::new();
        let net = SegNet::new(cfg, &mut p, &mut pwt_core::rng::seeded(10, 0)).unwrap();
        let img = Tensor::new(vec![1, 1, 16, 16], (0..256).map(|k| ((k / 16) < 6) as u8 as f64).collect());
        let wall = Tensor::new(vec![1, 16, 16], img.data.clone());
        let mut opt = Adam::new(AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, &p);
        let mut losses = Vec::new();
        for _ in 0..5 {
            let mut cx = Ctx::new(&p, Mode::Train);
            let z = net.forward(&mut cx, img.clone());
            let l = net.loss(&mut cx, z, &wall);
            cx.tape.backward(l);
            losses.push(cx.tape.value(l).item());
            let g = cx.grads();
            drop(cx);
            opt.step(&mut p, &g);
        }
        (losses, p)
    };
    let (a, pa) = run();
    let (b, pb) = run();
    assert_eq!(a, b);
    assert_eq!(pa, pb);
    assert!(a[4] < a[0]);
}

#[test]
fn segmentation_outputs_and_pleural_line() {
    let cfg = SegConfig { size: 16, widths: vec![4, 8] };
    let mut p = ParamStore::new();
    let net = SegNet::new(cfg, &mut p, &mut pwt_core::rng::seeded(11, 0)).unwrap();
    let mut cx = Ctx::new(&p, Mode::Eval);
    let z = net.forward(&mut cx, Tensor::full(&[1, 1, 16, 16], 0.3));
    let probs = softmax2(cx.tape.value(z));
    for k in 0..256 {
        assert!((probs.data[k] + probs.data[256 + k] - 1.0).abs() < 1e-6);
    }
    let line = pleural_line(&wall_mask(&probs, 0));
    assert_eq!(line.len(), 16);
}

/// Synthetic B-mode-like fixture: speckled wall above a curved bright
/// pleural line, horizontal reverberation bands below.
fn seg_fixture(size: usize, seed: u64) -> (Tensor, Tensor) {
    let mut rng = pwt_core::rng::seeded(seed, 0);
    let depth = rng.random_range(0.3..0.5) * size as f64;
    let bend = rng.random_range(0.0..0.1) * size as f64;
    let mut img = Tensor::zeros(&[1, 1, size, size]);
    let mut wall = Tensor::zeros(&[1, size, size]);
    for j in 0..size {
        let x = j as f64 / size as f64 - 0.5;
        let line = depth + bend * 4.0 * x * x;
        for i in 0..size {
            let k = i * size + j;
            let d = i as f64 - line;
            let v = if d < 0.0 {
                wall.data[k] = 1.0;
                0.35 + 0.25 * rng.random::<f64>()
            } else if d < 2.0 {
                0.95
            } else {
                0.1 + 0.4 * ((d / depth * std::f64::consts::PI * 2.0).cos().max(0.0)) + 0.1 * rng.random::<f64>()
            };
            img.data[k] = v;
        }
    }
    (img, wall)
}

#[test]
fn segmentation_overfits_small_fixture() {
    use pwt_core::metrics::dice;
    use pwt_core::Grid;
    let size = 32;
    let cfg = SegConfig { size, widths: vec![4, 8, 16] };
    let mut p = ParamStore::new();
    let net = SegNet::new(cfg, &mut p, &mut pwt_core::rng::seeded(12, 0)).unwrap();
    let items: Vec<(Tensor, Tensor)> = (0..4).map(|s| seg_fixture(size, 100 + s)).collect();
    let images = Tensor::stack_batch(&items.iter().map(|i| i.0.clone()).collect::<Vec<_>>());
    let walls = Tensor::stack_batch(&items.iter().map(|i| i.1.clone()).collect::<Vec<_>>());
    let mut opt = Adam::new(AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }, &p);
    let t0 = std::time::Instant::now();
    for _ in 0..200 {
        let mut cx = Ctx::new(&p, Mode::Train);
        let z = net.forward(&mut cx, images.clone());
        let l = net.loss(&mut cx, z, &walls);
        cx.tape.backward(l);
        let g = cx.grads();
        drop(cx);
        opt.step(&mut p, &g);
    }
    let mut cx = Ctx::new(&p, Mode::Eval);
    let z = net.forward(&mut cx, images.clone());
    let probs = softmax2(cx.tape.value(z));
    for b in 0..4 {
        let pred = wall_mask(&probs, b);
        let truth = Grid::from_fn(size, size, |i, j| walls.data[(b * size + i) * size + j] > 0.5);
        let d = dice(&pred, &truth).unwrap();
        println!("sample {b}: dice {d:.4}");
        assert!(d > 0.9);
    }
    println!("200 steps in {:?}", t0.elapsed());
}
