//! Every parameter group against central finite differences.

use pwt_core::sequence::{RfMeta, RfTensor};
use pwt_nop::gradcheck::gradcheck;
use pwt_nop::loss::{loss_total, LossMode};
use pwt_nop::seg::SegConfig;
use pwt_nop::{Luna, LunaConfig, LunaInput, Mode, ParamStore, SegNet, Tensor};
use rand::Rng;

const TOL: f64 = 1e-4;

fn tiny_config() -> LunaConfig {
    LunaConfig {
        n_samples: 16,
        n_receivers: 4,
        n_events: 4,
        width: 3,
        modes: 3,
        fno_layers: 2,
        out_rows: 4,
        spatial_widths: vec![3, 4],
        magnitude_ref: 1.0,
        max_depth_m: 0.02,
        magnitude_only: false,
    }
}

fn random_rf(cfg: &LunaConfig, seed: u64) -> RfTensor {
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
    let mut rf = RfTensor::zeros(cfg.n_samples, cfg.n_receivers, cfg.n_events, meta);
    let mut rng = pwt_core::rng::seeded(seed, 0);
    rf.data.iter_mut().for_each(|v| *v = rng.random_range(-2.0..2.0));
    rf
}

fn report(groups: &[pwt_nop::gradcheck::GroupCheck]) {
    for g in groups {
        println!("{:<28} n={:<5} |g|={:.3e} rel={:.2e}", g.name, g.n, g.grad_norm, g.rel_err);
    }
    for g in groups {
        assert!(g.rel_err < TOL, "{} relative error {:.3e}", g.name, g.rel_err);
        assert!(g.grad_norm > 0.0, "{} received no gradient", g.name);
    }
}

#[test]
fn luna_parameter_groups_match_finite_differences() {
    let cfg = tiny_config();
    let mut params = ParamStore::new();
    let model = Luna::new(cfg.clone(), &mut params, &mut pwt_core::rng::seeded(1, 0)).unwrap();
    let rfs = [random_rf(&cfg, 2), random_rf(&cfg, 3)];
    let depths = [vec![0.004, 0.005, 0.006, 0.007], vec![0.01; 4]];
    let mut rng = pwt_core::rng::seeded(4, 0);
    let truth = Tensor::new(vec![2, 4, 4], (0..32).map(|_| rng.random_bool(0.5) as u8 as f64).collect());
    let gamma = [0.95, 0.02];
    for mode in [Mode::Train, Mode::Eval] {
        let groups = gradcheck(&params, mode, 1e-5, |cx| {
            let batch: Vec<LunaInput> = rfs.iter().zip(&depths).map(|(rf, d)| LunaInput { rf, pleura_depth_m: d }).collect();
            let pred = model.forward(cx, &batch);
            loss_total(&mut cx.tape, pred, &truth, &gamma, 0.5, LossMode::Pretrain).total
        });
        report(&groups);
    }
}

#[test]
fn segmentation_parameter_groups_match_finite_differences() {
    let cfg = SegConfig { size: 8, widths: vec![2, 3, 3] };
    let mut params = ParamStore::new();
    let net = SegNet::new(cfg, &mut params, &mut pwt_core::rng::seeded(5, 0)).unwrap();
    let mut rng = pwt_core::rng::seeded(6, 0);
    let images = Tensor::new(vec![2, 1, 8, 8], (0..128).map(|_| rng.random::<f64>()).collect());
    let wall = Tensor::new(vec![2, 8, 8], (0..128).map(|k| ((k % 64) / 8 < 3) as u8 as f64).collect());
    let groups = gradcheck(&params, Mode::Train, 1e-5, |cx| {
        let logits = net.forward(cx, images.clone());
        net.loss(cx, logits, &wall)
    });
    report(&groups);
}
