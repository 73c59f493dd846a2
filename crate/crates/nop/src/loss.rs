//! Training objective: summed per-pixel cross-entropy plus the weighted
//! aeration-fraction error.

use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossMode {
    /// Cross-entropy and aeration term.
    Pretrain,
    /// Aeration term only.
    Finetune,
}

#[derive(Clone, Copy, Debug)]
pub struct LossParts {
    pub total: Var,
    /// Batch mean of the per-sample summed cross-entropy.
    pub ce: f64,
    /// Batch mean of `|gamma - mean(pred)|` (unweighted).
    pub l_gamma: f64,
}

/// `L = mean_b [ CE_b + eta |gamma_b - mean(pred_b)| ]` for predictions
/// `[B, H, W]`, binary truth maps of the same shape and per-sample `gamma`.
pub fn loss_total(tape: &mut Tape, pred: Var, truth: &Tensor, gamma: &[f64], eta: f64, mode: LossMode) -> LossParts {
    let b = tape.shape(pred)[0];
    assert_eq!(gamma.len(), b, "one aeration target per sample");
    let inv_b = 1.0 / b as f64;

    let ce_map = tape.bce(pred, truth);
    let ce_sum = tape.sum_all(ce_map);
    let ce = tape.scale(ce_sum, inv_b);

    let mean = tape.mean_per_sample(pred);
    let diff = tape.sub_const(mean, &Tensor::new(vec![b], gamma.to_vec()));
    let ad = tape.abs(diff);
    let lg_sum = tape.sum_all(ad);
    let lg = tape.scale(lg_sum, inv_b);

    let (ce_v, lg_v) = (tape.value(ce).item(), tape.value(lg).item());
    let weighted = tape.scale(lg, eta);
    let total = match mode {
        LossMode::Pretrain => tape.add(ce, weighted),
        LossMode::Finetune => weighted,
    };
    LossParts { total, ce: ce_v, l_gamma: lg_v }
}
