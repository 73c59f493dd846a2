//! Central finite-difference verification of tape gradients.

use crate::params::{Ctx, Mode, ParamStore};
use crate::tape::Var;

#[derive(Clone, Debug, PartialEq)]
pub struct GroupCheck {
    pub name: String,
    pub n: usize,
    /// `||analytic - numeric|| / max(||analytic||, ||numeric||)`.
    pub rel_err: f64,
    pub grad_norm: f64,
}

/// Compares the tape gradient of the scalar `loss` with central differences
/// for every trainable entry of `params`. Steps are `rel_step * max(1, |x|)`.
pub fn gradcheck(params: &ParamStore, mode: Mode, rel_step: f64, loss: impl Fn(&mut Ctx) -> Var) -> Vec<GroupCheck> {
    let mut cx = Ctx::new(params, mode);
    let root = loss(&mut cx);
    cx.tape.backward(root);
    let analytic = cx.grads();
    drop(cx);

    let eval = |p: &ParamStore| {
        let mut cx = Ctx::new(p, mode);
        let root = loss(&mut cx);
        cx.tape.value(root).item()
    };
    let mut work = params.clone();
    let mut out = Vec::new();
    for (k, entry) in params.entries().iter().enumerate() {
        if !entry.trainable {
            continue;
        }
        let (mut diff2, mut a2, mut n2) = (0.0, 0.0, 0.0);
        for i in 0..entry.value.len() {
            let x = entry.value.data[i];
            let h = rel_step * x.abs().max(1.0);
            work.entries_mut()[k].value.data[i] = x + h;
            let fp = eval(&work);
            work.entries_mut()[k].value.data[i] = x - h;
            let fm = eval(&work);
            work.entries_mut()[k].value.data[i] = x;
            let num = (fp - fm) / (2.0 * h);
            let a = analytic[k].data[i];
            diff2 += (a - num).powi(2);
            a2 += a * a;
            n2 += num * num;
        }
        let scale = a2.sqrt().max(n2.sqrt());
        out.push(GroupCheck {
            name: entry.name.clone(),
            n: entry.value.len(),
            rel_err: if scale > 0.0 { diff2.sqrt() / scale } else { 0.0 },
            grad_norm: a2.sqrt(),
        });
    }
    out
}
