//! LSTM update and its reverse-mode derivative.
//!
//! Forward, elementwise over units:
//! ```text
//! f = σ(W_f [x; trig] + U_f h + b_f)    forget gate
//! i = σ(W_i [x; trig] + U_i h + b_i)    input gate
//! o = σ(W_o [x; trig] + U_o h + b_o)    output gate
//! g = tanh(W_c [x; trig] + U_c h + b_c) cell candidate
//! c' = f ∘ c + i ∘ g
//! h' = o ∘ tanh(c)    (PrevCell)  or  o ∘ tanh(c')  (NewCell)
//! ```

use crate::real::{sigmoid, Real};

use super::{LstmOutput, LstmWeights};

/// Gate activations recorded during a forward step, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct LstmCache<T> {
    pub forget: Vec<T>,
    pub input: Vec<T>,
    pub output: Vec<T>,
    pub candidate: Vec<T>,
}

impl<T: Real> LstmCache<T> {
    pub fn new(d: usize) -> Self {
        LstmCache {
            forget: vec![T::zero(); d],
            input: vec![T::zero(); d],
            output: vec![T::zero(); d],
            candidate: vec![T::zero(); d],
        }
    }
}

/// Scratch vectors for [`backward`].
#[derive(Debug)]
pub struct LstmScratch<T> {
    tc: Vec<T>,
    dct: Vec<T>,
    da: Vec<T>,
}

impl<T: Real> LstmScratch<T> {
    pub fn new(d: usize) -> Self {
        LstmScratch { tc: vec![T::zero(); d], dct: vec![T::zero(); d], da: vec![T::zero(); d] }
    }
}

/// One LSTM step. Output buffers must not alias the inputs.
#[allow(clippy::too_many_arguments)]
pub fn forward<T: Real>(
    w: &LstmWeights<T>,
    variant: LstmOutput,
    px: &[T],
    trig: T,
    h_prev: &[T],
    c_prev: &[T],
    h_out: &mut [T],
    c_out: &mut [T],
    cache: &mut LstmCache<T>,
) {
    let d = h_prev.len();

    w.forget.preact(px, trig, h_prev, &mut cache.forget);
    w.input.preact(px, trig, h_prev, &mut cache.input);
    w.output.preact(px, trig, h_prev, &mut cache.output);
    w.cell.preact(px, trig, h_prev, &mut cache.candidate);

    for i in 0..d {
        cache.forget[i] = sigmoid(cache.forget[i]);
        cache.input[i] = sigmoid(cache.input[i]);
        cache.output[i] = sigmoid(cache.output[i]);
        cache.candidate[i] = cache.candidate[i].tanh();
        c_out[i] = cache.forget[i] * c_prev[i] + cache.input[i] * cache.candidate[i];
        let squashed = match variant {
            LstmOutput::PrevCell => c_prev[i].tanh(),
            LstmOutput::NewCell => c_out[i].tanh(),
        };
        h_out[i] = cache.output[i] * squashed;
    }
}

/// Reverse-mode through one step: given cotangents `dh` on the new hidden
/// state and `dc` on the new cell state, accumulate cotangents on the
/// previous states into `dh_prev`/`dc_prev` and, when `grads` is given, the
/// parameter gradients.
#[allow(clippy::too_many_arguments)]
pub fn backward<T: Real>(
    w: &LstmWeights<T>,
    variant: LstmOutput,
    px: &[T],
    trig: T,
    h_prev: &[T],
    c_prev: &[T],
    c_out: &[T],
    cache: &LstmCache<T>,
    dh: &[T],
    dc: &[T],
    dh_prev: &mut [T],
    dc_prev: &mut [T],
    mut grads: Option<&mut LstmWeights<T>>,
    s: &mut LstmScratch<T>,
) {
    let d = h_prev.len();
    let one = T::one();
    let f = &cache.forget;
    let i_ = &cache.input;
    let o = &cache.output;
    let g = &cache.candidate;

    // Split dh between the output gate and the squashed cell it multiplies;
    // the dc path through c' is shared by both variants.
    match variant {
        LstmOutput::PrevCell => {
            for k in 0..d {
                s.tc[k] = c_prev[k].tanh();
                dc_prev[k] += dh[k] * o[k] * (one - s.tc[k] * s.tc[k]);
                s.dct[k] = dc[k];
            }
        }
        LstmOutput::NewCell => {
            for k in 0..d {
                s.tc[k] = c_out[k].tanh();
                s.dct[k] = dc[k] + dh[k] * o[k] * (one - s.tc[k] * s.tc[k]);
            }
        }
    }

    // Output gate.
    for k in 0..d {
        s.da[k] = dh[k] * s.tc[k] * o[k] * (one - o[k]);
    }
    if let Some(gr) = grads.as_deref_mut() {
        gr.output.accumulate_grads(&s.da, px, trig, h_prev);
    }
    w.output.u.matvec_t_acc(&s.da, dh_prev);

    // Cell candidate.
    for k in 0..d {
        s.da[k] = s.dct[k] * i_[k] * (one - g[k] * g[k]);
    }
    if let Some(gr) = grads.as_deref_mut() {
        gr.cell.accumulate_grads(&s.da, px, trig, h_prev);
    }
    w.cell.u.matvec_t_acc(&s.da, dh_prev);

    // Input gate.
    for k in 0..d {
        s.da[k] = s.dct[k] * g[k] * i_[k] * (one - i_[k]);
    }
    if let Some(gr) = grads.as_deref_mut() {
        gr.input.accumulate_grads(&s.da, px, trig, h_prev);
    }
    w.input.u.matvec_t_acc(&s.da, dh_prev);

    // Forget gate and the carry into the old cell.
    for k in 0..d {
        s.da[k] = s.dct[k] * c_prev[k] * f[k] * (one - f[k]);
        dc_prev[k] += s.dct[k] * f[k];
    }
    if let Some(gr) = grads.as_deref_mut() {
        gr.forget.accumulate_grads(&s.da, px, trig, h_prev);
    }
    w.forget.u.matvec_t_acc(&s.da, dh_prev);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{init_params, InputFrame, UnitType};

    #[test]
    fn cell_update_is_variant_independent_and_elementwise_correct() {
        let p = init_params::<f64>(UnitType::Lstm, 3, 3, 2, LstmOutput::PrevCell, 8);
        let w = p.lstm_weights().unwrap();
        let h = vec![0.1, -0.2, 0.3];
        let c = vec![-0.5, 0.4, 0.0];
        let frame = InputFrame::new(vec![0.6, -0.3], false);

        let mut h1 = vec![0.0; 3];
        let mut c1 = vec![0.0; 3];
        let mut cache = LstmCache::new(3);
        forward(w, LstmOutput::PrevCell, &frame.pixels, frame.trigger, &h, &c, &mut h1, &mut c1, &mut cache);

        for k in 0..3 {
            let want_c = cache.forget[k] * c[k] + cache.input[k] * cache.candidate[k];
            assert!((c1[k] - want_c).abs() < 1e-15);
            assert!((h1[k] - cache.output[k] * c[k].tanh()).abs() < 1e-15);
        }

        let mut h2 = vec![0.0; 3];
        let mut c2 = vec![0.0; 3];
        forward(w, LstmOutput::NewCell, &frame.pixels, frame.trigger, &h, &c, &mut h2, &mut c2, &mut cache);
        assert_eq!(c1, c2);
        for k in 0..3 {
            assert!((h2[k] - cache.output[k] * c2[k].tanh()).abs() < 1e-15);
        }
    }
}
