//! GRU update and its reverse-mode derivative.
//!
//! Forward, elementwise over units:
//! ```text
//! z = σ(W_z [x; trig] + U_z h + b_z)          update gate
//! r = σ(W_r [x; trig] + U_r h + b_r)          reset gate
//! g = tanh(W_g [x; trig] + U_g (r ∘ h) + b_g) candidate
//! h' = z ∘ h + (1 − z) ∘ g
//! ```
//! With `z` saturated at 1 the state carries over unchanged, which is the
//! mechanism the memory analysis leans on.

use crate::real::{sigmoid, Real};

use super::GruWeights;

/// Gate activations recorded during a forward step, consumed by [`backward`].
#[derive(Debug, Clone)]
pub struct GruCache<T> {
    pub update: Vec<T>,
    pub reset: Vec<T>,
    pub candidate: Vec<T>,
    /// `reset ∘ h_prev`, the vector the candidate's recurrent matrix saw.
    pub reset_h: Vec<T>,
}

impl<T: Real> GruCache<T> {
    pub fn new(d: usize) -> Self {
        GruCache {
            update: vec![T::zero(); d],
            reset: vec![T::zero(); d],
            candidate: vec![T::zero(); d],
            reset_h: vec![T::zero(); d],
        }
    }
}

/// Scratch vectors for [`backward`]; reuse one per sequence to avoid
/// per-step allocation.
#[derive(Debug)]
pub struct GruScratch<T> {
    da_g: Vec<T>,
    da_z: Vec<T>,
    da_r: Vec<T>,
}

impl<T: Real> GruScratch<T> {
    pub fn new(d: usize) -> Self {
        GruScratch { da_g: vec![T::zero(); d], da_z: vec![T::zero(); d], da_r: vec![T::zero(); d] }
    }
}

/// One GRU step. `h_out` must not alias `h_prev`.
pub fn forward<T: Real>(
    w: &GruWeights<T>,
    px: &[T],
    trig: T,
    h_prev: &[T],
    h_out: &mut [T],
    cache: &mut GruCache<T>,
) {
    let d = h_prev.len();

    w.update.preact(px, trig, h_prev, &mut cache.update);
    w.reset.preact(px, trig, h_prev, &mut cache.reset);
    for i in 0..d {
        cache.update[i] = sigmoid(cache.update[i]);
        cache.reset[i] = sigmoid(cache.reset[i]);
        cache.reset_h[i] = cache.reset[i] * h_prev[i];
    }

    w.candidate.preact(px, trig, &cache.reset_h, &mut cache.candidate);
    for i in 0..d {
        cache.candidate[i] = cache.candidate[i].tanh();
        h_out[i] = cache.update[i] * h_prev[i] + (T::one() - cache.update[i]) * cache.candidate[i];
    }
}

/// Reverse-mode through one step: given the cotangent `dh` on the step's
/// output, accumulate the cotangent on `h_prev` into `dh_prev` and, when
/// `grads` is given, the parameter gradients.
pub fn backward<T: Real>(
    w: &GruWeights<T>,
    px: &[T],
    trig: T,
    h_prev: &[T],
    cache: &GruCache<T>,
    dh: &[T],
    dh_prev: &mut [T],
    mut grads: Option<&mut GruWeights<T>>,
    s: &mut GruScratch<T>,
) {
    let d = h_prev.len();
    let one = T::one();
    let z = &cache.update;
    let r = &cache.reset;
    let g = &cache.candidate;

    for i in 0..d {
        // Through the blend h' = z h + (1 − z) g.
        s.da_g[i] = dh[i] * (one - z[i]) * (one - g[i] * g[i]);
        s.da_z[i] = dh[i] * (h_prev[i] - g[i]) * z[i] * (one - z[i]);
        dh_prev[i] += dh[i] * z[i];
    }

    if let Some(gr) = grads.as_deref_mut() {
        gr.candidate.accumulate_grads(&s.da_g, px, trig, &cache.reset_h);
    }
    // Cotangent on r ∘ h_prev, then split between r and h_prev.
    s.da_r.iter_mut().for_each(|v| *v = T::zero());
    w.candidate.u.matvec_t_acc(&s.da_g, &mut s.da_r);
    for i in 0..d {
        let drh = s.da_r[i];
        dh_prev[i] += drh * r[i];
        s.da_r[i] = drh * h_prev[i] * r[i] * (one - r[i]);
    }

    if let Some(gr) = grads.as_deref_mut() {
        gr.reset.accumulate_grads(&s.da_r, px, trig, h_prev);
        gr.update.accumulate_grads(&s.da_z, px, trig, h_prev);
    }
    w.reset.u.matvec_t_acc(&s.da_r, dh_prev);
    w.update.u.matvec_t_acc(&s.da_z, dh_prev);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{init_params, InputFrame, LstmOutput, UnitType};

    // The forward wrapper is covered in the parent module; here pin down the
    // cache contents against a direct elementwise evaluation.
    #[test]
    fn cache_holds_gate_activations() {
        let p = init_params::<f64>(UnitType::Gru, 3, 3, 2, LstmOutput::PrevCell, 5);
        let w = p.gru_weights().unwrap();
        let h = vec![0.2, -0.3, 0.5];
        let frame = InputFrame::new(vec![0.4, -0.1], true);

        let mut out = vec![0.0; 3];
        let mut cache = GruCache::new(3);
        forward(w, &frame.pixels, frame.trigger, &h, &mut out, &mut cache);

        for i in 0..3 {
            let mut az = w.update.b[i];
            let mut ar = w.reset.b[i];
            for j in 0..2 {
                az += w.update.w.at(i, j) * frame.pixels[j];
                ar += w.reset.w.at(i, j) * frame.pixels[j];
            }
            az += w.update.w.at(i, 2);
            ar += w.reset.w.at(i, 2);
            for j in 0..3 {
                az += w.update.u.at(i, j) * h[j];
                ar += w.reset.u.at(i, j) * h[j];
            }
            assert!((cache.update[i] - sigmoid(az)).abs() < 1e-14);
            assert!((cache.reset[i] - sigmoid(ar)).abs() < 1e-14);
            assert!((cache.reset_h[i] - cache.reset[i] * h[i]).abs() < 1e-15);
            let blend = cache.update[i] * h[i] + (1.0 - cache.update[i]) * cache.candidate[i];
            assert!((out[i] - blend).abs() < 1e-15);
        }
    }
}
