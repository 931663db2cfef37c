//! Weighted cross-entropy over trial sequences and its exact gradient via
//! backpropagation through time. The loss is the mean over every (trial,
//! step) pair of `w_t * CE_t`, with the rendered weights putting `t_max`
//! times more mass on the response step.

use crate::error::{Error, Result};
use crate::linalg::axpy;
use crate::nncore::{gru, lstm, CellWeights, Gradients, RnnParameters};
use crate::real::Real;
use crate::taskgen::{TrialBatch, TrialSequence};

/// Per-sequence scratch: states, gate caches, and softmax outputs, reused
/// across the trials of a batch.
struct Workspace<T> {
    hs: Vec<Vec<T>>,
    cs: Vec<Vec<T>>,
    gru_caches: Vec<gru::GruCache<T>>,
    lstm_caches: Vec<lstm::LstmCache<T>>,
    probs: Vec<Vec<T>>,
    dh: Vec<T>,
    dh_prev: Vec<T>,
    dc: Vec<T>,
    dc_prev: Vec<T>,
    dlogits: Vec<T>,
    gru_scratch: gru::GruScratch<T>,
    lstm_scratch: lstm::LstmScratch<T>,
}

impl<T: Real> Workspace<T> {
    fn new(d: usize, n_out: usize) -> Self {
        Workspace {
            hs: Vec::new(),
            cs: Vec::new(),
            gru_caches: Vec::new(),
            lstm_caches: Vec::new(),
            probs: Vec::new(),
            dh: vec![T::zero(); d],
            dh_prev: vec![T::zero(); d],
            dc: vec![T::zero(); d],
            dc_prev: vec![T::zero(); d],
            dlogits: vec![T::zero(); n_out],
            gru_scratch: gru::GruScratch::new(d),
            lstm_scratch: lstm::LstmScratch::new(d),
        }
    }

    fn reserve(&mut self, t_len: usize, d: usize, n_out: usize, lstm: bool) {
        while self.hs.len() < t_len + 1 {
            self.hs.push(vec![T::zero(); d]);
        }
        while self.probs.len() < t_len {
            self.probs.push(vec![T::zero(); n_out]);
        }
        while self.gru_caches.len() < t_len && !lstm {
            self.gru_caches.push(gru::GruCache::new(d));
        }
        if lstm {
            while self.cs.len() < t_len + 1 {
                self.cs.push(vec![T::zero(); d]);
            }
            while self.lstm_caches.len() < t_len {
                self.lstm_caches.push(lstm::LstmCache::new(d));
            }
        }
    }
}

/// Log-softmax the logits in place into probabilities, returning the log
/// probability of `target`.
fn softmax_logprob<T: Real>(logits: &mut [T], target: usize) -> T {
    let mut m = logits[0];
    for &l in logits.iter() {
        m = m.max(l);
    }
    let mut z = T::zero();
    for l in logits.iter() {
        z += (*l - m).exp();
    }
    let lse = m + z.ln();
    let logp = logits[target] - lse;
    for l in logits.iter_mut() {
        *l = (*l - lse).exp();
    }
    logp
}

fn check_sequence<T: Real>(params: &RnnParameters<T>, seq: &TrialSequence<T>) -> Result<()> {
    if seq.frames.len() != seq.targets.len() || seq.frames.len() != seq.weights.len() {
        return Err(Error::InvalidArgument("trial frames, targets, and weights disagree in length".into()));
    }
    if seq.is_empty() {
        return Err(Error::InvalidArgument("empty trial in batch".into()));
    }
    for frame in &seq.frames {
        if frame.width() != params.n_in {
            return Err(Error::Dimension { context: "trial frame", expected: params.n_in, actual: frame.width() });
        }
    }
    if let Some(&bad) = seq.targets.iter().find(|&&y| y >= params.n_out) {
        return Err(Error::InvalidArgument(format!("target class {bad} outside readout width {}", params.n_out)));
    }
    Ok(())
}

/// Forward pass, loss, and readout softmax for one trial; states and caches
/// stay in the workspace for the backward sweep.
fn forward_trial<T: Real>(params: &RnnParameters<T>, seq: &TrialSequence<T>, inv_norm: T, ws: &mut Workspace<T>) -> T {
    let t_len = seq.len();
    let mut loss = T::zero();
    ws.hs[0].iter_mut().for_each(|v| *v = T::zero());
    match &params.cell {
        CellWeights::Gru(w) => {
            for t in 0..t_len {
                let (before, after) = ws.hs.split_at_mut(t + 1);
                let frame = &seq.frames[t];
                gru::forward(w, &frame.pixels, frame.trigger, &before[t], &mut after[0], &mut ws.gru_caches[t]);
            }
        }
        CellWeights::Lstm(w) => {
            ws.cs[0].iter_mut().for_each(|v| *v = T::zero());
            for t in 0..t_len {
                let (hb, ha) = ws.hs.split_at_mut(t + 1);
                let (cb, ca) = ws.cs.split_at_mut(t + 1);
                let frame = &seq.frames[t];
                lstm::forward(
                    w,
                    params.lstm_output,
                    &frame.pixels,
                    frame.trigger,
                    &hb[t],
                    &cb[t],
                    &mut ha[0],
                    &mut ca[0],
                    &mut ws.lstm_caches[t],
                );
            }
        }
    }
    for t in 0..t_len {
        let probs = &mut ws.probs[t];
        probs.copy_from_slice(&params.b_out);
        params.w_out.matvec_acc(&ws.hs[t + 1], probs);
        let logp = softmax_logprob(probs, seq.targets[t]);
        loss -= seq.weights[t] * logp * inv_norm;
    }
    loss
}

/// Backward sweep for one trial; accumulates into `grads`.
fn backward_trial<T: Real>(
    params: &RnnParameters<T>,
    seq: &TrialSequence<T>,
    inv_norm: T,
    grads: &mut Gradients<T>,
    ws: &mut Workspace<T>,
) {
    let t_len = seq.len();
    ws.dh.iter_mut().for_each(|v| *v = T::zero());
    ws.dc.iter_mut().for_each(|v| *v = T::zero());

    for t in (0..t_len).rev() {
        // d loss / d logits = (softmax - onehot) * weight * inv_norm.
        let scale = seq.weights[t] * inv_norm;
        for (dl, &p) in ws.dlogits.iter_mut().zip(&ws.probs[t]) {
            *dl = p * scale;
        }
        ws.dlogits[seq.targets[t]] -= scale;

        grads.w_out.add_outer(&ws.dlogits, &ws.hs[t + 1]);
        axpy(T::one(), &ws.dlogits, &mut grads.b_out);
        params.w_out.matvec_t_acc(&ws.dlogits, &mut ws.dh);

        let frame = &seq.frames[t];
        ws.dh_prev.iter_mut().for_each(|v| *v = T::zero());
        match (&params.cell, &mut grads.cell) {
            (CellWeights::Gru(w), CellWeights::Gru(gw)) => {
                gru::backward(
                    w,
                    &frame.pixels,
                    frame.trigger,
                    &ws.hs[t],
                    &ws.gru_caches[t],
                    &ws.dh,
                    &mut ws.dh_prev,
                    Some(gw),
                    &mut ws.gru_scratch,
                );
            }
            (CellWeights::Lstm(w), CellWeights::Lstm(gw)) => {
                ws.dc_prev.iter_mut().for_each(|v| *v = T::zero());
                lstm::backward(
                    w,
                    params.lstm_output,
                    &frame.pixels,
                    frame.trigger,
                    &ws.hs[t],
                    &ws.cs[t],
                    &ws.cs[t + 1],
                    &ws.lstm_caches[t],
                    &ws.dh,
                    &ws.dc,
                    &mut ws.dh_prev,
                    &mut ws.dc_prev,
                    Some(gw),
                    &mut ws.lstm_scratch,
                );
                std::mem::swap(&mut ws.dc, &mut ws.dc_prev);
            }
            _ => unreachable!("gradients are allocated with the parameter shape"),
        }
        std::mem::swap(&mut ws.dh, &mut ws.dh_prev);
    }
}

/// Loss and exact parameter gradients over a batch. Trials are processed in
/// order and gradients accumulated sequentially, so results are bitwise
/// reproducible. A non-finite per-trial loss aborts with the trial index
/// (the reported step is filled in by the caller).
pub fn loss_and_grads<T: Real>(params: &RnnParameters<T>, batch: &TrialBatch<T>) -> Result<(T, Gradients<T>)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    for seq in batch {
        check_sequence(params, seq)?;
    }
    let total_steps: usize = batch.iter().map(|s| s.len()).sum();
    let inv_norm = T::one() / T::of(total_steps as f64);

    let mut grads = params.zeros_like();
    let mut ws = Workspace::new(params.d, params.n_out);
    let lstm = params.lstm_weights().is_some();
    let mut loss = T::zero();
    for (trial, seq) in batch.iter().enumerate() {
        ws.reserve(seq.len(), params.d, params.n_out, lstm);
        let l = forward_trial(params, seq, inv_norm, &mut ws);
        if !l.is_finite() {
            return Err(Error::NonFiniteLoss { step: 0, trial });
        }
        loss += l;
        backward_trial(params, seq, inv_norm, &mut grads, &mut ws);
    }
    Ok((loss, grads))
}
