//! Scalar-loop reference implementations shared by the integration tests.
//!
//! Everything here recomputes the library's numerics from the raw weight
//! values with plain nested loops and its own activation helpers, so a test
//! comparing the two paths exercises the real code rather than checking it
//! against itself. Tolerances are relative unless a magnitude is too small
//! for a relative gap to mean anything.

#![allow(dead_code)]

pub mod maps;

use memlab_core::nncore::{CellWeights, Gate, InputFrame, RnnParameters};
use memlab_core::nncore::{LstmOutput, TANH_INVERSION_CLAMP};
use memlab_core::taskgen::TrialSequence;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn atanh_clamped(v: f64) -> f64 {
    let v = v.clamp(-TANH_INVERSION_CLAMP, TANH_INVERSION_CLAMP);
    0.5 * ((1.0 + v) / (1.0 - v)).ln()
}

/// Gate pre-activation `b + W [px; trig] + U v`, elementwise.
fn gate_preact(g: &Gate<f64>, px: &[f64], trig: f64, v: &[f64]) -> Vec<f64> {
    let d = g.b.len();
    let mut out = vec![0.0; d];
    for i in 0..d {
        let mut a = g.b[i];
        for (j, &p) in px.iter().enumerate() {
            a += g.w.at(i, j) * p;
        }
        a += g.w.at(i, px.len()) * trig;
        for (j, &vj) in v.iter().enumerate() {
            a += g.u.at(i, j) * vj;
        }
        out[i] = a;
    }
    out
}

pub fn gru_step(p: &RnnParameters<f64>, h: &[f64], px: &[f64], trig: f64) -> Vec<f64> {
    let w = p.gru_weights().expect("oracle called with the wrong unit type");
    let d = h.len();
    let az = gate_preact(&w.update, px, trig, h);
    let ar = gate_preact(&w.reset, px, trig, h);
    let rh: Vec<f64> = (0..d).map(|i| sigmoid(ar[i]) * h[i]).collect();
    let ag = gate_preact(&w.candidate, px, trig, &rh);
    (0..d)
        .map(|i| {
            let z = sigmoid(az[i]);
            z * h[i] + (1.0 - z) * ag[i].tanh()
        })
        .collect()
}

pub fn lstm_step(p: &RnnParameters<f64>, h: &[f64], c: &[f64], px: &[f64], trig: f64) -> (Vec<f64>, Vec<f64>) {
    let w = p.lstm_weights().expect("oracle called with the wrong unit type");
    let d = h.len();
    let af = gate_preact(&w.forget, px, trig, h);
    let ai = gate_preact(&w.input, px, trig, h);
    let ao = gate_preact(&w.output, px, trig, h);
    let ag = gate_preact(&w.cell, px, trig, h);
    let mut h_new = vec![0.0; d];
    let mut c_new = vec![0.0; d];
    for i in 0..d {
        c_new[i] = sigmoid(af[i]) * c[i] + sigmoid(ai[i]) * ag[i].tanh();
        let squashed = match p.lstm_output {
            LstmOutput::PrevCell => c[i].tanh(),
            LstmOutput::NewCell => c_new[i].tanh(),
        };
        h_new[i] = sigmoid(ao[i]) * squashed;
    }
    (h_new, c_new)
}

pub fn readout(p: &RnnParameters<f64>, h: &[f64]) -> Vec<f64> {
    (0..p.n_out)
        .map(|k| {
            let mut l = p.b_out[k];
            for (j, &hj) in h.iter().enumerate() {
                l += p.w_out.at(k, j) * hj;
            }
            l
        })
        .collect()
}

/// One application of the dynamics to an analysis state: the plain step for
/// a GRU; for an LSTM, unsquash the cell block, step, and squash again.
pub fn forward_map(p: &RnnParameters<f64>, xi: &[f64], px: &[f64], trig: f64) -> Vec<f64> {
    match &p.cell {
        CellWeights::Gru(_) => gru_step(p, xi, px, trig),
        CellWeights::Lstm(_) => {
            let d = p.d;
            let h = &xi[..d];
            let c: Vec<f64> = xi[d..].iter().map(|&u| atanh_clamped(u)).collect();
            let (h2, c2) = lstm_step(p, h, &c, px, trig);
            let mut out = h2;
            out.extend(c2.iter().map(|v| v.tanh()));
            out
        }
    }
}

pub fn speed(p: &RnnParameters<f64>, xi: &[f64], px: &[f64], trig: f64) -> f64 {
    let fx = forward_map(p, xi, px, trig);
    fx.iter().zip(xi).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt()
}

fn log_softmax_at(logits: &[f64], target: usize) -> f64 {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|&l| (l - m).exp()).sum::<f64>().ln();
    logits[target] - lse
}

/// Weighted cross-entropy over a batch: run each trial forward with the
/// scalar-loop cells, then average `w_t * CE_t` over every (trial, step)
/// pair of the batch.
pub fn batch_loss(p: &RnnParameters<f64>, batch: &[TrialSequence<f64>]) -> f64 {
    let total_steps: usize = batch.iter().map(|s| s.len()).sum();
    let mut loss = 0.0;
    for seq in batch {
        let mut h = vec![0.0; p.d];
        let mut c = vec![0.0; p.d];
        for (t, frame) in seq.frames.iter().enumerate() {
            match &p.cell {
                CellWeights::Gru(_) => h = gru_step(p, &h, &frame.pixels, frame.trigger),
                CellWeights::Lstm(_) => {
                    let (h2, c2) = lstm_step(p, &h, &c, &frame.pixels, frame.trigger);
                    h = h2;
                    c = c2;
                }
            }
            let logits = readout(p, &h);
            loss -= seq.weights[t] * log_softmax_at(&logits, seq.targets[t]);
        }
    }
    loss / total_steps as f64
}

/// Relative gap between two values, falling back to the absolute gap when
/// both are too small for the ratio to be informative.
pub fn rel_gap(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom < 1e-6 {
        (a - b).abs()
    } else {
        (a - b).abs() / denom
    }
}

pub fn assert_all_close(got: &[f64], want: &[f64], tol: f64, what: &str) {
    assert_eq!(got.len(), want.len(), "{what}: length mismatch");
    for (k, (&g, &w)) in got.iter().zip(want).enumerate() {
        let gap = rel_gap(g, w);
        assert!(gap <= tol, "{what}[{k}]: {g} vs {w} (gap {gap:.3e} > {tol:.1e})");
    }
}

/// Worst elementwise [`rel_gap`] between two equal-length slices.
pub fn max_rel_gap(got: &[f64], want: &[f64]) -> f64 {
    assert_eq!(got.len(), want.len(), "max_rel_gap: length mismatch");
    got.iter().zip(want).map(|(&g, &w)| rel_gap(g, w)).fold(0.0, f64::max)
}

/// Central finite differences of a scalar function over every flat
/// parameter of `params`.
pub fn fd_param_grad(params: &RnnParameters<f64>, eps: f64, f: impl Fn(&RnnParameters<f64>) -> f64) -> Vec<f64> {
    let flat = params.to_flat();
    let mut probe = params.clone();
    let mut grad = vec![0.0; flat.len()];
    for k in 0..flat.len() {
        let mut bumped = flat.clone();
        bumped[k] = flat[k] + eps;
        probe.copy_from_flat(&bumped);
        let up = f(&probe);
        bumped[k] = flat[k] - eps;
        probe.copy_from_flat(&bumped);
        let down = f(&probe);
        grad[k] = (up - down) / (2.0 * eps);
    }
    grad
}

/// A frame with deterministic pseudo-random pixels for oracle sweeps.
pub fn random_frame(rng: &mut impl rand::Rng, n_px: usize, trigger: bool) -> InputFrame<f64> {
    InputFrame::new((0..n_px).map(|_| rng.gen_range(-1.5..1.5)).collect(), trigger)
}

pub fn random_state(rng: &mut impl rand::Rng, n: usize, bound: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}
