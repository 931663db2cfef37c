//! Recurrent cells and their parameters: GRU and LSTM updates, linear
//! readout, initialization, and flat parameter views for the optimizer.
//! Forward passes live next to their hand-derived reverse-mode counterparts;
//! the backward code is exercised against finite differences in the
//! integration tests.

pub mod gru;
pub mod lstm;
mod map;

pub use map::{AnalysisState, TANH_INVERSION_CLAMP};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_chacha::rand_core::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{axpy, Mat};
use crate::real::Real;

/// Recurrent unit family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnitType {
    Gru,
    Lstm,
}

/// Which cell value the LSTM output gate multiplies when forming the hidden
/// state. `PrevCell` pairs the new hidden state with tanh of the cell from
/// before the update and is the default here; `NewCell` is the common
/// textbook pairing with the freshly updated cell, kept as a switch so the
/// two conventions can be compared.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LstmOutput {
    #[default]
    PrevCell,
    NewCell,
}

/// One input frame: pixel vector plus the scalar trigger channel, which is 1
/// on the single frame that requests a response and 0 everywhere else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFrame<T> {
    pub pixels: Vec<T>,
    pub trigger: T,
}

impl<T: Real> InputFrame<T> {
    pub fn new(pixels: Vec<T>, trigger: bool) -> Self {
        InputFrame { pixels, trigger: if trigger { T::one() } else { T::zero() } }
    }

    /// Total input width including the trigger channel.
    pub fn width(&self) -> usize {
        self.pixels.len() + 1
    }
}

/// One gate's affine map: `a = W [pixels; trigger] + U v + b` where `v` is a
/// hidden-state vector chosen by the cell equations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gate<T> {
    pub w: Mat<T>,
    pub u: Mat<T>,
    pub b: Vec<T>,
}

impl<T: Real> Gate<T> {
    fn zeros(d: usize, n_in: usize) -> Self {
        Gate { w: Mat::zeros(d, n_in), u: Mat::zeros(d, d), b: vec![T::zero(); d] }
    }

    /// Pre-activation into `out`.
    fn preact(&self, px: &[T], trig: T, v: &[T], out: &mut [T]) {
        out.copy_from_slice(&self.b);
        self.w.matvec_split_acc(px, trig, out);
        self.u.matvec_acc(v, out);
    }

    /// Accumulate parameter gradients given the cotangent `da` on this
    /// gate's pre-activation and the vector `v` its `U` multiplied.
    fn accumulate_grads(&mut self, da: &[T], px: &[T], trig: T, v: &[T]) {
        axpy(T::one(), da, &mut self.b);
        self.w.add_outer_split(da, px, trig);
        self.u.add_outer(da, v);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GruWeights<T> {
    pub update: Gate<T>,
    pub reset: Gate<T>,
    pub candidate: Gate<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LstmWeights<T> {
    pub forget: Gate<T>,
    pub input: Gate<T>,
    pub output: Gate<T>,
    pub cell: Gate<T>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CellWeights<T> {
    Gru(GruWeights<T>),
    Lstm(LstmWeights<T>),
}

/// Full parameter set of one network: recurrent cell plus linear readout.
///
/// The flat parameter order used by [`to_flat`](RnnParameters::to_flat) and
/// the optimizer is: per gate `W`, `U`, `b` with gates ordered update, reset,
/// candidate (GRU) or forget, input, output, cell (LSTM); then `w_out`,
/// `b_out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RnnParameters<T> {
    pub d: usize,
    pub n_in: usize,
    pub n_out: usize,
    pub lstm_output: LstmOutput,
    pub cell: CellWeights<T>,
    pub w_out: Mat<T>,
    pub b_out: Vec<T>,
}

/// Gradient of a loss with respect to every parameter, stored with the same
/// shape as the parameters themselves.
pub type Gradients<T> = RnnParameters<T>;

impl<T: Real> RnnParameters<T> {
    /// All-zero parameters of the given shape.
    pub fn zeros(unit: UnitType, d: usize, n_in: usize, n_out: usize, lstm_output: LstmOutput) -> Self {
        assert!(d >= 1 && n_in >= 1 && n_out >= 1, "network dimensions must be positive");
        let cell = match unit {
            UnitType::Gru => CellWeights::Gru(GruWeights {
                update: Gate::zeros(d, n_in),
                reset: Gate::zeros(d, n_in),
                candidate: Gate::zeros(d, n_in),
            }),
            UnitType::Lstm => CellWeights::Lstm(LstmWeights {
                forget: Gate::zeros(d, n_in),
                input: Gate::zeros(d, n_in),
                output: Gate::zeros(d, n_in),
                cell: Gate::zeros(d, n_in),
            }),
        };
        RnnParameters { d, n_in, n_out, lstm_output, cell, w_out: Mat::zeros(n_out, d), b_out: vec![T::zero(); n_out] }
    }

    /// Zero gradients (or parameters) with this network's shape.
    pub fn zeros_like(&self) -> Self {
        let mut z = Self::zeros(self.unit_type(), self.d, self.n_in, self.n_out, self.lstm_output);
        z.lstm_output = self.lstm_output;
        z
    }

    pub fn unit_type(&self) -> UnitType {
        match self.cell {
            CellWeights::Gru(_) => UnitType::Gru,
            CellWeights::Lstm(_) => UnitType::Lstm,
        }
    }

    /// Dimension of the analysis state: `d` for a GRU, `2d` for an LSTM
    /// (hidden state stacked with squashed cell state).
    pub fn state_dim(&self) -> usize {
        match self.unit_type() {
            UnitType::Gru => self.d,
            UnitType::Lstm => 2 * self.d,
        }
    }

    /// Index of the "no response yet" output class, always the last one.
    pub fn null_label(&self) -> usize {
        self.n_out - 1
    }

    pub fn gru_weights(&self) -> Option<&GruWeights<T>> {
        match &self.cell {
            CellWeights::Gru(g) => Some(g),
            CellWeights::Lstm(_) => None,
        }
    }

    pub fn lstm_weights(&self) -> Option<&LstmWeights<T>> {
        match &self.cell {
            CellWeights::Lstm(l) => Some(l),
            CellWeights::Gru(_) => None,
        }
    }

    fn check_frame(&self, frame: &InputFrame<T>) -> Result<()> {
        if frame.width() != self.n_in {
            return Err(Error::Dimension { context: "input frame", expected: self.n_in, actual: frame.width() });
        }
        Ok(())
    }

    fn check_state(&self, name: &'static str, v: &[T]) -> Result<()> {
        if v.len() != self.d {
            return Err(Error::Dimension { context: name, expected: self.d, actual: v.len() });
        }
        Ok(())
    }

    /// One GRU update. Errors if this network is not a GRU or dimensions
    /// disagree.
    pub fn gru_step(&self, h: &[T], frame: &InputFrame<T>) -> Result<Vec<T>> {
        let w = self
            .gru_weights()
            .ok_or_else(|| Error::InvalidArgument("gru_step called on an LSTM network".into()))?;
        self.check_state("hidden state", h)?;
        self.check_frame(frame)?;
        let mut out = vec![T::zero(); self.d];
        let mut cache = gru::GruCache::new(self.d);
        gru::forward(w, &frame.pixels, frame.trigger, h, &mut out, &mut cache);
        Ok(out)
    }

    /// One LSTM update; returns the new `(h, c)`. Errors if this network is
    /// not an LSTM or dimensions disagree.
    pub fn lstm_step(&self, h: &[T], c: &[T], frame: &InputFrame<T>) -> Result<(Vec<T>, Vec<T>)> {
        let w = self
            .lstm_weights()
            .ok_or_else(|| Error::InvalidArgument("lstm_step called on a GRU network".into()))?;
        self.check_state("hidden state", h)?;
        self.check_state("cell state", c)?;
        self.check_frame(frame)?;
        let mut h_out = vec![T::zero(); self.d];
        let mut c_out = vec![T::zero(); self.d];
        let mut cache = lstm::LstmCache::new(self.d);
        lstm::forward(w, self.lstm_output, &frame.pixels, frame.trigger, h, c, &mut h_out, &mut c_out, &mut cache);
        Ok((h_out, c_out))
    }

    /// Drive the network through a frame sequence from the zero state,
    /// calling `visit` after every step with the 1-based step index, the
    /// hidden state, and the cell state (LSTM only).
    pub fn run_sequence(&self, frames: &[InputFrame<T>], mut visit: impl FnMut(usize, &[T], Option<&[T]>)) -> Result<()> {
        for frame in frames {
            self.check_frame(frame)?;
        }
        let d = self.d;
        match &self.cell {
            CellWeights::Gru(w) => {
                let mut h = vec![T::zero(); d];
                let mut h_next = vec![T::zero(); d];
                let mut cache = gru::GruCache::new(d);
                for (t0, frame) in frames.iter().enumerate() {
                    gru::forward(w, &frame.pixels, frame.trigger, &h, &mut h_next, &mut cache);
                    std::mem::swap(&mut h, &mut h_next);
                    visit(t0 + 1, &h, None);
                }
            }
            CellWeights::Lstm(w) => {
                let mut h = vec![T::zero(); d];
                let mut c = vec![T::zero(); d];
                let mut h_next = vec![T::zero(); d];
                let mut c_next = vec![T::zero(); d];
                let mut cache = lstm::LstmCache::new(d);
                for (t0, frame) in frames.iter().enumerate() {
                    lstm::forward(w, self.lstm_output, &frame.pixels, frame.trigger, &h, &c, &mut h_next, &mut c_next, &mut cache);
                    std::mem::swap(&mut h, &mut h_next);
                    std::mem::swap(&mut c, &mut c_next);
                    visit(t0 + 1, &h, Some(&c));
                }
            }
        }
        Ok(())
    }

    /// Readout logits from a hidden state.
    pub fn readout(&self, h: &[T]) -> Vec<T> {
        debug_assert_eq!(h.len(), self.d);
        let mut logits = self.b_out.clone();
        self.w_out.matvec_acc(h, &mut logits);
        logits
    }

    /// Argmax class of the readout; ties resolve to the lowest index.
    pub fn readout_label(&self, h: &[T]) -> usize {
        let logits = self.readout(h);
        let mut best = 0;
        for (i, &v) in logits.iter().enumerate() {
            if v > logits[best] {
                best = i;
            }
        }
        best
    }

    fn tensor_slices(&self) -> Vec<&[T]> {
        let mut v: Vec<&[T]> = Vec::with_capacity(14);
        match &self.cell {
            CellWeights::Gru(g) => {
                for gate in [&g.update, &g.reset, &g.candidate] {
                    v.push(gate.w.data());
                    v.push(gate.u.data());
                    v.push(&gate.b);
                }
            }
            CellWeights::Lstm(l) => {
                for gate in [&l.forget, &l.input, &l.output, &l.cell] {
                    v.push(gate.w.data());
                    v.push(gate.u.data());
                    v.push(&gate.b);
                }
            }
        }
        v.push(self.w_out.data());
        v.push(&self.b_out);
        v
    }

    fn tensor_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v: Vec<&mut [T]> = Vec::with_capacity(14);
        match &mut self.cell {
            CellWeights::Gru(g) => {
                for gate in [&mut g.update, &mut g.reset, &mut g.candidate] {
                    v.push(gate.w.data_mut());
                    v.push(gate.u.data_mut());
                    v.push(&mut gate.b);
                }
            }
            CellWeights::Lstm(l) => {
                for gate in [&mut l.forget, &mut l.input, &mut l.output, &mut l.cell] {
                    v.push(gate.w.data_mut());
                    v.push(gate.u.data_mut());
                    v.push(&mut gate.b);
                }
            }
        }
        v.push(self.w_out.data_mut());
        v.push(&mut self.b_out);
        v
    }

    /// Number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.tensor_slices().iter().map(|s| s.len()).sum()
    }

    /// Concatenate all tensors in the documented flat order.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.n_params());
        for s in self.tensor_slices() {
            flat.extend_from_slice(s);
        }
        flat
    }

    /// Copy values out of a flat vector produced by [`to_flat`] on a network
    /// of the same shape.
    pub fn copy_from_flat(&mut self, flat: &[T]) {
        assert_eq!(flat.len(), self.n_params(), "flat parameter vector has the wrong length");
        let mut offset = 0;
        for s in self.tensor_slices_mut() {
            s.copy_from_slice(&flat[offset..offset + s.len()]);
            offset += s.len();
        }
    }

    /// Visit every scalar value in flat order.
    pub fn for_each_value(&self, mut f: impl FnMut(T)) {
        for s in self.tensor_slices() {
            for &v in s {
                f(v);
            }
        }
    }

    /// Mutate every scalar value in flat order.
    pub fn for_each_value_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for s in self.tensor_slices_mut() {
            for v in s.iter_mut() {
                f(v);
            }
        }
    }

    /// Euclidean norm over all parameters (used for gradient clipping).
    pub fn value_norm(&self) -> T {
        let mut sq = T::zero();
        self.for_each_value(|v| sq += v * v);
        sq.sqrt()
    }

    pub fn scale_values(&mut self, s: T) {
        self.for_each_value_mut(|v| *v *= s);
    }

    /// `self += s * other`, matching shapes assumed.
    pub fn add_scaled(&mut self, other: &Self, s: T) {
        let flat = other.to_flat();
        let mut offset = 0;
        for dst in self.tensor_slices_mut() {
            for v in dst.iter_mut() {
                *v += s * flat[offset];
                offset += 1;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.for_each_value(|v| ok &= v.is_finite());
        ok
    }
}

fn fill_uniform<T: Real>(data: &mut [T], bound: f64, rng: &mut ChaCha8Rng) {
    for v in data.iter_mut() {
        *v = T::of((rng.gen::<f64>() * 2.0 - 1.0) * bound);
    }
}

/// Fresh parameters: input and recurrent matrices drawn uniformly from
/// `±1/sqrt(fan_in)` in flat order, biases zero except the LSTM forget-gate
/// bias, which starts at 1 so early training does not wipe the cell state.
pub fn init_params<T: Real>(
    unit: UnitType,
    d: usize,
    n_in: usize,
    n_out: usize,
    lstm_output: LstmOutput,
    seed: u64,
) -> RnnParameters<T> {
    let mut p = RnnParameters::<T>::zeros(unit, d, n_in, n_out, lstm_output);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w_bound = 1.0 / (n_in as f64).sqrt();
    let u_bound = 1.0 / (d as f64).sqrt();

    let init_gate = |gate: &mut Gate<T>, rng: &mut ChaCha8Rng| {
        fill_uniform(gate.w.data_mut(), w_bound, rng);
        fill_uniform(gate.u.data_mut(), u_bound, rng);
    };
    match &mut p.cell {
        CellWeights::Gru(g) => {
            for gate in [&mut g.update, &mut g.reset, &mut g.candidate] {
                init_gate(gate, &mut rng);
            }
        }
        CellWeights::Lstm(l) => {
            for gate in [&mut l.forget, &mut l.input, &mut l.output, &mut l.cell] {
                init_gate(gate, &mut rng);
            }
            l.forget.b.iter_mut().for_each(|b| *b = T::one());
        }
    }
    fill_uniform(p.w_out.data_mut(), u_bound, &mut rng);
    p
}
