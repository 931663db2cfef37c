//! The hidden dynamics viewed as a map on a single analysis state vector ξ.
//!
//! For a GRU, ξ is the hidden state itself. For an LSTM, ξ stacks the hidden
//! state with tanh of the cell state so that every coordinate lives in
//! (−1, 1); applying the map inverts the tanh (with a clamp for safety),
//! steps the cell, and squashes again. Slow-point search, backtracking, and
//! the speed penalty all operate on this representation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::Real;

use super::{gru, lstm, CellWeights, Gradients, InputFrame, RnnParameters};

/// Cell-state coordinates are clamped to this magnitude before inverting
/// tanh, keeping the map finite on the closed cube [−1, 1]^dim.
pub const TANH_INVERSION_CLAMP: f64 = 1.0 - 1e-6;

/// A point in the analysis space of a network: hidden state for a GRU,
/// hidden state stacked with squashed cell state for an LSTM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AnalysisState<T>(pub Vec<T>);

impl<T: Real> AnalysisState<T> {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// Euclidean distance to another state.
    pub fn distance(&self, other: &Self) -> T {
        debug_assert_eq!(self.dim(), other.dim());
        self.0
            .iter()
            .zip(&other.0)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum::<T>()
            .sqrt()
    }
}

fn check_finite<T: Real>(context: &'static str, v: &[T]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFiniteState { context })
    }
}

impl<T: Real> RnnParameters<T> {
    /// Pack raw network state into an analysis state. `c` is required for an
    /// LSTM and must be absent for a GRU.
    pub fn analysis_state(&self, h: &[T], c: Option<&[T]>) -> AnalysisState<T> {
        debug_assert_eq!(h.len(), self.d);
        match (&self.cell, c) {
            (CellWeights::Gru(_), None) => AnalysisState(h.to_vec()),
            (CellWeights::Lstm(_), Some(c)) => {
                debug_assert_eq!(c.len(), self.d);
                let mut xi = Vec::with_capacity(2 * self.d);
                xi.extend_from_slice(h);
                xi.extend(c.iter().map(|&v| v.tanh()));
                AnalysisState(xi)
            }
            (CellWeights::Gru(_), Some(_)) => panic!("cell state supplied for a GRU"),
            (CellWeights::Lstm(_), None) => panic!("cell state missing for an LSTM"),
        }
    }

    fn check_xi(&self, xi: &[T]) -> Result<()> {
        if xi.len() != self.state_dim() {
            return Err(Error::Dimension { context: "analysis state", expected: self.state_dim(), actual: xi.len() });
        }
        check_finite("forward map", xi)
    }

    /// Apply one step of the dynamics to an analysis state under a fixed
    /// input frame, returning the next analysis state.
    pub fn forward_map(&self, xi: &[T], frame: &InputFrame<T>) -> Result<Vec<T>> {
        self.check_xi(xi)?;
        self.check_frame(frame)?;
        Ok(self.forward_map_unchecked(xi, frame))
    }

    pub(crate) fn forward_map_unchecked(&self, xi: &[T], frame: &InputFrame<T>) -> Vec<T> {
        let d = self.d;
        match &self.cell {
            CellWeights::Gru(w) => {
                let mut out = vec![T::zero(); d];
                let mut cache = gru::GruCache::new(d);
                gru::forward(w, &frame.pixels, frame.trigger, xi, &mut out, &mut cache);
                out
            }
            CellWeights::Lstm(w) => {
                let (h, u) = xi.split_at(d);
                let c: Vec<T> = u.iter().map(|&v| clamp_atanh(v)).collect();
                let mut h_out = vec![T::zero(); d];
                let mut c_out = vec![T::zero(); d];
                let mut cache = lstm::LstmCache::new(d);
                lstm::forward(w, self.lstm_output, &frame.pixels, frame.trigger, h, &c, &mut h_out, &mut c_out, &mut cache);
                let mut out = h_out;
                out.extend(c_out.iter().map(|&v| v.tanh()));
                out
            }
        }
    }

    /// Pull a cotangent back through the forward map: returns `Jᵀ v` where
    /// `J` is the Jacobian of [`forward_map`] with respect to ξ.
    pub fn forward_map_pullback(&self, xi: &[T], frame: &InputFrame<T>, cotangent: &[T]) -> Result<Vec<T>> {
        self.check_xi(xi)?;
        self.check_frame(frame)?;
        if cotangent.len() != self.state_dim() {
            return Err(Error::Dimension {
                context: "forward map cotangent",
                expected: self.state_dim(),
                actual: cotangent.len(),
            });
        }
        let mut out = vec![T::zero(); self.state_dim()];
        self.map_backward(xi, frame, cotangent, &mut out, None);
        Ok(out)
    }

    /// Accumulate the parameter-space pullback `(∂F/∂θ)ᵀ v` of the forward
    /// map at a fixed state into `grads`.
    pub fn forward_map_param_pullback(
        &self,
        xi: &[T],
        frame: &InputFrame<T>,
        cotangent: &[T],
        grads: &mut Gradients<T>,
    ) -> Result<()> {
        self.check_xi(xi)?;
        self.check_frame(frame)?;
        let mut sink = vec![T::zero(); self.state_dim()];
        self.map_backward(xi, frame, cotangent, &mut sink, Some(grads));
        Ok(())
    }

    /// Shared reverse pass: recomputes the forward step, then accumulates the
    /// state cotangent into `dxi` and optionally parameter gradients.
    fn map_backward(&self, xi: &[T], frame: &InputFrame<T>, cot: &[T], dxi: &mut [T], grads: Option<&mut Gradients<T>>) {
        let d = self.d;
        match &self.cell {
            CellWeights::Gru(w) => {
                let mut out = vec![T::zero(); d];
                let mut cache = gru::GruCache::new(d);
                gru::forward(w, &frame.pixels, frame.trigger, xi, &mut out, &mut cache);
                let gw = grads.map(|g| match &mut g.cell {
                    CellWeights::Gru(gg) => gg,
                    CellWeights::Lstm(_) => panic!("gradient shape does not match parameters"),
                });
                let mut scratch = gru::GruScratch::new(d);
                gru::backward(w, &frame.pixels, frame.trigger, xi, &cache, cot, dxi, gw, &mut scratch);
            }
            CellWeights::Lstm(w) => {
                let (h, u) = xi.split_at(d);
                let c: Vec<T> = u.iter().map(|&v| clamp_atanh(v)).collect();
                let mut h_out = vec![T::zero(); d];
                let mut c_out = vec![T::zero(); d];
                let mut cache = lstm::LstmCache::new(d);
                lstm::forward(w, self.lstm_output, &frame.pixels, frame.trigger, h, &c, &mut h_out, &mut c_out, &mut cache);

                // The second output block is tanh(c'); fold its derivative
                // into the cell cotangent before walking back through the step.
                let (cot_h, cot_u) = cot.split_at(d);
                let mut dc: Vec<T> = (0..d)
                    .map(|k| {
                        let t = c_out[k].tanh();
                        cot_u[k] * (T::one() - t * t)
                    })
                    .collect();
                let mut dh_prev = vec![T::zero(); d];
                let mut dc_prev = vec![T::zero(); d];
                let gw = grads.map(|g| match &mut g.cell {
                    CellWeights::Lstm(gg) => gg,
                    CellWeights::Gru(_) => panic!("gradient shape does not match parameters"),
                });
                let mut scratch = lstm::LstmScratch::new(d);
                lstm::backward(
                    w,
                    self.lstm_output,
                    &frame.pixels,
                    frame.trigger,
                    h,
                    &c,
                    &c_out,
                    &cache,
                    cot_h,
                    &mut dc,
                    &mut dh_prev,
                    &mut dc_prev,
                    gw,
                    &mut scratch,
                );
                // And through c = atanh(u), flat where the clamp is active.
                let clamp = T::of(TANH_INVERSION_CLAMP);
                for k in 0..d {
                    dxi[k] += dh_prev[k];
                    if u[k].abs() < clamp {
                        dxi[d + k] += dc_prev[k] / (T::one() - u[k] * u[k]);
                    }
                }
            }
        }
    }
}

fn clamp_atanh<T: Real>(u: T) -> T {
    let clamp = T::of(TANH_INVERSION_CLAMP);
    let v = u.max(-clamp).min(clamp);
    // atanh via logs; v is strictly inside (−1, 1) after the clamp.
    ((T::one() + v) / (T::one() - v)).ln() * T::of(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{init_params, LstmOutput, UnitType};

    fn frame(n: usize, v: f64) -> InputFrame<f64> {
        InputFrame::new(vec![v; n], false)
    }

    #[test]
    fn gru_map_is_the_plain_step() {
        let p = init_params::<f64>(UnitType::Gru, 5, 3, 4, LstmOutput::PrevCell, 21);
        let xi: Vec<f64> = (0..5).map(|i| 0.2 * i as f64 - 0.5).collect();
        let f = frame(2, 0.1);
        assert_eq!(p.forward_map(&xi, &f).unwrap(), p.gru_step(&xi, &f).unwrap());
    }

    #[test]
    fn lstm_map_round_trips_through_the_raw_step() {
        for variant in [LstmOutput::PrevCell, LstmOutput::NewCell] {
            let p = init_params::<f64>(UnitType::Lstm, 4, 3, 4, variant, 22);
            let h: Vec<f64> = (0..4).map(|i| 0.1 * i as f64 - 0.2).collect();
            let c: Vec<f64> = (0..4).map(|i| 0.4 * i as f64 - 0.7).collect();
            let f = frame(2, -0.2);

            let xi = p.analysis_state(&h, Some(&c));
            let mapped = p.forward_map(xi.as_slice(), &f).unwrap();
            let (h2, c2) = p.lstm_step(&h, &c, &f).unwrap();
            let expect = p.analysis_state(&h2, Some(&c2));
            for k in 0..8 {
                assert!((mapped[k] - expect.as_slice()[k]).abs() < 1e-9, "coordinate {k} of variant {variant:?}");
            }
        }
    }

    #[test]
    fn saturated_cell_coordinates_stay_finite() {
        let p = init_params::<f64>(UnitType::Lstm, 3, 2, 3, LstmOutput::PrevCell, 23);
        let mut xi = vec![0.0; 6];
        xi[3] = 1.0;
        xi[4] = -1.0;
        xi[5] = 0.999_999_9; // beyond the clamp
        let out = p.forward_map(&xi, &frame(1, 0.0)).unwrap();
        assert!(out.iter().all(|v| v.is_finite()));
        let grad = p.forward_map_pullback(&xi, &frame(1, 0.0), &vec![1.0; 6]).unwrap();
        assert!(grad.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn non_finite_state_is_rejected() {
        let p = init_params::<f64>(UnitType::Gru, 3, 2, 3, LstmOutput::PrevCell, 24);
        let xi = vec![0.0, f64::NAN, 0.0];
        assert!(matches!(p.forward_map(&xi, &frame(1, 0.0)), Err(Error::NonFiniteState { .. })));
    }

    #[test]
    fn distance_is_euclidean() {
        let a = AnalysisState(vec![0.0f64, 3.0]);
        let b = AnalysisState(vec![4.0f64, 0.0]);
        assert_eq!(a.distance(&b), 5.0);
    }
}
