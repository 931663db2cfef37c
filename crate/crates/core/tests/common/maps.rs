//! Maps with closed-form fixed points, shared by the descent tests and the
//! acceptance gate: two hand-built contractions implementing `StateMap`
//! directly, and degenerate GRU/LSTM networks whose dynamics reduce to such
//! contractions so the same check can run through `find_slow_point`.

use memlab_core::error::Result;
use memlab_core::nncore::{CellWeights, LstmOutput, RnnParameters, UnitType};
use memlab_core::slowpoint::StateMap;

/// F(xi) = A xi + b with spectral radius < 1; instead of solving for the
/// fixed point (I - A)^{-1} b, pick x* first and set b = (I - A) x*.
pub struct Affine {
    a: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Affine {
    pub fn contraction_with_fixed_point(x_star: &[f64]) -> Self {
        let n = x_star.len();
        let mut a = vec![vec![0.0; n]; n];
        // Distinct damped diagonal modes plus one rotation block, so the
        // approach to the fixed point is neither axis-aligned nor monotone
        // in every coordinate.
        for (i, row) in a.iter_mut().enumerate() {
            row[i] = 0.7 - 0.15 * i as f64;
        }
        a[0][1] = -0.5;
        a[1][0] = 0.5;
        a[0][0] = 0.4;
        a[1][1] = 0.4;
        let b = (0..n)
            .map(|i| x_star[i] - (0..n).map(|j| a[i][j] * x_star[j]).sum::<f64>())
            .collect();
        Affine { a, b }
    }
}

impl StateMap<f64> for Affine {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.dim())
            .map(|i| self.b[i] + self.a[i].iter().zip(xi).map(|(&aij, &xj)| aij * xj).sum::<f64>())
            .collect())
    }

    fn pullback(&self, _xi: &[f64], cot: &[f64]) -> Result<Vec<f64>> {
        Ok((0..self.dim())
            .map(|j| (0..self.dim()).map(|i| self.a[i][j] * cot[i]).sum())
            .collect())
    }
}

/// F(xi) = tanh(W xi + b) with b = atanh(x*) - W x*, a saturated contraction
/// fixed at x* for any small W.
pub struct Saturated {
    w: Vec<Vec<f64>>,
    b: Vec<f64>,
}

impl Saturated {
    pub fn with_fixed_point(x_star: &[f64]) -> Self {
        let n = x_star.len();
        let w: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..n).map(|j| 0.3 * ((i * n + j) as f64 * 0.9).sin()).collect())
            .collect();
        let b = (0..n)
            .map(|i| x_star[i].atanh() - w[i].iter().zip(x_star).map(|(&wij, &xj)| wij * xj).sum::<f64>())
            .collect();
        Saturated { w, b }
    }

    fn preact(&self, xi: &[f64]) -> Vec<f64> {
        (0..self.b.len())
            .map(|i| self.b[i] + self.w[i].iter().zip(xi).map(|(&wij, &xj)| wij * xj).sum::<f64>())
            .collect()
    }
}

impl StateMap<f64> for Saturated {
    fn dim(&self) -> usize {
        self.b.len()
    }

    fn apply(&self, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.preact(xi).iter().map(|a| a.tanh()).collect())
    }

    fn pullback(&self, xi: &[f64], cot: &[f64]) -> Result<Vec<f64>> {
        let f: Vec<f64> = self.apply(xi)?;
        Ok((0..self.dim())
            .map(|j| (0..self.dim()).map(|i| self.w[i][j] * (1.0 - f[i] * f[i]) * cot[i]).sum())
            .collect())
    }
}

/// A GRU with zero update and reset weights halves the distance to a
/// constant candidate every step: h' = h/2 + tanh(a_g)/2, fixed at
/// tanh(a_g), where a_g depends only on the (fixed) input.
pub fn halving_gru(px: &[f64]) -> (RnnParameters<f64>, Vec<f64>) {
    let d = 4;
    let mut p = RnnParameters::<f64>::zeros(UnitType::Gru, d, px.len() + 1, 3, LstmOutput::PrevCell);
    if let CellWeights::Gru(g) = &mut p.cell {
        for i in 0..d {
            for (j, &x) in px.iter().enumerate() {
                g.candidate.w.set(i, j, 0.3 * (i as f64 - 1.5) * x.signum());
            }
            g.candidate.b[i] = 0.1 * i as f64 - 0.2;
        }
    }
    let mut cand = vec![0.0; d];
    if let CellWeights::Gru(g) = &p.cell {
        for i in 0..d {
            let mut a = g.candidate.b[i];
            for (j, &x) in px.iter().enumerate() {
                a += g.candidate.w.at(i, j) * x;
            }
            cand[i] = a.tanh();
        }
    }
    (p, cand)
}

/// An LSTM with zero gate weights: every gate sits at 1/2, so the cell
/// relaxes to tanh(a_c) and the hidden state to tanh(c*)/2, with a_c set by
/// the fixed input alone. Returns the parameters and the fixed analysis
/// state (h* followed by tanh(c*)).
pub fn cell_carry_lstm(px: &[f64]) -> (RnnParameters<f64>, Vec<f64>) {
    let d = 3;
    let mut params = RnnParameters::<f64>::zeros(UnitType::Lstm, d, px.len() + 1, 3, LstmOutput::PrevCell);
    let mut c_star = vec![0.0; d];
    if let CellWeights::Lstm(l) = &mut params.cell {
        for i in 0..d {
            for (j, &x) in px.iter().enumerate() {
                l.cell.w.set(i, j, 0.5 * (i + j + 1) as f64 * x.signum());
            }
            let a: f64 = (0..px.len()).map(|j| l.cell.w.at(i, j) * px[j]).sum();
            c_star[i] = a.tanh();
        }
    }
    let mut x_star: Vec<f64> = c_star.iter().map(|c| 0.5 * c.tanh()).collect();
    x_star.extend(c_star.iter().map(|c| c.tanh()));
    (params, x_star)
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}
