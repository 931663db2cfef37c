//! Principal components of a cloud of analysis states, used to export
//! low-dimensional coordinates of hidden trajectories and slow points for
//! plotting. The covariance is dense and small (state dimension squared),
//! so a cyclic Jacobi eigensolver is plenty.

use crate::{CliError, CliResult};

#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vec<f64>,
    /// Unit-norm principal directions, strongest first.
    pub components: Vec<Vec<f64>>,
    /// Fraction of total variance along each kept component.
    pub explained: Vec<f64>,
}

impl Pca {
    /// Coordinates of `x` in the component basis, after centering.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.components
            .iter()
            .map(|comp| comp.iter().zip(x).zip(&self.mean).map(|((c, xi), m)| c * (xi - m)).sum())
            .collect()
    }

    /// Mean squared distance between the points and their reconstructions
    /// from the kept components.
    pub fn reconstruction_error(&self, states: &[Vec<f64>]) -> f64 {
        let mut total = 0.0;
        for x in states {
            let coords = self.project(x);
            let mut err = 0.0;
            for (j, (&xj, &mj)) in x.iter().zip(&self.mean).enumerate() {
                let rebuilt: f64 = coords.iter().zip(&self.components).map(|(t, comp)| t * comp[j]).sum();
                let diff = (xj - mj) - rebuilt;
                err += diff * diff;
            }
            total += err;
        }
        total / states.len() as f64
    }
}

/// Fit the top `k` principal components of `states`.
pub fn fit(states: &[Vec<f64>], k: usize) -> CliResult<Pca> {
    if k == 0 {
        return Err(CliError::Failure("pca needs at least one component".into()));
    }
    if states.len() < k + 1 {
        return Err(CliError::Failure(format!(
            "pca with {k} components needs at least {} states, got {}",
            k + 1,
            states.len()
        )));
    }
    let dim = states[0].len();
    if dim < k || states.iter().any(|s| s.len() != dim) {
        return Err(CliError::Failure("pca states must share one dimension of at least k".into()));
    }

    let n = states.len() as f64;
    let mut mean = vec![0.0; dim];
    for s in states {
        for (m, &v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= n;
    }

    let mut cov = vec![0.0; dim * dim];
    let mut centered = vec![0.0; dim];
    for s in states {
        for (c, (&v, &m)) in centered.iter_mut().zip(s.iter().zip(&mean)) {
            *c = v - m;
        }
        for i in 0..dim {
            let ci = centered[i];
            for j in i..dim {
                cov[i * dim + j] += ci * centered[j];
            }
        }
    }
    for i in 0..dim {
        for j in i..dim {
            let v = cov[i * dim + j] / n;
            cov[i * dim + j] = v;
            cov[j * dim + i] = v;
        }
    }

    let (eigvals, eigvecs) = jacobi_eigen(&mut cov, dim);
    let total: f64 = eigvals.iter().map(|&l| l.max(0.0)).sum();
    let mut order: Vec<usize> = (0..dim).collect();
    order.sort_by(|&a, &b| eigvals[b].total_cmp(&eigvals[a]));

    let mut components = Vec::with_capacity(k);
    let mut explained = Vec::with_capacity(k);
    for &idx in order.iter().take(k) {
        let mut comp: Vec<f64> = (0..dim).map(|r| eigvecs[r * dim + idx]).collect();
        // Deterministic orientation: the largest-magnitude entry is positive.
        let lead = comp.iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        if lead < 0.0 {
            comp.iter_mut().for_each(|v| *v = -*v);
        }
        components.push(comp);
        explained.push(if total > 0.0 { eigvals[idx].max(0.0) / total } else { 0.0 });
    }
    Ok(Pca { mean, components, explained })
}

/// Cyclic Jacobi on a symmetric matrix held in `a` (row-major, destroyed).
/// Returns the eigenvalues and the column-major-by-index eigenvector matrix
/// (eigenvector `j` lives in column `j`).
fn jacobi_eigen(a: &mut [f64], n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let scale: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    for _sweep in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| ((i + 1)..n).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-14 * scale {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[p * n + q];
                if apq.abs() <= 1e-300 {
                    continue;
                }
                let app = a[p * n + p];
                let aqq = a[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    let eigvals: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    (eigvals, v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use memlab_core::rng::{stream_rng, Stream};
    use rand::Rng;

    #[test]
    fn a_line_is_one_component() {
        let dir = [0.6, 0.0, -0.8, 0.0];
        let states: Vec<Vec<f64>> =
            (0..50).map(|i| dir.iter().map(|&d| d * (i as f64 - 25.0) + 1.0).collect()).collect();
        let pca = fit(&states, 2).unwrap();
        assert!(pca.explained[0] > 0.9999, "line variance on one axis, got {:?}", pca.explained);
        assert!(pca.explained[1] < 1e-9);
        // Component aligns with the line up to the sign convention.
        let dot: f64 = pca.components[0].iter().zip(&dir).map(|(a, b)| a * b).sum();
        assert!(dot.abs() > 0.9999);
        let lead = pca.components[0].iter().cloned().fold(0.0f64, |a, b| if b.abs() > a.abs() { b } else { a });
        assert!(lead > 0.0);
    }

    #[test]
    fn isotropic_cloud_spreads_variance_evenly() {
        let mut rng = stream_rng(17, Stream::Analysis);
        let dim = 50;
        let states: Vec<Vec<f64>> = (0..10_000)
            .map(|_| {
                (0..dim)
                    .map(|_| {
                        // Sum of uniforms is close enough to Gaussian here.
                        (0..6).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>()
                    })
                    .collect()
            })
            .collect();
        let pca = fit(&states, 3).unwrap();
        let top3: f64 = pca.explained.iter().sum();
        let ideal = 3.0 / dim as f64;
        assert!((top3 - ideal).abs() < 0.2 * ideal, "top-3 explained {top3}, ideal {ideal}");
    }

    #[test]
    fn projecting_the_mean_gives_zero() {
        let states: Vec<Vec<f64>> = vec![vec![1.0, 2.0, 3.0], vec![3.0, 0.0, 1.0], vec![2.0, 4.0, 2.0], vec![0.0, 2.0, 2.0]];
        let pca = fit(&states, 2).unwrap();
        let coords = pca.project(&pca.mean.clone());
        assert!(coords.iter().all(|c| c.abs() < 1e-12));
    }

    #[test]
    fn reconstruction_error_shrinks_with_more_components() {
        let mut rng = stream_rng(18, Stream::Analysis);
        let states: Vec<Vec<f64>> = (0..40).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
        let mut prev = f64::INFINITY;
        for k in 1..=6 {
            let pca = fit(&states, k).unwrap();
            let err = pca.reconstruction_error(&states);
            assert!(err <= prev + 1e-12, "error grew at k={k}: {err} > {prev}");
            prev = err;
        }
        assert!(prev < 1e-12, "full basis reconstructs exactly, got {prev}");
    }

    #[test]
    fn degenerate_inputs_are_rejected() {
        assert!(fit(&[vec![1.0, 2.0]], 1).is_err());
        assert!(fit(&[vec![1.0], vec![2.0], vec![3.0]], 0).is_err());
        let ragged = vec![vec![1.0, 2.0], vec![1.0], vec![0.0, 1.0], vec![2.0, 0.0]];
        assert!(fit(&ragged, 1).is_err());
    }
}
