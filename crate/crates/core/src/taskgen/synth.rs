//! Synthetic stimulus corpus: one fixed template per class with mutually
//! orthogonal contrast patterns, jittered per sample. Useful when no image
//! dataset is on disk and for keeping tests fast; classes are linearly
//! separable by construction.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm2, scale};
use crate::real::Real;

use super::Corpus;

/// Build a synthetic corpus of `n_classes * samples_per_class` images with
/// `n_pixels` pixels each. Templates are orthonormal directions mapped into
/// pixel range, so `n_pixels >= n_classes` is required; `jitter` is the
/// per-pixel standard deviation of the sample noise around its template.
pub fn synth_corpus<T: Real>(
    n_classes: usize,
    n_pixels: usize,
    samples_per_class: usize,
    jitter: f64,
    seed: u64,
) -> Result<Corpus<T>> {
    if n_classes == 0 || samples_per_class == 0 {
        return Err(Error::InvalidArgument("synthetic corpus needs at least one class and one sample".into()));
    }
    if n_pixels < n_classes {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs n_pixels >= n_classes, got {n_pixels} < {n_classes}"
        )));
    }
    if !(0.0..=1.0).contains(&jitter) {
        return Err(Error::InvalidArgument(format!("jitter must be in [0, 1], got {jitter}")));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Random directions, orthonormalized so every pair of classes is as far
    // apart as the pixel budget allows.
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(n_classes);
    while dirs.len() < n_classes {
        let mut v: Vec<f64> = (0..n_pixels).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        for d in &dirs {
            let proj = -dot(&v, d);
            axpy(proj, d, &mut v);
        }
        let n = norm2(&v);
        if n < 1e-8 {
            continue; // essentially parallel draw, try again
        }
        scale(1.0 / n, &mut v);
        dirs.push(v);
    }

    // Map each direction into pixel range around mid-gray. Unit vectors have
    // entries in [-1, 1], so 0.5 + 0.45v stays within [0.05, 0.95].
    let templates: Vec<Vec<f64>> = dirs
        .iter()
        .map(|d| d.iter().map(|&x| 0.5 + 0.45 * x).collect())
        .collect();

    let mut images = Vec::with_capacity(n_classes * samples_per_class);
    let mut labels = Vec::with_capacity(n_classes * samples_per_class);
    for (class, template) in templates.iter().enumerate() {
        for _ in 0..samples_per_class {
            let img: Vec<T> = template
                .iter()
                .map(|&p| {
                    let z: f64 = rng.sample(StandardNormal);
                    T::of((p + jitter * z).clamp(0.0, 1.0))
                })
                .collect();
            images.push(img);
            labels.push(class);
        }
    }
    Corpus::new(images, labels, n_classes)
}
