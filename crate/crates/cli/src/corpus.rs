//! Corpus construction from the dataset section: image files (IDX format)
//! with their official train/test split, or a synthetic corpus whose
//! doubled sample count is split in half so evaluation never sees a
//! training image.

use memlab_core::taskgen::{load_mnist, synth_corpus, Corpus, Split as IdxSplit};
use memlab_core::Scalar;

use crate::{CliError, CliResult};
use crate::config::DatasetConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Eval,
}

pub fn build_corpus(cfg: &DatasetConfig, split: Split) -> CliResult<Corpus<Scalar>> {
    match cfg.kind.as_str() {
        "mnist" => {
            let path = cfg.path.as_ref().expect("validated: mnist requires a path");
            let idx_split = match split {
                Split::Train => IdxSplit::Train,
                Split::Eval => IdxSplit::Test,
            };
            load_mnist(path, idx_split, cfg.downsample).map_err(|e| match &e {
                memlab_core::Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => {
                    CliError::MissingInput(format!("dataset.path {}: {e}", path.display()))
                }
                _ => CliError::Failure(format!("dataset.path {}: {e}", path.display())),
            })
        }
        _ => {
            let full = synth_corpus::<Scalar>(
                cfg.classes,
                cfg.pixels,
                2 * cfg.samples_per_class,
                cfg.jitter,
                cfg.seed,
            )?;
            let keep_even = split == Split::Train;
            let mut images = Vec::with_capacity(full.len() / 2);
            let mut labels = Vec::with_capacity(full.len() / 2);
            for i in 0..full.len() {
                if (i % 2 == 0) == keep_even {
                    images.push(full.image(i).to_vec());
                    labels.push(full.label(i));
                }
            }
            Ok(Corpus::new(images, labels, cfg.classes)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synth_cfg() -> DatasetConfig {
        DatasetConfig {
            kind: "synthetic".into(),
            path: None,
            downsample: 2,
            classes: 3,
            pixels: 8,
            samples_per_class: 5,
            jitter: 0.1,
            seed: 11,
        }
    }

    #[test]
    fn synthetic_splits_are_disjoint_and_balanced() {
        let train = build_corpus(&synth_cfg(), Split::Train).unwrap();
        let eval = build_corpus(&synth_cfg(), Split::Eval).unwrap();
        assert_eq!(train.len(), 15);
        assert_eq!(eval.len(), 15);
        for class in 0..3 {
            assert_eq!(train.class_samples(class).len(), 5);
            assert_eq!(eval.class_samples(class).len(), 5);
        }
        for i in 0..train.len() {
            for j in 0..eval.len() {
                assert_ne!(train.image(i), eval.image(j), "shared image between splits");
            }
        }
        // Rebuilding is deterministic.
        let again = build_corpus(&synth_cfg(), Split::Train).unwrap();
        assert_eq!(again.image(0), train.image(0));
    }

    #[test]
    fn missing_image_directory_is_a_missing_input() {
        let cfg = DatasetConfig {
            kind: "mnist".into(),
            path: Some("/nonexistent/idx-dir".into()),
            ..synth_cfg()
        };
        let err = build_corpus(&cfg, Split::Train).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
