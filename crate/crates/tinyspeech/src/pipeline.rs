//! Glue from audio to model-ready features: featurizes clips or a dataset
//! directory into a [`FeatureSet`].

use std::path::Path;

use crate::dataset::{parse_wav, scan_dataset, LabeledClips, Split};
use crate::dsp::{mfcc_stack, FrontendConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::trainer::FeatureSet;

/// Featurizes one clip into a `(1, 1, T, F)` tensor.
pub fn clip_to_tensor(samples: &[f64], cfg: &FrontendConfig) -> Result<Tensor> {
    let stack = mfcc_stack(samples, cfg)?;
    Tensor::from_vec([1, 1, stack.frames, stack.coeffs], stack.data)
}

/// Featurizes in-memory clips. Splits are assigned per index within each
/// class: of every ten clips, eight train, one validates, one tests.
pub fn featureset_from_clips(clips: &LabeledClips, cfg: &FrontendConfig) -> Result<FeatureSet> {
    let mut features = Vec::with_capacity(clips.clips.len());
    let mut labels = Vec::with_capacity(clips.clips.len());
    let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (i, (clip, label)) in clips.clips.iter().enumerate() {
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Dataset(format!(
                "clip {i} has sample rate {}, expected {}",
                clip.sample_rate, cfg.sample_rate
            )));
        }
        features.push(clip_to_tensor(&clip.samples, cfg)?);
        labels.push(*label);
        match i % 10 {
            8 => val_idx.push(i),
            9 => test_idx.push(i),
            _ => train_idx.push(i),
        }
    }
    Ok(FeatureSet {
        features,
        labels,
        label_names: clips.labels.clone(),
        train_idx,
        val_idx,
        test_idx,
    })
}

/// Scans a dataset directory and featurizes every WAV. Non-16 kHz files are
/// rejected (no resampling).
pub fn featureset_from_dir(
    root: &Path,
    wanted_labels: &[String],
    unknown_as_class: bool,
    val_pct: f64,
    test_pct: f64,
    cfg: &FrontendConfig,
) -> Result<FeatureSet> {
    let manifest = scan_dataset(root, wanted_labels, unknown_as_class, val_pct, test_pct)?;
    let mut features = Vec::with_capacity(manifest.entries.len());
    let mut labels = Vec::with_capacity(manifest.entries.len());
    let (mut train_idx, mut val_idx, mut test_idx) = (Vec::new(), Vec::new(), Vec::new());
    for (i, entry) in manifest.entries.iter().enumerate() {
        let bytes = std::fs::read(&entry.path).map_err(|e| Error::io(&entry.path, e))?;
        let clip = parse_wav(&bytes)?;
        if clip.sample_rate != cfg.sample_rate {
            return Err(Error::Dataset(format!(
                "{}: sample rate {} Hz unsupported, expected {} Hz (resampling \
                 is out of scope)",
                entry.path.display(),
                clip.sample_rate,
                cfg.sample_rate
            )));
        }
        features.push(clip_to_tensor(&clip.samples, cfg)?);
        labels.push(entry.label);
        match entry.split {
            Split::Train => train_idx.push(i),
            Split::Val => val_idx.push(i),
            Split::Test => test_idx.push(i),
        }
    }
    Ok(FeatureSet {
        features,
        labels,
        label_names: manifest.labels,
        train_idx,
        val_idx,
        test_idx,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::synth_dataset;

    #[test]
    fn synth_featureset_shapes_and_splits() {
        let clips = synth_dataset(10, 2, 3).unwrap();
        let fs = featureset_from_clips(&clips, &FrontendConfig::default()).unwrap();
        assert_eq!(fs.features.len(), 20);
        assert_eq!(fs.features[0].shape(), [1, 1, 98, 40]);
        assert_eq!(fs.train_idx.len(), 16);
        assert_eq!(fs.val_idx.len(), 2);
        assert_eq!(fs.test_idx.len(), 2);
        // class balance is preserved by the index rule
        let val_classes: Vec<usize> = fs.val_idx.iter().map(|&i| fs.labels[i]).collect();
        assert_eq!(val_classes, vec![0, 1]);
    }

    #[test]
    fn wrong_sample_rate_rejected() {
        let mut clips = synth_dataset(2, 2, 3).unwrap();
        clips.clips[0].0.sample_rate = 8000;
        let err = featureset_from_clips(&clips, &FrontendConfig::default())
            .unwrap_err()
            .to_string();
        assert!(err.contains("8000"), "{err}");
    }
}
