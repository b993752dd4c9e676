//! Dataset ingestion: PCM-16 WAV decoding, directory scanning with
//! deterministic speaker-consistent splits, and synthetic desk-scale data.
//!
//! The expected layout is one subdirectory per label, each holding WAV
//! files. Directories whose names start with an underscore (notably
//! `_background_noise_`) are never labels. Split assignment hashes the
//! filename stem with everything from `_nohash_` onward removed, so all
//! clips from one speaker land in the same split.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    /// Samples in `[-1, 1]`.
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleManifest {
    pub labels: Vec<String>,
    pub entries: Vec<ManifestEntry>,
}

/// Decodes a RIFF/WAVE file holding mono 16-bit PCM.
pub fn parse_wav(bytes: &[u8]) -> Result<AudioClip> {
    let bad = |msg: &str| Error::Wav(msg.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("malformed header, not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u16, u32, u16)> = None; // format, channels, rate, bits
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32::from_le_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
        let body_start = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 || body_start + 16 > bytes.len() {
                    return Err(bad("truncated fmt chunk"));
                }
                let b = &bytes[body_start..];
                fmt = Some((
                    u16::from_le_bytes([b[0], b[1]]),
                    u16::from_le_bytes([b[2], b[3]]),
                    u32::from_le_bytes([b[4], b[5], b[6], b[7]]),
                    u16::from_le_bytes([b[14], b[15]]),
                ));
            }
            b"data" => {
                if body_start + size > bytes.len() {
                    return Err(bad("truncated data chunk"));
                }
                data = Some(&bytes[body_start..body_start + size]);
            }
            _ => {}
        }
        pos = body_start + size + (size & 1); // chunks are word-aligned
    }
    let (format, channels, sample_rate, bits) = fmt.ok_or_else(|| bad("missing fmt chunk"))?;
    if format != 1 {
        return Err(bad("only PCM (format 1) is supported"));
    }
    if channels != 1 {
        return Err(Error::Wav(format!(
            "only mono is supported, got {channels} channels"
        )));
    }
    if bits != 16 {
        return Err(Error::Wav(format!(
            "only 16-bit PCM is supported, got {bits}-bit"
        )));
    }
    let data = data.ok_or_else(|| bad("missing data chunk"))?;
    if data.len() % 2 != 0 {
        return Err(bad("data chunk has odd byte length"));
    }
    let samples = data
        .chunks_exact(2)
        .map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0)
        .collect();
    Ok(AudioClip {
        samples,
        sample_rate,
    })
}

/// Encodes a clip as mono 16-bit PCM WAV (values clamped to `[-1, 1]`).
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let n = clip.samples.len();
    let data_len = (2 * n) as u32;
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&clip.sample_rate.to_le_bytes());
    out.extend_from_slice(&(clip.sample_rate * 2).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &clip.samples {
        let v = (s.clamp(-1.0, 1.0) * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Deterministic split from the path alone: hash the filename stem with any
/// `_nohash_` suffix stripped (sha256, first 8 bytes as a big-endian integer
/// mapped to [0, 100)), then compare against the cumulative percentages.
pub fn split_assign(path: &str, val_pct: f64, test_pct: f64) -> Split {
    let file = Path::new(path)
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or(path);
    let speaker = match file.find("_nohash_") {
        Some(i) => &file[..i],
        None => file,
    };
    let digest = Sha256::digest(speaker.as_bytes());
    let h = u64::from_be_bytes(digest[0..8].try_into().unwrap());
    let pct = (h % 1_000_000) as f64 / 10_000.0;
    if pct < val_pct {
        Split::Val
    } else if pct < val_pct + test_pct {
        Split::Test
    } else {
        Split::Train
    }
}

/// Scans a label-directory tree into a stable manifest.
///
/// `wanted_labels` empty means every label directory; otherwise directories
/// outside the list are ignored, or pooled into an `unknown` class when
/// `unknown_as_class` is set. Labels are sorted; entries are sorted by path.
pub fn scan_dataset(
    root: &Path,
    wanted_labels: &[String],
    unknown_as_class: bool,
    val_pct: f64,
    test_pct: f64,
) -> Result<SampleManifest> {
    if !root.is_dir() {
        return Err(Error::Dataset(format!(
            "dataset root {} is not a directory",
            root.display()
        )));
    }
    let mut dirs: Vec<(String, PathBuf)> = Vec::new();
    let rd = std::fs::read_dir(root).map_err(|e| Error::io(root, e))?;
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = match path.file_name().and_then(|n| n.to_str()) {
            Some(n) => n.to_string(),
            None => continue,
        };
        if name.starts_with('_') {
            continue; // _background_noise_ and friends are not labels
        }
        dirs.push((name, path));
    }
    dirs.sort();

    let mut label_names: Vec<String> = Vec::new();
    for (name, _) in &dirs {
        let use_name = if wanted_labels.is_empty() || wanted_labels.contains(name) {
            Some(name.clone())
        } else if unknown_as_class {
            Some("unknown".to_string())
        } else {
            None
        };
        if let Some(n) = use_name {
            if !label_names.contains(&n) {
                label_names.push(n);
            }
        }
    }
    label_names.sort();
    if label_names.is_empty() {
        return Err(Error::Dataset(format!(
            "no label directories found under {}",
            root.display()
        )));
    }
    let label_ids: BTreeMap<&String, usize> = label_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n, i))
        .collect();

    let mut entries = Vec::new();
    let unknown = "unknown".to_string();
    for (name, dir) in &dirs {
        let label = if wanted_labels.is_empty() || wanted_labels.contains(name) {
            label_ids[&name]
        } else if unknown_as_class {
            label_ids[&unknown]
        } else {
            continue;
        };
        let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
        let mut files: Vec<PathBuf> = rd
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .map(|e| e.eq_ignore_ascii_case("wav"))
                        .unwrap_or(false)
            })
            .collect();
        files.sort();
        for path in files {
            let split = split_assign(&path.to_string_lossy(), val_pct, test_pct);
            entries.push(ManifestEntry { path, label, split });
        }
    }
    entries.sort_by(|a, b| a.path.cmp(&b.path));
    Ok(SampleManifest {
        labels: label_names,
        entries,
    })
}

/// In-memory labeled clips.
#[derive(Debug, Clone)]
pub struct LabeledClips {
    pub labels: Vec<String>,
    pub clips: Vec<(AudioClip, usize)>,
}

/// Synthetic desk-scale dataset: class `k` is a one-second tone burst at
/// `400 + 300k` Hz, amplitude 0.5, plus seeded Gaussian noise (sigma 0.05).
pub fn synth_dataset(n_per_class: usize, n_classes: usize, seed: u64) -> Result<LabeledClips> {
    if n_classes < 2 {
        return Err(Error::Dataset("need at least 2 synthetic classes".into()));
    }
    let sr = 16_000u32;
    let mut rng = Rng::new(seed);
    let mut clips = Vec::with_capacity(n_per_class * n_classes);
    for class in 0..n_classes {
        let freq = 400.0 + 300.0 * class as f64;
        for _ in 0..n_per_class {
            let phase = rng.uniform(0.0, 2.0 * std::f64::consts::PI);
            let samples = (0..sr as usize)
                .map(|i| {
                    let t = i as f64 / sr as f64;
                    let tone = 0.5 * (2.0 * std::f64::consts::PI * freq * t + phase).sin();
                    (tone + 0.05 * rng.normal()).clamp(-1.0, 1.0)
                })
                .collect();
            clips.push((
                AudioClip {
                    samples,
                    sample_rate: sr,
                },
                class,
            ));
        }
    }
    let labels = (0..n_classes).map(|k| format!("class{k:02}")).collect();
    Ok(LabeledClips { labels, clips })
}

/// Mixes a background-noise segment into the clip at the given
/// signal-to-noise ratio. Off by default everywhere; provided for
/// augmentation experiments.
pub fn mix_background(clip: &mut AudioClip, noise: &AudioClip, offset: usize, snr_db: f64) {
    let power = |xs: &[f64]| xs.iter().map(|x| x * x).sum::<f64>() / xs.len().max(1) as f64;
    let sig_p = power(&clip.samples);
    if sig_p == 0.0 || noise.samples.is_empty() {
        return;
    }
    let seg: Vec<f64> = (0..clip.samples.len())
        .map(|i| noise.samples[(offset + i) % noise.samples.len()])
        .collect();
    let noise_p = power(&seg);
    if noise_p == 0.0 {
        return;
    }
    let gain = (sig_p / (noise_p * 10f64.powf(snr_db / 10.0))).sqrt();
    for (s, n) in clip.samples.iter_mut().zip(&seg) {
        *s = (*s + gain * n).clamp(-1.0, 1.0);
    }
}
