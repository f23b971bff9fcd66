use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::{seed, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Path relative to the dataset root, `/`-separated.
    pub path: String,
    pub frame: u64,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub subsample_factor: usize,
    pub entries: Vec<ManifestEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normalization_stats: Option<String>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

struct Frame {
    path: String,
    frame: u64,
}

/// Lists every `.bin` scan under `root`, keeps every `subsample_factor`-th
/// frame of each sequence (a sequence is a directory) and assigns whole
/// sequences to splits.
pub fn build_manifest(
    root: impl AsRef<Path>,
    split_fractions: (f64, f64, f64),
    subsample_factor: usize,
    seed: u64,
) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let fractions = [split_fractions.0, split_fractions.1, split_fractions.2];
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f)) || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(Error::Precondition(format!("split fractions {fractions:?} must be in [0,1] and sum to 1")));
    }
    if subsample_factor == 0 {
        return Err(Error::Precondition("subsample factor must be positive".into()));
    }

    let mut sequences: BTreeMap<PathBuf, Vec<Frame>> = BTreeMap::new();
    for entry in walkdir::WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| Error::Io(e.into()))?;
        let path = entry.path();
        if !entry.file_type().is_file() || path.extension().and_then(|e| e.to_str()) != Some("bin") {
            continue;
        }
        let rel = path.strip_prefix(root).unwrap_or(path);
        let seq = rel.parent().map(Path::to_path_buf).unwrap_or_default();
        let rel_str = rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/");
        let frames = sequences.entry(seq).or_default();
        let stem_index = path.file_stem().and_then(|s| s.to_str()).and_then(|s| s.parse::<u64>().ok());
        let frame = stem_index.unwrap_or(frames.len() as u64);
        frames.push(Frame { path: rel_str, frame });
    }
    if sequences.is_empty() {
        return Err(Error::EmptyDataset(root.to_path_buf()));
    }

    let mut kept: Vec<Vec<Frame>> = sequences
        .into_values()
        .map(|mut frames| {
            frames.sort_by(|a, b| a.frame.cmp(&b.frame).then_with(|| a.path.cmp(&b.path)));
            frames.into_iter().enumerate().filter(|(i, _)| i % subsample_factor == 0).map(|(_, f)| f).collect()
        })
        .collect();

    let total: usize = kept.iter().map(Vec::len).sum();
    let mut order: Vec<usize> = (0..kept.len()).collect();
    order.shuffle(&mut seed::rng(seed));

    let mut assigned = [0f64; 3];
    let mut split_of = vec![Split::Train; kept.len()];
    for &s in &order {
        let deficit = |k: usize| fractions[k] * total as f64 - assigned[k];
        let mut best = None;
        for k in 0..3 {
            if fractions[k] <= 0.0 {
                continue;
            }
            if best.is_none_or(|b| deficit(k) > deficit(b)) {
                best = Some(k);
            }
        }
        let k = best.expect("fractions sum to one");
        assigned[k] += kept[s].len() as f64;
        split_of[s] = Split::ALL[k];
    }

    let entries = kept
        .iter_mut()
        .zip(split_of)
        .flat_map(|(frames, split)| {
            frames.drain(..).map(move |f| ManifestEntry { path: f.path, frame: f.frame, split })
        })
        .collect();
    Ok(DatasetManifest { subsample_factor, entries, normalization_stats: None })
}
