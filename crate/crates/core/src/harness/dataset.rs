//! Pairing of noisy/clean WAV files on disk.
//!
//! Listing only walks directories; audio is decoded when a [`PairRef`] is
//! loaded.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::audio::{read_wav, NoisyPair};
use crate::error::{Error, Result};

/// Directory conventions understood by [`ingest_dataset`].
///
/// * `PairedDirs`: `root/noisy/*.wav` and `root/clean/*.wav`.
/// * `VoicebankDemand`: every `root/noisy_<split>_wav` with a sibling
///   `root/clean_<split>_wav` (e.g. `noisy_testset_wav`).
/// * `Birdsounds`: `root/<split>/Raw_audios` with
///   `root/<split>/Denoised_audios`, or the same two folders directly
///   under `root`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetLayout {
    VoicebankDemand,
    Birdsounds,
    PairedDirs,
}

impl fmt::Display for DatasetLayout {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DatasetLayout::VoicebankDemand => "voicebank_demand",
            DatasetLayout::Birdsounds => "birdsounds",
            DatasetLayout::PairedDirs => "paired_dirs",
        })
    }
}

impl FromStr for DatasetLayout {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.replace('-', "_").as_str() {
            "voicebank_demand" | "voicebank" => Ok(DatasetLayout::VoicebankDemand),
            "birdsounds" => Ok(DatasetLayout::Birdsounds),
            "paired_dirs" | "paired" => Ok(DatasetLayout::PairedDirs),
            _ => Err(Error::Config(format!("unknown dataset layout {s:?}"))),
        }
    }
}

/// A matched noisy/clean file pair, not yet decoded.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairRef {
    pub split: String,
    pub stem: String,
    pub noisy: PathBuf,
    pub clean: PathBuf,
}

impl PairRef {
    pub fn load(&self) -> Result<NoisyPair> {
        let noisy = read_wav(&self.noisy)?;
        let clean = read_wav(&self.clean)?;
        if noisy.sample_rate_hz() != clean.sample_rate_hz() {
            return Err(Error::Dataset(format!(
                "{}: noisy at {} Hz, clean at {} Hz",
                self.stem,
                noisy.sample_rate_hz(),
                clean.sample_rate_hz()
            )));
        }
        NoisyPair::new(noisy, clean)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipEntry {
    pub path: PathBuf,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub layout: DatasetLayout,
    pub pairs: Vec<PairRef>,
    pub skipped: Vec<SkipEntry>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn split<'a>(&'a self, name: &'a str) -> impl Iterator<Item = &'a PairRef> + 'a {
        self.pairs.iter().filter(move |p| p.split == name)
    }
}

fn wav_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_wav = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("wav"));
        if !is_wav || !path.is_file() {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_owned(), path);
        }
    }
    Ok(out)
}

fn pair_dirs(
    split: &str,
    noisy_dir: &Path,
    clean_dir: &Path,
    pairs: &mut Vec<PairRef>,
    skipped: &mut Vec<SkipEntry>,
) -> Result<()> {
    let noisy = wav_files(noisy_dir)?;
    let mut clean = wav_files(clean_dir)?;
    for (stem, path) in noisy {
        match clean.remove(&stem) {
            Some(c) => pairs.push(PairRef {
                split: split.to_owned(),
                stem,
                noisy: path,
                clean: c,
            }),
            None => skipped.push(SkipEntry {
                path,
                reason: "no clean counterpart".into(),
            }),
        }
    }
    skipped.extend(clean.into_values().map(|path| SkipEntry {
        path,
        reason: "no noisy counterpart".into(),
    }));
    Ok(())
}

fn require_dir(p: &Path) -> Result<()> {
    if p.is_dir() {
        Ok(())
    } else {
        Err(Error::Dataset(format!("missing directory {}", p.display())))
    }
}

fn subdirs(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        if path.is_dir() {
            if let Some(name) = path.file_name().and_then(|n| n.to_str()) {
                out.push((name.to_owned(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

pub fn ingest_dataset(root: &Path, layout: DatasetLayout) -> Result<Dataset> {
    require_dir(root)?;
    let mut pairs = Vec::new();
    let mut skipped = Vec::new();
    match layout {
        DatasetLayout::PairedDirs => {
            let (n, c) = (root.join("noisy"), root.join("clean"));
            require_dir(&n)?;
            require_dir(&c)?;
            pair_dirs("", &n, &c, &mut pairs, &mut skipped)?;
        }
        DatasetLayout::VoicebankDemand => {
            let mut found = false;
            for (name, noisy_dir) in subdirs(root)? {
                let Some(split) = name.strip_prefix("noisy_").and_then(|s| s.strip_suffix("_wav")) else {
                    continue;
                };
                let clean_dir = root.join(format!("clean_{split}_wav"));
                require_dir(&clean_dir)?;
                found = true;
                pair_dirs(split, &noisy_dir, &clean_dir, &mut pairs, &mut skipped)?;
            }
            if !found {
                return Err(Error::Dataset(format!(
                    "no noisy_<split>_wav directory under {}",
                    root.display()
                )));
            }
        }
        DatasetLayout::Birdsounds => {
            const NOISY: &str = "Raw_audios";
            const CLEAN: &str = "Denoised_audios";
            let mut splits: Vec<(String, PathBuf)> = Vec::new();
            if root.join(NOISY).is_dir() {
                splits.push((String::new(), root.to_path_buf()));
            }
            splits.extend(subdirs(root)?.into_iter().filter(|(_, p)| p.join(NOISY).is_dir()));
            if splits.is_empty() {
                return Err(Error::Dataset(format!("no {NOISY} directory under {}", root.display())));
            }
            for (split, dir) in splits {
                let clean_dir = dir.join(CLEAN);
                require_dir(&clean_dir)?;
                pair_dirs(&split, &dir.join(NOISY), &clean_dir, &mut pairs, &mut skipped)?;
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::Dataset(format!("no matched pairs under {}", root.display())));
    }
    Ok(Dataset {
        layout,
        pairs,
        skipped,
    })
}
