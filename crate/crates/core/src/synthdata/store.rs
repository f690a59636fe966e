//! On-disk layout of a synthetic dataset: one directory per dyad plus a
//! manifest that lists each directory with its split and seed.
//!
//! ```text
//! # listenhead dyad manifest v1
//! train dyad_000000 0
//! val dyad_000160 160
//! ```

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use super::{DatasetSplits, DyadicSample};
use crate::audiofeat::{read_wav, tokenize, write_wav};
use crate::coeffspace::{load_coefficient_sequence, save_coefficient_sequence};
use crate::error::{Error, Result};
use crate::scalar::Real;

pub const MANIFEST_FILE: &str = "manifest.txt";
pub const SPEAKER_WAV: &str = "speaker.wav";
pub const SPEAKER_CSV: &str = "speaker.csv";
pub const LISTENER_CSV: &str = "listener.csv";
pub const TRANSCRIPT_TXT: &str = "transcript.txt";
const MANIFEST_HEADER: &str = "# listenhead dyad manifest v1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::Invalid(format!("unknown split `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestEntry {
    pub split: Split,
    /// Directory relative to the manifest.
    pub dir: String,
    pub seed: u64,
}

pub fn sample_dir_name(seed: u64) -> String {
    format!("dyad_{seed:06}")
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut s = format!("{MANIFEST_HEADER}\n");
    for e in entries {
        s.push_str(&format!("{} {} {}\n", e.split, e.dir, e.seed));
    }
    s
}

pub fn parse_manifest(text: &str, path: &Path) -> Result<Vec<ManifestEntry>> {
    let bad = |row: usize, column: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        column,
        msg,
    };
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 3 {
            return Err(bad(i + 1, 1, format!("expected `split dir seed`, got {} fields", fields.len())));
        }
        let split = fields[0].parse().map_err(|e: Error| bad(i + 1, 1, e.to_string()))?;
        let dir = fields[1];
        if Path::new(dir).is_absolute() || dir.split(['/', '\\']).any(|c| c == "..") {
            return Err(bad(i + 1, 2, format!("`{dir}` must be a relative path inside the dataset")));
        }
        let seed = fields[2].parse().map_err(|_| bad(i + 1, 3, format!("bad seed `{}`", fields[2])))?;
        out.push(ManifestEntry { split, dir: dir.to_string(), seed });
    }
    if out.is_empty() {
        return Err(bad(0, 0, "manifest lists no samples".into()));
    }
    Ok(out)
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_manifest(&text, path)
}

pub fn save_sample<S: Real>(sample: &DyadicSample<S>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_wav(&sample.speaker_audio, dir.join(SPEAKER_WAV))?;
    save_coefficient_sequence(&sample.speaker_coeffs, dir.join(SPEAKER_CSV))?;
    save_coefficient_sequence(&sample.listener_coeffs, dir.join(LISTENER_CSV))?;
    let path = dir.join(TRANSCRIPT_TXT);
    fs::write(&path, format!("{}\n", sample.transcript_tokens.join(" "))).map_err(|e| Error::io(path, e))
}

/// Reads a dyad directory. The energy envelope is not stored and comes back
/// empty.
pub fn load_sample<S: Real>(dir: impl AsRef<Path>, seed: u64) -> Result<DyadicSample<S>> {
    let dir = dir.as_ref();
    let speaker_coeffs = load_coefficient_sequence(dir.join(SPEAKER_CSV))?;
    let listener_coeffs = load_coefficient_sequence::<S>(dir.join(LISTENER_CSV))?;
    if listener_coeffs.len() != speaker_coeffs.len() {
        return Err(Error::Shape(format!(
            "{}: speaker has {} frames, listener {}",
            dir.display(),
            speaker_coeffs.len(),
            listener_coeffs.len()
        )));
    }
    let path = dir.join(TRANSCRIPT_TXT);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(path, e))?;
    Ok(DyadicSample {
        seed,
        speaker_audio: read_wav(dir.join(SPEAKER_WAV))?,
        speaker_coeffs,
        listener_coeffs,
        transcript_tokens: tokenize(&text),
        energy: Vec::new(),
    })
}

/// Writes every sample under `root` and the manifest next to them.
pub fn write_dataset<S: Real>(splits: &DatasetSplits<S>, root: impl AsRef<Path>) -> Result<Vec<ManifestEntry>> {
    let root = root.as_ref();
    let mut entries = Vec::new();
    for (split, samples) in [(Split::Train, &splits.train), (Split::Val, &splits.val), (Split::Test, &splits.test)] {
        for s in samples {
            let dir = sample_dir_name(s.seed);
            save_sample(s, root.join(&dir))?;
            entries.push(ManifestEntry { split, dir, seed: s.seed });
        }
    }
    let path = root.join(MANIFEST_FILE);
    fs::write(&path, format_manifest(&entries)).map_err(|e| Error::io(path, e))?;
    Ok(entries)
}

/// Loads the samples of one split, resolving directories against the
/// manifest's location. Returns directory paths alongside.
pub fn load_split<S: Real>(manifest: impl AsRef<Path>, split: Split) -> Result<Vec<(PathBuf, DyadicSample<S>)>> {
    let manifest = manifest.as_ref();
    let root = manifest.parent().unwrap_or(Path::new("."));
    load_manifest(manifest)?
        .into_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let dir = root.join(&e.dir);
            let s = load_sample(&dir, e.seed)?;
            Ok((dir, s))
        })
        .collect()
}
