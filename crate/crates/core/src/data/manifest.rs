//! Dataset indexing.
//!
//! Layout: `root/<video_id>/000000.png, 000001.png, ...`, frames numbered
//! contiguously from 0. The manifest file is line-oriented: an optional
//! `#split <train|test>` header, then one tab-separated
//! `video_id  frame_count  relative_path` record per video.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

/// How videos under a root are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum SplitRule {
    /// Every video belongs to the requested split.
    All,
    /// The first `fraction` of videos (sorted by id, rounded) are training
    /// videos, the rest test videos.
    TrainFraction(f64),
}

impl Default for SplitRule {
    fn default() -> Self {
        SplitRule::TrainFraction(2.0 / 3.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub video_id: String,
    pub frame_count: usize,
    /// Relative to the manifest root.
    pub path: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub split: Split,
    pub videos: Vec<VideoEntry>,
}

pub fn frame_path(dir: &Path, index: usize) -> PathBuf {
    dir.join(format!("{index:06}.png"))
}

fn count_frames(dir: &Path) -> Result<usize> {
    let mut indices: Vec<usize> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let stem = name.strip_suffix(".png")?;
            (stem.len() == 6).then(|| stem.parse::<usize>().ok()).flatten()
        })
        .collect();
    indices.sort_unstable();
    if let Some((i, _)) = indices.iter().enumerate().find(|(i, &v)| *i != v) {
        return Err(Error::Manifest {
            path: dir.to_path_buf(),
            reason: format!("frame numbering has a gap at {i:06}.png"),
        });
    }
    Ok(indices.len())
}

fn relative_to(target: &Path, base: &Path) -> PathBuf {
    let t: Vec<_> = target.components().collect();
    let b: Vec<_> = base.components().collect();
    let common = t.iter().zip(&b).take_while(|(x, y)| x == y).count();
    let mut out = PathBuf::new();
    for _ in common..b.len() {
        out.push("..");
    }
    for c in &t[common..] {
        out.push(c);
    }
    out
}

/// Scans `root` and lists the videos of `split`, sorted by id.
pub fn index_dataset(
    root: &Path,
    rule: SplitRule,
    split: Split,
    window: usize,
) -> Result<DatasetManifest> {
    if window == 0 {
        return Err(Error::InvalidArgument("window must be at least 1".into()));
    }
    if !root.is_dir() {
        return Err(Error::io(
            root,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset root is not a directory"),
        ));
    }
    let mut ids: Vec<String> = fs::read_dir(root)
        .map_err(|e| Error::io(root, e))?
        .filter_map(|e| e.ok())
        .filter(|e| e.path().is_dir())
        .filter_map(|e| e.file_name().into_string().ok())
        .collect();
    ids.sort();

    let mut videos = Vec::new();
    for id in &ids {
        let frame_count = count_frames(&root.join(id))?;
        if frame_count == 0 {
            continue;
        }
        videos.push(VideoEntry {
            video_id: id.clone(),
            frame_count,
            path: PathBuf::from(id),
        });
    }
    if videos.is_empty() {
        return Err(Error::NoVideos(root.to_path_buf()));
    }
    let videos = match rule {
        SplitRule::All => videos,
        SplitRule::TrainFraction(f) => {
            if !(0.0..=1.0).contains(&f) {
                return Err(Error::InvalidArgument(format!(
                    "train fraction must lie in [0, 1], got {f}"
                )));
            }
            let n_train = (videos.len() as f64 * f).round() as usize;
            match split {
                Split::Train => videos[..n_train].to_vec(),
                Split::Test => videos[n_train..].to_vec(),
            }
        }
    };
    if videos.is_empty() {
        return Err(Error::NoVideos(root.to_path_buf()));
    }
    if let Some(v) = videos.iter().find(|v| v.frame_count < window) {
        return Err(Error::VideoTooShort {
            video: v.video_id.clone(),
            frames: v.frame_count,
            window,
        });
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        split,
        videos,
    })
}

impl DatasetManifest {
    pub fn video_dir(&self, video: &VideoEntry) -> PathBuf {
        self.root.join(&video.path)
    }

    /// Number of non-overlapping windows across all videos.
    pub fn window_count(&self, window: usize) -> usize {
        self.videos.iter().map(|v| v.frame_count / window).sum()
    }

    /// Writes the manifest. Video paths are stored relative to the
    /// manifest's directory, so the two can be moved together.
    pub fn save(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let base_abs = fs::canonicalize(if base.as_os_str().is_empty() { Path::new(".") } else { base })
            .map_err(|e| Error::io(base, e))?;
        let root_abs = fs::canonicalize(&self.root).map_err(|e| Error::io(&self.root, e))?;
        let rel_root = relative_to(&root_abs, &base_abs);
        let mut s = format!("#split\t{}\n", self.split);
        for v in &self.videos {
            s.push_str(&format!(
                "{}\t{}\t{}\n",
                v.video_id,
                v.frame_count,
                rel_root.join(&v.path).display()
            ));
        }
        fs::write(path, s).map_err(|e| Error::io(path, e))
    }

    /// Reads a manifest; record paths are relative to the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bad = |reason: String| Error::Manifest {
            path: path.to_path_buf(),
            reason,
        };
        let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
        let mut split = Split::Train;
        let mut videos = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let mut it = rest.split('\t');
                if it.next() == Some("split") {
                    split = it
                        .next()
                        .ok_or_else(|| bad("split header without value".into()))?
                        .parse()?;
                }
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if fields.len() != 3 {
                return Err(bad(format!("line {}: expected 3 tab-separated fields", lineno + 1)));
            }
            let frame_count = fields[1]
                .parse()
                .map_err(|_| bad(format!("line {}: bad frame count", lineno + 1)))?;
            let entry = VideoEntry {
                video_id: fields[0].to_string(),
                frame_count,
                path: PathBuf::from(fields[2]),
            };
            if !root.join(&entry.path).is_dir() {
                return Err(bad(format!("video directory {} does not exist", entry.path.display())));
            }
            videos.push(entry);
        }
        if videos.is_empty() {
            return Err(Error::NoVideos(path.to_path_buf()));
        }
        Ok(Self {
            root,
            split,
            videos,
        })
    }
}
