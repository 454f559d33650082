use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::frames::{frame_path, read_sequence};
use crate::error::{Error, Result};
use crate::preprocessing::FrameSequence;
use crate::segment::Segment;

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEntry {
    pub clip_id: String,
    /// Frame directory, relative to the manifest file.
    pub frames_dir: PathBuf,
    pub frame_count: usize,
    pub frame_period_ms: f64,
    pub subject_id: String,
    pub split: Split,
    /// Labeled event segments, inclusive frame ranges.
    #[serde(default)]
    pub labels: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub clips: Vec<ClipEntry>,
    /// Directory relative paths resolve against; not serialized.
    #[serde(skip)]
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(clips: Vec<ClipEntry>, root: impl Into<PathBuf>) -> Self {
        Self {
            version: MANIFEST_VERSION,
            clips,
            root: root.into(),
        }
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &ClipEntry> {
        self.clips.iter().filter(move |c| c.split == split)
    }

    pub fn clip(&self, clip_id: &str) -> Option<&ClipEntry> {
        self.clips.iter().find(|c| c.clip_id == clip_id)
    }

    pub fn frames_dir(&self, clip: &ClipEntry) -> PathBuf {
        self.root.join(&clip.frames_dir)
    }

    pub fn load_clip(&self, clip: &ClipEntry) -> Result<FrameSequence> {
        read_sequence(&clip.clip_id, &self.frames_dir(clip), clip.frame_count, clip.frame_period_ms)
    }

    /// Structural checks that need no file access.
    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Version {
                expected: MANIFEST_VERSION,
                found: self.version,
            });
        }
        if self.clips.is_empty() {
            return Err(Error::Manifest("manifest lists no clips".into()));
        }
        let mut ids = BTreeSet::new();
        let mut subjects: BTreeMap<&str, Split> = BTreeMap::new();
        for c in &self.clips {
            if !ids.insert(c.clip_id.as_str()) {
                return Err(Error::Manifest(format!("duplicate clip id {}", c.clip_id)));
            }
            if c.frame_count == 0 {
                return Err(Error::Manifest(format!("clip {} has no frames", c.clip_id)));
            }
            if !(c.frame_period_ms > 0.0) {
                return Err(Error::Manifest(format!("clip {} has a non-positive frame period", c.clip_id)));
            }
            if let Some(&other) = subjects.get(c.subject_id.as_str()) {
                if other != c.split {
                    return Err(Error::Manifest(format!(
                        "subject {} appears in both {other:?} and {:?} splits",
                        c.subject_id, c.split
                    )));
                }
            }
            subjects.insert(&c.subject_id, c.split);
            let mut labels = c.labels.clone();
            labels.sort_by_key(|s| s.onset);
            for s in &labels {
                if s.onset > s.offset || s.offset >= c.frame_count {
                    return Err(Error::Manifest(format!(
                        "clip {}: label {}..{} outside 0..{}",
                        c.clip_id, s.onset, s.offset, c.frame_count
                    )));
                }
            }
            for w in labels.windows(2) {
                if w[0].intersects(&w[1]) {
                    return Err(Error::Manifest(format!(
                        "clip {}: labels {}..{} and {}..{} overlap",
                        c.clip_id, w[0].onset, w[0].offset, w[1].onset, w[1].offset
                    )));
                }
            }
        }
        Ok(())
    }

    /// Parses, validates and checks that every frame file exists.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let mut m: Manifest =
            serde_json::from_str(&text).map_err(|e| Error::Manifest(format!("{}: {e}", path.display())))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        for c in &m.clips {
            let dir = m.frames_dir(c);
            if let Some(t) = (0..c.frame_count).find(|&t| !frame_path(&dir, t).is_file()) {
                return Err(Error::Manifest(format!(
                    "clip {}: missing frame {}",
                    c.clip_id,
                    frame_path(&dir, t).display()
                )));
            }
        }
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::frames::write_frame;

    fn entry(id: &str, subject: &str, split: Split, labels: Vec<Segment>) -> ClipEntry {
        ClipEntry {
            clip_id: id.into(),
            frames_dir: PathBuf::from(id),
            frame_count: 30,
            frame_period_ms: 5.0,
            subject_id: subject.into(),
            split,
            labels,
        }
    }

    #[test]
    fn structural_errors() {
        assert!(Manifest::new(vec![], ".").validate().is_err());
        let overlap = Manifest::new(
            vec![entry("a", "s1", Split::Test, vec![Segment::new(10, 20), Segment::new(15, 25)])],
            ".",
        );
        assert!(matches!(overlap.validate(), Err(Error::Manifest(m)) if m.contains("overlap")));
        let oob = Manifest::new(vec![entry("a", "s1", Split::Test, vec![Segment::new(25, 30)])], ".");
        assert!(oob.validate().is_err());
        let shared = Manifest::new(
            vec![entry("a", "s1", Split::Train, vec![]), entry("b", "s1", Split::Test, vec![])],
            ".",
        );
        assert!(shared.validate().is_err());
    }

    #[test]
    fn round_trip_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let m = Manifest::new(
            vec![
                entry("a", "s1", Split::Train, vec![]),
                entry("b", "s2", Split::Val, vec![]),
                entry("c", "s3", Split::Test, vec![Segment::new(3, 7)]),
            ],
            dir.path(),
        );
        let path = dir.path().join("manifest.json");
        m.save(&path).unwrap();
        assert!(matches!(Manifest::load(&path), Err(Error::Manifest(msg)) if msg.contains("missing frame")));
        for c in &m.clips {
            let d = dir.path().join(&c.frames_dir);
            std::fs::create_dir_all(&d).unwrap();
            for t in 0..c.frame_count {
                write_frame(&frame_path(&d, t), 4, &[0.5; 16]).unwrap();
            }
        }
        let back = Manifest::load(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.load_clip(&back.clips[2]).unwrap().len(), 30);
    }
}
