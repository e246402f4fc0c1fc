use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::photometry::CameraModel;
use crate::scene::SubjectKind;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        Split::ALL.into_iter().find(|sp| sp.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRecord {
    /// Relative to the manifest's directory.
    pub path: String,
    pub kind: SubjectKind,
    pub scene_seed: u64,
    /// Seed of the challenge issued for this video.
    pub captcha_seed: u64,
    /// Seed of the challenge the replayed recording was made under.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_captcha_seed: Option<u64>,
    pub render_seed: u64,
    pub camera: CameraModel,
    pub live: bool,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub version: u32,
    pub seed: u64,
    pub size: usize,
    pub frames: usize,
    pub live_count: usize,
    pub spoof_count: usize,
    pub records: Vec<VideoRecord>,
}

impl DatasetManifest {
    pub fn new(seed: u64, size: usize, frames: usize, records: Vec<VideoRecord>) -> Self {
        let live_count = records.iter().filter(|r| r.live).count();
        DatasetManifest {
            version: MANIFEST_VERSION,
            seed,
            size,
            frames,
            live_count,
            spoof_count: records.len() - live_count,
            records,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != MANIFEST_VERSION {
            return Err(Error::Format(format!("manifest version {}", self.version)));
        }
        let mut seen = HashSet::new();
        for r in &self.records {
            if !seen.insert(r.path.as_str()) {
                return Err(Error::Format(format!("duplicate path {}", r.path)));
            }
            if r.live != r.kind.is_live() {
                return Err(Error::Format(format!(
                    "{}: label disagrees with kind",
                    r.path
                )));
            }
            if Path::new(&r.path).is_absolute() || r.path.contains("..") {
                return Err(Error::Format(format!(
                    "{}: paths must stay inside the dataset",
                    r.path
                )));
            }
        }
        let live = self.records.iter().filter(|r| r.live).count();
        if (live, self.records.len() - live) != (self.live_count, self.spoof_count) {
            return Err(Error::Format(
                "live/spoof counts disagree with records".into(),
            ));
        }
        Ok(())
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.records.iter().filter(move |r| r.split == split)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Format(format!("manifest: {e}")))?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(dir.join(MANIFEST_FILE))?)
    }
}
