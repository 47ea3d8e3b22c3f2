//! Play classes and the label-file schema shared by weak and manual labels.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlayClass {
    PickAndRoll,
    Handoff,
    Other,
}

impl PlayClass {
    pub const K: usize = 3;
    pub const ALL: [PlayClass; 3] = [PlayClass::PickAndRoll, PlayClass::Handoff, PlayClass::Other];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::UnknownClass(i.to_string()))
    }

    pub fn as_str(self) -> &'static str {
        match self {
            PlayClass::PickAndRoll => "pick_and_roll",
            PlayClass::Handoff => "handoff",
            PlayClass::Other => "other",
        }
    }
}

impl fmt::Display for PlayClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PlayClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::UnknownClass(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelSource {
    Weak,
    Manual,
    /// Predicted by a trained classifier.
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub segment_id: String,
    pub label: PlayClass,
    pub source: LabelSource,
    /// Segment-local step of the deciding key frame, for weak labels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_frame: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_version: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub annotator: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<String>,
}

impl LabelRecord {
    pub fn weak(segment_id: impl Into<String>, label: PlayClass, key_frame: Option<usize>, rule_version: &str) -> Self {
        Self {
            segment_id: segment_id.into(),
            label,
            source: LabelSource::Weak,
            key_frame,
            rule_version: Some(rule_version.to_string()),
            annotator: None,
            timestamp: None,
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("label records always serialize")
    }
}

pub fn write_labels(path: &Path, labels: &[LabelRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for l in labels {
        writeln!(w, "{}", l.to_line()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Indexes labels by segment id, rejecting duplicates from the same source.
pub fn label_map(labels: &[LabelRecord]) -> Result<BTreeMap<String, PlayClass>> {
    let mut map = BTreeMap::new();
    for l in labels {
        if map.insert(l.segment_id.clone(), l.label).is_some() {
            return Err(Error::Mismatch(format!("segment {} is labeled twice", l.segment_id)));
        }
    }
    Ok(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_schema() {
        let r = LabelRecord::weak("g-e-000001", PlayClass::Handoff, Some(4), "rules-1");
        let v: serde_json::Value = serde_json::from_str(&r.to_line()).unwrap();
        assert_eq!(v["label"], "handoff");
        assert_eq!(v["source"], "weak");
        assert_eq!(v["key_frame"], 4);
        assert!(v.get("annotator").is_none());
        let back: LabelRecord = serde_json::from_str(&r.to_line()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn class_names() {
        for c in PlayClass::ALL {
            assert_eq!(c.as_str().parse::<PlayClass>().unwrap(), c);
            assert_eq!(PlayClass::from_index(c.index()).unwrap(), c);
        }
        assert!("screen".parse::<PlayClass>().is_err());
        assert!(PlayClass::from_index(3).is_err());
    }

    #[test]
    fn duplicate_labels_rejected() {
        let r = LabelRecord::weak("a", PlayClass::Other, None, "v");
        assert!(label_map(&[r.clone(), r]).is_err());
    }
}
