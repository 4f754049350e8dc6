//! Versioned text serialization of trained models and pipeline state.
//!
//! File layout, one artifact per file:
//!
//! ```text
//! lbpcg-artifact 1
//! kind: forest
//! { ...JSON body... }
//! ```
//!
//! Floats are written in shortest round-trip form and parsed exactly, so a
//! save/load cycle is bit-exact.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub const MAGIC: &str = "lbpcg-artifact";
pub const FORMAT_VERSION: &str = "1";

/// Tag written in each artifact header.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ArtifactKind {
    Forest,
    Regressor,
    Ensemble,
    Partition,
    Subspace,
    ConfidentSubspace,
    Session,
    Validation,
    Annotations,
    CategoryModels,
    Gpe,
    Cohort,
    Transcripts,
    World,
    Report,
}

impl ArtifactKind {
    pub const ALL: [ArtifactKind; 15] = [
        ArtifactKind::Forest,
        ArtifactKind::Regressor,
        ArtifactKind::Ensemble,
        ArtifactKind::Partition,
        ArtifactKind::Subspace,
        ArtifactKind::ConfidentSubspace,
        ArtifactKind::Session,
        ArtifactKind::Validation,
        ArtifactKind::Annotations,
        ArtifactKind::CategoryModels,
        ArtifactKind::Gpe,
        ArtifactKind::Cohort,
        ArtifactKind::Transcripts,
        ArtifactKind::World,
        ArtifactKind::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ArtifactKind::Forest => "forest",
            ArtifactKind::Regressor => "regressor",
            ArtifactKind::Ensemble => "ensemble",
            ArtifactKind::Partition => "partition",
            ArtifactKind::Subspace => "subspace",
            ArtifactKind::ConfidentSubspace => "confident-subspace",
            ArtifactKind::Session => "session",
            ArtifactKind::Validation => "validation",
            ArtifactKind::Annotations => "annotations",
            ArtifactKind::CategoryModels => "category-models",
            ArtifactKind::Gpe => "gpe",
            ArtifactKind::Cohort => "cohort",
            ArtifactKind::Transcripts => "transcripts",
            ArtifactKind::World => "world",
            ArtifactKind::Report => "report",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.as_str() == s)
    }
}

impl fmt::Display for ArtifactKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A value that can be written as a standalone artifact file.
pub trait Artifact: Serialize + DeserializeOwned {
    const KIND: ArtifactKind;
}

pub fn to_text<A: Artifact>(artifact: &A) -> Result<String> {
    let body = serde_json::to_string_pretty(artifact)
        .map_err(|e| Error::CorruptArtifact(format!("cannot encode {}: {e}", A::KIND)))?;
    Ok(format!(
        "{MAGIC} {FORMAT_VERSION}\nkind: {}\n{body}\n",
        A::KIND
    ))
}

/// Header fields of an artifact text, without decoding the body.
pub fn read_header(text: &str) -> Result<(String, String)> {
    let mut lines = text.splitn(3, '\n');
    let first = lines.next().unwrap_or_default();
    let version = first
        .strip_prefix(MAGIC)
        .and_then(|r| r.strip_prefix(' '))
        .ok_or_else(|| Error::CorruptArtifact("missing artifact header".into()))?;
    let kind = lines
        .next()
        .and_then(|l| l.strip_prefix("kind: "))
        .ok_or_else(|| Error::CorruptArtifact("missing kind line".into()))?;
    Ok((version.trim().to_string(), kind.trim().to_string()))
}

pub fn from_text<A: Artifact>(text: &str) -> Result<A> {
    let (version, kind) = read_header(text)?;
    if version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            expected: FORMAT_VERSION.into(),
            found: version,
        });
    }
    if kind != A::KIND.as_str() {
        return Err(Error::KindMismatch {
            expected: A::KIND.to_string(),
            found: kind,
        });
    }
    let body = text.splitn(3, '\n').nth(2).unwrap_or_default();
    serde_json::from_str(body).map_err(|e| Error::CorruptArtifact(format!("{}: {e}", A::KIND)))
}

pub fn save_artifact<A: Artifact>(artifact: &A, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    fs::write(path, to_text(artifact)?)?;
    Ok(())
}

pub fn load_artifact<A: Artifact>(path: impl AsRef<Path>) -> Result<A> {
    let text = fs::read_to_string(path)?;
    from_text(&text)
}

impl Artifact for crate::content::ContentSubspace {
    const KIND: ArtifactKind = ArtifactKind::Subspace;
}
