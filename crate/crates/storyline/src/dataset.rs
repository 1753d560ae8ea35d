//! Line-delimited JSON datasets of entities and demonstrated storylines.
//!
//! Entity records must precede the storylines that cite them. Besides the
//! base fields, entity records may carry `image_vec` (written once the
//! multimodal model has projected the image) and `role` (`"test"` marks an
//! event held out from training; the default is `"train"`).

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use storyline_core::seqdata::{CorpusBuilder, EventCorpus, Role};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntityRecord {
    pub event: String,
    pub name: String,
    pub text_vec: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feat: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_vec: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub role: Option<Role>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StorylineRecord {
    pub event: String,
    pub nodes: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Record {
    Entity(EntityRecord),
    Storyline(StorylineRecord),
}

/// Iterates the non-blank lines of `reader` with 1-based line numbers.
pub(crate) fn lines<R: BufRead>(reader: R) -> impl Iterator<Item = Result<(usize, String)>> {
    reader
        .lines()
        .enumerate()
        .map(|(i, l)| l.map(|l| (i + 1, l)).map_err(|e| Error::io("<input>", e)))
        .filter(|r| !matches!(r, Ok((_, l)) if l.trim().is_empty()))
}

pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<EventCorpus>> {
    let mut builder = CorpusBuilder::new();
    let mut roles: BTreeMap<String, Role> = BTreeMap::new();
    let mut projected = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let rec: Record =
            serde_json::from_str(&text).map_err(|source| Error::Json { line, source })?;
        match rec {
            Record::Entity(e) => {
                let role = e.role.unwrap_or(Role::Train);
                if *roles.entry(e.event.clone()).or_insert(role) != role {
                    return Err(Error::Parse {
                        line,
                        msg: format!("event {:?} mixes train and test roles", e.event),
                    });
                }
                builder.add_entity(line, &e.event, &e.name, e.text_vec, e.image_feat)?;
                if let Some(v) = e.image_vec {
                    projected.push((line, e.event, e.name, v));
                }
            }
            Record::Storyline(s) => builder.add_storyline(line, &s.event, &s.nodes)?,
        }
    }
    let k = builder.text_dim();
    let mut corpora = builder.finish();
    if corpora.is_empty() {
        return Err(Error::Format("dataset declares no entities".into()));
    }
    for c in &mut corpora {
        c.role = roles[&c.event_id];
    }
    for (line, event, name, v) in projected {
        if Some(v.len()) != k || v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Parse {
                line,
                msg: format!("image_vec must hold {} finite entries", k.unwrap_or(0)),
            });
        }
        let c = corpora
            .iter_mut()
            .find(|c| c.event_id == event)
            .expect("event was declared");
        let i = c.index_of(&name).expect("entity was declared");
        c.entities[i].image_vec = Some(v);
    }
    Ok(corpora)
}

pub fn write_dataset<W: Write>(mut w: W, corpora: &[EventCorpus]) -> Result<()> {
    let to_io = |e: std::io::Error| Error::io("<output>", e);
    for c in corpora {
        for e in &c.entities {
            let rec = Record::Entity(EntityRecord {
                event: c.event_id.clone(),
                name: e.name.clone(),
                text_vec: e.text_vec.clone(),
                image_feat: e.image_feat.clone(),
                image_vec: e.image_vec.clone(),
                role: (c.role == Role::Test).then_some(Role::Test),
            });
            writeln!(
                w,
                "{}",
                serde_json::to_string(&rec).expect("serializable record")
            )
            .map_err(to_io)?;
        }
        for s in &c.storylines {
            let rec = Record::Storyline(StorylineRecord {
                event: c.event_id.clone(),
                nodes: c.names(s),
            });
            writeln!(
                w,
                "{}",
                serde_json::to_string(&rec).expect("serializable record")
            )
            .map_err(to_io)?;
        }
    }
    w.flush().map_err(to_io)
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<EventCorpus>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_dataset(BufReader::new(f)).map_err(|e| with_path(e, path))
}

pub fn save_dataset(path: impl AsRef<Path>, corpora: &[EventCorpus]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_dataset(BufWriter::new(f), corpora).map_err(|e| with_path(e, path))
}

/// Replaces placeholder paths in IO errors with the real one.
pub(crate) fn with_path(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}

/// The corpora whose demonstrations are used for training.
pub fn train_corpora(corpora: &[EventCorpus]) -> Vec<EventCorpus> {
    corpora
        .iter()
        .filter(|c| c.role == Role::Train)
        .cloned()
        .collect()
}

/// The named event, or else the first held-out event, or else the first event.
pub fn select_event<'a>(corpora: &'a [EventCorpus], name: Option<&str>) -> Result<&'a EventCorpus> {
    match name {
        Some(n) => corpora
            .iter()
            .find(|c| c.event_id == n)
            .ok_or_else(|| Error::Format(format!("no event named {n:?} in dataset"))),
        None => corpora
            .iter()
            .find(|c| c.role == Role::Test)
            .or_else(|| corpora.first())
            .ok_or_else(|| Error::Format("dataset has no events".into())),
    }
}
