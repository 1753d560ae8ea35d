//! Generated-storyline files: one `{"start", "nodes", "seed"}` object per line.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use storyline_core::seqdata::{EventCorpus, Storyline};

use crate::dataset::{lines, with_path, Record};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRecord {
    pub start: String,
    pub nodes: Vec<String>,
    pub seed: u64,
}

impl GeneratedRecord {
    pub fn new(corpus: &EventCorpus, s: &Storyline, seed: u64) -> Self {
        let nodes = corpus.names(s);
        GeneratedRecord {
            start: nodes.first().cloned().unwrap_or_default(),
            nodes,
            seed,
        }
    }
}

pub fn write_generated<W: Write>(mut w: W, records: &[GeneratedRecord]) -> Result<()> {
    let to_io = |e: std::io::Error| Error::io("<output>", e);
    for r in records {
        writeln!(
            w,
            "{}",
            serde_json::to_string(r).expect("serializable record")
        )
        .map_err(to_io)?;
    }
    w.flush().map_err(to_io)
}

pub fn read_generated<R: BufRead>(reader: R) -> Result<Vec<GeneratedRecord>> {
    lines(reader)
        .map(|item| {
            let (line, text) = item?;
            let r: GeneratedRecord =
                serde_json::from_str(&text).map_err(|source| Error::Json { line, source })?;
            if r.nodes.first() != Some(&r.start) {
                return Err(Error::Parse {
                    line,
                    msg: "first node differs from start".into(),
                });
            }
            Ok(r)
        })
        .collect()
}

pub fn save_generated(path: impl AsRef<Path>, records: &[GeneratedRecord]) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_generated(BufWriter::new(f), records).map_err(|e| with_path(e, path))
}

pub fn load_generated(path: impl AsRef<Path>) -> Result<Vec<GeneratedRecord>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_generated(BufReader::new(f)).map_err(|e| with_path(e, path))
}

/// Entity-name chains from either a generated-storyline file or a dataset
/// file (whose storyline records carry their event; entity records are
/// skipped).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NamedStoryline {
    pub event: Option<String>,
    pub names: Vec<String>,
}

pub fn read_named<R: BufRead>(reader: R) -> Result<Vec<NamedStoryline>> {
    let mut out = Vec::new();
    for item in lines(reader) {
        let (line, text) = item?;
        let value: serde_json::Value =
            serde_json::from_str(&text).map_err(|source| Error::Json { line, source })?;
        if value.get("kind").is_some() {
            match serde_json::from_value(value).map_err(|source| Error::Json { line, source })? {
                Record::Storyline(s) => out.push(NamedStoryline {
                    event: Some(s.event),
                    names: s.nodes,
                }),
                Record::Entity(_) => {}
            }
        } else {
            let r: GeneratedRecord =
                serde_json::from_value(value).map_err(|source| Error::Json { line, source })?;
            out.push(NamedStoryline {
                event: None,
                names: r.nodes,
            });
        }
    }
    Ok(out)
}

pub fn load_named(path: impl AsRef<Path>) -> Result<Vec<NamedStoryline>> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_named(BufReader::new(f)).map_err(|e| with_path(e, path))
}

/// Resolves a named chain to node indices in its event: the recorded event,
/// else `event` when given, else the first event whose vocabulary holds
/// every name.
pub fn resolve<'a>(
    corpora: &'a [EventCorpus],
    s: &NamedStoryline,
    event: Option<&str>,
) -> Result<(&'a EventCorpus, Storyline)> {
    let wanted = s.event.as_deref().or(event);
    let corpus = corpora
        .iter()
        .filter(|c| wanted.is_none_or(|w| c.event_id == w))
        .find(|c| s.names.iter().all(|n| c.index_of(n).is_some()))
        .ok_or_else(|| Error::Format(format!("no event declares every entity of {:?}", s.names)))?;
    let nodes = s
        .names
        .iter()
        .map(|n| corpus.index_of(n).unwrap())
        .collect();
    let sl = Storyline {
        event_id: corpus.event_id.clone(),
        nodes,
    };
    Ok((corpus, sl))
}
