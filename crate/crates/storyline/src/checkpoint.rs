//! Versioned text checkpoints of parameter stores.
//!
//! ```text
//! storyline-checkpoint 1 <kind>
//! store <name> <tensor count>
//! tensor <name> <rank> <extents...>
//! <values>
//! ```
//!
//! Values are written in shortest round-trip exponent form, so loading a
//! saved checkpoint restores every parameter bit for bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use storyline_core::disc::{DiscNet, DiscParams};
use storyline_core::embed_mm::MMParams;
use storyline_core::numerics::{ParamStore, Tensor};
use storyline_core::policy::{GeneratorParams, LstmNet};
use storyline_core::Modality;

use crate::dataset::with_path;
use crate::{Error, Result};

const MAGIC: &str = "storyline-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub stores: Vec<(String, ParamStore)>,
}

impl Checkpoint {
    pub fn store(&self, name: &str) -> Result<&ParamStore> {
        self.stores
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, s)| s)
            .ok_or_else(|| Error::Format(format!("checkpoint has no store {name:?}")))
    }

    fn has(&self, name: &str) -> bool {
        self.stores.iter().any(|(n, _)| n == name)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )))
        }
    }
}

pub fn write_checkpoint<W: Write>(mut w: W, ck: &Checkpoint) -> Result<()> {
    let io = |e| Error::io("<output>", e);
    writeln!(w, "{MAGIC} {VERSION} {}", ck.kind).map_err(io)?;
    for (name, store) in &ck.stores {
        writeln!(w, "store {name} {}", store.len()).map_err(io)?;
        for (i, pname) in store.names().enumerate() {
            let t = store.value(i);
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "tensor {pname} {} {}", dims.len(), dims.join(" ")).map_err(io)?;
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:e}")).collect();
            writeln!(w, "{}", values.join(" ")).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}

struct Lines<R> {
    inner: std::io::Lines<R>,
    line: usize,
}

impl<R: BufRead> Lines<R> {
    fn next(&mut self) -> Result<Option<String>> {
        self.line += 1;
        self.inner
            .next()
            .transpose()
            .map_err(|e| Error::io("<input>", e))
    }

    fn require(&mut self, what: &str) -> Result<String> {
        self.next()?
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse {
            line: self.line,
            msg: msg.into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(
    s: Option<&str>,
    lines: &Lines<impl BufRead>,
    what: &str,
) -> Result<T> {
    s.and_then(|s| s.parse().ok())
        .ok_or_else(|| lines.err(format!("bad {what}")))
}

pub fn read_checkpoint<R: BufRead>(reader: R) -> Result<Checkpoint> {
    let mut lines = Lines {
        inner: reader.lines(),
        line: 0,
    };
    let header = lines.require("header")?;
    let mut parts = header.split_whitespace();
    if parts.next() != Some(MAGIC) {
        return Err(lines.err("not a storyline checkpoint"));
    }
    let version: u32 = parse_num(parts.next(), &lines, "version")?;
    if version != VERSION {
        return Err(lines.err(format!("unsupported checkpoint version {version}")));
    }
    let kind = parts
        .next()
        .ok_or_else(|| lines.err("missing checkpoint kind"))?
        .to_string();
    let mut stores = Vec::new();
    while let Some(l) = lines.next()? {
        if l.trim().is_empty() {
            continue;
        }
        let mut parts = l.split_whitespace();
        if parts.next() != Some("store") {
            return Err(lines.err("expected a store header"));
        }
        let name = parts
            .next()
            .ok_or_else(|| lines.err("missing store name"))?
            .to_string();
        let count: usize = parse_num(parts.next(), &lines, "tensor count")?;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let head = lines.require("tensor header")?;
            let mut parts = head.split_whitespace();
            if parts.next() != Some("tensor") {
                return Err(lines.err("expected a tensor header"));
            }
            let tname = parts
                .next()
                .ok_or_else(|| lines.err("missing tensor name"))?
                .to_string();
            let rank: usize = parse_num(parts.next(), &lines, "rank")?;
            let shape = (0..rank)
                .map(|_| parse_num(parts.next(), &lines, "extent"))
                .collect::<Result<Vec<usize>>>()?;
            let body = lines.require("tensor values")?;
            let data = body
                .split_whitespace()
                .map(|v| parse_num(Some(v), &lines, "value"))
                .collect::<Result<Vec<f64>>>()?;
            let t = Tensor::new(shape, data).map_err(|e| lines.err(e.to_string()))?;
            store.add(tname, t);
        }
        stores.push((name, store));
    }
    Ok(Checkpoint { kind, stores })
}

pub fn save_checkpoint(path: impl AsRef<Path>, ck: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(f), ck).map_err(|e| with_path(e, path))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint(BufReader::new(f)).map_err(|e| with_path(e, path))
}

/// A trained generator with its discriminator when one exists.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub gen: GeneratorParams,
    pub disc: Option<DiscParams>,
}

impl Model {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut stores: Vec<(String, ParamStore)> = Modality::ALL
            .iter()
            .map(|&m| (format!("gen.{m}"), self.gen.net(m).store.clone()))
            .collect();
        if let Some(d) = &self.disc {
            stores.extend(
                Modality::ALL
                    .iter()
                    .map(|&m| (format!("disc.{m}"), d.net(m).store.clone())),
            );
        }
        Checkpoint {
            kind: "model".into(),
            stores,
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        ck.expect_kind("model")?;
        let lstm = |m: Modality| -> Result<LstmNet> {
            Ok(LstmNet {
                store: ck.store(&format!("gen.{m}"))?.clone(),
            })
        };
        let gen = GeneratorParams::from_nets([
            lstm(Modality::Txt)?,
            lstm(Modality::Img)?,
            lstm(Modality::Mm)?,
        ])?;
        let disc = if ck.has("disc.txt") {
            let net = |m: Modality| -> Result<DiscNet> {
                Ok(DiscNet {
                    store: ck.store(&format!("disc.{m}"))?.clone(),
                })
            };
            let d = DiscParams::from_nets([
                net(Modality::Txt)?,
                net(Modality::Img)?,
                net(Modality::Mm)?,
            ])?;
            if d.dim() != gen.dim() {
                return Err(Error::Format(
                    "generator and discriminator dimensions differ".into(),
                ));
            }
            Some(d)
        } else {
            None
        };
        Ok(Model { gen, disc })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        save_checkpoint(path, &self.to_checkpoint())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        Self::from_checkpoint(&load_checkpoint(path)?)
            .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

pub fn mm_checkpoint(p: &MMParams) -> Checkpoint {
    let mut embed = ParamStore::new();
    embed.add("word_embed", p.word_embed.clone());
    Checkpoint {
        kind: "mm".into(),
        stores: vec![("mm".into(), p.store.clone()), ("words".into(), embed)],
    }
}

pub fn mm_from_checkpoint(ck: &Checkpoint) -> Result<MMParams> {
    ck.expect_kind("mm")?;
    let words = ck.store("words")?;
    if words.len() != 1 {
        return Err(Error::Format(
            "word table store must hold one tensor".into(),
        ));
    }
    Ok(MMParams::from_parts(
        ck.store("mm")?.clone(),
        words.value(0).clone(),
    )?)
}

pub fn save_mm(path: impl AsRef<Path>, p: &MMParams) -> Result<()> {
    save_checkpoint(path, &mm_checkpoint(p))
}

pub fn load_mm(path: impl AsRef<Path>) -> Result<MMParams> {
    mm_from_checkpoint(&load_checkpoint(path)?)
}
