//! Multimodal adversarial imitation learning of entity storylines.
//!
//! The crate learns a storyline-generation policy from demonstrated entity
//! chains. Each chain is seen through three aligned channels: text vectors,
//! projected image vectors, and their difference. A recurrent generator per
//! channel is pretrained by maximum likelihood and then refined with policy
//! gradients whose rewards come from per-channel convolutional critics.
//!
//! Everything here is pure computation over `alloc` collections; file formats,
//! the command line and other IO live in the `storyline` companion crate.
#![no_std]

extern crate alloc;

pub mod disc;
pub mod embed_mm;
mod error;
pub mod gan;
pub mod harness;
pub mod numerics;
pub mod policy;
pub mod rng;
pub mod seqdata;

pub use error::{Error, Result};

/// One of the three aligned channels a storyline is observed through.
#[derive(
    Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, serde::Serialize, serde::Deserialize,
)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Txt,
    Img,
    Mm,
}

impl Modality {
    pub const ALL: [Modality; 3] = [Modality::Txt, Modality::Img, Modality::Mm];

    pub fn index(self) -> usize {
        match self {
            Modality::Txt => 0,
            Modality::Img => 1,
            Modality::Mm => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Modality::Txt => "txt",
            Modality::Img => "img",
            Modality::Mm => "mm",
        }
    }

    pub fn parse(s: &str) -> Option<Modality> {
        match s {
            "txt" => Some(Modality::Txt),
            "img" => Some(Modality::Img),
            "mm" => Some(Modality::Mm),
            _ => None,
        }
    }
}

impl core::fmt::Display for Modality {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}
