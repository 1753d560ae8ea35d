//! Steps shared by the command line and the end-to-end tests.

use storyline_core::embed_mm::{
    corpus_items, embed_image, train_mm, MMParams, CONTEXT_WINDOW, DEFAULT_RANK,
};
use storyline_core::seqdata::{project_images, EventCorpus, Role};

use crate::Result;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbedConfig {
    pub rank: usize,
    pub epochs: usize,
    pub rate: f64,
    pub seed: u64,
}

impl Default for EmbedConfig {
    fn default() -> Self {
        EmbedConfig {
            rank: DEFAULT_RANK,
            epochs: 30,
            rate: 0.1,
            seed: 0,
        }
    }
}

/// Trains the image-conditioned word model on the training events and fills
/// in `image_vec` for every entity of every event. Returns the model and its
/// per-epoch training loss.
pub fn embed_corpora(
    corpora: &mut [EventCorpus],
    cfg: &EmbedConfig,
) -> Result<(MMParams, Vec<f64>)> {
    let train: Vec<EventCorpus> = corpora
        .iter()
        .filter(|c| c.role == Role::Train)
        .cloned()
        .collect();
    let (items, words) = corpus_items(&train)?;
    let d = items[0].image_feat.len();
    let init = MMParams::init(cfg.rank, d, CONTEXT_WINDOW, words, cfg.seed)?;
    let (model, history) = train_mm(&items, &init, cfg.epochs, cfg.rate, cfg.seed)?;
    for c in corpora.iter_mut() {
        project_images(c, |f| embed_image(&model, f))?;
    }
    Ok((model, history))
}
