//! Similarity metric, baselines and evaluation reports.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::gan::{channel_matrix, TrainConfig};
use crate::numerics::{dot, sgd_step, Direction, Tensor};
use crate::policy::{
    accumulate_logprob_grad, sample_storyline, CandidateSet, GeneratorParams, Sampler, TrainingSet,
};
use crate::seqdata::{ModalSequence, PlantedPolicy, Role, Storyline};
use crate::{rng, Error, Modality, Result};

/// Frobenius cosine from precomputed squared norms; zero-norm pairs give 0.
fn cosine(inner: f64, sq_a: f64, sq_b: f64) -> f64 {
    if sq_a == 0.0 || sq_b == 0.0 {
        0.0
    } else {
        inner / libm::sqrt(sq_a * sq_b)
    }
}

fn check_shapes(reference: &[&Tensor], generated: &[&Tensor]) -> Result<()> {
    let Some(first) = reference.first().or(generated.first()) else {
        return Ok(());
    };
    for t in reference.iter().chain(generated) {
        if t.shape() != first.shape() {
            return Err(Error::dimension("sum_sim", first.shape(), t.shape()));
        }
    }
    Ok(())
}

/// `cos[g][r]` between every generated and reference matrix.
pub fn cosine_matrix(reference: &[&Tensor], generated: &[&Tensor]) -> Result<Vec<Vec<f64>>> {
    check_shapes(reference, generated)?;
    let sq_ref: Vec<f64> = reference.iter().map(|a| dot(a.data(), a.data())).collect();
    Ok(generated
        .iter()
        .map(|b| {
            let sq_b = dot(b.data(), b.data());
            reference
                .iter()
                .zip(&sq_ref)
                .map(|(a, &sq_a)| cosine(dot(a.data(), b.data()), sq_a, sq_b))
                .collect()
        })
        .collect())
}

/// `Σ_A Σ_B ⟨A, B⟩_F / (‖A‖_F ‖B‖_F)` over plain matrices.
pub fn sum_sim_matrices(reference: &[&Tensor], generated: &[&Tensor]) -> Result<f64> {
    Ok(cosine_matrix(reference, generated)?
        .iter()
        .flat_map(|row| row.iter())
        .sum())
}

/// Accumulated Frobenius-cosine similarity between every reference and every
/// generated sequence on one channel.
pub fn sum_sim(
    reference: &[ModalSequence],
    generated: &[ModalSequence],
    channel: Modality,
) -> Result<f64> {
    let r: Vec<&Tensor> = reference.iter().map(|s| s.channel(channel)).collect();
    let g: Vec<&Tensor> = generated.iter().map(|s| s.channel(channel)).collect();
    sum_sim_matrices(&r, &g)
}

/// Counts gathered while building a report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    /// Generated storylines that visit some entity twice.
    pub repeat_violations: usize,
    /// Sequences (both sides) whose first row was not all zero after normalization.
    pub unnormalized: usize,
    /// Sequences (both sides) with zero Frobenius norm on the scored channel.
    pub zero_norm: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub channel: Modality,
    pub sum_sim: f64,
    /// `pairs[g][r]`: cosine between generated `g` and reference `r`.
    pub pairs: Vec<Vec<f64>>,
    /// Row sums of `pairs`, one per generated storyline.
    pub per_storyline: Vec<f64>,
    pub n_reference: usize,
    pub n_generated: usize,
    pub audit: Audit,
    pub config: Option<TrainConfig>,
}

impl EvalReport {
    /// Scores already-normalized sequences. `repeats` is the number of
    /// generated storylines with repeated entities.
    pub fn build(
        model: impl Into<String>,
        reference: &[ModalSequence],
        generated: &[ModalSequence],
        channel: Modality,
        repeats: usize,
        config: Option<TrainConfig>,
    ) -> Result<Self> {
        let r: Vec<&Tensor> = reference.iter().map(|s| s.channel(channel)).collect();
        let g: Vec<&Tensor> = generated.iter().map(|s| s.channel(channel)).collect();
        let pairs = cosine_matrix(&r, &g)?;
        let per_storyline: Vec<f64> = pairs.iter().map(|row| row.iter().sum()).collect();
        let sum_sim = per_storyline.iter().sum();
        let mut audit = Audit {
            repeat_violations: repeats,
            ..Audit::default()
        };
        for t in r.iter().chain(&g) {
            if t.rows() > 0 && t.row(0).iter().any(|&v| v != 0.0) {
                audit.unnormalized += 1;
            }
            if t.data().iter().all(|&v| v == 0.0) {
                audit.zero_norm += 1;
            }
        }
        Ok(EvalReport {
            model: model.into(),
            channel,
            sum_sim,
            n_reference: reference.len(),
            n_generated: generated.len(),
            pairs,
            per_storyline,
            audit,
            config,
        })
    }
}

/// Normalized txt-channel `sum_sim` of the demonstrations against one
/// generation per demonstration from the same start entity.
pub fn training_sum_sim(
    gen: &GeneratorParams,
    data: &TrainingSet,
    sampler: &Sampler,
) -> Result<f64> {
    let length = data.length();
    let mut refs = Vec::with_capacity(data.demos.len());
    let mut gens = Vec::with_capacity(data.demos.len());
    for (i, d) in data.demos.iter().enumerate() {
        let cands = data.candidates(d);
        let sl = sample_storyline(
            gen,
            cands,
            d.nodes[0],
            length,
            rng::derive(0, i as u64),
            sampler,
        )?;
        refs.push(channel_matrix(cands, &d.nodes, Modality::Txt));
        gens.push(channel_matrix(cands, &sl.nodes, Modality::Txt));
    }
    let r: Vec<&Tensor> = refs.iter().collect();
    let g: Vec<&Tensor> = gens.iter().collect();
    sum_sim_matrices(&r, &g)
}

/// `(matches, checked)` over every step whose predecessor has a planted
/// successor.
pub fn planted_match(
    storylines: &[Vec<usize>],
    planted: &PlantedPolicy,
    role: Role,
) -> (usize, usize) {
    let mut hits = 0;
    let mut total = 0;
    for nodes in storylines {
        for w in nodes.windows(2) {
            if let Some(next) = planted.successor(role, w[0]) {
                total += 1;
                hits += usize::from(next == w[1]);
            }
        }
    }
    (hits, total)
}

/// Uniform no-repeat storylines from each start.
pub fn baseline_random(
    cands: &CandidateSet,
    starts: &[usize],
    length: usize,
    seed: u64,
) -> Result<Vec<Storyline>> {
    if length > cands.len() {
        return Err(Error::ExhaustedVocabulary { step: cands.len() });
    }
    starts
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if s >= cands.len() {
                return Err(Error::Schema(format!("start index {s} outside vocabulary")));
            }
            let mut r = rng::stream(rng::derive(seed, i as u64), 0);
            let mut nodes = vec![s];
            let mut free: Vec<usize> = (0..cands.len()).filter(|&e| e != s).collect();
            while nodes.len() < length {
                nodes.push(free.swap_remove(r.random_range(0..free.len())));
            }
            Ok(Storyline {
                event_id: cands.event_id.clone(),
                nodes,
            })
        })
        .collect()
}

/// Reference matrices with cached squared norms for nearest-match rewards.
pub struct SimilarityReward {
    refs: [Vec<(Tensor, f64)>; 3],
}

impl SimilarityReward {
    pub fn new(data: &TrainingSet) -> Self {
        SimilarityReward {
            refs: Modality::ALL.map(|m| {
                data.demos
                    .iter()
                    .map(|d| {
                        let t = channel_matrix(data.candidates(d), &d.nodes, m);
                        let sq = dot(t.data(), t.data());
                        (t, sq)
                    })
                    .collect()
            }),
        }
    }

    /// Largest Frobenius cosine between `seq` and any demonstration on `m`.
    pub fn reward(&self, seq: &Tensor, m: Modality) -> f64 {
        let sq = dot(seq.data(), seq.data());
        self.refs[m.index()]
            .iter()
            .map(|(t, sq_t)| cosine(dot(t.data(), seq.data()), *sq_t, sq))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// REINFORCE from `pretrained` with the terminal reward
/// [`SimilarityReward::reward`] and no discriminator. Runs `cfg.rounds`
/// rounds of `cfg.g_steps` ascent steps on every channel with `λ_i > 0`.
pub fn baseline_pg_similarity(
    pretrained: &GeneratorParams,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<GeneratorParams> {
    cfg.validate()?;
    let reward = SimilarityReward::new(data);
    let length = data.length();
    let mut gen = pretrained.clone();
    for round in 0..cfg.rounds {
        for step in 0..cfg.g_steps {
            let step_seed = rng::derive(rng::derive(cfg.seed, 0x9e37 + round as u64), step as u64);
            for m in Modality::ALL {
                let lambda = cfg.lambda[m.index()];
                if lambda == 0.0 {
                    continue;
                }
                let seed = rng::derive(step_seed, m.index() as u64);
                let mut r = rng::stream(seed, 0);
                let scale = lambda / length as f64 / cfg.batch_size as f64;
                gen.net_mut(m).store.zero_grads();
                for b in 0..cfg.batch_size {
                    let d = &data.demos[r.random_range(0..data.demos.len())];
                    let cands = data.candidates(d);
                    let sl = sample_storyline(
                        &gen,
                        cands,
                        d.nodes[0],
                        length,
                        rng::derive(seed, 1 + b as u64),
                        &Sampler::only(m),
                    )?;
                    let value = reward.reward(&channel_matrix(cands, &sl.nodes, m), m);
                    accumulate_logprob_grad(
                        &mut gen,
                        cands,
                        &sl.nodes,
                        m,
                        &vec![scale * value; length - 1],
                    )?;
                }
                sgd_step(&mut gen.net_mut(m).store, cfg.alpha, Direction::Ascent)
                    .map_err(|e| e.context(format!("similarity baseline round {round}")))?;
                gen.net_mut(m).store.zero_grads();
            }
        }
    }
    Ok(gen)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
        Tensor::matrix(rows, cols, data.to_vec()).unwrap()
    }

    #[test]
    fn self_and_opposite_cosines() {
        let a = m(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let b = m(2, 2, &[-1.0, -2.0, 0.5, -3.0]);
        assert_eq!(sum_sim_matrices(&[&a], &[&a]).unwrap(), 1.0);
        assert_eq!(sum_sim_matrices(&[&a], &[&b]).unwrap(), -1.0);
        assert_eq!(sum_sim_matrices(&[&a, &a, &a], &[&a, &a, &a]).unwrap(), 9.0);
    }

    #[test]
    fn zero_matrix_contributes_nothing() {
        let a = m(2, 2, &[1.0, 2.0, -0.5, 3.0]);
        let z = Tensor::zeros(&[2, 2]);
        assert_eq!(sum_sim_matrices(&[&a, &z], &[&z, &a]).unwrap(), 1.0);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = Tensor::zeros(&[2, 2]);
        let b = Tensor::zeros(&[3, 2]);
        assert!(matches!(
            sum_sim_matrices(&[&a], &[&b]),
            Err(Error::Dimension { .. })
        ));
    }
}
