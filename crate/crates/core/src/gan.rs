//! Adversarial imitation training.
//!
//! Each channel `i` pairs a generator policy `π_i` with a discriminator
//! `D_i`. The generator step follows the REINFORCE estimator
//! `(λ_i / T) Σ_t ∇ log π_i(s_t | s_<t) · Q_i(s_<t, s_t)` where `Q_i` is the
//! terminal score `D_i` of the completed storyline, estimated by Monte-Carlo
//! rollouts for partial ones. The discriminator step descends the no-log
//! objective `−E D(real) − E (1 − D(fake))`.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::disc::{self, DiscParams};
use crate::harness::training_sum_sim;
use crate::numerics::{sgd_step, Direction, Tensor};
use crate::policy::{
    self, accumulate_logprob_grad, rollout_complete, sample_storyline, scheduled_sampling_pretrain,
    CandidateSet, Demo, GeneratorParams, Sampler, Schedule, TrainingSet,
};
use crate::seqdata::{EventCorpus, Storyline};
use crate::{rng, Error, Modality, Result};

/// Hyper-parameters of a training run. Field names double as config keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Channel weights (txt, img, mm).
    pub lambda: [f64; 3],
    /// Generator learning rate in the adversarial phase.
    pub alpha: f64,
    pub n_rollouts: usize,
    pub g_steps: usize,
    pub d_steps: usize,
    pub rounds: usize,
    pub pretrain_g_epochs: usize,
    pub pretrain_d_epochs: usize,
    /// Storyline length `T`.
    pub length: usize,
    pub hidden: usize,
    /// Feature maps per discriminator filter width.
    pub maps: usize,
    pub batch_size: usize,
    /// Generator rate during maximum-likelihood pretraining.
    pub pretrain_rate: f64,
    /// Discriminator rate during cross-entropy pretraining.
    pub d_pretrain_rate: f64,
    /// Discriminator rate in the adversarial phase.
    pub d_rate: f64,
    /// Sampling temperature at inference; `0` is argmax.
    pub temperature: f64,
    /// Consecutive low-improvement rounds before stopping.
    pub patience: usize,
    /// Relative training-similarity gain below which a round counts as stale.
    pub min_improvement: f64,
    /// Scheduled-sampling probability at the first and last epoch.
    pub ss_start: f64,
    pub ss_end: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: [0.6, 0.3, 0.1],
            alpha: 1.0,
            n_rollouts: 16,
            g_steps: 1,
            d_steps: 1,
            rounds: 50,
            pretrain_g_epochs: 40,
            pretrain_d_epochs: 10,
            length: 4,
            hidden: policy::DEFAULT_HIDDEN,
            maps: disc::DEFAULT_MAPS,
            batch_size: 32,
            pretrain_rate: 0.3,
            d_pretrain_rate: 0.05,
            d_rate: 0.05,
            temperature: 1.0,
            patience: 5,
            min_improvement: 1e-3,
            ss_start: 0.0,
            ss_end: 0.25,
            seed: 0,
        }
    }
}

fn rate_ok(r: f64) -> bool {
    r.is_finite() && r >= 0.0
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        Sampler::new(self.lambda, self.temperature)?;
        let checks: [(bool, &str); 9] = [
            (self.n_rollouts >= 1, "n_rollouts must be at least 1"),
            (
                self.length >= disc::FILTER_WIDTHS[1],
                "length must cover the widest discriminator filter",
            ),
            (self.hidden >= 1, "hidden must be positive"),
            (self.maps >= 1, "maps must be positive"),
            (self.batch_size >= 1, "batch_size must be positive"),
            (
                [
                    self.alpha,
                    self.pretrain_rate,
                    self.d_pretrain_rate,
                    self.d_rate,
                ]
                .into_iter()
                .all(rate_ok),
                "rates must be finite and non-negative",
            ),
            (
                rate_ok(self.min_improvement),
                "min_improvement must be finite and non-negative",
            ),
            (
                (0.0..=1.0).contains(&self.ss_start),
                "ss_start must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&self.ss_end),
                "ss_end must lie in [0, 1]",
            ),
        ];
        for (ok, msg) in checks {
            if !ok {
                return Err(Error::Config(msg.to_string()));
            }
        }
        Ok(())
    }

    /// Mixture sampler used at inference.
    pub fn sampler(&self) -> Sampler {
        Sampler {
            lambda: self.lambda,
            temperature: self.temperature,
        }
    }
}

/// `Q_i(s_<t, s_t)` along one sampled storyline, for `t = 1..T-1`.
#[derive(Clone, Debug, PartialEq)]
pub struct QEstimate {
    pub modality: Modality,
    pub nodes: Vec<usize>,
    pub q: Vec<f64>,
}

/// Discriminator score of `nodes` on channel `m`, using the first-row
/// normalized channel matrix.
pub fn score_nodes(
    disc: &DiscParams,
    cands: &CandidateSet,
    nodes: &[usize],
    m: Modality,
) -> Result<f64> {
    disc::score(disc, &channel_matrix(cands, nodes, m), m)
}

/// First-row normalized channel matrix.
pub fn channel_matrix(cands: &CandidateSet, nodes: &[usize], m: Modality) -> Tensor {
    crate::seqdata::normalize_rows(&cands.sequence(m, nodes))
}

/// Expected terminal score of `partial ++ [chosen]`. A complete sequence is
/// scored directly; otherwise the score is averaged over `n_rollouts`
/// completions drawn with `sampler`.
#[allow(clippy::too_many_arguments)]
pub fn estimate_q(
    gen: &GeneratorParams,
    disc: &DiscParams,
    cands: &CandidateSet,
    partial: &[usize],
    chosen: usize,
    length: usize,
    n_rollouts: usize,
    seed: u64,
    sampler: &Sampler,
    m: Modality,
) -> Result<f64> {
    if partial.len() + 1 > length {
        return Err(Error::Config(format!(
            "prefix of {} nodes cannot grow within length {length}",
            partial.len() + 1
        )));
    }
    if partial.contains(&chosen) {
        return Err(Error::InvalidTrajectory {
            step: partial.len(),
        });
    }
    let mut prefix = partial.to_vec();
    prefix.push(chosen);
    if prefix.len() == length {
        return score_nodes(disc, cands, &prefix, m);
    }
    if n_rollouts == 0 {
        return Err(Error::Config("n_rollouts must be at least 1".into()));
    }
    let rolls = rollout_complete(gen, cands, &prefix, length, n_rollouts, seed, sampler)?;
    let mut mean = 0.0;
    for (i, r) in rolls.iter().enumerate() {
        let x = score_nodes(disc, cands, r, m)?;
        mean += (x - mean) / (i + 1) as f64;
    }
    Ok(mean)
}

/// Samples one storyline from `π_m` starting at `start`, estimates its Q
/// values with rollouts from `π_m`, and accumulates
/// `scale · Σ_t Q_t ∇ log π_m(s_t | s_<t)` into channel `m`'s gradients.
#[allow(clippy::too_many_arguments)]
pub fn accumulate_episode(
    gen: &mut GeneratorParams,
    disc: &DiscParams,
    cands: &CandidateSet,
    start: usize,
    length: usize,
    n_rollouts: usize,
    seed: u64,
    m: Modality,
    scale: f64,
) -> Result<QEstimate> {
    let sampler = Sampler::only(m);
    let sl = sample_storyline(gen, cands, start, length, rng::derive(seed, 0), &sampler)?;
    let mut q = Vec::with_capacity(length - 1);
    for t in 1..length {
        q.push(estimate_q(
            gen,
            disc,
            cands,
            &sl.nodes[..t],
            sl.nodes[t],
            length,
            n_rollouts,
            rng::derive(seed, t as u64),
            &sampler,
            m,
        )?);
    }
    let weights: Vec<f64> = q.iter().map(|v| scale * v).collect();
    accumulate_logprob_grad(gen, cands, &sl.nodes, m, &weights)?;
    Ok(QEstimate {
        modality: m,
        nodes: sl.nodes,
        q,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GenDiagnostics {
    /// Mean Q over all estimated steps, per channel; `0` for inactive channels.
    pub mean_q: [f64; 3],
}

fn pick_demo<'a>(data: &'a TrainingSet, r: &mut rng::Rng) -> &'a Demo {
    &data.demos[r.random_range(0..data.demos.len())]
}

/// `g_steps` policy-gradient ascent steps. For every channel with `λ_i > 0`,
/// a batch of storylines is drawn from `π_i` starting at demonstrated start
/// entities and `θ_i ← θ_i + α ĝ_i`. Channels with `λ_i = 0` are untouched.
pub fn generator_update(
    gen: &GeneratorParams,
    disc: &DiscParams,
    data: &TrainingSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(GeneratorParams, GenDiagnostics)> {
    let mut g = gen.clone();
    let mut diag = GenDiagnostics::default();
    let length = data.length();
    for step in 0..cfg.g_steps {
        for m in Modality::ALL {
            let lambda = cfg.lambda[m.index()];
            if lambda == 0.0 {
                continue;
            }
            let channel_seed = rng::derive(rng::derive(seed, step as u64), m.index() as u64);
            let mut r = rng::stream(channel_seed, 0);
            let scale = lambda / length as f64 / cfg.batch_size as f64;
            g.net_mut(m).store.zero_grads();
            let mut q_sum = 0.0;
            let mut q_count = 0usize;
            for b in 0..cfg.batch_size {
                let d = pick_demo(data, &mut r);
                let est = accumulate_episode(
                    &mut g,
                    disc,
                    data.candidates(d),
                    d.nodes[0],
                    length,
                    cfg.n_rollouts,
                    rng::derive(channel_seed, 1 + b as u64),
                    m,
                    scale,
                )?;
                q_sum += est.q.iter().sum::<f64>();
                q_count += est.q.len();
            }
            sgd_step(&mut g.net_mut(m).store, cfg.alpha, Direction::Ascent)
                .map_err(|e| e.context(format!("{m} generator step")))?;
            g.net_mut(m).store.zero_grads();
            diag.mean_q[m.index()] = q_sum / q_count.max(1) as f64;
        }
    }
    Ok((g, diag))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DiscDiagnostics {
    /// Objective on the round's batches before the first and after the last step.
    pub before: [f64; 3],
    pub after: [f64; 3],
}

/// Real and per-channel fake batches for one discriminator update.
pub struct DiscBatches {
    pub real: Vec<Demo>,
    /// `fake[i][b]` is drawn from `π_i` starting where `real[b]` starts.
    pub fake: [Vec<Vec<usize>>; 3],
}

/// Draws `n` demonstrations and, for each channel, `n` generated storylines
/// from the same start entities.
pub fn sample_disc_batches(
    gen: &GeneratorParams,
    data: &TrainingSet,
    n: usize,
    seed: u64,
) -> Result<DiscBatches> {
    let mut r = rng::stream(seed, 0);
    let real: Vec<Demo> = (0..n).map(|_| pick_demo(data, &mut r).clone()).collect();
    let fake = Modality::ALL.map(|m| {
        real.iter()
            .enumerate()
            .map(|(b, d)| {
                let s = rng::derive(rng::derive(seed, 1 + m.index() as u64), b as u64);
                sample_storyline(
                    gen,
                    data.candidates(d),
                    d.nodes[0],
                    d.nodes.len(),
                    s,
                    &Sampler::only(m),
                )
                .map(|sl| sl.nodes)
            })
            .collect::<Result<Vec<_>>>()
    });
    let [a, b, c] = fake;
    Ok(DiscBatches {
        real,
        fake: [a?, b?, c?],
    })
}

fn batch_channels(data: &TrainingSet, b: &DiscBatches, m: Modality) -> (Vec<Tensor>, Vec<Tensor>) {
    let real = b
        .real
        .iter()
        .map(|d| channel_matrix(data.candidates(d), &d.nodes, m))
        .collect();
    let fake = b.fake[m.index()]
        .iter()
        .zip(&b.real)
        .map(|(nodes, d)| channel_matrix(data.candidates(d), nodes, m))
        .collect();
    (real, fake)
}

/// `d_steps` descent steps of the no-log objective for every channel with
/// `λ_i > 0`, on a real batch of `batch_size` demonstrations and an
/// equal-size fake batch from `π_i`.
pub fn discriminator_update(
    gen: &GeneratorParams,
    disc: &DiscParams,
    data: &TrainingSet,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(DiscParams, DiscDiagnostics)> {
    let batches = sample_disc_batches(gen, data, cfg.batch_size, seed)?;
    discriminator_update_on(disc, data, &batches, cfg)
}

/// [`discriminator_update`] on fixed batches.
pub fn discriminator_update_on(
    disc: &DiscParams,
    data: &TrainingSet,
    batches: &DiscBatches,
    cfg: &TrainConfig,
) -> Result<(DiscParams, DiscDiagnostics)> {
    let mut d = disc.clone();
    let mut diag = DiscDiagnostics::default();
    for m in Modality::ALL {
        if cfg.lambda[m.index()] == 0.0 {
            continue;
        }
        let (real, fake) = batch_channels(data, batches, m);
        let real: Vec<&Tensor> = real.iter().collect();
        let fake: Vec<&Tensor> = fake.iter().collect();
        let net = d.net_mut(m);
        diag.before[m.index()] = disc::adversarial_objective_net(net, &real, &fake)?;
        for _ in 0..cfg.d_steps {
            disc::train_step_eq4_net(net, &real, &fake, cfg.d_rate)
                .map_err(|e| e.context(format!("{m} discriminator step")))?;
        }
        diag.after[m.index()] = disc::adversarial_objective_net(net, &real, &fake)?;
    }
    Ok((d, diag))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Pretrain,
    Adversarial,
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub round: usize,
    pub phase: Phase,
    pub mean_q: [f64; 3],
    pub d_objective: [f64; 3],
    pub sum_sim: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutput {
    pub gen: GeneratorParams,
    pub disc: DiscParams,
    /// Generator after maximum-likelihood pretraining only.
    pub pretrained: GeneratorParams,
    pub log: Vec<LogRecord>,
}

impl TrainOutput {
    pub fn pretrain_sum_sim(&self) -> f64 {
        self.log[0].sum_sim
    }

    pub fn final_sum_sim(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.sum_sim)
    }
}

const SEED_GEN_INIT: u64 = 1;
const SEED_GEN_PRETRAIN: u64 = 2;
const SEED_DISC_INIT: u64 = 3;
const SEED_DISC_PRETRAIN: u64 = 4;
const SEED_ROUND: u64 = 5;
const SEED_APPLY: u64 = 6;

/// Windowed demonstrations from `corpora` plus a generator pretrained on
/// them by maximum likelihood.
pub fn pretrain_generator(
    corpora: &[EventCorpus],
    cfg: &TrainConfig,
) -> Result<(TrainingSet, GeneratorParams)> {
    pretrain_generator_scheduled(corpora, cfg, Schedule::Constant(0.0))
}

/// [`pretrain_generator`] with scheduled sampling; both draw the same
/// initialization and shuffling seeds.
pub fn pretrain_generator_scheduled(
    corpora: &[EventCorpus],
    cfg: &TrainConfig,
    schedule: Schedule,
) -> Result<(TrainingSet, GeneratorParams)> {
    cfg.validate()?;
    let data = TrainingSet::from_corpora(corpora, cfg.length)
        .map_err(|e| e.context("windowing demonstrations"))?;
    let k = data.events[0].dim();
    let init = GeneratorParams::init(k, cfg.hidden, rng::derive(cfg.seed, SEED_GEN_INIT))?;
    let (gen, _) = scheduled_sampling_pretrain(
        &init,
        &data,
        cfg.pretrain_g_epochs,
        cfg.pretrain_rate,
        schedule,
        rng::derive(cfg.seed, SEED_GEN_PRETRAIN),
    )
    .map_err(|e| e.context("generator pretraining"))?;
    Ok((data, gen))
}

/// Cross-entropy pretraining of every active channel's discriminator on all
/// demonstrations against one generated storyline per demonstration.
pub fn pretrain_discriminator(
    gen: &GeneratorParams,
    data: &TrainingSet,
    cfg: &TrainConfig,
) -> Result<(DiscParams, [f64; 3])> {
    let mut disc = DiscParams::init(
        data.events[0].dim(),
        cfg.maps,
        rng::derive(cfg.seed, SEED_DISC_INIT),
    )?;
    let base = rng::derive(cfg.seed, SEED_DISC_PRETRAIN);
    let mut fake: [Vec<Vec<usize>>; 3] = Default::default();
    for m in Modality::ALL {
        if cfg.lambda[m.index()] == 0.0 {
            continue;
        }
        for (b, d) in data.demos.iter().enumerate() {
            let s = rng::derive(base, (3 * b + m.index()) as u64);
            let sl = sample_storyline(
                gen,
                data.candidates(d),
                d.nodes[0],
                d.nodes.len(),
                s,
                &Sampler::only(m),
            )?;
            fake[m.index()].push(sl.nodes);
        }
    }
    let batches = DiscBatches {
        real: data.demos.clone(),
        fake,
    };
    let mut objective = [0.0; 3];
    for m in Modality::ALL {
        if cfg.lambda[m.index()] == 0.0 {
            continue;
        }
        let (real, fake) = batch_channels(data, &batches, m);
        let real: Vec<&Tensor> = real.iter().collect();
        let fake: Vec<&Tensor> = fake.iter().collect();
        let (net, _) = disc::pretrain_xent_net(
            disc.net(m),
            &real,
            &fake,
            cfg.pretrain_d_epochs,
            cfg.d_pretrain_rate,
            rng::derive(base, (1 << 32) | m.index() as u64),
        )
        .map_err(|e| e.context(format!("{m} discriminator pretraining")))?;
        objective[m.index()] = disc::adversarial_objective_net(&net, &real, &fake)?;
        *disc.net_mut(m) = net;
    }
    Ok((disc, objective))
}

/// Full training: windowing, generator pretraining, discriminator
/// pretraining, then alternating adversarial rounds until the round budget
/// or until training similarity stalls for `patience` rounds.
pub fn train(corpora: &[EventCorpus], cfg: &TrainConfig) -> Result<TrainOutput> {
    let (data, pretrained) = pretrain_generator(corpora, cfg)?;
    train_from(&data, &pretrained, cfg)
}

/// [`train`] starting from an already pretrained generator.
pub fn train_from(
    data: &TrainingSet,
    pretrained: &GeneratorParams,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if data.length() != cfg.length {
        return Err(Error::Config(format!(
            "demonstrations have length {} but config asks for {}",
            data.length(),
            cfg.length
        )));
    }
    let (mut disc, d_obj) = pretrain_discriminator(pretrained, data, cfg)?;
    let mut gen = pretrained.clone();
    let mut sim = training_sum_sim(&gen, data, &cfg.sampler().argmax())?;
    let mut log = vec![LogRecord {
        round: 0,
        phase: Phase::Pretrain,
        mean_q: [0.0; 3],
        d_objective: d_obj,
        sum_sim: sim,
    }];
    let mut stale = 0;
    for round in 1..=cfg.rounds {
        let round_seed = rng::derive(rng::derive(cfg.seed, SEED_ROUND), round as u64);
        let (g, gd) = generator_update(&gen, &disc, data, cfg, rng::derive(round_seed, 0))
            .map_err(|e| e.context(format!("round {round} generator phase")))?;
        let (d, dd) = discriminator_update(&g, &disc, data, cfg, rng::derive(round_seed, 1))
            .map_err(|e| e.context(format!("round {round} discriminator phase")))?;
        gen = g;
        disc = d;
        let next = training_sum_sim(&gen, data, &cfg.sampler().argmax())
            .map_err(|e| e.context(format!("round {round} evaluation")))?;
        log.push(LogRecord {
            round,
            phase: Phase::Adversarial,
            mean_q: gd.mean_q,
            d_objective: dd.before,
            sum_sim: next,
        });
        let gain = (next - sim) / sim.abs().max(f64::MIN_POSITIVE);
        stale = if gain < cfg.min_improvement {
            stale + 1
        } else {
            0
        };
        sim = next;
        if cfg.patience > 0 && stale >= cfg.patience {
            break;
        }
    }
    Ok(TrainOutput {
        gen,
        disc,
        pretrained: pretrained.clone(),
        log,
    })
}

/// Generates `T`-node storylines on an unseen event, from `starts` when given
/// or otherwise from `count` uniformly drawn start entities.
pub fn apply_policy(
    gen: &GeneratorParams,
    unseen: &EventCorpus,
    cfg: &TrainConfig,
    starts: Option<&[usize]>,
    count: usize,
) -> Result<Vec<Storyline>> {
    let cands = CandidateSet::from_corpus(unseen)?;
    if cands.dim() != gen.dim() {
        return Err(Error::Transfer {
            expected: gen.dim(),
            got: cands.dim(),
        });
    }
    let sampler = Sampler::new(cfg.lambda, cfg.temperature)?;
    let base = rng::derive(cfg.seed, SEED_APPLY);
    let chosen: Vec<usize> = match starts {
        Some(s) => s.to_vec(),
        None => {
            let mut r = rng::stream(base, 0);
            (0..count).map(|_| r.random_range(0..cands.len())).collect()
        }
    };
    chosen
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            sample_storyline(
                gen,
                &cands,
                s,
                cfg.length,
                rng::derive(base, 1 + i as u64),
                &sampler,
            )
        })
        .collect()
}

/// Resolves start entity names against an event's vocabulary.
pub fn resolve_starts(corpus: &EventCorpus, names: &[String]) -> Result<Vec<usize>> {
    names
        .iter()
        .map(|n| {
            corpus.index_of(n).ok_or_else(|| {
                Error::Schema(format!(
                    "unknown start entity {n:?} in event {:?}",
                    corpus.event_id
                ))
            })
        })
        .collect()
}
