//! Entities, storylines and their three-channel matrix form, plus the
//! planted-successor synthetic corpus used for oracle tests.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::numerics::{matvec, Tensor};
use crate::{rng, Error, Modality, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct EntityNode {
    pub name: String,
    /// Word-space vector of the entity name.
    pub text_vec: Vec<f64>,
    /// Raw image features; `None` when the entity has no image.
    pub image_feat: Option<Vec<f64>>,
    /// Image projected into word space, filled in by the multimodal model.
    pub image_vec: Option<Vec<f64>>,
}

impl EntityNode {
    pub fn new(name: impl Into<String>, text_vec: Vec<f64>, image_feat: Option<Vec<f64>>) -> Self {
        EntityNode {
            name: name.into(),
            text_vec,
            image_feat,
            image_vec: None,
        }
    }

    /// Vector for one channel; `mm` is `img - txt`.
    pub fn channel(&self, modality: Modality) -> Result<Vec<f64>> {
        match modality {
            Modality::Txt => Ok(self.text_vec.clone()),
            Modality::Img => self
                .image_vec
                .clone()
                .ok_or_else(|| Error::UnprojectedEntity(self.name.clone())),
            Modality::Mm => {
                let img = self
                    .image_vec
                    .as_ref()
                    .ok_or_else(|| Error::UnprojectedEntity(self.name.clone()))?;
                Ok(img.iter().zip(&self.text_vec).map(|(i, t)| i - t).collect())
            }
        }
    }
}

/// An ordered entity chain. `nodes` index into the owning event's entities.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Storyline {
    pub event_id: String,
    pub nodes: Vec<usize>,
}

impl Storyline {
    /// Builds a storyline, rejecting repeated entities.
    pub fn new(event_id: impl Into<String>, nodes: Vec<usize>) -> Result<Self> {
        let mut seen = BTreeSet::new();
        for (step, &n) in nodes.iter().enumerate() {
            if !seen.insert(n) {
                return Err(Error::InvalidTrajectory { step });
            }
        }
        Ok(Storyline {
            event_id: event_id.into(),
            nodes,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn has_repeats(&self) -> bool {
        let set: BTreeSet<_> = self.nodes.iter().collect();
        set.len() != self.nodes.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Test,
}

/// One event: its entity vocabulary and demonstrated storylines.
#[derive(Clone, Debug, PartialEq)]
pub struct EventCorpus {
    pub event_id: String,
    pub entities: Vec<EntityNode>,
    pub storylines: Vec<Storyline>,
    pub role: Role,
}

impl EventCorpus {
    pub fn new(event_id: impl Into<String>, role: Role) -> Self {
        EventCorpus {
            event_id: event_id.into(),
            entities: Vec::new(),
            storylines: Vec::new(),
            role,
        }
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.entities.iter().position(|e| e.name == name)
    }

    pub fn names(&self, sl: &Storyline) -> Vec<String> {
        sl.nodes
            .iter()
            .map(|&i| self.entities[i].name.clone())
            .collect()
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.entities.first().map(|e| e.text_vec.len())
    }

    pub fn name_set(&self) -> BTreeSet<&str> {
        self.entities.iter().map(|e| e.name.as_str()).collect()
    }

    /// All stride-1 windows of length `window` over every storyline.
    pub fn windows(&self, window: usize) -> Vec<Storyline> {
        self.storylines
            .iter()
            .flat_map(|s| slice_windows(s, window))
            .collect()
    }
}

/// True when the two corpora share no entity name.
pub fn vocabularies_disjoint(a: &EventCorpus, b: &EventCorpus) -> bool {
    a.name_set().is_disjoint(&b.name_set())
}

/// A storyline as three aligned `T × k` matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalSequence {
    pub txt: Tensor,
    pub img: Tensor,
    pub mm: Tensor,
}

impl ModalSequence {
    pub fn channel(&self, modality: Modality) -> &Tensor {
        match modality {
            Modality::Txt => &self.txt,
            Modality::Img => &self.img,
            Modality::Mm => &self.mm,
        }
    }

    pub fn len(&self) -> usize {
        self.txt.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.txt.is_empty()
    }
}

/// Subtracts row 0 from every row.
pub fn normalize_rows(m: &Tensor) -> Tensor {
    let mut out = m.clone();
    let first = m.row(0).to_vec();
    for r in 0..m.rows() {
        for (v, f) in out.row_mut(r).iter_mut().zip(&first) {
            *v -= f;
        }
    }
    out
}

/// Re-expresses each channel relative to its own first row.
pub fn normalize_sequence(s: &ModalSequence) -> ModalSequence {
    ModalSequence {
        txt: normalize_rows(&s.txt),
        img: normalize_rows(&s.img),
        mm: normalize_rows(&s.mm),
    }
}

/// Contiguous stride-1 windows of length `window`. Empty when the storyline
/// is shorter than the window.
pub fn slice_windows(s: &Storyline, window: usize) -> Vec<Storyline> {
    assert!(window >= 2, "window length must be at least 2");
    if s.nodes.len() < window {
        return Vec::new();
    }
    s.nodes
        .windows(window)
        .map(|w| Storyline {
            event_id: s.event_id.clone(),
            nodes: w.to_vec(),
        })
        .collect()
}

/// Stacks per-node vectors into the three channel matrices, with
/// `mm = img - txt` computed row by row.
pub fn to_modal_sequence(
    entities: &[EntityNode],
    s: &Storyline,
    normalize: bool,
) -> Result<ModalSequence> {
    let mut txt = Vec::new();
    let mut img = Vec::new();
    let mut mm = Vec::new();
    for &i in &s.nodes {
        let e = entities
            .get(i)
            .ok_or_else(|| Error::Schema(format!("storyline node index {i} out of range")))?;
        let iv = e
            .image_vec
            .as_ref()
            .ok_or_else(|| Error::UnprojectedEntity(e.name.clone()))?;
        if iv.len() != e.text_vec.len() {
            return Err(Error::dimension(
                "to_modal_sequence",
                &[e.text_vec.len()],
                &[iv.len()],
            ));
        }
        txt.push(e.text_vec.clone());
        img.push(iv.clone());
        mm.push(
            iv.iter()
                .zip(&e.text_vec)
                .map(|(a, b)| a - b)
                .collect::<Vec<_>>(),
        );
    }
    let seq = ModalSequence {
        txt: Tensor::from_rows(&txt)?,
        img: Tensor::from_rows(&img)?,
        mm: Tensor::from_rows(&mm)?,
    };
    Ok(if normalize {
        normalize_sequence(&seq)
    } else {
        seq
    })
}

/// Fills `image_vec` for every entity of `corpus` using `project`. Entities
/// without image features get their text vector instead, which makes their
/// `mm` channel zero. Returns how many entities were substituted.
pub fn project_images<F>(corpus: &mut EventCorpus, mut project: F) -> Result<usize>
where
    F: FnMut(&[f64]) -> Result<Vec<f64>>,
{
    let mut substituted = 0;
    for e in &mut corpus.entities {
        match &e.image_feat {
            Some(f) if !f.is_empty() => {
                let v = project(f)?;
                if v.len() != e.text_vec.len() {
                    return Err(Error::dimension(
                        "project_images",
                        &[e.text_vec.len()],
                        &[v.len()],
                    ));
                }
                e.image_vec = Some(v);
            }
            _ => {
                e.image_vec = Some(e.text_vec.clone());
                substituted += 1;
            }
        }
    }
    Ok(substituted)
}

/// Incrementally assembles corpora from dataset records, enforcing reference
/// and dimension rules. Line numbers are carried into errors.
#[derive(Debug, Default)]
pub struct CorpusBuilder {
    events: BTreeMap<String, EventCorpus>,
    order: Vec<String>,
    text_dim: Option<usize>,
    feat_dim: Option<usize>,
}

impl CorpusBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn event_mut(&mut self, event: &str) -> &mut EventCorpus {
        if !self.events.contains_key(event) {
            self.order.push(event.to_string());
            self.events
                .insert(event.to_string(), EventCorpus::new(event, Role::Train));
        }
        self.events.get_mut(event).unwrap()
    }

    pub fn add_entity(
        &mut self,
        line: usize,
        event: &str,
        name: &str,
        text_vec: Vec<f64>,
        image_feat: Option<Vec<f64>>,
    ) -> Result<()> {
        if name.is_empty() {
            return Err(Error::Schema(format!("line {line}: empty entity name")));
        }
        if text_vec
            .iter()
            .chain(image_feat.iter().flatten())
            .any(|v| !v.is_finite())
        {
            return Err(Error::Schema(format!(
                "line {line}: non-finite vector entry"
            )));
        }
        let k = *self.text_dim.get_or_insert(text_vec.len());
        if k == 0 || text_vec.len() != k {
            return Err(Error::Schema(format!(
                "line {line}: text_vec has dimension {}, expected {k}",
                text_vec.len()
            )));
        }
        let image_feat = image_feat.filter(|f| !f.is_empty());
        if let Some(f) = &image_feat {
            let d = *self.feat_dim.get_or_insert(f.len());
            if f.len() != d {
                return Err(Error::Schema(format!(
                    "line {line}: image_feat has dimension {}, expected {d}",
                    f.len()
                )));
            }
        }
        let ev = self.event_mut(event);
        if ev.index_of(name).is_some() {
            return Err(Error::Schema(format!(
                "line {line}: entity {name:?} declared twice in event {event:?}"
            )));
        }
        ev.entities
            .push(EntityNode::new(name, text_vec, image_feat));
        Ok(())
    }

    pub fn add_storyline(&mut self, line: usize, event: &str, names: &[String]) -> Result<()> {
        let ev = self
            .events
            .get(event)
            .ok_or_else(|| Error::DanglingReference {
                line,
                name: names.first().cloned().unwrap_or_default(),
            })?;
        let mut nodes = Vec::with_capacity(names.len());
        for n in names {
            let idx = ev.index_of(n).ok_or_else(|| Error::DanglingReference {
                line,
                name: n.clone(),
            })?;
            nodes.push(idx);
        }
        if nodes.len() < 2 {
            return Err(Error::Schema(format!(
                "line {line}: storyline needs at least 2 nodes, got {}",
                nodes.len()
            )));
        }
        let sl = Storyline::new(event, nodes)
            .map_err(|_| Error::Schema(format!("line {line}: storyline repeats an entity")))?;
        self.event_mut(event).storylines.push(sl);
        Ok(())
    }

    pub fn text_dim(&self) -> Option<usize> {
        self.text_dim
    }

    pub fn feat_dim(&self) -> Option<usize> {
        self.feat_dim
    }

    /// Events in first-seen order.
    pub fn finish(mut self) -> Vec<EventCorpus> {
        self.order
            .iter()
            .map(|e| self.events.remove(e).unwrap())
            .collect()
    }
}

/// Parameters of the planted-successor synthetic corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub n_entities: usize,
    /// Text-vector dimension.
    pub k: usize,
    /// Raw image-feature dimension.
    pub d: usize,
    /// Storyline length.
    pub length: usize,
    /// Entities per planted chain; clamped to `[length, n_entities]`.
    pub chain_len: usize,
    pub n_storylines: usize,
    pub seed: u64,
    /// Std-dev of the perturbation added after the successor map.
    pub noise: f64,
    /// Std-dev of the perturbation on image features.
    pub image_noise: f64,
}

impl SynthSpec {
    pub fn new(
        n_entities: usize,
        k: usize,
        d: usize,
        length: usize,
        n_storylines: usize,
        seed: u64,
    ) -> Self {
        SynthSpec {
            n_entities,
            k,
            d,
            length,
            chain_len: n_entities,
            n_storylines,
            seed,
            noise: 0.05,
            image_noise: 0.05,
        }
    }
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec::new(20, 6, 8, 4, 200, 7)
    }
}

/// Ground-truth successor functions of a synthetic corpus pair.
#[derive(Clone, Debug, PartialEq)]
pub struct PlantedPolicy {
    pub train_successor: Vec<Option<usize>>,
    pub test_successor: Vec<Option<usize>>,
}

impl PlantedPolicy {
    pub fn successors(&self, role: Role) -> &[Option<usize>] {
        match role {
            Role::Train => &self.train_successor,
            Role::Test => &self.test_successor,
        }
    }

    pub fn successor(&self, role: Role, entity: usize) -> Option<usize> {
        self.successors(role).get(entity).copied().flatten()
    }

    /// Follows the successor chain for `len` nodes, or `None` if it ends early.
    pub fn chain(&self, role: Role, start: usize, len: usize) -> Option<Vec<usize>> {
        let mut out = vec![start];
        while out.len() < len {
            out.push(self.successor(role, *out.last().unwrap())?);
        }
        Some(out)
    }

    /// Entities with at least `len - 1` successors ahead of them.
    pub fn valid_starts(&self, role: Role, len: usize) -> Vec<usize> {
        (0..self.successors(role).len())
            .filter(|&s| self.chain(role, s, len).is_some())
            .collect()
    }
}

fn unit(v: &mut [f64]) {
    let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Random orthogonal matrix by Gram-Schmidt on Gaussian rows.
fn random_orthogonal(r: &mut rng::Rng, k: usize) -> Vec<f64> {
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(k);
    while rows.len() < k {
        let mut v: Vec<f64> = (0..k).map(|_| rng::normal(r)).collect();
        for q in &rows {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let n = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
        if n > 1e-6 {
            v.iter_mut().for_each(|x| *x /= n);
            rows.push(v);
        }
    }
    rows.concat()
}

struct Structure {
    succ_map: Vec<f64>,
    image_map: Vec<f64>,
}

fn synth_event(
    spec: &SynthSpec,
    structure: &Structure,
    role: Role,
    r: &mut rng::Rng,
) -> (EventCorpus, Vec<Option<usize>>) {
    let (n, k, d, len) = (spec.n_entities, spec.k, spec.d, spec.length);
    let chain_len = spec.chain_len.clamp(len.min(n), n);
    let n_chains = (n / chain_len).max(1);
    let (base, extra) = (n / n_chains, n % n_chains);

    // chain positions -> shuffled entity slots
    let mut slots: Vec<usize> = (0..n).collect();
    slots.shuffle(r);
    let mut vectors = vec![Vec::new(); n];
    let mut successor = vec![None; n];
    let mut next_slot = 0;
    for c in 0..n_chains {
        let clen = base + usize::from(c < extra);
        let mut prev: Option<usize> = None;
        for _ in 0..clen {
            let slot = slots[next_slot];
            next_slot += 1;
            let mut v: Vec<f64> = match prev {
                None => (0..k).map(|_| rng::normal(r)).collect(),
                Some(p) => {
                    let mut v = matvec(&structure.succ_map, k, k, &vectors[p]);
                    v.iter_mut().for_each(|x| *x += spec.noise * rng::normal(r));
                    v
                }
            };
            unit(&mut v);
            vectors[slot] = v;
            if let Some(p) = prev {
                successor[p] = Some(slot);
            }
            prev = Some(slot);
        }
    }

    let (prefix, event_id) = match role {
        Role::Train => ("e", "synth-train"),
        Role::Test => ("u", "synth-test"),
    };
    let mut corpus = EventCorpus::new(event_id, role);
    for (i, v) in vectors.into_iter().enumerate() {
        let mut feat = matvec(&structure.image_map, d, k, &v);
        feat.iter_mut()
            .for_each(|x| *x += spec.image_noise * rng::normal(r));
        corpus
            .entities
            .push(EntityNode::new(format!("{prefix}{i:03}"), v, Some(feat)));
    }

    let planted = PlantedPolicy {
        train_successor: successor.clone(),
        test_successor: Vec::new(),
    };
    let starts = planted.valid_starts(Role::Train, len);
    for _ in 0..spec.n_storylines {
        let s = starts[r.random_range(0..starts.len())];
        let nodes = planted.chain(Role::Train, s, len).unwrap();
        corpus.storylines.push(Storyline {
            event_id: event_id.to_string(),
            nodes,
        });
    }
    (corpus, successor)
}

/// Builds a train and a test event with disjoint vocabularies that share one
/// planted structure: each entity's successor vector is a fixed orthogonal map
/// of its predecessor plus small noise, and image features are a fixed linear
/// map of the text vector plus noise. Storylines walk successor chains.
pub fn synth_corpus(spec: &SynthSpec) -> Result<(EventCorpus, EventCorpus, PlantedPolicy)> {
    if spec.length < 2 {
        return Err(Error::Infeasible(format!(
            "storyline length {} < 2",
            spec.length
        )));
    }
    if spec.n_entities < spec.length {
        return Err(Error::Infeasible(format!(
            "{} entities cannot fill storylines of length {}",
            spec.n_entities, spec.length
        )));
    }
    if spec.k == 0 || spec.d == 0 {
        return Err(Error::Infeasible(
            "vector dimensions must be positive".to_string(),
        ));
    }
    let mut r = rng::stream(spec.seed, 0);
    let succ_map = random_orthogonal(&mut r, spec.k);
    let scale = 1.0 / libm::sqrt(spec.k as f64);
    let image_map: Vec<f64> = (0..spec.d * spec.k)
        .map(|_| scale * rng::normal(&mut r))
        .collect();
    let structure = Structure {
        succ_map,
        image_map,
    };
    let (train, train_succ) = synth_event(
        spec,
        &structure,
        Role::Train,
        &mut rng::stream(spec.seed, 1),
    );
    let (test, test_succ) =
        synth_event(spec, &structure, Role::Test, &mut rng::stream(spec.seed, 2));
    Ok((
        train,
        test,
        PlantedPolicy {
            train_successor: train_succ,
            test_successor: test_succ,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(name: &str, t: &[f64], i: &[f64]) -> EntityNode {
        let mut e = EntityNode::new(name, t.to_vec(), None);
        e.image_vec = Some(i.to_vec());
        e
    }

    fn sl(nodes: &[usize]) -> Storyline {
        Storyline::new("ev", nodes.to_vec()).unwrap()
    }

    #[test]
    fn windows_follow_definition() {
        assert_eq!(
            slice_windows(&sl(&[0, 1, 2, 3]), 4),
            vec![sl(&[0, 1, 2, 3])]
        );
        assert_eq!(
            slice_windows(&sl(&[0, 1, 2, 3, 4]), 3),
            vec![sl(&[0, 1, 2]), sl(&[1, 2, 3]), sl(&[2, 3, 4])]
        );
        assert!(slice_windows(&sl(&[0, 1]), 4).is_empty());
    }

    #[test]
    fn normalize_constant_and_pair() {
        let v = [1.0, -2.0];
        let ents = [node("a", &v, &v), node("b", &v, &v), node("c", &v, &v)];
        // duplicate vectors under distinct names
        let s = to_modal_sequence(&ents, &sl(&[0, 1, 2]), true).unwrap();
        assert!(s.txt.data().iter().all(|&x| x == 0.0));

        let ents = [
            node("a", &[1.0, 2.0], &[0.0, 0.0]),
            node("b", &[4.0, 3.0], &[1.0, 1.0]),
        ];
        let s = to_modal_sequence(&ents, &sl(&[0, 1]), true).unwrap();
        assert_eq!(s.txt.data(), &[0.0, 0.0, 3.0, 1.0]);
        let twice = normalize_sequence(&s);
        assert_eq!(twice, s);
    }

    #[test]
    fn mm_is_zero_when_image_equals_text() {
        let ents = [
            node("a", &[1.0, 2.0], &[1.0, 2.0]),
            node("b", &[0.5, 3.0], &[0.5, 3.0]),
        ];
        let s = to_modal_sequence(&ents, &sl(&[0, 1]), false).unwrap();
        assert!(s.mm.data().iter().all(|&x| x == 0.0));
        assert_eq!(s.txt.row(1), &[0.5, 3.0]);
        assert_eq!(s.img.row(0), &[1.0, 2.0]);
    }

    #[test]
    fn unprojected_entity_is_an_error() {
        let ents = [
            EntityNode::new("a", vec![1.0], None),
            node("b", &[1.0], &[1.0]),
        ];
        assert_eq!(
            to_modal_sequence(&ents, &sl(&[0, 1]), false),
            Err(Error::UnprojectedEntity("a".into()))
        );
    }

    #[test]
    fn missing_images_fall_back_to_text() {
        let mut c = EventCorpus::new("ev", Role::Train);
        c.entities.push(EntityNode::new("a", vec![1.0, 2.0], None));
        c.entities
            .push(EntityNode::new("b", vec![3.0, 4.0], Some(vec![1.0])));
        let n = project_images(&mut c, |f| Ok(vec![f[0], f[0]])).unwrap();
        assert_eq!(n, 1);
        assert_eq!(c.entities[0].image_vec.as_deref(), Some(&[1.0, 2.0][..]));
        assert_eq!(c.entities[1].image_vec.as_deref(), Some(&[1.0, 1.0][..]));
    }

    #[test]
    fn builder_rejects_dangling_and_bad_dims() {
        let mut b = CorpusBuilder::new();
        b.add_entity(1, "ev", "a", vec![1.0, 0.0], Some(vec![1.0]))
            .unwrap();
        b.add_entity(2, "ev", "b", vec![0.0, 1.0], Some(vec![2.0]))
            .unwrap();
        assert!(matches!(
            b.add_entity(3, "ev", "c", vec![0.0], None),
            Err(Error::Schema(_))
        ));
        assert!(matches!(
            b.add_entity(4, "ev", "c", vec![0.0, 2.0], Some(vec![1.0, 2.0])),
            Err(Error::Schema(_))
        ));
        assert_eq!(
            b.add_storyline(5, "ev", &["a".into(), "zzz".into()]),
            Err(Error::DanglingReference {
                line: 5,
                name: "zzz".into()
            })
        );
        b.add_storyline(6, "ev", &["b".into(), "a".into()]).unwrap();
        let evs = b.finish();
        assert_eq!(evs.len(), 1);
        assert_eq!(evs[0].storylines[0].nodes, vec![1, 0]);
    }

    #[test]
    fn synth_is_deterministic_and_well_formed() {
        let spec = SynthSpec::default();
        let (a_train, a_test, a_pol) = synth_corpus(&spec).unwrap();
        let (b_train, b_test, b_pol) = synth_corpus(&spec).unwrap();
        assert_eq!(a_train, b_train);
        assert_eq!(a_test, b_test);
        assert_eq!(a_pol, b_pol);
        assert!(vocabularies_disjoint(&a_train, &a_test));
        for (c, role) in [(&a_train, Role::Train), (&a_test, Role::Test)] {
            assert_eq!(c.storylines.len(), spec.n_storylines);
            for s in &c.storylines {
                assert!(!s.has_repeats());
                assert_eq!(s.len(), spec.length);
                assert_eq!(
                    a_pol.chain(role, s.nodes[0], spec.length).as_ref(),
                    Some(&s.nodes)
                );
            }
        }
    }

    #[test]
    fn synth_infeasible_when_too_few_entities() {
        let spec = SynthSpec::new(3, 4, 4, 4, 10, 1);
        assert!(matches!(synth_corpus(&spec), Err(Error::Infeasible(_))));
    }
}
