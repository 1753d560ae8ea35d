use proptest::prelude::*;
use storyline::checkpoint::{
    mm_checkpoint, mm_from_checkpoint, read_checkpoint, write_checkpoint, Checkpoint, Model,
};
use storyline::config::{parse_config, render_config};
use storyline::dataset::{read_dataset, write_dataset};
use storyline::storylines::{read_generated, read_named, write_generated, GeneratedRecord};
use storyline::Error;
use storyline_core::disc::DiscParams;
use storyline_core::embed_mm::{MMParams, CONTEXT_WINDOW};
use storyline_core::gan::TrainConfig;
use storyline_core::numerics::{ParamStore, Tensor};
use storyline_core::policy::GeneratorParams;
use storyline_core::seqdata::{synth_corpus, to_modal_sequence, Role, SynthSpec};
use storyline_core::Modality;

const FIXTURE: &str = include_str!("fixtures/two_events.jsonl");

#[test]
fn fixture_loads_as_written() {
    let c = read_dataset(FIXTURE.as_bytes()).unwrap();
    assert_eq!(c.len(), 2);
    assert_eq!((c[0].entities.len(), c[0].storylines.len()), (5, 3));
    assert_eq!((c[1].entities.len(), c[1].storylines.len()), (4, 3));
    assert_eq!((c[0].role, c[1].role), (Role::Train, Role::Test));
    let attack = &c[0].storylines[0];
    assert_eq!(attack.len(), 4);
    assert_eq!(
        c[0].names(attack),
        [
            "extremist_grievance",
            "cell_leader",
            "ferry_passengers",
            "security_overhaul"
        ]
    );
    assert!(storyline_core::seqdata::vocabularies_disjoint(&c[0], &c[1]));
}

#[test]
fn fixture_vectors_round_trip_through_channels() {
    let mut c = read_dataset(FIXTURE.as_bytes()).unwrap();
    for e in &mut c[0].entities {
        e.image_vec = Some(e.text_vec.iter().map(|v| v * 2.0).collect());
    }
    let s = to_modal_sequence(&c[0].entities, &c[0].storylines[0], false).unwrap();
    for (t, &n) in c[0].storylines[0].nodes.iter().enumerate() {
        assert_eq!(s.txt.row(t), c[0].entities[n].text_vec.as_slice());
        assert_eq!(s.img.row(t), c[0].entities[n].image_vec.as_deref().unwrap());
    }
}

#[test]
fn dangling_reference_names_line_and_entity() {
    let text = format!(
        "{FIXTURE}{}\n",
        r#"{"kind":"storyline","event":"wage_march","nodes":["union_call","ghost"]}"#
    );
    match read_dataset(text.as_bytes()).unwrap_err() {
        Error::Core(storyline_core::Error::DanglingReference { line, name }) => {
            assert_eq!((line, name.as_str()), (16, "ghost"));
        }
        e => panic!("unexpected {e}"),
    }
}

#[test]
fn schema_errors() {
    let bad = [
        // text dimension changes
        r#"{"kind":"entity","event":"a","name":"x","text_vec":[1,2]}
{"kind":"entity","event":"a","name":"y","text_vec":[1]}"#,
        // image feature dimension changes
        r#"{"kind":"entity","event":"a","name":"x","text_vec":[1],"image_feat":[1]}
{"kind":"entity","event":"a","name":"y","text_vec":[1],"image_feat":[1,2]}"#,
        // duplicate entity
        r#"{"kind":"entity","event":"a","name":"x","text_vec":[1]}
{"kind":"entity","event":"a","name":"x","text_vec":[2]}"#,
        // projected vector of the wrong size
        r#"{"kind":"entity","event":"a","name":"x","text_vec":[1],"image_vec":[1,2]}"#,
        // mixed roles in one event
        r#"{"kind":"entity","event":"a","name":"x","text_vec":[1]}
{"kind":"entity","event":"a","name":"y","text_vec":[1],"role":"test"}"#,
        // storyline before its entities
        r#"{"kind":"storyline","event":"a","nodes":["x","y"]}"#,
        // unknown record kind
        r#"{"kind":"document","event":"a"}"#,
    ];
    for text in bad {
        assert!(read_dataset(text.as_bytes()).is_err(), "{text}");
    }
}

#[test]
fn dataset_round_trip_is_exact() {
    let (train, mut test, _) = synth_corpus(&SynthSpec::default()).unwrap();
    test.role = Role::Test;
    let mut corpora = vec![train, test];
    for e in &mut corpora[0].entities {
        e.image_vec = Some(e.text_vec.iter().map(|v| v / 3.0).collect());
    }
    let mut buf = Vec::new();
    write_dataset(&mut buf, &corpora).unwrap();
    let back = read_dataset(buf.as_slice()).unwrap();
    assert_eq!(back, corpora);
    let mut again = Vec::new();
    write_dataset(&mut again, &back).unwrap();
    assert_eq!(buf, again);
}

#[test]
fn generated_records_round_trip() {
    let recs = vec![
        GeneratedRecord {
            start: "a".into(),
            nodes: vec!["a".into(), "b".into()],
            seed: u64::MAX,
        },
        GeneratedRecord {
            start: "c".into(),
            nodes: vec!["c".into()],
            seed: 0,
        },
    ];
    let mut buf = Vec::new();
    write_generated(&mut buf, &recs).unwrap();
    assert_eq!(
        String::from_utf8(buf.clone())
            .unwrap()
            .lines()
            .next()
            .unwrap(),
        r#"{"start":"a","nodes":["a","b"],"seed":18446744073709551615}"#
    );
    assert_eq!(read_generated(buf.as_slice()).unwrap(), recs);
    assert!(read_generated(r#"{"start":"b","nodes":["a"],"seed":1}"#.as_bytes()).is_err());
}

#[test]
fn named_storylines_from_both_file_kinds() {
    let from_dataset = read_named(FIXTURE.as_bytes()).unwrap();
    assert_eq!(from_dataset.len(), 6);
    assert_eq!(from_dataset[3].event.as_deref(), Some("wage_march"));
    let gen = read_named(r#"{"start":"x","nodes":["x","y"],"seed":4}"#.as_bytes()).unwrap();
    assert_eq!(gen[0].event, None);
    assert_eq!(gen[0].names, ["x", "y"]);
}

#[test]
fn config_render_parse_round_trip() {
    let cfg = TrainConfig {
        lambda: [1.0, 0.0, 0.0],
        alpha: 0.125,
        rounds: 7,
        seed: 99,
        temperature: 0.0,
        ..TrainConfig::default()
    };
    assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
    assert_eq!(
        parse_config(&render_config(&TrainConfig::default())).unwrap(),
        TrainConfig::default()
    );
}

fn model(seed: u64) -> Model {
    Model {
        gen: GeneratorParams::init(5, 7, seed).unwrap(),
        disc: Some(DiscParams::init(5, 3, seed + 1).unwrap()),
    }
}

fn round_trip(ck: &Checkpoint) -> Checkpoint {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, ck).unwrap();
    read_checkpoint(buf.as_slice()).unwrap()
}

#[test]
fn model_checkpoint_round_trip() {
    let m = model(4);
    assert_eq!(
        Model::from_checkpoint(&round_trip(&m.to_checkpoint())).unwrap(),
        m
    );
    let bare = Model {
        gen: m.gen.clone(),
        disc: None,
    };
    assert_eq!(
        Model::from_checkpoint(&round_trip(&bare.to_checkpoint())).unwrap(),
        bare
    );
}

#[test]
fn mm_checkpoint_round_trip() {
    let embed = Tensor::matrix(4, 3, (0..12).map(|i| i as f64 / 7.0).collect()).unwrap();
    let p = MMParams::init(5, 2, CONTEXT_WINDOW, embed, 3).unwrap();
    let back = mm_from_checkpoint(&round_trip(&mm_checkpoint(&p))).unwrap();
    assert_eq!(back, p);
    assert!(Model::from_checkpoint(&mm_checkpoint(&p)).is_err());
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let mut buf = Vec::new();
    write_checkpoint(&mut buf, &model(1).to_checkpoint()).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let cases = [
        text.replacen("checkpoint 1", "checkpoint 2", 1),
        text.replacen("storyline-checkpoint", "other", 1),
        text.lines().take(5).collect::<Vec<_>>().join("\n"),
        text.replacen("tensor w_x 2", "tensor w_x 3", 1),
        text.replacen("store gen.img", "store gen.image", 1),
    ];
    for (i, c) in cases.iter().enumerate() {
        let parsed = read_checkpoint(c.as_bytes());
        assert!(
            parsed.is_err() || Model::from_checkpoint(&parsed.unwrap()).is_err(),
            "case {i}"
        );
    }
}

proptest! {
    #[test]
    fn tensor_values_survive_bit_exactly(bits in proptest::collection::vec(any::<u64>(), 1..40)) {
        let data: Vec<f64> = bits
            .iter()
            .map(|&b| f64::from_bits(b))
            .map(|v| if v.is_finite() { v } else { -0.0 })
            .collect();
        let mut store = ParamStore::new();
        store.add("t", Tensor::vector(data.clone()).unwrap());
        let ck = Checkpoint { kind: "x".into(), stores: vec![("s".into(), store)] };
        let back = round_trip(&ck);
        let got: Vec<u64> = back.store("s").unwrap().value(0).data().iter().map(|v| v.to_bits()).collect();
        let want: Vec<u64> = data.iter().map(|v| v.to_bits()).collect();
        prop_assert_eq!(got, want);
    }
}

#[test]
fn modality_names_match_store_names() {
    let ck = model(2).to_checkpoint();
    let names: Vec<&str> = ck.stores.iter().map(|(n, _)| n.as_str()).collect();
    assert_eq!(
        names,
        ["gen.txt", "gen.img", "gen.mm", "disc.txt", "disc.img", "disc.mm"]
    );
    assert_eq!(Modality::ALL.len(), 3);
}
