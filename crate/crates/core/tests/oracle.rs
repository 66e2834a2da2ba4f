//! The tape-based model against the naive reference forward pass.

mod common;

use common::{flat, max_diff};
use hce_core::config::{SentenceMode, SentenceWeights};
use hce_core::dump::dump_congruity;
use hce_core::graph::Connectivity;
use hce_core::{gen_synthetic, Ablation, Config, Model, SynthSpec};

const TOL: f64 = 1e-10;

fn configs() -> Vec<Config> {
    let base = Config {
        d: 8,
        heads: 2,
        mca_layers_text_image: 2,
        mca_layers_text_knowledge: 2,
        max_knowledge_len: 6,
        ..Config::default()
    };
    let mut out = Vec::new();
    for ablation in [
        Ablation::Full,
        Ablation::NoAtomic,
        Ablation::NoMcaNoAtomic,
        Ablation::NoComposition,
    ] {
        for knowledge_enabled in [false, true] {
            out.push(Config {
                ablation,
                knowledge_enabled,
                ..base.clone()
            });
        }
    }
    out.push(Config {
        sentence_mode: SentenceMode::Uniform,
        knowledge_enabled: true,
        ..base.clone()
    });
    out.push(Config {
        sentence_weights: SentenceWeights::Updated,
        gat_activation: true,
        grid_connectivity: Connectivity::Eight,
        knowledge_enabled: true,
        ..base.clone()
    });
    out.push(Config {
        heads: 4,
        gat_layers: 3,
        leaky_relu_slope: 0.05,
        ..base
    });
    out
}

fn data() -> hce_core::Dataset {
    gen_synthetic(&SynthSpec {
        count: 6,
        n_range: (1, 5),
        p: 3,
        m_range: Some((1, 6)),
        d_raw: 5,
        seed: 21,
        ..SynthSpec::default()
    })
    .unwrap()
}

#[test]
fn bundle_matches_reference_for_every_configuration() {
    let data = data();
    for (ci, config) in configs().into_iter().enumerate() {
        let mut model = Model::new(config.clone(), data.header).unwrap();
        model.store_mut().randomize(ci as u64 + 1, 0.6);
        for s in &data.samples {
            let b = model.predict(s).unwrap();
            let r = common::forward(&model, s);
            let ctx = format!(
                "config {ci} ({:?}, knowledge {}), sample {}",
                config.ablation, config.knowledge_enabled, s.id
            );
            assert!(max_diff(&b.probs, &r.probs) < TOL, "{ctx}: probs");
            assert!(max_diff(&b.p_v, &r.p_v) < TOL, "{ctx}: p_v");
            assert_eq!(b.s_a.is_some(), r.text.s_a.is_some(), "{ctx}");
            assert_eq!(b.s_p.is_some(), r.text.s_p.is_some(), "{ctx}");
            if let (Some(a), Some(o)) = (&b.s_a, &r.text.s_a) {
                assert!(max_diff(a, o) < TOL, "{ctx}: s_a");
            }
            if let (Some(a), Some(o)) = (&b.s_p, &r.text.s_p) {
                assert!(max_diff(a, o) < TOL, "{ctx}: s_p");
            }
            match &r.knowledge {
                Some(k) => {
                    assert!(
                        max_diff(b.p_k.as_ref().unwrap(), r.p_k.as_ref().unwrap()) < TOL,
                        "{ctx}: p_k"
                    );
                    assert_eq!(b.s_a_k.is_some(), k.s_a.is_some(), "{ctx}");
                    assert_eq!(b.s_p_k.is_some(), k.s_p.is_some(), "{ctx}");
                    if let (Some(a), Some(o)) = (&b.s_a_k, &k.s_a) {
                        assert!(max_diff(a, o) < TOL, "{ctx}: s_a_k");
                    }
                    if let (Some(a), Some(o)) = (&b.s_p_k, &k.s_p) {
                        assert!(max_diff(a, o) < TOL, "{ctx}: s_p_k");
                    }
                }
                None => assert!(b.p_k.is_none() && b.s_a_k.is_none() && b.s_p_k.is_none()),
            }
        }
    }
}

#[test]
fn traced_intermediates_match_reference() {
    let data = data();
    let config = Config {
        knowledge_enabled: true,
        ..configs()[1].clone()
    };
    let mut model = Model::new(config, data.header).unwrap();
    model.store_mut().randomize(5, 0.6);
    for s in &data.samples {
        let mut tape = hce_core::Tape::new();
        let trace = model.forward(&mut tape, s, hce_core::Mode::Eval).unwrap();
        let r = common::forward(&model, s);
        let ti = &trace.text_image;
        let mca: Vec<f64> = ti
            .align
            .mca_attention
            .iter()
            .flat_map(|&v| tape.value(v).data().to_vec())
            .collect();
        assert!(max_diff(&mca, &flat(&r.text.mca_attention)) < TOL);
        let compose = ti.compose.as_ref().unwrap();
        let gat: Vec<f64> = compose
            .gat_attention
            .iter()
            .flat_map(|&v| tape.value(v).data().to_vec())
            .collect();
        let gat_ref: Vec<f64> = r.text.gat_attention.iter().flat_map(flat).collect();
        assert!(max_diff(&gat, &gat_ref) < TOL);
        let sent = tape.value(compose.sentence.weights.unwrap()).data();
        assert!(max_diff(sent, r.text.sentence_weights.as_ref().unwrap()) < TOL);
        assert!(max_diff(tape.value(ti.align.updated).data(), &flat(&r.text.updated)) < TOL);
        assert!(max_diff(tape.value(trace.classifier_input).data(), &r.z) < TOL);
        let tk = trace.text_knowledge.as_ref().unwrap();
        let rk = r.knowledge.as_ref().unwrap();
        assert!(max_diff(tape.value(tk.align.updated).data(), &flat(&rk.updated)) < TOL);
    }
}

#[test]
fn dump_sections_match_reference() {
    let data = data();
    let mut model = Model::new(
        Config {
            knowledge_enabled: true,
            ..configs()[0].clone()
        },
        data.header,
    )
    .unwrap();
    model.store_mut().randomize(9, 0.6);
    let s = &data.samples[2];
    let dump = dump_congruity(&model, s).unwrap();
    let r = common::forward(&model, s);
    let k = r.knowledge.as_ref().unwrap();
    let check = |name: &str, expected: &[f64]| {
        let got: Vec<f64> = dump.get(name).unwrap_or_else(|| panic!("no section {name}")).concat();
        assert!(max_diff(&got, expected) < TOL, "section {name}");
    };
    check("q_a", &flat(r.text.q_a.as_ref().unwrap()));
    check("token_weights", r.text.token_weights.as_ref().unwrap());
    check("s_a", r.text.s_a.as_ref().unwrap());
    check("q_p", &flat(r.text.q_p.as_ref().unwrap()));
    check("composition_weights", r.text.composition_weights.as_ref().unwrap());
    check("s_p", r.text.s_p.as_ref().unwrap());
    check("p_v", &r.p_v);
    check("q_a_k", &flat(k.q_a.as_ref().unwrap()));
    check("s_a_k", k.s_a.as_ref().unwrap());
    check("q_p_k", &flat(k.q_p.as_ref().unwrap()));
    check("s_p_k", k.s_p.as_ref().unwrap());
    check("p_k", r.p_k.as_ref().unwrap());
    check("probs", &r.probs);
    let names: Vec<&str> = dump.sections.iter().map(|s| s.name.as_str()).collect();
    assert_eq!(
        names,
        [
            "q_a",
            "token_weights",
            "s_a",
            "q_p",
            "composition_weights",
            "s_p",
            "p_v",
            "q_a_k",
            "token_weights_k",
            "s_a_k",
            "q_p_k",
            "composition_weights_k",
            "s_p_k",
            "p_k",
            "probs"
        ]
    );
}

#[test]
fn f32_model_tracks_f64_model() {
    let data = data();
    let mut model = Model::new(configs()[1].clone(), data.header).unwrap();
    model.store_mut().randomize(2, 0.5);
    let single: hce_core::model::Model<f32> = model.cast();
    for s in &data.samples {
        let a = model.predict(s).unwrap();
        let b = single.predict(s).unwrap();
        assert!((a.probs[1] - b.probs[1] as f64).abs() < 1e-4);
    }
}
