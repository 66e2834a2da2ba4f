//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use hce_core::composition::{gat_layer, GatLayerParams};
use hce_core::config::{SentenceMode, SentenceWeights};
use hce_core::data::{load_manifest, write_manifest, Limits};
use hce_core::gradcheck::{gradcheck, GradcheckSpec};
use hce_core::graph::build_text_graph;
use hce_core::params::ParamStore;
use hce_core::{
    evaluate, gen_synthetic, train, Ablation, Checkpoint, Config, Dataset, Mode, Model, SynthSpec, Tape, Tensor,
};
use rand::seq::SliceRandom;
use rand::Rng;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

const ABLATIONS: [Ablation; 4] = [
    Ablation::Full,
    Ablation::NoAtomic,
    Ablation::NoMcaNoAtomic,
    Ablation::NoComposition,
];

fn random_matrix(r: &mut impl Rng, rows: usize, cols: usize) -> Tensor {
    let d = (0..rows * cols).map(|_| r.random_range(-1.5..1.5)).collect();
    Tensor::from_vec(rows, cols, d).unwrap()
}

/// Instance `i` of a rotating family of small random models and samples.
fn random_instance(i: u64) -> (Model, hce_core::Sample) {
    let mut r = hce_core::rng::stream(1000 + i);
    let p = r.random_range(1..=3);
    let data = gen_synthetic(&SynthSpec {
        count: 1,
        n_range: (1, 7),
        p,
        m_range: Some((1, 5)),
        d_raw: r.random_range(2..7),
        seed: i,
        ..SynthSpec::default()
    })
    .unwrap();
    let config = Config {
        d: 8,
        heads: [1, 2, 4][i as usize % 3],
        mca_layers_text_image: r.random_range(1..3),
        mca_layers_text_knowledge: r.random_range(1..3),
        gat_layers: r.random_range(1..3),
        max_knowledge_len: 5,
        ablation: ABLATIONS[i as usize % 4],
        knowledge_enabled: !i.is_multiple_of(5),
        sentence_mode: if i % 7 == 3 {
            SentenceMode::Uniform
        } else {
            SentenceMode::Weighted
        },
        sentence_weights: if i.is_multiple_of(2) {
            SentenceWeights::Input
        } else {
            SentenceWeights::Updated
        },
        gat_activation: i % 3 == 1,
        ..Config::default()
    };
    let mut model = Model::new(config, data.header).unwrap();
    model.store_mut().randomize(i, r.random_range(0.3..1.5));
    (model, data.samples.into_iter().next().unwrap())
}

fn gradient_fidelity() -> Outcome {
    let spec = GradcheckSpec {
        n: 4,
        p: 2,
        m: 3,
        eps: 1e-5,
        ..GradcheckSpec::default()
    };
    let mut parts = Vec::new();
    let start = Instant::now();
    for ablation in [Ablation::Full, Ablation::NoComposition] {
        let config = Config {
            d: 8,
            heads: 2,
            knowledge_enabled: true,
            max_knowledge_len: 3,
            ablation,
            ..Config::default()
        };
        let report = gradcheck(&config, &spec).map_err(|e| e.to_string())?;
        ensure(report.max_rel_error < 1e-6, || {
            format!(
                "{ablation:?}: max relative error {:.3e} at {:?}",
                report.max_rel_error, report.worst
            )
        })?;
        parts.push(format!(
            "{ablation:?} rel {:.2e} over {} entries",
            report.max_rel_error, report.checked
        ));
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(60), || format!("took {elapsed:?}"))?;
    Ok(parts.join(", "))
}

fn normalization() -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for i in 0..100 {
        let (model, sample) = random_instance(i);
        let mut tape = Tape::new();
        let trace = model
            .forward(&mut tape, &sample, Mode::Eval)
            .map_err(|e| e.to_string())?;
        for v in trace.distributions() {
            let t = tape.value(v);
            ensure(t.data().iter().all(|&x| x >= 0.0), || {
                format!("instance {i}: negative weight")
            })?;
            for row in t.to_rows() {
                worst = worst.max((row.iter().sum::<f64>() - 1.0).abs());
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-12, || format!("worst row-sum deviation {worst:.3e}"))?;
    Ok(format!(
        "{checked} distributions over 100 instances, worst deviation {worst:.1e}"
    ))
}

fn gat_properties() -> Outcome {
    let d = 6;
    let mut r = hce_core::rng::stream(77);
    let (mut equivariance, mut uniform): (f64, f64) = (0.0, 0.0);
    for t in 0..100u64 {
        let k = r.random_range(1..10);
        let mut store = ParamStore::<f64>::new();
        let params = GatLayerParams::register(&mut store, "g", d, 0.2, t);
        store.randomize(t, 0.8);
        let run = |x: &Tensor, edges: &[(usize, usize)]| {
            let g = build_text_graph(edges, x.rows()).unwrap();
            let mut tape = Tape::new();
            let xv = tape.constant(x.clone());
            let out = gat_layer(&mut tape, &store, xv, &g, &params).unwrap();
            (tape.value(out.output).clone(), tape.value(out.attention).clone())
        };
        let x = random_matrix(&mut r, k, d);
        let edges: Vec<_> = (0..r.random_range(0..2 * k))
            .map(|_| (r.random_range(0..k), r.random_range(0..k)))
            .collect();
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let mut inv = vec![0; k];
        for (pos, &node) in perm.iter().enumerate() {
            inv[node] = pos;
        }
        let px = Tensor::from_rows(&perm.iter().map(|&i| x.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pe: Vec<_> = edges.iter().map(|&(i, j)| (inv[i], inv[j])).collect();
        let (base, _) = run(&x, &edges);
        let (moved, _) = run(&px, &pe);
        for (pos, &node) in perm.iter().enumerate() {
            for c in 0..d {
                equivariance = equivariance.max((moved.get(pos, c) - base.get(node, c)).abs());
            }
        }

        // node 0 is isolated: it attends only to itself and outputs Θx_0
        let others: Vec<_> = edges.iter().filter(|&&(i, j)| i != 0 && j != 0).copied().collect();
        let (out, att) = run(&x, &others);
        ensure(att.get(0, 0) == 1.0, || {
            format!("trial {t}: isolated α_00 = {}", att.get(0, 0))
        })?;
        let theta_x = Tensor::from_rows(&[x.row(0).to_vec()])
            .unwrap()
            .matmul_t(store.get("g.theta").unwrap())
            .unwrap();
        ensure(
            out.row(0)
                .iter()
                .zip(theta_x.data())
                .all(|(a, b)| (a - b).abs() < 1e-12),
            || format!("trial {t}: isolated node output differs from Θx"),
        )?;

        let same = Tensor::from_rows(&vec![x.row(0).to_vec(); k]).unwrap();
        let all: Vec<_> = (0..k).flat_map(|i| (0..k).map(move |j| (i, j))).collect();
        let (out, att) = run(&same, &all);
        for row in 0..k {
            for c in 0..d {
                uniform = uniform.max((out.get(row, c) - theta_x.data()[c]).abs());
            }
            for j in 0..k {
                uniform = uniform.max((att.get(row, j) - 1.0 / k as f64).abs());
            }
        }
    }
    ensure(equivariance < 1e-9, || {
        format!("permutation deviation {equivariance:.3e}")
    })?;
    ensure(uniform < 1e-10, || format!("complete-graph deviation {uniform:.3e}"))?;
    Ok(format!(
        "100 graphs: equivariance {equivariance:.1e}, isolated α_ii = 1, complete-graph {uniform:.1e}"
    ))
}

fn convexity() -> Outcome {
    let mut scores = 0;
    for i in 0..100 {
        let (model, sample) = random_instance(i);
        let mut tape = Tape::new();
        let trace = model
            .forward(&mut tape, &sample, Mode::Eval)
            .map_err(|e| e.to_string())?;
        let branches = [Some(&trace.text_image), trace.text_knowledge.as_ref()];
        for branch in branches.into_iter().flatten() {
            let pairs = [
                branch.align.atomic.as_ref().map(|a| (a.similarity, a.pooled.score)),
                branch
                    .compose
                    .as_ref()
                    .map(|c| (c.output.similarity, c.output.pooled.score)),
            ];
            for (sim, score) in pairs.into_iter().flatten() {
                let (q, s) = (tape.value(sim), tape.value(score).data());
                for (j, &v) in s.iter().enumerate() {
                    let col = (0..q.rows()).map(|r| q.get(r, j));
                    let lo = col.clone().fold(f64::INFINITY, f64::min);
                    let hi = col.fold(f64::NEG_INFINITY, f64::max);
                    ensure(lo - 1e-12 <= v && v <= hi + 1e-12, || {
                        format!("instance {i}: column {j} score {v} outside [{lo}, {hi}]")
                    })?;
                }
                scores += 1;
            }
        }
    }
    Ok(format!("{scores} score vectors over 100 instances"))
}

fn learning() -> Outcome {
    let spec = |count, seed| SynthSpec {
        count,
        n_range: (4, 10),
        p: 4,
        d_raw: 16,
        m_range: None,
        seed,
        ..SynthSpec::default()
    };
    let (tr, dev, test) = (
        gen_synthetic(&spec(256, 7)),
        gen_synthetic(&spec(64, 8)),
        gen_synthetic(&spec(128, 9)),
    );
    let (tr, dev, test) = (
        tr.map_err(|e| e.to_string())?,
        dev.map_err(|e| e.to_string())?,
        test.map_err(|e| e.to_string())?,
    );
    let config = Config {
        d: 32,
        heads: 4,
        lr: 1e-3,
        max_epochs: 200,
        early_stop_patience: 40,
        ..Config::default()
    };
    let start = Instant::now();
    let out = train::<f64>(&config, &tr, &dev, |_| {}).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    let (best_epoch, best_train) = out
        .logs
        .iter()
        .map(|l| (l.epoch, l.train_accuracy))
        .fold((0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    let held_out = evaluate(&out.checkpoint, &test).map_err(|e| e.to_string())?.accuracy;
    let detail = format!(
        "train {:.1}% (epoch {best_epoch}), held-out {:.1}%, {} epochs, {:.0?}",
        100.0 * best_train,
        100.0 * held_out,
        out.logs.len(),
        elapsed
    );
    ensure(
        best_train >= 0.95 && held_out >= 0.85 && elapsed < Duration::from_secs(300),
        || detail.clone(),
    )?;
    Ok(detail)
}

fn knowledge_benefit() -> Outcome {
    let spec = |count, seed| SynthSpec {
        count,
        image_noise: 4.0,
        m_range: Some((2, 6)),
        seed,
        ..SynthSpec::default()
    };
    let set = |count, seed| gen_synthetic(&spec(count, seed)).map_err(|e| e.to_string());
    let (tr, dev, test) = (set(256, 7)?, set(64, 8)?, set(128, 9)?);
    let mut acc = Vec::new();
    for knowledge_enabled in [false, true] {
        let config = Config {
            d: 32,
            heads: 4,
            lr: 1e-3,
            max_epochs: 100,
            early_stop_patience: 40,
            mca_layers_text_image: 1,
            max_knowledge_len: 6,
            knowledge_enabled,
            ..Config::default()
        };
        let out = train::<f64>(&config, &tr, &dev, |_| {}).map_err(|e| e.to_string())?;
        acc.push(evaluate(&out.checkpoint, &test).map_err(|e| e.to_string())?.accuracy);
    }
    let gain = 100.0 * (acc[1] - acc[0]);
    let detail = format!(
        "held-out {:.1}% without knowledge, {:.1}% with, gain {gain:+.1} points",
        100.0 * acc[0],
        100.0 * acc[1]
    );
    ensure(gain >= 5.0, || detail.clone())?;
    Ok(detail)
}

fn ablation_structure() -> Outcome {
    let p = 4;
    let r = p * p;
    let dims = hce_core::DatasetHeader {
        d_text: 16,
        d_img: 16,
        d_know: 16,
        p,
    };
    let mut report = Vec::new();
    for knowledge_enabled in [false, true] {
        let build = |ablation| {
            Model::new(
                Config {
                    ablation,
                    knowledge_enabled,
                    ..Config::default()
                },
                dims,
            )
            .unwrap()
        };
        let [full, no_atomic, no_mca, no_comp] = ABLATIONS.map(build);
        let m_max = full.config().max_knowledge_len;
        let count = |m: &Model| m.param_count();
        ensure(
            count(&no_mca) < count(&no_atomic) && count(&no_atomic) < count(&full),
            || format!("counts {} / {} / {}", count(&no_mca), count(&no_atomic), count(&full)),
        )?;
        ensure(count(&no_comp) < count(&full), || {
            "no_composition is not smaller than full".into()
        })?;
        let (one, two) = if knowledge_enabled {
            (r + m_max, 2 * (r + m_max))
        } else {
            (r, 2 * r)
        };
        let widths = [
            full.classifier_width(),
            no_atomic.classifier_width(),
            no_mca.classifier_width(),
            no_comp.classifier_width(),
        ];
        ensure(widths == [two, one, one, one], || {
            format!("knowledge {knowledge_enabled}: widths {widths:?}")
        })?;
        report.push(format!(
            "knowledge {}: counts {}<{}<{}, widths {widths:?}",
            knowledge_enabled,
            count(&no_mca),
            count(&no_atomic),
            count(&full)
        ));
    }
    Ok(report.join("; "))
}

fn determinism_and_round_trips() -> Outcome {
    let spec = |count, seed| SynthSpec {
        count,
        n_range: (2, 6),
        p: 2,
        m_range: Some((1, 4)),
        d_raw: 6,
        seed,
        ..SynthSpec::default()
    };
    let tr = gen_synthetic(&spec(32, 1)).map_err(|e| e.to_string())?;
    let dev = gen_synthetic(&spec(16, 2)).map_err(|e| e.to_string())?;
    let config = Config {
        d: 8,
        heads: 2,
        mca_layers_text_image: 2,
        mca_layers_text_knowledge: 1,
        batch_size: 8,
        lr: 3e-3,
        max_epochs: 5,
        max_knowledge_len: 4,
        knowledge_enabled: true,
        ..Config::default()
    };
    let a = train::<f64>(&config, &tr, &dev, |_| {}).map_err(|e| e.to_string())?;
    let b = train::<f64>(&config, &tr, &dev, |_| {}).map_err(|e| e.to_string())?;
    ensure(a.logs == b.logs, || "epoch logs differ between identical runs".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let path = dir.path().join("run.hcec");
    a.checkpoint.save(&path).map_err(|e| e.to_string())?;
    let before: Model = a.checkpoint.to_model().map_err(|e| e.to_string())?;
    let after: Model = Checkpoint::load(&path)
        .and_then(|c| c.to_model())
        .map_err(|e| e.to_string())?;
    for s in &dev.samples {
        let (x, y) = (before.predict(s).unwrap(), after.predict(s).unwrap());
        let bits = |b: &hce_core::CongruityBundle| -> Vec<u64> {
            [
                &b.s_a,
                &b.s_p,
                &b.s_a_k,
                &b.s_p_k,
                &Some(b.p_v.clone()),
                &b.p_k,
                &Some(b.probs.to_vec()),
            ]
            .into_iter()
            .flatten()
            .flatten()
            .map(|v| v.to_bits())
            .collect()
        };
        ensure(bits(&x) == bits(&y), || {
            format!("sample {}: outputs differ after reload", s.id)
        })?;
    }

    let data: Dataset = tr;
    let (m, blob) = (dir.path().join("d.jsonl"), dir.path().join("d.bin"));
    write_manifest(&data, &m, &blob).map_err(|e| e.to_string())?;
    let back = load_manifest(&m, &blob, &Limits::default()).map_err(|e| e.to_string())?;
    let exact = data.samples.iter().zip(&back.samples).all(|(x, y)| {
        let same = |a: &Tensor, b: &Tensor| {
            a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(u, v)| u.to_bits() == v.to_bits())
        };
        same(&x.text, &y.text)
            && same(&x.image, &y.image)
            && match (&x.knowledge, &y.knowledge) {
                (Some(a), Some(b)) => same(a, b),
                (None, None) => true,
                _ => false,
            }
            && x.text_edges == y.text_edges
            && x.knowledge_edges == y.knowledge_edges
    });
    ensure(exact && back.len() == data.len(), || {
        "manifest round trip is not exact".into()
    })?;
    Ok(format!(
        "{} identical epoch logs, bitwise reload on {} samples, exact manifest round trip of {} samples",
        a.logs.len(),
        dev.len(),
        data.len()
    ))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 8] = [
        ("gradient fidelity", gradient_fidelity),
        ("normalization", normalization),
        ("graph attention properties", gat_properties),
        ("convexity bounds", convexity),
        ("learning", learning),
        ("knowledge benefit", knowledge_benefit),
        ("ablation structure", ablation_structure),
        ("determinism and round trips", determinism_and_round_trips),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, run) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name}: {detail} [{secs:.1}s]"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail} [{secs:.1}s]");
            }
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
