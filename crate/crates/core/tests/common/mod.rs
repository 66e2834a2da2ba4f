//! Naive reference implementation of the full forward pass, written with plain
//! nested loops over `Vec<Vec<f64>>` and reading parameters by name only.
#![allow(dead_code)]

use std::collections::BTreeSet;

use hce_core::config::{SentenceMode, SentenceWeights};
use hce_core::graph::Connectivity;
use hce_core::{Config, Model, Sample};

pub type Mat = Vec<Vec<f64>>;

pub fn to_mat(t: &hce_core::Tensor) -> Mat {
    t.data().chunks(t.cols()).map(<[f64]>::to_vec).collect()
}

fn param(model: &Model, name: &str) -> Mat {
    to_mat(
        model
            .store()
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}")),
    )
}

pub fn matmul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; m]; n];
    for i in 0..n {
        assert_eq!(a[i].len(), k);
        for j in 0..m {
            let mut s = 0.0;
            for t in 0..k {
                s += a[i][t] * b[t][j];
            }
            out[i][j] = s;
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    (0..a[0].len()).map(|j| a.iter().map(|r| r[j]).collect()).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|x| x / s).collect()
}

fn affine(x: &Mat, w: &Mat, b: &Mat) -> Mat {
    let mut y = matmul(x, w);
    for row in &mut y {
        for (j, v) in row.iter_mut().enumerate() {
            *v += b[0][j];
        }
    }
    y
}

fn mlp(model: &Model, prefix: &str, x: &Mat) -> Mat {
    let h = affine(
        x,
        &param(model, &format!("{prefix}.l1.w")),
        &param(model, &format!("{prefix}.l1.b")),
    );
    let h: Mat = h
        .into_iter()
        .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
        .collect();
    affine(
        &h,
        &param(model, &format!("{prefix}.l2.w")),
        &param(model, &format!("{prefix}.l2.b")),
    )
}

fn layer_norm(x: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    x.iter()
        .enumerate()
        .map(|(i, v)| gamma[i] * (v - mean) / (var + eps).sqrt() + beta[i])
        .collect()
}

/// One cross-attention layer; caller supplies the attention-row sink.
fn mca_layer(model: &Model, prefix: &str, t: &Mat, ctx: &Mat, attn: &mut Vec<Vec<f64>>) -> Mat {
    let c = model.config();
    let dh = c.d / c.heads;
    let n = t.len();
    let mut joined = vec![Vec::with_capacity(c.d); n];
    for h in 0..c.heads {
        let wq = param(model, &format!("{prefix}.head{h}.wq"));
        let wk = param(model, &format!("{prefix}.head{h}.wk"));
        let wv = param(model, &format!("{prefix}.head{h}.wv"));
        let (q, k, v) = (matmul(t, &wq), matmul(ctx, &wk), matmul(ctx, &wv));
        for i in 0..n {
            let scores: Vec<f64> = k.iter().map(|kj| dot(&q[i], kj) / (dh as f64).sqrt()).collect();
            let a = softmax(&scores);
            joined[i].extend((0..dh).map(|col| a.iter().zip(&v).map(|(aj, vj)| aj * vj[col]).sum::<f64>()));
            attn.push(a);
        }
    }
    let mixed = mlp(model, &format!("{prefix}.mlp"), &joined);
    let gamma = param(model, &format!("{prefix}.ln.gamma"));
    let beta = param(model, &format!("{prefix}.ln.beta"));
    (0..n)
        .map(|i| {
            let res: Vec<f64> = (0..c.d).map(|j| t[i][j] + mixed[i][j]).collect();
            layer_norm(&res, &gamma[0], &beta[0], c.layer_norm_eps)
        })
        .collect()
}

/// Neighbor sets including self.
pub fn text_neighbors(edges: &[(usize, usize)], n: usize) -> Vec<BTreeSet<usize>> {
    let mut nb: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
    for &(a, b) in edges {
        nb[a].insert(b);
        nb[b].insert(a);
    }
    nb
}

pub fn grid_neighbors(p: usize, conn: Connectivity) -> Vec<BTreeSet<usize>> {
    let mut nb = Vec::new();
    for r in 0..p as i64 {
        for c in 0..p as i64 {
            let mut s = BTreeSet::new();
            for rr in 0..p as i64 {
                for cc in 0..p as i64 {
                    let (dr, dc) = ((rr - r).abs(), (cc - c).abs());
                    let adjacent = match conn {
                        Connectivity::Four => dr + dc <= 1,
                        Connectivity::Eight => dr <= 1 && dc <= 1,
                    };
                    if adjacent {
                        s.insert((rr * p as i64 + cc) as usize);
                    }
                }
            }
            nb.push(s);
        }
    }
    nb
}

pub fn gat_layer(x: &Mat, theta: &Mat, v: &[f64], nb: &[BTreeSet<usize>], slope: f64) -> (Mat, Mat) {
    let d = theta.len();
    let h: Mat = x
        .iter()
        .map(|xi| (0..d).map(|r| dot(&theta[r], xi)).collect())
        .collect();
    let k = x.len();
    let mut out = vec![vec![0.0; d]; k];
    let mut alpha = vec![vec![0.0; k]; k];
    for i in 0..k {
        let js: Vec<usize> = nb[i].iter().copied().collect();
        let e: Vec<f64> = js
            .iter()
            .map(|&j| {
                let s = dot(&v[..d], &h[i]) + dot(&v[d..], &h[j]);
                if s > 0.0 {
                    s
                } else {
                    slope * s
                }
            })
            .collect();
        let a = softmax(&e);
        for (&j, &aj) in js.iter().zip(&a) {
            alpha[i][j] = aj;
            for c in 0..d {
                out[i][c] += aj * h[j][c];
            }
        }
    }
    (out, alpha)
}

fn gat_stack(model: &Model, prefix: &str, x: &Mat, nb: &[BTreeSet<usize>], attn: &mut Vec<Mat>) -> Mat {
    let c = model.config();
    let mut cur = x.clone();
    for l in 0..c.gat_layers {
        if l > 0 && c.gat_activation {
            cur = cur
                .into_iter()
                .map(|r| r.into_iter().map(|v| v.max(0.0)).collect())
                .collect();
        }
        let theta = param(model, &format!("{prefix}.{l}.theta"));
        let v: Vec<f64> = param(model, &format!("{prefix}.{l}.v"))
            .into_iter()
            .map(|r| r[0])
            .collect();
        let (o, a) = gat_layer(&cur, &theta, &v, nb, c.leaky_relu_slope);
        cur = o;
        attn.push(a);
    }
    cur
}

/// Softmax over rows of `x·w + b` with `w ∈ R^{d×1}` and scalar `b`.
fn importance(model: &Model, prefix: &str, x: &Mat) -> Vec<f64> {
    let w: Vec<f64> = param(model, &format!("{prefix}.w")).into_iter().map(|r| r[0]).collect();
    let b = param(model, &format!("{prefix}.b"))[0][0];
    softmax(&x.iter().map(|r| dot(r, &w) + b).collect::<Vec<_>>())
}

fn pool(weights: &[f64], q: &Mat) -> Vec<f64> {
    (0..q[0].len())
        .map(|j| (0..q.len()).map(|i| weights[i] * q[i][j]).sum())
        .collect()
}

fn similarity(a: &Mat, b: &Mat) -> Mat {
    let d = a[0].len() as f64;
    a.iter()
        .map(|ai| b.iter().map(|bj| dot(ai, bj) / d.sqrt()).collect())
        .collect()
}

#[derive(Clone, Debug, Default)]
pub struct BranchRef {
    pub updated: Mat,
    pub q_a: Option<Mat>,
    pub token_weights: Option<Vec<f64>>,
    pub s_a: Option<Vec<f64>>,
    pub q_p: Option<Mat>,
    pub composition_weights: Option<Vec<f64>>,
    pub sentence_weights: Option<Vec<f64>>,
    pub s_p: Option<Vec<f64>>,
    pub mca_attention: Mat,
    pub gat_attention: Vec<Mat>,
}

#[allow(clippy::too_many_arguments)]
fn branch(
    model: &Model,
    prefix: &str,
    query: &Mat,
    ctx: &Mat,
    qnb: &[BTreeSet<usize>],
    cnb: &[BTreeSet<usize>],
    layers: usize,
) -> BranchRef {
    let c = model.config();
    let mut out = BranchRef::default();
    let mut updated = query.clone();
    if c.ablation.uses_mca() {
        for l in 0..layers {
            updated = mca_layer(
                model,
                &format!("{prefix}.mca.{l}"),
                &updated,
                ctx,
                &mut out.mca_attention,
            );
        }
    }
    if c.ablation.uses_atomic() {
        let q = similarity(&updated, ctx);
        let w = importance(model, &format!("{prefix}.atomic"), &updated);
        out.s_a = Some(pool(&w, &q));
        out.q_a = Some(q);
        out.token_weights = Some(w);
    }
    if c.ablation.uses_composition() {
        let qh = gat_stack(
            model,
            &format!("{prefix}.gat_query"),
            &updated,
            qnb,
            &mut out.gat_attention,
        );
        let ch = gat_stack(
            model,
            &format!("{prefix}.gat_context"),
            ctx,
            cnb,
            &mut out.gat_attention,
        );
        let sent = match c.sentence_mode {
            SentenceMode::Weighted => {
                let src = match c.sentence_weights {
                    SentenceWeights::Input => query,
                    SentenceWeights::Updated => &updated,
                };
                let w = importance(model, &format!("{prefix}.sentence"), src);
                let e = pool(&w, &updated);
                out.sentence_weights = Some(w);
                e
            }
            SentenceMode::Uniform => pool(&vec![1.0 / updated.len() as f64; updated.len()], &updated),
        };
        let mut aug = qh;
        aug.push(sent);
        let q = similarity(&aug, &ch);
        let w = importance(model, &format!("{prefix}.composition"), &aug);
        out.s_p = Some(pool(&w, &q));
        out.q_p = Some(q);
        out.composition_weights = Some(w);
    }
    out.updated = updated;
    out
}

#[derive(Clone, Debug)]
pub struct ForwardRef {
    pub text: BranchRef,
    pub knowledge: Option<BranchRef>,
    pub p_v: Vec<f64>,
    pub p_k: Option<Vec<f64>>,
    pub z: Vec<f64>,
    pub probs: [f64; 2],
}

/// Dropout-off forward pass of `model` on `sample`.
pub fn forward(model: &Model, sample: &Sample) -> ForwardRef {
    let c: &Config = model.config();
    let t = mlp(model, "proj.text", &to_mat(&sample.text));
    let i = mlp(model, "proj.image", &to_mat(&sample.image));
    let tnb = text_neighbors(&sample.text_edges, sample.text_len());
    let gnb = grid_neighbors(sample.grid_side, c.grid_connectivity);
    let ti = branch(model, "ti", &t, &i, &tnb, &gnb, c.mca_layers_text_image);
    let p_v = importance(model, "fuse.patch", &i);
    let mut z = Vec::new();
    for s in [&ti.s_a, &ti.s_p].into_iter().flatten() {
        z.extend(s.iter().zip(&p_v).map(|(a, b)| a * b));
    }
    let (mut knowledge, mut p_k) = (None, None);
    let (wy, by) = if c.knowledge_enabled {
        let k = mlp(model, "proj.knowledge", &to_mat(sample.knowledge.as_ref().unwrap()));
        let knb = text_neighbors(sample.knowledge_edges.as_deref().unwrap_or(&[]), k.len());
        let tk = branch(model, "tk", &ti.updated, &k, &tnb, &knb, c.mca_layers_text_knowledge);
        let pk = importance(model, "fuse.k.importance", &k);
        for s in [&tk.s_a, &tk.s_p].into_iter().flatten() {
            let mut block: Vec<f64> = s.iter().zip(&pk).map(|(a, b)| a * b).collect();
            block.resize(c.max_knowledge_len, 0.0);
            z.extend(block);
        }
        knowledge = Some(tk);
        p_k = Some(pk);
        (param(model, "fuse.k.wy"), param(model, "fuse.k.by"))
    } else {
        (param(model, "fuse.wy"), param(model, "fuse.by"))
    };
    let logits: Vec<f64> = (0..2).map(|r| dot(&wy[r], &z) + by[0][r]).collect();
    let p = softmax(&logits);
    ForwardRef {
        text: ti,
        knowledge,
        p_v,
        p_k,
        z,
        probs: [p[0], p[1]],
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "length mismatch");
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn flat(m: &Mat) -> Vec<f64> {
    m.concat()
}
