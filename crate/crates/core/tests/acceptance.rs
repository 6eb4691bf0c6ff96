//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit on any failure.

use gtfusion::app::{ablation_rows, ablation_table, cv, Options, METRICS_FILE};
use gtfusion::chunks::chunk_analysis;
use gtfusion::corpus::{
    parse_bracketed, parse_conllu, read_jsonl, write_jsonl, ConstTree, DepTree, Document, LabelSet, Vocab,
};
use gtfusion::gradcheck::grad_check;
use gtfusion::graph::{
    encode_document, gat_layer_detailed, labelwise_scores, max_scores, select_sentences, DocEncoderParams, FfnParams,
    GATParams, HeadCombine, Neighbourhoods, ScoreAxis,
};
use gtfusion::params::ParamStore;
use gtfusion::propagation::{two_pass_encode, DownwardParams};
use gtfusion::synth::{random_const_tree, random_dep_tree, random_sentence, PlantedCorpus};
use gtfusion::tape::{Tape, Var};
use gtfusion::train::{evaluate, train};
use gtfusion::tree::{branch_attention, branch_attention_detailed, encode_sentence, TreeTransformerParams};
use gtfusion::{GraphTreeModel, Task, Tensor64, TrainConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::time::{Duration, Instant};

type Check = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(limit: Duration, start: Instant) -> std::result::Result<(), String> {
    let t = start.elapsed();
    ensure(t < limit, || format!("took {t:.1?}, limit {limit:?}"))
}

fn sequential<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool").install(f)
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor64 {
    Tensor64::from_fn(shape.to_vec(), |_| r.gen_range(-1.5..1.5))
}

/// `Σ y ⊙ R` with a fixed random `R`, so no gradient entry cancels by symmetry.
fn project<'t>(tape: &'t Tape<f64>, y: Var<'t, f64>, seed: u64) -> gtfusion::Result<Var<'t, f64>> {
    let mut r = rng(seed);
    let w = random(&y.shape(), &mut r);
    y.mul(&tape.constant(w))?.sum_all()
}

/// Pins a closure to the higher-ranked signature `grad_check` expects.
fn hr<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape<f64>, Var<'t, f64>) -> gtfusion::Result<Var<'t, f64>>,
{
    f
}

fn err(e: gtfusion::Error) -> String {
    e.to_string()
}

// 1 ─────────────────────────────────────────────────────────────────────────────

type Probe = Box<dyn Fn(&mut ChaCha8Rng) -> (String, f64)>;

macro_rules! probe {
    ($name:expr, $shape:expr, |$t:ident, $x:ident, $r:ident| $body:expr) => {
        Box::new(move |rr: &mut ChaCha8Rng| {
            let input = random(&$shape, rr);
            let seed: u64 = rr.gen();
            let e = grad_check(
                |$t: &Tape<f64>, $x: Var<'_, f64>| {
                    let mut $r = rng(seed);
                    let y = $body?;
                    project($t, y, seed ^ 1)
                },
                &input,
            );
            ($name.to_string(), e)
        }) as Probe
    };
}

fn primitive_probes() -> Vec<Probe> {
    vec![
        probe!("matmul left", [3, 4], |t, x, r| x.matmul(&t.constant(random(&[4, 2], &mut r)))),
        probe!("matmul right", [4, 2], |t, x, r| t.constant(random(&[3, 4], &mut r)).matmul(&x)),
        probe!("matmul self", [3, 3], |_t, x, _r| x.matmul(&x)),
        probe!("add", [2, 3], |t, x, r| x.add(&t.constant(random(&[2, 3], &mut r)))),
        probe!("add broadcast row", [1, 3], |t, x, r| t.constant(random(&[4, 3], &mut r)).add(&x)),
        probe!("add broadcast col", [4, 1], |t, x, r| t.constant(random(&[4, 3], &mut r)).add(&x)),
        probe!("sub", [2, 3], |t, x, r| t.constant(random(&[2, 3], &mut r)).sub(&x)),
        probe!("mul", [2, 3], |t, x, r| x.mul(&t.constant(random(&[2, 3], &mut r)))),
        probe!("mul self", [2, 3], |_t, x, _r| x.mul(&x)),
        probe!("scale", [2, 3], |_t, x, _r| x.scale(-1.7)),
        probe!("concat rows", [2, 3], |t, x, r| t.concat(&[x, t.constant(random(&[1, 3], &mut r)), x], 0)),
        probe!("concat cols", [2, 3], |t, x, r| t.concat(&[t.constant(random(&[2, 2], &mut r)), x], 1)),
        probe!("mean rows", [3, 4], |_t, x, _r| x.mean(0)),
        probe!("mean cols", [3, 4], |_t, x, _r| x.mean(1)),
        probe!("sum rows", [3, 4], |_t, x, _r| x.sum(0)),
        probe!("sum cols", [3, 4], |_t, x, _r| x.sum(1)),
        probe!("max rows", [3, 4], |_t, x, _r| x.max(0)),
        probe!("tanh", [3, 4], |_t, x, _r| x.tanh()),
        probe!("relu", [3, 4], |_t, x, _r| x.relu()),
        probe!("leaky relu", [3, 4], |_t, x, _r| x.leaky_relu(0.2)),
        probe!("sigmoid", [3, 4], |_t, x, _r| x.sigmoid()),
        probe!("ln", [3, 4], |_t, x, _r| x.mul(&x)?.ln_clamped(1e-12, 1e12)),
        probe!("softmax rows", [3, 4], |_t, x, _r| x.softmax(1)),
        probe!("softmax cols", [3, 4], |_t, x, _r| x.softmax(0)),
        probe!("masked softmax", [3, 4], |_t, x, _r| {
            let mask = [true, false, true, true, false, true, false, false, true, true, true, false];
            x.masked_softmax(1, &mask)
        }),
        probe!("layer norm input", [3, 5], |t, x, r| {
            let g = t.constant(random(&[1, 5], &mut r));
            let b = t.constant(random(&[1, 5], &mut r));
            x.layer_norm(&g, &b, 1e-5)
        }),
        probe!("layer norm gain", [1, 5], |t, x, r| {
            let input = t.constant(random(&[3, 5], &mut r));
            input.layer_norm(&x, &t.constant(random(&[1, 5], &mut r)), 1e-5)
        }),
        probe!("layer norm bias", [1, 5], |t, x, r| {
            let input = t.constant(random(&[3, 5], &mut r));
            input.layer_norm(&t.constant(random(&[1, 5], &mut r)), &x, 1e-5)
        }),
        probe!("affine input", [3, 4], |t, x, r| {
            x.affine(&t.constant(random(&[4, 2], &mut r)), &t.constant(random(&[1, 2], &mut r)))
        }),
        probe!("affine weight", [4, 2], |t, x, r| {
            t.constant(random(&[3, 4], &mut r)).affine(&x, &t.constant(random(&[1, 2], &mut r)))
        }),
        probe!("affine bias", [1, 2], |t, x, r| t.constant(random(&[3, 4], &mut r)).affine(&t.constant(random(&[4, 2], &mut r)), &x)),
        probe!("transpose", [2, 3], |_t, x, _r| x.transpose()),
        probe!("gather rows", [3, 2], |_t, x, _r| x.gather_rows(&[2, 0, 2, 1])),
        probe!("slice cols", [2, 5], |_t, x, _r| x.slice_cols(1, 3)),
        probe!("sum all", [2, 3], |_t, x, _r| x.tanh()?.sum_all()),
    ]
}

fn gradient_fidelity() -> Check {
    let start = Instant::now();
    const TOL: f64 = 1e-4;
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut r = rng(101);
    for p in primitive_probes() {
        for _ in 0..3 {
            worst.push(p(&mut r));
        }
    }

    // branch attention, with respect to the input rows and to each parameter
    let d = 8;
    let mut store = ParamStore::<f64>::new();
    let tt = TreeTransformerParams::new(&mut store, "t", d, 2, &mut r).map_err(err)?;
    let x = random(&[4, d], &mut r);
    let branch = hr(|t, x| {
        let y = branch_attention(t, &store, x, &tt)?;
        project(t, y, 5)
    });
    worst.push(("branch attention / input".into(), grad_check(branch, &x)));
    let b0 = &tt.branches[0];
    for (name, id) in [
        ("wq", b0.wq),
        ("wk", b0.wk),
        ("wv", b0.wv),
        ("wb", b0.wb),
        ("kappa", b0.kappa),
        ("ln_gain", b0.ln_gain),
        ("ln_bias", b0.ln_bias),
        ("pcnn_w1", b0.pcnn_w1),
        ("pcnn_b2", b0.pcnn_b2),
        ("alpha", b0.alpha),
    ] {
        let e = grad_check(
            |t: &Tape<f64>, p: Var<'_, f64>| {
                t.bind_param(id, p);
                let y = branch_attention(t, &store, t.constant(x.clone()), &tt)?;
                project(t, y, 5)
            },
            store.get(id),
        );
        worst.push((format!("branch attention / {name}"), e));
    }

    // encode_sentence on a three-token sentence
    let sentence = random_sentence(vec!["a".into(), "b".into(), "c".into()], &mut r);
    let ctt = TreeTransformerParams::new(&mut store, "c", d, 2, &mut r).map_err(err)?;
    let words = random(&[3, d], &mut r);
    let sent = hr(|t, w| {
        let enc = encode_sentence(t, &store, &sentence, w, w, &tt, &ctt)?;
        project(t, enc.h, 6)
    });
    worst.push(("encode_sentence / words".into(), grad_check(sent, &words)));
    for (name, id) in [("dtt out_w", tt.out_w), ("ctt wq", ctt.branches[1].wq), ("ctt out_b", ctt.out_b)] {
        let e = grad_check(
            |t: &Tape<f64>, p: Var<'_, f64>| {
                t.bind_param(id, p);
                let w = t.constant(words.clone());
                let enc = encode_sentence(t, &store, &sentence, w, w, &tt, &ctt)?;
                project(t, enc.h, 6)
            },
            store.get(id),
        );
        worst.push((format!("encode_sentence / {name}"), e));
    }

    // gat_layer: 5 nodes, 2 heads
    let gat = GATParams::new(&mut store, "g", d, 2, HeadCombine::Mean, &mut r).map_err(err)?;
    let hoods = Neighbourhoods::from_edges(5, &[0, 2, 4], &[(1, 0), (3, 0), (0, 2), (1, 2), (2, 4), (3, 4), (1, 4)]);
    let feats = random(&[5, d], &mut r);
    let g = hr(|t, f| {
        let y = gat_layer_detailed(t, &store, f, &hoods, &gat)?.output;
        project(t, y, 7)
    });
    worst.push(("gat_layer / features".into(), grad_check(g, &feats)));
    for (name, id) in [("head0 w", gat.heads[0].w), ("head1 a", gat.heads[1].a)] {
        let e = grad_check(
            |t: &Tape<f64>, p: Var<'_, f64>| {
                t.bind_param(id, p);
                let y = gat_layer_detailed(t, &store, t.constant(feats.clone()), &hoods, &gat)?.output;
                project(t, y, 7)
            },
            store.get(id),
        );
        worst.push((format!("gat_layer / {name}"), e));
    }

    // two_pass_encode over a two-sentence document, all sentences kept
    let doc = Document::new(
        "g",
        vec![
            random_sentence(vec!["x".into(), "y".into(), "alpha".into()], &mut r),
            random_sentence(vec!["y".into(), "z".into()], &mut r),
        ],
        vec!["alpha".into()],
    )
    .map_err(err)?;
    let labels = LabelSet::new(vec!["alpha".into(), "beta".into()]).map_err(err)?;
    let cfg = TrainConfig {
        task: Task::Binary,
        d,
        gat_heads: 2,
        branches: 2,
        tau: 0.01,
        embedding_std: 0.5,
        seed: 11,
        ..Default::default()
    };
    let model = GraphTreeModel::<f64>::new(cfg, Vocab::build(std::slice::from_ref(&doc), 1).map_err(err)?, labels)
        .map_err(err)?;
    let two_pass = |id| {
        let model = &model;
        let doc = &doc;
        hr(move |t, p| {
            t.bind_param(id, p);
            let enc = two_pass_encode(t, model, doc, None)?;
            project(t, enc.output.h_tilde, 8)
        })
    };
    let emb = model.params.embedding.param;
    worst.push(("two_pass_encode / embedding".into(), grad_check(two_pass(emb), model.store.get(emb))));
    let down = model.params.downward.param_ids();
    for id in [down[0], down[down.len() - 1], model.params.upward.doc.ffn.w1] {
        let name = format!("two_pass_encode / {}", model.store.name(id));
        worst.push((name, grad_check(two_pass(id), model.store.get(id))));
    }
    let objective = hr(|t, p| {
        t.bind_param(emb, p);
        let fwd = model.forward(t, &doc)?;
        Ok(model.objective(&fwd, &doc)?.total)
    });
    worst.push(("training objective / embedding".into(), grad_check(objective, model.store.get(emb))));

    let bad: Vec<String> = worst.iter().filter(|(_, e)| !(*e < TOL)).map(|(n, e)| format!("{n}: {e:.2e}")).collect();
    ensure(bad.is_empty(), || bad.join("; "))?;
    within(Duration::from_secs(60), start)?;
    let max = worst.iter().map(|(_, e)| *e).fold(0.0, f64::max);
    Ok(format!("{} checks, worst relative error {max:.2e}", worst.len()))
}

// 2 ─────────────────────────────────────────────────────────────────────────────

/// Dense evaluation: per head `z = X W`, `e_ij = LeakyReLU(a₁·z_i + a₂·z_j)` over
/// `A_ij = 1`, softmax over `j`, `tanh(Σ_j α_ij z_j)`, heads averaged or concatenated.
fn dense_gat(x: &Tensor64, adj: &[Vec<bool>], targets: &[usize], heads: &[(Tensor64, Tensor64)], concat: bool) -> Vec<Vec<f64>> {
    let n = x.rows();
    let mut per_head = Vec::new();
    for (w, a) in heads {
        let dh = w.cols();
        let z: Vec<Vec<f64>> = (0..n)
            .map(|i| (0..dh).map(|c| (0..x.cols()).map(|k| x.at(i, k) * w.at(k, c)).sum()).collect())
            .collect();
        let dot = |v: &[f64], off: usize| (0..dh).map(|c| v[c] * a.at(0, off + c)).sum::<f64>();
        let rows: Vec<Vec<f64>> = targets
            .iter()
            .map(|&i| {
                let nb: Vec<usize> = (0..n).filter(|&j| adj[i][j]).collect();
                let e: Vec<f64> = nb
                    .iter()
                    .map(|&j| {
                        let s = dot(&z[i], 0) + dot(&z[j], dh);
                        if s >= 0.0 {
                            s
                        } else {
                            0.2 * s
                        }
                    })
                    .collect();
                let m = e.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let ex: Vec<f64> = e.iter().map(|v| (v - m).exp()).collect();
                let total: f64 = ex.iter().sum();
                (0..dh)
                    .map(|c| nb.iter().zip(&ex).map(|(&j, w)| w / total * z[j][c]).sum::<f64>().tanh())
                    .collect()
            })
            .collect();
        per_head.push(rows);
    }
    (0..targets.len())
        .map(|t| {
            if concat {
                per_head.iter().flat_map(|h| h[t].clone()).collect()
            } else {
                let k = per_head.len() as f64;
                (0..per_head[0][t].len()).map(|c| per_head.iter().map(|h| h[t][c]).sum::<f64>() / k).collect()
            }
        })
        .collect()
}

fn gat_oracle() -> Check {
    let start = Instant::now();
    let mut r = rng(202);
    let mut worst = 0.0f64;
    for trial in 0..100 {
        let n = r.gen_range(1..=6);
        let heads = r.gen_range(1..=3);
        let concat = r.gen_bool(0.5);
        let dh = r.gen_range(1..=3);
        let d = if concat { heads * dh } else { r.gen_range(2..=6) };
        let mut store = ParamStore::<f64>::new();
        let combine = if concat { HeadCombine::Concat } else { HeadCombine::Mean };
        let gat = GATParams::new(&mut store, "g", d, heads, combine, &mut r).map_err(err)?;
        for id in gat.param_ids() {
            let shape = store.get(id).shape().to_vec();
            store.set(id, random(&shape, &mut r)).map_err(err)?;
        }
        let mut adj = vec![vec![false; n]; n];
        let mut edges = Vec::new();
        for (i, row) in adj.iter_mut().enumerate() {
            row[i] = true;
            for (j, cell) in row.iter_mut().enumerate() {
                if i != j && r.gen_bool(0.4) {
                    *cell = true;
                    edges.push((j, i));
                }
            }
        }
        let mut targets: Vec<usize> = (0..n).filter(|_| r.gen_bool(0.7)).collect();
        if targets.is_empty() {
            targets.push(r.gen_range(0..n));
        }
        let x = random(&[n, d], &mut r);
        let hoods = Neighbourhoods::from_edges(n, &targets, &edges);
        let tape = Tape::new();
        let got = gat_layer_detailed(&tape, &store, tape.constant(x.clone()), &hoods, &gat)
            .map_err(err)?
            .output
            .value();
        let weights: Vec<(Tensor64, Tensor64)> =
            gat.heads.iter().map(|h| (store.get(h.w).clone(), store.get(h.a).clone())).collect();
        let want = dense_gat(&x, &adj, &targets, &weights, concat);
        ensure(got.shape() == [targets.len(), want[0].len()], || {
            format!("trial {trial}: shape {:?}", got.shape())
        })?;
        for (t, row) in want.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                worst = worst.max((got.at(t, c) - v).abs());
            }
        }
    }
    ensure(worst <= 1e-10, || format!("max deviation {worst:.2e}"))?;
    within(Duration::from_secs(10), start)?;
    Ok(format!("100 graphs, max deviation {worst:.2e}"))
}

// 3 ─────────────────────────────────────────────────────────────────────────────

fn rows_sum_to_one(t: &Tensor64, what: &str, worst: &mut f64) -> std::result::Result<(), String> {
    for r in 0..t.rows() {
        let s: f64 = t.row_slice(r).iter().sum();
        *worst = worst.max((s - 1.0).abs());
        ensure(t.row_slice(r).iter().all(|&v| v >= 0.0), || format!("{what}: negative weight"))?;
    }
    Ok(())
}

fn normalisation() -> Check {
    let mut r = rng(303);
    let mut worst = 0.0f64;
    let mut sets = 0usize;
    for _ in 0..200 {
        let d = r.gen_range(2..=8);
        let mut store = ParamStore::<f64>::new();
        let tt = TreeTransformerParams::new(&mut store, "t", d, r.gen_range(1..=4), &mut r).map_err(err)?;
        let tape = Tape::new();
        let n = r.gen_range(1..=7);
        let scale = r.gen_range(0.1..20.0);
        let x = tape.constant(random(&[n, d], &mut r).map(|v| v * scale));
        for w in branch_attention_detailed(&tape, &store, x, &tt).map_err(err)?.weights {
            rows_sum_to_one(&w.value(), "tree attention", &mut worst)?;
            sets += n;
        }

        let (k, l) = (r.gen_range(1..=9), r.gen_range(1..=5));
        let s = tape.constant(random(&[k, d], &mut r).map(|v| v * scale));
        let lab = tape.constant(random(&[l, d], &mut r));
        let per_sentence = labelwise_scores(s, lab, ScoreAxis::PerSentence).map_err(err)?.value();
        rows_sum_to_one(&per_sentence, "label-wise rows", &mut worst)?;
        let per_label = labelwise_scores(s, lab, ScoreAxis::PerLabel).map_err(err)?.value();
        let cols = per_label.transpose2();
        rows_sum_to_one(&cols, "label-wise columns", &mut worst)?;
        sets += k + l;

        let heads = r.gen_range(1..=3);
        let gat = GATParams::new(&mut store, "g", d, heads, HeadCombine::Mean, &mut r).map_err(err)?;
        let m = r.gen_range(1..=8);
        let edges: Vec<(usize, usize)> =
            (0..m).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|_| r.gen_bool(0.3)).collect();
        let targets: Vec<usize> = (0..m).collect();
        let hoods = Neighbourhoods::from_edges(m, &targets, &edges);
        let out = gat_layer_detailed(&tape, &store, tape.constant(random(&[m, d], &mut r)), &hoods, &gat).map_err(err)?;
        for w in out.weights {
            let w = w.value();
            rows_sum_to_one(&w, "GAT neighbourhood", &mut worst)?;
            for (row, (_, src)) in hoods.targets.iter().enumerate() {
                for j in 0..m {
                    ensure(src.contains(&j) || w.at(row, j) == 0.0, || "GAT weight outside neighbourhood".into())?;
                }
            }
            sets += m;
        }
    }
    ensure(worst <= 1e-9, || format!("max |sum - 1| = {worst:.2e}"))?;
    Ok(format!("{sets} weight sets, max |sum - 1| = {worst:.2e}"))
}

trait Transpose {
    fn transpose2(&self) -> Tensor64;
}

impl Transpose for Tensor64 {
    fn transpose2(&self) -> Tensor64 {
        let (r, c) = (self.rows(), self.cols());
        Tensor64::from_fn(vec![c, r], |k| self.at(k % r, k / r))
    }
}

// 4 ─────────────────────────────────────────────────────────────────────────────

fn random_scores(r: &mut ChaCha8Rng) -> Tensor64 {
    let (n, l) = (r.gen_range(1..=12), r.gen_range(1..=5));
    let tape = Tape::new();
    let temp = r.gen_range(0.2..5.0);
    tape.constant(random(&[n, l], r).map(|v| v * temp)).softmax(1).expect("softmax").value()
}

fn selection_semantics() -> Check {
    let mut r = rng(404);
    let mut monotone = 0;
    while monotone < 1000 {
        let scores = random_scores(&mut r);
        let (a, b) = (r.gen_range(0.01..0.99), r.gen_range(0.01..0.99));
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if !max_scores(&scores).iter().any(|&m| m >= hi) {
            continue;
        }
        let strict = select_sentences(&scores, hi).map_err(err)?;
        let loose = select_sentences(&scores, lo).map_err(err)?;
        ensure(strict.iter().all(|s| loose.contains(s)), || format!("S'({hi}) = {strict:?} not within S'({lo}) = {loose:?}"))?;
        monotone += 1;
    }

    for trial in 0..1000 {
        let scores = random_scores(&mut r);
        let tau = r.gen_range(0.001..0.999);
        let s = select_sentences(&scores, tau).map_err(err)?;
        ensure(!s.is_empty(), || format!("trial {trial}: empty selection"))?;
        ensure(s.windows(2).all(|w| w[0] < w[1]) && s.iter().all(|&i| i < scores.rows()), || {
            format!("trial {trial}: malformed selection {s:?}")
        })?;
    }

    let d = 6;
    let mut store = ParamStore::<f64>::new();
    let doc = DocEncoderParams {
        gat: GATParams::new(&mut store, "doc.gat", d, 3, HeadCombine::Mean, &mut r).map_err(err)?,
        ffn: FfnParams::new(&mut store, "doc.ffn", d, 2 * d, &mut r),
    };
    let mut worst = 0.0f64;
    for trial in 0..1000 {
        let k = r.gen_range(1..=7);
        let x = random(&[k, d], &mut r);
        let mut perm: Vec<usize> = (0..k).collect();
        perm.shuffle(&mut r);
        let use_gat = trial % 4 != 0;
        let tape = Tape::new();
        let a = encode_document(&tape, &store, tape.constant(x.clone()), &doc, use_gat).map_err(err)?;
        let xp = tape.constant(x).gather_rows(&perm).map_err(err)?;
        let b = encode_document(&tape, &store, xp, &doc, use_gat).map_err(err)?;
        worst = worst.max(a.h_tilde.value().max_abs_diff(&b.h_tilde.value()));
    }
    ensure(worst <= 1e-12, || format!("permutation changed the document vector by {worst:.2e}"))?;
    Ok(format!(
        "1000 monotonicity, 1000 non-empty and 1000 permutation trials; max permutation drift {worst:.1e}"
    ))
}

// 5 ─────────────────────────────────────────────────────────────────────────────

fn random_document(id: usize, r: &mut ChaCha8Rng) -> Document {
    let vocab = ["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];
    let n = r.gen_range(1..=5);
    let sentences = (0..n)
        .map(|_| {
            let len = r.gen_range(1..=6);
            let toks = (0..len).map(|_| vocab[r.gen_range(0..vocab.len())].to_string()).collect();
            random_sentence(toks, r)
        })
        .collect();
    let gold = if r.gen_bool(0.5) { "alpha" } else { "beta" };
    Document::new(format!("r{id}"), sentences, vec![gold.into()]).expect("non-empty")
}

fn two_pass_identity() -> Check {
    let mut r = rng(505);
    let docs: Vec<Document> = (0..50).map(|i| random_document(i, &mut r)).collect();
    let labels = LabelSet::new(vec!["alpha".into(), "beta".into()]).map_err(err)?;
    let cfg = TrainConfig {
        task: Task::Binary,
        d: 8,
        gat_heads: 2,
        tau: 1e-9,
        seed: 5,
        embedding_std: 0.5,
        ..Default::default()
    };
    let mut model = GraphTreeModel::<f64>::new(cfg, Vocab::build(&docs, 1).map_err(err)?, labels).map_err(err)?;
    model.params.downward = DownwardParams::identity(&model.channels());
    for d in &docs {
        let tape = Tape::new();
        let enc = two_pass_encode(&tape, &model, d, None).map_err(err)?;
        ensure(enc.selected.len() == d.sentences.len(), || format!("{}: sentences were pruned", d.id))?;
        for (name, a, b) in [
            ("mean", enc.pass1.h_d, enc.output.h_d),
            ("attention", enc.pass1.h_prime, enc.output.h_prime),
            ("output", enc.pass1.h_tilde, enc.output.h_tilde),
        ] {
            ensure(a.value() == b.value(), || {
                format!("{}: {name} differs by {:.2e}", d.id, a.value().max_abs_diff(&b.value()))
            })?;
        }
    }
    Ok("50 documents, pass-2 output bit-identical to pass 1".into())
}

// 6 ─────────────────────────────────────────────────────────────────────────────

/// Configuration shared by the two training criteria.
fn planted_config(tau: f64) -> TrainConfig {
    TrainConfig {
        task: Task::Binary,
        d: 32,
        tau,
        lr: 0.01,
        embedding_std: 1.0,
        max_epochs: 200,
        seed: 7,
        ..Default::default()
    }
}

fn learnability() -> Check {
    let spec = PlantedCorpus::default();
    let (tr, va, te) = (spec.generate(1), spec.generate(3), spec.generate(2));
    let types: std::collections::BTreeSet<&str> =
        tr.iter().flat_map(|d| d.sentences.iter().flat_map(|s| s.tokens.iter().map(String::as_str))).collect();
    ensure(tr.len() == 40 && types.len() == 50, || format!("corpus: {} docs, {} token types", tr.len(), types.len()))?;
    let labels = LabelSet::from_documents(&tr).map_err(err)?;
    let start = Instant::now();
    let cfg = planted_config(0.7);
    let (out, on_train, on_test) = sequential(|| -> gtfusion::Result<_> {
        let out = train::<f64>(&tr, &va, &labels, &cfg)?;
        let on_train = evaluate(&out.model, &tr)?.metric;
        let on_test = evaluate(&out.model, &te)?.metric;
        Ok((out, on_train, on_test))
    })
    .map_err(err)?;
    let elapsed = start.elapsed();
    let detail = format!(
        "train {on_train:.3}, held-out {on_test:.3}, {} epochs (best {}), {elapsed:.1?}",
        out.history.len(),
        out.best_epoch
    );
    ensure(out.history.len() <= 200, || detail.clone())?;
    ensure(on_train == 1.0, || format!("train accuracy below 100%: {detail}"))?;
    ensure(on_test >= 0.9, || format!("held-out accuracy below 90%: {detail}"))?;
    ensure(elapsed < Duration::from_secs(300), || format!("too slow: {detail}"))?;
    Ok(detail)
}

// 7 ─────────────────────────────────────────────────────────────────────────────

fn chunk_signal() -> Check {
    let spec = PlantedCorpus::first_third();
    let (tr, va, te) = (spec.generate(1), spec.generate(3), spec.generate(2));
    let labels = LabelSet::from_documents(&tr).map_err(err)?;
    let cfg = planted_config(0.8);
    let (fr, acc) = sequential(|| -> gtfusion::Result<_> {
        let out = train::<f64>(&tr, &va, &labels, &cfg)?;
        Ok((chunk_analysis(&out.model, &te)?, evaluate(&out.model, &te)?.metric))
    })
    .map_err(err)?;
    let gap = fr[0] - fr[1];
    let detail = format!(
        "held-out fractions {:.3} / {:.3} / {:.3}, first minus middle {:+.1} points, accuracy {acc:.3}",
        fr[0],
        fr[1],
        fr[2],
        100.0 * gap
    );
    ensure(gap >= 0.2, || detail.clone())?;
    Ok(detail)
}

// 8 ─────────────────────────────────────────────────────────────────────────────

fn ablation_harness() -> Check {
    let docs = PlantedCorpus::default().generate(1);
    let labels = LabelSet::from_documents(&docs).map_err(err)?;
    let cfg = TrainConfig {
        task: Task::Binary,
        d: 16,
        lr: 0.01,
        embedding_std: 1.0,
        max_epochs: 8,
        tau: 0.6,
        seed: 3,
        ..Default::default()
    };
    let rows = ablation_rows(&docs, &labels, &cfg).map_err(err)?;
    let names: Vec<&str> = rows.iter().map(|r| r.variant.as_str()).collect();
    ensure(names == ["full", "no_ctt", "no_dtt", "no_ctt+no_dtt", "no_gat", "no_bidir"], || format!("variants {names:?}"))?;
    ensure(rows.iter().all(|r| (0.0..=1.0).contains(&r.metric)), || "metric out of range".into())?;
    let table = ablation_table(&rows, "accuracy");
    for line in table.lines() {
        println!("      {line}");
    }
    Ok(format!("{} variants trained and scored", rows.len()))
}

// 9 ─────────────────────────────────────────────────────────────────────────────

const TOKEN_CHARS: &[u8] = b"abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,;:'!?-_$&";

fn dep_case(seed: u64, n: usize) -> (DepTree, Vec<String>) {
    let mut r = rng(seed);
    let forms = (0..n)
        .map(|_| {
            let len = r.gen_range(1..=6);
            (0..len).map(|_| TOKEN_CHARS[r.gen_range(0..TOKEN_CHARS.len())] as char).collect()
        })
        .collect();
    (random_dep_tree(n, &mut r), forms)
}

fn const_case(seed: u64, n: usize) -> (ConstTree, Vec<String>) {
    let mut r = rng(seed);
    let forms = (0..n)
        .map(|_| {
            let len = r.gen_range(1..=6);
            (0..len).map(|_| TOKEN_CHARS[r.gen_range(0..TOKEN_CHARS.len())] as char).collect()
        })
        .collect();
    (random_const_tree(n, &mut r), forms)
}

const BAD_CONLLU: &[&str] = &[
    "",
    "# only a comment\n",
    "1 a 0\n",
    "1 a x root\n",
    "x a 0 root\n",
    "2 a 0 root\n",
    "1 a 0 root\n3 b 1 dep\n",
    "1 a 2 dep\n2 b 1 dep\n",
    "1 a 0 root\n2 b 0 root\n",
    "1 a 1 root\n",
    "1 a 5 root\n",
    "1 a 0 root\n\n1 b 0 root\n",
    "1\ta\t_\t_\t_\t_\t0\n",
    "1 a -1 root\n",
];

const BAD_BRACKETS: &[&str] = &[
    "",
    "   ",
    "()",
    "(X)",
    "hi",
    "(S (NP the)",
    "(S (NP the)))",
    "(S (NP the)) extra",
    "((X a) (Y b))",
    "(( ))",
    ")(",
    "(S ())",
    "(S (NP (DT the) (NN cat)",
];

fn catch<T>(f: impl FnOnce() -> T + std::panic::UnwindSafe) -> std::result::Result<T, String> {
    std::panic::catch_unwind(f).map_err(|_| "parser panicked".to_string())
}

fn parser_round_trip() -> Check {
    use proptest::prelude::*;
    use proptest::test_runner::{Config, TestCaseError, TestRunner};

    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&(any::<u64>(), 1usize..=20), |(seed, n)| {
            let (tree, forms) = dep_case(seed, n);
            let first = tree.to_conllu(&forms);
            let (back, back_forms) = parse_conllu(&first).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back_forms, &forms);
            prop_assert_eq!(back.to_conllu(&back_forms), first);
            Ok(())
        })
        .map_err(|e| format!("CoNLL-U round trip: {e}"))?;
    runner
        .run(&(any::<u64>(), 1usize..=20), |(seed, n)| {
            let (tree, forms) = const_case(seed, n);
            let first = tree.to_bracketed(&forms);
            let (back, back_forms) = parse_bracketed(&first).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(&back_forms, &forms);
            prop_assert_eq!(back.to_bracketed(&back_forms), first);
            Ok(())
        })
        .map_err(|e| format!("bracketed round trip: {e}"))?;

    for bad in BAD_CONLLU {
        ensure(catch(|| parse_conllu(bad))?.is_err(), || format!("CoNLL-U accepted {bad:?}"))?;
    }
    for bad in BAD_BRACKETS {
        ensure(catch(|| parse_bracketed(bad))?.is_err(), || format!("bracket reader accepted {bad:?}"))?;
    }
    for bad in [
        "{",
        r#"{"id":"d","labels":[],"sentences":[]}"#,
        r#"{"id":"d","labels":["a"],"sentences":[{"tokens":["x"],"conllu":"1 y 0 root\n","bracketed":"(X x)"}]}"#,
        r#"{"id":"d","labels":["a"],"sentences":[{"tokens":["x"],"conllu":"1 x 0 root\n","bracketed":"(X x"}]}"#,
    ] {
        ensure(catch(|| read_jsonl(bad.as_bytes()))?.is_err(), || format!("corpus reader accepted {bad:?}"))?;
    }

    // arbitrary text and corrupted valid inputs must come back as values, never panics
    let mut fuzz = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    fuzz.run(&(".{0,60}", any::<u64>(), 1usize..=8), |(text, seed, n)| {
        let (dt, df) = dep_case(seed, n);
        let (ct, cf) = const_case(seed, n);
        let mut r = rng(seed);
        let mut corrupt = |s: String| {
            let mut b = s.into_bytes();
            for _ in 0..r.gen_range(1..=3) {
                let i = r.gen_range(0..b.len());
                match r.gen_range(0..3) {
                    0 => {
                        b.remove(i);
                    }
                    1 => b[i] = b"( )\t\n0x"[r.gen_range(0..7)],
                    _ => b.insert(i, b"()-_ 9"[r.gen_range(0..6)]),
                }
                if b.is_empty() {
                    break;
                }
            }
            String::from_utf8_lossy(&b).into_owned()
        };
        let dep_text = corrupt(dt.to_conllu(&df));
        let const_text = corrupt(ct.to_bracketed(&cf));
        for t in [&text, &dep_text, &const_text] {
            prop_assert!(catch(|| parse_conllu(t)).is_ok());
            prop_assert!(catch(|| parse_bracketed(t)).is_ok());
        }
        Ok(())
    })
    .map_err(|e| format!("fuzzing: {e}"))?;
    Ok(format!(
        "1000 round trips per format; {} malformed cases rejected; 3000 fuzzed inputs handled",
        BAD_CONLLU.len() + BAD_BRACKETS.len() + 4
    ))
}

// 10 ────────────────────────────────────────────────────────────────────────────

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let corpus = dir.path().join("corpus.jsonl");
    let docs = PlantedCorpus::default().generate(1);
    write_jsonl(std::fs::File::create(&corpus).map_err(|e| e.to_string())?, &docs).map_err(err)?;
    let config = TrainConfig {
        task: Task::Binary,
        d: 8,
        gat_heads: 2,
        branches: 2,
        max_epochs: 3,
        lr: 0.01,
        seed: 7,
        ..Default::default()
    };
    let mut outputs = Vec::new();
    for run in ["a", "b"] {
        let opts = Options {
            config: config.clone(),
            corpus: corpus.clone(),
            out: dir.path().join(run),
            model: None,
        };
        sequential(|| cv(&opts)).map_err(err)?;
        outputs.push(std::fs::read(opts.out.join(METRICS_FILE)).map_err(|e| e.to_string())?);
    }
    ensure(outputs[0] == outputs[1], || "metrics JSON differs between runs".into())?;
    let summary: serde_json::Value = serde_json::from_slice(&outputs[0]).map_err(|e| e.to_string())?;
    ensure(summary["per_fold"].as_array().map(Vec::len) == Some(10), || "expected 10 folds".into())?;
    Ok(format!("two 10-fold runs, {} identical bytes of metrics JSON", outputs[0].len()))
}

fn main() {
    let criteria: [(&str, fn() -> Check); 10] = [
        ("gradient fidelity", gradient_fidelity),
        ("GAT oracle equivalence", gat_oracle),
        ("attention normalisation", normalisation),
        ("selection semantics", selection_semantics),
        ("two-pass identity", two_pass_identity),
        ("end-to-end learnability", learnability),
        ("chunk-analysis signal", chunk_signal),
        ("ablation harness", ablation_harness),
        ("parser round trip", parser_round_trip),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = catch(check).and_then(|r| r);
        let t = start.elapsed();
        match result {
            Ok(detail) => println!("PASS  {:>2} {name}: {detail} [{t:.1?}]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {:>2} {name}: {detail} [{t:.1?}]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
