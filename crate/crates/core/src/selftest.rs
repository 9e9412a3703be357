//! Fast invariant checks runnable from the command line on any build.

use std::collections::BTreeSet;

use rand::Rng;

use crate::error::Result;
use crate::eval::{mrr_at_k, rank_of_label, recall_at_k, RankedList};
use crate::fgnn::{
    batch_loss, embed, readout, GraphBatchView, ModelConfig, ModelParams, ParamVars, ReadoutMode,
    Wgat,
};
use crate::graphs::{
    build_global_graph, build_session_graph, sample_bcs, weighted_sample_without_replacement,
};
use crate::ingest::{augment, Session};
use crate::rng;
use crate::tensor::{grad_check_many, Tape, Tensor};

type Check = fn() -> Result<(bool, String)>;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn toy_corpus() -> Vec<Session> {
    [
        vec![0, 1, 2, 3],
        vec![1, 4, 5],
        vec![2, 6, 7, 1],
        vec![3, 8, 9, 0],
        vec![5, 6, 0],
        vec![7, 7, 8],
    ]
    .into_iter()
    .map(|s| Session::new(s, 0.0))
    .collect()
}

fn toy_config(mode: ReadoutMode) -> ModelConfig {
    ModelConfig {
        dim: 4,
        layers: 2,
        heads: 2,
        readout_steps: 2,
        readout_mode: mode,
        ..ModelConfig::default()
    }
}

fn gradient_check() -> Result<(bool, String)> {
    let global = build_global_graph(&toy_corpus());
    let bcs = sample_bcs(&global, &[0, 1], 1, 2, 3)?;
    let views = vec![GraphBatchView::from_bcs(&bcs)?];
    let config = toy_config(ReadoutMode::Mask);
    let params = ModelParams::init(&config, 10, 0.5, 21)?;
    let points: Vec<Tensor> = params.tensors().iter().map(|(_, t)| t.clone()).collect();
    let err = grad_check_many(
        |tape, v| {
            let vars = ParamVars::from_vars(&config, v)?;
            batch_loss(tape, &views, &[4], &vars, &config)
        },
        &points,
        1e-5,
    )?;
    Ok((
        err < 1e-4,
        format!("max relative error {err:.2e} on {} nodes", bcs.nodes.len()),
    ))
}

fn mask_readout() -> Result<(bool, String)> {
    let global = build_global_graph(&toy_corpus());
    let bcs = sample_bcs(&global, &[1, 4], 1, 5, 7)?;
    let view = GraphBatchView::from_bcs(&bcs)?;
    let config = toy_config(ReadoutMode::Mask);
    let params = ModelParams::init(&config, 10, 0.5, 2)?;
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let x0 = embed(&tape, vars.embedding, view.items())?;
    let x = crate::fgnn::NodeEncoder::encode(
        &Wgat {
            layers: &vars.layers,
            config: &config,
        },
        &tape,
        &view,
        x0,
    )?;
    let mut perturbed = tape.value(x);
    for (i, &core) in view.core_mask().iter().enumerate() {
        if !core {
            perturbed[i * 4..i * 4 + 4]
                .iter_mut()
                .for_each(|v| *v += 1.5);
        }
    }
    let xp = tape.constant(&[view.len(), 4], perturbed)?;
    let diff = |mode| -> Result<f64> {
        let a = tape.value(readout(&tape, &view, x, &vars.gru, 2, mode)?);
        let b = tape.value(readout(&tape, &view, xp, &vars.gru, 2, mode)?);
        Ok(a.iter()
            .zip(&b)
            .map(|(p, q)| (p - q).abs())
            .fold(0.0, f64::max))
    };
    let (mask, plain) = (diff(ReadoutMode::Mask)?, diff(ReadoutMode::Plain)?);
    Ok((
        mask == 0.0 && plain > 0.0,
        format!("mask change {mask:e}, plain change {plain:.3e}"),
    ))
}

fn attention_normalization() -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    let mut off_mask_ok = true;
    for trial in 0..200u64 {
        let mut r = rng::stream(trial, &[0xA77]);
        let n = r.gen_range(1..=6);
        let mut edges: BTreeSet<(usize, usize)> = (0..n).map(|i| (i, i)).collect();
        for _ in 0..r.gen_range(0..10) {
            edges.insert((r.gen_range(0..n), r.gen_range(0..n)));
        }
        let list: Vec<(usize, usize, f64)> = edges
            .iter()
            .map(|&(s, d)| (s, d, r.gen_range(1..5) as f64))
            .collect();
        let view = GraphBatchView::new((0..n).collect(), &list, vec![true; n])?;
        let config = toy_config(ReadoutMode::Plain);
        let params = ModelParams::init(&config, 6, 1.0, trial)?;
        let tape = Tape::new();
        let vars = params.bind(&tape);
        let x0 = embed(&tape, vars.embedding, view.items())?;
        let (_, att) = Wgat {
            layers: &vars.layers,
            config: &config,
        }
        .encode_with_attention(&tape, &view, x0)?;
        for alpha in att.iter().flatten().map(|&a| tape.value(a)) {
            for g in view.in_groups() {
                worst = worst.max((g.iter().map(|&e| alpha[e]).sum::<f64>() - 1.0).abs());
            }
        }
        let row = tape.constant(&[n], (0..n).map(|_| r.gen_range(-5.0..5.0)).collect())?;
        let mut mask: Vec<bool> = (0..n).map(|_| r.gen()).collect();
        mask[0] = true;
        let s = tape.value(tape.masked_softmax(row, &mask)?);
        off_mask_ok &= s.iter().zip(&mask).all(|(v, &m)| m || *v == 0.0);
    }
    Ok((
        worst < 1e-12 && off_mask_ok,
        format!("worst row-sum error {worst:.1e}"),
    ))
}

fn bcs_structure() -> Result<(bool, String)> {
    let corpus = toy_corpus();
    let global = build_global_graph(&corpus);
    let mut ok = true;
    for (k, s) in corpus.iter().enumerate() {
        let seed = k as u64;
        let b0 = sample_bcs(&global, &s.items, 0, 5, seed)?;
        let distinct: BTreeSet<usize> = s.items.iter().copied().collect();
        ok &= b0.nodes.iter().copied().collect::<BTreeSet<_>>() == distinct;
        let b1 = sample_bcs(&global, &s.items, 1, 2, seed)?;
        let b2 = sample_bcs(&global, &s.items, 2, 2, seed)?;
        ok &= b1.nodes.iter().all(|v| b2.nodes.contains(v));
        let single = build_global_graph(std::slice::from_ref(s));
        let sg = build_session_graph(&s.items)?;
        ok &= single
            .edges()
            .map(|(a, b, w)| ((a, b), w))
            .collect::<std::collections::BTreeMap<_, _>>()
            == sg.edges;
    }
    let mut r = rng::stream(11, &[]);
    let hits = (0..10_000)
        .filter(|_| weighted_sample_without_replacement(&[3.0, 1.0], 1, &mut r) == [0])
        .count();
    let freq = hits as f64 / 10_000.0;
    ok &= (freq - 0.75).abs() <= 0.02;
    Ok((ok, format!("weighted draw frequency {freq:.4}")))
}

fn metric_oracle() -> Result<(bool, String)> {
    let mut r = rng::stream(5, &[]);
    let mut ok = true;
    for _ in 0..1000 {
        let m = r.gen_range(1..40);
        let scores: Vec<f64> = (0..m).map(|_| r.gen_range(0..6) as f64).collect();
        let label = r.gen_range(0..m);
        let k = r.gen_range(1..25);
        let rank = rank_of_label(&scores, label);
        let ranked = RankedList::from_scores(&scores, Some(k));
        let (rec, mrr) = (recall_at_k(&ranked, label, k), mrr_at_k(&ranked, label, k));
        let expected = if rank <= k {
            (1.0, 1.0 / rank as f64)
        } else {
            (0.0, 0.0)
        };
        ok &= (rec, mrr) == expected && mrr <= rec;
    }
    let long = RankedList {
        items: (0..30).collect(),
    };
    ok &= mrr_at_k(&long, 3, 20) == 0.25 && mrr_at_k(&long, 20, 20) == 0.0;
    Ok((ok, "1000 random rankings".into()))
}

fn augmentation() -> Result<(bool, String)> {
    let mut ok = true;
    for n in 2..12 {
        let s = Session::new((0..n).collect(), 0.0);
        ok &= augment(&s)?.len() == n - 1;
    }
    Ok((ok, "lengths 2..12".into()))
}

/// Runs every check; a check that errors counts as failed.
pub fn run_all() -> Vec<CheckOutcome> {
    let checks: [(&'static str, Check); 6] = [
        ("gradient fidelity", gradient_check),
        ("mask readout exactness", mask_readout),
        ("attention normalization", attention_normalization),
        ("bcs structure", bcs_structure),
        ("metric oracle", metric_oracle),
        ("augmentation count", augmentation),
    ];
    checks
        .iter()
        .map(|&(name, f)| match f() {
            Ok((passed, detail)) => CheckOutcome {
                name,
                passed,
                detail,
            },
            Err(e) => CheckOutcome {
                name,
                passed: false,
                detail: e.to_string(),
            },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn suite_passes() {
        for c in super::run_all() {
            assert!(c.passed, "{}: {}", c.name, c.detail);
        }
    }
}
