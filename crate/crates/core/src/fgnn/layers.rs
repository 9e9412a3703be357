use std::rc::Rc;

use super::{EdgeWeight, GraphBatchView, ModelConfig, ModelParams, ParamVars, ReadoutMode};
use crate::error::{Error, Result};
use crate::graphs::BcsGraph;
use crate::ingest::ItemIndex;
use crate::tensor::{gru_cell, GruVars, Tape, Var};

/// Node map `W` (`d_h × d_in`) and attention vector `W_att` (`2·d_h + 1`)
/// of one attention head.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub weight: Var,
    pub att: Var,
}

/// Rows of the embedding table for the given nodes.
pub fn embed(tape: &Tape<'_>, embedding: Var, nodes: &[ItemIndex]) -> Result<Var> {
    tape.gather_rows(embedding, nodes)
}

pub struct WgatOutput {
    pub features: Var,
    /// Per head, the attention coefficient of every edge of the view, in
    /// view edge order.
    pub attention: Vec<Var>,
}

/// One weighted graph attention layer.
///
/// For each head, `e_ij = LeakyReLU(W_att · [W x_i ‖ W x_j ‖ w_ij])` over the
/// in-neighbours `j` of `i`, normalized by a softmax within `N(i)`, and the
/// head aggregates `Σ_j α_ij W x_j`. With `mean_heads` the heads are averaged
/// and passed through ReLU; otherwise each head goes through ReLU and the
/// results are concatenated.
pub fn wgat_layer(
    tape: &Tape<'_>,
    view: &GraphBatchView,
    x: Var,
    heads: &[HeadVars],
    mean_heads: bool,
    leaky_slope: f64,
    edge_weight: EdgeWeight,
) -> Result<WgatOutput> {
    let n = view.len();
    let xs = tape.shape(x);
    if xs.len() != 2 || xs[0] != n {
        return Err(Error::shape("wgat_layer", &xs, &[n]));
    }
    if heads.is_empty() {
        return Err(Error::Config("attention layer without heads".into()));
    }
    let e = view.num_edges();
    let weights: Vec<f64> = view
        .edge_weight()
        .iter()
        .map(|&w| edge_weight.apply(w))
        .collect();
    let wcol = tape.constant(&[e, 1], weights)?;
    let groups: Rc<[Vec<usize>]> = view.in_groups().into();

    let mut outputs = Vec::with_capacity(heads.len());
    let mut attention = Vec::with_capacity(heads.len());
    for head in heads {
        let h = tape.matmul(x, tape.transpose(head.weight)?)?;
        let dh = tape.shape(h)[1];
        let att_len = tape.shape(head.att).iter().product::<usize>();
        if att_len != 2 * dh + 1 {
            return Err(Error::shape("wgat_layer", &[2 * dh + 1], &[att_len]));
        }
        let h_dst = tape.gather_rows(h, view.edge_dst())?;
        let h_src = tape.gather_rows(h, view.edge_src())?;
        let pair = tape.concat(&[h_dst, h_src, wcol], 1)?;
        let att = tape.reshape(head.att, &[2 * dh + 1, 1])?;
        let logits = tape.leaky_relu(tape.matmul(pair, att)?, leaky_slope);
        let logits = tape.reshape(logits, &[e])?;
        let alpha = tape.group_softmax(logits, groups.clone())?;
        let messages = tape.scale_rows(h_src, alpha)?;
        let agg = tape.scatter_add_rows(messages, view.edge_dst(), n)?;
        outputs.push(if mean_heads { agg } else { tape.relu(agg) });
        attention.push(alpha);
    }
    let features = if mean_heads {
        let mut acc = outputs[0];
        for &o in &outputs[1..] {
            acc = tape.add(acc, o)?;
        }
        tape.relu(tape.scale(acc, 1.0 / heads.len() as f64))
    } else {
        tape.concat(&outputs, 1)?
    };
    Ok(WgatOutput {
        features,
        attention,
    })
}

/// Node feature encoder run between the embedding lookup and the readout.
pub trait NodeEncoder {
    fn encode(&self, tape: &Tape<'_>, view: &GraphBatchView, x: Var) -> Result<Var>;
}

/// The stacked attention layers of a model.
pub struct Wgat<'v> {
    pub layers: &'v [Vec<HeadVars>],
    pub config: &'v ModelConfig,
}

impl Wgat<'_> {
    /// Runs every layer and keeps each layer's attention coefficients.
    pub fn encode_with_attention(
        &self,
        tape: &Tape<'_>,
        view: &GraphBatchView,
        mut x: Var,
    ) -> Result<(Var, Vec<Vec<Var>>)> {
        let mut attention = Vec::with_capacity(self.layers.len());
        for (l, heads) in self.layers.iter().enumerate() {
            let out = wgat_layer(
                tape,
                view,
                x,
                heads,
                self.config.is_mean_layer(l),
                self.config.leaky_slope,
                self.config.edge_weight,
            )?;
            x = out.features;
            attention.push(out.attention);
        }
        Ok((x, attention))
    }
}

impl NodeEncoder for Wgat<'_> {
    fn encode(&self, tape: &Tape<'_>, view: &GraphBatchView, x: Var) -> Result<Var> {
        Ok(self.encode_with_attention(tape, view, x)?.0)
    }
}

/// Recurrent attention pooling, one `2d` row per graph of the view.
///
/// Starting from `q*₀ = 0` and a zero recurrent state, each step computes
/// `q_t = GRU(q*_{t−1})`, scores every eligible node by `x_i · q_t`,
/// normalizes within its graph, and sets `q*_t = q_t ‖ Σ a_i x_i`. Mask mode
/// restricts the eligible nodes to the core.
pub fn readout(
    tape: &Tape<'_>,
    view: &GraphBatchView,
    x: Var,
    gru: &GruVars,
    steps: usize,
    mode: ReadoutMode,
) -> Result<Var> {
    let xs = tape.shape(x);
    if xs.len() != 2 || xs[0] != view.len() {
        return Err(Error::shape("readout", &xs, &[view.len()]));
    }
    if steps == 0 {
        return Err(Error::Config("readout needs at least one step".into()));
    }
    let d = xs[1];
    let b = view.num_graphs();
    let groups: Rc<[Vec<usize>]> = view.readout_groups(mode == ReadoutMode::Mask)?.into();
    let mut q_star = tape.zeros(&[b, 2 * d]);
    let mut hidden = tape.zeros(&[b, d]);
    for _ in 0..steps {
        hidden = gru_cell(tape, q_star, hidden, gru)?;
        let q_nodes = tape.gather_rows(hidden, view.graph_of_node())?;
        let scores = tape.sum_axis(tape.mul(x, q_nodes)?, 1)?;
        let a = tape.group_softmax(scores, groups.clone())?;
        let r = tape.scatter_add_rows(tape.scale_rows(x, a)?, view.graph_of_node(), b)?;
        q_star = tape.concat(&[hidden, r], 1)?;
    }
    Ok(q_star)
}

/// Logits `(W_out q*)ᵀ X⁰` over all items, one row per graph.
pub fn score(tape: &Tape<'_>, q_star: Var, output: Var, embedding: Var) -> Result<Var> {
    let projected = tape.matmul(q_star, tape.transpose(output)?)?;
    tape.matmul(projected, tape.transpose(embedding)?)
}

/// Summed cross-entropy `−Σ log softmax(z_b)[label_b]`.
pub fn loss(tape: &Tape<'_>, logits: Var, labels: &[ItemIndex]) -> Result<Var> {
    tape.log_softmax_nll(logits, labels)
}

/// Item logits for every graph of the view.
pub fn forward_logits(
    tape: &Tape<'_>,
    view: &GraphBatchView,
    vars: &ParamVars,
    config: &ModelConfig,
) -> Result<Var> {
    let x0 = embed(tape, vars.embedding, view.items())?;
    let encoder = Wgat {
        layers: &vars.layers,
        config,
    };
    let x = encoder.encode(tape, view, x0)?;
    let q_star = readout(
        tape,
        view,
        x,
        &vars.gru,
        config.readout_steps,
        config.readout_mode,
    )?;
    score(tape, q_star, vars.output, vars.embedding)
}

/// Summed loss of a batch of graphs against their labels.
pub fn batch_loss(
    tape: &Tape<'_>,
    views: &[GraphBatchView],
    labels: &[ItemIndex],
    vars: &ParamVars,
    config: &ModelConfig,
) -> Result<Var> {
    if views.len() != labels.len() {
        return Err(Error::shape("batch_loss", &[views.len()], &[labels.len()]));
    }
    let view = GraphBatchView::batch(views)?;
    let logits = forward_logits(tape, &view, vars, config)?;
    loss(tape, logits, labels)
}

/// Probability of every item as the next click after the session behind
/// `graph`.
pub fn forward(graph: &BcsGraph, params: &ModelParams) -> Result<Vec<f64>> {
    let view = GraphBatchView::from_bcs(graph)?;
    let tape = Tape::new();
    let vars = params.bind(&tape);
    let logits = forward_logits(&tape, &view, &vars, params.config())?;
    Ok(tape.value(tape.softmax_rows(logits)?))
}
