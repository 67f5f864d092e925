//! Document-level attention pooling over chunk embeddings.
//!
//! A bidirectional LSTM runs over the sequence of chunk vectors. Each step's
//! directional outputs are concatenated into o_i (2H); the two directions'
//! final hidden states concatenate into a single context vector h (2H).
//! Attention scores are the dot products o_i·h, softmaxed over the chunk
//! axis, and the document vector is the attention-weighted sum of the chunk
//! vectors divided by the chunk count (the division is kept verbatim from the
//! method definition; `normalize_by_chunks = false` gives the plain weighted
//! sum for ablation).

use numcore::{DetRng, NodeId, ParamSet, Tape, Tensor};

use crate::error::{FetildaError, Result};

pub const PARAM_PREFIX: &str = "lstm.";

const GATES: [&str; 4] = ["i", "f", "g", "o"];
const DIRS: [&str; 2] = ["fwd", "bwd"];

/// A pooled document: the vector, and the attention weight per chunk.
#[derive(Debug, Clone)]
pub struct DocEmbedding {
    pub doc_id: String,
    pub vector: Tensor,
    pub attention: Vec<f64>,
}

/// Initialize Bi-LSTM gate parameters for input width `dim` and per-direction
/// hidden width `hidden`.
pub fn init_params(dim: usize, hidden: usize, rng: &mut DetRng, params: &mut ParamSet) {
    let std = 0.02;
    for dir in DIRS {
        for gate in GATES {
            params.insert(
                format!("lstm.{dir}.{gate}.wx"),
                rng.tensor_normal(&[dim, hidden], std),
            );
            params.insert(
                format!("lstm.{dir}.{gate}.wh"),
                rng.tensor_normal(&[hidden, hidden], std),
            );
            params.insert(format!("lstm.{dir}.{gate}.b"), Tensor::zeros(&[hidden]));
        }
    }
}

struct GateWeights {
    wx: NodeId,
    wh: NodeId,
    b: NodeId,
}

fn bind_gates(tape: &mut Tape, params: &ParamSet, dir: &str) -> Result<Vec<GateWeights>> {
    GATES
        .iter()
        .map(|gate| {
            Ok(GateWeights {
                wx: tape.bind_param(params, &format!("lstm.{dir}.{gate}.wx"))?,
                wh: tape.bind_param(params, &format!("lstm.{dir}.{gate}.wh"))?,
                b: tape.bind_param(params, &format!("lstm.{dir}.{gate}.b"))?,
            })
        })
        .collect()
}

fn gate_preact(
    tape: &mut Tape,
    x: NodeId,
    h: NodeId,
    w: &GateWeights,
) -> Result<NodeId> {
    let xw = {
        let in_dim = tape.value(x).numel();
        let row = tape.reshape(x, &[1, in_dim])?;
        tape.matmul(row, w.wx)?
    };
    let hw = {
        let hdim = tape.value(h).numel();
        let row = tape.reshape(h, &[1, hdim])?;
        tape.matmul(row, w.wh)?
    };
    let sum = tape.add(xw, hw)?;
    let sum = tape.add_bias(sum, w.b)?;
    let out_dim = tape.value(sum).shape()[1];
    tape.reshape(sum, &[out_dim]).map_err(Into::into)
}

/// One direction of LSTM recurrence over `inputs`; returns per-step hidden
/// outputs and the final hidden state.
fn lstm_direction(
    tape: &mut Tape,
    params: &ParamSet,
    inputs: &[NodeId],
    hidden: usize,
    dir: &str,
) -> Result<(Vec<NodeId>, NodeId)> {
    let gates = bind_gates(tape, params, dir)?;
    let mut h = tape.leaf(Tensor::zeros(&[hidden]));
    let mut c = tape.leaf(Tensor::zeros(&[hidden]));
    let mut outputs = Vec::with_capacity(inputs.len());
    for &x in inputs {
        let i_pre = gate_preact(tape, x, h, &gates[0])?;
        let f_pre = gate_preact(tape, x, h, &gates[1])?;
        let g_pre = gate_preact(tape, x, h, &gates[2])?;
        let o_pre = gate_preact(tape, x, h, &gates[3])?;
        let i = tape.sigmoid(i_pre);
        let f = tape.sigmoid(f_pre);
        let g = tape.tanh(g_pre);
        let o = tape.sigmoid(o_pre);
        let fc = tape.mul(f, c)?;
        let ig = tape.mul(i, g)?;
        c = tape.add(fc, ig)?;
        let ct = tape.tanh(c);
        h = tape.mul(o, ct)?;
        outputs.push(h);
    }
    Ok((outputs, h))
}

/// Bidirectional LSTM over a chunk-vector sequence. Returns per-step
/// concatenated outputs o_1..m (each 2H) and the concatenated final hidden
/// state h (2H).
pub fn bilstm_forward_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    inputs: &[NodeId],
    hidden: usize,
) -> Result<(Vec<NodeId>, NodeId)> {
    if inputs.is_empty() {
        return Err(FetildaError::DocPool("empty chunk sequence".into()));
    }
    let (fwd_out, fwd_h) = lstm_direction(tape, params, inputs, hidden, "fwd")?;
    let reversed: Vec<NodeId> = inputs.iter().rev().copied().collect();
    let (bwd_out_rev, bwd_h) = lstm_direction(tape, params, &reversed, hidden, "bwd")?;
    let m = inputs.len();
    let mut outputs = Vec::with_capacity(m);
    for t in 0..m {
        // Backward outputs come in reversed step order.
        let o = tape.concat(&[fwd_out[t], bwd_out_rev[m - 1 - t]], 0)?;
        outputs.push(o);
    }
    let h = tape.concat(&[fwd_h, bwd_h], 0)?;
    Ok((outputs, h))
}

/// Attention pooling: scores s_j = o_j·h, α = softmax(s),
/// d = Σ α_j c_j (divided by m when `normalize_by_chunks`).
pub fn attention_pool_on_tape(
    tape: &mut Tape,
    chunk_vectors: &[NodeId],
    outputs: &[NodeId],
    context: NodeId,
    normalize_by_chunks: bool,
) -> Result<(NodeId, NodeId)> {
    let m = chunk_vectors.len();
    if m == 0 || outputs.len() != m {
        return Err(FetildaError::DocPool(format!(
            "attention pooling needs matching chunk/output counts, got {m}/{}",
            outputs.len()
        )));
    }
    let stacked_o = tape.stack_rows(outputs)?;
    let ctx_dim = tape.value(context).numel();
    let ctx_col = tape.reshape(context, &[ctx_dim, 1])?;
    let scores_col = tape.matmul(stacked_o, ctx_col)?;
    let scores = tape.reshape(scores_col, &[m])?;
    let alpha = tape.softmax(scores)?;
    let stacked_c = tape.stack_rows(chunk_vectors)?;
    let alpha_row = tape.reshape(alpha, &[1, m])?;
    let weighted = tape.matmul(alpha_row, stacked_c)?;
    let dim = tape.value(weighted).shape()[1];
    let mut doc = tape.reshape(weighted, &[dim])?;
    if normalize_by_chunks {
        doc = tape.scale(doc, 1.0 / m as f64);
    }
    Ok((doc, alpha))
}

/// Bi-LSTM then attention pooling in one call.
pub fn pool_document_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    chunk_vectors: &[NodeId],
    hidden: usize,
    normalize_by_chunks: bool,
) -> Result<(NodeId, NodeId)> {
    let (outputs, h) = bilstm_forward_on_tape(tape, params, chunk_vectors, hidden)?;
    attention_pool_on_tape(tape, chunk_vectors, &outputs, h, normalize_by_chunks)
}

/// Evaluation path over plain tensors.
pub fn pool_document(
    params: &ParamSet,
    doc_id: &str,
    chunk_vectors: &[Tensor],
    hidden: usize,
    normalize_by_chunks: bool,
) -> Result<DocEmbedding> {
    let mut tape = Tape::new_eval();
    let nodes: Vec<NodeId> = chunk_vectors.iter().map(|t| tape.leaf(t.clone())).collect();
    let (doc, alpha) = pool_document_on_tape(&mut tape, params, &nodes, hidden, normalize_by_chunks)?;
    Ok(DocEmbedding {
        doc_id: doc_id.to_string(),
        vector: tape.value(doc).clone(),
        attention: tape.value(alpha).data().to_vec(),
    })
}

/// Evaluation-path Bi-LSTM over plain tensors.
pub fn bilstm_forward(
    params: &ParamSet,
    inputs: &[Tensor],
    hidden: usize,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut tape = Tape::new_eval();
    let nodes: Vec<NodeId> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let (outputs, h) = bilstm_forward_on_tape(&mut tape, params, &nodes, hidden)?;
    Ok((
        outputs.iter().map(|&id| tape.value(id).clone()).collect(),
        tape.value(h).clone(),
    ))
}

/// Evaluation-path attention pooling over plain tensors.
pub fn attention_pool(
    chunk_vectors: &[Tensor],
    outputs: &[Tensor],
    context: &Tensor,
    normalize_by_chunks: bool,
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new_eval();
    let c_nodes: Vec<NodeId> = chunk_vectors.iter().map(|t| tape.leaf(t.clone())).collect();
    let o_nodes: Vec<NodeId> = outputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let ctx = tape.leaf(context.clone());
    let (doc, alpha) = attention_pool_on_tape(&mut tape, &c_nodes, &o_nodes, ctx, normalize_by_chunks)?;
    Ok((tape.value(doc).clone(), tape.value(alpha).data().to_vec()))
}

/// CSV dump of attention weights: `doc_id,chunk_index,alpha`.
pub fn attention_dump_csv(docs: &[DocEmbedding]) -> String {
    let mut out = String::from("doc_id,chunk_index,alpha\n");
    for d in docs {
        for (i, a) in d.attention.iter().enumerate() {
            out.push_str(&format!("{},{},{}\n", d.doc_id, i, a));
        }
    }
    out
}
