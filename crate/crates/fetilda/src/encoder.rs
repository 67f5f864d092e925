//! Chunk encoder: a trainable transformer encoder producing one fixed-width
//! embedding per chunk, or precomputed embeddings loaded from file.
//!
//! The forward pass is the standard stack: token + learned positional
//! embeddings, per-layer multi-head self-attention with the chunk's padding
//! mask (pad keys get probability exactly zero), residual + layer norm, and a
//! feed-forward block. Five pooling strategies turn hidden states into the
//! chunk embedding; pad positions are excluded from pooled means and maxes so
//! padding content can never leak into the embedding.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use numcore::{DetRng, NodeId, ParamSet, Tape, Tensor};

use crate::chunker::Chunk;
use crate::error::{FetildaError, Result};

/// Chunk-embedding pooling strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pooling {
    /// Processed, tanh-activated `<CLS>` state of the last layer.
    DefaultPooler,
    /// Mean over valid positions of the second-to-last layer, then tanh.
    MeanPenultimate,
    /// Per-layer mean over the last four layers, averaged, then tanh.
    MeanLast4,
    /// Max over valid positions of the second-to-last layer, then tanh.
    MaxPenultimate,
    /// Per-layer max over the last four layers, elementwise max, then tanh.
    MaxLast4,
}

impl std::str::FromStr for Pooling {
    type Err = FetildaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "default_pooler" => Ok(Pooling::DefaultPooler),
            "mean_penultimate" => Ok(Pooling::MeanPenultimate),
            "mean_last4" => Ok(Pooling::MeanLast4),
            "max_penultimate" => Ok(Pooling::MaxPenultimate),
            "max_last4" => Ok(Pooling::MaxLast4),
            other => Err(FetildaError::Encoder(format!("unknown pooling '{other}'"))),
        }
    }
}

/// Which encoder parameters stay out of gradient updates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Freeze {
    None,
    All,
    LastLayer,
}

impl std::str::FromStr for Freeze {
    type Err = FetildaError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Freeze::None),
            "all" => Ok(Freeze::All),
            "last_layer" => Ok(Freeze::LastLayer),
            other => Err(FetildaError::Encoder(format!("unknown freeze mode '{other}'"))),
        }
    }
}

/// Encoder hyperparameters. Paper-era scale (12 layers, 768 wide) is
/// expressible; desk-scale defaults keep tests fast.
#[derive(Debug, Clone)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub max_positions: usize,
    pub pooling: Pooling,
    pub freeze: Freeze,
}

impl EncoderConfig {
    pub fn desk_default(vocab_size: usize) -> Self {
        EncoderConfig {
            vocab_size,
            dim: 64,
            layers: 2,
            heads: 4,
            ff_dim: 128,
            max_positions: 512,
            pooling: Pooling::DefaultPooler,
            freeze: Freeze::None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim % self.heads != 0 {
            return Err(FetildaError::Encoder(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.layers == 0 || self.dim == 0 || self.heads == 0 {
            return Err(FetildaError::Encoder("zero-sized encoder".into()));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

/// One chunk's embedding vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkEmbedding {
    pub doc_id: String,
    pub index: u32,
    pub vector: Tensor,
}

pub const PARAM_PREFIX: &str = "enc.";

fn layer_prefix(layer: usize) -> String {
    format!("enc.layer{layer:02}.")
}

/// Initialize all encoder parameters (N(0, 0.02) weights, zero biases,
/// unit layer-norm gains) under the `enc.` prefix.
pub fn init_params(cfg: &EncoderConfig, rng: &mut DetRng, params: &mut ParamSet) -> Result<()> {
    cfg.validate()?;
    let std = 0.02;
    let d = cfg.dim;
    let dk = cfg.head_dim();
    params.insert("enc.tok_embed", rng.tensor_normal(&[cfg.vocab_size, d], std));
    params.insert("enc.pos_embed", rng.tensor_normal(&[cfg.max_positions, d], std));
    for l in 0..cfg.layers {
        let p = layer_prefix(l);
        for h in 0..cfg.heads {
            params.insert(format!("{p}head{h:02}.wq"), rng.tensor_normal(&[d, dk], std));
            params.insert(format!("{p}head{h:02}.wk"), rng.tensor_normal(&[d, dk], std));
            params.insert(format!("{p}head{h:02}.wv"), rng.tensor_normal(&[d, dk], std));
        }
        params.insert(format!("{p}attn.wo"), rng.tensor_normal(&[d, d], std));
        params.insert(format!("{p}attn.bo"), Tensor::zeros(&[d]));
        params.insert(format!("{p}ln1.gamma"), Tensor::filled(&[d], 1.0));
        params.insert(format!("{p}ln1.beta"), Tensor::zeros(&[d]));
        params.insert(format!("{p}ff.w1"), rng.tensor_normal(&[d, cfg.ff_dim], std));
        params.insert(format!("{p}ff.b1"), Tensor::zeros(&[cfg.ff_dim]));
        params.insert(format!("{p}ff.w2"), rng.tensor_normal(&[cfg.ff_dim, d], std));
        params.insert(format!("{p}ff.b2"), Tensor::zeros(&[d]));
        params.insert(format!("{p}ln2.gamma"), Tensor::filled(&[d], 1.0));
        params.insert(format!("{p}ln2.beta"), Tensor::zeros(&[d]));
    }
    params.insert("enc.pooler.w", rng.tensor_normal(&[d, d], std));
    params.insert("enc.pooler.b", Tensor::zeros(&[d]));
    Ok(())
}

/// Set trainability flags for encoder parameters (parameters outside the
/// `enc.` prefix are untouched).
pub fn apply_freeze(params: &mut ParamSet, mode: Freeze, num_layers: usize) {
    let last = layer_prefix(num_layers.saturating_sub(1));
    let frozen: Vec<String> = params
        .names()
        .filter(|n| n.starts_with(PARAM_PREFIX))
        .filter(|n| match mode {
            Freeze::None => false,
            Freeze::All => true,
            Freeze::LastLayer => n.starts_with(&last),
        })
        .cloned()
        .collect();
    for name in frozen {
        if let Some(p) = params.get_mut(&name) {
            p.trainable = false;
        }
    }
}

const LN_EPS: f64 = 1e-5;
const LEAKY_SLOPE: f64 = 0.01;

/// Transformer forward pass for one chunk on an existing tape.
///
/// Returns the per-layer hidden states (`layers × [b+2, dim]`) and the
/// pooler output (`[dim]`, the processed and tanh-activated `<CLS>` state).
pub fn encode_chunk_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &EncoderConfig,
    chunk: &Chunk,
) -> Result<(Vec<NodeId>, NodeId)> {
    cfg.validate()?;
    let t_len = chunk.ids.len();
    if t_len > cfg.max_positions {
        return Err(FetildaError::Encoder(format!(
            "chunk length {t_len} exceeds max_positions {}",
            cfg.max_positions
        )));
    }
    if let Some(&bad) = chunk.ids.iter().find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(FetildaError::Encoder(format!(
            "token id {bad} outside vocabulary of size {}",
            cfg.vocab_size
        )));
    }

    let ids: Vec<usize> = chunk.ids.iter().map(|&i| i as usize).collect();
    let positions: Vec<usize> = (0..t_len).collect();
    let tok_embed = tape.bind_param(params, "enc.tok_embed")?;
    let pos_embed = tape.bind_param(params, "enc.pos_embed")?;
    let tok = tape.gather_rows(tok_embed, &ids)?;
    let pos = tape.gather_rows(pos_embed, &positions)?;
    let mut x = tape.add(tok, pos)?;

    let scale = 1.0 / (cfg.head_dim() as f64).sqrt();
    let mut layer_outputs = Vec::with_capacity(cfg.layers);
    for l in 0..cfg.layers {
        let p = layer_prefix(l);
        // Multi-head self-attention; pad keys are masked out entirely.
        let mut head_ctx = Vec::with_capacity(cfg.heads);
        for h in 0..cfg.heads {
            let wq = tape.bind_param(params, &format!("{p}head{h:02}.wq"))?;
            let wk = tape.bind_param(params, &format!("{p}head{h:02}.wk"))?;
            let wv = tape.bind_param(params, &format!("{p}head{h:02}.wv"))?;
            let q = tape.matmul(x, wq)?;
            let k = tape.matmul(x, wk)?;
            let v = tape.matmul(x, wv)?;
            let kt = tape.transpose(k)?;
            let raw = tape.matmul(q, kt)?;
            let scaled = tape.scale(raw, scale);
            let probs = tape.masked_softmax(scaled, &chunk.mask)?;
            head_ctx.push(tape.matmul(probs, v)?);
        }
        let ctx = tape.concat(&head_ctx, 1)?;
        let wo = tape.bind_param(params, &format!("{p}attn.wo"))?;
        let bo = tape.bind_param(params, &format!("{p}attn.bo"))?;
        let proj = tape.matmul(ctx, wo)?;
        let proj = tape.add_bias(proj, bo)?;
        let res1 = tape.add(x, proj)?;
        let g1 = tape.bind_param(params, &format!("{p}ln1.gamma"))?;
        let b1 = tape.bind_param(params, &format!("{p}ln1.beta"))?;
        let norm1 = tape.layer_norm(res1, g1, b1, LN_EPS)?;

        let w1 = tape.bind_param(params, &format!("{p}ff.w1"))?;
        let fb1 = tape.bind_param(params, &format!("{p}ff.b1"))?;
        let w2 = tape.bind_param(params, &format!("{p}ff.w2"))?;
        let fb2 = tape.bind_param(params, &format!("{p}ff.b2"))?;
        let ff = tape.matmul(norm1, w1)?;
        let ff = tape.add_bias(ff, fb1)?;
        let ff = tape.leaky_relu(ff, LEAKY_SLOPE);
        let ff = tape.matmul(ff, w2)?;
        let ff = tape.add_bias(ff, fb2)?;
        let res2 = tape.add(norm1, ff)?;
        let g2 = tape.bind_param(params, &format!("{p}ln2.gamma"))?;
        let b2 = tape.bind_param(params, &format!("{p}ln2.beta"))?;
        x = tape.layer_norm(res2, g2, b2, LN_EPS)?;
        layer_outputs.push(x);
    }

    // Pooler: tanh(W · z_cls + b) on the final layer's <CLS> state.
    let cls = tape.gather_rows(x, &[0])?;
    let cls = tape.reshape(cls, &[cfg.dim])?;
    let pw = tape.bind_param(params, "enc.pooler.w")?;
    let pb = tape.bind_param(params, "enc.pooler.b")?;
    let lin = tape.linear(cls, pw, pb)?;
    let pooler = tape.tanh(lin);
    Ok((layer_outputs, pooler))
}

/// Reduce hidden states to the chunk embedding on the tape. `valid` lists
/// the non-pad positions of the chunk (pads never enter the pools).
pub fn pool_chunk_on_tape(
    tape: &mut Tape,
    layer_outputs: &[NodeId],
    pooler: NodeId,
    strategy: Pooling,
    valid: &[usize],
) -> Result<NodeId> {
    let num_layers = layer_outputs.len();
    let pooled = match strategy {
        Pooling::DefaultPooler => return Ok(pooler),
        Pooling::MeanPenultimate | Pooling::MaxPenultimate => {
            if num_layers < 2 {
                return Err(FetildaError::Encoder(format!(
                    "penultimate pooling requires >= 2 layers, have {num_layers}"
                )));
            }
            let states = tape.gather_rows(layer_outputs[num_layers - 2], valid)?;
            if strategy == Pooling::MeanPenultimate {
                tape.mean_axis(states, 0)?
            } else {
                tape.max_axis(states, 0)?
            }
        }
        Pooling::MeanLast4 | Pooling::MaxLast4 => {
            if num_layers < 4 {
                return Err(FetildaError::Encoder(format!(
                    "last-4 pooling requires >= 4 layers, have {num_layers}"
                )));
            }
            let mut per_layer = Vec::with_capacity(4);
            for node in &layer_outputs[num_layers - 4..] {
                let states = tape.gather_rows(*node, valid)?;
                per_layer.push(if strategy == Pooling::MeanLast4 {
                    tape.mean_axis(states, 0)?
                } else {
                    tape.max_axis(states, 0)?
                });
            }
            let stacked = tape.stack_rows(&per_layer)?;
            if strategy == Pooling::MeanLast4 {
                tape.mean_axis(stacked, 0)?
            } else {
                tape.max_axis(stacked, 0)?
            }
        }
    };
    Ok(tape.tanh(pooled))
}

/// Forward + pool on one fresh tape (no gradients): the evaluation path.
pub fn encode_chunk(
    params: &ParamSet,
    cfg: &EncoderConfig,
    chunk: &Chunk,
) -> Result<(Vec<Tensor>, Tensor)> {
    let mut tape = Tape::new_eval();
    let (layers, pooler) = encode_chunk_on_tape(&mut tape, params, cfg, chunk)?;
    let layer_values = layers.iter().map(|&id| tape.value(id).clone()).collect();
    Ok((layer_values, tape.value(pooler).clone()))
}

/// Pool already-computed hidden states (evaluation / test path).
pub fn pool_chunk(
    hidden_states: &[Tensor],
    pooler_out: &Tensor,
    strategy: Pooling,
    valid: &[usize],
) -> Result<Tensor> {
    let mut tape = Tape::new_eval();
    let layer_nodes: Vec<NodeId> = hidden_states.iter().map(|t| tape.leaf(t.clone())).collect();
    let pooler = tape.leaf(pooler_out.clone());
    let out = pool_chunk_on_tape(&mut tape, &layer_nodes, pooler, strategy, valid)?;
    Ok(tape.value(out).clone())
}

/// Embed every chunk of a document (evaluation path).
pub fn embed_chunks(
    params: &ParamSet,
    cfg: &EncoderConfig,
    chunks: &[Chunk],
) -> Result<Vec<ChunkEmbedding>> {
    let mut out = Vec::with_capacity(chunks.len());
    for chunk in chunks {
        let mut tape = Tape::new_eval();
        let (layers, pooler) = encode_chunk_on_tape(&mut tape, params, cfg, chunk)?;
        let pooled =
            pool_chunk_on_tape(&mut tape, &layers, pooler, cfg.pooling, &chunk.valid_positions())?;
        out.push(ChunkEmbedding {
            doc_id: chunk.doc_id.clone(),
            index: chunk.index as u32,
            vector: tape.value(pooled).clone(),
        });
    }
    Ok(out)
}

// ── Precomputed-embedding files (frozen-LM mode) ────────────────────────────

const EMB_MAGIC: &[u8; 4] = b"FEMB";
const EMB_VERSION: u8 = 1;

/// Precomputed chunk embeddings keyed by (doc_id, chunk index).
#[derive(Debug, Clone, Default)]
pub struct EmbeddingStore {
    pub dim: usize,
    map: BTreeMap<(String, u32), Tensor>,
}

impl EmbeddingStore {
    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn get(&self, doc_id: &str, index: u32) -> Result<&Tensor> {
        self.map.get(&(doc_id.to_string(), index)).ok_or_else(|| {
            FetildaError::EmbeddingFile(format!(
                "missing embedding for (doc_id '{doc_id}', chunk {index})"
            ))
        })
    }

    /// All chunk vectors of a document, in index order 0..m.
    pub fn doc_vectors(&self, doc_id: &str, num_chunks: usize) -> Result<Vec<Tensor>> {
        (0..num_chunks as u32)
            .map(|i| self.get(doc_id, i).cloned())
            .collect()
    }
}

/// Write embeddings: magic, version, dim (u32), count (u64), then per record
/// doc_id length (u32) + bytes, chunk index (u32), dim little-endian f64.
pub fn save_embeddings(path: &Path, dim: usize, records: &[ChunkEmbedding]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(EMB_MAGIC)?;
    w.write_all(&[EMB_VERSION])?;
    w.write_all(&(dim as u32).to_le_bytes())?;
    w.write_all(&(records.len() as u64).to_le_bytes())?;
    for rec in records {
        if rec.vector.numel() != dim {
            return Err(FetildaError::EmbeddingFile(format!(
                "embedding for ('{}', {}) has dimension {}, expected {dim}",
                rec.doc_id,
                rec.index,
                rec.vector.numel()
            )));
        }
        let bytes = rec.doc_id.as_bytes();
        w.write_all(&(bytes.len() as u32).to_le_bytes())?;
        w.write_all(bytes)?;
        w.write_all(&rec.index.to_le_bytes())?;
        for &v in rec.vector.data() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an embedding file, validating the dimension against `expected_dim`.
pub fn load_embeddings(path: &Path, expected_dim: usize) -> Result<EmbeddingStore> {
    let mut r = BufReader::new(File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != EMB_MAGIC {
        return Err(FetildaError::EmbeddingFile(format!(
            "bad magic {magic:?}, expected {EMB_MAGIC:?}"
        )));
    }
    let mut version = [0u8; 1];
    r.read_exact(&mut version)?;
    if version[0] != EMB_VERSION {
        return Err(FetildaError::EmbeddingFile(format!(
            "unsupported version {}",
            version[0]
        )));
    }
    let mut u32buf = [0u8; 4];
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u32buf)?;
    let dim = u32::from_le_bytes(u32buf) as usize;
    if dim != expected_dim {
        return Err(FetildaError::EmbeddingFile(format!(
            "embedding dimension {dim} does not match configured dimension {expected_dim}"
        )));
    }
    r.read_exact(&mut u64buf)?;
    let count = u64::from_le_bytes(u64buf);
    let mut map = BTreeMap::new();
    for _ in 0..count {
        r.read_exact(&mut u32buf)?;
        let name_len = u32::from_le_bytes(u32buf) as usize;
        let mut name = vec![0u8; name_len];
        r.read_exact(&mut name)?;
        let doc_id = String::from_utf8(name)
            .map_err(|e| FetildaError::EmbeddingFile(format!("non-utf8 doc_id: {e}")))?;
        r.read_exact(&mut u32buf)?;
        let index = u32::from_le_bytes(u32buf);
        let mut data = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut u64buf)?;
            data.push(f64::from_le_bytes(u64buf));
        }
        map.insert((doc_id, index), Tensor::from_vec(vec![dim], data)?);
    }
    Ok(EmbeddingStore { dim, map })
}
