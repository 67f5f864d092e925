//! End-to-end pipeline: chunk encoder (or precomputed embeddings) → Bi-LSTM
//! attention pooling → regression head.

use numcore::{DetRng, NodeId, ParamSet, Tape, Tensor};

use crate::chunker::Chunk;
use crate::docpool;
use crate::encoder::{self, EncoderConfig};
use crate::error::{FetildaError, Result};
use crate::head::{self, HeadConfig};

/// Chunk inputs for one document: token chunks to run through the encoder,
/// or precomputed chunk embeddings (frozen-LM mode).
#[derive(Debug, Clone)]
pub enum ChunkData {
    Tokens(Vec<Chunk>),
    Precomputed(Vec<Tensor>),
}

impl ChunkData {
    pub fn num_chunks(&self) -> usize {
        match self {
            ChunkData::Tokens(c) => c.len(),
            ChunkData::Precomputed(v) => v.len(),
        }
    }
}

/// One training/evaluation example.
#[derive(Debug, Clone)]
pub struct DocExample {
    pub doc_id: String,
    pub chunks: ChunkData,
    pub y_hist: f64,
    pub y: f64,
}

/// Full pipeline hyperparameters.
#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub encoder: EncoderConfig,
    pub lstm_hidden: usize,
    pub head: HeadConfig,
    /// Divide the attention-weighted sum by the chunk count (method default).
    pub normalize_by_chunks: bool,
}

impl PipelineConfig {
    pub fn desk_default(vocab_size: usize) -> Self {
        PipelineConfig {
            encoder: EncoderConfig::desk_default(vocab_size),
            lstm_hidden: 32,
            head: HeadConfig::default(),
            normalize_by_chunks: true,
        }
    }
}

/// Initialize all pipeline parameters and apply the configured encoder
/// freeze. `include_encoder` is false when chunk embeddings come from a file.
pub fn init_params(cfg: &PipelineConfig, seed: u64, include_encoder: bool) -> Result<ParamSet> {
    let mut rng = DetRng::new(seed, streams::INIT);
    let mut params = ParamSet::new();
    if include_encoder {
        encoder::init_params(&cfg.encoder, &mut rng, &mut params)?;
    }
    docpool::init_params(cfg.encoder.dim, cfg.lstm_hidden, &mut rng, &mut params);
    head::init_params(cfg.encoder.dim, &cfg.head, &mut rng, &mut params);
    if include_encoder {
        encoder::apply_freeze(&mut params, cfg.encoder.freeze, cfg.encoder.layers);
    }
    Ok(params)
}

/// RNG stream ids used by the pipeline; all derive from the experiment seed.
pub mod streams {
    pub const INIT: u64 = 0;
    pub const SHUFFLE_BASE: u64 = 100;
    pub const DROPOUT_BASE: u64 = 200;
    pub const DATA: u64 = 900;
}

/// Chunk vectors for a document as tape nodes.
fn chunk_vector_nodes(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &PipelineConfig,
    chunks: &ChunkData,
) -> Result<Vec<NodeId>> {
    match chunks {
        ChunkData::Tokens(chunks) => {
            if chunks.is_empty() {
                return Err(FetildaError::DocPool("document with zero chunks".into()));
            }
            let mut nodes = Vec::with_capacity(chunks.len());
            for chunk in chunks {
                let (layers, pooler) =
                    encoder::encode_chunk_on_tape(tape, params, &cfg.encoder, chunk)?;
                let pooled = encoder::pool_chunk_on_tape(
                    tape,
                    &layers,
                    pooler,
                    cfg.encoder.pooling,
                    &chunk.valid_positions(),
                )?;
                nodes.push(pooled);
            }
            Ok(nodes)
        }
        ChunkData::Precomputed(vecs) => {
            if vecs.is_empty() {
                return Err(FetildaError::DocPool("document with zero chunks".into()));
            }
            Ok(vecs.iter().map(|v| tape.leaf(v.clone())).collect())
        }
    }
}

/// Forward one document to its scalar prediction node.
pub fn forward_doc_on_tape(
    tape: &mut Tape,
    params: &ParamSet,
    cfg: &PipelineConfig,
    doc: &DocExample,
    train: bool,
    dropout_rng: &mut DetRng,
) -> Result<NodeId> {
    let chunk_nodes = chunk_vector_nodes(tape, params, cfg, &doc.chunks)?;
    let (doc_vec, _alpha) = docpool::pool_document_on_tape(
        tape,
        params,
        &chunk_nodes,
        cfg.lstm_hidden,
        cfg.normalize_by_chunks,
    )?;
    head::head_forward_on_tape(tape, params, &cfg.head, doc_vec, doc.y_hist, train, dropout_rng)
}

/// Evaluation-mode prediction (deterministic).
pub fn predict(params: &ParamSet, cfg: &PipelineConfig, doc: &DocExample) -> Result<f64> {
    let mut tape = Tape::new_eval();
    let mut rng = DetRng::new(0, 0);
    let pred = forward_doc_on_tape(&mut tape, params, cfg, doc, false, &mut rng)?;
    Ok(tape.value(pred).scalar_value()?)
}

/// Evaluation-mode document vector and attention weights (for the final
/// regressor variants and attention dumps).
pub fn doc_vector(
    params: &ParamSet,
    cfg: &PipelineConfig,
    doc: &DocExample,
) -> Result<(Tensor, Vec<f64>)> {
    let mut tape = Tape::new_eval();
    let chunk_nodes = chunk_vector_nodes(&mut tape, params, cfg, &doc.chunks)?;
    let (doc_vec, alpha) = docpool::pool_document_on_tape(
        &mut tape,
        params,
        &chunk_nodes,
        cfg.lstm_hidden,
        cfg.normalize_by_chunks,
    )?;
    Ok((
        tape.value(doc_vec).clone(),
        tape.value(alpha).data().to_vec(),
    ))
}
