//! Tokenization and fixed-length chunk generation.
//!
//! A document is lowercased, split on whitespace and punctuation, and each
//! word is tokenized by greedy longest-match against the vocabulary. The
//! token sequence is then truncated to a document budget and cut into hard
//! windows of `b` tokens; every window is wrapped as
//! `<CLS> tokens… <SEP> <PAD>…` so all chunks of a document share the exact
//! length `b + 2`, with an attention mask of 1 for real tokens and 0 for
//! padding.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{FetildaError, Result};

pub const CLS_TOKEN: &str = "<CLS>";
pub const SEP_TOKEN: &str = "<SEP>";
pub const PAD_TOKEN: &str = "<PAD>";
pub const UNK_TOKEN: &str = "<UNK>";

/// Token vocabulary with dense ids `0..len` and the four special tokens.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    tokens: Vec<String>,
    lookup: HashMap<String, u32>,
    max_token_chars: usize,
    pub cls_id: u32,
    pub sep_id: u32,
    pub pad_id: u32,
    pub unk_id: u32,
}

impl Vocabulary {
    /// Build from token strings; line number = id.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut lookup = HashMap::with_capacity(tokens.len());
        let mut max_token_chars = 0;
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                return Err(FetildaError::Vocab(format!("empty token at id {id}")));
            }
            if lookup.insert(tok.clone(), id as u32).is_some() {
                return Err(FetildaError::Vocab(format!("duplicate token '{tok}'")));
            }
            max_token_chars = max_token_chars.max(tok.chars().count());
        }
        let special = |name: &str| -> Result<u32> {
            lookup
                .get(name)
                .copied()
                .ok_or_else(|| FetildaError::Vocab(format!("missing special token {name}")))
        };
        let vocab = Vocabulary {
            cls_id: special(CLS_TOKEN)?,
            sep_id: special(SEP_TOKEN)?,
            pad_id: special(PAD_TOKEN)?,
            unk_id: special(UNK_TOKEN)?,
            tokens,
            lookup,
            max_token_chars,
        };
        Ok(vocab)
    }

    /// Load a UTF-8 file with one token per line.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_tokens(text.lines().map(str::to_string).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_for(&self, token: &str) -> Option<u32> {
        self.lookup.get(token).copied()
    }

    pub fn token_for(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    fn is_special(&self, id: u32) -> bool {
        id == self.cls_id || id == self.sep_id || id == self.pad_id
    }
}

/// A document as a flat token-id sequence without special tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenSequence {
    pub doc_id: String,
    pub ids: Vec<u32>,
}

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// A fixed-length token window: `<CLS>` + up to `b` tokens + `<SEP>` +
/// padding, with its attention mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Chunk {
    pub doc_id: String,
    /// 0-based position of this chunk in its document.
    pub index: usize,
    /// Exactly `b + 2` ids.
    pub ids: Vec<u32>,
    /// 1 for real tokens (including `<CLS>`/`<SEP>`), 0 for `<PAD>`.
    pub mask: Vec<u8>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ones_in_mask(&self) -> usize {
        self.mask.iter().filter(|&&m| m == 1).count()
    }

    /// A chunk carrying no document tokens (empty-document placeholder).
    pub fn is_degenerate(&self) -> bool {
        self.ones_in_mask() == 2
    }

    /// Indices of valid (non-pad) positions.
    pub fn valid_positions(&self) -> Vec<usize> {
        self.mask
            .iter()
            .enumerate()
            .filter(|(_, &m)| m == 1)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Lowercase and split into word/punctuation pieces. Alphanumeric runs stay
/// together; every other non-whitespace character becomes its own piece.
pub fn split_words(text: &str) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for ch in text.chars().flat_map(char::to_lowercase) {
        if ch.is_alphanumeric() {
            current.push(ch);
        } else {
            if !current.is_empty() {
                words.push(std::mem::take(&mut current));
            }
            if !ch.is_whitespace() {
                words.push(ch.to_string());
            }
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words
}

/// Greedy longest-match subword tokenization. Within a word, each position
/// takes the longest vocabulary entry that prefixes the remainder; a span
/// with no match at all collapses to a single `<UNK>`.
pub fn tokenize(text: &str, vocab: &Vocabulary, doc_id: &str) -> TokenSequence {
    let mut ids = Vec::new();
    for word in split_words(text) {
        tokenize_word(&word, vocab, &mut ids);
    }
    debug_assert!(ids.iter().all(|&id| !vocab.is_special(id)));
    TokenSequence { doc_id: doc_id.to_string(), ids }
}

fn tokenize_word(word: &str, vocab: &Vocabulary, out: &mut Vec<u32>) {
    let chars: Vec<char> = word.chars().collect();
    let mut pos = 0;
    let mut unmatched_open = false;
    while pos < chars.len() {
        let limit = (chars.len() - pos).min(vocab.max_token_chars);
        let mut matched = None;
        let mut candidate = String::new();
        // Longest prefix first.
        for len in (1..=limit).rev() {
            candidate.clear();
            candidate.extend(&chars[pos..pos + len]);
            if let Some(id) = vocab.id_for(&candidate) {
                matched = Some((id, len));
                break;
            }
        }
        match matched {
            Some((id, len)) => {
                unmatched_open = false;
                out.push(id);
                pos += len;
            }
            None => {
                // Extend the current unmatched span; emit one <UNK> per span.
                if !unmatched_open {
                    out.push(vocab.unk_id);
                    unmatched_open = true;
                }
                pos += 1;
            }
        }
    }
}

/// Join tokens back to text (spaces between tokens); inverse of [`tokenize`]
/// up to case and whitespace for in-vocabulary words.
pub fn detokenize(seq: &TokenSequence, vocab: &Vocabulary) -> Result<String> {
    let mut out = String::new();
    for (i, &id) in seq.ids.iter().enumerate() {
        let tok = vocab
            .token_for(id)
            .ok_or_else(|| FetildaError::Vocab(format!("id {id} out of range")))?;
        if i > 0 {
            out.push(' ');
        }
        out.push_str(tok);
    }
    Ok(out)
}

/// Cut a (truncated) token sequence into `⌈n/b⌉` chunks of exact length
/// `b + 2`. An empty sequence yields one degenerate `<CLS><SEP><PAD>…` chunk.
pub fn make_chunks(
    seq: &TokenSequence,
    b: usize,
    max_doc_tokens: usize,
    vocab: &Vocabulary,
) -> Result<Vec<Chunk>> {
    if b == 0 {
        return Err(FetildaError::Chunk("chunk body size b must be >= 1".into()));
    }
    if max_doc_tokens < b {
        return Err(FetildaError::Chunk(format!(
            "max_doc_tokens {max_doc_tokens} must be >= b {b}"
        )));
    }
    let ids = &seq.ids[..seq.ids.len().min(max_doc_tokens)];
    let windows: Vec<&[u32]> = if ids.is_empty() {
        vec![&[]]
    } else {
        ids.chunks(b).collect()
    };
    let mut chunks = Vec::with_capacity(windows.len());
    for (index, window) in windows.into_iter().enumerate() {
        let k = window.len();
        let mut chunk_ids = Vec::with_capacity(b + 2);
        chunk_ids.push(vocab.cls_id);
        chunk_ids.extend_from_slice(window);
        chunk_ids.push(vocab.sep_id);
        chunk_ids.resize(b + 2, vocab.pad_id);
        let mut mask = vec![1u8; k + 2];
        mask.resize(b + 2, 0);
        chunks.push(Chunk { doc_id: seq.doc_id.clone(), index, ids: chunk_ids, mask });
    }
    Ok(chunks)
}

/// Number of chunks [`make_chunks`] produces for a raw length `n`.
pub fn expected_chunk_count(n: usize, b: usize, max_doc_tokens: usize) -> usize {
    let n = n.min(max_doc_tokens);
    if n == 0 {
        1
    } else {
        n.div_ceil(b)
    }
}

/// Strip special tokens and re-concatenate a document's chunks. The chunks
/// must be exactly the `0..m` sequence in order.
pub fn reassemble(chunks: &[Chunk], vocab: &Vocabulary) -> Result<TokenSequence> {
    if chunks.is_empty() {
        return Err(FetildaError::Chunk("no chunks to reassemble".into()));
    }
    let doc_id = chunks[0].doc_id.clone();
    let mut ids = Vec::new();
    for (expect, chunk) in chunks.iter().enumerate() {
        if chunk.doc_id != doc_id {
            return Err(FetildaError::Chunk(format!(
                "chunk from document '{}' mixed into '{}'",
                chunk.doc_id, doc_id
            )));
        }
        if chunk.index != expect {
            return Err(FetildaError::Chunk(format!(
                "chunk index {} where {} expected (gap or out of order)",
                chunk.index, expect
            )));
        }
        if chunk.ids.first() != Some(&vocab.cls_id) {
            return Err(FetildaError::Chunk(format!(
                "chunk {expect} does not start with {CLS_TOKEN}"
            )));
        }
        let mut seen_sep = false;
        for (&id, &m) in chunk.ids.iter().zip(&chunk.mask).skip(1) {
            if (id == vocab.pad_id) != (m == 0) {
                return Err(FetildaError::Chunk(format!(
                    "chunk {expect}: mask disagrees with {PAD_TOKEN} positions"
                )));
            }
            if id == vocab.sep_id {
                seen_sep = true;
            } else if id == vocab.pad_id {
                if !seen_sep {
                    return Err(FetildaError::Chunk(format!(
                        "chunk {expect}: padding before {SEP_TOKEN}"
                    )));
                }
            } else {
                if seen_sep {
                    return Err(FetildaError::Chunk(format!(
                        "chunk {expect}: token after {SEP_TOKEN}"
                    )));
                }
                ids.push(id);
            }
        }
        if !seen_sep {
            return Err(FetildaError::Chunk(format!("chunk {expect}: missing {SEP_TOKEN}")));
        }
    }
    Ok(TokenSequence { doc_id, ids })
}

/// Debug dump: one CSV row `doc_id,index,ones_in_mask` per chunk.
pub fn chunk_dump_csv(chunks: &[Chunk]) -> String {
    let mut out = String::from("doc_id,index,ones_in_mask\n");
    for c in chunks {
        let _ = writeln!(out, "{},{},{}", c.doc_id, c.index, c.ones_in_mask());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny_vocab() -> Vocabulary {
        let mut tokens: Vec<String> = [CLS_TOKEN, SEP_TOKEN, PAD_TOKEN, UNK_TOKEN]
            .iter()
            .map(|s| s.to_string())
            .collect();
        for t in ["the", "bank", "ing", "risk", "s", "a", "b", "c", ","] {
            tokens.push(t.to_string());
        }
        Vocabulary::from_tokens(tokens).unwrap()
    }

    #[test]
    fn tokenize_known_words() {
        let v = tiny_vocab();
        let seq = tokenize("The bank", &v, "d1");
        assert_eq!(
            seq.ids,
            vec![v.id_for("the").unwrap(), v.id_for("bank").unwrap()]
        );
    }

    #[test]
    fn greedy_longest_match_splits_subwords() {
        let v = tiny_vocab();
        let seq = tokenize("banking", &v, "d1");
        assert_eq!(
            seq.ids,
            vec![v.id_for("bank").unwrap(), v.id_for("ing").unwrap()]
        );
    }

    #[test]
    fn unmatched_span_collapses_to_one_unk() {
        let v = tiny_vocab();
        // 'zzz' has no match at any position: one <UNK> for the whole span.
        let seq = tokenize("zzz", &v, "d1");
        assert_eq!(seq.ids, vec![v.unk_id]);
        // 'zzzbank': unmatched prefix span, then a real match.
        let seq = tokenize("zzzbank", &v, "d1");
        assert_eq!(seq.ids, vec![v.unk_id, v.id_for("bank").unwrap()]);
        // Two spans separated by a match give two <UNK>s.
        let seq = tokenize("zzbankzz", &v, "d1");
        assert_eq!(
            seq.ids,
            vec![v.unk_id, v.id_for("bank").unwrap(), v.unk_id]
        );
    }

    #[test]
    fn empty_text_gives_empty_sequence() {
        let v = tiny_vocab();
        assert!(tokenize("", &v, "d1").is_empty());
        assert!(tokenize("  \n\t ", &v, "d1").is_empty());
    }

    #[test]
    fn punctuation_splits_words() {
        let v = tiny_vocab();
        let seq = tokenize("the,bank", &v, "d1");
        assert_eq!(
            seq.ids,
            vec![
                v.id_for("the").unwrap(),
                v.id_for(",").unwrap(),
                v.id_for("bank").unwrap()
            ]
        );
    }

    #[test]
    fn vocab_requires_special_tokens() {
        let err = Vocabulary::from_tokens(vec!["just".into(), "words".into()]).unwrap_err();
        assert!(err.to_string().contains("missing special token"));
    }

    #[test]
    fn vocab_rejects_duplicates() {
        let tokens = vec![
            CLS_TOKEN.into(),
            SEP_TOKEN.into(),
            PAD_TOKEN.into(),
            UNK_TOKEN.into(),
            "the".into(),
            "the".into(),
        ];
        assert!(Vocabulary::from_tokens(tokens).is_err());
    }

    #[test]
    fn exact_multiple_has_no_padding() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 1020] };
        let chunks = make_chunks(&seq, 510, 30_000, &v).unwrap();
        assert_eq!(chunks.len(), 2);
        for c in &chunks {
            assert_eq!(c.len(), 512);
            assert_eq!(c.ones_in_mask(), 512);
        }
    }

    #[test]
    fn short_document_pads_the_single_chunk() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 5] };
        let chunks = make_chunks(&seq, 510, 30_000, &v).unwrap();
        assert_eq!(chunks.len(), 1);
        let c = &chunks[0];
        assert_eq!(c.len(), 512);
        assert_eq!(c.ones_in_mask(), 7); // <CLS> + 5 tokens + <SEP>
        assert_eq!(c.ids[0], v.cls_id);
        assert_eq!(c.ids[6], v.sep_id);
        assert!(c.ids[7..].iter().all(|&id| id == v.pad_id));
        // <PAD> iff mask 0, and padding is a contiguous suffix.
        for (i, (&id, &m)) in c.ids.iter().zip(&c.mask).enumerate() {
            assert_eq!(id == v.pad_id, m == 0, "position {i}");
        }
    }

    #[test]
    fn truncation_caps_chunk_count() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 25_000] };
        let chunks = make_chunks(&seq, 510, 20_480, &v).unwrap();
        assert_eq!(chunks.len(), 41); // ⌈20480/510⌉
        let total_real: usize = chunks.iter().map(|c| c.ones_in_mask() - 2).sum();
        assert_eq!(total_real, 20_480);
    }

    #[test]
    fn empty_sequence_yields_degenerate_chunk() {
        let v = tiny_vocab();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![] };
        let chunks = make_chunks(&seq, 8, 100, &v).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].is_degenerate());
        assert_eq!(chunks[0].ones_in_mask(), 2);
        assert_eq!(reassemble(&chunks, &v).unwrap().ids, Vec::<u32>::new());
    }

    #[test]
    fn reassemble_rejects_shuffled_chunks() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 20] };
        let mut chunks = make_chunks(&seq, 8, 100, &v).unwrap();
        chunks.swap(0, 1);
        assert!(reassemble(&chunks, &v).is_err());
    }

    #[test]
    fn reassemble_rejects_index_gap() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 30] };
        let mut chunks = make_chunks(&seq, 8, 100, &v).unwrap();
        chunks.remove(1);
        assert!(reassemble(&chunks, &v).is_err());
    }

    #[test]
    fn chunk_dump_has_row_per_chunk() {
        let v = tiny_vocab();
        let a = v.id_for("a").unwrap();
        let seq = TokenSequence { doc_id: "d".into(), ids: vec![a; 20] };
        let chunks = make_chunks(&seq, 8, 100, &v).unwrap();
        let dump = chunk_dump_csv(&chunks);
        assert_eq!(dump.lines().count(), 1 + chunks.len());
        assert!(dump.starts_with("doc_id,index,ones_in_mask\n"));
    }
}
