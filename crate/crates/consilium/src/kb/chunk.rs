//! Sliding-window chunking with sentence-boundary snapping.

use serde::{Deserialize, Serialize};

use super::{Chunk, KbError, SourceDocument};

/// Window size and overlap, both in chars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkParams {
    pub max_chars: usize,
    pub overlap_chars: usize,
}

impl Default for ChunkParams {
    fn default() -> Self {
        Self {
            max_chars: 800,
            overlap_chars: 80,
        }
    }
}

impl ChunkParams {
    pub fn validate(&self) -> Result<(), KbError> {
        if self.max_chars == 0 {
            return Err(KbError::InvalidChunkParams(
                "max_chars must be positive".into(),
            ));
        }
        if self.overlap_chars >= self.max_chars {
            return Err(KbError::InvalidChunkParams(format!(
                "overlap_chars {} must be < max_chars {}",
                self.overlap_chars, self.max_chars
            )));
        }
        Ok(())
    }
}

fn is_sentence_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?' | '\n')
}

/// Split a document body into overlapping chunks.
///
/// Each chunk spans at most `max_chars` chars; consecutive chunks share
/// exactly `overlap_chars` chars, so stitching the chunks back together
/// (dropping each chunk's leading overlap) reproduces the body. Within a
/// window the break lands after the last sentence terminator when one exists
/// far enough in to keep the loop advancing.
pub fn chunk_document(doc: &SourceDocument, params: &ChunkParams) -> Result<Vec<Chunk>, KbError> {
    doc.validate()?;
    params.validate()?;

    let chars: Vec<char> = doc.body.chars().collect();
    let total = chars.len();
    let mut chunks = Vec::new();
    let mut start = 0usize;
    let mut ordinal = 0usize;

    while start < total {
        let window_end = (start + params.max_chars).min(total);
        let end = if window_end == total {
            total
        } else {
            // Last terminator in the window, but only if breaking there still
            // advances past the next chunk's overlap region.
            let snapped = (start..window_end)
                .rev()
                .find(|&i| is_sentence_terminator(chars[i]))
                .map(|i| i + 1)
                .filter(|&e| e > start + params.overlap_chars);
            snapped.unwrap_or(window_end)
        };

        let text: String = chars[start..end].iter().collect();
        chunks.push(Chunk {
            chunk_id: format!("{}#{:04}", doc.doc_id, ordinal),
            doc_id: doc.doc_id.clone(),
            text,
            start,
            end,
        });
        ordinal += 1;
        if end == total {
            break;
        }
        start = end - params.overlap_chars;
    }

    Ok(chunks)
}

/// Rebuild a body from its chunks by dropping each chunk's leading overlap.
/// Test oracle for the reconstruction invariant.
pub fn stitch(chunks: &[Chunk]) -> String {
    let mut out: Vec<char> = Vec::new();
    for chunk in chunks {
        let text: Vec<char> = chunk.text.chars().collect();
        let skip = out.len().saturating_sub(chunk.start);
        out.extend(&text[skip.min(text.len())..]);
    }
    out.into_iter().collect()
}
