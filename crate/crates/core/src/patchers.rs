//! The four patching tokenizers and their common inverse.
//!
//! Every method emits rectangular rows of `patch_size` symbols. Short rows
//! are filled with PAD, and sequences longer than `patch_length` lose their
//! trailing patches.

use thiserror::Error;

use crate::model::{PatchConfig, PatchMethod, PatchSequence, Span, SymbolId};
use crate::parser::{segment_bars, split_lines};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PatchError {
    #[error("malformed patch sequence at row {row}: {reason}")]
    MalformedSequence { row: usize, reason: &'static str },
}

fn padded_row(chunk: &[u8], width: usize) -> Vec<SymbolId> {
    let mut row: Vec<SymbolId> = chunk.iter().map(|&b| SymbolId::from_byte(b)).collect();
    row.resize(width, SymbolId::PAD);
    row
}

fn push_chunks(rows: &mut Vec<Vec<SymbolId>>, bytes: &[u8], width: usize) {
    rows.extend(bytes.chunks(width).map(|c| padded_row(c, width)));
}

fn finish(
    mut patches: Vec<Vec<SymbolId>>,
    config: PatchConfig,
    truncated_bar_count: usize,
) -> PatchSequence {
    let dropped_patches = patches.len().saturating_sub(config.patch_length);
    patches.truncate(config.patch_length);
    PatchSequence {
        patches,
        config,
        truncated_bar_count,
        dropped_patches,
    }
}

/// Segment spans a method patches independently, in text order.
///
/// Byte patching treats the whole text as one segment.
pub fn segment_spans(method: PatchMethod, text: &[u8]) -> Vec<Span> {
    match method {
        PatchMethod::Byte if text.is_empty() => Vec::new(),
        PatchMethod::Byte => vec![Span::new(0, text.len())],
        PatchMethod::Bar | PatchMethod::BarStream => {
            segment_bars(text).into_iter().map(|s| s.span).collect()
        }
        PatchMethod::LineStream => split_lines(text).into_iter().map(|s| s.span).collect(),
    }
}

/// Consecutive `patch_size`-byte chunks of the text.
pub fn tokenize_byte(text: &[u8], cfg: &PatchConfig) -> PatchSequence {
    let cfg = PatchConfig {
        method: PatchMethod::Byte,
        ..*cfg
    };
    let mut rows = Vec::new();
    push_chunks(&mut rows, text, cfg.patch_size);
    finish(rows, cfg, 0)
}

/// One patch per bar or non-music line, cut to `patch_size` bytes when
/// longer.
pub fn tokenize_bar(text: &[u8], cfg: &PatchConfig) -> PatchSequence {
    let cfg = PatchConfig {
        method: PatchMethod::Bar,
        ..*cfg
    };
    let mut truncated = 0;
    let rows = segment_spans(PatchMethod::Bar, text)
        .into_iter()
        .map(|span| {
            let bytes = span.slice(text);
            if bytes.len() > cfg.patch_size {
                truncated += 1;
            }
            padded_row(&bytes[..bytes.len().min(cfg.patch_size)], cfg.patch_size)
        })
        .collect();
    finish(rows, cfg, truncated)
}

fn tokenize_streamed(text: &[u8], cfg: PatchConfig) -> PatchSequence {
    let mut rows = Vec::new();
    for span in segment_spans(cfg.method, text) {
        push_chunks(&mut rows, span.slice(text), cfg.patch_size);
    }
    finish(rows, cfg, 0)
}

/// Bars (and non-music lines) chunked into as many patches as they need.
pub fn tokenize_bar_stream(text: &[u8], cfg: &PatchConfig) -> PatchSequence {
    tokenize_streamed(
        text,
        PatchConfig {
            method: PatchMethod::BarStream,
            ..*cfg
        },
    )
}

/// Lines chunked into as many patches as they need.
pub fn tokenize_line_stream(text: &[u8], cfg: &PatchConfig) -> PatchSequence {
    tokenize_streamed(
        text,
        PatchConfig {
            method: PatchMethod::LineStream,
            ..*cfg
        },
    )
}

/// Dispatches on `cfg.method`.
pub fn tokenize(text: &[u8], cfg: &PatchConfig) -> PatchSequence {
    match cfg.method {
        PatchMethod::Byte => tokenize_byte(text, cfg),
        PatchMethod::Bar => tokenize_bar(text, cfg),
        PatchMethod::BarStream => tokenize_bar_stream(text, cfg),
        PatchMethod::LineStream => tokenize_line_stream(text, cfg),
    }
}

/// Patch count before the `patch_length` cap, computed from segment lengths
/// alone.
pub fn expected_patch_count(method: PatchMethod, text: &[u8], patch_size: usize) -> usize {
    let spans = segment_spans(method, text);
    match method {
        PatchMethod::Bar => spans.len(),
        _ => spans.iter().map(|s| s.len().div_ceil(patch_size)).sum(),
    }
}

/// Wraps a sequence in a BOS row and an EOS row, dropping trailing content
/// patches if the framed sequence would exceed `patch_length`.
pub fn frame(seq: &PatchSequence) -> PatchSequence {
    let width = seq.config.patch_size;
    let room = seq.config.patch_length.saturating_sub(2);
    let kept = seq.patches.len().min(room);
    let marker = |s: SymbolId| {
        let mut row = vec![SymbolId::PAD; width];
        row[0] = s;
        row
    };
    let mut patches = Vec::with_capacity(kept + 2);
    patches.push(marker(SymbolId::BOS));
    patches.extend(seq.patches[..kept].iter().cloned());
    patches.push(marker(SymbolId::EOS));
    if patches.len() > seq.config.patch_length {
        patches.truncate(seq.config.patch_length);
    }
    PatchSequence {
        patches,
        config: seq.config,
        truncated_bar_count: seq.truncated_bar_count,
        dropped_patches: seq.dropped_patches + (seq.patches.len() - kept),
    }
}

fn check_row(row: &[SymbolId], width: usize, index: usize) -> Result<(), PatchError> {
    let bad = |reason| PatchError::MalformedSequence { row: index, reason };
    if row.len() != width {
        return Err(bad("row width differs from patch size"));
    }
    let mut seen_pad = false;
    for &s in row {
        if !s.is_valid() {
            return Err(bad("symbol id out of range"));
        }
        if s == SymbolId::PAD {
            seen_pad = true;
        } else if seen_pad {
            return Err(bad("PAD before a non-PAD symbol"));
        }
    }
    Ok(())
}

/// Concatenates rows, dropping PAD/BOS/EOS.
pub fn detokenize(seq: &PatchSequence) -> Result<Vec<u8>, PatchError> {
    let mut out = Vec::with_capacity(seq.patches.len() * seq.config.patch_size);
    for (i, row) in seq.patches.iter().enumerate() {
        check_row(row, seq.config.patch_size, i)?;
        out.extend(row.iter().filter_map(|s| s.as_byte()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(method: PatchMethod, size: usize) -> PatchConfig {
        PatchConfig::with_sizes(method, size, 512).unwrap()
    }

    fn row(s: &str, width: usize) -> Vec<SymbolId> {
        padded_row(s.as_bytes(), width)
    }

    #[test]
    fn byte_examples() {
        let seq = tokenize_byte(b"ABCDEFG\n", &cfg(PatchMethod::Byte, 4));
        assert_eq!(seq.patches, vec![row("ABCD", 4), row("EFG\n", 4)]);
        let seq = tokenize_byte(b"ABC", &cfg(PatchMethod::Byte, 4));
        assert_eq!(
            seq.patches,
            vec![vec![
                SymbolId(65),
                SymbolId(66),
                SymbolId(67),
                SymbolId::PAD
            ]]
        );
    }

    #[test]
    fn bar_examples() {
        let text = b"CDEF|GABc|]\n";
        let seq = tokenize_bar(text, &cfg(PatchMethod::Bar, 8));
        assert_eq!(seq.patches, vec![row("CDEF|", 8), row("GABc|]\n", 8)]);
        assert_eq!(seq.truncated_bar_count, 0);

        let long = format!("{}|\n", "A".repeat(68));
        assert_eq!(long.len(), 70);
        let seq = tokenize_bar(long.as_bytes(), &cfg(PatchMethod::Bar, 64));
        assert_eq!(seq.patches.len(), 1);
        assert_eq!(seq.patches[0], row(&long[..64], 64));
        assert_eq!(seq.truncated_bar_count, 1);
    }

    #[test]
    fn header_lines_are_whole_patches() {
        let seq = tokenize_bar(b"K:C\nC|D|\n", &cfg(PatchMethod::Bar, 8));
        assert_eq!(seq.patches[0], row("K:C\n", 8));
        assert_eq!(seq.patches.len(), 3);
    }

    #[test]
    fn bar_stream_examples() {
        let seq = tokenize_bar_stream(b"CDEF|", &cfg(PatchMethod::BarStream, 2));
        assert_eq!(seq.patches, vec![row("CD", 2), row("EF", 2), row("|", 2)]);
        let seq = tokenize_bar_stream(b"CDEF|", &cfg(PatchMethod::BarStream, 5));
        assert_eq!(seq.patches, vec![row("CDEF|", 5)]);
        assert_eq!(seq.pad_count(), 0);
    }

    #[test]
    fn line_stream_examples() {
        let seq = tokenize_line_stream(b"K:C\nCDE|\n", &cfg(PatchMethod::LineStream, 4));
        assert_eq!(seq.patches.len(), 3);

        let line = vec![b'A'; 4 * 3 + 1];
        let capped = PatchConfig::with_sizes(PatchMethod::LineStream, 4, 2).unwrap();
        let seq = tokenize_line_stream(&line, &capped);
        assert_eq!(seq.patches.len(), 2);
        assert_eq!(seq.dropped_patches, 2);
    }

    #[test]
    fn detokenize_edges() {
        let empty = tokenize_byte(b"", &cfg(PatchMethod::Byte, 4));
        assert_eq!(detokenize(&empty).unwrap(), b"");

        let mut seq = tokenize_byte(b"ABCD", &cfg(PatchMethod::Byte, 4));
        seq.patches[0][1] = SymbolId::PAD;
        assert!(matches!(
            detokenize(&seq),
            Err(PatchError::MalformedSequence { row: 0, .. })
        ));
    }

    #[test]
    fn framing_keeps_content_and_cap() {
        let text = b"X:1\nK:C\nCDEF|GABc|\n";
        let base = tokenize_line_stream(text, &cfg(PatchMethod::LineStream, 4));
        let framed = frame(&base);
        assert_eq!(framed.patches.len(), base.patches.len() + 2);
        assert_eq!(framed.patches[0][0], SymbolId::BOS);
        assert_eq!(framed.patches.last().unwrap()[0], SymbolId::EOS);
        assert_eq!(detokenize(&framed).unwrap(), text);

        let tight = PatchConfig::with_sizes(PatchMethod::Byte, 4, 3).unwrap();
        let framed = frame(&tokenize_byte(text, &tight));
        assert_eq!(framed.patches.len(), 3);
        assert_eq!(framed.dropped_patches, 2 + 2);
    }
}
