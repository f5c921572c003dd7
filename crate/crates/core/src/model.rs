//! Shared domain types: text spans, classified segments, patch configuration
//! and patch sequences.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default patch size for bar patching.
pub const DEFAULT_BAR_PATCH_SIZE: usize = 64;
/// Default patch size for byte, bar-stream and line-stream patching.
pub const DEFAULT_PATCH_SIZE: usize = 16;
/// Default maximum number of patches per sequence.
pub const DEFAULT_PATCH_LENGTH: usize = 512;
/// Default maximum number of BPE ids per sequence.
pub const DEFAULT_BPE_CONTEXT: usize = 4096;
/// Default target vocabulary size for BPE training.
pub const DEFAULT_BPE_VOCAB_SIZE: usize = 50_000;

/// Half-open byte range `[start, end)` into a text buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
}

impl Span {
    pub fn new(start: usize, end: usize) -> Self {
        debug_assert!(start <= end);
        Span { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn slice<'a>(&self, text: &'a [u8]) -> &'a [u8] {
        &text[self.start..self.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SegmentKind {
    HeaderLine,
    Bar,
    MusicLine,
    LyricLine,
    Comment,
}

impl SegmentKind {
    /// True for kinds that carry notes.
    pub fn is_music(self) -> bool {
        matches!(self, SegmentKind::Bar | SegmentKind::MusicLine)
    }
}

/// A classified, non-empty span of a text buffer.
///
/// Segments produced from one buffer tile it exactly when taken in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub span: Span,
    pub kind: SegmentKind,
    /// Voice the segment belongs to, when known (bars only).
    pub voice_id: Option<String>,
}

impl Segment {
    pub fn new(span: Span, kind: SegmentKind) -> Self {
        Segment {
            span,
            kind,
            voice_id: None,
        }
    }

    pub fn len(&self) -> usize {
        self.span.len()
    }

    pub fn is_empty(&self) -> bool {
        self.span.is_empty()
    }

    pub fn bytes<'a>(&self, text: &'a [u8]) -> &'a [u8] {
        self.span.slice(text)
    }
}

/// Music of one voice: the spans of source text that belong to it, in order.
///
/// Spans are usually whole music lines; in interleaved text they are the
/// chunks following each `[V:id]` tag.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VoiceBody {
    pub voice_id: String,
    pub music_lines: Vec<Span>,
}

/// One parsed ABC tune.
///
/// Built by [`crate::parser::parse_tune`]; immutable afterwards.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AbcTune {
    pub(crate) source_text: Vec<u8>,
    /// Every line of `source_text`, classified.
    pub(crate) lines: Vec<Segment>,
    /// Number of leading entries of `lines` that form the tune header
    /// (through the first `K:` line).
    pub(crate) header_count: usize,
    pub(crate) voices: Vec<VoiceBody>,
}

impl AbcTune {
    pub fn source_text(&self) -> &[u8] {
        &self.source_text
    }

    /// Lines from the start of the tune through the top-level `K:` line.
    pub fn header_lines(&self) -> &[Segment] {
        &self.lines[..self.header_count]
    }

    pub fn body_lines(&self) -> &[Segment] {
        &self.lines[self.header_count..]
    }

    pub fn lines(&self) -> &[Segment] {
        &self.lines
    }

    pub fn voices(&self) -> &[VoiceBody] {
        &self.voices
    }

    pub fn voice(&self, id: &str) -> Option<&VoiceBody> {
        self.voices.iter().find(|v| v.voice_id == id)
    }

    /// Header text including the trailing newline of the `K:` line.
    pub fn header_text(&self) -> &[u8] {
        let end = self.header_lines().last().map(|s| s.span.end).unwrap_or(0);
        &self.source_text[..end]
    }

    /// Re-serializes header and body lines.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.source_text.len());
        for line in &self.lines {
            out.extend_from_slice(line.bytes(&self.source_text));
        }
        out
    }
}

/// One symbol of the patch alphabet: a raw byte (0..=255) or one of the
/// three specials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SymbolId(pub u16);

impl SymbolId {
    pub const PAD: SymbolId = SymbolId(256);
    pub const BOS: SymbolId = SymbolId(257);
    pub const EOS: SymbolId = SymbolId(258);
    /// Number of distinct symbols.
    pub const ALPHABET_SIZE: usize = 259;

    pub fn from_byte(b: u8) -> Self {
        SymbolId(b as u16)
    }

    pub fn as_byte(self) -> Option<u8> {
        u8::try_from(self.0).ok()
    }

    pub fn is_special(self) -> bool {
        self.0 >= 256
    }

    pub fn is_valid(self) -> bool {
        (self.0 as usize) < Self::ALPHABET_SIZE
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PatchMethod {
    Byte,
    Bar,
    BarStream,
    LineStream,
}

impl PatchMethod {
    pub const ALL: [PatchMethod; 4] = [
        PatchMethod::Byte,
        PatchMethod::Bar,
        PatchMethod::BarStream,
        PatchMethod::LineStream,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PatchMethod::Byte => "byte",
            PatchMethod::Bar => "bar",
            PatchMethod::BarStream => "bar-stream",
            PatchMethod::LineStream => "line-stream",
        }
    }

    pub fn default_patch_size(self) -> usize {
        match self {
            PatchMethod::Bar => DEFAULT_BAR_PATCH_SIZE,
            _ => DEFAULT_PATCH_SIZE,
        }
    }

    /// Whether `detokenize(tokenize(x)) == x` holds unconditionally.
    pub fn is_lossless(self) -> bool {
        !matches!(self, PatchMethod::Bar)
    }
}

impl fmt::Display for PatchMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PatchMethod {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "byte" => Ok(PatchMethod::Byte),
            "bar" => Ok(PatchMethod::Bar),
            "bar-stream" | "bar_stream" | "barstream" => Ok(PatchMethod::BarStream),
            "line-stream" | "line_stream" | "linestream" => Ok(PatchMethod::LineStream),
            other => Err(ConfigError::UnknownMethod(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("{0} must be positive")]
    NotPositive(&'static str),
    #[error("unknown patching method `{0}`")]
    UnknownMethod(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PatchConfig {
    pub method: PatchMethod,
    pub patch_size: usize,
    pub patch_length: usize,
}

impl PatchConfig {
    /// Configuration with the default patch size for `method` and the default
    /// patch length.
    pub fn new(method: PatchMethod) -> Self {
        PatchConfig {
            method,
            patch_size: method.default_patch_size(),
            patch_length: DEFAULT_PATCH_LENGTH,
        }
    }

    pub fn with_sizes(
        method: PatchMethod,
        patch_size: usize,
        patch_length: usize,
    ) -> Result<Self, ConfigError> {
        if patch_size == 0 {
            return Err(ConfigError::NotPositive("patch_size"));
        }
        if patch_length == 0 {
            return Err(ConfigError::NotPositive("patch_length"));
        }
        Ok(PatchConfig {
            method,
            patch_size,
            patch_length,
        })
    }
}

/// Fixed-width patches of symbol ids produced by one of the patching
/// tokenizers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchSequence {
    pub patches: Vec<Vec<SymbolId>>,
    pub config: PatchConfig,
    /// Segments cut short to fit one patch (bar patching only).
    pub truncated_bar_count: usize,
    /// Whole patches dropped to respect `patch_length`.
    pub dropped_patches: usize,
}

impl PatchSequence {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }

    /// Number of non-special symbols across all rows.
    pub fn byte_count(&self) -> usize {
        self.patches
            .iter()
            .flatten()
            .filter(|s| !s.is_special())
            .count()
    }

    pub fn pad_count(&self) -> usize {
        self.patches
            .iter()
            .flatten()
            .filter(|&&s| s == SymbolId::PAD)
            .count()
    }

    pub fn is_sequence_truncated(&self) -> bool {
        self.dropped_patches > 0
    }
}

/// Normalizes raw tune text: strips a UTF-8 byte-order mark, converts CRLF
/// to LF and guarantees a trailing newline on non-empty input.
///
/// Runs of carriage returns before a line feed collapse with it, which keeps
/// the function idempotent.
pub fn normalize(raw: &[u8]) -> Vec<u8> {
    let mut body = raw;
    while let Some(rest) = body.strip_prefix(b"\xEF\xBB\xBF") {
        body = rest;
    }
    let mut out = Vec::with_capacity(body.len() + 1);
    let newline = |out: &mut Vec<u8>| {
        while out.last() == Some(&b'\r') {
            out.pop();
        }
        out.push(b'\n');
    };
    for &b in body {
        if b == b'\n' {
            newline(&mut out);
        } else {
            out.push(b);
        }
    }
    if !body.is_empty() && out.last() != Some(&b'\n') {
        newline(&mut out);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn defaults_follow_method() {
        assert_eq!(PatchConfig::new(PatchMethod::Bar).patch_size, 64);
        assert_eq!(PatchConfig::new(PatchMethod::Byte).patch_size, 16);
        assert_eq!(PatchConfig::new(PatchMethod::LineStream).patch_length, 512);
    }

    #[test]
    fn zero_sizes_rejected() {
        assert!(PatchConfig::with_sizes(PatchMethod::Byte, 0, 4).is_err());
        assert!(PatchConfig::with_sizes(PatchMethod::Byte, 4, 0).is_err());
    }

    #[test]
    fn method_names_parse() {
        for m in PatchMethod::ALL {
            assert_eq!(m.name().parse::<PatchMethod>().unwrap(), m);
        }
        assert!("bpe".parse::<PatchMethod>().is_err());
    }

    #[test]
    fn normalize_handles_bom_and_crlf() {
        assert_eq!(normalize(b"\xEF\xBB\xBFX:1\r\nK:C"), b"X:1\nK:C\n");
        assert_eq!(normalize(b""), b"");
        assert_eq!(normalize(b"a\rb\n"), b"a\rb\n");
        assert_eq!(normalize(b"a\r\r\n"), b"a\n");
        assert_eq!(normalize(b"\xEF\xBB\xBF\xEF\xBB\xBFK:C\n"), b"K:C\n");
    }

    proptest! {
        #[test]
        fn normalize_is_idempotent(raw in proptest::collection::vec(any::<u8>(), 0..200)) {
            let once = normalize(&raw);
            prop_assert_eq!(normalize(&once), once);
        }
    }
}
