//! Tokenizers for multitrack sheet music in ABC notation.
//!
//! Four patching schemes (byte, bar, bar-stream and line-stream) cut score
//! text into fixed-width rows of byte symbols for a hierarchical decoder; a
//! byte-level BPE trainer and codec covers the flat-token alternative.
//! Supporting modules convert multi-voice tunes into interleaved form,
//! transpose tunes across the fifteen major key signatures and compute
//! corpus statistics and bits-per-byte.

pub mod augment;
pub mod bpe;
pub mod interleave;
pub mod metrics;
pub mod model;
pub mod parser;
pub mod patchers;

pub use model::{
    normalize, AbcTune, PatchConfig, PatchMethod, PatchSequence, Segment, SegmentKind, Span,
    SymbolId, VoiceBody,
};
pub use parser::{parse_tune, split_bars, split_lines, ParseError};
