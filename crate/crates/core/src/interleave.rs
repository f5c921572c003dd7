//! Interleaved multi-voice layout: body line `i` holds bar `i` of every
//! voice, each prefixed by an inline `[V:id]` tag.

use thiserror::Error;

use crate::model::{normalize, AbcTune, SegmentKind};
use crate::parser::{
    field_letter, field_value, inline_voice_id, lex_music_lenient, parse_normalized,
    split_bars_lenient, voice_id_of, LexemeKind, ParseError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InterleaveError {
    #[error("voices disagree on bar count: {0:?}")]
    VoiceMisalignment(Vec<usize>),
    #[error("line {line}: music line must start with a `[V:id]` tag")]
    MalformedVoiceTag { line: usize },
    #[error("line {line}: voices {found:?} differ from {expected:?}")]
    InconsistentVoiceSet {
        line: usize,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error(transparent)]
    Parse(#[from] ParseError),
}

/// Bars of one voice with newlines and `%` comments removed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VoiceBars {
    pub voice_id: String,
    pub bars: Vec<Vec<u8>>,
}

/// Per-voice bar contents, in voice declaration order.
///
/// Whitespace left over after a voice's last barline on a line joins the
/// preceding bar.
pub fn voice_bars(tune: &AbcTune) -> Vec<VoiceBars> {
    let text = tune.source_text();
    tune.voices()
        .iter()
        .map(|voice| {
            let mut bars: Vec<Vec<u8>> = Vec::new();
            for &span in &voice.music_lines {
                for bar in split_bars_lenient(text, span) {
                    let mut content = Vec::with_capacity(bar.len());
                    for lx in lex_music_lenient(text, bar.span) {
                        if lx.kind != LexemeKind::Comment {
                            content.extend(lx.span.slice(text).iter().filter(|&&b| b != b'\n'));
                        }
                    }
                    if content.iter().all(u8::is_ascii_whitespace) {
                        if let Some(last) = bars.last_mut() {
                            last.extend_from_slice(&content);
                        }
                    } else {
                        bars.push(content);
                    }
                }
            }
            VoiceBars {
                voice_id: voice.voice_id.clone(),
                bars,
            }
        })
        .collect()
}

/// Serializes a tune in interleaved form: the original header, then one line
/// per bar index with every voice's bar in declaration order.
pub fn to_interleaved(tune: &AbcTune) -> Result<Vec<u8>, InterleaveError> {
    let voices = voice_bars(tune);
    let counts: Vec<usize> = voices.iter().map(|v| v.bars.len()).collect();
    if counts.windows(2).any(|w| w[0] != w[1]) {
        return Err(InterleaveError::VoiceMisalignment(counts));
    }
    let mut out = tune.header_text().to_vec();
    for i in 0..counts.first().copied().unwrap_or(0) {
        for v in &voices {
            out.extend_from_slice(b"[V:");
            out.extend_from_slice(v.voice_id.as_bytes());
            out.push(b']');
            out.extend_from_slice(&v.bars[i]);
        }
        out.push(b'\n');
    }
    Ok(out)
}

/// Parses interleaved text back into a tune, checking that every music line
/// carries each voice exactly once in a fixed order.
pub fn from_interleaved(text: &[u8]) -> Result<AbcTune, InterleaveError> {
    let tune = match parse_normalized(normalize(text), true) {
        Ok(t) => t,
        Err(ParseError::EmptyVoiceId { position }) => {
            let line = normalize(text)[..position]
                .iter()
                .filter(|&&b| b == b'\n')
                .count()
                + 1;
            return Err(InterleaveError::MalformedVoiceTag { line });
        }
        Err(e) => return Err(e.into()),
    };
    let src = tune.source_text();

    let declared: Vec<String> = tune
        .header_lines()
        .iter()
        .filter(|s| s.kind == SegmentKind::HeaderLine)
        .map(|s| s.bytes(src))
        .filter(|b| field_letter(b) == Some(b'V'))
        .filter_map(|b| voice_id_of(field_value(b)))
        .collect();
    let mut expected = if declared.is_empty() {
        None
    } else {
        Some(declared)
    };

    for (n, line) in tune
        .lines()
        .iter()
        .enumerate()
        .skip(tune.header_lines().len())
    {
        if line.kind != SegmentKind::MusicLine {
            continue;
        }
        let line_no = n + 1;
        let lexemes = lex_music_lenient(src, line.span);
        let starts_with_tag = lexemes.first().is_some_and(|lx| {
            lx.kind == LexemeKind::InlineField(b'V') && lx.span.start == line.span.start
        });
        if !starts_with_tag {
            return Err(InterleaveError::MalformedVoiceTag { line: line_no });
        }
        let found: Vec<String> = lexemes
            .iter()
            .filter(|lx| lx.kind == LexemeKind::InlineField(b'V'))
            .map(|lx| inline_voice_id(src, lx))
            .collect::<Option<_>>()
            .ok_or(InterleaveError::MalformedVoiceTag { line: line_no })?;
        match &expected {
            None => expected = Some(found),
            Some(exp) if *exp != found => {
                return Err(InterleaveError::InconsistentVoiceSet {
                    line: line_no,
                    expected: exp.clone(),
                    found,
                })
            }
            Some(_) => {}
        }
    }
    Ok(tune)
}
