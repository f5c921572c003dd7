//! Line classification, barline detection and tune parsing.
//!
//! Everything here works on normalized byte text (see [`crate::normalize`]).
//! Spans returned by this module always index into the buffer they were
//! computed from, and the segments of one buffer tile it exactly.

use std::collections::HashMap;

use thiserror::Error;

use crate::model::{normalize, AbcTune, Segment, SegmentKind, Span, VoiceBody};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("missing `{0}:` header field")]
    MissingHeaderField(char),
    #[error("duplicate `{0}:` header field")]
    DuplicateHeaderField(char),
    #[error("tune has no music lines")]
    EmptyBody,
    #[error("unterminated quoted string at byte {position}")]
    UnterminatedQuote { position: usize },
    #[error("voice field without an id at byte {position}")]
    EmptyVoiceId { position: usize },
}

/// Lexical category of a stretch of a music line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LexemeKind {
    /// Notes, rests, rhythm marks, decorations and anything else.
    Text,
    Barline,
    /// `"..."`, including both quotes.
    Quoted,
    /// `[X:...]`, carrying the field letter.
    InlineField(u8),
    /// `{...}` grace notes, including both braces.
    Grace,
    /// `%` to end of line.
    Comment,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lexeme {
    pub kind: LexemeKind,
    pub span: Span,
}

/// Returns the field letter of a line shaped like `X:...`.
pub fn field_letter(line: &[u8]) -> Option<u8> {
    match line {
        [c, b':', ..] if c.is_ascii_alphabetic() || *c == b'+' => Some(*c),
        _ => None,
    }
}

/// The value of a field line with its letter, colon and line ending removed.
pub fn field_value(line: &[u8]) -> &[u8] {
    let body = line.strip_suffix(b"\n").unwrap_or(line);
    body.get(2..).unwrap_or(&[])
}

/// Voice id in a `V:` field value: its first whitespace-delimited word.
pub fn voice_id_of(value: &[u8]) -> Option<String> {
    let word: Vec<u8> = value
        .iter()
        .copied()
        .skip_while(|b| b.is_ascii_whitespace())
        .take_while(|b| !b.is_ascii_whitespace())
        .collect();
    if word.is_empty() {
        None
    } else {
        Some(String::from_utf8_lossy(&word).into_owned())
    }
}

pub fn classify_line(line: &[u8]) -> SegmentKind {
    let content = line.strip_suffix(b"\n").unwrap_or(line);
    if content.iter().all(u8::is_ascii_whitespace) || content.starts_with(b"%") {
        SegmentKind::Comment
    } else if content.starts_with(b"w:") {
        SegmentKind::LyricLine
    } else if field_letter(content).is_some() {
        SegmentKind::HeaderLine
    } else {
        SegmentKind::MusicLine
    }
}

/// One segment per line, each including its terminating `\n`.
pub fn split_lines(text: &[u8]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < text.len() {
        let end = text[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|p| start + p + 1)
            .unwrap_or(text.len());
        out.push(Segment::new(
            Span::new(start, end),
            classify_line(&text[start..end]),
        ));
        start = end;
    }
    out
}

/// Splits a buffer into tunes at every line that starts with `X:`.
///
/// Text before the first `X:` line stays with the first tune so the pieces
/// tile the input.
pub fn split_tunes(text: &[u8]) -> Vec<Span> {
    let starts: Vec<usize> = split_lines(text)
        .into_iter()
        .filter(|s| s.bytes(text).starts_with(b"X:"))
        .map(|s| s.span.start)
        .skip(1)
        .collect();
    let mut out = Vec::with_capacity(starts.len() + 1);
    let mut prev = 0;
    for s in starts {
        out.push(Span::new(prev, s));
        prev = s;
    }
    if prev < text.len() {
        out.push(Span::new(prev, text.len()));
    }
    out
}

fn find_byte(text: &[u8], from: usize, end: usize, needle: u8) -> Option<usize> {
    text[from..end]
        .iter()
        .position(|&b| b == needle)
        .map(|p| from + p)
}

fn consume_ending(text: &[u8], mut k: usize, end: usize) -> usize {
    while k < end && text[k].is_ascii_digit() {
        k += 1;
    }
    while k + 1 < end && matches!(text[k], b',' | b'-') && text[k + 1].is_ascii_digit() {
        k += 1;
        while k < end && text[k].is_ascii_digit() {
            k += 1;
        }
    }
    k
}

/// `(p:q:r` and `(p::r` tuplet specs contain colons that are not barlines.
fn inside_tuplet_spec(text: &[u8], floor: usize, i: usize) -> bool {
    let mut j = i;
    while j > floor && (text[j - 1].is_ascii_digit() || text[j - 1] == b':') {
        j -= 1;
    }
    j > floor && j < i && text[j - 1] == b'(' && text[j].is_ascii_digit()
}

/// End offset of the barline token starting at `i`, if one starts there.
fn barline_end(text: &[u8], floor: usize, i: usize, end: usize) -> Option<usize> {
    let next = text.get(i + 1).copied().filter(|_| i + 1 < end);
    let run_start = match text[i] {
        b'|' => i,
        b'[' if next == Some(b'|') => i + 1,
        b':' if matches!(next, Some(b'|') | Some(b':')) => {
            if inside_tuplet_spec(text, floor, i) {
                return None;
            }
            i
        }
        _ => return None,
    };
    let mut k = run_start;
    while k < end {
        match text[k] {
            b'|' | b':' => k += 1,
            b']' if text[k - 1] == b'|' => k += 1,
            _ => break,
        }
    }
    if k < end && text[k].is_ascii_digit() {
        k = consume_ending(text, k, end);
    } else if k + 1 < end && text[k] == b'[' && text[k + 1].is_ascii_digit() {
        k = consume_ending(text, k + 1, end);
    }
    Some(k)
}

/// Splits one music line into lexemes.
///
/// With `quote_aware` set, `"` opens a quoted string that must close on the
/// same line; otherwise quotes are ordinary text.
pub fn lex_music(text: &[u8], line: Span, quote_aware: bool) -> Result<Vec<Lexeme>, ParseError> {
    let end = line.end;
    let mut out: Vec<Lexeme> = Vec::new();
    let mut text_start: Option<usize> = None;
    let mut i = line.start;

    let push = |out: &mut Vec<Lexeme>, text_start: &mut Option<usize>, kind, a, b| {
        if let Some(t) = text_start.take() {
            out.push(Lexeme {
                kind: LexemeKind::Text,
                span: Span::new(t, a),
            });
        }
        out.push(Lexeme {
            kind,
            span: Span::new(a, b),
        });
    };

    while i < end {
        let c = text[i];
        let matched = match c {
            b'"' if quote_aware => {
                let close = find_byte(text, i + 1, end, b'"')
                    .ok_or(ParseError::UnterminatedQuote { position: i })?;
                Some((LexemeKind::Quoted, close + 1))
            }
            b'%' => Some((LexemeKind::Comment, end)),
            b'{' => find_byte(text, i + 1, end, b'}').map(|c| (LexemeKind::Grace, c + 1)),
            b'[' if i + 2 < end && text[i + 1].is_ascii_alphabetic() && text[i + 2] == b':' => {
                find_byte(text, i + 3, end, b']')
                    .map(|c| (LexemeKind::InlineField(text[i + 1]), c + 1))
            }
            b'|' | b'[' | b':' => {
                barline_end(text, line.start, i, end).map(|e| (LexemeKind::Barline, e))
            }
            _ => None,
        };
        match matched {
            Some((kind, stop)) => {
                push(&mut out, &mut text_start, kind, i, stop);
                i = stop;
            }
            None => {
                text_start.get_or_insert(i);
                i += 1;
            }
        }
    }
    if let Some(t) = text_start {
        out.push(Lexeme {
            kind: LexemeKind::Text,
            span: Span::new(t, end),
        });
    }
    Ok(out)
}

/// Lexes quote-aware, falling back to quote-blind scanning on malformed
/// quoting.
pub fn lex_music_lenient(text: &[u8], line: Span) -> Vec<Lexeme> {
    lex_music(text, line, true)
        .or_else(|_| lex_music(text, line, false))
        .expect("quote-blind lexing is total")
}

/// Id carried by an inline `[V:...]` lexeme.
pub fn inline_voice_id(text: &[u8], lexeme: &Lexeme) -> Option<String> {
    let inner = &text[lexeme.span.start + 3..lexeme.span.end - 1];
    voice_id_of(inner)
}

fn bars_from_lexemes(
    text: &[u8],
    line: Span,
    lexemes: &[Lexeme],
    voice: &mut Option<String>,
) -> Vec<Segment> {
    let mut out: Vec<Segment> = Vec::new();
    let mut start = line.start;
    for lx in lexemes {
        match lx.kind {
            LexemeKind::InlineField(b'V') => {
                if let Some(id) = inline_voice_id(text, lx) {
                    *voice = Some(id);
                }
            }
            LexemeKind::Barline => {
                out.push(Segment {
                    span: Span::new(start, lx.span.end),
                    kind: SegmentKind::Bar,
                    voice_id: voice.clone(),
                });
                start = lx.span.end;
            }
            _ => {}
        }
    }
    if start < line.end {
        let rest = &text[start..line.end];
        match out.last_mut() {
            Some(last) if rest.iter().all(u8::is_ascii_whitespace) => last.span.end = line.end,
            _ => out.push(Segment {
                span: Span::new(start, line.end),
                kind: SegmentKind::Bar,
                voice_id: voice.clone(),
            }),
        }
    }
    out
}

/// Splits a music line into bars.
///
/// Each bar ends right after its barline; trailing whitespace and the line's
/// newline attach to the last bar. Barlines inside quoted strings, inline
/// fields and grace braces are ignored.
pub fn split_bars(text: &[u8], line: Span) -> Result<Vec<Segment>, ParseError> {
    let lexemes = lex_music(text, line, true)?;
    Ok(bars_from_lexemes(text, line, &lexemes, &mut None))
}

/// [`split_bars`] that treats `"` as ordinary text.
pub fn split_bars_quote_blind(text: &[u8], line: Span) -> Vec<Segment> {
    let lexemes = lex_music(text, line, false).expect("quote-blind lexing is total");
    bars_from_lexemes(text, line, &lexemes, &mut None)
}

/// Splits any span of music into bars, quote-blind if quoting is malformed.
pub fn split_bars_lenient(text: &[u8], span: Span) -> Vec<Segment> {
    let lexemes = lex_music_lenient(text, span);
    bars_from_lexemes(text, span, &lexemes, &mut None)
}

/// Segmentation shared by bar and bar-stream patching: non-music lines stay
/// whole, music lines are split into bars.
///
/// Lines with malformed quoting are split quote-blind.
pub fn segment_bars(text: &[u8]) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut voice: Option<String> = None;
    for line in split_lines(text) {
        match line.kind {
            SegmentKind::MusicLine => {
                let lexemes = lex_music_lenient(text, line.span);
                out.extend(bars_from_lexemes(text, line.span, &lexemes, &mut voice));
            }
            SegmentKind::HeaderLine => {
                let bytes = line.bytes(text);
                if field_letter(bytes) == Some(b'V') {
                    if let Some(id) = voice_id_of(field_value(bytes)) {
                        voice = Some(id);
                    }
                }
                out.push(line);
            }
            _ => out.push(line),
        }
    }
    out
}

#[derive(Default)]
struct VoiceAssembler {
    order: Vec<String>,
    spans: HashMap<String, Vec<Span>>,
    current: Option<String>,
}

impl VoiceAssembler {
    fn declare(&mut self, id: &str) {
        if !self.spans.contains_key(id) {
            self.order.push(id.to_string());
            self.spans.insert(id.to_string(), Vec::new());
        }
    }

    fn switch(&mut self, id: String) {
        self.declare(&id);
        self.current = Some(id);
    }

    fn push(&mut self, text: &[u8], span: Span) {
        if text[span.start..span.end]
            .iter()
            .all(u8::is_ascii_whitespace)
        {
            return;
        }
        let id = match &self.current {
            Some(id) => id.clone(),
            None => {
                let id = self.order.first().cloned().unwrap_or_else(|| "1".into());
                self.switch(id.clone());
                id
            }
        };
        self.spans.get_mut(&id).expect("declared").push(span);
    }

    fn finish(mut self) -> Vec<VoiceBody> {
        self.order
            .into_iter()
            .map(|id| {
                let music_lines = self.spans.remove(&id).unwrap_or_default();
                VoiceBody {
                    voice_id: id,
                    music_lines,
                }
            })
            .collect()
    }
}

fn voice_field_id(text: &[u8], line: &Segment) -> Result<String, ParseError> {
    voice_id_of(field_value(line.bytes(text))).ok_or(ParseError::EmptyVoiceId {
        position: line.span.start,
    })
}

pub(crate) fn parse_normalized(
    text: Vec<u8>,
    allow_empty_body: bool,
) -> Result<AbcTune, ParseError> {
    let lines = split_lines(&text);
    let is_field = |s: &Segment, letter: u8| {
        s.kind == SegmentKind::HeaderLine && field_letter(s.bytes(&text)) == Some(letter)
    };
    let key_at = lines
        .iter()
        .position(|s| is_field(s, b'K'))
        .ok_or(ParseError::MissingHeaderField('K'))?;
    let header_count = key_at + 1;
    match lines[..header_count]
        .iter()
        .filter(|s| is_field(s, b'X'))
        .count()
    {
        0 => return Err(ParseError::MissingHeaderField('X')),
        1 => {}
        _ => return Err(ParseError::DuplicateHeaderField('X')),
    }

    let mut voices = VoiceAssembler::default();
    for line in lines[..header_count].iter().filter(|s| is_field(s, b'V')) {
        let id = voice_field_id(&text, line)?;
        voices.declare(&id);
    }
    for line in &lines[header_count..] {
        match line.kind {
            SegmentKind::HeaderLine if is_field(line, b'V') => {
                voices.switch(voice_field_id(&text, line)?);
            }
            SegmentKind::MusicLine => {
                let mut chunk_start = line.span.start;
                for lx in lex_music_lenient(&text, line.span) {
                    if lx.kind != LexemeKind::InlineField(b'V') {
                        continue;
                    }
                    let id = inline_voice_id(&text, &lx).ok_or(ParseError::EmptyVoiceId {
                        position: lx.span.start,
                    })?;
                    voices.push(&text, Span::new(chunk_start, lx.span.start));
                    voices.switch(id);
                    chunk_start = lx.span.end;
                }
                voices.push(&text, Span::new(chunk_start, line.span.end));
            }
            _ => {}
        }
    }
    let voices = voices.finish();
    let has_music = voices.iter().any(|v| !v.music_lines.is_empty());
    if !has_music && !allow_empty_body {
        return Err(ParseError::EmptyBody);
    }
    let voices = if voices.is_empty() {
        vec![VoiceBody {
            voice_id: "1".into(),
            music_lines: Vec::new(),
        }]
    } else {
        voices
    };
    Ok(AbcTune {
        source_text: text,
        lines,
        header_count,
        voices,
    })
}

/// Parses one tune. The header ends at the first `K:` line; music after it
/// is assigned to voices by `V:` lines and inline `[V:id]` tags.
pub fn parse_tune(text: &[u8]) -> Result<AbcTune, ParseError> {
    parse_normalized(normalize(text), false)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bars(line: &str) -> Vec<String> {
        let t = line.as_bytes();
        split_bars(t, Span::new(0, t.len()))
            .unwrap()
            .iter()
            .map(|s| String::from_utf8(s.bytes(t).to_vec()).unwrap())
            .collect()
    }

    fn barlines(line: &str) -> Vec<String> {
        let t = line.as_bytes();
        lex_music(t, Span::new(0, t.len()), true)
            .unwrap()
            .iter()
            .filter(|l| l.kind == LexemeKind::Barline)
            .map(|l| String::from_utf8(l.span.slice(t).to_vec()).unwrap())
            .collect()
    }

    #[test]
    fn minimal_tune() {
        let tune = parse_tune(b"X:1\nK:C\nCDEF|]\n").unwrap();
        assert_eq!(tune.header_lines().len(), 2);
        assert_eq!(tune.voices().len(), 1);
        assert_eq!(tune.voices()[0].music_lines.len(), 1);
        assert_eq!(tune.to_bytes(), b"X:1\nK:C\nCDEF|]\n");
    }

    #[test]
    fn missing_fields() {
        assert_eq!(
            parse_tune(b"X:1\nCDEF|]\n").unwrap_err(),
            ParseError::MissingHeaderField('K')
        );
        assert_eq!(
            parse_tune(b"T:x\nK:C\nCDEF|]\n").unwrap_err(),
            ParseError::MissingHeaderField('X')
        );
        assert_eq!(
            parse_tune(b"X:1\nX:2\nK:C\nC|\n").unwrap_err(),
            ParseError::DuplicateHeaderField('X')
        );
        assert_eq!(
            parse_tune(b"X:1\nK:C\n% nothing\n").unwrap_err(),
            ParseError::EmptyBody
        );
    }

    #[test]
    fn voices_from_fields_and_inline_tags() {
        let src = b"X:1\nV:1 clef=treble\nV:2 clef=bass\nK:G\nV:1\nGABc|d4|]\nV:2\nG,2B,2|D4|]\n";
        let tune = parse_tune(src).unwrap();
        let ids: Vec<_> = tune.voices().iter().map(|v| v.voice_id.as_str()).collect();
        assert_eq!(ids, ["1", "2"]);
        assert_eq!(tune.voices()[1].music_lines.len(), 1);

        let inter = b"X:1\nK:C\n[V:1]C|[V:2]E,|\n[V:1]D|][V:2]F,|]\n";
        let tune = parse_tune(inter).unwrap();
        let v2 = tune.voice("2").unwrap();
        assert_eq!(v2.music_lines[0].slice(tune.source_text()), b"E,|\n");
        assert_eq!(v2.music_lines[1].slice(tune.source_text()), b"F,|]\n");
    }

    #[test]
    fn music_before_voice_goes_to_first_declared() {
        let tune = parse_tune(b"X:1\nV:A\nV:B\nK:C\nCD|\nV:B\nEF|\n").unwrap();
        assert_eq!(tune.voice("A").unwrap().music_lines.len(), 1);
        assert_eq!(tune.voice("B").unwrap().music_lines.len(), 1);
    }

    #[test]
    fn bar_examples() {
        assert_eq!(bars("CDEF|GABc|]\n"), ["CDEF|", "GABc|]\n"]);
        assert_eq!(bars("\"A|B\"C|\n"), ["\"A|B\"C|\n"]);
        assert_eq!(bars("CDEF\n"), ["CDEF\n"]);
        assert_eq!(bars("CD|EF|  \n"), ["CD|", "EF|  \n"]);
        assert_eq!(bars("CD|EF % a|b\n"), ["CD|", "EF % a|b\n"]);
    }

    #[test]
    fn skips_fields_and_grace_notes() {
        assert_eq!(bars("[K:C]CD{|g}E|F|\n"), ["[K:C]CD{|g}E|", "F|\n"]);
        assert_eq!(bars("[V:1]C|[V:2]E,|\n"), ["[V:1]C|", "[V:2]E,|\n"]);
    }

    #[test]
    fn barline_forms() {
        assert_eq!(
            barlines("|:AB:|CD||EF|]GA[|Bc::de|1fg:|2ab|[3c|"),
            ["|:", ":|", "||", "|]", "[|", "::", "|1", ":|2", "|[3", "|"]
        );
        assert_eq!(barlines("A|1,2B:|"), ["|1,2", ":|"]);
        assert_eq!(barlines("[|]A"), ["[|]"]);
        // tuplet specs are not barlines
        assert_eq!(barlines("(3::2abc|"), ["|"]);
        // chords after barlines stay chords
        assert_eq!(barlines("A|[CEG]|"), ["|", "|"]);
    }

    #[test]
    fn unterminated_quote_is_an_error() {
        let t = b"\"Am C|D|\n";
        assert!(matches!(
            split_bars(t, Span::new(0, t.len())),
            Err(ParseError::UnterminatedQuote { position: 0 })
        ));
        assert_eq!(split_bars_quote_blind(t, Span::new(0, t.len())).len(), 2);
    }

    #[test]
    fn line_examples() {
        let segs = split_lines(b"K:C\nCDE|\n");
        assert_eq!(segs.iter().map(Segment::len).collect::<Vec<_>>(), [4, 5]);
        assert_eq!(segs[0].kind, SegmentKind::HeaderLine);
        assert_eq!(segs[1].kind, SegmentKind::MusicLine);
        assert!(split_lines(b"").is_empty());
        let kinds: Vec<_> = split_lines(b"% c\nw:la la\n\nT:x\n")
            .iter()
            .map(|s| s.kind)
            .collect();
        assert_eq!(
            kinds,
            [
                SegmentKind::Comment,
                SegmentKind::LyricLine,
                SegmentKind::Comment,
                SegmentKind::HeaderLine
            ]
        );
    }

    #[test]
    fn segment_bars_tracks_voices() {
        let t = b"X:1\nK:C\nV:2\nC|D|\n";
        let segs = segment_bars(t);
        assert_eq!(segs.len(), 5);
        assert_eq!(segs[3].voice_id.as_deref(), Some("2"));
    }

    #[test]
    fn tunes_split_at_x_lines() {
        let t = b"% file\nX:1\nK:C\nC|\n\nX:2\nK:D\nD|\n";
        let spans = split_tunes(t);
        assert_eq!(spans.len(), 2);
        assert_eq!(spans[1].slice(t), b"X:2\nK:D\nD|\n");
        assert_eq!(spans[0].end, spans[1].start);
    }
}
