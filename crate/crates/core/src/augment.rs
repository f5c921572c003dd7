//! Key-signature augmentation: transposition of whole tunes into the fifteen
//! major key signatures (seven flats through seven sharps).
//!
//! Pitches are tracked as MIDI numbers with middle C (`C`) at 60. An explicit
//! accidental holds for the same letter and octave until the next barline in
//! the same voice. Transposed notes are re-spelled from the target key:
//! scale tones carry no accidental unless bar state demands one; other tones
//! raise the scale degree below (sharp-side keys, including C) or lower the
//! scale degree above (flat-side keys).

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{AbcTune, SegmentKind, Span};
use crate::parser::{
    field_letter, inline_voice_id, lex_music_lenient, parse_tune, voice_id_of, LexemeKind,
    ParseError,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AugmentError {
    #[error("unrecognized key `{0}`")]
    UnrecognizedKey(String),
    #[error("key change to `{0}` leaves the fifteen major signatures")]
    UnsupportedKeyChange(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
}

const LETTERS: [u8; 7] = *b"CDEFGAB";
const NATURAL_PC: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Order in which sharps are added to a key signature, as letter indices.
const SHARP_ORDER: [usize; 7] = [3, 0, 4, 1, 5, 2, 6];

fn letter_index(letter: u8) -> Option<usize> {
    LETTERS
        .iter()
        .position(|&l| l == letter.to_ascii_uppercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Accidental {
    Flat,
    Natural,
    Sharp,
}

impl Accidental {
    pub fn semitones(self) -> i32 {
        match self {
            Accidental::Flat => -1,
            Accidental::Natural => 0,
            Accidental::Sharp => 1,
        }
    }

    fn from_semitones(s: i32) -> Option<Self> {
        match s {
            -1 => Some(Accidental::Flat),
            0 => Some(Accidental::Natural),
            1 => Some(Accidental::Sharp),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Mode {
    Major,
}

/// A major key signature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct KeySignature {
    /// `A`..=`G`.
    pub tonic_letter: u8,
    pub tonic_accidental: Accidental,
    pub mode: Mode,
    /// Implied accidental per letter, indexed C, D, E, F, G, A, B.
    pub letter_accidentals: [Accidental; 7],
}

impl KeySignature {
    /// The key with `fifths` sharps (positive) or flats (negative), within
    /// -7..=7.
    pub fn from_fifths(fifths: i32) -> Option<Self> {
        if !(-7..=7).contains(&fifths) {
            return None;
        }
        let letter = (fifths * 4).rem_euclid(7) as usize;
        let pc = (fifths * 7).rem_euclid(12);
        let alter = (pc - NATURAL_PC[letter] + 6).rem_euclid(12) - 6;
        let mut letter_accidentals = [Accidental::Natural; 7];
        if fifths > 0 {
            for &l in &SHARP_ORDER[..fifths as usize] {
                letter_accidentals[l] = Accidental::Sharp;
            }
        } else {
            for &l in SHARP_ORDER
                .iter()
                .rev()
                .take(fifths.unsigned_abs() as usize)
            {
                letter_accidentals[l] = Accidental::Flat;
            }
        }
        Some(KeySignature {
            tonic_letter: LETTERS[letter],
            tonic_accidental: Accidental::from_semitones(alter)?,
            mode: Mode::Major,
            letter_accidentals,
        })
    }

    /// All fifteen majors from C♭ (seven flats) to C♯ (seven sharps).
    pub fn all_major() -> Vec<KeySignature> {
        (-7..=7).filter_map(Self::from_fifths).collect()
    }

    pub fn major(letter: u8, accidental: Accidental) -> Result<Self, AugmentError> {
        Self::all_major()
            .into_iter()
            .find(|k| {
                k.tonic_letter == letter.to_ascii_uppercase() && k.tonic_accidental == accidental
            })
            .ok_or_else(|| {
                AugmentError::UnrecognizedKey(format!(
                    "{}{}",
                    letter as char,
                    accidental_suffix(accidental)
                ))
            })
    }

    fn from_letter_pc(letter: usize, pc: i32) -> Option<Self> {
        let alter = (pc - NATURAL_PC[letter] + 6).rem_euclid(12) - 6;
        let acc = Accidental::from_semitones(alter)?;
        Self::major(LETTERS[letter], acc).ok()
    }

    pub fn fifths(&self) -> i32 {
        self.letter_accidentals.iter().map(|a| a.semitones()).sum()
    }

    fn letter(&self) -> usize {
        letter_index(self.tonic_letter).expect("tonic is A-G")
    }

    pub fn tonic_pitch_class(&self) -> i32 {
        (NATURAL_PC[self.letter()] + self.tonic_accidental.semitones()).rem_euclid(12)
    }

    /// Semitone alteration the signature implies for a letter index.
    fn alter(&self, letter: usize) -> i32 {
        self.letter_accidentals[letter].semitones()
    }

    fn scale_pc(&self, letter: usize) -> i32 {
        (NATURAL_PC[letter] + self.alter(letter)).rem_euclid(12)
    }

    pub fn name(&self) -> String {
        format!(
            "{}{}",
            self.tonic_letter as char,
            accidental_suffix(self.tonic_accidental)
        )
    }

    /// Spells a MIDI pitch in this key: `(letter index, alteration, octave)`
    /// where octave 4 holds middle C.
    fn spell(&self, pitch: i32) -> (usize, i32, i32) {
        let pc = pitch.rem_euclid(12);
        let (letter, alter) = if let Some(l) = (0..7).find(|&l| self.scale_pc(l) == pc) {
            (l, self.alter(l))
        } else if self.fifths() >= 0 {
            let l = (0..7)
                .find(|&l| self.scale_pc(l) == (pc - 1).rem_euclid(12))
                .expect("chromatic tone lies a semitone above a scale degree");
            (l, self.alter(l) + 1)
        } else {
            let l = (0..7)
                .find(|&l| self.scale_pc(l) == (pc + 1).rem_euclid(12))
                .expect("chromatic tone lies a semitone below a scale degree");
            (l, self.alter(l) - 1)
        };
        let octave = (pitch - alter - NATURAL_PC[letter]).div_euclid(12) - 1;
        (letter, alter, octave)
    }
}

fn accidental_suffix(a: Accidental) -> &'static str {
    match a {
        Accidental::Flat => "b",
        Accidental::Natural => "",
        Accidental::Sharp => "#",
    }
}

impl fmt::Display for KeySignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for KeySignature {
    type Err = AugmentError;

    /// Accepts `C`, `F#`, `Bb`, `F♯`, `B♭`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || AugmentError::UnrecognizedKey(s.to_string());
        let mut chars = s.trim().chars();
        let letter = chars
            .next()
            .filter(|c| c.is_ascii_alphabetic())
            .ok_or_else(bad)?;
        let acc = match chars.as_str() {
            "" => Accidental::Natural,
            "#" | "♯" => Accidental::Sharp,
            "b" | "♭" => Accidental::Flat,
            _ => return Err(bad()),
        };
        Self::major(letter as u8, acc).map_err(|_| bad())
    }
}

/// Modes a `K:` field may name, with the scale degree (in letters and
/// semitones) the mode's tonic occupies in its relative major.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ModeName {
    Major,
    Dorian,
    Phrygian,
    Lydian,
    Mixolydian,
    Minor,
    Locrian,
}

impl ModeName {
    fn degree(self) -> (usize, i32) {
        match self {
            ModeName::Major => (0, 0),
            ModeName::Dorian => (1, 2),
            ModeName::Phrygian => (2, 4),
            ModeName::Lydian => (3, 5),
            ModeName::Mixolydian => (4, 7),
            ModeName::Minor => (5, 9),
            ModeName::Locrian => (6, 11),
        }
    }

    fn from_word(word: &[u8]) -> Option<Self> {
        let w = word.to_ascii_lowercase();
        if w == b"m" {
            return Some(ModeName::Minor);
        }
        if w.len() < 3 {
            return None;
        }
        Some(match &w[..3] {
            b"maj" | b"ion" => ModeName::Major,
            b"min" | b"aeo" => ModeName::Minor,
            b"dor" => ModeName::Dorian,
            b"phr" => ModeName::Phrygian,
            b"lyd" => ModeName::Lydian,
            b"mix" => ModeName::Mixolydian,
            b"loc" => ModeName::Locrian,
            _ => return None,
        })
    }
}

/// A parsed `K:` value: the relative major it implies, the mode, and where
/// the tonic text sits in the value.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct KeyField {
    major: KeySignature,
    mode: ModeName,
    tonic: Span,
}

impl KeyField {
    fn parse(value: &[u8]) -> Result<Self, AugmentError> {
        let bad =
            || AugmentError::UnrecognizedKey(String::from_utf8_lossy(value).trim().to_string());
        let start = value
            .iter()
            .position(|b| !b.is_ascii_whitespace())
            .ok_or_else(bad)?;
        let letter = letter_index(value[start])
            .filter(|_| value[start].is_ascii_uppercase())
            .ok_or_else(bad)?;
        let mut end = start + 1;
        let alter = match value.get(end) {
            Some(b'#') => 1,
            Some(b'b') => -1,
            _ => 0,
        };
        if alter != 0 {
            end += 1;
        }
        let rest = &value[end..];
        let mut mode = ModeName::Major;
        let mut words = rest
            .split(|b| b.is_ascii_whitespace())
            .filter(|w| !w.is_empty())
            .peekable();
        // the mode word may follow the tonic directly (`Am`) or after a space
        let glued = rest.first().is_some_and(|b| b.is_ascii_alphabetic());
        if let Some(w) = words.peek() {
            let alpha: Vec<u8> = w
                .iter()
                .copied()
                .take_while(u8::is_ascii_alphabetic)
                .collect();
            let is_word = alpha.len() == w.len();
            if is_word {
                if let Some(m) = ModeName::from_word(&alpha) {
                    mode = m;
                    words.next();
                } else if glued {
                    return Err(bad());
                }
            } else if glued {
                return Err(bad());
            }
        }
        for w in words {
            if matches!(w.first(), Some(b'^' | b'_' | b'=')) {
                return Err(bad());
            }
        }
        let (steps, semis) = mode.degree();
        let major_letter = (letter + 7 - steps) % 7;
        let major_pc = (NATURAL_PC[letter] + alter - semis).rem_euclid(12);
        let major = KeySignature::from_letter_pc(major_letter, major_pc).ok_or_else(bad)?;
        Ok(KeyField {
            major,
            mode,
            tonic: Span::new(start, end),
        })
    }

    /// Tonic text for this field's mode over a different relative major.
    fn tonic_text(mode: ModeName, major: &KeySignature) -> String {
        let (steps, _) = mode.degree();
        let letter = (major.letter() + steps) % 7;
        let acc = major.letter_accidentals[letter];
        format!("{}{}", LETTERS[letter] as char, accidental_suffix(acc))
    }
}

/// Signed transposition interval from one major key to another, within
/// -6..=6 semitones. A tritone goes up when the target letter lies at most
/// three letters above the source letter and down otherwise, so that
/// transposing there and back always cancels.
pub fn interval_between(source: &KeySignature, target: &KeySignature) -> i32 {
    let d = (target.tonic_pitch_class() - source.tonic_pitch_class()).rem_euclid(12);
    match d {
        0..=5 => d,
        7..=11 => d - 12,
        _ => {
            let steps = (target.letter() + 7 - source.letter()) % 7;
            if steps <= 3 {
                6
            } else {
                -6
            }
        }
    }
}

/// The relative major of the tune's top-level `K:` field.
pub fn tune_key(tune: &AbcTune) -> Result<KeySignature, AugmentError> {
    let line = tune
        .header_lines()
        .last()
        .expect("header ends with K:")
        .bytes(tune.source_text());
    Ok(KeyField::parse(crate::parser::field_value(line))?.major)
}

/// A note token: optional accidental, letter, octave marks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NotePitch {
    /// Letter index, C = 0 .. B = 6.
    pub letter: usize,
    /// Explicit accidental in semitones (-2..=2).
    pub explicit_accidental: Option<i32>,
    /// Octave number; 4 holds middle C (`C`), 5 starts at `c`.
    pub octave: i32,
    pub span: Span,
}

impl NotePitch {
    /// MIDI number given the accidental in effect.
    pub fn chromatic(&self, alteration: i32) -> i32 {
        12 * (self.octave + 1) + NATURAL_PC[self.letter] + alteration
    }
}

fn write_note(out: &mut Vec<u8>, letter: usize, accidental: Option<i32>, octave: i32) {
    match accidental {
        Some(2) => out.extend_from_slice(b"^^"),
        Some(1) => out.push(b'^'),
        Some(0) => out.push(b'='),
        Some(-1) => out.push(b'_'),
        Some(-2) => out.extend_from_slice(b"__"),
        Some(a) => unreachable!("alteration {a} out of range"),
        None => {}
    }
    if octave >= 5 {
        out.push(LETTERS[letter].to_ascii_lowercase());
        out.extend(std::iter::repeat_n(b'\'', (octave - 5) as usize));
    } else {
        out.push(LETTERS[letter]);
        out.extend(std::iter::repeat_n(b',', (4 - octave) as usize));
    }
}

/// Finds note tokens in a stretch of music text (a text or grace lexeme).
///
/// `!...!` decorations are skipped, and so are `+...+` decorations whose
/// content has a letter outside A-G.
pub fn scan_notes(text: &[u8], span: Span) -> Vec<NotePitch> {
    let mut out = Vec::new();
    let mut i = span.start;
    let end = span.end;
    let closing = |from: usize, c: u8| {
        text[from..end]
            .iter()
            .position(|&b| b == c)
            .map(|p| from + p)
    };
    while i < end {
        let c = text[i];
        if c == b'!' {
            if let Some(j) = closing(i + 1, b'!') {
                i = j + 1;
                continue;
            }
        }
        if c == b'+' {
            if let Some(j) = closing(i + 1, b'+') {
                let inner = &text[i + 1..j];
                if inner
                    .iter()
                    .any(|b| b.is_ascii_alphabetic() && letter_index(*b).is_none())
                {
                    i = j + 1;
                    continue;
                }
            }
        }
        let start = i;
        let mut j = i;
        let accidental = match (text.get(j).copied(), text.get(j + 1).copied()) {
            (Some(b'^'), Some(b'^')) => {
                j += 2;
                Some(2)
            }
            (Some(b'_'), Some(b'_')) => {
                j += 2;
                Some(-2)
            }
            (Some(b'^'), _) => {
                j += 1;
                Some(1)
            }
            (Some(b'_'), _) => {
                j += 1;
                Some(-1)
            }
            (Some(b'='), _) => {
                j += 1;
                Some(0)
            }
            _ => None,
        };
        let letter = (j < end)
            .then(|| text[j])
            .filter(u8::is_ascii_alphabetic)
            .and_then(letter_index);
        let Some(letter) = letter else {
            i += 1;
            continue;
        };
        let mut octave = if text[j].is_ascii_lowercase() { 5 } else { 4 };
        j += 1;
        while j < end {
            match text[j] {
                b'\'' => octave += 1,
                b',' => octave -= 1,
                _ => break,
            }
            j += 1;
        }
        out.push(NotePitch {
            letter,
            explicit_accidental: accidental,
            octave,
            span: Span::new(start, j),
        });
        i = j;
    }
    out
}

/// Key and bar-local accidental state of one voice.
#[derive(Debug, Clone)]
struct VoiceState {
    source: KeySignature,
    target: KeySignature,
    source_bar: HashMap<(usize, i32), i32>,
    target_bar: HashMap<(usize, i32), i32>,
}

impl VoiceState {
    fn new(source: KeySignature, target: KeySignature) -> Self {
        VoiceState {
            source,
            target,
            source_bar: HashMap::new(),
            target_bar: HashMap::new(),
        }
    }

    fn new_bar(&mut self) {
        self.source_bar.clear();
        self.target_bar.clear();
    }

    fn source_pitch(&mut self, note: &NotePitch) -> i32 {
        let key = (note.letter, note.octave);
        let alter = match note.explicit_accidental {
            Some(a) => {
                self.source_bar.insert(key, a);
                a
            }
            None => self
                .source_bar
                .get(&key)
                .copied()
                .unwrap_or_else(|| self.source.alter(note.letter)),
        };
        note.chromatic(alter)
    }

    fn write_target(&mut self, pitch: i32, out: &mut Vec<u8>) {
        let (letter, alter, octave) = self.target.spell(pitch);
        let key = (letter, octave);
        let implied = self
            .target_bar
            .get(&key)
            .copied()
            .unwrap_or_else(|| self.target.alter(letter));
        let accidental = if implied == alter {
            None
        } else {
            self.target_bar.insert(key, alter);
            Some(alter)
        };
        write_note(out, letter, accidental, octave);
    }
}

struct Transposer {
    interval: i32,
    letter_shift: usize,
    header_target: KeySignature,
    header_source: KeySignature,
    voices: HashMap<String, VoiceState>,
    current: String,
}

impl Transposer {
    fn state(&mut self) -> &mut VoiceState {
        let (s, t) = (self.header_source, self.header_target);
        self.voices
            .entry(self.current.clone())
            .or_insert_with(|| VoiceState::new(s, t))
    }

    /// Rewrites a key value for the target; returns the new value and the
    /// source/target signatures it establishes.
    fn rewrite_key(
        &self,
        value: &[u8],
    ) -> Result<(Vec<u8>, KeySignature, KeySignature), AugmentError> {
        let field = KeyField::parse(value)?;
        let new_letter = (field.major.letter() + self.letter_shift) % 7;
        let new_pc = (field.major.tonic_pitch_class() + self.interval).rem_euclid(12);
        let target = KeySignature::from_letter_pc(new_letter, new_pc).ok_or_else(|| {
            let alter = (new_pc - NATURAL_PC[new_letter] + 6).rem_euclid(12) - 6;
            let sign = match alter.signum() {
                1 => "#",
                -1 => "b",
                _ => "",
            };
            AugmentError::UnsupportedKeyChange(format!(
                "{}{}",
                LETTERS[new_letter] as char,
                sign.repeat(alter.unsigned_abs() as usize)
            ))
        })?;
        let mut out = value[..field.tonic.start].to_vec();
        out.extend_from_slice(KeyField::tonic_text(field.mode, &target).as_bytes());
        out.extend_from_slice(&value[field.tonic.end..]);
        Ok((out, field.major, target))
    }

    fn music_line(
        &mut self,
        text: &[u8],
        line: Span,
        out: &mut Vec<u8>,
    ) -> Result<(), AugmentError> {
        for lx in lex_music_lenient(text, line) {
            match lx.kind {
                LexemeKind::Barline => {
                    self.state().new_bar();
                    out.extend_from_slice(lx.span.slice(text));
                }
                LexemeKind::InlineField(b'V') => {
                    if let Some(id) = inline_voice_id(text, &lx) {
                        self.current = id;
                    }
                    out.extend_from_slice(lx.span.slice(text));
                }
                LexemeKind::InlineField(b'K') => {
                    let inner = &text[lx.span.start + 3..lx.span.end - 1];
                    let (value, source, target) = self.rewrite_key(inner)?;
                    let state = self.state();
                    state.source = source;
                    state.target = target;
                    state.new_bar();
                    out.extend_from_slice(b"[K:");
                    out.extend_from_slice(&value);
                    out.push(b']');
                }
                LexemeKind::Text | LexemeKind::Grace => {
                    let mut at = lx.span.start;
                    for note in scan_notes(text, lx.span) {
                        out.extend_from_slice(&text[at..note.span.start]);
                        let state = self.state();
                        let pitch = state.source_pitch(&note) + self.interval;
                        self.state().write_target(pitch, out);
                        at = note.span.end;
                    }
                    out.extend_from_slice(&text[at..lx.span.end]);
                }
                _ => out.extend_from_slice(lx.span.slice(text)),
            }
        }
        Ok(())
    }
}

fn key_line(out: &mut Vec<u8>, line: &[u8], value: &[u8]) {
    out.extend_from_slice(&line[..2]);
    out.extend_from_slice(value);
    if line.ends_with(b"\n") {
        out.push(b'\n');
    }
}

/// Transposes a tune to `target`, keeping every non-pitch byte.
pub fn transpose_tune(tune: &AbcTune, target: &KeySignature) -> Result<AbcTune, AugmentError> {
    let text = tune.source_text();
    let source = tune_key(tune)?;
    let interval = interval_between(&source, target);
    let mut tr = Transposer {
        interval,
        letter_shift: (target.letter() + 7 - source.letter()) % 7,
        header_source: source,
        header_target: *target,
        voices: HashMap::new(),
        current: String::new(),
    };

    let mut out = Vec::with_capacity(text.len() + 16);
    let header_len = tune.header_lines().len();
    for (n, line) in tune.lines().iter().enumerate() {
        let bytes = line.bytes(text);
        match line.kind {
            SegmentKind::HeaderLine if field_letter(bytes) == Some(b'K') => {
                let value = crate::parser::field_value(bytes);
                let (new_value, src, tgt) = tr.rewrite_key(value)?;
                if n >= header_len {
                    let state = tr.state();
                    state.source = src;
                    state.target = tgt;
                    state.new_bar();
                }
                key_line(&mut out, bytes, &new_value);
            }
            SegmentKind::HeaderLine if n >= header_len && field_letter(bytes) == Some(b'V') => {
                if let Some(id) = voice_id_of(crate::parser::field_value(bytes)) {
                    tr.current = id;
                }
                out.extend_from_slice(bytes);
            }
            SegmentKind::MusicLine if n >= header_len => {
                tr.music_line(text, line.span, &mut out)?
            }
            _ => out.extend_from_slice(bytes),
        }
    }
    Ok(parse_tune(&out)?)
}

/// A tune excluded from augmentation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Skipped {
    pub index: usize,
    pub error: AugmentError,
}

#[derive(Debug, Clone)]
pub struct Augmented {
    /// For each surviving input tune, one transposition per requested key,
    /// tune-major.
    pub tunes: Vec<AbcTune>,
    /// Index of the input tune and the key of each entry in `tunes`.
    pub origins: Vec<(usize, KeySignature)>,
    pub skipped: Vec<Skipped>,
}

/// Transposes every tune into every key in `keys`. A tune that fails for
/// any key is skipped entirely and reported.
pub fn augment_with_keys(tunes: &[AbcTune], keys: &[KeySignature]) -> Augmented {
    let results: Vec<Result<Vec<AbcTune>, AugmentError>> = tunes
        .par_iter()
        .map(|tune| keys.iter().map(|k| transpose_tune(tune, k)).collect())
        .collect();
    let mut out = Augmented {
        tunes: Vec::new(),
        origins: Vec::new(),
        skipped: Vec::new(),
    };
    for (index, result) in results.into_iter().enumerate() {
        match result {
            Ok(variants) => {
                out.origins.extend(keys.iter().map(|&k| (index, k)));
                out.tunes.extend(variants);
            }
            Err(error) => out.skipped.push(Skipped { index, error }),
        }
    }
    out
}

/// All fifteen major transpositions of every tune, in circle-of-fifths order
/// from C♭ to C♯.
pub fn augment_corpus(tunes: &[AbcTune]) -> Augmented {
    augment_with_keys(tunes, &KeySignature::all_major())
}
