//! Test oracles and generators shared by the integration tests. Everything
//! here is written independently of the library internals.
#![allow(dead_code)]

use std::collections::{HashMap, HashSet};
use std::path::PathBuf;

use abctok::{parse_tune, AbcTune};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data/corpus")
}

/// Bundled tunes as `(file name, raw text)`, sorted by name.
pub fn corpus_texts() -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(corpus_dir())
        .expect("corpus directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "abc"))
        .collect();
    files.sort();
    files
        .into_iter()
        .map(|p| {
            let name = p.file_name().unwrap().to_string_lossy().into_owned();
            (name, std::fs::read(&p).unwrap())
        })
        .collect()
}

pub fn corpus() -> Vec<AbcTune> {
    corpus_texts()
        .into_iter()
        .map(|(name, text)| parse_tune(&text).unwrap_or_else(|e| panic!("{name}: {e}")))
        .collect()
}

// ---------------------------------------------------------------------------
// BPE: naive trainer that rescans the whole corpus after every merge.

/// Merge list as byte pairs. Ties go to the lexicographically smaller
/// concatenation, then the smaller left part; pairs whose concatenation is
/// already a token are never chosen.
pub fn naive_bpe(corpus: &[Vec<u8>], target: usize) -> Vec<(Vec<u8>, Vec<u8>)> {
    let mut words: Vec<Vec<Vec<u8>>> = corpus
        .iter()
        .flat_map(|doc| doc.split(|&b| b == b'\n'))
        .map(|w| w.iter().map(|&b| vec![b]).collect())
        .collect();
    let mut known: HashSet<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();
    while 256 + merges.len() < target {
        let mut counts: HashMap<(Vec<u8>, Vec<u8>), usize> = HashMap::new();
        for w in &words {
            for p in w.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += 1;
            }
        }
        let best = counts
            .into_iter()
            .filter(|((l, r), c)| *c >= 2 && !known.contains(&[l.as_slice(), r].concat()))
            .min_by(|(a, ca), (b, cb)| {
                cb.cmp(ca)
                    .then_with(|| {
                        [a.0.as_slice(), &a.1]
                            .concat()
                            .cmp(&[b.0.as_slice(), &b.1].concat())
                    })
                    .then_with(|| a.0.cmp(&b.0))
            });
        let Some(((l, r), _)) = best else { break };
        let joined = [l.as_slice(), &r].concat();
        for w in &mut words {
            let mut out = Vec::with_capacity(w.len());
            let mut i = 0;
            while i < w.len() {
                if i + 1 < w.len() && w[i] == l && w[i + 1] == r {
                    out.push(joined.clone());
                    i += 2;
                } else {
                    out.push(w[i].clone());
                    i += 1;
                }
            }
            *w = out;
        }
        known.insert(joined);
        merges.push((l, r));
    }
    merges
}

// ---------------------------------------------------------------------------
// Pitch oracle: MIDI numbers straight from the text, C = 60.

const LETTERS: &[u8; 7] = b"CDEFGAB";
const NATURAL: [i32; 7] = [0, 2, 4, 5, 7, 9, 11];
/// Letter order along the circle of fifths.
const FIFTHS_ORDER: &[u8; 7] = b"FCGDAEB";

pub const MAJOR_KEYS: [&str; 15] = [
    "Cb", "Gb", "Db", "Ab", "Eb", "Bb", "F", "C", "G", "D", "A", "E", "B", "F#", "C#",
];

fn letter_index(c: u8) -> Option<usize> {
    LETTERS.iter().position(|&l| l == c.to_ascii_uppercase())
}

/// A key as its relative major, counted in fifths from C.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct OracleKey {
    pub fifths: i32,
}

impl OracleKey {
    /// Parses a `K:` value such as `F#m`, `D dor` or `Bb`.
    pub fn parse(value: &str) -> Option<Self> {
        let v = value.trim();
        let mut chars = v.char_indices();
        let (_, letter) = chars.next()?;
        let letter = letter.to_ascii_uppercase();
        let base = FIFTHS_ORDER.iter().position(|&l| l as char == letter)? as i32 - 1;
        let mut rest = &v[1..];
        let mut fifths = base;
        if let Some(r) = rest.strip_prefix('#') {
            fifths += 7;
            rest = r;
        } else if let Some(r) = rest.strip_prefix('b') {
            fifths -= 7;
            rest = r;
        }
        let word: String = rest
            .trim_start()
            .chars()
            .take_while(|c| c.is_ascii_alphabetic())
            .collect::<String>()
            .to_ascii_lowercase();
        let offset = match word.get(..3).unwrap_or(&word) {
            "" | "maj" | "ion" => 0,
            "m" | "mi" | "min" | "aeo" => -3,
            "mix" => -1,
            "dor" => -2,
            "phr" => -4,
            "lyd" => 1,
            "loc" => -5,
            _ => return None,
        };
        Some(OracleKey {
            fifths: fifths + offset,
        })
    }

    pub fn tonic_letter(&self) -> usize {
        let l = FIFTHS_ORDER[(self.fifths + 1).rem_euclid(7) as usize];
        letter_index(l).unwrap()
    }

    pub fn tonic_pc(&self) -> i32 {
        (self.fifths * 7).rem_euclid(12)
    }

    /// Key-signature alteration of a letter.
    pub fn alter(&self, letter: usize) -> i32 {
        let pos = FIFTHS_ORDER
            .iter()
            .position(|&l| l == LETTERS[letter])
            .unwrap() as i32;
        if self.fifths > 0 && pos < self.fifths {
            1 + i32::from(pos + 7 < self.fifths)
        } else if self.fifths < 0 && 6 - pos < -self.fifths {
            -1 - i32::from(6 - pos + 7 < -self.fifths)
        } else {
            0
        }
    }
}

/// Semitones from `from` to `to`, in [-6, 6]; a tritone goes up when the
/// target tonic letter is at most three letters above.
pub fn oracle_interval(from: OracleKey, to: OracleKey) -> i32 {
    let diff = (to.tonic_pc() - from.tonic_pc()).rem_euclid(12);
    match diff {
        0..=5 => diff,
        6 => {
            let up = (to.tonic_letter() + 7 - from.tonic_letter()) % 7;
            if up <= 3 {
                6
            } else {
                -6
            }
        }
        _ => diff - 12,
    }
}

/// The tune's header key.
pub fn header_key(text: &[u8]) -> OracleKey {
    let text = std::str::from_utf8(text).unwrap();
    let line = text.lines().find(|l| l.starts_with("K:")).expect("K: line");
    OracleKey::parse(&line[2..]).expect("recognized key")
}

fn is_field_line(line: &[u8]) -> bool {
    line.len() >= 2 && (line[0].is_ascii_alphabetic() || line[0] == b'+') && line[1] == b':'
}

/// Walks the tune body, calling `on_note(start, end, pitch)` for each note and
/// returning the byte ranges of each `K:` tonic.
fn walk(text: &[u8], mut on_note: impl FnMut(usize, usize, i32)) -> Vec<(usize, usize)> {
    let mut tonics = Vec::new();
    let mut key = None;
    let mut voice = String::from("1");
    let mut bar_state: HashMap<(String, usize, i32), i32> = HashMap::new();
    let mut pos = 0;
    for line in text.split_inclusive(|&b| b == b'\n') {
        let start = pos;
        pos += line.len();
        if line.starts_with(b"K:") {
            let value = std::str::from_utf8(&line[2..]).unwrap();
            key = OracleKey::parse(value);
            let lead = value.len() - value.trim_start().len();
            let t0 = start + 2 + lead;
            let mut t1 = t0 + 1;
            if matches!(text.get(t1), Some(b'#' | b'b')) {
                t1 += 1;
            }
            tonics.push((t0, t1));
            continue;
        }
        let Some(key) = key else { continue };
        if line.starts_with(b"V:") {
            voice = std::str::from_utf8(&line[2..])
                .unwrap()
                .split_whitespace()
                .next()
                .unwrap_or("")
                .to_string();
            continue;
        }
        if is_field_line(line) || line.starts_with(b"%") {
            continue;
        }
        let mut i = 0;
        while i < line.len() {
            let c = line[i];
            match c {
                b'%' => break,
                b'"' | b'!' => {
                    let close = line[i + 1..].iter().position(|&b| b == c).unwrap();
                    i += close + 2;
                }
                b'[' if line.get(i + 2) == Some(&b':') && line[i + 1].is_ascii_alphabetic() => {
                    let close = line[i..].iter().position(|&b| b == b']').unwrap();
                    if line[i + 1] == b'V' {
                        voice = String::from_utf8_lossy(&line[i + 3..i + close])
                            .split_whitespace()
                            .next()
                            .unwrap_or("")
                            .to_string();
                    }
                    i += close + 1;
                }
                b'|' | b':' => {
                    bar_state.retain(|k, _| k.0 != voice);
                    i += 1;
                }
                b'^' | b'_' | b'=' | b'A'..=b'G' | b'a'..=b'g' => {
                    let s = i;
                    let mut acc = None;
                    while matches!(line[i], b'^' | b'_' | b'=') {
                        acc = Some(
                            acc.unwrap_or(0)
                                + match line[i] {
                                    b'^' => 1,
                                    b'_' => -1,
                                    _ => 0,
                                },
                        );
                        i += 1;
                    }
                    let l = letter_index(line[i]).expect("accidental before a note letter");
                    let mut octave = if line[i].is_ascii_lowercase() { 5 } else { 4 };
                    i += 1;
                    while i < line.len() && matches!(line[i], b'\'' | b',') {
                        octave += if line[i] == b'\'' { 1 } else { -1 };
                        i += 1;
                    }
                    let slot = (voice.clone(), l, octave);
                    let alter = match acc {
                        Some(a) => {
                            bar_state.insert(slot, a);
                            a
                        }
                        None => bar_state
                            .get(&slot)
                            .copied()
                            .unwrap_or_else(|| key.alter(l)),
                    };
                    on_note(start + s, start + i, 12 * (octave + 1) + NATURAL[l] + alter);
                }
                _ => i += 1,
            }
        }
    }
    tonics
}

/// MIDI numbers of every body note in text order.
pub fn chromatic(text: &[u8]) -> Vec<i32> {
    let mut out = Vec::new();
    walk(text, |_, _, p| out.push(p));
    out
}

/// The text with every note token and every `K:` tonic removed.
pub fn without_pitches(text: &[u8]) -> Vec<u8> {
    let mut cut = Vec::new();
    let tonics = walk(text, |s, e, _| cut.push((s, e)));
    cut.extend(tonics);
    cut.sort_unstable();
    let mut out = Vec::with_capacity(text.len());
    let mut at = 0;
    for (s, e) in cut {
        out.extend_from_slice(&text[at..s]);
        at = e;
    }
    out.extend_from_slice(&text[at..]);
    out
}

// ---------------------------------------------------------------------------
// Synthetic scores with known segmentation.

pub struct Synthetic {
    pub text: Vec<u8>,
    /// Bar-segmentation lengths in text order (header and other non-music
    /// lines count as one segment each).
    pub segments: Vec<usize>,
    /// Line lengths including the newline.
    pub lines: Vec<usize>,
    pub voices: Vec<String>,
    pub bars_per_voice: Vec<usize>,
}

const NOTES: &[&str] = &[
    "C", "D", "E", "F", "G", "A", "B", "c", "d", "e", "f", "g", "a", "b", "^F", "_B", "=c", "C,",
    "G,", "c'", "^^d", "__e",
];
const OTHER: &[&str] = &[
    "z",
    "z2",
    "x",
    "2",
    "/2",
    "3/2",
    ">",
    "<",
    "-",
    " ",
    "  ",
    "(",
    ")",
    "(3",
    "~",
    "!trill!",
    "!fermata!",
    "\"Am\"",
    "\"G7\"",
    "\"^text\"",
    "{g}",
    "{^fa}",
];
const BARLINES: &[&str] = &["|", "||", "|]", ":|", "::", "[|", "|1", ":|2", "|[1"];

fn bar_content(rng: &mut ChaCha8Rng, long: bool) -> String {
    let n = if long {
        rng.gen_range(40..90)
    } else {
        rng.gen_range(1..10)
    };
    let mut s = String::new();
    // first token is always a note so nothing attaches to the previous barline
    s.push_str(NOTES.choose(rng).unwrap());
    for _ in 1..n {
        match rng.gen_range(0..10) {
            0..=5 => s.push_str(NOTES.choose(rng).unwrap()),
            6 => {
                s.push('[');
                for _ in 0..rng.gen_range(2..4) {
                    s.push_str(NOTES.choose(rng).unwrap());
                }
                s.push(']');
            }
            _ => s.push_str(OTHER.choose(rng).unwrap()),
        }
    }
    // ending on a note keeps `(3` away from a following `::`
    s.push_str(NOTES.choose(rng).unwrap());
    s
}

/// A random multi-voice score. With `aligned == false` one voice gets an
/// extra bar.
pub fn score(rng: &mut ChaCha8Rng, aligned: bool) -> Synthetic {
    let mut syn = Synthetic {
        text: Vec::new(),
        segments: Vec::new(),
        lines: Vec::new(),
        voices: Vec::new(),
        bars_per_voice: Vec::new(),
    };
    let push_line = |syn: &mut Synthetic, line: String, segs: Vec<usize>| {
        debug_assert_eq!(segs.iter().sum::<usize>(), line.len());
        syn.lines.push(line.len());
        syn.segments.extend(segs);
        syn.text.extend_from_slice(line.as_bytes());
    };
    let nvoices = rng.gen_range(if aligned { 1 } else { 2 }..=4);
    let ids: Vec<String> = match rng.gen_range(0..3) {
        0 => (1..=nvoices).map(|v| v.to_string()).collect(),
        1 => ["S", "A", "T", "B"][..nvoices]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        _ => (1..=nvoices).map(|v| format!("part{v}")).collect(),
    };
    let key = ["C", "G", "Dm", "Bb", "A mix", "E dor", "F#m"]
        .choose(rng)
        .unwrap();
    let mut header = vec![
        format!("X:{}\n", rng.gen_range(1..1000)),
        "T:Synthetic\n".to_string(),
        "M:4/4\n".to_string(),
        "L:1/8\n".to_string(),
    ];
    let declared = nvoices > 1 || rng.gen_bool(0.5);
    let tagged = nvoices > 1 || rng.gen_bool(0.3);
    if declared {
        header.extend(ids.iter().map(|id| format!("V:{id} clef=treble\n")));
    }
    header.push(format!("K:{key}\n"));
    for h in header {
        let len = h.len();
        push_line(&mut syn, h, vec![len]);
    }
    syn.voices = if declared || tagged {
        ids.clone()
    } else {
        vec!["1".to_string()]
    };
    syn.bars_per_voice = vec![0; nvoices];
    let extra_voice = rng.gen_range(0..nvoices);
    let nlines = rng.gen_range(1..5);
    for li in 0..nlines {
        let nbars = rng.gen_range(1..6);
        // shared by all voices: a trailing fragment is a bar of its own
        let ending = rng.gen_range(0..4);
        for (v, id) in ids.iter().enumerate() {
            if tagged {
                let l = format!("V:{id}\n");
                let len = l.len();
                push_line(&mut syn, l, vec![len]);
            }
            let mut line = String::new();
            let mut segs = Vec::new();
            let bars = nbars + usize::from(!aligned && v == extra_voice && li == 0);
            for _ in 0..bars {
                let long = rng.gen_bool(0.05);
                let bar = bar_content(rng, long) + BARLINES.choose(rng).unwrap();
                segs.push(bar.len());
                line.push_str(&bar);
            }
            let mut bar_count = bars;
            match ending {
                0 => {
                    let frag = bar_content(rng, false) + "\n";
                    segs.push(frag.len());
                    line.push_str(&frag);
                    bar_count += 1;
                }
                1 => {
                    let tail = " ".repeat(rng.gen_range(1..4)) + "\n";
                    *segs.last_mut().unwrap() += tail.len();
                    line.push_str(&tail);
                }
                _ => {
                    *segs.last_mut().unwrap() += 1;
                    line.push('\n');
                }
            }
            syn.bars_per_voice[v] += bar_count;
            push_line(&mut syn, line, segs);
            if v == 0 && rng.gen_bool(0.2) {
                let w = "w: la da di\n".to_string();
                push_line(&mut syn, w, vec![12]);
            }
        }
        if rng.gen_bool(0.2) {
            let c = "% comment | with a bar\n".to_string();
            let len = c.len();
            push_line(&mut syn, c, vec![len]);
        }
    }
    syn
}

/// Random bytes biased towards ABC punctuation and newlines.
pub fn random_text(rng: &mut ChaCha8Rng, max_len: usize) -> Vec<u8> {
    const BIASED: &[u8] = b"|:[]{}\"!%\n\nABCabc, '^_=2/ ";
    let len = rng.gen_range(0..=max_len);
    (0..len)
        .map(|_| {
            if rng.gen_bool(0.7) {
                *BIASED.choose(rng).unwrap()
            } else {
                rng.gen()
            }
        })
        .collect()
}
