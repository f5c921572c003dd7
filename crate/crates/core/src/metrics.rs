//! Corpus statistics and the bits-per-byte calculator.

use std::collections::BTreeMap;
use std::f64::consts::LN_2;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::bpe::{encode, BpeVocab};
use crate::model::{AbcTune, PatchConfig, PatchMethod};
use crate::patchers::segment_spans;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("byte length must be positive")]
    NonPositiveLength,
    #[error("log-probability {value} at position {index} is positive")]
    PositiveLogProb { index: usize, value: f64 },
    #[error("log-probability at position {index} is not finite")]
    NonFiniteLogProb { index: usize },
}

/// Share of segments that fit in one patch, as an exact ratio and a decimal.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Coverage {
    pub covered: usize,
    pub total: usize,
    pub fraction: f64,
}

pub fn coverage_of_lengths<I>(lengths: I, patch_size: usize) -> Result<Coverage, MetricsError>
where
    I: IntoIterator<Item = usize>,
{
    let (covered, total) = lengths.into_iter().fold((0, 0), |(c, t), len| {
        (c + usize::from(len <= patch_size), t + 1)
    });
    if total == 0 {
        return Err(MetricsError::EmptyCorpus);
    }
    Ok(Coverage {
        covered,
        total,
        fraction: covered as f64 / total as f64,
    })
}

/// Fraction of bar-patching segments no longer than `patch_size`.
pub fn bar_coverage(corpus: &[AbcTune], patch_size: usize) -> Result<Coverage, MetricsError> {
    if corpus.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let lengths = corpus.iter().flat_map(|t| {
        segment_spans(PatchMethod::Bar, t.source_text())
            .into_iter()
            .map(|s| s.len())
    });
    coverage_of_lengths(lengths, patch_size)
}

/// Bits per byte: total negative log2-likelihood over the raw byte count.
pub fn bpb(logprobs: &[f64], byte_len: usize) -> Result<f64, MetricsError> {
    if byte_len == 0 {
        return Err(MetricsError::NonPositiveLength);
    }
    let mut total = 0.0;
    for (index, &lp) in logprobs.iter().enumerate() {
        if !lp.is_finite() {
            return Err(MetricsError::NonFiniteLogProb { index });
        }
        if lp > 0.0 {
            return Err(MetricsError::PositiveLogProb { index, value: lp });
        }
        total += lp;
    }
    Ok(-total / LN_2 / byte_len as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BpeReport {
    pub vocab_size: usize,
    pub context: usize,
    pub tokens: usize,
    pub bytes: usize,
    pub bytes_per_token: f64,
    pub truncated_sequences: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CorpusReport {
    pub method: PatchMethod,
    pub patch_size: usize,
    pub patch_length: usize,
    pub documents: usize,
    pub total_bytes: usize,
    /// Patches before the `patch_length` cap.
    pub patches: usize,
    pub per_document_patches: Vec<usize>,
    /// PAD share of all symbols in uncapped sequences.
    pub pad_fraction: f64,
    pub truncated_sequences: usize,
    pub truncation_rate: f64,
    /// Segments longer than one patch (lossy under bar patching).
    pub over_length_segments: usize,
    pub segment_count: usize,
    pub segment_length_histogram: BTreeMap<usize, usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bpe: Option<BpeReport>,
}

struct DocStats {
    bytes: usize,
    patches: usize,
    non_pad: usize,
    over_length: usize,
    lengths: Vec<usize>,
    bpe_tokens: usize,
}

/// Statistics of one patching configuration over raw texts, plus BPE
/// compression when a vocabulary and context are supplied.
pub fn corpus_stats_texts<S: AsRef<[u8]> + Sync>(
    texts: &[S],
    cfg: &PatchConfig,
    bpe: Option<(&BpeVocab, usize)>,
) -> Result<CorpusReport, MetricsError> {
    if texts.is_empty() {
        return Err(MetricsError::EmptyCorpus);
    }
    let size = cfg.patch_size;
    let docs: Vec<DocStats> = texts
        .par_iter()
        .map(|t| {
            let text = t.as_ref();
            let lengths: Vec<usize> = segment_spans(cfg.method, text)
                .iter()
                .map(|s| s.len())
                .collect();
            let (patches, non_pad) = match cfg.method {
                PatchMethod::Bar => (lengths.len(), lengths.iter().map(|&l| l.min(size)).sum()),
                _ => (lengths.iter().map(|l| l.div_ceil(size)).sum(), text.len()),
            };
            DocStats {
                bytes: text.len(),
                patches,
                non_pad,
                over_length: lengths.iter().filter(|&&l| l > size).count(),
                lengths,
                bpe_tokens: bpe.map(|(v, _)| encode(text, v).len()).unwrap_or(0),
            }
        })
        .collect();

    let mut histogram = BTreeMap::new();
    for len in docs.iter().flat_map(|d| d.lengths.iter()) {
        *histogram.entry(*len).or_insert(0) += 1;
    }
    let patches: usize = docs.iter().map(|d| d.patches).sum();
    let non_pad: usize = docs.iter().map(|d| d.non_pad).sum();
    let truncated_sequences = docs.iter().filter(|d| d.patches > cfg.patch_length).count();
    let total_bytes = docs.iter().map(|d| d.bytes).sum();
    let bpe = bpe.map(|(vocab, context)| {
        let tokens: usize = docs.iter().map(|d| d.bpe_tokens).sum();
        BpeReport {
            vocab_size: vocab.len(),
            context,
            tokens,
            bytes: total_bytes,
            bytes_per_token: if tokens == 0 {
                0.0
            } else {
                total_bytes as f64 / tokens as f64
            },
            truncated_sequences: docs.iter().filter(|d| d.bpe_tokens > context).count(),
        }
    });
    Ok(CorpusReport {
        method: cfg.method,
        patch_size: size,
        patch_length: cfg.patch_length,
        documents: docs.len(),
        total_bytes,
        patches,
        per_document_patches: docs.iter().map(|d| d.patches).collect(),
        pad_fraction: if patches == 0 {
            0.0
        } else {
            1.0 - non_pad as f64 / (patches * size) as f64
        },
        truncated_sequences,
        truncation_rate: truncated_sequences as f64 / docs.len() as f64,
        over_length_segments: docs.iter().map(|d| d.over_length).sum(),
        segment_count: histogram.values().sum(),
        segment_length_histogram: histogram,
        bpe,
    })
}

pub fn corpus_stats(
    corpus: &[AbcTune],
    cfg: &PatchConfig,
    bpe: Option<(&BpeVocab, usize)>,
) -> Result<CorpusReport, MetricsError> {
    let texts: Vec<&[u8]> = corpus.iter().map(|t| t.source_text()).collect();
    corpus_stats_texts(&texts, cfg, bpe)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::parse_tune;
    use crate::patchers::tokenize;

    #[test]
    fn coverage_hand_counts() {
        let c = coverage_of_lengths([10, 20, 70], 64).unwrap();
        assert_eq!((c.covered, c.total), (2, 3));
        assert!((c.fraction - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(coverage_of_lengths([10, 20, 70], 70).unwrap().fraction, 1.0);
        assert_eq!(
            coverage_of_lengths(std::iter::empty(), 8).unwrap_err(),
            MetricsError::EmptyCorpus
        );
        assert_eq!(
            bar_coverage(&[], 64).unwrap_err(),
            MetricsError::EmptyCorpus
        );
    }

    #[test]
    fn bpb_examples() {
        let uniform = vec![(1.0f64 / 256.0).ln(); 8];
        assert!((bpb(&uniform, 8).unwrap() - 8.0).abs() < 1e-9);
        assert_eq!(bpb(&[0.0, 0.0], 2).unwrap(), 0.0);
        let mixed = [0.5f64.ln(), 0.25f64.ln()];
        assert!((bpb(&mixed, 2).unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn bpb_errors() {
        assert_eq!(bpb(&[], 0).unwrap_err(), MetricsError::NonPositiveLength);
        assert!(matches!(
            bpb(&[-1.0, 0.5], 2),
            Err(MetricsError::PositiveLogProb { index: 1, .. })
        ));
        assert!(matches!(
            bpb(&[f64::NEG_INFINITY], 2),
            Err(MetricsError::NonFiniteLogProb { index: 0 })
        ));
    }

    #[test]
    fn stats_match_tokenizer() {
        let tune = parse_tune(b"X:1\nT:Stats\nK:C\nCDEF GABc|cBAG FEDC|]\n").unwrap();
        for method in PatchMethod::ALL {
            let cfg = PatchConfig::with_sizes(method, 8, 512).unwrap();
            let report = corpus_stats(std::slice::from_ref(&tune), &cfg, None).unwrap();
            let seq = tokenize(tune.source_text(), &cfg);
            assert_eq!(report.patches, seq.len(), "{method}");
            let pad = seq.pad_count() as f64 / (seq.len() * 8) as f64;
            assert!((report.pad_fraction - pad).abs() < 1e-12, "{method}");
        }
        let byte = corpus_stats(
            std::slice::from_ref(&tune),
            &PatchConfig::new(PatchMethod::Byte),
            Some((&BpeVocab::bytes_only(), 4096)),
        )
        .unwrap();
        assert_eq!(byte.patches, tune.source_text().len().div_ceil(16));
        assert_eq!(byte.bpe.unwrap().bytes_per_token, 1.0);
    }
}
