//! BLEU-4 over whitespace tokens.

use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BleuMode {
    /// n-gram matches and totals pooled over all pairs.
    Corpus,
    /// One pair; add-one smoothing on matches and totals for n >= 2.
    Sentence,
}

fn ngram_counts<'t, 's>(tokens: &'t [&'s str], n: usize) -> HashMap<&'t [&'s str], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and hypothesis n-gram total for one pair.
fn matches(hyp: &[&str], reference: &[&str], n: usize) -> (usize, usize) {
    let h = ngram_counts(hyp, n);
    let r = ngram_counts(reference, n);
    let matched = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (matched, hyp.len().saturating_sub(n - 1))
}

fn combine(matched: [usize; 4], total: [usize; 4], hyp_len: usize, ref_len: usize, smooth: bool) -> f64 {
    if hyp_len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (m, t) = if smooth && n > 0 {
            (matched[n] + 1, total[n] + 1)
        } else {
            (matched[n], total[n])
        };
        if m == 0 || t == 0 {
            return 0.0;
        }
        log_sum += (m as f64 / t as f64).ln();
    }
    let bp = if hyp_len < ref_len {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    } else {
        1.0
    };
    bp * (log_sum / 4.0).exp()
}

/// BLEU-4 in `[0, 1]`. Pairs are matched by position; surplus entries of
/// the longer list are ignored. An empty hypothesis scores zero.
pub fn bleu4<H: AsRef<str>, R: AsRef<str>>(hypotheses: &[H], references: &[R], mode: BleuMode) -> f64 {
    match mode {
        BleuMode::Sentence => match (hypotheses.first(), references.first()) {
            (Some(h), Some(r)) => sentence_bleu(h.as_ref(), r.as_ref()),
            _ => 0.0,
        },
        BleuMode::Corpus => {
            let mut matched = [0usize; 4];
            let mut total = [0usize; 4];
            let (mut hyp_len, mut ref_len) = (0, 0);
            for (h, r) in hypotheses.iter().zip(references) {
                let h: Vec<&str> = h.as_ref().split_whitespace().collect();
                let r: Vec<&str> = r.as_ref().split_whitespace().collect();
                for n in 1..=4 {
                    let (m, t) = matches(&h, &r, n);
                    matched[n - 1] += m;
                    total[n - 1] += t;
                }
                hyp_len += h.len();
                ref_len += r.len();
            }
            combine(matched, total, hyp_len, ref_len, false)
        }
    }
}

/// Smoothed BLEU-4 of one hypothesis against one reference.
pub fn sentence_bleu(hypothesis: &str, reference: &str) -> f64 {
    let h: Vec<&str> = hypothesis.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    for n in 1..=4 {
        (matched[n - 1], total[n - 1]) = matches(&h, &r, n);
    }
    combine(matched, total, h.len(), r.len(), true)
}
