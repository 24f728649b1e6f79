//! Corpus-level BLEU-4 over canonical markup tokens: uniform quarter
//! weights over modified n-gram precisions, brevity penalty, no smoothing.

use std::collections::HashMap;

use crate::markup::MarkupSequence;

const MAX_ORDER: usize = 4;

fn ngram_counts(tokens: &[String], order: usize) -> HashMap<&[String], usize> {
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    if tokens.len() >= order {
        for window in tokens.windows(order) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

/// BLEU-4 over a corpus of (candidate, reference) token sequences. Modified
/// n-gram counts are clipped against the reference and pooled across the
/// corpus before taking precisions; a zero numerator at any order gives 0.
pub fn corpus_bleu(pairs: &[(Vec<String>, Vec<String>)]) -> f64 {
    let mut matched = [0usize; MAX_ORDER];
    let mut total = [0usize; MAX_ORDER];
    let mut cand_len = 0usize;
    let mut ref_len = 0usize;
    for (cand, reference) in pairs {
        cand_len += cand.len();
        ref_len += reference.len();
        for order in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, order);
            for (ngram, count) in ngram_counts(cand, order) {
                let clip = ref_counts.get(ngram).copied().unwrap_or(0);
                matched[order - 1] += count.min(clip);
            }
            total[order - 1] += cand.len().saturating_sub(order - 1);
        }
    }
    if cand_len == 0 {
        return if ref_len == 0 { 1.0 } else { 0.0 };
    }
    let mut log_precision_sum = 0.0;
    for order in 0..MAX_ORDER {
        if matched[order] == 0 || total[order] == 0 {
            return 0.0;
        }
        log_precision_sum += (matched[order] as f64 / total[order] as f64).ln();
    }
    let brevity = (1.0 - ref_len as f64 / cand_len as f64).min(0.0);
    (brevity + log_precision_sum / MAX_ORDER as f64).exp()
}

/// BLEU for a single markup pair (a corpus of one).
pub fn bleu(pred: &MarkupSequence, gt: &MarkupSequence) -> f64 {
    corpus_bleu(&[(pred.token_strings(), gt.token_strings())])
}
