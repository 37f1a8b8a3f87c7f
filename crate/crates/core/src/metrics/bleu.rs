use super::ngram::ngram_counts;
use super::TokenSeq;

/// Additive smoothing used when BLEU feeds a reward.
pub const REWARD_SMOOTHING: f64 = 1e-9;

struct Stats {
    matches: Vec<f64>,
    totals: Vec<f64>,
    cand_len: usize,
    ref_len: usize,
}

fn sentence_stats(candidate: &TokenSeq, refs: &[TokenSeq], max_n: usize) -> Stats {
    let mut matches = vec![0.0; max_n];
    let mut totals = vec![0.0; max_n];
    for n in 1..=max_n {
        let cand = ngram_counts(candidate, n);
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &count) in &cand {
            let max_ref = ref_counts.iter().filter_map(|rc| rc.get(gram)).copied().max().unwrap_or(0);
            matches[n - 1] += count.min(max_ref) as f64;
            totals[n - 1] += count as f64;
        }
    }
    Stats { matches, totals, cand_len: candidate.len(), ref_len: closest_ref_len(candidate.len(), refs) }
}

/// Reference length closest to `c`; ties go to the shorter reference.
fn closest_ref_len(c: usize, refs: &[TokenSeq]) -> usize {
    refs.iter().map(TokenSeq::len).min_by_key(|&r| (r.abs_diff(c), r)).unwrap_or(0)
}

fn combine(matches: &[f64], totals: &[f64], cand_len: usize, ref_len: usize, smoothing: f64) -> f64 {
    if cand_len == 0 {
        return 0.0;
    }
    let max_n = matches.len();
    let mut log_sum = 0.0;
    for (&m, &t) in matches.iter().zip(totals) {
        let m = if m == 0.0 { smoothing } else { m };
        if m == 0.0 {
            return 0.0;
        }
        log_sum += (m / t.max(1.0)).ln();
    }
    let bp = if cand_len > ref_len { 1.0 } else { (1.0 - ref_len as f64 / cand_len as f64).exp() };
    100.0 * bp * (log_sum / max_n as f64).exp()
}

/// Sentence-level BLEU-`max_n` with brevity penalty, on the ×100 scale.
///
/// A zero clipped-match count is replaced by `smoothing`; with
/// `smoothing == 0` any zero precision makes the score 0.
pub fn bleu(candidate: &TokenSeq, refs: &[TokenSeq], max_n: usize, smoothing: f64) -> f64 {
    assert!((1..=4).contains(&max_n), "BLEU order must be in 1..=4");
    let s = sentence_stats(candidate, refs, max_n);
    combine(&s.matches, &s.totals, s.cand_len, s.ref_len, smoothing)
}

/// Corpus-level BLEU-`max_n`: clipped counts and lengths are summed before combining.
pub fn corpus_bleu<'a, I>(pairs: I, max_n: usize) -> f64
where
    I: IntoIterator<Item = (&'a TokenSeq, &'a [TokenSeq])>,
{
    assert!((1..=4).contains(&max_n), "BLEU order must be in 1..=4");
    let mut matches = vec![0.0; max_n];
    let mut totals = vec![0.0; max_n];
    let (mut c, mut r) = (0, 0);
    for (cand, refs) in pairs {
        let s = sentence_stats(cand, refs, max_n);
        for n in 0..max_n {
            matches[n] += s.matches[n];
            totals[n] += s.totals[n];
        }
        c += s.cand_len;
        r += s.ref_len;
    }
    combine(&matches, &totals, c, r, 0.0)
}
