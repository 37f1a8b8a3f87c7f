//! Brute-force reference implementations, written without the library's
//! data structures.
#![allow(dead_code)]

use std::collections::HashMap;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn grams(tokens: &[String], n: usize) -> Vec<String> {
    if tokens.len() < n {
        return Vec::new();
    }
    (0..=tokens.len() - n).map(|i| tokens[i..i + n].join(" ")).collect()
}

/// Images containing `gram` in any caption, by linear scan.
fn doc_freq(gram: &str, n: usize, corpus: &[Vec<String>]) -> usize {
    corpus.iter().filter(|caps| caps.iter().any(|c| grams(&words(c), n).iter().any(|g| g == gram))).count()
}

fn tf_idf(caption: &str, n: usize, corpus: &[Vec<String>]) -> HashMap<String, f64> {
    let all = grams(&words(caption), n);
    let mut counts: HashMap<String, f64> = HashMap::new();
    for g in &all {
        *counts.entry(g.clone()).or_default() += 1.0;
    }
    let total = all.len() as f64;
    counts
        .into_iter()
        .map(|(g, c)| {
            let df = doc_freq(&g, n, corpus).max(1) as f64;
            let idf = (corpus.len() as f64 / df).ln();
            (g, c / total * idf)
        })
        .collect()
}

fn cos(a: &HashMap<String, f64>, b: &HashMap<String, f64>) -> f64 {
    let dot: f64 = a.iter().map(|(k, x)| x * b.get(k).copied().unwrap_or(0.0)).sum();
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

fn cider_like<F: Fn(&str, usize) -> f64>(candidate: &str, gt: &[String], corpus: &[Vec<String>], factor: F) -> f64 {
    let mut total = 0.0;
    for n in 1..=4 {
        let c = tf_idf(candidate, n, corpus);
        let mut per = 0.0;
        for r in gt {
            let mut v = tf_idf(r, n, corpus);
            for (g, w) in v.iter_mut() {
                *w *= factor(g, n);
            }
            per += cos(&c, &v);
        }
        total += per / gt.len() as f64;
    }
    100.0 * total / 4.0
}

/// CIDEr ×100 with document frequencies recounted over `corpus` (one entry per image).
pub fn cider(candidate: &str, gt: &[String], corpus: &[Vec<String>]) -> f64 {
    cider_like(candidate, gt, corpus, |_, _| 1.0)
}

/// `ln((m + K) / (n + #reference images containing gram))`.
pub fn irf(gram: &str, n: usize, refs: &[Vec<String>], m: f64, n_param: f64) -> f64 {
    (m + refs.len() as f64).ln() - (n_param + doc_freq(gram, n, refs) as f64).ln()
}

pub fn discider(candidate: &str, gt: &[String], refs: &[Vec<String>], corpus: &[Vec<String>], m: f64, n: f64) -> f64 {
    cider_like(candidate, gt, corpus, |g, order| irf(g, order, refs, m, n))
}

/// Row-by-row cosine matrix `S[i][j] = cos(ref_i, target_j)` and, for each
/// target row, the first best reference row per image.
pub fn match_proposals(target: &[Vec<f64>], refs: &[Vec<Vec<f64>>]) -> (Vec<Vec<Vec<f64>>>, Vec<Vec<usize>>) {
    let c = |a: &[f64], b: &[f64]| {
        let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    };
    let sims: Vec<Vec<Vec<f64>>> =
        refs.iter().map(|r| r.iter().map(|ri| target.iter().map(|tj| c(ri, tj)).collect()).collect()).collect();
    let mut tuples = vec![vec![0; refs.len()]; target.len()];
    for (j, tuple) in tuples.iter_mut().enumerate() {
        for (k, s) in sims.iter().enumerate() {
            let mut best = f64::NEG_INFINITY;
            for (i, row) in s.iter().enumerate() {
                if row[j] > best {
                    best = row[j];
                    tuple[k] = i;
                }
            }
        }
    }
    (sims, tuples)
}

/// Every sequence over `allowed` that ends with `eos` or reaches `max_len`,
/// with its summed log-probability, best first (ties by token order).
pub fn enumerate_sequences<F>(
    logprobs: F,
    bos: usize,
    eos: usize,
    allowed: &[usize],
    max_len: usize,
) -> Vec<(Vec<usize>, f64)>
where
    F: Fn(&[usize]) -> Vec<f64>,
{
    let mut done = Vec::new();
    let mut stack = vec![(vec![bos], 0.0)];
    while let Some((prefix, score)) = stack.pop() {
        let lp = logprobs(&prefix);
        for &t in allowed {
            let mut next = prefix.clone();
            next.push(t);
            let s = score + lp[t];
            if t == eos || next.len() - 1 == max_len {
                done.push((next[1..].to_vec(), s));
            } else {
                stack.push((next, s));
            }
        }
    }
    done.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    done
}

/// Image-level inputs for the group-builder oracle.
pub struct OracleImage {
    pub id: String,
    pub split: String,
    pub embedding: Vec<f64>,
    pub captions: Vec<Vec<f64>>,
    /// `(category, attributes)` per object.
    pub objects: Vec<(String, Vec<String>)>,
}

/// Reference ids for `target` from nested loops: rank every caption of every
/// other same-split image, keep first-seen parents up to `coarse_size`,
/// score overlaps pairwise, stable-sort, take ranks `p..p+k-1`.
pub fn reference_group(
    target: usize,
    images: &[OracleImage],
    coarse_size: usize,
    p: usize,
    k: usize,
) -> Vec<(String, u32, u32)> {
    let t = &images[target];
    let dot = |a: &[f64], b: &[f64]| -> f64 {
        let d: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
        d / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt())
    };
    let mut scored = Vec::new();
    for (i, img) in images.iter().enumerate() {
        if i == target || img.split != t.split {
            continue;
        }
        for (c, v) in img.captions.iter().enumerate() {
            scored.push((dot(&t.embedding, v), img.id.clone(), c, i));
        }
    }
    for a in 0..scored.len() {
        let mut best = a;
        for b in a + 1..scored.len() {
            let (x, y) = (&scored[b], &scored[best]);
            let better = x.0 > y.0 || (x.0 == y.0 && (x.1 < y.1 || (x.1 == y.1 && x.2 < y.2)));
            if better {
                best = b;
            }
        }
        scored.swap(a, best);
    }
    let mut coarse: Vec<usize> = Vec::new();
    for (_, _, _, i) in &scored {
        if coarse.len() == coarse_size {
            break;
        }
        if !coarse.contains(i) {
            coarse.push(*i);
        }
    }
    let mut ranked: Vec<(String, u32, u32)> = coarse
        .iter()
        .map(|&i| {
            let other = &images[i];
            let mut obj = 0;
            let mut attr = 0;
            let mut seen_cats: Vec<&str> = Vec::new();
            for (cat, _) in &t.objects {
                if seen_cats.contains(&cat.as_str()) {
                    continue;
                }
                seen_cats.push(cat);
                let theirs: Vec<&(String, Vec<String>)> = other.objects.iter().filter(|(c, _)| c == cat).collect();
                if theirs.is_empty() {
                    continue;
                }
                obj += 1;
                let mine: Vec<&String> =
                    t.objects.iter().filter(|(c, _)| c == cat).flat_map(|(_, a)| a.iter()).collect();
                let mut counted: Vec<&String> = Vec::new();
                for a in mine {
                    if !counted.contains(&a) && theirs.iter().any(|(_, ta)| ta.contains(a)) {
                        counted.push(a);
                        attr += 1;
                    }
                }
            }
            (other.id.clone(), obj, attr)
        })
        .collect();
    for a in 0..ranked.len() {
        let mut best = a;
        for b in a + 1..ranked.len() {
            let (x, y) = (&ranked[b], &ranked[best]);
            let (tx, ty) = (x.1 + x.2, y.1 + y.2);
            if tx > ty || (tx == ty && x.0 < y.0) {
                best = b;
            }
        }
        ranked.swap(a, best);
    }
    ranked[p - 1..p - 1 + k].to_vec()
}
