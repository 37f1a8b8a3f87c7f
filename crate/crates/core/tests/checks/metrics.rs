use crate::oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refdic_core::metrics::{bleu, cider, discider, disreward, irf_factor, tokenize, DfTable, DisCiderParams, TokenSeq};

pub const WORDS: [&str; 12] = ["a", "the", "red", "blue", "cat", "dog", "sofa", "on", "in", "room", "small", "lamp"];

fn random_caption(rng: &mut ChaCha8Rng) -> String {
    let len = rng.random_range(3..9);
    (0..len).map(|_| WORDS[rng.random_range(0..WORDS.len())]).collect::<Vec<_>>().join(" ")
}

/// 20 images with 5 captions each.
fn fixture(seed: u64) -> Vec<Vec<String>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..20).map(|_| (0..5).map(|_| random_caption(&mut rng)).collect()).collect()
}

fn tokenized(corpus: &[Vec<String>]) -> Vec<Vec<TokenSeq>> {
    corpus.iter().map(|caps| caps.iter().map(|c| tokenize(c)).collect()).collect()
}

pub fn cider_matches_brute_force_on_twenty_images() {
    let corpus = fixture(7);
    let toks = tokenized(&corpus);
    let df = DfTable::from_images(toks.iter().map(Vec::as_slice));
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for (i, gt) in corpus.iter().enumerate() {
        for cand in [random_caption(&mut rng), gt[0].clone()] {
            let got = cider(&tokenize(&cand), &toks[i], &df);
            let want = oracle::cider(&cand, gt, &corpus);
            assert!((got - want).abs() < 1e-9, "image {i}: {got} vs {want}");
        }
    }
}

pub fn df_table_matches_a_recount() {
    let corpus = fixture(11);
    let toks = tokenized(&corpus);
    let df = DfTable::from_images(toks.iter().map(Vec::as_slice));
    assert_eq!(df.corpus_size(), 20);
    for caps in &corpus {
        for c in caps {
            let w: Vec<&str> = c.split(' ').collect();
            for n in 1..=4 {
                for g in w.windows(n) {
                    let gram = g.join(" ");
                    let count = corpus
                        .iter()
                        .filter(|img| img.iter().any(|cap| format!(" {cap} ").contains(&format!(" {gram} "))))
                        .count();
                    assert_eq!(df.df(&gram, n) as usize, count, "{gram}");
                }
            }
        }
    }
}

pub fn discider_matches_brute_force() {
    let corpus = fixture(21);
    let toks = tokenized(&corpus);
    let df = DfTable::from_images(toks.iter().map(Vec::as_slice));
    let p = DisCiderParams::default();
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for t in 0..5 {
        let refs: Vec<usize> = (0..5).map(|k| (t + 1 + 3 * k) % 20).collect();
        let ref_caps: Vec<Vec<String>> = refs.iter().map(|&r| corpus[r].clone()).collect();
        let ref_toks: Vec<Vec<TokenSeq>> = refs.iter().map(|&r| toks[r].clone()).collect();
        let cand = random_caption(&mut rng);
        let got = discider(&tokenize(&cand), &toks[t], &ref_toks, &df, &p);
        let want = oracle::discider(&cand, &corpus[t], &ref_caps, &corpus, 0.8, 5.0);
        assert!((got - want).abs() < 1e-9, "{got} vs {want}");
    }
}

fn t(s: &str) -> TokenSeq {
    tokenize(s)
}

fn ts(v: &[&str]) -> Vec<TokenSeq> {
    v.iter().map(|s| tokenize(s)).collect()
}

/// Ten cases whose clipped counts and brevity penalties were worked out by hand.
pub fn bleu_hand_counted_cases() {
    let e_inv = 36.787944117144235;
    let cases: [(&str, &[&str], usize, f64); 10] = [
        ("a b c", &["a b d"], 1, 66.66666666666667),
        ("the cat sat on the mat", &["the cat sat on the mat"], 4, 100.0),
        ("the the the the", &["the cat"], 1, 25.0),
        ("a cat", &["a cat sat down"], 1, e_inv),
        ("a b c d e", &["a b c d f"], 4, 66.8740304976422),
        ("a b c", &["a b c d e f g", "x y"], 1, 100.0),
        ("a b c", &["a b", "a b c d"], 1, 100.0),
        ("a b c d", &["a b c e"], 4, 0.0),
        ("a a a b", &["a b", "a a c"], 1, 75.0),
        ("a b c d", &["a b c d e f g h"], 4, e_inv),
    ];
    for (cand, refs, n, want) in cases {
        let got = bleu(&t(cand), &ts(refs), n, 0.0);
        assert!((got - want).abs() < 1e-9, "{cand:?} BLEU-{n}: {got} vs {want}");
    }
}

pub fn irf_anchor_values_and_monotonicity() {
    let p = DisCiderParams::default();
    let with = vec![tokenize("a red chair")];
    let without = vec![tokenize("a blue chair")];
    let mut prev = f64::INFINITY;
    for c in 0..=5 {
        let refs: Vec<Vec<TokenSeq>> = (0..5).map(|k| if k < c { with.clone() } else { without.clone() }).collect();
        let v = irf_factor("red", &refs, &p);
        assert!((v - ((5.8f64) / (5.0 + c as f64)).ln()).abs() < 1e-12);
        assert!(v <= prev);
        prev = v;
        if c == 0 {
            assert!((v - 0.148420).abs() < 1e-6);
        }
        if c == 5 {
            assert!((v + 0.544727).abs() < 1e-6);
        }
    }
}

pub fn absent_words_beat_shared_words_at_equal_cider() {
    // "fireplace" and "red" have the same document frequency, so both
    // candidates have the same CIDEr; only "red" occurs in the references.
    let target = ts(&["a red room with a fireplace"]);
    let others = [ts(&["a red car"]), ts(&["a red bus"]), ts(&["a red cup"]), ts(&["a red hat"]), ts(&["a red pen"])];
    let filler =
        [ts(&["a fireplace"]), ts(&["a fireplace"]), ts(&["a fireplace"]), ts(&["a fireplace"]), ts(&["a fireplace"])];
    let mut images: Vec<&[TokenSeq]> = vec![&target];
    images.extend(others.iter().map(Vec::as_slice));
    images.extend(filler.iter().map(Vec::as_slice));
    let df = DfTable::from_images(images);
    let refs: Vec<Vec<TokenSeq>> = others.to_vec();
    let p = DisCiderParams::default();
    let (fire, red) = (t("a fireplace"), t("a red"));
    assert!((cider(&fire, &target, &df) - cider(&red, &target, &df)).abs() < 1e-9);
    assert!(discider(&fire, &target, &refs, &df, &p) > discider(&red, &target, &refs, &df, &p));
}

pub fn disreward_algebra_on_random_triples() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..10_000 {
        let (x, y, b) = (rng.random_range(-50.0..150.0), rng.random_range(-50.0..150.0), rng.random_range(0.0..20.0));
        let d = disreward(x, y, b);
        assert!(d <= 0.0);
        assert_eq!(d == 0.0, x >= y + b, "{x} {y} {b}");
        assert_eq!(disreward(x, x, b), -b);
    }
}
