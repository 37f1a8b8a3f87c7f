use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refdic_core::metrics::{tokenize, DfTable, PreparedRefs, RewardConfig, TokenSeq};
use refdic_core::model::{ModelConfig, TransDic, Vocab};
use refdic_core::tensor::Tensor;
use refdic_core::train::{
    baseline, decode_pair, make_negative, score_candidates, scst_gradients, MaskSpec, MaskStrategy, NegativeDecode,
    NegativeInput, RewardContext, ScoredCandidate, ScstBatch,
};

pub fn toy(seed: u64) -> TransDic {
    let cfg = ModelConfig {
        d_feat: 4,
        d_model: 8,
        n_heads: 2,
        n_layers_target: 1,
        n_layers_select: 1,
        n_layers_fuse: 1,
        n_layers_decoder: 1,
        vocab_size: 7,
        max_len: 6,
        ..Default::default()
    };
    TransDic::new(cfg, seed).unwrap()
}

pub fn feats(rows: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(rows, 4, (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

pub fn vocab() -> Vocab {
    Vocab::from_words(["a", "b", "c"])
}

struct Gt {
    gt: Vec<TokenSeq>,
    df: DfTable,
    prepared: PreparedRefs,
}

fn ground_truth() -> Gt {
    let gt = vec![tokenize("a b"), tokenize("b c a")];
    let df = DfTable::from_images([gt.as_slice(), &[tokenize("c")][..], &[tokenize("a c")][..]]);
    let prepared = PreparedRefs::cider(&gt, &df);
    Gt { gt, df, prepared }
}

pub fn unmasked_negative_matches_the_cider_only_gradient() {
    let gt = ground_truth();
    let v = vocab();
    for seed in 0..5 {
        let model = toy(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(50 + seed);
        let (t, r1, r2) = (feats(3, &mut rng), feats(2, &mut rng), feats(4, &mut rng));
        let refs = [&r1, &r2];
        let input =
            NegativeInput { model: &model, target: &t, refs: &refs, pool: &[], caption: None, attribution: None };
        let unmasked = MaskSpec { strategy: MaskStrategy::None, ..Default::default() };
        let neg = make_negative(&input, &unmasked, &mut rng).unwrap();
        let neg_views: Vec<&Tensor> = neg.iter().collect();
        let (cands, negs) = decode_pair(&model, &t, &refs, &neg_views, 4, NegativeDecode::PairedBeam).unwrap();
        let grads = |lambda: f64| {
            let reward = RewardConfig { lambda, ..Default::default() };
            let ctx = RewardContext { gt: &gt.gt, prepared: &gt.prepared, df: &gt.df, reward: &reward };
            let batch = score_candidates(&v, &cands, &negs, &ctx).unwrap();
            if lambda > 0.0 {
                assert!(batch.candidates.iter().all(|c| c.disreward == -reward.beta));
            }
            scst_gradients(&model, &t, &refs, &batch).unwrap().1
        };
        let (with, without) = (grads(1.0), grads(0.0));
        for (a, b) in with.iter().zip(&without) {
            for (x, y) in a.data().iter().zip(b.data()) {
                assert!((x - y).abs() <= 1e-12, "seed {seed}: {x} vs {y}");
            }
        }
    }
}

pub fn equal_rewards_give_exactly_zero_gradients() {
    let model = toy(9);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (t, r) = (feats(3, &mut rng), feats(3, &mut rng));
    let cands = model.generate(&t, &[&r], Some(5)).unwrap();
    for reward in [0.0, 0.1, 37.25, -4.0 / 3.0] {
        let rewards = vec![reward; cands.len()];
        let batch = ScstBatch {
            candidates: cands
                .iter()
                .map(|h| ScoredCandidate {
                    tokens: h.tokens.clone(),
                    log_prob: h.log_prob,
                    cider: reward,
                    disreward: 0.0,
                    reward,
                })
                .collect(),
            negatives: vec![],
            baseline: baseline(&rewards),
        };
        let (loss, grads) = scst_gradients(&model, &t, &[&r], &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().all(|g| g.data().iter().all(|&x| x == 0.0)));
    }
}
