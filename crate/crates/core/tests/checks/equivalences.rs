use crate::oracle;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refdic_core::corpus::{caption_key, synth_corpus, SynthConfig};
use refdic_core::groups::{build_groups, GroupBuildConfig};
use refdic_core::model::{beam, match_proposals, ModelConfig, TransDic, BOS, EOS};
use refdic_core::tensor::Tensor;

fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn rows(t: &Tensor) -> Vec<Vec<f64>> {
    (0..t.rows()).map(|i| t.row(i).to_vec()).collect()
}

pub fn proposal_matching_equals_an_argmax_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..50 {
        let n = rng.random_range(1..8);
        let k = rng.random_range(1..6);
        let target = random(n, 5, &mut rng);
        let refs: Vec<Tensor> = (0..k).map(|_| random(rng.random_range(1..7), 5, &mut rng)).collect();
        let views: Vec<&Tensor> = refs.iter().collect();
        let (sims, tuples) = match_proposals(&target, &views);
        let (want_sims, want_tuples) =
            oracle::match_proposals(&rows(&target), &refs.iter().map(rows).collect::<Vec<_>>());
        assert_eq!(tuples, want_tuples);
        for (s, w) in sims.iter().zip(&want_sims) {
            for (i, row) in w.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    assert!((s.at(i, j) - v).abs() < 1e-12);
                }
            }
        }
    }
}

/// Word ids 4 and 5 plus EOS: three allowed tokens.
fn toy_captioner(seed: u64) -> TransDic {
    let cfg = ModelConfig {
        d_feat: 4,
        d_model: 8,
        n_heads: 2,
        n_layers_target: 1,
        n_layers_select: 1,
        n_layers_fuse: 1,
        n_layers_decoder: 1,
        vocab_size: 6,
        max_len: 4,
        ..Default::default()
    };
    let mut model = TransDic::new(cfg, seed).unwrap();
    // Sharpen the output layer so that distributions are far from uniform.
    let id = model.store().find("decoder.out.weight").unwrap();
    for x in model.store_mut().get_mut(id).data_mut() {
        *x *= 4.0;
    }
    model
}

pub fn width_five_beam_equals_exhaustive_enumeration() {
    let mut exact = 0;
    for seed in 0..20 {
        let model = toy_captioner(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let target = random(3, 4, &mut rng);
        let refs = [random(2, 4, &mut rng), random(3, 4, &mut rng)];
        let memory = model.memory(&target, &refs.iter().collect::<Vec<_>>()).unwrap();
        let spec = model.search_spec();
        let score = |p: &[usize]| model.next_logprobs(&memory, p);
        let got = beam(&score, &spec, 5).unwrap();
        let all = oracle::enumerate_sequences(|p| model.next_logprobs(&memory, p).unwrap(), BOS, EOS, &[EOS, 4, 5], 4);
        assert_eq!(all.len(), 1 + 2 + 4 + 8 * 3);
        let best = &all[0];
        assert!(got[0].log_prob <= best.1 + 1e-12, "beam cannot beat the exhaustive optimum");
        if got[0].tokens == best.0 && (got[0].log_prob - best.1).abs() < 1e-12 {
            exact += 1;
        }
    }
    assert_eq!(exact, 20, "beam found the optimum on {exact} of 20 models");
}

pub fn group_builder_equals_nested_loops_on_two_hundred_images() {
    let (m, emb) = synth_corpus(17, 200, &SynthConfig::default()).unwrap();
    let cfg = GroupBuildConfig::default();
    let groups = build_groups(&m, &emb, &cfg).unwrap();
    let images: Vec<oracle::OracleImage> = m
        .images()
        .iter()
        .map(|img| oracle::OracleImage {
            id: img.id.clone(),
            split: img.split.to_string(),
            embedding: emb.get(&img.embedding_key).unwrap().to_vec(),
            captions: (0..img.captions.len()).map(|i| emb.get(&caption_key(&img.id, i)).unwrap().to_vec()).collect(),
            objects: img
                .scene_graph
                .objects
                .iter()
                .map(|o| (o.category.clone(), o.attributes.iter().cloned().collect()))
                .collect(),
        })
        .collect();
    for (t, g) in groups.iter().enumerate() {
        assert_eq!(g.target, images[t].id);
        let want = oracle::reference_group(t, &images, cfg.coarse_size, cfg.p, cfg.k);
        let got: Vec<(String, u32, u32)> = g
            .references
            .iter()
            .zip(&g.scores)
            .map(|(id, s)| (id.clone(), s.object_overlap, s.attribute_overlap))
            .collect();
        assert_eq!(got, want, "target {}", g.target);
    }
}
