use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use refdic_core::model::{ModelConfig, TransDic, EOS};
use refdic_core::tensor::gradcheck::{check_inputs, check_params, relative_error};
use refdic_core::tensor::{multi_head_attention, Mask, Mha, ParamStore, Tape, Tensor, TensorError, Var};

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rows: usize, cols: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Contracts `v` with fixed random weights so every output entry matters.
fn contract(tape: &mut Tape, v: Var, seed: u64) -> Result<Var, TensorError> {
    let [r, c] = tape.value(v).shape();
    let w = tape.leaf(random(r, c, seed))?;
    let p = tape.mul(v, w)?;
    tape.sum(p)
}

fn assert_inputs<F>(name: &str, inputs: &[Tensor], f: F)
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var, TensorError>,
{
    for (i, e) in check_inputs(inputs, H, f).unwrap().into_iter().enumerate() {
        assert!(e < TOL, "{name}: input {i} rel err {e}");
    }
}

pub fn elementwise_and_linear_kernels() {
    let (a, b) = (random(3, 4, 1), random(3, 4, 2));
    assert_inputs("add", &[a.clone(), b.clone()], |t, v| {
        let o = t.add(v[0], v[1])?;
        contract(t, o, 9)
    });
    assert_inputs("mul", &[a.clone(), b.clone()], |t, v| {
        let o = t.mul(v[0], v[1])?;
        contract(t, o, 9)
    });
    assert_inputs("scale", std::slice::from_ref(&a), |t, v| {
        let o = t.scale(v[0], -1.7)?;
        contract(t, o, 9)
    });
    assert_inputs("add_row", &[a.clone(), random(1, 4, 3)], |t, v| {
        let o = t.add_row(v[0], v[1])?;
        contract(t, o, 9)
    });
    assert_inputs("matmul", &[a.clone(), random(4, 2, 4)], |t, v| {
        let o = t.matmul(v[0], v[1])?;
        contract(t, o, 9)
    });
    assert_inputs("matmul_t", &[a.clone(), random(2, 4, 5)], |t, v| {
        let o = t.matmul_t(v[0], v[1])?;
        contract(t, o, 9)
    });
    assert_inputs("sum", std::slice::from_ref(&a), |t, v| t.sum(v[0]));
}

pub fn shape_kernels() {
    let (a, b) = (random(2, 4, 11), random(3, 4, 12));
    assert_inputs("concat_rows", &[a.clone(), b.clone()], |t, v| {
        let o = t.concat_rows(&[v[0], v[1]])?;
        contract(t, o, 9)
    });
    assert_inputs("concat_cols", &[a.clone(), random(2, 3, 13)], |t, v| {
        let o = t.concat_cols(&[v[0], v[1]])?;
        contract(t, o, 9)
    });
    assert_inputs("slice_cols", std::slice::from_ref(&b), |t, v| {
        let o = t.slice_cols(v[0], 1, 3)?;
        contract(t, o, 9)
    });
    assert_inputs("gather_rows", std::slice::from_ref(&b), |t, v| {
        let o = t.gather_rows(v[0], &[2, 0, 2, 1])?;
        contract(t, o, 9)
    });
    assert_inputs("embedding_lookup", &[random(5, 4, 14)], |t, v| {
        let o = t.embedding_lookup(v[0], &[4, 1, 1])?;
        contract(t, o, 9)
    });
    assert_inputs("pick", std::slice::from_ref(&b), |t, v| {
        let o = t.pick(v[0], &[3, 0, 2])?;
        contract(t, o, 9)
    });
}

pub fn nonlinear_kernels() {
    let a = random(3, 4, 21);
    assert_inputs("row_softmax", std::slice::from_ref(&a), |t, v| {
        let o = t.row_softmax(v[0])?;
        contract(t, o, 9)
    });
    let mask = Mask::causal(3);
    let sq = random(3, 3, 22);
    assert_inputs("row_softmax_masked", &[sq], |t, v| {
        let o = t.row_softmax_masked(v[0], &mask)?;
        contract(t, o, 9)
    });
    assert_inputs("log_softmax", std::slice::from_ref(&a), |t, v| {
        let o = t.log_softmax(v[0])?;
        contract(t, o, 9)
    });
    assert_inputs("cross_entropy", std::slice::from_ref(&a), |t, v| t.cross_entropy(v[0], &[1, 3, 0]));
    assert_inputs("layer_norm", &[a.clone(), random(1, 4, 23), random(1, 4, 24)], |t, v| {
        let o = t.layer_norm(v[0], v[1], v[2])?;
        contract(t, o, 9)
    });
    // Keep entries away from the kink at zero.
    let mut r = random(3, 4, 25);
    for x in r.data_mut() {
        *x += 0.1f64.copysign(*x);
    }
    assert_inputs("relu", &[r], |t, v| {
        let o = t.relu(v[0])?;
        contract(t, o, 9)
    });
    assert_inputs("cosine_rows", &[random(3, 4, 26), random(3, 4, 27)], |t, v| {
        let o = t.cosine_rows(v[0], v[1])?;
        contract(t, o, 9)
    });
}

fn assert_params(name: &str, report: Vec<(String, f64)>) {
    assert!(!report.is_empty());
    for (p, e) in report {
        assert!(e < TOL, "{name}: {p} rel err {e}");
    }
}

pub fn multi_head_attention_parameters_and_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let mut store = ParamStore::new();
    let mha = Mha::new(&mut store, "att", 8, 2, &mut rng).unwrap();
    let (q, kv) = (random(3, 8, 32), random(4, 8, 33));
    let report = check_params(&store, H, 16, |g| {
        let q = g.input(q.clone())?;
        let k = g.input(kv.clone())?;
        let out = multi_head_attention(g, &mha, q, k, k, None)?;
        contract(&mut g.tape, out.output, 34)
    })
    .unwrap();
    assert_params("mha params", report);
    // Input gradients through a graph with the attention parameters fixed.
    let grads = {
        let mut g = refdic_core::tensor::Graph::new(&store);
        let qv = g.input(q.clone()).unwrap();
        let kv_v = g.input(kv.clone()).unwrap();
        let out = multi_head_attention(&mut g, &mha, qv, kv_v, kv_v, None).unwrap();
        let loss = contract(&mut g.tape, out.output, 34).unwrap();
        let gr = g.tape.backward(loss).unwrap();
        (gr.get_or_zeros(qv, [3, 8]), gr.get_or_zeros(kv_v, [4, 8]))
    };
    let eval = |q: &Tensor, kv: &Tensor| {
        let mut g = refdic_core::tensor::Graph::new(&store);
        let qv = g.input(q.clone()).unwrap();
        let kv_v = g.input(kv.clone()).unwrap();
        let out = multi_head_attention(&mut g, &mha, qv, kv_v, kv_v, None).unwrap();
        let loss = contract(&mut g.tape, out.output, 34).unwrap();
        g.value(loss).item().unwrap()
    };
    for (which, analytic) in [(0, &grads.0), (1, &grads.1)] {
        let base = if which == 0 { q.clone() } else { kv.clone() };
        let mut numeric = vec![0.0; base.len()];
        for (i, slot) in numeric.iter_mut().enumerate() {
            let (mut p, mut m) = (base.clone(), base.clone());
            p.data_mut()[i] += H;
            m.data_mut()[i] -= H;
            let (fp, fm) = if which == 0 { (eval(&p, &kv), eval(&m, &kv)) } else { (eval(&q, &p), eval(&q, &m)) };
            *slot = (fp - fm) / (2.0 * H);
        }
        let e = relative_error(analytic.data(), &numeric);
        assert!(e < TOL, "mha input {which}: {e}");
    }
}

pub fn masked_attention_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(35);
    let mut store = ParamStore::new();
    let mha = Mha::new(&mut store, "att", 8, 2, &mut rng).unwrap();
    let x = random(4, 8, 36);
    let mask = Mask::causal(4);
    let report = check_params(&store, H, 16, |g| {
        let v = g.input(x.clone())?;
        let out = multi_head_attention(g, &mha, v, v, v, Some(&mask))?;
        contract(&mut g.tape, out.output, 37)
    })
    .unwrap();
    assert_params("masked mha", report);
}

fn toy_model() -> TransDic {
    let cfg = ModelConfig {
        d_feat: 6,
        d_model: 8,
        n_heads: 2,
        n_layers_target: 2,
        n_layers_select: 2,
        n_layers_fuse: 2,
        n_layers_decoder: 2,
        vocab_size: 7,
        max_len: 5,
        ..Default::default()
    };
    TransDic::new(cfg, 41).unwrap()
}

fn toy_inputs() -> (Tensor, Vec<Tensor>) {
    (random(3, 6, 42), vec![random(2, 6, 43), random(4, 6, 44)])
}

pub fn target_flow_gradients() {
    let model = toy_model();
    let (target, _) = toy_inputs();
    let report = check_params(model.store(), H, 8, |g| {
        let t = g.input(target.clone())?;
        let m = model.project_to_memory(g, t).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
        let o = model.target_flow(g, m).map_err(|e| TensorError::InvalidArgument(e.to_string()))?;
        contract(&mut g.tape, o, 45)
    })
    .unwrap();
    assert_params("target flow", report);
}

pub fn target_reference_flow_gradients() {
    let model = toy_model();
    let (target, refs) = toy_inputs();
    let report = check_params(model.store(), H, 8, |g| {
        let err = |e: refdic_core::model::ModelError| TensorError::InvalidArgument(e.to_string());
        let t = g.input(target.clone())?;
        let r = refs.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let enc = model.encode(g, t, &r).map_err(err)?;
        contract(&mut g.tape, enc.ref_flow.expect("full model"), 46)
    })
    .unwrap();
    assert_params("target-reference flow", report);
}

pub fn decoder_and_full_model_gradients() {
    let model = toy_model();
    let (target, refs) = toy_inputs();
    let words = [4, 6, 5];
    let report = check_params(model.store(), H, 8, |g| {
        let err = |e: refdic_core::model::ModelError| TensorError::InvalidArgument(e.to_string());
        let t = g.input(target.clone())?;
        let r = refs.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let enc = model.encode(g, t, &r).map_err(err)?;
        model.xe_loss(g, enc.memory, &words).map_err(err)
    })
    .unwrap();
    assert_params("xe loss", report);

    let report = check_params(model.store(), H, 8, |g| {
        let err = |e: refdic_core::model::ModelError| TensorError::InvalidArgument(e.to_string());
        let t = g.input(target.clone())?;
        let r = refs.iter().map(|x| g.input(x.clone())).collect::<Result<Vec<_>, _>>()?;
        let enc = model.encode(g, t, &r).map_err(err)?;
        model.sequence_logprob(g, enc.memory, &[5, 4, EOS]).map_err(err)
    })
    .unwrap();
    assert_params("sequence log-prob", report);
}
