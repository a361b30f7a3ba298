use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::{grad_check, GradCheckConfig, GradCheckReport};
use crate::text::CharCodec;

fn ag() -> ModelConfig {
    ModelConfig::with_classes(4)
}

/// Every weight random, so no check is vacuous.
fn model(seed: u64) -> Tdsm<f64> {
    Tdsm::init_dense(ag(), seed).unwrap()
}

fn zeroed(m: &Tdsm<f64>) -> Tdsm<f64> {
    Tdsm {
        config: m.config.clone(),
        params: m.params.map(|_, t| Tensor::zeros(t.shape().to_vec())),
    }
}

fn random(shape: &[usize], lo: f64, hi: f64, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn encode(words: &[&str]) -> Vec<u8> {
    let codec = CharCodec::default();
    words.iter().flat_map(|w| codec.encode_word(w)).collect()
}

fn vals(g: &Graph<f64>, v: Var) -> Vec<f64> {
    g.value(v).data().to_vec()
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

// ---- configuration and counting ---------------------------------------

#[test]
fn shape_chain_widths() {
    let shapes = ag().fcn_shapes().unwrap();
    // floor((20-4)/1)+1 = 17, 17-4+1 = 14, floor((14-4)/2)+1 = 6
    assert_eq!(shapes, vec![(1, 100, 20), (10, 1, 17), (20, 1, 14), (30, 1, 6)]);
    assert_eq!(ag().topic_dim().unwrap(), 180);
    assert_eq!(ag().sentence_dim().unwrap(), 380);
}

/// Closed-form per-stage counts of the reference architecture.
fn closed_form(k: usize) -> ParamCount {
    let conv = |filters: usize, c_in: usize, kh: usize, kw: usize| filters * c_in * kh * kw + filters;
    let hidden = 100;
    let topic = 180;
    let sentence = topic + 2 * hidden;
    let bottleneck = 70;
    ParamCount {
        embedding: 128 * 100,
        fcn: conv(10, 1, 100, 4) + conv(20, 10, 1, 4) + conv(30, 20, 1, 4),
        bilstm: 2 * 4 * (hidden * (hidden + topic) + hidden),
        attention: 2 * hidden + 1,
        residual_blocks: 10 * (sentence * bottleneck + bottleneck + bottleneck * sentence + sentence),
        output: sentence * k + k,
    }
}

#[test]
fn parameter_counts_match_closed_form() {
    let counted = model(0).count_params();
    assert_eq!(counted, closed_form(4));
    assert_eq!(counted.embedding, 12_800);
    assert_eq!(counted.fcn, 7_260);
    assert_eq!(counted.embedding + counted.fcn, 20_060);
    assert_eq!(counted.bilstm, 224_800);
    assert_eq!(counted.attention, 201);
    assert_eq!(counted.residual_blocks, 536_500);
    assert_eq!(counted.output, 1_524);
    assert_eq!(counted.total(), 783_085);
}

#[test]
fn one_block_count() {
    let mut cfg = ag();
    cfg.blocks = 1;
    let c = count_params(&cfg.shapes().unwrap(), |s| s.iter().product());
    assert_eq!(c.residual_blocks, 53_650);
}

#[test]
fn counts_near_reported_budget_for_common_class_counts() {
    for k in [2, 4, 5, 14] {
        let c = count_params(&ModelConfig::with_classes(k).shapes().unwrap(), |s| s.iter().product());
        assert_eq!(c, closed_form(k));
        let dev = (c.total() as f64 - 780_000.0).abs() / 780_000.0;
        assert!(dev <= 0.05, "K={k}: {} is {dev} off", c.total());
    }
    let four = closed_form(4);
    let fourteen = closed_form(14);
    assert_eq!(fourteen.total() - four.total(), (380 * 14 + 14) - (380 * 4 + 4));
    assert_eq!(ParamCount { output: 0, ..fourteen }, ParamCount { output: 0, ..four });
}

#[test]
fn empty_model_counts_zero() {
    assert_eq!(ParamCount::from_named(std::iter::empty()).unwrap().total(), 0);
    assert!(ParamCount::from_named([("mystery", 3)]).is_err());
}

#[test]
fn names_follow_canonical_order() {
    let m = model(0);
    let named = m.params.named();
    assert_eq!(named[0].0, "embedding");
    assert_eq!(named[1].0, "fcn.conv1.weight");
    assert_eq!(named[7].0, "bilstm.forward.w_f");
    assert_eq!(named[15].0, "bilstm.backward.w_f");
    assert_eq!(named[23].0, "attention.weight");
    assert_eq!(named[25].0, "head.block0.down_weight");
    assert_eq!(named.last().unwrap().0, "head.out.bias");
    assert_eq!(named.len(), 1 + 6 + 16 + 2 + 40 + 2);
    let rebuilt = ModelParams::from_leaves(&m.params, m.params.leaves().into_iter().cloned()).unwrap();
    assert_eq!(rebuilt, m.params);
    assert!(ModelParams::<Tensor<f64>>::from_leaves(&m.params, Vec::new()).is_none());
}

#[test]
fn init_is_seeded_and_follows_the_scheme() {
    let a = model(3);
    assert_eq!(a, model(3));
    assert_ne!(a.params.embedding, model(4).params.embedding);
    assert!(a.params.bilstm.forward.b_f.data().iter().all(|&v| v == 1.0));
    assert!(a.params.bilstm.backward.b_i.data().iter().all(|&v| v == 0.0));
    assert!(a.params.head.out.bias.data().iter().all(|&v| v == 0.0));
    let bound = (6.0f64 / (280.0 + 100.0)).sqrt();
    let w = a.params.bilstm.forward.w_o.data();
    assert!(w.iter().all(|v| v.abs() <= bound));
    assert!(w.iter().any(|v| v.abs() > 0.9 * bound));
    let conv_bound = (6.0f64 / (400.0 + 4000.0)).sqrt();
    assert!(a.params.fcn[0].weight.data().iter().all(|v| v.abs() <= conv_bound));
    let e = a.params.embedding.data();
    assert!(e.iter().all(|v| v.abs() <= 3f64.sqrt()));
    let var = e.iter().map(|v| v * v).sum::<f64>() / e.len() as f64;
    assert!((var - 1.0).abs() < 0.05, "{var}");
    assert!(a.params.head.out.weight.data().iter().any(|&v| v != 0.0));

    let t = Tdsm::<f64>::init(ag(), 3).unwrap();
    assert_eq!(t.params.embedding, a.params.embedding);
    assert_eq!(t.params.bilstm, a.params.bilstm);
    assert!(t.params.head.out.weight.data().iter().all(|&v| v == 0.0));
    for b in &t.params.head.blocks {
        assert!(b.up_weight.data().iter().all(|&v| v == 0.0));
        assert!(b.down_weight.data().iter().any(|&v| v != 0.0));
    }
}

#[test]
fn training_init_predicts_uniformly() {
    let m = Tdsm::<f32>::init(ag(), 5).unwrap();
    let doc = crate::text::EncodedDocument::encode("rates rise again", 0, &CharCodec::default(), 5);
    assert!(m.predict(&doc).unwrap().iter().all(|&p| (p - 0.25).abs() < 1e-7));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = ag();
    cfg.word_len = 6;
    assert!(matches!(cfg.shapes(), Err(Error::Config(_))));
    let mut cfg = ag();
    cfg.classes = 1;
    assert!(matches!(cfg.validate(), Err(Error::Config(_))));
}

// ---- character FCN ------------------------------------------------------

#[test]
fn all_pad_word_repeats_row_zero() {
    let m = model(1);
    let mut g = Graph::new();
    let e = g.constant(m.params.embedding.clone()).unwrap();
    let img = embed_word(&mut g, e, &[0; 20]).unwrap();
    assert_eq!(g.shape(img), &[1, 100, 20]);
    let out = g.value(img);
    let row0 = &m.params.embedding.data()[..100];
    for t in 0..20 {
        for e in 0..100 {
            assert_eq!(out.at(&[0, e, t]), row0[e]);
        }
    }
}

#[test]
fn one_hot_embedding_selects_rows() {
    let mut table = vec![0.0; 128 * 100];
    for r in 0..100 {
        table[r * 100 + r] = 1.0;
    }
    let mut g = Graph::new();
    let e = g.constant(Tensor::new(vec![128, 100], table).unwrap()).unwrap();
    let ids: Vec<u8> = (0..20).map(|t| (t * 3) as u8).collect();
    let img = embed_word(&mut g, e, &ids).unwrap();
    let out = g.value(img);
    for (t, &id) in ids.iter().enumerate() {
        for r in 0..100 {
            let expected = if r == id as usize { 1.0 } else { 0.0 };
            assert_eq!(out.at(&[0, r, t]), expected);
        }
    }
    assert!(matches!(embed_word(&mut g, e, &[200; 20]), Err(Error::Index { .. })));
}

#[test]
fn embedding_gradient_counts_characters() {
    let m = model(2);
    let word = CharCodec::default().encode_word("banana");
    let mut g = Graph::new();
    let e = g.param(m.params.embedding.clone()).unwrap();
    let img = embed_word(&mut g, e, &word).unwrap();
    let s = g.sum_all(img).unwrap();
    g.backward(s).unwrap();
    let grad = g.grad(e).unwrap();
    for r in 0..128 {
        let count = word.iter().filter(|&&c| c as usize == r).count() as f64;
        assert!(grad[r * 100..(r + 1) * 100].iter().all(|&v| v == count), "row {r}");
    }
    assert_eq!(grad[0], 14.0);
    assert_eq!(grad[b'a' as usize * 100], 3.0);

    let report = grad_check(
        |g, v| {
            let img = embed_word(g, v[0], &word)?;
            g.sum_all(img)
        },
        &[m.params.embedding.clone()],
        &GradCheckConfig { max_coords_per_param: Some(50), ..Default::default() },
    )
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

#[test]
fn zero_fcn_gives_one_half() {
    let m = zeroed(&model(0));
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let img = embed_word(&mut g, p.embedding, &encode(&["hello"])).unwrap();
    let topic = word_to_topic(&mut g, &m.config, &p, img).unwrap();
    assert_eq!(g.shape(topic), &[180]);
    assert!(vals(&g, topic).iter().all(|&v| v == 0.5));
}

#[test]
fn word_to_topic_rejects_wrong_shape() {
    let m = model(0);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let bad = g.constant(Tensor::zeros(vec![1, 100, 19])).unwrap();
    assert!(matches!(word_to_topic(&mut g, &m.config, &p, bad), Err(Error::Dimension { .. })));
}

#[test]
fn batch_path_matches_single_word_path() {
    let m = model(5);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let chars = encode(&["zebra"]);
    let img = embed_word(&mut g, p.embedding, &chars).unwrap();
    let single = word_to_topic(&mut g, &m.config, &p, img).unwrap();
    let batch = batch_topics(&mut g, &m.config, &p, &chars, 1, 1).unwrap();
    assert_eq!(g.shape(batch), &[1, 1, 180]);
    assert_eq!(vals(&g, single), vals(&g, batch));
}

#[test]
fn batch_topics_are_per_word() {
    let m = model(6);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let words = ["the", "cat", "sat", "the"];
    let a = batch_topics(&mut g, &m.config, &p, &encode(&words), 2, 2).unwrap();
    let a = vals(&g, a);
    let row = |v: &[f64], i: usize| v[i * 180..(i + 1) * 180].to_vec();
    // identical words, identical vectors
    assert_eq!(row(&a, 0), row(&a, 3));
    // permutation
    let perm = ["sat", "the", "the", "cat"];
    let b = batch_topics(&mut g, &m.config, &p, &encode(&perm), 2, 2).unwrap();
    let b = vals(&g, b);
    assert_eq!(row(&b, 0), row(&a, 2));
    assert_eq!(row(&b, 3), row(&a, 1));
    // perturbing one word leaves the others bit-identical
    let c = batch_topics(&mut g, &m.config, &p, &encode(&["the", "dog", "sat", "the"]), 2, 2).unwrap();
    let c = vals(&g, c);
    assert_ne!(row(&c, 1), row(&a, 1));
    for i in [0, 2, 3] {
        assert_eq!(row(&c, i), row(&a, i));
    }
    assert!(batch_topics(&mut g, &m.config, &p, &encode(&words), 3, 2).is_err());
}

#[test]
fn fcn_gradients_pass_check() {
    let m = model(7);
    let chars = encode(&["quick", "fox"]);
    let cfg = m.config.clone();
    let report = check_stages(&m, &[Stage::Embedding, Stage::Fcn], 40, None, vec![], move |g, p, _| {
        let t = word_topics(g, &cfg, p, &chars)?;
        project(g, t, 7)
    });
    assert!(report.passes(1e-4), "worst {:?}", report.worst());
}

/// Loss `Σ out ⊙ r` with fixed random `r`.
fn project(g: &mut Graph<f64>, out: Var, seed: u64) -> Result<Var> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = random(g.shape(out), -1.0, 1.0, &mut rng);
    let r = g.constant(r)?;
    let p = g.mul(out, r)?;
    g.sum_all(p)
}

/// Gradient check over the parameters of `stages` (other parameters bound
/// as constants) plus `extra` input tensors.
fn check_stages(
    m: &Tdsm<f64>,
    stages: &[Stage],
    coords: usize,
    noise_ulps: Option<f64>,
    extra: Vec<Tensor<f64>>,
    f: impl Fn(&mut Graph<f64>, &ModelParams<Var>, &[Var]) -> Result<Var>,
) -> GradCheckReport {
    let in_scope = |name: &str| stages.contains(&Stage::of(name).unwrap());
    let mut tensors = extra.clone();
    for (name, t) in m.params.named() {
        if in_scope(&name) {
            tensors.push(t.clone());
        }
    }
    grad_check(
        |g, vars| {
            let (extra_vars, param_vars) = vars.split_at(extra.len());
            let mut it = param_vars.iter();
            let p = m.params.try_map(&mut |name, t| {
                if in_scope(name) {
                    Ok(*it.next().unwrap())
                } else {
                    g.constant(t.clone())
                }
            })?;
            f(g, &p, extra_vars)
        },
        &tensors,
        &GradCheckConfig { max_coords_per_param: Some(coords), noise_ulps, ..Default::default() },
    )
    .unwrap()
}

// ---- recurrent stage ---------------------------------------------------

/// Independent per-element LSTM step.
fn lstm_oracle(p: &LstmParams<Tensor<f64>>, v: &[f64], s: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let x: Vec<f64> = s.iter().chain(v).copied().collect();
    let h = s.len();
    let lin = |w: &Tensor<f64>, b: &Tensor<f64>, j: usize| {
        let mut z = b.data()[j];
        for k in 0..x.len() {
            z += w.data()[j * x.len() + k] * x[k];
        }
        z
    };
    let mut s_out = vec![0.0; h];
    let mut c_out = vec![0.0; h];
    for j in 0..h {
        let f = sigmoid(lin(&p.w_f, &p.b_f, j));
        let i = sigmoid(lin(&p.w_i, &p.b_i, j));
        let cand = lin(&p.w_c, &p.b_c, j).tanh();
        let o = sigmoid(lin(&p.w_o, &p.b_o, j));
        c_out[j] = f * c[j] + i * cand;
        s_out[j] = o * c_out[j].tanh();
    }
    (s_out, c_out)
}

fn step(p: &LstmParams<Tensor<f64>>, v: &[f64], s: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let pv = p.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let v = g.constant(Tensor::vector(v.to_vec())).unwrap();
    let s = g.constant(Tensor::vector(s.to_vec())).unwrap();
    let c = g.constant(Tensor::vector(c.to_vec())).unwrap();
    let (s, c) = lstm_step(&mut g, &pv, v, s, c).unwrap();
    (vals(&g, s), vals(&g, c))
}

#[test]
fn lstm_step_with_zero_params() {
    let p = zeroed(&model(0)).params.bilstm.forward;
    let v = vec![0.3; 180];
    let (s, c) = step(&p, &v, &[0.0; 100], &[0.0; 100]);
    assert!(s.iter().chain(&c).all(|&x| x == 0.0));
    let c_prev: Vec<f64> = (0..100).map(|i| i as f64 - 50.0).collect();
    let (_, c) = step(&p, &v, &[0.0; 100], &c_prev);
    for (a, b) in c.iter().zip(&c_prev) {
        assert_eq!(*a, 0.5 * b);
    }
}

#[test]
fn lstm_step_matches_scalar_oracle() {
    let m = model(11);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..5 {
        let v = random(&[180], 0.0, 1.0, &mut rng).into_data();
        let s = random(&[100], -1.0, 1.0, &mut rng).into_data();
        let c = random(&[100], -2.0, 2.0, &mut rng).into_data();
        let (s1, c1) = step(&m.params.bilstm.forward, &v, &s, &c);
        let (s2, c2) = lstm_oracle(&m.params.bilstm.forward, &v, &s, &c);
        let diff = s1.iter().zip(&s2).chain(c1.iter().zip(&c2)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-6, "max abs diff {diff}");
    }
}

#[test]
fn lstm_step_shape_errors() {
    let m = model(0);
    let mut g = Graph::new();
    let p = m.params.bilstm.forward.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let v = g.constant(Tensor::zeros(vec![179])).unwrap();
    let s = g.constant(Tensor::zeros(vec![100])).unwrap();
    assert!(matches!(lstm_step(&mut g, &p, v, s, s), Err(Error::Dimension { .. })));
    let v = g.constant(Tensor::zeros(vec![180])).unwrap();
    let c = g.constant(Tensor::zeros(vec![50])).unwrap();
    assert!(matches!(lstm_step(&mut g, &p, v, s, c), Err(Error::Dimension { .. })));
}

fn run_bilstm(p: &BiLstmParams<Tensor<f64>>, topics: &Tensor<f64>, mask: &[bool]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let pv = p.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let t = g.constant(topics.clone()).unwrap();
    let out = bilstm(&mut g, &pv, t, mask).unwrap();
    (vals(&g, out.h), vals(&g, out.s_pos))
}

#[test]
fn single_word_bilstm() {
    let m = model(12);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let topics = random(&[3, 180], 0.0, 1.0, &mut rng);
    let (h, s_pos) = run_bilstm(&m.params.bilstm, &topics, &[true, false, false]);
    assert_eq!(h.len(), 600);
    assert_eq!(&h[..200], &s_pos[..]);
    assert!(h[..200].iter().any(|&v| v != 0.0));
    assert!(h[200..].iter().all(|&v| v == 0.0));
}

#[test]
fn reversed_document_swaps_directions() {
    let a = model(13).params.bilstm;
    let mirrored = BiLstmParams { forward: a.backward.clone(), backward: a.forward.clone() };
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let topics = random(&[4, 180], 0.0, 1.0, &mut rng);
    let mut rev = Vec::new();
    for t in (0..4).rev() {
        rev.extend_from_slice(&topics.data()[t * 180..(t + 1) * 180]);
    }
    let rev = Tensor::new(vec![4, 180], rev).unwrap();
    let (h1, s1) = run_bilstm(&a, &topics, &[true; 4]);
    let (h2, s2) = run_bilstm(&mirrored, &rev, &[true; 4]);
    assert_eq!(&s1[..100], &s2[100..]);
    assert_eq!(&s1[100..], &s2[..100]);
    for t in 0..4 {
        let r = 3 - t;
        assert_eq!(&h1[t * 200..t * 200 + 100], &h2[r * 200 + 100..r * 200 + 200]);
    }
}

#[test]
fn padding_does_not_change_bilstm() {
    let m = model(14);
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let topics = random(&[3, 180], 0.0, 1.0, &mut rng);
    let mut padded = topics.data().to_vec();
    padded.extend(random(&[2, 180], 0.0, 1.0, &mut rng).into_data());
    let padded = Tensor::new(vec![5, 180], padded).unwrap();
    let (h1, s1) = run_bilstm(&m.params.bilstm, &topics, &[true; 3]);
    let (h2, s2) = run_bilstm(&m.params.bilstm, &padded, &[true, true, true, false, false]);
    assert_eq!(&h1[..], &h2[..600]);
    assert!(h2[600..].iter().all(|&v| v == 0.0));
    assert_eq!(s1, s2);
}

#[test]
fn bilstm_mask_errors() {
    let m = model(0);
    let mut g = Graph::new();
    let p = m.params.bilstm.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let t = g.constant(Tensor::zeros(vec![3, 180])).unwrap();
    assert!(matches!(bilstm(&mut g, &p, t, &[false; 3]), Err(Error::EmptyDocument)));
    assert!(matches!(bilstm(&mut g, &p, t, &[true, false, true]), Err(Error::Dimension { .. })));
    assert!(matches!(bilstm(&mut g, &p, t, &[true; 2]), Err(Error::Dimension { .. })));
}

fn attend(p: &AttentionParams<Tensor<f64>>, h: &Tensor<f64>, mask: &[bool]) -> Vec<f64> {
    let mut g = Graph::new();
    let pv = p.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let hv = g.constant(h.clone()).unwrap();
    let w = attention_weights(&mut g, &pv, hv, mask).unwrap();
    vals(&g, w)
}

#[test]
fn attention_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let h = random(&[3, 200], -1.0, 1.0, &mut rng);
    let zero = AttentionParams { weight: Tensor::zeros(vec![200]), bias: Tensor::zeros(vec![1]) };
    let w = attend(&zero, &h, &[true, true, false]);
    assert_eq!(w, vec![0.5, 0.5, 0.0]);
    let p = model(15).params.attention;
    let w = attend(&p, &h, &[true, true, false]);
    assert_eq!(w[2], 0.0);
    assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    // shifting every real score by the same amount changes nothing
    let shifted = AttentionParams { weight: p.weight.clone(), bias: Tensor::scalar(p.bias.data()[0] + 7.5) };
    let w2 = attend(&shifted, &h, &[true, true, false]);
    for (a, b) in w.iter().zip(&w2) {
        assert!((a - b).abs() < 1e-6);
    }
}

fn sentence(topics: &Tensor<f64>, weights: &[f64], s_pos: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let t = g.constant(topics.clone()).unwrap();
    let w = g.constant(Tensor::vector(weights.to_vec())).unwrap();
    let sp = g.constant(s_pos.clone()).unwrap();
    let s = assemble_sentence(&mut g, t, w, sp).unwrap();
    (vals(&g, s.s_bow), vals(&g, s.s))
}

#[test]
fn sentence_assembly_examples() {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let topics = random(&[3, 180], 0.01, 0.99, &mut rng);
    let s_pos = random(&[200], -1.0, 1.0, &mut rng);
    let (bow, s) = sentence(&topics, &[0.0, 1.0, 0.0], &s_pos);
    assert_eq!(&bow[..], &topics.data()[180..360]);
    assert_eq!(s.len(), 380);
    assert_eq!(&s[180..], s_pos.data());
    let third = 1.0 / 3.0;
    let (bow, _) = sentence(&topics, &[third; 3], &s_pos);
    for (j, v) in bow.iter().enumerate() {
        let mean = (0..3).map(|t| topics.data()[t * 180 + j]).sum::<f64>() * third;
        assert!((v - mean).abs() < 1e-12);
        assert!(*v > 0.0 && *v < 1.0);
    }
}

#[test]
fn topics_to_sentence_gradients_pass_check() {
    let m = model(17);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let topics = random(&[3, 180], 0.05, 0.95, &mut rng);
    let mask = [true, true, true];
    let report = check_stages(&m, &[Stage::Bilstm, Stage::Attention], 30, None, vec![topics], |g, p, extra| {
        let rnn = bilstm(g, &p.bilstm, extra[0], &mask)?;
        let w = attention_weights(g, &p.attention, rnn.h, &mask)?;
        let s = assemble_sentence(g, extra[0], w, rnn.s_pos)?;
        project(g, s.s, 17)
    });
    assert!(report.passes(1e-4), "worst {:?}", report.worst());
}

// ---- residual head -----------------------------------------------------

fn block_out(b: &ResidualBlockParams<Tensor<f64>>, x: &[f64]) -> Vec<f64> {
    let mut g = Graph::new();
    let bv = b.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let xv = g.constant(Tensor::vector(x.to_vec())).unwrap();
    let y = residual_block(&mut g, &bv, xv).unwrap();
    vals(&g, y)
}

#[test]
fn zero_block_is_relu() {
    let b = zeroed(&model(0)).params.head.blocks[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let x = random(&[380], -1.0, 1.0, &mut rng).into_data();
    let y = block_out(&b, &x);
    for (a, v) in y.iter().zip(&x) {
        assert_eq!(*a, v.max(0.0));
    }
    let m = model(18);
    let mut nb = m.params.head.blocks[0].clone();
    nb.down_bias = Tensor::zeros(vec![70]);
    nb.up_bias = Tensor::zeros(vec![380]);
    assert!(block_out(&nb, &[0.0; 380]).iter().all(|&v| v == 0.0));

    // identity term of the skip connection in the gradient
    let mut g = Graph::new();
    let bv = b.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let xv = g.param(Tensor::vector(x.clone())).unwrap();
    let y = residual_block(&mut g, &bv, xv).unwrap();
    let s = g.sum_all(y).unwrap();
    g.backward(s).unwrap();
    for (d, v) in g.grad(xv).unwrap().iter().zip(&x) {
        assert_eq!(*d, if *v > 0.0 { 1.0 } else { 0.0 });
    }
}

#[test]
fn residual_head_gradients_pass_check() {
    let m = model(19);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let s = random(&[380], -1.0, 1.0, &mut rng);
    let report = check_stages(&m, &[Stage::ResidualBlocks, Stage::Output], 10, None, vec![s], |g, p, extra| {
        let out = classify(g, &p.head, extra[0])?;
        g.cross_entropy(out.probs, &[1])
    });
    assert!(report.passes(1e-4), "worst {:?}", report.worst());
}

fn classify_values(head: &HeadParams<Tensor<f64>>, s: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new();
    let hv = head.try_map("", &mut |_, t| g.constant(t.clone())).unwrap();
    let sv = g.constant(Tensor::vector(s.to_vec())).unwrap();
    let out = classify(&mut g, &hv, sv).unwrap();
    (vals(&g, out.logits), vals(&g, out.probs))
}

#[test]
fn zero_head_is_uniform_and_zero_blocks_are_linear_softmax() {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let s = random(&[380], -1.0, 1.0, &mut rng).into_data();
    let zero = zeroed(&model(0)).params.head;
    let (_, p) = classify_values(&zero, &s);
    assert!(p.iter().all(|&v| (v - 0.25).abs() < 1e-15));

    let mut head = zero;
    let trained = model(20).params.head.out;
    head.out = trained.clone();
    let (logits, probs) = classify_values(&head, &s);
    let relu_s: Vec<f64> = s.iter().map(|v| v.max(0.0)).collect();
    let direct: Vec<f64> = (0..4)
        .map(|k| {
            let w = &trained.weight.data()[k * 380..(k + 1) * 380];
            w.iter().zip(&relu_s).map(|(a, b)| a * b).sum::<f64>() + trained.bias.data()[k]
        })
        .collect();
    let z: f64 = direct.iter().map(|l| l.exp()).sum();
    for k in 0..4 {
        assert!((logits[k] - direct[k]).abs() < 1e-12);
        assert!((probs[k] - direct[k].exp() / z).abs() < 1e-12);
    }
}

// ---- whole model -------------------------------------------------------

#[test]
fn shape_chain_for_hello_world() {
    let m = model(21);
    let codec = CharCodec::default();
    let chars: Vec<u8> = ["hello", "world"].iter().flat_map(|w| codec.encode_word(w)).collect();
    assert_eq!(chars.len(), 2 * 20);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let out = forward_document(&mut g, &m.config, &p, &chars, &[true, true]).unwrap();
    assert_eq!(g.shape(out.topics), &[2, 180]);
    assert_eq!(g.shape(out.h), &[2, 200]);
    assert_eq!(g.shape(out.sentence.s), &[380]);
    assert_eq!(g.shape(out.probs), &[4]);
}

#[test]
fn padding_extension_is_invisible() {
    let m = model(22);
    let words = ["markets", "rally", "on", "rate", "cut"];
    let short = encode(&words);
    let mut long = short.clone();
    long.extend(vec![0u8; 4 * 20]);
    let mut mask = vec![true; 5];
    mask.extend([false; 4]);
    let mut g = Graph::new();
    let p = m.bind(&mut g, false).unwrap();
    let a = forward_document(&mut g, &m.config, &p, &short, &[true; 5]).unwrap();
    let b = forward_document(&mut g, &m.config, &p, &long, &mask).unwrap();
    let close = |x: Var, y: Var, n: usize| {
        let (x, y) = (vals(&g, x), vals(&g, y));
        x[..n].iter().zip(&y[..n]).all(|(a, b)| (a - b).abs() <= 1e-7)
    };
    assert!(close(a.h, b.h, 5 * 200));
    assert!(close(a.weights, b.weights, 5));
    assert!(vals(&g, b.weights)[5..].iter().all(|&w| w == 0.0));
    assert!(close(a.sentence.s, b.sentence.s, 380));
    assert!(close(a.probs, b.probs, 4));
}

#[test]
fn full_model_gradients_pass_check() {
    let m = model(23);
    let docs = [(encode(&["stocks", "fell"]), 2usize), (encode(&["team", "wins", "cup"]), 1)];
    let report = check_stages(&m, &Stage::ALL, 3, Some(NOISE_ULPS), vec![], |g, p, _| {
        let mut total: Option<Var> = None;
        for (chars, label) in &docs {
            let out = forward_document(g, &m.config, p, chars, &vec![true; chars.len() / 20])?;
            let loss = g.cross_entropy(out.probs, &[*label])?;
            total = Some(match total {
                Some(t) => g.add(t, loss)?,
                None => loss,
            });
        }
        Ok(total.unwrap())
    });
    assert!(report.passes(1e-4), "worst {:?}", report.worst());
    // The score bias has a zero gradient under the softmax shift, so its
    // difference quotient is rounding noise.
    let names: Vec<String> = m.params.named().into_iter().map(|(n, _)| n).collect();
    let bias = &report.params[names.iter().position(|n| n == "attention.bias").unwrap()];
    assert!(bias.analytic.abs() < 1e-12, "{bias:?}");
    assert_eq!(bias.within_noise, bias.coords_checked);
}

#[test]
fn predict_rejects_empty_documents() {
    let m = model(24).cast::<f32>();
    let codec = CharCodec::default();
    let empty = crate::text::EncodedDocument::encode("", 0, &codec, 4);
    assert!(matches!(m.predict(&empty), Err(Error::EmptyDocument)));
    let doc = crate::text::EncodedDocument::encode("oil prices climb", 0, &codec, 4);
    let p = m.predict(&doc).unwrap();
    assert_eq!(p.len(), 4);
    assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn topics_are_open_unit_interval_and_attention_is_a_distribution(
        seed in 0u64..1000,
        words in prop::collection::vec("[a-z0-9.,'-]{1,25}", 1..6),
        pad in 0usize..4,
    ) {
        let m = model(seed);
        let refs: Vec<&str> = words.iter().map(|s| s.as_str()).collect();
        let mut chars = encode(&refs);
        chars.extend(vec![0u8; pad * 20]);
        let mut mask = vec![true; words.len()];
        mask.extend(vec![false; pad]);
        let mut g = Graph::new();
        let p = m.bind(&mut g, false).unwrap();
        let out = forward_document(&mut g, &m.config, &p, &chars, &mask).unwrap();
        prop_assert!(vals(&g, out.topics).iter().all(|&v| v > 0.0 && v < 1.0));
        prop_assert!(vals(&g, out.sentence.s_bow).iter().all(|&v| v > 0.0 && v < 1.0));
        let w = vals(&g, out.weights);
        prop_assert!(w.iter().all(|&v| v >= 0.0));
        prop_assert!(w[words.len()..].iter().all(|&v| v == 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let probs = vals(&g, out.probs);
        prop_assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
}
