//! Analytic gradients vs central finite differences for every
//! differentiable op and for a full transformer block.
//!
//! The engine is generic over the element type, so every case runs twice:
//! once at f32 (rel. err < 1e-3) and once at f64 (rel. err < 1e-6). The
//! finite-difference oracle always evaluates the loss on an f64 mirror of
//! the parameter store so the oracle itself is not the noise floor.

use limber_core::lm::{forward_tokens_var, DecoderLM, LmConfig, LmVars};
use limber_core::rng;
use limber_core::tensor::{init, Element, ParamStore, Reduction, Tape, Tensor, Var};

trait Tol: Element {
    const REL: f64;
}
impl Tol for f32 {
    const REL: f64 = 1e-3;
}
impl Tol for f64 {
    const REL: f64 = 1e-6;
}

const FD_STEP: f64 = 1e-5;

/// Copy a store to f64, preserving values exactly and trainability flags.
fn mirror_f64<E: Element>(s: &ParamStore<E>) -> ParamStore<f64> {
    let mut out = ParamStore::new();
    for (name, t) in s.iter() {
        let data: Vec<f64> = t.data().iter().map(|v| v.to_f64c()).collect();
        let mut m = Tensor::from_vec(t.shape(), data).unwrap();
        m.set_requires_grad(t.requires_grad());
        out.insert_raw(name, m);
    }
    out
}

fn rand_store<E: Element>(seed: u64, shapes: &[(&str, &[usize])]) -> ParamStore<E> {
    let mut r = rng::rng(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.insert(name, init::normal(&mut r, shape, 0.7));
    }
    s
}

fn weighted_sum<E: Element>(tape: &mut Tape<'_, E>, v: Var, seed: u64) -> Var {
    let shape = tape.value(v).shape().to_vec();
    let w = tape.constant(init::normal(&mut rng::rng(seed), &shape, 1.0));
    let prod = tape.mul(v, w).unwrap();
    tape.sum_all(prod)
}

/// Run one case: analytic grads at `E`, finite differences on the f64
/// mirror, compare at `E`'s tolerance.
macro_rules! check_case {
    ($E:ty, $what:expr, $store:expr, $builder:ident) => {{
        let store: ParamStore<$E> = $store;
        let grads = {
            let mut tape = Tape::new(&[&store]);
            let loss = $builder(&mut tape);
            tape.backward(loss).unwrap()
        };
        let mut probe = mirror_f64(&store);
        let loss_of = |s: &ParamStore<f64>| -> f64 {
            let mut tape = Tape::new(&[s]);
            let loss = $builder(&mut tape);
            tape.value(loss).item()
        };
        for idx in 0..store.len() {
            let name = store.name(idx).to_string();
            if !store.tensor(idx).requires_grad() {
                assert!(
                    grads.get(0, idx).is_none(),
                    "{}: frozen param {} received a gradient",
                    $what,
                    name
                );
                continue;
            }
            let analytic = grads
                .get(0, idx)
                .unwrap_or_else(|| panic!("{}: missing grad for {}", $what, name));
            let n = store.tensor(idx).numel();
            let stride = (n / 24).max(1);
            for j in (0..n).step_by(stride) {
                let orig = probe.tensor(idx).data()[j];
                let h = FD_STEP * orig.abs().max(1.0);
                probe.tensor_mut(idx).data_mut()[j] = orig + h;
                let up = loss_of(&probe);
                probe.tensor_mut(idx).data_mut()[j] = orig - h;
                let down = loss_of(&probe);
                probe.tensor_mut(idx).data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * h);
                let a = analytic[j].to_f64c();
                let denom = numeric.abs().max(a.abs()).max(1e-4);
                let rel = (numeric - a).abs() / denom;
                assert!(
                    rel < <$E as Tol>::REL,
                    "{}: {}[{}]: analytic {:.8e} vs numeric {:.8e} (rel {:.3e})",
                    $what,
                    name,
                    j,
                    a,
                    numeric,
                    rel
                );
            }
        }
    }};
}

fn case_matmul<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let b = t.param(0, "b").unwrap();
    let c = t.matmul(a, b).unwrap();
    weighted_sum(t, c, 11)
}

fn case_matmul_nt<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let b = t.param(0, "b").unwrap();
    let c = t.matmul_nt(a, b).unwrap();
    weighted_sum(t, c, 12)
}

fn case_add_mul_scale<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let b = t.param(0, "b").unwrap();
    let s = t.add(a, b).unwrap();
    let m = t.mul(s, a).unwrap();
    let sc = t.scale(m, E::fp(1.7));
    weighted_sum(t, sc, 13)
}

fn case_add_bias<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let b = t.param(0, "bias").unwrap();
    let c = t.add_bias(a, b).unwrap();
    weighted_sum(t, c, 14)
}

fn case_activations<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let g = t.gelu(a);
    let th = t.tanh(g);
    let e = t.exp(th);
    weighted_sum(t, e, 15)
}

fn case_softmax<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let s = t.softmax_lastdim(a);
    weighted_sum(t, s, 16)
}

fn case_layernorm<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let g = t.param(0, "g").unwrap();
    let b = t.param(0, "b").unwrap();
    let y = t.layernorm_lastdim(a, g, b, E::fp(1e-5)).unwrap();
    weighted_sum(t, y, 17)
}

fn case_embedding<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let table = t.param(0, "table").unwrap();
    let e = t.embedding(table, &[2, 5, 2, 0]).unwrap();
    weighted_sum(t, e, 18)
}

fn case_ce_mean<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let l = t.param(0, "logits").unwrap();
    t.cross_entropy(l, &[1, 3, 0, 5], &[true, true, false, true], Reduction::Mean)
        .unwrap()
}

fn case_ce_sum<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let l = t.param(0, "logits").unwrap();
    t.cross_entropy(l, &[1, 3, 0, 5], &[true, true, false, true], Reduction::Sum)
        .unwrap()
}

fn case_plumbing<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let b = t.param(0, "b").unwrap();
    let c = t.concat_rows(a, b).unwrap();
    let s = t.slice_rows(c, 1, 3).unwrap();
    let sc = t.slice_cols(s, 1, 2).unwrap();
    let r = t.reshape(sc, &[2, 3]).unwrap();
    let tr = t.transpose(r);
    weighted_sum(t, tr, 19)
}

fn case_norm_mean<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let n = t.l2_normalize_rows(a);
    let m = t.mean_rows(n);
    weighted_sum(t, m, 20)
}

fn case_mul_scalar<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let s = t.param(0, "s").unwrap();
    let e = t.exp(s);
    let m = t.mul_scalar(a, e).unwrap();
    weighted_sum(t, m, 22)
}

fn case_mse<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let p = t.param(0, "pred").unwrap();
    let target = init::normal(&mut rng::rng(99), &[4, 3], 1.0);
    t.mse_masked(p, &target, &[true, false, true, false]).unwrap()
}

fn case_dropout<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let a = t.param(0, "a").unwrap();
    let d = t.dropout(a, 0.4, 7).unwrap();
    weighted_sum(t, d, 21)
}

fn lm_cfg() -> LmConfig {
    LmConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        d_ff: 16,
        context_len: 12,
        vocab_size: 11,
        dropout: 0.0,
    }
}

fn transformer_store<E: Element>() -> ParamStore<E> {
    let lm = DecoderLM::<E>::new(lm_cfg(), 77).unwrap();
    let mut store = lm.params.clone();
    // Zero-init head would zero most upstream gradients; replace it.
    let mut r = rng::rng(5);
    *store.get_mut("head").unwrap() = init::normal::<E>(&mut r, &[8, 11], 0.4).with_requires_grad();
    store
}

fn case_transformer<E: Element>(t: &mut Tape<'_, E>) -> Var {
    let cfg = lm_cfg();
    let vars = LmVars::register(t, 0, &cfg).unwrap();
    let tokens = [4u32, 9, 2, 7, 1, 6];
    let targets = [9u32, 2, 7, 1, 6, 10];
    let mask = [true, true, false, true, true, true];
    let logits = forward_tokens_var(t, &vars, &cfg, None, &tokens, 0.0, 0).unwrap();
    t.cross_entropy(logits, &targets, &mask, Reduction::Mean)
        .unwrap()
}

fn check_all<E: Tol>() {
    check_case!(E, "matmul", rand_store(1, &[("a", &[3, 4]), ("b", &[4, 2])]), case_matmul);
    check_case!(E, "matmul_nt", rand_store(2, &[("a", &[3, 4]), ("b", &[5, 4])]), case_matmul_nt);
    check_case!(E, "add/mul/scale", rand_store(3, &[("a", &[2, 5]), ("b", &[2, 5])]), case_add_mul_scale);
    check_case!(E, "add_bias", rand_store(4, &[("a", &[3, 4]), ("bias", &[4])]), case_add_bias);
    check_case!(E, "gelu/tanh/exp", rand_store(5, &[("a", &[2, 6])]), case_activations);
    check_case!(E, "softmax", rand_store(6, &[("a", &[3, 5])]), case_softmax);
    check_case!(E, "layernorm", rand_store(7, &[("a", &[3, 6]), ("g", &[6]), ("b", &[6])]), case_layernorm);
    check_case!(E, "embedding", rand_store(8, &[("table", &[7, 4])]), case_embedding);
    check_case!(E, "cross_entropy/mean", rand_store(9, &[("logits", &[4, 6])]), case_ce_mean);
    check_case!(E, "cross_entropy/sum", rand_store(9, &[("logits", &[4, 6])]), case_ce_sum);
    check_case!(E, "concat/slice/reshape/transpose", rand_store(10, &[("a", &[2, 4]), ("b", &[3, 4])]), case_plumbing);
    check_case!(E, "l2norm/mean_rows", rand_store(11, &[("a", &[4, 5])]), case_norm_mean);
    check_case!(E, "mse_masked", rand_store(12, &[("pred", &[4, 3])]), case_mse);
    check_case!(E, "mul_scalar", rand_store(14, &[("a", &[3, 4]), ("s", &[1])]), case_mul_scalar);
}

#[test]
fn ops_f32() {
    check_all::<f32>();
}

#[test]
fn ops_f64() {
    check_all::<f64>();
}

/// Dropout in train mode: the mask is keyed by (seed, step, site), so the
/// finite-difference probes see the same mask.
macro_rules! check_dropout_case {
    ($E:ty) => {{
        let store: ParamStore<$E> = rand_store(13, &[("a", &[3, 4])]);
        let grads = {
            let mut tape = Tape::new(&[&store]).train_mode(42, 3);
            let loss = case_dropout(&mut tape);
            tape.backward(loss).unwrap()
        };
        let mut probe = mirror_f64(&store);
        let loss_of = |s: &ParamStore<f64>| -> f64 {
            let mut tape = Tape::new(&[s]).train_mode(42, 3);
            let loss = case_dropout(&mut tape);
            tape.value(loss).item()
        };
        let g = grads.get(0, 0).unwrap().to_vec();
        for j in 0..probe.tensor(0).numel() {
            let orig = probe.tensor(0).data()[j];
            let h = FD_STEP * orig.abs().max(1.0);
            probe.tensor_mut(0).data_mut()[j] = orig + h;
            let up = loss_of(&probe);
            probe.tensor_mut(0).data_mut()[j] = orig - h;
            let down = loss_of(&probe);
            probe.tensor_mut(0).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g[j].to_f64c();
            let denom = numeric.abs().max(a.abs()).max(1e-4);
            assert!(
                (numeric - a).abs() / denom < <$E as Tol>::REL,
                "dropout[{j}]: {a} vs {numeric}"
            );
        }
    }};
}

#[test]
fn dropout_f32() {
    check_dropout_case!(f32);
}

#[test]
fn dropout_f64() {
    check_dropout_case!(f64);
}

#[test]
fn transformer_block_f32() {
    check_case!(f32, "transformer-block", transformer_store(), case_transformer);
}

#[test]
fn transformer_block_f64() {
    check_case!(f64, "transformer-block", transformer_store(), case_transformer);
}

/// Mixed prompt+token input with prompts produced by a trainable linear map
/// and the LM frozen: gradients reach the map, the LM stays untouched.
macro_rules! check_prompt_path {
    ($E:ty) => {{
        fn build<E: Element>(
            t: &mut Tape<'_, E>,
        ) -> Var {
            let cfg = lm_cfg();
            let w = t.param(0, "w").unwrap();
            let feat = t.constant(init::normal(&mut rng::rng(31), &[1, 5], 1.0));
            let flat = t.matmul(feat, w).unwrap();
            let prompts = t.reshape(flat, &[2, 8]).unwrap();
            let vars = LmVars::register(t, 1, &cfg).unwrap();
            let tokens = [4u32, 9, 2];
            // Targets align with the full mixed sequence; prompt rows masked.
            let targets = [0u32, 0, 9, 2, 10];
            let mask = [false, false, true, true, true];
            let logits = forward_tokens_var(t, &vars, &cfg, Some(prompts), &tokens, 0.0, 0).unwrap();
            t.cross_entropy(logits, &targets, &mask, Reduction::Mean)
                .unwrap()
        }
        let proj: ParamStore<$E> = rand_store(21, &[("w", &[5, 16])]);
        let mut lm = DecoderLM::<$E>::new(lm_cfg(), 78).unwrap();
        *lm.params.get_mut("head").unwrap() = init::normal(&mut rng::rng(6), &[8, 11], 0.4);
        lm.freeze();
        let grads = {
            let mut tape = Tape::new(&[&proj, &lm.params]);
            let loss = build(&mut tape);
            tape.backward(loss).unwrap()
        };
        for i in 0..lm.params.len() {
            assert!(grads.get(1, i).is_none(), "frozen LM param got grad");
        }
        let proj64 = mirror_f64(&proj);
        let lm64_params = mirror_f64(&lm.params);
        let mut probe = proj64.clone();
        let loss_of = |s: &ParamStore<f64>| {
            let mut tape = Tape::new(&[s, &lm64_params]);
            let loss = build(&mut tape);
            tape.value(loss).item()
        };
        let g = grads.get(0, 0).unwrap().to_vec();
        for j in (0..probe.tensor(0).numel()).step_by(7) {
            let orig = probe.tensor(0).data()[j];
            let h = FD_STEP * orig.abs().max(1.0);
            probe.tensor_mut(0).data_mut()[j] = orig + h;
            let up = loss_of(&probe);
            probe.tensor_mut(0).data_mut()[j] = orig - h;
            let down = loss_of(&probe);
            probe.tensor_mut(0).data_mut()[j] = orig;
            let numeric = (up - down) / (2.0 * h);
            let a = g[j].to_f64c();
            let denom = numeric.abs().max(a.abs()).max(1e-4);
            assert!(
                (numeric - a).abs() / denom < <$E as Tol>::REL,
                "prompt-path w[{j}]: {a} vs {numeric}"
            );
        }
    }};
}

#[test]
fn frozen_lm_prompt_path_f32() {
    check_prompt_path!(f32);
}

#[test]
fn frozen_lm_prompt_path_f64() {
    check_prompt_path!(f64);
}

#[test]
fn simple_square_derivative() {
    // d(x^2)/dx at x = 3 is 6.
    let mut s = ParamStore::<f32>::new();
    s.insert("x", Tensor::scalar(3.0));
    let mut tape = Tape::new(&[&s]);
    let x = tape.param(0, "x").unwrap();
    let y = tape.mul(x, x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert_eq!(grads.get(0, 0).unwrap(), &[6.0]);
}

#[test]
fn non_scalar_loss_is_usage_error() {
    let mut s = ParamStore::<f32>::new();
    s.insert("x", Tensor::filled(&[2], 1.0));
    let mut tape = Tape::new(&[&s]);
    let x = tape.param(0, "x").unwrap();
    let y = tape.mul(x, x).unwrap();
    assert!(tape.backward(y).is_err());
}

#[test]
fn hand_worked_matmul() {
    // [[1,2],[3,4]]·[[1],[1]] = [[3],[7]]; identity·identity = identity.
    let mut s = ParamStore::<f32>::new();
    s.insert("a", Tensor::from_vec(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    s.insert("ones", Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap());
    s.insert("eye", Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
    let mut tape = Tape::new(&[&s]);
    let a = tape.param(0, "a").unwrap();
    let ones = tape.param(0, "ones").unwrap();
    let eye = tape.param(0, "eye").unwrap();
    let prod = tape.matmul(a, ones).unwrap();
    assert_eq!(tape.value(prod).data(), &[3.0, 7.0]);
    let ii = tape.matmul(eye, eye).unwrap();
    assert_eq!(tape.value(ii).data(), &[1.0, 0.0, 0.0, 1.0]);

    // gradient of sum(A·B) w.r.t. A is ones·Bᵀ.
    let loss = tape.sum_all(prod);
    let grads = tape.backward(loss).unwrap();
    let ga = grads.get(0, 0).unwrap();
    assert_eq!(ga, &[1.0, 1.0, 1.0, 1.0]);
}
