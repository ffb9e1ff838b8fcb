//! Forward pass on the tape.
//!
//! Every public entry point records onto a [`Tape`], so evaluation and
//! training share one implementation of the model math.

use super::{LayerParams, ModelConfig, ModelParams, Params};
use crate::error::{Error, Result};
use crate::numerics::{check_gradients, GradCheckConfig, GradCheckReport, Rng, Tape, Tensor, Var};
use crate::preprocess::ModelInput;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub probability: f64,
    /// Mean-pooled patient representation, length `d_model`.
    pub embedding: Vec<f64>,
}

fn bind<'a>(tape: &mut Tape<'a>, params: &'a ModelParams) -> Params<Var> {
    let vars = params.leaves().into_iter().map(|t| tape.param(t)).collect();
    params.with_leaves(vars).expect("leaf count is structural")
}

/// Inverted dropout; identity in eval mode or at rate 0.
fn dropout(tape: &mut Tape<'_>, x: Var, rate: f64, rng: Option<&mut Rng>) -> Result<Var> {
    let Some(rng) = rng else { return Ok(x) };
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = 1.0 / (1.0 - rate);
    let shape = tape.value(x).shape().to_vec();
    let n = tape.value(x).len();
    let mask = (0..n)
        .map(|_| if rng.uniform() < rate { 0.0 } else { keep })
        .collect();
    tape.mul_const(x, Tensor::new(shape, mask)?)
}

fn count_feature(n: u64, cfg: &ModelConfig) -> f64 {
    if cfg.log_counts {
        (n as f64).ln_1p()
    } else {
        n as f64
    }
}

/// Returns `(Z, E_proj)`, both `K × d_model`.
fn tokens_on_tape(
    tape: &mut Tape<'_>,
    p: &Params<Var>,
    input: &ModelInput,
    cfg: &ModelConfig,
) -> Result<(Var, Var)> {
    let k = input.tokens.len();
    if k == 0 || k > cfg.k_star {
        return Err(Error::Contract(format!(
            "patient {} has {k} tokens, expected 1..={}",
            input.patient_id, cfg.k_star
        )));
    }
    let d_in = input.tokens[0].vector.len();
    let mut e = Vec::with_capacity(k * d_in);
    for t in &input.tokens {
        if t.vector.len() != d_in {
            return Err(Error::Dimension {
                op: "assemble_tokens",
                left: vec![d_in],
                right: vec![t.vector.len()],
            });
        }
        e.extend_from_slice(&t.vector);
    }
    let e = tape.constant(Tensor::matrix(k, d_in, e)?);
    let e_proj = tape.linear(e, p.proj_weight, Some(p.proj_bias))?;

    let counts: Vec<f64> = input.tokens.iter().map(|t| count_feature(t.count, cfg)).collect();
    let freq = freq_on_tape(tape, p, Tensor::matrix(k, 1, counts)?)?;
    let z = tape.add(e_proj, freq)?;
    Ok((z, e_proj))
}

fn freq_on_tape(tape: &mut Tape<'_>, p: &Params<Var>, counts: Tensor) -> Result<Var> {
    let n = tape.constant(counts);
    let h = tape.linear(n, p.freq_w1, Some(p.freq_b1))?;
    let h = tape.silu(h);
    tape.linear(h, p.freq_w2, Some(p.freq_b2))
}

fn attention_on_tape(
    tape: &mut Tape<'_>,
    lp: &LayerParams<Var>,
    x: Var,
    e_proj: Var,
    layer: usize,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let value_input = if cfg.value_source.from_projection(layer) { e_proj } else { x };
    let q = tape.matmul_nt(x, lp.w_q)?;
    let k = tape.matmul_nt(x, lp.w_k)?;
    let v = tape.matmul_nt(value_input, lp.w_v)?;
    let dh = cfg.d_head();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.n_heads);
    for h in 0..cfg.n_heads {
        let (qh, kh, vh) = if cfg.n_heads == 1 {
            (q, k, v)
        } else {
            (
                tape.slice_cols(q, h * dh, dh)?,
                tape.slice_cols(k, h * dh, dh)?,
                tape.slice_cols(v, h * dh, dh)?,
            )
        };
        let scores = tape.matmul_nt(qh, kh)?;
        let scores = tape.scale(scores, scale);
        let weights = tape.softmax_rows(scores);
        heads.push(tape.matmul(weights, vh)?);
    }
    let concat = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads)? };
    let out = tape.matmul_nt(concat, lp.w_out)?;
    let out = dropout(tape, out, cfg.dropout, rng)?;
    let res = tape.add(x, out)?;
    tape.layer_norm_rows(res, lp.norm1_gain, lp.norm1_bias, cfg.layer_norm_eps)
}

fn ffn_on_tape(
    tape: &mut Tape<'_>,
    lp: &LayerParams<Var>,
    x: Var,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<Var> {
    let h = tape.linear(x, lp.ffn_w1, Some(lp.ffn_b1))?;
    let h = tape.silu(h);
    let f = tape.linear(h, lp.ffn_w2, Some(lp.ffn_b2))?;
    let f = dropout(tape, f, cfg.dropout, rng)?;
    let res = tape.add(x, f)?;
    tape.layer_norm_rows(res, lp.norm2_gain, lp.norm2_bias, cfg.layer_norm_eps)
}

/// Returns `(probability 1×1, pooled embedding 1×d_model)`.
fn encode_on_tape(
    tape: &mut Tape<'_>,
    p: &Params<Var>,
    input: &ModelInput,
    cfg: &ModelConfig,
    mut rng: Option<&mut Rng>,
) -> Result<(Var, Var)> {
    let (mut x, e_proj) = tokens_on_tape(tape, p, input, cfg)?;
    for (l, lp) in p.layers.iter().enumerate() {
        x = attention_on_tape(tape, lp, x, e_proj, l, cfg, rng.as_deref_mut())?;
        x = ffn_on_tape(tape, lp, x, cfg, rng.as_deref_mut())?;
    }
    let pooled = tape.mean_rows(x);
    let logit = tape.linear(pooled, p.head_weight, Some(p.head_bias))?;
    Ok((tape.sigmoid(logit), pooled))
}

fn check_layer(params: &ModelParams, layer: usize) -> Result<()> {
    if layer >= params.layers.len() {
        return Err(Error::Contract(format!(
            "layer {layer} out of range for a {}-layer model",
            params.layers.len()
        )));
    }
    Ok(())
}

/// `W_proj · e + b_proj`.
pub fn project_embedding(e: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let e = tape.constant(Tensor::matrix(1, e.len(), e.to_vec())?);
    let y = tape.linear(e, p.proj_weight, Some(p.proj_bias))?;
    Ok(tape.value(y).data().to_vec())
}

/// `W2 · act(n · W1 + b1) + b2`.
pub fn freq_encode(n: u64, params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let y = freq_on_tape(&mut tape, &p, Tensor::matrix(1, 1, vec![count_feature(n, cfg)])?)?;
    Ok(tape.value(y).data().to_vec())
}

/// Token matrix `Z` and the projected embeddings `E_proj`.
pub fn assemble_tokens(input: &ModelInput, params: &ModelParams, cfg: &ModelConfig) -> Result<(Tensor, Tensor)> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let (z, e) = tokens_on_tape(&mut tape, &p, input, cfg)?;
    Ok((tape.value(z).clone(), tape.value(e).clone()))
}

/// One attention sub-block of `layer` (0-based), including residual,
/// dropout and layer norm. `rng` is the dropout stream; `None` means eval.
pub fn attention_block(
    x: &Tensor,
    e_proj: &Tensor,
    params: &ModelParams,
    layer: usize,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<Tensor> {
    check_layer(params, layer)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let xv = tape.constant(x.clone());
    let ev = tape.constant(e_proj.clone());
    let y = attention_on_tape(&mut tape, &p.layers[layer], xv, ev, layer, cfg, rng)?;
    Ok(tape.value(y).clone())
}

/// One position-wise feed-forward sub-block of `layer` (0-based).
pub fn ffn_block(
    x: &Tensor,
    params: &ModelParams,
    layer: usize,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<Tensor> {
    check_layer(params, layer)?;
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let xv = tape.constant(x.clone());
    let y = ffn_on_tape(&mut tape, &p.layers[layer], xv, cfg, rng)?;
    Ok(tape.value(y).clone())
}

/// Full forward pass. `rng` is the dropout stream; `None` means eval mode.
pub fn forward(
    input: &ModelInput,
    params: &ModelParams,
    cfg: &ModelConfig,
    rng: Option<&mut Rng>,
) -> Result<ForwardOutput> {
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let (prob, pooled) = encode_on_tape(&mut tape, &p, input, cfg, rng)?;
    Ok(ForwardOutput {
        probability: tape.value(prob).data()[0],
        embedding: tape.value(pooled).data().to_vec(),
    })
}

/// Eval-mode outputs for many inputs.
pub fn predict(inputs: &[ModelInput], params: &ModelParams, cfg: &ModelConfig) -> Result<Vec<ForwardOutput>> {
    inputs.iter().map(|x| forward(x, params, cfg, None)).collect()
}

/// Mean BCE over `batch` of `(input, target)` pairs and its gradient with
/// respect to every parameter.
pub fn batch_loss(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[(&ModelInput, f64)],
    mut rng: Option<&mut Rng>,
) -> Result<(f64, ModelParams)> {
    if batch.is_empty() {
        return Err(Error::Contract("empty minibatch".into()));
    }
    let mut tape = Tape::new();
    let p = bind(&mut tape, params);
    let mut losses = Vec::with_capacity(batch.len());
    for (input, target) in batch {
        let (prob, _) = encode_on_tape(&mut tape, &p, input, cfg, rng.as_deref_mut())?;
        losses.push(tape.bce(prob, *target)?);
    }
    let total = tape.add_n(&losses)?;
    let loss = tape.scale(total, 1.0 / batch.len() as f64);
    let value = tape.value(loss).data()[0];
    let mut grads = tape.backward(loss)?;
    let g = p.map(|_, v| grads.take(*v));
    let g = g.try_map(|name, t| {
        t.clone()
            .ok_or_else(|| Error::Contract(format!("no gradient reached {name}")))
    })?;
    Ok((value, g))
}

/// Compares analytic gradients of the eval-mode batch loss with central
/// finite differences.
pub fn grad_check(
    params: &ModelParams,
    cfg: &ModelConfig,
    batch: &[(ModelInput, f64)],
    gc: GradCheckConfig,
) -> Result<GradCheckReport> {
    let refs: Vec<(&ModelInput, f64)> = batch.iter().map(|(x, y)| (x, *y)).collect();
    let (_, analytic) = batch_loss(params, cfg, &refs, None)?;
    let named: Vec<(String, Tensor)> = params
        .names()
        .into_iter()
        .zip(params.leaves().into_iter().cloned())
        .collect();
    let analytic: Vec<Tensor> = analytic.leaves().into_iter().cloned().collect();
    let loss = |leaves: &[Tensor]| {
        let p = params.with_leaves(leaves.to_vec()).expect("same structure");
        batch_loss(&p, cfg, &refs, None).expect("loss evaluates at perturbed point").0
    };
    Ok(check_gradients(&named, loss, &analytic, gc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{ConceptId, Label};
    use crate::model::{init_params, ValueSource};
    use crate::numerics::sigmoid;
    use crate::preprocess::Token;
    use approx::assert_abs_diff_eq;

    fn cfg(d_model: usize, n_heads: usize, n_layers: usize) -> ModelConfig {
        ModelConfig {
            d_input: 3,
            d_model,
            n_heads,
            n_layers,
            d_ff: 2 * d_model,
            dropout: 0.1,
            k_star: 8,
            seed: 21,
            ..ModelConfig::default()
        }
    }

    fn random_input(rng: &mut Rng, k: usize, d_in: usize) -> ModelInput {
        ModelInput {
            patient_id: "p".into(),
            tokens: (0..k)
                .map(|i| Token {
                    concept: ConceptId::new(format!("C{i}")).unwrap(),
                    count: 1 + rng.below(4) as u64,
                    vector: (0..d_in).map(|_| rng.normal()).collect(),
                })
                .collect(),
            label: Label::gold(true),
        }
    }

    /// Params drawn from N(0, 0.5²) so biases and gains are nontrivial.
    fn jittered(c: &ModelConfig, seed: u64) -> ModelParams {
        let mut rng = Rng::seed_from_u64(seed);
        let mut p = init_params(c).unwrap();
        for leaf in p.leaves_mut() {
            leaf.data_mut().iter_mut().for_each(|v| *v = 0.5 * rng.normal());
        }
        p
    }

    fn mat_vec(w: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..w.rows())
            .map(|i| w.row(i).iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn silu(x: f64) -> f64 {
        x / (1.0 + (-x).exp())
    }

    fn ln(x: &[f64], g: &[f64], b: &[f64], eps: f64) -> Vec<f64> {
        let n = x.len() as f64;
        let m = x.iter().sum::<f64>() / n;
        let v = x.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / n;
        x.iter()
            .zip(g.iter().zip(b))
            .map(|(a, (g, b))| g * (a - m) / (v + eps).sqrt() + b)
            .collect()
    }

    fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().zip(b).map(|(x, y)| x + y).collect()
    }

    /// Scalar-loop reimplementation of the whole encoder in eval mode.
    fn oracle(input: &ModelInput, p: &ModelParams, c: &ModelConfig) -> (f64, Vec<f64>) {
        let k = input.tokens.len();
        let d = c.d_model;
        let dh = c.d_head();
        let e_proj: Vec<Vec<f64>> = input
            .tokens
            .iter()
            .map(|t| add(&mat_vec(&p.proj_weight, &t.vector), p.proj_bias.data()))
            .collect();
        let mut x: Vec<Vec<f64>> = input
            .tokens
            .iter()
            .zip(&e_proj)
            .map(|(t, ep)| {
                let n = t.count as f64;
                let h: Vec<f64> = (0..d / 2)
                    .map(|j| silu(n * p.freq_w1.at(j, 0) + p.freq_b1.data()[j]))
                    .collect();
                add(ep, &add(&mat_vec(&p.freq_w2, &h), p.freq_b2.data()))
            })
            .collect();
        for (l, lp) in p.layers.iter().enumerate() {
            let vin = if c.value_source.from_projection(l) { e_proj.clone() } else { x.clone() };
            let q: Vec<Vec<f64>> = x.iter().map(|r| mat_vec(&lp.w_q, r)).collect();
            let kk: Vec<Vec<f64>> = x.iter().map(|r| mat_vec(&lp.w_k, r)).collect();
            let v: Vec<Vec<f64>> = vin.iter().map(|r| mat_vec(&lp.w_v, r)).collect();
            let mut concat = vec![vec![0.0; d]; k];
            for h in 0..c.n_heads {
                let cols = h * dh..(h + 1) * dh;
                for i in 0..k {
                    let s: Vec<f64> = (0..k)
                        .map(|j| {
                            cols.clone().map(|a| q[i][a] * kk[j][a]).sum::<f64>() / (dh as f64).sqrt()
                        })
                        .collect();
                    let m = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = s.iter().map(|a| (a - m).exp()).sum();
                    for j in 0..k {
                        let w = (s[j] - m).exp() / z;
                        for a in cols.clone() {
                            concat[i][a] += w * v[j][a];
                        }
                    }
                }
            }
            x = (0..k)
                .map(|i| {
                    let o = mat_vec(&lp.w_out, &concat[i]);
                    ln(&add(&x[i], &o), lp.norm1_gain.data(), lp.norm1_bias.data(), c.layer_norm_eps)
                })
                .collect();
            x = x
                .iter()
                .map(|r| {
                    let h: Vec<f64> = add(&mat_vec(&lp.ffn_w1, r), lp.ffn_b1.data()).into_iter().map(silu).collect();
                    let f = add(&mat_vec(&lp.ffn_w2, &h), lp.ffn_b2.data());
                    ln(&add(r, &f), lp.norm2_gain.data(), lp.norm2_bias.data(), c.layer_norm_eps)
                })
                .collect();
        }
        let pooled: Vec<f64> = (0..d).map(|a| x.iter().map(|r| r[a]).sum::<f64>() / k as f64).collect();
        let logit = mat_vec(&p.head_weight, &pooled)[0] + p.head_bias.data()[0];
        (sigmoid(logit), pooled)
    }

    #[test]
    fn forward_matches_scalar_oracle() {
        let mut rng = Rng::seed_from_u64(2);
        for vs in [ValueSource::FirstLayer, ValueSource::AllLayers, ValueSource::None] {
            for (d, h, l) in [(4, 2, 1), (8, 2, 2), (6, 3, 2)] {
                let c = ModelConfig { value_source: vs, ..cfg(d, h, l) };
                let p = jittered(&c, 9);
                let input = random_input(&mut rng, 5, 3);
                let out = forward(&input, &p, &c, None).unwrap();
                let (prob, pooled) = oracle(&input, &p, &c);
                assert_abs_diff_eq!(out.probability, prob, epsilon = 1e-12);
                for (a, b) in out.embedding.iter().zip(&pooled) {
                    assert_abs_diff_eq!(a, b, epsilon = 1e-12);
                }
            }
        }
    }

    #[test]
    fn hand_unrolled_two_token_attention() {
        // K=2, d_model=4, H=2, identity Q/K/V/out, unit gains.
        let c = ModelConfig {
            value_source: ValueSource::None,
            dropout: 0.0,
            ..cfg(4, 2, 1)
        };
        let mut p = init_params(&c).unwrap();
        let eye = Tensor::identity(4);
        let lp = &mut p.layers[0];
        lp.w_q = eye.clone();
        lp.w_k = eye.clone();
        lp.w_v = eye.clone();
        lp.w_out = eye;
        let x = Tensor::from_rows(&[vec![1.0, 0.0, 2.0, 0.0], vec![0.0, 1.0, 0.0, 1.0]]).unwrap();
        let got = attention_block(&x, &x, &p, 0, &c, None).unwrap();

        let s = 1.0 / 2f64.sqrt();
        // Head 0 uses columns 0..2: q0·k0 = 1, q0·k1 = 0, q1·k0 = 0, q1·k1 = 1.
        // Head 1 uses columns 2..4: q0·k0 = 4, q0·k1 = 0, q1·k0 = 0, q1·k1 = 1.
        let soft = |a: f64, b: f64| {
            let (ea, eb) = ((a * s).exp(), (b * s).exp());
            (ea / (ea + eb), eb / (ea + eb))
        };
        let (w00, w01) = soft(1.0, 0.0);
        let (w10, w11) = soft(0.0, 1.0);
        let (u00, u01) = soft(4.0, 0.0);
        let (u10, u11) = soft(0.0, 1.0);
        let attn = [
            [w00 * 1.0 + w01 * 0.0, w00 * 0.0 + w01 * 1.0, u00 * 2.0 + u01 * 0.0, u00 * 0.0 + u01 * 1.0],
            [w10 * 1.0 + w11 * 0.0, w10 * 0.0 + w11 * 1.0, u10 * 2.0 + u11 * 0.0, u10 * 0.0 + u11 * 1.0],
        ];
        for i in 0..2 {
            let res: Vec<f64> = (0..4).map(|j| x.at(i, j) + attn[i][j]).collect();
            let expected = ln(&res, &[1.0; 4], &[0.0; 4], c.layer_norm_eps);
            for j in 0..4 {
                assert_abs_diff_eq!(got.at(i, j), expected[j], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn single_token_attention_weight_is_one() {
        let c = ModelConfig { dropout: 0.0, ..cfg(4, 2, 1) };
        let p = jittered(&c, 1);
        let z = Tensor::from_rows(&[vec![0.3, -1.0, 0.5, 2.0]]).unwrap();
        let e = Tensor::from_rows(&[vec![1.0, 0.0, -0.5, 0.25]]).unwrap();
        let got = attention_block(&z, &e, &p, 0, &c, None).unwrap();
        let lp = &p.layers[0];
        let v = mat_vec(&lp.w_v, e.row(0));
        let o = mat_vec(&lp.w_out, &v);
        let expected = ln(&add(z.row(0), &o), lp.norm1_gain.data(), lp.norm1_bias.data(), c.layer_norm_eps);
        for j in 0..4 {
            assert_abs_diff_eq!(got.at(0, j), expected[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn identical_tokens_give_identical_rows() {
        let c = cfg(8, 2, 2);
        let p = jittered(&c, 4);
        let row = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6, 0.7, 0.8];
        let x = Tensor::from_rows(&[row.clone(), row.clone(), row]).unwrap();
        let y = attention_block(&x, &x, &p, 0, &c, None).unwrap();
        for i in 1..3 {
            assert_eq!(y.row(i), y.row(0));
        }
    }

    #[test]
    fn projection_and_frequency_pieces() {
        let c = ModelConfig { d_input: 4, ..cfg(4, 1, 1) };
        let mut p = init_params(&c).unwrap();
        p.proj_weight = Tensor::identity(4);
        assert_eq!(project_embedding(&[1.0, 2.0, 3.0, 4.0], &p).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        p.proj_weight = Tensor::zeros(&[4, 4]);
        p.proj_bias = Tensor::vector(vec![0.5, -1.0, 0.0, 2.0]);
        assert_eq!(project_embedding(&[9.0, 9.0, 9.0, 9.0], &p).unwrap(), vec![0.5, -1.0, 0.0, 2.0]);
        assert!(project_embedding(&[1.0, 2.0], &p).is_err());

        let mut zero = p.map(|_, t| Tensor::zeros(t.shape()));
        zero.freq_b2 = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(freq_encode(7, &zero, &c).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
        let r = jittered(&c, 5);
        let (f1, f2) = (freq_encode(1, &r, &c).unwrap(), freq_encode(2, &r, &c).unwrap());
        assert_eq!(f1.len(), 4);
        assert_ne!(f1, f2);
    }

    #[test]
    fn tokens_sum_projection_and_frequency() {
        let c = cfg(8, 2, 1);
        let p = jittered(&c, 6);
        let mut rng = Rng::seed_from_u64(6);
        let input = random_input(&mut rng, 4, 3);
        let (z, e) = assemble_tokens(&input, &p, &c).unwrap();
        assert_eq!(z.shape(), &[4, 8]);
        for (i, t) in input.tokens.iter().enumerate() {
            let ep = project_embedding(&t.vector, &p).unwrap();
            let f = freq_encode(t.count, &p, &c).unwrap();
            for j in 0..8 {
                assert_abs_diff_eq!(e.at(i, j), ep[j], epsilon = 1e-14);
                assert_abs_diff_eq!(z.at(i, j), ep[j] + f[j], epsilon = 1e-14);
            }
        }
        let mut zf = p.clone();
        for t in [&mut zf.freq_w1, &mut zf.freq_b1, &mut zf.freq_w2, &mut zf.freq_b2] {
            *t = Tensor::zeros(t.shape());
        }
        let (z0, e0) = assemble_tokens(&input, &zf, &c).unwrap();
        assert_eq!(z0, e0);
    }

    #[test]
    fn ffn_block_zero_params_and_equivariance() {
        let c = ModelConfig { dropout: 0.0, ..cfg(4, 1, 1) };
        let mut p = init_params(&c).unwrap();
        let lp = &mut p.layers[0];
        for t in [&mut lp.ffn_w1, &mut lp.ffn_b1, &mut lp.ffn_w2, &mut lp.ffn_b2] {
            *t = Tensor::zeros(t.shape());
        }
        let x = Tensor::from_rows(&[vec![1.0, 2.0, 3.0, 5.0], vec![-1.0, 0.0, 4.0, 0.5]]).unwrap();
        let y = ffn_block(&x, &p, 0, &c, None).unwrap();
        for i in 0..2 {
            let expected = ln(x.row(i), &[1.0; 4], &[0.0; 4], c.layer_norm_eps);
            for j in 0..4 {
                assert_abs_diff_eq!(y.at(i, j), expected[j], epsilon = 1e-12);
            }
        }
        let r = jittered(&c, 8);
        let swapped = Tensor::from_rows(&[x.row(1).to_vec(), x.row(0).to_vec()]).unwrap();
        let (a, b) = (ffn_block(&x, &r, 0, &c, None).unwrap(), ffn_block(&swapped, &r, 0, &c, None).unwrap());
        assert_eq!(a.row(0), b.row(1));
        assert_eq!(a.row(1), b.row(0));
    }

    #[test]
    fn zero_head_gives_half() {
        let c = cfg(8, 2, 2);
        let mut p = jittered(&c, 3);
        p.head_weight = Tensor::zeros(&[1, 8]);
        p.head_bias = Tensor::zeros(&[1]);
        let mut rng = Rng::seed_from_u64(1);
        for k in 1..=8 {
            let out = forward(&random_input(&mut rng, k, 3), &p, &c, None).unwrap();
            assert_eq!(out.probability, 0.5);
        }
    }

    #[test]
    fn zero_dropout_training_equals_eval() {
        let c = ModelConfig { dropout: 0.0, ..cfg(8, 2, 2) };
        let p = jittered(&c, 3);
        let mut rng = Rng::seed_from_u64(10);
        let input = random_input(&mut rng, 6, 3);
        let eval = forward(&input, &p, &c, None).unwrap();
        let train = forward(&input, &p, &c, Some(&mut rng)).unwrap();
        assert_eq!(eval, train);
        let c = cfg(8, 2, 2);
        let noisy = forward(&input, &p, &c, Some(&mut rng)).unwrap();
        assert_ne!(noisy, forward(&input, &p, &c, None).unwrap());
    }

    #[test]
    fn token_limits_enforced() {
        let c = cfg(4, 1, 1);
        let p = init_params(&c).unwrap();
        let mut rng = Rng::seed_from_u64(0);
        assert!(forward(&random_input(&mut rng, 0, 3), &p, &c, None).is_err());
        assert!(forward(&random_input(&mut rng, 9, 3), &p, &c, None).is_err());
    }

    #[test]
    fn two_patient_grad_check() {
        let c = cfg(8, 2, 2);
        let p = jittered(&c, 12);
        let mut rng = Rng::seed_from_u64(12);
        let batch = vec![(random_input(&mut rng, 3, 3), 1.0), (random_input(&mut rng, 5, 3), 0.2)];
        let report = grad_check(&p, &c, &batch, GradCheckConfig::default()).unwrap();
        assert!(report.passed(), "{:?}", report.failures().collect::<Vec<_>>());
    }
}
