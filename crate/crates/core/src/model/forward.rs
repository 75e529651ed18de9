use super::ops::{self, dot, matmul_acc};
use super::{sc, ModelParams, Scalar};
use crate::error::{Error, Result};

/// Hidden states and logits from one forward pass.
///
/// `hidden[0]` is the embedding output (token plus position); `hidden[l]`
/// for `l >= 1` is the residual stream after block `l`.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace<F> {
    pub len: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub hidden: Vec<Vec<F>>,
    pub logits: Vec<F>,
}

impl<F: Scalar> ForwardTrace<F> {
    pub fn layer_count(&self) -> usize {
        self.hidden.len()
    }

    pub fn hidden_at(&self, layer: usize, pos: usize) -> &[F] {
        &self.hidden[layer][pos * self.d_model..(pos + 1) * self.d_model]
    }

    pub fn logits_at(&self, pos: usize) -> &[F] {
        &self.logits[pos * self.vocab_size..(pos + 1) * self.vocab_size]
    }

    /// `log softmax(logits_pos)[token]`
    pub fn log_prob(&self, pos: usize, token: u32) -> F {
        log_softmax_at(self.logits_at(pos), token as usize)
    }
}

pub(crate) fn log_softmax_at<F: Scalar>(row: &[F], idx: usize) -> F {
    let max = row.iter().cloned().fold(F::neg_infinity(), F::max);
    let sum: F = row.iter().map(|&z| (z - max).exp()).sum();
    row[idx] - max - sum.ln()
}

pub(crate) struct LayerCache<F> {
    pub x_in: Vec<F>,
    pub inv_rms1: Vec<F>,
    pub n1: Vec<F>,
    pub q: Vec<F>,
    pub k: Vec<F>,
    pub v: Vec<F>,
    /// heads × len × len, only `j <= i` entries are meaningful
    pub probs: Vec<F>,
    pub attn: Vec<F>,
    pub x_mid: Vec<F>,
    pub inv_rms2: Vec<F>,
    pub n2: Vec<F>,
    pub pre_act: Vec<F>,
    pub act: Vec<F>,
}

pub(crate) struct Activations<F> {
    pub len: usize,
    pub layers: Vec<LayerCache<F>>,
    pub x_final: Vec<F>,
    pub inv_rms_f: Vec<F>,
    pub nf: Vec<F>,
    pub logits: Vec<F>,
}

impl<F: Scalar> Activations<F> {
    pub fn into_trace(self, d_model: usize, vocab_size: usize) -> ForwardTrace<F> {
        let mut hidden: Vec<Vec<F>> = self.layers.into_iter().map(|l| l.x_in).collect();
        hidden.push(self.x_final);
        ForwardTrace {
            len: self.len,
            d_model,
            vocab_size,
            hidden,
            logits: self.logits,
        }
    }
}

pub(crate) fn check_input<F: Scalar>(params: &ModelParams<F>, tokens: &[u32]) -> Result<()> {
    let cfg = params.config();
    if tokens.len() > cfg.context_len {
        return Err(Error::Overlong {
            len: tokens.len(),
            context_len: cfg.context_len,
        });
    }
    if let Some(&id) = tokens.iter().find(|&&t| t as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange {
            id,
            vocab_size: cfg.vocab_size,
        });
    }
    Ok(())
}

/// Runs the network, keeping every intermediate needed by the backward pass.
pub(crate) fn run<F: Scalar>(params: &ModelParams<F>, tokens: &[u32]) -> Activations<F> {
    let cfg = params.config();
    let lay = params.layout();
    let (t, d, v, f) = (tokens.len(), cfg.d_model, cfg.vocab_size, cfg.ff_dim());
    let (nh, hd) = (cfg.n_heads, cfg.head_dim());
    let scale: F = sc(1.0 / (hd as f64).sqrt());

    let mut x = vec![F::zero(); t * d];
    let emb = params.slice(lay.tok_embed, v * d);
    let pos = params.slice(lay.pos_embed, cfg.context_len * d);
    for (i, &tok) in tokens.iter().enumerate() {
        let row = &mut x[i * d..(i + 1) * d];
        let e = &emb[tok as usize * d..(tok as usize + 1) * d];
        let p = &pos[i * d..(i + 1) * d];
        for ((r, &a), &b) in row.iter_mut().zip(e).zip(p) {
            *r = a + b;
        }
    }

    let mut layers = Vec::with_capacity(cfg.n_layers);
    for b in &lay.blocks {
        let mut n1 = vec![F::zero(); t * d];
        let inv_rms1 = ops::rmsnorm(&x, params.slice(b.attn_norm, d), &mut n1, d);
        let mut q = vec![F::zero(); t * d];
        let mut k = vec![F::zero(); t * d];
        let mut vv = vec![F::zero(); t * d];
        matmul_acc(&n1, params.slice(b.wq, d * d), &mut q, t, d, d);
        matmul_acc(&n1, params.slice(b.wk, d * d), &mut k, t, d, d);
        matmul_acc(&n1, params.slice(b.wv, d * d), &mut vv, t, d, d);

        let mut probs = vec![F::zero(); nh * t * t];
        let mut attn = vec![F::zero(); t * d];
        for h in 0..nh {
            let hs = h * hd..(h + 1) * hd;
            for i in 0..t {
                let prow = &mut probs[(h * t + i) * t..(h * t + i) * t + i + 1];
                let qi = &q[i * d..][hs.clone()];
                for (j, p) in prow.iter_mut().enumerate() {
                    *p = dot(qi, &k[j * d..][hs.clone()]) * scale;
                }
                let max = prow.iter().cloned().fold(F::neg_infinity(), F::max);
                let mut sum = F::zero();
                for p in prow.iter_mut() {
                    *p = (*p - max).exp();
                    sum += *p;
                }
                let inv = F::one() / sum;
                let out = &mut attn[i * d..][hs.clone()];
                for (j, p) in prow.iter_mut().enumerate() {
                    *p *= inv;
                    ops::axpy(*p, &vv[j * d..][hs.clone()], out);
                }
            }
        }

        let mut x_mid = x.clone();
        matmul_acc(&attn, params.slice(b.wo, d * d), &mut x_mid, t, d, d);

        let mut n2 = vec![F::zero(); t * d];
        let inv_rms2 = ops::rmsnorm(&x_mid, params.slice(b.ffn_norm, d), &mut n2, d);
        let mut pre_act = vec![F::zero(); t * f];
        matmul_acc(&n2, params.slice(b.w_in, d * f), &mut pre_act, t, d, f);
        let act: Vec<F> = pre_act.iter().map(|&u| ops::gelu(u)).collect();
        let mut x_out = x_mid.clone();
        matmul_acc(&act, params.slice(b.w_out, f * d), &mut x_out, t, f, d);

        layers.push(LayerCache {
            x_in: std::mem::replace(&mut x, x_out),
            inv_rms1,
            n1,
            q,
            k,
            v: vv,
            probs,
            attn,
            x_mid,
            inv_rms2,
            n2,
            pre_act,
            act,
        });
    }

    let mut nf = vec![F::zero(); t * d];
    let inv_rms_f = ops::rmsnorm(&x, params.slice(lay.final_norm, d), &mut nf, d);
    let mut logits = vec![F::zero(); t * v];
    matmul_acc(&nf, params.slice(lay.unembed, d * v), &mut logits, t, d, v);

    Activations {
        len: t,
        layers,
        x_final: x,
        inv_rms_f,
        nf,
        logits,
    }
}

/// Runs the model over `tokens` and returns every layer's hidden states and
/// the logits at each position.
pub fn forward<F: Scalar>(params: &ModelParams<F>, tokens: &[u32]) -> Result<ForwardTrace<F>> {
    check_input(params, tokens)?;
    let cfg = params.config();
    Ok(run(params, tokens).into_trace(cfg.d_model, cfg.vocab_size))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nll {
    pub sum: f64,
    pub count: usize,
    pub per_token_mean: f64,
}

/// Negative log-likelihood of `targets` under `trace`. `targets[i]` is the
/// token expected after position `i`; `None` masks the position.
pub fn nll<F: Scalar>(trace: &ForwardTrace<F>, targets: &[Option<u32>]) -> Result<Nll> {
    if targets.len() != trace.len {
        return Err(Error::Shape(format!(
            "{} targets for {} positions",
            targets.len(),
            trace.len
        )));
    }
    let mut sum = 0.0;
    let mut count = 0;
    for (i, tgt) in targets.iter().enumerate() {
        if let Some(t) = *tgt {
            if t as usize >= trace.vocab_size {
                return Err(Error::TokenOutOfRange {
                    id: t,
                    vocab_size: trace.vocab_size,
                });
            }
            sum -= trace.log_prob(i, t).to_f64().unwrap();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::AllMasked);
    }
    Ok(Nll {
        sum,
        count,
        per_token_mean: sum / count as f64,
    })
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ScoreOptions {
    /// Divide by the number of scored tokens.
    pub normalize: bool,
    /// Prefix the input with this id before scoring.
    pub bos: Option<u32>,
}

/// Sum of `log p(token | preceding tokens)` over the continuation.
///
/// The first token of the whole input has no predecessor and is not scored,
/// which only matters when the prompt is empty and no BOS is configured.
pub fn sequence_logprob<F: Scalar>(
    params: &ModelParams<F>,
    prompt: &[u32],
    continuation: &[u32],
    opts: &ScoreOptions,
) -> Result<f64> {
    if continuation.is_empty() {
        return Ok(0.0);
    }
    let mut input = Vec::with_capacity(prompt.len() + continuation.len() + 1);
    input.extend(opts.bos);
    input.extend_from_slice(prompt);
    let start = input.len();
    input.extend_from_slice(continuation);
    check_input(params, &input)?;

    let acts = run(params, &input[..input.len() - 1]);
    let v = params.config().vocab_size;
    let mut total = 0.0;
    let mut scored = 0usize;
    for p in start.max(1)..input.len() {
        let row = &acts.logits[(p - 1) * v..p * v];
        total += log_softmax_at(row, input[p] as usize).to_f64().unwrap();
        scored += 1;
    }
    if opts.normalize && scored > 0 {
        total /= scored as f64;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_params, ModelConfig};

    #[test]
    fn length_one_input() {
        let p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        let tr = forward(&p, &[3]).unwrap();
        assert_eq!(tr.logits.len(), 11);
        assert_eq!(tr.layer_count(), 3);
    }

    #[test]
    fn input_checks() {
        let p = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        assert!(matches!(forward(&p, &[11]), Err(Error::TokenOutOfRange { id: 11, .. })));
        assert!(matches!(
            forward(&p, &[0; 17]),
            Err(Error::Overlong { len: 17, context_len: 16 })
        ));
    }

    #[test]
    fn zeroed_unembedding_gives_uniform() {
        let mut p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        p.tensor_mut("unembed").unwrap().fill(0.0);
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        assert!(tr.logits.iter().all(|&z| z == 0.0));
        let lp = tr.log_prob(1, 4);
        assert!((lp + (11f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let p = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        let tr = forward(&p, &[1, 2, 3, 4, 5]).unwrap();
        for i in 0..5 {
            let s: f64 = (0..11).map(|t| (tr.log_prob(i, t) as f64).exp()).sum();
            assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn nll_masking() {
        let p = init_params::<f64>(&ModelConfig::tiny(11)).unwrap();
        let tr = forward(&p, &[1, 2, 3]).unwrap();
        assert!(matches!(nll(&tr, &[None, None, None]), Err(Error::AllMasked)));
        assert!(matches!(nll(&tr, &[None]), Err(Error::Shape(_))));
        let a = nll(&tr, &[Some(2), Some(3), None]).unwrap();
        assert_eq!(a.count, 2);
        assert!((a.per_token_mean - a.sum / 2.0).abs() < 1e-15);
    }

    #[test]
    fn empty_continuation_scores_zero() {
        let p = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        assert_eq!(
            sequence_logprob(&p, &[1, 2], &[], &ScoreOptions::default()).unwrap(),
            0.0
        );
    }

    #[test]
    fn uniform_model_scores_length_times_log_k() {
        let mut p = init_params::<f64>(&ModelConfig::tiny(16)).unwrap();
        p.tensor_mut("unembed").unwrap().fill(0.0);
        let lp = sequence_logprob(&p, &[1, 2, 3], &[4, 5, 6, 7, 8], &ScoreOptions::default()).unwrap();
        assert!((lp + 5.0 * 16f64.ln()).abs() < 1e-12);
        let norm = ScoreOptions {
            normalize: true,
            ..Default::default()
        };
        let lp = sequence_logprob(&p, &[1, 2, 3], &[4, 5, 6, 7, 8], &norm).unwrap();
        assert!((lp + 16f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn overlong_scoring_is_rejected() {
        let p = init_params::<f32>(&ModelConfig::tiny(11)).unwrap();
        assert!(matches!(
            sequence_logprob(&p, &[1; 10], &[2; 7], &ScoreOptions::default()),
            Err(Error::Overlong { .. })
        ));
    }
}
