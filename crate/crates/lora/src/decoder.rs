use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::attention::{attend, log_softmax, softmax};
use crate::error::{shape, LoraError};
use crate::{LoraAdapter, Matrix, Scalar};

/// One training or scoring example: prompt `p`, input `x`, target `y`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SequenceExample {
    pub prompt: Vec<String>,
    pub input: Vec<String>,
    pub target: Vec<String>,
}

impl SequenceExample {
    pub fn new(prompt: &[&str], input: &[&str], target: &[&str]) -> Self {
        let own = |s: &[&str]| s.iter().map(|t| t.to_string()).collect();
        Self {
            prompt: own(prompt),
            input: own(input),
            target: own(target),
        }
    }
}

/// Identity mapping over single symbols: input `[s]`, target `[s]`.
pub fn copy_task(vocab: &[&str]) -> Vec<SequenceExample> {
    vocab.iter().map(|&s| SequenceExample::new(&[], &[s], &[s])).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig<T> {
    /// Embedding width `k`.
    pub model_dim: usize,
    /// Query, key and value width `d`.
    pub head_dim: usize,
    pub rank: usize,
    pub scaling: T,
    /// Half-width of the uniform init of the adapter `A` matrices.
    pub adapter_init: T,
}

impl<T: Scalar> Default for DecoderConfig<T> {
    fn default() -> Self {
        Self {
            model_dim: 8,
            head_dim: 6,
            rank: 2,
            scaling: T::one(),
            adapter_init: T::lit(0.5),
        }
    }
}

/// Frozen weights of the toy decoder.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderWeights<T> {
    /// `|V| x k`, one row per symbol.
    pub embed: Matrix<T>,
    /// `d x k`.
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    /// `k x d`.
    pub wo: Matrix<T>,
    /// `k x |V|`; logits are `out_projᵀ h`.
    pub out_proj: Matrix<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LoraGrads<T> {
    pub q_a: Matrix<T>,
    pub q_b: Matrix<T>,
    pub v_a: Matrix<T>,
    pub v_b: Matrix<T>,
}

/// Single-layer, single-head decoder with LoRA on the query and value
/// projections. Only the adapters are trainable.
#[derive(Debug, Clone)]
pub struct ToyDecoder<T> {
    vocab: Vec<String>,
    index: HashMap<String, usize>,
    w: DecoderWeights<T>,
    lora_q: LoraAdapter<T>,
    lora_v: LoraAdapter<T>,
}

struct Step<T> {
    ctx: Vec<usize>,
    uq: Vec<T>,
    keys: Vec<Vec<T>>,
    uv: Vec<Vec<T>>,
    values: Vec<Vec<T>>,
    alpha: Vec<T>,
    logits: Vec<T>,
}

impl<T: Scalar> ToyDecoder<T> {
    pub fn new(vocab: &[&str], cfg: &DecoderConfig<T>, seed: u64) -> Result<Self, LoraError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (k, d, n) = (cfg.model_dim, cfg.head_dim, vocab.len());
        let fan = |x: usize| T::one() / T::lit(x as f64).sqrt();
        let w = DecoderWeights {
            embed: Matrix::uniform(n.max(1), k, T::one(), &mut rng)?,
            wq: Matrix::uniform(d, k, fan(k), &mut rng)?,
            wk: Matrix::uniform(d, k, fan(k), &mut rng)?,
            wv: Matrix::uniform(d, k, fan(k), &mut rng)?,
            wo: Matrix::uniform(k, d, fan(d), &mut rng)?,
            out_proj: Matrix::uniform(k, n.max(1), fan(k), &mut rng)?,
        };
        let lora_q = LoraAdapter::init(d, k, cfg.rank, cfg.scaling, cfg.adapter_init, &mut rng)?;
        let lora_v = LoraAdapter::init(d, k, cfg.rank, cfg.scaling, cfg.adapter_init, &mut rng)?;
        Self::from_parts(vocab, w, lora_q, lora_v)
    }

    pub fn from_parts(
        vocab: &[&str],
        w: DecoderWeights<T>,
        lora_q: LoraAdapter<T>,
        lora_v: LoraAdapter<T>,
    ) -> Result<Self, LoraError> {
        let index: HashMap<String, usize> = vocab.iter().enumerate().map(|(i, s)| (s.to_string(), i)).collect();
        if vocab.is_empty() || index.len() != vocab.len() {
            return Err(LoraError::BadVocab);
        }
        let (n, k) = w.embed.shape();
        let d = w.wq.rows();
        let checks = [
            ("embed", w.embed.shape(), (vocab.len(), k)),
            ("wq", w.wq.shape(), (d, k)),
            ("wk", w.wk.shape(), (d, k)),
            ("wv", w.wv.shape(), (d, k)),
            ("wo", w.wo.shape(), (k, d)),
            ("out_proj", w.out_proj.shape(), (k, n)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(shape("decoder", format!("{name} is {got:?}, expected {want:?}")));
            }
        }
        let mut dec = Self {
            vocab: vocab.iter().map(|s| s.to_string()).collect(),
            index,
            w,
            lora_q: lora_q.clone(),
            lora_v: lora_v.clone(),
        };
        dec.set_adapters(lora_q, lora_v)?;
        Ok(dec)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn weights(&self) -> &DecoderWeights<T> {
        &self.w
    }

    pub fn lora_q(&self) -> &LoraAdapter<T> {
        &self.lora_q
    }

    pub fn lora_v(&self) -> &LoraAdapter<T> {
        &self.lora_v
    }

    pub fn set_adapters(&mut self, lora_q: LoraAdapter<T>, lora_v: LoraAdapter<T>) -> Result<(), LoraError> {
        for (name, ad) in [("lora_q", &lora_q), ("lora_v", &lora_v)] {
            if ad.target_shape() != self.w.wq.shape() {
                return Err(shape(
                    "decoder",
                    format!(
                        "{name} targets {:?}, expected {:?}",
                        ad.target_shape(),
                        self.w.wq.shape()
                    ),
                ));
            }
        }
        self.lora_q = lora_q;
        self.lora_v = lora_v;
        Ok(())
    }

    /// `2 r (k + d)`: both adapters, nothing else.
    pub fn trainable_params(&self) -> usize {
        self.lora_q.params() + self.lora_v.params()
    }

    fn ids(&self, symbols: &[impl AsRef<str>]) -> Result<Vec<usize>, LoraError> {
        symbols
            .iter()
            .map(|s| {
                self.index
                    .get(s.as_ref())
                    .copied()
                    .ok_or_else(|| LoraError::UnknownSymbol(s.as_ref().to_string()))
            })
            .collect()
    }

    fn step(&self, ctx: &[usize], adapters: bool) -> Result<Step<T>, LoraError> {
        let &last = ctx.last().ok_or(LoraError::EmptyContext)?;
        let e = |i: usize| self.w.embed.row(i);
        let mut q = self.w.wq.matvec(e(last))?;
        let (uq, dq) = self.lora_q.apply(e(last))?;
        let mut keys = Vec::with_capacity(ctx.len());
        let mut uv = Vec::with_capacity(ctx.len());
        let mut values = Vec::with_capacity(ctx.len());
        for &j in ctx {
            keys.push(self.w.wk.matvec(e(j))?);
            let mut v = self.w.wv.matvec(e(j))?;
            let (u, dv) = self.lora_v.apply(e(j))?;
            if adapters {
                v.iter_mut().zip(dv).for_each(|(a, b)| *a = *a + b);
            }
            uv.push(u);
            values.push(v);
        }
        if adapters {
            q.iter_mut().zip(dq).for_each(|(a, b)| *a = *a + b);
        }
        let (alpha, o) = attend(&q, &keys, &values)?;
        let mut h = e(last).to_vec();
        h.iter_mut().zip(self.w.wo.matvec(&o)?).for_each(|(a, b)| *a = *a + b);
        let logits = self.w.out_proj.matvec_t(&h)?;
        Ok(Step {
            ctx: ctx.to_vec(),
            uq,
            keys,
            uv,
            values,
            alpha,
            logits,
        })
    }

    /// Next-symbol distribution after `context`, adapters applied.
    pub fn next_distribution(&self, context: &[&str]) -> Result<Vec<T>, LoraError> {
        Ok(softmax(&self.step(&self.ids(context)?, true)?.logits))
    }

    /// Same as [`next_distribution`](Self::next_distribution) but
    /// through the frozen weights only.
    pub fn base_distribution(&self, context: &[&str]) -> Result<Vec<T>, LoraError> {
        Ok(softmax(&self.step(&self.ids(context)?, false)?.logits))
    }

    /// `Σ_i log P(y_i | p, x, y_<i)`.
    pub fn sequence_log_prob(&self, prompt: &[&str], input: &[&str], target: &[&str]) -> Result<T, LoraError> {
        self.example_log_prob(&SequenceExample::new(prompt, input, target), true)
    }

    pub fn base_sequence_log_prob(&self, prompt: &[&str], input: &[&str], target: &[&str]) -> Result<T, LoraError> {
        self.example_log_prob(&SequenceExample::new(prompt, input, target), false)
    }

    fn contexts(&self, ex: &SequenceExample) -> Result<(Vec<usize>, Vec<usize>), LoraError> {
        if ex.target.is_empty() {
            return Err(LoraError::EmptyTarget);
        }
        let mut ctx = self.ids(&ex.prompt)?;
        ctx.extend(self.ids(&ex.input)?);
        if ctx.is_empty() {
            return Err(LoraError::EmptyContext);
        }
        Ok((ctx, self.ids(&ex.target)?))
    }

    fn example_log_prob(&self, ex: &SequenceExample, adapters: bool) -> Result<T, LoraError> {
        let (mut ctx, y) = self.contexts(ex)?;
        let mut total = T::zero();
        for &t in &y {
            total = total + log_softmax(&self.step(&ctx, adapters)?.logits)[t];
            ctx.push(t);
        }
        Ok(total)
    }

    /// Mean negative log-likelihood of the targets.
    pub fn loss(&self, batch: &[SequenceExample]) -> Result<T, LoraError> {
        if batch.is_empty() {
            return Err(LoraError::EmptyBatch);
        }
        let mut sum = T::zero();
        for ex in batch {
            sum = sum - self.example_log_prob(ex, true)?;
        }
        Ok(sum / T::lit(batch.len() as f64))
    }

    /// Loss and its gradient with respect to the four adapter matrices.
    pub fn gradients(&self, batch: &[SequenceExample]) -> Result<(T, LoraGrads<T>), LoraError> {
        if batch.is_empty() {
            return Err(LoraError::EmptyBatch);
        }
        let zeros_like = |m: &Matrix<T>| Matrix::zeros(m.rows(), m.cols());
        let mut g = LoraGrads {
            q_a: zeros_like(self.lora_q.a())?,
            q_b: zeros_like(self.lora_q.b())?,
            v_a: zeros_like(self.lora_v.a())?,
            v_b: zeros_like(self.lora_v.b())?,
        };
        let weight = T::one() / T::lit(batch.len() as f64);
        let mut loss = T::zero();
        for ex in batch {
            let (mut ctx, y) = self.contexts(ex)?;
            for &t in &y {
                let st = self.step(&ctx, true)?;
                loss = loss - log_softmax(&st.logits)[t] * weight;
                self.backward(&st, t, weight, &mut g)?;
                ctx.push(t);
            }
        }
        Ok((loss, g))
    }

    fn backward(&self, st: &Step<T>, target: usize, weight: T, g: &mut LoraGrads<T>) -> Result<(), LoraError> {
        let mut dz = softmax(&st.logits);
        dz[target] = dz[target] - T::one();
        dz.iter_mut().for_each(|v| *v = *v * weight);
        let dh = self.w.out_proj.matvec(&dz)?;
        let d_o = self.w.wo.matvec_t(&dh)?;

        let d_alpha: Vec<T> = st.values.iter().map(|v| crate::matrix::dot(&d_o, v)).collect();
        let mean: T = st.alpha.iter().zip(&d_alpha).map(|(&a, &b)| a * b).sum();
        let scale = T::lit(st.keys[0].len() as f64).sqrt();
        let mut dq = vec![T::zero(); d_o.len()];
        for ((a, da), k) in st.alpha.iter().zip(&d_alpha).zip(&st.keys) {
            let ds = *a * (*da - mean) / scale;
            dq.iter_mut().zip(k).for_each(|(o, &kv)| *o = *o + ds * kv);
        }

        let s_q = self.lora_q.scaling();
        let last = *st.ctx.last().expect("step has context");
        g.q_b.add_outer(s_q, &dq, &st.uq);
        let du = self.lora_q.b().matvec_t(&dq)?;
        g.q_a.add_outer(s_q, &du, self.w.embed.row(last));

        let s_v = self.lora_v.scaling();
        let dw = self.lora_v.b().matvec_t(&d_o)?;
        for ((&j, a), u) in st.ctx.iter().zip(&st.alpha).zip(&st.uv) {
            g.v_b.add_outer(s_v * *a, &d_o, u);
            g.v_a.add_outer(s_v * *a, &dw, self.w.embed.row(j));
        }
        Ok(())
    }

    /// One plain gradient-descent step on the adapters. Returns the loss
    /// before the update.
    pub fn train_step(&mut self, batch: &[SequenceExample], lr: T) -> Result<T, LoraError> {
        if !lr.is_finite() || lr < T::zero() {
            return Err(LoraError::LearningRate);
        }
        let (loss, g) = self.gradients(batch)?;
        if !loss.is_finite() {
            return Err(LoraError::NonFiniteLoss);
        }
        let upd = |m: &mut Matrix<T>, d: &Matrix<T>| {
            m.data_mut()
                .iter_mut()
                .zip(d.data())
                .for_each(|(p, &gv)| *p = *p - lr * gv);
        };
        upd(self.lora_q.a_mut(), &g.q_a);
        upd(self.lora_q.b_mut(), &g.q_b);
        upd(self.lora_v.a_mut(), &g.v_a);
        upd(self.lora_v.b_mut(), &g.v_b);
        Ok(loss)
    }

    fn param(&mut self, which: usize) -> &mut Matrix<T> {
        match which {
            0 => self.lora_q.a_mut(),
            1 => self.lora_q.b_mut(),
            2 => self.lora_v.a_mut(),
            _ => self.lora_v.b_mut(),
        }
    }

    /// Largest relative error between the analytic gradient and a central
    /// finite difference, over every adapter entry. The relative error of
    /// one entry is `|g - fd| / max(|g|, |fd|, 1e-8)`.
    pub fn grad_check(&self, example: &SequenceExample, epsilon: T) -> Result<T, LoraError> {
        if !(epsilon > T::zero() && epsilon <= T::lit(1e-2)) {
            return Err(LoraError::Epsilon(epsilon.to_string()));
        }
        let batch = std::slice::from_ref(example);
        let (_, g) = self.gradients(batch)?;
        let analytic = [&g.q_a, &g.q_b, &g.v_a, &g.v_b];
        let mut probe = self.clone();
        let mut worst = T::zero();
        let two = T::lit(2.0);
        let floor = T::lit(1e-8);
        for (which, grad) in analytic.iter().enumerate() {
            for idx in 0..grad.data().len() {
                let orig = probe.param(which).data()[idx];
                probe.param(which).data_mut()[idx] = orig + epsilon;
                let up = probe.loss(batch)?;
                probe.param(which).data_mut()[idx] = orig - epsilon;
                let down = probe.loss(batch)?;
                probe.param(which).data_mut()[idx] = orig;
                let fd = (up - down) / (two * epsilon);
                let an = grad.data()[idx];
                let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(floor);
                worst = worst.max(rel);
            }
        }
        Ok(worst)
    }

    /// Folds both adapters into the frozen weights and resets them to zero.
    pub fn merged(&self) -> Result<Self, LoraError> {
        let mut out = self.clone();
        out.w.wq = crate::merge(&self.w.wq, &self.lora_q)?;
        out.w.wv = crate::merge(&self.w.wv, &self.lora_v)?;
        for ad in [&mut out.lora_q, &mut out.lora_v] {
            let (d, r) = ad.b().shape();
            *ad.b_mut() = Matrix::zeros(d, r)?;
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dec() -> ToyDecoder<f64> {
        ToyDecoder::new(&["a", "b", "c"], &DecoderConfig::default(), 3).unwrap()
    }

    #[test]
    fn param_count() {
        let d = dec();
        assert_eq!(d.trainable_params(), 2 * 2 * (8 + 6));
    }

    #[test]
    fn input_errors() {
        let d = dec();
        assert_eq!(d.sequence_log_prob(&[], &["a"], &[]), Err(LoraError::EmptyTarget));
        assert_eq!(d.sequence_log_prob(&[], &[], &["a"]), Err(LoraError::EmptyContext));
        assert_eq!(
            d.sequence_log_prob(&[], &["z"], &["a"]),
            Err(LoraError::UnknownSymbol("z".into()))
        );
        assert!(d.grad_check(&SequenceExample::new(&[], &["a"], &["b"]), 0.1).is_err());
        assert!(d.clone().train_step(&[], 0.1).is_err());
        assert!(ToyDecoder::<f64>::new(&["a", "a"], &DecoderConfig::default(), 0).is_err());
    }

    #[test]
    fn merged_model_scores_the_same() {
        let mut d = dec();
        let batch = copy_task(&["a", "b", "c"]);
        for _ in 0..5 {
            d.train_step(&batch, 0.5).unwrap();
        }
        let m = d.merged().unwrap();
        let a = d.sequence_log_prob(&["b"], &["a", "c"], &["a", "b"]).unwrap();
        let b = m.sequence_log_prob(&["b"], &["a", "c"], &["a", "b"]).unwrap();
        assert!((a - b).abs() < 1e-12);
    }
}
