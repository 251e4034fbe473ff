//! Multi-head scaled dot-product attention and the position-wise FFN.
//!
//! Token matrices are `[batch, tokens, dim]` vars. Primitives return raw
//! sub-layer outputs; residuals and normalization belong to the caller.

use rand::Rng;

use crate::numcore::{NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::normal_tensor;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub dim: usize,
    pub heads: usize,
}

fn check_tokens(op: &'static str, x: &[usize], dim: usize) -> Result<()> {
    if x.len() != 3 || x[2] != dim {
        return Err(NumError::shape(op, x, &[0, 0, dim]).into());
    }
    Ok(())
}

impl Attention {
    /// Projections drawn from `N(0, 1/dim)`.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::contract(
                "attention",
                format!("model dim {dim} must be divisible by head count {heads}"),
            ));
        }
        let std = 1.0 / (dim as f64).sqrt();
        let mut w = |name: &str| store.add(format!("{prefix}.{name}"), normal_tensor(rng, &[dim, dim], std), true);
        Ok(Attention {
            wq: w("wq")?,
            wk: w("wk")?,
            wv: w("wv")?,
            wo: w("wo")?,
            dim,
            heads,
        })
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }

    /// `[B, L, D] -> [B·h, L, D/h]`.
    fn split_heads<'t, T: Scalar>(&self, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (b, l) = (s[0], s[1]);
        let d = self.head_dim();
        Ok(x.reshape(&[b, l, self.heads, d])?
            .swap_axes12()?
            .reshape(&[b * self.heads, l, d])?)
    }

    fn merge_heads<'t, T: Scalar>(&self, x: Var<'t, T>, batch: usize) -> Result<Var<'t, T>> {
        let s = x.shape();
        let (l, d) = (s[1], s[2]);
        Ok(x.reshape(&[batch, self.heads, l, d])?
            .swap_axes12()?
            .reshape(&[batch, l, self.dim])?)
    }

    /// Returns the output and the attention weights `[B·h, Lq, Lk]`.
    pub fn forward_with_weights<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        q_in: Var<'t, T>,
        kv_in: Var<'t, T>,
    ) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let (qs, ks) = (q_in.shape(), kv_in.shape());
        check_tokens("cross_attention", &qs, self.dim)?;
        check_tokens("cross_attention", &ks, self.dim)?;
        if qs[0] != ks[0] {
            return Err(NumError::shape("cross_attention", &qs, &ks).into());
        }
        let batch = qs[0];
        let q = self.split_heads(q_in.matmul(tape.param(store, self.wq))?)?;
        let k = self.split_heads(kv_in.matmul(tape.param(store, self.wk))?)?;
        let v = self.split_heads(kv_in.matmul(tape.param(store, self.wv))?)?;
        let scale = T::one() / T::from_usize_lossy(self.head_dim()).sqrt();
        let weights = q.matmul(k.transpose()?)?.scale(scale).softmax()?;
        let mixed = self.merge_heads(weights.matmul(v)?, batch)?;
        Ok((mixed.matmul(tape.param(store, self.wo))?, weights))
    }

    /// Queries from `q_in`, keys and values from `kv_in`.
    pub fn cross<'t, T: Scalar>(
        &self,
        tape: &'t Tape<T>,
        store: &ParamStore<T>,
        q_in: Var<'t, T>,
        kv_in: Var<'t, T>,
    ) -> Result<Var<'t, T>> {
        Ok(self.forward_with_weights(tape, store, q_in, kv_in)?.0)
    }

    pub fn self_attn<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        self.cross(tape, store, x, x)
    }
}

/// `W_2 · GELU(W_1 · token)` applied to every token, hidden width `4·dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct Ffn {
    pub w1: ParamId,
    pub w2: ParamId,
    pub dim: usize,
}

impl Ffn {
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = 4 * dim;
        let w1 = store.add(
            format!("{prefix}.w1"),
            normal_tensor(rng, &[dim, hidden], 1.0 / (dim as f64).sqrt()),
            true,
        )?;
        let w2 = store.add(
            format!("{prefix}.w2"),
            normal_tensor(rng, &[hidden, dim], 1.0 / (hidden as f64).sqrt()),
            true,
        )?;
        Ok(Ffn { w1, w2, dim })
    }

    pub fn forward<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.last() != Some(&self.dim) {
            return Err(NumError::shape("ffn", &s, &[self.dim]).into());
        }
        Ok(x.matmul(tape.param(store, self.w1))?
            .gelu()
            .matmul(tape.param(store, self.w2))?)
    }
}

/// Learned linear map applied along the token axis: `[B, L, D] -> [B, L', D]`
/// with a `[L, L']` weight.
pub fn mix_tokens<'t, T: Scalar>(x: Var<'t, T>, weight: Var<'t, T>) -> Result<Var<'t, T>> {
    Ok(x.transpose()?.matmul(weight)?.transpose()?)
}

/// Zeroes a parameter in place; used to set up identity-style initial states.
pub fn zero_param<T: Scalar>(store: &mut ParamStore<T>, id: ParamId) {
    let shape = store.value(id).shape().to_vec();
    store.get_mut(id).value = Tensor::zeros(&shape);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{gelu, grad_check, GradCheckOptions};
    use crate::oracle::{self, mm, to_mat, Mat};
    use crate::rng::rng_for;
    use proptest::prelude::*;

    fn setup(dim: usize, heads: usize, seed: u64) -> (ParamStore<f64>, Attention) {
        let mut store = ParamStore::new();
        let att = Attention::register(&mut store, "att", dim, heads, &mut rng_for(seed, "att")).unwrap();
        (store, att)
    }

    fn tokens(seed: u64, shape: &[usize]) -> Tensor<f64> {
        normal_tensor(&mut rng_for(seed, "tokens"), shape, 1.0)
    }

    #[test]
    fn cross_attention_matches_oracle() {
        for heads in [1, 2] {
            let (store, att) = setup(4, heads, 1);
            let (q, kv) = (tokens(2, &[1, 2, 4]), tokens(3, &[1, 3, 4]));
            let tape = Tape::new();
            let out = att.cross(&tape, &store, tape.constant(q.clone()), tape.constant(kv.clone())).unwrap();
            let w = |id| to_mat(store.value(id));
            let (wq, wk, wv, wo) = (w(att.wq), w(att.wk), w(att.wv), w(att.wo));
            let expected = oracle::attention(&to_mat(&q), &to_mat(&kv), [&wq, &wk, &wv, &wo], heads);
            for (a, b) in out.value().data().iter().zip(expected.concat()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn single_key_returns_projected_value() {
        let (store, att) = setup(8, 4, 4);
        let kv = tokens(5, &[2, 1, 8]);
        let tape = Tape::new();
        let out = att.cross(&tape, &store, tape.constant(tokens(6, &[2, 5, 8])), tape.constant(kv.clone())).unwrap();
        let wv_wo = store.value(att.wv).matmul(store.value(att.wo)).unwrap();
        let projected = kv.matmul(&wv_wo).unwrap();
        let out = out.value();
        for b in 0..2 {
            for i in 0..5 {
                for c in 0..8 {
                    assert!((out.at(&[b, i, c]) - projected.at(&[b, 0, c])).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn self_attention_equals_cross_with_itself() {
        let (store, att) = setup(8, 2, 7);
        let tape = Tape::new();
        let x = tape.constant(tokens(8, &[2, 6, 8]));
        let a = att.self_attn(&tape, &store, x).unwrap().value();
        let b = att.cross(&tape, &store, x, x).unwrap().value();
        assert_eq!(*a, *b);
    }

    #[test]
    fn weights_are_row_stochastic() {
        let (store, att) = setup(8, 4, 9);
        let tape = Tape::new();
        let (_, w) = att
            .forward_with_weights(&tape, &store, tape.constant(tokens(1, &[3, 5, 8])), tape.constant(tokens(2, &[3, 7, 8])))
            .unwrap();
        for row in w.value().data().chunks(7) {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn dimension_mismatch_is_a_shape_error() {
        let (store, att) = setup(8, 2, 1);
        let tape = Tape::new();
        let res = att.cross(&tape, &store, tape.constant(tokens(1, &[1, 2, 8])), tape.constant(tokens(1, &[1, 2, 4])));
        assert!(matches!(res, Err(Error::Num(NumError::Shape { .. }))));
        let mut store = ParamStore::<f64>::new();
        assert!(Attention::register(&mut store, "a", 6, 4, &mut rng_for(0, "x")).is_err());
    }

    #[test]
    fn ffn_examples() {
        let mut store = ParamStore::new();
        let ffn = Ffn::register(&mut store, "ffn", 4, &mut rng_for(3, "ffn")).unwrap();
        let x = tokens(4, &[1, 3, 4]);
        let tape = Tape::new();
        let out = ffn.forward(&tape, &store, tape.constant(x.clone())).unwrap().value();
        let w1 = to_mat(store.value(ffn.w1));
        let w2 = to_mat(store.value(ffn.w2));
        let hidden: Mat = mm(&to_mat(&x), &w1).into_iter().map(|r| r.into_iter().map(gelu).collect()).collect();
        for (a, b) in out.data().iter().zip(mm(&hidden, &w2).concat()) {
            assert!((a - b).abs() < 1e-12);
        }

        zero_param(&mut store, ffn.w1);
        zero_param(&mut store, ffn.w2);
        let tape = Tape::new();
        let out = ffn.forward(&tape, &store, tape.constant(x)).unwrap().value();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ffn_is_tokenwise() {
        let mut store = ParamStore::new();
        let ffn = Ffn::register(&mut store, "ffn", 8, &mut rng_for(3, "ffn")).unwrap();
        let x = tokens(1, &[1, 5, 8]);
        let mut y = x.clone();
        for c in 0..8 {
            y.data_mut()[2 * 8 + c] += 0.5;
        }
        let tape = Tape::new();
        let a = ffn.forward(&tape, &store, tape.constant(x)).unwrap().value();
        let b = ffn.forward(&tape, &store, tape.constant(y)).unwrap().value();
        for tok in 0..5 {
            let changed = (0..8).any(|c| a.at(&[0, tok, c]) != b.at(&[0, tok, c]));
            assert_eq!(changed, tok == 2, "token {tok}");
        }
    }

    #[test]
    fn all_primitives_pass_gradient_check() {
        let mut store = ParamStore::new();
        let mut rng = rng_for(11, "gc");
        let att = Attention::register(&mut store, "att", 8, 2, &mut rng).unwrap();
        let ffn = Ffn::register(&mut store, "ffn", 8, &mut rng).unwrap();
        let q = store.add("q", tokens(12, &[2, 3, 8]), true).unwrap();
        let kv = store.add("kv", tokens(13, &[2, 4, 8]), true).unwrap();
        let probe = tokens(14, &[2, 3, 8]);
        let report = grad_check(
            |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
                let (q, kv) = (tape.param(s, q), tape.param(s, kv));
                let c = att.cross(tape, s, q, kv)?;
                let sa = att.self_attn(tape, s, c)?;
                let f = ffn.forward(tape, s, sa)?;
                Ok(f.add(c)?.mul(tape.constant(probe.clone()))?.sum())
            },
            &mut store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
    }

    proptest! {
        #[test]
        fn self_attention_is_permutation_equivariant(seed in 0u64..500, shift in 1usize..5) {
            let (store, att) = setup(8, 4, seed);
            let x = tokens(seed + 1, &[1, 5, 8]);
            // Rotate tokens by `shift`.
            let perm: Vec<usize> = (0..5).map(|i| (i + shift) % 5).collect();
            let px = Tensor::from_fn(&[1, 5, 8], |i| x.data()[perm[i / 8] * 8 + i % 8]);
            let tape = Tape::new();
            let a = att.self_attn(&tape, &store, tape.constant(x)).unwrap().value();
            let b = att.self_attn(&tape, &store, tape.constant(px)).unwrap().value();
            for (i, &src) in perm.iter().enumerate() {
                for c in 0..8 {
                    prop_assert!((b.at(&[0, i, c]) - a.at(&[0, src, c])).abs() < 1e-12);
                }
            }
        }
    }
}
