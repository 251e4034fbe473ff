//! Text prototype guidance.
//!
//! A frozen vocabulary embedding `E [V, D]` is linearly probed into `V′`
//! prototypes `E′ = W_probe · E`. Input tokens are reprogrammed against the
//! prototypes:
//!
//! ```text
//! X_self   = SelfAttention(X)
//! E′_fuse  = E′ + adapt(X_self)              // [B, V′, D]
//! Output   = E′_fuse + CrossAttention(E′_fuse, X, X)
//! T_out    = FFN(Output)
//! ```
//!
//! `adapt` resamples the token axis from `L` to `V′` by linear interpolation
//! and then applies a learned `[V′, V′]` mix, so one instance serves inputs of
//! any length.

use rand::Rng;

use crate::attention::{mix_tokens, Attention, Ffn};
use crate::numcore::{NumError, ParamId, ParamStore, Tape, Tensor, Var};
use crate::rng::normal_tensor;
use crate::{Error, Result, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TpgConfig {
    pub vocab: usize,
    pub dim: usize,
    pub protos: usize,
    pub heads: usize,
}

impl Default for TpgConfig {
    fn default() -> Self {
        TpgConfig {
            vocab: 1024,
            dim: 64,
            protos: 64,
            heads: 4,
        }
    }
}

impl TpgConfig {
    pub fn validate(&self) -> Result<()> {
        if self.protos == 0 || self.protos * 4 > self.vocab {
            return Err(Error::contract(
                "tpg",
                format!("prototype count {} must be in 1..=V/4 (V = {})", self.protos, self.vocab),
            ));
        }
        Ok(())
    }
}

/// Registers the frozen `[V, D]` vocabulary drawn from `N(0, 1)`.
pub fn register_vocab<T: Scalar, R: Rng + ?Sized>(
    store: &mut ParamStore<T>,
    name: &str,
    vocab: usize,
    dim: usize,
    rng: &mut R,
) -> Result<ParamId> {
    Ok(store.add(name, normal_tensor(rng, &[vocab, dim], 1.0), false)?)
}

/// `[from, to]` matrix resampling a token axis by linear interpolation with
/// aligned end points.
pub fn interpolation_matrix<T: Scalar>(from: usize, to: usize) -> Tensor<T> {
    let mut m = Tensor::zeros(&[from, to]);
    for j in 0..to {
        let pos = if to > 1 {
            j as f64 * (from - 1) as f64 / (to - 1) as f64
        } else {
            0.0
        };
        let lo = (pos.floor() as usize).min(from - 1);
        let hi = (lo + 1).min(from - 1);
        let frac = pos - lo as f64;
        m.data_mut()[lo * to + j] += T::lit(1.0 - frac);
        if hi != lo {
            m.data_mut()[hi * to + j] += T::lit(frac);
        }
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tpg {
    pub config: TpgConfig,
    /// Frozen.
    pub vocab: ParamId,
    /// `[V′, V]`.
    pub probe: ParamId,
    pub self_attn: Attention,
    pub cross: Attention,
    pub ffn: Ffn,
    /// `[V′, V′]`, starts as identity.
    pub adapter: ParamId,
}

impl Tpg {
    /// `vocab` must be a registered `[V, D]` parameter; it is never trained.
    pub fn register<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        config: TpgConfig,
        vocab: ParamId,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let e = store.value(vocab).shape().to_vec();
        if e != [config.vocab, config.dim] {
            return Err(NumError::shape("tpg_vocab", &e, &[config.vocab, config.dim]).into());
        }
        if store.get(vocab).trainable {
            return Err(Error::contract("tpg", "vocabulary embedding must be frozen"));
        }
        let (v, vp, d) = (config.vocab, config.protos, config.dim);
        let probe = store.add(
            format!("{prefix}.probe"),
            normal_tensor(rng, &[vp, v], 1.0 / (v as f64).sqrt()),
            true,
        )?;
        let self_attn = Attention::register(store, &format!("{prefix}.self"), d, config.heads, rng)?;
        let cross = Attention::register(store, &format!("{prefix}.cross"), d, config.heads, rng)?;
        let ffn = Ffn::register(store, &format!("{prefix}.ffn"), d, rng)?;
        let adapter = store.add(format!("{prefix}.adapter"), Tensor::eye(vp), true)?;
        Ok(Tpg {
            config,
            vocab,
            probe,
            self_attn,
            cross,
            ffn,
            adapter,
        })
    }

    /// `E′ = W_probe · E`, shape `[V′, D]`.
    pub fn prototypes<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>) -> Result<Var<'t, T>> {
        Ok(tape.param(store, self.probe).matmul(tape.param(store, self.vocab))?)
    }

    /// `[B, L, D] -> [B, V′, D]`.
    pub fn reprogram<'t, T: Scalar>(&self, tape: &'t Tape<T>, store: &ParamStore<T>, x: Var<'t, T>) -> Result<Var<'t, T>> {
        let s = x.shape();
        if s.len() != 3 || s[2] != self.config.dim {
            return Err(NumError::shape("reprogram", &s, &[0, 0, self.config.dim]).into());
        }
        let protos = self.prototypes(tape, store)?;
        let x_self = self.self_attn.self_attn(tape, store, x)?;
        let resample = tape.constant(interpolation_matrix(s[1], self.config.protos));
        let adapted = mix_tokens(mix_tokens(x_self, resample)?, tape.param(store, self.adapter))?;
        let fused = adapted.add(protos)?;
        let output = fused.add(self.cross.cross(tape, store, fused, x)?)?;
        self.ffn.forward(tape, store, output)
    }
}

/// `E′ = W_probe · E` on plain tensors.
pub fn derive_prototypes<T: Scalar>(vocab: &Tensor<T>, probe: &Tensor<T>) -> Result<Tensor<T>> {
    let (v, vp) = (vocab.shape()[0], probe.shape()[0]);
    if vp == 0 || vp * 4 > v {
        return Err(Error::contract(
            "tpg",
            format!("prototype count {vp} must be in 1..=V/4 (V = {v})"),
        ));
    }
    Ok(probe.matmul(vocab)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::zero_param;
    use crate::numcore::{grad_check, GradCheckOptions};
    use crate::oracle::{assert_close, mm, to_mat};
    use crate::rng::rng_for;

    fn tiny() -> TpgConfig {
        TpgConfig {
            vocab: 32,
            dim: 8,
            protos: 8,
            heads: 2,
        }
    }

    fn setup(cfg: TpgConfig, seed: u64) -> (ParamStore<f64>, Tpg) {
        let mut store = ParamStore::new();
        let mut rng = rng_for(seed, "tpg");
        let e = register_vocab(&mut store, "vocab", cfg.vocab, cfg.dim, &mut rng).unwrap();
        let tpg = Tpg::register(&mut store, "tpg", cfg, e, &mut rng).unwrap();
        (store, tpg)
    }

    #[test]
    fn one_hot_probe_selects_vocab_rows() {
        let vocab = normal_tensor::<f64, _>(&mut rng_for(1, "e"), &[16, 4], 1.0);
        let rows = [3usize, 0, 15, 7];
        let probe = Tensor::from_fn(&[4, 16], |i| if rows[i / 16] == i % 16 { 1.0 } else { 0.0 });
        let e = derive_prototypes(&vocab, &probe).unwrap();
        for (r, &src) in rows.iter().enumerate() {
            assert_eq!(e.data()[r * 4..(r + 1) * 4], vocab.data()[src * 4..(src + 1) * 4]);
        }
        let zero = derive_prototypes(&vocab, &Tensor::zeros(&[4, 16])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn random_prototypes_match_matmul_oracle() {
        let mut rng = rng_for(2, "p");
        let vocab = normal_tensor::<f64, _>(&mut rng, &[20, 6], 1.0);
        let probe = normal_tensor::<f64, _>(&mut rng, &[5, 20], 1.0);
        let e = derive_prototypes(&vocab, &probe).unwrap();
        assert_close(e.data(), &mm(&to_mat(&probe), &to_mat(&vocab)).concat(), 1e-12);
    }

    #[test]
    fn too_many_prototypes_is_a_contract_error() {
        let vocab = Tensor::<f64>::zeros(&[16, 4]);
        assert!(matches!(derive_prototypes(&vocab, &Tensor::zeros(&[5, 16])), Err(Error::Contract { .. })));
        let cfg = TpgConfig { protos: 9, ..tiny() };
        let mut store = ParamStore::<f64>::new();
        let e = register_vocab(&mut store, "vocab", 32, 8, &mut rng_for(0, "v")).unwrap();
        let res = Tpg::register(&mut store, "tpg", cfg, e, &mut rng_for(0, "t"));
        assert!(matches!(res, Err(Error::Contract { .. })));
    }

    #[test]
    fn zero_input_collapses_to_ffn_of_prototypes() {
        let (mut store, tpg) = setup(tiny(), 3);
        zero_param(&mut store, tpg.self_attn.wo);
        zero_param(&mut store, tpg.cross.wo);
        let tape = Tape::inference();
        let out = tpg
            .reprogram(&tape, &store, tape.constant(Tensor::zeros(&[3, 10, 8])))
            .unwrap()
            .value();
        let protos = tpg.prototypes(&tape, &store).unwrap();
        let expected = tpg.ffn.forward(&tape, &store, protos).unwrap().value();
        for b in 0..3 {
            assert_eq!(out.data()[b * 64..(b + 1) * 64], *expected.data());
        }
    }

    #[test]
    fn output_has_prototype_count_for_any_length() {
        let (store, tpg) = setup(tiny(), 4);
        for len in [1, 16, 32, 128] {
            let tape = Tape::inference();
            let x = tape.constant(normal_tensor(&mut rng_for(len as u64, "x"), &[2, len, 8], 1.0));
            assert_eq!(tpg.reprogram(&tape, &store, x).unwrap().shape(), vec![2, 8, 8]);
        }
        let tape = Tape::inference();
        let res = tpg.reprogram(&tape, &store, tape.constant(Tensor::zeros(&[1, 4, 6])));
        assert!(matches!(res, Err(Error::Num(NumError::Shape { .. }))));
    }

    #[test]
    fn interpolation_rows_partition_unity() {
        for (from, to) in [(16, 64), (15, 8), (32, 32), (1, 4), (5, 1)] {
            let m = interpolation_matrix::<f64>(from, to);
            for j in 0..to {
                let col: f64 = (0..from).map(|i| m.at(&[i, j])).sum();
                assert!((col - 1.0).abs() < 1e-12);
            }
        }
        assert_eq!(interpolation_matrix::<f64>(4, 4), Tensor::eye(4));
    }

    #[test]
    fn both_modalities_share_parameters_and_vocab_stays_frozen() {
        let (mut store, tpg) = setup(tiny(), 5);
        let mut rng = rng_for(6, "x");
        let visual = normal_tensor(&mut rng, &[2, 4, 8], 1.0);
        let signal = normal_tensor(&mut rng, &[2, 15, 8], 1.0);
        let tape = Tape::new();
        let a = tpg.reprogram(&tape, &store, tape.constant(visual)).unwrap();
        let b = tpg.reprogram(&tape, &store, tape.constant(signal)).unwrap();
        let loss = a.add(b).unwrap().mul(a).unwrap().sum();
        tape.backward(loss, &mut store).unwrap();
        assert!(store.get(tpg.vocab).grad.data().iter().all(|&g| g == 0.0));
        let names: Vec<_> = store.iter().map(|(_, p)| p.name.clone()).collect();
        assert_eq!(names.iter().filter(|n| n.starts_with("tpg.probe")).count(), 1);
        assert!(store
            .iter()
            .filter(|(_, p)| p.trainable)
            .all(|(_, p)| p.grad.data().iter().any(|&g| g != 0.0)));
    }

    #[test]
    fn gradient_check() {
        let (mut store, tpg) = setup(tiny(), 7);
        let mut rng = rng_for(8, "x");
        let x = normal_tensor(&mut rng, &[2, 5, 8], 1.0);
        let probe = normal_tensor(&mut rng, &[2, 8, 8], 1.0);
        let report = grad_check(
            |tape: &Tape<f64>, s: &ParamStore<f64>| -> Result<Var<'_, f64>> {
                let out = tpg.reprogram(tape, s, tape.constant(x.clone()))?;
                Ok(out.mul(tape.constant(probe.clone()))?.sum())
            },
            &mut store,
            GradCheckOptions::default(),
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-4, "{:?}", report.worst());
    }

    #[test]
    fn deterministic_under_seed() {
        let run = || {
            let (store, tpg) = setup(tiny(), 9);
            let tape = Tape::inference();
            let x = tape.constant(normal_tensor(&mut rng_for(10, "x"), &[1, 6, 8], 1.0));
            tpg.reprogram(&tape, &store, x).unwrap().value().data().to_vec()
        };
        assert_eq!(run(), run());
    }
}
