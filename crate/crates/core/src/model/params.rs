//! Learnable parameter tree.
//!
//! The tree is generic over its leaf type so one definition serves as a shape
//! plan (`Vec<usize>`), stored weights (`Tensor<T>`), tape handles (`Var<T>`),
//! and optimizer moments.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tape, Tensor, Var};

/// Role of a parameter; decides initialisation and weight decay.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    NormScale,
    NormShift,
    Position,
}

impl ParamKind {
    pub fn decays(self) -> bool {
        self == ParamKind::Weight
    }
}

/// `y = x W + b`, with `W` stored as `[in, out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear<P> {
    pub weight: P,
    pub bias: P,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Norm<P> {
    pub gamma: P,
    pub beta: P,
}

/// Pre-norm transformer block.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderLayer<P> {
    pub norm1: Norm<P>,
    pub wq: P,
    pub wk: P,
    pub wv: P,
    /// Head-merge projection, `(heads * d_v) x dim`.
    pub wo: P,
    /// Linear layer applied to the attention output.
    pub wl: P,
    pub norm2: Norm<P>,
    pub fc1: Linear<P>,
    pub fc2: Linear<P>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TlVitParams<P> {
    pub patch_embed: Linear<P>,
    pub patch_pos: P,
    pub subpatch_embed: Linear<P>,
    pub subpatch_pos: P,
    pub global: Vec<EncoderLayer<P>>,
    pub local: Vec<EncoderLayer<P>>,
    pub fusion: Linear<P>,
    pub fusion_norm: Norm<P>,
    pub decoder: Vec<EncoderLayer<P>>,
    pub head: Linear<P>,
}

type Visit<'a, 'b, P> = &'b mut dyn FnMut(&str, ParamKind, &'a P);
type VisitMut<'a, 'b, P> = &'b mut dyn FnMut(&str, ParamKind, &'a mut P);
type MapFn<'b, P, Q> = &'b mut dyn FnMut(&str, ParamKind, &P) -> Result<Q>;

impl<P> Linear<P> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, P>) {
        f(&format!("{prefix}.weight"), ParamKind::Weight, &self.weight);
        f(&format!("{prefix}.bias"), ParamKind::Bias, &self.bias);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitMut<'a, '_, P>) {
        f(
            &format!("{prefix}.weight"),
            ParamKind::Weight,
            &mut self.weight,
        );
        f(&format!("{prefix}.bias"), ParamKind::Bias, &mut self.bias);
    }

    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<Linear<Q>> {
        Ok(Linear {
            weight: f(&format!("{prefix}.weight"), ParamKind::Weight, &self.weight)?,
            bias: f(&format!("{prefix}.bias"), ParamKind::Bias, &self.bias)?,
        })
    }
}

impl<P> Norm<P> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, P>) {
        f(
            &format!("{prefix}.gamma"),
            ParamKind::NormScale,
            &self.gamma,
        );
        f(&format!("{prefix}.beta"), ParamKind::NormShift, &self.beta);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitMut<'a, '_, P>) {
        f(
            &format!("{prefix}.gamma"),
            ParamKind::NormScale,
            &mut self.gamma,
        );
        f(
            &format!("{prefix}.beta"),
            ParamKind::NormShift,
            &mut self.beta,
        );
    }

    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<Norm<Q>> {
        Ok(Norm {
            gamma: f(
                &format!("{prefix}.gamma"),
                ParamKind::NormScale,
                &self.gamma,
            )?,
            beta: f(&format!("{prefix}.beta"), ParamKind::NormShift, &self.beta)?,
        })
    }
}

impl<P> EncoderLayer<P> {
    fn visit<'a>(&'a self, prefix: &str, f: Visit<'a, '_, P>) {
        self.norm1.visit(&format!("{prefix}.norm1"), f);
        for (name, p) in [
            ("wq", &self.wq),
            ("wk", &self.wk),
            ("wv", &self.wv),
            ("wo", &self.wo),
            ("wl", &self.wl),
        ] {
            f(&format!("{prefix}.attn.{name}"), ParamKind::Weight, p);
        }
        self.norm2.visit(&format!("{prefix}.norm2"), f);
        self.fc1.visit(&format!("{prefix}.mlp.fc1"), f);
        self.fc2.visit(&format!("{prefix}.mlp.fc2"), f);
    }

    fn visit_mut<'a>(&'a mut self, prefix: &str, f: VisitMut<'a, '_, P>) {
        self.norm1.visit_mut(&format!("{prefix}.norm1"), f);
        for (name, p) in [
            ("wq", &mut self.wq),
            ("wk", &mut self.wk),
            ("wv", &mut self.wv),
            ("wo", &mut self.wo),
            ("wl", &mut self.wl),
        ] {
            f(&format!("{prefix}.attn.{name}"), ParamKind::Weight, p);
        }
        self.norm2.visit_mut(&format!("{prefix}.norm2"), f);
        self.fc1.visit_mut(&format!("{prefix}.mlp.fc1"), f);
        self.fc2.visit_mut(&format!("{prefix}.mlp.fc2"), f);
    }

    fn try_map<Q>(&self, prefix: &str, f: MapFn<'_, P, Q>) -> Result<EncoderLayer<Q>> {
        let norm1 = self.norm1.try_map(&format!("{prefix}.norm1"), f)?;
        let mut attn =
            |name: &str, p: &P| f(&format!("{prefix}.attn.{name}"), ParamKind::Weight, p);
        let wq = attn("wq", &self.wq)?;
        let wk = attn("wk", &self.wk)?;
        let wv = attn("wv", &self.wv)?;
        let wo = attn("wo", &self.wo)?;
        let wl = attn("wl", &self.wl)?;
        Ok(EncoderLayer {
            norm1,
            wq,
            wk,
            wv,
            wo,
            wl,
            norm2: self.norm2.try_map(&format!("{prefix}.norm2"), f)?,
            fc1: self.fc1.try_map(&format!("{prefix}.mlp.fc1"), f)?,
            fc2: self.fc2.try_map(&format!("{prefix}.mlp.fc2"), f)?,
        })
    }
}

impl<P> TlVitParams<P> {
    /// Calls `f` on every parameter in a fixed order with its dotted name.
    pub fn visit<'a>(&'a self, f: Visit<'a, '_, P>) {
        self.patch_embed.visit("patch_embed", f);
        f("patch_pos", ParamKind::Position, &self.patch_pos);
        self.subpatch_embed.visit("subpatch_embed", f);
        f("subpatch_pos", ParamKind::Position, &self.subpatch_pos);
        for (i, l) in self.global.iter().enumerate() {
            l.visit(&format!("global.{i}"), f);
        }
        for (i, l) in self.local.iter().enumerate() {
            l.visit(&format!("local.{i}"), f);
        }
        self.fusion.visit("fusion", f);
        self.fusion_norm.visit("fusion_norm", f);
        for (i, l) in self.decoder.iter().enumerate() {
            l.visit(&format!("decoder.{i}"), f);
        }
        self.head.visit("head", f);
    }

    pub fn visit_mut<'a>(&'a mut self, f: VisitMut<'a, '_, P>) {
        self.patch_embed.visit_mut("patch_embed", f);
        f("patch_pos", ParamKind::Position, &mut self.patch_pos);
        self.subpatch_embed.visit_mut("subpatch_embed", f);
        f("subpatch_pos", ParamKind::Position, &mut self.subpatch_pos);
        for (i, l) in self.global.iter_mut().enumerate() {
            l.visit_mut(&format!("global.{i}"), f);
        }
        for (i, l) in self.local.iter_mut().enumerate() {
            l.visit_mut(&format!("local.{i}"), f);
        }
        self.fusion.visit_mut("fusion", f);
        self.fusion_norm.visit_mut("fusion_norm", f);
        for (i, l) in self.decoder.iter_mut().enumerate() {
            l.visit_mut(&format!("decoder.{i}"), f);
        }
        self.head.visit_mut("head", f);
    }

    pub fn try_map<Q>(&self, f: MapFn<'_, P, Q>) -> Result<TlVitParams<Q>> {
        let layers = |ls: &[EncoderLayer<P>], prefix: &str, f: MapFn<'_, P, Q>| {
            ls.iter()
                .enumerate()
                .map(|(i, l)| l.try_map(&format!("{prefix}.{i}"), f))
                .collect::<Result<Vec<_>>>()
        };
        Ok(TlVitParams {
            patch_embed: self.patch_embed.try_map("patch_embed", f)?,
            patch_pos: f("patch_pos", ParamKind::Position, &self.patch_pos)?,
            subpatch_embed: self.subpatch_embed.try_map("subpatch_embed", f)?,
            subpatch_pos: f("subpatch_pos", ParamKind::Position, &self.subpatch_pos)?,
            global: layers(&self.global, "global", f)?,
            local: layers(&self.local, "local", f)?,
            fusion: self.fusion.try_map("fusion", f)?,
            fusion_norm: self.fusion_norm.try_map("fusion_norm", f)?,
            decoder: layers(&self.decoder, "decoder", f)?,
            head: self.head.try_map("head", f)?,
        })
    }

    /// Infallible [`try_map`](Self::try_map).
    pub fn map<Q>(&self, mut f: impl FnMut(&str, ParamKind, &P) -> Q) -> TlVitParams<Q> {
        self.try_map(&mut |name, kind, p| Ok(f(name, kind, p)))
            .expect("infallible map")
    }

    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit(&mut |name, _, _| names.push(name.to_string()));
        names
    }

    pub fn len(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, _| n += 1);
        n
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub type Shape = Vec<usize>;

fn layer_shapes(dim: usize, heads: usize, mlp: usize) -> EncoderLayer<Shape> {
    let dv = dim / heads;
    EncoderLayer {
        norm1: Norm {
            gamma: vec![dim],
            beta: vec![dim],
        },
        wq: vec![dim, dim],
        wk: vec![dim, dim],
        wv: vec![dim, dim],
        wo: vec![heads * dv, dim],
        wl: vec![dim, dim],
        norm2: Norm {
            gamma: vec![dim],
            beta: vec![dim],
        },
        fc1: Linear {
            weight: vec![dim, mlp],
            bias: vec![mlp],
        },
        fc2: Linear {
            weight: vec![mlp, dim],
            bias: vec![dim],
        },
    }
}

impl TlVitParams<Shape> {
    /// Shape of every parameter implied by `config`.
    pub fn shapes(config: &ModelConfig) -> TlVitParams<Shape> {
        let c = config;
        let (d, dl) = (c.global_dim, c.local_dim);
        let p2 = c.patch * c.patch;
        let s2 = c.subpatch * c.subpatch;
        TlVitParams {
            patch_embed: Linear {
                weight: vec![p2, d],
                bias: vec![d],
            },
            patch_pos: vec![c.n_patch(), d],
            subpatch_embed: Linear {
                weight: vec![s2, dl],
                bias: vec![dl],
            },
            subpatch_pos: vec![c.n_subpatch(), dl],
            global: (0..c.global_layers)
                .map(|_| layer_shapes(d, c.global_heads, c.global_mlp_dim))
                .collect(),
            local: (0..c.local_layers)
                .map(|_| layer_shapes(dl, c.local_heads, c.local_mlp_dim))
                .collect(),
            fusion: Linear {
                weight: vec![c.n_subpatch() * dl, d],
                bias: vec![d],
            },
            fusion_norm: Norm {
                gamma: vec![d],
                beta: vec![d],
            },
            decoder: (0..c.decoder_layers)
                .map(|_| layer_shapes(d, c.decoder_heads, c.decoder_mlp_dim))
                .collect(),
            head: Linear {
                weight: vec![d, p2],
                bias: vec![p2],
            },
        }
    }
}

/// Standard deviation of the Gaussian used for weights and positional
/// embeddings.
pub const INIT_STD: f64 = 0.02;

impl<T: Scalar> TlVitParams<Tensor<T>> {
    /// Gaussian(0, 0.02) weights and positional embeddings, zero biases,
    /// unit norm scales, zero norm shifts.
    pub fn init(config: &ModelConfig, rng: &mut impl Rng) -> Self {
        let normal = Normal::new(0.0, INIT_STD).expect("valid sigma");
        TlVitParams::shapes(config).map(|_, kind, shape| match kind {
            ParamKind::Weight | ParamKind::Position => {
                let n = shape.iter().product();
                let data = (0..n).map(|_| T::from_f64(normal.sample(rng))).collect();
                Tensor::new(shape.clone(), data).expect("sized from shape")
            }
            ParamKind::Bias | ParamKind::NormShift => Tensor::zeros(shape.clone()),
            ParamKind::NormScale => Tensor::ones(shape.clone()),
        })
    }

    /// Checks every tensor against the shapes implied by `config`, naming the
    /// first offender.
    pub fn audit(&self, config: &ModelConfig) -> Result<()> {
        let expected = TlVitParams::shapes(config);
        let mut want = Vec::new();
        expected.visit(&mut |name, _, s| want.push((name.to_string(), s.clone())));
        let mut have = Vec::new();
        self.visit(&mut |name, _, t| have.push((name.to_string(), t.shape().to_vec())));
        if want.len() != have.len() {
            return Err(Error::Dimension(format!(
                "parameter set has {} tensors, config implies {}",
                have.len(),
                want.len()
            )));
        }
        for ((name, expected), (_, found)) in want.into_iter().zip(have) {
            if expected != found {
                return Err(Error::TensorShape {
                    name,
                    expected,
                    found,
                });
            }
        }
        Ok(())
    }

    /// Registers every tensor on `tape`.
    pub fn bind(&self, tape: &Tape<T>, requires_grad: bool) -> TlVitParams<Var<T>> {
        self.map(|_, _, t| tape.leaf(t.clone(), requires_grad))
    }

    pub fn numel(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, _, t| n += t.numel());
        n
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_matches_shapes_and_kinds() {
        let cfg = ModelConfig::tiny();
        let params = TlVitParams::<Tensor<f64>>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        params.audit(&cfg).unwrap();
        assert!(params.fusion_norm.gamma.data().iter().all(|&v| v == 1.0));
        assert!(params.head.bias.data().iter().all(|&v| v == 0.0));
        assert!(params.patch_pos.data().iter().any(|&v| v != 0.0));
    }

    #[test]
    fn names_are_unique_and_ordered() {
        let shapes = TlVitParams::shapes(&ModelConfig::tiny());
        let names = shapes.names();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
        assert_eq!(names[0], "patch_embed.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
        assert!(names.contains(&"local.0.attn.wq".to_string()));
    }

    #[test]
    fn audit_names_offending_tensor() {
        let cfg = ModelConfig::tiny();
        let mut params = TlVitParams::<Tensor<f32>>::init(&cfg, &mut ChaCha8Rng::seed_from_u64(0));
        params.local[0].wk = Tensor::zeros([3, 3]);
        let err = params.audit(&cfg).unwrap_err();
        assert!(err.to_string().contains("local.0.attn.wk"), "{err}");
    }

    #[test]
    fn only_weights_decay() {
        assert!(ParamKind::Weight.decays());
        for k in [
            ParamKind::Bias,
            ParamKind::NormScale,
            ParamKind::NormShift,
            ParamKind::Position,
        ] {
            assert!(!k.decays());
        }
    }
}
