//! Network architectures: tanh MLPs and Fourier-feature networks.
//!
//! A Fourier network maps the input through one or more random embeddings
//! `x ↦ [a⊙cos(Bx); a⊙sin(Bx)]`, passes each embedding through a shared
//! tanh feature extractor, concatenates the extracted features, and applies
//! a tanh dense layer followed by a linear output.

use std::sync::Arc;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grad::{Expr, ExprBuilder, NodeId, ParameterStore};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("input has dimension {got}, embedding expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub output_bias: bool,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden: Vec<usize>) -> Self {
        Self {
            input_dim,
            hidden,
            activation: Activation::Tanh,
            output_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierEmbeddingSpec {
    /// Standard deviation of the wavenumber entries.
    pub sigma: f64,
    /// Number of wavenumbers `m`; the embedding has `2m` components.
    pub features: usize,
    /// Per-feature amplitudes `a`; all ones when absent.
    #[serde(default)]
    pub scale: Option<Vec<f64>>,
}

impl FourierEmbeddingSpec {
    pub fn new(sigma: f64, features: usize) -> Self {
        Self {
            sigma,
            features,
            scale: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierNetSpec {
    pub input_dim: usize,
    pub embeddings: Vec<FourierEmbeddingSpec>,
    /// Hidden widths of the shared extractor; its input width is `2m`.
    pub extractor_hidden: Vec<usize>,
    pub head_width: usize,
    #[serde(default = "default_true")]
    pub output_bias: bool,
}

impl FourierNetSpec {
    /// Embeddings sized to the first extractor layer (`2m` equals its width).
    pub fn new(input_dim: usize, sigmas: &[f64], extractor_hidden: Vec<usize>, head_width: usize) -> Self {
        let m = extractor_hidden.first().copied().unwrap_or(0) / 2;
        Self {
            input_dim,
            embeddings: sigmas.iter().map(|&s| FourierEmbeddingSpec::new(s, m)).collect(),
            extractor_hidden,
            head_width,
            output_bias: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum NetworkSpec {
    Mlp(MlpSpec),
    Fourier(FourierNetSpec),
}

impl NetworkSpec {
    pub fn input_dim(&self) -> usize {
        match self {
            NetworkSpec::Mlp(s) => s.input_dim,
            NetworkSpec::Fourier(s) => s.input_dim,
        }
    }

    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidSpec(m));
        match self {
            NetworkSpec::Mlp(s) => {
                if s.input_dim == 0 {
                    return bad("input_dim must be positive".into());
                }
                if s.hidden.is_empty() || s.hidden.contains(&0) {
                    return bad(format!("hidden widths must be non-empty and positive, got {:?}", s.hidden));
                }
            }
            NetworkSpec::Fourier(s) => {
                if s.input_dim == 0 {
                    return bad("input_dim must be positive".into());
                }
                if s.embeddings.is_empty() {
                    return bad("at least one embedding is required".into());
                }
                if s.extractor_hidden.is_empty() || s.extractor_hidden.contains(&0) {
                    return bad(format!(
                        "extractor widths must be non-empty and positive, got {:?}",
                        s.extractor_hidden
                    ));
                }
                if s.head_width == 0 {
                    return bad("head_width must be positive".into());
                }
                let m = s.embeddings[0].features;
                for (i, e) in s.embeddings.iter().enumerate() {
                    if !(e.sigma.is_finite() && e.sigma > 0.0) {
                        return bad(format!("embedding {i}: sigma must be positive, got {}", e.sigma));
                    }
                    if e.features == 0 {
                        return bad(format!("embedding {i}: features must be positive"));
                    }
                    if e.features != m {
                        return bad(format!(
                            "embedding {i}: {} features, but the shared extractor takes {m}",
                            e.features
                        ));
                    }
                    if let Some(a) = &e.scale {
                        if a.len() != e.features || a.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                            return bad(format!("embedding {i}: scale must hold {} positive values", e.features));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Number of trainable parameters (wavenumber matrices excluded).
    pub fn parameter_count(&self) -> usize {
        let dense = |fan_in: usize, widths: &[usize]| {
            let mut total = 0;
            let mut prev = fan_in;
            for &w in widths {
                total += w * prev + w;
                prev = w;
            }
            (total, prev)
        };
        match self {
            NetworkSpec::Mlp(s) => {
                let (hidden, last) = dense(s.input_dim, &s.hidden);
                hidden + last + usize::from(s.output_bias)
            }
            NetworkSpec::Fourier(s) => {
                let m = s.embeddings[0].features;
                let (extractor, last) = dense(2 * m, &s.extractor_hidden);
                let head = s.head_width * last * s.embeddings.len() + s.head_width;
                extractor + head + s.head_width + usize::from(s.output_bias)
            }
        }
    }
}

/// A sampled embedding: the wavenumber matrix `B` (`m × n`) is fixed after
/// initialisation.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierEmbedding {
    pub spec: FourierEmbeddingSpec,
    pub wavenumbers: Array2<f64>,
}

impl FourierEmbedding {
    pub fn amplitudes(&self) -> Vec<f64> {
        self.spec.scale.clone().unwrap_or_else(|| vec![1.0; self.spec.features])
    }
}

/// `[a⊙cos(Bx); a⊙sin(Bx)]`.
pub fn embed(x: &[f64], emb: &FourierEmbedding) -> Result<Vec<f64>, NetError> {
    let (m, n) = emb.wavenumbers.dim();
    if x.len() != n {
        return Err(NetError::DimensionMismatch {
            expected: n,
            got: x.len(),
        });
    }
    let a = emb.amplitudes();
    let phases: Vec<f64> = (0..m)
        .map(|j| emb.wavenumbers.row(j).iter().zip(x).map(|(b, xi)| b * xi).sum())
        .collect();
    let mut out = Vec::with_capacity(2 * m);
    out.extend(phases.iter().zip(&a).map(|(p, aj)| aj * p.cos()));
    out.extend(phases.iter().zip(&a).map(|(p, aj)| aj * p.sin()));
    Ok(out)
}

/// A network graph together with its fixed (non-trainable) data.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    expr: Expr,
    embeddings: Vec<FourierEmbedding>,
}

/// Serializable form of a [`Network`] (parameters are stored separately).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSnapshot {
    pub spec: NetworkSpec,
    /// One row-major `m × n` matrix per embedding.
    pub wavenumbers: Vec<Vec<f64>>,
}

impl Network {
    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn expr(&self) -> &Expr {
        &self.expr
    }

    pub fn embeddings(&self) -> &[FourierEmbedding] {
        &self.embeddings
    }

    pub fn snapshot(&self) -> NetworkSnapshot {
        NetworkSnapshot {
            spec: self.spec.clone(),
            wavenumbers: self.embeddings.iter().map(|e| e.wavenumbers.iter().copied().collect()).collect(),
        }
    }

    pub fn from_snapshot(snap: &NetworkSnapshot) -> Result<Self, NetError> {
        snap.spec.validate()?;
        let embeddings = match &snap.spec {
            NetworkSpec::Mlp(_) => Vec::new(),
            NetworkSpec::Fourier(s) => {
                if snap.wavenumbers.len() != s.embeddings.len() {
                    return Err(NetError::InvalidSpec("wavenumber count does not match embeddings".into()));
                }
                s.embeddings
                    .iter()
                    .zip(&snap.wavenumbers)
                    .map(|(e, b)| {
                        Array2::from_shape_vec((e.features, s.input_dim), b.clone())
                            .map(|wavenumbers| FourierEmbedding {
                                spec: e.clone(),
                                wavenumbers,
                            })
                            .map_err(|err| NetError::InvalidSpec(err.to_string()))
                    })
                    .collect::<Result<_, _>>()?
            }
        };
        let mut store = ParameterStore::new();
        let expr = build_graph(&snap.spec, &embeddings, &mut store, &mut |n| vec![0.0; n.0 * n.1]);
        Ok(Self {
            spec: snap.spec.clone(),
            expr,
            embeddings,
        })
    }
}

/// Builds the network graph and initial parameters for `seed`.
///
/// Weights follow a Glorot normal law (variance `2/(fan_in+fan_out)`),
/// biases start at zero, and wavenumbers are drawn from `N(0, σ²)`; all
/// draws come from one ChaCha stream, wavenumbers first.
pub fn init_network(spec: &NetworkSpec, seed: u64) -> Result<(Network, ParameterStore), NetError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let embeddings = match spec {
        NetworkSpec::Mlp(_) => Vec::new(),
        NetworkSpec::Fourier(s) => s
            .embeddings
            .iter()
            .map(|e| {
                let normal = Normal::new(0.0, e.sigma).map_err(|err| NetError::InvalidSpec(err.to_string()))?;
                let wavenumbers = Array2::from_shape_simple_fn((e.features, s.input_dim), || normal.sample(&mut rng));
                Ok(FourierEmbedding {
                    spec: e.clone(),
                    wavenumbers,
                })
            })
            .collect::<Result<Vec<_>, NetError>>()?,
    };
    let mut store = ParameterStore::new();
    let mut weights = |(out, fan_in): (usize, usize)| {
        let std = (2.0 / (fan_in + out) as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite standard deviation");
        (0..out * fan_in).map(|_| normal.sample(&mut rng)).collect()
    };
    let expr = build_graph(spec, &embeddings, &mut store, &mut weights);
    debug_assert_eq!(store.len(), spec.parameter_count());
    Ok((
        Network {
            spec: spec.clone(),
            expr,
            embeddings,
        },
        store,
    ))
}

struct GraphCtx<'a, 'b> {
    b: ExprBuilder,
    store: &'a mut ParameterStore,
    weights: &'b mut dyn FnMut((usize, usize)) -> Vec<f64>,
}

impl GraphCtx<'_, '_> {
    fn dense(&mut self, name: &str, input: NodeId, out: usize, bias: bool) -> NodeId {
        let fan_in = self.b.width(input);
        let w = (self.weights)((out, fan_in));
        let wo = self.store.push_slice(format!("{name}.weight"), (out, fan_in), &w);
        let bo = bias.then(|| self.store.push_slice(format!("{name}.bias"), (out, 1), &vec![0.0; out]));
        self.b.affine(input, out, wo, bo)
    }
}

/// Layers are laid out in evaluation order: hidden/extractor layers, then
/// the dense head, then the output layer.
fn build_graph(
    spec: &NetworkSpec,
    embeddings: &[FourierEmbedding],
    store: &mut ParameterStore,
    weights: &mut dyn FnMut((usize, usize)) -> Vec<f64>,
) -> Expr {
    let mut ctx = GraphCtx {
        b: ExprBuilder::new(spec.input_dim()),
        store,
        weights,
    };
    let out = match spec {
        NetworkSpec::Mlp(s) => {
            let mut h = ctx.b.input();
            for (l, &w) in s.hidden.iter().enumerate() {
                let z = ctx.dense(&format!("hidden.{l}"), h, w, true);
                h = ctx.b.tanh(z);
            }
            ctx.dense("output", h, 1, s.output_bias)
        }
        NetworkSpec::Fourier(s) => {
            let x = ctx.b.input();
            let embedded: Vec<NodeId> = embeddings
                .iter()
                .map(|e| {
                    let m = e.spec.features;
                    let matrix = Arc::new(e.wavenumbers.iter().copied().collect::<Vec<_>>());
                    let phase = ctx.b.fixed_linear(x, m, matrix);
                    let mut cos = ctx.b.cos(phase);
                    let mut sin = ctx.b.sin(phase);
                    if let Some(a) = &e.spec.scale {
                        let a = ctx.b.constant_vec(a.clone());
                        cos = ctx.b.mul(cos, a);
                        sin = ctx.b.mul(sin, a);
                    }
                    ctx.b.concat(&[cos, sin])
                })
                .collect();
            // The extractor's parameters are allocated once and shared.
            let mut layer_offsets = Vec::new();
            let mut fan_in = 2 * embeddings[0].spec.features;
            for (l, &w) in s.extractor_hidden.iter().enumerate() {
                let init = (ctx.weights)((w, fan_in));
                let wo = ctx.store.push_slice(format!("extractor.{l}.weight"), (w, fan_in), &init);
                let bo = ctx.store.push_slice(format!("extractor.{l}.bias"), (w, 1), &vec![0.0; w]);
                layer_offsets.push((w, wo, bo));
                fan_in = w;
            }
            let features: Vec<NodeId> = embedded
                .into_iter()
                .map(|mut h| {
                    for &(w, wo, bo) in &layer_offsets {
                        let z = ctx.b.affine(h, w, wo, Some(bo));
                        h = ctx.b.tanh(z);
                    }
                    h
                })
                .collect();
            let joined = if features.len() == 1 {
                features[0]
            } else {
                ctx.b.concat(&features)
            };
            let z = ctx.dense("head", joined, s.head_width, true);
            let h = ctx.b.tanh(z);
            ctx.dense("output", h, 1, s.output_bias)
        }
    };
    ctx.b.build(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grad::evaluate;

    fn fourier_spec(sigmas: &[f64], m: usize) -> NetworkSpec {
        NetworkSpec::Fourier(FourierNetSpec {
            input_dim: 2,
            embeddings: sigmas.iter().map(|&s| FourierEmbeddingSpec::new(s, m)).collect(),
            extractor_hidden: vec![16, 12],
            head_width: 10,
            output_bias: true,
        })
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let spec = fourier_spec(&[1.0, 5.0], 8);
        let (n1, p1) = init_network(&spec, 42).unwrap();
        let (n2, p2) = init_network(&spec, 42).unwrap();
        assert!(p1.values().iter().zip(p2.values()).all(|(a, b)| a.to_bits() == b.to_bits()));
        assert_eq!(n1.embeddings(), n2.embeddings());
        let (_, p3) = init_network(&spec, 43).unwrap();
        assert_ne!(p1.values(), p3.values());
    }

    #[test]
    fn glorot_variance_of_wide_layer() {
        let spec = NetworkSpec::Mlp(MlpSpec::new(200, vec![200]));
        let (_, store) = init_network(&spec, 9).unwrap();
        let w = &store.values()[store.slice("hidden.0.weight").unwrap().range()];
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let expected = 2.0 / 400.0;
        assert!((var / expected - 1.0).abs() < 0.2, "variance {var} vs {expected}");
        let b = &store.values()[store.slice("hidden.0.bias").unwrap().range()];
        assert!(b.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_sized_fourier_shapes() {
        let spec = NetworkSpec::Fourier(FourierNetSpec::new(2, &[1.0], vec![200, 200, 200], 200));
        let (net, _) = init_network(&spec, 0).unwrap();
        let emb = &net.embeddings()[0];
        assert_eq!(emb.wavenumbers.dim(), (100, 2));
        assert_eq!(embed(&[0.3, 0.4], emb).unwrap().len(), 200);
    }

    #[test]
    fn zero_wavenumbers_embed_to_ones_then_zeros() {
        let emb = FourierEmbedding {
            spec: FourierEmbeddingSpec::new(1.0, 3),
            wavenumbers: Array2::zeros((3, 2)),
        };
        assert_eq!(embed(&[0.7, -0.2], &emb).unwrap(), vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn origin_embeds_to_ones_then_zeros() {
        let spec = fourier_spec(&[3.0], 4);
        let (net, _) = init_network(&spec, 5).unwrap();
        assert_eq!(
            embed(&[0.0, 0.0], &net.embeddings()[0]).unwrap(),
            vec![1.0, 1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn quarter_turn_embedding_by_hand() {
        let emb = FourierEmbedding {
            spec: FourierEmbeddingSpec::new(1.0, 1),
            wavenumbers: Array2::from_shape_vec((1, 2), vec![2.0 * std::f64::consts::PI, 0.0]).unwrap(),
        };
        let e = embed(&[0.25, 0.9], &emb).unwrap();
        assert!(e[0].abs() < 1e-15);
        assert_eq!(e[1], 1.0);
        assert!(matches!(embed(&[0.25], &emb), Err(NetError::DimensionMismatch { .. })));
    }

    #[test]
    fn embedding_is_periodic_and_bounded() {
        let spec = NetworkSpec::Fourier(FourierNetSpec {
            input_dim: 2,
            embeddings: vec![FourierEmbeddingSpec {
                sigma: 2.0,
                features: 1,
                scale: Some(vec![0.5]),
            }],
            extractor_hidden: vec![2],
            head_width: 2,
            output_bias: true,
        });
        let (net, _) = init_network(&spec, 17).unwrap();
        let emb = &net.embeddings()[0];
        let b = emb.wavenumbers.row(0).to_vec();
        let norm2 = b[0] * b[0] + b[1] * b[1];
        // B·δ = 2π·3 for δ = 6π·b/‖b‖².
        let k = 3.0;
        let delta: Vec<f64> = b.iter().map(|bi| 2.0 * std::f64::consts::PI * k * bi / norm2).collect();
        let x = [0.31, -0.77];
        let shifted = [x[0] + delta[0], x[1] + delta[1]];
        let (e0, e1) = (embed(&x, emb).unwrap(), embed(&shifted, emb).unwrap());
        for (a, c) in e0.iter().zip(&e1) {
            assert!((a - c).abs() < 1e-12);
            assert!(a.abs() <= 0.5);
        }
    }

    #[test]
    fn parameter_count_excludes_wavenumbers() {
        let spec = fourier_spec(&[1.0, 5.0], 8);
        let (net, store) = init_network(&spec, 1).unwrap();
        // extractor 16·16+16 + 12·16+12, head 10·24+10, output 10+1
        assert_eq!(store.len(), 272 + 204 + 250 + 11);
        assert_eq!(spec.parameter_count(), store.len());
        store.check_layout().unwrap();
        assert_eq!(net.expr().param_extent(), store.len());
    }

    #[test]
    fn snapshot_rebuilds_the_same_function() {
        let spec = fourier_spec(&[1.0, 5.0], 8);
        let (net, store) = init_network(&spec, 3).unwrap();
        let json = serde_json::to_string(&net.snapshot()).unwrap();
        let back = Network::from_snapshot(&serde_json::from_str(&json).unwrap()).unwrap();
        let x = [0.2, 0.6];
        assert_eq!(
            evaluate(net.expr(), &x, &store).unwrap().to_bits(),
            evaluate(back.expr(), &x, &store).unwrap().to_bits()
        );
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let mut s = FourierNetSpec::new(2, &[1.0], vec![8], 4);
        s.embeddings[0].sigma = -1.0;
        assert!(init_network(&NetworkSpec::Fourier(s), 0).is_err());
        assert!(init_network(&NetworkSpec::Mlp(MlpSpec::new(2, vec![])), 0).is_err());
        assert!(init_network(&NetworkSpec::Mlp(MlpSpec::new(2, vec![4, 0])), 0).is_err());
        let mut s = FourierNetSpec::new(2, &[1.0, 2.0], vec![8], 4);
        s.embeddings[1].features = 3;
        assert!(init_network(&NetworkSpec::Fourier(s), 0).is_err());
    }

    #[test]
    fn spec_serializes_with_kind_tag() {
        let spec = NetworkSpec::Mlp(MlpSpec::new(2, vec![64, 64]));
        let json = serde_json::to_value(&spec).unwrap();
        assert_eq!(json["kind"], "mlp");
        let back: NetworkSpec = serde_json::from_value(json).unwrap();
        assert_eq!(back, spec);
    }
}
