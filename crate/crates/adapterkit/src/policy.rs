//! The top section: spatial-feature reduction, optional top-adapter MLP,
//! proprioception branch, and a single linear action head. No normalization
//! layers anywhere in the head.

use crate::adapter::AdapterSet;
use crate::backbone::{forward_features, Backbone, FeatureGeometry};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::registry::{Origin, ParameterRegistry, SectionTag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    /// Global mean over spatial positions / patches.
    MeanPool,
    /// 1x1 conv to a few channels (conv) or a shared per-patch linear (ViT),
    /// then flatten. Keeps spatial information.
    SpatialProjection,
}

impl Reduction {
    pub fn as_str(self) -> &'static str {
        match self {
            Reduction::MeanPool => "mean-pool",
            Reduction::SpatialProjection => "spatial-projection",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "mean-pool" => Some(Reduction::MeanPool),
            "spatial-projection" => Some(Reduction::SpatialProjection),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HeadConfig {
    pub reduction: Reduction,
    /// Output channels of the conv spatial projection.
    pub conv_channels: usize,
    /// Per-patch projection width for transformer features.
    pub vit_proj_dim: usize,
    /// Two 256-unit relu layers between features and the action map.
    pub top_adapter: bool,
    /// Encode 4 proprioceptive floats through one 256-unit linear layer.
    pub proprio: bool,
    pub action_dim: usize,
}

impl HeadConfig {
    pub fn new(action_dim: usize) -> Self {
        HeadConfig {
            reduction: Reduction::SpatialProjection,
            conv_channels: 41,
            vit_proj_dim: 20,
            top_adapter: true,
            proprio: false,
            action_dim,
        }
    }

    pub const MLP_WIDTH: usize = 256;
    pub const PROPRIO_DIM: usize = 4;

    /// Flattened feature length after reduction.
    pub fn flat_len(&self, geometry: FeatureGeometry) -> usize {
        match (self.reduction, geometry) {
            (Reduction::MeanPool, FeatureGeometry::Spatial { channels, .. }) => channels,
            (Reduction::MeanPool, FeatureGeometry::Tokens { dim, .. }) => dim,
            (Reduction::SpatialProjection, FeatureGeometry::Spatial { side, .. }) => {
                self.conv_channels * side * side
            }
            (Reduction::SpatialProjection, FeatureGeometry::Tokens { patches, .. }) => {
                self.vit_proj_dim * patches
            }
        }
    }
}

/// Register head parameters (origin = head, section = top, always
/// trainable). Weights use truncated-normal init, biases start at zero.
pub fn build_head<E: Element>(
    geometry: FeatureGeometry,
    cfg: &HeadConfig,
    registry: &mut ParameterRegistry<E>,
    seed: u64,
) -> Result<()> {
    let mut init = crate::backbone::Init::new(seed);
    let mut weight = |reg: &mut ParameterRegistry<E>, name: &str, shape: &[usize]| -> Result<()> {
        reg.register(name, init.weight(shape), SectionTag::Top, Origin::Head, true)
    };
    let zeros = |reg: &mut ParameterRegistry<E>, name: &str, shape: &[usize]| -> Result<()> {
        reg.register(name, Tensor::zeros(shape), SectionTag::Top, Origin::Head, true)
    };

    if cfg.reduction == Reduction::SpatialProjection {
        match geometry {
            FeatureGeometry::Spatial { channels, .. } => {
                weight(registry, "head.proj.weight", &[cfg.conv_channels, channels, 1, 1])?;
                zeros(registry, "head.proj.bias", &[cfg.conv_channels])?;
            }
            FeatureGeometry::Tokens { dim, .. } => {
                weight(registry, "head.proj.weight", &[dim, cfg.vit_proj_dim])?;
                zeros(registry, "head.proj.bias", &[cfg.vit_proj_dim])?;
            }
        }
    }
    if cfg.proprio {
        weight(registry, "head.proprio.weight", &[HeadConfig::PROPRIO_DIM, HeadConfig::MLP_WIDTH])?;
        zeros(registry, "head.proprio.bias", &[HeadConfig::MLP_WIDTH])?;
    }
    let mut in_dim = cfg.flat_len(geometry);
    if cfg.proprio {
        in_dim += HeadConfig::MLP_WIDTH;
    }
    if cfg.top_adapter {
        weight(registry, "head.mlp1.weight", &[in_dim, HeadConfig::MLP_WIDTH])?;
        zeros(registry, "head.mlp1.bias", &[HeadConfig::MLP_WIDTH])?;
        weight(registry, "head.mlp2.weight", &[HeadConfig::MLP_WIDTH, HeadConfig::MLP_WIDTH])?;
        zeros(registry, "head.mlp2.bias", &[HeadConfig::MLP_WIDTH])?;
        in_dim = HeadConfig::MLP_WIDTH;
    }
    weight(registry, "head.out.weight", &[in_dim, cfg.action_dim])?;
    zeros(registry, "head.out.bias", &[cfg.action_dim])
}

/// Reduce middle-section features to a flat vector per batch element.
pub fn reduce_features<E: Element>(
    g: &mut Graph<E>,
    features: NodeId,
    cfg: &HeadConfig,
    geometry: FeatureGeometry,
) -> Result<NodeId> {
    let shape = g.value(features).shape().to_vec();
    let mismatch = |reason: String| Error::BadShape {
        op: "reduce_features",
        shape: shape.clone(),
        reason,
    };
    match geometry {
        FeatureGeometry::Spatial { channels, side } => {
            if shape.len() != 4 || shape[1] != channels || shape[2] != side || shape[3] != side {
                return Err(mismatch(format!(
                    "expected [batch, {channels}, {side}, {side}] spatial features"
                )));
            }
            match cfg.reduction {
                Reduction::MeanPool => {
                    let pooled = g.mean_pool(features, side, side)?;
                    g.flatten(pooled, 1)
                }
                Reduction::SpatialProjection => {
                    let w = g.param("head.proj.weight")?;
                    let b = g.param("head.proj.bias")?;
                    let projected = g.conv2d(features, w, Some(b), 1, 0)?;
                    g.flatten(projected, 1)
                }
            }
        }
        FeatureGeometry::Tokens { patches, dim } => {
            if shape.len() != 3 || shape[1] != patches || shape[2] != dim {
                return Err(mismatch(format!(
                    "expected [batch, {patches}, {dim}] patch features"
                )));
            }
            match cfg.reduction {
                Reduction::MeanPool => {
                    // Mean over patches: x^T ones / p.
                    let ones = g.input(Tensor::full(&[patches, 1], E::ONE));
                    let swapped = g.transpose(features, 1, 2)?; // [B, d, p]
                    let summed = g.matmul(swapped, ones)?; // [B, d, 1]
                    let mean = g.scalar_mul(summed, 1.0 / patches as f64)?;
                    g.flatten(mean, 1)
                }
                Reduction::SpatialProjection => {
                    let w = g.param("head.proj.weight")?;
                    let b = g.param("head.proj.bias")?;
                    let per_patch = g.matmul(features, w)?; // [B, p, k]
                    let per_patch = g.bias_add(per_patch, b)?;
                    g.flatten(per_patch, 1)
                }
            }
        }
    }
}

/// Flat features (plus optional proprioception) to an unclipped action
/// vector; the environment clips to its action box.
pub fn head_forward<E: Element>(
    g: &mut Graph<E>,
    flat: NodeId,
    proprio: Option<NodeId>,
    cfg: &HeadConfig,
) -> Result<NodeId> {
    if proprio.is_some() != cfg.proprio {
        return Err(Error::Config(if cfg.proprio {
            "head built with proprio but none supplied".into()
        } else {
            "proprio supplied to a head built without it".into()
        }));
    }
    let mut x = flat;
    if let Some(p) = proprio {
        let w = g.param("head.proprio.weight")?;
        let b = g.param("head.proprio.bias")?;
        let enc = g.matmul(p, w)?;
        let enc = g.bias_add(enc, b)?;
        x = g.concat(&[x, enc], 1)?;
    }
    if cfg.top_adapter {
        for layer in ["head.mlp1", "head.mlp2"] {
            let w = g.param(&format!("{layer}.weight"))?;
            let b = g.param(&format!("{layer}.bias"))?;
            x = g.matmul(x, w)?;
            x = g.bias_add(x, b)?;
            x = g.relu(x)?;
        }
    }
    let w = g.param("head.out.weight")?;
    let b = g.param("head.out.bias")?;
    let y = g.matmul(x, w)?;
    g.bias_add(y, b)
}

/// A complete policy: backbone, injected adapters, and head, sharing one
/// registry.
#[derive(Debug, Clone)]
pub struct PolicyModel<E: Element> {
    pub backbone: Backbone,
    pub adapters: AdapterSet,
    pub head: HeadConfig,
    pub registry: ParameterRegistry<E>,
}

impl<E: Element> PolicyModel<E> {
    /// Images (and optional proprioception) to actions, on a caller-owned
    /// graph so the trainer can run backward on the result.
    pub fn forward(
        &self,
        g: &mut Graph<E>,
        images: NodeId,
        proprio: Option<NodeId>,
    ) -> Result<NodeId> {
        let feats = forward_features(&self.backbone, g, images, &self.adapters)?;
        let flat = reduce_features(g, feats, &self.head, self.backbone.feature_geometry())?;
        head_forward(g, flat, proprio, &self.head)
    }

    /// Single-observation inference.
    pub fn act(&self, image: &Tensor<E>, proprio: Option<&[E]>) -> Result<Vec<E>> {
        let mut g = Graph::inference(&self.registry);
        let batched = image.reshaped(&[1, image.shape()[0], image.shape()[1], image.shape()[2]])?;
        let img = g.input(batched);
        let prop = match proprio {
            Some(p) => Some(g.input(Tensor::from_vec(&[1, p.len()], p.to_vec())?)),
            None => None,
        };
        let action = self.forward(&mut g, img, prop)?;
        Ok(g.value(action).data().to_vec())
    }
}
