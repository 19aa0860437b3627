//! Toy convolutional and transformer backbones partitioned into
//! bottom/middle/top sections.
//!
//! Both backbones consume 64x64 RGB images in [0, 1]. The convolutional one
//! produces a [128, 4, 4] spatial map, the transformer 64 patch tokens of
//! width 64. Adapter injection happens through [`SiteHooks`], so the
//! backbone code stays ignorant of what an adapter is.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::registry::{Origin, ParameterRegistry, SectionTag};
use crate::tensor::Tensor;

/// A place in the forward pass where an adapter may attach.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SiteId {
    /// Output of the stem (conv) or patch embedding + positions (ViT).
    Stem,
    /// Output of the first convolution (plus its norm) of a block group.
    ConvGroupFirst(usize),
    /// Output of the final block group.
    ConvGroupEnd(usize),
    /// Residual stream around one whole transformer block.
    VitBlock(usize),
}

impl std::fmt::Display for SiteId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SiteId::Stem => write!(f, "stem"),
            SiteId::ConvGroupFirst(g) => write!(f, "g{g}.first"),
            SiteId::ConvGroupEnd(g) => write!(f, "g{g}.end"),
            SiteId::VitBlock(i) => write!(f, "blk{i}"),
        }
    }
}

impl SiteId {
    pub fn parse(s: &str) -> Option<SiteId> {
        if s == "stem" {
            return Some(SiteId::Stem);
        }
        if let Some(i) = s.strip_prefix("blk") {
            return i.parse().ok().map(SiteId::VitBlock);
        }
        if let Some(rest) = s.strip_prefix('g') {
            if let Some(g) = rest.strip_suffix(".first") {
                return g.parse().ok().map(SiteId::ConvGroupFirst);
            }
            if let Some(g) = rest.strip_suffix(".end") {
                return g.parse().ok().map(SiteId::ConvGroupEnd);
            }
        }
        None
    }
}

/// Callbacks a forward pass offers to adapter machinery. The default
/// implementation is a no-op, which reproduces the plain backbone.
pub trait SiteHooks<E: Element> {
    /// Rewrite a site's output. `input` is the tensor entering the site's
    /// layer, `output` the layer's raw result; the return value replaces
    /// `output` in the stream.
    fn rewrite(
        &self,
        _g: &mut Graph<E>,
        _site: SiteId,
        _input: NodeId,
        _output: NodeId,
    ) -> Result<NodeId> {
        Ok(_output)
    }

    /// Adjust normalization scale/offset nodes for the norm layer with the
    /// given registry-name prefix.
    fn norm_params(
        &self,
        _g: &mut Graph<E>,
        _norm: &str,
        scale: NodeId,
        offset: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        Ok((scale, offset))
    }
}

/// Hooks that change nothing.
pub struct NoHooks;
impl<E: Element> SiteHooks<E> for NoHooks {}

// ---- specs -----------------------------------------------------------------

/// ResNet-style backbone: one stem conv, then residual block groups with a
/// stride-2 downsample entering each group after the first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvBackboneSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub stem_channels: usize,
    pub group_widths: Vec<usize>,
    pub blocks_per_group: usize,
}

impl Default for ConvBackboneSpec {
    fn default() -> Self {
        ConvBackboneSpec {
            in_channels: 3,
            image_size: 64,
            stem_channels: 16,
            group_widths: vec![16, 32, 64, 128],
            blocks_per_group: 2,
        }
    }
}

impl ConvBackboneSpec {
    /// Spatial side of the middle-section output (64 -> 32 -> 32 -> 16 -> 8 -> 4).
    pub fn out_spatial(&self) -> usize {
        let after_stem = self.image_size / 2;
        after_stem >> (self.group_widths.len() - 1)
    }

    pub fn out_channels(&self) -> usize {
        *self.group_widths.last().unwrap()
    }
}

/// Pre-norm vision transformer over 8x8 patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VitBackboneSpec {
    pub in_channels: usize,
    pub image_size: usize,
    pub patch_size: usize,
    pub dim: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
}

impl Default for VitBackboneSpec {
    fn default() -> Self {
        VitBackboneSpec {
            in_channels: 3,
            image_size: 64,
            patch_size: 8,
            dim: 64,
            depth: 12,
            heads: 4,
            mlp_ratio: 4,
        }
    }
}

impl VitBackboneSpec {
    pub fn patches(&self) -> usize {
        let side = self.image_size / self.patch_size;
        side * side
    }
}

/// Which architecture a model (or bundle, or experiment) uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackboneKind {
    Conv,
    Vit,
}

impl BackboneKind {
    pub fn as_str(self) -> &'static str {
        match self {
            BackboneKind::Conv => "conv",
            BackboneKind::Vit => "vit",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "conv" => Some(BackboneKind::Conv),
            "vit" => Some(BackboneKind::Vit),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Backbone {
    Conv(ConvBackboneSpec),
    Vit(VitBackboneSpec),
}

/// Shape of the middle-section output: either channels x spatial, or
/// patches x features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureGeometry {
    Spatial { channels: usize, side: usize },
    Tokens { patches: usize, dim: usize },
}

impl Backbone {
    pub fn kind(&self) -> BackboneKind {
        match self {
            Backbone::Conv(_) => BackboneKind::Conv,
            Backbone::Vit(_) => BackboneKind::Vit,
        }
    }

    pub fn feature_geometry(&self) -> FeatureGeometry {
        match self {
            Backbone::Conv(spec) => FeatureGeometry::Spatial {
                channels: spec.out_channels(),
                side: spec.out_spatial(),
            },
            Backbone::Vit(spec) => FeatureGeometry::Tokens {
                patches: spec.patches(),
                dim: spec.dim,
            },
        }
    }

    /// Ordered middle-section injection sites.
    ///
    /// Transformers of depth `L` use `{0, 1, L/2-1, L/2, L-2, L-1}`; conv
    /// backbones use the first convolution of every group but the last,
    /// plus the end of the last group.
    pub fn middle_sites(&self) -> Result<Vec<SiteId>> {
        match self {
            Backbone::Conv(spec) => {
                let n = spec.group_widths.len();
                let mut sites: Vec<SiteId> =
                    (0..n - 1).map(SiteId::ConvGroupFirst).collect();
                sites.push(SiteId::ConvGroupEnd(n - 1));
                Ok(sites)
            }
            Backbone::Vit(spec) => {
                let l = spec.depth;
                if l < 6 {
                    return Err(Error::DepthTooShallow(l));
                }
                Ok(vec![
                    SiteId::VitBlock(0),
                    SiteId::VitBlock(1),
                    SiteId::VitBlock(l / 2 - 1),
                    SiteId::VitBlock(l / 2),
                    SiteId::VitBlock(l - 2),
                    SiteId::VitBlock(l - 1),
                ])
            }
        }
    }

    /// Feature width of the tensor flowing through a site, for adapter
    /// sizing. The bottom site is the stem/patch-embed output.
    pub fn site_features(&self, site: SiteId) -> Result<usize> {
        let invalid = |reason: &str| Error::InvalidSite {
            site: site.to_string(),
            reason: reason.to_string(),
        };
        match (self, site) {
            (Backbone::Conv(spec), SiteId::Stem) => Ok(spec.stem_channels),
            (Backbone::Conv(spec), SiteId::ConvGroupFirst(g)) => spec
                .group_widths
                .get(g)
                .copied()
                .ok_or_else(|| invalid("group index out of range")),
            (Backbone::Conv(spec), SiteId::ConvGroupEnd(g)) => {
                if g + 1 == spec.group_widths.len() {
                    Ok(spec.group_widths[g])
                } else {
                    Err(invalid("only the last group has an end site"))
                }
            }
            (Backbone::Vit(spec), SiteId::Stem) => Ok(spec.dim),
            (Backbone::Vit(spec), SiteId::VitBlock(i)) => {
                if i < spec.depth {
                    Ok(spec.dim)
                } else {
                    Err(invalid("block index out of range"))
                }
            }
            _ => Err(invalid("site does not exist on this architecture")),
        }
    }

    /// Whether a parallel adapter across this site is shape-compatible
    /// (site input and output agree). Only whole transformer blocks are.
    pub fn site_supports_parallel(&self, site: SiteId) -> bool {
        matches!((self, site), (Backbone::Vit(_), SiteId::VitBlock(_)))
    }

    /// Registry-name prefixes of middle-section normalization layers
    /// eligible for norm-offset deltas (transformer models).
    pub fn middle_norm_layers(&self) -> Vec<String> {
        match self {
            Backbone::Conv(_) => Vec::new(),
            Backbone::Vit(spec) => {
                let mut names = Vec::new();
                for i in 0..spec.depth {
                    names.push(format!("blk{i}.ln1"));
                    names.push(format!("blk{i}.ln2"));
                }
                names.push("final_ln".to_string());
                names
            }
        }
    }
}

// ---- deterministic initialization -------------------------------------------

/// Weight initializer: truncated normal (resampled beyond two standard
/// deviations) for weights, zeros for biases, ones for norm scales.
pub struct Init {
    rng: ChaCha8Rng,
    std: f64,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        use rand::SeedableRng;
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
            std: 0.02,
        }
    }

    fn trunc_normal(&mut self) -> f64 {
        loop {
            let v: f64 = self.rng.sample::<f64, _>(StandardNormal) * self.std;
            if v.abs() <= 2.0 * self.std {
                return v;
            }
        }
    }

    pub fn weight<E: Element>(&mut self, shape: &[usize]) -> Tensor<E> {
        Tensor::from_fn(shape, |_| E::from_f64(self.trunc_normal()))
    }
}

fn reg_weight<E: Element>(
    reg: &mut ParameterRegistry<E>,
    init: &mut Init,
    name: &str,
    shape: &[usize],
    section: SectionTag,
) -> Result<()> {
    reg.register(name, init.weight(shape), section, Origin::Base, true)
}

fn reg_zeros<E: Element>(
    reg: &mut ParameterRegistry<E>,
    name: &str,
    shape: &[usize],
    section: SectionTag,
) -> Result<()> {
    reg.register(name, Tensor::zeros(shape), section, Origin::Base, true)
}

fn reg_norm<E: Element>(
    reg: &mut ParameterRegistry<E>,
    prefix: &str,
    len: usize,
    section: SectionTag,
) -> Result<()> {
    reg.register(
        &format!("{prefix}.scale"),
        Tensor::full(&[len], E::ONE),
        section,
        Origin::Base,
        true,
    )?;
    reg.register(
        &format!("{prefix}.offset"),
        Tensor::zeros(&[len]),
        section,
        Origin::Base,
        true,
    )
}

/// Build a backbone with deterministic initialization; the registry tags
/// every parameter with its section. Identical seeds yield bit-identical
/// parameters.
pub fn build_backbone<E: Element>(
    backbone: &Backbone,
    seed: u64,
) -> Result<ParameterRegistry<E>> {
    let mut reg = ParameterRegistry::new();
    let mut init = Init::new(seed);
    match backbone {
        Backbone::Conv(spec) => build_conv_params(spec, &mut reg, &mut init)?,
        Backbone::Vit(spec) => build_vit_params(spec, &mut reg, &mut init)?,
    }
    Ok(reg)
}

fn build_conv_params<E: Element>(
    spec: &ConvBackboneSpec,
    reg: &mut ParameterRegistry<E>,
    init: &mut Init,
) -> Result<()> {
    use SectionTag::{Bottom, Middle};
    reg_weight(reg, init, "stem.conv.weight", &[spec.stem_channels, spec.in_channels, 3, 3], Bottom)?;
    reg_norm(reg, "stem.norm", spec.stem_channels, Bottom)?;

    let mut c_in = spec.stem_channels;
    for (g, &width) in spec.group_widths.iter().enumerate() {
        for b in 0..spec.blocks_per_group {
            let stride = if g > 0 && b == 0 { 2 } else { 1 };
            let p = format!("g{g}.b{b}");
            reg_weight(reg, init, &format!("{p}.conv1.weight"), &[width, c_in, 3, 3], Middle)?;
            reg_norm(reg, &format!("{p}.norm1"), width, Middle)?;
            reg_weight(reg, init, &format!("{p}.conv2.weight"), &[width, width, 3, 3], Middle)?;
            reg_norm(reg, &format!("{p}.norm2"), width, Middle)?;
            if stride != 1 || c_in != width {
                reg_weight(reg, init, &format!("{p}.proj.weight"), &[width, c_in, 1, 1], Middle)?;
                reg_norm(reg, &format!("{p}.projnorm"), width, Middle)?;
            }
            c_in = width;
        }
    }
    Ok(())
}

fn build_vit_params<E: Element>(
    spec: &VitBackboneSpec,
    reg: &mut ParameterRegistry<E>,
    init: &mut Init,
) -> Result<()> {
    use SectionTag::{Bottom, Middle};
    let d = spec.dim;
    reg_weight(reg, init, "patch.weight", &[d, spec.in_channels, spec.patch_size, spec.patch_size], Bottom)?;
    reg_zeros(reg, "patch.bias", &[d], Bottom)?;
    reg_weight(reg, init, "pos", &[spec.patches(), d], Bottom)?;
    for i in 0..spec.depth {
        let p = format!("blk{i}");
        reg_norm(reg, &format!("{p}.ln1"), d, Middle)?;
        for proj in ["q", "k", "v", "proj"] {
            reg_weight(reg, init, &format!("{p}.attn.{proj}.weight"), &[d, d], Middle)?;
            reg_zeros(reg, &format!("{p}.attn.{proj}.bias"), &[d], Middle)?;
        }
        reg_norm(reg, &format!("{p}.ln2"), d, Middle)?;
        let hidden = d * spec.mlp_ratio;
        reg_weight(reg, init, &format!("{p}.mlp.fc1.weight"), &[d, hidden], Middle)?;
        reg_zeros(reg, &format!("{p}.mlp.fc1.bias"), &[hidden], Middle)?;
        reg_weight(reg, init, &format!("{p}.mlp.fc2.weight"), &[hidden, d], Middle)?;
        reg_zeros(reg, &format!("{p}.mlp.fc2.bias"), &[d], Middle)?;
    }
    reg_norm(reg, "final_ln", d, Middle)?;
    Ok(())
}

// ---- forward ----------------------------------------------------------------

/// Validate and (if unbatched) batch an input image node.
fn check_image<E: Element>(
    g: &Graph<E>,
    backbone: &Backbone,
    image: NodeId,
) -> Result<()> {
    let (c, s) = match backbone {
        Backbone::Conv(spec) => (spec.in_channels, spec.image_size),
        Backbone::Vit(spec) => (spec.in_channels, spec.image_size),
    };
    let shape = g.value(image).shape();
    if shape.len() != 4 || shape[1] != c || shape[2] != s || shape[3] != s {
        return Err(Error::BadShape {
            op: "forward_features",
            shape: shape.to_vec(),
            reason: format!("expected [batch, {c}, {s}, {s}]"),
        });
    }
    Ok(())
}

/// Layer-norm over the channel axis of a [B, C, H, W] map, with hookable
/// scale/offset (used for norm-offset adapter deltas on transformer models;
/// conv norms pass through unchanged).
fn conv_norm<E: Element>(
    g: &mut Graph<E>,
    hooks: &dyn SiteHooks<E>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let scale = g.param(&format!("{prefix}.scale"))?;
    let offset = g.param(&format!("{prefix}.offset"))?;
    let (scale, offset) = hooks.norm_params(g, prefix, scale, offset)?;
    g.layer_norm(x, scale, offset, 1)
}

/// Middle-section features for a batch of images: [B, 128, 4, 4] for the
/// conv backbone, [B, 64, 64] patch tokens for the ViT. No pooling here;
/// reduction belongs to the policy head.
pub fn forward_features<E: Element>(
    backbone: &Backbone,
    g: &mut Graph<E>,
    image: NodeId,
    hooks: &dyn SiteHooks<E>,
) -> Result<NodeId> {
    check_image(g, backbone, image)?;
    match backbone {
        Backbone::Conv(spec) => forward_conv(spec, g, image, hooks),
        Backbone::Vit(spec) => forward_vit(spec, g, image, hooks),
    }
}

fn forward_conv<E: Element>(
    spec: &ConvBackboneSpec,
    g: &mut Graph<E>,
    image: NodeId,
    hooks: &dyn SiteHooks<E>,
) -> Result<NodeId> {
    let w = g.param("stem.conv.weight")?;
    let mut x = g.conv2d(image, w, None, 2, 1)?;
    x = conv_norm(g, hooks, "stem.norm", x)?;
    x = g.relu(x)?;
    x = hooks.rewrite(g, SiteId::Stem, image, x)?;

    let n_groups = spec.group_widths.len();
    for g_idx in 0..n_groups {
        for b in 0..spec.blocks_per_group {
            let stride = if g_idx > 0 && b == 0 { 2 } else { 1 };
            let p = format!("g{g_idx}.b{b}");
            let block_in = x;

            let w1 = g.param(&format!("{p}.conv1.weight"))?;
            let mut main = g.conv2d(block_in, w1, None, stride, 1)?;
            main = conv_norm(g, hooks, &format!("{p}.norm1"), main)?;
            if b == 0 && g_idx + 1 < n_groups {
                main = hooks.rewrite(g, SiteId::ConvGroupFirst(g_idx), block_in, main)?;
            }
            main = g.relu(main)?;
            let w2 = g.param(&format!("{p}.conv2.weight"))?;
            main = g.conv2d(main, w2, None, 1, 1)?;
            main = conv_norm(g, hooks, &format!("{p}.norm2"), main)?;

            let skip = if g.value(block_in).shape() != g.value(main).shape() {
                let wp = g.param(&format!("{p}.proj.weight"))?;
                let s = g.conv2d(block_in, wp, None, stride, 0)?;
                conv_norm(g, hooks, &format!("{p}.projnorm"), s)?
            } else {
                block_in
            };
            let merged = g.add(main, skip)?;
            x = g.relu(merged)?;
        }
    }
    x = hooks.rewrite(g, SiteId::ConvGroupEnd(n_groups - 1), x, x)?;
    Ok(x)
}

fn vit_norm<E: Element>(
    g: &mut Graph<E>,
    hooks: &dyn SiteHooks<E>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let scale = g.param(&format!("{prefix}.scale"))?;
    let offset = g.param(&format!("{prefix}.offset"))?;
    let (scale, offset) = hooks.norm_params(g, prefix, scale, offset)?;
    g.layer_norm(x, scale, offset, 2)
}

fn linear<E: Element>(
    g: &mut Graph<E>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = g.param(&format!("{prefix}.weight"))?;
    let b = g.param(&format!("{prefix}.bias"))?;
    let y = g.matmul(x, w)?;
    g.bias_add(y, b)
}

fn forward_vit<E: Element>(
    spec: &VitBackboneSpec,
    g: &mut Graph<E>,
    image: NodeId,
    hooks: &dyn SiteHooks<E>,
) -> Result<NodeId> {
    let batch = g.value(image).shape()[0];
    let (p, d) = (spec.patches(), spec.dim);

    let w = g.param("patch.weight")?;
    let b = g.param("patch.bias")?;
    let grid = g.conv2d(image, w, None, spec.patch_size, 0)?; // [B, d, side, side]
    let mut x = g.reshape(grid, &[batch, d, p])?;
    x = g.transpose(x, 1, 2)?; // [B, p, d]
    x = g.bias_add(x, b)?;

    // Learned positions, added via the flat view so no broadcast is needed.
    let pos = g.param("pos")?;
    let pos_flat = g.reshape(pos, &[p * d])?;
    x = g.flatten(x, 1)?;
    x = g.bias_add(x, pos_flat)?;
    x = g.reshape(x, &[batch, p, d])?;

    x = hooks.rewrite(g, SiteId::Stem, image, x)?;

    for i in 0..spec.depth {
        let prefix = format!("blk{i}");
        let block_in = x;

        let h = vit_norm(g, hooks, &format!("{prefix}.ln1"), block_in)?;
        let q = linear(g, &format!("{prefix}.attn.q"), h)?;
        let k = linear(g, &format!("{prefix}.attn.k"), h)?;
        let v = linear(g, &format!("{prefix}.attn.v"), h)?;
        let attn = g.sdpa(q, k, v, spec.heads)?;
        let attn = linear(g, &format!("{prefix}.attn.proj"), attn)?;
        let x_mid = g.add(block_in, attn)?;

        let h2 = vit_norm(g, hooks, &format!("{prefix}.ln2"), x_mid)?;
        let mlp = linear(g, &format!("{prefix}.mlp.fc1"), h2)?;
        let mlp = g.gelu(mlp)?;
        let mlp = linear(g, &format!("{prefix}.mlp.fc2"), mlp)?;
        let block_out = g.add(x_mid, mlp)?;

        x = hooks.rewrite(g, SiteId::VitBlock(i), block_in, block_out)?;
    }
    vit_norm(g, hooks, "final_ln", x)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Closed-form parameter count for the conv backbone, written from the
    /// layer list alone (independent of the registry walk).
    fn conv_count_closed_form(spec: &ConvBackboneSpec) -> usize {
        let mut total = spec.stem_channels * spec.in_channels * 9 + 2 * spec.stem_channels;
        let mut c_in = spec.stem_channels;
        for (g, &w) in spec.group_widths.iter().enumerate() {
            for b in 0..spec.blocks_per_group {
                let stride = if g > 0 && b == 0 { 2 } else { 1 };
                total += c_in * w * 9 + 2 * w; // conv1 + norm1
                total += w * w * 9 + 2 * w; // conv2 + norm2
                if stride != 1 || c_in != w {
                    total += c_in * w + 2 * w; // proj + its norm
                }
                c_in = w;
            }
        }
        total
    }

    fn vit_count_closed_form(spec: &VitBackboneSpec) -> usize {
        let d = spec.dim;
        let patch = d * spec.in_channels * spec.patch_size * spec.patch_size + d;
        let pos = spec.patches() * d;
        let per_block = 2 * d // ln1
            + 4 * (d * d + d) // q, k, v, proj
            + 2 * d // ln2
            + d * (d * spec.mlp_ratio) + d * spec.mlp_ratio
            + (d * spec.mlp_ratio) * d + d;
        patch + pos + spec.depth * per_block + 2 * d
    }

    #[test]
    fn conv_registry_matches_closed_form_count() {
        let spec = ConvBackboneSpec::default();
        let reg = build_backbone::<f32>(&Backbone::Conv(spec.clone()), 1).unwrap();
        assert_eq!(
            reg.count_params(crate::registry::OriginFilter::All),
            conv_count_closed_form(&spec)
        );
    }

    #[test]
    fn vit_registry_matches_closed_form_count() {
        let spec = VitBackboneSpec::default();
        let reg = build_backbone::<f32>(&Backbone::Vit(spec.clone()), 1).unwrap();
        assert_eq!(
            reg.count_params(crate::registry::OriginFilter::All),
            vit_count_closed_form(&spec)
        );
    }

    #[test]
    fn same_seed_gives_bit_identical_parameters() {
        let bb = Backbone::Vit(VitBackboneSpec::default());
        let a = build_backbone::<f32>(&bb, 7).unwrap();
        let b = build_backbone::<f32>(&bb, 7).unwrap();
        for (pa, pb) in a.iter().zip(b.iter()) {
            assert_eq!(pa.name, pb.name);
            assert!(pa.value.bit_eq(&pb.value), "{} differs", pa.name);
        }
        let c = build_backbone::<f32>(&bb, 8).unwrap();
        assert!(a.iter().zip(c.iter()).any(|(pa, pc)| !pa.value.bit_eq(&pc.value)));
    }

    #[test]
    fn conv_feature_shape_and_finiteness_on_zero_image() {
        let bb = Backbone::Conv(ConvBackboneSpec::default());
        let reg = build_backbone::<f32>(&bb, 3).unwrap();
        let mut g = Graph::inference(&reg);
        let img = g.input(Tensor::zeros(&[1, 3, 64, 64]));
        let feats = forward_features(&bb, &mut g, img, &NoHooks).unwrap();
        assert_eq!(g.value(feats).shape(), &[1, 128, 4, 4]);
        assert!(g.value(feats).all_finite());
    }

    #[test]
    fn vit_feature_shape() {
        let bb = Backbone::Vit(VitBackboneSpec::default());
        let reg = build_backbone::<f32>(&bb, 3).unwrap();
        let mut g = Graph::inference(&reg);
        let img = g.input(Tensor::full(&[2, 3, 64, 64], 0.5));
        let feats = forward_features(&bb, &mut g, img, &NoHooks).unwrap();
        assert_eq!(g.value(feats).shape(), &[2, 64, 64]);
    }

    #[test]
    fn wrong_image_shape_is_rejected() {
        let bb = Backbone::Conv(ConvBackboneSpec::default());
        let reg = build_backbone::<f32>(&bb, 3).unwrap();
        let mut g = Graph::inference(&reg);
        let img = g.input(Tensor::zeros(&[1, 3, 32, 32]));
        assert!(forward_features(&bb, &mut g, img, &NoHooks).is_err());
    }

    #[test]
    fn vit_middle_sites_match_the_placement_rule() {
        let sites = Backbone::Vit(VitBackboneSpec::default()).middle_sites().unwrap();
        let idx: Vec<usize> = sites
            .iter()
            .map(|s| match s {
                SiteId::VitBlock(i) => *i,
                other => panic!("unexpected site {other}"),
            })
            .collect();
        assert_eq!(idx, vec![0, 1, 5, 6, 10, 11]);

        let sites8 = Backbone::Vit(VitBackboneSpec { depth: 8, ..Default::default() })
            .middle_sites()
            .unwrap();
        let idx8: Vec<usize> = sites8
            .iter()
            .map(|s| match s {
                SiteId::VitBlock(i) => *i,
                other => panic!("unexpected site {other}"),
            })
            .collect();
        assert_eq!(idx8, vec![0, 1, 3, 4, 6, 7]);

        let too_shallow = Backbone::Vit(VitBackboneSpec { depth: 5, ..Default::default() });
        assert!(matches!(too_shallow.middle_sites(), Err(Error::DepthTooShallow(5))));
    }

    #[test]
    fn conv_middle_sites_are_four() {
        let sites = Backbone::Conv(ConvBackboneSpec::default()).middle_sites().unwrap();
        assert_eq!(
            sites,
            vec![
                SiteId::ConvGroupFirst(0),
                SiteId::ConvGroupFirst(1),
                SiteId::ConvGroupFirst(2),
                SiteId::ConvGroupEnd(3),
            ]
        );
    }

    #[test]
    fn sections_partition_every_parameter() {
        for bb in [
            Backbone::Conv(ConvBackboneSpec::default()),
            Backbone::Vit(VitBackboneSpec::default()),
        ] {
            let reg = build_backbone::<f32>(&bb, 5).unwrap();
            let bottom: usize = reg
                .iter()
                .filter(|p| p.section == SectionTag::Bottom)
                .map(|p| p.value.numel())
                .sum();
            let middle: usize = reg
                .iter()
                .filter(|p| p.section == SectionTag::Middle)
                .map(|p| p.value.numel())
                .sum();
            assert!(bottom > 0 && middle > 0);
            assert_eq!(
                bottom + middle,
                reg.count_params(crate::registry::OriginFilter::All)
            );
        }
    }

    #[test]
    fn site_id_round_trips_through_text() {
        for site in [
            SiteId::Stem,
            SiteId::ConvGroupFirst(2),
            SiteId::ConvGroupEnd(3),
            SiteId::VitBlock(11),
        ] {
            assert_eq!(SiteId::parse(&site.to_string()), Some(site));
        }
        assert_eq!(SiteId::parse("nonsense"), None);
    }
}
