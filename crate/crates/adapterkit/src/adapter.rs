//! Bottleneck adapter modules: planning, injection into a frozen backbone,
//! and the zero-effect-at-initialization contract.
//!
//! An adapter computes `up(relu(down(x)))` through a strict bottleneck
//! (`f' < f`) and joins the stream through a skip connection. Up-projection
//! weights and biases start at exactly zero, so an adapted model's forward
//! pass is identical to the base model's until training moves the adapter.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::backbone::{Backbone, SiteHooks, SiteId};
use crate::element::Element;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::registry::{Origin, OriginFilter, ParameterRegistry, SectionTag};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdapterKind {
    /// Dense bottleneck over the feature axis of token streams.
    BottleneckDense,
    /// 1x1-conv bottleneck over the channel axis of spatial maps.
    BottleneckConv1x1,
}

impl AdapterKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AdapterKind::BottleneckDense => "dense",
            AdapterKind::BottleneckConv1x1 => "conv1x1",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "dense" => Some(AdapterKind::BottleneckDense),
            "conv1x1" => Some(AdapterKind::BottleneckConv1x1),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Placement {
    /// `site_out + adapter(site_in)`; needs matching site input/output shapes.
    Parallel,
    /// `site_out + adapter(site_out)`; the identity skip keeps zero init lossless.
    Serial,
}

impl Placement {
    pub fn as_str(self) -> &'static str {
        match self {
            Placement::Parallel => "parallel",
            Placement::Serial => "serial",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "parallel" => Some(Placement::Parallel),
            "serial" => Some(Placement::Serial),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdapterSpec {
    pub kind: AdapterKind,
    pub placement: Placement,
    /// Bottleneck width f'.
    pub width: usize,
}

/// One planned injection: a bottleneck adapter on a stream site, or
/// additive zero-initialized deltas on a normalization layer's
/// scale/offset.
#[derive(Debug, Clone, PartialEq)]
pub enum PlanEntry {
    Stream {
        section: SectionTag,
        site: SiteId,
        spec: AdapterSpec,
    },
    NormOffset {
        section: SectionTag,
        norm: String,
    },
}

/// Declarative set of injection sites.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdapterPlan {
    pub use_bottom: bool,
    pub use_middle: bool,
    /// Forwarded to policy-head construction (the 2x256 MLP); not an
    /// injection site.
    pub use_top: bool,
    pub entries: Vec<PlanEntry>,
}

impl AdapterPlan {
    pub fn empty() -> Self {
        AdapterPlan::default()
    }

    pub fn stream_sites(&self) -> impl Iterator<Item = (&SiteId, &AdapterSpec)> {
        self.entries.iter().filter_map(|e| match e {
            PlanEntry::Stream { site, spec, .. } => Some((site, spec)),
            _ => None,
        })
    }

    pub fn norm_sites(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().filter_map(|e| match e {
            PlanEntry::NormOffset { norm, .. } => Some(norm.as_str()),
            _ => None,
        })
    }
}

/// Width rule for planned sites: the requested width caps the bottleneck,
/// scaled down to an eighth of the site's feature width but never below 8
/// (subject to the strict `f' < f` constraint). At reference scale
/// (f = 768) a requested 32 stays 32; at toy scale (f = 64) it becomes 8.
pub fn site_width(requested: usize, features: usize) -> usize {
    requested.min((features / 8).max(8)).min(features - 1).max(1)
}

/// Build the standard plan: one bottom adapter at the stem/patch-embed
/// output, middle adapters at the model's middle sites (plus norm-offset
/// deltas on transformer normalization layers), and the top flag for the
/// policy head. All flags false is the frozen-features plan (zero sites).
pub fn plan_placement(
    backbone: &Backbone,
    use_bottom: bool,
    use_middle: bool,
    use_top: bool,
    width: usize,
) -> Result<AdapterPlan> {
    let kind = match backbone {
        Backbone::Conv(_) => AdapterKind::BottleneckConv1x1,
        Backbone::Vit(_) => AdapterKind::BottleneckDense,
    };
    let mut entries = Vec::new();
    if use_bottom {
        let f = backbone.site_features(SiteId::Stem)?;
        entries.push(PlanEntry::Stream {
            section: SectionTag::Bottom,
            site: SiteId::Stem,
            spec: AdapterSpec {
                kind,
                placement: Placement::Serial,
                width: site_width(width, f),
            },
        });
    }
    if use_middle {
        for site in backbone.middle_sites()? {
            let f = backbone.site_features(site)?;
            let placement = if backbone.site_supports_parallel(site) {
                Placement::Parallel
            } else {
                Placement::Serial
            };
            entries.push(PlanEntry::Stream {
                section: SectionTag::Middle,
                site,
                spec: AdapterSpec {
                    kind,
                    placement,
                    width: site_width(width, f),
                },
            });
        }
        for norm in backbone.middle_norm_layers() {
            entries.push(PlanEntry::NormOffset {
                section: SectionTag::Middle,
                norm,
            });
        }
    }
    Ok(AdapterPlan {
        use_bottom,
        use_middle,
        use_top,
        entries,
    })
}

// ---- injected state ----------------------------------------------------------

/// A live bottleneck adapter: registry names of its four parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdapterInstance {
    pub site: SiteId,
    pub kind: AdapterKind,
    pub placement: Placement,
    pub features: usize,
    pub width: usize,
    prefix: String,
}

impl AdapterInstance {
    pub fn param_names(&self) -> [String; 4] {
        [
            format!("{}.down.weight", self.prefix),
            format!("{}.down.bias", self.prefix),
            format!("{}.up.weight", self.prefix),
            format!("{}.up.bias", self.prefix),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormDelta {
    pub norm: String,
    prefix: String,
}

impl NormDelta {
    pub fn param_names(&self) -> [String; 2] {
        [
            format!("{}.dscale", self.prefix),
            format!("{}.doffset", self.prefix),
        ]
    }
}

/// Everything `inject` added to a model: consulted by the forward pass via
/// [`SiteHooks`]. An empty set reproduces the base model exactly.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterSet {
    pub instances: Vec<AdapterInstance>,
    pub norm_deltas: Vec<NormDelta>,
}

impl AdapterSet {
    pub fn is_empty(&self) -> bool {
        self.instances.is_empty() && self.norm_deltas.is_empty()
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for inst in &self.instances {
            names.extend(inst.param_names());
        }
        for nd in &self.norm_deltas {
            names.extend(nd.param_names());
        }
        names
    }

    fn at_site(&self, site: SiteId) -> Option<&AdapterInstance> {
        self.instances.iter().find(|i| i.site == site)
    }

    fn delta_for(&self, norm: &str) -> Option<&NormDelta> {
        self.norm_deltas.iter().find(|d| d.norm == norm)
    }
}

/// The adapter map `up(relu(down(x)))`, same shape as `x`. Dense adapters
/// act on the trailing feature axis of `[batch, tokens, f]` (or `[.., f]`)
/// streams; conv1x1 adapters act per spatial location on `[batch, f, h, w]`
/// maps.
pub fn adapter_forward<E: Element>(
    g: &mut Graph<E>,
    inst: &AdapterInstance,
    x: NodeId,
) -> Result<NodeId> {
    let [dw, db, uw, ub] = inst.param_names();
    let shape = g.value(x).shape().to_vec();
    let feature_axis_ok = match inst.kind {
        AdapterKind::BottleneckDense => shape.last() == Some(&inst.features),
        AdapterKind::BottleneckConv1x1 => shape.len() == 4 && shape[1] == inst.features,
    };
    if !feature_axis_ok {
        return Err(Error::FeatureSizeMismatch {
            expected: inst.features,
            got: if inst.kind == AdapterKind::BottleneckConv1x1 && shape.len() == 4 {
                shape[1]
            } else {
                *shape.last().unwrap_or(&0)
            },
        });
    }
    match inst.kind {
        AdapterKind::BottleneckDense => {
            let dwn = g.param(&dw)?;
            let dbn = g.param(&db)?;
            let h = g.matmul(x, dwn)?;
            let h = g.bias_add(h, dbn)?;
            let h = g.relu(h)?;
            let uwn = g.param(&uw)?;
            let ubn = g.param(&ub)?;
            let y = g.matmul(h, uwn)?;
            g.bias_add(y, ubn)
        }
        AdapterKind::BottleneckConv1x1 => {
            let dwn = g.param(&dw)?;
            let dbn = g.param(&db)?;
            let h = g.conv2d(x, dwn, Some(dbn), 1, 0)?;
            let h = g.relu(h)?;
            let uwn = g.param(&uw)?;
            let ubn = g.param(&ub)?;
            g.conv2d(h, uwn, Some(ubn), 1, 0)
        }
    }
}

impl<E: Element> SiteHooks<E> for AdapterSet {
    fn rewrite(
        &self,
        g: &mut Graph<E>,
        site: SiteId,
        input: NodeId,
        output: NodeId,
    ) -> Result<NodeId> {
        let Some(inst) = self.at_site(site) else {
            return Ok(output);
        };
        let tap = match inst.placement {
            Placement::Parallel => input,
            Placement::Serial => output,
        };
        let a = adapter_forward(g, inst, tap)?;
        g.add(output, a)
    }

    fn norm_params(
        &self,
        g: &mut Graph<E>,
        norm: &str,
        scale: NodeId,
        offset: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let Some(delta) = self.delta_for(norm) else {
            return Ok((scale, offset));
        };
        let [ds, do_] = delta.param_names();
        let dsn = g.param(&ds)?;
        let don = g.param(&do_)?;
        Ok((g.add(scale, dsn)?, g.add(offset, don)?))
    }
}

/// Inject a plan into a built model. Base parameters are never copied,
/// moved or re-initialized; the registry only gains adapter-origin entries.
/// Down-projections start near zero (truncated normal, std 0.01); the
/// up-projection weight and bias start at exactly zero.
pub fn inject<E: Element>(
    backbone: &Backbone,
    plan: &AdapterPlan,
    registry: &mut ParameterRegistry<E>,
    seed: u64,
) -> Result<AdapterSet> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = AdapterSet::default();

    let mut seen_sites = Vec::new();
    let mut seen_norms = Vec::new();
    for entry in &plan.entries {
        match entry {
            PlanEntry::Stream { section, site, spec } => {
                if seen_sites.contains(site) {
                    return Err(Error::DuplicateSite(site.to_string()));
                }
                seen_sites.push(*site);
                let features = backbone.site_features(*site)?;
                if spec.width >= features {
                    return Err(Error::InvalidBottleneck {
                        width: spec.width,
                        features,
                    });
                }
                if spec.placement == Placement::Parallel && !backbone.site_supports_parallel(*site)
                {
                    return Err(Error::InvalidSite {
                        site: site.to_string(),
                        reason: "parallel placement needs matching input/output shapes".into(),
                    });
                }
                let prefix = format!("adapter.{site}");
                let (f, w) = (features, spec.width);
                let (down_shape, up_shape): (Vec<usize>, Vec<usize>) = match spec.kind {
                    AdapterKind::BottleneckDense => (vec![f, w], vec![w, f]),
                    AdapterKind::BottleneckConv1x1 => (vec![w, f, 1, 1], vec![f, w, 1, 1]),
                };
                let down = Tensor::from_fn(&down_shape, |_| {
                    E::from_f64(trunc_normal(&mut rng, 0.01))
                });
                registry.register(&format!("{prefix}.down.weight"), down, *section, Origin::Adapter, true)?;
                registry.register(&format!("{prefix}.down.bias"), Tensor::zeros(&[w]), *section, Origin::Adapter, true)?;
                registry.register(&format!("{prefix}.up.weight"), Tensor::zeros(&up_shape), *section, Origin::Adapter, true)?;
                registry.register(&format!("{prefix}.up.bias"), Tensor::zeros(&[f]), *section, Origin::Adapter, true)?;
                set.instances.push(AdapterInstance {
                    site: *site,
                    kind: spec.kind,
                    placement: spec.placement,
                    features,
                    width: spec.width,
                    prefix,
                });
            }
            PlanEntry::NormOffset { section, norm } => {
                if seen_norms.contains(norm) {
                    return Err(Error::DuplicateSite(norm.clone()));
                }
                seen_norms.push(norm.clone());
                let len = registry.get(&format!("{norm}.scale"))?.value.numel();
                let prefix = format!("adapter.{norm}");
                registry.register(&format!("{prefix}.dscale"), Tensor::zeros(&[len]), *section, Origin::Adapter, true)?;
                registry.register(&format!("{prefix}.doffset"), Tensor::zeros(&[len]), *section, Origin::Adapter, true)?;
                set.norm_deltas.push(NormDelta {
                    norm: norm.clone(),
                    prefix,
                });
            }
        }
    }
    Ok(set)
}

/// Remove every adapter parameter the set added; the remaining model's
/// forward pass is bit-identical to the original.
pub fn eject<E: Element>(set: &AdapterSet, registry: &mut ParameterRegistry<E>) -> Result<()> {
    for name in set.param_names() {
        registry.remove(&name)?;
    }
    Ok(())
}

fn trunc_normal(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    loop {
        let v: f64 = rng.sample::<f64, _>(StandardNormal) * std;
        if v.abs() <= 2.0 * std {
            return v;
        }
    }
}

// ---- counting -----------------------------------------------------------------

/// Parameter accounting over a registry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainableCounts {
    pub base: usize,
    pub adapter: usize,
    pub head: usize,
    pub trainable: usize,
    pub total: usize,
    /// trainable / total.
    pub fraction: f64,
}

pub fn count_trainable<E: Element>(registry: &ParameterRegistry<E>) -> TrainableCounts {
    let base = registry.count_params(OriginFilter::Only(Origin::Base));
    let adapter = registry.count_params(OriginFilter::Only(Origin::Adapter));
    let head = registry.count_params(OriginFilter::Only(Origin::Head));
    let trainable = registry.count_trainable_params(OriginFilter::All);
    let total = base + adapter + head;
    TrainableCounts {
        base,
        adapter,
        head,
        trainable,
        total,
        fraction: trainable as f64 / total as f64,
    }
}

// ---- plan text format -----------------------------------------------------------

/// Serialize a plan as the declarative text document stored alongside
/// bundles.
///
/// Line format (one `key = value` per line, `#` comments):
///   version    = 1
///   use_bottom / use_middle / use_top = true|false
///   site       = <section> <site-id> <kind> <placement> <width>
///   norm-site  = <section> <norm-layer-name>
pub fn plan_to_text(plan: &AdapterPlan) -> String {
    let mut out = String::from("# adapter plan\nversion = 1\n");
    out.push_str(&format!("use_bottom = {}\n", plan.use_bottom));
    out.push_str(&format!("use_middle = {}\n", plan.use_middle));
    out.push_str(&format!("use_top = {}\n", plan.use_top));
    for entry in &plan.entries {
        match entry {
            PlanEntry::Stream { section, site, spec } => {
                out.push_str(&format!(
                    "site = {section} {site} {} {} {}\n",
                    spec.kind.as_str(),
                    spec.placement.as_str(),
                    spec.width
                ));
            }
            PlanEntry::NormOffset { section, norm } => {
                out.push_str(&format!("norm-site = {section} {norm}\n"));
            }
        }
    }
    out
}

pub fn plan_from_text(text: &str) -> Result<AdapterPlan> {
    let mut plan = AdapterPlan::default();
    let bad = |line: &str, why: &str| Error::Config(format!("plan line {line:?}: {why}"));
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(line, "expected key = value"))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "version" => {
                if value != "1" {
                    return Err(bad(line, "unsupported version"));
                }
            }
            "use_bottom" => plan.use_bottom = parse_bool(value).ok_or_else(|| bad(line, "bad bool"))?,
            "use_middle" => plan.use_middle = parse_bool(value).ok_or_else(|| bad(line, "bad bool"))?,
            "use_top" => plan.use_top = parse_bool(value).ok_or_else(|| bad(line, "bad bool"))?,
            "site" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 5 {
                    return Err(bad(line, "expected: section site kind placement width"));
                }
                let section = parse_section(parts[0]).ok_or_else(|| bad(line, "bad section"))?;
                let site = SiteId::parse(parts[1]).ok_or_else(|| bad(line, "bad site id"))?;
                let kind = AdapterKind::parse(parts[2]).ok_or_else(|| bad(line, "bad kind"))?;
                let placement =
                    Placement::parse(parts[3]).ok_or_else(|| bad(line, "bad placement"))?;
                let width = parts[4].parse().map_err(|_| bad(line, "bad width"))?;
                plan.entries.push(PlanEntry::Stream {
                    section,
                    site,
                    spec: AdapterSpec { kind, placement, width },
                });
            }
            "norm-site" => {
                let parts: Vec<&str> = value.split_whitespace().collect();
                if parts.len() != 2 {
                    return Err(bad(line, "expected: section norm-layer"));
                }
                let section = parse_section(parts[0]).ok_or_else(|| bad(line, "bad section"))?;
                plan.entries.push(PlanEntry::NormOffset {
                    section,
                    norm: parts[1].to_string(),
                });
            }
            _ => return Err(bad(line, "unknown key")),
        }
    }
    Ok(plan)
}

fn parse_bool(s: &str) -> Option<bool> {
    match s {
        "true" => Some(true),
        "false" => Some(false),
        _ => None,
    }
}

fn parse_section(s: &str) -> Option<SectionTag> {
    match s {
        "bottom" => Some(SectionTag::Bottom),
        "middle" => Some(SectionTag::Middle),
        "top" => Some(SectionTag::Top),
        _ => None,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::{build_backbone, forward_features, ConvBackboneSpec, NoHooks, VitBackboneSpec};
    use rand::Rng;
    use rand::SeedableRng;

    fn toy_vit() -> Backbone {
        Backbone::Vit(VitBackboneSpec::default())
    }

    fn toy_conv() -> Backbone {
        Backbone::Conv(ConvBackboneSpec::default())
    }

    fn rand_image(seed: u64, batch: usize) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::from_fn(&[batch, 3, 64, 64], |_| rng.random_range(0.0..1.0))
    }

    #[test]
    fn adapter_with_zero_up_projection_outputs_zero() {
        let bb = toy_vit();
        let mut reg = build_backbone::<f32>(&bb, 1).unwrap();
        let plan = plan_placement(&bb, true, false, false, 8).unwrap();
        let set = inject(&bb, &plan, &mut reg, 99).unwrap();
        let inst = &set.instances[0];

        let mut g = Graph::inference(&reg);
        let x = g.input(Tensor::from_fn(&[2, 64, 64], |i| (i as f32 * 0.37).sin()));
        let y = adapter_forward(&mut g, inst, x).unwrap();
        assert!(g.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_computed_toy_adapter() {
        // f = 2, f' = 1, down = [1, 1], up = [1, 0], h = relu, x = [1, 2]:
        // down gives 3, relu keeps 3, up gives [3, 0].
        let mut reg = ParameterRegistry::<f64>::new();
        let section = SectionTag::Middle;
        reg.register("adapter.blk0.down.weight", Tensor::from_vec(&[2, 1], vec![1.0, 1.0]).unwrap(), section, Origin::Adapter, true).unwrap();
        reg.register("adapter.blk0.down.bias", Tensor::zeros(&[1]), section, Origin::Adapter, true).unwrap();
        reg.register("adapter.blk0.up.weight", Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap(), section, Origin::Adapter, true).unwrap();
        reg.register("adapter.blk0.up.bias", Tensor::zeros(&[2]), section, Origin::Adapter, true).unwrap();
        let inst = AdapterInstance {
            site: SiteId::VitBlock(0),
            kind: AdapterKind::BottleneckDense,
            placement: Placement::Serial,
            features: 2,
            width: 1,
            prefix: "adapter.blk0".into(),
        };
        let mut g = Graph::inference(&reg);
        let x = g.input(Tensor::from_vec(&[1, 2], vec![1.0, 2.0]).unwrap());
        let y = adapter_forward(&mut g, &inst, x).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, 0.0]);
    }

    #[test]
    fn reference_scale_adapter_parameter_count() {
        // f = 768, f' = 32, with biases: 768*32 + 32 + 32*768 + 768 = 49,952.
        let f = 768;
        let w = 32;
        assert_eq!(f * w + w + w * f + f, 49_952);
    }

    #[test]
    fn full_toy_vit_plan_counts() {
        // 1 bottom + 6 middle dense adapters at f = 64, f' = 8:
        // each is 64*8 + 8 + 8*64 + 64 = 1,096; seven of them 7,672.
        let bb = toy_vit();
        let mut reg = build_backbone::<f32>(&bb, 1).unwrap();
        let mut plan = plan_placement(&bb, true, true, true, 8).unwrap();
        // Keep only the bottleneck adapters for this count.
        plan.entries.retain(|e| matches!(e, PlanEntry::Stream { .. }));
        let set = inject(&bb, &plan, &mut reg, 2).unwrap();
        assert_eq!(set.instances.len(), 7);
        let counts = count_trainable(&reg);
        assert_eq!(counts.adapter, 7 * 1_096);
        assert_eq!(counts.adapter, 7_672);
    }

    #[test]
    fn planned_vit_widths_honor_the_width_rule() {
        let bb = toy_vit();
        let plan = plan_placement(&bb, true, true, true, 32).unwrap();
        for (_, spec) in plan.stream_sites() {
            assert_eq!(spec.width, 8, "toy ViT sites clamp a requested 32 to 64/8");
        }
        assert_eq!(site_width(32, 768), 32, "reference scale keeps the paper width");
    }

    #[test]
    fn zero_at_init_is_bit_exact_for_both_backbones() {
        for (bb, seed) in [(toy_vit(), 11u64), (toy_conv(), 12u64)] {
            let base_reg = build_backbone::<f32>(&bb, seed).unwrap();
            let mut adapted_reg = base_reg.clone();
            let plan = plan_placement(&bb, true, true, true, 32).unwrap();
            let set = inject(&bb, &plan, &mut adapted_reg, 7).unwrap();

            let img = rand_image(seed ^ 0xabc, 2);
            let base_out = {
                let mut g = Graph::inference(&base_reg);
                let x = g.input(img.clone());
                let y = forward_features(&bb, &mut g, x, &NoHooks).unwrap();
                g.value(y).clone()
            };
            let adapted_out = {
                let mut g = Graph::inference(&adapted_reg);
                let x = g.input(img);
                let y = forward_features(&bb, &mut g, x, &set).unwrap();
                g.value(y).clone()
            };
            assert_eq!(
                base_out.max_abs_diff(&adapted_out),
                0.0,
                "zero-at-init must be exact for {:?}",
                bb.kind()
            );
        }
    }

    #[test]
    fn empty_plan_changes_nothing() {
        let bb = toy_conv();
        let mut reg = build_backbone::<f32>(&bb, 3).unwrap();
        let before = reg.len();
        let set = inject(&bb, &AdapterPlan::empty(), &mut reg, 1).unwrap();
        assert!(set.is_empty());
        assert_eq!(reg.len(), before);
    }

    #[test]
    fn duplicate_site_rejected() {
        let bb = toy_vit();
        let mut reg = build_backbone::<f32>(&bb, 3).unwrap();
        let spec = AdapterSpec {
            kind: AdapterKind::BottleneckDense,
            placement: Placement::Parallel,
            width: 8,
        };
        let plan = AdapterPlan {
            entries: vec![
                PlanEntry::Stream { section: SectionTag::Middle, site: SiteId::VitBlock(0), spec },
                PlanEntry::Stream { section: SectionTag::Middle, site: SiteId::VitBlock(0), spec },
            ],
            ..Default::default()
        };
        assert!(matches!(
            inject(&bb, &plan, &mut reg, 1),
            Err(Error::DuplicateSite(_))
        ));
    }

    #[test]
    fn oversized_bottleneck_rejected() {
        let bb = toy_vit();
        let mut reg = build_backbone::<f32>(&bb, 3).unwrap();
        let plan = AdapterPlan {
            entries: vec![PlanEntry::Stream {
                section: SectionTag::Middle,
                site: SiteId::VitBlock(0),
                spec: AdapterSpec {
                    kind: AdapterKind::BottleneckDense,
                    placement: Placement::Parallel,
                    width: 64,
                },
            }],
            ..Default::default()
        };
        assert!(matches!(
            inject(&bb, &plan, &mut reg, 1),
            Err(Error::InvalidBottleneck { width: 64, features: 64 })
        ));
    }

    #[test]
    fn parallel_rejected_at_shape_changing_sites() {
        let bb = toy_conv();
        let mut reg = build_backbone::<f32>(&bb, 3).unwrap();
        let plan = AdapterPlan {
            entries: vec![PlanEntry::Stream {
                section: SectionTag::Bottom,
                site: SiteId::Stem,
                spec: AdapterSpec {
                    kind: AdapterKind::BottleneckConv1x1,
                    placement: Placement::Parallel,
                    width: 2,
                },
            }],
            ..Default::default()
        };
        assert!(inject(&bb, &plan, &mut reg, 1).is_err());
    }

    #[test]
    fn eject_restores_bitwise_forward() {
        let bb = toy_vit();
        let base_reg = build_backbone::<f32>(&bb, 21).unwrap();
        let mut reg = base_reg.clone();
        let plan = plan_placement(&bb, true, true, false, 8).unwrap();
        let set = inject(&bb, &plan, &mut reg, 5).unwrap();

        // Scribble on the adapters so they are visibly non-zero.
        for name in set.param_names() {
            let p = reg.get_mut(&name).unwrap();
            p.value = Tensor::full(p.value.shape(), 0.25);
        }
        eject(&set, &mut reg).unwrap();
        assert_eq!(reg.len(), base_reg.len());

        let img = rand_image(77, 1);
        let run = |r: &ParameterRegistry<f32>| {
            let mut g = Graph::inference(r);
            let x = g.input(img.clone());
            let y = forward_features(&bb, &mut g, x, &NoHooks).unwrap();
            g.value(y).clone()
        };
        assert!(run(&base_reg).bit_eq(&run(&reg)));
    }

    #[test]
    fn budget_under_2_5_percent_with_requested_width_32() {
        for bb in [toy_vit(), toy_conv()] {
            let mut reg = build_backbone::<f32>(&bb, 9).unwrap();
            let plan = plan_placement(&bb, true, true, true, 32).unwrap();
            inject(&bb, &plan, &mut reg, 1).unwrap();
            let counts = count_trainable(&reg);
            let ratio = counts.adapter as f64 / counts.base as f64;
            assert!(
                ratio < 0.025,
                "{:?}: adapter/base ratio {ratio} out of budget",
                bb.kind()
            );
        }
    }

    #[test]
    fn monotone_plan_growth() {
        let bb = toy_vit();
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
        let full = plan_placement(&bb, true, true, true, 8).unwrap();
        for _ in 0..20 {
            // Random nested pair of sub-plans.
            let keep_small: Vec<bool> =
                (0..full.entries.len()).map(|_| rng.random_bool(0.4)).collect();
            let keep_big: Vec<bool> = keep_small
                .iter()
                .map(|&k| k || rng.random_bool(0.5))
                .collect();
            if keep_small == keep_big || !keep_small.iter().any(|&k| k) {
                continue;
            }
            let sub_plan = |mask: &[bool]| AdapterPlan {
                entries: full
                    .entries
                    .iter()
                    .zip(mask)
                    .filter(|(_, &m)| m)
                    .map(|(e, _)| e.clone())
                    .collect(),
                ..Default::default()
            };
            let count_of = |p: &AdapterPlan| {
                let mut reg = build_backbone::<f32>(&bb, 1).unwrap();
                inject(&bb, p, &mut reg, 1).unwrap();
                count_trainable(&reg).adapter
            };
            assert!(count_of(&sub_plan(&keep_small)) < count_of(&sub_plan(&keep_big)));
        }
    }

    #[test]
    fn plan_round_trips_through_text() {
        let bb = toy_conv();
        let plan = plan_placement(&bb, true, true, true, 32).unwrap();
        let text = plan_to_text(&plan);
        let parsed = plan_from_text(&text).unwrap();
        assert_eq!(plan, parsed);

        let vit_plan = plan_placement(&toy_vit(), false, true, false, 8).unwrap();
        let parsed = plan_from_text(&plan_to_text(&vit_plan)).unwrap();
        assert_eq!(vit_plan, parsed);

        assert!(plan_from_text("site = bogus").is_err());
        assert!(plan_from_text("mystery = 3").is_err());
    }

    #[test]
    fn frozen_features_plan_has_zero_sites() {
        let plan = plan_placement(&toy_vit(), false, false, false, 32).unwrap();
        assert!(plan.entries.is_empty());
        let mut reg = build_backbone::<f32>(&toy_vit(), 1).unwrap();
        let set = inject(&toy_vit(), &plan, &mut reg, 1).unwrap();
        let counts = count_trainable(&reg);
        assert_eq!(counts.adapter, 0);
        assert!(set.is_empty());
    }

    #[test]
    fn vit_plan_has_seven_injection_sites() {
        let plan = plan_placement(&toy_vit(), true, true, false, 8).unwrap();
        assert_eq!(plan.stream_sites().count(), 7);
        let conv_bottom = plan_placement(&toy_conv(), true, false, false, 8).unwrap();
        assert_eq!(conv_bottom.stream_sites().count(), 1);
    }
}
