//! Bit-exact weight serialization, hashing, and multi-task composition.
//!
//! On-disk layout (all integers little-endian):
//!
//! ```text
//! magic "ADPB" | format version u16
//! metadata count u32, then per entry:
//!   key len u16, key bytes | value len u32, value bytes     (UTF-8)
//! tensor count u32, then per entry:
//!   name len u16, name bytes | dtype code u8 | ndim u8 | dims u64 x ndim
//!   | payload byte offset u64 | payload byte length u64
//!   | FNV-1a 64 checksum of the tensor's payload bytes
//! payload: raw little-endian tensor data, in table order
//! trailer: SHA-256 of every preceding byte
//! ```
//!
//! The trailer is verified before any tensor is exposed; per-tensor
//! checksums catch localized corruption and name the tensor.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::adapter::{inject, plan_from_text};
use crate::backbone::{build_backbone, Backbone, BackboneKind, ConvBackboneSpec, VitBackboneSpec};
use crate::element::{DType, Element};
use crate::error::{Error, Result};
use crate::policy::{build_head, HeadConfig, PolicyModel, Reduction};
use crate::registry::{Origin, OriginFilter, ParameterRegistry};
use crate::tensor::Tensor;

const MAGIC: &[u8; 4] = b"ADPB";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct BundleTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub bytes: Vec<u8>,
}

impl BundleTensor {
    pub fn to_tensor<E: Element>(&self) -> Result<Tensor<E>> {
        if self.dtype != E::DTYPE {
            return Err(Error::Bundle(format!(
                "tensor {:?} has dtype {:?}, expected {:?}",
                self.name,
                self.dtype,
                E::DTYPE
            )));
        }
        let size = self.dtype.size();
        let data = self.bytes.chunks_exact(size).map(E::read_le).collect();
        Tensor::from_vec(&self.shape, data)
    }
}

#[derive(Debug, Clone, Default)]
pub struct WeightBundle {
    pub meta: Vec<(String, String)>,
    pub tensors: Vec<BundleTensor>,
}

impl WeightBundle {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn tensor_names(&self) -> Vec<String> {
        self.tensors.iter().map(|t| t.name.clone()).collect()
    }

    pub fn get(&self, name: &str) -> Option<&BundleTensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// SHA-256 over the concatenated tensor payload bytes, in table order.
    pub fn payload_sha256(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.tensors {
            h.update(&t.bytes);
        }
        hex(&h.finalize())
    }

    pub fn payload_len(&self) -> usize {
        self.tensors.iter().map(|t| t.bytes.len()).sum()
    }
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Deterministic byte encoding of a bundle (identical inputs give identical
/// bytes, so saved files are reproducible).
pub fn encode_bundle(bundle: &WeightBundle) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(bundle.meta.len() as u32).to_le_bytes());
    for (k, v) in &bundle.meta {
        out.extend_from_slice(&(k.len() as u16).to_le_bytes());
        out.extend_from_slice(k.as_bytes());
        out.extend_from_slice(&(v.len() as u32).to_le_bytes());
        out.extend_from_slice(v.as_bytes());
    }
    out.extend_from_slice(&(bundle.tensors.len() as u32).to_le_bytes());
    let mut offset = 0u64;
    for t in &bundle.tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dtype.code());
        out.push(t.shape.len() as u8);
        for &d in &t.shape {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&offset.to_le_bytes());
        out.extend_from_slice(&(t.bytes.len() as u64).to_le_bytes());
        out.extend_from_slice(&fnv1a64(&t.bytes).to_le_bytes());
        offset += t.bytes.len() as u64;
    }
    for t in &bundle.tensors {
        out.extend_from_slice(&t.bytes);
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn decode_bundle(bytes: &[u8], origin_label: &str) -> Result<WeightBundle> {
    if bytes.len() < 32 + 6 {
        return Err(Error::Bundle(format!("{origin_label}: file too short")));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::HashMismatch {
            path: origin_label.to_string(),
            expected: hex(trailer),
            got: hex(&digest),
        });
    }
    let mut pos = 0usize;
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > body.len() {
            return Err(Error::Bundle(format!("{origin_label}: truncated")));
        }
        let s = &body[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    if take(&mut pos, 4)? != MAGIC {
        return Err(Error::Bundle(format!("{origin_label}: bad magic")));
    }
    let version = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap());
    if version != VERSION {
        return Err(Error::Bundle(format!(
            "{origin_label}: unsupported version {version}"
        )));
    }
    let n_meta = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut meta = Vec::with_capacity(n_meta);
    for _ in 0..n_meta {
        let klen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let k = String::from_utf8_lossy(take(&mut pos, klen)?).to_string();
        let vlen = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let v = String::from_utf8_lossy(take(&mut pos, vlen)?).to_string();
        meta.push((k, v));
    }
    let n_tensors = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    struct Entry {
        name: String,
        dtype: DType,
        shape: Vec<usize>,
        offset: u64,
        len: u64,
        checksum: u64,
    }
    let mut entries = Vec::with_capacity(n_tensors);
    for _ in 0..n_tensors {
        let nlen = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8_lossy(take(&mut pos, nlen)?).to_string();
        let dtype = DType::from_code(take(&mut pos, 1)?[0])
            .ok_or_else(|| Error::Bundle(format!("{origin_label}: bad dtype for {name}")))?;
        let ndim = take(&mut pos, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()) as usize);
        }
        let offset = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let len = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        let checksum = u64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap());
        entries.push(Entry {
            name,
            dtype,
            shape,
            offset,
            len,
            checksum,
        });
    }
    let payload = &body[pos..];
    let mut tensors = Vec::with_capacity(n_tensors);
    for e in entries {
        let start = e.offset as usize;
        let end = start + e.len as usize;
        if end > payload.len() {
            return Err(Error::Bundle(format!(
                "{origin_label}: tensor {} overruns payload",
                e.name
            )));
        }
        let bytes = payload[start..end].to_vec();
        if fnv1a64(&bytes) != e.checksum {
            return Err(Error::Bundle(format!(
                "{origin_label}: checksum mismatch in tensor {}",
                e.name
            )));
        }
        tensors.push(BundleTensor {
            name: e.name,
            dtype: e.dtype,
            shape: e.shape,
            bytes,
        });
    }
    Ok(WeightBundle { meta, tensors })
}

/// Snapshot registry parameters matching the filter into a bundle, in
/// registration order.
pub fn bundle_from_registry<E: Element>(
    registry: &ParameterRegistry<E>,
    filter: OriginFilter,
    meta: Vec<(String, String)>,
) -> Result<WeightBundle> {
    let mut tensors = Vec::new();
    for p in registry.iter().filter(|p| filter.matches(p.origin)) {
        tensors.push(BundleTensor {
            name: p.name.clone(),
            dtype: E::DTYPE,
            shape: p.value.shape().to_vec(),
            bytes: p.value.to_le_bytes(),
        });
    }
    if tensors.is_empty() {
        return Err(Error::EmptySelection(filter.as_str().to_string()));
    }
    Ok(WeightBundle { meta, tensors })
}

/// Write a bundle to disk: temp file, then atomic rename.
pub fn save_bundle(bundle: &WeightBundle, path: &Path) -> Result<()> {
    let bytes = encode_bundle(bundle);
    let tmp = path.with_extension("adpb.tmp");
    std::fs::File::create(&tmp)?.write_all(&bytes)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_bundle(path: &Path) -> Result<WeightBundle> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_bundle(&bytes, &path.display().to_string())
}

/// Convenience: save parameters matching the filter.
pub fn save_registry<E: Element>(
    registry: &ParameterRegistry<E>,
    filter: OriginFilter,
    meta: Vec<(String, String)>,
    path: &Path,
) -> Result<WeightBundle> {
    let bundle = bundle_from_registry(registry, filter, meta)?;
    save_bundle(&bundle, path)?;
    Ok(bundle)
}

/// SHA-256 over the live payload bytes of registry parameters matching the
/// filter, identical to the payload hash of a bundle saved with the same
/// filter.
pub fn registry_payload_sha256<E: Element>(
    registry: &ParameterRegistry<E>,
    filter: OriginFilter,
) -> String {
    let mut h = Sha256::new();
    for p in registry.iter().filter(|p| filter.matches(p.origin)) {
        h.update(&p.value.to_le_bytes());
    }
    hex(&h.finalize())
}

/// True iff every tensor in `before` is bit-identical to the same-named
/// parameter in the registry. The name sets must agree (over the bundle's
/// origin scope); a mismatch is an error listing the missing and extra
/// names.
pub fn verify_lossless<E: Element>(
    before: &WeightBundle,
    after: &ParameterRegistry<E>,
    filter: OriginFilter,
) -> Result<bool> {
    let bundle_names: Vec<String> = before.tensor_names();
    let reg_names: Vec<String> = after.names(filter);
    let missing: Vec<String> = bundle_names
        .iter()
        .filter(|n| !reg_names.contains(n))
        .cloned()
        .collect();
    let extra: Vec<String> = reg_names
        .iter()
        .filter(|n| !bundle_names.contains(n))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::NameSetMismatch { missing, extra });
    }
    // Hash comparison first; on mismatch, byte comparison for diagnostics.
    let live = registry_payload_sha256(after, filter);
    if live == before.payload_sha256() {
        return Ok(true);
    }
    for t in &before.tensors {
        let p = after.get(&t.name)?;
        if p.value.to_le_bytes() != t.bytes {
            return Ok(false);
        }
    }
    // Hashes disagreed but tensors matched: ordering drift, still lossy.
    Ok(false)
}

/// Overwrite registry values from a bundle. Every tensor must name an
/// existing parameter of matching shape, and the bundle must cover exactly
/// the registry parameters matching `filter`.
pub fn apply_bundle<E: Element>(
    bundle: &WeightBundle,
    registry: &mut ParameterRegistry<E>,
    filter: OriginFilter,
) -> Result<()> {
    let bundle_names = bundle.tensor_names();
    let reg_names = registry.names(filter);
    let missing: Vec<String> = bundle_names
        .iter()
        .filter(|n| !reg_names.contains(n))
        .cloned()
        .collect();
    let extra: Vec<String> = reg_names
        .iter()
        .filter(|n| !bundle_names.contains(n))
        .cloned()
        .collect();
    if !missing.is_empty() || !extra.is_empty() {
        return Err(Error::NameSetMismatch { missing, extra });
    }
    for t in &bundle.tensors {
        let value = t.to_tensor::<E>()?;
        let p = registry.get_mut(&t.name)?;
        if p.value.shape() != value.shape() {
            return Err(Error::ShapeMismatch {
                op: "apply_bundle",
                lhs: p.value.shape().to_vec(),
                rhs: value.shape().to_vec(),
            });
        }
        p.value = value;
    }
    Ok(())
}

// ---- metadata helpers used by the runner ----------------------------------

pub fn head_config_meta(cfg: &HeadConfig) -> Vec<(String, String)> {
    vec![
        ("reduction".into(), cfg.reduction.as_str().into()),
        ("conv_channels".into(), cfg.conv_channels.to_string()),
        ("vit_proj_dim".into(), cfg.vit_proj_dim.to_string()),
        ("top_adapter".into(), cfg.top_adapter.to_string()),
        ("proprio".into(), cfg.proprio.to_string()),
        ("action_dim".into(), cfg.action_dim.to_string()),
    ]
}

pub fn head_config_from_meta(bundle: &WeightBundle) -> Result<HeadConfig> {
    let get = |key: &str| {
        bundle
            .meta_value(key)
            .ok_or_else(|| Error::Bundle(format!("head bundle missing meta key {key:?}")))
    };
    Ok(HeadConfig {
        reduction: Reduction::parse(get("reduction")?)
            .ok_or_else(|| Error::Bundle("bad reduction".into()))?,
        conv_channels: get("conv_channels")?
            .parse()
            .map_err(|_| Error::Bundle("bad conv_channels".into()))?,
        vit_proj_dim: get("vit_proj_dim")?
            .parse()
            .map_err(|_| Error::Bundle("bad vit_proj_dim".into()))?,
        top_adapter: get("top_adapter")? == "true",
        proprio: get("proprio")? == "true",
        action_dim: get("action_dim")?
            .parse()
            .map_err(|_| Error::Bundle("bad action_dim".into()))?,
    })
}

pub fn backbone_of_kind(kind: BackboneKind) -> Backbone {
    match kind {
        BackboneKind::Conv => Backbone::Conv(ConvBackboneSpec::default()),
        BackboneKind::Vit => Backbone::Vit(VitBackboneSpec::default()),
    }
}

pub fn backbone_from_meta(bundle: &WeightBundle) -> Result<Backbone> {
    let kind = bundle
        .meta_value("backbone")
        .and_then(BackboneKind::parse)
        .ok_or_else(|| Error::Bundle("base bundle missing backbone kind".into()))?;
    Ok(backbone_of_kind(kind))
}

// ---- composite manifests ----------------------------------------------------

/// One base bundle serving several tasks, each with its own adapter and
/// head bundles plus the plan that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct CompositeManifest {
    pub base: PathBuf,
    pub base_sha256: String,
    pub tasks: Vec<CompositeTask>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompositeTask {
    pub name: String,
    pub adapters: PathBuf,
    pub head: PathBuf,
    pub plan: PathBuf,
}

pub fn manifest_to_text(m: &CompositeManifest) -> String {
    let mut out = String::from("# composite manifest\nversion = 1\n");
    out.push_str(&format!("base = {}\n", m.base.display()));
    out.push_str(&format!("base_sha256 = {}\n", m.base_sha256));
    for t in &m.tasks {
        out.push_str(&format!(
            "task = {} {} {} {}\n",
            t.name,
            t.adapters.display(),
            t.head.display(),
            t.plan.display()
        ));
    }
    out
}

pub fn manifest_from_text(text: &str) -> Result<CompositeManifest> {
    let mut base = None;
    let mut base_sha256 = None;
    let mut tasks = Vec::new();
    for raw in text.lines() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("manifest line {line:?}: expected key = value")))?;
        match (key.trim(), value.trim()) {
            ("version", "1") => {}
            ("version", v) => {
                return Err(Error::Config(format!("unsupported manifest version {v}")))
            }
            ("base", v) => base = Some(PathBuf::from(v)),
            ("base_sha256", v) => base_sha256 = Some(v.to_string()),
            ("task", v) => {
                let parts: Vec<&str> = v.split_whitespace().collect();
                if parts.len() != 4 {
                    return Err(Error::Config(format!(
                        "manifest task line needs: name adapters head plan, got {v:?}"
                    )));
                }
                tasks.push(CompositeTask {
                    name: parts[0].to_string(),
                    adapters: PathBuf::from(parts[1]),
                    head: PathBuf::from(parts[2]),
                    plan: PathBuf::from(parts[3]),
                });
            }
            (k, _) => return Err(Error::Config(format!("unknown manifest key {k:?}"))),
        }
    }
    Ok(CompositeManifest {
        base: base.ok_or_else(|| Error::Config("manifest missing base".into()))?,
        base_sha256: base_sha256.ok_or_else(|| Error::Config("manifest missing base hash".into()))?,
        tasks,
    })
}

pub fn save_manifest(m: &CompositeManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_text(m))?;
    Ok(())
}

pub fn load_manifest(path: &Path) -> Result<CompositeManifest> {
    let text = std::fs::read_to_string(path)?;
    manifest_from_text(&text)
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Ok(hex(&Sha256::digest(&bytes)))
}

/// Rebuild the runnable adapted model for one task of a composite
/// manifest: base weights are loaded once, hash-verified against the
/// manifest, the stored plan is injected, and adapter plus head weights are
/// applied. Refuses to load when the base hash does not match.
pub fn compose(manifest_path: &Path, task: &str) -> Result<PolicyModel<f32>> {
    let manifest = load_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or(Path::new("."));
    let entry = manifest
        .tasks
        .iter()
        .find(|t| t.name == task)
        .ok_or_else(|| Error::Config(format!("manifest has no task {task:?}")))?;

    let base_path = dir.join(&manifest.base);
    let got = file_sha256(&base_path)?;
    if got != manifest.base_sha256 {
        return Err(Error::HashMismatch {
            path: base_path.display().to_string(),
            expected: manifest.base_sha256.clone(),
            got,
        });
    }
    let base = load_bundle(&base_path)?;
    let backbone = backbone_from_meta(&base)?;
    let mut registry = build_backbone::<f32>(&backbone, 0)?;
    apply_bundle(&base, &mut registry, OriginFilter::Only(Origin::Base))?;

    let plan = plan_from_text(&std::fs::read_to_string(dir.join(&entry.plan))?)?;
    let adapters = inject(&backbone, &plan, &mut registry, 0)?;
    let adapter_bundle = load_bundle(&dir.join(&entry.adapters))?;
    apply_bundle(&adapter_bundle, &mut registry, OriginFilter::Only(Origin::Adapter))?;

    let head_bundle = load_bundle(&dir.join(&entry.head))?;
    let head = head_config_from_meta(&head_bundle)?;
    build_head(backbone.feature_geometry(), &head, &mut registry, 0)?;
    apply_bundle(&head_bundle, &mut registry, OriginFilter::Only(Origin::Head))?;

    Ok(PolicyModel {
        backbone,
        adapters,
        head,
        registry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backbone::VitBackboneSpec;

    fn vit_registry(seed: u64) -> ParameterRegistry<f32> {
        build_backbone::<f32>(&Backbone::Vit(VitBackboneSpec::default()), seed).unwrap()
    }

    #[test]
    fn save_is_deterministic() {
        let reg = vit_registry(4);
        let meta = vec![("backbone".to_string(), "vit".to_string())];
        let a = encode_bundle(&bundle_from_registry(&reg, OriginFilter::All, meta.clone()).unwrap());
        let b = encode_bundle(&bundle_from_registry(&reg, OriginFilter::All, meta).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let reg = vit_registry(4);
        let bundle = bundle_from_registry(&reg, OriginFilter::All, Vec::new()).unwrap();
        let decoded = decode_bundle(&encode_bundle(&bundle), "mem").unwrap();
        assert_eq!(decoded.tensors.len(), bundle.tensors.len());
        for (a, b) in decoded.tensors.iter().zip(bundle.tensors.iter()) {
            assert_eq!(a.name, b.name);
            assert_eq!(a.bytes, b.bytes);
            let ta: Tensor<f32> = a.to_tensor().unwrap();
            let tb = reg.get(&a.name).unwrap();
            assert!(ta.bit_eq(&tb.value));
        }
    }

    #[test]
    fn empty_selection_is_an_error() {
        let reg = vit_registry(4);
        assert!(matches!(
            bundle_from_registry(&reg, OriginFilter::Only(Origin::Adapter), Vec::new()),
            Err(Error::EmptySelection(_))
        ));
    }

    #[test]
    fn tampered_byte_refuses_to_load() {
        let reg = vit_registry(9);
        let bundle = bundle_from_registry(&reg, OriginFilter::All, Vec::new()).unwrap();
        let mut bytes = encode_bundle(&bundle);
        let mid = bytes.len() / 2;
        bytes[mid] ^= 1;
        assert!(matches!(
            decode_bundle(&bytes, "mem"),
            Err(Error::HashMismatch { .. })
        ));
    }

    #[test]
    fn verify_lossless_detects_single_bit_drift() {
        let reg = vit_registry(12);
        let bundle = bundle_from_registry(&reg, OriginFilter::All, Vec::new()).unwrap();
        assert!(verify_lossless(&bundle, &reg, OriginFilter::All).unwrap());

        let mut drifted = reg.clone();
        let p = drifted.get_mut("blk3.attn.q.weight").unwrap();
        let mut data = p.value.data().to_vec();
        data[17] += 1e-7;
        p.value = Tensor::from_vec(p.value.shape(), data).unwrap();
        assert!(!verify_lossless(&bundle, &drifted, OriginFilter::All).unwrap());
    }

    #[test]
    fn verify_lossless_rejects_name_set_mismatch() {
        let reg = vit_registry(12);
        let bundle = bundle_from_registry(&reg, OriginFilter::All, Vec::new()).unwrap();
        let mut smaller = reg.clone();
        smaller.remove("pos").unwrap();
        match verify_lossless(&bundle, &smaller, OriginFilter::All) {
            Err(Error::NameSetMismatch { missing, extra }) => {
                assert_eq!(missing, vec!["pos".to_string()]);
                assert!(extra.is_empty());
            }
            other => panic!("expected NameSetMismatch, got {other:?}"),
        }
    }

    #[test]
    fn registry_hash_matches_bundle_payload_hash() {
        let reg = vit_registry(3);
        let bundle = bundle_from_registry(&reg, OriginFilter::All, Vec::new()).unwrap();
        assert_eq!(
            bundle.payload_sha256(),
            registry_payload_sha256(&reg, OriginFilter::All)
        );
    }

    #[test]
    fn rebuild_from_bundle_gives_bitwise_identical_forward() {
        use crate::backbone::{forward_features, NoHooks};
        let bb = Backbone::Vit(VitBackboneSpec::default());
        let built = build_backbone::<f32>(&bb, 17).unwrap();
        let bundle = bundle_from_registry(&built, OriginFilter::All, Vec::new()).unwrap();
        let decoded = decode_bundle(&encode_bundle(&bundle), "mem").unwrap();
        let mut rebuilt = build_backbone::<f32>(&bb, 999).unwrap();
        apply_bundle(&decoded, &mut rebuilt, OriginFilter::All).unwrap();

        let image = Tensor::from_fn(&[1, 3, 64, 64], |i| ((i * 37) % 100) as f32 / 100.0);
        let run = |reg: &ParameterRegistry<f32>| {
            let mut g = crate::graph::Graph::inference(reg);
            let x = g.input(image.clone());
            let y = forward_features(&bb, &mut g, x, &NoHooks).unwrap();
            g.value(y).clone()
        };
        assert!(run(&built).bit_eq(&run(&rebuilt)));
    }

    #[test]
    fn manifest_round_trips_through_text() {
        let m = CompositeManifest {
            base: PathBuf::from("base.adpb"),
            base_sha256: "ab12".into(),
            tasks: vec![CompositeTask {
                name: "push".into(),
                adapters: PathBuf::from("push/adapters.adpb"),
                head: PathBuf::from("push/head.adpb"),
                plan: PathBuf::from("push/plan.txt"),
            }],
        };
        assert_eq!(manifest_from_text(&manifest_to_text(&m)).unwrap(), m);
    }
}
