//! Demonstration collection and the on-disk demo format.
//!
//! Byte layout (all integers little-endian):
//!
//! ```text
//! magic "ADPD" | format version u16 | task-name len u8, bytes | camera u8
//! expert version u32 | episode count u32 | image dims u32 c,h,w
//! action dim u32 | seed range u64 first, u64 last
//! per episode:  frame count u32, then frames:
//!   image f32 row-major (c*h*w) | proprio f32 x4 | action f32 x dim
//!   | success u8
//! trailer: SHA-256 of every preceding byte
//! ```

use std::io::{Read, Write};
use std::path::Path;

use sha2::{Digest, Sha256};

use super::{CameraConfig, Controller, Env, Observation, ScriptedExpert, TaskKind};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::train::{TrainFrame, TrainSet};

const MAGIC: &[u8; 4] = b"ADPD";
const VERSION: u16 = 1;

#[derive(Debug, Clone)]
pub struct DemoFrame {
    pub image: Tensor<f32>,
    pub proprio: [f32; 4],
    pub action: Vec<f32>,
    pub success: bool,
}

#[derive(Debug, Clone)]
pub struct Episode {
    pub frames: Vec<DemoFrame>,
}

impl Episode {
    pub fn succeeded(&self) -> bool {
        self.frames.last().is_some_and(|f| f.success)
    }
}

#[derive(Debug, Clone)]
pub struct DemoSet {
    pub task: TaskKind,
    pub camera: CameraConfig,
    pub expert_version: u32,
    pub action_dim: usize,
    /// First and last reset seed consumed while collecting (failed expert
    /// episodes advance the range).
    pub seed_first: u64,
    pub seed_last: u64,
    pub episodes: Vec<Episode>,
}

impl DemoSet {
    pub fn frame_count(&self) -> usize {
        self.episodes.iter().map(|e| e.frames.len()).sum()
    }

    /// Pool every (observation, action) pair for the trainer.
    pub fn to_train_set(&self) -> TrainSet<f32> {
        let frames = self
            .episodes
            .iter()
            .flat_map(|e| e.frames.iter())
            .map(|f| TrainFrame {
                image: f.image.clone(),
                proprio: f.proprio.to_vec(),
                action: f.action.clone(),
            })
            .collect();
        TrainSet {
            frames,
            action_dim: self.action_dim,
        }
    }
}

/// Collect `n` successful expert episodes. Failed expert episodes are
/// discarded and the seed advances, so every stored episode ends in
/// success.
pub fn collect_demos(env: &Env, n: usize, seed_base: u64) -> DemoSet {
    let expert = ScriptedExpert;
    let mut episodes = Vec::with_capacity(n);
    let mut seed = seed_base;
    let mut seed_last = seed_base;
    while episodes.len() < n {
        let (episode, succeeded) = run_expert_episode(env, &expert, seed);
        if succeeded {
            episodes.push(episode);
        }
        seed_last = seed;
        seed += 1;
    }
    DemoSet {
        task: env.task.kind,
        camera: env.camera,
        expert_version: super::expert::EXPERT_VERSION,
        action_dim: env.task.action_dim,
        seed_first: seed_base,
        seed_last,
        episodes,
    }
}

fn run_expert_episode(env: &Env, expert: &ScriptedExpert, seed: u64) -> (Episode, bool) {
    let (mut state, mut obs) = env.reset(seed);
    let mut frames = Vec::new();
    let mut succeeded = false;
    for _ in 0..env.task.horizon {
        let action = expert.act(&env.task, &state, &obs);
        let (next, next_obs, success) = env.step(&state, &action);
        frames.push(DemoFrame {
            image: frame_image(&obs),
            proprio: obs.proprio,
            action: action.clone(),
            success,
        });
        state = next;
        obs = next_obs;
        if success {
            succeeded = true;
            break;
        }
    }
    (Episode { frames }, succeeded)
}

fn frame_image(obs: &Observation) -> Tensor<f32> {
    obs.image.clone()
}

// ---- serialization -----------------------------------------------------------

fn put_u16(out: &mut Vec<u8>, v: u16) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}
fn put_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

pub fn save_demoset(set: &DemoSet, path: &Path) -> Result<()> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u16(&mut out, VERSION);
    let name = set.task.as_str().as_bytes();
    out.push(name.len() as u8);
    out.extend_from_slice(name);
    out.push(camera_code(set.camera));
    put_u32(&mut out, set.expert_version);
    put_u32(&mut out, set.episodes.len() as u32);
    let img_shape = set
        .episodes
        .first()
        .and_then(|e| e.frames.first())
        .map(|f| f.image.shape().to_vec())
        .unwrap_or_else(|| vec![3, 64, 64]);
    for d in &img_shape {
        put_u32(&mut out, *d as u32);
    }
    put_u32(&mut out, set.action_dim as u32);
    put_u64(&mut out, set.seed_first);
    put_u64(&mut out, set.seed_last);

    for episode in &set.episodes {
        put_u32(&mut out, episode.frames.len() as u32);
        for frame in &episode.frames {
            for &v in frame.image.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in &frame.proprio {
                out.extend_from_slice(&v.to_le_bytes());
            }
            for &v in &frame.action {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.push(frame.success as u8);
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);

    let tmp = path.with_extension("tmp");
    std::fs::File::create(&tmp)?.write_all(&out)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::Bundle("demo file truncated".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

fn camera_code(c: CameraConfig) -> u8 {
    match c {
        CameraConfig::Front => 0,
        CameraConfig::ShiftedCrop => 1,
        CameraConfig::Mirrored => 2,
    }
}

fn camera_from_code(code: u8) -> Option<CameraConfig> {
    match code {
        0 => Some(CameraConfig::Front),
        1 => Some(CameraConfig::ShiftedCrop),
        2 => Some(CameraConfig::Mirrored),
        _ => None,
    }
}

pub fn load_demoset(path: &Path) -> Result<DemoSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.len() < 32 {
        return Err(Error::Bundle("demo file too short".into()));
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 32);
    let digest = Sha256::digest(body);
    if digest.as_slice() != trailer {
        return Err(Error::HashMismatch {
            path: path.display().to_string(),
            expected: hex(trailer),
            got: hex(&digest),
        });
    }

    let mut r = Reader { buf: body, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Bundle("bad demo magic".into()));
    }
    if r.u16()? != VERSION {
        return Err(Error::Bundle("unsupported demo version".into()));
    }
    let name_len = r.u8()? as usize;
    let name = String::from_utf8_lossy(r.take(name_len)?).to_string();
    let task = TaskKind::parse(&name)
        .ok_or_else(|| Error::Bundle(format!("unknown task {name:?}")))?;
    let camera = camera_from_code(r.u8()?)
        .ok_or_else(|| Error::Bundle("unknown camera code".into()))?;
    let expert_version = r.u32()?;
    let n_episodes = r.u32()? as usize;
    let c = r.u32()? as usize;
    let h = r.u32()? as usize;
    let w = r.u32()? as usize;
    let action_dim = r.u32()? as usize;
    let seed_first = r.u64()?;
    let seed_last = r.u64()?;

    let mut episodes = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let n_frames = r.u32()? as usize;
        let mut frames = Vec::with_capacity(n_frames);
        for _ in 0..n_frames {
            let px = c * h * w;
            let mut img = Vec::with_capacity(px);
            for _ in 0..px {
                img.push(r.f32()?);
            }
            let mut proprio = [0f32; 4];
            for p in &mut proprio {
                *p = r.f32()?;
            }
            let mut action = Vec::with_capacity(action_dim);
            for _ in 0..action_dim {
                action.push(r.f32()?);
            }
            let success = r.u8()? != 0;
            frames.push(DemoFrame {
                image: Tensor::from_vec(&[c, h, w], img)?,
                proprio,
                action,
                success,
            });
        }
        episodes.push(Episode { frames });
    }
    Ok(DemoSet {
        task,
        camera,
        expert_version,
        action_dim,
        seed_first,
        seed_last,
        episodes,
    })
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_collected_episode_ends_in_success() {
        let env = Env::new(TaskKind::Reach);
        let set = collect_demos(&env, 5, 400);
        assert_eq!(set.episodes.len(), 5);
        assert!(set.episodes.iter().all(|e| e.succeeded()));
        assert!(set.frame_count() > 0);
    }

    #[test]
    fn demo_round_trip_preserves_bytes() {
        let env = Env::new(TaskKind::Push);
        let set = collect_demos(&env, 2, 500);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.adpd");
        save_demoset(&set, &path).unwrap();
        let loaded = load_demoset(&path).unwrap();
        assert_eq!(loaded.task, set.task);
        assert_eq!(loaded.episodes.len(), set.episodes.len());
        assert_eq!(loaded.action_dim, set.action_dim);
        assert_eq!(loaded.seed_first, set.seed_first);
        for (a, b) in loaded.episodes.iter().zip(set.episodes.iter()) {
            assert_eq!(a.frames.len(), b.frames.len());
            for (fa, fb) in a.frames.iter().zip(b.frames.iter()) {
                assert!(fa.image.bit_eq(&fb.image));
                assert_eq!(fa.proprio, fb.proprio);
                assert_eq!(fa.action, fb.action);
                assert_eq!(fa.success, fb.success);
            }
        }
    }

    #[test]
    fn tampered_demo_file_is_rejected() {
        let env = Env::new(TaskKind::Reach);
        let set = collect_demos(&env, 1, 600);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("demos.adpd");
        save_demoset(&set, &path).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0x40;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(load_demoset(&path), Err(Error::HashMismatch { .. })));
    }

    #[test]
    fn train_set_pools_all_frames() {
        let env = Env::new(TaskKind::Reach);
        let set = collect_demos(&env, 3, 700);
        let pool = set.to_train_set();
        assert_eq!(pool.frames.len(), set.frame_count());
        assert_eq!(pool.action_dim, 2);
    }
}
