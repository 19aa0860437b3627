//! Top-down rasterization of environment states. Rendering is a pure
//! function of the state and camera, so identical states always produce
//! bit-identical images.

use super::{EnvState, TaskKind, TaskSpec};
use crate::tensor::Tensor;

pub const IMAGE_SIDE: usize = 64;

const BG: [f32; 3] = [0.12, 0.12, 0.13];
const WHITE: [f32; 3] = [0.95, 0.95, 0.95];
const RED: [f32; 3] = [0.85, 0.15, 0.12];
const BLUE: [f32; 3] = [0.15, 0.25, 0.85];
const GREEN: [f32; 3] = [0.10, 0.80, 0.20];

/// The three fixed viewpoints: plain, a shifted zoom crop, and a mirror.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CameraConfig {
    Front,
    ShiftedCrop,
    Mirrored,
}

impl CameraConfig {
    pub fn as_str(self) -> &'static str {
        match self {
            CameraConfig::Front => "front",
            CameraConfig::ShiftedCrop => "shifted",
            CameraConfig::Mirrored => "mirrored",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "front" => Some(CameraConfig::Front),
            "shifted" => Some(CameraConfig::ShiftedCrop),
            "mirrored" => Some(CameraConfig::Mirrored),
            _ => None,
        }
    }

    pub fn all() -> [CameraConfig; 3] {
        [CameraConfig::Front, CameraConfig::ShiftedCrop, CameraConfig::Mirrored]
    }

    /// World point seen at view coordinates (u, v) in [0, 1]^2.
    fn world_at(self, u: f64, v: f64) -> [f64; 2] {
        match self {
            CameraConfig::Front => [u, v],
            CameraConfig::ShiftedCrop => [u * 0.85 + 0.10, v * 0.85 + 0.06],
            CameraConfig::Mirrored => [1.0 - u, v],
        }
    }
}

pub(crate) fn inside_circle(w: [f64; 2], center: [f64; 2], radius: f64) -> bool {
    let dx = w[0] - center[0];
    let dy = w[1] - center[1];
    dx * dx + dy * dy <= radius * radius
}

pub(crate) fn inside_ring(w: [f64; 2], center: [f64; 2], inner: f64, outer: f64) -> bool {
    let dx = w[0] - center[0];
    let dy = w[1] - center[1];
    let d2 = dx * dx + dy * dy;
    d2 <= outer * outer && d2 >= inner * inner
}

pub(crate) fn inside_square(w: [f64; 2], center: [f64; 2], half: f64, angle: f64) -> bool {
    let (s, c) = angle.sin_cos();
    let dx = w[0] - center[0];
    let dy = w[1] - center[1];
    let lx = c * dx + s * dy;
    let ly = -s * dx + c * dy;
    lx.abs() <= half && ly.abs() <= half
}

pub(crate) fn inside_triangle(w: [f64; 2], center: [f64; 2], half: f64, angle: f64) -> bool {
    // Equilateral triangle inscribed in the circle of radius `half`.
    let mut verts = [[0.0f64; 2]; 3];
    for (i, v) in verts.iter_mut().enumerate() {
        let a = angle + std::f64::consts::TAU * i as f64 / 3.0 - std::f64::consts::FRAC_PI_2;
        *v = [center[0] + half * a.cos(), center[1] + half * a.sin()];
    }
    let sign = |p: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (p[0] - b[0]) * (a[1] - b[1]) - (a[0] - b[0]) * (p[1] - b[1])
    };
    let d1 = sign(w, verts[0], verts[1]);
    let d2 = sign(w, verts[1], verts[2]);
    let d3 = sign(w, verts[2], verts[0]);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

fn shade(w: [f64; 2], state: &EnvState, task: &TaskSpec) -> [f32; 3] {
    // Topmost first: effector, then objects, then the goal marker.
    if inside_circle(w, state.effector, super::EFFECTOR_RADIUS) {
        return WHITE;
    }
    match task.kind {
        TaskKind::Reach => {}
        TaskKind::Push => {
            let b = &state.objects[0];
            if inside_square(w, b.pos, b.half_extent, b.angle) {
                return RED;
            }
        }
        TaskKind::Stack2d => {
            let movable = &state.objects[0];
            if inside_square(w, movable.pos, movable.half_extent, movable.angle) {
                return RED;
            }
            let support = &state.objects[1];
            if inside_square(w, support.pos, support.half_extent, support.angle) {
                return BLUE;
            }
        }
    }
    if task.kind != TaskKind::Stack2d && inside_ring(w, state.goal, 0.022, 0.04) {
        return GREEN;
    }
    BG
}

/// Rasterize a state into a [3, 64, 64] image in [0, 1], 2x2 supersampled.
pub fn render(state: &EnvState, task: &TaskSpec, camera: CameraConfig) -> Tensor<f32> {
    let n = IMAGE_SIDE;
    let mut data = vec![0.0f32; 3 * n * n];
    for py in 0..n {
        for px in 0..n {
            let mut acc = [0.0f32; 3];
            for sy in 0..2 {
                for sx in 0..2 {
                    let u = (px as f64 + (sx as f64 + 0.5) / 2.0) / n as f64;
                    let v = (py as f64 + (sy as f64 + 0.5) / 2.0) / n as f64;
                    let c = shade(camera.world_at(u, v), state, task);
                    acc[0] += c[0];
                    acc[1] += c[1];
                    acc[2] += c[2];
                }
            }
            for ch in 0..3 {
                data[(ch * n + py) * n + px] = acc[ch] / 4.0;
            }
        }
    }
    Tensor::from_vec(&[3, n, n], data).expect("fixed image shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::Env;

    #[test]
    fn rendering_is_pure() {
        let env = Env::new(TaskKind::Stack2d);
        let (state, _) = env.reset(77);
        let a = render(&state, &env.task, CameraConfig::Front);
        let b = render(&state, &env.task, CameraConfig::Front);
        assert!(a.bit_eq(&b));
    }

    #[test]
    fn cameras_differ_and_values_stay_in_range() {
        let env = Env::new(TaskKind::Push);
        let (state, _) = env.reset(3);
        let imgs: Vec<Tensor<f32>> = CameraConfig::all()
            .iter()
            .map(|&c| render(&state, &env.task, c))
            .collect();
        for img in &imgs {
            assert_eq!(img.shape(), &[3, 64, 64]);
            assert!(img.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        }
        assert!(!imgs[0].bit_eq(&imgs[1]));
        assert!(!imgs[0].bit_eq(&imgs[2]));
    }

    #[test]
    fn scene_content_is_visible() {
        // The stacking scene must show white, red and blue pixels.
        let env = Env::new(TaskKind::Stack2d);
        let (state, _) = env.reset(15);
        let img = render(&state, &env.task, CameraConfig::Front);
        let n = 64;
        let px = |ch: usize, y: usize, x: usize| img.data()[(ch * n + y) * n + x];
        let mut saw_red = false;
        let mut saw_blue = false;
        let mut saw_white = false;
        for y in 0..n {
            for x in 0..n {
                let (r, g, b) = (px(0, y, x), px(1, y, x), px(2, y, x));
                if r > 0.7 && g < 0.3 {
                    saw_red = true;
                }
                if b > 0.7 && r < 0.3 {
                    saw_blue = true;
                }
                if r > 0.9 && g > 0.9 && b > 0.9 {
                    saw_white = true;
                }
            }
        }
        assert!(saw_red && saw_blue && saw_white);
    }
}
