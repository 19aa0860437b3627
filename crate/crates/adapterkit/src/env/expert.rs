//! Proportional waypoint controllers with privileged state access, used to
//! manufacture demonstrations. Each expert is a pure function of the task
//! and state, so demonstrations are reproducible from seeds alone.

use super::{dist, Controller, EnvState, Observation, TaskKind, TaskSpec, EFFECTOR_RADIUS, GRASP_RADIUS};

/// Bumped whenever controller behavior changes; recorded in demo metadata.
pub const EXPERT_VERSION: u32 = 1;

/// Proportional gain: far from a waypoint the action saturates; inside
/// ~1/GAIN workspace units it decays linearly. Kept moderate so that
/// demonstrated actions are a smooth, cloneable function of the scene.
const GAIN: f64 = 4.0;

pub struct ScriptedExpert;

impl Controller for ScriptedExpert {
    fn act(&self, task: &TaskSpec, state: &EnvState, _obs: &Observation) -> Vec<f32> {
        match task.kind {
            TaskKind::Reach => reach_expert(state),
            TaskKind::Push => push_expert(task, state),
            TaskKind::Stack2d => stack_expert(state),
        }
    }
}

fn clamp1(x: f64) -> f32 {
    x.clamp(-1.0, 1.0) as f32
}

fn toward(from: [f64; 2], to: [f64; 2]) -> Vec<f32> {
    vec![clamp1(GAIN * (to[0] - from[0])), clamp1(GAIN * (to[1] - from[1]))]
}

fn reach_expert(state: &EnvState) -> Vec<f32> {
    toward(state.effector, state.goal)
}

fn push_expert(task: &TaskSpec, state: &EnvState) -> Vec<f32> {
    let block = state.objects[0].pos;
    let half = state.objects[0].half_extent;
    let goal = state.goal;
    if dist(block, goal) <= task.success_radius * 0.8 {
        return vec![0.0, 0.0];
    }
    // Unit vector from the goal through the block: the pushing axis.
    let axis = {
        let d = [block[0] - goal[0], block[1] - goal[1]];
        let n = (d[0] * d[0] + d[1] * d[1]).sqrt().max(1e-9);
        [d[0] / n, d[1] / n]
    };
    let e = state.effector;
    let rel = [e[0] - block[0], e[1] - block[1]];
    let rel_n = (rel[0] * rel[0] + rel[1] * rel[1]).sqrt().max(1e-9);
    let behind = (rel[0] * axis[0] + rel[1] * axis[1]) / rel_n;

    let contact = half + EFFECTOR_RADIUS;
    if behind > 0.92 && rel_n <= contact + 0.05 {
        // In position: press through the block toward the goal.
        let press = [
            block[0] + axis[0] * (contact - 0.025),
            block[1] + axis[1] * (contact - 0.025),
        ];
        return toward(e, press);
    }
    // Navigate to the approach point behind the block; when the straight
    // path would clip the block, orbit it at a safe radius toward the
    // approach bearing instead.
    let approach = [
        block[0] + axis[0] * (contact + 0.03),
        block[1] + axis[1] * (contact + 0.03),
    ];
    if segment_clears(e, approach, block, contact + 0.012) {
        return toward(e, approach);
    }
    let out = [rel[0] / rel_n, rel[1] / rel_n];
    let ccw = axis[0] * out[1] - axis[1] * out[0];
    let tangent = if ccw >= 0.0 {
        [out[1], -out[0]]
    } else {
        [-out[1], out[0]]
    };
    let radial = (contact + 0.05) - rel_n;
    let dir = [
        tangent[0] + out[0] * radial * 10.0,
        tangent[1] + out[1] * radial * 10.0,
    ];
    let n = (dir[0] * dir[0] + dir[1] * dir[1]).sqrt().max(1e-9);
    vec![clamp1(dir[0] / n), clamp1(dir[1] / n)]
}

/// Does the segment a-b stay at least `clearance` away from `center`?
fn segment_clears(a: [f64; 2], b: [f64; 2], center: [f64; 2], clearance: f64) -> bool {
    let ab = [b[0] - a[0], b[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let t = if len2 < 1e-12 {
        0.0
    } else {
        (((center[0] - a[0]) * ab[0] + (center[1] - a[1]) * ab[1]) / len2).clamp(0.0, 1.0)
    };
    let nearest = [a[0] + t * ab[0], a[1] + t * ab[1]];
    dist(nearest, center) >= clearance
}

fn stack_expert(state: &EnvState) -> Vec<f32> {
    let movable = state.objects[0].pos;
    let support = state.objects[1].pos;
    let e = state.effector;
    if state.attached {
        if dist(e, support) > 0.012 {
            let mut a = toward(e, support);
            a.push(1.0);
            a
        } else {
            // Centered over the support: open the gripper.
            vec![0.0, 0.0, -1.0]
        }
    } else if dist(e, movable) > GRASP_RADIUS * 0.5 {
        let mut a = toward(e, movable);
        a.push(-1.0);
        a
    } else {
        // Close the gripper while standing still; the grip check runs after
        // movement, so dashing off in the same step would miss the block.
        vec![0.0, 0.0, 1.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{evaluate, Env};

    #[test]
    fn reach_expert_succeeds_almost_always() {
        let env = Env::new(TaskKind::Reach);
        let (rate, _) = evaluate(&env, &ScriptedExpert, 200, 10_000).unwrap();
        assert!(rate >= 0.99, "reach expert success {rate}");
    }

    #[test]
    fn push_expert_succeeds_reliably() {
        let env = Env::new(TaskKind::Push);
        let (rate, _) = evaluate(&env, &ScriptedExpert, 200, 20_000).unwrap();
        assert!(rate >= 0.95, "push expert success {rate}");
    }

    #[test]
    fn stack_expert_succeeds_reliably() {
        let env = Env::new(TaskKind::Stack2d);
        let (rate, _) = evaluate(&env, &ScriptedExpert, 200, 30_000).unwrap();
        assert!(rate >= 0.90, "stack expert success {rate}");
    }

    #[test]
    fn expert_actions_are_bounded() {
        for kind in [TaskKind::Reach, TaskKind::Push, TaskKind::Stack2d] {
            let env = Env::new(kind);
            let (mut state, mut obs) = env.reset(1);
            for _ in 0..env.task.horizon {
                let a = ScriptedExpert.act(&env.task, &state, &obs);
                assert_eq!(a.len(), env.task.action_dim);
                assert!(a.iter().all(|v| (-1.0..=1.0).contains(v)));
                let (s, o, done) = env.step(&state, &a);
                if done {
                    break;
                }
                state = s;
                obs = o;
            }
        }
    }
}
