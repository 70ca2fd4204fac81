use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::FloorplanWorld;
use crate::geom::{wrap_angle, Pose};

/// Discrete motion primitives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Forward,
    TurnLeft,
    TurnRight,
    Stop,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::Forward, Action::TurnLeft, Action::TurnRight, Action::Stop];
    pub const COUNT: usize = 4;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Action {
        Action::ALL[i]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub x: f64,
    pub y: f64,
    /// Radians in `(−π, π]`, measured from world +x towards +y.
    pub heading: f64,
    pub footprint_radius: f64,
}

impl AgentState {
    pub fn pose(&self) -> Pose {
        Pose::planar(self.x, self.y, self.heading)
    }

    pub fn is_valid_in(&self, world: &FloorplanWorld) -> bool {
        world.disk_is_free(self.x, self.y, self.footprint_radius)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionNoiseModel {
    pub trans_sigma: f64,
    pub rot_sigma: f64,
    pub enabled: bool,
}

impl Default for MotionNoiseModel {
    fn default() -> Self {
        MotionNoiseModel {
            trans_sigma: 0.02,
            rot_sigma: 2f64.to_radians(),
            enabled: false,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MotionParams {
    pub forward_step: f64,
    pub turn_angle: f64,
}

impl Default for MotionParams {
    fn default() -> Self {
        MotionParams {
            forward_step: 0.25,
            turn_angle: 10f64.to_radians(),
        }
    }
}

/// Zero-mean Gaussian truncated at 3σ by rejection.
fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, sigma: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 3.0 {
            return z * sigma;
        }
    }
}

/// Largest fraction of the segment `from → from + delta` the disk can travel
/// without overlapping a wall, found by fine stepping then bisection.
fn sweep(world: &FloorplanWorld, x: f64, y: f64, dx: f64, dy: f64, radius: f64) -> (f64, bool) {
    let len = (dx * dx + dy * dy).sqrt();
    if len == 0.0 {
        return (0.0, false);
    }
    let n = (len / 0.01).ceil().max(1.0) as usize;
    let mut lo = 0.0;
    for i in 1..=n {
        let s = i as f64 / n as f64;
        if world.disk_is_free(x + s * dx, y + s * dy, radius) {
            lo = s;
            continue;
        }
        let mut hi = s;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            if world.disk_is_free(x + mid * dx, y + mid * dy, radius) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        return (lo, true);
    }
    (1.0, false)
}

/// Applies one motion primitive. Translation is swept against the walls; on
/// contact the agent stops at the last free position and `collided` is set.
pub fn step_agent<R: Rng + ?Sized>(
    state: &AgentState,
    action: Action,
    world: &FloorplanWorld,
    motion: &MotionParams,
    noise: &MotionNoiseModel,
    rng: &mut R,
) -> (AgentState, bool) {
    if action == Action::Stop {
        return (*state, false);
    }
    let (mut dx, mut dy, mut dh) = match action {
        Action::Forward => (
            motion.forward_step * state.heading.cos(),
            motion.forward_step * state.heading.sin(),
            0.0,
        ),
        Action::TurnLeft => (0.0, 0.0, motion.turn_angle),
        Action::TurnRight => (0.0, 0.0, -motion.turn_angle),
        Action::Stop => unreachable!(),
    };
    if noise.enabled {
        dx += truncated_normal(rng, noise.trans_sigma);
        dy += truncated_normal(rng, noise.trans_sigma);
        dh += truncated_normal(rng, noise.rot_sigma);
    }
    let (frac, collided) = sweep(world, state.x, state.y, dx, dy, state.footprint_radius);
    let next = AgentState {
        x: state.x + frac * dx,
        y: state.y + frac * dy,
        heading: wrap_angle(state.heading + dh),
        footprint_radius: state.footprint_radius,
    };
    (next, collided)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn room() -> FloorplanWorld {
        let (rows, cols) = (40, 40);
        let walls = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                r == 0 || c == 0 || r == rows - 1 || c == cols - 1
            })
            .collect();
        FloorplanWorld::new("room", rows, cols, walls, 0.1, 2.5, false).unwrap()
    }

    fn agent(x: f64, y: f64, heading: f64) -> AgentState {
        AgentState { x, y, heading, footprint_radius: 0.25 }
    }

    #[test]
    fn forward_in_open_space() {
        let w = room();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = agent(2.0, 2.0, 0.0);
        let (n, hit) = step_agent(&s, Action::Forward, &w, &MotionParams::default(), &MotionNoiseModel::default(), &mut rng);
        assert!(!hit);
        assert!((n.x - 2.25).abs() < 1e-12 && (n.y - 2.0).abs() < 1e-12);
    }

    #[test]
    fn turn_left_only_rotates() {
        let w = room();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = agent(2.0, 2.0, 0.0);
        let (n, hit) = step_agent(&s, Action::TurnLeft, &w, &MotionParams::default(), &MotionNoiseModel::default(), &mut rng);
        assert!(!hit);
        assert_eq!((n.x, n.y), (2.0, 2.0));
        assert!((n.heading - 10f64.to_radians()).abs() < 1e-12);
    }

    #[test]
    fn forward_into_wall_stops_at_contact() {
        let w = room();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Inner wall face at x = 3.9; footprint edge 0.1 m short of it.
        let s = agent(3.9 - 0.25 - 0.1, 2.0, 0.0);
        let (n, hit) = step_agent(&s, Action::Forward, &w, &MotionParams::default(), &MotionNoiseModel::default(), &mut rng);
        assert!(hit);
        // Swept-disk oracle: contact when the centre reaches 3.9 − r.
        assert!((n.x - (3.9 - 0.25)).abs() < 1e-6);
        assert!(n.is_valid_in(&w));
    }

    #[test]
    fn stop_is_identity() {
        let w = room();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let s = agent(1.0, 1.0, 0.5);
        let noisy = MotionNoiseModel { enabled: true, ..Default::default() };
        assert_eq!(step_agent(&s, Action::Stop, &w, &MotionParams::default(), &noisy, &mut rng), (s, false));
    }

    #[test]
    fn noise_is_bounded_and_seeded() {
        let w = room();
        let noisy = MotionNoiseModel { enabled: true, ..Default::default() };
        let s = agent(2.0, 2.0, 0.0);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            step_agent(&s, Action::Forward, &w, &MotionParams::default(), &noisy, &mut rng).0
        };
        let a = run(7);
        assert_eq!(a, run(7));
        assert!((a.x - 2.25).abs() <= 0.06 + 1e-12);
        assert!((a.y - 2.0).abs() <= 0.06 + 1e-12);
        assert!(a.heading.abs() <= 6f64.to_radians() + 1e-12);
    }
}
