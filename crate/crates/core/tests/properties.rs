use std::collections::HashSet;
use std::sync::Arc;

use pcnav::cloud::{crop, integrate, random_downsample, voxel_downsample, voxel_index, KeyframeBuffer, PointCloud};
use pcnav::geom::{compose, from_ypr, CameraModel, CameraMount, Frame, Pose, Vec3};
use pcnav::rl::compute_gae;
use pcnav::sim::{step_agent, Action, AgentState, FloorplanWorld, InflatedGrid, MotionNoiseModel, MotionParams};
use pcnav::task::{spl, EpisodeResult, Metrics};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(x, y, z)| Vec3::new(x, y, z))
}

fn cloud(max: usize) -> impl Strategy<Value = PointCloud> {
    prop::collection::vec(vec3(8.0), 0..max).prop_map(|p| PointCloud::new(p, Frame::Base))
}

fn pose(from: Frame, to: Frame) -> impl Strategy<Value = Pose> {
    (-3.2..3.2f64, -1.5..1.5f64, -3.2..3.2f64, vec3(5.0))
        .prop_map(move |(y, p, r, t)| Pose::new(from_ypr(y, p, r), t, from.clone(), to.clone()))
}

fn planar() -> impl Strategy<Value = Pose> {
    (-5.0..5.0f64, -5.0..5.0f64, -3.2..3.2f64).prop_map(|(x, y, h)| Pose::planar(x, y, h))
}

fn mount() -> impl Strategy<Value = CameraMount> {
    (0.3..1.8f64, -0.8..0.0f64, -0.2..0.2f64, 0.9..1.6f64).prop_map(|(height, pitch, yaw, hfov)| CameraMount {
        height,
        pitch,
        yaw,
        hfov,
    })
}

fn episode() -> impl Strategy<Value = EpisodeResult> {
    (any::<bool>(), any::<bool>(), 0.5..8.0f64, 0.0..20.0f64, 1usize..500).prop_map(
        |(success, collision, shortest, extra, steps)| EpisodeResult {
            success,
            collision,
            shortest,
            path: if success { shortest + extra } else { extra },
            reward: 0.0,
            steps,
        },
    )
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn back_projection_round_trips(m in mount(), u in 0.0..63.0f64, v in 0.0..63.0f64, d in 0.1..10.0f64) {
        let cam = CameraModel::from_mount(64, 64, &m, 0.1, 10.0).unwrap();
        let (u2, v2, d2) = cam.project(&cam.unproject(u, v, d));
        prop_assert!((u2 - u).abs() < 1e-9 && (v2 - v).abs() < 1e-9 && (d2 - d).abs() < 1e-9);
    }

    #[test]
    fn poses_are_rigid(p in pose(Frame::Base, Frame::World), a in vec3(10.0), b in vec3(10.0)) {
        let before = (a - b).norm();
        let after = (p.apply(&a) - p.apply(&b)).norm();
        prop_assert!((before - after).abs() < 1e-9);
        let back = p.inverse().apply(&p.apply(&a));
        prop_assert!((back - a).norm() < 1e-9);
    }

    #[test]
    fn composition_is_associative(
        a in pose(Frame::Base, Frame::World),
        b in pose(Frame::Camera, Frame::Base),
        x in vec3(5.0),
    ) {
        let ab = compose(&a, &b).unwrap();
        prop_assert!((ab.apply(&x) - a.apply(&b.apply(&x))).norm() < 1e-9);
        prop_assert!(compose(&b, &a).is_err());
    }

    #[test]
    fn crop_keeps_exactly_the_points_inside(c in cloud(300), half in 0.5..6.0f64) {
        let out = crop(&c, half);
        let inside: Vec<Vec3> = c
            .points
            .iter()
            .copied()
            .filter(|p| p.x.abs() <= half && p.y.abs() <= half)
            .collect();
        prop_assert_eq!(out.points, inside);
    }

    #[test]
    fn voxel_filter_keeps_one_input_point_per_voxel(c in cloud(400), voxel in 0.05..2.0f64) {
        let out = voxel_downsample(&c, voxel).unwrap();
        let input: HashSet<[u64; 3]> = c.points.iter().map(|p| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]).collect();
        let occupied: HashSet<[i64; 3]> = c.points.iter().map(|p| voxel_index(p, voxel)).collect();
        let mut seen = HashSet::new();
        for p in &out.points {
            prop_assert!(input.contains(&[p.x.to_bits(), p.y.to_bits(), p.z.to_bits()]));
            prop_assert!(seen.insert(voxel_index(p, voxel)), "two points in one voxel");
        }
        prop_assert_eq!(seen, occupied);
    }

    #[test]
    fn random_downsample_has_exact_size(c in cloud(600), target in 1usize..400, seed in any::<u64>()) {
        let a = random_downsample(&c, target, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        let b = random_downsample(&c, target, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap();
        prop_assert_eq!(a.len(), target);
        prop_assert_eq!(&a, &b);
        if c.is_empty() {
            prop_assert!(a.from_empty);
        } else {
            let key = |p: &Vec3| [p.x.to_bits(), p.y.to_bits(), p.z.to_bits()];
            let input: HashSet<[u64; 3]> = c.points.iter().map(key).collect();
            prop_assert!(a.points.iter().all(|p| input.contains(&key(p))));
            if c.len() >= target && input.len() == c.len() {
                // Sampling without replacement.
                prop_assert_eq!(a.points.iter().map(key).collect::<HashSet<_>>().len(), target);
            }
        }
    }

    /// Moving every keyframe and the current pose by the same world motion
    /// leaves the integrated cloud unchanged.
    #[test]
    fn integration_is_equivariant(
        frames in prop::collection::vec((cloud(40), planar()), 1..6),
        current in planar(),
        g in (-4.0..4.0f64, -4.0..4.0f64, -3.2..3.2f64),
    ) {
        let shift = Pose::planar(g.0, g.1, g.2).with_frames(Frame::World, Frame::World);
        let mut a = KeyframeBuffer::new(8);
        let mut b = KeyframeBuffer::new(8);
        for (c, p) in &frames {
            a.push(c.clone(), p.clone()).unwrap();
            b.push(c.clone(), compose(&shift, p).unwrap()).unwrap();
        }
        let x = integrate(&a, &current).unwrap();
        let y = integrate(&b, &compose(&shift, &current).unwrap()).unwrap();
        prop_assert_eq!(x.len(), y.len());
        for (p, q) in x.points.iter().zip(&y.points) {
            prop_assert!((p - q).norm() < 1e-9);
        }
    }

    #[test]
    fn spl_never_exceeds_success_rate(eps in prop::collection::vec(episode(), 1..50)) {
        let m = Metrics::from_episodes(&eps).unwrap();
        let s = spl(&eps).unwrap();
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert!(s <= m.success + 1e-12);
    }

    #[test]
    fn returns_are_advantages_plus_values(
        r in prop::collection::vec(-1.0..1.0f64, 12),
        v in prop::collection::vec(-1.0..1.0f64, 12),
        d in prop::collection::vec(any::<bool>(), 12),
        gamma in 0.5..1.0f64,
    ) {
        let (adv, ret) = compute_gae(&r, &v, &d, &[0.3, -0.2], gamma, 0.0);
        for i in 0..12 {
            prop_assert!((ret[i] - adv[i] - v[i]).abs() < 1e-12);
            // λ = 0 reduces to the one-step TD error.
            let next = if i + 2 < 12 { v[i + 2] } else { [0.3, -0.2][i % 2] };
            let td = r[i] + if d[i] { 0.0 } else { gamma * next } - v[i];
            prop_assert!((adv[i] - td).abs() < 1e-12);
        }
    }
}

fn pillar_world() -> Arc<FloorplanWorld> {
    let text = "cellsize 0.25\nheight 2.5\nceiling 0\n\
        ##########\n\
        #........#\n\
        #..#.....#\n\
        #......#.#\n\
        #.##.....#\n\
        #.....#..#\n\
        #........#\n\
        ##########\n";
    Arc::new(FloorplanWorld::parse("pillars", text).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn random_walks_never_penetrate(seed in any::<u64>(), noisy in any::<bool>()) {
        let world = pillar_world();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut st = AgentState { x: 0.375 + 0.25, y: 0.375 + 0.25, heading: 0.3, footprint_radius: 0.12 };
        prop_assume!(st.is_valid_in(&world));
        let noise = MotionNoiseModel { enabled: noisy, ..MotionNoiseModel::default() };
        for _ in 0..300 {
            let a = Action::from_index(rand::Rng::random_range(&mut rng, 0..3));
            let (next, _) = step_agent(&st, a, &world, &MotionParams::default(), &noise, &mut rng);
            prop_assert!(next.is_valid_in(&world), "{next:?}");
            st = next;
        }
    }

    #[test]
    fn geodesics_are_symmetric_and_satisfy_the_triangle_inequality(
        cells in prop::collection::vec((1i64..7, 1i64..9), 3),
    ) {
        let world = pillar_world();
        let grid = Arc::new(InflatedGrid::new(&world, 0.1));
        prop_assume!(cells.iter().all(|&(r, c)| grid.is_free(r, c)));
        let pts: Vec<(f64, f64)> = cells.iter().map(|&(r, c)| grid.cell_center(r, c)).collect();
        let fields: Vec<_> = pts.iter().map(|p| grid.distance_field(p.0, p.1).unwrap()).collect();
        let d = |i: usize, j: usize| fields[j].distance(pts[i].0, pts[i].1).unwrap();
        prop_assert!((d(0, 1) - d(1, 0)).abs() < 1e-9);
        prop_assert!(d(0, 2) <= d(0, 1) + d(1, 2) + 1e-9);
    }
}
