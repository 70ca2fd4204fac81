use super::FloorplanWorld;
use crate::error::{Error, Result};
use crate::geom::{CameraModel, DepthImage, Frame, Pose, Vec3};

/// Ray parameter of the first wall face hit by `o + t·d`, traversing the
/// grid in 2D (Amanatides–Woo) and checking the hit height against the
/// extruded wall. Stops once `t` exceeds `t_max`.
fn trace_walls(world: &FloorplanWorld, o: &Vec3, d: &Vec3, t_max: f64) -> Option<f64> {
    let s = world.cell_size;
    let (mut row, mut col) = world.cell_of(o.x, o.y);
    let step_c: i64 = if d.x > 0.0 { 1 } else { -1 };
    let step_r: i64 = if d.y > 0.0 { 1 } else { -1 };
    let next_x = |c: i64| (c + i64::from(d.x > 0.0)) as f64 * s;
    let next_y = |r: i64| (r + i64::from(d.y > 0.0)) as f64 * s;
    let mut t_x = if d.x != 0.0 { (next_x(col) - o.x) / d.x } else { f64::INFINITY };
    let mut t_y = if d.y != 0.0 { (next_y(row) - o.y) / d.y } else { f64::INFINITY };
    let dt_x = if d.x != 0.0 { s / d.x.abs() } else { f64::INFINITY };
    let dt_y = if d.y != 0.0 { s / d.y.abs() } else { f64::INFINITY };
    let limit = (world.rows() + world.cols()) * 2 + 4;
    for _ in 0..limit {
        let t_enter;
        if t_x < t_y {
            t_enter = t_x;
            col += step_c;
            t_x += dt_x;
        } else {
            t_enter = t_y;
            row += step_r;
            t_y += dt_y;
        }
        if t_enter > t_max {
            return None;
        }
        if world.is_wall(row, col) {
            let z = o.z + t_enter * d.z;
            if z >= 0.0 && z <= world.wall_height {
                return Some(t_enter);
            }
            // Below the floor or above the wall tops: nothing further can be hit.
            return None;
        }
    }
    None
}

/// Renders a depth image (z-depth in the camera frame) from `world ← camera`.
pub fn render_depth(
    world: &FloorplanWorld,
    cam_world: &Pose,
    cam: &CameraModel,
) -> Result<DepthImage> {
    if cam_world.from != Frame::Camera || cam_world.to != Frame::World {
        return Err(Error::contract("render pose must be world←camera"));
    }
    let o = cam_world.translation;
    let (r, c) = world.cell_of(o.x, o.y);
    if world.is_wall(r, c) || o.z <= 0.0 || (world.has_ceiling && o.z >= world.wall_height) {
        return Err(Error::contract(format!(
            "camera at ({:.3}, {:.3}, {:.3}) is not in free space",
            o.x, o.y, o.z
        )));
    }
    let rot = cam_world.rotation;
    let mut img = DepthImage::zeros(cam.width, cam.height);
    for v in 0..cam.height {
        for u in 0..cam.width {
            // Unit z in the camera frame, so the ray parameter is the z-depth.
            let dc = Vec3::new(
                (u as f64 - cam.cx) / cam.fx,
                (v as f64 - cam.cy) / cam.fy,
                1.0,
            );
            let d = rot * dc;
            let mut t = f64::INFINITY;
            if d.z < 0.0 {
                t = -o.z / d.z;
            } else if d.z > 0.0 && world.has_ceiling {
                t = (world.wall_height - o.z) / d.z;
            }
            let horizon = t.min(cam.max_depth);
            if let Some(tw) = trace_walls(world, &o, &d, horizon) {
                t = t.min(tw);
            }
            if t >= cam.min_depth && t <= cam.max_depth {
                img.set(u, v, t);
            }
        }
    }
    Ok(img)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::{compose, CameraMount};
    use std::f64::consts::FRAC_PI_2;

    fn open_world(ceiling: bool) -> FloorplanWorld {
        let (rows, cols) = (60, 60);
        let walls = (0..rows * cols)
            .map(|i| {
                let (r, c) = (i / cols, i % cols);
                r == 0 || c == 0 || r == rows - 1 || c == cols - 1
            })
            .collect();
        FloorplanWorld::new("open", rows, cols, walls, 0.1, 2.5, ceiling).unwrap()
    }

    fn camera(mount: CameraMount, max_depth: f64) -> CameraModel {
        CameraModel::from_mount(33, 33, &mount, 0.05, max_depth, ).unwrap()
    }

    #[test]
    fn facing_wall_two_meters_away() {
        let w = open_world(true);
        // Wall face at x = 5.9 (cells col 59); base at x = 3.9.
        let mount = CameraMount { height: 1.0, pitch: 0.0, yaw: 0.0, hfov: 1.0 };
        let cam = camera(mount, 10.0);
        let pose = compose(&Pose::planar(3.9, 3.0, 0.0), &cam.extrinsic).unwrap();
        let img = render_depth(&w, &pose, &cam).unwrap();
        assert!((img.get(16, 16) - 2.0).abs() < 1e-9);
    }

    #[test]
    fn looking_straight_down_sees_floor() {
        let w = open_world(false);
        let mount = CameraMount { height: 1.0, pitch: -FRAC_PI_2, yaw: 0.0, hfov: 1.0 };
        let cam = camera(mount, 10.0);
        let pose = compose(&Pose::planar(3.0, 3.0, 0.3), &cam.extrinsic).unwrap();
        let img = render_depth(&w, &pose, &cam).unwrap();
        assert!((img.get(16, 16) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ray_past_max_depth_is_invalid() {
        let w = open_world(false);
        let mount = CameraMount { height: 1.0, pitch: 0.3, yaw: 0.0, hfov: 0.2 };
        let cam = camera(mount, 1.0);
        let pose = compose(&Pose::planar(1.0, 3.0, 0.0), &cam.extrinsic).unwrap();
        let img = render_depth(&w, &pose, &cam).unwrap();
        assert_eq!(img.get(16, 16), 0.0);
    }

    #[test]
    fn camera_inside_wall_is_rejected() {
        let w = open_world(false);
        let mount = CameraMount { height: 1.0, pitch: 0.0, yaw: 0.0, hfov: 1.0 };
        let cam = camera(mount, 5.0);
        let pose = compose(&Pose::planar(0.05, 0.05, 0.0), &cam.extrinsic).unwrap();
        assert!(matches!(render_depth(&w, &pose, &cam), Err(Error::Contract(_))));
    }
}
