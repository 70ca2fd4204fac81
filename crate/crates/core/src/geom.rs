//! Rigid transforms and pinhole camera geometry.
//!
//! Axis conventions used throughout the crate:
//!
//! * camera frame: x right, y down, z forward (optical axis);
//! * base frame: x forward, y left, z up, origin on the floor under the robot;
//! * world frame: z up, floor at z = 0.
//!
//! A [`Pose`] maps coordinates expressed in `from` into coordinates expressed
//! in `to`, i.e. it is the transform `to ← from`.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::cloud::PointCloud;
use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Orthonormality drift above which rotations are re-projected onto SO(3).
pub const ORTHO_DRIFT: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Frame {
    World,
    Base,
    Camera,
    Named(Arc<str>),
}

impl Frame {
    pub fn named(name: &str) -> Self {
        match name {
            "world" => Frame::World,
            "base" => Frame::Base,
            "camera" => Frame::Camera,
            other => Frame::Named(Arc::from(other)),
        }
    }
}

impl fmt::Display for Frame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Frame::World => f.write_str("world"),
            Frame::Base => f.write_str("base"),
            Frame::Camera => f.write_str("camera"),
            Frame::Named(n) => f.write_str(n),
        }
    }
}

pub fn rot_x(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c)
}

pub fn rot_y(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c)
}

pub fn rot_z(angle: f64) -> Mat3 {
    let (s, c) = angle.sin_cos();
    Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// `Rz(yaw) · Ry(pitch) · Rx(roll)`.
pub fn from_ypr(yaw: f64, pitch: f64, roll: f64) -> Mat3 {
    rot_z(yaw) * rot_y(pitch) * rot_x(roll)
}

/// Rotation taking optical-frame axes (x right, y down, z forward) to
/// base-frame axes (x forward, y left, z up).
pub fn optical_to_base() -> Mat3 {
    Mat3::new(0.0, 0.0, 1.0, -1.0, 0.0, 0.0, 0.0, -1.0, 0.0)
}

/// Largest absolute entry of `RᵀR − I`.
pub fn orthonormality_error(r: &Mat3) -> f64 {
    (r.transpose() * r - Mat3::identity()).abs().max()
}

/// Nearest rotation in the Frobenius sense (polar decomposition).
pub fn project_to_rotation(r: &Mat3) -> Mat3 {
    let svd = r.svd(true, true);
    let u = svd.u.expect("svd u");
    let v_t = svd.v_t.expect("svd v_t");
    let mut d = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * v_t
}

#[derive(Clone, Debug, PartialEq)]
pub struct Pose {
    pub rotation: Mat3,
    pub translation: Vec3,
    pub from: Frame,
    pub to: Frame,
}

impl Pose {
    pub fn new(rotation: Mat3, translation: Vec3, from: Frame, to: Frame) -> Self {
        let rotation = if orthonormality_error(&rotation) > ORTHO_DRIFT {
            project_to_rotation(&rotation)
        } else {
            rotation
        };
        Pose {
            rotation,
            translation,
            from,
            to,
        }
    }

    pub fn identity(from: Frame, to: Frame) -> Self {
        Pose {
            rotation: Mat3::identity(),
            translation: Vec3::zeros(),
            from,
            to,
        }
    }

    /// Planar pose `world ← base` of a ground robot at `(x, y)` with heading `yaw`.
    pub fn planar(x: f64, y: f64, yaw: f64) -> Self {
        Pose {
            rotation: rot_z(yaw),
            translation: Vec3::new(x, y, 0.0),
            from: Frame::Base,
            to: Frame::World,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            translation: -(rt * self.translation),
            from: self.to.clone(),
            to: self.from.clone(),
        }
    }

    #[inline]
    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation * p + self.translation
    }

    pub fn with_frames(mut self, from: Frame, to: Frame) -> Self {
        self.from = from;
        self.to = to;
        self
    }

    pub fn is_identity(&self, tol: f64) -> bool {
        (self.rotation - Mat3::identity()).abs().max() <= tol && self.translation.norm() <= tol
    }

    /// Rotation angle of the relative rotation between two poses, in radians.
    pub fn rotation_angle_to(&self, other: &Pose) -> f64 {
        let rel = self.rotation.transpose() * other.rotation;
        ((rel.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }
}

/// `a ∘ b`: maps `b.from → a.to`. Requires `a.from == b.to`.
pub fn compose(a: &Pose, b: &Pose) -> Result<Pose> {
    if a.from != b.to {
        return Err(Error::contract(format!(
            "cannot compose {}←{} with {}←{}",
            a.to, a.from, b.to, b.from
        )));
    }
    Ok(Pose::new(
        a.rotation * b.rotation,
        a.rotation * b.translation + a.translation,
        b.from.clone(),
        a.to.clone(),
    ))
}

pub fn transform_points(pose: &Pose, cloud: &PointCloud) -> Result<PointCloud> {
    if cloud.frame != pose.from {
        return Err(Error::contract(format!(
            "cloud is in frame {} but pose maps from {}",
            cloud.frame, pose.from
        )));
    }
    let points = cloud.points.iter().map(|p| pose.apply(p)).collect();
    Ok(PointCloud {
        points,
        frame: pose.to.clone(),
        from_empty: cloud.from_empty,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: usize,
    pub height: usize,
    pub min_depth: f64,
    pub max_depth: f64,
    /// `base ← camera`.
    pub extrinsic: Pose,
}

/// Camera mount relative to the robot base.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraMount {
    /// Height of the optical centre above the floor, meters.
    pub height: f64,
    /// Tilt about the base y axis, radians; negative looks down.
    pub pitch: f64,
    /// Pan about the base z axis, radians; positive turns left.
    pub yaw: f64,
    /// Horizontal field of view, radians.
    pub hfov: f64,
}

impl CameraMount {
    pub fn extrinsic(&self) -> Pose {
        Pose::new(
            rot_z(self.yaw) * rot_y(-self.pitch) * optical_to_base(),
            Vec3::new(0.0, 0.0, self.height),
            Frame::Camera,
            Frame::Base,
        )
    }
}

impl CameraModel {
    pub fn new(
        fx: f64,
        fy: f64,
        cx: f64,
        cy: f64,
        width: usize,
        height: usize,
        min_depth: f64,
        max_depth: f64,
        extrinsic: Pose,
    ) -> Result<Self> {
        let ok = fx > 0.0
            && fy > 0.0
            && (0.0..width as f64).contains(&cx)
            && (0.0..height as f64).contains(&cy)
            && min_depth > 0.0
            && min_depth < max_depth;
        if !ok {
            return Err(Error::contract(format!(
                "invalid intrinsics fx={fx} fy={fy} cx={cx} cy={cy} {width}x{height} depth [{min_depth}, {max_depth}]"
            )));
        }
        if extrinsic.from != Frame::Camera || extrinsic.to != Frame::Base {
            return Err(Error::contract("camera extrinsic must be base←camera"));
        }
        Ok(CameraModel {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
            min_depth,
            max_depth,
            extrinsic,
        })
    }

    /// Square pixels, principal point at the image centre.
    pub fn from_mount(
        width: usize,
        height: usize,
        mount: &CameraMount,
        min_depth: f64,
        max_depth: f64,
    ) -> Result<Self> {
        let f = (width as f64 / 2.0) / (mount.hfov / 2.0).tan();
        Self::new(
            f,
            f,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
            min_depth,
            max_depth,
            mount.extrinsic(),
        )
    }

    /// Camera-frame point for pixel `(u, v)` at depth `d`.
    #[inline]
    pub fn unproject(&self, u: f64, v: f64, d: f64) -> Vec3 {
        Vec3::new((u - self.cx) * d / self.fx, (v - self.cy) * d / self.fy, d)
    }

    /// Pixel coordinates and depth of a camera-frame point.
    #[inline]
    pub fn project(&self, p: &Vec3) -> (f64, f64, f64) {
        (
            self.fx * p.x / p.z + self.cx,
            self.fy * p.y / p.z + self.cy,
            p.z,
        )
    }
}

/// Dense depth grid in meters, row-major; `0.0` marks an invalid pixel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl DepthImage {
    pub fn zeros(width: usize, height: usize) -> Self {
        DepthImage {
            width,
            height,
            data: vec![0.0; width * height],
        }
    }

    #[inline]
    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.data[v * self.width + u]
    }

    #[inline]
    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        self.data[v * self.width + u] = d;
    }

    pub fn valid_count(&self) -> usize {
        self.data.iter().filter(|d| **d != 0.0).count()
    }

    /// Golden-file encoding: `DPTH <w> <h>\n` then little-endian f32 row-major.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "DPTH {} {}", self.width, self.height)?;
        let mut buf = Vec::with_capacity(self.data.len() * 4);
        for d in &self.data {
            buf.extend_from_slice(&(*d as f32).to_le_bytes());
        }
        w.write_all(&buf)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)
            .map_err(|e| Error::io("<depth stream>", e))?;
        let nl = bytes
            .iter()
            .position(|b| *b == b'\n')
            .ok_or_else(|| Error::contract("depth file: missing header line"))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::contract("depth file: header is not ASCII"))?;
        let mut it = header.split_ascii_whitespace();
        let (magic, w, h) = (it.next(), it.next(), it.next());
        if magic != Some("DPTH") || it.next().is_some() {
            return Err(Error::contract(format!("depth file: bad header {header:?}")));
        }
        let parse = |s: Option<&str>| {
            s.and_then(|s| s.parse::<usize>().ok())
                .ok_or_else(|| Error::contract(format!("depth file: bad header {header:?}")))
        };
        let (width, height) = (parse(w)?, parse(h)?);
        let body = &bytes[nl + 1..];
        if body.len() != width * height * 4 {
            return Err(Error::contract(format!(
                "depth file: expected {} payload bytes, found {}",
                width * height * 4,
                body.len()
            )));
        }
        let data = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        Ok(DepthImage {
            width,
            height,
            data,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(std::io::BufWriter::new(f))
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(f)
    }
}

fn check_dims(depth: &DepthImage, cam: &CameraModel) -> Result<()> {
    if depth.width != cam.width || depth.height != cam.height {
        return Err(Error::contract(format!(
            "depth image is {}x{} but camera is {}x{}",
            depth.width, depth.height, cam.width, cam.height
        )));
    }
    Ok(())
}

/// Camera-frame cloud from every valid pixel, row-major order.
pub fn backproject(depth: &DepthImage, cam: &CameraModel) -> Result<PointCloud> {
    check_dims(depth, cam)?;
    let mut points = Vec::with_capacity(depth.valid_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d != 0.0 && d.is_finite() {
                points.push(cam.unproject(u as f64, v as f64, d));
            }
        }
    }
    Ok(PointCloud::new(points, Frame::Camera))
}

/// Back-projects and expresses the cloud in the robot base frame.
pub fn to_base_frame(depth: &DepthImage, cam: &CameraModel) -> Result<PointCloud> {
    check_dims(depth, cam)?;
    let r = cam.extrinsic.rotation;
    let t = cam.extrinsic.translation;
    let mut points = Vec::with_capacity(depth.valid_count());
    for v in 0..depth.height {
        for u in 0..depth.width {
            let d = depth.get(u, v);
            if d != 0.0 && d.is_finite() {
                points.push(r * cam.unproject(u as f64, v as f64, d) + t);
            }
        }
    }
    Ok(PointCloud::new(points, Frame::Base))
}

/// Wraps an angle to `(−π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut x = a.rem_euclid(2.0 * PI);
    if x > PI {
        x -= 2.0 * PI;
    }
    if x <= -PI {
        x += 2.0 * PI;
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, PI};

    fn some_pose() -> Pose {
        Pose::new(
            from_ypr(0.3, -0.2, 0.7),
            Vec3::new(1.0, -2.0, 0.5),
            Frame::Camera,
            Frame::Base,
        )
    }

    #[test]
    fn compose_with_identity() {
        let p = some_pose();
        let id = Pose::identity(Frame::Base, Frame::Base);
        let c = compose(&id, &p).unwrap();
        assert!((c.rotation - p.rotation).abs().max() < 1e-15);
        assert!((c.translation - p.translation).norm() < 1e-15);
    }

    #[test]
    fn compose_quarter_turns() {
        let a = Pose::new(rot_z(FRAC_PI_2), Vec3::zeros(), Frame::Base, Frame::Base);
        let c = compose(&a, &a).unwrap();
        // Matrix-product oracle for Rz(90°)·Rz(90°).
        let q = Mat3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        let expected = q * q;
        assert!((c.rotation - expected).abs().max() < 1e-12);
        assert!((c.rotation - rot_z(PI)).abs().max() < 1e-12);
    }

    #[test]
    fn compose_with_inverse() {
        let p = some_pose();
        let c = compose(&p, &p.inverse()).unwrap();
        assert!(c.is_identity(1e-9));
        assert_eq!(c.from, Frame::Base);
        assert_eq!(c.to, Frame::Base);
    }

    #[test]
    fn compose_frame_mismatch() {
        let p = some_pose();
        assert!(matches!(compose(&p, &p), Err(Error::Contract(_))));
    }

    #[test]
    fn drift_is_projected_away() {
        let mut r = rot_z(0.4);
        r[(0, 1)] += 1e-6;
        let p = Pose::new(r, Vec3::zeros(), Frame::Base, Frame::World);
        assert!(orthonormality_error(&p.rotation) < 1e-12);
        assert!((p.rotation.determinant() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn transform_points_cases() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)], Frame::Base);
        let id = Pose::identity(Frame::Base, Frame::World);
        assert_eq!(transform_points(&id, &cloud).unwrap().points, cloud.points);

        let shift = Pose::new(
            Mat3::identity(),
            Vec3::new(1.0, 0.0, 0.0),
            Frame::Base,
            Frame::World,
        );
        let out = transform_points(&shift, &cloud).unwrap();
        assert_eq!(out.points[0], Vec3::new(1.0, 0.0, 0.0));
        assert_eq!(out.frame, Frame::World);

        let rz = Pose::new(rot_z(FRAC_PI_2), Vec3::zeros(), Frame::Base, Frame::World);
        let out = transform_points(&rz, &cloud).unwrap();
        assert!((out.points[1] - Vec3::new(0.0, 1.0, 0.0)).norm() < 1e-12);

        let wrong = Pose::identity(Frame::Camera, Frame::World);
        assert!(transform_points(&wrong, &cloud).is_err());
    }

    fn cam(width: usize, height: usize, extrinsic: Pose) -> CameraModel {
        CameraModel::new(50.0, 50.0, 31.5, 23.5, width, height, 0.1, 10.0, extrinsic).unwrap()
    }

    #[test]
    fn backproject_cases() {
        let c = CameraModel::new(
            40.0,
            40.0,
            20.0,
            10.0,
            64,
            32,
            0.1,
            10.0,
            Pose::identity(Frame::Camera, Frame::Base),
        )
        .unwrap();
        let mut depth = DepthImage::zeros(64, 32);
        assert!(backproject(&depth, &c).unwrap().is_empty());

        depth.set(20, 10, 2.0);
        let pc = backproject(&depth, &c).unwrap();
        assert_eq!(pc.points, vec![Vec3::new(0.0, 0.0, 2.0)]);
        assert_eq!(pc.frame, Frame::Camera);

        let mut depth = DepthImage::zeros(64, 32);
        depth.set(60, 10, 3.0); // u = cx + fx
        let pc = backproject(&depth, &c).unwrap();
        assert!((pc.points[0] - Vec3::new(3.0, 0.0, 3.0)).norm() < 1e-12);

        assert!(backproject(&DepthImage::zeros(10, 10), &c).is_err());
    }

    #[test]
    fn base_frame_at_origin_matches_camera_frame() {
        let c = cam(64, 48, Pose::identity(Frame::Camera, Frame::Base));
        let mut depth = DepthImage::zeros(64, 48);
        depth.set(3, 4, 1.5);
        depth.set(40, 30, 2.5);
        let a = backproject(&depth, &c).unwrap();
        let b = to_base_frame(&depth, &c).unwrap();
        assert_eq!(a.points, b.points);
        assert_eq!(b.frame, Frame::Base);
    }

    #[test]
    fn raised_forward_camera() {
        let mount = CameraMount {
            height: 1.0,
            pitch: 0.0,
            yaw: 0.0,
            hfov: 1.2,
        };
        let e = mount.extrinsic();
        // Optical axis maps onto base +x at mount height.
        let p = e.apply(&Vec3::new(0.0, 0.0, 2.0));
        assert!((p - Vec3::new(2.0, 0.0, 1.0)).norm() < 1e-12);
        // Image right is base −y, image down is base −z.
        let r = e.apply(&Vec3::new(1.0, 0.0, 0.0));
        assert!((r - Vec3::new(0.0, -1.0, 1.0)).norm() < 1e-12);
        let d = e.apply(&Vec3::new(0.0, 1.0, 0.0));
        assert!((d - Vec3::new(0.0, 0.0, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn pitched_down_camera_looks_at_floor() {
        let mount = CameraMount {
            height: 1.0,
            pitch: -FRAC_PI_2,
            yaw: 0.0,
            hfov: 1.2,
        };
        let p = mount.extrinsic().apply(&Vec3::new(0.0, 0.0, 1.0));
        assert!(p.norm() < 1e-12);
    }

    #[test]
    fn depth_golden_round_trip() {
        let mut d = DepthImage::zeros(3, 2);
        d.set(0, 0, 1.25);
        d.set(2, 1, 7.5);
        let mut buf = Vec::new();
        d.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"DPTH 3 2\n"));
        assert_eq!(buf.len(), 9 + 24);
        assert_eq!(DepthImage::read_from(&buf[..]).unwrap(), d);
        assert!(DepthImage::read_from(&b"DPTH 3 2\n\x00"[..]).is_err());
        assert!(DepthImage::read_from(&b"XXXX 1 1\n\x00\x00\x00\x00"[..]).is_err());
    }

    #[test]
    fn wrap_angle_range() {
        assert_eq!(wrap_angle(PI), PI);
        assert!((wrap_angle(-PI) - PI).abs() < 1e-15);
        assert!((wrap_angle(3.0 * PI / 2.0) + FRAC_PI_2).abs() < 1e-12);
        assert!((wrap_angle(0.1) - 0.1).abs() < 1e-15);
    }
}
