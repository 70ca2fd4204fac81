//! Point clouds and the observation processing chain: temporal integration,
//! cropping, voxel and random downsampling, and ICP registration.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::geom::{Frame, Vec3};

mod downsample;
mod icp;
mod keyframes;

pub use downsample::{crop, random_downsample, voxel_downsample, voxel_index, DownsampleConfig};
pub use icp::{icp_register, IcpResult, SpatialHash};
pub use keyframes::{integrate, KeyframeBuffer};

#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    pub frame: Frame,
    /// Set when the cloud is placeholder padding produced from an empty input.
    pub from_empty: bool,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>, frame: Frame) -> Self {
        PointCloud {
            points,
            frame,
            from_empty: false,
        }
    }

    pub fn empty(frame: Frame) -> Self {
        Self::new(Vec::new(), frame)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().all(|p| p.iter().all(|c| c.is_finite()))
    }

    /// Debug dump: `# frame: <name>` then one `x y z` line per point.
    pub fn write_ascii(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "# frame: {}", self.frame)?;
        for p in &self.points {
            writeln!(w, "{} {} {}", p.x, p.y, p.z)?;
        }
        Ok(())
    }

    pub fn read_ascii(r: impl BufRead) -> Result<Self> {
        let mut frame = None;
        let mut points = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::io("<cloud stream>", e))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                if let Some(name) = rest.trim().strip_prefix("frame:") {
                    frame = Some(Frame::named(name.trim()));
                }
                continue;
            }
            let bad = || Error::Parse {
                path: "<cloud>".into(),
                line: i + 1,
                message: format!("expected `x y z`, found {line:?}"),
            };
            let v: Vec<f64> = line
                .split_ascii_whitespace()
                .map(|t| t.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<_>>()?;
            if v.len() != 3 {
                return Err(bad());
            }
            points.push(Vec3::new(v[0], v[1], v[2]));
        }
        let frame = frame.ok_or_else(|| Error::contract("cloud dump lacks a `# frame:` header"))?;
        Ok(PointCloud::new(points, frame))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ascii_dump_round_trip() {
        let pc = PointCloud::new(
            vec![Vec3::new(1.0, -2.5, 0.125), Vec3::new(0.1, 0.2, 0.3)],
            Frame::Base,
        );
        let mut buf = Vec::new();
        pc.write_ascii(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("# frame: base\n"));
        assert_eq!(PointCloud::read_ascii(&buf[..]).unwrap(), pc);
        assert!(PointCloud::read_ascii(&b"# frame: base\n1 2\n"[..]).is_err());
    }
}
