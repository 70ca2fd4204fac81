use rand::seq::index;
use rand::Rng;
use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::Vec3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DownsampleConfig {
    /// Half side of the square region of interest around the robot, meters.
    pub crop_half_extent: f64,
    pub voxel_size: f64,
    pub target_points: usize,
}

impl Default for DownsampleConfig {
    fn default() -> Self {
        DownsampleConfig {
            crop_half_extent: 5.0,
            voxel_size: 0.05,
            target_points: 256,
        }
    }
}

impl DownsampleConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.crop_half_extent > 0.0 && self.voxel_size > 0.0 && self.target_points > 0) {
            return Err(Error::Config(format!(
                "downsampling parameters must be strictly positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Keeps points with `|x| ≤ h` and `|y| ≤ h`; z is not bounded.
pub fn crop(cloud: &PointCloud, half_extent: f64) -> PointCloud {
    let points = cloud
        .points
        .iter()
        .filter(|p| p.x.abs() <= half_extent && p.y.abs() <= half_extent)
        .copied()
        .collect();
    PointCloud {
        points,
        frame: cloud.frame.clone(),
        from_empty: cloud.from_empty,
    }
}

/// Integer cell of an origin-anchored grid with the given edge length.
#[inline]
pub fn voxel_index(p: &Vec3, voxel: f64) -> [i64; 3] {
    [
        (p.x / voxel).floor() as i64,
        (p.y / voxel).floor() as i64,
        (p.z / voxel).floor() as i64,
    ]
}

/// One point per occupied voxel: the input point closest to the centroid of
/// the voxel's members (lowest index on ties). Voxels are emitted in order of
/// first occupancy.
pub fn voxel_downsample(cloud: &PointCloud, voxel: f64) -> Result<PointCloud> {
    if !(voxel > 0.0) {
        return Err(Error::contract(format!("voxel size must be positive, got {voxel}")));
    }
    let n = cloud.points.len();
    let mut slot_of: FxHashMap<[i64; 3], u32> = FxHashMap::default();
    slot_of.reserve(n / 2);
    let mut slots = Vec::with_capacity(n);
    // (sum, count) per slot.
    let mut acc: Vec<(Vec3, u32)> = Vec::new();
    for p in &cloud.points {
        let key = voxel_index(p, voxel);
        let next = acc.len() as u32;
        let s = *slot_of.entry(key).or_insert(next);
        if s == next {
            acc.push((Vec3::zeros(), 0));
        }
        let a = &mut acc[s as usize];
        a.0 += p;
        a.1 += 1;
        slots.push(s);
    }
    let centroids: Vec<Vec3> = acc.iter().map(|(sum, c)| sum / *c as f64).collect();
    let mut best: Vec<(f64, usize)> = vec![(f64::INFINITY, usize::MAX); acc.len()];
    for (i, (p, &s)) in cloud.points.iter().zip(&slots).enumerate() {
        let d = (p - centroids[s as usize]).norm_squared();
        let b = &mut best[s as usize];
        if d < b.0 {
            *b = (d, i);
        }
    }
    let points = best.iter().map(|&(_, i)| cloud.points[i]).collect();
    Ok(PointCloud {
        points,
        frame: cloud.frame.clone(),
        from_empty: cloud.from_empty,
    })
}

/// Resamples to exactly `target` points.
///
/// Larger inputs are subsampled uniformly without replacement; smaller
/// nonempty inputs keep every point and are padded with draws with
/// replacement; an empty input yields `target` copies of the origin and sets
/// `from_empty`.
pub fn random_downsample<R: Rng + ?Sized>(
    cloud: &PointCloud,
    target: usize,
    rng: &mut R,
) -> Result<PointCloud> {
    if target == 0 {
        return Err(Error::contract("random_downsample target must be positive"));
    }
    let n = cloud.points.len();
    let (points, from_empty) = if n == 0 {
        (vec![Vec3::zeros(); target], true)
    } else if n >= target {
        let idx = index::sample(rng, n, target);
        (idx.iter().map(|i| cloud.points[i]).collect(), cloud.from_empty)
    } else {
        let mut pts = cloud.points.clone();
        pts.extend((n..target).map(|_| cloud.points[rng.random_range(0..n)]));
        (pts, cloud.from_empty)
    };
    Ok(PointCloud {
        points,
        frame: cloud.frame.clone(),
        from_empty,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::Frame;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::HashSet;

    fn cloud(points: Vec<Vec3>) -> PointCloud {
        PointCloud::new(points, Frame::Base)
    }

    #[test]
    fn crop_cases() {
        let inside = cloud(vec![Vec3::new(1.0, -2.0, 9.0), Vec3::new(-4.9, 4.9, -3.0)]);
        assert_eq!(crop(&inside, 5.0), inside);

        let c = cloud(vec![Vec3::new(10.1, 0.0, 0.0), Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, -10.0, 50.0)]);
        let out = crop(&c, 10.0);
        assert_eq!(out.points, vec![Vec3::new(10.0, 0.0, 0.0), Vec3::new(0.0, -10.0, 50.0)]);
    }

    #[test]
    fn voxel_cases() {
        let single = cloud(vec![Vec3::new(0.3, 0.2, 0.1)]);
        assert_eq!(voxel_downsample(&single, 0.1).unwrap(), single);

        // Both inside cell (0, 0, 0) of a 0.1 m grid.
        let pair = cloud(vec![Vec3::new(0.02, 0.02, 0.02), Vec3::new(0.03, 0.02, 0.02)]);
        assert_eq!(voxel_index(&pair.points[0], 0.1), voxel_index(&pair.points[1], 0.1));
        assert_eq!(voxel_downsample(&pair, 0.1).unwrap().len(), 1);

        let lattice: Vec<Vec3> = (0..4)
            .flat_map(|i| (0..4).map(move |j| Vec3::new(i as f64 + 0.5, j as f64 + 0.5, 0.5)))
            .collect();
        let lc = cloud(lattice);
        assert_eq!(voxel_downsample(&lc, 0.1).unwrap(), lc);

        assert!(voxel_downsample(&lc, 0.0).is_err());
    }

    #[test]
    fn voxel_keeps_point_nearest_centroid() {
        let c = cloud(vec![
            Vec3::new(0.01, 0.05, 0.05),
            Vec3::new(0.05, 0.05, 0.05),
            Vec3::new(0.09, 0.05, 0.05),
        ]);
        let out = voxel_downsample(&c, 0.1).unwrap();
        assert_eq!(out.points, vec![Vec3::new(0.05, 0.05, 0.05)]);
    }

    #[test]
    fn random_downsample_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let big = cloud((0..2048).map(|i| Vec3::new(i as f64, 0.0, 0.0)).collect());
        let out = random_downsample(&big, 1024, &mut rng).unwrap();
        assert_eq!(out.len(), 1024);
        let distinct: HashSet<i64> = out.points.iter().map(|p| p.x as i64).collect();
        assert_eq!(distinct.len(), 1024);

        let exact = cloud((0..16).map(|i| Vec3::new(i as f64, 1.0, 0.0)).collect());
        let out = random_downsample(&exact, 16, &mut rng).unwrap();
        let mut xs: Vec<i64> = out.points.iter().map(|p| p.x as i64).collect();
        xs.sort();
        assert_eq!(xs, (0..16).collect::<Vec<_>>());

        let empty = cloud(vec![]);
        let out = random_downsample(&empty, 8, &mut rng).unwrap();
        assert_eq!(out.len(), 8);
        assert!(out.from_empty);
        assert!(out.points.iter().all(|p| *p == Vec3::zeros()));

        let small = cloud(vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(4.0, 5.0, 6.0)]);
        let out = random_downsample(&small, 5, &mut rng).unwrap();
        assert_eq!(out.len(), 5);
        assert!(!out.from_empty);
        assert!(out.points.iter().all(|p| small.points.contains(p)));

        assert!(random_downsample(&small, 0, &mut rng).is_err());
    }
}
