use nalgebra::{Matrix3, SymmetricEigen};
use rustc_hash::FxHashMap;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{compose, Mat3, Pose, Vec3};

/// Uniform-grid hash for exact nearest-neighbour queries.
pub struct SpatialHash<'a> {
    points: &'a [Vec3],
    cell: f64,
    buckets: FxHashMap<[i64; 3], Vec<u32>>,
    min_key: [i64; 3],
    max_key: [i64; 3],
}

impl<'a> SpatialHash<'a> {
    pub fn new(points: &'a [Vec3], cell: f64) -> Self {
        assert!(cell > 0.0);
        let mut buckets: FxHashMap<[i64; 3], Vec<u32>> = FxHashMap::default();
        let mut min_key = [i64::MAX; 3];
        let mut max_key = [i64::MIN; 3];
        for (i, p) in points.iter().enumerate() {
            let k = Self::key_of(p, cell);
            for a in 0..3 {
                min_key[a] = min_key[a].min(k[a]);
                max_key[a] = max_key[a].max(k[a]);
            }
            buckets.entry(k).or_default().push(i as u32);
        }
        SpatialHash {
            points,
            cell,
            buckets,
            min_key,
            max_key,
        }
    }

    /// Picks a cell size giving a handful of points per occupied cell.
    pub fn with_auto_cell(points: &'a [Vec3]) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in points {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let ext = (hi - lo).map(|e| e.max(1e-3));
        let vol = ext.x * ext.y * ext.z;
        let cell = (4.0 * vol / points.len().max(1) as f64).cbrt().max(1e-3);
        Self::new(points, cell)
    }

    #[inline]
    fn key_of(p: &Vec3, cell: f64) -> [i64; 3] {
        [
            (p.x / cell).floor() as i64,
            (p.y / cell).floor() as i64,
            (p.z / cell).floor() as i64,
        ]
    }

    /// Index and distance of the nearest stored point, or `None` if empty.
    pub fn nearest(&self, q: &Vec3) -> Option<(usize, f64)> {
        if self.points.is_empty() {
            return None;
        }
        let k = Self::key_of(q, self.cell);
        let mut best = (usize::MAX, f64::INFINITY);
        // Shells of Chebyshev radius r; every point in shell r+1 is at least
        // r·cell away, so the search can stop once best ≤ r·cell.
        let reach = (0..3)
            .map(|a| (k[a] - self.min_key[a]).abs().max((self.max_key[a] - k[a]).abs()))
            .max()
            .unwrap();
        for r in 0..=reach {
            if best.1 <= (r as f64 - 1.0).max(0.0) * self.cell && r > 0 {
                break;
            }
            for dx in -r..=r {
                for dy in -r..=r {
                    for dz in -r..=r {
                        if dx.abs().max(dy.abs()).max(dz.abs()) != r {
                            continue;
                        }
                        let key = [k[0] + dx, k[1] + dy, k[2] + dz];
                        if let Some(b) = self.buckets.get(&key) {
                            for &i in b {
                                let d = (self.points[i as usize] - q).norm();
                                if d < best.1 || (d == best.1 && (i as usize) < best.0) {
                                    best = (i as usize, d);
                                }
                            }
                        }
                    }
                }
            }
        }
        Some(best)
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    /// `target ← source`.
    pub pose: Pose,
    /// RMS distance over the retained correspondences of the last iteration.
    pub rms: f64,
    pub iterations: usize,
}

/// Closed-form least-squares rigid alignment mapping `src[i]` onto `dst[i]`.
fn kabsch(src: &[Vec3], dst: &[Vec3]) -> Result<(Mat3, Vec3)> {
    let n = src.len() as f64;
    let cs = src.iter().sum::<Vec3>() / n;
    let cd = dst.iter().sum::<Vec3>() / n;
    let mut h = Matrix3::zeros();
    let mut spread = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        let a = s - cs;
        h += a * (d - cd).transpose();
        spread += a * a.transpose();
    }
    // Rank check on the source scatter: collinear sets leave a free rotation.
    let eig = SymmetricEigen::new(spread / n);
    let mut ev: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    if src.len() < 3 || ev[1] <= 1e-12 * ev[0].max(1e-300) || ev[0] <= 0.0 {
        return Err(Error::DegenerateGeometry(format!(
            "need 3 non-collinear correspondences, got {} with scatter eigenvalues {ev:?}",
            src.len()
        )));
    }
    let svd = h.svd(true, true);
    let u = svd.u.unwrap();
    let v = svd.v_t.unwrap().transpose();
    let mut d = Mat3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    let r = v * d * u.transpose();
    Ok((r, cd - r * cs))
}

fn median(v: &mut [f64]) -> f64 {
    let mid = v.len() / 2;
    let (_, m, _) = v.select_nth_unstable_by(mid, |a, b| a.total_cmp(b));
    *m
}

/// Point-to-point ICP. Returns `target ← source` refined from `init`.
///
/// Correspondences farther than three times the median distance are dropped.
/// Iteration stops when the mean residual changes by less than `tol` across an
/// alignment step, or after `max_iter` iterations.
pub fn icp_register(
    source: &PointCloud,
    target: &PointCloud,
    init: &Pose,
    max_iter: usize,
    tol: f64,
) -> Result<IcpResult> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::DegenerateGeometry("ICP needs nonempty clouds".into()));
    }
    if init.from != source.frame || init.to != target.frame {
        return Err(Error::contract(format!(
            "init pose maps {}→{} but clouds are {}→{}",
            init.from, init.to, source.frame, target.frame
        )));
    }
    let grid = SpatialHash::with_auto_cell(&target.points);
    let mut pose = init.clone();
    let mut rms = f64::INFINITY;
    let mut iterations = 0;
    let mut moved = Vec::with_capacity(source.len());
    let mut matched = Vec::with_capacity(source.len());
    let mut dists = Vec::with_capacity(source.len());
    for _ in 0..max_iter.max(1) {
        iterations += 1;
        moved.clear();
        matched.clear();
        dists.clear();
        for p in &source.points {
            let q = pose.apply(p);
            let (j, d) = grid.nearest(&q).unwrap();
            moved.push(q);
            matched.push(target.points[j]);
            dists.push(d);
        }
        let mut scratch = dists.clone();
        let cutoff = 3.0 * median(&mut scratch);
        let (src, dst): (Vec<Vec3>, Vec<Vec3>) = moved
            .iter()
            .zip(&matched)
            .zip(&dists)
            .filter(|(_, d)| **d <= cutoff)
            .map(|((a, b), _)| (*a, *b))
            .unzip();
        let before = src.iter().zip(&dst).map(|(a, b)| (a - b).norm()).sum::<f64>() / src.len() as f64;
        let (r, t) = kabsch(&src, &dst)?;
        let step = Pose::new(r, t, target.frame.clone(), target.frame.clone());
        pose = compose(&step, &pose)?;
        let mut after = 0.0;
        let mut sq = 0.0;
        for (a, b) in src.iter().zip(&dst) {
            let e = (r * a + t - b).norm();
            after += e;
            sq += e * e;
        }
        after /= src.len() as f64;
        rms = (sq / src.len() as f64).sqrt();
        if (before - after).abs() < tol {
            break;
        }
    }
    Ok(IcpResult {
        pose,
        rms,
        iterations,
    })
}
