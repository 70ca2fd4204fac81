use std::collections::VecDeque;

use super::PointCloud;
use crate::error::{Error, Result};
use crate::geom::{compose, Frame, Pose};

/// Bounded FIFO of past observations, each stored in the base frame it was
/// captured in together with the `world ← base` pose at capture time.
#[derive(Clone, Debug)]
pub struct KeyframeBuffer {
    capacity: usize,
    entries: VecDeque<(PointCloud, Pose)>,
}

impl KeyframeBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "keyframe capacity must be positive");
        KeyframeBuffer {
            capacity,
            entries: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }

    /// Adds a keyframe, evicting the oldest one when full.
    pub fn push(&mut self, cloud: PointCloud, world_from_base: Pose) -> Result<()> {
        if cloud.frame != Frame::Base {
            return Err(Error::contract(format!(
                "keyframe cloud must be in the base frame, got {}",
                cloud.frame
            )));
        }
        if world_from_base.from != Frame::Base || world_from_base.to != Frame::World {
            return Err(Error::contract("keyframe pose must be world←base"));
        }
        if self.entries.len() == self.capacity {
            self.entries.pop_front();
        }
        self.entries.push_back((cloud, world_from_base));
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &(PointCloud, Pose)> {
        self.entries.iter()
    }
}

/// Expresses every stored keyframe in the current base frame and concatenates them.
pub fn integrate(buffer: &KeyframeBuffer, current: &Pose) -> Result<PointCloud> {
    let base_from_world = current.inverse();
    let total = buffer.iter().map(|(c, _)| c.len()).sum();
    let mut points = Vec::with_capacity(total);
    for (cloud, stored) in buffer.iter() {
        let rel = compose(&base_from_world, stored)?;
        points.extend(cloud.points.iter().map(|p| rel.apply(p)));
    }
    Ok(PointCloud::new(points, Frame::Base))
}
