use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;

use super::{AgentState, DistanceField, FloorplanWorld, InflatedGrid};
use crate::error::{Error, Result};

pub const MAX_REJECTIONS: usize = 1000;
const STARTS_PER_GOAL: usize = 20;

#[derive(Clone, Debug)]
pub struct Episode {
    pub start: AgentState,
    pub goal: (f64, f64),
    /// Geodesic field towards the goal at footprint clearance.
    pub field: DistanceField,
    /// Continuous geodesic from the start, see [`DistanceField::distance_interp`].
    pub shortest: f64,
}

/// Episode generator for one world, caching the inflated grid.
#[derive(Clone, Debug)]
pub struct EpisodeSampler {
    pub world: Arc<FloorplanWorld>,
    pub grid: Arc<InflatedGrid>,
    free: Vec<(i64, i64)>,
    radius: f64,
}

impl EpisodeSampler {
    pub fn new(world: Arc<FloorplanWorld>, footprint_radius: f64) -> Self {
        let grid = Arc::new(InflatedGrid::new(&world, footprint_radius));
        let free = world
            .free_cells()
            .filter(|&(r, c)| grid.is_free(r, c))
            .collect();
        EpisodeSampler {
            world,
            grid,
            free,
            radius: footprint_radius,
        }
    }

    fn random_cell_center<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (r, c) = self.free[rng.random_range(0..self.free.len())];
        self.grid.cell_center(r, c)
    }

    fn random_point<R: Rng + ?Sized>(&self, rng: &mut R) -> (f64, f64) {
        let (r, c) = self.free[rng.random_range(0..self.free.len())];
        let s = self.world.cell_size;
        (
            (c as f64 + rng.random_range(0.0..1.0)) * s,
            (r as f64 + rng.random_range(0.0..1.0)) * s,
        )
    }

    /// Rejection-samples a collision-free start and a goal whose geodesic
    /// distance lies in `[min_geo, max_geo]`. Goals are centres of cells
    /// that fit the footprint.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, min_geo: f64, max_geo: f64) -> Result<Episode> {
        if self.free.is_empty() {
            return Err(Error::InfeasibleWorld(format!(
                "{}: no cell fits a {} m footprint",
                self.world.name, self.radius
            )));
        }
        let mut rejections = 0;
        while rejections < MAX_REJECTIONS {
            let goal = self.random_cell_center(rng);
            let field = self.grid.distance_field(goal.0, goal.1)?;
            for _ in 0..STARTS_PER_GOAL {
                let (x, y) = self.random_point(rng);
                let heading = PI - rng.random_range(0.0..2.0 * PI);
                rejections += 1;
                if !self.world.disk_is_free(x, y, self.radius) {
                    continue;
                }
                let d = field.distance(x, y)?;
                if d.is_finite() && d >= min_geo && d <= max_geo {
                    let shortest = field.distance_interp(x, y)?;
                    return Ok(Episode {
                        start: AgentState {
                            x,
                            y,
                            heading,
                            footprint_radius: self.radius,
                        },
                        goal,
                        field,
                        shortest,
                    });
                }
                if rejections >= MAX_REJECTIONS {
                    break;
                }
            }
        }
        Err(Error::InfeasibleWorld(format!(
            "{}: no episode with geodesic in [{min_geo}, {max_geo}] after {MAX_REJECTIONS} rejections",
            self.world.name
        )))
    }
}

/// One-shot episode sampling for a world.
pub fn sample_episode<R: Rng + ?Sized>(
    world: &FloorplanWorld,
    rng: &mut R,
    min_geo: f64,
    max_geo: f64,
    footprint_radius: f64,
) -> Result<(AgentState, (f64, f64))> {
    let sampler = EpisodeSampler::new(Arc::new(world.clone()), footprint_radius);
    let ep = sampler.sample(rng, min_geo, max_geo)?;
    Ok((ep.start, ep.goal))
}
