use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// 2.5D indoor world: an occupancy grid whose wall cells are extruded from
/// the floor (z = 0) to `wall_height`, optionally capped by a ceiling.
///
/// Cell `(row, col)` covers `x ∈ [col·s, (col+1)·s]`, `y ∈ [row·s, (row+1)·s]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FloorplanWorld {
    pub name: String,
    rows: usize,
    cols: usize,
    walls: Vec<bool>,
    pub cell_size: f64,
    pub wall_height: f64,
    pub has_ceiling: bool,
}

impl FloorplanWorld {
    /// Builds a world from a row-major wall mask.
    pub fn new(
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        walls: Vec<bool>,
        cell_size: f64,
        wall_height: f64,
        has_ceiling: bool,
    ) -> Result<Self> {
        if rows < 3 || cols < 3 || walls.len() != rows * cols {
            return Err(Error::contract(format!(
                "grid must be at least 3x3 with {rows}x{cols} cells"
            )));
        }
        if !(cell_size > 0.0 && wall_height > 0.0) {
            return Err(Error::contract("cell size and wall height must be positive"));
        }
        let w = FloorplanWorld {
            name: name.into(),
            rows,
            cols,
            walls,
            cell_size,
            wall_height,
            has_ceiling,
        };
        for r in 0..rows {
            for c in 0..cols {
                let edge = r == 0 || c == 0 || r + 1 == rows || c + 1 == cols;
                if edge && !w.is_wall(r as i64, c as i64) {
                    return Err(Error::contract(format!(
                        "boundary cell ({r}, {c}) must be a wall"
                    )));
                }
            }
        }
        Ok(w)
    }

    /// Parses the ASCII map format: `cellsize`, `height`, `ceiling` header
    /// lines followed by rows of `#` (wall) and `.` (free).
    pub fn parse(name: impl Into<String>, text: &str) -> Result<Self> {
        let name = name.into();
        let perr = |line: usize, message: String| Error::Parse {
            path: name.clone(),
            line,
            message,
        };
        let mut cell_size = None;
        let mut height = None;
        let mut ceiling = None;
        let mut grid: Vec<Vec<bool>> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim_end();
            if line.is_empty() {
                continue;
            }
            let mut parts = line.split_ascii_whitespace();
            let key = parts.next().unwrap();
            if grid.is_empty() && matches!(key, "cellsize" | "height" | "ceiling") {
                let val = parts
                    .next()
                    .ok_or_else(|| perr(i + 1, format!("missing value for `{key}`")))?;
                if parts.next().is_some() {
                    return Err(perr(i + 1, format!("trailing tokens after `{key}`")));
                }
                let num: f64 = val
                    .parse()
                    .map_err(|_| perr(i + 1, format!("invalid number {val:?}")))?;
                match key {
                    "cellsize" => cell_size = Some(num),
                    "height" => height = Some(num),
                    _ => {
                        if num != 0.0 && num != 1.0 {
                            return Err(perr(i + 1, "ceiling must be 0 or 1".into()));
                        }
                        ceiling = Some(num == 1.0)
                    }
                }
                continue;
            }
            let row = line
                .chars()
                .map(|ch| match ch {
                    '#' => Ok(true),
                    '.' => Ok(false),
                    other => Err(perr(i + 1, format!("unexpected map character {other:?}"))),
                })
                .collect::<Result<Vec<bool>>>()?;
            if let Some(first) = grid.first() {
                if first.len() != row.len() {
                    return Err(perr(
                        i + 1,
                        format!("row has {} cells, expected {}", row.len(), first.len()),
                    ));
                }
            }
            grid.push(row);
        }
        let missing = |k: &str| perr(0, format!("missing `{k}` header"));
        let cell_size = cell_size.ok_or_else(|| missing("cellsize"))?;
        let height = height.ok_or_else(|| missing("height"))?;
        let ceiling = ceiling.ok_or_else(|| missing("ceiling"))?;
        let rows = grid.len();
        let cols = grid.first().map_or(0, |r| r.len());
        let walls = grid.into_iter().flatten().collect();
        FloorplanWorld::new(name, rows, cols, walls, cell_size, height, ceiling)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Self::parse(name, &text).map_err(|e| match e {
            Error::Parse { line, message, .. } => Error::Parse {
                path: path.display().to_string(),
                line,
                message,
            },
            other => other,
        })
    }

    /// Loads every `*.map` file of a directory, sorted by file name.
    pub fn load_dir(dir: &Path) -> Result<Vec<Self>> {
        let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Error::io(dir, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "map"))
            .collect();
        paths.sort();
        if paths.is_empty() {
            return Err(Error::Config(format!("no .map files in {}", dir.display())));
        }
        paths.iter().map(|p| Self::load(p)).collect()
    }

    pub fn to_map_string(&self) -> String {
        let mut s = String::new();
        writeln!(s, "cellsize {}", self.cell_size).unwrap();
        writeln!(s, "height {}", self.wall_height).unwrap();
        writeln!(s, "ceiling {}", u8::from(self.has_ceiling)).unwrap();
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push(if self.walls[r * self.cols + c] { '#' } else { '.' });
            }
            s.push('\n');
        }
        s
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn width_m(&self) -> f64 {
        self.cols as f64 * self.cell_size
    }

    pub fn height_m(&self) -> f64 {
        self.rows as f64 * self.cell_size
    }

    /// Out-of-grid cells count as walls.
    #[inline]
    pub fn is_wall(&self, row: i64, col: i64) -> bool {
        if row < 0 || col < 0 || row >= self.rows as i64 || col >= self.cols as i64 {
            return true;
        }
        self.walls[row as usize * self.cols + col as usize]
    }

    /// `(row, col)` of the cell containing `(x, y)`.
    #[inline]
    pub fn cell_of(&self, x: f64, y: f64) -> (i64, i64) {
        (
            (y / self.cell_size).floor() as i64,
            (x / self.cell_size).floor() as i64,
        )
    }

    #[inline]
    pub fn cell_center(&self, row: i64, col: i64) -> (f64, f64) {
        (
            (col as f64 + 0.5) * self.cell_size,
            (row as f64 + 0.5) * self.cell_size,
        )
    }

    /// Distance from `(x, y)` to the nearest wall cell within `search` meters;
    /// returns `search` when no wall is that close.
    pub fn wall_distance(&self, x: f64, y: f64, search: f64) -> f64 {
        let s = self.cell_size;
        let (r0, c0) = self.cell_of(x, y);
        let reach = (search / s).ceil() as i64 + 1;
        let mut best = search;
        for r in r0 - reach..=r0 + reach {
            for c in c0 - reach..=c0 + reach {
                if !self.is_wall(r, c) {
                    continue;
                }
                let (x0, y0) = (c as f64 * s, r as f64 * s);
                let dx = (x0 - x).max(0.0).max(x - (x0 + s));
                let dy = (y0 - y).max(0.0).max(y - (y0 + s));
                let d = (dx * dx + dy * dy).sqrt();
                if d < best {
                    best = d;
                }
            }
        }
        best
    }

    /// True if a disk of `radius` at `(x, y)` overlaps no wall cell.
    /// Touching (distance exactly `radius`) is allowed.
    pub fn disk_is_free(&self, x: f64, y: f64, radius: f64) -> bool {
        self.wall_distance(x, y, radius + self.cell_size) >= radius
    }

    pub fn free_cells(&self) -> impl Iterator<Item = (i64, i64)> + '_ {
        (0..self.rows as i64)
            .flat_map(move |r| (0..self.cols as i64).map(move |c| (r, c)))
            .filter(move |&(r, c)| !self.is_wall(r, c))
    }
}
