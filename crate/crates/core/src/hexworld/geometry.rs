//! Hex-grid geometry in axial coordinates.
//!
//! A cell `(h, w)` is read directly as the axial coordinate `(r, q) = (h, w)`,
//! so the board is a rhombus in axial space. The six orientations are numbered
//! counter-clockwise starting from "east":
//!
//! | α | name | (dh, dw) |
//! |---|------|----------|
//! | 0 | E    | (0, +1)  |
//! | 1 | NE   | (−1, +1) |
//! | 2 | NW   | (−1, 0)  |
//! | 3 | W    | (0, −1)  |
//! | 4 | SW   | (+1, −1) |
//! | 5 | SE   | (+1, 0)  |
//!
//! Turning left adds one to α, turning right subtracts one. Every rotation in
//! the crate is built from [`rotate_offset`], a 60° counter-clockwise turn.

use serde::{Deserialize, Serialize};

/// A grid cell; `h` is the row (axial r), `w` the column (axial q).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Cell {
    pub h: i32,
    pub w: i32,
}

impl Cell {
    pub const fn new(h: i32, w: i32) -> Self {
        Self { h, w }
    }

    pub fn offset(self, d: (i32, i32)) -> Cell {
        Cell::new(self.h + d.0, self.w + d.1)
    }

    pub fn neighbor(self, alpha: u8) -> Cell {
        self.offset(DIRECTIONS[alpha as usize % 6])
    }

    pub fn neighbors(self) -> impl Iterator<Item = Cell> {
        DIRECTIONS.iter().map(move |&d| self.offset(d))
    }
}

/// A follower or leader pose: a cell plus one of six orientations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Pose {
    pub h: i32,
    pub w: i32,
    pub alpha: u8,
}

impl Pose {
    pub const fn new(h: i32, w: i32, alpha: u8) -> Self {
        Self { h, w, alpha }
    }

    pub fn at(cell: Cell, alpha: u8) -> Self {
        Self::new(cell.h, cell.w, alpha % 6)
    }

    pub fn cell(self) -> Cell {
        Cell::new(self.h, self.w)
    }

    pub fn turned_left(self) -> Self {
        Self {
            alpha: (self.alpha + 1) % 6,
            ..self
        }
    }

    pub fn turned_right(self) -> Self {
        Self {
            alpha: (self.alpha + 5) % 6,
            ..self
        }
    }

    pub fn ahead(self) -> Cell {
        self.cell().neighbor(self.alpha)
    }

    pub fn behind(self) -> Cell {
        self.cell().neighbor((self.alpha + 3) % 6)
    }
}

/// Unit offsets `(dh, dw)` indexed by orientation.
pub const DIRECTIONS: [(i32, i32); 6] = [(0, 1), (-1, 1), (-1, 0), (0, -1), (1, -1), (1, 0)];

/// Rotates an axial offset by 60° counter-clockwise.
pub fn rotate_offset(d: (i32, i32)) -> (i32, i32) {
    // (q, r) -> (q + r, -q), written in (h, w) = (r, q) order.
    (-d.1, d.1 + d.0)
}

/// Rotates an offset by `steps` counter-clockwise sixths of a turn.
pub fn rotate_offset_by(mut d: (i32, i32), steps: u8) -> (i32, i32) {
    for _ in 0..steps % 6 {
        d = rotate_offset(d);
    }
    d
}

/// Rotates `cell` about `center` by `steps` counter-clockwise sixths.
pub fn rotate_cell_about(cell: Cell, center: Cell, steps: u8) -> Cell {
    let d = rotate_offset_by((cell.h - center.h, cell.w - center.w), steps);
    center.offset(d)
}

/// Axial hex distance: the number of steps on an obstacle-free grid.
pub fn hex_distance(a: Cell, b: Cell) -> u32 {
    let dq = b.w - a.w;
    let dr = b.h - a.h;
    ((dq.abs() + dr.abs() + (dq + dr).abs()) / 2) as u32
}

/// Planar position of a cell center (pointy-top layout, y pointing "north").
pub fn cell_center(cell: Cell) -> (f64, f64) {
    let q = cell.w as f64;
    let r = cell.h as f64;
    (3f64.sqrt() * (q + r / 2.0), -1.5 * r)
}

/// Orientation of `alpha` as a planar unit vector.
pub fn heading_vector(alpha: u8) -> (f64, f64) {
    let angle = (alpha % 6) as f64 * std::f64::consts::FRAC_PI_3;
    (angle.cos(), angle.sin())
}

/// Window geometry for an `np × np` crop.
///
/// Index `i = x * np + y` addresses window offset `(x − k, y − k)` with
/// `k = (np − 1) / 2`. Offsets outside the hexagon of radius `k` (two corners
/// of the axial square) are never filled; they stay padding for every pose.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CropWindow {
    pub side: usize,
    offsets: Vec<Option<(i32, i32)>>,
}

impl CropWindow {
    pub fn new(side: usize) -> Self {
        assert!(side % 2 == 1, "crop side must be odd, got {side}");
        let k = (side as i32 - 1) / 2;
        let mut offsets = Vec::with_capacity(side * side);
        for x in 0..side as i32 {
            for y in 0..side as i32 {
                let d = (x - k, y - k);
                let inside = d.0.abs() <= k && d.1.abs() <= k && (d.0 + d.1).abs() <= k;
                offsets.push(inside.then_some(d));
            }
        }
        Self { side, offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    /// Window offset for index `i`, or `None` for a masked corner.
    pub fn offset(&self, i: usize) -> Option<(i32, i32)> {
        self.offsets[i]
    }

    pub fn index_of(&self, d: (i32, i32)) -> Option<usize> {
        let k = (self.side as i32 - 1) / 2;
        let (x, y) = (d.0 + k, d.1 + k);
        if x < 0 || y < 0 || x >= self.side as i32 || y >= self.side as i32 {
            return None;
        }
        let i = x as usize * self.side + y as usize;
        self.offsets[i].map(|_| i)
    }

    /// World cells covered by a crop at `pose`, in window order.
    ///
    /// Entry `i` is `pose.cell + rot^α(offset_i)`; masked corners give `None`.
    /// Bounds are not checked here.
    pub fn cells(&self, pose: Pose) -> Vec<Option<Cell>> {
        let center = pose.cell();
        self.offsets
            .iter()
            .map(|o| o.map(|d| center.offset(rotate_offset_by(d, pose.alpha))))
            .collect()
    }

    /// Permutation induced by one counter-clockwise step: entry `i` of the
    /// crop at orientation `α + 1` equals entry `perm[i]` at orientation `α`.
    /// Masked corners map to themselves.
    pub fn rotation_permutation(&self) -> Vec<usize> {
        (0..self.len())
            .map(|i| match self.offsets[i] {
                Some(d) => self
                    .index_of(rotate_offset(d))
                    .expect("hexagon is closed under rotation"),
                None => i,
            })
            .collect()
    }
}

/// Forward-facing visibility cone.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ViewCone {
    /// Maximum hex distance that can be seen.
    pub depth: u32,
    /// Half-angle of the cone in degrees.
    pub half_angle_deg: f64,
}

impl Default for ViewCone {
    fn default() -> Self {
        Self {
            depth: 24,
            half_angle_deg: 60.0,
        }
    }
}

impl ViewCone {
    pub fn contains(&self, pose: Pose, cell: Cell) -> bool {
        let here = pose.cell();
        if cell == here {
            return true;
        }
        if hex_distance(here, cell) > self.depth {
            return false;
        }
        let (cx, cy) = cell_center(here);
        let (tx, ty) = cell_center(cell);
        let (vx, vy) = (tx - cx, ty - cy);
        let (fx, fy) = heading_vector(pose.alpha);
        let bearing = (fx * vy - fy * vx).atan2(fx * vx + fy * vy).abs();
        bearing <= self.half_angle_deg.to_radians() + 1e-9
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_rotations_of_east() {
        for a in 0..6u8 {
            assert_eq!(rotate_offset_by(DIRECTIONS[0], a), DIRECTIONS[a as usize]);
        }
    }

    #[test]
    fn distance_basics() {
        let c = Cell::new(4, 4);
        assert_eq!(hex_distance(c, c), 0);
        for n in c.neighbors() {
            assert_eq!(hex_distance(c, n), 1);
        }
        assert_eq!(hex_distance(Cell::new(0, 0), Cell::new(3, -3)), 3);
        assert_eq!(hex_distance(Cell::new(0, 0), Cell::new(3, 3)), 6);
    }

    #[test]
    fn window_masks_two_corners() {
        let w = CropWindow::new(3);
        let masked: Vec<usize> = (0..9).filter(|&i| w.offset(i).is_none()).collect();
        // offsets (-1,-1) and (1,1) leave the radius-1 hexagon
        assert_eq!(masked, vec![0, 8]);
        assert_eq!(CropWindow::new(5).offsets.iter().flatten().count(), 19);
        assert_eq!(
            CropWindow::new(1).cells(Pose::new(2, 3, 4)),
            vec![Some(Cell::new(2, 3))]
        );
    }

    #[test]
    fn six_steps_is_identity() {
        for side in [1, 3, 5, 7] {
            let w = CropWindow::new(side);
            let perm = w.rotation_permutation();
            let mut acc: Vec<usize> = (0..w.len()).collect();
            for _ in 0..6 {
                acc = acc.iter().map(|&i| perm[i]).collect();
            }
            assert_eq!(acc, (0..w.len()).collect::<Vec<_>>());
        }
    }

    #[test]
    fn cone_excludes_behind() {
        let cone = ViewCone::default();
        let p = Pose::new(5, 5, 0);
        assert!(cone.contains(p, p.cell()));
        assert!(cone.contains(p, p.ahead()));
        assert!(!cone.contains(p, p.behind()));
        // the two forward diagonals lie on the cone boundary
        assert!(cone.contains(p, p.cell().neighbor(1)));
        assert!(cone.contains(p, p.cell().neighbor(5)));
        assert!(!cone.contains(p, p.cell().neighbor(2)));
    }
}
