//! Regular lattice geometry.
//!
//! Cells are indexed row-major with `(x = 0, y = 0)` at the south-west
//! corner: `i = y * nx + x`. Adjacency is rook (edge sharing) with unit
//! weights, so the neighbor count of a cell is its `w_i+`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};

const KM_PER_DEG_LAT: f64 = 111.32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    nx: usize,
    ny: usize,
    cell_size_km: f64,
    origin_lon: f64,
    origin_lat: f64,
    dt_minutes: f64,
}

/// Integer cell offset; `dx` points east, `dy` points north.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Displacement {
    pub dx: i32,
    pub dy: i32,
}

impl Displacement {
    pub const ZERO: Displacement = Displacement { dx: 0, dy: 0 };

    pub fn new(dx: i32, dy: i32) -> Self {
        Self { dx, dy }
    }
}

impl Grid {
    pub fn new(
        nx: usize,
        ny: usize,
        cell_size_km: f64,
        origin_lon: f64,
        origin_lat: f64,
        dt_minutes: f64,
    ) -> Result<Self> {
        if nx < 2 {
            return Err(Error::Config(format!("grid.nx must be >= 2 (got {nx})")));
        }
        if ny < 2 {
            return Err(Error::Config(format!("grid.ny must be >= 2 (got {ny})")));
        }
        if !(cell_size_km > 0.0 && cell_size_km.is_finite()) {
            return Err(Error::Config(format!(
                "grid.cell_size_km must be positive (got {cell_size_km})"
            )));
        }
        if !(dt_minutes > 0.0 && dt_minutes.is_finite()) {
            return Err(Error::Config(format!(
                "grid.dt_minutes must be positive (got {dt_minutes})"
            )));
        }
        if !origin_lon.is_finite() || !origin_lat.is_finite() || origin_lat.abs() >= 89.0 {
            return Err(Error::Config("grid origin must be a finite lon/lat away from the poles".into()));
        }
        Ok(Self {
            nx,
            ny,
            cell_size_km,
            origin_lon,
            origin_lat,
            dt_minutes,
        })
    }

    /// Unit-spaced grid anchored at (0, 0) with 1 km cells and 10 minute steps.
    pub fn unit(nx: usize, ny: usize) -> Result<Self> {
        Self::new(nx, ny, 1.0, 0.0, 0.0, 10.0)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn cell_size_km(&self) -> f64 {
        self.cell_size_km
    }

    pub fn origin(&self) -> (f64, f64) {
        (self.origin_lon, self.origin_lat)
    }

    pub fn dt_minutes(&self) -> f64 {
        self.dt_minutes
    }

    pub fn index(&self, x: usize, y: usize) -> usize {
        debug_assert!(x < self.nx && y < self.ny);
        y * self.nx + x
    }

    pub fn coords(&self, i: usize) -> (usize, usize) {
        (i % self.nx, i / self.nx)
    }

    pub fn checked_index(&self, x: i64, y: i64) -> Option<usize> {
        if x < 0 || y < 0 || x >= self.nx as i64 || y >= self.ny as i64 {
            None
        } else {
            Some(self.index(x as usize, y as usize))
        }
    }

    fn check(&self, i: usize) -> Result<()> {
        if i >= self.len() {
            return domain(format!("cell index {i} out of range for {} cells", self.len()));
        }
        Ok(())
    }

    /// Rook neighbors of cell `i`, in the order west, east, south, north.
    pub fn neighbors(&self, i: usize) -> Result<Vec<usize>> {
        self.check(i)?;
        Ok(self.neighbors_iter(i).collect())
    }

    pub(crate) fn neighbors_iter(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.coords(i);
        let nx = self.nx;
        let w = (x > 0).then(|| i - 1);
        let e = (x + 1 < nx).then(|| i + 1);
        let s = (y > 0).then(|| i - nx);
        let n = (y + 1 < self.ny).then(|| i + nx);
        [w, e, s, n].into_iter().flatten()
    }

    pub fn neighbor_count(&self, i: usize) -> usize {
        let (x, y) = self.coords(i);
        usize::from(x > 0)
            + usize::from(x + 1 < self.nx)
            + usize::from(y > 0)
            + usize::from(y + 1 < self.ny)
    }

    /// Number of rook edges in the lattice.
    pub fn edge_count(&self) -> usize {
        self.nx * (self.ny - 1) + self.ny * (self.nx - 1)
    }

    /// Cell reached from `i` by `d`, clamping each coordinate to the grid.
    pub fn shifted_index(&self, i: usize, d: Displacement) -> usize {
        let (x, y) = self.coords(i);
        let sx = (x as i64 + d.dx as i64).clamp(0, self.nx as i64 - 1);
        let sy = (y as i64 + d.dy as i64).clamp(0, self.ny as i64 - 1);
        self.index(sx as usize, sy as usize)
    }

    /// Displacement per step (in cells) produced by a 1 m/s motion.
    pub fn cells_per_ms(&self) -> f64 {
        self.dt_minutes * 60.0 / (self.cell_size_km * 1000.0)
    }

    /// Cell centers mapped onto the unit square, x then y.
    pub fn normalized_center(&self, i: usize) -> (f64, f64) {
        let (x, y) = self.coords(i);
        (
            (x as f64 + 0.5) / self.nx as f64,
            (y as f64 + 0.5) / self.ny as f64,
        )
    }

    fn deg_per_cell(&self) -> (f64, f64) {
        let dlat = self.cell_size_km / KM_PER_DEG_LAT;
        let dlon = self.cell_size_km / (KM_PER_DEG_LAT * self.origin_lat.to_radians().cos());
        (dlon, dlat)
    }

    /// Planar position (km east, km north of the origin) of a lon/lat point.
    pub fn lonlat_to_km(&self, lon: f64, lat: f64) -> (f64, f64) {
        let (dlon, dlat) = self.deg_per_cell();
        (
            (lon - self.origin_lon) / dlon * self.cell_size_km,
            (lat - self.origin_lat) / dlat * self.cell_size_km,
        )
    }

    /// Planar position (km) of a cell center.
    pub fn center_km(&self, i: usize) -> (f64, f64) {
        let (x, y) = self.coords(i);
        (
            (x as f64 + 0.5) * self.cell_size_km,
            (y as f64 + 0.5) * self.cell_size_km,
        )
    }

    pub fn center_lonlat(&self, i: usize) -> (f64, f64) {
        let (x, y) = self.coords(i);
        let (dlon, dlat) = self.deg_per_cell();
        (
            self.origin_lon + (x as f64 + 0.5) * dlon,
            self.origin_lat + (y as f64 + 0.5) * dlat,
        )
    }

    /// Cell containing a lon/lat point, if it lies inside the grid.
    pub fn locate(&self, lon: f64, lat: f64) -> Option<usize> {
        let (dlon, dlat) = self.deg_per_cell();
        let fx = (lon - self.origin_lon) / dlon;
        let fy = (lat - self.origin_lat) / dlat;
        if !fx.is_finite() || !fy.is_finite() || fx < 0.0 || fy < 0.0 {
            return None;
        }
        let (x, y) = (fx.floor() as usize, fy.floor() as usize);
        (x < self.nx && y < self.ny).then(|| self.index(x, y))
    }

    /// Cells of the (clamped) 3x3 block centered on `i`, including `i`.
    pub fn block3x3(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        let (x, y) = self.coords(i);
        let (x, y) = (x as i64, y as i64);
        (-1..=1).flat_map(move |dy| (-1..=1).filter_map(move |dx| self.checked_index(x + dx, y + dy)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g5() -> Grid {
        Grid::unit(5, 5).unwrap()
    }

    #[test]
    fn neighbor_counts() {
        let g = g5();
        assert_eq!(g.neighbors(g.index(2, 2)).unwrap().len(), 4);
        assert_eq!(g.neighbors(0).unwrap().len(), 2);
        assert_eq!(g.neighbors(g.index(4, 4)).unwrap().len(), 2);
        assert_eq!(g.neighbors(g.index(2, 0)).unwrap().len(), 3);
        assert!(g.neighbors(25).is_err());
    }

    #[test]
    fn adjacency_symmetric_and_edge_total() {
        for (nx, ny) in [(2, 2), (2, 7), (5, 5), (6, 3)] {
            let g = Grid::unit(nx, ny).unwrap();
            let mut total = 0;
            for i in 0..g.len() {
                let nb = g.neighbors(i).unwrap();
                assert!((2..=4).contains(&nb.len()));
                assert!(!nb.contains(&i));
                assert_eq!(nb.len(), g.neighbor_count(i));
                for j in nb {
                    assert!(g.neighbors(j).unwrap().contains(&i));
                }
                total += g.neighbor_count(i);
            }
            assert_eq!(total, 2 * g.edge_count());
        }
    }

    #[test]
    fn shifts() {
        let g = g5();
        let c = g.index(2, 2);
        assert_eq!(g.shifted_index(c, Displacement::ZERO), c);
        assert_eq!(g.shifted_index(c, Displacement::new(1, -1)), g.index(3, 1));
        let corner = g.index(4, 4);
        assert_eq!(g.shifted_index(corner, Displacement::new(3, 0)), corner);
        assert_eq!(g.shifted_index(0, Displacement::new(-9, -9)), 0);
    }

    #[test]
    fn cells_per_ms_values() {
        let g = g5();
        assert!((g.cells_per_ms() - 0.6).abs() < 1e-15);
        assert!((1.0 / g.cells_per_ms() - 5.0 / 3.0).abs() < 1e-12);
        let g2 = Grid::new(5, 5, 2.0, 0.0, 0.0, 10.0).unwrap();
        assert!((g2.cells_per_ms() - 0.3).abs() < 1e-15);
    }

    #[test]
    fn invalid_grids() {
        assert!(matches!(Grid::unit(1, 5), Err(Error::Config(m)) if m.contains("nx")));
        assert!(Grid::new(3, 3, 0.0, 0.0, 0.0, 10.0).is_err());
        assert!(Grid::new(3, 3, 1.0, 0.0, 0.0, -1.0).is_err());
    }

    #[test]
    fn locate_roundtrip() {
        let g = Grid::new(7, 4, 1.0, 126.5, 37.0, 10.0).unwrap();
        for i in 0..g.len() {
            let (lon, lat) = g.center_lonlat(i);
            assert_eq!(g.locate(lon, lat), Some(i));
        }
        assert_eq!(g.locate(126.0, 37.0), None);
    }

    #[test]
    fn block_is_clamped() {
        let g = g5();
        assert_eq!(g.block3x3(0).count(), 4);
        assert_eq!(g.block3x3(g.index(2, 0)).count(), 6);
        assert_eq!(g.block3x3(g.index(2, 2)).count(), 9);
    }
}
