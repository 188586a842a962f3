//! CSV ingestion and export of gage, radar, weather-station and elevation
//! data, plus the erroneous-zero gage screen.
//!
//! Missing values are empty fields. A recorded zero is a value, not a gap.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct GageRecord {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    pub t: usize,
    /// mm/h; `None` when missing.
    pub rain: Option<f64>,
    pub cell: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadarRecord {
    pub x: usize,
    pub y: usize,
    pub t: usize,
    /// Reflectivity in the working scale of the conversion model.
    pub reflectivity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationRecord {
    pub station_id: String,
    pub lon: f64,
    pub lat: f64,
    pub t: usize,
    pub temperature: f64,
    pub rel_humidity: f64,
    pub wind_u: f64,
    pub wind_v: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationSet {
    pub gages: Vec<GageRecord>,
    /// `radar[t][cell]`.
    pub radar: Vec<Vec<Option<f64>>>,
    pub stations: Vec<StationRecord>,
    /// Meters, one value per cell.
    pub elevation: Vec<f64>,
    pub n_times: usize,
}

impl ObservationSet {
    /// An empty set: no gages or stations, all radar missing, flat terrain.
    pub fn empty(grid: &Grid, n_times: usize) -> Self {
        Self {
            gages: Vec::new(),
            radar: vec![vec![None; grid.len()]; n_times],
            stations: Vec::new(),
            elevation: vec![0.0; grid.len()],
            n_times,
        }
    }

    pub fn radar_records<'a>(&'a self, grid: &'a Grid) -> impl Iterator<Item = RadarRecord> + 'a {
        self.radar.iter().enumerate().flat_map(move |(t, field)| {
            field.iter().enumerate().map(move |(i, &v)| {
                let (x, y) = grid.coords(i);
                RadarRecord {
                    x,
                    y,
                    t,
                    reflectivity: v,
                }
            })
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputPaths {
    pub gage: PathBuf,
    pub radar: PathBuf,
    pub aws: PathBuf,
    pub dem: PathBuf,
}

impl InputPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            gage: dir.join("gage.csv"),
            radar: dir.join("radar.csv"),
            aws: dir.join("aws.csv"),
            dem: dir.join("dem.csv"),
        }
    }
}

#[derive(Debug, Deserialize, Serialize)]
struct GageRow {
    station_id: String,
    lon: f64,
    lat: f64,
    t: usize,
    rain: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct RadarRow {
    x: usize,
    y: usize,
    t: usize,
    ze: Option<f64>,
}

#[derive(Debug, Deserialize, Serialize)]
struct AwsRow {
    station_id: String,
    lon: f64,
    lat: f64,
    t: usize,
    temp_c: f64,
    rh_pct: f64,
    wind_u: f64,
    wind_v: f64,
}

#[derive(Debug, Deserialize, Serialize)]
struct DemRow {
    x: usize,
    y: usize,
    elev_m: f64,
}

/// Parse every row of `path`, handing each to `check`; all problems are
/// collected before failing.
fn read_rows<T, F>(path: &Path, mut check: F) -> Result<()>
where
    T: for<'de> Deserialize<'de>,
    F: FnMut(T) -> std::result::Result<(), String>,
{
    let mut raw = String::new();
    File::open(path)
        .map_err(|e| Error::Ingest {
            file: path.display().to_string(),
            problems: vec![e.to_string()],
        })?
        .read_to_string(&mut raw)?;
    if raw.trim().is_empty() {
        return Ok(());
    }
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(raw.as_bytes());
    let mut problems = Vec::new();
    for (k, row) in reader.deserialize::<T>().enumerate() {
        let line = k + 2;
        match row {
            Ok(r) => {
                if let Err(msg) = check(r) {
                    problems.push(format!("row {line}: {msg}"));
                }
            }
            Err(e) => problems.push(format!("row {line}: {e}")),
        }
    }
    if problems.is_empty() {
        Ok(())
    } else {
        Err(Error::Ingest {
            file: path.display().to_string(),
            problems,
        })
    }
}

fn check_t(t: usize, n_times: usize) -> std::result::Result<(), String> {
    if t >= n_times {
        Err(format!("time index {t} outside [0, {n_times})"))
    } else {
        Ok(())
    }
}

pub fn load_gages(path: &Path, grid: &Grid, n_times: usize) -> Result<Vec<GageRecord>> {
    let mut out = Vec::new();
    read_rows(path, |r: GageRow| {
        check_t(r.t, n_times)?;
        let cell = grid
            .locate(r.lon, r.lat)
            .ok_or_else(|| format!("gage {} at ({}, {}) lies outside the grid", r.station_id, r.lon, r.lat))?;
        if let Some(v) = r.rain {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("rain must be a finite value >= 0 (got {v})"));
            }
        }
        out.push(GageRecord {
            station_id: r.station_id,
            lon: r.lon,
            lat: r.lat,
            t: r.t,
            rain: r.rain,
            cell,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_radar(path: &Path, grid: &Grid, n_times: usize) -> Result<Vec<Vec<Option<f64>>>> {
    let mut radar = vec![vec![None; grid.len()]; n_times];
    let mut seen = HashSet::new();
    read_rows(path, |r: RadarRow| {
        check_t(r.t, n_times)?;
        if r.x >= grid.nx() || r.y >= grid.ny() {
            return Err(format!("cell ({}, {}) is off the grid", r.x, r.y));
        }
        if !seen.insert((r.x, r.y, r.t)) {
            return Err(format!("duplicate radar cell ({}, {}) at t={}", r.x, r.y, r.t));
        }
        if let Some(v) = r.ze {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("reflectivity must be a finite value >= 0 (got {v})"));
            }
        }
        radar[r.t][grid.index(r.x, r.y)] = r.ze;
        Ok(())
    })?;
    Ok(radar)
}

pub fn load_stations(path: &Path, grid: &Grid, n_times: usize) -> Result<Vec<StationRecord>> {
    let mut out = Vec::new();
    read_rows(path, |r: AwsRow| {
        check_t(r.t, n_times)?;
        if grid.locate(r.lon, r.lat).is_none() {
            return Err(format!("station {} at ({}, {}) lies outside the grid", r.station_id, r.lon, r.lat));
        }
        if !(0.0..=100.0).contains(&r.rh_pct) {
            return Err(format!("relative humidity {} outside [0, 100]", r.rh_pct));
        }
        for (name, v) in [("temp_c", r.temp_c), ("wind_u", r.wind_u), ("wind_v", r.wind_v)] {
            if !v.is_finite() {
                return Err(format!("{name} is not finite"));
            }
        }
        out.push(StationRecord {
            station_id: r.station_id,
            lon: r.lon,
            lat: r.lat,
            t: r.t,
            temperature: r.temp_c,
            rel_humidity: r.rh_pct,
            wind_u: r.wind_u,
            wind_v: r.wind_v,
        });
        Ok(())
    })?;
    Ok(out)
}

pub fn load_dem(path: &Path, grid: &Grid) -> Result<Vec<f64>> {
    let mut elev = vec![None; grid.len()];
    read_rows(path, |r: DemRow| {
        if r.x >= grid.nx() || r.y >= grid.ny() {
            return Err(format!("cell ({}, {}) is off the grid", r.x, r.y));
        }
        if !r.elev_m.is_finite() {
            return Err("elevation is not finite".into());
        }
        let slot = &mut elev[grid.index(r.x, r.y)];
        if slot.is_some() {
            return Err(format!("duplicate elevation for cell ({}, {})", r.x, r.y));
        }
        *slot = Some(r.elev_m);
        Ok(())
    })?;
    let missing: Vec<String> = elev
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_none())
        .take(10)
        .map(|(i, _)| {
            let (x, y) = grid.coords(i);
            format!("no elevation for cell ({x}, {y})")
        })
        .collect();
    if !missing.is_empty() {
        return Err(Error::Ingest {
            file: path.display().to_string(),
            problems: missing,
        });
    }
    Ok(elev.into_iter().map(|v| v.unwrap_or_default()).collect())
}

pub fn load_observations(paths: &InputPaths, grid: &Grid, n_times: usize) -> Result<ObservationSet> {
    if n_times == 0 {
        return domain("time axis must have at least one step");
    }
    Ok(ObservationSet {
        gages: load_gages(&paths.gage, grid, n_times)?,
        radar: load_radar(&paths.radar, grid, n_times)?,
        stations: load_stations(&paths.aws, grid, n_times)?,
        elevation: load_dem(&paths.dem, grid)?,
        n_times,
    })
}

fn writer(path: &Path) -> Result<csv::Writer<File>> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(csv::WriterBuilder::new().from_path(path)?)
}

pub fn write_gages(path: &Path, gages: &[GageRecord]) -> Result<()> {
    let mut w = writer(path)?;
    if gages.is_empty() {
        w.write_record(["station_id", "lon", "lat", "t", "rain"])?;
    }
    for g in gages {
        w.serialize(GageRow {
            station_id: g.station_id.clone(),
            lon: g.lon,
            lat: g.lat,
            t: g.t,
            rain: g.rain,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_radar(path: &Path, grid: &Grid, obs: &ObservationSet) -> Result<()> {
    let mut w = writer(path)?;
    for r in obs.radar_records(grid) {
        w.serialize(RadarRow {
            x: r.x,
            y: r.y,
            t: r.t,
            ze: r.reflectivity,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_stations(path: &Path, stations: &[StationRecord]) -> Result<()> {
    let mut w = writer(path)?;
    if stations.is_empty() {
        w.write_record(["station_id", "lon", "lat", "t", "temp_c", "rh_pct", "wind_u", "wind_v"])?;
    }
    for s in stations {
        w.serialize(AwsRow {
            station_id: s.station_id.clone(),
            lon: s.lon,
            lat: s.lat,
            t: s.t,
            temp_c: s.temperature,
            rh_pct: s.rel_humidity,
            wind_u: s.wind_u,
            wind_v: s.wind_v,
        })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_dem(path: &Path, grid: &Grid, elevation: &[f64]) -> Result<()> {
    let mut w = writer(path)?;
    for (i, &e) in elevation.iter().enumerate() {
        let (x, y) = grid.coords(i);
        w.serialize(DemRow { x, y, elev_m: e })?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_observations(paths: &InputPaths, grid: &Grid, obs: &ObservationSet) -> Result<()> {
    write_gages(&paths.gage, &obs.gages)?;
    write_radar(&paths.radar, grid, obs)?;
    write_stations(&paths.aws, &obs.stations)?;
    write_dem(&paths.dem, grid, &obs.elevation)
}

/// Minimum number of nonzero radar pixels around a zero gage for the gage
/// reading to be treated as an instrument default rather than a real zero.
pub const SCREEN_NONZERO_THRESHOLD: usize = 3;

/// Replace suspicious zero gage readings by missing values.
///
/// A zero gage is flagged when at least three pixels of the 3x3 radar block
/// centered on its cell (clamped at the domain edge) report nonzero
/// reflectivity. Returns the screened set and the number of flagged records.
pub fn screen_gage_zeros(obs: &ObservationSet, grid: &Grid) -> (ObservationSet, usize) {
    let mut out = obs.clone();
    let mut flagged = 0;
    for g in out.gages.iter_mut() {
        if g.rain != Some(0.0) {
            continue;
        }
        let Some(field) = obs.radar.get(g.t) else { continue };
        let nonzero = grid
            .block3x3(g.cell)
            .filter(|&c| matches!(field[c], Some(v) if v > 0.0))
            .count();
        if nonzero >= SCREEN_NONZERO_THRESHOLD {
            g.rain = None;
            flagged += 1;
        }
    }
    (out, flagged)
}

/// Reference Marshall–Palmer style conversion `Ze = 200 R^1.6`.
pub fn standard_zr(rain: f64) -> Result<f64> {
    if !(rain >= 0.0) {
        return domain(format!("rain rate must be >= 0 (got {rain})"));
    }
    Ok(200.0 * rain.powf(1.6))
}

/// Write a small text file atomically enough for our purposes.
pub(crate) fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> Grid {
        Grid::new(5, 5, 1.0, 127.0, 37.0, 10.0).unwrap()
    }

    #[test]
    fn zr_reference() {
        assert_eq!(standard_zr(1.0).unwrap(), 200.0);
        assert_eq!(standard_zr(0.0).unwrap(), 0.0);
        assert!((standard_zr(10.0).unwrap() - 7962.143411069945).abs() < 1e-6);
        assert!(standard_zr(-1.0).is_err());
    }

    fn obs_with(radar_nonzero: &[(usize, usize)], rain: Option<f64>) -> (Grid, ObservationSet) {
        let g = grid();
        let mut obs = ObservationSet::empty(&g, 1);
        obs.radar[0] = vec![Some(0.0); g.len()];
        for &(x, y) in radar_nonzero {
            obs.radar[0][g.index(x, y)] = Some(30.0);
        }
        let (lon, lat) = g.center_lonlat(g.index(2, 2));
        obs.gages.push(GageRecord {
            station_id: "a".into(),
            lon,
            lat,
            t: 0,
            rain,
            cell: g.index(2, 2),
        });
        (g, obs)
    }

    #[test]
    fn screening_threshold() {
        let (g, obs) = obs_with(&[], Some(0.0));
        let (s, n) = screen_gage_zeros(&obs, &g);
        assert_eq!((s.gages[0].rain, n), (Some(0.0), 0));

        let (g, obs) = obs_with(&[(1, 1), (2, 3), (3, 2)], Some(0.0));
        let (s, n) = screen_gage_zeros(&obs, &g);
        assert_eq!((s.gages[0].rain, n), (None, 1));
        // idempotent
        let (s2, n2) = screen_gage_zeros(&s, &g);
        assert_eq!((s2, n2), (s, 0));

        let (g, obs) = obs_with(&[(1, 1), (2, 3), (3, 2)], Some(4.2));
        let (s, n) = screen_gage_zeros(&obs, &g);
        assert_eq!((s.gages[0].rain, n), (Some(4.2), 0));

        // pixels outside the 3x3 block do not count
        let (g, obs) = obs_with(&[(0, 0), (4, 4), (0, 4), (2, 2)], Some(0.0));
        assert_eq!(screen_gage_zeros(&obs, &g).1, 0);
    }
}
