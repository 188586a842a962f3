use std::fs;

use rainfuse::io::{
    load_gages, load_observations, load_radar, screen_gage_zeros, standard_zr, write_observations, GageRecord,
    InputPaths, ObservationSet,
};
use rainfuse::simulate::{simulate_dataset, ScenarioSpec};
use rainfuse::{Error, Grid};

fn grid5() -> Grid {
    Grid::new(5, 5, 1.0, 127.0, 37.0, 10.0).unwrap()
}

#[test]
fn empty_gage_file_gives_no_records() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gage.csv");
    fs::write(&p, "").unwrap();
    assert!(load_gages(&p, &grid5(), 2).unwrap().is_empty());
    fs::write(&p, "station_id,lon,lat,t,rain\n").unwrap();
    assert!(load_gages(&p, &grid5(), 2).unwrap().is_empty());
}

#[test]
fn single_gage_at_center() {
    let g = grid5();
    let (lon, lat) = g.center_lonlat(g.index(2, 2));
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gage.csv");
    fs::write(&p, format!("station_id,lon,lat,t,rain\nA,{lon},{lat},0,5.0\n")).unwrap();
    let recs = load_gages(&p, &g, 1).unwrap();
    assert_eq!(recs.len(), 1);
    assert_eq!(recs[0].cell, g.index(2, 2));
    assert_eq!(recs[0].rain, Some(5.0));
}

#[test]
fn negative_rain_is_rejected_with_row_number() {
    let g = grid5();
    let (lon, lat) = g.center_lonlat(0);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("gage.csv");
    fs::write(&p, format!("station_id,lon,lat,t,rain\nA,{lon},{lat},0,1\nB,{lon},{lat},0,-1\n")).unwrap();
    match load_gages(&p, &g, 1) {
        Err(Error::Ingest { problems, .. }) => {
            assert_eq!(problems.len(), 1);
            assert!(problems[0].contains("row 3"), "{problems:?}");
        }
        other => panic!("expected an ingest error, got {other:?}"),
    }
}

#[test]
fn missing_is_not_zero() {
    let g = grid5();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("radar.csv");
    fs::write(&p, "x,y,t,ze\n0,0,0,\n1,0,0,0\n2,0,0,12.5\n").unwrap();
    let r = load_radar(&p, &g, 1).unwrap();
    assert_eq!((r[0][0], r[0][1], r[0][2]), (None, Some(0.0), Some(12.5)));
    // cells not listed stay missing
    assert_eq!(r[0][3], None);
}

#[test]
fn duplicate_and_off_grid_radar_rows_are_all_reported() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("radar.csv");
    fs::write(&p, "x,y,t,ze\n0,0,0,1\n0,0,0,2\n9,0,0,1\n0,0,4,1\n").unwrap();
    match load_radar(&p, &grid5(), 2) {
        Err(Error::Ingest { problems, .. }) => assert_eq!(problems.len(), 3, "{problems:?}"),
        other => panic!("expected an ingest error, got {other:?}"),
    }
}

#[test]
fn written_dataset_reads_back_identically() {
    let spec = ScenarioSpec::with_defaults(
        Grid::new(6, 5, 1.0, 127.0, 37.0, 10.0).unwrap(),
        2,
        rainfuse::model::ModelConfig::preset(4).unwrap(),
        6,
        4,
    )
    .unwrap();
    let data = simulate_dataset(&spec).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let paths = InputPaths::in_dir(dir.path());
    write_observations(&paths, &spec.grid, &data.observations).unwrap();
    let back = load_observations(&paths, &spec.grid, 2).unwrap();
    assert_eq!(back, data.observations);
}

fn zero_gage_with_radar(nonzero: usize) -> (ObservationSet, Grid) {
    let g = grid5();
    let mut obs = ObservationSet::empty(&g, 1);
    let c = g.index(2, 2);
    let block: Vec<usize> = g.block3x3(c).collect();
    for (k, &b) in block.iter().enumerate() {
        obs.radar[0][b] = Some(if k < nonzero { 20.0 } else { 0.0 });
    }
    let (lon, lat) = g.center_lonlat(c);
    obs.gages.push(GageRecord {
        station_id: "G".into(),
        lon,
        lat,
        t: 0,
        rain: Some(0.0),
        cell: c,
    });
    (obs, g)
}

#[test]
fn screening_examples() {
    let (obs, g) = zero_gage_with_radar(0);
    let (out, n) = screen_gage_zeros(&obs, &g);
    assert_eq!((out.gages[0].rain, n), (Some(0.0), 0));
    let (obs, g) = zero_gage_with_radar(3);
    let (out, n) = screen_gage_zeros(&obs, &g);
    assert_eq!((out.gages[0].rain, n), (None, 1));
    let (mut obs, g) = zero_gage_with_radar(9);
    obs.gages[0].rain = Some(4.2);
    assert_eq!(screen_gage_zeros(&obs, &g).0.gages[0].rain, Some(4.2));
}

#[test]
fn zr_examples() {
    assert_eq!(standard_zr(1.0).unwrap(), 200.0);
    assert_eq!(standard_zr(0.0).unwrap(), 0.0);
    // 200 * 10^1.6 computed via exp/ln
    let want = 200.0 * (1.6 * 10f64.ln()).exp();
    assert!((standard_zr(10.0).unwrap() - want).abs() < 1e-9);
    assert!((standard_zr(10.0).unwrap() - 7962.14).abs() < 0.01);
    assert!(standard_zr(-1.0).is_err());
}
