mod common;

use rainfuse::grid::Displacement;
use rainfuse::mcmc::{run_chain, SamplerConfig};
use rainfuse::model::ModelState;
use rainfuse::products::{
    dic, latent_covariance, posterior_mean_state, posterior_rain_map, read_pgm, scale_path, write_pgm, zero_prob_map,
    Dic, LatentCovariance, PgmScale,
};
use rainfuse::simulate::{model_for, simulate_dataset, CovProbe, ScenarioSpec};
use rainfuse::Grid;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{dense_car_precision, samples_from, shifted_model};

fn random_draws(n_draws: usize, n_cells: usize, n_times: usize, seed: u64) -> Vec<ModelState> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_draws)
        .map(|_| {
            let mut s = ModelState::zeros(n_cells, n_times, 1, 1);
            for row in &mut s.y {
                for v in row.iter_mut() {
                    *v = rng.random_range(-2.0..2.0);
                }
            }
            s.a_r = rng.random_range(-3.0..-1.0);
            s.b_r = rng.random_range(-2.0..-0.5);
            s.a_g = rng.random_range(-1.0..0.5);
            s.b_g = rng.random_range(-0.5..0.2);
            s
        })
        .collect()
}

#[test]
fn rain_map_matches_streaming_recomputation() {
    let draws = random_draws(37, 6, 2, 1);
    let map = posterior_rain_map(&samples_from(draws.clone())).unwrap();
    for t in 0..2 {
        for i in 0..6 {
            // Welford running mean
            let mut m = 0.0;
            for (k, d) in draws.iter().enumerate() {
                m += (d.y[t][i].exp() - m) / (k + 1) as f64;
            }
            assert!((map.mean[t][i] - m).abs() < 1e-12 * m.max(1.0));
            let mut v: Vec<f64> = draws.iter().map(|d| d.y[t][i].exp()).collect();
            v.sort_by(f64::total_cmp);
            // 37 draws: the median is the 19th order statistic
            assert!((map.median[t][i] - v[18]).abs() < 1e-12);
            assert!(map.q025[t][i] <= map.median[t][i] && map.median[t][i] <= map.q975[t][i]);
            assert!(map.q025[t][i] >= v[0] && map.q975[t][i] <= v[36]);
        }
    }
}

#[test]
fn prob_map_matches_direct_average() {
    let draws = random_draws(20, 5, 2, 2);
    let map = zero_prob_map(&samples_from(draws.clone()), &[3]).unwrap();
    for t in 0..2 {
        for i in 0..5 {
            let direct: f64 = draws
                .iter()
                .map(|d| 1.0 / (1.0 + (-(d.a_r + d.b_r * d.y[t][i])).exp()))
                .sum::<f64>()
                / 20.0;
            assert!((map.pi_r[t][i] - direct).abs() < 1e-12);
            assert!((0.0..=1.0).contains(&map.pi_r[t][i]));
        }
        let g: f64 = draws
            .iter()
            .map(|d| 1.0 / (1.0 + (-(d.a_g + d.b_g * d.y[t][3])).exp()))
            .sum::<f64>()
            / 20.0;
        assert!((map.pi_g[t][3].unwrap() - g).abs() < 1e-12);
    }
}

#[test]
fn prob_map_decreases_with_rain_when_slope_is_negative() {
    let mut draws = random_draws(15, 8, 1, 3);
    for d in &mut draws {
        let shift: f64 = d.y[0][0];
        for i in 0..8 {
            d.y[0][i] = shift + i as f64 * 0.5;
        }
    }
    let map = zero_prob_map(&samples_from(draws), &[]).unwrap();
    for i in 1..8 {
        assert!(map.pi_r[0][i] < map.pi_r[0][i - 1]);
    }
}

#[test]
fn single_epoch_covariance_is_the_car_covariance() {
    let grid = Grid::unit(4, 3).unwrap();
    let (model, s) = shifted_model(&grid, 1, 0.0, 0.0);
    let q = dense_car_precision(&grid, s.rho_y, s.tau2_y);
    let sigma = q.try_inverse().unwrap();
    let lc = LatentCovariance::new(&model, &s).unwrap();
    for i in 0..grid.len() {
        for j in 0..grid.len() {
            let (xi, yi) = grid.coords(i);
            let (xj, yj) = grid.coords(j);
            let probe = CovProbe {
                i,
                h: Displacement::new(xj as i32 - xi as i32, yj as i32 - yi as i32),
                t: 0,
                tau: 0,
            };
            let c = lc.cov(&probe).unwrap();
            assert!((c - sigma[(i, j)]).abs() < 1e-10 * sigma[(i, i)], "{i} {j}");
        }
    }
}

#[test]
fn independent_epochs_have_zero_lagged_covariance() {
    let grid = Grid::unit(5, 5).unwrap();
    let (model, mut s) = shifted_model(&grid, 3, 1.0, 0.0);
    s.rho = 0.0;
    let lc = LatentCovariance::new(&model, &s).unwrap();
    for i in 0..grid.len() {
        for h in [Displacement::new(0, 0), Displacement::new(1, 0), Displacement::new(-1, 0)] {
            let p = CovProbe { i, h, t: 1, tau: 1 };
            if p.partner(&grid).is_ok() {
                assert_eq!(lc.cov(&p).unwrap(), 0.0);
            }
        }
    }
}

#[test]
fn uniform_shift_breaks_full_symmetry() {
    let grid = Grid::unit(5, 5).unwrap();
    let (model, s) = shifted_model(&grid, 2, 1.0, 0.0);
    let lc = LatentCovariance::new(&model, &s).unwrap();
    let i = grid.index(2, 2);
    let fwd = lc.cov(&CovProbe { i, h: Displacement::new(1, 0), t: 0, tau: 1 }).unwrap();
    let back = lc.cov(&CovProbe { i, h: Displacement::new(-1, 0), t: 0, tau: 1 }).unwrap();
    assert!((fwd - back).abs() > 1e-3, "{fwd} vs {back}");
}

#[test]
fn lag_past_the_end_is_an_error() {
    let grid = Grid::unit(3, 3).unwrap();
    let (model, s) = shifted_model(&grid, 2, 1.0, 0.0);
    let p = CovProbe { i: 0, h: Displacement::new(0, 0), t: 1, tau: 1 };
    assert!(latent_covariance(&model, &s, &p).is_err());
}

#[test]
fn dic_is_invariant_to_draw_order() {
    let grid = Grid::unit(4, 4).unwrap();
    let spec = ScenarioSpec::with_defaults(grid.clone(), 2, rainfuse::model::ModelConfig::preset(1).unwrap(), 5, 3).unwrap();
    let data = simulate_dataset(&spec).unwrap();
    let model = model_for(&data, &grid, spec.model.clone()).unwrap();
    let cfg = SamplerConfig {
        n_iter: 400,
        burn_in: 200,
        thin: 4,
        adapt_end: 150,
        seed: 5,
        ..SamplerConfig::default()
    };
    let samples = run_chain(&cfg, &model, None).unwrap();
    let a = dic(&samples, &model).unwrap();
    let mut rev = samples.clone();
    rev.draws.reverse();
    rev.deviance.reverse();
    let b = dic(&rev, &model).unwrap();
    assert!((a.dic - b.dic).abs() < 1e-8 * a.dic.abs());
    assert_eq!(a.dic, a.d_bar + a.p_d);
    // a repeated single state has no effective parameters
    let one = samples_from(vec![samples.draws[0].clone(); 12]);
    let mut one = one;
    one.deviance = vec![model.deviance(&samples.draws[0]); 12];
    let d = dic(&one, &model).unwrap();
    assert!(d.p_d.abs() < 1e-9 * d.d_bar.abs().max(1.0));
}

#[test]
fn posterior_mean_of_identical_draws_is_that_draw() {
    let d = random_draws(1, 4, 2, 7).remove(0);
    let mut d = d;
    d.rho = 0.4;
    d.rho_y = 0.8;
    d.tau2_y = 2.0;
    let m = posterior_mean_state(&samples_from(vec![d.clone(); 3])).unwrap();
    assert!((m.rho - 0.4).abs() < 1e-12 && (m.tau2_y - 2.0).abs() < 1e-12);
    assert_eq!(m.y, d.y);
}

#[test]
fn table_one_arithmetic() {
    let rows = [
        (18700.0, 13092.0, 5607.0),
        (18223.0, 12535.0, 5688.0),
        (19247.0, 13377.0, 5870.0),
        (17722.0, 12020.0, 5702.0),
        (18813.0, 12436.0, 6377.0),
    ];
    for (printed, d_bar, p_d) in rows {
        let d = Dic::from_parts(d_bar, d_bar - p_d);
        assert!((d.dic - printed).abs() <= 1.0, "{d:?} vs {printed}");
    }
}

#[test]
fn pgm_round_trip_within_quantization() {
    let grid = Grid::unit(7, 4).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let values: Vec<f64> = (0..grid.len()).map(|_| rng.random_range(0.0..30.0)).collect();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.pgm");
    write_pgm(&p, &grid, &values).unwrap();
    let scale = PgmScale::parse(&std::fs::read_to_string(scale_path(&p)).unwrap()).unwrap();
    let levels = read_pgm(&p, &grid).unwrap();
    let range = scale.max - scale.min;
    for (v, l) in values.iter().zip(&levels) {
        assert!((scale.from_level(*l) - v).abs() <= range / 255.0);
    }

    let flat = vec![2.5; grid.len()];
    write_pgm(&p, &grid, &flat).unwrap();
    let levels = read_pgm(&p, &grid).unwrap();
    assert!(levels.iter().all(|&l| l == levels[0]));
}
