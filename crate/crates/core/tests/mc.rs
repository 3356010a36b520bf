use std::sync::Arc;

use pullode::experiment::{build_gp, DatasetConfig, NONLINEAR_INITIAL};
use pullode::gp::linspace;
use pullode::linear::analytic_moments;
use pullode::mc::*;
use pullode::{Ensemble, Error, Gaussian, Gp, Integrator, Interpolation, LinearModelDist, Pairing};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn paper_gp() -> Gp {
    build_gp(&DatasetConfig::default()).unwrap()
}

fn small(h: f64, horizon: f64, n_fields: usize, n_initial: usize, seed: u64) -> Ensemble {
    Ensemble {
        n_fields,
        n_initial,
        ..Ensemble::desk(h, horizon, seed)
    }
}

fn linear_fields(a: f64, beta: f64, n: usize, span: (f64, f64), interp: Interpolation, seed: u64) -> Vec<FieldRealization<f64>> {
    let grid = Arc::new(linspace(span.0, span.1, 64));
    let b = Normal::new(0.0, beta.sqrt()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let bi = b.sample(&mut rng);
            let values = grid.iter().map(|&x| -a * x + bi).collect();
            FieldRealization::new(Arc::clone(&grid), values, interp).unwrap()
        })
        .collect()
}

/// Resamples `fine` at `points` nodes, keeping the same underlying field.
fn coarsen(fine: &FieldRealization<f64>, points: usize) -> FieldRealization<f64> {
    let (lo, hi) = fine.span();
    let grid = linspace(lo, hi, points);
    let values = grid.iter().map(|&x| fine.eval(x).unwrap()).collect();
    FieldRealization::new(Arc::new(grid), values, fine.interpolation()).unwrap()
}

#[test]
fn linear_fields_match_analytic_moments() {
    let (a, beta) = (1.0, 1.0);
    let x0 = Gaussian::new(1.0, 0.25).unwrap();
    let n = 20_000;
    let cfg = Ensemble {
        pairing: Pairing::OneToOne,
        grid_span: (-9.0, 9.0),
        ..small(0.1, 5.0, n, n, 31)
    };
    let fields = linear_fields(a, beta, n, cfg.grid_span, Interpolation::Cubic, 5);
    let pairs = trajectory_pairs(Pairing::OneToOne, n, n).unwrap();
    let out = ensemble_from_fields(&fields, x0, &pairs, &cfg, false).unwrap();
    let d = out.distribution;
    let m = LinearModelDist::new(a, beta).unwrap();
    for (i, &t) in d.times.iter().enumerate() {
        let exact = analytic_moments(&m, x0, t);
        let se_mean = (exact.var / n as f64).sqrt();
        let se_var = exact.var * (2.0 / (n - 1) as f64).sqrt();
        assert!((d.means[i] - exact.mean).abs() <= 3.0 * se_mean, "mean at t = {t}");
        assert!((d.vars[i] - exact.var).abs() <= 3.0 * se_var, "var at t = {t}");
    }
    assert_eq!(d.meta.samples, n);
}

#[test]
fn single_field_point_initial_has_zero_variance() {
    let cfg = small(0.1, 4.0, 1, 7, 3);
    let out = ensemble_run(&paper_gp(), Gaussian::point(0.6), &cfg, false).unwrap();
    assert!(out.distribution.vars.iter().all(|&v| v == 0.0));
    assert!(out.terminal_states.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn grid_refinement_leaves_terminal_std_unchanged() {
    let gp = paper_gp();
    let cfg = Ensemble {
        grid_points: 800,
        ..small(0.05, 8.0, 200, 20, 12)
    };
    let fine = draw_fields(&gp, &cfg).unwrap();
    let coarse: Vec<_> = fine.iter().map(|f| coarsen(f, 400)).collect();
    let pairs = trajectory_pairs(cfg.pairing, cfg.n_fields, cfg.n_initial).unwrap();
    let std_of = |fields: &[FieldRealization<f64>]| {
        let out = ensemble_from_fields(fields, NONLINEAR_INITIAL, &pairs, &cfg, false).unwrap();
        out.distribution.last().unwrap().std()
    };
    let (a, b) = (std_of(&fine), std_of(&coarse));
    assert!((a / b - 1.0).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn euler_and_rk4_agree_at_small_steps() {
    let gp = paper_gp();
    let cfg = small(0.01, 8.0, 100, 10, 4);
    let fields = draw_fields(&gp, &cfg).unwrap();
    let pairs = trajectory_pairs(cfg.pairing, cfg.n_fields, cfg.n_initial).unwrap();
    let var_with = |integrator| {
        let c = Ensemble { integrator, ..cfg };
        ensemble_from_fields(&fields, NONLINEAR_INITIAL, &pairs, &c, false).unwrap().distribution.last().unwrap().var
    };
    let (rk4, euler) = (var_with(Integrator::Rk4), var_with(Integrator::Euler));
    let se = rk4 * (2.0 / (pairs.len() - 1) as f64).sqrt();
    assert!((rk4 - euler).abs() <= 3.0 * se, "{rk4} vs {euler}");
}

#[test]
fn fields_reproduce_posterior_node_moments() {
    let gp = paper_gp();
    let cfg = Ensemble {
        grid_points: 33,
        ..small(0.1, 1.0, 4000, 1, 77)
    };
    let fields = draw_fields(&gp, &cfg).unwrap();
    let n = fields.len() as f64;
    for (k, &x) in fields[0].grid().iter().enumerate() {
        let vals: Vec<f64> = fields.iter().map(|f| f.values()[k]).collect();
        let mean = vals.iter().sum::<f64>() / n;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        let sd = gp.var(x).sqrt();
        assert!((mean - gp.mean(x)).abs() <= 4.0 * sd / n.sqrt() + 1e-9, "x = {x}");
        assert!((var - gp.var(x)).abs() <= 5.0 * gp.var(x) * (2.0 / n).sqrt() + 1e-9, "x = {x}");
        assert_eq!(fields[0].eval(x), Some(fields[0].values()[k]));
    }
    let again = draw_fields(&gp, &cfg).unwrap();
    assert!(fields.iter().zip(&again).all(|(a, b)| a.values() == b.values()));
}

#[test]
fn cross_product_is_concatenation_of_per_initial_runs() {
    let gp = paper_gp();
    let cfg = small(0.1, 3.0, 12, 4, 8);
    let fields = draw_fields(&gp, &cfg).unwrap();
    let all = trajectory_pairs(Pairing::CrossProduct, 12, 4).unwrap();
    let joint = ensemble_from_fields(&fields, NONLINEAR_INITIAL, &all, &cfg, true).unwrap();
    let mut concatenated = Vec::new();
    for j in 0..4 {
        let pairs: Vec<_> = (0..12).map(|i| (i, j)).collect();
        let run = ensemble_from_fields(&fields, NONLINEAR_INITIAL, &pairs, &cfg, true).unwrap();
        concatenated.extend(run.raw.unwrap());
    }
    assert_eq!(joint.raw.unwrap(), concatenated);
    assert_eq!(joint.terminal_states.len(), 48);

    let one = trajectory_pairs(Pairing::OneToOne, 5, 5).unwrap();
    assert_eq!(one, (0..5).map(|i| (i, i)).collect::<Vec<_>>());
    assert!(trajectory_pairs(Pairing::OneToOne, 5, 4).is_err());
    assert!(Ensemble { pairing: Pairing::OneToOne, ..cfg }.validate().is_err());
}

#[test]
fn results_do_not_depend_on_worker_count() {
    let gp = paper_gp();
    let cfg = small(0.05, 8.0, 40, 15, 21);
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| ensemble_run(&gp, NONLINEAR_INITIAL, &cfg, false).unwrap())
    };
    let (a, b) = (run(1), run(4));
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.distribution.means), bits(&b.distribution.means));
    assert_eq!(bits(&a.distribution.vars), bits(&b.distribution.vars));
    assert_eq!(bits(&a.terminal_states), bits(&b.terminal_states));

    let other = ensemble_run(&gp, NONLINEAR_INITIAL, &Ensemble { seed: 22, ..cfg }, false).unwrap();
    assert_ne!(bits(&a.terminal_states), bits(&other.terminal_states));
}

/// Roots of the posterior mean where it crosses from + to -.
fn stable_roots(gp: &Gp, lo: f64, hi: f64) -> Vec<f64> {
    let grid = linspace(lo, hi, 4001);
    grid.windows(2)
        .filter(|w| gp.mean(w[0]) > 0.0 && gp.mean(w[1]) <= 0.0)
        .map(|w| {
            let (mut a, mut b) = (w[0], w[1]);
            for _ in 0..60 {
                let m = 0.5 * (a + b);
                if gp.mean(m) > 0.0 {
                    a = m
                } else {
                    b = m
                }
            }
            0.5 * (a + b)
        })
        .collect()
}

#[test]
fn near_zero_start_splits_toward_stable_roots() {
    let gp = paper_gp();
    let roots = stable_roots(&gp, -3.0, 3.0);
    assert_eq!(roots.len(), 2, "{roots:?}");
    assert!(roots[0] < -1.4 && roots[0] > -1.8 && roots[1] > 1.4 && roots[1] < 1.8, "{roots:?}");

    let cfg = small(0.05, 8.0, 100, 10, 0);
    let out = ensemble_run(&gp, Gaussian::new(0.05, 0.01).unwrap(), &cfg, false).unwrap();
    let median = |mut v: Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    let pos: Vec<f64> = out.terminal_states.iter().copied().filter(|&x| x > 0.0).collect();
    let neg: Vec<f64> = out.terminal_states.iter().copied().filter(|&x| x < 0.0).collect();
    assert!(pos.len() >= 100 && neg.len() >= 100, "{} / {}", pos.len(), neg.len());
    assert!((median(pos) - roots[1]).abs() < 0.15);
    assert!((median(neg) - roots[0]).abs() < 0.15);
}

#[test]
fn leaving_the_grid_is_an_error() {
    let gp = paper_gp();
    let cfg = Ensemble {
        grid_span: (-1.0, 1.0),
        ..small(0.1, 8.0, 3, 2, 0)
    };
    let err = ensemble_run(&gp, NONLINEAR_INITIAL, &cfg, false).unwrap_err();
    assert!(matches!(err, Error::GridEscape { .. }), "{err}");

    let field = &linear_fields(1.0, 0.0, 1, (-1.0, 1.0), Interpolation::Linear, 0)[0];
    match integrate_realization(field, 3.0, Integrator::Euler, 0.1, 1.0) {
        Err(Error::GridEscape { time, state }) => assert_eq!((time, state), (0.0, 3.0)),
        other => panic!("{other:?}"),
    }
}

#[test]
fn integrator_examples() {
    let zero = FieldRealization::new(Arc::new(linspace(-2.0, 2.0, 9)), vec![0.0; 9], Interpolation::Cubic).unwrap();
    let flat = integrate_realization(&zero, 0.3, Integrator::Rk4, 0.1, 2.0).unwrap();
    assert!(flat.iter().all(|&x| x == 0.3));

    let decay = &linear_fields(1.0, 0.0, 1, (-2.0, 2.0), Interpolation::Linear, 0)[0];
    let xs = integrate_realization(decay, 1.5, Integrator::Euler, 0.1, 3.0).unwrap();
    for (n, x) in xs.iter().enumerate() {
        assert!((x - 1.5 * 0.9f64.powi(n as i32)).abs() < 1e-14);
    }
}

#[test]
fn euler_is_first_order_on_a_smooth_field() {
    let grid = Arc::new(linspace(-4.0f64, 4.0, 400));
    let values = grid.iter().map(|&x| x * x.cos()).collect();
    let field = FieldRealization::new(grid, values, Interpolation::Cubic).unwrap();
    let reference = *integrate_realization(&field, 0.6, Integrator::Rk4, 0.005, 4.0).unwrap().last().unwrap();
    let err = |h: f64| (integrate_realization(&field, 0.6, Integrator::Euler, h, 4.0).unwrap().last().unwrap() - reference).abs();
    let ratio = err(0.1) / err(0.05);
    assert!((1.7..=2.3).contains(&ratio), "{ratio}");
}

#[test]
fn raw_dump_and_histogram() {
    let gp = paper_gp();
    let cfg = small(0.5, 1.0, 3, 2, 1);
    let out = ensemble_run(&gp, NONLINEAR_INITIAL, &cfg, true).unwrap();
    let raw = out.raw.unwrap();
    let mut buf = Vec::new();
    write_raw_csv(&mut buf, &raw, cfg.h).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "field_id,x0_id,t,x");
    assert_eq!(lines.len(), 1 + 6 * 3);
    assert!(lines[1].starts_with("0,0,0.0000000000000000e0,"));

    let hist = histogram(&out.terminal_states, -4.0, 4.0, 8);
    assert_eq!(hist.len(), 8);
    assert_eq!(hist.iter().map(|b| b.2).sum::<usize>(), 6);
    assert_eq!((hist[0].0, hist[7].1), (-4.0, 4.0));
}
