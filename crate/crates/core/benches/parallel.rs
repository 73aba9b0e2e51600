use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use nalgebra::DMatrix;
use rand::Rng;

use lmimpute::exec::Execution;
use lmimpute::harness::{load_cohort, prepare_split, ExperimentConfig};
use lmimpute::imputers::{fit_imputer, ImputerConfig};
use lmimpute::rng::substream;
use lmimpute::solvers::{fit_forest, ForestKind, ForestOptions};
use lmimpute::synthgen::{desk_config, generate_cohort};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn forest(c: &mut Criterion) {
    let mut rng = substream(1, &[]);
    let n = 3000;
    let x = DMatrix::from_fn(n, 6, |_, _| rng.gen::<f64>());
    let y: Vec<f64> = (0..n).map(|i| x[(i, 0)] + x[(i, 1)] + 0.1 * rng.gen::<f64>()).collect();
    let mut g = c.benchmark_group("forest_fit");
    g.sample_size(10);
    for (name, exec) in MODES {
        let opts = ForestOptions { ntrees: 50, execution: exec, ..Default::default() };
        g.bench_with_input(BenchmarkId::from_parameter(name), &opts, |b, o| {
            b.iter(|| fit_forest(black_box(&x), &y, ForestKind::Regression, o).unwrap())
        });
    }
    g.finish();
}

fn cohort(c: &mut Criterion) {
    let mut cfg = desk_config(2);
    cfg.n_episodes = 1000;
    let mut g = c.benchmark_group("generate_cohort");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| generate_cohort(black_box(&cfg), exec).unwrap()));
    }
    g.finish();
}

fn mice_apply(c: &mut Criterion) {
    let mut cfg = ExperimentConfig::desk(3);
    cfg.data = lmimpute::harness::DataSource::Synthetic(lmimpute::harness::SyntheticSource {
        n_episodes: Some(600),
        ..Default::default()
    });
    let cohort = load_cohort(&cfg.data, cfg.seed, Execution::Parallel).unwrap();
    let data = prepare_split(&cohort, &cfg, 0).unwrap();
    let icfg = ImputerConfig { m: 4, maxit: 4, ..Default::default() };
    let model = fit_imputer("mice".parse().unwrap(), &data.train, &icfg, 1).unwrap().model;
    let mut g = c.benchmark_group("mice_apply");
    g.sample_size(10);
    for (name, exec) in MODES {
        g.bench_function(name, |b| b.iter(|| model.apply(black_box(&data.valid), exec).unwrap()));
    }
    g.finish();
}

criterion_group!(benches, forest, cohort, mice_apply);
criterion_main!(benches);
