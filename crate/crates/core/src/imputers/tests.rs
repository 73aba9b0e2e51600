use super::*;
use crate::datamodel::{
    stack_landmarks, transform_labs, Episode, EventType, LandmarkRow, Predictor, PredictorKind, StackedDataset,
};
use crate::rng::substream;
use crate::synthgen::{desk_config, desk_informative_missingness, generate_cohort, impose_missingness};
use approx::assert_abs_diff_eq;
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn desk(n: usize, seed: u64) -> StackedDataset {
    let mut cfg = desk_config(seed);
    cfg.n_episodes = n;
    let cohort = generate_cohort(&cfg, Execution::Parallel).unwrap();
    let masked = impose_missingness(&cohort, &desk_informative_missingness(), seed).unwrap();
    let data = stack_landmarks(&masked.episodes, &masked.schema, 0, 30, 7.0).unwrap();
    transform_labs(&data).unwrap()
}

fn fast_cfg() -> ImputerConfig {
    ImputerConfig { m: 3, maxit: 4, ntrees: 20, forest_maxiter: 3, ..Default::default() }
}

fn single_var(rows: Vec<(u64, u32, Option<f64>)>, kind: PredictorKind) -> StackedDataset {
    let schema = PredictorSchema::new(vec![Predictor::new("v", kind)]).unwrap();
    let rows = rows
        .into_iter()
        .map(|(id, s, v)| StackedRow {
            episode_id: id,
            admission_id: id,
            s,
            values: vec![v],
            event_time: f64::from(s) + 7.0,
            event_type: EventType::Censored,
        })
        .collect();
    StackedDataset { schema, rows, horizon: 7.0, first_landmark: 0, last_landmark: 30 }
}

fn values(c: &CompletedData, d: usize) -> Vec<Vec<f64>> {
    c.datasets[d].rows.iter().map(|r| r.values.iter().map(|v| v.unwrap()).collect()).collect()
}

#[test]
fn strategy_tags_round_trip() {
    for base in Strategy::ALL {
        let spec = StrategySpec::plain(base);
        assert_eq!(spec.to_string().parse::<StrategySpec>().unwrap(), spec);
        if base != Strategy::MissingIndicator {
            let ind = StrategySpec::with_indicators(base).unwrap();
            assert_eq!(ind.to_string().parse::<StrategySpec>().unwrap(), ind);
        }
    }
    assert!("missing_indicator+indicators".parse::<StrategySpec>().is_err());
    assert!("nope".parse::<StrategySpec>().is_err());
}

#[test]
fn median_per_landmark() {
    let train = single_var(
        vec![(1, 2, Some(1.0)), (2, 2, Some(3.0)), (3, 2, Some(100.0)), (4, 5, Some(50.0))],
        PredictorKind::Continuous,
    );
    let fit = fit_imputer(StrategySpec::plain(Strategy::MedianMode), &train, &fast_cfg(), 0).unwrap();
    let target = single_var(vec![(9, 2, None), (10, 7, None)], PredictorKind::Continuous);
    let out = fit.model.apply(&target, Execution::Sequential).unwrap();
    assert_eq!(values(&out, 0), vec![vec![3.0], vec![26.5]]);

    let bin = single_var(vec![(1, 0, Some(0.0)), (2, 0, Some(0.0)), (3, 0, Some(1.0))], PredictorKind::Binary);
    let fit = fit_imputer(StrategySpec::plain(Strategy::MedianMode), &bin, &fast_cfg(), 0).unwrap();
    let out = fit.model.apply(&single_var(vec![(5, 0, None)], PredictorKind::Binary), Execution::Sequential).unwrap();
    assert_eq!(values(&out, 0), vec![vec![0.0]]);

    let never = single_var(vec![(1, 0, None)], PredictorKind::Continuous);
    assert!(matches!(
        fit_imputer(StrategySpec::plain(Strategy::MedianMode), &never, &fast_cfg(), 0),
        Err(Error::Unimputable(_))
    ));
}

#[test]
fn locf_carries_forward_and_uses_baseline() {
    let train = single_var(vec![(1, 0, Some(4.0)), (2, 0, Some(4.0)), (3, 1, Some(9.0))], PredictorKind::Continuous);
    let fit = fit_imputer(StrategySpec::plain(Strategy::Locf), &train, &fast_cfg(), 0).unwrap();
    let target = single_var(
        vec![(7, 0, Some(5.0)), (7, 1, None), (7, 2, None), (8, 0, None), (8, 1, Some(7.0)), (9, 0, Some(1.0)), (9, 1, Some(2.0))],
        PredictorKind::Continuous,
    );
    let out = fit.model.apply(&target, Execution::Sequential).unwrap();
    let v: Vec<f64> = values(&out, 0).into_iter().map(|r| r[0]).collect();
    assert_eq!(v, vec![5.0, 5.0, 5.0, 4.0, 7.0, 1.0, 2.0]);
}

#[test]
fn indicator_fill_and_groups() {
    let schema = PredictorSchema::new(vec![
        Predictor::new("urea", PredictorKind::Continuous),
        Predictor::new("spec_a", PredictorKind::Binary).group("specialty"),
        Predictor::new("spec_b", PredictorKind::Binary).group("specialty"),
        Predictor::new("age", PredictorKind::Continuous),
    ])
    .unwrap();
    let row = |id: u64, v: [Option<f64>; 4]| StackedRow {
        episode_id: id,
        admission_id: id,
        s: 0,
        values: v.to_vec(),
        event_time: 3.0,
        event_type: EventType::Clabsi,
    };
    let train = StackedDataset {
        schema,
        rows: vec![
            row(1, [None, Some(1.0), None, Some(50.0)]),
            row(2, [Some(3.4), None, Some(0.0), Some(60.0)]),
            row(3, [Some(2.0), Some(0.0), Some(1.0), Some(70.0)]),
        ],
        horizon: 7.0,
        first_landmark: 0,
        last_landmark: 30,
    };
    let fit = fit_imputer(StrategySpec::plain(Strategy::MissingIndicator), &train, &fast_cfg(), 0).unwrap();
    let names: Vec<String> = fit.train.datasets[0].schema.names().map(str::to_string).collect();
    assert_eq!(names, ["urea", "spec_a", "spec_b", "age", "urea_missing", "specialty_missing"]);
    assert_eq!(values(&fit.train, 0)[0], vec![99.0, 1.0, 99.0, 50.0, 1.0, 1.0]);
    assert_eq!(values(&fit.train, 0)[1], vec![3.4, 99.0, 0.0, 60.0, 0.0, 1.0]);
    assert_eq!(values(&fit.train, 0)[2], vec![2.0, 0.0, 1.0, 70.0, 0.0, 0.0]);

    let med = fit_imputer(StrategySpec::with_indicators(Strategy::MedianMode).unwrap(), &train, &fast_cfg(), 0).unwrap();
    let first = &values(&med.train, 0)[0];
    assert_eq!(first[0], 2.7);
    assert_eq!(first[4], 1.0);
}

#[test]
fn complete_data_passes_through() {
    let data = desk(150, 3);
    let complete = data.with_rows(data.rows.iter().filter(|r| r.is_complete()).cloned().collect());
    for base in Strategy::ALL {
        let spec = StrategySpec::plain(base);
        let fit = fit_imputer(spec, &complete, &fast_cfg(), 1).unwrap();
        let out = fit.model.apply(&complete, Execution::Parallel).unwrap();
        assert_eq!(out.datasets.len(), fit.model.m);
        for d in &out.datasets {
            for (a, b) in d.rows.iter().zip(&complete.rows) {
                assert_eq!(&a.values[..b.values.len()], &b.values[..], "{spec}");
            }
        }
    }
}

#[test]
fn regression_recovers_linear_relation() {
    let schema = PredictorSchema::new(vec![
        Predictor::new("x", PredictorKind::Continuous),
        Predictor::new("y", PredictorKind::Continuous),
    ])
    .unwrap();
    let mut rng = substream(11, &[]);
    let rows: Vec<StackedRow> = (0..2000)
        .map(|i| {
            let x: f64 = rng.gen_range(-3.0..3.0);
            let y = (rng.gen::<f64>() >= 0.3).then_some(2.0 * x);
            StackedRow {
                episode_id: i,
                admission_id: i,
                s: (i % 5) as u32,
                values: vec![Some(x), y],
                event_time: 20.0,
                event_type: EventType::Censored,
            }
        })
        .collect();
    let data = StackedDataset { schema, rows, horizon: 7.0, first_landmark: 0, last_landmark: 30 };
    let fit = fit_imputer(StrategySpec::plain(Strategy::Regression), &data, &fast_cfg(), 0).unwrap();
    for (orig, done) in data.rows.iter().zip(&fit.train.datasets[0].rows) {
        if orig.values[1].is_none() {
            let x = orig.values[0].unwrap();
            assert!((done.values[1].unwrap() - 2.0 * x).abs() < 0.1);
        }
    }
    let again = fit.model.apply(&data, Execution::Sequential).unwrap();
    assert_eq!(again, fit.model.apply(&data, Execution::Parallel).unwrap());
}

#[test]
fn mice_shape_and_config_errors() {
    let train = desk(300, 4);
    let valid = desk(120, 5);
    let cfg = ImputerConfig { m: 10, maxit: 3, ..fast_cfg() };
    let fit = fit_imputer(StrategySpec::plain(Strategy::Mice), &train, &cfg, 2).unwrap();
    assert_eq!(fit.train.datasets.len(), 10);
    let out = fit.model.apply(&valid, Execution::Parallel).unwrap();
    assert_eq!(out.datasets.len(), 10);
    assert_ne!(out.datasets[0], out.datasets[1]);
    let bad = ImputerConfig { m: 0, ..cfg.clone() };
    assert!(matches!(fit_imputer(StrategySpec::plain(Strategy::Mice), &train, &bad, 2), Err(Error::Config(_))));
    let bad = ImputerConfig { maxit: 0, ..cfg };
    assert!(matches!(fit_imputer(StrategySpec::plain(Strategy::Mice), &train, &bad, 2), Err(Error::Config(_))));
}

#[test]
fn mice_indicators_identical_across_completions() {
    let train = desk(250, 6);
    let fit = fit_imputer(StrategySpec::with_indicators(Strategy::MiceYx).unwrap(), &train, &fast_cfg(), 3).unwrap();
    let p = train.schema.len();
    let ind: Vec<Vec<Vec<f64>>> = (0..fit.train.datasets.len()).map(|d| values(&fit.train, d).into_iter().map(|r| r[p..].to_vec()).collect()).collect();
    assert!(ind.iter().all(|d| d == &ind[0]));
    assert!(ind[0].iter().flatten().any(|&v| v == 1.0));
}

#[test]
fn indicators_depend_only_on_mask() {
    let train = desk(200, 7);
    let mut shuffled = train.clone();
    for r in &mut shuffled.rows {
        for v in r.values.iter_mut().flatten() {
            *v += 1.0;
        }
    }
    let spec = StrategySpec::plain(Strategy::MissingIndicator);
    let a = fit_imputer(spec, &train, &fast_cfg(), 0).unwrap();
    let b = a.model.apply(&shuffled, Execution::Sequential).unwrap();
    let p = train.schema.len();
    for (x, y) in a.train.datasets[0].rows.iter().zip(&b.datasets[0].rows) {
        assert_eq!(x.values[p..], y.values[p..]);
    }
}

#[test]
fn mixed_model_without_history_uses_fixed_effects() {
    let data = desk(300, 8);
    let fit = fit_imputer(StrategySpec::plain(Strategy::MixedModel), &data, &fast_cfg(), 0).unwrap();
    let ImputerState::Mixed(state) = &fit.model.state else { panic!() };
    let urea = data.schema.index_of("urea").unwrap();
    let model = state.models.iter().find(|m| m.var == urea).unwrap();
    let template = data.rows.iter().find(|r| r.s == 3).unwrap();
    let mut history: Vec<StackedRow> = (0..=3)
        .map(|s| {
            let mut r = template.clone();
            r.episode_id = 999_999;
            r.s = s;
            r.values[urea] = None;
            r
        })
        .collect();
    for r in &mut history {
        for (j, v) in r.values.iter_mut().enumerate() {
            if j != urea && v.is_none() {
                *v = Some(0.0);
            }
        }
    }
    let out = fit.model.apply_row(&history).unwrap();
    let last = history.last().unwrap();
    let x: Vec<f64> = model.covariates.iter().map(|&c| last.values[c].unwrap()).chain([3.0]).collect();
    assert_abs_diff_eq!(out[0][urea], model.fit.predict_mean(&x, 0.0), epsilon = 1e-12);
}

#[test]
fn mixed_model_matches_oracle_blup() {
    let schema = PredictorSchema::new(vec![Predictor::new("lab", PredictorKind::Continuous)]).unwrap();
    let mut rng = substream(21, &[]);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let (a, b, sigma_u, sigma_e) = (1.0, 0.1, 1.0, 0.5);
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    let mut intercepts = Vec::new();
    for id in 0..2000u64 {
        let u = sigma_u * normal.sample(&mut rng);
        intercepts.push(u);
        for s in 0..5u32 {
            let y = a + b * f64::from(s) + u + sigma_e * normal.sample(&mut rng);
            let missing = s > 0 && rng.gen::<f64>() < 0.3;
            truth.push(y);
            rows.push(StackedRow {
                episode_id: id,
                admission_id: id,
                s,
                values: vec![(!missing).then_some(y)],
                event_time: f64::from(s) + 7.0,
                event_type: EventType::Censored,
            });
        }
    }
    let data = StackedDataset { schema, rows, horizon: 7.0, first_landmark: 0, last_landmark: 30 };
    let fit = fit_imputer(StrategySpec::plain(Strategy::MixedModel), &data, &fast_cfg(), 0).unwrap();
    let out = values(&fit.train, 0);
    // oracle: true parameters, intercept shrunk from the same observed history
    let (mut se, mut se_oracle, mut n) = (0.0, 0.0, 0.0);
    for ep in data.episode_ranges() {
        let mut resid = Vec::new();
        for i in ep {
            let r = &data.rows[i];
            match r.values[0] {
                Some(y) => resid.push(y - a - b * f64::from(r.s)),
                None => {
                    let k = resid.len() as f64;
                    let u = sigma_u.powi(2) * resid.iter().sum::<f64>() / (sigma_e * sigma_e + k * sigma_u.powi(2));
                    se_oracle += (a + b * f64::from(r.s) + u - truth[i]).powi(2);
                    se += (out[i][0] - truth[i]).powi(2);
                    n += 1.0;
                }
            }
        }
    }
    let (rmse, oracle) = ((se / n).sqrt(), (se_oracle / n).sqrt());
    assert!(rmse <= 1.05 * oracle, "rmse {rmse} oracle {oracle}");
}

#[test]
fn missforest_learns_sum() {
    let schema = PredictorSchema::new(vec![
        Predictor::new("x1", PredictorKind::Continuous),
        Predictor::new("x2", PredictorKind::Continuous),
        Predictor::new("y", PredictorKind::Continuous),
    ])
    .unwrap();
    let mut rng = substream(5, &[]);
    let rows: Vec<StackedRow> = (0..2000)
        .map(|i| {
            let (x1, x2): (f64, f64) = (rng.gen(), rng.gen());
            StackedRow {
                episode_id: i,
                admission_id: i,
                s: 0,
                values: vec![Some(x1), Some(x2), (rng.gen::<f64>() >= 0.3).then_some(x1 + x2)],
                event_time: 7.0,
                event_type: EventType::Censored,
            }
        })
        .collect();
    let data = StackedDataset { schema, rows, horizon: 7.0, first_landmark: 0, last_landmark: 30 };
    let cfg = ImputerConfig { ntrees: 100, ..fast_cfg() };
    let fit = fit_imputer(StrategySpec::plain(Strategy::MissForest), &data, &cfg, 0).unwrap();
    let ImputerState::Forest(state) = &fit.model.state else { panic!() };
    assert!(state.nmse[0][0] < 0.5, "{:?}", state.nmse);
}

#[test]
fn row_apply_equals_batch_apply_for_every_strategy() {
    let train = desk(250, 9);
    let valid = desk(120, 10);
    let ranges = valid.episode_ranges();
    let mut rng = substream(99, &[]);
    for base in Strategy::ALL {
        let spec = StrategySpec::plain(base);
        let fit = fit_imputer(spec, &train, &fast_cfg(), 4).unwrap();
        let batch = fit.model.apply(&valid, Execution::Parallel).unwrap();
        for _ in 0..40 {
            let ep = &ranges[rng.gen_range(0..ranges.len())];
            let end = rng.gen_range(ep.start..ep.end);
            let rows = fit.model.apply_row(&valid.rows[ep.start..=end]).unwrap();
            assert_eq!(rows.len(), batch.datasets.len());
            for (c, row) in rows.iter().enumerate() {
                let expected: Vec<f64> = batch.datasets[c].rows[end].values.iter().map(|v| v.unwrap()).collect();
                assert_eq!(row, &expected, "{spec} completion {c}");
            }
        }
    }
}

#[test]
fn saved_models_apply_identically() {
    let train = desk(200, 12);
    let valid = desk(80, 13);
    for base in Strategy::ALL {
        let fit = fit_imputer(StrategySpec::plain(base), &train, &fast_cfg(), 5).unwrap();
        let text = fit.model.to_envelope().unwrap().to_json().unwrap();
        let back = ImputerModel::from_envelope(&Envelope::from_json(&text).unwrap()).unwrap();
        assert_eq!(back, fit.model);
        assert_eq!(back.apply(&valid, Execution::Parallel).unwrap(), fit.model.apply(&valid, Execution::Parallel).unwrap());
    }
}

#[test]
fn disjoint_validation_sets_share_row_imputations() {
    let train = desk(250, 14);
    let valid = desk(160, 15);
    let ranges = valid.episode_ranges();
    let half = ranges[ranges.len() / 2].start;
    let a = valid.with_rows(valid.rows[..half].to_vec());
    let both = valid.clone();
    for base in Strategy::ALL {
        let fit = fit_imputer(StrategySpec::plain(base), &train, &fast_cfg(), 6).unwrap();
        let x = fit.model.apply(&a, Execution::Parallel).unwrap();
        let y = fit.model.apply(&both, Execution::Parallel).unwrap();
        for (dx, dy) in x.datasets.iter().zip(&y.datasets) {
            assert_eq!(dx.rows[..], dy.rows[..half]);
        }
    }
}

#[test]
fn schema_mismatch_is_rejected() {
    let train = desk(100, 16);
    let fit = fit_imputer(StrategySpec::plain(Strategy::MedianMode), &train, &fast_cfg(), 0).unwrap();
    let other = single_var(vec![(1, 0, None)], PredictorKind::Continuous);
    assert!(fit.model.apply(&other, Execution::Sequential).is_err());
    let ep = Episode::new(1, 1, 2.0, EventType::Death, vec![LandmarkRow::new(0, vec![None])], &other.schema).unwrap();
    assert_eq!(ep.rows.len(), 1);
}
