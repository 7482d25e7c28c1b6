use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ratad::forecast::{
    assemble_context, forecast, ridge_objective, train_linear_ratfm, ExampleCopy, ForecastError, LinearForecaster,
    SeasonalNaive,
};
use ratad::{Budget, ContextWindow, Forecaster, Window};

fn window(input: Vec<f64>, future: Vec<f64>) -> Window {
    Window {
        series_id: "t".into(),
        start: 0,
        input,
        future,
    }
}

fn random_context(rng: &mut ChaCha8Rng, budget: Budget, copy_like: bool) -> ContextWindow {
    let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
    let example = window(draw(budget.example_input), draw(budget.horizon));
    let future = if copy_like {
        example.future.clone()
    } else {
        draw(budget.horizon)
    };
    let target = window(draw(budget.target_input), future);
    assemble_context(&target, &example, budget).unwrap()
}

fn training_mse(model: &LinearForecaster, contexts: &[ContextWindow]) -> f64 {
    let mut total = 0.0;
    for ctx in contexts {
        let pred = model.predict(ctx).unwrap();
        total += pred
            .iter()
            .zip(ctx.target_future.as_ref().unwrap())
            .map(|(p, y)| (p - y).powi(2))
            .sum::<f64>();
    }
    total / contexts.len() as f64
}

#[test]
fn training_error_grows_with_regularization() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let budget = Budget::new(6, 3, 6);
    let contexts: Vec<_> = (0..60).map(|_| random_context(&mut rng, budget, false)).collect();
    let mut last = (f64::NEG_INFINITY, f64::NEG_INFINITY);
    for reg in [1e-6, 1e-4, 1e-2, 1.0, 1e2] {
        let (model, report) = train_linear_ratfm(&contexts, reg).unwrap();
        let mse = training_mse(&model, &contexts);
        assert!(report.final_mse >= last.0 - 1e-12, "objective fell at reg {reg}");
        assert!(mse >= last.1 - 1e-12, "fit error fell at reg {reg}");
        last = (report.final_mse, mse);
    }
}

/// Plain gradient descent on the ridge objective; bias unpenalized.
fn descend(contexts: &[ContextWindow], reg: f64) -> Vec<Vec<f64>> {
    let rows: Vec<(Vec<f64>, Vec<f64>)> = contexts
        .iter()
        .map(|c| (c.flatten(), c.target_future.clone().unwrap()))
        .collect();
    let (d, h) = (rows[0].0.len(), rows[0].1.len());
    // Step from a bound on the Hessian's largest eigenvalue.
    let lipschitz = 2.0
        * (rows
            .iter()
            .map(|(x, _)| 1.0 + x.iter().map(|v| v * v).sum::<f64>())
            .sum::<f64>()
            + reg);
    let step = 1.0 / lipschitz;
    let mut theta = vec![vec![0.0; d + 1]; h];
    for _ in 0..400_000 {
        let mut grad = vec![vec![0.0; d + 1]; h];
        for (x, y) in &rows {
            for j in 0..h {
                let pred: f64 = theta[j][..d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + theta[j][d];
                let r = pred - y[j];
                for k in 0..d {
                    grad[j][k] += 2.0 * r * x[k];
                }
                grad[j][d] += 2.0 * r;
            }
        }
        let mut size = 0.0;
        for j in 0..h {
            for k in 0..d {
                grad[j][k] += 2.0 * reg * theta[j][k];
            }
            for k in 0..=d {
                size += grad[j][k] * grad[j][k];
                theta[j][k] -= step * grad[j][k];
            }
        }
        if size.sqrt() < 1e-13 {
            break;
        }
    }
    theta
}

#[test]
fn closed_form_matches_gradient_descent() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let budget = Budget::new(2, 1, 2);
    let contexts: Vec<_> = (0..10).map(|_| random_context(&mut rng, budget, false)).collect();
    let reg = 0.5;
    let (model, _) = train_linear_ratfm(&contexts, reg).unwrap();
    let numeric = descend(&contexts, reg);
    for (row, oracle) in model.to_augmented().iter().zip(&numeric) {
        for (a, b) in row.iter().zip(oracle) {
            assert!(
                (a - b).abs() <= 1e-5 * b.abs().max(1e-3),
                "closed form {a} vs descent {b}"
            );
        }
    }
    let check = LinearForecaster::from_augmented(budget, &numeric).unwrap();
    let (closed, descended) = (
        ridge_objective(&model, &contexts, reg).unwrap(),
        ridge_objective(&check, &contexts, reg).unwrap(),
    );
    assert!(closed <= descended + 1e-12);
}

#[test]
fn learns_to_copy_the_example_future() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let budget = Budget::new(4, 2, 4);
    let train: Vec<_> = (0..200).map(|_| random_context(&mut rng, budget, true)).collect();
    let (model, _) = train_linear_ratfm(&train, 1e-6).unwrap();
    for _ in 0..20 {
        let held_out = random_context(&mut rng, budget, true);
        let pred = forecast(&model, &held_out).unwrap();
        for (p, y) in pred.iter().zip(&held_out.example_future) {
            assert!((p - y).abs() < 1e-3);
        }
    }
}

#[test]
fn training_fit_is_within_reported_mse() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let budget = Budget::new(3, 2, 3);
    let contexts: Vec<_> = (0..30).map(|_| random_context(&mut rng, budget, false)).collect();
    let (model, report) = train_linear_ratfm(&contexts, 1.0).unwrap();
    assert!(training_mse(&model, &contexts) <= report.final_mse + 1e-9);
    assert_eq!(report.loss_curve.last(), Some(&report.final_mse));
    assert!(report.loss_curve[0] >= report.final_mse);

    let (single, single_report) = train_linear_ratfm(&contexts[..1], 1.0).unwrap();
    assert!(single.to_augmented().iter().flatten().all(|v| v.is_finite()));
    assert!(single_report.final_mse >= 0.0);
}

#[test]
fn unregularized_duplicates_are_singular() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let ctx = random_context(&mut rng, Budget::new(3, 1, 3), false);
    let dupes = vec![ctx.clone(), ctx.clone(), ctx];
    assert_eq!(
        train_linear_ratfm(&dupes, 0.0).unwrap_err(),
        ForecastError::SingularSystem
    );
    assert!(train_linear_ratfm(&dupes, 1e-3).is_ok());
    assert_eq!(
        train_linear_ratfm(&[], 1.0).unwrap_err(),
        ForecastError::EmptyTrainingSet
    );
    assert!(matches!(
        train_linear_ratfm(&dupes, -1.0),
        Err(ForecastError::InvalidRegularizer(_))
    ));
}

#[test]
fn model_survives_json_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let budget = Budget::new(3, 2, 3);
    let contexts: Vec<_> = (0..12).map(|_| random_context(&mut rng, budget, false)).collect();
    let (model, _) = train_linear_ratfm(&contexts, 0.1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    assert_eq!(LinearForecaster::load(&path).unwrap(), model);
}

#[test]
fn zero_shot_ignores_example_segments() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let naive = SeasonalNaive { period: 3 };
    for _ in 0..50 {
        let mut ctx = random_context(&mut rng, Budget::new(5, 4, 8), false);
        let before = naive.predict(&ctx).unwrap();
        for v in ctx.example_input.iter_mut().chain(ctx.example_future.iter_mut()) {
            *v = rng.gen_range(-1e3..1e3);
        }
        assert_eq!(naive.predict(&ctx).unwrap(), before);
    }
}

#[test]
fn seasonal_naive_continues_a_sine() {
    let p = 24;
    let series: Vec<f64> = (0..240).map(|t| (2.0 * PI * t as f64 / p as f64).sin()).collect();
    let target = window(series[..192].to_vec(), series[192..240].to_vec());
    let ctx = ContextWindow::zero_shot(&target);
    let pred = forecast(&SeasonalNaive { period: p }, &ctx).unwrap();
    let mse = pred
        .iter()
        .zip(&target.future)
        .map(|(a, b)| (a - b).powi(2))
        .sum::<f64>()
        / pred.len() as f64;
    assert!(mse < 1e-6);

    let zeros = ContextWindow::zero_shot(&window(vec![0.0; 10], vec![0.0; 4]));
    assert_eq!(forecast(&SeasonalNaive { period: 4 }, &zeros).unwrap(), vec![0.0; 4]);
}

#[test]
fn copy_needs_an_example() {
    let ctx = ContextWindow::zero_shot(&window(vec![1.0, 2.0], vec![3.0]));
    assert!(matches!(
        forecast(&ExampleCopy, &ctx),
        Err(ForecastError::ModeMismatch { .. })
    ));

    let example = window(vec![0.0, 0.0], vec![1.0, 2.0, 3.0]);
    let target = window(vec![5.0, 5.0], vec![1.0, 2.0, 3.0]);
    let ctx = assemble_context(&target, &example, Budget::new(2, 3, 2)).unwrap();
    assert_eq!(forecast(&ExampleCopy, &ctx).unwrap(), vec![1.0, 2.0, 3.0]);
}

#[test]
fn full_budget_concatenates_passthrough() {
    let budget = Budget::default();
    let example = window(vec![1.0; 512], vec![2.0; 96]);
    let target = window(vec![3.0; 512], vec![4.0; 96]);
    let ctx = assemble_context(&target, &example, budget).unwrap();
    assert_eq!(ctx.flatten().len(), 1120);
    assert_eq!(ctx.boundaries(), [512, 608, 1120]);

    let short = window(vec![1.0; 100], vec![2.0; 96]);
    assert!(matches!(
        assemble_context(&target, &short, budget),
        Err(ForecastError::BudgetExceedsAvailable { .. })
    ));
}
