use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::sync::Mutex;

use ratad::dataset::{standardize, LabeledSeries, Region, Span};
use ratad::harness::{
    emit_reports, load_dataset, load_dir, run_prepared, run_setting, similarity_diagnostics, sweep_pool_fraction,
    write_sweep_csv, Dataset, ExperimentConfig, HarnessError, NoopObserver, PipelineObserver, Prepared, Setting, Stage,
};
use ratad::retrieval::{CandidatePool, LagMode, PreparedPool};
use ratad::synth::{generate_synthetic, write_dataset, AnomalyKind, SynthSpec};
use ratad::{dataset::make_windows, Budget};

fn small_spec() -> SynthSpec {
    SynthSpec {
        domains: 2,
        series_per_domain: 3,
        series_len: 640,
        train_len: 320,
        period_range: (12, 16),
        anomaly_len: (5, 15),
        seed: 3,
        ..SynthSpec::default()
    }
}

fn small_config() -> ExperimentConfig {
    ExperimentConfig {
        synth: Some(small_spec()),
        budget: Budget::new(32, 16, 32),
        pool_stride: 2,
        ridge_train_stride: 4,
        bootstrap_iterations: 50,
        ..ExperimentConfig::default()
    }
}

fn prepare(config: &ExperimentConfig) -> Prepared {
    Prepared::new(config, load_dataset(config).unwrap()).unwrap()
}

#[derive(Default)]
struct Recorder(Mutex<Vec<(String, Stage)>>);

impl PipelineObserver for Recorder {
    fn stage(&self, series_id: &str, stage: Stage) {
        self.0.lock().unwrap().push((series_id.to_owned(), stage));
    }
}

#[test]
fn stages_run_in_pipeline_order() {
    let prepared = prepare(&small_config());
    for setting in Setting::ALL {
        let recorder = Recorder::default();
        run_prepared(&prepared, setting, &recorder).unwrap();
        let mut per_series: BTreeMap<String, Vec<Stage>> = BTreeMap::new();
        for (id, stage) in recorder.0.into_inner().unwrap() {
            per_series.entry(id).or_default().push(stage);
        }
        assert_eq!(per_series.len(), prepared.series.len());
        for (id, stages) in per_series {
            let tail = &stages[stages.len() - 3..];
            assert_eq!(
                tail,
                [Stage::Smooth, Stage::Threshold, Stage::Metrics],
                "{setting} {id}"
            );
            let windows = &stages[..stages.len() - 3];
            let cycle: &[Stage] = if setting.uses_retrieval() {
                &[Stage::Retrieve, Stage::Assemble, Stage::Forecast, Stage::Score]
            } else {
                &[Stage::Forecast, Stage::Score]
            };
            assert!(!windows.is_empty() && windows.len() % cycle.len() == 0);
            assert!(windows.chunks(cycle.len()).all(|c| c == cycle), "{setting} {id}");
        }
    }
}

#[test]
fn sma_off_skips_smoothing_stage() {
    let config = ExperimentConfig {
        sma: false,
        ..small_config()
    };
    let recorder = Recorder::default();
    let out = run_prepared(&prepare(&config), Setting::RatfmCopy, &recorder).unwrap();
    assert!(recorder
        .0
        .into_inner()
        .unwrap()
        .iter()
        .all(|(_, s)| *s != Stage::Smooth));
    for rows in out.scores.values() {
        assert!(rows.iter().all(|r| r.raw_score == r.smoothed_score));
    }
}

/// Two series built from the same periodic lookup table, so every target
/// window has bit-identical examples in the other series' training region.
fn duplicate_dataset() -> Dataset {
    let period = 8;
    let table: Vec<f64> = (0..period)
        .map(|i| {
            let phase = 2.0 * PI * i as f64 / period as f64;
            phase.sin() + 0.3 * (2.0 * phase + 1.0).sin()
        })
        .collect();
    let make = |id: &str, at: usize| {
        let mut values: Vec<f64> = (0..640).map(|t| table[t % period]).collect();
        for v in &mut values[at..at + 3] {
            *v += 1.0;
        }
        LabeledSeries::new(id, "d", values, 320, vec![Span::new(at, at + 2)], "").unwrap()
    };
    Dataset {
        series: vec![make("a", 470), make("b", 530)],
        ..Dataset::default()
    }
}

#[test]
fn exact_duplicates_score_zero_outside_anomalies() {
    let config = ExperimentConfig {
        pool_stride: 1,
        ..small_config()
    };
    let prepared = Prepared::new(&config, duplicate_dataset()).unwrap();
    let out = run_prepared(&prepared, Setting::RatfmCopy, &NoopObserver).unwrap();
    assert_eq!(out.report.per_series.len(), 2);
    for series in &prepared.series {
        let span = series.series.anomaly_spans[0];
        let rows = &out.scores[&series.series.id];
        let mut hit = false;
        for row in rows {
            if span.contains(row.t_absolute) {
                hit |= row.raw_score > 0.0;
            } else {
                assert_eq!(row.raw_score, 0.0, "{} at {}", series.series.id, row.t_absolute);
            }
        }
        assert!(hit);
    }

    // The period divides the gap between the aligned segment and the future.
    let diag = similarity_diagnostics(&prepared).unwrap();
    assert!(diag.global.windows > 0);
    assert!((diag.global.example_future - 1.0).abs() < 1e-9);
    assert!((diag.global.aligned_segment - diag.global.example_future).abs() < 1e-9);
}

#[test]
fn empty_directory_gives_empty_report_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("domain")).unwrap();
    let config = ExperimentConfig {
        data_root: Some(dir.path().to_path_buf()),
        ..ExperimentConfig::default()
    };
    let report = run_setting(&config, Setting::ZeroShotNaive).unwrap();
    assert_eq!(report.global.series, 0);
    assert!(report.per_series.is_empty());
    assert!(report.warnings.iter().any(|w| w.contains("no series")));

    let missing = ExperimentConfig {
        data_root: Some(dir.path().join("nope")),
        ..ExperimentConfig::default()
    };
    assert!(matches!(
        run_setting(&missing, Setting::RatfmCopy),
        Err(HarnessError::Dataset(_))
    ));
}

#[test]
fn bad_files_are_skipped_not_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let series = generate_synthetic(&small_spec()).unwrap();
    write_dataset(&series[..3], dir.path()).unwrap();
    fs::write(dir.path().join("domain00").join("broken_10_20_30.txt"), "1 2 abc\n").unwrap();
    let dataset = load_dir(dir.path()).unwrap();
    assert_eq!(dataset.series.len(), 3);
    assert_eq!(dataset.skipped.len(), 1);
    assert!(dataset.skipped[0].reason.contains("abc"));
}

#[test]
fn sweep_has_one_row_per_fraction_and_domain() {
    let prepared = prepare(&small_config());
    let fractions = [1.0, 0.75, 0.5, 0.25];
    let rows = sweep_pool_fraction(&prepared, Setting::RatfmCopy, &fractions).unwrap();
    assert_eq!(rows.len(), 8);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("sweep.csv");
    write_sweep_csv(&rows, &path).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 9);
    assert!(text.starts_with("fraction,domain,series,vus_roc,vus_pr\n"));

    let full = run_prepared(&prepared, Setting::RatfmCopy, &NoopObserver)
        .unwrap()
        .report;
    for row in rows.iter().filter(|r| r.fraction == 1.0) {
        let agg = &full.per_domain[&row.domain];
        assert_eq!(
            (row.vus_roc, row.vus_pr, row.series),
            (agg.mean.vus_roc, agg.mean.vus_pr, agg.series)
        );
    }
    assert!(sweep_pool_fraction(&prepared, Setting::ZeroShotNaive, &fractions).is_err());
    assert!(sweep_pool_fraction(&prepared, Setting::RatfmCopy, &[0.0]).is_err());
}

#[test]
fn best_segment_never_below_aligned_segment() {
    for mode in [LagMode::ZeroLagOnly, LagMode::MaxOverLags] {
        let config = ExperimentConfig {
            diagnostics_lag_mode: mode,
            diagnostics_skip_anomalous: false,
            ..small_config()
        };
        let diag = similarity_diagnostics(&prepare(&config)).unwrap();
        assert_eq!(diag.per_domain.len(), 2);
        for means in diag.per_domain.values().chain([&diag.global]) {
            assert!(means.best_segment >= means.aligned_segment - 1e-12);
            for v in [means.example_future, means.aligned_segment, means.best_segment] {
                assert!((-1.0..=1.0).contains(&v));
            }
        }
    }
}

#[test]
fn emitted_reports_are_stable_and_complete() {
    let config = small_config();
    let out = run_prepared(&prepare(&config), Setting::RatfmLinear, &NoopObserver).unwrap();
    let root = tempfile::tempdir().unwrap();
    let dir = root.path().join("nested").join("out");
    emit_reports(&out, &config, &dir).unwrap();
    let first = fs::read(dir.join("report.json")).unwrap();
    emit_reports(&out, &config, &dir).unwrap();
    assert_eq!(fs::read(dir.join("report.json")).unwrap(), first);

    let csv = fs::read_to_string(dir.join("per_series.csv")).unwrap();
    assert_eq!(csv.lines().count(), out.report.per_series.len() + 1);
    assert_eq!(
        fs::read_dir(dir.join("scores")).unwrap().count(),
        out.report.per_series.len()
    );
    assert!(dir.join("training.json").is_file());
    let snapshot = fs::read_to_string(dir.join("config.json")).unwrap();
    assert_eq!(ExperimentConfig::from_json(&snapshot).unwrap(), config);
}

#[test]
fn worker_count_does_not_change_results() {
    let reports: Vec<String> = [None, Some(1), Some(3)]
        .into_iter()
        .map(|workers| {
            let config = ExperimentConfig {
                workers,
                ..small_config()
            };
            run_prepared(&prepare(&config), Setting::RatfmLinear, &NoopObserver)
                .unwrap()
                .report
                .to_json()
        })
        .collect();
    assert!(reports.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn synthetic_domains_share_retrievable_shapes() {
    let spec = SynthSpec {
        noise_std: 0.01,
        ..small_spec()
    };
    let series: Vec<LabeledSeries> = generate_synthetic(&spec)
        .unwrap()
        .iter()
        .map(|s| standardize(s).unwrap().0)
        .collect();
    let (len, h) = (32, 16);
    for target in &series {
        let entries = series
            .iter()
            .filter(|s| s.domain == target.domain && s.id != target.id)
            .flat_map(|s| make_windows(s, Region::Train, len, h, 1).unwrap().windows)
            .collect();
        let pool = PreparedPool::new(CandidatePool::new(target.domain.clone(), entries), LagMode::MaxOverLags).unwrap();
        let query = &make_windows(target, Region::Train, len, h, 50).unwrap().windows[2];
        let (_, sim) = pool.retrieve(query).unwrap();
        assert!(sim.score > 0.9, "{} best match {}", target.id, sim.score);
    }
}

#[test]
fn synthetic_spans_follow_the_spec() {
    let spec = SynthSpec {
        anomaly_len: (5, 5),
        anomaly_kinds: vec![AnomalyKind::Spike],
        ..small_spec()
    };
    let series = generate_synthetic(&spec).unwrap();
    assert_eq!(series.len(), 6);
    for s in &series {
        assert_eq!(s.anomaly_spans.len(), 1);
        assert_eq!(s.anomaly_spans[0].len(), 5);
        assert!(s.anomaly_spans[0].start >= s.train_end);
    }
    assert_eq!(generate_synthetic(&spec).unwrap(), series);
}

#[test]
fn invalid_configs_are_rejected() {
    let mut config = small_config();
    config.pool_fraction = 0.0;
    assert!(matches!(config.validate(), Err(HarnessError::Config(_))));
    let mut config = small_config();
    config.eval_stride = Some(17);
    assert!(config.validate().is_err());
    assert!(ExperimentConfig::from_json("{\"budget\": 3}").is_err());
    let parsed = ExperimentConfig::from_json("{\"seed\": 9}").unwrap();
    assert_eq!(parsed.seed, 9);
    assert_eq!(parsed.budget, Budget::default());
}
