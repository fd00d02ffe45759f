use std::fs;
use std::path::Path;

use w2s_core::em::{EmConfig, FittedMixture};
use w2s_core::harness::*;
use w2s_core::strategies::l2q_distance;
use w2s_core::{canonical_benchmark, CovariateLaw, ExpertParams, GatingParams, LatentConceptSystem};

fn quick_em() -> EmConfig {
    EmConfig { restarts: 2, max_iters: 200, tol: 1e-7, ..EmConfig::default() }
}

fn config(out: &Path, strategies: Vec<Strategy>, n_grid: Vec<usize>, replicates: usize) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(BUILTIN_CANONICAL, strategies, n_grid, out);
    cfg.replicates = replicates;
    cfg.base_seed = 17;
    cfg.mc_points = 500;
    cfg.em = quick_em();
    cfg
}

/// CSV text with the trailing wall-time column removed.
fn without_wall_time(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.rsplit_once(',').unwrap().0.to_string())
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn single_cell_gives_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), vec![Strategy::Identify], vec![400], 1)).unwrap();
    assert_eq!(report.rows.len(), 1);
    let rows = read_rows(dir.path().join(ROWS_FILE)).unwrap();
    assert_eq!(rows.len(), 1);
    let r = &rows[0];
    assert_eq!(r.status, RowStatus::Ok);
    assert_eq!((r.n_p, r.n_q, r.replicate), (400, 400, 0));
    assert_eq!(r.seed, cell_seed(17, Strategy::Identify, 400, 0));
    assert!(r.l2q_error.is_some() && r.param_error.is_some() && r.assignment_correct.is_some());
    let header = fs::read_to_string(dir.path().join(ROWS_FILE)).unwrap().lines().next().unwrap().to_string();
    assert_eq!(
        header,
        "schema_version,strategy,n_p,n_q,replicate,seed,status,param_error,l2q_error,l2q_se,\
         assignment_correct,reason,wall_time_ms"
    );
}

#[test]
fn reruns_are_byte_identical_and_independent_of_jobs() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let mut ca = config(a.path(), Strategy::ALL.to_vec(), vec![200, 400], 3);
    ca.jobs = Some(1);
    let mut cb = ca.clone();
    cb.out_dir = b.path().to_path_buf();
    cb.jobs = Some(4);
    let ra = run_experiment(&ca).unwrap();
    run_experiment(&cb).unwrap();
    assert_eq!(ra.rows.len(), 3 * 2 * 3);
    assert_eq!(without_wall_time(&a.path().join(ROWS_FILE)), without_wall_time(&b.path().join(ROWS_FILE)));
    for f in [AGGREGATES_FILE, SLOPES_FILE] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap());
    }
    for f in ["l2q_error.svg", "param_error.svg", "final_n.svg"] {
        assert_eq!(fs::read(a.path().join(f)).unwrap(), fs::read(b.path().join(f)).unwrap(), "{f}");
    }
    let order: Vec<(Strategy, usize, usize)> = ra.rows.iter().map(|r| (r.strategy, r.n_p, r.replicate)).collect();
    let mut sorted = order.clone();
    sorted.sort_by_key(|&(s, n, r)| (ca.strategies.iter().position(|t| *t == s), n, r));
    assert_eq!(order, sorted);
}

#[test]
fn adding_a_strategy_leaves_other_rows_unchanged() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let ra = run_experiment(&config(a.path(), vec![Strategy::WeakTrain], vec![300], 2)).unwrap();
    let rb = run_experiment(&config(b.path(), vec![Strategy::Identify, Strategy::WeakTrain], vec![300], 2)).unwrap();
    let strip = |r: &StrategyReport| StrategyReport { wall_time_ms: 0.0, ..r.clone() };
    let wb: Vec<StrategyReport> = rb.rows.iter().filter(|r| r.strategy == Strategy::WeakTrain).map(strip).collect();
    assert_eq!(ra.rows.iter().map(strip).collect::<Vec<_>>(), wb);
}

#[test]
fn failures_are_kept_as_rows() {
    let dir = tempfile::tempdir().unwrap();
    // 6 records cannot support a two-component fit; 400 can.
    let report =
        run_experiment(&config(dir.path(), vec![Strategy::Identify, Strategy::Refine], vec![6, 400], 2)).unwrap();
    assert_eq!(report.rows.len(), 8);
    let failed: Vec<&StrategyReport> = report.rows.iter().filter(|r| r.status == RowStatus::Failed).collect();
    assert_eq!(failed.len(), 4);
    assert!(failed.iter().all(|r| r.n_p == 6 && r.reason.as_deref().unwrap().contains("not enough data")));
    assert!(failed.iter().all(|r| r.l2q_error.is_none()));
    let agg = report.aggregate(Strategy::Identify, 6, "l2q_error").unwrap();
    assert_eq!((agg.n_ok, agg.n_failed, agg.median), (0, 2, None));
}

#[test]
fn emitted_aggregates_match_recomputation() {
    let dir = tempfile::tempdir().unwrap();
    run_experiment(&config(dir.path(), vec![Strategy::Identify, Strategy::WeakTrain], vec![200, 400, 800], 3)).unwrap();
    let rows = read_rows(dir.path().join(ROWS_FILE)).unwrap();
    let (agg, slopes) = summarize(&rows);
    let mut r = csv::Reader::from_path(dir.path().join(AGGREGATES_FILE)).unwrap();
    let emitted: Vec<Aggregate> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(emitted, agg);
    let mut r = csv::Reader::from_path(dir.path().join(SLOPES_FILE)).unwrap();
    let emitted: Vec<Slope> = r.deserialize().map(|x| x.unwrap()).collect();
    assert_eq!(emitted, slopes);

    let cell: Vec<f64> =
        rows.iter().filter(|r| r.strategy == Strategy::WeakTrain && r.n_p == 400).filter_map(|r| r.l2q_error).collect();
    let mut sorted = cell.clone();
    sorted.sort_by(f64::total_cmp);
    let a = agg.iter().find(|a| a.strategy == Strategy::WeakTrain && a.n_p == 400 && a.metric == "l2q_error").unwrap();
    assert_eq!(a.median, Some(sorted[1]));
    let slope = slopes.iter().find(|s| s.strategy == Strategy::Identify && s.metric == "l2q_error").unwrap();
    assert_eq!(slope.n_points, 3);
    assert!(slope.slope.is_some() && slope.slope_se.is_some());
}

#[test]
fn l2q_metric_examples() {
    let s = canonical_benchmark();
    let exact = metric_l2q(|x| s.target_regression(x).unwrap(), &s, 1000, 3).unwrap();
    assert!(exact.value.abs() < 1e-12 && exact.se == 0.0);
    let shifted = metric_l2q(|x| s.target_regression(x).unwrap() + 1.0, &s, 1000, 3).unwrap();
    assert!((shifted.value - 1.0).abs() < 1e-12);
    assert!(metric_l2q(|_| 0.0, &s, 99, 3).is_err());
}

#[test]
fn l2q_metric_matches_quadrature_swap_penalty() {
    let s = canonical_benchmark();
    // Target priors transported onto the wrong strong experts.
    let swapped = |x: &[f64]| {
        let b = &s.strong().beta;
        s.pi_q()[1] * b[0][0] * x[0] + s.pi_q()[0] * b[1][0] * x[0]
    };
    let oracle = l2q_distance(&s, swapped).unwrap();
    let mc = metric_l2q(swapped, &s, 200_000, 11).unwrap();
    assert!((mc.value - oracle).abs() < 4.0 * mc.se, "{} vs {oracle} (se {})", mc.value, mc.se);
    assert!(mc.se < 0.01 * oracle);
}

#[test]
fn param_error_examples() {
    let s = canonical_benchmark();
    let truth = FittedMixture::source_truth(&s);
    assert_eq!(metric_param_error(&truth, &s, ParamFamily::Source).unwrap(), 0.0);
    let swapped = truth.permuted(&[1, 0]).unwrap();
    assert_eq!(metric_param_error(&swapped, &s, ParamFamily::Source).unwrap(), 0.0);
    assert_eq!(align_to_truth(&swapped, &s, ParamFamily::Source).unwrap().0, vec![1, 0]);
    let mut nudged = truth.clone();
    nudged.strong.as_mut().unwrap()[1][0] += 0.1;
    assert!((metric_param_error(&nudged, &s, ParamFamily::Source).unwrap() - 0.1).abs() < 1e-12);
    let target = FittedMixture::target_truth(&s);
    assert_eq!(metric_param_error(&target, &s, ParamFamily::Target).unwrap(), 0.0);
    assert!(metric_param_error(&target, &s, ParamFamily::Source).unwrap() > 0.1);
}

#[test]
fn param_error_refuses_large_k() {
    let k = 9;
    let beta: Vec<Vec<f64>> = (0..k).map(|i| vec![i as f64]).collect();
    let e = ExpertParams::new(beta, 0.5).unwrap();
    let s = LatentConceptSystem::new(
        GatingParams::constant(k, 1),
        vec![1.0 / k as f64; k],
        vec![1.0 / k as f64; k],
        e.clone(),
        e.clone(),
        e,
        CovariateLaw::StandardNormal,
    )
    .unwrap();
    assert!(metric_param_error(&FittedMixture::source_truth(&s), &s, ParamFamily::Source).is_err());
}

#[test]
fn plots_need_rows_and_skip_single_point_slopes() {
    let dir = tempfile::tempdir().unwrap();
    let empty = ExperimentReport { rows: vec![], aggregates: vec![], slopes: vec![] };
    assert!(emit_plots(&empty, dir.path()).is_err());

    let report = run_experiment(&config(dir.path(), vec![Strategy::WeakTrain], vec![300], 1)).unwrap();
    let files = emit_plots(&report, dir.path()).unwrap();
    let names: Vec<String> = files.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
    assert_eq!(names, vec!["l2q_error.svg", "final_n.svg"]);
    let svg = fs::read_to_string(dir.path().join("l2q_error.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("weak_train") && !svg.contains("slope"));
}

#[test]
fn config_parsing_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("sys.toml"), canonical_benchmark().to_toml_string()).unwrap();
    let text = r#"
system = "sys.toml"
strategies = ["identify", "refine"]
n_grid = [100, 200]
replicates = 2
base_seed = 9
out_dir = "out"
metrics = ["l2q"]

[em]
restarts = 3
"#;
    fs::write(dir.path().join("sweep.toml"), text).unwrap();
    let cfg = ExperimentConfig::load(dir.path().join("sweep.toml")).unwrap();
    assert_eq!(cfg.system, dir.path().join("sys.toml"));
    assert_eq!(cfg.out_dir, dir.path().join("out"));
    assert_eq!(cfg.em.restarts, 3);
    assert_eq!(cfg.sizes(), vec![(100, 100), (200, 200)]);
    assert!(!cfg.wants(Metric::ParamError));
    assert_eq!(cfg.load_system().unwrap(), canonical_benchmark());
    assert_eq!(ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);

    for bad in [
        text.replace("[100, 200]", "[200, 100]"),
        text.replace("[100, 200]", "[]"),
        text.replace("replicates = 2", "replicates = 0"),
        text.replace("[\"identify\", \"refine\"]", "[]"),
        text.replace("\"refine\"", "\"magic\""),
        text.replace("metrics = [\"l2q\"]", "metrics = [\"l2q\"]\nmc_points = 10"),
        text.replace("base_seed", "seed_base"),
    ] {
        assert!(ExperimentConfig::from_toml_str(&bad).is_err(), "{bad}");
    }
}

#[test]
fn identification_rows_report_assignment() {
    let dir = tempfile::tempdir().unwrap();
    let report = run_experiment(&config(dir.path(), vec![Strategy::Identify], vec![2000], 4)).unwrap();
    assert!(report.rows.iter().all(|r| r.assignment_correct == Some(true)));
    assert!(report.rows.iter().all(|r| r.param_error.unwrap() < 0.2));
}
