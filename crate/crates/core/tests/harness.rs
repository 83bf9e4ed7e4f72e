use everywhere::attack::AttackConfig;
use everywhere::dataset::{generate_shapes, Dataset, ShapesConfig};
use everywhere::harness::{
    ablation_sweep, prepare_items, read_rows, run_coverage_study, run_transfer_eval, run_uap_eval, AblationParam,
    ReportFormat, TargetMode, TransferOptions, TransferRow, AVG_VICTIM, TRANSFER_COLUMNS,
};
use everywhere::losses::LossKind;
use everywhere::models::{argmax, build_architecture, Architecture, Model, ModelZoo, ZooEntry, ZooRole};
use everywhere::rng::RngState;

fn small_data(n: usize) -> Dataset {
    let cfg = ShapesConfig {
        size: 16,
        min_object: 5,
        max_object: 7,
        instances: (1, 2),
        ..ShapesConfig::default()
    };
    generate_shapes(n, &cfg, RngState(11)).unwrap()
}

/// A model whose logits ignore the input and always favour `class`.
fn constant(arch: Architecture, class: usize) -> Model {
    let mut m = build_architecture(arch, (3, 16, 16), 10, RngState(1)).unwrap();
    let mut params = m.params_mut();
    let (w, b) = params.last_mut().unwrap();
    w.fill(0.0);
    b.fill(0.0);
    b[class] = 1.0;
    m
}

fn entry(name: &str, role: ZooRole, model: Model) -> ZooEntry {
    ZooEntry {
        name: name.into(),
        role,
        model,
        test_accuracy: None,
    }
}

/// Untrained surrogate plus a victim that always predicts class 3.
fn rigged_zoo(data: &Dataset) -> ModelZoo {
    let sur = build_architecture(Architecture::Plain, (3, 16, 16), 10, RngState(4)).unwrap();
    ModelZoo::new(
        vec![
            entry("plain", ZooRole::Surrogate, sur),
            entry("wide", ZooRole::Victim, constant(Architecture::Wide, 3)),
        ],
        data.channel_stats(),
    )
    .unwrap()
}

fn quick_cfg() -> AttackConfig {
    AttackConfig {
        iterations: 3,
        partitions: 2,
        samples: 2,
        ..AttackConfig::default()
    }
}

#[test]
fn success_is_judged_by_the_victims_prediction() {
    let data = small_data(60);
    let zoo = rigged_zoo(&data);
    let opts = TransferOptions {
        losses: vec![LossKind::Ce],
        modes: vec![TargetMode::Random],
        images: 20,
    };
    let report = run_transfer_eval(&zoo, &data, &quick_cfg(), &opts, &mut |_| Ok(())).unwrap();
    let sur = &zoo.get("plain").unwrap().model;
    let items = prepare_items(sur, &data, &zoo.norm, TargetMode::Random, 20, 0).unwrap();
    let expected = items.iter().filter(|i| i.target == 3).count();
    for n in [0, 2] {
        let row = report.find("plain", "wide", "CE", n).unwrap();
        assert_eq!(row.successes, expected);
        assert_eq!(row.total, items.len());
        let avg = report.find("plain", AVG_VICTIM, "CE", n).unwrap();
        assert_eq!(avg.successes, expected);
    }
    for r in &report.rows {
        assert!(r.successes <= r.total);
        assert_eq!(r.rate, r.successes as f64 / r.total as f64);
    }
}

#[test]
fn reports_are_deterministic_and_roundtrip() {
    let data = small_data(30);
    let zoo = rigged_zoo(&data);
    let opts = TransferOptions {
        losses: vec![LossKind::Logit],
        modes: vec![TargetMode::LeastLikely],
        images: 6,
    };
    let run = || run_transfer_eval(&zoo, &data, &quick_cfg(), &opts, &mut |_| Ok(())).unwrap();
    let a = run();
    assert_eq!(a, run());
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("t.csv");
    everywhere::harness::emit_report(&a, ReportFormat::Csv, &p).unwrap();
    let back: Vec<TransferRow> = read_rows(ReportFormat::Csv, &p).unwrap();
    assert_eq!(back, a.rows);
    assert!(std::fs::read_to_string(&p).unwrap().starts_with(&TRANSFER_COLUMNS.join(",")));
}

#[test]
fn cells_are_observed_in_order() {
    let data = small_data(30);
    let zoo = rigged_zoo(&data);
    let opts = TransferOptions {
        losses: vec![LossKind::Ce, LossKind::Logit],
        modes: vec![TargetMode::Random],
        images: 4,
    };
    let mut seen = Vec::new();
    run_transfer_eval(&zoo, &data, &quick_cfg(), &opts, &mut |c| {
        assert_eq!(c.items.len(), c.outcomes.len());
        seen.push(format!("{}/{}/{}", c.surrogate, c.cfg.loss.kind, c.variant));
        Ok(())
    })
    .unwrap();
    assert_eq!(
        seen,
        ["plain/CE/baseline", "plain/CE/everywhere", "plain/Logit/baseline", "plain/Logit/everywhere"]
    );
}

#[test]
fn zero_budget_uap_gives_the_prior_rate() {
    let data = small_data(40);
    let zoo = rigged_zoo(&data);
    let cfg = AttackConfig {
        epsilon: 0.0,
        ..quick_cfg()
    };
    let targets = [0, 3, 7];
    let report = run_uap_eval(&zoo, &data, &targets, &cfg, 40, &mut |_, u| {
        assert_eq!(u.linf(), 0.0);
        Ok(())
    })
    .unwrap();
    assert_eq!(report.rows.len(), 1 * targets.len() * 2);
    let sur = &zoo.get("plain").unwrap().model;
    let clean: Vec<usize> = data
        .normalized(&zoo.norm)
        .unwrap()
        .iter()
        .map(|i| argmax(&sur.forward(i.data()).unwrap()))
        .collect();
    for r in &report.rows {
        let prior = clean.iter().filter(|&&p| p == r.target).count();
        assert_eq!(r.successes, prior, "target {}", r.target);
    }
}

#[test]
fn ablation_skips_invalid_settings_and_anchors_at_baseline() {
    let data = small_data(30);
    let zoo = rigged_zoo(&data);
    let cfg = quick_cfg();
    let report = ablation_sweep(&zoo, &data, &cfg, AblationParam::Samples, &[0, 1, 5], TargetMode::Random, 5).unwrap();
    assert_eq!(report.curve("plain").iter().map(|p| p.value).collect::<Vec<_>>(), [0, 1]);
    assert_eq!(report.skipped.len(), 1);
    let opts = TransferOptions {
        losses: vec![cfg.loss.kind],
        modes: vec![TargetMode::Random],
        images: 5,
    };
    let t = run_transfer_eval(&zoo, &data, &cfg, &opts, &mut |_| Ok(())).unwrap();
    let base = t.find("plain", AVG_VICTIM, &cfg.loss.kind.to_string(), 0).unwrap().rate;
    assert_eq!(report.rate("plain", 0), Some(base));
}

#[test]
fn coverage_against_itself_is_full() {
    let data = small_data(30);
    let zoo = rigged_zoo(&data);
    let rows = run_coverage_study(&zoo, "plain", &data, &quick_cfg(), 5, 2.0 / 3.0).unwrap();
    for r in rows.iter().filter(|r| r.victim == "plain") {
        assert_eq!(r.mean_c, 1.0);
    }
    assert_eq!(rows.len(), 4);
    assert!(run_coverage_study(&zoo, "nope", &data, &quick_cfg(), 5, 0.5).is_err());
}
