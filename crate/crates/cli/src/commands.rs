//! Subcommand implementations. Each one resolves and validates its whole
//! configuration before touching the filesystem.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use everywhere::attack::AttackConfig;
use everywhere::attention::{CoverageRow, DEFAULT_THRESHOLD};
use everywhere::dataset::{generate_shapes, Dataset, ShapesConfig};
use everywhere::harness::{
    self, ablation_sweep, audit_manifest, emit_report, emit_rows, run_coverage_study, run_transfer_eval,
    run_uap_eval, with_jobs, AblationParam, EvalItem, ManifestEntry, Percent, ReportFormat, RunManifest,
    TargetMode, TransferOptions, ABLATION_COLUMNS, COVERAGE_COLUMNS, CURVE_COLUMNS, UAP_COLUMNS,
};
use everywhere::imagekit::io::{read_tensor, write_png, write_tensor};
use everywhere::imagekit::{normalize, Perturbation};
use everywhere::losses::LossKind;
use everywhere::models::{
    build_architecture, evaluate_accuracy, train_model, Architecture, ModelZoo, TrainConfig, ZooEntry, ZooRole,
    ZOO_MANIFEST,
};
use everywhere::rng::RngState;
use serde::{Deserialize, Serialize};

use crate::settings::{hash_settings, Settings};
use crate::{AttackFlags, Cli, CliError, Command};

type Flags = Vec<(&'static str, Option<String>)>;

fn opt<T: ToString>(v: &Option<T>) -> Option<String> {
    v.as_ref().map(ToString::to_string)
}

fn opt_path(v: &Option<PathBuf>) -> Option<String> {
    v.as_ref().map(|p| p.display().to_string())
}

fn attack_flags(a: &AttackFlags) -> Flags {
    vec![
        ("epsilon", opt(&a.epsilon)),
        ("alpha", opt(&a.alpha)),
        ("iterations", opt(&a.iterations)),
        ("partitions", opt(&a.partitions)),
        ("samples", opt(&a.samples)),
        ("loss", a.loss.clone()),
        ("seed", opt(&a.seed)),
    ]
}

pub fn dispatch(cli: Cli) -> Result<(), CliError> {
    let mut flags: Flags = vec![("jobs", opt(&cli.jobs)), ("out", opt_path(&cli.out))];
    let name = match &cli.command {
        Command::GenData(a) => {
            flags.extend([("count", opt(&a.count)), ("seed", opt(&a.seed))]);
            "gen-data"
        }
        Command::Train(a) => {
            flags.extend([
                ("data", opt_path(&a.data)),
                ("test_data", opt_path(&a.test_data)),
                ("archs", a.archs.clone()),
                ("epochs", opt(&a.epochs)),
                ("learning_rate", opt(&a.learning_rate)),
                ("batch_size", opt(&a.batch_size)),
                ("seed", opt(&a.seed)),
            ]);
            "train"
        }
        Command::Attack(a) => {
            flags.extend([
                ("zoo", opt_path(&a.zoo)),
                ("data", opt_path(&a.data)),
                ("surrogate", a.surrogate.clone()),
                ("images", opt(&a.images)),
                ("mode", a.mode.clone()),
            ]);
            flags.extend(attack_flags(&a.attack));
            "attack"
        }
        Command::Eval(a) => {
            flags.extend([
                ("zoo", opt_path(&a.zoo)),
                ("data", opt_path(&a.data)),
                ("losses", a.losses.clone()),
                ("modes", a.modes.clone()),
                ("images", opt(&a.images)),
                ("format", a.format.clone()),
                ("save_examples", a.save_examples.then(|| "true".to_string())),
            ]);
            flags.extend(attack_flags(&a.attack));
            "eval"
        }
        Command::Dtuap(a) => {
            flags.extend([
                ("zoo", opt_path(&a.zoo)),
                ("data", opt_path(&a.data)),
                ("targets", a.targets.clone()),
                ("images", opt(&a.images)),
                ("format", a.format.clone()),
            ]);
            flags.extend(attack_flags(&a.attack));
            "dtuap"
        }
        Command::Ablate(a) => {
            flags.extend([
                ("zoo", opt_path(&a.zoo)),
                ("data", opt_path(&a.data)),
                ("param", a.param.clone()),
                ("values", a.values.clone()),
                ("mode", a.mode.clone()),
                ("images", opt(&a.images)),
                ("format", a.format.clone()),
            ]);
            flags.extend(attack_flags(&a.attack));
            "ablate"
        }
        Command::Coverage(a) => {
            flags.extend([
                ("zoo", opt_path(&a.zoo)),
                ("data", opt_path(&a.data)),
                ("surrogate", a.surrogate.clone()),
                ("images", opt(&a.images)),
                ("threshold", opt(&a.threshold)),
                ("format", a.format.clone()),
            ]);
            flags.extend(attack_flags(&a.attack));
            "coverage"
        }
        Command::Audit(a) => return cmd_audit(&a.paths),
    };
    let settings = Settings::resolve(cli.config.as_deref(), &cli.set, flags)?;
    let jobs: usize = settings.get("jobs", 0)?;
    // Attack keys are checked even where unused, so typos surface early.
    settings.attack_config()?;
    let job: Box<dyn FnOnce() -> Result<(), CliError> + Send> = match name {
        "gen-data" => plan_gen_data(&settings)?,
        "train" => plan_train(&settings)?,
        "attack" => plan_attack(&settings)?,
        "eval" => plan_eval(&settings)?,
        "dtuap" => plan_dtuap(&settings)?,
        "ablate" => plan_ablate(&settings)?,
        "coverage" => plan_coverage(&settings)?,
        _ => unreachable!("all subcommands are listed"),
    };
    with_jobs(jobs, job)?
}

/// Provenance written next to every output.
#[derive(Debug, Serialize)]
struct RunRecord<'a> {
    command: &'a str,
    config_hash: String,
    seed: u64,
    settings: BTreeMap<String, String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    notes: Option<Vec<String>>,
}

impl<'a> RunRecord<'a> {
    fn new(command: &'a str, settings: &Settings, attack: Option<&AttackConfig>, seed: u64) -> Self {
        let canonical = settings.canonical(attack);
        RunRecord {
            command,
            config_hash: hash_settings(command, &canonical),
            seed,
            settings: canonical,
            notes: None,
        }
    }

    fn write(&self, dir: &Path) -> Result<(), CliError> {
        write_json(&dir.join("run.json"), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(value).map_err(CliError::runtime)?;
    fs::write(path, text + "\n").map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::runtime(format!("{}: {e}", dir.display())))
}

fn load_dataset(settings: &Settings, key: &str) -> Result<Dataset, CliError> {
    let dir = settings.required_path(key)?;
    if !dir.join("meta.json").is_file() {
        return Err(CliError::config(format!("{key}: no dataset at {}", dir.display())));
    }
    Dataset::load(&dir).map_err(|e| CliError::config(format!("{key}: {e}")))
}

fn load_zoo(settings: &Settings, data: &Dataset) -> Result<ModelZoo, CliError> {
    let dir = settings.required_path("zoo")?;
    if !dir.join(ZOO_MANIFEST).is_file() {
        return Err(CliError::config(format!("zoo: no {ZOO_MANIFEST} in {}", dir.display())));
    }
    let zoo = ModelZoo::load(&dir).map_err(|e| CliError::config(format!("zoo: {e}")))?;
    for e in &zoo.entries {
        if e.model.input_dim != data.dim() || e.model.classes != data.classes {
            return Err(CliError::config(format!(
                "model {} expects {:?} with {} classes, dataset has {:?} with {}",
                e.name,
                e.model.input_dim,
                e.model.classes,
                data.dim(),
                data.classes
            )));
        }
    }
    Ok(zoo)
}

fn format_of(settings: &Settings) -> Result<(ReportFormat, &'static str), CliError> {
    let f: ReportFormat = settings
        .raw("format")
        .unwrap_or("csv")
        .parse()
        .map_err(CliError::config)?;
    Ok((f, if f == ReportFormat::Csv { "csv" } else { "json" }))
}

fn surrogate_of(settings: &Settings, zoo: &ModelZoo) -> Result<String, CliError> {
    let name = match settings.raw("surrogate") {
        Some(s) => s.to_string(),
        None => zoo
            .surrogates()
            .next()
            .map(|e| e.name.clone())
            .ok_or_else(|| CliError::config("zoo has no surrogate"))?,
    };
    if zoo.get(&name).is_none() {
        return Err(CliError::config(format!(
            "unknown surrogate {name:?}; zoo has {}",
            zoo.names().join(", ")
        )));
    }
    Ok(name)
}

fn parse_with<T, E: std::fmt::Display>(v: Result<T, E>) -> Result<T, CliError> {
    v.map_err(CliError::config)
}

type Job = Box<dyn FnOnce() -> Result<(), CliError> + Send>;

fn plan_gen_data(settings: &Settings) -> Result<Job, CliError> {
    let count: usize = settings.get("count", 1000)?;
    let seed: u64 = settings.get("seed", 0)?;
    if count == 0 {
        return Err(CliError::config("count must be positive"));
    }
    let out = settings.out_dir("data");
    let record = RunRecord::new("gen-data", settings, None, seed);
    Ok(Box::new(move || {
        let ds = generate_shapes(count, &ShapesConfig::default(), RngState(seed))?;
        ds.save(&out)?;
        record.write(&out)?;
        println!("wrote {count} images to {}", out.display());
        Ok(())
    }))
}

#[derive(Debug, Serialize)]
struct TrainSummary {
    config_hash: String,
    seed: u64,
    models: Vec<TrainedModel>,
}

#[derive(Debug, Serialize)]
struct TrainedModel {
    name: String,
    test_accuracy: Option<f64>,
    epoch_losses: Vec<f64>,
}

fn plan_train(settings: &Settings) -> Result<Job, CliError> {
    let data = load_dataset(settings, "data")?;
    let test = match settings.raw("test_data") {
        Some(_) => Some(load_dataset(settings, "test_data")?),
        None => None,
    };
    let archs: Vec<Architecture> = settings.list("archs", "plain,residual,wide")?;
    let defaults = TrainConfig::default();
    let seed: u64 = settings.get("seed", defaults.seed)?;
    let tc = TrainConfig {
        epochs: settings.get("epochs", defaults.epochs)?,
        batch_size: settings.get("batch_size", defaults.batch_size)?,
        learning_rate: settings.get("learning_rate", defaults.learning_rate)?,
        seed,
    };
    tc.validate().map_err(CliError::config)?;
    if let Some(t) = &test {
        if t.dim() != data.dim() || t.classes != data.classes {
            return Err(CliError::config("test_data does not match the training data's shape"));
        }
    }
    let out = settings.out_dir("zoo");
    let record = RunRecord::new("train", settings, None, seed);
    Ok(Box::new(move || {
        let norm = data.channel_stats();
        let mut entries = Vec::new();
        let mut models = Vec::new();
        for (i, arch) in archs.iter().enumerate() {
            let init = build_architecture(*arch, data.dim(), data.classes, RngState(seed).fork(0x11, i as u64))?;
            let (model, report) = train_model(init, &data, &norm, &tc)?;
            let acc = match &test {
                Some(t) => Some(evaluate_accuracy(&model, t, &norm)?),
                None => None,
            };
            match acc {
                Some(a) => println!("{arch}: test accuracy {}", Percent(a)),
                None => println!("{arch}: final loss {:.4}", report.final_loss),
            }
            models.push(TrainedModel {
                name: arch.to_string(),
                test_accuracy: acc,
                epoch_losses: report.epoch_losses,
            });
            entries.push(ZooEntry {
                name: arch.to_string(),
                role: ZooRole::Surrogate,
                model,
                test_accuracy: acc,
            });
        }
        let zoo = ModelZoo::new(entries, norm)?;
        zoo.save(&out)?;
        record.write(&out)?;
        write_json(
            &out.join("train_report.json"),
            &TrainSummary {
                config_hash: record.config_hash.clone(),
                seed,
                models,
            },
        )?;
        Ok(())
    }))
}

/// Writes clean and adversarial PNGs plus an audit manifest into `dir`.
fn save_examples(
    dir: &Path,
    surrogate: &ZooEntry,
    items: &[EvalItem],
    outcomes: &[everywhere::attack::AttackOutcome],
    data: &Dataset,
    cfg: &AttackConfig,
    config_hash: &str,
    norm: &everywhere::imagekit::NormalizationSpec,
) -> Result<RunManifest, CliError> {
    create_dir(dir)?;
    let mut images = Vec::with_capacity(items.len());
    for (it, out) in items.iter().zip(outcomes) {
        let source = format!("clean_{:05}.png", it.index);
        let output = format!("adv_{:05}.png", it.index);
        write_png(&dir.join(&source), &data.images[it.index])?;
        let raw = out.adversarial.to_raw().mapv(|v| v.round().clamp(0.0, 255.0));
        write_png(&dir.join(&output), &raw)?;
        let saved = normalize(&raw, norm)?;
        images.push(ManifestEntry {
            index: it.index,
            source,
            output,
            original: it.original,
            target: it.target,
            surrogate_success: surrogate.model.predict(saved.data())? == it.target,
        });
    }
    let manifest = RunManifest {
        surrogate: surrogate.name.clone(),
        seed: cfg.seed,
        config_hash: config_hash.to_string(),
        epsilon: cfg.epsilon,
        images,
    };
    write_json(&dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

fn plan_attack(settings: &Settings) -> Result<Job, CliError> {
    let cfg = settings.attack_config()?;
    let data = load_dataset(settings, "data")?;
    let zoo = load_zoo(settings, &data)?;
    let surrogate = surrogate_of(settings, &zoo)?;
    let mode: TargetMode = parse_with(settings.raw("mode").unwrap_or("random").parse())?;
    let requested: usize = settings.get("images", 0)?;
    let n = if requested == 0 { data.len() } else { requested.min(data.len()) };
    let out = settings.out_dir("attack");
    let record = RunRecord::new("attack", settings, Some(&cfg), cfg.seed);
    Ok(Box::new(move || {
        let sur = zoo.get(&surrogate).expect("validated surrogate");
        let mut items = Vec::with_capacity(n);
        for index in 0..n {
            let image = normalize(&data.images[index], &zoo.norm)?;
            let logits = sur.model.forward(image.data())?;
            let original = data.labels[index];
            let target = harness::select_target(mode, &logits, original, RngState(cfg.seed).fork(0x7a, index as u64))?;
            items.push(EvalItem {
                index,
                image,
                original,
                target,
            });
        }
        let outcomes = harness::craft_items(&sur.model, &items, &cfg)?;
        let m = save_examples(&out, sur, &items, &outcomes, &data, &cfg, &record.config_hash, &zoo.norm)?;
        record.write(&out)?;
        let hits = m.images.iter().filter(|e| e.surrogate_success).count();
        println!(
            "{}: {hits}/{} targeted successes on the surrogate ({}), config {}",
            sur.name,
            m.images.len(),
            Percent(hits as f64 / m.images.len().max(1) as f64),
            &record.config_hash[..12]
        );
        Ok(())
    }))
}

fn plan_eval(settings: &Settings) -> Result<Job, CliError> {
    let cfg = settings.attack_config()?;
    let data = load_dataset(settings, "data")?;
    let zoo = load_zoo(settings, &data)?;
    let opts = TransferOptions {
        losses: settings.list::<LossKind>("losses", "CE,Logit")?,
        modes: settings.list::<TargetMode>("modes", "random")?,
        images: settings.get("images", 200)?,
    };
    if opts.losses.is_empty() || opts.modes.is_empty() || opts.images == 0 {
        return Err(CliError::config("losses, modes and images must be non-empty"));
    }
    let save: bool = settings.get("save_examples", false)?;
    let (format, ext) = format_of(settings)?;
    let out = settings.out_dir("eval");
    let record = RunRecord::new("eval", settings, Some(&cfg), cfg.seed);
    Ok(Box::new(move || {
        create_dir(&out)?;
        record.write(&out)?;
        let path = out.join(format!("transfer.{ext}"));
        let report = run_transfer_eval(&zoo, &data, &cfg, &opts, &mut |cell| {
            emit_report(cell.report, format, &path)?;
            if save {
                let sur = zoo.get(cell.surrogate).expect("zoo surrogate");
                let dir = out.join("examples").join(format!(
                    "{}_{}_{}_{}",
                    cell.surrogate, cell.mode, cell.cfg.loss.kind, cell.variant
                ));
                save_examples(&dir, sur, cell.items, cell.outcomes, &data, cell.cfg, &record.config_hash, &zoo.norm)
                    .map_err(|e| everywhere::Error::InvalidArgument(e.message))?;
            }
            Ok(())
        })?;
        emit_report(&report, format, &path)?;
        print!("{}", harness::summarize_transfer(&report));
        println!("wrote {} (config {})", path.display(), &record.config_hash[..12]);
        Ok(())
    }))
}

/// Manifest for a directory of saved universal perturbations.
#[derive(Debug, Serialize, Deserialize)]
struct UapManifest {
    kind: String,
    epsilon: f64,
    seed: u64,
    config_hash: String,
    files: Vec<String>,
}

fn plan_dtuap(settings: &Settings) -> Result<Job, CliError> {
    let cfg = settings.attack_config()?;
    let data = load_dataset(settings, "data")?;
    let zoo = load_zoo(settings, &data)?;
    let targets: Vec<usize> = match settings.raw("targets").unwrap_or("all") {
        "all" => (0..data.classes).collect(),
        _ => settings.list("targets", "")?,
    };
    if targets.is_empty() || targets.iter().any(|&t| t >= data.classes) {
        return Err(CliError::config(format!("targets must be classes below {}", data.classes)));
    }
    let images: usize = settings.get("images", 200)?;
    let (format, ext) = format_of(settings)?;
    let out = settings.out_dir("dtuap");
    let record = RunRecord::new("dtuap", settings, Some(&cfg), cfg.seed);
    Ok(Box::new(move || {
        let uap_dir = out.join("uaps");
        create_dir(&uap_dir)?;
        record.write(&out)?;
        let mut files = Vec::new();
        let report = run_uap_eval(&zoo, &data, &targets, &cfg, images, &mut |row, uap: &Perturbation| {
            let file = format!("{}_{}_t{}.f32", row.surrogate, row.attack, row.target);
            write_tensor(&uap_dir.join(&file), &uap.delta.mapv(|v| v * 255.0).into_dyn())?;
            files.push(file);
            Ok(())
        })?;
        write_json(
            &uap_dir.join("manifest.json"),
            &UapManifest {
                kind: "uap".into(),
                epsilon: cfg.epsilon,
                seed: cfg.seed,
                config_hash: record.config_hash.clone(),
                files,
            },
        )?;
        let path = out.join(format!("uap.{ext}"));
        emit_rows(&report.rows, UAP_COLUMNS, format, &path)?;
        for sur in zoo.surrogates() {
            let line: Vec<String> = [0, cfg.samples]
                .iter()
                .filter_map(|&n| report.mean_rate(&sur.name, n).map(|r| format!("N={n}: {}", Percent(r))))
                .collect();
            println!("{}: {}", sur.name, line.join("  "));
        }
        println!("wrote {} (config {})", path.display(), &record.config_hash[..12]);
        Ok(())
    }))
}

fn plan_ablate(settings: &Settings) -> Result<Job, CliError> {
    let cfg = settings.attack_config()?;
    let data = load_dataset(settings, "data")?;
    let zoo = load_zoo(settings, &data)?;
    let param = match settings.raw("param").unwrap_or("samples") {
        "samples" | "N" => AblationParam::Samples,
        "partitions" | "M" => AblationParam::Partitions,
        other => return Err(CliError::config(format!("param must be samples or partitions, got {other:?}"))),
    };
    let default_values = match param {
        AblationParam::Samples => "0,1,3,9",
        AblationParam::Partitions => "2,4",
    };
    let values: Vec<usize> = settings.list("values", default_values)?;
    if values.is_empty() {
        return Err(CliError::config("values must not be empty"));
    }
    let mode: TargetMode = parse_with(settings.raw("mode").unwrap_or("random").parse())?;
    let images: usize = settings.get("images", 200)?;
    let (format, ext) = format_of(settings)?;
    let out = settings.out_dir("ablate");
    let mut record = RunRecord::new("ablate", settings, Some(&cfg), cfg.seed);
    Ok(Box::new(move || {
        create_dir(&out)?;
        let report = ablation_sweep(&zoo, &data, &cfg, param, &values, mode, images)?;
        emit_rows(&report.points, ABLATION_COLUMNS, format, &out.join(format!("ablation.{ext}")))?;
        for sur in zoo.surrogates() {
            let curve = report.curve(&sur.name);
            emit_rows(&curve, CURVE_COLUMNS, ReportFormat::Csv, &out.join(format!("curve_{}.csv", sur.name)))?;
            let line: Vec<String> = curve
                .iter()
                .map(|p| format!("{}={}: {}", param.key(), p.value, Percent(p.rate)))
                .collect();
            println!("{}: {}", sur.name, line.join("  "));
        }
        if !report.skipped.is_empty() {
            record.notes = Some(report.skipped.clone());
        }
        record.write(&out)?;
        Ok(())
    }))
}

fn plan_coverage(settings: &Settings) -> Result<Job, CliError> {
    let cfg = settings.attack_config()?;
    let data = load_dataset(settings, "data")?;
    let zoo = load_zoo(settings, &data)?;
    let surrogate = surrogate_of(settings, &zoo)?;
    let images: usize = settings.get("images", 200)?;
    let threshold: f64 = settings.get("threshold", DEFAULT_THRESHOLD)?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::config("threshold must lie in [0, 1]"));
    }
    let (format, ext) = format_of(settings)?;
    let out = settings.out_dir("coverage");
    let record = RunRecord::new("coverage", settings, Some(&cfg), cfg.seed);
    Ok(Box::new(move || {
        create_dir(&out)?;
        let rows: Vec<CoverageRow> = run_coverage_study(&zoo, &surrogate, &data, &cfg, images, threshold)?;
        let path = out.join(format!("coverage.{ext}"));
        emit_rows(&rows, COVERAGE_COLUMNS, format, &path)?;
        record.write(&out)?;
        for r in &rows {
            println!(
                "{surrogate} -> {:<10} {:<10} C = {:.3} ({} images, {} excluded)",
                r.victim, r.variant, r.mean_c, r.n_images, r.n_excluded
            );
        }
        Ok(())
    }))
}

fn find_manifests(path: &Path, out: &mut Vec<PathBuf>) -> Result<(), CliError> {
    if path.is_file() {
        out.push(path.to_path_buf());
        return Ok(());
    }
    if !path.is_dir() {
        return Err(CliError::config(format!("{} does not exist", path.display())));
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(path)
        .map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .collect();
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_manifests(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "manifest.json") {
            out.push(p);
        }
    }
    Ok(())
}

fn audit_uaps(path: &Path, m: &UapManifest) -> Result<(usize, f64, bool), CliError> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut worst = 0.0f64;
    for f in &m.files {
        let t = read_tensor(&base.join(f))?;
        worst = t.iter().fold(worst, |a, v| a.max(v.abs()));
    }
    Ok((m.files.len(), worst, worst <= m.epsilon + 1e-3))
}

fn cmd_audit(paths: &[PathBuf]) -> Result<(), CliError> {
    let mut manifests = Vec::new();
    for p in paths {
        find_manifests(p, &mut manifests)?;
    }
    if manifests.is_empty() {
        return Err(CliError::config("no manifest.json found"));
    }
    let mut failed = 0;
    for path in &manifests {
        let text = fs::read_to_string(path).map_err(|e| CliError::runtime(format!("{}: {e}", path.display())))?;
        let (n, worst, eps, ok) = if let Ok(m) = serde_json::from_str::<UapManifest>(&text) {
            let (n, worst, ok) = audit_uaps(path, &m)?;
            (n, worst, m.epsilon, ok)
        } else {
            let r = audit_manifest(path)?;
            let worst = r.findings.iter().map(|f| f.linf).fold(0.0, f64::max);
            for v in r.violations() {
                eprintln!("  violation {}: linf {} range [{}, {}]", v.file, v.linf, v.min, v.max);
            }
            (r.findings.len(), worst, r.epsilon, r.passed())
        };
        println!(
            "{} {} ({n} files, max linf {worst:.3} <= {eps})",
            if ok { "PASS" } else { "FAIL" },
            path.display()
        );
        if !ok {
            failed += 1;
        }
    }
    if failed > 0 {
        return Err(CliError::runtime(format!("{failed} manifest(s) violate the budget")));
    }
    Ok(())
}
