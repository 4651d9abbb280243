use std::fs;
use std::path::{Path, PathBuf};

use dshgcn::data::{self, generate_synthetic, load_dataset, write_dataset, Dataset, SynthConfig};
use dshgcn::gradcheck::GroupStatus;
use dshgcn::training::{self, scale_rows_to_csv, sweep_data_scale, sweep_layers, EpochLog};
use dshgcn::{
    gradcheck as run_gradcheck, AttentionMode, Checkpoint, FeatureDims, GradcheckConfig, MetricsReport, TrainConfig,
};
use serde::Serialize;

use crate::{CliError, CliResult, ConvertArgs, EvalArgs, GradcheckArgs, SweepArgs, SweepMode, SynthArgs, TrainArgs};

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))
}

fn create_parent(path: &Path) -> CliResult<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => create_dir(p),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn write_json(path: &Path, value: &impl Serialize) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(dshgcn::Error::from)?;
    write_text(path, &(text + "\n"))
}

fn read_config(path: Option<&Path>) -> CliResult<TrainConfig> {
    let Some(path) = path else {
        return Ok(TrainConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| CliError::Io(path.to_path_buf(), e))?;
    let config: TrainConfig = serde_json::from_str(&text).map_err(dshgcn::Error::from)?;
    config.validate()?;
    Ok(config)
}

fn summarize(dataset: &Dataset) {
    let m = &dataset.manifest;
    println!(
        "snapshots {}  students/snapshot {}  classes {} ({})  dims e={} a={} u={}  seed {}",
        m.snapshots,
        m.students_per_snapshot,
        m.n_classes,
        m.label_names.join("/"),
        m.d_e,
        m.d_a,
        m.d_u,
        m.seed
    );
    let counts = dataset.label_counts();
    println!("label counts {counts:?}");
}

pub fn synth(args: &SynthArgs, out: &Path) -> CliResult<()> {
    let config = SynthConfig {
        students: args.students,
        snapshots: args.snapshots,
        classes: args.classes,
        rho: args.rho.clone(),
        noise: args.noise,
        style: args.style,
        dims: FeatureDims { emotional: args.d_e, attentional: args.d_a, upper_body: args.d_u },
        seed: args.seed,
    };
    let dataset = generate_synthetic(&config)?;
    create_parent(out)?;
    write_dataset(out, &dataset)?;
    // Reload so a written file is always a loadable one.
    let dataset = load_dataset(out)?;
    println!("wrote {}", out.display());
    summarize(&dataset);
    Ok(())
}

pub fn convert(args: &ConvertArgs, out: &Path) -> CliResult<()> {
    let dataset = data::convert_csv(&args.csv, args.classes, args.label_names.clone(), args.seed)?;
    create_parent(out)?;
    write_dataset(out, &dataset)?;
    println!("wrote {}", out.display());
    summarize(&dataset);
    Ok(())
}

#[derive(Serialize)]
struct TrainMetrics<'a> {
    train: &'a MetricsReport,
    test: Option<&'a MetricsReport>,
}

fn epochs_csv(log: &[EpochLog]) -> CliResult<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for entry in log {
        w.serialize(entry).map_err(dshgcn::Error::from)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

fn print_metrics(title: &str, m: &MetricsReport, labels: &[String]) {
    println!("{title}: {} samples", m.samples);
    println!("  accuracy {:.4}  macro-f1 {:.4}  auc {:.4}", m.accuracy, m.f1, m.auc);
    println!("  {:<14} {:>9} {:>9}  confusion (rows true)", "class", "precision", "recall");
    for (c, name) in labels.iter().enumerate() {
        let row: Vec<String> = m.confusion[c].iter().map(|n| format!("{n:>6}")).collect();
        println!("  {:<14} {:>9.4} {:>9.4}  {}", name, m.precision[c], m.recall[c], row.join(""));
    }
}

pub fn train(args: &TrainArgs, out: &Path) -> CliResult<()> {
    let mut config = read_config(args.config.as_deref())?;
    if let Some(a) = args.ablation {
        config.ablation = a;
    }
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    config.validate()?;
    let dataset = load_dataset(&args.data)?;
    if dataset.manifest.n_classes != args.task.classes() {
        return Err(dshgcn::Error::InvalidConfig(format!(
            "task {:?} needs {} classes, dataset has {}",
            args.task,
            args.task.classes(),
            dataset.manifest.n_classes
        ))
        .into());
    }
    create_dir(out)?;
    write_json(&out.join("config.json"), &config)?;

    let outcome = training::train_with(&config, &dataset, |e| {
        let test = e.test_acc.map_or("-".to_string(), |a| format!("{a:.4}"));
        println!("epoch {:>4}  loss {:.6}  train_acc {:.4}  test_acc {test}", e.epoch, e.train_loss, e.train_acc);
    })?;
    Checkpoint::new(outcome.model.config(), &outcome.params).save(out.join("checkpoint.json"))?;
    write_text(&out.join("epochs.csv"), &epochs_csv(&outcome.log)?)?;
    let train_metrics = outcome.evaluate_split(&dataset, false)?;
    let test_metrics = if outcome.split.test.is_empty() { None } else { Some(outcome.evaluate_split(&dataset, true)?) };
    write_json(&out.join("metrics.json"), &TrainMetrics { train: &train_metrics, test: test_metrics.as_ref() })?;
    let labels = &dataset.manifest.label_names;
    println!("ablation {}  parameters {}", config.ablation, outcome.params.count());
    print_metrics("train", &train_metrics, labels);
    if let Some(m) = &test_metrics {
        print_metrics("test", m, labels);
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs, out: Option<PathBuf>) -> CliResult<()> {
    let checkpoint = Checkpoint::load(&args.checkpoint)?;
    let (model, params) = checkpoint.restore()?;
    let dataset = load_dataset(&args.data)?;
    checkpoint.check_compatible(&dataset.manifest)?;
    let metrics = training::evaluate(&model, &params, &dataset.inputs())?;
    let out =
        out.unwrap_or_else(|| args.checkpoint.parent().unwrap_or_else(|| Path::new(".")).join("eval_metrics.json"));
    create_parent(&out)?;
    write_json(&out, &metrics)?;
    print_metrics("eval", &metrics, &dataset.manifest.label_names);
    println!("wrote {}", out.display());
    Ok(())
}

pub fn gradcheck(args: &GradcheckArgs, out: Option<PathBuf>) -> CliResult<()> {
    let config = GradcheckConfig {
        seed: args.seed,
        students: args.students,
        hidden: args.dh,
        hyper_layers: args.layers,
        freq_layers: args.layers,
        attention: if args.no_attention { AttentionMode::Off } else { AttentionMode::PerLayer },
        ablation: args.ablation,
        corrupt: args.corrupt.clone(),
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&config)?;
    println!("{:<18} {:>7} {:>14}  status", "group", "coords", "max_rel_err");
    for g in &report.groups {
        let err = g.max_rel_error.map_or("-".to_string(), |e| format!("{e:.3e}"));
        let status = match g.status {
            GroupStatus::Pass => "pass",
            GroupStatus::Fail => "FAIL",
            GroupStatus::NotApplicable => "n/a",
        };
        println!("{:<18} {:>7} {:>14}  {status}", g.group.name(), g.coordinates, err);
    }
    if let Some(out) = out {
        create_parent(&out)?;
        write_json(&out, &report)?;
    }
    if report.passed() {
        println!("all groups within {:e}", report.tolerance);
        Ok(())
    } else {
        let failed: Vec<&str> =
            report.groups.iter().filter(|g| g.status == GroupStatus::Fail).map(|g| g.group.name()).collect();
        Err(CliError::CheckFailed(format!("gradient mismatch above {:e} in {}", report.tolerance, failed.join(", "))))
    }
}

pub fn sweep(args: &SweepArgs, out: &Path) -> CliResult<()> {
    let config = read_config(args.config.as_deref())?;
    let dataset = load_dataset(&args.data)?;
    create_dir(out)?;
    write_json(&out.join("config.json"), &config)?;
    match args.mode {
        SweepMode::Layers => {
            if args.max_layers == 0 {
                return Err(CliError::Usage("--max-layers must be at least 1".into()));
            }
            let range: Vec<usize> = (1..=args.max_layers).collect();
            let grid = sweep_layers(&config, &dataset, &range, &range)?;
            write_text(&out.join("layers.csv"), &grid.to_long_csv())?;
            write_text(&out.join("layers_grid.csv"), &grid.to_matrix_csv())?;
            print!("{}", grid.to_matrix_csv());
        }
        SweepMode::Datascale => {
            let rows = sweep_data_scale(&config, &dataset, &args.fractions, args.trials)?;
            write_text(&out.join("datascale.csv"), &scale_rows_to_csv(&rows))?;
            print!("{}", scale_rows_to_csv(&rows));
        }
    }
    println!("artifacts in {}", out.display());
    Ok(())
}
