use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use polytraj::config::{keys_help, RunConfig};
use polytraj::data::Dataset;
use polytraj::eval::{Curve, StudyReport};
use polytraj::model::Model;
use polytraj::pipeline::{self, Study};
use polytraj::tensor::Checkpoint;
use polytraj::{Error, ErrorKind, Result};

#[derive(Parser, Debug)]
#[command(
    name = "polytraj",
    version,
    about = "Polynomial trajectory prediction: data, training, evaluation, studies"
)]
#[command(after_long_help = help_keys(), after_help = help_keys())]
struct Cli {
    /// Plain-text config file of `key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one config key (repeatable; wins over the file).
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build the synthetic or NGSim dataset into `data.dir`.
    Generate,
    /// Train a model on the generated dataset and write a checkpoint.
    Train,
    /// Evaluate the checkpoint on the test split.
    Eval,
    /// Train and compare the model variants of a study
    /// (anchoring, anchor_count, extrapolation, table1).
    Study { name: String },
}

fn help_keys() -> String {
    format!("Config keys:\n{}", keys_help())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::new(),
    };
    cfg.apply_overrides(&cli.set)?;
    cfg.validate()?;
    Ok(cfg)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.into(),
        source: e,
    })?;
    let probe = dir.join(".write-test");
    std::fs::write(&probe, b"").map_err(|e| Error::Io {
        path: probe.clone(),
        source: e,
    })?;
    let _ = std::fs::remove_file(&probe);
    Ok(())
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })
}

fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if !dir.join(polytraj::data::MANIFEST_FILE).exists() {
        return Err(Error::Data(format!(
            "no dataset in {}; run `polytraj generate` first",
            dir.display()
        )));
    }
    Dataset::load(&dir)
}

fn generate(cfg: &RunConfig) -> Result<()> {
    let ds = pipeline::generate(cfg)?;
    println!(
        "wrote {} train / {} test scenes to {}",
        ds.train.len(),
        ds.test.len(),
        cfg.data_dir().display()
    );
    Ok(())
}

fn train(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let ds = load_dataset(cfg)?;
    let samples = pipeline::samples_of(cfg, &ds.train)?;
    if samples.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let (model, curve) = pipeline::train_model(cfg, &samples)?;
    let ckpt = cfg.checkpoint_path();
    if let Some(parent) = ckpt.parent().filter(|p| !p.as_os_str().is_empty()) {
        ensure_dir(parent)?;
    }
    model.to_checkpoint().save(&ckpt)?;
    write(&out.join("loss_curve.csv"), &pipeline::loss_curve_csv(&curve))?;
    if let Some(last) = curve.last() {
        println!("trained {} steps, final loss {:.6}", curve.len(), last.loss);
    }
    println!("checkpoint {}", ckpt.display());
    println!("fingerprint {}", cfg.fingerprint());
    Ok(())
}

fn eval(cfg: &RunConfig) -> Result<()> {
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let model = Model::from_checkpoint(&Checkpoint::load(&cfg.checkpoint_path())?)?;
    pipeline::check_head(cfg, &model)?;
    let ds = load_dataset(cfg)?;
    let test = pipeline::samples_of(cfg, &ds.test)?;
    if test.is_empty() {
        return Err(Error::Data("test split is empty".into()));
    }
    let report = pipeline::evaluate(cfg, &model, &test)?;
    let method = model.config().head.to_string();
    let stem = format!("eval_{}", report.fingerprint);
    write(&out.join(format!("{stem}.csv")), &report.to_csv(&method))?;
    let plot = StudyReport {
        study: "eval".into(),
        fingerprint: report.fingerprint.clone(),
        frame_rate: report.frame_rate,
        curves: vec![Curve {
            method: method.clone(),
            offsets: report.offsets.clone(),
            ade: report.ade.clone(),
        }],
        skipped: 0,
    };
    write(&out.join(format!("{stem}.svg")), &plot.to_svg())?;
    let (coord, poly) = match model.config().head {
        polytraj::model::HeadKind::Coordinates => (Some(&report), None),
        polytraj::model::HeadKind::Polynomial => (None, Some(&report)),
    };
    print!("{}", polytraj::eval::table1(coord, poly));
    println!("wrote {}/{stem}.csv", out.display());
    Ok(())
}

fn study(cfg: &RunConfig, name: &str) -> Result<()> {
    let study: Study = name.parse()?;
    let out = cfg.out_dir();
    ensure_dir(&out)?;
    let outcome = pipeline::run_study(study, cfg)?;
    let (csv, _) = outcome.report.save(&out)?;
    for c in &outcome.report.curves {
        println!("{:<14} mean ADE {:.4} m", c.method, c.mean());
    }
    if let Some(table) = &outcome.table {
        print!("{table}");
    }
    println!("wrote {}", csv.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Generate => generate(&cfg),
        Command::Train => train(&cfg),
        Command::Eval => eval(&cfg),
        Command::Study { name } => study(&cfg, name),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e.kind() {
                ErrorKind::Usage => 1,
                ErrorKind::Data => 2,
                ErrorKind::Numerical => 3,
            })
        }
    }
}
