//! Command-line driver: dataset generation, training, evaluation, gradient
//! checking, nomination inspection, attention export and factor ablation.
//!
//! Every command logs JSON lines to standard output. Exit codes: 0 success,
//! 1 usage or config, 2 data or I/O, 3 numeric failure.

mod config;
mod export;

pub use config::resolve;
pub use export::{map_csv, pgm};

use clap::{Args, Parser, Subcommand, ValueEnum};
use funnel_hoi::dataset_eval::{Dataset, DatasetConfig, Scene};
use funnel_hoi::detr_lite::{load_checkpoint, save_checkpoint, ModelParams};
use funnel_hoi::matching_losses::FactorMask;
use funnel_hoi::numerics::Graph;
use funnel_hoi::pipeline::{ablate, evaluate, gradcheck, scene_forward, train, Pipeline, RunConfig};
use funnel_hoi::{Error, Result};
use serde_json::{json, Value};
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Usage(_) | Error::Config { .. } => EXIT_USAGE,
        Error::Numeric { .. } | Error::Graph(_) => EXIT_NUMERIC,
        Error::Shape { .. } | Error::Format { .. } | Error::Data(_) | Error::Io { .. } | Error::Json { .. } => EXIT_DATA,
    }
}

#[derive(Parser, Debug)]
#[command(name = "funnel-hoi", version, about = "Top-down zero-shot HOI detection on synthetic scenes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Profile {
    Toy,
    Full,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SceneSet {
    Train,
    Test,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON file with run settings; missing fields keep the profile defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dotted override, e.g. `--set loss.alpha=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    #[arg(long, value_enum, default_value = "toy")]
    profile: Profile,
}

impl RunArgs {
    fn resolve(&self) -> Result<RunConfig> {
        let base = match self.profile {
            Profile::Toy => RunConfig::toy(),
            Profile::Full => RunConfig::default(),
        };
        let cfg: RunConfig = resolve(&base, self.config.as_deref(), &self.set)?;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic taxonomy, embedding tables, split and scenes.
    GenData {
        #[arg(long)]
        out: PathBuf,
        /// JSON file with dataset settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Train on the seen classes and write a checkpoint.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Checkpoint path.
        #[arg(long)]
        out: PathBuf,
        /// Also evaluate on the test scenes and write the report here.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Evaluate a checkpoint with the full classifier.
    Eval {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Report path.
        #[arg(long)]
        out: PathBuf,
        /// Also write the ranked detections as JSON.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "test")]
        from: SceneSet,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Compare every parameter gradient with central differences.
    Gradcheck {
        /// Dataset directory; the reference toy dataset is generated in memory when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Check at these weights instead of the initialization.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
        #[arg(long, default_value_t = 1e-5)]
        step: f64,
        /// Write the full report here.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Print the nominated objects and verbs of one scene.
    Nominate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        scene: usize,
        #[arg(long, value_enum, default_value = "test")]
        from: SceneSet,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the co-attention maps of one scene as CSV and PGM files.
    ExportAttention {
        #[arg(long)]
        data: PathBuf,
        /// Weights to use; the seeded initialization when absent.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        #[arg(long)]
        scene: usize,
        #[arg(long, value_enum, default_value = "test")]
        from: SceneSet,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Train and evaluate once per factor subset plus the focal baseline.
    Ablate {
        #[arg(long)]
        data: PathBuf,
        /// CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Subsets such as `beta`, `delta+zeta` or `all`. Defaults to all seven.
        #[arg(long = "factors", value_name = "SUBSET")]
        factors: Vec<String>,
        #[command(flatten)]
        run: RunArgs,
    },
}

fn emit(out: &mut dyn Write, v: &Value) -> Result<()> {
    writeln!(out, "{v}").map_err(|e| Error::Io {
        path: PathBuf::from("<stdout>"),
        source: e,
    })
}

fn to_json<T: serde::Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("plain data serializes")
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::Io {
            path: parent.to_path_buf(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v).expect("plain data serializes");
    write_file(path, (text + "\n").as_bytes())
}

pub fn parse_factors(s: &str) -> Result<FactorMask> {
    let mut m = FactorMask {
        beta: false,
        delta: false,
        zeta: false,
    };
    for part in s.split('+').map(str::trim) {
        match part.to_ascii_lowercase().as_str() {
            "beta" => m.beta = true,
            "delta" => m.delta = true,
            "zeta" => m.zeta = true,
            "all" => m = FactorMask::ALL,
            _ => {
                return Err(Error::Usage(format!(
                    "unknown factor `{part}` (expected beta, delta, zeta or all)"
                )))
            }
        }
    }
    Ok(m)
}

fn load_params(pipe: &Pipeline, ckpt: Option<&Path>) -> Result<ModelParams> {
    let init = ModelParams::init(&pipe.config.stack, pipe.dataset.taxonomy.n_objects(), pipe.config.seed)?;
    match ckpt {
        Some(p) => ModelParams::from_named(&init, load_checkpoint(p)?),
        None => Ok(init),
    }
}

fn pick_scene(pipe: &Pipeline, from: SceneSet, i: usize) -> Result<&Scene> {
    let scenes = match from {
        SceneSet::Train => &pipe.dataset.train,
        SceneSet::Test => &pipe.dataset.test,
    };
    scenes
        .get(i)
        .ok_or_else(|| Error::Usage(format!("scene {i} out of range ({} scenes)", scenes.len())))
}

fn cmd_gen_data(out: &Path, config: Option<&Path>, set: &[String], log: &mut dyn Write) -> Result<i32> {
    let cfg: DatasetConfig = resolve(&DatasetConfig::default(), config, set)?;
    let ds = Dataset::generate(&cfg)?;
    ds.save(out)?;
    emit(
        log,
        &json!({
            "event": "gen-data",
            "out": out.display().to_string(),
            "objects": ds.taxonomy.n_objects(),
            "actions": ds.taxonomy.n_actions(),
            "classes": ds.taxonomy.n_classes(),
            "split": ds.split.setting.as_str(),
            "seen": ds.split.n_seen(),
            "unseen": ds.split.n_unseen(),
            "train_scenes": ds.train.len(),
            "test_scenes": ds.test.len(),
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_train(data: &Path, out: &Path, report: Option<&Path>, run: &RunArgs, log: &mut dyn Write) -> Result<i32> {
    let start = Instant::now();
    let pipe = Pipeline::new(Dataset::load(data)?, run.resolve()?)?;
    let init = load_params(&pipe, None)?;
    let mut log_err = None;
    let outcome = train(&pipe, init, |r| {
        if log_err.is_none() {
            let mut v = to_json(r);
            v["event"] = json!("epoch");
            log_err = emit(log, &v).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    save_checkpoint(&outcome.params.flatten(), out)?;
    let mut done = json!({
        "event": "done",
        "checkpoint": out.display().to_string(),
        "epochs": outcome.epochs.len(),
        "final_loss": outcome.epochs.last().map(|r| r.loss.total),
    });
    if let Some(path) = report {
        let (rep, _) = evaluate(&pipe, &outcome.params, &pipe.dataset.test)?;
        write_json(path, &to_json(&rep))?;
        done["report"] = json!(path.display().to_string());
        done["map_seen"] = json!(rep.map_seen);
        done["map_unseen"] = json!(rep.map_unseen);
        done["map_full"] = json!(rep.map_full);
    }
    done["wall_time_s"] = json!(start.elapsed().as_secs_f64());
    emit(log, &done)?;
    Ok(EXIT_OK)
}

fn cmd_eval(
    ckpt: &Path,
    data: &Path,
    out: &Path,
    detections: Option<&Path>,
    from: SceneSet,
    run: &RunArgs,
    log: &mut dyn Write,
) -> Result<i32> {
    let pipe = Pipeline::new(Dataset::load(data)?, run.resolve()?)?;
    let params = load_params(&pipe, Some(ckpt))?;
    let scenes = match from {
        SceneSet::Train => &pipe.dataset.train,
        SceneSet::Test => &pipe.dataset.test,
    };
    let (rep, dets) = evaluate(&pipe, &params, scenes)?;
    write_json(out, &to_json(&rep))?;
    if let Some(path) = detections {
        write_json(path, &to_json(&dets))?;
    }
    emit(
        log,
        &json!({
            "event": "eval",
            "report": out.display().to_string(),
            "scenes": scenes.len(),
            "detections": dets.len(),
            "classifier_width": pipe.dataset.taxonomy.n_classes(),
            "map_seen": rep.map_seen,
            "map_unseen": rep.map_unseen,
            "map_full": rep.map_full,
        }),
    )?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_gradcheck(
    data: Option<&Path>,
    ckpt: Option<&Path>,
    tol: f64,
    step: f64,
    out: Option<&Path>,
    run: &RunArgs,
    log: &mut dyn Write,
) -> Result<i32> {
    if !(tol >= 0.0) || !(step > 0.0) {
        return Err(Error::Usage("--tol must be non-negative and --step positive".into()));
    }
    let cfg = run.resolve()?;
    let ds = match data {
        Some(d) => Dataset::load(d)?,
        None => Dataset::generate(&DatasetConfig {
            c1: cfg.stack.c1,
            grid: cfg.stack.grid,
            ..DatasetConfig::default()
        })?,
    };
    let start = Instant::now();
    let pipe = Pipeline::new(ds, cfg)?;
    let params = load_params(&pipe, ckpt)?;
    let rep = gradcheck(&pipe, &params, step, tol)?;
    if let Some(path) = out {
        write_json(path, &to_json(&rep))?;
    }
    let worst: Vec<Value> = rep.worst.iter().take(5).map(to_json).collect();
    emit(
        log,
        &json!({
            "event": "gradcheck",
            "passed": rep.passed,
            "max_rel_err": rep.max_rel_err,
            "tol": rep.tol,
            "tensors": rep.tensors,
            "scalars": rep.scalars,
            "loss": rep.loss,
            "worst": worst,
            "wall_time_s": start.elapsed().as_secs_f64(),
        }),
    )?;
    Ok(if rep.passed { EXIT_OK } else { EXIT_NUMERIC })
}

fn cmd_nominate(data: &Path, scene: usize, from: SceneSet, run: &RunArgs, log: &mut dyn Write) -> Result<i32> {
    let pipe = Pipeline::new(Dataset::load(data)?, run.resolve()?)?;
    let input = pipe.scene_input(pick_scene(&pipe, from, scene)?)?;
    let ds = &pipe.dataset;
    let n = &input.nominations;
    let objects: Vec<Value> = n
        .objects
        .nominated()
        .iter()
        .zip(&n.objects.scores)
        .map(|(&o, &s)| json!({"index": o, "name": ds.objects.name(o), "score": s}))
        .collect();
    let person = ds.taxonomy.person_object_idx;
    let actions: Vec<Value> = n
        .actions
        .indices
        .iter()
        .zip(&n.actions.scores)
        .zip(&n.actions.provenance)
        .map(|((&a, &s), &o)| json!({"index": a, "name": ds.actions.name(a), "score": s, "via_object": o}))
        .collect();
    emit(
        log,
        &json!({
            "event": "nominate",
            "scene": scene,
            "objects": objects,
            "person": {"index": person, "name": ds.objects.name(person)},
            "actions": actions,
        }),
    )?;
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn cmd_export_attention(
    data: &Path,
    ckpt: Option<&Path>,
    scene: usize,
    from: SceneSet,
    out: &Path,
    run: &RunArgs,
    log: &mut dyn Write,
) -> Result<i32> {
    let pipe = Pipeline::new(Dataset::load(data)?, run.resolve()?)?;
    let params = load_params(&pipe, ckpt)?;
    let input = pipe.scene_input(pick_scene(&pipe, from, scene)?)?;
    let mode = pipe.eval_mode();
    let mut g = Graph::new();
    let pv = params.bind(&mut g);
    let (pos, embed) = pipe.constants(&mut g, mode);
    let fwd = scene_forward(&mut g, &pv, &input, pos, embed, &pipe.config.stack, mode)?;
    std::fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_path_buf(),
        source: e,
    })?;
    let ds = &pipe.dataset;
    let obj_names: Vec<String> = input.nominations.objects.indices.iter().map(|&o| ds.objects.name(o).to_string()).collect();
    let verb_names: Vec<String> = input.nominations.actions.indices.iter().map(|&a| ds.actions.name(a).to_string()).collect();
    let o = fwd.f_o.output(&g)?;
    let a = fwd.f_a.output(&g)?;
    let mut files = export::write_probe(out, "osaca", &o.map, &o.per_candidate_maps, &obj_names)?;
    files.extend(export::write_probe(out, "ovaca", &a.map, &a.per_candidate_maps, &verb_names)?);
    emit(
        log,
        &json!({
            "event": "export-attention",
            "scene": scene,
            "out": out.display().to_string(),
            "objects": obj_names,
            "verbs": verb_names,
            "files": files,
        }),
    )?;
    Ok(EXIT_OK)
}

fn cmd_ablate(data: &Path, out: &Path, factors: &[String], run: &RunArgs, log: &mut dyn Write) -> Result<i32> {
    let cfg = run.resolve()?;
    let masks = if factors.is_empty() {
        FactorMask::grid()
    } else {
        factors.iter().map(|f| parse_factors(f)).collect::<Result<_>>()?
    };
    let ds = Dataset::load(data)?;
    let mut log_err = None;
    let rows = ablate(&ds, &cfg, &masks, |r| {
        if log_err.is_none() {
            let mut v = to_json(r);
            v["event"] = json!("ablation-row");
            log_err = emit(log, &v).err();
        }
    })?;
    if let Some(e) = log_err {
        return Err(e);
    }
    let mut csv = String::from("factors,unseen,seen,full\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{},{}\n", r.factors, r.unseen, r.seen, r.full));
    }
    write_file(out, csv.as_bytes())?;
    emit(log, &json!({"event": "done", "rows": rows.len(), "out": out.display().to_string()}))?;
    Ok(EXIT_OK)
}

fn dispatch(cli: Cli, log: &mut dyn Write) -> Result<i32> {
    match cli.command {
        Command::GenData { out, config, set } => cmd_gen_data(&out, config.as_deref(), &set, log),
        Command::Train { data, out, report, run } => cmd_train(&data, &out, report.as_deref(), &run, log),
        Command::Eval {
            ckpt,
            data,
            out,
            detections,
            from,
            run,
        } => cmd_eval(&ckpt, &data, &out, detections.as_deref(), from, &run, log),
        Command::Gradcheck {
            data,
            ckpt,
            tol,
            step,
            out,
            run,
        } => cmd_gradcheck(data.as_deref(), ckpt.as_deref(), tol, step, out.as_deref(), &run, log),
        Command::Nominate { data, scene, from, run } => cmd_nominate(&data, scene, from, &run, log),
        Command::ExportAttention {
            data,
            ckpt,
            scene,
            from,
            out,
            run,
        } => cmd_export_attention(&data, ckpt.as_deref(), scene, from, &out, &run, log),
        Command::Ablate { data, out, factors, run } => cmd_ablate(&data, &out, &factors, &run, log),
    }
}

/// Parses `args` (program name first) and runs the command. Logs go to
/// `out`, errors to `err`; the return value is the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return EXIT_USAGE;
            }
            let _ = write!(out, "{}", e.render());
            return EXIT_OK;
        }
    };
    match dispatch(cli, out) {
        Ok(code) => code,
        Err(e) => {
            let code = exit_code(&e);
            let _ = writeln!(err, "{}", json!({"event": "error", "exit_code": code, "message": e.to_string()}));
            code
        }
    }
}
