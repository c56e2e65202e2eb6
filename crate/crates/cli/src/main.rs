//! `nbvlab`: generation, training and evaluation runs driven by a
//! `section.key = value` config file.

mod config;

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use nbvlab_core::classify::{evaluate_classifier, train_classifier, write_training_log as write_epoch_log, Classifier};
use nbvlab_core::env::NbvEnv;
use nbvlab_core::harness::{
    confusion_at_best, confusion_at_start, evaluate_sequences, export_features, write_sequence_csv,
    write_sequence_rows_csv, write_validation_curve,
};
use nbvlab_core::nn::Checkpoint;
use nbvlab_core::render::{
    generate_image_set, occlusion_sweep_with, spearman, ImageSet, OcclusionSampler, Split, DEFAULT_RADIUS_FACTOR,
};
use nbvlab_core::sac::{train_agent_with, write_training_log, SacAgent};
use nbvlab_core::scene::{object, GripperSpec, ObjectMesh};

use config::{ConfigError, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "nbvlab", version, about = "Next-best-view classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (`section.key = value` lines); defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory; defaults to `$NBVLAB_OUT/<subcommand>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Replace a seed, e.g. `dataset=3` or `sac.seed=3`. Repeatable.
    #[arg(long = "seed-override", value_name = "KEY=VALUE", global = true)]
    seed_override: Vec<String>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
enum Command {
    /// Write the object roster's meshes.
    GenObjects,
    /// Render a labelled image set with train/val/test splits.
    GenDataset,
    /// Train the classifier (optionally fine-tuning `classifier.init`).
    TrainClassifier,
    /// Train a SAC agent against a trained classifier.
    TrainAgent,
    /// Evaluate an agent from random starts.
    Evaluate,
    /// Self-occlusion sweeps over the occlusion roster.
    MeasureOcclusion,
    /// Parse and check a config without writing anything.
    ValidateConfig,
}

impl Command {
    fn name(self) -> &'static str {
        match self {
            Command::GenObjects => "gen-objects",
            Command::GenDataset => "gen-dataset",
            Command::TrainClassifier => "train-classifier",
            Command::TrainAgent => "train-agent",
            Command::Evaluate => "evaluate",
            Command::MeasureOcclusion => "measure-occlusion",
            Command::ValidateConfig => "validate-config",
        }
    }
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(e.0)
    }
}

impl From<nbvlab_core::Error> for Failure {
    fn from(e: nbvlab_core::Error) -> Self {
        Failure::Runtime(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::Runtime(format!("{}: {e}", path.display()))
}

/// Collects result lines for the run summary.
struct Summary {
    lines: Vec<(String, String)>,
}

impl Summary {
    fn put(&mut self, key: &str, value: impl ToString) {
        self.lines.push((format!("result.{key}"), value.to_string()));
    }
}

struct Run {
    command: Command,
    config: RunConfig,
    out: PathBuf,
}

impl Run {
    fn file(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn create(&self, name: &str) -> Res<BufWriter<fs::File>> {
        let path = self.file(name);
        fs::File::create(&path).map(BufWriter::new).map_err(io_err(&path))
    }

    fn write_summary(&self, summary: &Summary) -> Res<()> {
        let mut text = format!("run.subcommand = {}\nrun.status = ok\n", self.command.name());
        text.push_str(&self.config.to_text());
        for (k, v) in &summary.lines {
            text.push_str(&format!("{k} = {v}\n"));
        }
        let path = self.file("summary.txt");
        fs::write(&path, text).map_err(io_err(&path))
    }
}

fn roster(ids: &[u32]) -> Res<Vec<(u32, ObjectMesh)>> {
    ids.iter().map(|&id| Ok((id, object(id)?))).collect()
}

fn checkpoint(config: &RunConfig, key: &str) -> Res<Checkpoint> {
    let Some(path) = config.path(key) else {
        return Err(Failure::Runtime(format!("missing checkpoint: `{key}` is not set")));
    };
    if !path.is_file() {
        return Err(Failure::Runtime(format!("missing checkpoint: {} (`{key}`)", path.display())));
    }
    Ok(Checkpoint::load(&path)?)
}

fn load_classifier(config: &RunConfig, key: &str) -> Res<Classifier<f32>> {
    Ok(Classifier::from_checkpoint(&checkpoint(config, key)?)?)
}

fn dataset(config: &RunConfig) -> Res<ImageSet> {
    if let Some(dir) = config.path("dataset.dir") {
        return Ok(ImageSet::load(&dir)?);
    }
    let objs = roster(&config.objects()?)?;
    Ok(generate_image_set(
        &objs,
        config.dataset_mode()?,
        config.get("dataset.n_poses")?,
        &config.camera()?,
        &GripperSpec::default(),
        &config.workspace()?,
        config.get("dataset.seed")?,
    )?)
}

fn gen_objects(run: &Run, s: &mut Summary) -> Res<()> {
    let dir = run.file("objects");
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    for (id, mesh) in roster(&run.config.objects()?)? {
        let mut w = run.create(&format!("objects/o{id:02}.txt"))?;
        mesh.write_ascii(&mut w).map_err(io_err(&dir))?;
        s.put(&format!("object_{id}.triangles"), mesh.triangles.len());
    }
    Ok(())
}

fn gen_dataset(run: &Run, s: &mut Summary) -> Res<()> {
    let c = &run.config;
    let objs = roster(&c.objects()?)?;
    let set = generate_image_set(
        &objs,
        c.dataset_mode()?,
        c.get("dataset.n_poses")?,
        &c.camera()?,
        &GripperSpec::default(),
        &c.workspace()?,
        c.get("dataset.seed")?,
    )?;
    set.write(&run.out)?;
    for split in [Split::Train, Split::Val, Split::Test] {
        s.put(&format!("{split}_per_object"), set.manifest.count(split) / objs.len());
    }
    s.put("images", set.images.len());
    Ok(())
}

fn train_classifier_cmd(run: &Run, s: &mut Summary) -> Res<()> {
    let c = &run.config;
    let cfg = c.classifier()?;
    let set = dataset(c)?;
    let init = match c.path("classifier.init") {
        Some(_) => Some(load_classifier(c, "classifier.init")?),
        None => None,
    };
    let (model, log) = train_classifier::<f32>(&cfg, &set, init.as_ref())?;
    model.to_checkpoint().save(&run.file("classifier.ck"))?;
    let mut w = run.create("training_log.csv")?;
    write_epoch_log(&mut w, &log).map_err(io_err(&run.out))?;
    let test = evaluate_classifier(&model, &set, Split::Test)?;
    let mut w = run.create("confusion_test.csv")?;
    test.write_csv(&mut w, &set.manifest.objects).map_err(io_err(&run.out))?;
    let best = log.iter().map(|l| l.val_acc).fold(0.0, f64::max);
    s.put("best_val_acc", best);
    s.put("test_acc", test.accuracy);
    Ok(())
}

fn train_agent_cmd(run: &Run, s: &mut Summary) -> Res<()> {
    let c = &run.config;
    let model = Arc::new(load_classifier(c, "classifier.checkpoint")?);
    let objs = roster(&c.objects()?)?;
    let mut env = NbvEnv::new(c.env()?, model, &objs)?;
    let sac = c.sac()?;
    let pre = match c.path("sac.init") {
        Some(_) => Some(SacAgent::<f32>::from_checkpoint(&checkpoint(c, "sac.init")?, sac.clone())?),
        None => None,
    };
    let schedule = c.schedule()?;
    let out = train_agent_with(&mut env, &sac, &schedule, pre.as_ref(), &mut |row| {
        eprintln!("step {:>7}  validation {:+.4}  alpha {:.4}", row.step, row.validation_mean, row.alpha);
        std::ops::ControlFlow::Continue(())
    })?;
    out.agent.to_checkpoint().save(&run.file("agent.ck"))?;
    let mut w = run.create("training_log.csv")?;
    write_training_log(&mut w, &out.log).map_err(io_err(&run.out))?;
    let mut w = run.create("validation_curve.csv")?;
    write_validation_curve(&mut w, env.object_ids(), &out.log).map_err(io_err(&run.out))?;
    if let Some(last) = out.log.last() {
        s.put("final_validation_mean", last.validation_mean);
    }
    s.put("validation_points", out.log.len());
    Ok(())
}

fn evaluate_cmd(run: &Run, s: &mut Summary) -> Res<()> {
    let c = &run.config;
    let agent_ck = checkpoint(c, "evaluate.agent")?;
    let model = Arc::new(load_classifier(c, "classifier.checkpoint")?);
    let agent = SacAgent::<f32>::from_checkpoint(&agent_ck, c.sac()?)?;
    let objs = roster(&c.objects()?)?;
    let env = NbvEnv::new(c.env()?, Arc::clone(&model), &objs)?;
    let result = evaluate_sequences(
        &agent,
        &env,
        c.get("evaluate.starts_per_object")?,
        c.get("evaluate.seq_len")?,
        c.get("evaluate.seed")?,
    )?;
    let mut w = run.create("sequences.csv")?;
    write_sequence_csv(&mut w, &result).map_err(io_err(&run.out))?;
    let mut w = run.create("sequence_rows.csv")?;
    write_sequence_rows_csv(&mut w, &result).map_err(io_err(&run.out))?;
    let ids: Vec<u32> = env.object_ids().to_vec();
    let best = confusion_at_best(&result, &env)?;
    let start = confusion_at_start(&result, &env)?;
    let mut w = run.create("confusion_best.csv")?;
    best.write_csv(&mut w, &ids).map_err(io_err(&run.out))?;
    let mut w = run.create("confusion_start.csv")?;
    start.write_csv(&mut w, &ids).map_err(io_err(&run.out))?;
    if let Some(dir) = c.path("evaluate.features_dataset") {
        let set = ImageSet::load(&dir)?;
        for split in [Split::Train, Split::Val, Split::Test] {
            let mut w = run.create(&format!("features_{split}.csv"))?;
            export_features(&model, &set, split, &mut w)?;
        }
    }
    let a = &result.average;
    s.put("start_mean", a.start);
    s.put("first_mean", a.first_abs);
    s.put("best_mean", a.best_abs);
    s.put("steps_mean", a.steps);
    s.put("start_accuracy", start.accuracy);
    s.put("best_accuracy", best.accuracy);
    Ok(())
}

fn measure_occlusion(run: &Run, s: &mut Summary) -> Res<()> {
    let c = &run.config;
    let ids: Vec<u32> = c.list("occlusion.objects")?;
    let views: usize = c.get("occlusion.views")?;
    let samples: usize = c.get("occlusion.samples")?;
    let seed: u64 = c.get("occlusion.seed")?;
    let mut table = run.create("occlusion_summary.csv")?;
    writeln!(table, "object,complexity,mean_ratio").map_err(io_err(&run.out))?;
    let (mut ks, mut means) = (Vec::new(), Vec::new());
    for (id, mesh) in roster(&ids)? {
        let sampler = OcclusionSampler::new(&mesh, samples, seed);
        let radius = DEFAULT_RADIUS_FACTOR * sampler.bound_radius();
        let report = occlusion_sweep_with(&sampler, mesh.complexity, views, radius)?;
        let mut w = run.create(&format!("occlusion_o{id:02}.csv"))?;
        report.write_csv(&mut w).map_err(io_err(&run.out))?;
        let mut w = run.create(&format!("octants_o{id:02}.csv"))?;
        report.write_octant_csv(&mut w).map_err(io_err(&run.out))?;
        writeln!(table, "{id},{},{}", mesh.complexity, report.mean()).map_err(io_err(&run.out))?;
        ks.push(mesh.complexity as f64);
        means.push(report.mean());
    }
    if ks.len() >= 2 {
        s.put("spearman", spearman(&ks, &means));
    }
    Ok(())
}

fn execute(cli: Cli) -> Res<()> {
    let mut config = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
            RunConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?
        }
        None => RunConfig::default(),
    };
    for o in &cli.seed_override {
        config.override_seed(o)?;
    }
    config.check_all()?;
    if cli.command == Command::ValidateConfig {
        println!("config ok");
        return Ok(());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::Runtime(e.to_string()))?;
    }
    let out = match cli.out {
        Some(p) => p,
        None => {
            let root = std::env::var_os("NBVLAB_OUT").map(PathBuf::from).unwrap_or_else(|| "nbvlab-out".into());
            root.join(cli.command.name())
        }
    };
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let run = Run {
        command: cli.command,
        config,
        out,
    };
    let mut summary = Summary { lines: Vec::new() };
    match run.command {
        Command::GenObjects => gen_objects(&run, &mut summary)?,
        Command::GenDataset => gen_dataset(&run, &mut summary)?,
        Command::TrainClassifier => train_classifier_cmd(&run, &mut summary)?,
        Command::TrainAgent => train_agent_cmd(&run, &mut summary)?,
        Command::Evaluate => evaluate_cmd(&run, &mut summary)?,
        Command::MeasureOcclusion => measure_occlusion(&run, &mut summary)?,
        Command::ValidateConfig => unreachable!("handled above"),
    }
    run.write_summary(&summary)?;
    println!("{}", run.file("summary.txt").display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("nbvlab: usage error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("nbvlab: {msg}");
            ExitCode::from(1)
        }
    }
}
