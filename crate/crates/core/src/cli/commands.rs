use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Map, Value};

use super::config::{DataConfig, DataSplit, RunConfig};
use super::{
    Cli, CliError, Command, DataArgs, EvalArgs, SharpnessArgs, SurfaceArgs, SynthArgs, TrainArgs,
};
use crate::data::{
    augment8, crop_patches, load_dir, read_image_file, save_dir, split, synth_generate, write_ftsr,
    Dataset, SynthSpec,
};
use crate::error::Error;
use crate::landscape::{
    append_sharpness_report, evaluate_surface, export_surface, sample_directions, sharpness,
    DatasetObjective, GridSpec, SharpnessRecord, SharpnessSpec, SurfaceFormat, SurfaceMetadata,
};
use crate::metrics::{average, evaluate_pair, format_table, QualityReport};
use crate::models::{
    read_checkpoint, write_checkpoint, ArchitectureSpec, Checkpoint, Model, ParamSet,
};
use crate::objective::Reduction;
use crate::train::{train_from, EpochRecord, StopOutcome, TrainConfig};

type CmdResult = Result<CommandOutput, CliError>;

/// What a finished command produced.
#[derive(Debug, Default)]
pub struct CommandOutput {
    /// Human-readable summary for stdout.
    pub stdout: String,
    /// Files written, in creation order.
    pub files: Vec<PathBuf>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn write_json<V: Serialize>(path: &Path, value: &V) -> Result<PathBuf, CliError> {
    let text = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))?;
    Ok(path.to_path_buf())
}

/// Merges flags into the configuration, writes `run_config.json` and runs
/// the command.
pub fn execute(cli: Cli) -> CmdResult {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = cli.out {
        cfg.out = out;
    }
    match cli.command {
        Command::Synth(a) => {
            apply_synth(&mut cfg, a);
            start(&mut cfg, "synth")?;
            cmd_synth(&cfg)
        }
        Command::Train(a) => {
            apply_train(&mut cfg, a);
            start(&mut cfg, "train")?;
            cmd_train(&cfg)
        }
        Command::Surface(a) => {
            apply_surface(&mut cfg, a);
            start(&mut cfg, "surface")?;
            cmd_surface(&cfg)
        }
        Command::Sharpness(a) => {
            apply_sharpness(&mut cfg, a);
            start(&mut cfg, "sharpness")?;
            cmd_sharpness(&cfg)
        }
        Command::Eval(a) => {
            apply_eval(&mut cfg, a);
            start(&mut cfg, "eval")?;
            cmd_eval(&cfg)
        }
    }
}

fn start(cfg: &mut RunConfig, command: &str) -> Result<(), CliError> {
    cfg.command = command.to_string();
    cfg.train.seed = cfg.seed;
    cfg.write(&cfg.out)?;
    Ok(())
}

fn apply_data(cfg: &mut DataConfig, a: DataArgs) {
    if let Some(d) = a.data {
        cfg.dir = Some(d);
    }
    if let Some(r) = a.split {
        cfg.split_ratio = r;
    }
    cfg.augment |= a.augment;
    if let Some(p) = a.patch_size {
        cfg.patch_size = Some(p);
    }
    if let Some(o) = a.patch_overlap {
        cfg.patch_overlap = o;
    }
}

fn apply_synth(cfg: &mut RunConfig, a: SynthArgs) {
    let s = &mut cfg.synth;
    s.task = a.task;
    s.count = a.count.unwrap_or(s.count);
    s.size = a.size.unwrap_or(s.size);
    s.channels = a.channels.unwrap_or(s.channels);
    s.noise = a.noise.or(s.noise);
    s.format = a.format.unwrap_or(s.format);
}

fn apply_train(cfg: &mut RunConfig, a: TrainArgs) {
    apply_data(&mut cfg.data, a.data);
    let m = &mut cfg.model;
    m.arch = a.arch.unwrap_or(m.arch);
    m.depth = a.depth.unwrap_or(m.depth);
    m.base_channels = a.base.unwrap_or(m.base_channels);
    if a.blocks.is_some() {
        m.residual_blocks_per_skip = a.blocks;
    }
    let t = &mut cfg.train;
    t.batch_size = a.batch.unwrap_or(t.batch_size);
    t.lr = a.lr.unwrap_or(t.lr);
    t.momentum = a.momentum.unwrap_or(t.momentum);
    t.epochs = a.epochs.unwrap_or(t.epochs);
    t.shuffle &= !a.no_shuffle;
    t.reduction = a.reduction.unwrap_or(t.reduction);
    cfg.target_loss = a.target_loss.or(cfg.target_loss);
    cfg.snapshots |= a.snapshots;
}

fn apply_surface(cfg: &mut RunConfig, a: SurfaceArgs) {
    apply_data(&mut cfg.data, a.data);
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint.take());
    let s = &mut cfg.surface;
    s.n = a.n.unwrap_or(s.n);
    s.r = a.r.unwrap_or(s.r);
    s.on = a.on.unwrap_or(s.on);
    s.format = a.format.unwrap_or(s.format);
    cfg.reduction = a.reduction.or(cfg.reduction);
}

fn apply_sharpness(cfg: &mut RunConfig, a: SharpnessArgs) {
    apply_data(&mut cfg.data, a.data);
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint.take());
    let s = &mut cfg.sharpness;
    if !a.eps.is_empty() {
        s.epsilons = a.eps;
    }
    s.repeats = a.repeats.unwrap_or(s.repeats);
    s.maximizer.starts = a.starts.unwrap_or(s.maximizer.starts);
    s.maximizer.steps = a.steps.unwrap_or(s.maximizer.steps);
    s.maximizer.step_fraction = a.step_fraction.unwrap_or(s.maximizer.step_fraction);
    s.maximizer.ascent = a.ascent.unwrap_or(s.maximizer.ascent);
    s.maximizer.start = a.start.unwrap_or(s.maximizer.start);
    s.on = a.on.unwrap_or(s.on);
    cfg.reduction = a.reduction.or(cfg.reduction);
}

fn apply_eval(cfg: &mut RunConfig, a: EvalArgs) {
    apply_data(&mut cfg.data, a.data);
    cfg.checkpoint = a.checkpoint.or(cfg.checkpoint.take());
    let e = &mut cfg.eval;
    e.predictions = a.predictions.or(e.predictions.take());
    e.on = a.on.unwrap_or(e.on);
    e.metrics.ssim.window = a.window.unwrap_or(e.metrics.ssim.window);
    e.metrics.threshold = a.threshold.unwrap_or(e.metrics.threshold);
    e.save_predictions |= a.save_predictions;
}

fn cmd_synth(cfg: &RunConfig) -> CmdResult {
    let s = &cfg.synth;
    if s.count == 0 || s.size == 0 || s.channels == 0 {
        return Err(usage("--count, --size and --channels must be positive"));
    }
    let mut spec = SynthSpec::new(s.task, s.count, s.size, cfg.seed);
    spec.channels = s.channels;
    if let Some(noise) = s.noise {
        spec.noise = noise;
    }
    let data: Dataset<f64> = synth_generate(&spec)?;
    let generator = serde_json::to_value(&spec).ok();
    save_dir(&data, &cfg.out, s.format, generator)?;
    let mut files: Vec<PathBuf> = Vec::new();
    for p in &data.pairs {
        for kind in ["in", "gt"] {
            files.push(
                cfg.out
                    .join(format!("{}_{kind}.{}", p.id, s.format.extension())),
            );
        }
    }
    files.push(cfg.out.join("manifest.json"));
    Ok(CommandOutput {
        stdout: format!(
            "wrote {} {:?} pairs of {}x{} to {}\n",
            data.len(),
            s.task,
            s.size,
            s.size,
            cfg.out.display()
        ),
        files,
    })
}

/// Loads, splits, crops and augments a dataset as described by `data`.
pub fn prepare_data(
    data: &DataConfig,
    split_seed: u64,
) -> Result<(Dataset<f64>, Dataset<f64>), CliError> {
    let dir = data
        .dir
        .as_ref()
        .ok_or_else(|| usage("no dataset given; pass --data <dir>"))?;
    let all: Dataset<f64> = load_dir(dir)?;
    if all.is_empty() {
        return Err(CliError::Runtime(Error::EmptyDataset));
    }
    let (mut train, mut test) = split(&all, data.split_ratio, split_seed)?;
    if let Some(size) = data.patch_size {
        for d in [&mut train, &mut test] {
            let mut pairs = Vec::new();
            for p in &d.pairs {
                pairs.extend(crop_patches(p, size, data.patch_overlap)?);
            }
            d.pairs = pairs;
            d.provenance.patches = Some((size, data.patch_overlap));
        }
    }
    if data.augment {
        train = augment8(&train)?;
        train.provenance.augmented = true;
    }
    Ok((train, test))
}

fn model_spec(cfg: &RunConfig, sample: &Dataset<f64>) -> Result<ArchitectureSpec, CliError> {
    let first = &sample.pairs[0];
    let m = &cfg.model;
    let mut spec = ArchitectureSpec::new(m.arch, m.depth, m.base_channels)
        .with_channels(first.input.shape()[0], first.target.shape()[0]);
    if let Some(blocks) = &m.residual_blocks_per_skip {
        spec = spec.with_residual_blocks(blocks.clone());
    }
    spec.validate()?;
    Ok(spec)
}

fn provenance(cfg: &RunConfig, kind: &str, epoch: usize, train_loss: f64) -> Map<String, Value> {
    let mut m = Map::new();
    m.insert("kind".into(), kind.into());
    m.insert("epoch".into(), epoch.into());
    m.insert("train_loss".into(), json!(train_loss));
    m.insert("split_seed".into(), cfg.seed.into());
    m.insert(
        "data".into(),
        serde_json::to_value(&cfg.data).unwrap_or(Value::Null),
    );
    m.insert(
        "train".into(),
        serde_json::to_value(cfg.train).unwrap_or(Value::Null),
    );
    m
}

fn cmd_train(cfg: &RunConfig) -> CmdResult {
    let (train_set, test_set) = prepare_data(&cfg.data, cfg.seed)?;
    let spec = model_spec(cfg, &train_set)?;
    let model = Model::build(&spec)?;
    let tc: TrainConfig = cfg.train;
    tc.validate()?;
    if let Some(t) = cfg.target_loss {
        if !(t > 0.0) {
            return Err(usage(format!("--target-loss must be positive, got {t}")));
        }
    }
    let out = &cfg.out;
    let mut files = Vec::new();
    let split_path = write_json(
        &out.join("split.json"),
        &json!({ "train": train_set.ids(), "test": test_set.ids(), "provenance": train_set.provenance }),
    )?;
    files.push(split_path);

    let mut snapshots = Vec::new();
    let mut hook = |r: &EpochRecord, p: &ParamSet<f64>| -> crate::Result<()> {
        if cfg.snapshots {
            let path = out.join(format!("epoch_{:03}.ckpt", r.epoch));
            write_checkpoint(
                &path,
                &spec,
                cfg.seed,
                p,
                provenance(cfg, "snapshot", r.epoch, r.train_loss),
            )?;
            snapshots.push(path);
        }
        Ok(())
    };
    let init = model.init_params(cfg.seed);
    let test = (!test_set.is_empty()).then_some(&test_set);
    let result = train_from(
        &model,
        &train_set,
        test,
        &tc,
        init,
        cfg.target_loss,
        &mut hook,
    )?;
    files.extend(snapshots);

    let log = &result.log;
    let best = out.join("best.ckpt");
    write_checkpoint(
        &best,
        &spec,
        cfg.seed,
        &result.best,
        provenance(cfg, "best", log.best_epoch, log.best_train_loss),
    )?;
    let last_epoch = log.final_record().map_or(0, |r| r.epoch);
    let last_loss = log
        .final_record()
        .map_or(log.initial_train_loss, |r| r.train_loss);
    let last = out.join("last.ckpt");
    write_checkpoint(
        &last,
        &spec,
        cfg.seed,
        &result.last,
        provenance(cfg, "last", last_epoch, last_loss),
    )?;
    log.write(out)?;
    for name in [
        "best.ckpt",
        "best.ckpt.bin",
        "last.ckpt",
        "last.ckpt.bin",
        "train_log.csv",
        "train_log.json",
        "timing.txt",
    ] {
        files.push(out.join(name));
    }

    let mut stdout = format!(
        "{} ({} parameters) on {} train / {} test pairs\n",
        spec.arch,
        model.num_params(),
        train_set.len(),
        test_set.len()
    );
    writeln!(
        stdout,
        "{:>6} {:>14} {:>14}",
        "epoch", "train_loss", "test_loss"
    )
    .unwrap();
    for r in &log.epochs {
        let test = r.test_loss.map_or("-".to_string(), |t| format!("{t:.6e}"));
        writeln!(
            stdout,
            "{:>6} {:>14.6e} {:>14}",
            r.epoch, r.train_loss, test
        )
        .unwrap();
    }
    match log.stop {
        Some(StopOutcome::Reached { epoch, train_loss }) => writeln!(
            stdout,
            "target loss reached at epoch {epoch} (train loss {train_loss:.6e})"
        )
        .unwrap(),
        Some(StopOutcome::NotReached {
            epochs,
            best_train_loss,
        }) => writeln!(
            stdout,
            "target loss not reached in {epochs} epochs (best train loss {best_train_loss:.6e})"
        )
        .unwrap(),
        None => {}
    }
    writeln!(
        stdout,
        "best epoch {} -> {}",
        log.best_epoch,
        best.display()
    )
    .unwrap();
    if let Some(d) = log.diverged {
        print!("{stdout}");
        return Err(CliError::Runtime(Error::NonFinite(format!(
            "training diverged at epoch {} (loss {}); last finite parameters in {}",
            d.epoch,
            d.loss,
            last.display()
        ))));
    }
    Ok(CommandOutput { stdout, files })
}

struct Loaded {
    checkpoint: Checkpoint<f64>,
    model: Model,
    train: Dataset<f64>,
    test: Dataset<f64>,
    reduction: Reduction,
    name: String,
}

impl Loaded {
    fn split(&self, which: DataSplit) -> Result<&Dataset<f64>, CliError> {
        let d = match which {
            DataSplit::Train => &self.train,
            DataSplit::Test => &self.test,
        };
        if d.is_empty() {
            return Err(CliError::Runtime(Error::EmptyDataset));
        }
        Ok(d)
    }

    fn objective(&self, which: DataSplit) -> Result<DatasetObjective<'_, f64>, CliError> {
        Ok(DatasetObjective::new(
            &self.model,
            self.split(which)?,
            self.reduction,
        ))
    }
}

/// Reads the checkpoint and rebuilds the data split it was trained on,
/// unless the flags name another dataset.
fn load(cfg: &RunConfig) -> Result<Loaded, CliError> {
    let path = cfg
        .checkpoint
        .as_ref()
        .ok_or_else(|| usage("no checkpoint given; pass --checkpoint <file>"))?;
    let checkpoint: Checkpoint<f64> = read_checkpoint(path)?;
    let prov = &checkpoint.manifest.provenance;
    let data = if cfg.data.dir.is_some() {
        cfg.data.clone()
    } else {
        prov.get("data")
            .and_then(|v| serde_json::from_value::<DataConfig>(v.clone()).ok())
            .filter(|d| d.dir.is_some())
            .ok_or_else(|| usage("the checkpoint records no dataset; pass --data <dir>"))?
    };
    let split_seed = prov
        .get("split_seed")
        .and_then(Value::as_u64)
        .unwrap_or(cfg.seed);
    let (train, test) = prepare_data(&data, split_seed)?;
    let trained_with = prov
        .get("train")
        .and_then(|v| serde_json::from_value::<TrainConfig>(v.clone()).ok())
        .map(|t| t.reduction);
    let model = Model::build(&checkpoint.manifest.spec)?;
    model.check_params(&checkpoint.params)?;
    let name = checkpoint.manifest.spec.arch.to_string();
    Ok(Loaded {
        checkpoint,
        model,
        train,
        test,
        reduction: cfg.reduction.or(trained_with).unwrap_or_default(),
        name,
    })
}

fn file_name(p: &Path) -> String {
    p.file_name().map_or_else(
        || p.display().to_string(),
        |n| n.to_string_lossy().into_owned(),
    )
}

fn cmd_surface(cfg: &RunConfig) -> CmdResult {
    let s = &cfg.surface;
    let grid = GridSpec::new(s.n, s.r)?;
    let l = load(cfg)?;
    let obj = l.objective(s.on)?;
    let dirs = sample_directions(&l.checkpoint.params, cfg.seed);
    let which = match s.on {
        DataSplit::Train => "train",
        DataSplit::Test => "test",
    };
    let surface = evaluate_surface(&obj, &l.checkpoint.params, &dirs, grid, which, l.reduction)?;
    let mut meta = SurfaceMetadata::of(&surface);
    meta.model = Some(l.name.clone());
    meta.checkpoint = cfg.checkpoint.as_deref().map(file_name);
    let path = cfg.out.join(match s.format {
        SurfaceFormat::Csv => "surface.csv",
        SurfaceFormat::Json => "surface.json",
    });
    let files = export_surface(&surface, &meta, &path, s.format)?;
    let stdout = format!(
        "{0}x{0} surface of {1} over [-{2}, {2}]^2 on the {which} split: centre {3:.6e}, min {4:.6e}, max {5:.6e}\nwrote {6}\n",
        grid.n + 1,
        l.name,
        grid.r,
        surface.center_loss,
        surface.min(),
        surface.max(),
        path.display()
    );
    Ok(CommandOutput { stdout, files })
}

#[derive(Serialize)]
struct SharpnessSummary {
    model: String,
    epsilon: f64,
    repeats: usize,
    mean_phi: f64,
    phis: Vec<f64>,
}

fn cmd_sharpness(cfg: &RunConfig) -> CmdResult {
    let s = &cfg.sharpness;
    if s.epsilons.is_empty() || s.repeats == 0 {
        return Err(usage("need at least one --eps and one repeat"));
    }
    if let Some(e) = s.epsilons.iter().find(|e| !(**e > 0.0)) {
        return Err(usage(format!("epsilon must be positive, got {e}")));
    }
    let l = load(cfg)?;
    let obj = l.objective(s.on)?;
    let report = cfg.out.join("sharpness.json");
    let mut summary = Vec::new();
    for &epsilon in &s.epsilons {
        let mut phis = Vec::with_capacity(s.repeats);
        for r in 0..s.repeats {
            let seed = cfg.seed + r as u64;
            let spec = SharpnessSpec {
                epsilon,
                maximizer: s.maximizer,
                seed,
            };
            let res = sharpness(&obj, &l.checkpoint.params, &spec)?;
            append_sharpness_report(
                &report,
                &SharpnessRecord {
                    model: l.name.clone(),
                    epsilon,
                    phi: res.phi,
                    maximizer: s.maximizer,
                    seed,
                    center_loss: res.center_loss,
                    max_loss: res.max_loss,
                    reduction: l.reduction,
                },
            )?;
            phis.push(res.phi);
        }
        summary.push(SharpnessSummary {
            model: l.name.clone(),
            epsilon,
            repeats: s.repeats,
            mean_phi: phis.iter().sum::<f64>() / phis.len() as f64,
            phis,
        });
    }
    let summary_path = write_json(&cfg.out.join("sharpness_summary.json"), &summary)?;
    let mut stdout = format!("{:<10}{:>10}{:>16}\n", "model", "epsilon", "mean phi");
    for row in &summary {
        writeln!(
            stdout,
            "{:<10}{:>10}{:>16.6e}",
            row.model, row.epsilon, row.mean_phi
        )
        .unwrap();
    }
    Ok(CommandOutput {
        stdout,
        files: vec![report, summary_path],
    })
}

#[derive(Serialize)]
struct ImageScore {
    id: String,
    #[serde(flatten)]
    report: QualityReport,
}

#[derive(Serialize)]
struct EvalReport {
    source: String,
    split: Option<DataSplit>,
    images: Vec<ImageScore>,
    average: Option<QualityReport>,
}

fn find_prediction(dir: &Path, id: &str) -> Option<PathBuf> {
    ["ftsr", "pgm"]
        .iter()
        .map(|ext| dir.join(format!("{id}_pred.{ext}")))
        .find(|p| p.exists())
}

fn cmd_eval(cfg: &RunConfig) -> CmdResult {
    let e = &cfg.eval;
    let mut files = Vec::new();
    let (source, split_used, scored) = match (&e.predictions, &cfg.checkpoint) {
        (Some(_), Some(_)) => {
            return Err(usage("pass either --checkpoint or --predictions, not both"))
        }
        (None, None) => return Err(usage("pass --checkpoint <file> or --predictions <dir>")),
        (Some(pred_dir), None) => {
            let dir =
                cfg.data.dir.as_ref().ok_or_else(|| {
                    usage("--predictions needs --data <dir> with the ground truth")
                })?;
            let truth: Dataset<f64> = load_dir(dir)?;
            let mut missing = Vec::new();
            let mut scored = Vec::new();
            for p in &truth.pairs {
                match find_prediction(pred_dir, &p.id) {
                    Some(path) => scored.push((
                        p.id.clone(),
                        read_image_file::<f64>(&path)?,
                        p.target.clone(),
                    )),
                    None => missing.push(format!(
                        "{}: no prediction for `{}`",
                        pred_dir.display(),
                        p.id
                    )),
                }
            }
            if !missing.is_empty() {
                return Err(CliError::Runtime(Error::Load(missing)));
            }
            ("predictions".to_string(), None, scored)
        }
        (None, Some(_)) => {
            let l = load(cfg)?;
            let data = l.split(e.on)?;
            let pred_dir = cfg.out.join("predictions");
            let mut scored = Vec::new();
            for p in &data.pairs {
                let x = crate::tensor::Tensor::stack(&[&p.input])?;
                let y = l.model.forward(&l.checkpoint.params, &x)?;
                let y = y.batch_item(0)?.reshape(p.target.shape())?;
                if e.save_predictions {
                    fs::create_dir_all(&pred_dir).map_err(|err| Error::io(&pred_dir, err))?;
                    let path = pred_dir.join(format!("{}_pred.ftsr", p.id));
                    write_ftsr(&path, &y)?;
                    files.push(path);
                }
                scored.push((p.id.clone(), y, p.target.clone()));
            }
            (l.name.clone(), Some(e.on), scored)
        }
    };
    let mut images = Vec::with_capacity(scored.len());
    for (id, pred, target) in &scored {
        if pred.shape() != target.shape() {
            return Err(CliError::Runtime(Error::shape(
                "eval",
                format!(
                    "prediction for `{id}` is {:?}, target is {:?}",
                    pred.shape(),
                    target.shape()
                ),
            )));
        }
        images.push(ImageScore {
            id: id.clone(),
            report: evaluate_pair(pred, target, &e.metrics)?,
        });
    }
    let reports: Vec<QualityReport> = images.iter().map(|i| i.report).collect();
    let avg = average(&reports);
    let report = EvalReport {
        source: source.clone(),
        split: split_used,
        images,
        average: avg,
    };
    files.push(write_json(&cfg.out.join("eval_report.json"), &report)?);
    let stdout = match avg {
        Some(r) => format_table(&[(source, r)]),
        None => "no images to score\n".to_string(),
    };
    Ok(CommandOutput { stdout, files })
}
