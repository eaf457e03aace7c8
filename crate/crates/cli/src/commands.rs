use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::Context;
use docbinformer::data::synth::{synthetic_pair, Degradation};
use docbinformer::data::{enumerate_dataset, load_image, save_image, DocumentPair, GrayImage};
use docbinformer::metrics::{
    evaluate_dataset, otsu, psnr, sauvola, to_csv, to_table, BinaryImage, SauvolaParams, Scored,
};
use docbinformer::model::{parameter_count, AblationRow, ModelConfig, TlVit};
use docbinformer::train::{
    checkpoint_path, leave_one_out_split, load_checkpoint, load_checkpoint_for, save_checkpoint,
    tile_pairs, EpochLog, TrainConfig, Trainer,
};
use docbinformer::Error;
use rayon::prelude::*;

use crate::config::{self, Entry, RunConfig};
use crate::{Method, RunArgs, SauvolaArgs, SynthKind};

pub const THREADS_VAR: &str = "DOCBINFORMER_THREADS";

/// 2 for usage and configuration errors, 3 for bad input data, 4 for
/// everything else.
pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                e if e.is_config_error() => 2,
                e if e.is_data_error() => 3,
                Error::Metric(_) | Error::Dimension(_) => 3,
                _ => 4,
            };
        }
        if cause.is::<std::io::Error>() {
            return 3;
        }
    }
    4
}

pub fn init_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw.trim().parse().ok().filter(|&n| n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_VAR} must be a positive integer, got `{raw}`"
        ))
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()?;
    Ok(())
}

fn resolve(run: &RunArgs, mut extra: Vec<Entry>) -> anyhow::Result<RunConfig> {
    let mut entries = match &run.config {
        Some(path) => config::parse_file(path)?,
        None => Vec::new(),
    };
    let cli = |key: &str, value: String| Entry {
        key: key.into(),
        value,
        origin: "command line".into(),
    };
    for arg in &run.set {
        entries.push(config::parse_override(arg)?);
    }
    if let Some(d) = &run.dataset {
        entries.push(cli("paths.dataset", d.display().to_string()));
    }
    if let Some(y) = run.year {
        entries.push(cli("run.held_out_year", y.to_string()));
    }
    if let Some(s) = run.seed {
        entries.push(cli("run.seed", s.to_string()));
    }
    if run.no_attn_residual {
        entries.push(cli("model.attn_residual", "false".into()));
    }
    entries.append(&mut extra);
    Ok(RunConfig::from_entries(&entries)?)
}

fn held_out(cfg: &RunConfig) -> anyhow::Result<(Vec<DocumentPair>, Vec<DocumentPair>, u32)> {
    let root = cfg
        .dataset
        .as_ref()
        .ok_or_else(|| Error::Config("no dataset: pass --dataset or set paths.dataset".into()))?;
    let year = cfg.held_out_year.ok_or_else(|| {
        Error::Config("no held-out year: pass --year or set run.held_out_year".into())
    })?;
    let pairs = enumerate_dataset(root)?;
    if pairs.is_empty() {
        return Err(Error::Data(format!("no image pairs under {}", root.display())).into());
    }
    let (train, test) = leave_one_out_split(pairs, year)?;
    Ok((train, test, year))
}

fn csv_line(path: &Path) -> anyhow::Result<BufWriter<File>> {
    let fresh = !path.exists();
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening {}", path.display()))?;
    let mut out = BufWriter::new(file);
    if fresh {
        writeln!(out, "epoch,step,loss")?;
    }
    Ok(out)
}

fn write_log(path: &Path, log: &EpochLog, first_step: u64) -> anyhow::Result<()> {
    let mut out = csv_line(path)?;
    for (i, loss) in log.step_losses.iter().enumerate() {
        writeln!(
            out,
            "{},{},{loss:.8e}",
            log.epoch,
            first_step + i as u64 + 1
        )?;
    }
    out.flush()?;
    Ok(())
}

pub fn train(
    run: &RunArgs,
    epochs: Option<u64>,
    max_steps: Option<u64>,
    output_dir: Option<PathBuf>,
    resume: Option<PathBuf>,
) -> anyhow::Result<()> {
    let mut extra = Vec::new();
    let cli = |key: &str, value: String| Entry {
        key: key.into(),
        value,
        origin: "command line".into(),
    };
    if let Some(e) = epochs {
        extra.push(cli("train.epochs", e.to_string()));
    }
    if let Some(s) = max_steps {
        extra.push(cli("train.max_steps", s.to_string()));
    }
    if let Some(d) = &output_dir {
        extra.push(cli("paths.output_dir", d.display().to_string()));
    }
    if let Some(r) = &resume {
        extra.push(cli("paths.checkpoint", r.display().to_string()));
    }
    let cfg = resolve(run, extra)?;
    let (train_set, test_set, year) = held_out(&cfg)?;
    let tiles = tile_pairs(&train_set, cfg.model.height)?;
    eprintln!(
        "training on {} documents ({} tiles of {}px), holding out {} from {year}",
        train_set.len(),
        tiles.len(),
        cfg.model.height,
        test_set.len()
    );

    let mut trainer = match &cfg.checkpoint {
        Some(path) => Trainer::resume(load_checkpoint_for(path, &cfg.model)?, cfg.train.clone())?,
        None => Trainer::new(cfg.model, cfg.train.clone())?,
    };
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let log_path = dir.join("loss_log.csv");
    if cfg.checkpoint.is_none() && log_path.exists() {
        fs::remove_file(&log_path)?;
    }

    let start = Instant::now();
    let every = cfg.train.checkpoint_every;
    let total = cfg.train.epochs;
    let mut first_step = trainer.steps();
    let mut io_error = None;
    trainer
        .fit(&tiles, |log, t| {
            if let Err(e) = write_log(&log_path, log, first_step) {
                io_error = Some(e);
                return Err(Error::Data("cannot write loss log".into()));
            }
            first_step = t.steps();
            eprintln!(
                "epoch {}/{total}  loss {:.6}  steps {}  {:.1}s",
                log.epoch,
                log.mean_loss(),
                t.steps(),
                start.elapsed().as_secs_f64()
            );
            if every > 0 && log.epoch % every == 0 {
                save_checkpoint(&t.checkpoint(), checkpoint_path(dir, log.epoch))?;
            }
            Ok(())
        })
        .map_err(|e| io_error.take().unwrap_or_else(|| e.into()))?;
    let final_path = dir.join("final.ckpt");
    save_checkpoint(&trainer.checkpoint(), &final_path)?;
    println!(
        "wrote {} after {} steps",
        final_path.display(),
        trainer.steps()
    );
    Ok(())
}

pub fn binarize(
    checkpoint: &Path,
    input: &Path,
    output: &Path,
    threshold: f32,
    batch: usize,
) -> anyhow::Result<()> {
    let model = load_checkpoint(checkpoint)?.model()?;
    let image = load_image(input)?;
    let binary = model.binarize_image(&image, threshold, batch)?;
    save_image(&binary.to_gray(), output)?;
    println!(
        "wrote {} ({}x{})",
        output.display(),
        binary.width(),
        binary.height()
    );
    Ok(())
}

fn sauvola_params(a: SauvolaArgs) -> SauvolaParams {
    SauvolaParams {
        window: a.window,
        k: a.k,
        r: a.r,
    }
}

fn apply_baseline(
    method: Method,
    image: &GrayImage,
    params: SauvolaParams,
) -> docbinformer::Result<BinaryImage> {
    match method {
        Method::Otsu => otsu(image),
        Method::Sauvola => sauvola(image, params),
    }
}

pub fn eval(
    run: &RunArgs,
    checkpoint: Option<PathBuf>,
    baseline: Option<Method>,
    sauvola_args: SauvolaArgs,
    threshold: f32,
    csv: Option<PathBuf>,
    save_dir: Option<PathBuf>,
) -> anyhow::Result<()> {
    let cfg = resolve(run, Vec::new())?;
    let (_, test_set, year) = held_out(&cfg)?;
    let params = sauvola_params(sauvola_args);
    let model = match &checkpoint {
        Some(path) => Some(load_checkpoint(path)?.model()?),
        None => None,
    };
    let predictions: Vec<BinaryImage> = test_set
        .par_iter()
        .map(|pair| match (&model, baseline) {
            (Some(m), _) => m.binarize_image(&pair.degraded, threshold, 1),
            (None, Some(method)) => apply_baseline(method, &pair.degraded, params),
            (None, None) => Err(Error::Config("pass --checkpoint or --baseline".into())),
        })
        .collect::<docbinformer::Result<_>>()?;
    let truths: Vec<BinaryImage> = test_set
        .iter()
        .map(|p| BinaryImage::from_gray(&p.ground_truth, 0.5))
        .collect();
    let items: Vec<Scored> = test_set
        .iter()
        .zip(predictions.iter().zip(&truths))
        .map(|(p, (pred, gt))| Scored {
            sample_id: &p.id,
            year: p.year,
            pred,
            gt,
        })
        .collect();
    let (samples, mean) = evaluate_dataset(&items)?;
    let label = match (&checkpoint, baseline) {
        (Some(path), _) => path.display().to_string(),
        (None, Some(m)) => format!("{m:?}").to_lowercase(),
        (None, None) => unreachable!(),
    };
    println!("{label} on {year} ({} images)", samples.len());
    print!("{}", to_table(&samples, Some(&mean)));
    if let Some(path) = csv {
        fs::write(&path, to_csv(&samples, Some(&mean)))
            .with_context(|| format!("writing {}", path.display()))?;
    }
    if let Some(dir) = save_dir {
        fs::create_dir_all(&dir)?;
        for (p, pred) in test_set.iter().zip(&predictions) {
            save_image(&pred.to_gray(), dir.join(format!("{}.png", p.id)))?;
        }
    }
    Ok(())
}

pub fn ablate(
    run: &RunArgs,
    rows: &[usize],
    epochs: u64,
    max_steps: Option<u64>,
    csv: Option<PathBuf>,
) -> anyhow::Result<()> {
    let rows: Vec<AblationRow> = rows
        .iter()
        .map(|&id| AblationRow::lookup(id))
        .collect::<Result<_, _>>()?;
    let cfg = resolve(run, Vec::new())?;
    let (train_set, test_set, year) = held_out(&cfg)?;
    let truths: Vec<BinaryImage> = test_set
        .iter()
        .map(|p| BinaryImage::from_gray(&p.ground_truth, 0.5))
        .collect();
    let mut table = String::from("row,patch,subpatch,global_dim,local_dim,global_layers,local_layers,parameters,psnr,reported_psnr\n");
    println!(
        "{:>3}  {:>5}  {:>8}  {:>6}  {:>6}  {:>6}  {:>6}  {:>10}  {:>8}  {:>8}",
        "row", "patch", "subpatch", "D", "D'", "L", "L'", "params", "PSNR", "reported"
    );
    for row in rows {
        let model_cfg = ModelConfig {
            height: cfg.model.height,
            width: cfg.model.width,
            attn_residual: cfg.model.attn_residual,
            ..row.config()
        };
        model_cfg.validate()?;
        let tiles = tile_pairs(&train_set, model_cfg.height)?;
        let train_cfg = TrainConfig {
            epochs,
            max_steps,
            checkpoint_every: 0,
            ..cfg.train.clone()
        };
        let mut trainer = Trainer::new(model_cfg, train_cfg)?;
        trainer.fit(&tiles, |log, _| {
            eprintln!(
                "row {} epoch {} loss {:.6}",
                row.id,
                log.epoch,
                log.mean_loss()
            );
            Ok(())
        })?;
        let model: &TlVit<f32> = trainer.model();
        let reports = test_set
            .par_iter()
            .zip(&truths)
            .map(|(p, gt)| psnr(&model.binarize_image(&p.degraded, 0.5, 1)?, gt))
            .collect::<docbinformer::Result<Vec<f64>>>()?;
        let mean_psnr = reports.iter().sum::<f64>() / reports.len().max(1) as f64;
        let params = parameter_count(&model_cfg).total();
        println!(
            "{:>3}  {:>5}  {:>8}  {:>6}  {:>6}  {:>6}  {:>6}  {:>10}  {:>8.2}  {:>8.2}",
            row.id,
            row.patch,
            row.subpatch,
            row.global_dim,
            row.local_dim,
            row.global_layers,
            row.local_layers,
            params,
            mean_psnr,
            row.reported_psnr
        );
        table.push_str(&format!(
            "{},{},{},{},{},{},{},{params},{mean_psnr:.4},{:.2}\n",
            row.id,
            row.patch,
            row.subpatch,
            row.global_dim,
            row.local_dim,
            row.global_layers,
            row.local_layers,
            row.reported_psnr
        ));
    }
    println!(
        "held-out year {year}, {} images, {epochs} epoch(s) per row",
        test_set.len()
    );
    if let Some(path) = csv {
        fs::write(&path, table).with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

pub fn baseline(
    method: Method,
    input: &Path,
    output: &Path,
    args: SauvolaArgs,
) -> anyhow::Result<()> {
    let image = load_image(input)?;
    let binary = apply_baseline(method, &image, sauvola_params(args))?;
    save_image(&binary.to_gray(), output)?;
    println!("wrote {}", output.display());
    Ok(())
}

pub fn synth(
    out: &Path,
    years: &[u32],
    per_year: usize,
    size: usize,
    kind: SynthKind,
    seed: u64,
) -> anyhow::Result<()> {
    if size == 0 || per_year == 0 {
        return Err(Error::Config("--size and --per-year must be positive".into()).into());
    }
    let degradation = match kind {
        SynthKind::Mild => Degradation::mild(),
        SynthKind::Uneven => Degradation::uneven_illumination(),
    };
    let mut n = 0u64;
    for &year in years {
        for sub in ["degraded", "gt"] {
            fs::create_dir_all(out.join(year.to_string()).join(sub))?;
        }
        for i in 0..per_year {
            let id = format!("{year}_{i:03}");
            let pair = synthetic_pair(
                &id,
                year,
                size,
                size,
                &degradation,
                seed.wrapping_mul(1_000_003).wrapping_add(n),
            );
            let dir = out.join(year.to_string());
            save_image(
                &pair.degraded,
                dir.join("degraded").join(format!("{id}.png")),
            )?;
            save_image(&pair.ground_truth, dir.join("gt").join(format!("{id}.png")))?;
            n += 1;
        }
    }
    println!("wrote {n} pairs under {}", out.display());
    Ok(())
}
