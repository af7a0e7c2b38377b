//! Subcommand implementations.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use snic_core::codec::{self, Bitstream};
use snic_core::data::{
    inverse_preprocess, is_fits, load_levels, load_raw, pad_to_multiple, preprocess_euv, read_manifest, save_gray,
    split_by_month, DiskGeometry, ImageTensor, IntensityMapping, RawEuvImage, Record, PAD_MULTIPLE,
};
use snic_core::evaluation::{
    external_codec_point, measure_latency, plot_impact, plot_rd, rd_sweep, read_rd_csv, write_rd_csv, ExternalCodec,
    NeuralImageCodec,
};
use snic_core::fits::write_fits;
use snic_core::segmentation::{
    compression_impact, read_impact_csv, segment, write_impact_csv, AcweConfig, ImpactRow, NeuralCodec,
};
use snic_core::training::{run_trainer, train, StepMetrics, TrainConfig, Trainer};
use snic_core::{CompressionModel, ModelConfig, Result, SnicError};

use crate::args::*;

pub fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Train(a) => run_train(a),
        Command::Compress(a) => run_compress(a),
        Command::Decompress(a) => run_decompress(a),
        Command::Eval(a) => run_eval(a),
        Command::Segment(a) => run_segment(a),
        Command::Impact(a) => run_impact(a),
        Command::Plot(a) => run_plot(a),
    }
}

fn input_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(SnicError::Input(msg.into()))
}

fn check_jobs(jobs: usize) -> Result<()> {
    if jobs == 0 {
        return input_err("--jobs must be at least 1");
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Inputs

impl EuvArgs {
    fn mapping(&self) -> IntensityMapping {
        if self.euv {
            IntensityMapping::Log { clip_lo: self.clip_lo, clip_hi: self.clip_hi }
        } else {
            IntensityMapping::Linear
        }
    }

    /// Loads an image onto the level grid: the clipped log mapping with
    /// `--euv`, plain 8-bit levels otherwise.
    fn load_levels(&self, path: &Path) -> Result<ImageTensor> {
        if !path.exists() {
            return input_err(format!("{} does not exist", path.display()));
        }
        if self.euv {
            preprocess_euv(&load_raw(path)?, self.clip_lo, self.clip_hi)
        } else {
            load_levels(path, IntensityMapping::Linear)
        }
    }
}

impl AcweArgs {
    fn config(&self) -> Result<AcweConfig> {
        let cfg = AcweConfig {
            alpha: self.alpha,
            mu_len: self.mu,
            lambda_in: self.lambda_in,
            lambda_out: self.lambda_out,
            max_iters: self.max_iters,
            tol: self.tol,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl DiskArgs {
    fn load(&self, path: &Path) -> Result<RawEuvImage> {
        let mut raw = load_raw(path)?;
        if let (Some(center_row), Some(center_col), Some(radius)) = (self.disk_row, self.disk_col, self.disk_radius) {
            raw.disk = DiskGeometry { center_row, center_col, radius };
        }
        raw.disk.validate(raw.height, raw.width)?;
        Ok(raw)
    }
}

fn is_image_file(path: &Path) -> bool {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    is_fits(path) || matches!(ext.as_str(), "png" | "pgm")
}

/// Records of a manifest file or of the image files in a directory.
fn corpus_records(path: &Path, split: Split) -> Result<Vec<Record>> {
    let records = if path.is_dir() {
        let mut files: Vec<PathBuf> =
            fs::read_dir(path)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<Vec<_>>>()?;
        files.retain(|p| p.is_file() && is_image_file(p));
        files.sort();
        files.into_iter().map(|path| Record { path, timestamp: None }).collect()
    } else if path.is_file() {
        read_manifest(path)?
    } else {
        return input_err(format!("corpus {} does not exist", path.display()));
    };
    let records = match split {
        Split::All => records,
        Split::Train => split_by_month(&records)?.train,
        Split::Test => split_by_month(&records)?.test,
    };
    if records.is_empty() {
        return input_err(format!("corpus {} has no images for this split", path.display()));
    }
    Ok(records)
}

fn load_corpus(path: &Path, split: Split, euv: &EuvArgs) -> Result<Vec<ImageTensor>> {
    corpus_records(path, split)?.iter().map(|r| euv.load_levels(&r.path)).collect()
}

fn image_id(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().replace(',', "_")).unwrap_or_else(|| "image".into())
}

// ---------------------------------------------------------------------------
// Checkpoints

fn model_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("model.snck")
    } else {
        path.to_path_buf()
    }
}

fn load_model(path: &Path) -> Result<CompressionModel> {
    let file = model_file(path);
    CompressionModel::load(&file).map_err(|e| match e {
        SnicError::Model(_) => e,
        other => SnicError::Model(format!("cannot load checkpoint {}: {other}", file.display())),
    })
}

fn collect_models(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_models(&p, out)?;
        } else if p.file_name().is_some_and(|n| n == "model.snck") {
            out.push(p);
        }
    }
    Ok(())
}

/// `N` from a directory named `<prefix>N`.
fn numbered(path: Option<&Path>, prefix: &str) -> Option<usize> {
    path?.file_name()?.to_str()?.strip_prefix(prefix)?.parse().ok()
}

/// A model file, a checkpoint directory, or a tree of them. Inside a training
/// run (`lambda_<i>/ckpt_<epoch>/model.snck`) only the last epoch of each
/// tradeoff is kept.
fn discover_checkpoints(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    if !path.is_dir() {
        return input_err(format!("checkpoints {} do not exist", path.display()));
    }
    if path.join("model.snck").is_file() {
        return Ok(vec![path.join("model.snck")]);
    }
    let mut found = Vec::new();
    collect_models(path, &mut found)?;
    let mut latest: BTreeMap<PathBuf, (usize, PathBuf)> = BTreeMap::new();
    let mut loose = Vec::new();
    for file in found {
        let ckpt = file.parent();
        let run = ckpt.and_then(Path::parent);
        match (numbered(ckpt, "ckpt_"), numbered(run, "lambda_"), run) {
            (Some(epoch), Some(_), Some(run)) => {
                let entry = latest.entry(run.to_path_buf()).or_insert((epoch, file.clone()));
                if epoch > entry.0 {
                    *entry = (epoch, file);
                }
            }
            _ => loose.push(file),
        }
    }
    let mut all: Vec<PathBuf> = latest.into_values().map(|(_, f)| f).chain(loose).collect();
    all.sort();
    if all.is_empty() {
        return input_err(format!("no model.snck found under {}", path.display()));
    }
    Ok(all)
}

/// `n` of `m` sorted items spread evenly from the first to the last (the
/// middle one for `n == 1`); `n == 0` keeps everything.
fn spread(m: usize, n: usize) -> Result<Vec<usize>> {
    match n {
        0 => Ok((0..m).collect()),
        n if n > m => input_err(format!("--lambdas {n} asks for more models than the {m} available")),
        1 => Ok(vec![(m - 1) / 2]),
        n => Ok((0..n).map(|k| ((k * (m - 1)) as f64 / (n - 1) as f64).round() as usize).collect()),
    }
}

/// Applies `f` to every item on up to `jobs` threads; results keep item order.
fn parallel_map<T: Sync, R: Send>(items: &[T], jobs: usize, f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let jobs = jobs.clamp(1, items.len().max(1));
    let mut slots: Vec<Option<Result<R>>> = (0..items.len()).map(|_| None).collect();
    std::thread::scope(|s| {
        let f = &f;
        let handles: Vec<_> = (0..jobs)
            .map(|j| s.spawn(move || (j..items.len()).step_by(jobs).map(|i| (i, f(&items[i]))).collect::<Vec<_>>()))
            .collect();
        for h in handles {
            for (i, r) in h.join().expect("worker thread panicked") {
                slots[i] = Some(r);
            }
        }
    });
    slots.into_iter().map(|r| r.expect("every item processed")).collect()
}

// ---------------------------------------------------------------------------
// Subcommands

fn run_train(a: TrainArgs) -> Result<()> {
    let images = load_corpus(&a.corpus, a.split, &a.euv)?;
    let model = match a.preset {
        Preset::Paper => ModelConfig::paper(),
        Preset::Desk => ModelConfig::desk(),
        Preset::Tiny => ModelConfig::tiny(),
    };
    let cfg = TrainConfig {
        model,
        lambdas: a.lambdas.clone(),
        epochs: a.epochs,
        steps_per_epoch: (a.steps_per_epoch > 0).then_some(a.steps_per_epoch),
        batch: a.batch,
        crop: a.crop,
        lr_start: a.lr_start,
        lr_end: a.lr_end,
        adversarial: a.adversarial,
        recon: a.recon,
        perc: a.perc,
        adv: a.adv,
        lpips_backbone: a.backbone.clone(),
        disc_width: a.disc_width,
        clip_norm: a.clip_norm,
        seed: a.seed,
    };
    let log = |lambda: f64, m: &StepMetrics| {
        if a.log_every > 0 && m.step.is_multiple_of(a.log_every as u64) {
            eprintln!("lambda={lambda} step={} bpp={:.4} mse={:.3} loss={:.5} lr={:.3e}", m.step, m.bpp, m.mse, m.loss, m.lr);
        }
    };
    if let Some(dir) = &a.resume {
        let mut t = Trainer::resume(dir)?;
        let lambda = t.lambda();
        let last = run_trainer(&mut t, &images, &a.out, |m| log(lambda, m))?;
        println!("{}", last.display());
    } else {
        for ckpt in train(&cfg, &images, &a.out, |i, m| log(cfg.lambdas[i], m))? {
            println!("{}", ckpt.display());
        }
    }
    Ok(())
}

fn run_compress(a: CompressArgs) -> Result<()> {
    let x = a.euv.load_levels(&a.input)?;
    let model = load_model(&a.checkpoint)?;
    let t0 = Instant::now();
    let bitstream = codec::compress_image(&pad_to_multiple(&x, PAD_MULTIPLE), &model)?;
    let bytes = bitstream.to_bytes()?;
    let enc_ms = t0.elapsed().as_secs_f64() * 1e3;
    let out = a.output.unwrap_or_else(|| a.input.with_extension("snic"));
    fs::write(&out, &bytes)?;
    println!("bpp={:.6} enc_ms={enc_ms:.3}", bitstream.bpp());
    Ok(())
}

fn run_decompress(a: DecompressArgs) -> Result<()> {
    let bytes = fs::read(&a.input).map_err(|e| SnicError::Input(format!("cannot read {}: {e}", a.input.display())))?;
    let bitstream = Bitstream::from_bytes(&bytes)?;
    let model = load_model(&a.checkpoint)?;
    let t0 = Instant::now();
    let rec = codec::decompress_image(&bitstream, &model)?;
    let dec_ms = t0.elapsed().as_secs_f64() * 1e3;
    let out = a.output.unwrap_or_else(|| a.input.with_extension("png"));
    save_gray(&out, &rec)?;
    if a.euv.euv {
        let intensity = inverse_preprocess(&rec, a.euv.clip_lo, a.euv.clip_hi)?;
        let raw = RawEuvImage::new(intensity, rec.height, rec.width)?;
        write_fits(&a.euv_output.unwrap_or_else(|| out.with_extension("fits")), &raw)?;
    }
    println!("dec_ms={dec_ms:.3}");
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<()> {
    check_jobs(a.jobs)?;
    let checkpoints = discover_checkpoints(&a.checkpoints)?;
    let corpus = load_corpus(&a.corpus, a.split, &a.euv)?;
    let mut points = rd_sweep(&checkpoints, &corpus, &a.backbone, a.jobs)?;
    for id in &a.external {
        let codec = ExternalCodec::by_id(id)
            .ok_or_else(|| SnicError::Input(format!("unknown external codec '{id}' (available: jpeg, jpeg2000)")))?;
        if !codec.available() {
            eprintln!("note: {} / {} not found; skipping {id}", codec.encoder, codec.decoder);
            continue;
        }
        let work = std::env::temp_dir().join(format!("snic-eval-{}-{id}", std::process::id()));
        for &q in &a.qualities {
            if let Some(p) = external_codec_point(&codec, q, &corpus, &a.backbone, &work)? {
                points.push(p);
            }
        }
        let _ = fs::remove_dir_all(&work);
    }
    write_rd_csv(&a.output, &points)?;
    println!("wrote {} rate-distortion points to {}", points.len(), a.output.display());
    if let Some(dir) = &a.plots {
        for f in plot_rd(&points, dir)? {
            println!("wrote {}", f.display());
        }
    }
    if a.latency_repeats > 0 {
        let model = load_model(&checkpoints[0])?;
        let l = measure_latency(&NeuralImageCodec(&model), &corpus[0], a.latency_repeats)?;
        println!(
            "latency encode_ms={:.3} decode_ms={:.3} repeats={} size={}x{} environment=\"{}\"",
            l.encode_ms, l.decode_ms, l.repeats, corpus[0].orig_width, corpus[0].orig_height, l.environment
        );
    }
    Ok(())
}

fn run_segment(a: SegmentArgs) -> Result<()> {
    let cfg = a.acwe.config()?;
    if !a.input.exists() {
        return input_err(format!("{} does not exist", a.input.display()));
    }
    let raw = a.disk.load(&a.input)?;
    let s = segment(&raw.pixels, raw.height, raw.width, &raw.disk, &cfg)?;
    let out = a.output.unwrap_or_else(|| a.input.with_file_name(format!("{}_mask.png", image_id(&a.input))));
    s.save(&out, &cfg)?;
    if !s.result.converged {
        eprintln!("warning: no convergence within {} iterations", cfg.max_iters);
    }
    println!(
        "pixels={} quiet_sun={:.4} seed_pixels={} iterations={} converged={} empty={}",
        s.result.mask.count(),
        s.quiet_sun,
        s.seed_pixels,
        s.result.iterations,
        s.result.converged,
        s.result.empty
    );
    Ok(())
}

fn run_impact(a: ImpactArgs) -> Result<()> {
    check_jobs(a.jobs)?;
    let cfg = a.acwe.config()?;
    // Models are not shareable across threads: order them by tradeoff here,
    // then let each worker load its own copy.
    let mut ranked = discover_checkpoints(&a.checkpoints)?
        .into_iter()
        .map(|p| {
            let m = load_model(&p)?;
            Ok((m.meta.lambda.unwrap_or(m.meta.lambda_index as f64), p))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|x, y| x.0.total_cmp(&y.0).then_with(|| x.1.cmp(&y.1)));
    let chosen: Vec<PathBuf> = spread(ranked.len(), a.lambdas)?.into_iter().map(|i| ranked[i].1.clone()).collect();
    let images = a
        .inputs
        .iter()
        .map(|p| {
            if !p.exists() {
                return input_err(format!("{} does not exist", p.display()));
            }
            Ok((image_id(p), a.disk.load(p)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mapping = a.euv.mapping();
    let per_model = parallel_map(&chosen, a.jobs, |path| {
        let model = load_model(path)?;
        let codec = NeuralCodec { model: &model, mapping };
        images.iter().map(|(id, raw)| Ok(ImpactRow::new(id, &compression_impact(raw, &codec, &cfg)?))).collect::<Result<Vec<_>>>()
    })?;
    let mut rows: Vec<ImpactRow> = Vec::with_capacity(images.len() * chosen.len());
    for (i, _) in images.iter().enumerate() {
        let mut mine: Vec<ImpactRow> = per_model.iter().map(|r| r[i].clone()).collect();
        mine.sort_by(|x, y| x.bpp.total_cmp(&y.bpp).then_with(|| x.codec.cmp(&y.codec)));
        rows.extend(mine);
    }
    write_impact_csv(&a.output, &rows)?;
    println!("wrote {} rows to {}", rows.len(), a.output.display());
    Ok(())
}

fn run_plot(a: PlotArgs) -> Result<()> {
    if a.rd.is_empty() && a.impact.is_empty() {
        return input_err("nothing to plot: pass --rd and/or --impact tables");
    }
    let mut written = Vec::new();
    if !a.rd.is_empty() {
        let mut points = Vec::new();
        for p in &a.rd {
            points.extend(read_rd_csv(p)?);
        }
        written.extend(plot_rd(&points, &a.out)?);
    }
    if !a.impact.is_empty() {
        let mut rows = Vec::new();
        for p in &a.impact {
            rows.extend(read_impact_csv(p)?);
        }
        let path = a.out.join("dice_bpp.svg");
        plot_impact(&rows, &path)?;
        written.push(path);
    }
    for f in written {
        println!("wrote {}", f.display());
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spread_picks_evenly_from_the_ends() {
        assert_eq!(spread(7, 3).unwrap(), vec![0, 3, 6]);
        assert_eq!(spread(7, 7).unwrap(), (0..7).collect::<Vec<_>>());
        assert_eq!(spread(4, 3).unwrap(), vec![0, 2, 3]);
        assert_eq!(spread(5, 1).unwrap(), vec![2]);
        assert_eq!(spread(3, 0).unwrap(), vec![0, 1, 2]);
        assert!(spread(2, 3).is_err());
    }

    #[test]
    fn training_runs_keep_only_their_last_epoch() {
        let dir = std::env::temp_dir().join(format!("snic-discover-{}", std::process::id()));
        let _ = fs::remove_dir_all(&dir);
        for (lambda, epoch) in [(0, 1), (0, 2), (0, 10), (3, 1)] {
            let d = dir.join(format!("lambda_{lambda}/ckpt_{epoch}"));
            fs::create_dir_all(&d).unwrap();
            fs::write(d.join("model.snck"), b"").unwrap();
        }
        fs::create_dir_all(dir.join("extra")).unwrap();
        fs::write(dir.join("extra/model.snck"), b"").unwrap();
        let found = discover_checkpoints(&dir).unwrap();
        let rel: Vec<String> =
            found.iter().map(|p| p.strip_prefix(&dir).unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(rel, vec!["extra/model.snck", "lambda_0/ckpt_10/model.snck", "lambda_3/ckpt_1/model.snck"]);
        assert_eq!(discover_checkpoints(&dir.join("lambda_0/ckpt_2")).unwrap(), vec![dir.join("lambda_0/ckpt_2/model.snck")]);
        fs::remove_dir_all(&dir).unwrap();
    }
}
