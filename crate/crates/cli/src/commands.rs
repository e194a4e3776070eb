use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use serde::Serialize;

use cebd_core::data::{
    frame_path, index_dataset, synthetic, DatasetManifest, Split, SplitRule,
};
use cebd_core::forward::synthesize_with;
use cebd_core::train::{
    evaluate, sweep, Checkpoint, Duty, EvalOptions, SweepConfig, TrainConfig, TrainOptions,
    Trainer,
};
use cebd_core::{
    add_noise, search_codes, toy_translation_scene, CodedSnapshot, Direction, ExposureCode,
    FrameStack, Image, SearchParams,
};

use crate::{
    plot, AmbiguityArgs, CodeSearchArgs, Command, DeblurArgs, EvalArgs, Indices,
    IngestArgs, Preset, SimulateArgs, SplitArg, SweepArgs, ToyDatasetArgs, TrainArgs, Usage,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::CodeSearch(a) => code_search(a),
        Command::Simulate(a) => simulate(a),
        Command::AmbiguityDemo(a) => ambiguity_demo(a),
        Command::ToyDataset(a) => toy_dataset(a),
        Command::Ingest(a) => ingest(a),
        Command::Train(a) => train(a),
        Command::Decompose(a) => decompose(&a.checkpoint, &a.input, &a.indices, &a.out),
        Command::Deblur(DeblurArgs {
            checkpoint,
            input,
            out,
        }) => decompose(&checkpoint, &input, &Indices::Mid, &out),
        Command::Eval(a) => eval(a),
        Command::Sweep(a) => run_sweep(a),
    }
}

fn out_dir(out: &Path) -> Result<&Path> {
    fs::create_dir_all(out).with_context(|| format!("creating output directory {}", out.display()))?;
    Ok(out)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn parse_code(s: &str) -> Result<ExposureCode> {
    Ok(s.parse::<ExposureCode>()?)
}

fn code_search(a: CodeSearchArgs) -> Result<()> {
    let mut p = SearchParams::new(a.length, a.ones, a.top, !a.allow_symmetric);
    p.samples = a.samples;
    p.seed = a.seed;
    let ranked = search_codes(&p)?;
    let mut table = String::from("rank\tcode\tmin_nondc\tvariance\tsymmetric\n");
    for (i, r) in ranked.iter().enumerate() {
        table.push_str(&format!(
            "{}\t{}\t{:.9}\t{:.9}\t{}\n",
            i + 1,
            r.code,
            r.score.min_nondc,
            r.score.variance,
            r.code.is_symmetric()
        ));
    }
    print!("{table}");
    if let Some(out) = a.out {
        write(&out_dir(&out)?.join("codes.tsv"), &table)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SnapshotSidecar<'a> {
    code: String,
    source: &'a Path,
    start: usize,
    noise_sigma: f64,
    seed: u64,
    normalization: cebd_core::Normalization,
    height: usize,
    width: usize,
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let code = parse_code(&a.code)?;
    let frames = (a.start..a.start + code.len())
        .map(|i| Image::load_png(&frame_path(&a.frames, i)))
        .collect::<cebd_core::Result<Vec<_>>>()?;
    let stack = FrameStack::new(frames)?;
    let clean = synthesize_with(&stack, &code, a.normalization.into())?;
    let snap = add_noise(&clean, a.noise_sigma, a.seed)?;

    let out = out_dir(&a.out)?;
    snap.image.save_png(&out.join("snapshot.png"))?;
    let sidecar = SnapshotSidecar {
        code: code.id_string(),
        source: &a.frames,
        start: a.start,
        noise_sigma: a.noise_sigma,
        seed: a.seed,
        normalization: snap.normalization,
        height: snap.image.height(),
        width: snap.image.width(),
    };
    write(&out.join("snapshot.json"), &serde_json::to_string_pretty(&sidecar)?)?;
    println!("{}", out.join("snapshot.png").display());
    Ok(())
}

#[derive(Serialize)]
struct AmbiguityReport {
    code: String,
    symmetric: bool,
    identical: bool,
    max_abs_diff: f32,
    note: String,
}

/// Repeats a one-row image so it is visible as a strip.
fn strip(row: &Image, rows: usize) -> Result<Image> {
    let (_, w, c) = row.shape();
    let data = (0..rows).flat_map(|_| row.data().iter().copied()).collect();
    Ok(Image::new(rows, w, c, data)?)
}

fn ambiguity_demo(a: AmbiguityArgs) -> Result<()> {
    let code = parse_code(&a.code)?;
    let snap = |dir| -> Result<Image> {
        let scene = toy_translation_scene(a.width, a.extent, a.shift, dir, code.len())?;
        Ok(cebd_core::synthesize_coded_blur(&scene, &code)?.image)
    };
    let fwd = snap(Direction::Forward)?;
    let bwd = snap(Direction::Backward)?;
    let diff = fwd.max_abs_diff(&bwd);
    let symmetric = code.is_symmetric();
    let note = if symmetric {
        "symmetric code: directions indistinguishable".to_string()
    } else {
        format!("asymmetric code: directions distinguishable (max difference {diff:.4})")
    };

    let out = out_dir(&a.out)?;
    strip(&fwd, 16)?.save_png(&out.join("forward.png"))?;
    strip(&bwd, 16)?.save_png(&out.join("backward.png"))?;
    plot::profiles(fwd.data(), bwd.data())?.save_png(&out.join("profile.png"))?;
    let report = AmbiguityReport {
        code: code.id_string(),
        symmetric,
        identical: fwd == bwd,
        max_abs_diff: diff,
        note: note.clone(),
    };
    write(&out.join("ambiguity.json"), &serde_json::to_string_pretty(&report)?)?;
    println!("{note}");
    Ok(())
}

fn toy_dataset(a: ToyDatasetArgs) -> Result<()> {
    let cfg = synthetic::ToySceneConfig {
        height: a.height,
        width: a.width,
        frames: a.frames,
        objects: a.objects,
        ..Default::default()
    };
    let out = out_dir(&a.out)?;
    for id in synthetic::write_toy_dataset(out, a.scenes, &cfg, a.reversed_pairs, a.seed)? {
        println!("{}", out.join(id).display());
    }
    Ok(())
}

fn ingest(a: IngestArgs) -> Result<()> {
    let (rule, split) = match a.split {
        SplitArg::All => (SplitRule::All, Split::Train),
        SplitArg::Train => (SplitRule::TrainFraction(a.train_fraction), Split::Train),
        SplitArg::Test => (SplitRule::TrainFraction(a.train_fraction), Split::Test),
    };
    let m = index_dataset(&a.root, rule, split, a.window)?;
    let name = match a.split {
        SplitArg::All => "all",
        SplitArg::Train => "train",
        SplitArg::Test => "test",
    };
    let path = out_dir(&a.out)?.join(format!("{name}.manifest"));
    m.save(&path)?;
    println!(
        "{}\t{} videos\t{} windows of {}",
        path.display(),
        m.videos.len(),
        m.window_count(a.window),
        a.window
    );
    Ok(())
}

fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    DatasetManifest::load(path).with_context(|| format!("loading manifest {}", path.display()))
}

fn train(a: TrainArgs) -> Result<()> {
    let out = out_dir(&a.out)?.to_path_buf();
    let opts = TrainOptions {
        out_dir: Some(out.clone()),
    };
    let mut t = if let Some(ckpt) = &a.resume {
        let ckpt = Checkpoint::load(ckpt)?;
        let cfg = ckpt
            .train
            .clone()
            .ok_or_else(|| Usage("checkpoint has no training config; cannot resume".into()))?;
        let (train_set, val_set) = datasets(&cfg, &a)?;
        Trainer::from_checkpoint(&ckpt, train_set, val_set, opts)?
    } else {
        let mut cfg = match &a.config {
            Some(p) => TrainConfig::load(p)?,
            None => match a.preset {
                Preset::Default => TrainConfig::default(),
                Preset::Tiny => TrainConfig::tiny(),
            },
        };
        if let Some(s) = a.seed {
            cfg.seed = s;
        }
        if let Some(e) = a.epochs {
            cfg.epochs = e;
        }
        cfg.validate()?;
        let (train_set, val_set) = datasets(&cfg, &a)?;
        write(&out.join("config.toml"), &cfg.to_toml()?)?;
        Trainer::new(cfg, train_set, val_set, opts)?
    };
    t.run(a.max_steps)?;

    let mut log = String::new();
    for e in t.epoch_logs() {
        log.push_str(&e.line());
        log.push('\n');
    }
    write(&out.join("epochs.log"), &log)?;
    if let Some(r) = t.last_eval() {
        write(&out.join("val.tsv"), &r.to_table())?;
        println!("val psnr {:.3} dB ssim {:.4}", r.psnr, r.ssim);
    }
    t.checkpoint()?.save(&out.join("last.ckpt"))?;
    println!("step {} of {}; checkpoints in {}", t.step(), t.total_steps(), out.display());
    Ok(())
}

fn datasets(cfg: &TrainConfig, a: &TrainArgs) -> Result<(DatasetManifest, Option<DatasetManifest>)> {
    let train = a
        .train_manifest
        .clone()
        .or_else(|| cfg.data.train_manifest.clone())
        .ok_or_else(|| Usage("no training manifest: pass --train-manifest or set data.train_manifest".into()))?;
    let val = a.val_manifest.clone().or_else(|| cfg.data.val_manifest.clone());
    Ok((load_manifest(&train)?, val.as_deref().map(load_manifest).transpose()?))
}

fn decompose(checkpoint: &Path, input: &Path, indices: &Indices, out: &Path) -> Result<()> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let net = ckpt.build_network()?;
    let code = net.config().code.clone();
    let n = code.len();
    let wanted: Option<Vec<usize>> = match indices {
        Indices::All => None,
        Indices::Mid => Some(vec![n / 2]),
        Indices::List(v) => Some(v.clone()),
    };
    if let Some(&bad) = wanted.iter().flatten().find(|&&i| i >= n) {
        return Err(cebd_core::Error::IndexOutOfRange { index: bad, len: n }.into());
    }

    let mut image = Image::load_png(input)?;
    let want_c = net.config().image_channels;
    if image.channels() == 1 && want_c == 3 {
        let data = image.data().iter().flat_map(|&v| [v, v, v]).collect();
        image = Image::new(image.height(), image.width(), 3, data)?;
    }
    let snapshot = CodedSnapshot {
        image,
        code,
        noise_sigma: 0.0,
        normalization: ckpt.train.as_ref().map(|t| t.normalization).unwrap_or_default(),
    };
    let frames = net.decompose(&snapshot, wanted.as_deref())?;
    let chosen: Vec<usize> = wanted
        .map(|mut v| {
            v.sort_unstable();
            v.dedup();
            v
        })
        .unwrap_or_else(|| (0..n).collect());

    let out = out_dir(out)?;
    let mut listing = String::from("index\tt\tpath\n");
    for ((img, t), i) in frames.frames().iter().zip(frames.indices()).zip(&chosen) {
        let path = out.join(format!("frame_{i:02}.png"));
        img.save_png(&path)?;
        listing.push_str(&format!("{i}\t{t:.6}\t{}\n", path.display()));
    }
    write(&out.join("frames.tsv"), &listing)?;
    print!("{listing}");
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let net = ckpt.build_network()?;
    let manifest = load_manifest(&a.manifest)?;
    let stored = ckpt.train.as_ref();
    let opts = EvalOptions {
        noise_sigma: a
            .noise_sigma
            .unwrap_or_else(|| stored.map_or(0.0, |t| t.eval_noise_sigma)),
        seed: a.seed,
        normalization: stored.map(|t| t.normalization).unwrap_or_default(),
        crop: a.crop,
    };
    let report = evaluate(&net, &manifest, net.config().frames(), &opts)?;
    let table = report.to_table();
    print!("{table}");
    if let Some(out) = a.out {
        let out = out_dir(&out)?;
        write(&out.join("eval.tsv"), &table)?;
        write(&out.join("eval.json"), &report.to_json()?)?;
    }
    Ok(())
}

fn run_sweep(a: SweepArgs) -> Result<()> {
    let cfg = SweepConfig::load(&a.config)?;
    let duties = cfg
        .duty_ratios
        .iter()
        .map(|d| d.parse::<Duty>())
        .collect::<cebd_core::Result<Vec<_>>>()?;
    let train_path: PathBuf = cfg
        .train
        .data
        .train_manifest
        .clone()
        .ok_or_else(|| Usage("sweep config needs train.data.train_manifest".into()))?;
    let train_set = load_manifest(&train_path)?;
    let eval_set = cfg.train.data.val_manifest.as_deref().map(load_manifest).transpose()?;
    let out = out_dir(&a.out)?;
    let table = sweep(&cfg.lengths, &duties, &cfg.train, &train_set, eval_set.as_ref(), Some(out));
    let text = table.to_table();
    write(&out.join("sweep.tsv"), &text)?;
    write(&out.join("sweep.json"), &serde_json::to_string_pretty(&table)?)?;
    print!("{text}");
    Ok(())
}
