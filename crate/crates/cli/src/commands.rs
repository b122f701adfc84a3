use std::env;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use vfseg::cin::CinConfig;
use vfseg::data::{
    load_checkpoint, load_dataset, split_by_patient, synth_generate, MaskSet, Sample,
    SynthParams,
};
use vfseg::gradcam::{gradcam_map, region_importance, TargetScalar};
use vfseg::imgproc::{apply_pipeline, GrayImage, PipelineSpec};
use vfseg::losses::dice_score;
use vfseg::nn::Session;
use vfseg::region::{default_context, Region, ALL_REGIONS, NUM_REGIONS};
use vfseg::trainer::{
    ablate_context, ablate_preprocessing, ablate_stages, context_choices, evaluate,
    preprocessing_variants, TrainConfig,
};
use vfseg::viz;

use crate::{
    AblateArgs, AblateKind, ConfigArgs, EvalArgs, GradcamArgs, InferArgs, PreprocessArgs,
    PresetArg, SynthArgs, TrainArgs, OUT_ENV,
};

/// Default artifact location: `$VFSEG_OUT/<name>`, with the root
/// falling back to `./out`.
fn default_out(name: &str) -> PathBuf {
    env::var_os(OUT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
        .join(name)
}

fn parse_split(s: &str) -> Result<(usize, usize, usize)> {
    let parts: Vec<usize> = s
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(Into::into))
        .collect::<Result<_>>()
        .with_context(|| format!("bad split {s:?}"))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => bail!("split must have exactly 3 parts, got {s:?}"),
    }
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    s.split(',')
        .map(|p| p.trim().parse::<T>().map_err(Into::into))
        .collect::<Result<_>>()
        .with_context(|| format!("bad {what} list {s:?}"))
}

/// TOML config overlaid with flags; flags win.
fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg: TrainConfig = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(p) = args.preset {
        cfg.model = match p {
            PresetArg::Mini => CinConfig::mini(),
            PresetArg::Paper => CinConfig::paper(),
        };
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = args.lr {
        cfg.initial_lr = v;
    }
    if let Some(v) = args.seed {
        cfg.seed = v;
        cfg.model.seed = v;
    }
    if let Some(v) = args.theta {
        cfg.theta = v;
    }
    if let Some(v) = args.max_steps {
        cfg.max_steps = Some(v);
    }
    if let Some(v) = args.stages {
        cfg.model.stages = v;
        cfg.model.contexts = vec![default_context(); v.saturating_sub(1)];
    }
    if let Some(v) = args.resolution {
        cfg.model.resolution = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn save_gray(path: &Path, width: usize, height: usize, data: Vec<u8>) -> Result<()> {
    GrayImage::from_vec(width, height, data)?
        .save_png(path)
        .with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| default_out("dataset"));
    let mut params = SynthParams::with_ambiguity(args.ambiguity);
    params.size = args.size;
    let samples = synth_generate(&out, args.patients, args.frames, args.seed, &params)?;
    println!(
        "wrote {} frames ({} patients x {}) to {}",
        samples.len(),
        args.patients,
        args.frames,
        out.display()
    );
    Ok(())
}

pub fn preprocess(args: PreprocessArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| default_out("preprocess"));
    fs::create_dir_all(&out)?;
    let img = GrayImage::load_png(&args.image)?;

    for spec_text in &args.pipeline {
        let spec: PipelineSpec = spec_text.parse()?;
        let enhanced = apply_pipeline(&spec, &img)?;
        let path = out.join(format!("{}.png", spec_text.replace(',', "_")));
        enhanced.save_png(&path)?;
        println!("wrote {}", path.display());
    }

    if let Some(ckpt) = &args.checkpoint {
        let (model, _) = load_checkpoint::<f32>(ckpt)?;
        let (w, h) = (img.width(), img.height());
        let stack = model.enhance(&img)?;
        let n = stack.shape()[0];
        let stack4 = stack.reshaped(&[1, n, h, w])?;
        let mut sess = Session::new(&model.params);
        let input = sess.graph.constant(stack4);
        let xbar = model.pen.forward(&model.params, &mut sess, input)?;
        let fused = sess.graph.value(xbar);

        // shared scale across the three channels so relative
        // magnitudes survive into the PNGs
        let peak = fused.data().iter().cloned().fold(0.0f32, f32::max).max(1e-6);
        let to_u8 = |v: f32| (f64::from(v / peak) * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8;
        let hw = h * w;
        let mut avg = vec![0.0f32; hw];
        for c in 0..3 {
            let chan = &fused.data()[c * hw..(c + 1) * hw];
            for (a, &v) in avg.iter_mut().zip(chan) {
                *a += v / 3.0;
            }
            let path = out.join(format!("channel_{c}.png"));
            save_gray(&path, w, h, chan.iter().map(|&v| to_u8(v)).collect())?;
            println!("wrote {}", path.display());
        }
        let path = out.join("average.png");
        save_gray(&path, w, h, avg.into_iter().map(to_u8).collect())?;
        println!("wrote {}", path.display());
    }
    Ok(())
}

pub fn train(args: TrainArgs) -> Result<()> {
    let cfg = resolve_config(&args.config)?;
    let out = args.out.unwrap_or_else(|| default_out("train"));
    let samples = load_dataset(&args.data)?;
    let ratios = parse_split(&args.split)?;
    let (train_set, val_set, test_set) = split_by_patient(&samples, ratios, cfg.seed)?;
    fs::create_dir_all(&out)?;
    fs::write(out.join("config.toml"), toml::to_string_pretty(&cfg)?)?;

    let mut result = vfseg::trainer::train(&cfg, &train_set, &val_set, Some(&out))?;
    println!(
        "trained {} steps; best epoch {} (val bolus Dice {:.4})",
        result.steps, result.best_epoch, result.best_val_bolus
    );

    if !test_set.is_empty() {
        let table = evaluate(&mut result.model, &test_set, cfg.theta)?;
        fs::write(out.join("eval_test.csv"), table.to_csv())?;
        print!("test split ({} images):\n{}", table.n_images, table.to_csv());
    }
    println!("artifacts in {}", out.display());
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| default_out("eval.csv"));
    let (mut model, _) = load_checkpoint::<f32>(&args.checkpoint)?;
    let samples = load_dataset(&args.data)?;
    let table = evaluate(&mut model, &samples, args.theta)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, table.to_csv())?;
    print!("{}", table.to_csv());
    println!("wrote {}", out.display());
    Ok(())
}

pub fn infer(args: InferArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| default_out("infer"));
    let (mut model, _) = load_checkpoint::<f32>(&args.checkpoint)?;

    let mut samples = Vec::new();
    let mut has_gt = Vec::new();
    if let Some(dir) = &args.data {
        let loaded = load_dataset(dir)?;
        has_gt.resize(loaded.len(), true);
        samples.extend(loaded);
    }
    for path in &args.image {
        let image = GrayImage::load_png(path)?;
        let masks = MaskSet::new(image.width(), image.height());
        let stem = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "image".into());
        samples.push(Sample {
            image,
            masks,
            patient_id: stem,
            frame_id: "raw".into(),
        });
        has_gt.push(false);
    }
    if samples.is_empty() {
        bail!("nothing to infer: pass --data and/or --image");
    }
    fs::create_dir_all(out.join("masks"))?;
    fs::create_dir_all(out.join("overlays"))?;

    let mut dice_sums = [0.0f64; NUM_REGIONS];
    let mut scored = 0usize;
    for (sample, &gt) in samples.iter().zip(&has_gt) {
        let (_, pred) = model.predict(&sample.image, args.theta)?;
        let (w, h) = (sample.image.width(), sample.image.height());
        let hw = w * h;
        let id = format!("{}_{}", sample.patient_id, sample.frame_id);
        for region in ALL_REGIONS {
            let r = region.index();
            let pr = &pred[r * hw..(r + 1) * hw];
            let mask_png: Vec<u8> = pr.iter().map(|&v| v * 255).collect();
            save_gray(
                &out.join("masks").join(format!("{id}_{}.png", region.name())),
                w,
                h,
                mask_png,
            )?;
            let over = viz::overlay(&sample.image, pr, sample.masks.channel(r));
            over.save(out.join("overlays").join(format!("{id}_{}.png", region.name())))?;
            if gt {
                dice_sums[r] += dice_score(pr, sample.masks.channel(r));
            }
        }
        if gt {
            scored += 1;
        }
    }
    if scored > 0 {
        println!("mean Dice over {scored} images:");
        for region in ALL_REGIONS {
            println!(
                "  {:<15} {:.4}",
                region.name(),
                dice_sums[region.index()] / scored as f64
            );
        }
    }
    println!("wrote masks and overlays to {}", out.display());
    Ok(())
}

pub fn gradcam(args: GradcamArgs) -> Result<()> {
    let out = args.out.unwrap_or_else(|| default_out("gradcam.png"));
    let (mut model, _) = load_checkpoint::<f32>(&args.checkpoint)?;
    let samples = load_dataset(&args.data)?;
    let sample = samples
        .get(args.index)
        .with_context(|| format!("index {} out of range ({} samples)", args.index, samples.len()))?;
    let target = Region::from_name(&args.target)
        .with_context(|| format!("unknown region {:?}", args.target))?;
    let scalar = if args.gt_masked {
        TargetScalar::GtMasked
    } else {
        TargetScalar::FullMap
    };

    let map = gradcam_map(&mut model, sample, target, args.block, scalar)?;
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    viz::heatmap_image(&map).save(&out)?;
    println!("wrote {}", out.display());

    if args.importance {
        println!("region importance for target {}:", target.name());
        for (region, score) in region_importance(&mut model, &samples, target, scalar)? {
            println!("  {:<15} {score:.4}", region.name());
        }
    }
    Ok(())
}

pub fn ablate(args: AblateArgs) -> Result<()> {
    let (kind, common) = match &args.which {
        AblateKind::Stages { common, .. } => ("stages", common),
        AblateKind::Preprocessing { common } => ("preprocessing", common),
        AblateKind::Context { common } => ("context", common),
    };
    let cfg = resolve_config(&common.config)?;
    let samples = load_dataset(&common.data)?;
    let ratios = parse_split(&common.split)?;
    let (train_set, val_set, test_set) = split_by_patient(&samples, ratios, cfg.seed)?;

    let table = match &args.which {
        AblateKind::Stages { list, seeds, .. } => {
            let list: Vec<usize> = parse_list(list, "stage")?;
            let seeds: Vec<u64> = parse_list(seeds, "seed")?;
            ablate_stages(&cfg, &list, &seeds, &train_set, &val_set, &test_set)?
        }
        AblateKind::Preprocessing { .. } => {
            ablate_preprocessing(&cfg, &preprocessing_variants(), &train_set, &val_set, &test_set)?
        }
        AblateKind::Context { .. } => {
            ablate_context(&cfg, &context_choices(), &train_set, &val_set, &test_set)?
        }
    };
    let out = common
        .out
        .clone()
        .unwrap_or_else(|| default_out(&format!("ablate_{kind}.csv")));
    if let Some(dir) = out.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(&out, table.to_csv())?;
    print!("{}", table.to_csv());
    println!("wrote {}", out.display());
    Ok(())
}
