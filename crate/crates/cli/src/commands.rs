use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::ArgMatches;
use eegdiff_core::checkpoint::Checkpoint;
use eegdiff_core::classifier::{self, build_classifier, evaluate_threaded, train_classifier, ClassifierConfig};
use eegdiff_core::datagen::{generate_instance, ClassBand, SynthSpec};
use eegdiff_core::diffusion::{self, sample_efdms, train_diffusion, DiffusionConfig};
use eegdiff_core::efdm::{efdms_from_recording, to_rgb_triple, EfdmConfig, EfdmDataset};
use eegdiff_core::harness::{emit_report, emit_synthetic, eval_on_synthetic, run_two_arm, ExperimentPlan};
use eegdiff_core::signal::{default_wsize, read_recording, write_binary};
use eegdiff_core::{Error, Result};

use crate::{
    Arch, BuildEfdm, ClassifierFlags, Cli, Command, Eval, Experiment, ExportImage, GenData, Global, ImageFormat,
    PlanFlags, Sample, SyntheticExp, TrainClassifier, TrainDiffusion, TwoArm,
};

pub fn run(cli: &Cli, matches: &ArgMatches) -> Result<()> {
    let g = &cli.global;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::GenData(a) => gen_data(g, a),
        Command::BuildEfdm(a) => build_efdm(g, a),
        Command::TrainDiffusion(a) => train_diffusion_cmd(g, a),
        Command::Sample(a) => sample(g, a),
        Command::TrainClassifier(a) => train_classifier_cmd(g, a, sub),
        Command::Eval(a) => eval(g, a),
        Command::Experiment(Experiment::TwoArm(a)) => two_arm(g, a, matches, sub.subcommand().unwrap().1),
        Command::Experiment(Experiment::Synthetic(a)) => synthetic(g, a),
        Command::ExportImage(a) => export_image(g, a),
    }
}

fn log_config(command: &str, entries: &[(&str, String)]) {
    log::info!("{command} resolved config:");
    for (k, v) in entries {
        log::info!("  {k} = {v}");
    }
}

fn global_entries(g: &Global) -> Vec<(&'static str, String)> {
    vec![
        ("seed", g.seed.to_string()),
        ("threads", g.threads.to_string()),
        ("out_dir", g.out_dir.display().to_string()),
    ]
}

fn out_dir(g: &Global) -> Result<&Path> {
    fs::create_dir_all(&g.out_dir).map_err(|e| Error::Io { path: g.out_dir.clone(), source: e })?;
    Ok(&g.out_dir)
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn explicit(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine) | Some(ValueSource::EnvVariable))
}

fn parse_list(text: &str) -> Vec<String> {
    text.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn parse_class(text: &str) -> Result<ClassBand> {
    let parts: Vec<&str> = text.split(':').collect();
    let bad = || Error::Validation(format!("class '{text}' must be label:center_hz:width_hz:amplitude"));
    if parts.len() != 4 || parts[0].is_empty() {
        return Err(bad());
    }
    let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
    Ok(ClassBand::new(parts[0], num(parts[1])?, num(parts[2])?, num(parts[3])?))
}

fn gen_data(g: &Global, a: &GenData) -> Result<()> {
    let spec = SynthSpec {
        n_channels: a.n_channels,
        sample_rate_hz: a.sample_rate,
        duration_s: a.duration,
        classes: a.classes.iter().map(|c| parse_class(c)).collect::<Result<_>>()?,
        noise_sigma: a.noise_sigma,
        tones: a.tones,
        one_over_f: a.one_over_f,
        seed: g.seed,
    };
    spec.validate()?;
    let mut entries = global_entries(g);
    entries.extend([
        ("classes", a.classes.join(",")),
        ("n_channels", spec.n_channels.to_string()),
        ("sample_rate", spec.sample_rate_hz.to_string()),
        ("duration", spec.duration_s.to_string()),
        ("noise_sigma", spec.noise_sigma.to_string()),
        ("tones", spec.tones.to_string()),
        ("one_over_f", spec.one_over_f.to_string()),
        ("instances", a.instances.to_string()),
        ("first_instance", a.first_instance.to_string()),
    ]);
    log_config("gen-data", &entries);
    if g.dry_run {
        return Ok(());
    }
    let dir = out_dir(g)?;
    for (k, class) in spec.classes.iter().enumerate() {
        for i in a.first_instance..a.first_instance + a.instances {
            let rec = generate_instance(&spec, k, i)?;
            let path = dir.join(format!("{}_{i:04}.eegr", class.label));
            write_binary(&rec, &path)?;
        }
    }
    log::info!("wrote {} recordings to {}", spec.classes.len() * a.instances, dir.display());
    Ok(())
}

/// `sad_0003.eegr` → `sad`.
fn label_from_path(path: &Path) -> String {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    match stem.rfind('_') {
        Some(i) if i > 0 => stem[..i].to_string(),
        _ => stem,
    }
}

fn build_efdm(g: &Global, a: &BuildEfdm) -> Result<()> {
    let io_err = |e| Error::Io { path: a.input.clone(), source: e };
    let mut files: Vec<PathBuf> = fs::read_dir(&a.input)
        .map_err(io_err)?
        .map(|e| e.map(|e| e.path()).map_err(io_err))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .filter(|p| p.is_file())
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::Validation(format!("no recordings in {}", a.input.display())));
    }
    let classes = match parse_list(&a.classes) {
        c if c.is_empty() => files.iter().map(|p| label_from_path(p)).collect::<BTreeSet<_>>().into_iter().collect(),
        c => c,
    };
    let mut entries = global_entries(g);
    entries.extend([
        ("input", a.input.display().to_string()),
        ("output", a.output.clone()),
        ("classes", classes.join(",")),
        ("recordings", files.len().to_string()),
        ("sample_rate", a.sample_rate.to_string()),
        ("cut_hz", a.cut_hz.to_string()),
        ("image_size", a.image_size.to_string()),
    ]);
    // Window geometry follows the first recording's sample rate.
    let rate = read_recording(&files[0], a.sample_rate, "")?.sample_rate_hz;
    let cut = a.cut_hz.min(rate / 2.0);
    let wsize = if a.wsize == 0 { default_wsize(rate, cut, a.image_size) } else { a.wsize };
    let cfg = EfdmConfig { wsize, hop: if a.hop == 0 { wsize } else { a.hop }, cut_hz: cut, size: a.image_size };
    entries.push(("wsize", cfg.wsize.to_string()));
    entries.push(("hop", cfg.hop.to_string()));
    log_config("build-efdm", &entries);
    if g.dry_run {
        return Ok(());
    }
    let mut data = EfdmDataset::new(classes, a.image_size, a.image_size)?;
    for path in &files {
        let rec = read_recording(path, a.sample_rate, &label_from_path(path))?;
        let rec = rec.with_ids("", path.file_stem().unwrap_or_default().to_string_lossy());
        for e in efdms_from_recording(&rec, &cfg)? {
            data.push(e)?;
        }
    }
    let path = out_dir(g)?.join(&a.output);
    write_file(&path, &data.to_bytes())?;
    log::info!("{} maps over {} classes", data.len(), data.num_classes());
    Ok(())
}

fn parse_epochs(text: &str) -> Result<Vec<usize>> {
    parse_list(text)
        .iter()
        .map(|s| s.parse().map_err(|_| Error::Validation(format!("checkpoint epoch '{s}' is not an integer"))))
        .collect()
}

fn train_diffusion_cmd(g: &Global, a: &TrainDiffusion) -> Result<()> {
    let cfg = DiffusionConfig {
        image_size: a.image_size,
        steps: a.diffusion_steps,
        lr: a.lr,
        batch_size: a.batch_size,
        channels: a.num_channels,
        res_blocks: a.num_res_blocks,
        seed: g.seed,
    };
    let mut saves = parse_epochs(&a.checkpoints)?;
    saves.retain(|&e| e <= a.epochs);
    saves.push(a.epochs);
    saves.sort_unstable();
    saves.dedup();
    let mut entries = global_entries(g);
    entries.extend([
        ("data", a.data.display().to_string()),
        ("class", a.class.clone()),
        ("epochs", a.epochs.to_string()),
        ("checkpoints", saves.iter().map(usize::to_string).collect::<Vec<_>>().join(",")),
        ("image_size", cfg.image_size.to_string()),
        ("diffusion_steps", cfg.steps.to_string()),
        ("noise_schedule", "linear".to_string()),
        ("lr", cfg.lr.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("num_channels", cfg.channels.to_string()),
        ("num_res_blocks", cfg.res_blocks.to_string()),
    ]);
    log_config("train-diffusion", &entries);
    cfg.validate()?;
    if g.dry_run {
        return Ok(());
    }
    let data = EfdmDataset::load(&a.data)?.of_class(&a.class)?;
    if data.is_empty() {
        return Err(Error::Validation(format!("no maps of class '{}' in {}", a.class, a.data.display())));
    }
    let dir = out_dir(g)?.to_path_buf();
    let ckpt_path = |epoch: usize| dir.join(format!("diffusion_{}_e{epoch}.ckpt", a.class));
    if saves.contains(&0) {
        let untrained = cfg.build()?;
        let ck = diffusion::to_checkpoint(&untrained, &cfg, &a.class, 0)?;
        write_file(&ckpt_path(0), &ck.to_bytes())?;
    }
    let (_, losses) = train_diffusion(&cfg, &data, a.epochs, |epoch, model, _| {
        if saves.contains(&epoch) {
            let ck = diffusion::to_checkpoint(model, &cfg, &a.class, epoch)?;
            write_file(&ckpt_path(epoch), &ck.to_bytes())?;
        }
        Ok(())
    })?;
    let mut csv = String::from("epoch,loss\n");
    for (e, l) in losses.iter().enumerate() {
        csv.push_str(&format!("{},{l}\n", e + 1));
    }
    write_file(&dir.join(format!("diffusion_{}_loss.csv", a.class)), csv.as_bytes())
}

fn sample(g: &Global, a: &Sample) -> Result<()> {
    let loaded = diffusion::load_denoiser(&a.checkpoint)?;
    let classes = match parse_list(&a.classes) {
        c if c.is_empty() => vec![loaded.class.clone()],
        c => c,
    };
    let mut entries = global_entries(g);
    entries.extend([
        ("checkpoint", a.checkpoint.display().to_string()),
        ("class", loaded.class.clone()),
        ("epoch", loaded.epoch.to_string()),
        ("n", a.n.to_string()),
        ("output", a.output.clone()),
        ("classes", classes.join(",")),
        ("diffusion_steps", loaded.config.steps.to_string()),
    ]);
    log_config("sample", &entries);
    if g.dry_run {
        return Ok(());
    }
    let sched = loaded.config.schedule()?;
    let maps = sample_efdms(&loaded.model, a.n, &sched, g.seed, &loaded.class, g.threads)?;
    let size = loaded.config.image_size;
    let data = EfdmDataset::from_items(classes, size, size, maps)?;
    write_file(&out_dir(g)?.join(&a.output), &data.to_bytes())
}

fn classifier_config(flags: &ClassifierFlags, m: &ArgMatches, data: &EfdmDataset, seed: u64) -> ClassifierConfig {
    let mut cfg = match flags.arch {
        Arch::Desk => ClassifierConfig::desk(data.height(), data.num_classes()),
        Arch::Full => ClassifierConfig::full_scale(data.height(), data.num_classes()),
    };
    cfg.width = data.width();
    if flags.arch == Arch::Desk || explicit(m, "lr") {
        cfg.lr = flags.lr;
    }
    cfg.batch_size = flags.batch_size;
    cfg.seed = seed;
    cfg
}

fn classifier_entries(cfg: &ClassifierConfig, flags: &ClassifierFlags) -> Vec<(&'static str, String)> {
    vec![
        ("arch", format!("{:?}", flags.arch).to_lowercase()),
        ("lr", cfg.lr.to_string()),
        ("batch_size", cfg.batch_size.to_string()),
        ("stages", format!("{:?}", cfg.stages)),
        ("hidden", format!("{:?}", cfg.hidden)),
    ]
}

fn train_classifier_cmd(g: &Global, a: &TrainClassifier, m: &ArgMatches) -> Result<()> {
    let train = EfdmDataset::load(&a.train)?;
    let val = EfdmDataset::load(&a.val)?;
    let cfg = classifier_config(&a.model, m, &train, g.seed);
    let mut entries = global_entries(g);
    entries.extend([
        ("train", a.train.display().to_string()),
        ("val", a.val.display().to_string()),
        ("epochs", a.epochs.to_string()),
    ]);
    entries.extend(classifier_entries(&cfg, &a.model));
    log_config("train-classifier", &entries);
    cfg.validate()?;
    if g.dry_run {
        return Ok(());
    }
    let mut model = build_classifier(&cfg)?;
    let record = train_classifier(&mut model, &train, &val, a.epochs, g.seed)?;
    if let Some(acc) = record.val_accuracy.last() {
        log::info!("final validation accuracy {acc:.4}");
    }
    let dir = out_dir(g)?;
    let ck = classifier::to_checkpoint(&model, train.class_names())?;
    write_file(&dir.join("classifier.ckpt"), &ck.to_bytes())?;
    write_file(&dir.join("classifier_curve.csv"), record.to_csv().as_bytes())
}

fn eval(g: &Global, a: &Eval) -> Result<()> {
    let mut entries = global_entries(g);
    entries.extend([("checkpoint", a.checkpoint.display().to_string()), ("data", a.data.display().to_string())]);
    log_config("eval", &entries);
    let (model, classes) = classifier::from_checkpoint(&Checkpoint::load(&a.checkpoint)?)?;
    let data = EfdmDataset::load(&a.data)?;
    if data.class_names() != classes.as_slice() {
        return Err(Error::Validation(format!(
            "dataset classes {:?} differ from classifier classes {classes:?}",
            data.class_names()
        )));
    }
    if g.dry_run {
        return Ok(());
    }
    let ev = evaluate_threaded(&model, &data, g.threads)?;
    log::info!("accuracy {:.4} loss {:.4} on {} maps", ev.accuracy, ev.loss, data.len());
    let mut csv = String::from("metric,value\n");
    csv.push_str(&format!("accuracy,{}\nloss,{}\nmacro_recall,{}\n", ev.accuracy, ev.loss, ev.macro_recall()));
    for (c, r) in classes.iter().zip(&ev.per_class) {
        csv.push_str(&format!("recall_{c},{r}\n"));
    }
    write_file(&out_dir(g)?.join("eval.csv"), csv.as_bytes())
}

fn resolve_plan(g: &Global, p: &PlanFlags, root: &ArgMatches, m: &ArgMatches) -> Result<ExperimentPlan> {
    let mut plan = match &p.plan {
        Some(path) => ExperimentPlan::load(path)?,
        None => ExperimentPlan::default(),
    };
    let file = p.plan.is_some();
    let pairs = [
        ("n_runs", p.n_runs),
        ("epochs", p.epochs),
        ("train_per_class", p.train_per_class),
        ("test_per_class", p.test_per_class),
        ("synth_per_class", p.synth_per_class),
    ];
    for (key, value) in pairs {
        if !file || explicit(m, key) {
            plan.set(key, &value.to_string())?;
        }
    }
    if !file || explicit(root, "seed") {
        plan.base_seed = g.seed;
    }
    if !file || explicit(root, "threads") {
        plan.threads = g.threads;
    }
    plan.validate()?;
    Ok(plan)
}

fn two_arm(g: &Global, a: &TwoArm, root: &ArgMatches, m: &ArgMatches) -> Result<()> {
    let plan = resolve_plan(g, &a.plan, root, m)?;
    let train = EfdmDataset::load(&a.train)?.take_per_class(plan.train_per_class);
    let test = EfdmDataset::load(&a.test)?.take_per_class(plan.test_per_class);
    let synth = EfdmDataset::load(&a.synth)?.take_per_class(plan.synth_per_class);
    let cfg = classifier_config(&a.model, m, &train, plan.base_seed);
    let plan_map = plan.to_map();
    let mut entries = vec![("out_dir", g.out_dir.display().to_string())];
    entries.extend(plan_map.iter().map(|(k, v)| (k.as_str(), v.clone())));
    entries.extend([
        ("train", format!("{} ({} maps)", a.train.display(), train.len())),
        ("test", format!("{} ({} maps)", a.test.display(), test.len())),
        ("synth", format!("{} ({} maps)", a.synth.display(), synth.len())),
    ]);
    entries.extend(classifier_entries(&cfg, &a.model));
    log_config("experiment two-arm", &entries);
    cfg.validate()?;
    if g.dry_run {
        return Ok(());
    }
    let report = run_two_arm(&plan, &cfg, &train, &test, &synth)?;
    for arm in &report.arms {
        let (best, epoch) = arm.max_average_accuracy()?;
        log::info!("arm {}: max average accuracy {best:.4} at epoch {epoch}", arm.name);
    }
    for path in emit_report(&report, out_dir(g)?)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn synthetic(g: &Global, a: &SyntheticExp) -> Result<()> {
    let mut entries = global_entries(g);
    entries.extend([
        ("classifier", a.classifier.display().to_string()),
        (
            "diffusion",
            a.diffusion.iter().map(|p| p.display().to_string()).collect::<Vec<_>>().join(","),
        ),
        ("n_samples", a.n_samples.to_string()),
    ]);
    log_config("experiment synthetic", &entries);
    if g.dry_run {
        return Ok(());
    }
    let (_, classes) = classifier::from_checkpoint(&Checkpoint::load(&a.classifier)?)?;
    let ev = eval_on_synthetic(&a.classifier, &a.diffusion, a.n_samples, g.seed, g.threads)?;
    for p in &ev.points {
        log::info!("diffusion epoch {}: accuracy {:.4}", p.epoch, p.accuracy);
    }
    for path in emit_synthetic(&ev.points, &classes, out_dir(g)?)? {
        log::info!("wrote {}", path.display());
    }
    Ok(())
}

fn export_image(g: &Global, a: &ExportImage) -> Result<()> {
    let ext = match a.format {
        ImageFormat::Pgm => "pgm",
        ImageFormat::Ppm => "ppm",
    };
    let mut entries = global_entries(g);
    entries.extend([
        ("data", a.data.display().to_string()),
        ("index", a.index.to_string()),
        ("format", ext.to_string()),
    ]);
    log_config("export-image", &entries);
    let data = EfdmDataset::load(&a.data)?;
    if a.index >= data.len() {
        return Err(Error::Validation(format!("index {} out of range for {} maps", a.index, data.len())));
    }
    if g.dry_run {
        return Ok(());
    }
    let e = data.get(a.index);
    let bytes = match a.format {
        ImageFormat::Pgm => e.to_pgm(),
        ImageFormat::Ppm => to_rgb_triple(e).to_ppm(),
    };
    write_file(&out_dir(g)?.join(format!("efdm_{}.{ext}", a.index)), &bytes)
}
