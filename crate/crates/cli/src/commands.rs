use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use serde_json::json;
use subband::checkpoint::Checkpoint;
use subband::cost::{model_cost, write_cost_csv, write_cost_table};
use subband::data::{batches, load_cifar, load_mnist, BatchOptions, CifarVariant, Dataset, TrainTest};
use subband::frontend::{frequency_response, node_label, write_response_csv, write_response_pgm};
use subband::quant::{quant_sweep, write_sweep_csv, QuantSpec, QuantTarget, INPUT_BITS, WEIGHT_BITS};
use subband::seed::derive_seed;
use subband::train::{argmax, predict_proba, run_epoch, EvalResult, Protocol, TrainConfig, TrainState, RECORD_CSV_HEADER};
use subband::{Error, FrontendMode, Mode, Model, ModelConfig};

use crate::{CostArgs, DataArgs, EvalArgs, FreqArgs, QuantArgs, TrainArgs};

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    /// 1 usage or configuration, 2 data or file format, 3 numeric failure.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Numeric(_)) => 3,
            CliError::Core(_) => 2,
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Core(Error::Io { context: format!("writing {}", path.display()), source })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    fs::File::create(path).map(BufWriter::new).map_err(io_err(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(io_err(path))
}

/// Creates `path` and hands a buffered writer to `f`.
fn write_file(path: &Path, f: impl FnOnce(&mut BufWriter<fs::File>) -> std::io::Result<()>) -> Result<()> {
    let mut out = create(path)?;
    f(&mut out).and_then(|_| out.flush()).map_err(io_err(path))
}

fn load_data(args: &DataArgs, cfg: &ModelConfig) -> Result<TrainTest> {
    let kind = match &args.dataset {
        Some(k) => k.clone(),
        None => ["cifar100", "cifar10", "mnist"]
            .into_iter()
            .find(|p| cfg.name.starts_with(p))
            .map(str::to_string)
            .ok_or_else(|| usage(format!("cannot infer the dataset of config {:?}; pass --dataset", cfg.name)))?,
    };
    let data = match kind.as_str() {
        "mnist" => load_mnist(&args.data)?,
        "cifar10" => load_cifar(&args.data, CifarVariant::Ten)?,
        "cifar100" => load_cifar(&args.data, CifarVariant::Hundred)?,
        other => return Err(usage(format!("unknown dataset {other:?} (mnist, cifar10, cifar100)"))),
    };
    let (c, h, w) = data.train.image_dims();
    if [c, h, w] != cfg.input || data.train.classes != cfg.classes {
        return Err(Error::Shape(format!(
            "{kind} images are {c}x{h}x{w} with {} classes, config {:?} expects {:?} with {}",
            data.train.classes, cfg.name, cfg.input, cfg.classes
        ))
        .into());
    }
    Ok(data)
}

fn limited(ds: Dataset, limit: Option<usize>) -> Dataset {
    match limit {
        Some(n) => ds.take(n),
        None => ds,
    }
}

/// Rows of an earlier run's CSV up to and including `epoch`.
fn previous_rows(path: &Path, epoch: usize) -> Vec<String> {
    let Ok(text) = fs::read_to_string(path) else { return Vec::new() };
    text.lines()
        .skip(1)
        .filter(|l| l.split(',').next().and_then(|e| e.parse::<usize>().ok()).is_some_and(|e| e <= epoch))
        .map(str::to_string)
        .collect()
}

fn resume(a: &TrainArgs, path: &Path) -> Result<(Model, TrainState, TrainConfig)> {
    let overrides = [
        ("--frontend", a.frontend.is_some()),
        ("--batch-size", a.batch_size.is_some()),
        ("--lr", a.lr.is_some()),
        ("--no-augment", a.no_augment),
        ("--val-fraction", a.val_fraction.is_some()),
    ];
    if let Some((flag, _)) = overrides.iter().find(|(_, set)| *set) {
        return Err(usage(format!("{flag} cannot be changed when resuming")));
    }
    let ckpt = Checkpoint::load(path)?;
    if !ckpt.has_train_state() {
        return Err(usage(format!("{} holds no training state", path.display())));
    }
    let model: Model = ckpt.model()?;
    if let Some(c) = &a.config {
        if ModelConfig::load(c)? != *model.config() {
            return Err(Error::Config(format!("--config {c} differs from the checkpoint's configuration")).into());
        }
    }
    let (state, tcfg) = ckpt.train_state(&model)?;
    Ok((model, state, tcfg))
}

fn fresh(a: &TrainArgs) -> Result<(Model, TrainState, TrainConfig)> {
    let name = a.config.as_deref().ok_or_else(|| usage("--config is required unless --resume is given"))?;
    let mut cfg = ModelConfig::load(name)?;
    if let Some(m) = &a.frontend {
        cfg = cfg.with_frontend_mode(m.parse::<FrontendMode>()?)?;
    }
    let mut tcfg = TrainConfig::default();
    if let Some(b) = a.batch_size {
        tcfg.batch_size = b;
    }
    if let Some(lr) = a.lr {
        tcfg.lr = lr;
    }
    if let Some(v) = a.val_fraction {
        tcfg.val_fraction = v;
    }
    tcfg.augment = !a.no_augment;
    let model = Model::build(&cfg, a.seed)?;
    let state = TrainState::new(&model, &tcfg, a.seed);
    Ok((model, state, tcfg))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let (mut model, mut state, tcfg) = match &a.resume {
        Some(path) => resume(a, path)?,
        None => fresh(a)?,
    };
    model.set_parallel(rayon::current_num_threads() > 1);
    let cfg = model.config().clone();
    let data = load_data(&a.data, &cfg)?;
    let train_all = limited(data.train, a.limit);
    let (train, val) = train_all.split_validation(tcfg.val_fraction, derive_seed(state.seed, 0x5EED_DA7A))?;
    let test = limited(data.test, a.test_limit);

    create_dir(&a.out)?;
    write_file(&a.out.join("config.toml"), |o| o.write_all(cfg.to_toml().as_bytes()))?;
    let csv_path = a.out.join("train.csv");
    let mut rows = previous_rows(&csv_path, state.epoch);
    let (params, bytes) = model.parameter_count();
    eprintln!(
        "{}: {params} parameters ({:.1} MB), {} train / {} val / {} test, seed {}, epoch {} -> {}",
        cfg.name,
        bytes as f64 / 1e6,
        train.len(),
        val.len(),
        test.len(),
        state.seed,
        state.epoch,
        a.epochs
    );

    let mut last_val = None;
    while state.epoch < a.epochs {
        let start = Instant::now();
        let epoch = state.epoch + 1;
        let every = a.progress;
        let mut progress = |b: usize, total: usize, loss: f64| {
            if every > 0 && ((b + 1).is_multiple_of(every) || b + 1 == total) {
                let t = start.elapsed().as_secs_f64();
                let eta = t / (b + 1) as f64 * (total - b - 1) as f64;
                eprintln!("  epoch {epoch} batch {}/{total} loss {loss:.4} {t:.0}s eta {eta:.0}s", b + 1);
            }
        };
        let rec = run_epoch(&mut model, &train, &val, &mut state, &tcfg, &mut progress)?;
        rows.push(rec.csv_row());
        write_file(&csv_path, |o| {
            writeln!(o, "{RECORD_CSV_HEADER}")?;
            rows.iter().try_for_each(|r| writeln!(o, "{r}"))
        })?;
        let ckpt = Checkpoint::capture(&model, Some((&state, &tcfg)));
        ckpt.save(a.out.join(format!("epoch-{:03}.ckpt", state.epoch)))?;
        ckpt.save(a.out.join("last.ckpt"))?;
        eprintln!(
            "epoch {} loss {:.4} train {:.2}% val {:.2}% lr {:e} ({:.0}s)",
            rec.epoch, rec.train_loss, rec.train_acc, rec.val_acc, rec.lr_main, rec.seconds
        );
        last_val = Some(rec.val_acc);
    }

    let probs = predict_proba(&model, &test, Protocol::Center, 256, None)?;
    let res = EvalResult::from_probs(Protocol::Center, &probs, &test.labels)?;
    let summary = json!({
        "config": cfg.name,
        "seed": state.seed,
        "epochs": state.epoch,
        "val_top1": last_val,
        "test_samples": res.samples,
        "test_top1": res.top1,
        "test_top5": res.top5,
    });
    write_file(&a.out.join("result.json"), |o| writeln!(o, "{summary}"))?;
    println!("{summary}");
    Ok(())
}

fn dump_activations(model: &Model, test: &Dataset, count: usize, dir: &Path) -> Result<()> {
    create_dir(dir)?;
    let first = test.take(count.max(1));
    let batch = batches(&first, &BatchOptions::inference(first.len()), 0)?
        .next()
        .ok_or_else(|| usage("no test images to dump"))??;
    let (logits, cache) = model.forward(&batch.images, Mode::Eval)?;
    let mut named = vec![("input".to_string(), &batch.images)];
    named.extend(cache.activations());
    named.push(("logits".to_string(), &logits));
    let mut lines = vec!["name\tn\tc\th\tw\tfile".to_string()];
    for (name, t) in named {
        let file = format!("{name}.f32");
        let bytes: Vec<u8> = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
        write_file(&dir.join(&file), |o| o.write_all(&bytes))?;
        let [n, c, h, w] = t.shape().dims();
        lines.push(format!("{name}\t{n}\t{c}\t{h}\t{w}\t{file}"));
    }
    write_file(&dir.join("manifest.tsv"), |o| lines.iter().try_for_each(|l| writeln!(o, "{l}")))
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let protocol: Protocol = a.protocol.parse()?;
    let model: Model = Checkpoint::load(&a.checkpoint)?.model()?;
    let data = load_data(&a.data, model.config())?;
    let test = limited(data.test, a.limit);
    let probs = predict_proba(&model, &test, protocol, a.batch_size, None)?;
    let res = EvalResult::from_probs(protocol, &probs, &test.labels)?;
    if let Some(path) = &a.jsonl {
        write_file(path, |o| {
            test.labels.iter().enumerate().try_for_each(|(i, &label)| {
                let row = probs.sample(i);
                writeln!(o, "{}", json!({"index": i, "label": label, "pred": argmax(row), "probs": row}))
            })
        })?;
    }
    if let Some(dir) = &a.dump_activations {
        dump_activations(&model, &test, a.dump_count, dir)?;
    }
    let summary = json!({
        "config": model.config().name,
        "protocol": protocol.to_string(),
        "samples": res.samples,
        "top1": res.top1,
        "top5": res.top5,
    });
    println!("{summary}");
    Ok(())
}

pub fn cost(a: &CostArgs) -> Result<()> {
    let baseline = a.baseline.as_deref().map(ModelConfig::load).transpose()?.map(|c| model_cost(&c));
    if let Some(dir) = &a.csv {
        create_dir(dir)?;
    }
    for name in &a.configs {
        let cfg = ModelConfig::load(name)?;
        let r = model_cost(&cfg);
        let mut table = Vec::new();
        write_cost_table(&r, baseline.as_ref(), &mut table).expect("writing to memory");
        println!("{}", String::from_utf8_lossy(&table));
        if let Some(dir) = &a.csv {
            write_file(&dir.join(format!("{}.csv", cfg.name)), |o| write_cost_csv(&r, baseline.as_ref(), o))?;
        }
    }
    Ok(())
}

pub fn quant(a: &QuantArgs) -> Result<()> {
    let specs: Vec<QuantSpec> = if a.specs.is_empty() {
        let inputs = INPUT_BITS.iter().map(|&b| QuantSpec::new(QuantTarget::Input, b));
        let weights = WEIGHT_BITS.iter().map(|&b| QuantSpec::new(QuantTarget::WeightsAndBiases, b));
        inputs.chain(weights).collect::<subband::Result<_>>()?
    } else {
        a.specs.iter().map(|s| QuantSpec::parse(s)).collect::<subband::Result<_>>()?
    };
    let model: Model = Checkpoint::load(&a.checkpoint)?.model()?;
    let data = load_data(&a.data, model.config())?;
    let test = limited(data.test, a.limit);
    let rows = quant_sweep(&model, &test, &specs, a.batch_size)?;
    for r in &rows {
        println!("{:<8} {:>2} bits  top-1 {:.2}%", r.spec.target.to_string(), r.spec.bits, r.top1);
    }
    if let Some(path) = &a.out {
        write_file(path, |o| write_sweep_csv(&rows, o))?;
    }
    Ok(())
}

fn select_nodes(sel: &str, count: usize) -> Result<Vec<usize>> {
    if sel == "all" {
        return Ok((0..count).collect());
    }
    let node = match sel.parse::<usize>() {
        Ok(i) => i,
        Err(_) => (0..count)
            .find(|&i| node_label(i) == sel)
            .ok_or_else(|| usage(format!("no frontend node labelled {sel:?}")))?,
    };
    if node >= count {
        return Err(usage(format!("node {node} out of range (tree has {count} nodes)")));
    }
    Ok(vec![node])
}

pub fn freq(a: &FreqArgs) -> Result<()> {
    let model: Model = match (&a.checkpoint, &a.config) {
        (Some(p), _) => Checkpoint::load(p)?.model()?,
        (None, Some(c)) => Model::build(&ModelConfig::load(c)?, a.seed)?,
        (None, None) => return Err(usage("pass --checkpoint or --config")),
    };
    let fe = model
        .frontend()
        .ok_or_else(|| Error::Config(format!("config {:?} has no frontend", model.config().name)))?;
    create_dir(&a.out)?;
    let mut written = 0;
    for i in select_nodes(&a.node, fe.nodes().len())? {
        let node = &fe.nodes()[i];
        for (branch, filter) in [("upper", Some(&node.upper)), ("lower", node.lower.as_ref())] {
            let Some(filter) = filter else { continue };
            for (ch, grid) in frequency_response(filter, a.grid)?.iter().enumerate() {
                let stem = format!("node{i}-{}-{branch}-ch{ch}", node_label(i));
                write_file(&a.out.join(format!("{stem}.csv")), |o| write_response_csv(grid, o))?;
                write_file(&a.out.join(format!("{stem}.pgm")), |o| write_response_pgm(grid, o))?;
                let dc = grid.dc_index();
                println!("{stem}: |H(0,0)| = {:.4}", grid.at(dc, dc));
                written += 1;
            }
        }
    }
    eprintln!("wrote {written} responses to {}", a.out.display());
    Ok(())
}

pub fn presets() -> Result<()> {
    for name in subband::model::preset_names() {
        println!("{name}");
    }
    Ok(())
}
