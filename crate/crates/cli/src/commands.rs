use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use dpn::atomic::write_atomic;
use dpn::encoder::{encode, AttentionProbe, ProbeBlock};
use dpn::oracle::{brute_force, gap};
use dpn::problems::{gen_uniform_with, minmax_objective, read_instances, validate, write_instances};
use dpn::rollout::infer;
use dpn::training::{
    finetune as finetune_run, load_checkpoint, save_checkpoint, train as train_run, Checkpoint, EpochMetrics,
    TrainConfig,
};
use dpn::tsplib;
use dpn::{Adam32, Graph32, Instance, Model32, Route, RouteSet};

use crate::{ConfigArgs, EvalArgs, FinetuneArgs, GenArgs, ParseTsplibArgs, PlotDataArgs, Preset, SolveArgs, TrainArgs};

const CONFIG_FILE: &str = "config.json";
const CHECKPOINT_FILE: &str = "checkpoint.bin";
const METRICS_FILE: &str = "metrics.jsonl";

/// One line of a solutions file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolutionRecord {
    pub instance: usize,
    pub objective: f64,
    pub routes: Vec<Route>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub permutation: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aug_index: Option<usize>,
}

#[derive(Serialize)]
struct ProbeRecord<'a> {
    instance: usize,
    blocks: &'a [ProbeBlock],
}

/// Fails early if `path` cannot be created: its parent must be a directory.
fn check_output(path: &Path) -> Result<()> {
    let parent = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    ensure!(parent.is_dir(), "output directory {} does not exist", parent.display());
    ensure!(!path.is_dir(), "output path {} is a directory", path.display());
    Ok(())
}

fn check_input(path: &Path) -> Result<()> {
    ensure!(path.is_file(), "input file {} not found", path.display());
    Ok(())
}

fn read_dataset(path: &Path) -> Result<Vec<Instance>> {
    check_input(path)?;
    let f = fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_instances(BufReader::new(f)).with_context(|| format!("reading {}", path.display()))
}

fn jsonl<T: Serialize>(items: impl IntoIterator<Item = T>) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.push(b'\n');
    }
    Ok(out)
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    check_input(path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).with_context(|| format!("{} line {}", path.display(), i + 1)))
        .collect()
}

pub fn gen(a: &GenArgs) -> Result<()> {
    check_output(&a.out)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let instances = (0..a.count)
        .map(|_| {
            let m = rng.gen_range(a.agents[0]..=a.agents[1]);
            gen_uniform_with(a.kind, a.n, a.depots, m, &mut rng)
        })
        .collect::<dpn::Result<Vec<_>>>()?;
    let mut buf = Vec::new();
    write_instances(&mut buf, &instances)?;
    write_atomic(&a.out, &buf).with_context(|| format!("writing {}", a.out.display()))?;
    println!("wrote {} {} instances to {}", instances.len(), a.kind, a.out.display());
    Ok(())
}

/// The configuration named on the command line, with overrides applied, or
/// `None` when neither `--config` nor `--preset` was given.
fn resolve_config(a: &ConfigArgs) -> Result<Option<TrainConfig>> {
    let mut cfg = match (&a.config, a.preset) {
        (Some(path), _) => {
            check_input(path)?;
            let text = fs::read_to_string(path)?;
            serde_json::from_str::<TrainConfig>(&text).with_context(|| format!("config {}", path.display()))?
        }
        (None, Some(p)) => {
            let (kind, n) = (a.kind.expect("required by clap"), a.n.expect("required by clap"));
            match p {
                Preset::Desk => TrainConfig::desk(kind, n),
                Preset::Full => TrainConfig::full(kind, n),
            }
        }
        (None, None) => return Ok(None),
    };
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(s) = a.epoch_size {
        cfg.epoch_size = s;
    }
    if a.no_navigation_part {
        cfg.model.navigation = false;
    }
    if let Some(pe) = a.pe {
        cfg.model.pe = pe.into();
    }
    if a.no_clip {
        cfg.clip_grad = None;
    }
    cfg.check()?;
    Ok(Some(cfg))
}

struct RunDir {
    config: PathBuf,
    checkpoint: PathBuf,
    metrics: PathBuf,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Self {
            config: dir.join(CONFIG_FILE),
            checkpoint: dir.join(CHECKPOINT_FILE),
            metrics: dir.join(METRICS_FILE),
        })
    }

    fn write_config(&self, cfg: &TrainConfig) -> Result<()> {
        let mut text = serde_json::to_vec_pretty(cfg)?;
        text.push(b'\n');
        write_atomic(&self.config, &text)?;
        Ok(())
    }

    /// Epoch callback: appends to the metrics log and replaces the checkpoint.
    fn recorder<'a>(
        &'a self,
        log: &'a mut Vec<EpochMetrics>,
    ) -> impl FnMut(&EpochMetrics, &Model32, &Adam32) -> dpn::Result<()> + 'a {
        move |m, model, adam| {
            log.push(m.clone());
            let bytes = jsonl(log.iter()).map_err(|e| dpn::Error::Io(std::io::Error::other(e.to_string())))?;
            write_atomic(&self.metrics, &bytes)?;
            let ckpt = Checkpoint {
                config: model.cfg.clone(),
                epoch: m.epoch + 1,
                store: model.store.clone(),
                adam: Some(adam.clone()),
            };
            save_checkpoint(&self.checkpoint, &ckpt)?;
            let val = m.val_obj.map(|v| format!(" val_obj {v:.4}")).unwrap_or_default();
            eprintln!(
                "epoch {} mean_obj {:.4} mean_baseline {:.4}{val} lr {:e} {:.1}s",
                m.epoch, m.mean_obj, m.mean_baseline, m.lr, m.wallclock
            );
            Ok(())
        }
    }
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let given = resolve_config(&a.cfg)?;
    let run = RunDir::create(&a.out)?;
    let mut log = Vec::new();
    let (cfg, mut model, mut adam, start) = if a.resume {
        check_input(&run.config)?;
        let text = fs::read_to_string(&run.config)?;
        let mut stored: TrainConfig =
            serde_json::from_str(&text).with_context(|| format!("{}", run.config.display()))?;
        // Only the epoch count may change on resume.
        if let Some(cfg) = &given {
            let same = TrainConfig {
                epochs: stored.epochs,
                ..cfg.clone()
            };
            ensure!(same == stored, "configuration differs from the one stored in {}", run.config.display());
        }
        if let Some(e) = given.as_ref().map(|c| c.epochs).or(a.cfg.epochs) {
            stored.epochs = e;
            run.write_config(&stored)?;
        }
        check_input(&run.checkpoint)?;
        let ckpt = load_checkpoint(&run.checkpoint).with_context(|| format!("{}", run.checkpoint.display()))?;
        ckpt.check_compatible(&stored.model)?;
        let model = Model32::from_store(stored.model.clone(), &ckpt.store)?;
        let adam = ckpt.adam.clone().context("checkpoint has no optimizer state to resume from")?;
        if run.metrics.is_file() {
            log = read_jsonl::<EpochMetrics>(&run.metrics)?;
            log.retain(|m| m.epoch < ckpt.epoch);
        }
        (stored, model, adam, ckpt.epoch)
    } else {
        let cfg = given.context("either --config or --preset is required")?;
        ensure!(
            !run.checkpoint.exists(),
            "{} already exists; pass --resume to continue that run",
            run.checkpoint.display()
        );
        run.write_config(&cfg)?;
        let model = Model32::new(cfg.model.clone(), cfg.seed)?;
        let adam = Adam32::new(&model.store, cfg.lr, cfg.lr_decay);
        (cfg, model, adam, 0)
    };
    if start >= cfg.epochs {
        println!("run in {} already has {start} of {} epochs", a.out.display(), cfg.epochs);
        return Ok(());
    }
    train_run(&cfg, &mut model, &mut adam, start, run.recorder(&mut log))?;
    println!("trained epochs {start}..{} into {}", cfg.epochs, a.out.display());
    Ok(())
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let cfg = resolve_config(&a.cfg)?.context("either --config or --preset is required")?;
    check_input(&a.checkpoint)?;
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("{}", a.checkpoint.display()))?;
    let run = RunDir::create(&a.out)?;
    ensure!(
        run.checkpoint != a.checkpoint && !run.checkpoint.exists(),
        "{} already exists; choose a fresh output directory",
        run.checkpoint.display()
    );
    ckpt.check_compatible(&cfg.model)?;
    run.write_config(&cfg)?;
    let mut log = Vec::new();
    finetune_run(&cfg, ckpt, run.recorder(&mut log))?;
    println!("fine-tuned {} epochs into {}", cfg.epochs, a.out.display());
    Ok(())
}

pub fn solve(a: &SolveArgs) -> Result<()> {
    ensure!(a.per >= 1, "--per must be at least 1");
    check_input(&a.checkpoint)?;
    check_output(&a.out)?;
    if let Some(p) = &a.probe {
        check_output(p)?;
    }
    let ckpt = load_checkpoint(&a.checkpoint).with_context(|| format!("{}", a.checkpoint.display()))?;
    let model = Model32::from_store(ckpt.config.clone(), &ckpt.store)?;
    let data = read_dataset(&a.dataset)?;
    let clock = Instant::now();
    let mut records = Vec::with_capacity(data.len());
    for (i, inst) in data.iter().enumerate() {
        let s = infer(&model, inst, a.aug8, a.per).with_context(|| format!("instance {i}"))?;
        let routes = s.route_set();
        if let Err(v) = validate(&routes, inst) {
            bail!("instance {i}: model produced an infeasible solution ({v})");
        }
        records.push(SolutionRecord {
            instance: i,
            objective: s.objective,
            routes: routes.routes,
            permutation: Some(s.permutation),
            aug_index: Some(s.aug_index),
        });
    }
    let wall = clock.elapsed().as_secs_f64();
    write_atomic(&a.out, &jsonl(&records)?)?;
    if let Some(path) = &a.probe {
        let mut lines = Vec::with_capacity(data.len());
        for (i, inst) in data.iter().enumerate() {
            let input = if inst.in_unit_square() { inst.clone() } else { inst.normalized().0 };
            let mut probe = AttentionProbe::default();
            let mut g = Graph32::new();
            encode(&mut g, &model.store, &model.enc, &model.cfg, &input, Some(&mut probe))?;
            lines.push(serde_json::to_string(&ProbeRecord {
                instance: i,
                blocks: &probe.blocks,
            })?);
        }
        let mut text = lines.join("\n");
        text.push('\n');
        write_atomic(path, text.as_bytes())?;
    }
    let mean = mean(records.iter().map(|r| r.objective));
    let label = match (a.aug8, a.per) {
        (true, p) => format!("x8aug x{p}per"),
        (false, p) => format!("x{p}per"),
    };
    println!(
        "{}: {} instances, {label}, mean objective {mean:.4}, wall-clock {wall:.2}s",
        a.dataset.display(),
        records.len()
    );
    Ok(())
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = xs.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Checks a solutions file against its dataset and returns the recomputed
/// objectives.
fn checked_objectives(path: &Path, data: &[Instance]) -> Result<Vec<f64>> {
    let recs = read_jsonl::<SolutionRecord>(path)?;
    ensure!(
        recs.len() == data.len(),
        "{} has {} solutions but the dataset has {} instances",
        path.display(),
        recs.len(),
        data.len()
    );
    recs.iter()
        .zip(data)
        .enumerate()
        .map(|(i, (r, inst))| {
            ensure!(r.instance == i, "{}: record {i} is labeled instance {}", path.display(), r.instance);
            let set = RouteSet::new(r.routes.clone());
            validate(&set, inst).map_err(|v| anyhow::anyhow!("{} instance {i}: {v}", path.display()))?;
            let obj = minmax_objective(&set, inst)?;
            ensure!(
                (obj - r.objective).abs() <= 1e-6 * obj.abs().max(1.0),
                "{} instance {i}: stored objective {} disagrees with its routes ({obj})",
                path.display(),
                r.objective
            );
            Ok(obj)
        })
        .collect()
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let data = read_dataset(&a.dataset)?;
    let objs = checked_objectives(&a.solutions, &data)?;
    let refs = if a.reference == "oracle" {
        data.par_iter()
            .enumerate()
            .map(|(i, inst)| {
                brute_force(inst)
                    .map(|r| r.objective)
                    .with_context(|| format!("oracle on instance {i}"))
            })
            .collect::<Result<Vec<_>>>()?
    } else {
        checked_objectives(Path::new(&a.reference), &data)?
    };
    let mut csv = String::from("instance,objective,reference,gap_percent\n");
    println!("{:>8} {:>12} {:>12} {:>10}", "instance", "objective", "reference", "gap%");
    let mut gaps = Vec::with_capacity(objs.len());
    for (i, (&o, &r)) in objs.iter().zip(&refs).enumerate() {
        let g = gap(o, r).with_context(|| format!("instance {i}"))?;
        gaps.push(g);
        println!("{i:>8} {o:>12.4} {r:>12.4} {g:>10.4}");
        csv.push_str(&format!("{i},{o},{r},{g}\n"));
    }
    let (mo, mr, mg) = (mean(objs.iter().copied()), mean(refs.iter().copied()), mean(gaps.iter().copied()));
    println!("{:>8} {mo:>12.4} {mr:>12.4} {mg:>10.4}", "mean");
    csv.push_str(&format!("mean,{mo},{mr},{mg}\n"));
    if let Some(p) = &a.out {
        write_atomic(p, csv.as_bytes())?;
    }
    Ok(())
}

pub fn parse_tsplib(a: &ParseTsplibArgs) -> Result<()> {
    check_input(&a.input)?;
    check_output(&a.out)?;
    let prob = tsplib::parse_tsplib(&a.input).with_context(|| format!("{}", a.input.display()))?;
    let inst = prob.to_instance(a.agents)?;
    let mut buf = Vec::new();
    write_instances(&mut buf, std::slice::from_ref(&inst))?;
    write_atomic(&a.out, &buf)?;
    println!(
        "{}: {} nodes (depot + {} customers), M={}",
        prob.name,
        prob.nodes.len(),
        inst.n(),
        inst.agents
    );
    Ok(())
}

fn default_label(path: &Path) -> String {
    path.parent()
        .and_then(|p| p.file_name())
        .or_else(|| path.file_stem())
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

pub fn plot_data(a: &PlotDataArgs) -> Result<()> {
    ensure!(
        a.label.is_empty() || a.label.len() == a.metrics.len(),
        "got {} labels for {} metrics files",
        a.label.len(),
        a.metrics.len()
    );
    if let Some(p) = &a.out {
        check_output(p)?;
    }
    let mut csv = String::from("label,epoch,val_obj,mean_obj\n");
    for (i, path) in a.metrics.iter().enumerate() {
        let rows = read_jsonl::<EpochMetrics>(path)?;
        ensure!(!rows.is_empty(), "metrics file {} has no epochs", path.display());
        let label = a.label.get(i).cloned().unwrap_or_else(|| default_label(path));
        ensure!(!label.contains([',', '\n']), "label {label:?} contains a comma or newline");
        for m in &rows {
            let val = m.val_obj.map(|v| v.to_string()).unwrap_or_default();
            csv.push_str(&format!("{label},{},{val},{}\n", m.epoch, m.mean_obj));
        }
    }
    match &a.out {
        Some(p) => write_atomic(p, csv.as_bytes())?,
        None => print!("{csv}"),
    }
    Ok(())
}
