//! Commands behind the `causal-hmm` binary.
//!
//! Output layout under the output root:
//!
//! ```text
//! <dataset>/                      manifest.json, params.json, {train,val,test}.jsonl, summary.txt
//! runs/<kind>/config.toml         resolved configuration
//! runs/<kind>/config.sha256       hash guarding resumed runs
//! runs/<kind>/summary.{json,txt}  mean ± std over seeds
//! runs/<kind>/eval_summary.tsv
//! runs/<kind>/seed-<n>/           checkpoint.json, history.jsonl, result.json,
//!                                 eval.{json,tsv}, probe.{json,tsv}, align.json,
//!                                 saliency/<split>-<i>-t<t>-<block>.pgm
//! align_truth.json                truth-against-truth ceiling (`align --truth`)
//! ```
//!
//! Every file is a pure function of the configuration and the seeds.

use std::fmt::Write as _;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baselines::Model;
use crate::error::{Error, Result};
use crate::evaluation::{
    block_alignment, evaluate_window, prediction_seed, probe_robustness, saliency, truth_alignment,
    two_proportion_z_test,
};
use crate::experiment::ExperimentConfig;
use crate::model::{load_checkpoint, save_checkpoint, SeqVaeNet};
use crate::scm::{
    check_rank_condition, params_hash, read_dataset, sample_dataset, write_dataset, DatasetBundle,
    Split,
};
use crate::trainer::{train_on, EpochRecord};
use crate::types::SequenceSample;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Generate,
    Train,
    Eval,
    Probe,
    Align,
    Saliency,
}

/// Options shared by every command beyond the configuration itself.
#[derive(Debug, Clone, Default)]
pub struct Options {
    /// Restrict to one seed of the configured list.
    pub seed: Option<u64>,
    /// Evaluate this checkpoint instead of the configured run directory.
    pub checkpoint: Option<PathBuf>,
    /// Sequence indices for `saliency`, replacing `eval.saliency.sequences`.
    pub sequences: Option<Vec<usize>>,
    /// `align` only: align the true latents with themselves.
    pub truth: bool,
}

pub fn run(
    cmd: Command,
    cfg: &ExperimentConfig,
    opts: &Options,
    out: &mut dyn Write,
) -> Result<()> {
    match cmd {
        Command::Generate => generate(cfg, out),
        Command::Train => train_cmd(cfg, opts, out),
        Command::Eval => eval_cmd(cfg, opts, out),
        Command::Probe => probe_cmd(cfg, opts, out),
        Command::Align => align_cmd(cfg, opts, out),
        Command::Saliency => saliency_cmd(cfg, opts, out),
    }
}

/// Per-seed outcome written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub kind: String,
    pub parameters: usize,
    pub best_epoch: usize,
    pub val_acc: f64,
    pub val_auc: f64,
    pub test_acc: f64,
    pub test_auc: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Sample standard deviation; zero for a single seed.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, std }
    }

    /// `mean ± std` in percentage points.
    fn percent(&self) -> String {
        format!("{:.2} ± {:.2}", 100.0 * self.mean, 100.0 * self.std)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub kind: String,
    pub config_hash: String,
    pub seeds: Vec<u64>,
    pub val_acc: MeanStd,
    pub val_auc: MeanStd,
    pub test_acc: MeanStd,
    pub test_auc: MeanStd,
    pub runs: Vec<SeedResult>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub t1: usize,
    pub t2: usize,
    pub split: Split,
    pub acc: f64,
    pub auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub seed: u64,
    pub kind: String,
    pub rows: Vec<WindowRow>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Mismatch(format!("{}: {e}", path.display())))
}

fn say(out: &mut dyn Write, line: impl AsRef<str>) -> Result<()> {
    writeln!(out, "{}", line.as_ref()).map_err(|e| Error::io("<stdout>", e))
}

/// `path` relative to the output root, for printing.
fn shown(cfg: &ExperimentConfig, path: &Path) -> String {
    path.strip_prefix(cfg.output_root())
        .unwrap_or(path)
        .display()
        .to_string()
}

fn selected_seeds(cfg: &ExperimentConfig, opts: &Options) -> Result<Vec<u64>> {
    match opts.seed {
        Some(s) if cfg.seeds.contains(&s) => Ok(vec![s]),
        Some(s) => Err(Error::Config(format!(
            "--seed {s} is not in seeds {:?}",
            cfg.seeds
        ))),
        None => Ok(cfg.seeds.clone()),
    }
}

fn generate(cfg: &ExperimentConfig, out: &mut dyn Write) -> Result<()> {
    let params = cfg.scm.build()?;
    let bundle = sample_dataset(&params, cfg.counts, &cfg.scm.shifted_population())?;
    let dir = cfg.dataset_dir();
    write_dataset(&bundle, &dir)?;
    let rank = check_rank_condition(&params, 1)?;
    let mut text = String::new();
    let m = &bundle.manifest;
    let d = m.dims;
    writeln!(text, "dataset {}", shown(cfg, &dir)).unwrap();
    writeln!(text, "params_hash {}", m.params_hash).unwrap();
    writeln!(
        text,
        "counts train {} val {} test {}",
        m.counts.train, m.counts.val, m.counts.test
    )
    .unwrap();
    writeln!(
        text,
        "shape steps {} d_x {} d_a {} d_b {} (d_s {}, d_v {}, d_z {})",
        d.steps(),
        d.d_x,
        d.d_a,
        d.d_b,
        d.d_s,
        d.d_v,
        d.d_z
    )
    .unwrap();
    writeln!(
        text,
        "populations train/val '{}', test '{}'",
        m.populations.train.name, m.populations.test.name
    )
    .unwrap();
    let ranks: Vec<String> = rank
        .blocks
        .iter()
        .map(|b| {
            format!(
                "{} {}",
                b.block.name(),
                if b.full_rank { "full" } else { "deficient" }
            )
        })
        .collect();
    writeln!(
        text,
        "rank condition (t = 1, {} prototypes): {}",
        rank.prototypes,
        ranks.join(", ")
    )
    .unwrap();
    writeln!(text, "train vs test two-proportion tests:").unwrap();
    let pop = &m.populations.train;
    let mut rows: Vec<(String, u64, u64)> = Vec::new();
    for (k, name) in pop
        .attributes
        .iter()
        .enumerate()
        .filter(|(k, _)| pop.binary[*k])
    {
        let count =
            |s: &[SequenceSample]| s.iter().filter(|q| q.steps[0].b_prev[k] == 1.0).count() as u64;
        rows.push((name.clone(), count(&bundle.train), count(&bundle.test)));
    }
    let positives = |s: &[SequenceSample]| s.iter().filter(|q| q.y.is_positive()).count() as u64;
    rows.push((
        "y=+1".into(),
        positives(&bundle.train),
        positives(&bundle.test),
    ));
    let (n1, n2) = (bundle.train.len() as u64, bundle.test.len() as u64);
    for (name, k1, k2) in rows {
        let test = if n2 == 0 {
            "test split empty".to_string()
        } else {
            match two_proportion_z_test(k1, n1, k2, n2) {
                Ok(t) => format!("z {:.4} p {:.4e}", t.z, t.p_value),
                Err(Error::DegenerateTest(_)) => "undefined (pooled proportion 0 or 1)".into(),
                Err(e) => return Err(e),
            }
        };
        let rate = |k: u64, n: u64| {
            if n == 0 {
                f64::NAN
            } else {
                k as f64 / n as f64
            }
        };
        writeln!(
            text,
            "  {name}: train {:.4} ({k1}/{n1}) test {:.4} ({k2}/{n2}) {test}",
            rate(k1, n1),
            rate(k2, n2)
        )
        .unwrap();
    }
    write_bytes(&dir.join("summary.txt"), text.as_bytes())?;
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

/// Reads the dataset and checks it was generated from this configuration.
fn load_dataset(cfg: &ExperimentConfig) -> Result<DatasetBundle> {
    let dir = cfg.dataset_dir();
    if !dir.join("manifest.json").exists() {
        return Err(Error::Mismatch(format!(
            "no dataset at {}; run `causal-hmm generate` with this config first",
            dir.display()
        )));
    }
    let bundle = read_dataset(&dir)?;
    let expected = params_hash(&cfg.scm.build()?);
    if bundle.manifest.params_hash != expected || bundle.manifest.counts != cfg.counts {
        return Err(Error::Mismatch(format!(
            "dataset at {} was generated from a different [scm] or [counts] section",
            dir.display()
        )));
    }
    Ok(bundle)
}

fn train_cmd(cfg: &ExperimentConfig, opts: &Options, out: &mut dyn Write) -> Result<()> {
    let bundle = load_dataset(cfg)?;
    let run = cfg.run_dir();
    let hash = cfg.hash();
    let hash_file = run.join("config.sha256");
    if hash_file.exists() {
        let old = fs::read_to_string(&hash_file).map_err(|e| Error::io(&hash_file, e))?;
        if old.trim() != hash {
            return Err(Error::Mismatch(format!(
                "{} holds runs of config {}, current config is {hash}; refusing to resume",
                shown(cfg, &run),
                old.trim()
            )));
        }
    }
    write_bytes(&hash_file, format!("{hash}\n").as_bytes())?;
    write_bytes(&run.join("config.toml"), cfg.to_toml_string().as_bytes())?;
    let steps = cfg.steps();
    for seed in selected_seeds(cfg, opts)? {
        let dir = cfg.seed_dir(seed);
        if dir.join("result.json").exists() {
            say(out, format!("seed {seed}: already trained, skipping"))?;
            continue;
        }
        let tc = cfg.train_config(seed);
        let model = Model::build(&cfg.model_config(seed))?;
        let parameters = model.num_parameters();
        let mut history = String::new();
        let mut log = |r: &EpochRecord| {
            history.push_str(&serde_json::to_string(r)?);
            history.push('\n');
            Ok(())
        };
        let outcome = train_on(model, &bundle.train, &bundle.val, &tc, &mut log);
        write_bytes(&dir.join("history.jsonl"), history.as_bytes())?;
        let outcome = outcome?;
        let metadata = serde_json::json!({
            "config_hash": hash,
            "seed": seed,
            "best_epoch": outcome.best_epoch,
            "best_val_auc": outcome.best_val_auc,
            "best_val_acc": outcome.best_val_acc,
        });
        save_checkpoint(
            &dir.join("checkpoint.json"),
            outcome.model.config(),
            outcome.model.store(),
            metadata,
        )?;
        let test = if bundle.test.is_empty() {
            None
        } else {
            Some(evaluate_window(
                &outcome.model,
                &bundle.test,
                (1, steps),
                tc.n_mc_eval,
                prediction_seed(seed),
            )?)
        };
        let result = SeedResult {
            seed,
            kind: cfg.model.kind.name().into(),
            parameters,
            best_epoch: outcome.best_epoch,
            val_acc: outcome.best_val_acc,
            val_auc: outcome.best_val_auc,
            test_acc: test.map_or(f64::NAN, |t| t.acc),
            test_auc: test.map_or(f64::NAN, |t| t.auc),
        };
        write_json(&dir.join("result.json"), &result)?;
        say(
            out,
            format!(
                "seed {seed}: best epoch {} val auc {:.4} acc {:.4} test auc {:.4} acc {:.4}",
                result.best_epoch, result.val_auc, result.val_acc, result.test_auc, result.test_acc
            ),
        )?;
    }
    let runs: Vec<SeedResult> = cfg
        .seeds
        .iter()
        .map(|&s| cfg.seed_dir(s).join("result.json"))
        .filter(|p| p.exists())
        .map(|p| read_json(&p))
        .collect::<Result<_>>()?;
    let stat = |f: fn(&SeedResult) -> f64| MeanStd::of(&runs.iter().map(f).collect::<Vec<_>>());
    let summary = RunSummary {
        kind: cfg.model.kind.name().into(),
        config_hash: hash,
        seeds: runs.iter().map(|r| r.seed).collect(),
        val_acc: stat(|r| r.val_acc),
        val_auc: stat(|r| r.val_auc),
        test_acc: stat(|r| r.test_acc),
        test_auc: stat(|r| r.test_auc),
        runs,
    };
    write_json(&run.join("summary.json"), &summary)?;
    let text = format!(
        "{} over seeds {:?}\nval  ACC {}  AUC {}\ntest ACC {}  AUC {}\n",
        summary.kind,
        summary.seeds,
        summary.val_acc.percent(),
        summary.val_auc.percent(),
        summary.test_acc.percent(),
        summary.test_auc.percent()
    );
    write_bytes(&run.join("summary.txt"), text.as_bytes())?;
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

/// A restored model with its seed and directory for outputs.
struct Loaded {
    seed: u64,
    dir: PathBuf,
    model: Model,
}

fn restore(cfg: &ExperimentConfig, path: &Path, seed: Option<u64>) -> Result<Loaded> {
    if !path.exists() {
        return Err(Error::Mismatch(format!(
            "no checkpoint at {}; run `causal-hmm train` first",
            path.display()
        )));
    }
    let ckpt = load_checkpoint(path, None)?;
    let stored_seed = ckpt.metadata.get("seed").and_then(|v| v.as_u64());
    let seed = match (seed, stored_seed) {
        (Some(a), Some(b)) if a != b => {
            return Err(Error::Mismatch(format!(
                "checkpoint was trained with seed {b}, expected {a}"
            )))
        }
        (_, Some(b)) => b,
        (Some(a), None) => a,
        (None, None) => return Err(Error::Mismatch("checkpoint metadata lacks the seed".into())),
    };
    let expected = Model::build(&cfg.model_config(seed))?;
    if &ckpt.config != expected.config() {
        return Err(Error::Mismatch(format!(
            "checkpoint {} was built from a different [model] configuration",
            path.display()
        )));
    }
    let mut model = expected;
    ckpt.restore_into(model.store_mut())?;
    let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { seed, dir, model })
}

fn checkpoints(cfg: &ExperimentConfig, opts: &Options) -> Result<Vec<Loaded>> {
    if let Some(path) = &opts.checkpoint {
        return Ok(vec![restore(cfg, path, opts.seed)?]);
    }
    selected_seeds(cfg, opts)?
        .into_iter()
        .map(|s| restore(cfg, &cfg.seed_dir(s).join("checkpoint.json"), Some(s)))
        .collect()
}

fn generative<'m>(cfg: &ExperimentConfig, model: &'m Model) -> Result<&'m SeqVaeNet> {
    model.as_generative().ok_or_else(|| {
        Error::Config(format!(
            "model.kind '{}' has no latent blocks",
            cfg.model.kind.name()
        ))
    })
}

fn eval_cmd(cfg: &ExperimentConfig, opts: &Options, out: &mut dyn Write) -> Result<()> {
    let bundle = load_dataset(cfg)?;
    let windows = cfg.windows();
    let n_mc = cfg.train.n_mc_eval;
    let mut reports = Vec::new();
    for l in checkpoints(cfg, opts)? {
        let mut rows = Vec::new();
        for &(t1, t2) in &windows {
            for split in Split::ALL {
                let samples = bundle.split(split);
                if samples.is_empty() {
                    continue;
                }
                let m =
                    evaluate_window(&l.model, samples, (t1, t2), n_mc, prediction_seed(l.seed))?;
                rows.push(WindowRow {
                    t1,
                    t2,
                    split,
                    acc: m.acc,
                    auc: m.auc,
                });
            }
        }
        let report = EvalReport {
            seed: l.seed,
            kind: cfg.model.kind.name().into(),
            rows,
        };
        write_json(&l.dir.join("eval.json"), &report)?;
        write_bytes(&l.dir.join("eval.tsv"), eval_table(&report).as_bytes())?;
        say(
            out,
            format!(
                "seed {}: {} window rows -> {}",
                l.seed,
                report.rows.len(),
                shown(cfg, &l.dir.join("eval.json"))
            ),
        )?;
        reports.push(report);
    }
    if opts.checkpoint.is_none() {
        let all: Vec<EvalReport> = cfg
            .seeds
            .iter()
            .map(|&s| cfg.seed_dir(s).join("eval.json"))
            .filter(|p| p.exists())
            .map(|p| read_json(&p))
            .collect::<Result<_>>()?;
        let text = eval_summary(&all);
        write_bytes(&cfg.run_dir().join("eval_summary.tsv"), text.as_bytes())?;
        write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn eval_table(report: &EvalReport) -> String {
    let mut s = String::from("t1\tt2\tsplit\tacc\tauc\n");
    for r in &report.rows {
        writeln!(
            s,
            "{}\t{}\t{}\t{:.6}\t{:.6}",
            r.t1,
            r.t2,
            r.split.name(),
            r.acc,
            r.auc
        )
        .unwrap();
    }
    s
}

/// Mean ± std over seeds per window and split, in percentage points.
fn eval_summary(reports: &[EvalReport]) -> String {
    let mut s = format!("t1\tt2\tsplit\tACC (n={})\tAUC\n", reports.len());
    let Some(first) = reports.first() else {
        return s;
    };
    for (i, r) in first.rows.iter().enumerate() {
        let pick = |f: fn(&WindowRow) -> f64| {
            MeanStd::of(
                &reports
                    .iter()
                    .filter_map(|rep| rep.rows.get(i))
                    .map(f)
                    .collect::<Vec<_>>(),
            )
        };
        writeln!(
            s,
            "{}\t{}\t{}\t{}\t{}",
            r.t1,
            r.t2,
            r.split.name(),
            pick(|w| w.acc).percent(),
            pick(|w| w.auc).percent()
        )
        .unwrap();
    }
    s
}

fn probe_cmd(cfg: &ExperimentConfig, opts: &Options, out: &mut dyn Write) -> Result<()> {
    let bundle = load_dataset(cfg)?;
    for l in checkpoints(cfg, opts)? {
        let net = generative(cfg, &l.model)?;
        let report = probe_robustness(
            net,
            &bundle.train,
            &bundle.val,
            &bundle.test,
            &cfg.eval.probe,
        )?;
        write_json(&l.dir.join("probe.json"), &report)?;
        let mut t = String::from("probe\ttrain_auc\tval_auc\ttest_auc\tdrop_auc\tdrop_acc\n");
        for (name, m) in &report.probes {
            writeln!(
                t,
                "{name}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                m.train.auc, m.val.auc, m.test.auc, m.drop_auc, m.drop_acc
            )
            .unwrap();
        }
        write_bytes(&l.dir.join("probe.tsv"), t.as_bytes())?;
        say(out, format!("seed {}", l.seed))?;
        write!(out, "{t}").map_err(|e| Error::io("<stdout>", e))?;
    }
    Ok(())
}

fn align_cmd(cfg: &ExperimentConfig, opts: &Options, out: &mut dyn Write) -> Result<()> {
    let bundle = load_dataset(cfg)?;
    let samples = bundle.split(cfg.eval.align_split);
    let show = |out: &mut dyn Write, r: &crate::evaluation::AlignmentReport| -> Result<()> {
        let mut t = format!("learned\\truth\t{}\n", r.truth.join("\t"));
        for (name, row) in r.learned.iter().zip(&r.r2) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.4}")).collect();
            writeln!(t, "{name}\t{}", cells.join("\t")).unwrap();
        }
        write!(out, "{t}").map_err(|e| Error::io("<stdout>", e))
    };
    if opts.truth {
        let report = truth_alignment(samples)?;
        let path = cfg.output_root().join("align_truth.json");
        write_json(&path, &report)?;
        say(
            out,
            format!(
                "truth vs truth on {} -> {}",
                cfg.eval.align_split.name(),
                shown(cfg, &path)
            ),
        )?;
        return show(out, &report);
    }
    for l in checkpoints(cfg, opts)? {
        let report = block_alignment(generative(cfg, &l.model)?, samples)?;
        write_json(&l.dir.join("align.json"), &report)?;
        say(
            out,
            format!("seed {} on {}", l.seed, cfg.eval.align_split.name()),
        )?;
        show(out, &report)?;
    }
    Ok(())
}

fn saliency_cmd(cfg: &ExperimentConfig, opts: &Options, out: &mut dyn Write) -> Result<()> {
    let bundle = load_dataset(cfg)?;
    let sal = &cfg.eval.saliency;
    let samples = bundle.split(sal.split);
    let ids = opts
        .sequences
        .clone()
        .unwrap_or_else(|| sal.sequences.clone());
    if let Some(bad) = ids.iter().find(|&&i| i >= samples.len()) {
        return Err(Error::Config(format!(
            "sequence {bad} outside the {} split ({} sequences)",
            sal.split.name(),
            samples.len()
        )));
    }
    let steps = sal
        .steps
        .clone()
        .unwrap_or_else(|| (1..=cfg.steps()).collect());
    for l in checkpoints(cfg, opts)? {
        let net = generative(cfg, &l.model)?;
        let mut written = 0;
        for &i in &ids {
            for &t in &steps {
                for block in &sal.blocks {
                    let map = saliency(net, &samples[i], block, t)?;
                    let name = format!("{}-{i}-t{t}-{block}.pgm", sal.split.name());
                    write_bytes(&l.dir.join("saliency").join(name), &map.to_pgm())?;
                    written += 1;
                }
            }
        }
        say(
            out,
            format!(
                "seed {}: {written} heatmaps -> {}",
                l.seed,
                shown(cfg, &l.dir.join("saliency"))
            ),
        )?;
    }
    Ok(())
}
