//! The six subcommands. Each writes its artifacts under `out` and returns a
//! short human-readable summary.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use orient_core::io::{self, fmt_f64};
use orient_core::landscape::{evaluate_grid, GridPoint};
use orient_core::metrics::{self, EvalConfig, Evaluation};
use orient_core::synth::{self, generate_dataset};
use orient_core::train::{self, Checkpoint, GradcheckReport, TrainOutcome};
use orient_core::{Dataset, EvalReport, GtActor};
use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::experiment::{self, run_name};
use crate::report;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const CONFIG_FILE: &str = "config.json";
pub const RUNS_DIR: &str = "runs";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const REPORT_FILE: &str = "report.json";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write(path, io::to_string_pretty_rounded(value)? + "\n")
}

fn save_config(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    write_json(&out.join(CONFIG_FILE), cfg)
}

pub fn load_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    match &cfg.dataset {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
            let actors = io::read_dataset(BufReader::new(f))
                .with_context(|| format!("reading {}", p.display()))?;
            if actors.is_empty() {
                bail!("{} holds no actors", p.display());
            }
            Ok(Dataset { actors })
        }
        None => Ok(generate_dataset(&cfg.scene)?),
    }
}

pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let data = generate_dataset(&cfg.scene)?;
    let path = out.join(DATASET_FILE);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    io::write_dataset(BufWriter::new(f), &data.actors)?;
    save_config(cfg, out)?;
    Ok(format!(
        "wrote {} actors ({} train, {} val) to {}",
        data.actors.len(),
        data.train().len(),
        data.val().len(),
        path.display()
    ))
}

pub fn history_csv(outcome: &TrainOutcome) -> String {
    let mut s = String::from("epoch,mean_loss\n");
    let _ = writeln!(s, "0,{}", fmt_f64(outcome.initial_loss));
    for (i, l) in outcome.history.iter().enumerate() {
        let _ = writeln!(s, "{},{}", i + 1, fmt_f64(*l));
    }
    s
}

pub fn run_dir(out: &Path, name: &str) -> PathBuf {
    out.join(RUNS_DIR).join(name)
}

pub fn cmd_train(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let data = load_dataset(cfg)?;
    let runs = experiment::train_all(cfg, &data)?;
    let mut summary = String::new();
    for r in &runs {
        let dir = run_dir(out, &run_name(r.method, r.seed));
        write(
            &dir.join(CHECKPOINT_FILE),
            Checkpoint::new(r.outcome.params.clone()).to_json()? + "\n",
        )?;
        write(&dir.join(HISTORY_FILE), history_csv(&r.outcome))?;
        let _ = writeln!(
            summary,
            "{:<24} loss {} -> {}",
            run_name(r.method, r.seed),
            fmt_f64(r.outcome.initial_loss),
            r.outcome.history.last().map_or("n/a".into(), |l| fmt_f64(*l)),
        );
    }
    save_config(cfg, out)?;
    Ok(summary)
}

pub fn pr_curve_csv(ev: &Evaluation) -> String {
    let mut s = String::from("recall,precision,similarity\n");
    for p in &ev.curve.points {
        let _ = writeln!(
            s,
            "{},{},{}",
            fmt_f64(p.recall),
            fmt_f64(p.precision),
            fmt_f64(p.similarity)
        );
    }
    s
}

fn opt(x: Option<f64>) -> String {
    x.map_or("nan".into(), fmt_f64)
}

pub fn flip_bins_csv(report: &EvalReport) -> String {
    let mut s = String::from("bin_lo,bin_hi,mean_foe_deg,mean_speed_mps,frac\n");
    for b in report.flip_bins.iter().flatten() {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            fmt_f64(b.lo),
            fmt_f64(b.hi),
            opt(b.mean_foe_deg),
            opt(b.mean_speed_mps),
            fmt_f64(b.frac)
        );
    }
    s
}

fn write_evaluation(dir: &Path, ev: &Evaluation) -> Result<()> {
    write_json(&dir.join(REPORT_FILE), &ev.report)?;
    write(&dir.join("pr_curve.csv"), pr_curve_csv(ev))?;
    if ev.report.flip_bins.is_some() {
        write(&dir.join("flip_bins.csv"), flip_bins_csv(&ev.report))?;
    }
    Ok(())
}

fn describe(label: &str, r: &EvalReport) -> String {
    format!(
        "{label:<28} AOS {:.4}  AP {:.4}  HOE {}  FOE {}  TP {}/{}",
        r.aos,
        r.ap,
        opt(r.hoe_all),
        opt(r.foe_all),
        r.num_tp,
        r.num_gt
    )
}

fn evaluate_checkpoint(path: &Path, data: &Dataset, metrics: &EvalConfig) -> Result<Evaluation> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let ckpt = Checkpoint::from_json(&text).with_context(|| format!("loading {}", path.display()))?;
    Ok(train::evaluate(&ckpt.params, &data.val(), metrics)?)
}

fn file_stem(p: &Path) -> String {
    p.file_stem().map_or("input".into(), |s| s.to_string_lossy().into_owned())
}

pub fn cmd_eval(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let data = load_dataset(cfg)?;
    let metrics = &cfg.eval.metrics;
    let mut summary = String::new();
    let explicit = !cfg.eval.checkpoints.is_empty() || !cfg.eval.detections.is_empty();

    for (i, p) in cfg.eval.checkpoints.iter().enumerate() {
        let ev = evaluate_checkpoint(p, &data, metrics)?;
        write_evaluation(&out.join("eval").join(format!("{i}-{}", file_stem(p))), &ev)?;
        let _ = writeln!(summary, "{}", describe(&p.display().to_string(), &ev.report));
    }
    let gts: Vec<GtActor> = data.actors.iter().map(|a| a.gt.clone()).collect();
    for (i, p) in cfg.eval.detections.iter().enumerate() {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        let dets = io::read_detections(BufReader::new(f))
            .with_context(|| format!("reading {}", p.display()))?;
        let mut ev = metrics::evaluate(&dets, &gts, metrics)?;
        ev.report.label = file_stem(p);
        write_evaluation(&out.join("eval").join(format!("{i}-{}", file_stem(p))), &ev)?;
        let _ = writeln!(summary, "{}", describe(&p.display().to_string(), &ev.report));
    }
    if explicit {
        return Ok(summary);
    }

    if let Some(perturb) = &cfg.eval.perturb {
        let dets = synth::perturb_detections(&gts, perturb)?;
        let dir = out.join("eval").join("perturbed");
        let path = dir.join("detections.jsonl");
        fs::create_dir_all(&dir)?;
        io::write_detections(BufWriter::new(File::create(&path)?), &dets)?;
        let mut ev = metrics::evaluate(&dets, &gts, metrics)?;
        ev.report.label = "perturbed".into();
        write_evaluation(&dir, &ev)?;
        return Ok(describe("perturbed", &ev.report));
    }

    let mut found = 0;
    for &m in &cfg.methods {
        for &s in &cfg.seeds {
            let name = run_name(m, s);
            let dir = run_dir(out, &name);
            let ckpt = dir.join(CHECKPOINT_FILE);
            if !ckpt.exists() {
                continue;
            }
            let mut ev = evaluate_checkpoint(&ckpt, &data, metrics)?;
            ev.report.label = m.to_string();
            write_evaluation(&dir, &ev)?;
            let _ = writeln!(summary, "{}", describe(&name, &ev.report));
            found += 1;
        }
    }
    if found == 0 {
        bail!(
            "nothing to evaluate: no checkpoints under {} and no eval inputs configured",
            out.join(RUNS_DIR).display()
        );
    }
    Ok(summary)
}

#[derive(Serialize)]
struct LandscapeSummary {
    loss: String,
    gt_yaw_deg: f64,
    extent: f64,
    step: f64,
    local_minima: Vec<GridPoint>,
    global_minima: Vec<GridPoint>,
}

/// Global minima are grid points within this of the smallest value.
pub const GLOBAL_MIN_TOL: f64 = 1e-12;

pub fn cmd_landscape(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let lc = &cfg.landscape;
    let dir = out.join("landscape");
    let mut summary = String::new();
    for &loss in &lc.losses {
        let l = evaluate_grid(loss, lc)?;
        write(&dir.join(format!("{loss}.csv")), l.to_csv())?;
        write(&dir.join(format!("{loss}.pgm")), l.to_pgm())?;
        let s = LandscapeSummary {
            loss: loss.to_string(),
            gt_yaw_deg: lc.gt_yaw_deg,
            extent: lc.extent,
            step: lc.step,
            local_minima: l.local_minima(),
            global_minima: l.global_minima(GLOBAL_MIN_TOL),
        };
        write_json(&dir.join(format!("{loss}.minima.json")), &s)?;
        let pts: Vec<String> = s
            .local_minima
            .iter()
            .map(|p| format!("({}, {}) = {}", fmt_f64(p.s), fmt_f64(p.c), fmt_f64(p.loss)))
            .collect();
        let _ = writeln!(summary, "{loss:<18} local minima: {}", pts.join(", "));
    }
    Ok(summary)
}

pub fn cmd_gradcheck(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let reports: Vec<GradcheckReport> = cfg
        .methods
        .iter()
        .map(|m| train::gradcheck(m, &cfg.gradcheck))
        .collect::<orient_core::Result<_>>()?;
    write_json(&out.join("gradcheck.json"), &reports)?;
    let mut summary = String::new();
    for r in &reports {
        let _ = writeln!(
            summary,
            "{:<22} {}  max rel err {:.3e}  checked {}/{}",
            r.method.to_string(),
            if r.passed { "PASS" } else { "FAIL" },
            r.max_rel_error,
            r.checked,
            r.trials
        );
    }
    if reports.iter().any(|r| !r.passed) {
        bail!("gradient check failed\n{summary}");
    }
    Ok(summary)
}

fn find_reports(dir: &Path, acc: &mut Vec<PathBuf>) -> Result<()> {
    if !dir.is_dir() {
        return Ok(());
    }
    let mut entries: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_reports(&p, acc)?;
        } else if p.file_name().is_some_and(|n| n == REPORT_FILE) {
            acc.push(p);
        }
    }
    Ok(())
}

pub fn cmd_report(cfg: &ExperimentConfig, out: &Path) -> Result<String> {
    let mut inputs = cfg.report.inputs.clone();
    if inputs.is_empty() {
        find_reports(&out.join(RUNS_DIR), &mut inputs)?;
        find_reports(&out.join("eval"), &mut inputs)?;
    }
    if inputs.is_empty() {
        bail!("no report.json files found under {}", out.display());
    }
    let mut reports = Vec::with_capacity(inputs.len());
    for p in &inputs {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        let r: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
        reports.push(r);
    }
    // Keep the configured method order where labels match.
    let order: Vec<String> = cfg.methods.iter().map(|m| m.to_string()).collect();
    reports.sort_by_key(|r| order.iter().position(|o| *o == r.label).unwrap_or(order.len()));
    let rows = report::rows(&reports);
    let md = report::markdown(&rows);
    write(&out.join("table.md"), &md)?;
    write(&out.join("table.csv"), report::csv(&rows))?;
    Ok(md)
}
