//! Command-line front end: argument parsing, run-directory layout, and the
//! four subcommands (gen-data, gen-cams, run-al, report). The binary in
//! main.rs is a thin wrapper around [`run`].

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::alloop::{
    run_ablation, run_experiment, run_full_supervision, summarize_kfold, AblationRow, AlConfig,
    ExperimentResult,
};
use crate::cam::{generate_cams, load_cams, save_cams};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::report::{
    markdown_summary, merge_summaries, svg_learning_curve, write_cycles_jsonl,
    write_decisions_csv, write_merged_csv, write_summary_csv,
};
use crate::synthgen::{
    generate_dataset, load_dataset, save_dataset, split_folds, DatasetManifest, SampleRecord,
    GENERATOR_VERSION,
};

#[derive(Parser, Debug)]
#[command(name = "deal-lab", version, about = "Active-learning laboratory for weakly supervised bleeding segmentation on synthetic capsule-endoscopy images")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Override the experiment seed from the config
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// TOML config file; defaults apply when omitted
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overwrite an existing non-empty output directory
    #[arg(long, global = true)]
    pub force: bool,
    /// Validate inputs and print the plan without doing the work
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Rayon worker threads (default: all cores)
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate the synthetic dataset (images, oracle masks, manifest)
    GenData,
    /// Train the classifier and emit CRF-refined CAM triples
    GenCams {
        /// Dataset directory produced by gen-data
        #[arg(long)]
        dataset: PathBuf,
    },
    /// Run the active-learning experiment
    RunAl {
        #[arg(long)]
        dataset: PathBuf,
        /// CAM directory produced by gen-cams
        #[arg(long)]
        cams: PathBuf,
        /// Selection strategy (overrides the config)
        #[arg(long)]
        strategy: Option<String>,
        /// Run the four-row criterion ablation instead of a strategy run
        #[arg(long)]
        ablation: bool,
        /// Cross-validate over all folds instead of fold 0 only
        #[arg(long)]
        kfold: bool,
        /// Also train on 100% oracle labels for the reference line
        #[arg(long)]
        full_reference: bool,
    },
    /// Merge summary CSVs from completed run directories
    Report {
        /// Completed run directories
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

/// Refuse to clobber existing results unless --force is given.
fn prepare_out_dir(out: &Path, force: bool) -> Result<()> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) {
        if !force {
            return Err(Error::Config(format!(
                "output directory {} exists and is not empty (pass --force to overwrite)",
                out.display()
            )));
        }
    }
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))
}

fn load_config(global: &GlobalArgs) -> Result<ExperimentConfig> {
    let cfg = match &global.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

pub fn cmd_gen_data(global: &GlobalArgs) -> Result<()> {
    let mut cfg = load_config(global)?;
    if let Some(seed) = global.seed {
        cfg.dataset.seed = seed;
    }
    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/dataset"));
    let d = &cfg.dataset;
    let counts = [d.normal, d.vascular, d.inflammatory];
    if global.dry_run {
        println!(
            "plan: generate {} samples ({}x{}, seed {}) into {}",
            counts.iter().sum::<usize>(),
            d.image_size,
            d.image_size,
            d.seed,
            out.display()
        );
        return Ok(());
    }
    prepare_out_dir(&out, global.force)?;
    let samples = generate_dataset(d.image_size, counts, d.seed)?;
    let labels: Vec<_> = samples.iter().map(|s| s.class_label).collect();
    let manifest = DatasetManifest {
        seed: d.seed,
        image_size: d.image_size,
        counts,
        k_folds: d.k_folds,
        fold_of: split_folds(&labels, d.k_folds, d.seed)?,
        generator_version: GENERATOR_VERSION.to_string(),
    };
    save_dataset(&out, &samples, &manifest)?;
    cfg.save(&out.join("config.toml"))?;
    println!("wrote {} samples to {}", samples.len(), out.display());
    Ok(())
}

pub fn cmd_gen_cams(global: &GlobalArgs, dataset: &Path) -> Result<()> {
    let cfg = load_config(global)?;
    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/cams"));
    let (manifest, samples) = load_dataset(dataset)?;
    let seed = global.seed.unwrap_or(manifest.seed);
    if global.dry_run {
        println!(
            "plan: train classifier ({} epochs) on {} samples, emit CAM triples to {}",
            cfg.classifier.epochs,
            samples.len(),
            out.display()
        );
        return Ok(());
    }
    prepare_out_dir(&out, global.force)?;
    let artifacts = generate_cams(&samples, &cfg.cam_config()?, seed)?;
    println!("classifier training accuracy: {:.4}", artifacts.train_accuracy);
    let violations = artifacts.triples.iter().filter(|t| !t.is_nested()).count();
    println!(
        "nesting audit: {} violations over {} triples",
        violations,
        artifacts.triples.len()
    );
    save_cams(&out, &artifacts)?;
    cfg.save(&out.join("config.toml"))?;
    println!("wrote {} CAM triples to {}", artifacts.triples.len(), out.display());
    if violations > 0 {
        return Err(Error::Contract(format!(
            "CAM nesting invariant violated on {} samples",
            violations
        )));
    }
    Ok(())
}

/// Train/test split for one fold, with the matching CAM-triple subset.
pub struct FoldData<'a> {
    pub fold: usize,
    pub train: Vec<SampleRecord>,
    pub test: Vec<SampleRecord>,
    pub cams: Vec<crate::cam::CamTriple>,
    _phantom: std::marker::PhantomData<&'a ()>,
}

pub fn fold_split(
    manifest: &DatasetManifest,
    samples: &[SampleRecord],
    cams: &[crate::cam::CamTriple],
    fold: usize,
) -> Result<FoldData<'static>> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in samples {
        if manifest.fold_of[s.id] == fold {
            test.push(s.clone());
        } else {
            train.push(s.clone());
        }
    }
    let cams: Vec<_> = train
        .iter()
        .map(|s| {
            cams.iter().find(|c| c.sample_id == s.id).cloned().ok_or_else(|| {
                Error::MissingArtifact {
                    path: format!("cam triple for sample {}", s.id).into(),
                    hint: "re-run gen-cams on this dataset".into(),
                }
            })
        })
        .collect::<Result<_>>()?;
    Ok(FoldData {
        fold,
        train,
        test,
        cams,
        _phantom: std::marker::PhantomData,
    })
}

struct RunAlArgs<'a> {
    dataset: &'a Path,
    cams: &'a Path,
    strategy: Option<&'a str>,
    ablation: bool,
    kfold: bool,
    full_reference: bool,
}

fn write_failed_marker(out: &Path, err: &Error) {
    let _ = std::fs::write(out.join("FAILED"), format!("{}\n", err));
}

fn cmd_run_al(global: &GlobalArgs, args: RunAlArgs) -> Result<()> {
    let mut cfg = load_config(global)?;
    if let Some(s) = args.strategy {
        cfg.active_learning.strategy = s.to_string();
        cfg.validate()?;
    }
    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/al"));
    let (manifest, samples) = load_dataset(args.dataset)?;
    let (_index, triples) = load_cams(args.cams)?;
    let seed = global.seed.unwrap_or(manifest.seed);
    let al = cfg.al_config()?;
    let folds: Vec<usize> = if args.kfold {
        (0..manifest.k_folds).collect()
    } else {
        vec![0]
    };
    if global.dry_run {
        println!(
            "plan: {} on folds {:?} ({} samples, {} cycles, {:.0}% GT per cycle, seed {}){}",
            if args.ablation { "criterion ablation".to_string() } else { format!("strategy {}", al.strategy) },
            folds,
            samples.len(),
            al.cycles,
            al.gt_fraction * 100.0,
            seed,
            if args.full_reference { ", plus 100% GT reference" } else { "" },
        );
        return Ok(());
    }
    prepare_out_dir(&out, global.force)?;
    cfg.save(&out.join("config.toml"))?;
    let res = run_al_body(&out, &manifest, &samples, &triples, &al, &folds, seed, &args);
    if let Err(e) = &res {
        write_failed_marker(&out, e);
    }
    res
}

#[allow(clippy::too_many_arguments)]
fn run_al_body(
    out: &Path,
    manifest: &DatasetManifest,
    samples: &[SampleRecord],
    triples: &[crate::cam::CamTriple],
    al: &AlConfig,
    folds: &[usize],
    seed: u64,
    args: &RunAlArgs,
) -> Result<()> {
    if args.ablation {
        let mut all_rows: Vec<(usize, AblationRow)> = Vec::new();
        for &fold in folds {
            let data = fold_split(manifest, samples, triples, fold)?;
            let rows = run_ablation(&data.train, &data.test, &data.cams, al, fold, seed)?;
            for r in rows {
                println!(
                    "fold {} {:<22} pseudo Δ {:+.4}  gt Δ {:+.4}",
                    fold, r.name, r.pseudo_delta, r.gt_delta
                );
                all_rows.push((fold, r));
            }
        }
        let mut csv = String::from("fold,row,pseudo_delta,gt_delta\n");
        for (fold, r) in &all_rows {
            csv.push_str(&format!(
                "{},{},{:.6},{:.6}\n",
                fold, r.name, r.pseudo_delta, r.gt_delta
            ));
        }
        std::fs::write(out.join("ablation.csv"), csv).map_err(|e| Error::io(out, e))?;
        return Ok(());
    }

    let mut results: Vec<ExperimentResult> = Vec::new();
    for &fold in folds {
        let data = fold_split(manifest, samples, triples, fold)?;
        let res = run_experiment(&data.train, &data.test, &data.cams, al, fold, seed)?;
        for c in &res.cycles {
            println!(
                "fold {} cycle {}: dice {:.4} (cam {}, pseudo {}, gt {})",
                fold, c.cycle, c.dice, c.n_cam, c.n_pseudo, c.n_gt
            );
        }
        results.push(res);
    }
    let summary = summarize_kfold(al.strategy, &results);
    write_summary_csv(&out.join("summary.csv"), &summary)?;
    write_cycles_jsonl(&out.join("cycles.jsonl"), &results)?;
    let decisions: Vec<_> = results.iter().flat_map(|r| r.decisions.clone()).collect();
    write_decisions_csv(&out.join("decisions.csv"), &decisions)?;

    let full = if args.full_reference {
        let mut dices = Vec::new();
        for &fold in folds {
            let data = fold_split(manifest, samples, triples, fold)?;
            dices.push(run_full_supervision(
                &data.train,
                &data.test,
                &al.schedule,
                fold,
                seed,
            )?);
        }
        Some(dices.iter().sum::<f64>() / dices.len() as f64)
    } else {
        None
    };
    std::fs::write(
        out.join("table.md"),
        markdown_summary(&summary, al.gt_fraction, full),
    )
    .map_err(|e| Error::io(out, e))?;
    std::fs::write(
        out.join("curve.svg"),
        svg_learning_curve(&summary, al.gt_fraction),
    )
    .map_err(|e| Error::io(out, e))?;
    println!("wrote summary to {}", out.display());
    Ok(())
}

pub fn cmd_report(global: &GlobalArgs, runs: &[PathBuf]) -> Result<()> {
    let out = global.out.clone().unwrap_or_else(|| PathBuf::from("runs/report"));
    let paths: Vec<PathBuf> = runs.iter().map(|r| r.join("summary.csv")).collect();
    for p in &paths {
        if !p.exists() {
            return Err(Error::MissingArtifact {
                path: p.display().to_string().into(),
                hint: "pass completed run-al output directories".into(),
            });
        }
    }
    if global.dry_run {
        println!("plan: merge {} run summaries into {}", paths.len(), out.display());
        return Ok(());
    }
    prepare_out_dir(&out, global.force)?;
    let merged = merge_summaries(&paths)?;
    write_merged_csv(&out.join("merged.csv"), &merged)?;
    let mut md = String::from("| strategy | cycle | mean Dice | std |\n|---|---|---|---|\n");
    for r in &merged {
        md.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} |\n",
            r.strategy, r.cycle, r.mean_dice, r.std_dice
        ));
    }
    std::fs::write(out.join("report.md"), md).map_err(|e| Error::io(&out, e))?;
    println!("merged {} rows into {}", merged.len(), out.display());
    Ok(())
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.global.threads {
        // ignore the error if a pool already exists (tests call run() repeatedly)
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    match &cli.cmd {
        Cmd::GenData => cmd_gen_data(&cli.global),
        Cmd::GenCams { dataset } => cmd_gen_cams(&cli.global, dataset),
        Cmd::RunAl {
            dataset,
            cams,
            strategy,
            ablation,
            kfold,
            full_reference,
        } => cmd_run_al(
            &cli.global,
            RunAlArgs {
                dataset,
                cams,
                strategy: strategy.as_deref(),
                ablation: *ablation,
                kfold: *kfold,
                full_reference: *full_reference,
            },
        ),
        Cmd::Report { runs } => cmd_report(&cli.global, runs),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Cli {
        Cli::try_parse_from(std::iter::once("deal-lab").chain(args.iter().cloned())).unwrap()
    }

    #[test]
    fn gen_data_dry_run_prints_plan_without_writing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("ds");
        let cli = parse(&["gen-data", "--out", out.to_str().unwrap(), "--dry-run"]);
        run(cli).unwrap();
        assert!(!out.exists());
    }

    #[test]
    fn refuses_non_empty_out_dir_without_force() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x"), "y").unwrap();
        assert!(matches!(
            prepare_out_dir(dir.path(), false),
            Err(Error::Config(_))
        ));
        prepare_out_dir(dir.path(), true).unwrap();
    }

    #[test]
    fn missing_summary_is_a_missing_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let global = GlobalArgs {
            seed: None,
            config: None,
            out: Some(dir.path().join("report")),
            force: false,
            dry_run: false,
            threads: None,
        };
        let err = cmd_report(&global, &[dir.path().join("nope")]).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }
}
