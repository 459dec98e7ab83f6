//! Command-line front end for the feature-pyramid laboratory.
//!
//! Verbosity is controlled by the `MFPN_LOG` environment variable
//! (`quiet`, `info`, `debug`; default `info`). Logs go to stderr; primary
//! artifacts are printed to stdout and written under the output directory.
//! Exit codes: 0 on success, 1 on runtime failure, 2 on argument errors.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use clap::{Parser, Subcommand};

use mfpn::analysis::{
    analytic_flow_mask, builder_gradcheck_suite, composite_gradcheck, count_params, export_heatmap,
    flow_matrix, op_gradcheck_suite, reconciliation_report, GradReport,
};
use mfpn::backbone::{backbone_forward, generate_blob_scene, mix_seed};
use mfpn::pyramid::build;
use mfpn::training::{
    comparison_csv, evaluate_by_size, evaluate_oracle, task_layout, train_epoch, EVAL_SCENES,
    EVAL_STREAM, RUNNING_WINDOW,
};
use mfpn::{
    ExperimentConfig, FpnConfig, Graph, PyramidKind, Result, TrainState, WeightStore,
};

// ---------------------------------------------------------------------------
// Logging
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum LogLevel {
    Quiet,
    Info,
    Debug,
}

fn log_level() -> LogLevel {
    match std::env::var("MFPN_LOG").as_deref() {
        Ok("quiet") => LogLevel::Quiet,
        Ok("debug") => LogLevel::Debug,
        Ok("info") | Err(_) => LogLevel::Info,
        Ok(other) => {
            eprintln!("mfpn: unknown MFPN_LOG value {other:?}, using info");
            LogLevel::Info
        }
    }
}

fn info(msg: impl Display) {
    if log_level() >= LogLevel::Info {
        eprintln!("[info] {msg}");
    }
}

fn debug(msg: impl Display) {
    if log_level() >= LogLevel::Debug {
        eprintln!("[debug] {msg}");
    }
}

// ---------------------------------------------------------------------------
// Arguments
// ---------------------------------------------------------------------------

#[derive(Parser)]
#[command(
    name = "mfpn",
    version,
    about = "Desk-scale laboratory for mixed feature pyramid networks"
)]
struct Cli {
    /// Experiment config file (flat `key: value` lines); defaults when omitted
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override the config's seed
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the config's output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Override the config's builder (top-down, bottom-up, fusing-splitting, mfpn)
    #[arg(long, global = true)]
    builder: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Analytic parameter accounting for one or all builders
    Paramcount {
        /// Named layout preset: retinanet-fpn, resnet50-c2c5, resnet50-c2c5-p67,
        /// toy, channel-sweep, or reconcile
        #[arg(long)]
        preset: Option<String>,
    },
    /// Gradient-probed information-flow matrices for every builder
    Flow,
    /// Finite-difference gradient checks over every op and builder
    Gradcheck,
    /// Train the blob-detection task with the configured builder
    Train,
    /// Score trained weights by blob size class over held-out scenes
    Eval,
    /// Export per-level activation heatmaps for one seeded scene
    Heatmap,
    /// Small end-to-end tour: counts, flow, gradcheck, training, comparison
    Demo,
}

/// Merge the config file (or defaults) with command-line overrides.
fn resolve_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let cfg = ExperimentConfig::load(path)?;
            info(format!("loaded config from {}", path.display()));
            cfg
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    if let Some(builder) = &cli.builder {
        cfg.builder = PyramidKind::from_str(builder)?;
    }
    cfg.validate()?;
    info(format!("effective config:\n{}", cfg.to_text()));
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("mfpn: error: {err}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Paramcount { preset } => cmd_paramcount(cli, preset.as_deref()),
        Command::Flow => cmd_flow(cli),
        Command::Gradcheck => cmd_gradcheck(cli),
        Command::Train => cmd_train(cli),
        Command::Eval => cmd_eval(cli),
        Command::Heatmap => cmd_heatmap(cli),
        Command::Demo => cmd_demo(cli),
    }
}

// ---------------------------------------------------------------------------
// paramcount
// ---------------------------------------------------------------------------

fn write_param_reports(
    out_dir: &Path,
    cfg: &FpnConfig,
    kinds: &[PyramidKind],
) -> Result<String> {
    std::fs::create_dir_all(out_dir)?;
    let mut text = String::new();
    for &kind in kinds {
        let report = count_params(kind, cfg)?;
        std::fs::write(
            out_dir.join(format!("paramcount_{kind}.txt")),
            report.to_text(),
        )?;
        std::fs::write(
            out_dir.join(format!("paramcount_{kind}.json")),
            report.to_json(),
        )?;
        text.push_str(&report.to_text());
        text.push('\n');
    }
    Ok(text)
}

fn cmd_paramcount(cli: &Cli, preset: Option<&str>) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let out_dir = PathBuf::from(&cfg.out);
    let text = match preset {
        None => write_param_reports(&out_dir, &cfg.fpn_config()?, &[cfg.builder])?,
        Some("retinanet-fpn") => {
            write_param_reports(&out_dir, &FpnConfig::retinanet_fpn(), &[PyramidKind::TopDown])?
        }
        Some("resnet50-c2c5") => {
            write_param_reports(&out_dir, &FpnConfig::resnet50_c2c5(), &PyramidKind::ALL)?
        }
        Some("resnet50-c2c5-p67") => {
            write_param_reports(&out_dir, &FpnConfig::resnet50_c2c5_p67(), &PyramidKind::ALL)?
        }
        Some("toy") => write_param_reports(&out_dir, &FpnConfig::toy(), &PyramidKind::ALL)?,
        Some("channel-sweep") => {
            std::fs::create_dir_all(&out_dir)?;
            let mut csv = String::from("channels,builder,total\n");
            let mut text = String::from("parameter totals by pyramid width (levels 2-5)\n");
            for channels in [256, 384, 512, 640, 768] {
                let base = FpnConfig::resnet50_c2c5();
                let cfg = FpnConfig::new(
                    base.min_level,
                    base.max_level,
                    channels,
                    &base.backbone_channels,
                    base.extra_levels,
                )?;
                text.push_str(&format!("  width {channels}:\n"));
                for kind in PyramidKind::ALL {
                    let total = count_params(kind, &cfg)?.total;
                    csv.push_str(&format!("{channels},{kind},{total}\n"));
                    text.push_str(&format!("    {kind:<17} {total:>12}\n"));
                }
            }
            std::fs::write(out_dir.join("channel_sweep.csv"), &csv)?;
            text
        }
        Some("reconcile") => {
            std::fs::create_dir_all(&out_dir)?;
            let text = reconciliation_report()?;
            std::fs::write(out_dir.join("reconciliation.txt"), &text)?;
            text
        }
        Some(other) => {
            return Err(mfpn::Error::Config(format!(
                "unknown preset {other:?}; expected retinanet-fpn, resnet50-c2c5, \
                 resnet50-c2c5-p67, toy, channel-sweep, or reconcile"
            )))
        }
    };
    print!("{text}");
    info(format!("reports written under {}", out_dir.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// flow
// ---------------------------------------------------------------------------

/// A narrow probe variant of the configured layout: flow patterns do not
/// depend on widths, so probing at most 8 channels keeps this instant.
fn probe_config(cfg: &FpnConfig) -> Result<FpnConfig> {
    let bc: Vec<usize> = cfg.backbone_channels.iter().map(|&c| c.min(8)).collect();
    FpnConfig::new(
        cfg.min_level,
        cfg.max_level,
        cfg.channels.min(8),
        &bc,
        cfg.extra_levels,
    )
}

fn cmd_flow(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let fpn = probe_config(&cfg.fpn_config()?)?;
    let out_dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out_dir)?;
    let mut mismatches = Vec::new();
    for kind in PyramidKind::ALL {
        if matches!(
            kind,
            PyramidKind::FusingSplitting | PyramidKind::Mfpn
        ) && fpn.num_levels() != 4
        {
            info(format!("{kind}: skipped (needs exactly 4 levels)"));
            continue;
        }
        let matrix = flow_matrix(kind, &fpn, cfg.seed)?;
        let text = matrix.to_text();
        std::fs::write(out_dir.join(format!("flow_{kind}.txt")), &text)?;
        print!("{text}");
        if matrix.pattern() != analytic_flow_mask(kind, fpn.num_levels()) {
            mismatches.push(kind);
        }
    }
    if !mismatches.is_empty() {
        return Err(mfpn::Error::Config(format!(
            "flow pattern mismatch for {mismatches:?}"
        )));
    }
    info("all flow patterns match the architecture's reachability");
    Ok(())
}

// ---------------------------------------------------------------------------
// gradcheck
// ---------------------------------------------------------------------------

fn report_line(name: &str, report: &GradReport) -> String {
    format!(
        "  {:<28} {}  max rel err {:.3e}",
        name,
        if report.pass { "pass" } else { "FAIL" },
        report.max_rel_err
    )
}

fn cmd_gradcheck(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let tol = 1e-5;
    let started = Instant::now();
    let mut failures = 0usize;
    for seed in cfg.seed..cfg.seed + 3 {
        println!("gradient checks, seed {seed} (tolerance {tol:.0e})");
        let mut sections = op_gradcheck_suite(seed, tol)?;
        sections.extend(builder_gradcheck_suite(seed, tol)?);
        sections.push(("composite.task".to_string(), composite_gradcheck(seed, tol)?));
        for (name, report) in &sections {
            println!("{}", report_line(name, report));
            debug(report.to_text());
            if !report.pass {
                failures += 1;
            }
        }
    }
    info(format!(
        "gradient checks finished in {:.1}s",
        started.elapsed().as_secs_f64()
    ));
    if failures > 0 {
        return Err(mfpn::Error::Config(format!(
            "{failures} gradient check(s) exceeded tolerance"
        )));
    }
    println!("all gradient checks passed");
    Ok(())
}

// ---------------------------------------------------------------------------
// train / eval
// ---------------------------------------------------------------------------

fn cmd_train(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let fpn = cfg.fpn_config()?;
    let scene_spec = cfg.scene_spec();
    let out_dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out_dir)?;
    cfg.save(&out_dir.join("config.cfg"))?;

    let layout = task_layout(cfg.builder, &fpn, cfg.image_channels);
    let store = WeightStore::from_layout(&layout, cfg.seed);
    info(format!(
        "training {} ({} parameters) for {} epoch(s) of {} scenes",
        cfg.builder,
        store.num_values(),
        cfg.epochs,
        cfg.scenes
    ));
    let mut state = TrainState::new(store, cfg.lr, cfg.seed);
    let started = Instant::now();
    for epoch in 0..cfg.epochs {
        train_epoch(&mut state, cfg.builder, &fpn, &scene_spec, cfg.scenes)?;
        state.save(&out_dir)?;
        state
            .store
            .save(&out_dir.join(format!("weights_epoch{epoch}.mfpw")))?;
        let recent = state
            .final_running_loss(RUNNING_WINDOW.min(cfg.scenes))
            .unwrap_or(f64::NAN);
        info(format!(
            "epoch {epoch}: step {} running loss {recent:.6} ({:.1}s elapsed)",
            state.step,
            started.elapsed().as_secs_f64()
        ));
    }
    std::fs::write(out_dir.join("loss.csv"), state.loss_csv())?;
    let window = RUNNING_WINDOW.min(state.losses.len());
    if let (Some(first), Some(last)) = (
        state.initial_running_loss(window),
        state.final_running_loss(window),
    ) {
        println!("initial running loss {first:.6}");
        println!("final running loss   {last:.6}");
    }
    println!(
        "trained {} steps in {:.1}s; artifacts under {}",
        state.step,
        started.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}

fn cmd_eval(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let fpn = cfg.fpn_config()?;
    let scene_spec = cfg.scene_spec();
    let out_dir = PathBuf::from(&cfg.out);
    let weights = out_dir.join("weights.mfpw");
    if !weights.exists() {
        return Err(mfpn::Error::Config(format!(
            "no weights at {} (run `mfpn train` first)",
            weights.display()
        )));
    }
    let store = WeightStore::load(&weights)?;
    let scores = evaluate_by_size(
        &store,
        cfg.builder,
        &fpn,
        &scene_spec,
        EVAL_SCENES,
        cfg.seed,
    )?;
    std::fs::write(out_dir.join("eval.csv"), scores.to_csv())?;
    print!("{}", scores.to_text());
    let oracle = evaluate_oracle(&scene_spec, EVAL_SCENES, cfg.seed)?;
    info(format!("target-as-prediction ceiling:\n{}", oracle.to_text()));
    info(format!("eval.csv written under {}", out_dir.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// heatmap
// ---------------------------------------------------------------------------

fn cmd_heatmap(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let fpn = cfg.fpn_config()?;
    let out_dir = PathBuf::from(&cfg.out).join("heatmap");
    let mut spec = cfg.scene_spec();
    spec.seed = mix_seed(cfg.seed, EVAL_STREAM);
    let scene = generate_blob_scene(&spec)?;
    info(format!("scene: {}", scene.describe()));
    for kind in [PyramidKind::TopDown, PyramidKind::Mfpn] {
        let layout = task_layout(kind, &fpn, cfg.image_channels);
        let store = WeightStore::from_layout(&layout, cfg.seed);
        let mut g = Graph::new();
        let image = scene.image_tensor(&mut g)?;
        let feats = backbone_forward(&mut g, &store, &fpn, image)?;
        let set = build(&mut g, &store, &fpn, kind, &feats)?;
        let files = export_heatmap(&g, &set, &out_dir, kind.name())?;
        for f in &files {
            println!("{}", f.display());
        }
    }
    info(format!("heatmaps written under {}", out_dir.display()));
    Ok(())
}

// ---------------------------------------------------------------------------
// demo
// ---------------------------------------------------------------------------

fn demo_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig {
        channels: 8,
        backbone_channels: vec![8, 8, 8, 8],
        scenes: 120,
        epochs: 1,
        out: "out/demo".to_string(),
        ..ExperimentConfig::default()
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.out = out.display().to_string();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_demo(cli: &Cli) -> Result<()> {
    let started = Instant::now();
    let cfg = demo_config(cli)?;
    let fpn = cfg.fpn_config()?;
    let scene_spec = cfg.scene_spec();
    let out_dir = PathBuf::from(&cfg.out);
    std::fs::create_dir_all(&out_dir)?;

    println!("== parameter accounting (width 256, levels 2-5) ==");
    let full = FpnConfig::resnet50_c2c5();
    for kind in PyramidKind::ALL {
        let total = count_params(kind, &full)?.total;
        println!("  {kind:<17} {total:>12}");
    }
    println!();
    print!("{}", reconciliation_report()?);
    println!();

    println!("== information flow (probed at width {}) ==", fpn.channels);
    for kind in PyramidKind::ALL {
        let matrix = flow_matrix(kind, &fpn, cfg.seed)?;
        print!("{}", matrix.to_text());
        if matrix.pattern() != analytic_flow_mask(kind, fpn.num_levels()) {
            return Err(mfpn::Error::Config(format!(
                "flow pattern mismatch for {kind}"
            )));
        }
    }
    println!();

    println!("== gradient spot checks (seed {}) ==", cfg.seed);
    let mut sections = op_gradcheck_suite(cfg.seed, 1e-5)?;
    sections.extend(builder_gradcheck_suite(cfg.seed, 1e-5)?);
    let mut worst: f64 = 0.0;
    for (name, report) in &sections {
        debug(report_line(name, report));
        if !report.pass {
            return Err(mfpn::Error::Config(format!("gradient check failed: {name}")));
        }
        worst = worst.max(report.max_rel_err);
    }
    println!(
        "  {} checks passed, worst relative error {worst:.3e}",
        sections.len()
    );
    println!();

    println!(
        "== training each builder: {} scenes at width {} ==",
        cfg.scenes, cfg.channels
    );
    let mut results = Vec::new();
    let mut trained = Vec::new();
    for kind in PyramidKind::ALL {
        let layout = task_layout(kind, &fpn, cfg.image_channels);
        let store = WeightStore::from_layout(&layout, cfg.seed);
        let mut state = TrainState::new(store, cfg.lr, cfg.seed);
        let t0 = Instant::now();
        train_epoch(&mut state, kind, &fpn, &scene_spec, cfg.scenes)?;
        let window = RUNNING_WINDOW.min(cfg.scenes / 2);
        let first = state.initial_running_loss(window).unwrap_or(f64::NAN);
        let last = state.final_running_loss(window).unwrap_or(f64::NAN);
        println!(
            "  {kind:<17} loss {first:.4} -> {last:.4} in {:.1}s",
            t0.elapsed().as_secs_f64()
        );
        let dir = out_dir.join(kind.name());
        state.save(&dir)?;
        std::fs::write(dir.join("loss.csv"), state.loss_csv())?;
        trained.push((kind, state));
    }
    println!();

    println!("== held-out comparison (60 scenes) ==");
    for (kind, state) in &trained {
        let scores = evaluate_by_size(&state.store, *kind, &fpn, &scene_spec, 60, cfg.seed)?;
        println!("  {kind}:");
        for row in &scores.rows {
            println!(
                "    {:<6}  precision {:.3}  recall {:.3}  f1 {:.3}",
                row.class.name(),
                row.precision,
                row.recall,
                row.f1
            );
        }
        results.push((*kind, scores));
    }
    std::fs::write(out_dir.join("comparison.csv"), comparison_csv(&results))?;
    println!();

    let mut heatmap_spec = scene_spec;
    heatmap_spec.seed = mix_seed(cfg.seed, EVAL_STREAM);
    let scene = generate_blob_scene(&heatmap_spec)?;
    for (kind, state) in &trained {
        if !matches!(kind, PyramidKind::TopDown | PyramidKind::Mfpn) {
            continue;
        }
        let mut g = Graph::new();
        let image = scene.image_tensor(&mut g)?;
        let feats = backbone_forward(&mut g, &state.store, &fpn, image)?;
        let set = build(&mut g, &state.store, &fpn, *kind, &feats)?;
        export_heatmap(&g, &set, &out_dir.join("heatmap"), kind.name())?;
    }
    println!(
        "demo finished in {:.1}s; artifacts under {}",
        started.elapsed().as_secs_f64(),
        out_dir.display()
    );
    Ok(())
}
