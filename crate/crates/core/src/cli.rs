//! Command-line entry point: dataset generation, training, evaluation,
//! ablation rows, hyperparameter sweeps, and static report rendering.
//!
//! Exit codes: 0 success, 1 user error (bad flags, missing or malformed
//! inputs), 2 runtime failure (mid-run training or output errors).

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::ehr::{generate_synthetic, load_dataset, save_dataset, Dataset, GenConfig};
use crate::evaluation::MetricRecord;
use crate::trainer::{
    curve_to_csv, evaluate_checkpoint, train, Checkpoint, RunConfig, TrainError,
};

const OUT_DIR_ENV: &str = "EXAMREC_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "examrec",
    version,
    about = "Medical examination recommender: synthetic data, two-stage training, ranking evaluation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Generate(GenerateArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Evaluate(EvaluateArgs),
    /// Train and evaluate the component-ablation variants.
    Ablate(AblateArgs),
    /// Sweep rebuilt neighbors, attention layers, and the gate threshold.
    Sweep(SweepArgs),
    /// Render loss curves and sweep tables to static SVG/CSV files.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long, default_value_t = 200)]
    n_patients: usize,
    #[arg(long, default_value_t = 30)]
    n_diseases: usize,
    #[arg(long, default_value_t = 40)]
    n_symptoms: usize,
    #[arg(long, default_value_t = 20)]
    n_exams: usize,
    #[arg(long, default_value_t = 10)]
    n_rules: usize,
    #[arg(long, default_value_t = 8)]
    seq_len_min: usize,
    #[arg(long, default_value_t = 16)]
    seq_len_max: usize,
    #[arg(long, default_value_t = 0.9)]
    rule_follow: f64,
    #[arg(long, default_value_t = 0.1)]
    noise: f64,
    #[arg(long, default_value_t = 0.5)]
    two_phase: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output dataset path.
    #[arg(long)]
    out: PathBuf,
}

/// Every run-config key, overridable on the command line; flags win over
/// the config file.
#[derive(Args, Clone, Default)]
struct ConfigOverrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    embed_dim: Option<usize>,
    #[arg(long)]
    rgat_layers: Option<usize>,
    #[arg(long)]
    num_heads: Option<usize>,
    #[arg(long)]
    num_blocks: Option<usize>,
    #[arg(long)]
    max_len: Option<usize>,
    #[arg(long)]
    diff_steps: Option<usize>,
    #[arg(long)]
    noise_scale: Option<f64>,
    #[arg(long)]
    alpha_low: Option<f64>,
    #[arg(long)]
    alpha_up: Option<f64>,
    #[arg(long)]
    rebuild_k: Option<usize>,
    #[arg(long)]
    gate_epsilon: Option<f64>,
    #[arg(long)]
    gate_window: Option<usize>,
    #[arg(long)]
    l2_lambda: Option<f64>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    t_inf: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    train_negatives: Option<usize>,
    #[arg(long)]
    eval_negatives: Option<usize>,
    #[arg(long)]
    use_diffusion: Option<bool>,
    #[arg(long)]
    use_rgat: Option<bool>,
    #[arg(long)]
    use_kansformer: Option<bool>,
    #[arg(long)]
    use_task_adaptive: Option<bool>,
    #[arg(long)]
    fusion_mode: Option<String>,
    #[arg(long)]
    stage1_reset: Option<bool>,
}

#[derive(Args)]
struct TrainArgs {
    /// Run config file (flat key=value); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Loss-curve CSV output path.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// Denoised-subgraph edge list output path (patient_id<TAB>column_id).
    #[arg(long)]
    subgraph_out: Option<PathBuf>,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Checkpoint produced by `train`.
    #[arg(long)]
    ckpt: PathBuf,
    /// Dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Metrics CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also dump per-patient ranks to this CSV.
    #[arg(long)]
    per_patient: Option<PathBuf>,
    /// Rank against the whole catalog instead of sampled negatives.
    #[arg(long, default_value_t = false)]
    full_catalog: bool,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Ablation table CSV output path.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    /// Directory for the per-hyperparameter sweep tables.
    #[arg(long)]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: ConfigOverrides,
}

#[derive(Args)]
struct ReportArgs {
    /// Loss-curve CSV produced by `train --curves`.
    #[arg(long)]
    curves: Option<PathBuf>,
    /// A sweep CSV produced by `sweep`.
    #[arg(long)]
    sweep: Option<PathBuf>,
    /// Output directory for rendered files.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Debug)]
enum Failure {
    User(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::User(_) => 1,
            Failure::Runtime(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::User(m) | Failure::Runtime(m) => m,
        }
    }
}

fn user<E: std::fmt::Display>(e: E) -> Failure {
    Failure::User(e.to_string())
}

fn runtime<E: std::fmt::Display>(e: E) -> Failure {
    Failure::Runtime(e.to_string())
}

/// Training failures keep their stage/epoch context; config mistakes are
/// user errors.
fn train_failure(e: TrainError) -> Failure {
    match e {
        TrainError::Config { .. } | TrainError::Invalid(_) => user(e),
        other => runtime(other),
    }
}

/// Parse argv and run; returns the process exit code.
pub fn parse_and_dispatch<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/version output with exit code 0
            use clap::error::ErrorKind;
            let kind = e.kind();
            let _ = e.print();
            return if matches!(kind, ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                0
            } else {
                1
            };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Generate(args) => cmd_generate(args),
        Command::Train(args) => cmd_train(args),
        Command::Evaluate(args) => cmd_evaluate(args),
        Command::Ablate(args) => cmd_ablate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Report(args) => cmd_report(args),
    }
}

/// Relative output paths may be redirected by the output-directory
/// environment variable.
fn resolve_out(path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn write_out(path: &Path, contents: &str) -> Result<PathBuf, Failure> {
    let path = resolve_out(path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    fs::write(&path, contents).map_err(runtime)?;
    Ok(path)
}

fn load_config(path: Option<&Path>, overrides: &ConfigOverrides) -> Result<RunConfig, Failure> {
    let mut cfg = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| user(format!("cannot read config {}: {e}", p.display())))?;
            RunConfig::from_text(&text).map_err(user)?
        }
        None => RunConfig::default(),
    };
    apply_overrides(&mut cfg, overrides)?;
    cfg.validate().map_err(user)?;
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, ov: &ConfigOverrides) -> Result<(), Failure> {
    macro_rules! set {
        ($field:ident) => {
            if let Some(v) = &ov.$field {
                cfg.set(stringify!($field), &v.to_string()).map_err(user)?;
            }
        };
    }
    set!(seed);
    set!(embed_dim);
    set!(rgat_layers);
    set!(num_heads);
    set!(num_blocks);
    set!(max_len);
    set!(diff_steps);
    set!(noise_scale);
    set!(alpha_low);
    set!(alpha_up);
    set!(rebuild_k);
    set!(gate_epsilon);
    set!(gate_window);
    set!(l2_lambda);
    set!(learning_rate);
    set!(epochs);
    set!(rounds);
    set!(batch_size);
    set!(t_inf);
    set!(dropout);
    set!(train_negatives);
    set!(eval_negatives);
    set!(use_diffusion);
    set!(use_rgat);
    set!(use_kansformer);
    set!(use_task_adaptive);
    set!(fusion_mode);
    set!(stage1_reset);
    Ok(())
}

fn load_data(path: &Path) -> Result<Dataset, Failure> {
    load_dataset(path).map_err(|e| user(format!("{}: {e}", path.display())))
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Failure> {
    let cfg = GenConfig {
        n_patients: args.n_patients,
        n_diseases: args.n_diseases,
        n_symptoms: args.n_symptoms,
        n_exams: args.n_exams,
        n_rules: args.n_rules,
        seq_len_range: (args.seq_len_min, args.seq_len_max),
        rule_follow_prob: args.rule_follow,
        noise_prob: args.noise,
        two_phase_prob: args.two_phase,
        seed: args.seed,
    };
    let dataset = generate_synthetic(&cfg).map_err(user)?;
    let out = resolve_out(&args.out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    save_dataset(&dataset, &out).map_err(runtime)?;
    println!(
        "wrote {} patients ({} diseases, {} symptoms, {} exams) to {}",
        dataset.patients.len(),
        cfg.n_diseases,
        cfg.n_symptoms,
        cfg.n_exams,
        out.display()
    );
    Ok(())
}

fn print_metrics(metrics: &MetricRecord) {
    println!("patients evaluated: {}", metrics.n_evaluated());
    if metrics.shortage_count > 0 {
        println!(
            "note: {} patients had fewer candidates than requested negatives",
            metrics.shortage_count
        );
    }
    println!("HR@5    {:.4}", metrics.hr5);
    println!("HR@10   {:.4}", metrics.hr10);
    println!("NDCG@5  {:.4}", metrics.ndcg5);
    println!("NDCG@10 {:.4}", metrics.ndcg10);
}

fn cmd_train(args: TrainArgs) -> Result<(), Failure> {
    let cfg = load_config(args.config.as_deref(), &args.overrides)?;
    let dataset = load_data(&args.data)?;
    let (ckpt, report) = train(&dataset, &cfg).map_err(train_failure)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let out = resolve_out(&args.out);
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(runtime)?;
        }
    }
    ckpt.save(&out).map_err(|e| runtime(e.to_string()))?;
    if let Some(curves) = &args.curves {
        write_out(curves, &curve_to_csv(&report.curve))?;
    }
    if let Some(subgraph) = &args.subgraph_out {
        let edge_list = ckpt
            .subgraph
            .to_edge_list(&ckpt.patient_ids, ckpt.schedule_hash);
        write_out(subgraph, &edge_list)?;
    }
    println!(
        "checkpoint {} (config hash {:016x}), best validation HR@10 = {:.4} at round {} epoch {}",
        out.display(),
        ckpt.config_hash,
        report.best_val.hr10,
        report.best_round,
        report.best_epoch
    );
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<(), Failure> {
    let ckpt = Checkpoint::load(&args.ckpt)
        .map_err(|e| user(format!("{}: {e}", args.ckpt.display())))?;
    let dataset = load_data(&args.data)?;
    let (metrics, _) =
        evaluate_checkpoint(&ckpt, &dataset, args.full_catalog).map_err(train_failure)?;
    print_metrics(&metrics);
    if let Some(out) = &args.out {
        let path = write_out(out, &metrics.to_csv())?;
        println!("metrics written to {}", path.display());
    }
    if let Some(out) = &args.per_patient {
        let mut csv = String::from("patient_id,rank\n");
        for (pid, rank) in &metrics.ranks {
            csv.push_str(&format!("{pid},{rank}\n"));
        }
        let path = write_out(out, &csv)?;
        println!("per-patient ranks written to {}", path.display());
    }
    Ok(())
}

fn metrics_csv_row(label: &str, m: &MetricRecord) -> String {
    format!(
        "{label},{},{},{},{}\n",
        m.hr5, m.hr10, m.ndcg5, m.ndcg10
    )
}

type VariantTweak = fn(&mut RunConfig);

fn cmd_ablate(args: AblateArgs) -> Result<(), Failure> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    let dataset = load_data(&args.data)?;
    let variants: [(&str, VariantTweak); 4] = [
        ("full", |_| {}),
        ("wo_diffusion", |c| c.use_diffusion = false),
        ("wo_rgat", |c| c.use_rgat = false),
        ("wo_kansformer", |c| c.use_kansformer = false),
    ];
    let mut csv = String::from("variant,HR@5,HR@10,NDCG@5,NDCG@10\n");
    for (label, tweak) in variants {
        let mut cfg = base.clone();
        tweak(&mut cfg);
        let (ckpt, _) = train(&dataset, &cfg).map_err(train_failure)?;
        let (metrics, _) = evaluate_checkpoint(&ckpt, &dataset, false).map_err(train_failure)?;
        println!(
            "{label:<16} HR@10 = {:.4}  NDCG@10 = {:.4}",
            metrics.hr10, metrics.ndcg10
        );
        csv.push_str(&metrics_csv_row(label, &metrics));
    }
    let path = write_out(&args.out, &csv)?;
    println!("ablation table written to {}", path.display());
    Ok(())
}

const SWEEP_K: [usize; 5] = [10, 20, 30, 40, 50];
const SWEEP_LAYERS: [usize; 4] = [1, 2, 3, 4];
const SWEEP_EPSILON: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

fn cmd_sweep(args: SweepArgs) -> Result<(), Failure> {
    let base = load_config(args.config.as_deref(), &args.overrides)?;
    let dataset = load_data(&args.data)?;
    let run = |cfg: &RunConfig| -> Result<MetricRecord, Failure> {
        let (ckpt, _) = train(&dataset, cfg).map_err(train_failure)?;
        let (metrics, _) = evaluate_checkpoint(&ckpt, &dataset, false).map_err(train_failure)?;
        Ok(metrics)
    };

    let mut k_csv = String::from("rebuild_k,HR@5,HR@10,NDCG@5,NDCG@10\n");
    for k in SWEEP_K {
        let mut cfg = base.clone();
        cfg.rebuild_k = k;
        let m = run(&cfg)?;
        println!("rebuild_k={k:<3} HR@10 = {:.4}", m.hr10);
        k_csv.push_str(&metrics_csv_row(&k.to_string(), &m));
    }
    let p = write_out(&args.out_dir.join("sweep_rebuild_k.csv"), &k_csv)?;
    println!("wrote {}", p.display());

    let mut l_csv = String::from("rgat_layers,HR@5,HR@10,NDCG@5,NDCG@10\n");
    for l in SWEEP_LAYERS {
        let mut cfg = base.clone();
        cfg.rgat_layers = l;
        let m = run(&cfg)?;
        println!("rgat_layers={l} HR@10 = {:.4}", m.hr10);
        l_csv.push_str(&metrics_csv_row(&l.to_string(), &m));
    }
    let p = write_out(&args.out_dir.join("sweep_rgat_layers.csv"), &l_csv)?;
    println!("wrote {}", p.display());

    let mut e_csv = String::from("gate_epsilon,HR@5,HR@10,NDCG@5,NDCG@10\n");
    for eps in SWEEP_EPSILON {
        let mut cfg = base.clone();
        cfg.gate_epsilon = eps;
        let m = run(&cfg)?;
        println!("gate_epsilon={eps} HR@10 = {:.4}", m.hr10);
        e_csv.push_str(&metrics_csv_row(&eps.to_string(), &m));
    }
    let p = write_out(&args.out_dir.join("sweep_gate_epsilon.csv"), &e_csv)?;
    println!("wrote {}", p.display());
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<(), Failure> {
    if args.curves.is_none() && args.sweep.is_none() {
        return Err(user("report needs --curves and/or --sweep inputs"));
    }
    if let Some(curves) = &args.curves {
        let text = fs::read_to_string(curves)
            .map_err(|e| user(format!("{}: {e}", curves.display())))?;
        let rows = parse_curve_csv(&text)?;
        let svg = render_loss_chart(&rows);
        let p = write_out(&args.out_dir.join("loss_curves.svg"), &svg)?;
        println!("wrote {}", p.display());
        let summary = curve_summary_csv(&rows);
        let p = write_out(&args.out_dir.join("loss_summary.csv"), &summary)?;
        println!("wrote {}", p.display());
    }
    if let Some(sweep) = &args.sweep {
        let text = fs::read_to_string(sweep)
            .map_err(|e| user(format!("{}: {e}", sweep.display())))?;
        let svg = render_sweep_chart(&text).map_err(user)?;
        let stem = sweep
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("sweep");
        let p = write_out(&args.out_dir.join(format!("{stem}.svg")), &svg)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

struct CsvCurveRow {
    round: usize,
    stage: u8,
    epoch: usize,
    loss: f64,
    gate: f64,
}

fn parse_curve_csv(text: &str) -> Result<Vec<CsvCurveRow>, Failure> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 5 {
            return Err(user(format!("curve CSV line {}: expected 5 fields", i + 1)));
        }
        let parse_err = |f: &str| user(format!("curve CSV line {}: bad value {f:?}", i + 1));
        rows.push(CsvCurveRow {
            round: parts[0].parse().map_err(|_| parse_err(parts[0]))?,
            stage: parts[1].parse().map_err(|_| parse_err(parts[1]))?,
            epoch: parts[2].parse().map_err(|_| parse_err(parts[2]))?,
            loss: parts[3].parse().map_err(|_| parse_err(parts[3]))?,
            gate: parts[4].parse().map_err(|_| parse_err(parts[4]))?,
        });
    }
    Ok(rows)
}

fn curve_summary_csv(rows: &[CsvCurveRow]) -> String {
    let mut out = String::from("round,stage,epochs,first_loss,last_loss,final_gate\n");
    let mut groups: Vec<(usize, u8)> = rows.iter().map(|r| (r.round, r.stage)).collect();
    groups.dedup();
    for (round, stage) in groups {
        let members: Vec<&CsvCurveRow> = rows
            .iter()
            .filter(|r| r.round == round && r.stage == stage)
            .collect();
        if members.is_empty() {
            continue;
        }
        out.push_str(&format!(
            "{round},{stage},{},{},{},{}\n",
            members.iter().map(|r| r.epoch).max().unwrap(),
            members.first().unwrap().loss,
            members.last().unwrap().loss,
            members.last().unwrap().gate,
        ));
    }
    out
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

/// Minimal hand-rolled SVG polyline chart.
fn render_polylines(
    title: &str,
    x_label: &str,
    y_label: &str,
    series: &[(String, Vec<(f64, f64)>)],
) -> String {
    let (w, h) = (800.0, 500.0);
    let (ml, mr, mt, mb) = (70.0, 20.0, 40.0, 55.0);
    let pw = w - ml - mr;
    let ph = h - mt - mb;
    let all: Vec<(f64, f64)> = series.iter().flat_map(|(_, pts)| pts.clone()).collect();
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for (x, y) in &all {
        x0 = x0.min(*x);
        x1 = x1.max(*x);
        y0 = y0.min(*y);
        y1 = y1.max(*y);
    }
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
        y0 = 0.0;
        y1 = 1.0;
    }
    if (x1 - x0).abs() < 1e-12 {
        x1 = x0 + 1.0;
    }
    if (y1 - y0).abs() < 1e-12 {
        y1 = y0 + 1.0;
    }
    let sx = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut svg = format!(
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">
<rect width="{w}" height="{h}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>
<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{x_label}</text>
<text x="18" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 18 {})">{y_label}</text>
"#,
        w / 2.0,
        mt + ph,
        w - mr,
        mt + ph,
        mt + ph,
        ml + pw / 2.0,
        h - 12.0,
        mt + ph / 2.0,
        mt + ph / 2.0,
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        svg.push_str(&format!(
            r##"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10">{fx:.3}</text>
<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="10">{fy:.3}</text>
<line x1="{ml}" y1="{}" x2="{}" y2="{}" stroke="#dddddd"/>
"##,
            sx(fx),
            mt + ph + 16.0,
            ml - 6.0,
            sy(fy) + 3.0,
            sy(fy),
            w - mr,
            sy(fy),
        ));
    }
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .map(|(x, y)| format!("{:.2},{:.2}", sx(*x), sy(*y)))
            .collect();
        svg.push_str(&format!(
            r##"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>
<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{color}">{name}</text>
"##,
            path.join(" "),
            w - mr - 170.0,
            mt + 14.0 * (i as f64 + 1.0),
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

fn render_loss_chart(rows: &[CsvCurveRow]) -> String {
    let mut groups: Vec<(usize, u8)> = rows.iter().map(|r| (r.round, r.stage)).collect();
    groups.sort();
    groups.dedup();
    let mut series = Vec::new();
    let mut offset = 0usize;
    for (round, stage) in groups {
        let pts: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| r.round == round && r.stage == stage)
            .enumerate()
            .map(|(i, r)| ((offset + i + 1) as f64, r.loss))
            .collect();
        offset += pts.len();
        series.push((format!("round {round} stage {stage}"), pts));
    }
    render_polylines("training loss", "optimizer epoch (cumulative)", "loss", &series)
}

fn render_sweep_chart(text: &str) -> Result<String, String> {
    let mut lines = text.lines();
    let header = lines.next().ok_or("empty sweep CSV")?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 5 {
        return Err("sweep CSV needs a parameter column and 4 metric columns".into());
    }
    let param = cols[0].to_string();
    let mut hr10 = Vec::new();
    let mut ndcg10 = Vec::new();
    for line in lines {
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        let x: f64 = f[0].parse().map_err(|_| format!("bad value {:?}", f[0]))?;
        let h: f64 = f[2].parse().map_err(|_| format!("bad value {:?}", f[2]))?;
        let n: f64 = f[4].parse().map_err(|_| format!("bad value {:?}", f[4]))?;
        hr10.push((x, h));
        ndcg10.push((x, n));
    }
    Ok(render_polylines(
        &format!("sweep over {param}"),
        &param,
        "metric",
        &[("HR@10".into(), hr10), ("NDCG@10".into(), ndcg10)],
    ))
}
