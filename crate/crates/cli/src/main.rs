//! `cada`: datasets, training, evaluation and diagnostics from the shell.
//!
//! Exit status is 0 on success, 1 on runtime failures (including an
//! infeasible solution passed to `validate`) and 2 on usage errors.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use cada_core::baselines::{exact_solve, nn_construct, two_opt};
use cada_core::cvrplib::{cvrplib_to_instance, read_cvrplib};
use cada_core::format::{
    parse_references, parse_solution, read_instances, references_to_string, solution_to_string, write_instances, ReferenceCost,
};
use cada_core::validate::validate_sequence;
use cada_core::{generate_instance, Instance, VariantSpec};
use cada_model::eval::{attention_stats, evaluate, solve_instance, write_depot_csv, write_tw_csv, EvalOptions, REPORT_HEADER};
use cada_model::atomic_write;
use cada_model::train::{derive_seed, parse_config, TrainConfig, Trainer, METRICS_HEADER};
use cada_model::{ExecMode, Model, ModelConfig};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "cada", version, about = "Multi-variant neural vehicle routing solver")]
struct Cli {
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Flat `key = value` settings file applied on top of the profile.
    #[arg(long, global = true, env = "CADA_CONFIG")]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Profile::Desk)]
    profile: Profile,
    /// Machine-readable output.
    #[arg(long, global = true)]
    csv: bool,
    /// `parallel` or `sequential`.
    #[arg(long, global = true, default_value = "parallel")]
    exec: ExecMode,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Profile {
    Desk,
    Paper,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Method {
    Exact,
    Nn,
    #[value(name = "nn-2opt")]
    Nn2opt,
}

#[derive(clap::Args, Debug)]
struct Inference {
    /// Best of the 8 dihedral transforms.
    #[arg(long)]
    aug8: bool,
    /// 32 tries every binary prompt vector.
    #[arg(long, default_value_t = 1, value_parser = clap::builder::TypedValueParser::map(clap::builder::PossibleValuesParser::new(["1", "32"]), |s: String| s.parse::<u32>().unwrap()))]
    prompt_aug: u32,
    /// Sparse top-k used at inference.
    #[arg(long)]
    k: Option<usize>,
}

impl Inference {
    fn options(&self) -> EvalOptions {
        EvalOptions {
            augment8: self.aug8,
            prompt32: self.prompt_aug == 32,
            k: self.k,
            n_starts: None,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write random instances.
    Generate {
        /// Variant name such as CVRP or OVRPBLTW, or `all`.
        #[arg(long, default_value = "CVRP")]
        variant: String,
        #[arg(long, default_value_t = 20)]
        n: usize,
        /// Instances per variant.
        #[arg(long, default_value_t = 100)]
        count: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model; checkpoints and metrics.csv go to `out`.
    Train {
        #[arg(long)]
        out: PathBuf,
        /// Continue from the newest checkpoint in `out`.
        #[arg(long)]
        resume: bool,
    },
    /// Evaluate a checkpoint on a dataset, one report row per variant.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Reference costs (`instance_id,cost,optimal_flag`).
        #[arg(long)]
        refs: Option<PathBuf>,
        #[command(flatten)]
        inference: Inference,
    },
    /// Solve one instance and print the solution.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        instance: PathBuf,
        /// Which instance of the file.
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[command(flatten)]
        inference: Inference,
    },
    /// Check a solution against an instance.
    Validate {
        #[arg(long)]
        instance: PathBuf,
        #[arg(long)]
        solution: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
    },
    /// Reference costs from a classical solver.
    Baseline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value_t = Method::Nn2opt)]
        method: Method,
        /// Written to stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a checkpoint on CVRPLib files.
    Cvrplib {
        #[arg(long)]
        model: PathBuf,
        #[arg(required = true)]
        files: Vec<PathBuf>,
        /// Best-known costs as `name,cost` lines.
        #[arg(long)]
        bks: Option<PathBuf>,
        #[command(flatten)]
        inference: Inference,
    },
    /// Export attention diagnostics as attn_depot.csv and attn_tw.csv.
    AttnStats {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn variants(name: &str) -> Result<Vec<VariantSpec>> {
    if name.eq_ignore_ascii_case("all") {
        return Ok(VariantSpec::all().to_vec());
    }
    name.split(',').map(|s| Ok(s.trim().parse()?)).collect()
}

fn load_model(path: &Path) -> Result<Model<f32>> {
    Model::load(path).with_context(|| format!("loading {}", path.display()))
}

fn load_instances(path: &Path) -> Result<Vec<Instance>> {
    let insts = read_instances(path).with_context(|| format!("reading {}", path.display()))?;
    if insts.is_empty() {
        bail!("{} holds no instances", path.display());
    }
    Ok(insts)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |w| Ok(w.write_all(text.as_bytes())?)).with_context(|| format!("writing {}", path.display()))
}

fn generate(cli: &Cli, variant: &str, n: usize, count: usize, out: &Path) -> Result<()> {
    if n == 0 {
        bail!("n must be positive");
    }
    let seed = cli.seed.unwrap_or(0);
    let mut insts = Vec::new();
    for v in variants(variant)? {
        insts.extend((0..count).map(|i| generate_instance(n, v, derive_seed(seed, v.index(), n, i))));
    }
    atomic_write(out, |w| Ok(write_instances(w, &insts)?)).with_context(|| format!("writing {}", out.display()))?;
    eprintln!("wrote {} instances to {}", insts.len(), out.display());
    Ok(())
}

fn configs(cli: &Cli) -> Result<(TrainConfig, ModelConfig)> {
    let (train, model) = match cli.profile {
        Profile::Desk => (TrainConfig::desk(), ModelConfig::desk()),
        Profile::Paper => (TrainConfig::paper(50), ModelConfig::default()),
    };
    let (mut train, model) = match &cli.config {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            parse_config(&text, train, model)?
        }
        None => (train, model),
    };
    if let Some(s) = cli.seed {
        train.seed = s;
    }
    Ok((train, model))
}

fn train(cli: &Cli, out: &Path, resume: bool) -> Result<()> {
    let (tc, mc) = configs(cli)?;
    let model = Model::new(mc, tc.seed)?;
    let mut trainer = Trainer::new(tc, model, Some(out.to_path_buf()))?;
    trainer.mode = cli.exec;
    if resume {
        if trainer.resume()? {
            eprintln!("resuming after epoch {}", trainer.epoch);
        } else {
            eprintln!("no checkpoint in {}, starting fresh", out.display());
        }
    }
    if cli.csv {
        println!("{METRICS_HEADER}");
    }
    let start = Instant::now();
    trainer.run(|m| {
        if cli.csv {
            println!("{}", m.csv_row());
        } else {
            println!(
                "epoch {:>3}  {:<9} cost {:.4}  loss {:>9.4}  lr {:.1e}  [{:.0}s]",
                m.epoch,
                m.variant.to_string(),
                m.mean_cost,
                m.loss,
                m.lr,
                start.elapsed().as_secs_f64()
            );
        }
    })?;
    Ok(())
}

fn eval(cli: &Cli, model: &Path, data: &Path, refs: Option<&Path>, inf: &Inference) -> Result<()> {
    let model = load_model(model)?;
    let insts = load_instances(data)?;
    let refs = match refs {
        Some(p) => {
            let rows = parse_references(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?;
            Some(rows)
        }
        None => None,
    };
    let mut order: Vec<VariantSpec> = Vec::new();
    for i in &insts {
        if !order.contains(&i.variant) {
            order.push(i.variant);
        }
    }
    if cli.csv {
        println!("{REPORT_HEADER}");
    }
    for v in order {
        let idx: Vec<usize> = (0..insts.len()).filter(|&i| insts[i].variant == v).collect();
        let group: Vec<Instance> = idx.iter().map(|&i| insts[i].clone()).collect();
        let group_refs: Option<Vec<f64>> = refs.as_ref().and_then(|rows| {
            idx.iter()
                .map(|i| rows.iter().find(|r| r.instance_id == i.to_string()).map(|r| r.cost))
                .collect()
        });
        let report = evaluate(&model, &group, group_refs.as_deref(), &inf.options(), cli.exec)?;
        if cli.csv {
            println!("{}", report.csv_row());
        } else {
            let gap = report.gap.map_or("-".to_string(), |g| format!("{:.3}%", 100.0 * g));
            println!(
                "{:<9} n={:<4} obj {:.4}  gap {gap}  time {:.2}s  ({} instances)",
                v.to_string(),
                report.n,
                report.mean_obj,
                report.time_s,
                group.len()
            );
        }
    }
    Ok(())
}

fn solve(cli: &Cli, model: &Path, instance: &Path, index: usize, inf: &Inference) -> Result<()> {
    let model = load_model(model)?;
    let insts = load_instances(instance)?;
    let inst = insts.get(index).with_context(|| format!("no instance {index} in {}", instance.display()))?;
    let (seq, cost) = solve_instance(&model, inst, &inf.options())?;
    if cli.csv {
        let s: Vec<String> = seq.iter().map(|i| i.to_string()).collect();
        println!("cost,sequence\n{cost},{}", s.join(" "));
    } else {
        print!("{}", solution_to_string(cost, &seq));
    }
    Ok(())
}

/// Returns whether the solution is feasible.
fn validate(instance: &Path, solution: &Path, index: usize) -> Result<bool> {
    let insts = load_instances(instance)?;
    let inst = insts.get(index).with_context(|| format!("no instance {index} in {}", instance.display()))?;
    let text = fs::read_to_string(solution).with_context(|| format!("reading {}", solution.display()))?;
    let (claimed, seq) = parse_solution(&text)?;
    let check = validate_sequence(inst, &seq);
    let mut ok = check.is_feasible();
    if check.cost.is_finite() && (check.cost - claimed).abs() > 1e-6 * check.cost.max(1.0) {
        println!("cost mismatch: file says {claimed}, actual {}", check.cost);
        ok = false;
    }
    for v in &check.violations {
        println!("violation: {v}");
    }
    println!("{} cost {}", if ok { "feasible" } else { "infeasible" }, check.cost);
    Ok(ok)
}

fn baseline(data: &Path, method: Method, out: Option<&Path>) -> Result<()> {
    let insts = load_instances(data)?;
    let mut rows = Vec::with_capacity(insts.len());
    for (i, inst) in insts.iter().enumerate() {
        let (cost, optimal) = match method {
            Method::Exact => {
                let r = exact_solve(inst).with_context(|| format!("instance {i}"))?;
                (r.solution.cost, r.optimal)
            }
            Method::Nn => (nn_construct(inst).with_context(|| format!("instance {i}"))?.cost, false),
            Method::Nn2opt => {
                let nn = nn_construct(inst).with_context(|| format!("instance {i}"))?;
                (two_opt(&nn, inst).cost, false)
            }
        };
        rows.push(ReferenceCost {
            instance_id: i.to_string(),
            cost,
            optimal,
        });
    }
    let text = references_to_string(&rows);
    match out {
        Some(p) => write_file(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn read_bks(path: &Path) -> Result<Vec<(String, f64)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (i == 0 && line.starts_with("name")) {
            continue;
        }
        let (name, cost) = line
            .split_once(',')
            .with_context(|| format!("{}:{}: expected `name,cost`", path.display(), i + 1))?;
        let cost: f64 = cost
            .trim()
            .parse()
            .with_context(|| format!("{}:{}: bad cost", path.display(), i + 1))?;
        out.push((name.trim().to_string(), cost));
    }
    Ok(out)
}

fn cvrplib(cli: &Cli, model: &Path, files: &[PathBuf], bks: Option<&Path>, inf: &Inference) -> Result<()> {
    let model = load_model(model)?;
    let bks = bks.map(read_bks).transpose()?.unwrap_or_default();
    let opts = inf.options();
    if cli.csv {
        println!("name,n,obj,bks,gap,time_s");
    }
    let (mut gaps, mut total) = (Vec::new(), 0.0);
    for f in files {
        let c = read_cvrplib(f).with_context(|| format!("reading {}", f.display()))?;
        let (inst, scale) = cvrplib_to_instance(&c).with_context(|| format!("converting {}", f.display()))?;
        let start = Instant::now();
        let (seq, _) = solve_instance(&model, &inst, &opts)?;
        let t = start.elapsed().as_secs_f64();
        total += t;
        let obj = scale.objective(&seq);
        let best = bks.iter().find(|(n, _)| *n == c.name).map(|(_, b)| *b);
        let gap = best.map(|b| (obj - b) / b);
        gaps.extend(gap);
        let fmt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        if cli.csv {
            println!("{},{},{obj},{},{},{t}", c.name, inst.n(), fmt(best), fmt(gap));
        } else {
            let g = gap.map_or("-".into(), |g| format!("{:.3}%", 100.0 * g));
            println!("{:<16} n={:<5} obj {obj:<10} gap {g}  {t:.2}s", c.name, inst.n());
        }
    }
    if !cli.csv && !gaps.is_empty() {
        println!(
            "mean gap {:.3}% over {} instances, {total:.1}s",
            100.0 * gaps.iter().sum::<f64>() / gaps.len() as f64,
            gaps.len()
        );
    }
    Ok(())
}

fn attn_stats(cli: &Cli, model: &Path, data: &Path, out: &Path) -> Result<()> {
    let model = load_model(model)?;
    let insts = load_instances(data)?;
    let stats = attention_stats(&model, &insts, cli.exec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let depot = out.join("attn_depot.csv");
    let tw = out.join("attn_tw.csv");
    atomic_write(&depot, |w| Ok(write_depot_csv(w, &stats.depot)?))?;
    atomic_write(&tw, |w| Ok(write_tw_csv(w, &stats.tw)?))?;
    eprintln!("{} depot rows, {} surplus-time rows", stats.depot.len(), stats.tw.len());
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    match &cli.command {
        Command::Generate { variant, n, count, out } => generate(cli, variant, *n, *count, out)?,
        Command::Train { out, resume } => train(cli, out, *resume)?,
        Command::Eval { model, data, refs, inference } => eval(cli, model, data, refs.as_deref(), inference)?,
        Command::Solve {
            model,
            instance,
            index,
            inference,
        } => solve(cli, model, instance, *index, inference)?,
        Command::Validate { instance, solution, index } => return validate(instance, solution, *index),
        Command::Baseline { data, method, out } => baseline(data, *method, out.as_deref())?,
        Command::Cvrplib {
            model,
            files,
            bks,
            inference,
        } => cvrplib(cli, model, files, bks.as_deref(), inference)?,
        Command::AttnStats { model, data, out } => attn_stats(cli, model, data, out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
