//! The `etrpcp` command line. Every report embeds the run configuration,
//! and every randomized command requires `--seed`.

use crate::approx::{approx2, approx8, Approx8Mode};
use crate::constraint_core::{evaluate, evaluate_fixed, evaluate_with, generate_hard_instance, parse_assignment, parse_instance, serialize_instance, Instance};
use crate::constraint_graph::{parse_graph, satisfying_assignment, serialize_graph};
use crate::gap_pipeline::{amplify, FiniteTester, PairTester, PipelineParams, TrivialTester};
use crate::midpoint_code::{self as mc, AbelianGroup, CodeParams, ProofString};
use crate::numerics::{format_rational, parse_rational, Fixed, Group, GroupElement, Rational, FRAC_BITS};
use crate::reductions::{forward_witness, reduce_cq_to_etrinv};
use crate::seeds;
use clap::{Args, Parser, Subcommand, ValueEnum};
use num_bigint::BigInt;
use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// Root seed; required by randomized commands
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub trials: Option<u64>,
    #[arg(long, global = true)]
    pub budget: Option<u64>,
    /// Print the JSON report instead of a summary
    #[arg(long, global = true)]
    pub json: bool,
    /// Report file (directory for commands that emit several files)
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate an assignment against an instance; exit 1 unless all hold
    Eval { instance: PathBuf, assignment: PathBuf },
    /// Compile an ETR-C(q) instance into ETR-INV
    Reduce {
        instance: PathBuf,
        /// Source assignment whose forward witness is checked on the output
        #[arg(long)]
        witness: Option<PathBuf>,
    },
    /// Midpoint-code pass-rate and decoder experiment
    Codeexp(CodeArgs),
    /// One or more rounds of gap amplification on a finite constraint graph
    Pipeline {
        graph: PathBuf,
        #[arg(long, default_value_t = 1)]
        rounds: usize,
        #[arg(long, default_value_t = 8)]
        d: usize,
        /// Target second eigenvalue; defaults to 0.9 d
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 1)]
        t: usize,
        #[arg(long, value_enum, default_value_t = TesterKind::Pair)]
        tester: TesterKind,
        /// Write the amplified graph here
        #[arg(long)]
        emit: Option<PathBuf>,
    },
    /// Approximate MAX-ETR-INV
    Approx {
        instance: PathBuf,
        #[arg(long, value_enum)]
        method: ApproxMethod,
        /// approx8 only: sample instead of derandomizing
        #[arg(long)]
        randomized: bool,
    },
    /// Hard ETR-C(q) instance whose only solution is irrational
    Hardgen {
        #[arg(long)]
        p: u64,
        #[arg(long, default_value = "1/64")]
        q: String,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum TesterKind {
    Pair,
    Trivial,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ApproxMethod {
    #[value(name = "8")]
    Eight,
    #[value(name = "2")]
    Two,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum Adversary {
    Honest,
    Halfspace,
    Overlay,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CodeArgs {
    /// addq, mulq, int or modp:P
    #[arg(long, default_value = "addq")]
    pub group: String,
    #[arg(long, default_value_t = 1)]
    pub n: usize,
    #[arg(long)]
    pub k1: Option<i128>,
    #[arg(long)]
    pub k2: Option<i128>,
    /// Build k1, k2 from delta and r instead
    #[arg(long)]
    pub delta: Option<String>,
    #[arg(long, default_value_t = 1)]
    pub r: u64,
    #[arg(long, value_enum, default_value_t = Adversary::Honest)]
    pub adversary: Adversary,
    /// Overlay corruption rate
    #[arg(long, default_value = "1/50")]
    pub rate: String,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad input: exit code 2.
    Input(String),
    /// Experiment or check failure: exit code 1.
    Failure(String, Value),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Failure(..) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Input(m) | CliError::Failure(m, _) => f.write_str(m),
        }
    }
}

fn input<E: std::fmt::Display>(what: &Path) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Input(format!("{}: {e}", what.display()))
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(input(path))
}

fn need_seed(c: &Common, cmd: &str) -> Result<u64, CliError> {
    c.seed.ok_or_else(|| CliError::Input(format!("{cmd} is randomized and needs --seed")))
}

/// A finished command: the JSON report, a one-paragraph summary and an
/// optional failure message (exit code 1).
pub struct Outcome {
    pub report: Value,
    pub summary: String,
    pub failure: Option<String>,
}

pub fn run_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let (command, common) = match parse(args) {
        Ok(x) => x,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&command, &common) {
        Ok(out) => {
            if let Err(e) = emit(&out, &common) {
                eprintln!("error: {}", message(&e));
                return e.code();
            }
            match out.failure {
                Some(f) => {
                    eprintln!("check failed: {f}");
                    1
                }
                None => 0,
            }
        }
        Err(e) => {
            eprintln!("error: {}", message(&e));
            e.code()
        }
    }
}

fn message(e: &CliError) -> &str {
    match e {
        CliError::Input(m) | CliError::Failure(m, _) => m,
    }
}

pub fn parse<I, T>(args: I) -> Result<(Command, Common), clap::Error>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    #[derive(Parser)]
    #[command(name = "etrpcp", version, about = "Gap amplification, code testers and reductions for ETR")]
    struct Full {
        #[command(flatten)]
        common: Common,
        #[command(subcommand)]
        command: Command,
    }
    let f = Full::try_parse_from(args)?;
    Ok((f.command, f.common))
}

fn emit(out: &Outcome, common: &Common) -> Result<(), CliError> {
    let text = serde_json::to_string_pretty(&out.report).expect("report serializes");
    // a closed pipe (e.g. `| head`) is not an error worth reporting
    let mut stdout = std::io::stdout().lock();
    let _ = if common.json { writeln!(stdout, "{text}") } else { writeln!(stdout, "{}", out.summary) };
    if let Some(path) = &common.out {
        let file = if path.is_dir() { path.join("report.json") } else { path.clone() };
        std::fs::write(&file, text + "\n").map_err(input(&file))?;
    }
    Ok(())
}

pub fn execute(cmd: &Command, common: &Common) -> Result<Outcome, CliError> {
    let (name, mut out) = match cmd {
        Command::Eval { instance, assignment } => ("eval", cmd_eval(instance, assignment)?),
        Command::Reduce { instance, witness } => ("reduce", cmd_reduce(instance, witness.as_deref(), common)?),
        Command::Codeexp(a) => ("codeexp", cmd_codeexp(a, common)?),
        Command::Pipeline { graph, rounds, d, lambda, t, tester, emit } => {
            let params = PipelineParams {
                d: *d,
                lambda: lambda.unwrap_or(0.9 * *d as f64),
                t: *t,
                rounds: *rounds,
                seed: need_seed(common, "pipeline")?,
                walk_budget: common.budget.unwrap_or(PipelineParams::default().walk_budget),
                ..PipelineParams::default()
            };
            ("pipeline", cmd_pipeline(graph, &params, *tester, emit.as_deref())?)
        }
        Command::Approx { instance, method, randomized } => ("approx", cmd_approx(instance, *method, *randomized, common)?),
        Command::Hardgen { p, q } => ("hardgen", cmd_hardgen(*p, q, common)?),
    };
    if let Value::Object(m) = &mut out.report {
        m.insert("config".into(), json!({ "command": name, "args": format!("{cmd:?}"), "common": common }));
    }
    Ok(out)
}

fn load_instance(path: &Path) -> Result<Instance, CliError> {
    parse_instance(&read(path)?).map_err(input(path))
}

pub fn cmd_eval(instance: &Path, assignment: &Path) -> Result<Outcome, CliError> {
    let inst = load_instance(instance)?;
    let a = parse_assignment(&read(assignment)?).map_err(input(assignment))?;
    let rep = evaluate(&inst, &a).map_err(input(assignment))?;
    let frac = format_rational(&rep.fraction());
    let failure = (!rep.all_satisfied()).then(|| format!("{} of {} constraints hold", rep.satisfied, rep.total));
    Ok(Outcome {
        summary: format!("satisfied {}/{} (fraction {frac})", rep.satisfied, rep.total),
        report: json!({ "fraction": frac, "report": rep }),
        failure,
    })
}

pub fn cmd_reduce(instance: &Path, witness: Option<&Path>, common: &Common) -> Result<Outcome, CliError> {
    let phi = load_instance(instance)?;
    let (psi, trace) = reduce_cq_to_etrinv(&phi).map_err(input(instance))?;
    let mut report = json!({
        "k": trace.k,
        "block_size": trace.block_size,
        "reference_block_size": trace.reference_block_size,
        "source_constraints": phi.len(),
        "target_constraints": psi.len(),
        "target_vars": psi.n,
    });
    let mut summary = format!(
        "k = {}: {} constraints -> {} (block size {}, reference 1266+2k = {})",
        trace.k,
        phi.len(),
        psi.len(),
        trace.block_size,
        trace.reference_block_size
    );
    let mut failure = None;
    if let Some(w) = witness {
        let x = parse_assignment(&read(w)?).map_err(input(w))?;
        let src = evaluate(&phi, &x).map_err(input(w))?;
        if !src.all_satisfied() {
            return Err(CliError::Input(format!("{}: witness does not satisfy the source", w.display())));
        }
        let fw = forward_witness(&phi, &trace, &x).map_err(input(w))?;
        let rep = evaluate_with(&psi, &fw).map_err(input(w))?;
        report["forward_witness_fraction"] = json!(format_rational(&rep.fraction()));
        summary += &format!("\nforward witness satisfies {}/{}", rep.satisfied, rep.total);
        if !rep.all_satisfied() {
            failure = Some("forward witness does not satisfy the target".into());
        }
    }
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(input(dir))?;
        let files = [("psi.etr", serialize_instance(&psi)), ("trace.json", trace.to_json() + "\n")];
        for (name, body) in files {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(input(&p))?;
        }
    }
    Ok(Outcome { report, summary, failure })
}

pub fn parse_group(s: &str) -> Result<Group, CliError> {
    match s {
        "addq" => Ok(Group::AddQ),
        "mulq" => Ok(Group::MulQ),
        "int" => Ok(Group::Int),
        _ => match s.strip_prefix("modp:").and_then(|p| p.parse::<u64>().ok()) {
            Some(p) if crate::constraint_core::is_prime(p) => Ok(Group::ModP(p)),
            _ => Err(CliError::Input(format!("unknown group {s:?} (addq, mulq, int, modp:P with P prime)"))),
        },
    }
}

#[derive(Serialize)]
struct ModeLine {
    d: Vec<i128>,
    value: String,
    expected: String,
    frequency: f64,
    wilson99: (f64, f64),
    exhaustive: bool,
}

pub fn cmd_codeexp(a: &CodeArgs, common: &Common) -> Result<Outcome, CliError> {
    let seed = need_seed(common, "codeexp")?;
    let trials = common.trials.unwrap_or(100_000);
    let group = parse_group(&a.group)?;
    let params = match (&a.delta, a.k1, a.k2) {
        (Some(d), None, None) => {
            let d = parse_rational(d).map_err(|e| CliError::Input(e.to_string()))?;
            CodeParams::from_formula(a.n, &d, a.r)
        }
        (None, Some(k1), Some(k2)) => CodeParams::new(a.n, k1, k2),
        _ => return Err(CliError::Input("give either --delta or both --k1 and --k2".into())),
    }
    .map_err(|e| CliError::Input(e.to_string()))?;
    let mut rng = seeds::stream(seed, 1);
    let elem = |rng: &mut rand_chacha::ChaCha8Rng| {
        let v = rng.gen_range(2..=9);
        group.element_from_int(v).expect("positive integer embeds")
    };
    let alpha: Vec<GroupElement> = (0..a.n).map(|_| elem(&mut rng)).collect();
    let g0 = elem(&mut rng);
    let mut proof: ProofString<Group> = match a.adversary {
        Adversary::Halfspace => {
            if group != Group::AddQ || a.n != 1 {
                return Err(CliError::Input("the half-space adversary is defined for addq with n = 1".into()));
            }
            mc::adversarial_halfspace(&params)
        }
        _ => mc::encode(&alpha, g0.clone(), &params, &group).map_err(|e| CliError::Input(e.to_string()))?,
    };
    if a.adversary == Adversary::Overlay {
        let rate = parse_rational(&a.rate).map_err(|e| CliError::Input(e.to_string()))?;
        let m = params.m().ok_or_else(|| CliError::Input("grid too large for an overlay".into()))?;
        let count = (rate * Rational::from_integer(BigInt::from(m))).floor().to_integer();
        let count: u64 = count.try_into().map_err(|_| CliError::Input("overlay too large".into()))?;
        if count > 10_000_000 {
            return Err(CliError::Input("overlay too large".into()));
        }
        for _ in 0..count {
            let x = mc::sample_point(&mut rng, &params);
            let v = elem(&mut rng);
            proof.corrupt(x, v).expect("sampled point lies in the grid");
        }
    }
    let est = mc::estimate_pass_rate(&proof, trials, seeds::child(seed, 2));
    let budget = common.budget.unwrap_or(100_000);
    let mut modes = vec![];
    for d in mc::l1_ball(a.n, a.r as i128) {
        if d.iter().all(|&c| c == 0) {
            continue;
        }
        let Ok(rep) = mc::mode_statistic(&proof, &d, budget, seeds::child(seed, 3)) else { continue };
        let expected = d.iter().zip(&alpha).fold(group.identity(), |acc, (&di, ai)| group.op(&acc, &group.times(di, ai)));
        modes.push(ModeLine {
            d,
            value: rep.value.to_string(),
            expected: expected.to_string(),
            frequency: rep.frequency,
            wilson99: rep.wilson99,
            exhaustive: rep.exhaustive,
        });
    }
    let summary = format!(
        "{} over {group}, n={}, k1={}, k2={}: pass rate {:.5} (99% [{:.5}, {:.5}]) in {} trials",
        serde_json::to_value(a.adversary).unwrap().as_str().unwrap_or(""),
        params.n,
        params.k1,
        params.k2,
        est.rate,
        est.lower(),
        est.upper(),
        est.trials
    );
    Ok(Outcome {
        report: json!({ "params": params, "group": group.to_string(), "overlay": proof.overlay_len(), "pass_rate": est, "modes": modes }),
        summary,
        failure: None,
    })
}

pub fn cmd_pipeline(graph: &Path, params: &PipelineParams, tester: TesterKind, emit: Option<&Path>) -> Result<Outcome, CliError> {
    let g = parse_graph(&read(graph)?).map_err(input(graph))?;
    g.validate().map_err(input(graph))?;
    let t: Arc<dyn FiniteTester> = match tester {
        TesterKind::Pair => Arc::new(PairTester),
        TesterKind::Trivial => Arc::new(TrivialTester),
    };
    let (chain, trace) = amplify(&g, params, t).map_err(|e| CliError::Failure(e.to_string(), Value::Null))?;
    let sat = satisfying_assignment(&g, 1 << 20).ok();
    let mut failure = None;
    let transport = match &sat {
        Some(Some(a)) => {
            let f = chain.forward(a);
            let ok = chain.output().violated_sym(&f) == 0;
            if !ok {
                failure = Some("transported witness violates the output".to_string());
            }
            Some(ok)
        }
        _ => None,
    };
    let input_sat = sat.map(|s| s.is_some());
    if let Some(p) = emit {
        std::fs::write(p, serialize_graph(chain.output())).map_err(input(p))?;
    }
    let mut summary = String::new();
    for s in &trace.stages {
        summary += &format!(
            "round {} {:8} |V|={:<8} |E|={:<9} {}{}\n",
            s.round,
            s.stage,
            s.vertices,
            s.edges,
            s.alphabet,
            s.lambda.map(|l| format!(" lambda={l:.4}")).unwrap_or_default()
        );
    }
    let word = |b: Option<bool>, none: &'static str| match b {
        Some(true) => "yes",
        Some(false) => "no",
        None => none,
    };
    summary += &format!(
        "input satisfiable: {}; witness transported: {}",
        word(input_sat, "unknown (over budget)"),
        word(transport, "n/a")
    );
    Ok(Outcome {
        report: json!({ "params": params, "trace": trace, "input_satisfiable": input_sat, "witness_transported": transport }),
        summary,
        failure,
    })
}

pub fn cmd_approx(instance: &Path, method: ApproxMethod, randomized: bool, common: &Common) -> Result<Outcome, CliError> {
    let inst = load_instance(instance)?;
    let res = match method {
        ApproxMethod::Eight => {
            let mode = if randomized {
                Approx8Mode::Randomized { seed: need_seed(common, "approx --randomized")?, trials: common.trials.unwrap_or(100) }
            } else {
                Approx8Mode::Derandomized
            };
            approx8(&inst, mode)
        }
        ApproxMethod::Two => approx2(&inst, common.budget.unwrap_or(1 << 20)),
    }
    .map_err(input(instance))?;
    let rep = evaluate(&inst, &res.assignment).expect("result has instance length");
    let failure = (rep.fraction() != res.fraction).then(|| "reported fraction does not re-evaluate".to_string());
    Ok(Outcome {
        summary: format!("{:?}: satisfied {}/{} (fraction {})", res.method, res.satisfied, res.total, format_rational(&res.fraction)),
        report: serde_json::to_value(&res).expect("result serializes"),
        failure,
    })
}

/// `x` as a decimal string with `digits` fractional digits (truncated).
pub fn fixed_decimal(x: &Fixed, digits: u32) -> String {
    let scaled: BigInt = (&x.mant * BigInt::from(10).pow(digits)) >> FRAC_BITS;
    let s = scaled.to_string();
    let (neg, s) = s.strip_prefix('-').map_or((false, s.as_str()), |r| (true, r));
    let s = format!("{s:0>width$}", width = digits as usize + 1);
    let (i, f) = s.split_at(s.len() - digits as usize);
    format!("{}{i}.{f}", if neg { "-" } else { "" })
}

pub fn cmd_hardgen(p: u64, q: &str, common: &Common) -> Result<Outcome, CliError> {
    let q = parse_rational(q).map_err(|e| CliError::Input(e.to_string()))?;
    let h = generate_hard_instance(p, q).map_err(|e| CliError::Input(e.to_string()))?;
    let rep = evaluate_fixed(&h.instance, &h.witness, &Rational::new(BigInt::from(1), BigInt::from(10).pow(20))).expect("witness length");
    let ceil_count = 2 * (64 - (p - 1).leading_zeros()) as usize + 3;
    let witness: Vec<Value> = h
        .exponents
        .iter()
        .zip(&h.witness)
        .map(|(l, w)| json!({ "value": format!("2^({l}/{p})"), "decimal": fixed_decimal(w, 40) }))
        .collect();
    let failure = (!rep.all_satisfied() || !rep.range_violations.is_empty()).then(|| "witness check failed".to_string());
    if let Some(dir) = &common.out {
        std::fs::create_dir_all(dir).map_err(input(dir))?;
        let files = [
            (format!("hard_p{p}.etr"), serialize_instance(&h.instance)),
            (format!("hard_p{p}.witness.json"), serde_json::to_string_pretty(&witness).unwrap() + "\n"),
        ];
        for (name, body) in files {
            let path = dir.join(name);
            std::fs::write(&path, body).map_err(input(&path))?;
        }
    }
    Ok(Outcome {
        summary: format!(
            "p = {p}: {} variables ({} with ceil(log2 p)), {} constraints; witness satisfies {}/{} within 1e-20",
            h.instance.n,
            ceil_count,
            h.instance.len(),
            rep.satisfied,
            rep.total
        ),
        report: json!({
            "p": p,
            "j": h.j,
            "vars": h.instance.n,
            "vars_ceil_formula": ceil_count,
            "instance": serialize_instance(&h.instance),
            "witness": witness,
            "fixed_point_check": rep,
        }),
        failure,
    })
}
