//! `gridmech`: author instances, fit supply curves, solve, sweep, verify and
//! account electricity-market mechanisms from the command line.

mod manifest;
mod verify;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use gridmech::defaults::Pack;
use gridmech::equilibrium::{self, EquilibriumReport};
use gridmech::fixtures;
use gridmech::model::{Hourly, MarketInstance, MechanismKind, MechanismSpec, Uplift};
use gridmech::network::{self, GridTopology};
use gridmech::social_optimum::solve_so;
use gridmech::supply_curve::{self, ClusterKey, ClusterPlan, ProbabilityWeights};
use gridmech::surplus::{self, SurplusReport, UpliftPayer};
use gridmech::sweep::{self, SweepParam};

use manifest::Recorder;

const EXIT_USAGE: u8 = 1;
const EXIT_SOLVER: u8 = 2;
const EXIT_VERIFY: u8 = 3;

#[derive(Parser, Debug)]
#[command(name = "gridmech", version, about = "Social optimum, equilibria and surpluses of electricity-market mechanisms")]
struct Cli {
    /// JSON file of option defaults; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for parallel work.
    #[arg(long, global = true, env = "GRIDMECH_THREADS")]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write a built-in instance.
    Example(ExampleArgs),
    /// Fit supply-curve scenarios from market data.
    Fit(FitArgs),
    /// Solve the social optimum.
    SolveSo(SolveSoArgs),
    /// Solve an equilibrium under a pricing mechanism.
    SolveEq(SolveEqArgs),
    /// Solve a mechanism across values of one parameter.
    Sweep(SweepArgs),
    /// Check a reported equilibrium; exits 3 when any check fails.
    Verify(VerifyArgs),
    /// Account every participant's surplus for a reported equilibrium.
    Surplus(SurplusArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ExampleName {
    /// One hour, one renewable investor.
    ToyB,
    /// Seeded multi-day instance with solar, wind and storage.
    Synthetic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum Competition {
    /// Strategic investors; homogeneous renewables withhold capacity.
    Imperfect,
    /// Investors take the shadow prices as given.
    Perfect,
}

#[derive(Args, Debug)]
struct ExampleArgs {
    #[arg(value_enum)]
    name: ExampleName,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    scenarios: Option<usize>,
    /// Retired fraction of the conventional fleet.
    #[arg(long)]
    retirement: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Market CSV with columns timestamp, price, demand, vre.
    #[arg(long)]
    csv: PathBuf,
    /// Prices above this are left out of the slope fits, $/MWh.
    #[arg(long)]
    ceiling: Option<f64>,
    /// Cluster keys to drop, e.g. `2021-02`; repeat or separate with commas.
    #[arg(long, value_delimiter = ',')]
    exclude: Vec<String>,
    #[arg(long, value_enum)]
    cluster_key: Option<ClusterKeyArg>,
    #[arg(long)]
    hours: Option<usize>,
    /// Also write a full instance on the reference technology pack.
    #[arg(long)]
    instance_out: Option<PathBuf>,
    /// Remaining fraction of the conventional fleet in `--instance-out`.
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    discount_rate: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
enum ClusterKeyArg {
    YearMonth,
    Month,
    All,
}

impl From<ClusterKeyArg> for ClusterKey {
    fn from(k: ClusterKeyArg) -> Self {
        match k {
            ClusterKeyArg::YearMonth => ClusterKey::YearMonth,
            ClusterKeyArg::Month => ClusterKey::Month,
            ClusterKeyArg::All => ClusterKey::All,
        }
    }
}

#[derive(Args, Debug)]
struct SolveSoArgs {
    /// Instance JSON.
    #[arg(long)]
    instance: PathBuf,
    /// Grid topology JSON; solves the networked program.
    /// Grid topology JSON; solves the networked program.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SolveEqArgs {
    /// Instance JSON.
    #[arg(long)]
    instance: PathBuf,
    /// mcp, p, pi or piu; defaults to the instance's mechanism.
    #[arg(long)]
    mechanism: Option<MechanismKind>,
    /// Uniform price uplift under piu, $/MWh.
    #[arg(long)]
    uplift: Option<f64>,
    /// Supply margin below the scarcity band under mcp, MW.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Competition among investors under mcp.
    #[arg(long, value_enum)]
    competition: Option<Competition>,
    /// Grid topology JSON; solves the networked equilibrium.
    #[arg(long)]
    topology: Option<PathBuf>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SweepArgs {
    /// Instance JSON.
    #[arg(long)]
    instance: PathBuf,
    #[arg(long)]
    mechanism: Option<MechanismKind>,
    /// gamma, retirement, uplift, capcost or ncopies.
    #[arg(long)]
    param: Option<SweepParam>,
    /// `start:stop:step` (inclusive) or a comma-separated list.
    #[arg(long)]
    values: Option<String>,
    /// Who funds the uplift: consumers or operator.
    #[arg(long)]
    uplift_payer: Option<UpliftPayer>,
    /// Also search for the uplift at which investors break even.
    #[arg(long)]
    break_even: bool,
    /// Profit tolerance of the break-even search, $/day.
    #[arg(long)]
    break_even_tol: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    /// Report written by `solve-eq`.
    #[arg(long)]
    eq: PathBuf,
    /// Relative gain a deviation may achieve.
    #[arg(long)]
    tol: Option<f64>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SurplusArgs {
    /// Report written by `solve-eq`.
    #[arg(long)]
    eq: PathBuf,
    /// Who funds the uplift: consumers or operator.
    #[arg(long)]
    uplift_payer: Option<UpliftPayer>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Option defaults read from `--config`.
#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
struct FileConfig {
    threads: Option<usize>,
    seed: Option<u64>,
    scenarios: Option<usize>,
    retirement: Option<f64>,
    ceiling: Option<f64>,
    exclude: Option<Vec<String>>,
    cluster_key: Option<ClusterKeyArg>,
    hours: Option<usize>,
    gamma: Option<f64>,
    discount_rate: Option<f64>,
    mechanism: Option<String>,
    uplift: Option<f64>,
    epsilon: Option<f64>,
    competition: Option<Competition>,
    param: Option<String>,
    values: Option<String>,
    uplift_payer: Option<String>,
    break_even_tol: Option<f64>,
    tol: Option<f64>,
}

/// A failed verification, reported with exit code 3.
#[derive(Debug)]
struct VerificationFailed(String);

impl std::fmt::Display for VerificationFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "verification failed: {}", self.0)
    }
}

impl std::error::Error for VerificationFailed {}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return ExitCode::SUCCESS;
            }
            if matches!(e.kind(), ErrorKind::UnknownArgument | ErrorKind::InvalidSubcommand) {
                eprintln!("\n{}", usage_for(std::env::args().skip(1)));
            }
            return ExitCode::from(EXIT_USAGE);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// Help text of the subcommand named in `args`, or of the whole tool.
fn usage_for(args: impl Iterator<Item = String>) -> String {
    let mut cmd = Cli::command();
    let names: Vec<String> = cmd.get_subcommands().map(|c| c.get_name().to_string()).collect();
    match args.into_iter().find(|a| names.contains(a)) {
        Some(name) => cmd.find_subcommand_mut(&name).map(|c| c.render_help().to_string()).unwrap_or_default(),
        None => cmd.render_help().to_string(),
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<VerificationFailed>().is_some() {
        return EXIT_VERIFY;
    }
    match e.downcast_ref::<gridmech::Error>() {
        Some(gridmech::Error::Solver(_)) => EXIT_SOLVER,
        _ => EXIT_USAGE,
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => FileConfig::default(),
    };
    if let Some(n) = cli.threads.or(config.threads) {
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let stamp = |rec: &mut Recorder| {
        if let Some(p) = &cli.config {
            let _ = rec.digest("config", p);
        }
    };
    match &cli.command {
        Command::Example(a) => example(a, &config, stamp),
        Command::Fit(a) => fit(a, &config, stamp),
        Command::SolveSo(a) => solve_so_cmd(a, stamp),
        Command::SolveEq(a) => solve_eq(a, &config, stamp),
        Command::Sweep(a) => sweep_cmd(a, &config, stamp),
        Command::Verify(a) => verify_cmd(a, &config, stamp),
        Command::Surplus(a) => surplus_cmd(a, &config, stamp),
    }
}

fn parse_opt<T: std::str::FromStr<Err = gridmech::Error>>(flag: Option<T>, file: &Option<String>) -> Result<Option<T>> {
    match (flag, file) {
        (Some(v), _) => Ok(Some(v)),
        (None, Some(s)) => Ok(Some(s.parse()?)),
        (None, None) => Ok(None),
    }
}

/// Write `payload` as pretty JSON with the manifest under `manifest`.
fn emit_json(out: Option<&Path>, rec: &Recorder, payload: Value) -> Result<()> {
    let mut payload = payload;
    let manifest = serde_json::to_value(rec.finish())?;
    payload
        .as_object_mut()
        .ok_or_else(|| anyhow!("output payload must be a JSON object"))?
        .insert("manifest".into(), manifest);
    let mut text = serde_json::to_string_pretty(&payload)?;
    text.push('\n');
    write_out(out, text.as_bytes())
}

/// Write CSV `body` after a `# manifest {...}` line.
fn emit_csv(out: Option<&Path>, rec: &Recorder, extra: &[(&str, Value)], body: &[u8]) -> Result<()> {
    let mut text = format!("# manifest {}\n", serde_json::to_string(&rec.finish())?).into_bytes();
    for (key, value) in extra {
        text.extend(format!("# {key} {}\n", serde_json::to_string(value)?).bytes());
    }
    text.extend_from_slice(body);
    write_out(out, &text)
}

fn write_out(out: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match out {
        Some(path) => fs::write(path, bytes).with_context(|| format!("writing {}", path.display())),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(bytes)?;
            Ok(stdout.flush()?)
        }
    }
}

fn load_instance(rec: &mut Recorder, path: &Path) -> Result<MarketInstance> {
    let text = rec.read("instance", path)?;
    Ok(MarketInstance::from_json_str(&text, path.parent()).with_context(|| format!("loading {}", path.display()))?)
}

fn load_topology(rec: &mut Recorder, path: &Path, inst: &MarketInstance) -> Result<GridTopology> {
    let text = rec.read("topology", path)?;
    let topo = GridTopology::from_json_str(&text).with_context(|| format!("loading {}", path.display()))?;
    topo.validate(inst)?;
    Ok(topo)
}

fn example(a: &ExampleArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let seed = a.seed.or(cfg.seed).unwrap_or(7);
    let scenarios = a.scenarios.or(cfg.scenarios).unwrap_or(12);
    let retirement = a.retirement.or(cfg.retirement).unwrap_or(0.3);
    let (inst, resolved) = match a.name {
        ExampleName::ToyB => (fixtures::toy_b(), json!({"name": a.name})),
        ExampleName::Synthetic => (
            fixtures::synthetic_instance(seed, scenarios, retirement),
            json!({"name": a.name, "seed": seed, "scenarios": scenarios, "retirement": retirement}),
        ),
    };
    let mut rec = Recorder::new("example", &resolved)?;
    stamp(&mut rec);
    emit_json(a.out.as_deref(), &rec, serde_json::to_value(&inst)?)
}

fn fit(a: &FitArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let defaults = ClusterPlan::default();
    let plan = ClusterPlan {
        key: a.cluster_key.or(cfg.cluster_key).map(Into::into).unwrap_or(defaults.key),
        ceiling: a.ceiling.or(cfg.ceiling).unwrap_or(defaults.ceiling),
        excluded: if a.exclude.is_empty() { cfg.exclude.clone().unwrap_or_default() } else { a.exclude.clone() },
    };
    let hours = a.hours.or(cfg.hours).unwrap_or(24);
    let gamma = a.gamma.or(cfg.gamma).unwrap_or(1.0);
    let pack = Pack {
        discount_rate: a.discount_rate.or(cfg.discount_rate).unwrap_or(Pack::default().discount_rate),
    };
    let resolved = json!({"plan": plan, "hours": hours, "gamma": gamma, "discount_rate": pack.discount_rate});
    let mut rec = Recorder::new("fit", &resolved)?;
    stamp(&mut rec);
    rec.digest("csv", &a.csv)?;

    let records = supply_curve::load_market_csv(&a.csv)?;
    let (records, dropped) = supply_curve::clean_records(records);
    if dropped > 0 {
        log::warn!("dropped {dropped} malformed records");
    }
    let clusters = supply_curve::fit_clusters(&records, &plan)?;
    let fitted = supply_curve::build_scenarios(&records, &clusters, &plan, &ProbabilityWeights::Uniform, hours)?;
    log::info!("{} scenarios from {} clusters", fitted.scenarios.len(), fitted.clusters.len());
    emit_json(a.out.as_deref(), &rec, serde_json::to_value(&fitted)?)?;
    if let Some(path) = &a.instance_out {
        let inst = pack.market_instance(&fitted, gamma)?;
        emit_json(Some(path), &rec, serde_json::to_value(&inst)?)?;
    }
    Ok(())
}

fn solve_so_cmd(a: &SolveSoArgs, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let mut rec = Recorder::new("solve-so", &json!({}))?;
    stamp(&mut rec);
    let inst = load_instance(&mut rec, &a.instance)?;
    let payload = match &a.topology {
        Some(path) => {
            let topo = load_topology(&mut rec, path, &inst)?;
            json!({"network": network::solve_so_network(&inst, &topo)?})
        }
        None => json!({"result": solve_so(&inst)?}),
    };
    emit_json(a.out.as_deref(), &rec, payload)
}

/// The mechanism a command runs under: the flag, then the config file,
/// then the instance.
fn resolve_mechanism(
    inst: &MarketInstance,
    kind: Option<MechanismKind>,
    uplift: Option<f64>,
    cfg: &FileConfig,
) -> Result<MechanismSpec> {
    let kind = parse_opt(kind, &cfg.mechanism)?.unwrap_or(inst.mechanism.kind);
    let uplift = uplift.or(cfg.uplift);
    match (kind, uplift) {
        (MechanismKind::Piu, Some(u)) => Ok(MechanismSpec::piu(Uplift::Uniform(u))),
        (MechanismKind::Piu, None) if inst.mechanism.kind == MechanismKind::Piu => Ok(inst.mechanism.clone()),
        (_, Some(u)) if u != 0.0 => bail!("--uplift applies only to the piu mechanism"),
        _ => Ok(MechanismSpec::new(kind)),
    }
}

fn solve_eq(a: &SolveEqArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let base = MarketInstance::from_json_path(&a.instance).with_context(|| format!("loading {}", a.instance.display()))?;
    let mech = resolve_mechanism(&base, a.mechanism, a.uplift, cfg)?;
    let epsilon = a.epsilon.or(cfg.epsilon);
    let competition = a.competition.or(cfg.competition).unwrap_or(Competition::Imperfect);
    let resolved = json!({"mechanism": mech, "epsilon": epsilon, "competition": competition});
    let mut rec = Recorder::new("solve-eq", &resolved)?;
    stamp(&mut rec);
    let inst = load_instance(&mut rec, &a.instance)?.with_mechanism(mech.clone())?;

    if let Some(path) = &a.topology {
        let mut topo = load_topology(&mut rec, path, &inst)?;
        if let (MechanismKind::Piu, Uplift::Uniform(u)) = (mech.kind, &mech.uplift) {
            if *u != 0.0 {
                topo.bus_uplift = topo.buses.iter().map(|b| (b.id.clone(), *u)).collect();
            }
        }
        let sol = network::solve_network_equilibrium(&inst, &topo, mech.kind)?;
        return emit_json(a.out.as_deref(), &rec, json!({"instance": inst, "topology": topo, "network": sol}));
    }

    let report = match (mech.kind, competition) {
        (MechanismKind::Mcp, Competition::Imperfect) => {
            let eps: Option<Hourly> = epsilon.map(|e| vec![vec![e; inst.hours()]; inst.scenarios.len()]);
            equilibrium::solve_mcp_withholding(&inst, eps.as_ref())?
        }
        (MechanismKind::Mcp, Competition::Perfect) => equilibrium::mcp_competitive(&inst, &solve_so(&inst)?)?,
        _ => equilibrium::solve_equilibrium(&inst)?,
    };
    emit_json(a.out.as_deref(), &rec, json!({"instance": inst, "report": report}))
}

fn sweep_cmd(a: &SweepArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let base = MarketInstance::from_json_path(&a.instance).with_context(|| format!("loading {}", a.instance.display()))?;
    let mech = resolve_mechanism(&base, a.mechanism, None, cfg)?;
    let param = parse_opt(a.param, &cfg.param)?.ok_or_else(|| anyhow!("--param is required"))?;
    let values_text = a.values.clone().or(cfg.values.clone()).ok_or_else(|| anyhow!("--values is required"))?;
    let values = sweep::parse_values(&values_text)?;
    let payer = parse_opt(a.uplift_payer, &cfg.uplift_payer)?.unwrap_or_default();
    let be_tol = a.break_even_tol.or(cfg.break_even_tol).unwrap_or(1.0);
    let resolved = json!({
        "mechanism": mech, "param": param.name(), "values": values, "uplift_payer": payer,
        "break_even": a.break_even, "break_even_tol": be_tol,
    });
    let mut rec = Recorder::new("sweep", &resolved)?;
    stamp(&mut rec);
    let inst = load_instance(&mut rec, &a.instance)?;

    let rows = sweep::run_sweep(&inst, &mech, param, &values, payer)?;
    let mut body = Vec::new();
    sweep::write_csv(param, &rows, &mut body)?;
    let mut extra = Vec::new();
    if a.break_even {
        let be = sweep::break_even_uplift(&inst, be_tol, payer)?;
        log::info!("break-even uplift {} $/MWh", be.uplift);
        extra.push(("break_even", serde_json::to_value(&be)?));
    }
    emit_csv(a.out.as_deref(), &rec, &extra, &body)
}

/// A report written by `solve-eq`.
#[derive(Deserialize)]
struct EqFile {
    instance: Value,
    report: EquilibriumReport,
}

fn load_eq(rec: &mut Recorder, path: &Path) -> Result<(MarketInstance, EquilibriumReport)> {
    let text = rec.read("eq", path)?;
    let file: EqFile = serde_json::from_str(&text).with_context(|| format!("{} is not an equilibrium report", path.display()))?;
    let inst = MarketInstance::from_json_str(&file.instance.to_string(), path.parent())?;
    Ok((inst, file.report))
}

fn verify_cmd(a: &VerifyArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let tol = a.tol.or(cfg.tol).unwrap_or(gridmech::verification::DEFAULT_TOL);
    let mut rec = Recorder::new("verify", &json!({"tol": tol}))?;
    stamp(&mut rec);
    if !a.eq.exists() {
        bail!("{} does not exist", a.eq.display());
    }
    let verdict = load_eq(&mut rec, &a.eq).and_then(|(inst, report)| Ok(verify::verify_report(&inst, &report, tol)?));
    let verdict = match verdict {
        Ok(v) => v,
        Err(e) if matches!(e.downcast_ref::<gridmech::Error>(), Some(gridmech::Error::Solver(_))) => return Err(e),
        Err(e) => return Err(anyhow!(VerificationFailed(format!("{e:#}")))),
    };
    emit_json(a.out.as_deref(), &rec, serde_json::to_value(&verdict)?)?;
    if !verdict.pass {
        let failed: Vec<&str> = verdict.checks.iter().filter(|c| !c.pass).map(|c| c.name.as_str()).collect();
        return Err(VerificationFailed(failed.join(", ")).into());
    }
    Ok(())
}

fn surplus_cmd(a: &SurplusArgs, cfg: &FileConfig, stamp: impl Fn(&mut Recorder)) -> Result<()> {
    let payer = parse_opt(a.uplift_payer, &cfg.uplift_payer)?.unwrap_or_default();
    let mut rec = Recorder::new("surplus", &json!({"uplift_payer": payer}))?;
    stamp(&mut rec);
    let (inst, report) = load_eq(&mut rec, &a.eq)?;
    let s = surplus::from_equilibrium(&inst, &report, payer)?;
    let conservation = surplus::conservation_check(&s);
    let body = surplus_csv(&s)?;
    emit_csv(a.out.as_deref(), &rec, &[("conservation", serde_json::to_value(&conservation)?)], &body)
}

/// Long-format ledger with columns `account,item,value`.
fn surplus_csv(s: &SurplusReport) -> Result<Vec<u8>> {
    let mut rows: Vec<(String, &str, f64)> = Vec::new();
    for l in &s.investors {
        let acc = format!("ler:{}", l.id);
        rows.extend([
            (acc.clone(), "revenue", l.revenue),
            (acc.clone(), "penalty", l.penalty),
            (acc.clone(), "incentive", l.incentive),
            (acc.clone(), "investment_cost", l.investment_cost),
            (acc.clone(), "operation_cost", l.operation_cost),
            (acc, "surplus", l.profit),
        ]);
    }
    rows.extend([
        ("cer".to_string(), "revenue", s.cer.revenue),
        ("cer".to_string(), "cost", s.cer.cost),
        ("cer".to_string(), "surplus", s.cer.surplus),
        ("consumers".to_string(), "payment", s.consumers.payment),
        ("consumers".to_string(), "lost_load_value", s.consumers.lost_load_value),
        ("consumers".to_string(), "cost", s.consumers.cost),
        ("consumers".to_string(), "surplus", s.consumers.surplus),
        ("operator".to_string(), "penalty_intake", s.operator.penalty_intake),
        ("operator".to_string(), "lost_load_payment", s.operator.lost_load_payment),
        ("operator".to_string(), "incentive_outlay", s.operator.incentive_outlay),
        ("operator".to_string(), "uplift_outlay", s.operator.uplift_outlay),
        ("operator".to_string(), "surplus", s.operator.surplus),
        ("system".to_string(), "cost", s.system_cost),
        ("system".to_string(), "demand_value", s.demand_value),
    ]);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["account", "item", "value"])?;
    for (acc, item, value) in rows {
        w.write_record([acc.as_str(), item, &value.to_string()])?;
    }
    Ok(w.into_inner().map_err(|e| anyhow!("csv: {e}"))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use gridmech::qp::SolveStatus;

    #[test]
    fn exit_codes_follow_the_failure_kind() {
        assert_eq!(exit_code(&gridmech::Error::Solver(SolveStatus::IterLimit).into()), EXIT_SOLVER);
        assert_eq!(exit_code(&VerificationFailed("nash".into()).into()), EXIT_VERIFY);
        assert_eq!(exit_code(&gridmech::Error::InvalidParameter("x".into()).into()), EXIT_USAGE);
        assert_eq!(exit_code(&anyhow!("other")), EXIT_USAGE);
    }

    #[test]
    fn command_line_is_well_formed() {
        Cli::command().debug_assert();
    }
}
