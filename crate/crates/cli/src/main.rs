//! `awaire`: tabulate IRV contests, run ballot-polling audits, simulate
//! audit plans and serve live audit sessions.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 audit reached a
//! full count.

mod audit;
mod tabulate;

use std::io::{self, BufReader, Write};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use awaire_core::alpha::AlphaParams;
use awaire_core::ballots::{irv_tabulate, Contest, ProfileFormat, TieBreak};
use awaire_core::engine::{AuditConfig, AuditState, AuditStatus};
use awaire_core::sim::report::ReportFormat;
use awaire_core::sim::{
    aggregate, aggregates_table, compare_reduction, fixtures, load_contest_dir, load_contest_file, read_records_csv,
    records_table, reductions_table, report_file_name, run_plan, Cell, GroupBy, SimPlan, SimRecord, Tuning,
    DEFAULT_REPLICATIONS, GRID_D, GRID_ETA0,
};
use awaire_core::weights::{SchemeSpec, SCHEME_GRAMMAR};
use clap::{Args, Parser, Subcommand};

pub const EXIT_USAGE: u8 = 1;
pub const EXIT_DATA: u8 = 2;
pub const EXIT_FULL_COUNT: u8 = 3;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) => m,
        }
    }
}

fn scheme_help() -> String {
    format!("Weighting schemes (--scheme):\n  {SCHEME_GRAMMAR}")
}

#[derive(Parser, Debug)]
#[command(name = "awaire", version, about = "Ballot-polling risk-limiting audits for IRV contests", after_help = scheme_help())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Count a contest by IRV and print the rounds, margin and category.
    #[command(after_help = scheme_help())]
    Tabulate(TabulateArgs),
    /// Audit a contest from ballots read one per line.
    #[command(after_help = scheme_help())]
    Audit(AuditArgs),
    /// Simulate audits over shuffled ballot orders.
    #[command(after_help = scheme_help())]
    Simulate(SimulateArgs),
    /// Simulate a named grid of ALPHA parameters.
    #[command(after_help = scheme_help())]
    Grid(GridArgs),
    /// Summarise or compare simulation records.
    #[command(after_help = scheme_help())]
    Report(ReportArgs),
    /// Serve live audit sessions over HTTP.
    #[command(after_help = scheme_help())]
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
struct InputArgs {
    /// Contest file (`.txt` canonical text, `.json` structured, else margin-IRV).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// Input format: text, json or margin-irv; inferred from the extension when omitted.
    #[arg(long, value_name = "FORMAT")]
    format: Option<ProfileFormat>,
}

#[derive(Args, Debug)]
struct AlphaArgs {
    /// Initial estimate of the assorter mean.
    #[arg(long, value_name = "F", default_value_t = AlphaParams::recommended_default().eta0)]
    eta0: f64,
    /// Weight on eta0, in draws.
    #[arg(long, value_name = "F", default_value_t = AlphaParams::recommended_default().d)]
    d: f64,
    /// Lower truncation bandwidth [default: (eta0 - 1/2)/2].
    #[arg(long, value_name = "F")]
    c: Option<f64>,
    /// Upper truncation gap [default: 1e-6].
    #[arg(long, value_name = "F")]
    eps: Option<f64>,
}

impl AlphaArgs {
    fn tuning(&self) -> Tuning {
        Tuning { c: self.c, eps: self.eps }
    }
}

#[derive(Args, Debug)]
struct TabulateArgs {
    #[command(flatten)]
    input: InputArgs,
    /// Print a structured document instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[command(flatten)]
    input: InputArgs,
    #[arg(long, value_name = "SPEC", default_value = "largest")]
    scheme: SchemeSpec,
    #[command(flatten)]
    alpha: AlphaArgs,
    #[arg(long, value_name = "F", default_value_t = 0.05)]
    risk: f64,
    /// Winner to audit [default: the contest's reported winner, else the IRV winner].
    #[arg(long, value_name = "NAME")]
    reported_winner: Option<String>,
    /// Number of ballots cast [default: the contest's ballot count].
    #[arg(long, value_name = "N")]
    population: Option<u64>,
    /// Read ballots interactively from standard input.
    #[arg(long, conflicts_with = "ballots")]
    stdin: bool,
    /// Read ballots from a file; any invalid line is an error.
    #[arg(long, value_name = "PATH", required_unless_present = "stdin")]
    ballots: Option<PathBuf>,
    /// Largest number of candidates accepted.
    #[arg(long, value_name = "K", default_value_t = awaire_core::engine::DEFAULT_MAX_CANDIDATES)]
    max_candidates: usize,
}

#[derive(Args, Debug)]
struct PlanArgs {
    /// Contest file or directory of contest files; repeatable.
    #[arg(long = "in", value_name = "PATH", required_unless_present = "fixtures")]
    inputs: Vec<PathBuf>,
    /// Input format for contest files; inferred from extensions when omitted.
    #[arg(long, value_name = "FORMAT")]
    format: Option<ProfileFormat>,
    /// Use the synthetic margin-category fixtures with K candidates instead of files.
    #[arg(long, value_name = "K", conflicts_with = "inputs")]
    fixtures: Option<usize>,
    /// Ballots per synthetic fixture.
    #[arg(long, value_name = "N", default_value_t = 20_000)]
    fixture_ballots: u64,
    /// Weighting scheme; repeatable.
    #[arg(long = "scheme", value_name = "SPEC", default_value = "largest")]
    schemes: Vec<SchemeSpec>,
    #[arg(long, value_name = "F", default_value_t = 0.05)]
    risk: f64,
    #[arg(long, value_name = "N", default_value_t = DEFAULT_REPLICATIONS)]
    reps: u32,
    #[arg(long, value_name = "U64", default_value_t = 1)]
    seed: u64,
    /// Records file (`.csv` or `.json`), or a directory for hash-named records and summary files.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Audit the runner-up as if it were the reported winner.
    #[arg(long)]
    wrong_winner: bool,
    /// Worker threads [default: all available].
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Largest number of candidates accepted.
    #[arg(long, value_name = "K", default_value_t = awaire_core::engine::DEFAULT_MAX_CANDIDATES)]
    max_candidates: usize,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    plan: PlanArgs,
    #[command(flatten)]
    alpha: AlphaArgs,
}

#[derive(Args, Debug)]
struct GridArgs {
    #[command(flatten)]
    plan: PlanArgs,
    /// Named parameter grid; `paper-grid` is eta0 in {0.505, 0.51, 0.52, 0.54} by d in {10, 50, 100, 200, 500, 1000}.
    #[arg(long, value_name = "NAME")]
    preset: String,
    /// Lower truncation bandwidth [default: (eta0 - 1/2)/2].
    #[arg(long, value_name = "F")]
    c: Option<f64>,
    /// Upper truncation gap [default: 1e-6].
    #[arg(long, value_name = "F")]
    eps: Option<f64>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Records file written by `simulate` or `grid` (CSV).
    #[arg(long = "in", value_name = "PATH")]
    input: PathBuf,
    /// category, contest or cell.
    #[arg(long, value_name = "GROUP", default_value = "category")]
    group_by: GroupBy,
    /// Baseline cell as `SCHEME,ETA0,D`; prints per-contest sample-size reductions.
    #[arg(long, value_name = "CELL", requires = "against")]
    compare: Option<String>,
    /// Candidate cell as `SCHEME,ETA0,D`.
    #[arg(long, value_name = "CELL", requires = "compare")]
    against: Option<String>,
    /// Output file; format from its extension.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Output format for standard output: csv or json.
    #[arg(long, value_name = "FORMAT", default_value = "csv")]
    format: String,
}

#[derive(Args, Debug)]
struct ServeArgs {
    #[arg(long, value_name = "HOST:PORT", default_value = "127.0.0.1:8080")]
    serve_addr: SocketAddr,
    /// Directory for session journals; sessions there are recovered at start-up.
    #[arg(long, value_name = "DIR")]
    journal_dir: Option<PathBuf>,
}

fn data<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Data(e.to_string())
}

fn load_contest(input: &InputArgs) -> Result<Contest, CliError> {
    load_contest_file(&input.input, input.format).map_err(data)
}

fn cmd_tabulate(args: &TabulateArgs, out: &mut impl Write) -> Result<u8, CliError> {
    let contest = load_contest(&args.input)?;
    let text = if args.json {
        let mut s = serde_json::to_string_pretty(&tabulate::structured(&contest)).expect("serialisable");
        s.push('\n');
        s
    } else {
        tabulate::text(&contest)
    };
    out.write_all(text.as_bytes()).map_err(data)?;
    Ok(0)
}

fn cmd_audit(args: &AuditArgs, out: &mut impl Write) -> Result<u8, CliError> {
    let params = AlphaParams::new(args.alpha.eta0, args.alpha.d).map_err(|e| CliError::Usage(e.to_string()))?;
    let params = AlphaParams::with_tuning(
        args.alpha.eta0,
        args.alpha.d,
        args.alpha.c.unwrap_or(params.c),
        args.alpha.eps.unwrap_or(params.eps),
    )
    .map_err(|e| CliError::Usage(e.to_string()))?;
    if !(args.risk > 0.0 && args.risk < 1.0) {
        return Err(CliError::Usage(format!("--risk must lie in (0, 1), got {}", args.risk)));
    }
    let contest = load_contest(&args.input)?;
    let names = contest.profile.candidates().to_vec();
    let winner = match &args.reported_winner {
        Some(name) => names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| CliError::Data(format!("reported winner {name:?} is not a candidate")))?,
        None => contest.reported_winner.unwrap_or_else(|| irv_tabulate(&contest.profile, TieBreak::LowestIndex).winner()),
    };
    let population = args.population.unwrap_or(contest.profile.total());
    let mut config = AuditConfig::new(names, winner, population, args.risk, args.scheme, params);
    config.max_candidates = args.max_candidates;
    let mut state = AuditState::new(config).map_err(data)?;
    writeln!(
        out,
        "auditing {} as winner of {} ({} candidates, N = {population}, {} alt-orders, scheme {})",
        contest.profile.candidates()[winner],
        contest.id,
        contest.profile.num_candidates(),
        state.trackers().len(),
        args.scheme
    )
    .map_err(data)?;
    let status = match &args.ballots {
        Some(path) => {
            let f = std::fs::File::open(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
            audit::run(&mut state, BufReader::new(f), out, audit::OnBadLine::Fail)?
        }
        None => audit::run(&mut state, io::stdin().lock(), out, audit::OnBadLine::Skip)?,
    };
    Ok(if status == AuditStatus::FullCount { EXIT_FULL_COUNT } else { 0 })
}

fn load_plan_contests(args: &PlanArgs) -> Result<Vec<Contest>, CliError> {
    if let Some(k) = args.fixtures {
        if !(2..=26).contains(&k) {
            return Err(CliError::Usage(format!("--fixtures must be between 2 and 26, got {k}")));
        }
        return Ok(fixtures::category_suite(k, args.fixture_ballots));
    }
    let mut contests = Vec::new();
    for path in &args.inputs {
        if path.is_dir() {
            contests.extend(load_contest_dir(path).map_err(data)?);
        } else {
            contests.push(load_contest_file(path, args.format).map_err(data)?);
        }
    }
    Ok(contests)
}

fn build_plan(args: &PlanArgs, cells: Vec<Cell>, tuning: Tuning) -> Result<SimPlan, CliError> {
    for cell in &cells {
        cell.alpha_params_tuned(tuning).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if !(args.risk > 0.0 && args.risk < 1.0) {
        return Err(CliError::Usage(format!("--risk must lie in (0, 1), got {}", args.risk)));
    }
    if args.reps == 0 {
        return Err(CliError::Usage("--reps must be at least 1".into()));
    }
    let contests = load_plan_contests(args)?;
    let mut plan = SimPlan::new(contests, cells, args.reps, args.seed);
    plan.risk_limit = args.risk;
    plan.wrong_winner = args.wrong_winner;
    plan.max_candidates = args.max_candidates;
    plan.tuning = tuning;
    plan.validate().map_err(data)?;
    Ok(plan)
}

fn run_and_report(args: &PlanArgs, plan: &SimPlan, out: &mut impl Write) -> Result<u8, CliError> {
    let threads = args.threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    log::info!("running {} audits on {threads} threads", plan.size());
    let rows = run_plan(plan, threads).map_err(data)?;
    let summary = aggregates_table(GroupBy::Category, &aggregate(&rows, GroupBy::Category));
    if let Some(path) = &args.out {
        if path.is_dir() {
            for (stem, table) in [("records", records_table(&rows)), ("by-category", summary.clone())] {
                let file = path.join(report_file_name(stem, plan, ReportFormat::Delimited));
                table.write(&file, ReportFormat::Delimited).map_err(|e| CliError::Data(format!("{}: {e}", file.display())))?;
                eprintln!("wrote {}", file.display());
            }
        } else {
            write_table(&records_table(&rows), path)?;
        }
    }
    out.write_all(summary.to_csv().as_bytes()).map_err(data)?;
    report_errors(&rows);
    Ok(0)
}

fn write_table(table: &awaire_core::sim::report::Table, path: &Path) -> Result<(), CliError> {
    table
        .write(path, ReportFormat::for_path(path))
        .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn report_errors(rows: &[SimRecord]) {
    let errors: Vec<&SimRecord> = rows.iter().filter(|r| r.error.is_some()).collect();
    if let Some(first) = errors.first() {
        eprintln!(
            "{} audits failed; first on {}: {}",
            errors.len(),
            first.contest,
            first.error.as_deref().unwrap_or_default()
        );
    }
}

fn cmd_simulate(args: &SimulateArgs, out: &mut impl Write) -> Result<u8, CliError> {
    let cells = args.plan.schemes.iter().map(|&s| Cell::new(s, args.alpha.eta0, args.alpha.d)).collect();
    let plan = build_plan(&args.plan, cells, args.alpha.tuning())?;
    run_and_report(&args.plan, &plan, out)
}

fn cmd_grid(args: &GridArgs, out: &mut impl Write) -> Result<u8, CliError> {
    if args.preset != "paper-grid" {
        return Err(CliError::Usage(format!("unknown preset {:?}; available: paper-grid", args.preset)));
    }
    let mut cells = Vec::new();
    for &scheme in &args.plan.schemes {
        for eta0 in GRID_ETA0 {
            for d in GRID_D {
                cells.push(Cell::new(scheme, eta0, d));
            }
        }
    }
    let plan = build_plan(&args.plan, cells, Tuning { c: args.c, eps: args.eps })?;
    run_and_report(&args.plan, &plan, out)
}

fn parse_cell(text: &str) -> Result<Cell, CliError> {
    let bad = || CliError::Usage(format!("cell {text:?} must be SCHEME,ETA0,D"));
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let [scheme, eta0, d] = parts[..] else {
        return Err(bad());
    };
    let scheme: SchemeSpec = scheme.parse().map_err(|e| CliError::Usage(format!("{e}")))?;
    Ok(Cell::new(scheme, eta0.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?))
}

fn cmd_report(args: &ReportArgs, out: &mut impl Write) -> Result<u8, CliError> {
    let stdout_format = match args.format.as_str() {
        "csv" => ReportFormat::Delimited,
        "json" => ReportFormat::Structured,
        other => return Err(CliError::Usage(format!("unknown format {other:?}; expected csv or json"))),
    };
    let cells = match (&args.compare, &args.against) {
        (Some(b), Some(c)) => Some((parse_cell(b)?, parse_cell(c)?)),
        _ => None,
    };
    let text = std::fs::read_to_string(&args.input).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let rows = read_records_csv(&text).map_err(|e| CliError::Data(format!("{}: {e}", args.input.display())))?;
    let table = match cells {
        Some((base, cand)) => reductions_table(&base, &cand, &compare_reduction(&rows, &base, &cand).map_err(data)?),
        None => aggregates_table(args.group_by, &aggregate(&rows, args.group_by)),
    };
    match &args.out {
        Some(path) => write_table(&table, path)?,
        None => out.write_all(table.render(stdout_format).as_bytes()).map_err(data)?,
    }
    Ok(0)
}

fn cmd_serve(args: &ServeArgs) -> Result<u8, CliError> {
    let app = match &args.journal_dir {
        Some(dir) => awaire_service::Sessions::with_journal_dir(dir).map_err(data)?,
        None => awaire_service::Sessions::in_memory(),
    };
    let runtime = tokio::runtime::Runtime::new().map_err(data)?;
    runtime.block_on(awaire_service::serve(args.serve_addr, app)).map_err(data)?;
    Ok(0)
}

fn dispatch(cli: &Cli) -> Result<u8, CliError> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Tabulate(a) => cmd_tabulate(a, &mut out),
        Command::Audit(a) => cmd_audit(a, &mut out),
        Command::Simulate(a) => cmd_simulate(a, &mut out),
        Command::Grid(a) => cmd_grid(a, &mut out),
        Command::Report(a) => cmd_report(a, &mut out),
        Command::Serve(a) => cmd_serve(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("awaire: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}
