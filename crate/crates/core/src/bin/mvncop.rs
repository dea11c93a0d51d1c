use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use mvncop::asymptotics::{enumerate_outcomes, limiting_fit, limiting_se, LimitOptions, LimitTruth, Truncation};
use mvncop::inference::{fit, fit_independence, FitOptions, Method, OptimConfig};
use mvncop::io::{area_model, parse_bounds, read_data, read_graph, report_json, size_diagnostic, CSV_PREAMBLE};
use mvncop::margins::{Family, Link};
use mvncop::normal::SymMatrix;
use mvncop::rectangle::{rectangle_exchangeable, rectangle_rqmc, Rectangle, RqmcConfig};
use mvncop::simulation::{run_study, StudyDesign, StudyStructure};
use mvncop::Error;

const EXIT_VALIDATION: u8 = 2;
const EXIT_NOT_CONVERGED: u8 = 3;
const EXIT_USAGE: u8 = 64;

/// Multivariate normal copula models for discrete responses.
#[derive(Parser)]
#[command(name = "mvncop", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Exchangeable MVN rectangle probability.
    Prob(ProbArgs),
    /// Fit a copula model to area data and write a JSON report.
    Fit(FitArgs),
    /// Limiting estimates and standard errors for exchangeable models.
    Limits(LimitsArgs),
    /// Simulation study comparing estimation methods.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RqmcArgs {
    /// Lattice points per shift (default: by dimension).
    #[arg(long)]
    points: Option<usize>,
    /// Random shifts (default 12).
    #[arg(long)]
    shifts: Option<usize>,
}

impl RqmcArgs {
    fn config(&self, d: usize, seed: u64) -> Result<RqmcConfig, Error> {
        let base = RqmcConfig::default_for_dim(d, seed);
        RqmcConfig::new(self.points.unwrap_or(base.points_per_shift), self.shifts.unwrap_or(base.num_shifts), seed)
    }
}

#[derive(Args)]
struct ProbArgs {
    #[arg(long)]
    d: usize,
    #[arg(long)]
    rho: f64,
    /// Comma-separated lower bounds; `-inf` allowed.
    #[arg(long, allow_hyphen_values = true)]
    lower: String,
    /// Comma-separated upper bounds; `inf` allowed.
    #[arg(long, allow_hyphen_values = true)]
    upper: String,
    /// Use the one-dimensional exchangeable reduction instead of RQMC.
    #[arg(long)]
    exchangeable: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    rqmc: RqmcArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum StructureArg {
    Car,
    Exchangeable,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    /// Node CSV (`id,x,y`), required for `car`.
    #[arg(long)]
    nodes: Option<PathBuf>,
    /// Edge CSV (`id_a,id_b`), required for `car`.
    #[arg(long)]
    edges: Option<PathBuf>,
    #[arg(long)]
    family: Family,
    /// Defaults to log for counts and logit for binary data.
    #[arg(long)]
    link: Option<Link>,
    #[arg(long, value_enum)]
    structure: StructureArg,
    #[arg(long)]
    method: Method,
    /// Required for `sl`.
    #[arg(long)]
    seed: Option<u64>,
    #[command(flatten)]
    rqmc: RqmcArgs,
    /// Do not add an intercept column.
    #[arg(long)]
    no_intercept: bool,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Report path (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write the fitted-probability size histogram (independence fit) here.
    #[arg(long)]
    size_diagnostic: Option<PathBuf>,
}

#[derive(Args)]
struct LimitsArgs {
    #[arg(long)]
    family: Family,
    /// Comma-separated means.
    #[arg(long)]
    mu: String,
    /// Comma-separated NB dispersions.
    #[arg(long)]
    gamma: Option<String>,
    /// Comma-separated correlations.
    #[arg(long)]
    rho: String,
    /// Comma-separated dimensions.
    #[arg(long)]
    d: String,
    #[arg(long)]
    method: Method,
    /// Sample size for the standard errors; 0 skips them.
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Upper-tail mass left out per margin.
    #[arg(long, default_value_t = 1e-7)]
    tail: f64,
    #[arg(long, default_value_t = 1e7)]
    budget: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    rqmc: RqmcArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, value_enum)]
    structure: SimStructure,
    /// Lattice side length.
    #[arg(long)]
    m: Option<usize>,
    /// Exchangeable dimension.
    #[arg(long)]
    d: Option<usize>,
    #[arg(long)]
    family: Family,
    #[arg(long)]
    link: Option<Link>,
    /// Comma-separated coefficients (default 2,-2 for lattices).
    #[arg(long, allow_hyphen_values = true)]
    beta: Option<String>,
    #[arg(long)]
    gamma: Option<f64>,
    /// `varrho` for lattices, `rho` for exchangeable designs.
    #[arg(long)]
    dependence: f64,
    #[arg(long)]
    replicates: usize,
    /// Observations per replicate.
    #[arg(long, default_value_t = 1)]
    observations: usize,
    /// Comma-separated methods.
    #[arg(long)]
    methods: String,
    #[arg(long)]
    seed: u64,
    #[command(flatten)]
    rqmc: RqmcArgs,
    /// Output CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SimStructure {
    Lattice,
    Exchangeable,
}

enum Failure {
    Validation(String),
    NotConverged(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Validation(e.to_string())
    }
}

fn validation<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Validation(msg.into()))
}

fn parse_list<T: std::str::FromStr>(s: &str, what: &str) -> Result<Vec<T>, Failure> {
    s.split(',')
        .map(|t| t.trim().parse().map_err(|_| Failure::Validation(format!("cannot parse {what} '{t}'"))))
        .collect()
}

fn emit(out: Option<&PathBuf>, text: &str) -> Result<(), Failure> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes()).and_then(|_| stdout.flush()).map_err(|e| Failure::Validation(e.to_string()))
        }
    }
}

fn prob(a: &ProbArgs) -> Result<(), Failure> {
    let rect = Rectangle::new(parse_bounds(&a.lower)?, parse_bounds(&a.upper)?)?;
    if rect.dim() != a.d {
        return validation(format!("bounds have dimension {}, expected {}", rect.dim(), a.d));
    }
    if a.exchangeable {
        println!("{:.6}", rectangle_exchangeable(&rect, a.rho)?);
    } else {
        let r = SymMatrix::exchangeable(a.d, a.rho);
        r.validate_correlation()?;
        let est = rectangle_rqmc(&rect, &r, &a.rqmc.config(a.d, a.seed)?)?;
        println!("{:.6} +/- {:.2e}", est.probability, est.error);
    }
    Ok(())
}

fn run_fit(a: &FitArgs) -> Result<(), Failure> {
    let link = a.link.unwrap_or(a.family.default_link());
    let graph = match a.structure {
        StructureArg::Car => match (&a.nodes, &a.edges) {
            (Some(n), Some(e)) => Some(read_graph(n, e)?),
            _ => return validation("car structure needs --nodes and --edges"),
        },
        StructureArg::Exchangeable => None,
    };
    let area = read_data(&a.data, graph.as_ref().map(|g| g.node_count()), a.family, !a.no_intercept)?;
    let data = &area.dataset;
    let model = area_model(a.family, Some(link), graph, data)?;
    let rqmc = match (a.method, a.seed) {
        (Method::Sl, None) => return validation("--seed is required for --method sl"),
        (Method::Sl, Some(seed)) => Some(a.rqmc.config(data.d(), seed)?),
        _ => None,
    };
    let optim = OptimConfig { max_iter: a.max_iter, ..OptimConfig::default() };
    if let Some(path) = &a.size_diagnostic {
        let indep = fit_independence(&model.margin, data, &optim)?;
        emit(Some(path), &size_diagnostic(&indep, data)?.to_csv())?;
    }
    let opts = FitOptions { rqmc, optim, start: None, covariate_names: area.covariate_names.clone() };
    let result = fit(a.method, &model, data, &opts)?;
    let doc = report_json(&result, &model.margin, model.correlation.name());
    let text = serde_json::to_string_pretty(&doc).map_err(|e| Failure::Validation(e.to_string()))? + "\n";
    emit(a.out.as_ref(), &text)?;
    if !result.converged {
        return Err(Failure::NotConverged(format!("optimizer did not converge after {} iterations", result.iterations)));
    }
    Ok(())
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |v| format!("{v:.6}"))
}

fn limits(a: &LimitsArgs) -> Result<(), Failure> {
    let mus: Vec<f64> = parse_list(&a.mu, "mu")?;
    let rhos: Vec<f64> = parse_list(&a.rho, "rho")?;
    let dims: Vec<usize> = parse_list(&a.d, "d")?;
    let gammas: Vec<Option<f64>> = match (&a.gamma, a.family.has_dispersion()) {
        (Some(g), true) => parse_list::<f64>(g, "gamma")?.into_iter().map(Some).collect(),
        (None, true) => return validation(format!("--gamma is required for {}", a.family)),
        (Some(_), false) => return validation(format!("{} has no dispersion parameter", a.family)),
        (None, false) => vec![None],
    };
    let mut out = String::from(CSV_PREAMBLE);
    out.push_str("method,family,mu,gamma,rho,d,est_mu,est_gamma,est_rho,se_mu,se_gamma,se_rho,converged\n");
    let mut unconverged = 0;
    for &d in &dims {
        let opts = LimitOptions {
            truncation: Truncation::PerMargin(a.tail),
            budget: a.budget,
            rqmc: a.rqmc.config(d, a.seed)?,
            optim: OptimConfig::default(),
        };
        for &mu in &mus {
            for &gamma in &gammas {
                for &rho in &rhos {
                    let truth = LimitTruth { family: a.family, mu, gamma, rho };
                    let table = enumerate_outcomes(&truth, d, &opts)?;
                    let est = limiting_fit(a.method, &table, None, &opts)?;
                    let se = if a.n > 0 { Some(limiting_se(a.method, &table, &est.values, a.n, &opts)?) } else { None };
                    let v = &est.values;
                    let k = v.len();
                    let (eg, sg) = if gamma.is_some() {
                        (Some(v[1]), se.as_ref().map(|s| s[1]))
                    } else {
                        (None, None)
                    };
                    out.push_str(&format!(
                        "{},{},{mu},{},{rho},{d},{:.6},{},{:.6},{},{},{},{}\n",
                        a.method,
                        a.family,
                        gamma.map_or_else(String::new, |g| g.to_string()),
                        v[0],
                        fmt_opt(eg),
                        v[k - 1],
                        fmt_opt(se.as_ref().map(|s| s[0])),
                        fmt_opt(sg),
                        fmt_opt(se.as_ref().map(|s| s[k - 1])),
                        est.converged
                    ));
                    unconverged += usize::from(!est.converged);
                }
            }
        }
    }
    emit(None, &out)?;
    if unconverged > 0 {
        return Err(Failure::NotConverged(format!("{unconverged} limiting fits did not converge")));
    }
    Ok(())
}

fn simulate(a: &SimulateArgs) -> Result<(), Failure> {
    let methods: Vec<Method> = parse_list(&a.methods, "method")?;
    let mut design = match a.structure {
        SimStructure::Lattice => {
            let Some(m) = a.m else { return validation("lattice designs need --m") };
            StudyDesign::lattice(m, a.family, a.dependence, a.replicates, methods, a.seed)
        }
        SimStructure::Exchangeable => {
            let Some(d) = a.d else { return validation("exchangeable designs need --d") };
            StudyDesign {
                structure: StudyStructure::Exchangeable { d },
                family: a.family,
                link: a.family.default_link(),
                beta: vec![0.0],
                gamma: a.family.has_dispersion().then_some(1.0),
                dependence: a.dependence,
                replicates: a.replicates,
                observations: a.observations,
                methods,
                seed: a.seed,
                rqmc: RqmcConfig::default_for_dim(d, a.seed),
            }
        }
    };
    if let Some(link) = a.link {
        design.link = link;
    }
    if let Some(beta) = &a.beta {
        design.beta = parse_list(beta, "beta")?;
    }
    if a.gamma.is_some() {
        design.gamma = a.gamma;
    }
    design.observations = a.observations;
    design.rqmc = a.rqmc.config(design.dim(), a.seed)?;
    let table = run_study(&design)?;
    emit(a.out.as_ref(), &table.to_csv())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let first = e.to_string();
            let first = first.lines().next().unwrap_or("invalid arguments").trim_start_matches("error: ");
            eprintln!("ERROR: {first}");
            eprintln!("{}", e.render().to_string().lines().skip(1).collect::<Vec<_>>().join("\n"));
            return ExitCode::from(EXIT_USAGE);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("ERROR: --threads must be positive");
            return ExitCode::from(EXIT_VALIDATION);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("ERROR: {e}");
            return ExitCode::from(EXIT_VALIDATION);
        }
    }
    let result = match &cli.command {
        Cmd::Prob(a) => prob(a),
        Cmd::Fit(a) => run_fit(a),
        Cmd::Limits(a) => limits(a),
        Cmd::Simulate(a) => simulate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Validation(msg)) => {
            eprintln!("ERROR: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::NotConverged(msg)) => {
            eprintln!("ERROR: {msg}");
            ExitCode::from(EXIT_NOT_CONVERGED)
        }
    }
}
