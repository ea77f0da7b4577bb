use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use pryce::cap::{self, check_equivalence, cap_shape_check, EquivalenceSettings, PryceCap};
use pryce::config::InstanceConfig;
use pryce::instance::MarketInstance;
use pryce::ironing::{self, Flat};
use pryce::mechanism::{check_mechanism, check_table, DirectMechanism, MechanismReport};
use pryce::probkit::Estimate;
use pryce::regions::region_map;
use pryce::zoo::{self, Canonical, MarketStructure, Strategy, StructureKind};

#[derive(Parser)]
#[command(name = "pryce", version, about = "Efficient market structures and yardstick price caps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Instance configuration (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Seed override for every sampled quantity.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long)]
    threads: Option<usize>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Ironed virtual cost of one firm.
    Iron {
        #[command(flatten)]
        common: Common,
        /// Firm number, starting at 1.
        #[arg(long, default_value_t = 1)]
        firm: usize,
    },
    /// Entrant-set map over the price square (two firms).
    Regions {
        #[command(flatten)]
        common: Common,
        /// Cells per axis; `grids.prices` from the config by default.
        #[arg(long)]
        resolution: Option<usize>,
    },
    /// Interim tables and objective of the efficient mechanism.
    Solve {
        #[command(flatten)]
        common: Common,
    },
    /// Price caps when every other firm posts the same price.
    Caps {
        #[command(flatten)]
        common: Common,
        /// Grid points for the other firms' common price.
        #[arg(long, default_value_t = 101)]
        points: usize,
    },
    /// Verification suite; exits with status 1 when a check fails.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Check the tables of a saved mechanism report instead of building one.
        #[arg(long)]
        mechanism: Option<PathBuf>,
    },
    /// Welfare of the configured structures next to the efficient mechanism.
    Compare {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, thiserror::Error)]
enum Failure {
    #[error(transparent)]
    Library(#[from] pryce::Error),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("{0} verification check(s) failed")]
    Verification(usize),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Verification(_) => 1,
            _ => 2,
        }
    }
}

type Outcome<T> = std::result::Result<T, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

fn setup(common: &Common) -> Outcome<(InstanceConfig, MarketInstance)> {
    if let Some(threads) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads.max(1))
            .build_global()
            .map_err(|e| Failure::Usage(e.to_string()))?;
    }
    let cfg = InstanceConfig::load(&common.config)?;
    let inst = cfg.instance()?;
    Ok((cfg, inst))
}

fn sink(out: &Option<PathBuf>) -> Outcome<Box<dyn Write>> {
    Ok(match out {
        Some(path) => Box::new(io::BufWriter::new(File::create(path)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn write_json<T: Serialize>(out: &Option<PathBuf>, value: &T) -> Outcome<()> {
    let mut w = sink(out)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(pryce::Error::from)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn run(command: Command) -> Outcome<()> {
    match command {
        Command::Iron { common, firm } => iron(&common, firm),
        Command::Regions { common, resolution } => regions(&common, resolution),
        Command::Solve { common } => solve(&common),
        Command::Caps { common, points } => caps(&common, points),
        Command::Verify { common, mechanism } => verify(&common, mechanism.as_deref()),
        Command::Compare { common } => compare(&common),
    }
}

#[derive(Serialize)]
struct IronReport {
    firm: usize,
    quantiles: Vec<f64>,
    values: Vec<f64>,
    flats: Vec<Flat>,
}

fn iron(common: &Common, firm: usize) -> Outcome<()> {
    let (_, inst) = setup(common)?;
    if firm == 0 || firm > inst.n() {
        return Err(Failure::Usage(format!("firm {firm} is not in 1..={}", inst.n())));
    }
    let f = inst.firm(firm - 1);
    let vc = ironing::iron(&f.dist, &f.weight, ironing::DEFAULT_CELLS)?;
    let flats = vc.flats();
    write_json(
        &common.out,
        &IronReport { firm, quantiles: vc.quantiles.clone(), values: vc.values.clone(), flats },
    )
}

fn regions(common: &Common, resolution: Option<usize>) -> Outcome<()> {
    let (cfg, inst) = setup(common)?;
    let map = region_map(&inst, resolution.unwrap_or(cfg.grids.prices).max(1))?;
    let mut w = csv::Writer::from_writer(sink(&common.out)?);
    w.write_record(["s1", "s2", "bitmask"])?;
    for (s1, s2, mask) in map.rows() {
        w.write_record([s1.to_string(), s2.to_string(), mask.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

fn build(cfg: &InstanceConfig, inst: &MarketInstance, seed: Option<u64>) -> Outcome<DirectMechanism> {
    Ok(DirectMechanism::build(inst, &cfg.mechanism_settings(seed))?)
}

fn solve(common: &Common) -> Outcome<()> {
    let (cfg, inst) = setup(common)?;
    let report = build(&cfg, &inst, common.seed)?.report()?;
    write_json(&common.out, &report)
}

fn caps(common: &Common, points: usize) -> Outcome<()> {
    let (cfg, inst) = setup(common)?;
    let structure = PryceCap::new(build(&cfg, &inst, common.seed)?);
    let grid = zoo::price_grid(0.0, inst.v_max(), points);
    let mut w = csv::Writer::from_writer(sink(&common.out)?);
    let mut header = vec!["firm".to_string()];
    header.extend((1..inst.n()).map(|k| format!("s_other_{k}")));
    header.push("cap".into());
    w.write_record(&header)?;
    for row in structure.cap_curves(&grid) {
        let mut rec = vec![row.firm.to_string()];
        rec.extend(row.others.iter().map(f64::to_string));
        rec.push(row.cap.to_string());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct Check {
    name: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    firm: Option<usize>,
    value: f64,
    tolerance: f64,
    passed: bool,
}

impl Check {
    fn at_most(name: &'static str, firm: Option<usize>, value: f64, tolerance: f64) -> Self {
        Self { name, firm, value, tolerance, passed: value <= tolerance }
    }
}

#[derive(Serialize)]
struct Suite {
    checks: Vec<Check>,
    #[serde(skip_serializing_if = "Option::is_none")]
    equivalence: Option<cap::EquivalenceReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    cap_shape: Option<cap::CapShapeReport>,
    passed: bool,
}

/// IC on the check grid, IR everywhere, zero rent at the top type and
/// exact monotonicity of `Q`.
fn table_checks(check: &pryce::mechanism::TableCheck, out: &mut Vec<Check>) {
    let firm = Some(check.firm);
    out.push(Check::at_most("ic", firm, check.ic_violation, 1e-3));
    out.push(Check::at_most("ir", firm, -check.min_profit, 1e-9));
    out.push(Check::at_most("ir_top", firm, check.top_profit.abs(), 1e-6));
    out.push(Check::at_most("monotonicity", firm, check.monotonicity_violation, 0.0));
}

fn verify(common: &Common, mechanism: Option<&Path>) -> Outcome<()> {
    let (cfg, inst) = setup(common)?;
    let mut suite = Suite { checks: Vec::new(), equivalence: None, cap_shape: None, passed: false };
    let check_points = cfg.grids.check_types;
    if let Some(path) = mechanism {
        let text = std::fs::read_to_string(path)?;
        let report: MechanismReport = serde_json::from_str(&text).map_err(pryce::Error::from)?;
        if report.firms.len() != inst.n() {
            return Err(Failure::Usage(format!(
                "mechanism has {} firms, config has {}",
                report.firms.len(),
                inst.n()
            )));
        }
        for f in &report.firms {
            table_checks(&check_table(f.firm, &f.interim(), check_points), &mut suite.checks);
        }
    } else {
        let mech = build(&cfg, &inst, common.seed)?;
        for c in check_mechanism(&mech, check_points) {
            table_checks(&c, &mut suite.checks);
        }
        let structure = PryceCap::new(mech);
        let eq_settings = EquivalenceSettings { seed: common.seed.unwrap_or(7), ..Default::default() };
        let eq = check_equivalence(&structure, &eq_settings)?;
        suite.checks.push(Check {
            name: "equivalence",
            firm: None,
            value: (eq.entrant_mismatches + eq.allocation_mismatches) as f64,
            tolerance: 0.0,
            passed: eq.passed,
        });
        suite.equivalence = Some(eq);
        for i in 0..inst.n() {
            let types = inst.firm(i).dist.quantile_grid(check_points);
            let deviations = structure.deviation_prices(i, cfg.grids.deviations);
            let gap = structure.best_response_gap(i, &types, &deviations)?;
            suite.checks.push(Check::at_most("best_response", Some(i + 1), gap, 1e-3));
        }
        let symmetric = inst.values().is_symmetric()
            && inst.firms().iter().all(|f| f.kappa == inst.firm(0).kappa);
        if inst.n() >= 2 && symmetric {
            let p = cap_shape_check(&inst, 1000, common.seed.unwrap_or(0))?;
            suite.checks.push(Check {
                name: "cap_shape",
                firm: None,
                value: (p.ordering_violations
                    + p.symmetry_violations
                    + p.exclusion_violations
                    + p.monotonicity_violations) as f64,
                tolerance: 0.0,
                passed: p.passed,
            });
            suite.cap_shape = Some(p);
        }
    }
    suite.passed = suite.checks.iter().all(|c| c.passed);
    for c in &suite.checks {
        let firm = c.firm.map(|f| format!(" firm {f}")).unwrap_or_default();
        let verdict = if c.passed { "PASS" } else { "FAIL" };
        eprintln!("{verdict} {}{firm}: {:.3e} (tolerance {:.0e})", c.name, c.value, c.tolerance);
    }
    write_json(&common.out, &suite)?;
    match suite.checks.iter().filter(|c| !c.passed).count() {
        0 => Ok(()),
        failed => Err(Failure::Verification(failed)),
    }
}

/// Profiles compared when the config lists none: grid-optimal monopoly,
/// truthful price competition, truthful reverse auction and truthful
/// promotional sales with equal captive shares.
fn default_comparisons(inst: &MarketInstance, cfg: &InstanceConfig) -> Vec<(StructureKind, Vec<Strategy>)> {
    let n = inst.n();
    let mut out = vec![];
    let mut monopoly = vec![Strategy::OptOut; n];
    monopoly[0] = zoo::monopoly_price_table(
        inst,
        cfg.grids.types,
        &zoo::price_grid(0.0, inst.v_max(), cfg.grids.deviations.max(2)),
    );
    out.push((StructureKind::Monopoly, monopoly));
    out.push((StructureKind::PriceCompetition, vec![Strategy::Truthful; n]));
    out.push((StructureKind::ReverseAuction, vec![Strategy::Truthful; n]));
    if n >= 2 {
        let gamma = vec![1.0 / (2 * n) as f64; n];
        out.push((StructureKind::PromotionalSales { gamma }, vec![Strategy::Truthful; n]));
    }
    out
}

#[derive(Serialize)]
struct CompareRow {
    structure: String,
    objective: f64,
    std_err: f64,
    consumer_surplus: Option<f64>,
    shortfall: f64,
}

fn compare(common: &Common) -> Outcome<()> {
    let (cfg, inst) = setup(common)?;
    let mech = build(&cfg, &inst, common.seed)?;
    let efficient: Estimate = mech.objective(&mech.objective_sample())?.virtual_surplus;
    let settings = cfg.eval_settings(common.seed);
    let comparisons: Vec<(StructureKind, Vec<Strategy>)> = if cfg.compare.is_empty() {
        default_comparisons(&inst, &cfg)
    } else {
        cfg.compare.iter().map(|c| (c.structure.clone(), c.profile.clone())).collect()
    };
    let mut rows = vec![CompareRow {
        structure: "efficient".into(),
        objective: efficient.value,
        std_err: efficient.std_err,
        consumer_surplus: None,
        shortfall: 0.0,
    }];
    for (kind, profile) in comparisons {
        let structure = Canonical::new(kind, &inst)?;
        let report = zoo::evaluate(&structure as &dyn MarketStructure, &profile, &settings)?;
        rows.push(CompareRow {
            structure: report.structure,
            objective: report.objective.value,
            std_err: report.objective.std_err,
            consumer_surplus: Some(report.consumer_surplus.value),
            shortfall: efficient.value - report.objective.value,
        });
    }
    let mut w = csv::Writer::from_writer(sink(&common.out)?);
    for row in &rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}
