//! `coex`: command-line front end for co-exchangeable group analyses.

mod format;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coex_core::combined::{analyze_functional, build_grid};
use coex_core::functional::parse_functional;
use coex_core::groups::group_structure;
use coex_core::io::{load_data, load_model};
use coex_core::model::{Design, Kind, ModelSpec, DEFAULT_JOINT_CAP};
use coex_core::oracle::{check_sufficiency, compare_routes, model_cases};
use coex_core::variables::{canonical_variables, variable_resolution};
use coex_core::Error;

use crate::format::{fmt6, fmt_coefficients, Table};

#[derive(Parser)]
#[command(name = "coex", version, about = "Bayes linear sample design for co-exchangeable groups")]
struct Cli {
    /// Write the report to this file instead of standard output.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Analysis {
    /// Model JSON file.
    model: PathBuf,
    /// Use the finite population model.
    #[arg(long)]
    finite: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Check a model file and list every problem found.
    Validate { model: PathBuf },
    /// Canonical variable directions and resolutions.
    Variables {
        #[command(flatten)]
        analysis: Analysis,
        /// Sample sizes per group, e.g. 10,10,10.
        #[arg(long)]
        design: Option<String>,
    },
    /// Canonical group structure for each variable direction.
    Groups {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long)]
        design: String,
        /// `all` or a 1-based variable direction index.
        #[arg(long, default_value = "all")]
        t: String,
    },
    /// The full canonical grid as CSV.
    Grid {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long)]
        design: String,
    },
    /// Adjusted beliefs about linear functionals given data.
    Adjust {
        #[command(flatten)]
        analysis: Analysis,
        #[arg(long)]
        design: String,
        /// Data CSV (raw observations or sample means).
        #[arg(long)]
        data: PathBuf,
        #[arg(long = "functional", required = true)]
        functionals: Vec<String>,
    },
    /// Resolution of functionals over balanced designs n = a..=b.
    Sweep {
        #[command(flatten)]
        analysis: Analysis,
        /// Inclusive range `a:b`.
        #[arg(long)]
        n_range: String,
        #[arg(long = "functional", required = true)]
        functionals: Vec<String>,
    },
    /// Compare decomposed and direct adjustments on random designs.
    OracleCheck {
        model: PathBuf,
        #[arg(long, default_value_t = 10)]
        cases: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

/// Exit status 2 for bad input, 1 for failed numerical checks.
enum Failure {
    Input(String),
    Numerical(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

/// Command output, plus whether a numerical check in it failed.
struct Report {
    text: String,
    failed: bool,
}

impl From<String> for Report {
    fn from(text: String) -> Self {
        Report { text, failed: false }
    }
}

type Outcome = std::result::Result<Report, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let report = match run(&cli.command) {
        Ok(report) => report,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("error: {msg}");
            return ExitCode::from(1);
        }
    };
    match &cli.out {
        Some(path) => {
            if let Err(e) = fs::write(path, &report.text) {
                eprintln!("error: cannot write {}: {e}", path.display());
                return ExitCode::from(2);
            }
        }
        None => print!("{}", report.text),
    }
    if report.failed {
        eprintln!("error: oracle check failed");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}

fn run(command: &Command) -> Outcome {
    match command {
        Command::Validate { model } => validate(model),
        Command::Variables { analysis, design } => variables(analysis, design.as_deref()),
        Command::Groups { analysis, design, t } => groups(analysis, design, t),
        Command::Grid { analysis, design } => grid(analysis, design),
        Command::Adjust {
            analysis,
            design,
            data,
            functionals,
        } => adjust(analysis, design, data, functionals),
        Command::Sweep {
            analysis,
            n_range,
            functionals,
        } => sweep(analysis, n_range, functionals),
        Command::OracleCheck { model, cases, seed } => oracle_check(model, *cases, *seed),
    }
}

/// Loads a model and rejects it unless it validates cleanly and supports
/// the requested kind.
fn load(analysis: &Analysis) -> std::result::Result<(ModelSpec, Kind), Failure> {
    let spec = load_model(&analysis.model)?;
    spec.ensure_valid()?;
    let kind = if analysis.finite { Kind::Finite } else { Kind::Infinite };
    if analysis.finite {
        if let Some(g) = spec.pop_sizes.iter().position(|p| p.finite().is_none()) {
            return Err(Failure::Input(format!(
                "--finite: groups[{}].population_size is \"inf\"; the finite model needs every population size",
                spec.group_labels[g]
            )));
        }
    }
    Ok((spec, kind))
}

fn parse_design(spec: &ModelSpec, text: &str) -> std::result::Result<Design, Failure> {
    let sizes = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .map_err(|_| Failure::Input(format!("--design: `{}` is not a sample size", s.trim())))
        })
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let design = Design::new(sizes);
    design.validate_for(spec)?;
    Ok(design)
}

fn validate(path: &Path) -> Outcome {
    let spec = load_model(path)?;
    let findings = spec.validate();
    if findings.is_empty() {
        return Ok(format!("ok: {} groups, {} variables\n", spec.g0(), spec.v0()).into());
    }
    let list: Vec<String> = findings.iter().map(ToString::to_string).collect();
    Err(Failure::Input(format!("model is invalid:\n  {}", list.join("\n  "))))
}

fn variables(analysis: &Analysis, design: Option<&str>) -> Outcome {
    let (spec, kind) = load(analysis)?;
    let vars = canonical_variables(&spec)?;
    let mut out = String::new();
    let mut header = vec!["t".to_string(), "phi".to_string()];
    header.extend(spec.variable_labels.iter().cloned());
    let mut table = Table::new(header);
    for t in 0..spec.v0() {
        let mut row = vec![(t + 1).to_string(), fmt6(vars.phi[t])];
        row.extend(fmt_coefficients(vars.direction(t).iter()));
        table.push(row);
    }
    out += &table.render();

    if let Some(text) = design {
        let design = parse_design(&spec, text)?;
        let mut header = vec!["group".to_string(), "n".to_string()];
        header.extend((1..=spec.v0()).map(|t| format!("t{t}")));
        let mut table = Table::new(header);
        for g in 0..spec.g0() {
            let n = design.sample_sizes[g];
            let mut row = vec![spec.group_labels[g].clone(), n.to_string()];
            for t in 0..spec.v0() {
                let r = if n == 0 { 0.0 } else { variable_resolution(&spec, &vars, g, n, t, kind)? };
                row.push(fmt6(r));
            }
            table.push(row);
        }
        writeln!(out, "\nresolutions ({kind})").unwrap();
        out += &table.render();
    }
    Ok(out.into())
}

fn groups(analysis: &Analysis, design: &str, t: &str) -> Outcome {
    let (spec, kind) = load(analysis)?;
    let design = parse_design(&spec, design)?;
    let vars = canonical_variables(&spec)?;
    let ts: Vec<usize> = if t == "all" {
        (0..spec.v0()).collect()
    } else {
        match t.parse::<usize>() {
            Ok(k) if (1..=spec.v0()).contains(&k) => vec![k - 1],
            _ => return Err(Failure::Input(format!("--t: expected `all` or 1..={}, got `{t}`", spec.v0()))),
        }
    };
    let mut out = String::new();
    for (i, &t) in ts.iter().enumerate() {
        let gs = group_structure(&spec, &vars, &design, t, kind)?;
        if i > 0 {
            out.push('\n');
        }
        writeln!(out, "t = {}  phi = {}  kind = {kind}  shortcut = {}", t + 1, fmt6(gs.phi), gs.shortcut).unwrap();
        let mut header = vec!["s".to_string(), "lambda".to_string()];
        header.extend(spec.group_labels.iter().cloned());
        let mut table = Table::new(header);
        for s in 0..gs.g0() {
            let mut row = vec![(s + 1).to_string(), fmt6(gs.lambda[s])];
            row.extend(fmt_coefficients(gs.direction(s).iter()));
            table.push(row);
        }
        out += &table.render();
        writeln!(out, "resolved uncertainty = {}", fmt6(gs.resolved_uncertainty())).unwrap();
    }
    Ok(out.into())
}

fn grid(analysis: &Analysis, design: &str) -> Outcome {
    let (spec, kind) = load(analysis)?;
    let design = parse_design(&spec, design)?;
    let grid = build_grid(&spec, &design, kind)?;
    let mut out = String::from("rank,s,t,resolution");
    for g in &spec.group_labels {
        for v in &spec.variable_labels {
            write!(out, ",{g}:{v}").unwrap();
        }
    }
    out.push('\n');
    for (rank, e) in grid.entries.iter().enumerate() {
        write!(out, "{},{},{},{}", rank + 1, e.s + 1, e.t + 1, fmt6(e.resolution)).unwrap();
        for c in fmt_coefficients(e.coefficients.iter()) {
            write!(out, ",{c}").unwrap();
        }
        out.push('\n');
    }
    Ok(out.into())
}

fn adjust(analysis: &Analysis, design: &str, data: &Path, functionals: &[String]) -> Outcome {
    let (spec, kind) = load(analysis)?;
    let design = parse_design(&spec, design)?;
    let observed = load_data(&spec, data)?;
    observed.check(&spec, &design)?;
    let grid = build_grid(&spec, &design, kind)?;
    let adjustment = grid.adjust(&spec, &observed)?;
    let mut out = String::from("functional,prior_mean,prior_variance,adjusted_mean,adjusted_variance,resolution,top_directions\n");
    for expr in functionals {
        let f = parse_functional(&spec, expr)?;
        let report = analyze_functional(&grid, expr, &f, Some(&adjustment))?;
        let top: Vec<String> = report
            .top_weights(3)
            .iter()
            .filter(|w| w.weight > 1e-12)
            .map(|w| format!("({},{}):{}", w.s + 1, w.t + 1, fmt6(w.weight)))
            .collect();
        writeln!(
            out,
            "\"{}\",{},{},{},{},{},{}",
            expr.replace('"', "\"\""),
            fmt6(report.prior_mean),
            fmt6(report.prior_variance),
            fmt6(report.adjusted_mean.unwrap_or(f64::NAN)),
            fmt6(report.adjusted_variance.unwrap_or(f64::NAN)),
            fmt6(report.resolution),
            top.join(" ")
        )
        .unwrap();
    }
    Ok(out.into())
}

fn parse_range(text: &str) -> std::result::Result<(usize, usize), Failure> {
    let bad = || Failure::Input(format!("--n-range: expected `a:b` with 1 <= a <= b, got `{text}`"));
    let (a, b) = text.split_once(':').ok_or_else(bad)?;
    let a: usize = a.trim().parse().map_err(|_| bad())?;
    let b: usize = b.trim().parse().map_err(|_| bad())?;
    if a == 0 || a > b {
        return Err(bad());
    }
    Ok((a, b))
}

fn sweep(analysis: &Analysis, n_range: &str, functionals: &[String]) -> Outcome {
    let (spec, kind) = load(analysis)?;
    let (a, b) = parse_range(n_range)?;
    let fs = functionals
        .iter()
        .map(|e| parse_functional(&spec, e))
        .collect::<coex_core::Result<Vec<_>>>()?;
    let mut out = String::from("n");
    for e in functionals {
        write!(out, ",\"{}\"", e.replace('"', "\"\"")).unwrap();
    }
    out.push('\n');
    for n in a..=b {
        let design = Design::balanced(spec.g0(), n);
        design.validate_for(&spec)?;
        let grid = build_grid(&spec, &design, kind)?;
        write!(out, "{n}").unwrap();
        for (e, f) in functionals.iter().zip(&fs) {
            let report = analyze_functional(&grid, e, f, None)?;
            write!(out, ",{}", fmt6(report.resolution)).unwrap();
        }
        out.push('\n');
    }
    Ok(out.into())
}

fn oracle_check(path: &Path, cases: usize, seed: u64) -> Outcome {
    let spec = load_model(path)?;
    spec.ensure_valid()?;
    let kinds: &[Kind] = if spec.all_finite() { &[Kind::Infinite, Kind::Finite] } else { &[Kind::Infinite] };
    let mut routes = Table::new(
        ["case", "design", "kind", "mean", "variance", "resolutions", "raw_vs_means", "status"]
            .map(String::from)
            .to_vec(),
    );
    let mut lemmas = Table::new(["case", "identity", "kind", "residual", "status"].map(String::from).to_vec());
    let mut failed = false;
    let status = |ok: bool| if ok { "pass" } else { "FAIL" }.to_string();
    for (k, (design, observed)) in model_cases(&spec, cases, seed, 6)?.iter().enumerate() {
        let sizes: Vec<String> = design.sample_sizes.iter().map(ToString::to_string).collect();
        for &kind in kinds {
            let cmp = compare_routes(&spec, design, kind, observed)?;
            failed |= !cmp.passed();
            routes.push(vec![
                (k + 1).to_string(),
                sizes.join(" "),
                kind.to_string(),
                fmt6(cmp.mean),
                fmt6(cmp.variance),
                fmt6(cmp.resolutions),
                fmt6(cmp.raw_vs_means),
                status(cmp.passed()),
            ]);
        }
        for r in check_sufficiency(&spec, design, DEFAULT_JOINT_CAP)? {
            failed |= !r.passed();
            lemmas.push(vec![(k + 1).to_string(), r.name.to_string(), r.kind.to_string(), fmt6(r.residual), status(r.passed())]);
        }
    }
    let text = format!("route agreement\n{}\nsufficiency residuals\n{}", routes.render(), lemmas.render());
    Ok(Report { text, failed })
}
