use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use affinity::coupling::{
    run_coupling, run_coupling_seeds, write_event_log, CouplingPolicy, JsqCoupling, MjsqCoupling,
    RaCoupling,
};
use affinity::fixedpoint::{self, Rates};
use affinity::fluid::{self, FluidError, FluidParams, FluidState};
use affinity::model::{SelectionFamily, ServiceRates};
use affinity::rng::replication_seed;
use affinity::simulate::{run_replications, InitialState, RunSummary, SimConfig};
use affinity::stability::{self, StabilityError};
use serde::Serialize;

use crate::config::{
    CoupleArgs, FixpointArgs, FluidArgs, InitialKind, Lambda0Args, ModelKind, RefKind, SimulateArgs,
    TableKind, TablesArgs,
};
use crate::error::{config, invariant, CliError};
use crate::family::{parse_family, parse_graph};

fn required<T>(value: Option<T>, name: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Config(format!("missing `{name}`")))
}

/// File at `path`, or stdout.
fn sink(path: Option<&Path>) -> Result<Box<dyn Write>, CliError> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: Serialize + ?Sized>(value: &T, path: Option<&Path>) -> Result<(), CliError> {
    let mut out = sink(path)?;
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()?;
    Ok(())
}

fn service_rates(mu1: Option<f64>, mu2: Option<f64>) -> Result<ServiceRates, CliError> {
    ServiceRates::new(mu1.unwrap_or(1.0), mu2.unwrap_or(0.5)).map_err(config)
}

#[derive(Serialize)]
struct SeededSummary {
    seed: u64,
    #[serde(flatten)]
    summary: RunSummary,
}

pub fn simulate(a: SimulateArgs) -> Result<(), CliError> {
    let family = match a.model.unwrap_or(ModelKind::Combinatorial) {
        ModelKind::Combinatorial => {
            SelectionFamily::combinatorial(required(a.n, "n")?, required(a.d1, "d1")?, required(a.lambda, "lambda")?)
                .map_err(config)?
        }
        ModelKind::Graph => {
            SelectionFamily::graph(parse_graph(&required(a.graph, "graph")?)?, required(a.lambda, "lambda")?)
                .map_err(config)?
        }
        ModelKind::General => parse_family(&required(a.family, "family")?, &required(a.rates, "rates")?, a.n)?,
    };
    let mut cfg = SimConfig::new(family, service_rates(a.mu1, a.mu2)?);
    cfg.horizon = a.horizon.unwrap_or(cfg.horizon);
    cfg.seed = a.seed.unwrap_or(0);
    cfg.sample_dt = a.sample_dt.unwrap_or(cfg.sample_dt);
    cfg.i_max = a.i_max.unwrap_or(cfg.i_max);
    cfg.initial = match a.initial.unwrap_or(InitialKind::Empty) {
        InitialKind::Empty => InitialState::Empty,
        InitialKind::TypeIi => InitialState::AllOneTypeII,
    };
    cfg.validate().map_err(config)?;
    let reps = a.replications.unwrap_or(1);
    if reps == 0 {
        return Err(CliError::Config("replications must be positive".into()));
    }
    let seeds: Vec<u64> = if reps == 1 {
        vec![cfg.seed]
    } else {
        (0..reps).map(|r| replication_seed(cfg.seed, r)).collect()
    };
    let out_dir = a.out_dir.unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;

    let mut summaries = Vec::with_capacity(seeds.len());
    for (idx, (res, &seed)) in run_replications(&cfg, &seeds).into_iter().zip(&seeds).enumerate() {
        let (traj, summary) = res.map_err(invariant)?;
        let name = if reps == 1 { "trajectory.csv".to_string() } else { format!("trajectory_{idx}.csv") };
        traj.write_csv(BufWriter::new(File::create(out_dir.join(name))?))
            .map_err(|e| CliError::Output(e.to_string()))?;
        summaries.push(SeededSummary { seed, summary });
    }
    if reps == 1 {
        write_json(&summaries[0], Some(&out_dir.join("summary.json")))?;
        write_json(&summaries[0], None)
    } else {
        write_json(&summaries, Some(&out_dir.join("summary.json")))?;
        write_json(&summaries, None)
    }
}

fn parse_fractions(spec: &str) -> Result<Vec<[f64; 2]>, CliError> {
    spec.split(';')
        .map(|level| {
            let v: Vec<f64> = level
                .split(',')
                .map(|x| x.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|_| CliError::Config(format!("bad fractions `{level}`")))?;
            match v.as_slice() {
                [a, b] => Ok([*a, *b]),
                _ => Err(CliError::Config(format!("level `{level}` needs two fractions"))),
            }
        })
        .collect()
}

pub fn fluid(a: FluidArgs) -> Result<(), CliError> {
    let mut params = FluidParams::new(
        a.d1.unwrap_or(25),
        a.lambda.unwrap_or(0.8),
        a.mu1.unwrap_or(1.0),
        a.mu2.unwrap_or(0.5),
    )
    .map_err(config)?;
    if let Some(eps0) = a.eps0 {
        params.eps0 = eps0;
        params.validate().map_err(config)?;
    }
    let i_max = a.i_max.unwrap_or(fluid::DEFAULT_I_MAX);
    let initial = match a.initial.as_deref().unwrap_or("empty") {
        "empty" => FluidState::empty(i_max),
        "queueing" => {
            let rates = Rates::new(params.lambda, params.mu1, params.mu2).map_err(config)?;
            fixedpoint::queueing_state(params.d1, rates, i_max).map_err(config)?
        }
        spec => FluidState::from_fractions(&parse_fractions(spec)?, i_max).map_err(config)?,
    };
    let dt = a.dt.unwrap_or(fluid::DEFAULT_DT);
    let run = fluid::integrate(&params, &initial, a.horizon.unwrap_or(100.0), dt, a.sample_dt.unwrap_or(0.1))
        .map_err(|e| match e {
            FluidError::Diagnostic { .. } => invariant(e),
            _ => config(e),
        })?;
    let mut out = sink(a.out.as_deref())?;
    run.trajectory.write_csv(&mut out).map_err(|e| CliError::Output(e.to_string()))?;
    out.flush()?;
    eprintln!(
        "indicator flips: {}, chatter: {}, max repair: {:.3e}",
        run.indicator_flips,
        if run.chatter { "yes" } else { "no" },
        run.max_repair
    );
    Ok(())
}

pub fn fixpoint(a: FixpointArgs) -> Result<(), CliError> {
    let d1 = a.d1.unwrap_or(25);
    let (mu1, mu2) = (a.mu1.unwrap_or(1.0), a.mu2.unwrap_or(0.5));
    if let Some(lambdas) = a.sweep {
        let rows = fixedpoint::lambda_sweep(d1, mu1, mu2, &lambdas).map_err(config)?;
        let mut out = sink(a.out.as_deref())?;
        fixedpoint::write_sweep_csv(&rows, &mut out)?;
        out.flush()?;
        return Ok(());
    }
    let rates = Rates::new(a.lambda.unwrap_or(0.8), mu1, mu2).map_err(config)?;
    let report = fixedpoint::report(d1, rates, a.i_max.unwrap_or(fluid::DEFAULT_I_MAX)).map_err(config)?;
    write_json(&report, a.out.as_deref())
}

pub fn tables(a: TablesArgs) -> Result<(), CliError> {
    let mut out = csv::Writer::from_writer(sink(a.out.as_deref())?);
    match required(a.which, "which")? {
        TableKind::Degree => {
            let ks = a.k.unwrap_or_else(|| vec![2, 3, 4, 5, 10, 15, 25]);
            let rows = stability::min_degree_table(a.n.unwrap_or(50), &ks).map_err(config)?;
            out.write_record(["k", "d_min"])?;
            for (k, d) in rows {
                out.write_record([k.to_string(), d.to_string()])?;
            }
        }
        TableKind::D1star => {
            let mu1 = a.mu1.unwrap_or(1.0);
            let mu2s = a.mu2.unwrap_or_else(|| vec![0.5, 1.0 / 3.0]);
            let lambdas = a.lambdas.unwrap_or_else(|| vec![0.4, 0.5, 0.6, 0.7, 0.8, 0.9]);
            let mut header = vec!["mu2".to_string()];
            header.extend(lambdas.iter().map(|l| l.to_string()));
            out.write_record(&header)?;
            for &mu2 in &mu2s {
                let mut row = vec![mu2.to_string()];
                for &lambda in &lambdas {
                    let rates = Rates::new(lambda, mu1, mu2).map_err(config)?;
                    // blank where no queueing regime exists
                    row.push(fixedpoint::d1_star(rates).map(|d| d.to_string()).unwrap_or_default());
                }
                out.write_record(&row)?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct SymmetricLambda0 {
    lambda0: f64,
    symmetric: bool,
}

pub fn lambda0(a: Lambda0Args) -> Result<(), CliError> {
    let family = parse_family(&required(a.family, "family")?, &required(a.rates, "rates")?, a.n)?;
    match stability::lambda0(&family) {
        Ok(split) => write_json(&split, a.out.as_deref()),
        Err(StabilityError::Symmetric(l)) => {
            write_json(&SymmetricLambda0 { lambda0: l, symmetric: true }, a.out.as_deref())
        }
        Err(e) => Err(config(e)),
    }
}

pub fn couple(a: CoupleArgs) -> Result<(), CliError> {
    let lambda = a.lambda.unwrap_or(0.8);
    let policy = match a.reference.unwrap_or(RefKind::Ra) {
        RefKind::Ra => {
            let spec = a.family.unwrap_or_else(|| "path:20".into());
            let family = parse_family(&spec, &a.rates.unwrap_or_else(|| vec![0.8]), a.n)?;
            CouplingPolicy::Ra(RaCoupling::from_family(&family).map_err(config)?)
        }
        RefKind::Mjsq => {
            let adj = parse_graph(a.graph.as_deref().unwrap_or("regular:20:16"))?;
            CouplingPolicy::Mjsq(MjsqCoupling::new(&adj, a.k.unwrap_or(3), lambda).map_err(config)?)
        }
        RefKind::Jsq => CouplingPolicy::Jsq(
            JsqCoupling::new(a.n.unwrap_or(50), a.d.unwrap_or(31), a.k.unwrap_or(2), lambda).map_err(config)?,
        ),
    };
    let rates = service_rates(a.mu1, a.mu2)?;
    let n_seeds = a.seeds.unwrap_or(50);
    let events = a.events.unwrap_or(100_000);
    if n_seeds == 0 {
        return Err(CliError::Config("seeds must be positive".into()));
    }
    let base = a.seed.unwrap_or(0);
    let seeds: Vec<u64> = (0..n_seeds).map(|i| replication_seed(base, i)).collect();
    let reports = run_coupling_seeds(&policy, rates, events, &seeds).map_err(invariant)?;
    if let Some(path) = a.log.as_deref() {
        let first = run_coupling(&policy, rates, events, seeds[0], true).map_err(invariant)?;
        write_event_log(&first.log, BufWriter::new(File::create(path)?))?;
    }
    if let Some(path) = a.report.as_deref() {
        write_json(&reports, Some(path))?;
    }
    let violations: u64 = reports.iter().map(|r| r.majorization_violations).sum();
    let position: u64 = reports.iter().map(|r| r.position_violations).sum();
    println!("reference: {}", policy.name());
    println!("seeds: {n_seeds}");
    println!("events per seed: {events}");
    println!("majorization violations: {violations}");
    println!("insertion order violations: {position}");
    println!("majorization held: {}", if violations == 0 { "yes" } else { "no" });
    if violations > 0 {
        return Err(CliError::Invariant(format!("{violations} majorization violations")));
    }
    Ok(())
}
