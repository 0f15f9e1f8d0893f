use clap::{Parser, Subcommand};
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use terraplan::bench::{
    generate_terrain, plan_decoupled, render_svg, run_comparison, run_coupled, run_decoupled,
    scenario_costmap, write_metrics_csv, PlannerKind, RenderLayer, RunOptions, RunRecord, Scenario,
    TerrainKind,
};
use terraplan::config::KeyValues;
use terraplan::coupled::{rest_state, CoupledPlanner, CoupledTerrain};
use terraplan::terrain::{read_heightmap, write_costmap_csv, write_heightmap, HeightMap};

#[derive(Parser)]
#[command(name = "terraplan", version, about = "Terrain-aware quadruped planning harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a scenario heightmap, or summarize an existing one.
    Terrain {
        #[arg(long, default_value = "flat")]
        scenario: String,
        /// Generator overrides in key=value form.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Heightmap to inspect instead of generating one.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the foothold costmap of a heightmap and export it as CSV.
    Costmap {
        #[arg(long, default_value = "flat")]
        scenario: String,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one planner on one scenario.
    Plan {
        #[arg(long, default_value = "coupled")]
        planner: String,
        #[arg(long, default_value = "flat")]
        scenario: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Plan only the first horizon instead of the full crossing.
        #[arg(long)]
        single: bool,
        /// Directory for footholds.csv, com.csv and metrics.csv.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare planners across scenarios and seeds.
    Bench {
        /// Comma-separated scenario names, or `all`.
        #[arg(long, default_value = "all")]
        scenarios: String,
        /// Seed count `N` (seeds 0..N) or a comma-separated list.
        #[arg(long, default_value = "10")]
        seeds: String,
        #[arg(long, default_value = "coupled,decoupled")]
        planners: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        csv: Option<PathBuf>,
        /// Append wall-clock time per run (breaks bit-identical output).
        #[arg(long)]
        timing: bool,
    },
    /// Render a scenario costmap with planned footholds and CoM path to SVG.
    Render {
        #[arg(long, default_value = "flat")]
        scenario: String,
        #[arg(long, default_value = "coupled,decoupled")]
        planners: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Render the costmap only.
        #[arg(long)]
        empty: bool,
        #[arg(long)]
        svg: PathBuf,
    },
}

enum Failure {
    Input(String),
    Planner(String),
}

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult = Result<(), Failure>;

fn load_config(path: Option<&Path>) -> Result<KeyValues, Failure> {
    match path {
        None => Ok(KeyValues::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            Ok(KeyValues::parse(&text)?)
        }
    }
}

fn scenario(name: &str, kv: &KeyValues, seed: Option<u64>) -> Result<Scenario, Failure> {
    let mut scn = Scenario::by_name(name)?;
    scn.terrain.apply(&kv.section("terrain"))?;
    if let Some(s) = seed {
        scn.terrain.seed = s;
    }
    let cmd = kv.section("command");
    cmd.set_f64("vx", &mut scn.cmd.velocity.x)?;
    cmd.set_f64("vy", &mut scn.cmd.velocity.y)?;
    let start = kv.section("start");
    start.set_f64("x", &mut scn.start.x)?;
    start.set_f64("y", &mut scn.start.y)?;
    let goal = kv.section("goal");
    goal.set_f64("x", &mut scn.goal.x)?;
    goal.set_f64("y", &mut scn.goal.y)?;
    scn.overrides = kv.clone();
    Ok(scn)
}

fn options(kv: &KeyValues) -> Result<RunOptions, Failure> {
    let known = ["terrain.", "command.", "start.", "goal.", "coupled.", "decoupled.", "bench."];
    if let Some(k) = kv.keys().find(|k| !known.iter().any(|p| k.starts_with(p))) {
        return Err(Failure::Input(format!("unknown configuration key `{k}`")));
    }
    let mut opts = RunOptions::default();
    opts.apply(kv)?;
    Ok(opts)
}

fn writer(path: Option<&Path>) -> Result<Box<dyn Write>, Failure> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?,
        )),
        None => Box::new(BufWriter::new(std::io::stdout().lock())),
    })
}

fn heightmap(input: Option<&Path>, scn: &Scenario) -> Result<HeightMap, Failure> {
    match input {
        Some(p) => {
            let f = File::open(p).map_err(|e| Failure::Input(format!("{}: {e}", p.display())))?;
            Ok(read_heightmap(BufReader::new(f))?)
        }
        None => Ok(generate_terrain(scn.kind, &scn.terrain)?),
    }
}

fn planners(list: &str) -> Result<Vec<PlannerKind>, Failure> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| PlannerKind::parse(s).map_err(Failure::from))
        .collect()
}

fn seeds(spec: &str) -> Result<Vec<u64>, Failure> {
    if spec.contains(',') {
        spec.split(',')
            .map(|s| s.trim().parse().map_err(|_| Failure::Input(format!("bad seed `{s}`"))))
            .collect()
    } else {
        let n: u64 = spec
            .trim()
            .parse()
            .map_err(|_| Failure::Input(format!("bad seed count `{spec}`")))?;
        Ok((0..n).collect())
    }
}

fn report(records: &[RunRecord]) -> CliResult {
    let failed: Vec<_> = records.iter().filter(|r| !r.success).collect();
    for r in &failed {
        eprintln!(
            "{} {} seed {}: {}",
            r.scenario,
            r.planner.name(),
            r.seed,
            r.failure.as_deref().unwrap_or("failed")
        );
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Planner(format!("{} of {} runs failed", failed.len(), records.len())))
    }
}

fn terrain_cmd(
    name: &str,
    config: Option<&Path>,
    seed: Option<u64>,
    input: Option<&Path>,
    out: Option<&Path>,
) -> CliResult {
    let kv = load_config(config)?;
    let scn = scenario(name, &kv, seed)?;
    let hm = heightmap(input, &scn)?;
    if input.is_some() && out.is_none() {
        let spec = hm.spec();
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for iy in 0..spec.ny {
            for ix in 0..spec.nx {
                if let Some(z) = hm.height(ix, iy) {
                    lo = lo.min(z);
                    hi = hi.max(z);
                }
            }
        }
        println!(
            "cells {}x{} resolution {} origin ({}, {}) known {} z [{lo}, {hi}]",
            spec.nx,
            spec.ny,
            spec.resolution,
            spec.origin.x,
            spec.origin.y,
            hm.known_count()
        );
        return Ok(());
    }
    let mut w = writer(out)?;
    write_heightmap(&hm, &mut w)?;
    w.flush()?;
    Ok(())
}

fn costmap_cmd(name: &str, input: Option<&Path>, out: Option<&Path>) -> CliResult {
    let scn = Scenario::by_name(name)?;
    let hm = heightmap(input, &scn)?;
    let cm = scenario_costmap(&hm)?;
    let mut w = writer(out)?;
    write_costmap_csv(&cm, &mut w)?;
    w.flush()?;
    Ok(())
}

fn plan_cmd(
    planner: &str,
    name: &str,
    seed: u64,
    config: Option<&Path>,
    single: bool,
    out: Option<&Path>,
) -> CliResult {
    let kv = load_config(config)?;
    let planner = PlannerKind::parse(planner)?;
    let scn = scenario(name, &kv, None)?;
    let opts = options(&kv)?;
    let hm = scn.heightmap()?;
    let cm = scenario_costmap(&hm)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
    }
    let file = |n: &str| out.map(|d| d.join(n));
    if single {
        return match planner {
            PlannerKind::Coupled => {
                let mut cfg = opts.coupled.clone();
                cfg.cma.seed = seed;
                let terrain = CoupledTerrain::new(&hm, &cm);
                let s0 = rest_state(scn.start, &cfg)?;
                let plan = CoupledPlanner::new(terrain, cfg.clone())?
                    .plan(&s0, &scn.cmd)
                    .map_err(|e| Failure::Planner(e.to_string()))?;
                plan.write_footholds_csv(&terrain, writer(file("footholds.csv").as_deref())?)?;
                if let Some(p) = file("com.csv") {
                    plan.rollout.write_csv(&cfg.cart, opts.path_dt, writer(Some(&p))?)?;
                }
                Ok(())
            }
            PlannerKind::Decoupled => {
                let d = plan_decoupled(&scn, &hm, &cm, &opts).map_err(Failure::Planner)?;
                d.plan.write_csv(writer(file("footholds.csv").as_deref())?)?;
                if let Some(p) = file("com.csv") {
                    d.spline.write_csv(opts.path_dt, writer(Some(&p))?)?;
                }
                Ok(())
            }
        };
    }
    let rec = match planner {
        PlannerKind::Coupled => run_coupled(&scn, &hm, &cm, seed, &opts),
        PlannerKind::Decoupled => run_decoupled(&scn, &hm, &cm, seed, &opts),
    };
    let mut w = writer(file("footholds.csv").as_deref())?;
    writeln!(w, "index,leg,x,y,z")?;
    for (i, (leg, p)) in rec.footholds.iter().enumerate() {
        writeln!(w, "{i},{},{:.6},{:.6},{:.6}", leg.name(), p.x, p.y, p.z)?;
    }
    w.flush()?;
    if let Some(p) = file("com.csv") {
        let mut w = writer(Some(&p))?;
        writeln!(w, "x,y")?;
        for c in &rec.com_path {
            writeln!(w, "{:.6},{:.6}", c.x, c.y)?;
        }
        w.flush()?;
    }
    if let Some(p) = file("metrics.csv") {
        let mut w = writer(Some(&p))?;
        write_metrics_csv(std::slice::from_ref(&rec), false, &mut w)?;
        w.flush()?;
    } else {
        write_metrics_csv(std::slice::from_ref(&rec), false, std::io::stderr().lock())?;
    }
    report(std::slice::from_ref(&rec))
}

fn bench_cmd(
    names: &str,
    seed_spec: &str,
    planner_list: &str,
    config: Option<&Path>,
    csv: Option<&Path>,
    timing: bool,
) -> CliResult {
    let kv = load_config(config)?;
    let opts = options(&kv)?;
    let seeds = seeds(seed_spec)?;
    let planners = planners(planner_list)?;
    let names: Vec<String> = if names.trim() == "all" {
        TerrainKind::ALL.iter().map(|k| k.name().to_string()).collect()
    } else {
        names.split(',').map(|s| s.trim().to_string()).collect()
    };
    let scenarios = names
        .iter()
        .map(|n| scenario(n, &kv, None))
        .collect::<Result<Vec<_>, _>>()?;
    let mut records = Vec::new();
    for scn in &scenarios {
        records.extend(run_comparison(scn, &planners, &seeds, &opts)?);
    }
    let mut w = writer(csv)?;
    write_metrics_csv(&records, timing, &mut w)?;
    w.flush()?;
    report(&records)
}

fn render_cmd(
    name: &str,
    planner_list: &str,
    seed: u64,
    config: Option<&Path>,
    empty: bool,
    svg: &Path,
) -> CliResult {
    let kv = load_config(config)?;
    let scn = scenario(name, &kv, None)?;
    let opts = options(&kv)?;
    let hm = scn.heightmap()?;
    let cm = scenario_costmap(&hm)?;
    let mut layers = Vec::new();
    let mut records = Vec::new();
    if !empty {
        for (planner, color) in planners(planner_list)?.into_iter().zip(["#ffffff", "#00e000"]) {
            let rec = match planner {
                PlannerKind::Coupled => run_coupled(&scn, &hm, &cm, seed, &opts),
                PlannerKind::Decoupled => run_decoupled(&scn, &hm, &cm, seed, &opts),
            };
            layers.push(RenderLayer::from_record(&rec, color));
            records.push(rec);
        }
    }
    let mut w = writer(Some(svg))?;
    render_svg(&cm, &layers, &mut w)?;
    w.flush()?;
    report(&records)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match &cli.command {
        Command::Terrain {
            scenario,
            config,
            seed,
            input,
            out,
        } => terrain_cmd(scenario, config.as_deref(), *seed, input.as_deref(), out.as_deref()),
        Command::Costmap { scenario, input, out } => {
            costmap_cmd(scenario, input.as_deref(), out.as_deref())
        }
        Command::Plan {
            planner,
            scenario,
            seed,
            config,
            single,
            out,
        } => plan_cmd(planner, scenario, *seed, config.as_deref(), *single, out.as_deref()),
        Command::Bench {
            scenarios,
            seeds,
            planners,
            config,
            csv,
            timing,
        } => bench_cmd(scenarios, seeds, planners, config.as_deref(), csv.as_deref(), *timing),
        Command::Render {
            scenario,
            planners,
            seed,
            config,
            empty,
            svg,
        } => render_cmd(scenario, planners, *seed, config.as_deref(), *empty, svg),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Planner(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
