//! Command-line driver: run workflows, query provenance graphs, generate
//! benchmark workloads, run benchmarks, and poke at graphs interactively.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 evaluation
//! error.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use lipstick::evalengine::Tracker;
use lipstick::provgraph::{NodeId, ProvGraph};
use lipstick::provquery::{delete_propagate, depends_on, subgraph, ZoomView};
use lipstick::relmodel::render_bag;
use lipstick::workflow::{
    load_initial_state, load_input_sequence, parse_workflow_def, ExecError, OrderPolicy, Runner,
};
use lipstick::workflowgen::{
    builtin_registry_for, gen_arctic, gen_dealerships, run_benchmark, ArcticParams, BenchSpec,
    DealershipParams, GenError, Selectivity, Topology,
};

#[derive(Parser)]
#[command(name = "lipstick", version, about = "Workflow engine with fine-grained provenance")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Execute a workflow over input and state directories.
    Run(RunArgs),
    /// Query a serialized provenance graph.
    Query(QueryArgs),
    /// Generate a benchmark workload directory.
    Gen {
        #[command(subcommand)]
        family: GenCmd,
    },
    /// Run a benchmark family and report CSV.
    Bench {
        #[command(subcommand)]
        family: BenchCmd,
    },
    /// Interactive queries over one graph.
    Shell { graph: PathBuf },
}

#[derive(Args)]
struct RunArgs {
    /// Workflow definition file.
    #[arg(long)]
    workflow: PathBuf,
    /// Directory of numbered per-execution input directories.
    #[arg(long)]
    input_dir: PathBuf,
    /// Directory of initial-state files.
    #[arg(long)]
    state_dir: PathBuf,
    /// Number of executions to run.
    #[arg(long)]
    num_exec: usize,
    /// Track provenance and write the graph.
    #[arg(long)]
    prov: bool,
    /// Omit tensor and constant v-nodes in aggregates.
    #[arg(long)]
    simplified_agg: bool,
    /// Stop as soon as an output node emits a tuple.
    #[arg(long)]
    stop_on_output: bool,
    /// Where to write the serialized graph (with --prov).
    #[arg(long)]
    out_graph: Option<PathBuf>,
    /// Where to write per-execution outputs.
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    /// Serialized provenance graph.
    graph: PathBuf,
    /// Collapse every invocation of these modules (repeatable).
    #[arg(long, value_delimiter = ',')]
    zoom_out: Vec<String>,
    /// Expand modules previously collapsed by --zoom-out (repeatable).
    #[arg(long, value_delimiter = ',')]
    zoom_in: Vec<String>,
    /// Propagate deletion of these base-fact node ids (comma separated;
    /// empty list allowed).
    #[arg(long, num_args = 0..=1, default_missing_value = "")]
    delete: Option<String>,
    /// Extract the ancestors/descendants/sibling subgraph of a node.
    #[arg(long)]
    subgraph: Option<NodeId>,
    /// Does node N depend on base fact SEED? Prints true/false.
    #[arg(long, num_args = 2, value_names = ["N", "SEED"])]
    depends: Option<Vec<NodeId>>,
    /// Print node/edge counts per label and class.
    #[arg(long)]
    stats: bool,
    /// Write graph-valued results here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum GenCmd {
    /// Car dealerships: four dealers, aggregation, choice, purchase.
    Dealerships {
        #[arg(long, default_value_t = 2000)]
        num_cars: usize,
        #[arg(long, default_value_t = 100)]
        num_exec: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 25000.0)]
        reserve_min: f64,
        #[arg(long, default_value_t = 60000.0)]
        reserve_max: f64,
        #[arg(long, default_value_t = 0.2)]
        accept_min: f64,
        #[arg(long, default_value_t = 0.8)]
        accept_max: f64,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Arctic stations: parallel, serial, or dense station topologies.
    Arctic {
        #[arg(long, default_value = "parallel")]
        topology: String,
        #[arg(long, default_value_t = 24)]
        stations: usize,
        #[arg(long, default_value_t = 6)]
        fanout: usize,
        #[arg(long, default_value = "month")]
        selectivity: String,
        #[arg(long, default_value_t = 10)]
        num_exec: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    Dealerships {
        #[arg(long, default_value_t = 2000)]
        num_cars: usize,
        #[arg(long, default_value_t = 100)]
        num_exec: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    Arctic {
        #[arg(long, default_value = "parallel")]
        topology: String,
        #[arg(long, default_value_t = 24)]
        stations: usize,
        #[arg(long, default_value_t = 6)]
        fanout: usize,
        #[arg(long, default_value = "month")]
        selectivity: String,
        #[arg(long, default_value_t = 10)]
        num_exec: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

enum CliError {
    Usage(String),
    Data(String),
    Eval(String),
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) => 2,
            CliError::Eval(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::Eval(m) => m,
        }
    }
}

fn data_err(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

fn exec_error(e: ExecError) -> CliError {
    match e {
        ExecError::Eval { .. } | ExecError::Internal(_) => CliError::Eval(e.to_string()),
        other => CliError::Data(other.to_string()),
    }
}

fn main() {
    // die quietly when a downstream pipe closes (e.g. `... | head`)
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with exit code 0
            if e.use_stderr() {
                let _ = e.print();
                std::process::exit(1);
            }
            let _ = e.print();
            std::process::exit(0);
        }
    };
    let result = match cli.cmd {
        Cmd::Run(args) => cmd_run(args),
        Cmd::Query(args) => cmd_query(args),
        Cmd::Gen { family } => cmd_gen(family),
        Cmd::Bench { family } => cmd_bench(family),
        Cmd::Shell { graph } => cmd_shell(&graph),
    };
    match result {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {}", e.message());
            std::process::exit(e.code());
        }
    }
}

fn cmd_run(args: RunArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.workflow)
        .map_err(|e| data_err(format!("{}: {e}", args.workflow.display())))?;
    let def = parse_workflow_def(&text).map_err(data_err)?;
    if !args.state_dir.is_dir() {
        return Err(data_err(format!("state directory {} not found", args.state_dir.display())));
    }
    if !args.input_dir.is_dir() {
        return Err(data_err(format!("input directory {} not found", args.input_dir.display())));
    }
    let initial_state = load_initial_state(&def, &args.state_dir).map_err(data_err)?;
    let inputs = load_input_sequence(&def, &args.input_dir, args.num_exec).map_err(data_err)?;
    let bbs = builtin_registry_for(&def);

    let mut graph = ProvGraph::new();
    let tracker = if args.prov { Tracker::on(&mut graph) } else { Tracker::off() };
    let mut runner = Runner::new(
        &def.workflow,
        &def.modules,
        &bbs,
        tracker,
        &initial_state,
        OrderPolicy::NameAsc,
    )
    .map_err(exec_error)?;
    runner.set_simplified_agg(args.simplified_agg);

    let mut records = Vec::new();
    for input in &inputs {
        let rec = runner.execute_once(input).map_err(exec_error)?;
        let produced = rec.outputs.values().any(|rel| !rel.is_empty());
        records.push(rec);
        if args.stop_on_output && produced {
            break;
        }
    }
    drop(runner);

    if let Some(out_dir) = &args.out_dir {
        for rec in &records {
            let dir = out_dir.join(rec.index.to_string());
            std::fs::create_dir_all(&dir).map_err(data_err)?;
            for ((node, rel), relation) in &rec.outputs {
                std::fs::write(dir.join(format!("{node}.{rel}.txt")), render_bag(&relation.to_bag()))
                    .map_err(data_err)?;
            }
        }
    }
    if args.prov {
        if let Some(path) = &args.out_graph {
            std::fs::write(path, graph.serialize()).map_err(data_err)?;
        } else {
            print!("{}", graph.serialize());
        }
    }
    eprintln!("ran {} execution(s)", records.len());
    Ok(())
}

fn load_graph(path: &Path) -> Result<ProvGraph, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| data_err(format!("{}: {e}", path.display())))?;
    ProvGraph::deserialize(&text).map_err(data_err)
}

fn emit_graph(graph: &ProvGraph, out: &Option<PathBuf>) -> Result<(), CliError> {
    match out {
        Some(path) => std::fs::write(path, graph.serialize()).map_err(data_err),
        None => {
            print!("{}", graph.serialize());
            Ok(())
        }
    }
}

fn print_stats(graph: &ProvGraph) {
    let stats = graph.stats();
    println!("nodes {}", stats.node_count);
    println!("edges {}", stats.edge_count);
    for (label, count) in &stats.by_label {
        println!("label {label} {count}");
    }
    for (class, count) in &stats.by_class {
        println!("class {class} {count}");
    }
}

fn parse_id_list(s: &str) -> Result<BTreeSet<NodeId>, CliError> {
    let mut out = BTreeSet::new();
    for part in s.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        out.insert(
            part.parse::<NodeId>()
                .map_err(|_| CliError::Usage(format!("bad node id `{part}`")))?,
        );
    }
    Ok(out)
}

fn query_err(e: lipstick::provquery::QueryError) -> CliError {
    data_err(e)
}

fn cmd_query(args: QueryArgs) -> Result<(), CliError> {
    let graph = load_graph(&args.graph)?;
    if let Some(pair) = &args.depends {
        let result = depends_on(&graph, pair[0], pair[1]).map_err(query_err)?;
        println!("{result}");
        return Ok(());
    }
    if let Some(ids) = &args.delete {
        let seeds = parse_id_list(ids)?;
        let result = delete_propagate(&graph, &seeds).map_err(query_err)?;
        for (agg, value) in &result.recomputed {
            eprintln!("recomputed {agg} {value}");
        }
        return emit_graph(&result.surviving_graph(&graph), &args.out);
    }
    if let Some(node) = args.subgraph {
        let sub = subgraph(&graph, node).map_err(query_err)?;
        return emit_graph(&sub, &args.out);
    }
    if !args.zoom_out.is_empty() || !args.zoom_in.is_empty() {
        let mut view = ZoomView::new(&graph);
        for module in &args.zoom_out {
            view.zoom_out(module);
        }
        for module in &args.zoom_in {
            view.zoom_in(module).map_err(query_err)?;
        }
        return emit_graph(&view.materialize(), &args.out);
    }
    if args.stats {
        print_stats(&graph);
        return Ok(());
    }
    Err(CliError::Usage(
        "pick one of --zoom-out/--zoom-in, --delete, --subgraph, --depends, --stats".into(),
    ))
}

fn cmd_gen(family: GenCmd) -> Result<(), CliError> {
    let gen_err = |e: GenError| CliError::Usage(e.to_string());
    match family {
        GenCmd::Dealerships {
            num_cars,
            num_exec,
            seed,
            reserve_min,
            reserve_max,
            accept_min,
            accept_max,
            out_dir,
        } => {
            let gw = gen_dealerships(&DealershipParams {
                num_cars,
                num_exec,
                seed,
                reserve_range: (reserve_min, reserve_max),
                accept_prob_range: (accept_min, accept_max),
            })
            .map_err(gen_err)?;
            gw.write_to_dir(&out_dir).map_err(data_err)?;
            eprintln!("wrote {}", out_dir.display());
            Ok(())
        }
        GenCmd::Arctic {
            topology,
            stations,
            fanout,
            selectivity,
            num_exec,
            seed,
            out_dir,
        } => {
            let params = arctic_params(&topology, stations, fanout, &selectivity, num_exec, seed)?;
            let gw = gen_arctic(&params).map_err(gen_err)?;
            gw.write_to_dir(&out_dir).map_err(data_err)?;
            eprintln!("wrote {}", out_dir.display());
            Ok(())
        }
    }
}

fn arctic_params(
    topology: &str,
    stations: usize,
    fanout: usize,
    selectivity: &str,
    num_exec: usize,
    seed: u64,
) -> Result<ArcticParams, CliError> {
    Ok(ArcticParams {
        topology: Topology::from_name(topology)
            .ok_or_else(|| CliError::Usage(format!("unknown topology `{topology}`")))?,
        num_stations: stations,
        fanout,
        selectivity: Selectivity::from_name(selectivity)
            .ok_or_else(|| CliError::Usage(format!("unknown selectivity `{selectivity}`")))?,
        num_exec,
        seed,
    })
}

fn cmd_bench(family: BenchCmd) -> Result<(), CliError> {
    let (spec, repetitions, csv) = match family {
        BenchCmd::Dealerships { num_cars, num_exec, seed, repetitions, csv } => (
            BenchSpec::Dealerships(DealershipParams {
                num_cars,
                num_exec,
                seed,
                ..Default::default()
            }),
            repetitions,
            csv,
        ),
        BenchCmd::Arctic {
            topology,
            stations,
            fanout,
            selectivity,
            num_exec,
            seed,
            repetitions,
            csv,
        } => (
            BenchSpec::Arctic(arctic_params(
                &topology,
                stations,
                fanout,
                &selectivity,
                num_exec,
                seed,
            )?),
            repetitions,
            csv,
        ),
    };
    let report = run_benchmark(&spec, repetitions).map_err(|e| CliError::Eval(e.to_string()))?;
    match csv {
        Some(path) => std::fs::write(path, report.to_csv()).map_err(data_err)?,
        None => print!("{}", report.to_csv()),
    }
    Ok(())
}

fn cmd_shell(path: &Path) -> Result<(), CliError> {
    let graph = load_graph(path)?;
    println!(
        "loaded {} ({} nodes, {} edges); type `help`",
        path.display(),
        graph.node_count(),
        graph.edge_count()
    );
    let mut view = ZoomView::new(&graph);
    let stdin = std::io::stdin();
    loop {
        print!("lipstick> ");
        std::io::stdout().flush().ok();
        let mut line = String::new();
        if stdin.lock().read_line(&mut line).unwrap_or(0) == 0 {
            break;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let outcome = match parts.as_slice() {
            [] => Ok(()),
            ["help"] => {
                println!(
                    "commands:\n  stats\n  zoom-out <module>\n  zoom-in <module>\n  \
                     delete <id[,id...]> [path]\n  subgraph <id> [path]\n  \
                     depends <node> <seed>\n  save <path>\n  reset\n  exit"
                );
                Ok(())
            }
            ["exit"] | ["quit"] => break,
            ["stats"] => {
                print_stats(&view.materialize());
                Ok(())
            }
            ["zoom-out", module] => {
                view.zoom_out(module);
                println!("collapsed {module}; {} nodes hidden", view.hidden_nodes().len());
                Ok(())
            }
            ["zoom-in", module] => view.zoom_in(module).map_err(query_err).map(|()| {
                println!("expanded {module}");
            }),
            ["delete", ids, rest @ ..] => parse_id_list(ids).and_then(|seeds| {
                let result = delete_propagate(&graph, &seeds).map_err(query_err)?;
                println!("deleted {} node(s)", result.deleted.len());
                for (agg, value) in &result.recomputed {
                    println!("recomputed {agg} {value}");
                }
                if let [path] = rest {
                    std::fs::write(path, result.surviving_graph(&graph).serialize())
                        .map_err(data_err)?;
                    println!("wrote {path}");
                }
                Ok(())
            }),
            ["subgraph", id, rest @ ..] => id
                .parse::<NodeId>()
                .map_err(|_| CliError::Usage(format!("bad node id `{id}`")))
                .and_then(|node| {
                    let sub = subgraph(&graph, node).map_err(query_err)?;
                    println!("{} nodes, {} edges", sub.node_count(), sub.edge_count());
                    if let [path] = rest {
                        std::fs::write(path, sub.serialize()).map_err(data_err)?;
                        println!("wrote {path}");
                    }
                    Ok(())
                }),
            ["depends", n, seed] => {
                let parse = |s: &str| {
                    s.parse::<NodeId>()
                        .map_err(|_| CliError::Usage(format!("bad node id `{s}`")))
                };
                parse(n).and_then(|n| {
                    parse(seed).and_then(|seed| {
                        let result = depends_on(&graph, n, seed).map_err(query_err)?;
                        println!("{result}");
                        Ok(())
                    })
                })
            }
            ["save", path] => {
                std::fs::write(path, view.materialize().serialize()).map_err(data_err).map(|()| {
                    println!("wrote {path}");
                })
            }
            ["reset"] => {
                view = ZoomView::new(&graph);
                Ok(())
            }
            other => Err(CliError::Usage(format!("unknown command `{}`", other.join(" ")))),
        };
        if let Err(e) = outcome {
            println!("error: {}", e.message());
        }
    }
    Ok(())
}
