//! Benchmark runner: executes generated workflows with and without
//! provenance, collects timings, graph sizes, and per-output dependency
//! fractions, and emits CSV.

use std::collections::BTreeSet;
use std::time::{Duration, Instant};

use super::{ArcticParams, DealershipParams, GeneratedWorkflow};
use crate::evalengine::Tracker;
use crate::provgraph::{Label, NodeClass, NodeId, ProvGraph};
use crate::provquery::delete_propagate;
use crate::workflow::{ExecError, OrderPolicy, RunLog, Runner};

#[derive(Debug, Clone)]
pub enum BenchSpec {
    Dealerships(DealershipParams),
    Arctic(ArcticParams),
}

#[derive(Debug, Clone)]
pub struct BenchRow {
    pub family: String,
    pub topology: String,
    pub modules: usize,
    pub fanout: usize,
    pub selectivity: String,
    pub num_cars: usize,
    pub num_exec: usize,
    pub repetition: usize,
    pub prov: bool,
    pub exec_time_ms: f64,
    pub graph_nodes: u64,
    pub graph_edges: u64,
    pub build_time_ms: f64,
    pub mean_dependency_fraction: f64,
}

#[derive(Debug, Clone, Default)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
}

impl BenchmarkReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "family,topology,modules,fanout,selectivity,numCars,numExec,repetition,prov,\
             exec_time_ms,graph_nodes,graph_edges,build_time_ms,mean_dependency_fraction\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{:.3},{},{},{:.3},{:.6}\n",
                r.family,
                r.topology,
                r.modules,
                r.fanout,
                r.selectivity,
                r.num_cars,
                r.num_exec,
                r.repetition,
                if r.prov { "on" } else { "off" },
                r.exec_time_ms,
                r.graph_nodes,
                r.graph_edges,
                r.build_time_ms,
                r.mean_dependency_fraction,
            ));
        }
        out
    }

    /// Mean execution time over repetitions, split by provenance mode.
    pub fn mean_exec_time_ms(&self, prov: bool) -> f64 {
        let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.prov == prov).collect();
        if rows.is_empty() {
            return 0.0;
        }
        rows.iter().map(|r| r.exec_time_ms).sum::<f64>() / rows.len() as f64
    }
}

/// Result of one benchmark run.
pub struct RunOutcome {
    pub log: RunLog,
    pub graph: Option<ProvGraph>,
    pub exec_time: Duration,
}

impl RunOutcome {
    /// Provenance node ids of every workflow output tuple, across
    /// executions.
    pub fn output_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for rec in &self.log.executions {
            for rel in rec.outputs.values() {
                out.extend(rel.tuples.iter().map(|t| t.pnode));
            }
        }
        out
    }
}

/// Executes a generated workflow, honoring its termination rule. With
/// provenance off, no graph is built.
pub fn run_generated(gw: &GeneratedWorkflow, with_prov: bool) -> Result<RunOutcome, ExecError> {
    run_generated_detailed(gw, with_prov, false)
}

/// As [`run_generated`], optionally capturing every query alias in the
/// execution records.
pub fn run_generated_detailed(
    gw: &GeneratedWorkflow,
    with_prov: bool,
    record_intermediates: bool,
) -> Result<RunOutcome, ExecError> {
    let mut graph = ProvGraph::new();
    let tracker = if with_prov { Tracker::on(&mut graph) } else { Tracker::off() };
    let start = Instant::now();
    let mut runner = Runner::new(
        &gw.def.workflow,
        &gw.def.modules,
        &gw.bbs,
        tracker,
        &gw.initial_state,
        OrderPolicy::NameAsc,
    )?;
    runner.set_record_intermediates(record_intermediates);
    let mut log = RunLog::default();
    for input in &gw.inputs {
        let rec = runner.execute_once(input)?;
        let produced_output = rec.outputs.values().any(|rel| !rel.is_empty());
        log.executions.push(rec);
        if gw.stop_on_output && produced_output {
            break;
        }
    }
    let exec_time = start.elapsed();
    drop(runner);
    Ok(RunOutcome { log, graph: with_prov.then_some(graph), exec_time })
}

/// Fraction of state tokens each output tuple depends on, averaged over
/// all output tuples. One deletion propagation per state token decides
/// dependency for every output at once.
pub fn mean_dependency_fraction(graph: &ProvGraph, outputs: &[NodeId]) -> f64 {
    if outputs.is_empty() {
        return 0.0;
    }
    let state_tokens: Vec<NodeId> = graph
        .nodes()
        .filter(|n| matches!(n.label, Label::Token(_)) && n.class == NodeClass::State)
        .map(|n| n.id)
        .collect();
    if state_tokens.is_empty() {
        return 0.0;
    }
    let mut depended = vec![0usize; outputs.len()];
    for tok in &state_tokens {
        let result = delete_propagate(graph, &BTreeSet::from([*tok]))
            .expect("state tokens are deletable");
        for (i, out) in outputs.iter().enumerate() {
            if result.deleted.contains(out) {
                depended[i] += 1;
            }
        }
    }
    let total = state_tokens.len() as f64;
    depended.iter().map(|d| *d as f64 / total).sum::<f64>() / outputs.len() as f64
}

/// Runs the benchmark `repetitions` times with provenance on and off, varying
/// the seed per repetition.
pub fn run_benchmark(
    spec: &BenchSpec,
    repetitions: usize,
) -> Result<BenchmarkReport, super::GenError> {
    let mut report = BenchmarkReport::default();
    for rep in 0..repetitions {
        let gw = match spec {
            BenchSpec::Dealerships(p) => {
                let mut p = p.clone();
                p.seed = p.seed.wrapping_add(rep as u64);
                super::gen_dealerships(&p)?
            }
            BenchSpec::Arctic(p) => {
                let mut p = p.clone();
                p.seed = p.seed.wrapping_add(rep as u64);
                super::gen_arctic(&p)?
            }
        };
        for with_prov in [true, false] {
            let outcome = run_generated(&gw, with_prov)
                .map_err(|e| super::GenError::InvalidParams(e.to_string()))?;
            let (nodes, edges, build_ms, dep) = match &outcome.graph {
                Some(g) => {
                    let bytes = g.serialize();
                    let start = Instant::now();
                    let reloaded =
                        ProvGraph::deserialize(&bytes).expect("serialized graph reloads");
                    let build_ms = start.elapsed().as_secs_f64() * 1000.0;
                    let dep = mean_dependency_fraction(&reloaded, &outcome.output_nodes());
                    (g.node_count() as u64, g.edge_count() as u64, build_ms, dep)
                }
                None => (0, 0, 0.0, 0.0),
            };
            report.rows.push(BenchRow {
                family: gw.label.family.clone(),
                topology: gw.label.topology.clone(),
                modules: gw.label.modules,
                fanout: gw.label.fanout,
                selectivity: gw.label.selectivity.clone(),
                num_cars: gw.label.num_cars,
                num_exec: gw.label.num_exec,
                repetition: rep,
                prov: with_prov,
                exec_time_ms: outcome.exec_time.as_secs_f64() * 1000.0,
                graph_nodes: nodes,
                graph_edges: edges,
                build_time_ms: build_ms,
                mean_dependency_fraction: dep,
            });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflowgen::{ArcticParams, DealershipParams, Selectivity, Topology};

    #[test]
    fn small_dealership_run_produces_a_graph() {
        let gw = crate::workflowgen::gen_dealerships(&DealershipParams {
            num_cars: 24,
            num_exec: 2,
            seed: 3,
            accept_prob_range: (0.0, 0.0),
            ..Default::default()
        })
        .unwrap();
        let outcome = run_generated(&gw, true).unwrap();
        assert_eq!(outcome.log.executions.len(), 2);
        assert!(outcome.graph.as_ref().unwrap().node_count() > 0);
        // no sale with acceptance probability zero
        assert!(outcome.output_nodes().is_empty());
        let off = run_generated(&gw, false).unwrap();
        assert!(off.graph.is_none());
    }

    #[test]
    fn small_arctic_run_matches_scan_oracle() {
        let params = ArcticParams {
            topology: Topology::Serial,
            num_stations: 2,
            selectivity: Selectivity::Month,
            num_exec: 2,
            seed: 5,
            ..Default::default()
        };
        let gw = crate::workflowgen::gen_arctic(&params).unwrap();
        let outcome = run_generated(&gw, true).unwrap();
        for (e, rec) in outcome.log.executions.iter().enumerate() {
            let out = &rec.outputs[&("out".to_string(), "GlobalMin".to_string())];
            assert_eq!(out.len(), 1);
            let got = out.tuples[0].values[0]
                .strip();
            let expected = crate::workflowgen::arctic::expected_global_min(&params, e);
            assert_eq!(got, crate::relmodel::float(expected), "execution {e}");
        }
    }

    #[test]
    fn benchmark_report_emits_csv() {
        let spec = BenchSpec::Arctic(ArcticParams {
            topology: Topology::Parallel,
            num_stations: 2,
            selectivity: Selectivity::Year,
            num_exec: 1,
            seed: 2,
            ..Default::default()
        });
        let report = run_benchmark(&spec, 2).unwrap();
        assert_eq!(report.rows.len(), 4); // 2 reps x on/off
        let csv = report.to_csv();
        assert!(csv.starts_with("family,"));
        assert_eq!(csv.lines().count(), 5);
        let on_nodes: Vec<u64> =
            report.rows.iter().filter(|r| r.prov).map(|r| r.graph_nodes).collect();
        assert!(on_nodes.iter().all(|n| *n > 0));
        let off_nodes: Vec<u64> =
            report.rows.iter().filter(|r| !r.prov).map(|r| r.graph_nodes).collect();
        assert!(off_nodes.iter().all(|n| *n == 0));
    }
}
