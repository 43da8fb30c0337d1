//! Benchmark workflow generators and the bench runner.
//!
//! Two workflow families: car dealerships (fixed topology, four dealer
//! modules bidding in parallel, aggregation, a buyer choice, and a purchase
//! phase) and Arctic stations (2..24 station modules in parallel, serial,
//! or dense topologies computing running minimum air temperatures at a
//! configurable selectivity).

pub mod arctic;
pub mod bench;
pub mod dealerships;
pub mod sample;

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use crate::evalengine::BbRegistry;
use crate::workflow::{
    render_workflow_def, write_initial_state, write_input_sequence, WorkflowDef, WorkflowInput,
};
use crate::relmodel::Instance;

pub use arctic::{gen_arctic, ArcticParams, Selectivity, Topology};
pub use bench::{
    mean_dependency_fraction, run_benchmark, run_generated, run_generated_detailed, BenchRow,
    BenchSpec, BenchmarkReport, RunOutcome,
};
pub use dealerships::{gen_dealerships, DealershipParams};

#[derive(Debug, Error, PartialEq)]
pub enum GenError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
}

/// A generated benchmark instance: the definition, seeded initial state,
/// the input sequence, and the black boxes its queries call.
pub struct GeneratedWorkflow {
    pub def: WorkflowDef,
    pub initial_state: BTreeMap<String, Instance>,
    pub inputs: Vec<WorkflowInput>,
    pub bbs: BbRegistry,
    /// Stop the run as soon as an output node emits a tuple (the
    /// dealership termination rule).
    pub stop_on_output: bool,
    pub label: RunLabel,
}

/// Identifies a run in benchmark reports.
#[derive(Debug, Clone, Default)]
pub struct RunLabel {
    pub family: String,
    pub topology: String,
    pub modules: usize,
    pub fanout: usize,
    pub selectivity: String,
    pub num_cars: usize,
    pub num_exec: usize,
    pub seed: u64,
}

impl GeneratedWorkflow {
    /// Writes `workflow.def`, `state/`, and `inputs/` under `dir` so the
    /// run can be repeated from files.
    pub fn write_to_dir(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("workflow.def"), render_workflow_def(&self.def))?;
        write_initial_state(&self.initial_state, &dir.join("state"))?;
        write_input_sequence(&self.inputs, &dir.join("inputs"))?;
        Ok(())
    }
}

/// Resolves the black boxes referenced by a definition's queries against
/// the built-in families (`CalcBid`, `CalcBid<k>`, `Measure_<i>_<seed>`).
/// Unknown names are left unregistered and surface as type errors.
pub fn builtin_registry_for(def: &WorkflowDef) -> BbRegistry {
    let mut registry = BbRegistry::new();
    let mut names: std::collections::BTreeSet<String> = std::collections::BTreeSet::new();
    for module in def.modules.values() {
        for prog in [&module.q_state, &module.q_out] {
            for st in &prog.statements {
                if let crate::pigparse::OpExpr::ForeachBb { bb, .. } = &st.op {
                    names.insert(bb.clone());
                }
            }
        }
    }
    for name in names {
        if name == "CalcBid" {
            dealerships::register_sample_calcbid(&mut registry);
        } else if let Some(k) = name.strip_prefix("CalcBid").and_then(|s| s.parse::<usize>().ok())
        {
            dealerships::register_dealer_calcbid(&mut registry, k);
        } else if let Some(rest) = name.strip_prefix("Measure_") {
            if let Some((station, seed)) = rest.split_once('_') {
                if let (Ok(station), Ok(seed)) = (station.parse(), seed.parse()) {
                    arctic::register_measure(&mut registry, station, seed);
                }
            }
        }
    }
    registry
}
