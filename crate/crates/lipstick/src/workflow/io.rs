//! Directory layout for workflow runs.
//!
//! Initial state lives in one directory with one file per state relation,
//! named `<module>.<Relation>.txt` (state is per module; two workflow nodes
//! sharing a module share its state). Per-execution inputs live in numbered
//! subdirectories `<k>/<node>.<Relation>.txt`, one file per input node and
//! output relation. Missing files mean empty instances. All files use the
//! nested-relation text format.

use std::collections::BTreeMap;
use std::path::Path;

use thiserror::Error;

use super::{WorkflowDef, WorkflowInput};
use crate::relmodel::{parse_bag, render_bag, Bag, Instance, TextFormatError};

#[derive(Debug, Error)]
pub enum RunIoError {
    #[error("{path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Format {
        path: String,
        #[source]
        source: TextFormatError,
    },
}

fn read_bag_file(
    path: &Path,
    schema: &crate::relmodel::Schema,
) -> Result<Option<Bag>, RunIoError> {
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(path).map_err(|source| RunIoError::Read {
        path: path.display().to_string(),
        source,
    })?;
    let bag = parse_bag(&text, schema).map_err(|source| RunIoError::Format {
        path: path.display().to_string(),
        source,
    })?;
    Ok(Some(bag))
}

/// Reads the initial state directory for every module used by the workflow.
pub fn load_initial_state(
    def: &WorkflowDef,
    dir: &Path,
) -> Result<BTreeMap<String, Instance>, RunIoError> {
    let mut state: BTreeMap<String, Instance> = BTreeMap::new();
    let used: std::collections::BTreeSet<&String> = def.workflow.nodes.values().collect();
    for module_name in used {
        let module = match def.modules.get(module_name) {
            Some(m) => m,
            None => continue,
        };
        let mut instance = Instance::new();
        for schema in &module.s_state {
            let path = dir.join(format!("{module_name}.{}.txt", schema.name));
            if let Some(bag) = read_bag_file(&path, schema)? {
                instance.insert(schema.name.clone(), bag);
            }
        }
        state.insert(module_name.clone(), instance);
    }
    Ok(state)
}

/// Reads `num_exec` per-execution input directories (`0`, `1`, ...).
pub fn load_input_sequence(
    def: &WorkflowDef,
    dir: &Path,
    num_exec: usize,
) -> Result<Vec<WorkflowInput>, RunIoError> {
    let mut inputs = Vec::with_capacity(num_exec);
    for e in 0..num_exec {
        let exec_dir = dir.join(e.to_string());
        let mut input = WorkflowInput::new();
        for node in &def.workflow.inputs {
            let module = match def.modules.get(&def.workflow.nodes[node]) {
                Some(m) => m,
                None => continue,
            };
            for schema in &module.s_out {
                let path = exec_dir.join(format!("{node}.{}.txt", schema.name));
                if let Some(bag) = read_bag_file(&path, schema)? {
                    input.insert((node.clone(), schema.name.clone()), bag);
                }
            }
        }
        inputs.push(input);
    }
    Ok(inputs)
}

/// Writes the initial state directory; inverse of [`load_initial_state`].
pub fn write_initial_state(
    state: &BTreeMap<String, Instance>,
    dir: &Path,
) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (module, instance) in state {
        for (rel, bag) in instance {
            std::fs::write(dir.join(format!("{module}.{rel}.txt")), render_bag(bag))?;
        }
    }
    Ok(())
}

/// Writes numbered per-execution input directories; inverse of
/// [`load_input_sequence`].
pub fn write_input_sequence(inputs: &[WorkflowInput], dir: &Path) -> std::io::Result<()> {
    for (e, input) in inputs.iter().enumerate() {
        let exec_dir = dir.join(e.to_string());
        std::fs::create_dir_all(&exec_dir)?;
        for ((node, rel), bag) in input {
            std::fs::write(exec_dir.join(format!("{node}.{rel}.txt")), render_bag(bag))?;
        }
    }
    Ok(())
}
