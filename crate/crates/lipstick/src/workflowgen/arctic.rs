//! The Arctic-stations benchmark family.
//!
//! Each station module holds forty years of synthetic monthly observations
//! (1961-2000) in its state, measures a new observation per execution, and
//! computes the minimum air temperature observed to date at the query
//! selectivity, folding in the minima received from upstream stations. The
//! output module emits the overall minimum. Selectivity restricts the
//! observations by joining the state against the query tuple on a
//! selectivity field: `all` matches everything, `season` a quarter of the
//! state, `month` a twelfth, `year` only the current year's observations.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dealerships::schema;
use super::{GenError, GeneratedWorkflow, RunLabel};
use crate::evalengine::BbRegistry;
use crate::pigparse::parse;
use crate::relmodel::{float, int, text, AtomKind, Bag, Instance, Tuple};
use crate::workflow::{Edge, ModuleSpec, Workflow, WorkflowDef, WorkflowInput};

pub const FIRST_YEAR: i64 = 1961;
pub const LAST_SEED_YEAR: i64 = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Topology {
    Parallel,
    Serial,
    Dense,
}

impl Topology {
    pub fn name(&self) -> &'static str {
        match self {
            Topology::Parallel => "parallel",
            Topology::Serial => "serial",
            Topology::Dense => "dense",
        }
    }

    pub fn from_name(s: &str) -> Option<Topology> {
        Some(match s {
            "parallel" => Topology::Parallel,
            "serial" => Topology::Serial,
            "dense" => Topology::Dense,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Selectivity {
    All,
    Season,
    Month,
    Year,
}

impl Selectivity {
    pub fn name(&self) -> &'static str {
        match self {
            Selectivity::All => "all",
            Selectivity::Season => "season",
            Selectivity::Month => "month",
            Selectivity::Year => "year",
        }
    }

    pub fn from_name(s: &str) -> Option<Selectivity> {
        Some(match s {
            "all" => Selectivity::All,
            "season" => Selectivity::Season,
            "month" => Selectivity::Month,
            "year" => Selectivity::Year,
            _ => return None,
        })
    }

    fn join_field(&self) -> &'static str {
        match self {
            Selectivity::All => "One",
            Selectivity::Season => "Season",
            Selectivity::Month => "Month",
            Selectivity::Year => "Year",
        }
    }
}

#[derive(Debug, Clone)]
pub struct ArcticParams {
    pub topology: Topology,
    pub num_stations: usize,
    /// Layer width for dense topologies.
    pub fanout: usize,
    pub selectivity: Selectivity,
    pub num_exec: usize,
    pub seed: u64,
}

impl Default for ArcticParams {
    fn default() -> Self {
        ArcticParams {
            topology: Topology::Parallel,
            num_stations: 24,
            fanout: 6,
            selectivity: Selectivity::Month,
            num_exec: 10,
            seed: 1,
        }
    }
}

fn season_of(month: i64) -> i64 {
    (month - 1) / 3
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finalizer; keeps measurements independent of call order
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Synthetic monthly observation for one station: month-dependent air
/// temperature plus five other variables, deterministic in (seed, station,
/// year, month).
pub fn measure(seed: u64, station: usize, year: i64, month: i64) -> Tuple {
    const MONTH_MEAN: [f64; 12] =
        [-28.0, -26.0, -20.0, -12.0, -4.0, 2.0, 6.0, 4.0, -2.0, -10.0, -18.0, -24.0];
    let key = mix(seed ^ mix(station as u64) ^ mix(year as u64) ^ mix((month as u64) << 32));
    let mut rng = ChaCha8Rng::seed_from_u64(key);
    let temp = MONTH_MEAN[(month - 1) as usize] + rng.gen_range(-80..=80) as f64 / 10.0;
    let pressure = 980.0 + rng.gen_range(0..=500) as f64 / 10.0;
    let humidity = 40.0 + rng.gen_range(0..=550) as f64 / 10.0;
    let wind = rng.gen_range(0..=300) as f64 / 10.0;
    let precip = rng.gen_range(0..=800) as f64 / 10.0;
    let cloud = rng.gen_range(0..=100) as f64 / 10.0;
    Tuple(vec![
        int(year),
        int(month),
        int(season_of(month)),
        int(1),
        float(temp),
        float(pressure),
        float(humidity),
        float(wind),
        float(precip),
        float(cloud),
    ])
}

fn observations_schema() -> crate::relmodel::Schema {
    schema(
        "Observations",
        &[
            ("Year", AtomKind::Int),
            ("Month", AtomKind::Int),
            ("Season", AtomKind::Int),
            ("One", AtomKind::Int),
            ("Temp", AtomKind::Float),
            ("Pressure", AtomKind::Float),
            ("Humidity", AtomKind::Float),
            ("Wind", AtomKind::Float),
            ("Precip", AtomKind::Float),
            ("Cloud", AtomKind::Float),
        ],
    )
}

fn query_schema() -> crate::relmodel::Schema {
    schema(
        "Query",
        &[
            ("Year", AtomKind::Int),
            ("Month", AtomKind::Int),
            ("Season", AtomKind::Int),
            ("One", AtomKind::Int),
            ("Sel", AtomKind::Text),
        ],
    )
}

/// Registers the measurement black box for one station.
pub fn register_measure(registry: &mut BbRegistry, station: usize, seed: u64) {
    registry.register(
        format!("Measure_{station}_{seed}"),
        observations_schema(),
        move |args| {
            let [year, month] = args else {
                return Err("Measure takes year and month".into());
            };
            let year = match year {
                crate::relmodel::Value::Atom(crate::relmodel::AtomValue::Int(y)) => *y,
                other => return Err(format!("year must be an int, found {other:?}")),
            };
            let month = match month {
                crate::relmodel::Value::Atom(crate::relmodel::AtomValue::Int(m)) => *m,
                other => return Err(format!("month must be an int, found {other:?}")),
            };
            Ok(Bag::new(vec![measure(seed, station, year, month)]))
        },
    );
}

fn station_node(i: usize) -> String {
    format!("sta{i:02}")
}

fn station_module(i: usize, seed: u64, preds: &[usize], selectivity: Selectivity) -> ModuleSpec {
    let q_state = format!(
        "NewObs = FOREACH Query GENERATE FLATTEN(Measure_{i}_{seed}(Year, Month));\n\
         Observations = UNION Observations, NewObs;\n"
    );
    let field = selectivity.join_field();
    let mut q_out = format!(
        "SelJ = JOIN Observations BY {field}, Query BY {field};\n\
         SelTemps = FOREACH SelJ GENERATE BAG Temp;\n"
    );
    let mut last = "SelTemps".to_string();
    for (u, p) in preds.iter().enumerate() {
        let next = format!("U{u}");
        q_out.push_str(&format!("{next} = UNION {last}, MinTemp_{p:02};\n"));
        last = next;
    }
    q_out.push_str(&format!(
        "TAll = GROUP {last} ALL;\n\
         MinTemp_{i:02} = FOREACH TAll GENERATE MIN({last}.Temp) AS Temp;\n"
    ));

    let mut s_in = vec![query_schema()];
    for p in preds {
        s_in.push(schema(&format!("MinTemp_{p:02}"), &[("Temp", AtomKind::Float)]));
    }
    ModuleSpec {
        name: format!("M_sta_{i}"),
        s_in,
        s_state: vec![observations_schema()],
        s_out: vec![schema(&format!("MinTemp_{i:02}"), &[("Temp", AtomKind::Float)])],
        q_state: parse(&q_state).expect("station state query parses"),
        q_out: parse(&q_out).expect("station output query parses"),
    }
}

/// Predecessor stations of each station under the topology; station ids
/// are 1-based.
fn predecessors(params: &ArcticParams) -> Vec<Vec<usize>> {
    let n = params.num_stations;
    match params.topology {
        Topology::Parallel => vec![Vec::new(); n],
        Topology::Serial => (0..n).map(|i| if i == 0 { vec![] } else { vec![i] }).collect(),
        Topology::Dense => {
            let f = params.fanout;
            (0..n)
                .map(|i| {
                    let layer = i / f;
                    if layer == 0 {
                        Vec::new()
                    } else {
                        ((layer - 1) * f + 1..=layer * f).collect()
                    }
                })
                .collect()
        }
    }
}

/// Stations feeding the output module.
fn terminal_stations(params: &ArcticParams) -> Vec<usize> {
    let n = params.num_stations;
    match params.topology {
        Topology::Parallel => (1..=n).collect(),
        Topology::Serial => vec![n],
        Topology::Dense => {
            let f = params.fanout;
            ((n - f + 1)..=n).collect()
        }
    }
}

fn out_module(terminals: &[usize]) -> ModuleSpec {
    let mut q_out = String::new();
    let mut last = format!("MinTemp_{:02}", terminals[0]);
    for (u, t) in terminals.iter().skip(1).enumerate() {
        let next = format!("U{u}");
        q_out.push_str(&format!("{next} = UNION {last}, MinTemp_{t:02};\n"));
        last = next;
    }
    q_out.push_str(&format!(
        "OAll = GROUP {last} ALL;\n\
         GlobalMin = FOREACH OAll GENERATE MIN({last}.Temp) AS Temp;\n"
    ));
    ModuleSpec {
        name: "M_out".into(),
        s_in: terminals
            .iter()
            .map(|t| schema(&format!("MinTemp_{t:02}"), &[("Temp", AtomKind::Float)]))
            .collect(),
        s_state: vec![],
        s_out: vec![schema("GlobalMin", &[("Temp", AtomKind::Float)])],
        q_state: Default::default(),
        q_out: parse(&q_out).expect("output module query parses"),
    }
}

/// The (year, month) of execution `e`, advancing monthly from the January
/// after the seeded history.
pub fn exec_date(e: usize) -> (i64, i64) {
    (LAST_SEED_YEAR + 1 + (e as i64) / 12, 1 + (e as i64) % 12)
}

pub fn gen_arctic(params: &ArcticParams) -> Result<GeneratedWorkflow, GenError> {
    if !(2..=24).contains(&params.num_stations) {
        return Err(GenError::InvalidParams(format!(
            "num_stations must be in 2..=24, got {}",
            params.num_stations
        )));
    }
    if params.num_exec == 0 {
        return Err(GenError::InvalidParams("num_exec must be at least 1".into()));
    }
    if params.topology == Topology::Dense
        && (params.fanout == 0
            || params.fanout > params.num_stations
            || !params.num_stations.is_multiple_of(params.fanout))
        {
            return Err(GenError::InvalidParams(format!(
                "dense topology needs a fanout dividing {} stations, got {}",
                params.num_stations, params.fanout
            )));
        }

    let preds = predecessors(params);
    let terminals = terminal_stations(params);

    let mut modules: BTreeMap<String, ModuleSpec> = BTreeMap::new();
    modules.insert(
        "M_in".into(),
        ModuleSpec {
            name: "M_in".into(),
            s_in: vec![],
            s_state: vec![],
            s_out: vec![query_schema()],
            q_state: Default::default(),
            q_out: Default::default(),
        },
    );
    for i in 1..=params.num_stations {
        let m = station_module(i, params.seed, &preds[i - 1], params.selectivity);
        modules.insert(m.name.clone(), m);
    }
    modules.insert("M_out".into(), out_module(&terminals));

    let mut wf = Workflow::default();
    wf.nodes.insert("in".into(), "M_in".into());
    wf.nodes.insert("out".into(), "M_out".into());
    for i in 1..=params.num_stations {
        wf.nodes.insert(station_node(i), format!("M_sta_{i}"));
        wf.edges.push(Edge {
            src: "in".into(),
            dst: station_node(i),
            relations: vec!["Query".into()],
        });
        for p in &preds[i - 1] {
            wf.edges.push(Edge {
                src: station_node(*p),
                dst: station_node(i),
                relations: vec![format!("MinTemp_{p:02}")],
            });
        }
    }
    for t in &terminals {
        wf.edges.push(Edge {
            src: station_node(*t),
            dst: "out".into(),
            relations: vec![format!("MinTemp_{t:02}")],
        });
    }
    wf.inputs = ["in".to_string()].into_iter().collect();
    wf.outputs = ["out".to_string()].into_iter().collect();

    // Forty years of monthly history per station.
    let mut initial_state: BTreeMap<String, Instance> = BTreeMap::new();
    for i in 1..=params.num_stations {
        let mut rows = Vec::with_capacity(480);
        for year in FIRST_YEAR..=LAST_SEED_YEAR {
            for month in 1..=12 {
                rows.push(measure(params.seed, i, year, month));
            }
        }
        let mut instance = Instance::new();
        instance.insert("Observations".into(), Bag::new(rows));
        initial_state.insert(format!("M_sta_{i}"), instance);
    }

    let mut inputs = Vec::with_capacity(params.num_exec);
    for e in 0..params.num_exec {
        let (year, month) = exec_date(e);
        let mut input = WorkflowInput::new();
        input.insert(
            ("in".into(), "Query".into()),
            Bag::new(vec![Tuple(vec![
                int(year),
                int(month),
                int(season_of(month)),
                int(1),
                text(params.selectivity.name()),
            ])]),
        );
        inputs.push(input);
    }

    let mut bbs = BbRegistry::new();
    for i in 1..=params.num_stations {
        register_measure(&mut bbs, i, params.seed);
    }

    Ok(GeneratedWorkflow {
        def: WorkflowDef { modules, workflow: wf },
        initial_state,
        inputs,
        bbs,
        stop_on_output: false,
        label: RunLabel {
            family: "arctic".into(),
            topology: params.topology.name().into(),
            modules: params.num_stations + 2,
            fanout: if params.topology == Topology::Dense { params.fanout } else { 0 },
            selectivity: params.selectivity.name().into(),
            num_cars: 0,
            num_exec: params.num_exec,
            seed: params.seed,
        },
    })
}

/// Direct-scan oracle: the minimum air temperature over the selected
/// observation subsets of all stations after execution `e`, counting the
/// seeded history plus the measurements of executions `0..=e`.
pub fn expected_global_min(params: &ArcticParams, e: usize) -> f64 {
    let (cur_year, cur_month) = exec_date(e);
    let cur_season = season_of(cur_month);
    let mut best = f64::INFINITY;
    for station in 1..=params.num_stations {
        let mut consider = |t: &Tuple| {
            let year = match &t.0[0] {
                crate::relmodel::Value::Atom(crate::relmodel::AtomValue::Int(y)) => *y,
                _ => unreachable!(),
            };
            let month = match &t.0[1] {
                crate::relmodel::Value::Atom(crate::relmodel::AtomValue::Int(m)) => *m,
                _ => unreachable!(),
            };
            let selected = match params.selectivity {
                Selectivity::All => true,
                Selectivity::Season => season_of(month) == cur_season,
                Selectivity::Month => month == cur_month,
                Selectivity::Year => year == cur_year,
            };
            if selected {
                if let crate::relmodel::Value::Atom(a) = &t.0[4] {
                    best = best.min(a.as_f64().expect("temp is numeric"));
                }
            }
        };
        for year in FIRST_YEAR..=LAST_SEED_YEAR {
            for month in 1..=12 {
                consider(&measure(params.seed, station, year, month));
            }
        }
        for past in 0..=e {
            let (y, m) = exec_date(past);
            consider(&measure(params.seed, station, y, m));
        }
    }
    best
}
