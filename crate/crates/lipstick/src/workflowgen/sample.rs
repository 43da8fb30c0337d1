//! The single-dealer sample: one request node, one dealership, one
//! aggregator. Its state query spells out the bid pipeline including the
//! trivial projections a Pig author would elide, so every intermediate
//! relation materializes with a stable schema. Ships as the repository's
//! demo fixture and drives the golden tests.

use std::collections::BTreeMap;

use super::dealerships::{register_sample_calcbid, schema};
use super::{GeneratedWorkflow, RunLabel};
use crate::evalengine::BbRegistry;
use crate::pigparse::parse;
use crate::relmodel::{text, AtomKind, Bag, Instance, Tuple};
use crate::workflow::{Edge, ModuleSpec, Workflow, WorkflowDef, WorkflowInput};

pub const DEALER_STATE_QUERY: &str = "\
ReqModel = FOREACH Requests GENERATE Model;
JoinedInv = JOIN Cars BY Model, ReqModel BY Model;
Inventory = FOREACH JoinedInv GENERATE CarId, Cars::Model AS Model;
JoinedSold = JOIN Inventory BY CarId, SoldCars BY CarId;
SoldInventory = FOREACH JoinedSold GENERATE Inventory::CarId AS CarId, Model, BidId;
CarsByModel = GROUP Inventory BY Model;
SoldByModel = GROUP SoldInventory BY Model;
NumCarsByModel = FOREACH CarsByModel GENERATE group AS Model, COUNT(Inventory) AS NumAvail;
NumSoldByModel = FOREACH SoldByModel GENERATE group AS Model, COUNT(SoldInventory) AS NumSold;
AllInfoByModel = COGROUP Requests BY Model, NumCarsByModel BY Model, NumSoldByModel BY Model;
InventoryBids = FOREACH AllInfoByModel GENERATE FLATTEN(CalcBid(Requests, NumCarsByModel, NumSoldByModel));
";

/// Builds the sample workflow with the classic three-car inventory and a
/// single Civic request.
pub fn dealership_sample() -> GeneratedWorkflow {
    let mut modules: BTreeMap<String, ModuleSpec> = BTreeMap::new();
    modules.insert(
        "M_request".into(),
        ModuleSpec {
            name: "M_request".into(),
            s_in: vec![],
            s_state: vec![],
            s_out: vec![schema(
                "Requests",
                &[
                    ("UserId", AtomKind::Text),
                    ("BidId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                ],
            )],
            q_state: Default::default(),
            q_out: Default::default(),
        },
    );
    modules.insert(
        "M_dealer1".into(),
        ModuleSpec {
            name: "M_dealer1".into(),
            s_in: vec![schema(
                "Requests",
                &[
                    ("UserId", AtomKind::Text),
                    ("BidId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                ],
            )],
            s_state: vec![
                schema("Cars", &[("CarId", AtomKind::Text), ("Model", AtomKind::Text)]),
                schema("SoldCars", &[("CarId", AtomKind::Text), ("BidId", AtomKind::Text)]),
                schema(
                    "InventoryBids",
                    &[
                        ("BidId", AtomKind::Text),
                        ("UserId", AtomKind::Text),
                        ("Model", AtomKind::Text),
                        ("Amount", AtomKind::Float),
                    ],
                ),
            ],
            s_out: vec![schema("Bids", &[("Model", AtomKind::Text), ("Price", AtomKind::Float)])],
            q_state: parse(DEALER_STATE_QUERY).expect("sample state query parses"),
            q_out: parse("Bids = FOREACH InventoryBids GENERATE Model, Amount AS Price;")
                .expect("sample output query parses"),
        },
    );
    modules.insert(
        "M_agg".into(),
        ModuleSpec {
            name: "M_agg".into(),
            s_in: vec![schema("Bids", &[("Model", AtomKind::Text), ("Price", AtomKind::Float)])],
            s_state: vec![],
            s_out: vec![schema(
                "BestBid",
                &[("Model", AtomKind::Text), ("Price", AtomKind::Float)],
            )],
            q_state: Default::default(),
            q_out: parse(
                "BidsByModel = GROUP Bids BY Model;\n\
                 BestBid = FOREACH BidsByModel GENERATE group AS Model, MIN(Bids.Price) AS Price;",
            )
            .expect("sample aggregator query parses"),
        },
    );

    let workflow = Workflow {
        nodes: [
            ("req".to_string(), "M_request".to_string()),
            ("d1".to_string(), "M_dealer1".to_string()),
            ("agg".to_string(), "M_agg".to_string()),
        ]
        .into_iter()
        .collect(),
        edges: vec![
            Edge { src: "req".into(), dst: "d1".into(), relations: vec!["Requests".into()] },
            Edge { src: "d1".into(), dst: "agg".into(), relations: vec!["Bids".into()] },
        ],
        inputs: ["req".to_string()].into_iter().collect(),
        outputs: ["agg".to_string()].into_iter().collect(),
    };

    let mut dealer_state = Instance::new();
    dealer_state.insert(
        "Cars".into(),
        Bag::new(vec![
            Tuple(vec![text("C_1"), text("Accord")]),
            Tuple(vec![text("C_2"), text("Civic")]),
            Tuple(vec![text("C_3"), text("Civic")]),
        ]),
    );
    dealer_state.insert("SoldCars".into(), Bag::empty());
    dealer_state.insert("InventoryBids".into(), Bag::empty());
    let mut initial_state = BTreeMap::new();
    initial_state.insert("M_dealer1".to_string(), dealer_state);

    let mut input = WorkflowInput::new();
    input.insert(
        ("req".into(), "Requests".into()),
        Bag::new(vec![Tuple(vec![text("P_1"), text("B_1"), text("Civic")])]),
    );

    let mut bbs = BbRegistry::new();
    register_sample_calcbid(&mut bbs);

    GeneratedWorkflow {
        def: WorkflowDef { modules, workflow },
        initial_state,
        inputs: vec![input],
        bbs,
        stop_on_output: false,
        label: RunLabel {
            family: "dealership-sample".into(),
            topology: "fixed".into(),
            modules: 3,
            fanout: 0,
            selectivity: String::new(),
            num_cars: 3,
            num_exec: 1,
            seed: 0,
        },
    }
}
