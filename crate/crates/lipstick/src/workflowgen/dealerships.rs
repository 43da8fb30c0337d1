//! The car-dealerships benchmark family.
//!
//! Fixed topology: a bid request is broadcast to four dealer modules, each
//! bids from its inventory and history, an aggregator picks the minimum
//! bid, the buyer accepts or declines, and on acceptance the winning
//! dealer's purchase-phase node records the sale, which the car module
//! outputs. Each dealer module appears on two workflow nodes (bid and
//! purchase phase) sharing its state; the phases are told apart by a
//! request-type field filtered inside the query.
//!
//! A run terminates when a purchase appears or after `num_exec`
//! executions.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{GenError, GeneratedWorkflow, RunLabel};
use crate::evalengine::BbRegistry;
use crate::pigparse::parse;
use crate::relmodel::{
    boolean, float, int, text, AtomKind, AtomValue, AttrType, Bag, Instance, Schema, Tuple, Value,
};
use crate::workflow::{Edge, ModuleSpec, Workflow, WorkflowDef, WorkflowInput};

pub const GERMAN_MODELS: [&str; 12] = [
    "Arteon", "Cayenne", "Corsa", "Golf", "Jetta", "Kadett", "Macan", "Panamera", "Passat",
    "Polo", "Taycan", "Tiguan",
];

fn base_price(model: &str) -> f64 {
    match GERMAN_MODELS.iter().position(|m| *m == model) {
        Some(i) => 15000.0 + 1000.0 * i as f64,
        None => match model {
            "Civic" => 20000.0,
            "Accord" => 21000.0,
            _ => 18000.0,
        },
    }
}

#[derive(Debug, Clone)]
pub struct DealershipParams {
    /// Total cars, split evenly across the four dealerships.
    pub num_cars: usize,
    pub num_exec: usize,
    pub seed: u64,
    /// The buyer's reserve price is drawn uniformly from this range.
    pub reserve_range: (f64, f64),
    /// The buyer's per-execution acceptance probability is drawn uniformly
    /// from this range once per run.
    pub accept_prob_range: (f64, f64),
}

impl Default for DealershipParams {
    fn default() -> Self {
        DealershipParams {
            num_cars: 2000,
            num_exec: 100,
            seed: 1,
            reserve_range: (25000.0, 60000.0),
            accept_prob_range: (0.2, 0.8),
        }
    }
}

pub(crate) fn schema(name: &str, attrs: &[(&str, AtomKind)]) -> Schema {
    Schema::new(
        name,
        attrs.iter().map(|(n, k)| (n.to_string(), AttrType::Atom(*k))).collect(),
    )
}

fn requests_attrs() -> [(&'static str, AtomKind); 5] {
    [
        ("ReqType", AtomKind::Text),
        ("UserId", AtomKind::Text),
        ("BidId", AtomKind::Text),
        ("Model", AtomKind::Text),
        ("DealerId", AtomKind::Text),
    ]
}

fn dealer_module(k: usize) -> ModuleSpec {
    let q_state = format!(
        "BidReqs = FILTER BidRequests BY ReqType == 'bid';\n\
         ReqModel = FOREACH BidReqs GENERATE Model;\n\
         JoinedInv = JOIN Cars BY Model, ReqModel BY Model;\n\
         Inventory = FOREACH JoinedInv GENERATE CarId, Cars::Model AS Model;\n\
         JoinedSold = JOIN Inventory BY CarId, SoldCars BY CarId;\n\
         SoldInventory = FOREACH JoinedSold GENERATE Inventory::CarId AS CarId, Model, BidId;\n\
         CarsByModel = GROUP Inventory BY Model;\n\
         SoldByModel = GROUP SoldInventory BY Model;\n\
         NumCarsByModel = FOREACH CarsByModel GENERATE group AS Model, COUNT(Inventory) AS NumAvail;\n\
         NumSoldByModel = FOREACH SoldByModel GENERATE group AS Model, COUNT(SoldInventory) AS NumSold;\n\
         AllInfoByModel = COGROUP BidReqs BY Model, NumCarsByModel BY Model, NumSoldByModel BY Model, InventoryBids BY Model;\n\
         NewBids = FOREACH AllInfoByModel GENERATE FLATTEN(CalcBid{k}(BidReqs, NumCarsByModel, NumSoldByModel, InventoryBids));\n\
         NewHist = FOREACH NewBids GENERATE BidId, UserId, Model, Amount;\n\
         InventoryBids = UNION InventoryBids, NewHist;\n\
         CurrentBids = FOREACH NewBids GENERATE DealerId, BidId, UserId, Model, Amount;\n\
         BuyReqs0 = FILTER BidRequests BY ReqType == 'buy';\n\
         BuyReqs = FILTER BuyReqs0 BY DealerId == 'd{k}';\n\
         BuyModels = FOREACH BuyReqs GENERATE BidId, Model;\n\
         CandJoin = JOIN Cars BY Model, BuyModels BY Model;\n\
         Cands = FOREACH CandJoin GENERATE CarId, Cars::Model AS Model, BidId;\n\
         ByCar = COGROUP Cands BY CarId, SoldCars BY CarId;\n\
         NumCand = FOREACH ByCar GENERATE group AS CarId, COUNT(Cands) AS NC;\n\
         NumSoldCar = FOREACH ByCar GENERATE group AS CarId, COUNT(SoldCars) AS NS;\n\
         CarFlags = JOIN NumCand BY CarId, NumSoldCar BY CarId;\n\
         Avail0 = FILTER CarFlags BY NC > 0;\n\
         Avail = FILTER Avail0 BY NS == 0;\n\
         AvailIds = FOREACH Avail GENERATE NumCand::CarId AS CarId;\n\
         AvailAll = GROUP AvailIds ALL;\n\
         MinCar = FOREACH AvailAll GENERATE MIN(AvailIds.CarId) AS CarId;\n\
         SoldJoin = JOIN MinCar BY CarId, Cands BY CarId;\n\
         NewSold = FOREACH SoldJoin GENERATE MinCar::CarId AS CarId, BidId;\n\
         SoldCars = UNION SoldCars, NewSold;\n\
         LastSale = FOREACH NewSold GENERATE CarId, BidId;\n"
    );
    let q_out = format!(
        "Bids{k} = FOREACH CurrentBids GENERATE DealerId, BidId, Model, Amount AS Price;\n\
         Sold{k} = FOREACH LastSale GENERATE CarId, BidId;\n"
    );
    ModuleSpec {
        name: format!("M_dealer{k}"),
        s_in: vec![schema("BidRequests", &requests_attrs())],
        s_state: vec![
            schema("Cars", &[("CarId", AtomKind::Int), ("Model", AtomKind::Text)]),
            schema("SoldCars", &[("CarId", AtomKind::Int), ("BidId", AtomKind::Text)]),
            schema(
                "InventoryBids",
                &[
                    ("BidId", AtomKind::Text),
                    ("UserId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Amount", AtomKind::Float),
                ],
            ),
            schema(
                "CurrentBids",
                &[
                    ("DealerId", AtomKind::Text),
                    ("BidId", AtomKind::Text),
                    ("UserId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Amount", AtomKind::Float),
                ],
            ),
            schema("LastSale", &[("CarId", AtomKind::Int), ("BidId", AtomKind::Text)]),
        ],
        s_out: vec![
            schema(
                &format!("Bids{k}"),
                &[
                    ("DealerId", AtomKind::Text),
                    ("BidId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Price", AtomKind::Float),
                ],
            ),
            schema(
                &format!("Sold{k}"),
                &[("CarId", AtomKind::Int), ("BidId", AtomKind::Text)],
            ),
        ],
        q_state: parse(&q_state).expect("dealer state query parses"),
        q_out: parse(&q_out).expect("dealer output query parses"),
    }
}

fn agg_module() -> ModuleSpec {
    let bids = |k: usize| {
        schema(
            &format!("Bids{k}"),
            &[
                ("DealerId", AtomKind::Text),
                ("BidId", AtomKind::Text),
                ("Model", AtomKind::Text),
                ("Price", AtomKind::Float),
            ],
        )
    };
    let q_out = "AB1 = UNION Bids1, Bids2;\n\
         AB2 = UNION Bids3, Bids4;\n\
         AllBids = UNION AB1, AB2;\n\
         GB = GROUP AllBids ALL;\n\
         BestPrice = FOREACH GB GENERATE MIN(AllBids.Price) AS Price;\n\
         WinJoin = JOIN AllBids BY Price, BestPrice BY Price;\n\
         BestBid = FOREACH WinJoin GENERATE DealerId, BidId, Model, AllBids::Price AS Price;\n";
    ModuleSpec {
        name: "M_agg".into(),
        s_in: vec![bids(1), bids(2), bids(3), bids(4)],
        s_state: vec![],
        s_out: vec![schema(
            "BestBid",
            &[
                ("DealerId", AtomKind::Text),
                ("BidId", AtomKind::Text),
                ("Model", AtomKind::Text),
                ("Price", AtomKind::Float),
            ],
        )],
        q_state: Default::default(),
        q_out: parse(q_out).expect("aggregator query parses"),
    }
}

fn xor_module() -> ModuleSpec {
    let q_out = "CJ = JOIN BestBid BY Model, Choice BY Model;\n\
         AccA = FILTER CJ BY Accept == true;\n\
         Acc = FILTER AccA BY Price <= Reserve;\n\
         BidRequests = FOREACH Acc GENERATE ReqType, UserId, BidId, BestBid::Model AS Model, DealerId;\n";
    ModuleSpec {
        name: "M_xor".into(),
        s_in: vec![
            schema(
                "BestBid",
                &[
                    ("DealerId", AtomKind::Text),
                    ("BidId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Price", AtomKind::Float),
                ],
            ),
            schema(
                "Choice",
                &[
                    ("ReqType", AtomKind::Text),
                    ("UserId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Accept", AtomKind::Bool),
                    ("Reserve", AtomKind::Float),
                ],
            ),
        ],
        s_state: vec![],
        s_out: vec![schema("BidRequests", &requests_attrs())],
        q_state: Default::default(),
        q_out: parse(q_out).expect("choice-routing query parses"),
    }
}

fn car_module() -> ModuleSpec {
    let sold = |k: usize| {
        schema(&format!("Sold{k}"), &[("CarId", AtomKind::Int), ("BidId", AtomKind::Text)])
    };
    let q_out = "SU1 = UNION Sold1, Sold2;\n\
         SU2 = UNION Sold3, Sold4;\n\
         Purchases = UNION SU1, SU2;\n";
    ModuleSpec {
        name: "M_car".into(),
        s_in: vec![sold(1), sold(2), sold(3), sold(4)],
        s_state: vec![],
        s_out: vec![schema("Purchases", &[("CarId", AtomKind::Int), ("BidId", AtomKind::Text)])],
        q_state: Default::default(),
        q_out: parse(q_out).expect("car output query parses"),
    }
}

/// Registers the bid calculation for dealer `k`. The bid is
/// `basePrice(model) * (1 + 0.02*numAvail - 0.05*numSold)` plus a
/// per-dealer quarter offset that keeps amounts distinct across dealers;
/// with bid history for the model, the new amount is one below the
/// running minimum.
pub fn register_dealer_calcbid(registry: &mut BbRegistry, k: usize) {
    let output = schema(
        "NewBids",
        &[
            ("DealerId", AtomKind::Text),
            ("BidId", AtomKind::Text),
            ("UserId", AtomKind::Text),
            ("Model", AtomKind::Text),
            ("Amount", AtomKind::Float),
        ],
    );
    registry.register(format!("CalcBid{k}"), output, move |args| {
        let [reqs, num_avail, num_sold, history] = args else {
            return Err("CalcBid takes requests, availability, sales, history".into());
        };
        let reqs = reqs.as_bag().ok_or("requests must be a bag")?;
        let mut out = Vec::new();
        for req in &reqs.tuples {
            let user = atom_text(&req.0[1])?;
            let bid_id = atom_text(&req.0[2])?;
            let model = atom_text(&req.0[3])?;
            let avail = first_count(num_avail)?;
            if avail == 0 {
                continue;
            }
            let sold = first_count(num_sold)?;
            let mut amount = base_price(&model)
                * (1.0 + 0.02 * avail as f64 - 0.05 * sold as f64)
                + 0.25 * (k as f64 - 1.0);
            if let Some(prev) = min_history_amount(history)? {
                amount = amount.min(prev) - 1.0;
            }
            out.push(Tuple(vec![
                text(format!("d{k}")),
                text(bid_id),
                text(user),
                text(model),
                float(amount),
            ]));
        }
        Ok(Bag::new(out))
    });
}

/// The three-argument bid calculation used by the sample fixture, without
/// dealer offsets or history.
pub fn register_sample_calcbid(registry: &mut BbRegistry) {
    let output = schema(
        "InventoryBids",
        &[
            ("BidId", AtomKind::Text),
            ("UserId", AtomKind::Text),
            ("Model", AtomKind::Text),
            ("Amount", AtomKind::Float),
        ],
    );
    registry.register("CalcBid", output, |args| {
        let [reqs, num_avail, num_sold] = args else {
            return Err("CalcBid takes requests, availability, sales".into());
        };
        let reqs = reqs.as_bag().ok_or("requests must be a bag")?;
        let mut out = Vec::new();
        for req in &reqs.tuples {
            let user = atom_text(&req.0[0])?;
            let bid_id = atom_text(&req.0[1])?;
            let model = atom_text(&req.0[2])?;
            let avail = first_count(num_avail)?;
            if avail == 0 {
                continue;
            }
            let sold = first_count(num_sold)?;
            let amount = base_price(&model) * (1.0 + 0.02 * avail as f64 - 0.05 * sold as f64);
            out.push(Tuple(vec![text(bid_id), text(user), text(model), float(amount)]));
        }
        Ok(Bag::new(out))
    });
}

fn atom_text(v: &Value) -> Result<String, String> {
    match v {
        Value::Atom(AtomValue::Text(s)) => Ok(s.clone()),
        other => Err(format!("expected a text atom, found {other:?}")),
    }
}

/// The count carried by the single tuple of a grouped-count bag, or 0.
fn first_count(v: &Value) -> Result<i64, String> {
    let bag = v.as_bag().ok_or("expected a bag argument")?;
    match bag.tuples.first() {
        None => Ok(0),
        Some(t) => match t.0.get(1) {
            Some(Value::Atom(AtomValue::Int(n))) => Ok(*n),
            other => Err(format!("expected a count, found {other:?}")),
        },
    }
}

fn min_history_amount(v: &Value) -> Result<Option<f64>, String> {
    let bag = v.as_bag().ok_or("expected a bag argument")?;
    let mut best: Option<f64> = None;
    for t in &bag.tuples {
        if let Some(Value::Atom(a)) = t.0.get(3) {
            let amount = a.as_f64().ok_or("history amount must be numeric")?;
            best = Some(match best {
                Some(b) => b.min(amount),
                None => amount,
            });
        }
    }
    Ok(best)
}

/// Builds the dealership workflow, seeded car inventories, a fixed buyer,
/// and the per-execution request/choice inputs.
pub fn gen_dealerships(params: &DealershipParams) -> Result<GeneratedWorkflow, GenError> {
    if params.num_cars == 0 || !params.num_cars.is_multiple_of(4) {
        return Err(GenError::InvalidParams(format!(
            "num_cars must be a positive multiple of 4, got {}",
            params.num_cars
        )));
    }
    if params.num_exec == 0 {
        return Err(GenError::InvalidParams("num_exec must be at least 1".into()));
    }

    let mut modules: BTreeMap<String, ModuleSpec> = BTreeMap::new();
    modules.insert(
        "M_request".into(),
        ModuleSpec {
            name: "M_request".into(),
            s_in: vec![],
            s_state: vec![],
            s_out: vec![schema("Requests", &requests_attrs())],
            q_state: Default::default(),
            q_out: Default::default(),
        },
    );
    modules.insert(
        "M_and".into(),
        ModuleSpec {
            name: "M_and".into(),
            s_in: vec![schema("Requests", &requests_attrs())],
            s_state: vec![],
            s_out: vec![schema("BidRequests", &requests_attrs())],
            q_state: Default::default(),
            q_out: parse(
                "BidRequests = FOREACH Requests GENERATE ReqType, UserId, BidId, Model, DealerId;",
            )
            .expect("broadcast query parses"),
        },
    );
    modules.insert(
        "M_choice".into(),
        ModuleSpec {
            name: "M_choice".into(),
            s_in: vec![],
            s_state: vec![],
            s_out: vec![schema(
                "Choice",
                &[
                    ("ReqType", AtomKind::Text),
                    ("UserId", AtomKind::Text),
                    ("Model", AtomKind::Text),
                    ("Accept", AtomKind::Bool),
                    ("Reserve", AtomKind::Float),
                ],
            )],
            q_state: Default::default(),
            q_out: Default::default(),
        },
    );
    for k in 1..=4 {
        let m = dealer_module(k);
        modules.insert(m.name.clone(), m);
    }
    modules.insert("M_agg".into(), agg_module());
    modules.insert("M_xor".into(), xor_module());
    modules.insert("M_car".into(), car_module());

    let mut wf = Workflow::default();
    wf.nodes.insert("req".into(), "M_request".into());
    wf.nodes.insert("and".into(), "M_and".into());
    wf.nodes.insert("choice".into(), "M_choice".into());
    wf.nodes.insert("agg".into(), "M_agg".into());
    wf.nodes.insert("xor".into(), "M_xor".into());
    wf.nodes.insert("car".into(), "M_car".into());
    wf.edges.push(Edge { src: "req".into(), dst: "and".into(), relations: vec!["Requests".into()] });
    for k in 1..=4usize {
        wf.nodes.insert(format!("d{k}"), format!("M_dealer{k}"));
        wf.nodes.insert(format!("p{k}"), format!("M_dealer{k}"));
        wf.edges.push(Edge {
            src: "and".into(),
            dst: format!("d{k}"),
            relations: vec!["BidRequests".into()],
        });
        wf.edges.push(Edge {
            src: format!("d{k}"),
            dst: "agg".into(),
            relations: vec![format!("Bids{k}")],
        });
        wf.edges.push(Edge {
            src: "xor".into(),
            dst: format!("p{k}"),
            relations: vec!["BidRequests".into()],
        });
        wf.edges.push(Edge {
            src: format!("p{k}"),
            dst: "car".into(),
            relations: vec![format!("Sold{k}")],
        });
    }
    wf.edges.push(Edge { src: "agg".into(), dst: "xor".into(), relations: vec!["BestBid".into()] });
    wf.edges.push(Edge { src: "choice".into(), dst: "xor".into(), relations: vec!["Choice".into()] });
    wf.inputs = ["req".to_string(), "choice".to_string()].into_iter().collect();
    wf.outputs = ["car".to_string()].into_iter().collect();

    // Seeded inventories: cars split evenly, models drawn per car.
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let per_dealer = params.num_cars / 4;
    let mut initial_state: BTreeMap<String, Instance> = BTreeMap::new();
    for k in 1..=4usize {
        let mut cars = Vec::with_capacity(per_dealer);
        for c in 0..per_dealer {
            let id = ((k - 1) * per_dealer + c + 1) as i64;
            let model = GERMAN_MODELS[rng.gen_range(0..GERMAN_MODELS.len())];
            cars.push(Tuple(vec![int(id), text(model)]));
        }
        let mut instance = Instance::new();
        instance.insert("Cars".into(), Bag::new(cars));
        initial_state.insert(format!("M_dealer{k}"), instance);
    }

    // A fixed buyer per run.
    let buyer_model = GERMAN_MODELS[rng.gen_range(0..GERMAN_MODELS.len())];
    let reserve = rng.gen_range(params.reserve_range.0..=params.reserve_range.1);
    let accept_prob = rng.gen_range(params.accept_prob_range.0..=params.accept_prob_range.1);

    let mut inputs = Vec::with_capacity(params.num_exec);
    for e in 0..params.num_exec {
        let accept = rng.gen_bool(accept_prob.clamp(0.0, 1.0));
        let mut input = WorkflowInput::new();
        input.insert(
            ("req".into(), "Requests".into()),
            Bag::new(vec![Tuple(vec![
                text("bid"),
                text("u1"),
                text(format!("B{e}")),
                text(buyer_model),
                text("none"),
            ])]),
        );
        input.insert(
            ("choice".into(), "Choice".into()),
            Bag::new(vec![Tuple(vec![
                text("buy"),
                text("u1"),
                text(buyer_model),
                boolean(accept),
                float(reserve),
            ])]),
        );
        inputs.push(input);
    }

    let mut bbs = BbRegistry::new();
    for k in 1..=4 {
        register_dealer_calcbid(&mut bbs, k);
    }

    Ok(GeneratedWorkflow {
        def: WorkflowDef { modules, workflow: wf },
        initial_state,
        inputs,
        bbs,
        stop_on_output: true,
        label: RunLabel {
            family: "dealerships".into(),
            topology: "fixed".into(),
            modules: 13,
            fanout: 0,
            selectivity: String::new(),
            num_cars: params.num_cars,
            num_exec: params.num_exec,
            seed: params.seed,
        },
    })
}
