//! Train/validation/test plans for the three evaluation protocols.
//!
//! Validation holdouts are drawn per oracle at chunk granularity: the
//! oracle's pool is sorted by `(scenario, year)` and `floor(pool / 10)`
//! chunks are picked with a partial Fisher–Yates shuffle driven by
//! `Pcg32::from_seed(derive_seed(seed, ["val", plan, oracle]))`.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{ChunkKey, Dataset, ScenarioId};
use crate::rng::{derive_seed, sample_without_replacement, Pcg32};

#[derive(Debug, Error, PartialEq)]
pub enum SplitError {
    #[error("dataset has no scenario {scenario} for oracle {oracle}")]
    MissingScenario { oracle: String, scenario: String },
    #[error("invalid split configuration: {0}")]
    Config(String),
}

/// Which experiment a plan (or a result) belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Protocol {
    Baseline,
    TimeShift,
    SspHoldout(ScenarioId),
}

impl Protocol {
    pub fn label(&self) -> String {
        match self {
            Protocol::Baseline => "baseline".into(),
            Protocol::TimeShift => "time_shift".into(),
            Protocol::SspHoldout(s) => format!("ssp_holdout_{s}"),
        }
    }

    pub fn parse(label: &str) -> Option<Protocol> {
        match label {
            "baseline" => Some(Protocol::Baseline),
            "time_shift" => Some(Protocol::TimeShift),
            other => other
                .strip_prefix("ssp_holdout_")
                .filter(|s| !s.is_empty())
                .map(|s| Protocol::SspHoldout(ScenarioId::new(s))),
        }
    }

    pub fn is_shift(&self) -> bool {
        !matches!(self, Protocol::Baseline)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl Serialize for Protocol {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.label())
    }
}

impl<'de> Deserialize<'de> for Protocol {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Protocol::parse(&s).ok_or_else(|| serde::de::Error::custom(format!("unknown protocol {s}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub name: String,
    pub protocol: Protocol,
    pub train: BTreeSet<ChunkKey>,
    pub val: BTreeSet<ChunkKey>,
    pub test: BTreeSet<ChunkKey>,
    /// Scenario labels touched by any part of the plan.
    pub domains_all: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Train,
    Val,
    Test,
}

impl SplitPlan {
    fn new(
        protocol: Protocol,
        train: BTreeSet<ChunkKey>,
        val: BTreeSet<ChunkKey>,
        test: BTreeSet<ChunkKey>,
    ) -> Self {
        let domains_all = train
            .iter()
            .chain(&val)
            .chain(&test)
            .map(|k| k.scenario.to_string())
            .collect();
        Self {
            name: protocol.label(),
            protocol,
            train,
            val,
            test,
            domains_all,
        }
    }

    pub fn part(&self, part: Part) -> &BTreeSet<ChunkKey> {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }

    /// Keys of one part restricted to an oracle, in sorted order.
    pub fn keys_for(&self, part: Part, oracle: &str) -> Vec<ChunkKey> {
        self.part(part)
            .iter()
            .filter(|k| k.oracle_id == oracle)
            .cloned()
            .collect()
    }

    pub fn scenarios_in(&self, part: Part) -> BTreeSet<String> {
        self.part(part).iter().map(|k| k.scenario.to_string()).collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plan serializes");
        s.push('\n');
        s
    }
}

fn require(dataset: &Dataset, scenario: &str) -> Result<(), SplitError> {
    for oracle in &dataset.oracles {
        if dataset.get(oracle, &ScenarioId::new(scenario)).is_none() {
            return Err(SplitError::MissingScenario {
                oracle: oracle.clone(),
                scenario: scenario.to_string(),
            });
        }
    }
    Ok(())
}

/// Split each oracle's pool into (train, val) with a seeded 10% holdout.
fn holdout(
    pool: &BTreeSet<ChunkKey>,
    oracles: &[String],
    seed: u64,
    plan: &str,
) -> (BTreeSet<ChunkKey>, BTreeSet<ChunkKey>) {
    let mut train = BTreeSet::new();
    let mut val = BTreeSet::new();
    for oracle in oracles {
        // ChunkKey ordering within one oracle is (scenario, year).
        let keys: Vec<ChunkKey> = pool.iter().filter(|k| &k.oracle_id == oracle).cloned().collect();
        let k = keys.len() / 10;
        let mut rng = Pcg32::from_seed(derive_seed(seed, &["val", plan, oracle]));
        let picked: BTreeSet<ChunkKey> = sample_without_replacement(&keys, k, &mut rng)
            .into_iter()
            .collect();
        for key in keys {
            if picked.contains(&key) {
                val.insert(key);
            } else {
                train.insert(key);
            }
        }
    }
    (train, val)
}

fn scenario_chunks(dataset: &Dataset, scenarios: &[&str]) -> BTreeSet<ChunkKey> {
    dataset
        .oracles
        .iter()
        .flat_map(|o| scenarios.iter().flat_map(move |s| dataset.scenario_keys(o, s)))
        .collect()
}

/// Train on historical + ssp126/370/585 minus a 10% validation holdout; test
/// on all of ssp245.
pub fn baseline_split(dataset: &Dataset, seed: u64) -> Result<SplitPlan, SplitError> {
    let pool_scenarios = [
        ScenarioId::HISTORICAL,
        ScenarioId::SSP126,
        ScenarioId::SSP370,
        ScenarioId::SSP585,
    ];
    for s in pool_scenarios.iter().chain([&ScenarioId::SSP245]) {
        require(dataset, s)?;
    }
    let pool = scenario_chunks(dataset, &pool_scenarios);
    let protocol = Protocol::Baseline;
    let (train, val) = holdout(&pool, &dataset.oracles, seed, &protocol.label());
    let test = scenario_chunks(dataset, &[ScenarioId::SSP245]);
    Ok(SplitPlan::new(protocol, train, val, test))
}

/// Year window of the time-period shift.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub train_end: i32,
    pub test_start: i32,
    pub test_end: i32,
}

impl Default for TimeWindow {
    fn default() -> Self {
        Self {
            train_end: 2014,
            test_start: 2015,
            test_end: 2023,
        }
    }
}

/// Train on every chunk up to 2014 (minus a 10% validation holdout); test
/// on 2015-2023 of each requested scenario.
pub fn time_domain_split(
    dataset: &Dataset,
    test_scenarios: &[ScenarioId],
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    time_domain_split_with(dataset, test_scenarios, TimeWindow::default(), seed)
}

pub fn time_domain_split_with(
    dataset: &Dataset,
    test_scenarios: &[ScenarioId],
    window: TimeWindow,
    seed: u64,
) -> Result<SplitPlan, SplitError> {
    if test_scenarios.is_empty() {
        return Err(SplitError::Config("time shift needs at least one test scenario".into()));
    }
    if window.test_start > window.test_end || window.train_end >= window.test_start {
        return Err(SplitError::Config(format!("bad time window {window:?}")));
    }
    for s in test_scenarios {
        require(dataset, s.as_str())?;
        let spec = dataset.scenario(s.as_str()).ok_or_else(|| SplitError::MissingScenario {
            oracle: String::new(),
            scenario: s.to_string(),
        })?;
        if !spec.covers(window.test_start) || !spec.covers(window.test_end) {
            return Err(SplitError::Config(format!(
                "scenario {s} does not cover {}-{}",
                window.test_start, window.test_end
            )));
        }
    }
    let all = dataset.all_keys();
    let pool: BTreeSet<ChunkKey> = all
        .iter()
        .filter(|k| k.year <= window.train_end)
        .cloned()
        .collect();
    if pool.is_empty() {
        return Err(SplitError::Config(format!(
            "no training chunks at or before {}",
            window.train_end
        )));
    }
    let protocol = Protocol::TimeShift;
    let (train, val) = holdout(&pool, &dataset.oracles, seed, &protocol.label());
    let test = all
        .into_iter()
        .filter(|k| {
            test_scenarios.contains(&k.scenario)
                && (window.test_start..=window.test_end).contains(&k.year)
        })
        .collect();
    Ok(SplitPlan::new(protocol, train, val, test))
}

pub const ROTATION_HOLDOUTS: [&str; 3] = [ScenarioId::SSP126, ScenarioId::SSP370, ScenarioId::SSP585];

/// Hold out ssp126, ssp370 and ssp585 in turn; ssp245 joins the training
/// pool so every plan trains on historical plus three SSPs.
pub fn rotate_ssp_splits(dataset: &Dataset, seed: u64) -> Result<Vec<SplitPlan>, SplitError> {
    rotate_ssp_splits_with(dataset, seed, true)
}

pub fn rotate_ssp_splits_with(
    dataset: &Dataset,
    seed: u64,
    ssp245_in_training: bool,
) -> Result<Vec<SplitPlan>, SplitError> {
    let all_ssps = [
        ScenarioId::SSP126,
        ScenarioId::SSP245,
        ScenarioId::SSP370,
        ScenarioId::SSP585,
    ];
    require(dataset, ScenarioId::HISTORICAL)?;
    for s in all_ssps {
        require(dataset, s)?;
    }
    ROTATION_HOLDOUTS
        .iter()
        .map(|&held| {
            let mut pool_scenarios = vec![ScenarioId::HISTORICAL];
            pool_scenarios.extend(
                all_ssps
                    .iter()
                    .filter(|&&s| s != held && (ssp245_in_training || s != ScenarioId::SSP245)),
            );
            let pool = scenario_chunks(dataset, &pool_scenarios);
            let protocol = Protocol::SspHoldout(ScenarioId::new(held));
            let (train, val) = holdout(&pool, &dataset.oracles, seed, &protocol.label());
            let test = scenario_chunks(dataset, &[held]);
            Ok(SplitPlan::new(protocol, train, val, test))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Overlap { first: Part, second: Part, key: ChunkKey },
    OutsideUniverse { part: Part, key: ChunkKey },
    EmptyTest,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Overlap { first, second, key } => {
                write!(f, "{key} appears in both {first:?} and {second:?}")
            }
            Violation::OutsideUniverse { part, key } => {
                write!(f, "{key} in {part:?} is not a chunk of the dataset")
            }
            Violation::EmptyTest => f.write_str("test set is empty"),
        }
    }
}

/// Every invariant breach found in a plan; empty means the plan is sound.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SplitReport {
    pub violations: Vec<Violation>,
}

impl SplitReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn verify_split(plan: &SplitPlan, dataset: &Dataset) -> SplitReport {
    let mut violations = Vec::new();
    let parts = [Part::Train, Part::Val, Part::Test];
    for (i, &a) in parts.iter().enumerate() {
        for &b in &parts[i + 1..] {
            for key in plan.part(a).intersection(plan.part(b)) {
                violations.push(Violation::Overlap {
                    first: a,
                    second: b,
                    key: key.clone(),
                });
            }
        }
    }
    for part in parts {
        for key in plan.part(part) {
            if !dataset.contains(key) {
                violations.push(Violation::OutsideUniverse {
                    part,
                    key: key.clone(),
                });
            }
        }
    }
    if plan.test.is_empty() {
        violations.push(Violation::EmptyTest);
    }
    SplitReport { violations }
}
