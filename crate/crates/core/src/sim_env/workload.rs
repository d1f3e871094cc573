//! Seeded task generators: single-app tasks for the action-reuse workload
//! and multi-app scenarios for the scheduler.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::hash::Hasher;

use fnv::FnvHasher;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::catalog::{Catalog, TemplateStyle, CHAT_APPS, SEARCH_APPS, SHOP_APPS, VIDEO_APPS};
use crate::experience_memory::{ExperienceTemplate, SlotSpec, SubtaskDag, SubtaskNode, TemplateLevel};
use crate::oracles::mock::RewritePattern;
use crate::text::{self, TextPattern};

/// (category, app id) for the action-reuse workload.
pub const ACTION_CATEGORIES: [(&str, &str); 8] = [
    ("email", "mail"),
    ("train", "rail"),
    ("food", "food"),
    ("hotel", "hotel"),
    ("shopping", "store"),
    ("browser", "browser"),
    ("media", "media"),
    ("map", "maps"),
];

pub const SCENARIO_CATEGORIES: [&str; 6] = [
    "search+shop+social",
    "multi-video+social",
    "multi-shop+social",
    "single-shop+social",
    "search+social",
    "search+shop",
];

pub const ACTION_WORKLOAD_SIZE: usize = 454;
pub const SCENARIO_BUNDLE_SIZE: usize = 50;
const SCENARIO_COUNTS: [usize; 6] = [9, 8, 9, 8, 8, 8];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkloadError {
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("scenario {category:?} cannot use apps {apps:?}")]
    BadApps { category: String, apps: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionTask {
    pub id: String,
    pub category: String,
    pub app_id: String,
    pub family: String,
    pub task_text: String,
    pub params: BTreeMap<String, String>,
}

/// A multi-app task together with the subtask template that plans it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Scenario {
    pub id: String,
    pub category: String,
    pub apps: Vec<String>,
    pub task_text: String,
    pub params: BTreeMap<String, String>,
    pub template: ExperienceTemplate,
    pub pattern: String,
}

impl Scenario {
    pub fn rewrite_pattern(&self) -> RewritePattern {
        RewritePattern {
            template: Some(self.template.id.clone()),
            pattern: self.pattern.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "type")]
pub enum TaskInstance {
    Action(ActionTask),
    Scenario(Scenario),
}

fn vocab(app_id: &str, slot: &str) -> &'static [&'static str] {
    let scenario_app = app_id.contains('_');
    match slot {
        "to" => &["alice", "bob", "carol", "dmitri", "erin", "farah", "gus"],
        "subject" => &[
            "the budget",
            "lunch plans",
            "the offsite",
            "travel receipts",
            "the quarterly report",
            "hiring",
            "the launch",
        ],
        "topic" if scenario_app => &[
            "canon cameras",
            "sony headphones",
            "christmas events",
            "travel backpacks",
            "espresso machines",
        ],
        "topic" => &[
            "invoices",
            "the offsite",
            "flight changes",
            "team dinner",
            "security updates",
            "expense reports",
        ],
        "origin" | "destination" => &["beijing", "shanghai", "hangzhou", "nanjing", "wuhan", "xian", "chengdu"],
        "date" => &["may 1", "may 2", "june 10", "july 4", "august 8"],
        "dish" => &["kung pao chicken", "beef noodles", "fried rice", "dumplings", "mapo tofu", "hot pot"],
        "city" => &["tokyo", "paris", "chengdu", "singapore", "london", "seoul"],
        "nights" => &["1", "2", "3", "4", "5"],
        "qty" => &["1", "2", "3"],
        "item" if scenario_app => &[
            "DJI Action 5",
            "Canon R50",
            "Sony WH-1000XM5",
            "Pixel 9",
            "Kindle Paperwhite",
            "Switch OLED",
        ],
        "item" => &[
            "phone case",
            "usb cable",
            "desk lamp",
            "water bottle",
            "backpack",
            "notebook",
            "headphones",
        ],
        "query" => &[
            "rust ownership",
            "mars rover",
            "sourdough starter",
            "marathon training",
            "tax deadlines",
            "solar panels",
        ],
        "song" => &["yellow", "clocks", "hello", "imagine", "halo", "vienna", "creep"],
        "place" => &["central station", "city museum", "the airport", "west lake", "old town", "the stadium"],
        "mode" => &["car", "bike", "walking", "transit"],
        "contact" => &["Alice", "Bob", "Chen", "Dana", "Eve", "Femi"],
        "show" => &["Blue Harbor", "Night Shift", "Tidewater", "Paper Moons", "Iron Valley"],
        _ => &["value"],
    }
}

fn rng_for(category: &str, seed: u64) -> ChaCha8Rng {
    let mut h = FnvHasher::default();
    h.write(category.as_bytes());
    ChaCha8Rng::seed_from_u64(seed ^ h.finish())
}

fn pick(rng: &mut ChaCha8Rng, options: &[&str]) -> String {
    options.choose(rng).expect("non-empty vocabulary").to_string()
}

fn draw_params(rng: &mut ChaCha8Rng, app_id: &str, slots: &[String]) -> BTreeMap<String, String> {
    let mut out: BTreeMap<String, String> = BTreeMap::new();
    for s in slots {
        let mut v = pick(rng, vocab(app_id, s));
        // Distinct endpoints for routes.
        while s == "destination" && out.get("origin") == Some(&v) {
            v = pick(rng, vocab(app_id, s));
        }
        out.insert(s.clone(), v);
    }
    out
}

fn action_tasks(catalog: &Catalog, category: &str, app_id: &str, count: usize, seed: u64) -> Vec<ActionTask> {
    let mut rng = rng_for(category, seed);
    let flows: Vec<_> = catalog.flows_of(app_id).collect();
    (0..count)
        .map(|i| {
            let flow = flows[rng.random_range(0..flows.len())];
            let params = draw_params(&mut rng, app_id, &flow.slots());
            ActionTask {
                id: format!("{category}-{i:03}"),
                category: category.into(),
                app_id: app_id.into(),
                family: flow.name.clone(),
                task_text: flow.task_text(&params),
                params,
            }
        })
        .collect()
}

struct Node<'a> {
    id: &'a str,
    family: String,
    outputs: &'a [&'a str],
    bindings: &'a [(&'a str, &'a str, &'a str)],
}

/// Builds one scenario from explicit apps and slot values.
pub fn build_scenario(
    catalog: &Catalog,
    id: &str,
    category: &str,
    apps: &[&str],
    params: BTreeMap<String, String>,
) -> Result<Scenario, WorkloadError> {
    let bad = || WorkloadError::BadApps {
        category: category.into(),
        apps: apps.iter().map(|a| a.to_string()).collect(),
    };
    let fam = |app: &str, verb: &str| format!("{app}.{verb}");
    let (pattern, nodes): (String, Vec<Node>) = match (category, apps) {
        ("search+shop+social", [s, p, c]) => (
            format!("look up {{topic}} on {s}, check its price on {p} and send it to {{contact}} on {c}"),
            vec![
                Node { id: "S", family: fam(s, "find"), outputs: &["rec"], bindings: &[] },
                Node { id: "P", family: fam(p, "price"), outputs: &["price"], bindings: &[("item", "S", "rec")] },
                Node { id: "C", family: fam(c, "send1"), outputs: &[], bindings: &[("pa", "P", "price")] },
            ],
        ),
        ("multi-video+social", [v1, v2, c]) => (
            format!("check {{show}} updates on {v1} and {v2} and notify {{contact}} on {c}"),
            vec![
                Node { id: "V1", family: fam(v1, "check"), outputs: &["ep"], bindings: &[] },
                Node { id: "V2", family: fam(v2, "check"), outputs: &["ep"], bindings: &[] },
                Node {
                    id: "C",
                    family: fam(c, "send2"),
                    outputs: &[],
                    bindings: &[("pa", "V1", "ep"), ("pb", "V2", "ep")],
                },
            ],
        ),
        ("multi-shop+social", [p1, p2, c]) => (
            format!("compare the price of {{item}} on {p1} and {p2} and send it to {{contact}} on {c}"),
            vec![
                Node { id: "A", family: fam(p1, "price"), outputs: &["price"], bindings: &[] },
                Node { id: "B", family: fam(p2, "price"), outputs: &["price"], bindings: &[] },
                Node {
                    id: "C",
                    family: fam(c, "send2"),
                    outputs: &[],
                    bindings: &[("pa", "A", "price"), ("pb", "B", "price")],
                },
            ],
        ),
        ("single-shop+social", [p, c]) => (
            format!("query the price of {{item}} on {p} and send it to {{contact}} on {c}"),
            vec![
                Node { id: "A", family: fam(p, "price"), outputs: &["price"], bindings: &[] },
                Node { id: "C", family: fam(c, "send1"), outputs: &[], bindings: &[("pa", "A", "price")] },
            ],
        ),
        ("search+social", [s, c]) => (
            format!("look up {{topic}} on {s} and share it with {{contact}} on {c}"),
            vec![
                Node { id: "S", family: fam(s, "find"), outputs: &["rec"], bindings: &[] },
                Node { id: "C", family: fam(c, "send1"), outputs: &[], bindings: &[("pa", "S", "rec")] },
            ],
        ),
        ("search+shop", [s, p]) => (
            format!("look up {{topic}} on {s} and order it on {p}"),
            vec![
                Node { id: "S", family: fam(s, "find"), outputs: &["rec"], bindings: &[] },
                Node { id: "P", family: fam(p, "order"), outputs: &[], bindings: &[("item", "S", "rec")] },
            ],
        ),
        (c, _) if !SCENARIO_CATEGORIES.contains(&c) => return Err(WorkloadError::UnknownCategory(c.into())),
        _ => return Err(bad()),
    };
    let mut dag = SubtaskDag::default();
    for n in &nodes {
        let flow = catalog.flow(&n.family).ok_or_else(bad)?;
        dag.nodes.push(SubtaskNode {
            id: n.id.into(),
            app_id: flow.app_id.clone(),
            task: flow.pattern.clone(),
            template_ref: Some(TemplateStyle::HumanCrafted.template_id(&flow.name)),
            steps: Vec::new(),
            outputs: n.outputs.iter().map(|o| o.to_string()).collect(),
            bindings: n
                .bindings
                .iter()
                .map(|(slot, p, o)| (slot.to_string(), (p.to_string(), o.to_string())))
                .collect(),
        });
    }
    let slots = TextPattern::new(&pattern).slot_names();
    let blank: BTreeMap<String, String> = slots.iter().map(|s| (s.clone(), String::new())).collect();
    let template = ExperienceTemplate {
        id: format!("{category}:{}", apps.join("+")),
        key_description: text::normalize(&text::fill_placeholders(&pattern, &blank)),
        level: TemplateLevel::High,
        app_id: None,
        steps: Vec::new(),
        slots: slots.iter().map(|s| SlotSpec::required(s)).collect(),
        subtasks: Some(dag),
    };
    Ok(Scenario {
        id: id.into(),
        category: category.into(),
        apps: apps.iter().map(|a| a.to_string()).collect(),
        task_text: text::fill_placeholders(&pattern, &params),
        params,
        template,
        pattern,
    })
}

fn scenarios(catalog: &Catalog, category: &str, count: usize, seed: u64) -> Result<Vec<Scenario>, WorkloadError> {
    if !SCENARIO_CATEGORIES.contains(&category) {
        return Err(WorkloadError::UnknownCategory(category.into()));
    }
    let mut rng = rng_for(category, seed);
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let search = *SEARCH_APPS.choose(&mut rng).expect("apps");
        let chat = *CHAT_APPS.choose(&mut rng).expect("apps");
        let mut shops = SHOP_APPS.to_vec();
        shops.shuffle(&mut rng);
        let mut videos = VIDEO_APPS.to_vec();
        videos.shuffle(&mut rng);
        let apps: Vec<&str> = match category {
            "search+shop+social" => vec![search, shops[0], chat],
            "multi-video+social" => vec![videos[0], videos[1], chat],
            "multi-shop+social" => vec![shops[0], shops[1], chat],
            "single-shop+social" => vec![shops[0], chat],
            "search+social" => vec![search, chat],
            _ => vec![search, shops[0]],
        };
        let first = apps[0];
        let slot_source = match category {
            "multi-video+social" => "show",
            "multi-shop+social" | "single-shop+social" => "item",
            _ => "topic",
        };
        let mut params = BTreeMap::new();
        params.insert(slot_source.to_string(), pick(&mut rng, vocab(first, slot_source)));
        if category.ends_with("social") {
            params.insert("contact".into(), pick(&mut rng, vocab(chat, "contact")));
        }
        out.push(build_scenario(catalog, &format!("{category}-{i:02}"), category, &apps, params)?);
    }
    Ok(out)
}

/// `count` seeded instances of one category (action or scenario).
pub fn generate_workload(category: &str, count: usize, seed: u64) -> Result<Vec<TaskInstance>, WorkloadError> {
    let catalog = Catalog::standard();
    if let Some((_, app)) = ACTION_CATEGORIES.iter().find(|(c, _)| *c == category) {
        return Ok(action_tasks(&catalog, category, app, count, seed)
            .into_iter()
            .map(TaskInstance::Action)
            .collect());
    }
    Ok(scenarios(&catalog, category, count, seed)?
        .into_iter()
        .map(TaskInstance::Scenario)
        .collect())
}

/// The 454-task action-reuse sequence: per-category blocks, interleaved.
pub fn action_workload(seed: u64) -> Vec<ActionTask> {
    let catalog = Catalog::standard();
    let n = ACTION_CATEGORIES.len();
    let mut all = Vec::with_capacity(ACTION_WORKLOAD_SIZE);
    for (i, (category, app)) in ACTION_CATEGORIES.iter().enumerate() {
        let count = ACTION_WORKLOAD_SIZE / n + usize::from(i < ACTION_WORKLOAD_SIZE % n);
        all.extend(action_tasks(&catalog, category, app, count, seed));
    }
    all.shuffle(&mut rng_for("interleave", seed));
    all
}

/// The 50-instance scenario set across the six categories.
pub fn scenario_bundle(seed: u64) -> Vec<Scenario> {
    let catalog = Catalog::standard();
    SCENARIO_CATEGORIES
        .iter()
        .zip(SCENARIO_COUNTS)
        .flat_map(|(c, n)| scenarios(&catalog, c, n, seed).expect("known category"))
        .collect()
}
