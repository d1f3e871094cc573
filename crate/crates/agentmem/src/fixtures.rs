//! Bundled fixtures: the profile benchmark users, the action workload, the
//! scenario bundle and the app catalog. `generate` rebuilds every file from
//! source; the bundled copies are checked against it.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use agentmem_core::oracles::mock::UpdateRule;
use agentmem_core::oracles::RequiredElement;
use agentmem_core::profile_memory::{ChangeSet, ConceptSpec, EntitySpec, SplitProposal};
use agentmem_core::sim_env::catalog::Catalog;
use agentmem_core::sim_env::workload::{action_workload, scenario_bundle, ActionTask, Scenario};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::store::StoreError;

pub const DEFAULT_SEED: u64 = 17;
pub const FIXTURES_ENV: &str = "AGENTMEM_FIXTURES";

pub const PROFILE_FILE: &str = "profile/users.json";
pub const WORKLOAD_FILE: &str = "workload/actions.json";
pub const SCENARIO_FILE: &str = "scenarios/bundle.json";
pub const CATALOG_FILE: &str = "apps/catalog.json";

const BUNDLED: [(&str, &str); 4] = [
    (PROFILE_FILE, include_str!("../fixtures/profile/users.json")),
    (WORKLOAD_FILE, include_str!("../fixtures/workload/actions.json")),
    (SCENARIO_FILE, include_str!("../fixtures/scenarios/bundle.json")),
    (CATALOG_FILE, include_str!("../fixtures/apps/catalog.json")),
];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TestTask {
    pub id: String,
    pub task: String,
    pub required: Vec<RequiredElement>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserFixture {
    pub user: String,
    pub batch_size: usize,
    pub history: Vec<String>,
    /// Updater rulebook for this user's history.
    pub rules: Vec<UpdateRule>,
    pub tests: Vec<TestTask>,
}

impl UserFixture {
    pub fn batches(&self) -> Vec<Vec<String>> {
        self.history.chunks(self.batch_size.max(1)).map(<[String]>::to_vec).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProfileFixture {
    pub users: Vec<UserFixture>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fixtures {
    pub profile: ProfileFixture,
    pub actions: Vec<ActionTask>,
    pub scenarios: Vec<Scenario>,
    pub catalog: Catalog,
}

impl Fixtures {
    pub fn bundled() -> Self {
        Self {
            profile: parse(PROFILE_FILE, bundled(PROFILE_FILE)).expect("bundled profile fixture"),
            actions: parse(WORKLOAD_FILE, bundled(WORKLOAD_FILE)).expect("bundled workload"),
            scenarios: parse(SCENARIO_FILE, bundled(SCENARIO_FILE)).expect("bundled scenarios"),
            catalog: parse(CATALOG_FILE, bundled(CATALOG_FILE)).expect("bundled catalog"),
        }
    }

    pub fn load(dir: &Path) -> Result<Self, StoreError> {
        let read = |rel: &str| -> Result<String, StoreError> {
            let p = dir.join(rel);
            fs::read_to_string(&p).map_err(|source| StoreError::Io { path: p, source })
        };
        Ok(Self {
            profile: parse(PROFILE_FILE, &read(PROFILE_FILE)?)?,
            actions: parse(WORKLOAD_FILE, &read(WORKLOAD_FILE)?)?,
            scenarios: parse(SCENARIO_FILE, &read(SCENARIO_FILE)?)?,
            catalog: parse(CATALOG_FILE, &read(CATALOG_FILE)?)?,
        })
    }

    /// An explicit directory, else `AGENTMEM_FIXTURES`, else the bundled set.
    pub fn resolve(dir: Option<&Path>) -> Result<Self, StoreError> {
        match dir.map(Path::to_path_buf).or_else(|| std::env::var_os(FIXTURES_ENV).map(PathBuf::from)) {
            Some(d) => Self::load(&d),
            None => Ok(Self::bundled()),
        }
    }
}

fn bundled(rel: &str) -> &'static str {
    BUNDLED.iter().find(|(r, _)| *r == rel).expect("bundled file").1
}

fn parse<T: DeserializeOwned>(rel: &str, text: &str) -> Result<T, StoreError> {
    serde_json::from_str(text).map_err(|e| StoreError::CorruptFile {
        path: PathBuf::from(rel),
        reason: e.to_string(),
    })
}

fn pretty<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("serializable");
    s.push('\n');
    s
}

/// Every fixture file, keyed by relative path.
pub fn generate(seed: u64) -> BTreeMap<&'static str, String> {
    BTreeMap::from([
        (PROFILE_FILE, pretty(&profile_fixture())),
        (WORKLOAD_FILE, pretty(&action_workload(seed))),
        (SCENARIO_FILE, pretty(&scenario_bundle(seed))),
        (CATALOG_FILE, pretty(&Catalog::standard())),
    ])
}

pub fn write_fixtures(dir: &Path, seed: u64) -> Result<Vec<PathBuf>, StoreError> {
    let mut out = Vec::new();
    for (rel, text) in generate(seed) {
        let p = dir.join(rel);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent).map_err(|source| StoreError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        fs::write(&p, text).map_err(|source| StoreError::Io { path: p.clone(), source })?;
        out.push(p);
    }
    Ok(out)
}

// Profile benchmark users. Each true preference is stated in history
// without the words a later test task uses; each distractor shares those
// words but belongs to someone else.

struct Fact {
    id: &'static str,
    name: &'static str,
    attrs: &'static [(&'static str, &'static str)],
    concepts: &'static [&'static str],
    sentence: &'static str,
    keywords: &'static [&'static str],
}

struct User {
    id: &'static str,
    concepts: &'static [(&'static str, &'static str)],
    /// Put first, followed by a full batch of fillers.
    lead: Option<Lead>,
    facts: &'static [Fact],
    tests: &'static [(&'static str, &'static [(&'static str, &'static str)])],
}

struct Lead {
    concept: &'static str,
    sentence: &'static str,
    keywords: &'static [&'static str],
    items: &'static [&'static str],
    /// (subconcept id, name, item count)
    split: &'static [(&'static str, &'static str, usize)],
}

const BATCH: usize = 5;
const HISTORY: usize = 50;

const U1: User = User {
    id: "u1",
    concepts: &[
        ("c_photo", "camera and photography"),
        ("c_gadgets", "gadgets and electronics"),
        ("c_travel", "flight and trip planning"),
        ("c_food", "food delivery and dinner"),
        ("c_hotels", "hotel stays"),
        ("c_others", "other people"),
    ],
    lead: None,
    facts: &[
        Fact {
            id: "e_brand",
            name: "brand preference",
            attrs: &[("brand", "domestic brand")],
            concepts: &["c_gadgets"],
            sentence: "I only trust domestic brand gadgets, imported ones broke on me twice",
            keywords: &["domestic", "broke"],
        },
        Fact {
            id: "e_camera",
            name: "camera",
            attrs: &[("mount", "RF mount")],
            concepts: &["c_photo", "c_gadgets"],
            sentence: "got an RF mount adapter so the old lenses still fit",
            keywords: &["rf", "adapter"],
        },
        Fact {
            id: "e_lens",
            name: "lens preference",
            attrs: &[("focal", "35mm prime")],
            concepts: &["c_photo"],
            sentence: "almost every shot I like was taken at 35mm prime",
            keywords: &["35mm", "shot"],
        },
        Fact {
            id: "e_budget",
            name: "electronics budget",
            attrs: &[("limit", "under 6000 yuan")],
            concepts: &["c_gadgets"],
            sentence: "promised myself to keep purchases under 6000 yuan this year",
            keywords: &["promised", "6000"],
        },
        Fact {
            id: "e_seat",
            name: "seat preference",
            attrs: &[("seat", "window seat")],
            concepts: &["c_travel"],
            sentence: "window seat again please, I cannot sleep otherwise",
            keywords: &["window", "sleep"],
        },
        Fact {
            id: "e_alliance",
            name: "airline alliance",
            attrs: &[("alliance", "star alliance")],
            concepts: &["c_travel"],
            sentence: "collecting star alliance miles toward gold status",
            keywords: &["star", "miles"],
        },
        Fact {
            id: "e_home",
            name: "home city",
            attrs: &[("city", "Hangzhou")],
            concepts: &["c_travel"],
            sentence: "every departure of mine is from Hangzhou",
            keywords: &["departure", "hangzhou"],
        },
        Fact {
            id: "e_diet",
            name: "diet restriction",
            attrs: &[("avoid", "no peanuts")],
            concepts: &["c_food"],
            sentence: "allergic reaction again, no peanuts for me ever",
            keywords: &["allergic", "peanuts"],
        },
        Fact {
            id: "e_spice",
            name: "restaurant spice level",
            attrs: &[("level", "mild")],
            concepts: &["c_food"],
            sentence: "dinner delivery from the sichuan place, asked them to keep it mild like always",
            keywords: &["mild", "always"],
        },
        Fact {
            id: "e_hotel",
            name: "hotel preference",
            attrs: &[("style", "quiet boutique hotel")],
            concepts: &["c_hotels", "c_travel"],
            sentence: "that quiet boutique place in Kyoto was perfect",
            keywords: &["boutique", "kyoto"],
        },
        Fact {
            id: "e_nephew",
            name: "nephew camera gift",
            attrs: &[("brand", "imported brand")],
            concepts: &["c_others"],
            sentence: "buy a new camera body for my nephew, he insists on an imported brand",
            keywords: &["nephew", "insists"],
        },
        Fact {
            id: "e_boss",
            name: "boss flight",
            attrs: &[("seat", "aisle seat"), ("cabin", "business class")],
            concepts: &["c_others"],
            sentence: "book a flight to Tokyo next month for my boss, aisle seat in business class",
            keywords: &["boss", "business"],
        },
        Fact {
            id: "e_team",
            name: "team dinner",
            attrs: &[("cuisine", "spicy hotpot")],
            concepts: &["c_others"],
            sentence: "order food delivery for dinner tonight at the office, the team wants spicy hotpot",
            keywords: &["team", "hotpot"],
        },
        Fact {
            id: "e_conference",
            name: "conference hotel",
            attrs: &[("location", "near the station")],
            concepts: &["c_others"],
            sentence: "find a hotel in Osaka for two nights for the conference speakers near the station",
            keywords: &["conference", "speakers"],
        },
        Fact {
            id: "e_class",
            name: "photo class lens",
            attrs: &[("lens", "zoom lens")],
            concepts: &["c_others"],
            sentence: "choose a new lens for street photography class, the teacher wants a zoom",
            keywords: &["teacher", "zoom"],
        },
        Fact {
            id: "e_offsite",
            name: "team offsite",
            attrs: &[("place", "lakeside")],
            concepts: &["c_others"],
            sentence: "plan a weekend trip for the team offsite and pick a restaurant by the lake",
            keywords: &["offsite", "lake"],
        },
    ],
    tests: &[
        (
            "buy a new camera body",
            &[("brand preference", "domestic brand"), ("camera mount", "RF mount"), ("electronics budget", "under 6000 yuan")],
        ),
        (
            "book a flight to Tokyo next month",
            &[("seat preference", "window seat"), ("airline alliance", "star alliance"), ("home city", "Hangzhou")],
        ),
        ("order food delivery for dinner tonight", &[("diet restriction", "no peanuts"), ("spice level", "mild")]),
        ("find a hotel in Osaka for two nights", &[("hotel preference", "quiet boutique hotel")]),
        ("choose a new lens for street photography", &[("lens preference", "35mm prime"), ("camera mount", "RF mount")]),
        ("plan a weekend trip and pick a restaurant", &[("home city", "Hangzhou"), ("diet restriction", "no peanuts")]),
    ],
};

const U2: User = User {
    id: "u2",
    concepts: &[
        ("c_groceries", "groceries for the week"),
        ("c_fitness", "gym and running"),
        ("c_kids", "kids and school"),
        ("c_music", "concert tickets and music"),
        ("c_home", "home appliances"),
        ("c_others", "other people"),
    ],
    lead: Some(Lead {
        concept: "c_groceries",
        sentence: "standing list: apples bananas spinach carrots tomatoes cucumbers grapes lemons onions garlic \
                   rice oats lentils flour pasta olive oil honey coffee tea beans crackers",
        keywords: &["standing", "list"],
        items: &[
            "apples", "bananas", "spinach", "carrots", "tomatoes", "cucumbers", "grapes", "lemons", "onions", "garlic",
            "rice", "oats", "lentils", "flour", "pasta", "olive oil", "honey", "coffee", "tea", "beans", "crackers",
        ],
        split: &[("c_produce", "fresh produce", 10), ("c_pantry", "pantry staples", 11)],
    }),
    facts: &[
        Fact {
            id: "e_shoes",
            name: "running shoes",
            attrs: &[("size", "EU 42")],
            concepts: &["c_fitness"],
            sentence: "the EU 42 pair finally fits after returning two others",
            keywords: &["42", "returning"],
        },
        Fact {
            id: "e_slot",
            name: "workout slot",
            attrs: &[("time", "early morning")],
            concepts: &["c_fitness"],
            sentence: "only early morning sessions work before the kids wake up",
            keywords: &["sessions", "wake"],
        },
        Fact {
            id: "e_school",
            name: "school",
            attrs: &[("name", "Maple Primary")],
            concepts: &["c_kids"],
            sentence: "parent evening at Maple Primary on Thursday",
            keywords: &["maple", "thursday"],
        },
        Fact {
            id: "e_allergy",
            name: "daughter allergy",
            attrs: &[("avoid", "lactose")],
            concepts: &["c_kids", "c_groceries"],
            sentence: "the pediatrician said my daughter must avoid lactose",
            keywords: &["pediatrician", "lactose"],
        },
        Fact {
            id: "e_store",
            name: "supermarket",
            attrs: &[("store", "FreshMart")],
            concepts: &["c_groceries"],
            sentence: "FreshMart membership renewed for another year",
            keywords: &["freshmart", "renewed"],
        },
        Fact {
            id: "e_window",
            name: "delivery window",
            attrs: &[("time", "after 6 pm")],
            concepts: &["c_groceries"],
            sentence: "nobody can receive packages at home until after 6 pm",
            keywords: &["packages", "nobody"],
        },
        Fact {
            id: "e_genre",
            name: "music taste",
            attrs: &[("genre", "jazz standards")],
            concepts: &["c_music"],
            sentence: "jazz standards on repeat the whole weekend",
            keywords: &["jazz", "repeat"],
        },
        Fact {
            id: "e_seating",
            name: "concert seating",
            attrs: &[("seat", "balcony")],
            concepts: &["c_music"],
            sentence: "balcony seats at the last concert had the best acoustics by far",
            keywords: &["balcony", "acoustics"],
        },
        Fact {
            id: "e_appliance",
            name: "appliance preference",
            attrs: &[("brand", "energy saving models")],
            concepts: &["c_home"],
            sentence: "electricity bill doubled, energy saving models from now on",
            keywords: &["electricity", "doubled"],
        },
        Fact {
            id: "e_son_shoes",
            name: "son running shoes",
            attrs: &[("size", "EU 35")],
            concepts: &["c_others"],
            sentence: "buy new running shoes for the marathon kids race, my son needs EU 35",
            keywords: &["son", "35"],
        },
        Fact {
            id: "e_grandma",
            name: "grandma groceries",
            attrs: &[("store", "corner shop")],
            concepts: &["c_others"],
            sentence: "order groceries for the week for grandma from the corner shop",
            keywords: &["grandma", "corner"],
        },
        Fact {
            id: "e_neighbor",
            name: "neighbor concert",
            attrs: &[("seat", "front row"), ("genre", "heavy metal")],
            concepts: &["c_others"],
            sentence: "book concert tickets for Saturday for the neighbor, front row for heavy metal",
            keywords: &["neighbor", "metal"],
        },
        Fact {
            id: "e_brother",
            name: "brother gym class",
            attrs: &[("time", "noon")],
            concepts: &["c_others"],
            sentence: "schedule a gym class for my brother at noon",
            keywords: &["brother", "noon"],
        },
        Fact {
            id: "e_landlord",
            name: "landlord washer",
            attrs: &[("brand", "cheapest available")],
            concepts: &["c_others"],
            sentence: "buy a new washing machine for the rental home, the landlord wants the cheapest available",
            keywords: &["landlord", "rental"],
        },
    ],
    tests: &[
        ("buy new running shoes for the marathon", &[("running shoes size", "EU 42")]),
        (
            "order groceries for the week",
            &[("supermarket", "FreshMart"), ("daughter allergy", "lactose"), ("delivery window", "after 6 pm")],
        ),
        ("book concert tickets for Saturday", &[("music taste", "jazz standards"), ("concert seating", "balcony")]),
        ("schedule a gym class", &[("workout slot", "early morning")]),
        ("buy a new washing machine for home", &[("appliance preference", "energy saving models")]),
        ("pack lunch for the kids school trip", &[("school", "Maple Primary"), ("daughter allergy", "lactose")]),
    ],
};

const FILLERS: [&str; 40] = [
    "set an alarm for 7 am",
    "check the weather for tomorrow",
    "call mom on Sunday",
    "remind me to water the plants",
    "turn on do not disturb",
    "play the morning news",
    "convert 30 dollars to euros",
    "navigate to the nearest pharmacy",
    "what time does the bank open",
    "add a meeting at 3 pm",
    "share my location with Li",
    "take a note about the printer",
    "set a timer for 20 minutes",
    "read my latest messages",
    "turn the volume down",
    "show photos from last week",
    "pay the water bill",
    "open the calendar for Friday",
    "start a stopwatch",
    "how far is the airport",
    "translate good morning into French",
    "find my phone charger receipt",
    "switch to dark mode",
    "clear the download folder",
    "back up the phone tonight",
    "renew the library book",
    "text Zhang that I am late",
    "check the parcel tracking number",
    "lower the screen brightness",
    "schedule a reminder for the dentist",
    "list unread emails",
    "call the plumber",
    "open the notes app",
    "mute the group chat",
    "check the exchange rate",
    "set a reminder to stretch",
    "measure the room with the camera ruler",
    "add eggs to the shopping note",
    "check battery health",
    "update all apps",
];

fn rule_for(f: &Fact) -> UpdateRule {
    let mut changes = ChangeSet::default();
    changes.entity_insertions.push(EntitySpec {
        id: f.id.into(),
        name: f.name.into(),
        attributes: f.attrs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
    });
    for c in f.concepts {
        changes.new_edges.push((f.id.to_string(), c.to_string()));
    }
    UpdateRule {
        keywords: f.keywords.iter().map(|k| k.to_string()).collect(),
        changes,
        split: None,
    }
}

fn lead_rule(l: &Lead) -> UpdateRule {
    let mut changes = ChangeSet::default();
    let mut assignment = Vec::new();
    let mut subs = l.split.iter().flat_map(|(id, _, n)| std::iter::repeat_n(*id, *n));
    for item in l.items {
        let id = format!("e_{}", item.replace(' ', "_"));
        changes.entity_insertions.push(EntitySpec {
            id: id.clone(),
            name: item.to_string(),
            attributes: BTreeMap::new(),
        });
        changes.new_edges.push((id.clone(), l.concept.to_string()));
        assignment.push((id, subs.next().expect("split covers every item").to_string()));
    }
    UpdateRule {
        keywords: l.keywords.iter().map(|k| k.to_string()).collect(),
        changes,
        split: Some((
            l.concept.to_string(),
            SplitProposal {
                subconcepts: l
                    .split
                    .iter()
                    .map(|(id, name, _)| ConceptSpec {
                        id: id.to_string(),
                        name: name.to_string(),
                    })
                    .collect(),
                assignment,
            },
        )),
    }
}

fn user_fixture(u: &User) -> UserFixture {
    let mut history = Vec::new();
    let mut fillers = FILLERS.iter();
    if let Some(l) = &u.lead {
        history.push(l.sentence.to_string());
        history.extend(fillers.by_ref().take(BATCH - 1).map(|s| s.to_string()));
    }
    let mut facts = u.facts.iter();
    // Alternate facts and fillers until the history is full.
    while history.len() < HISTORY {
        let next = if history.len() % 2 == 0 { facts.next().map(|f| f.sentence) } else { None };
        match next.or_else(|| fillers.next().copied()) {
            Some(s) => history.push(s.to_string()),
            None => break,
        }
    }
    assert!(facts.next().is_none(), "history too short for {}", u.id);

    // Concepts exist before anything links to them.
    let mut seed = ChangeSet::default();
    for (id, name) in u.concepts {
        seed.concept_insertions.push(ConceptSpec {
            id: id.to_string(),
            name: name.to_string(),
        });
    }
    let mut rules: Vec<UpdateRule> = u.lead.iter().map(lead_rule).chain(u.facts.iter().map(rule_for)).collect();
    // The first rule to fire carries the concept set.
    seed.extend(std::mem::take(&mut rules[0].changes));
    rules[0].changes = seed;
    UserFixture {
        user: u.id.to_string(),
        batch_size: BATCH,
        history,
        rules,
        tests: u
            .tests
            .iter()
            .enumerate()
            .map(|(i, (task, req))| TestTask {
                id: format!("{}_t{}", u.id, i + 1),
                task: task.to_string(),
                required: req
                    .iter()
                    .map(|(e, v)| RequiredElement {
                        profile_element: e.to_string(),
                        expected_value: v.to_string(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

pub fn profile_fixture() -> ProfileFixture {
    ProfileFixture {
        users: vec![user_fixture(&U1), user_fixture(&U2)],
    }
}
