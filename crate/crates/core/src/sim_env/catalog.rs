//! The bundled simulated apps and the task families that run on them.
//!
//! Each family is a golden path through one app. Operator rules, templates
//! (human-crafted and llm-style) and rewrite patterns are all derived from
//! the same path so they cannot drift apart.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{AppSpec, Durations, Mutation, MutationOp, ScreenSpec, SimApp, TransitionSpec, LAUNCHER};
use crate::experience_memory::{ActionHint, ExperienceTemplate, SlotSpec, StepKind, TemplateLevel, TemplateStep};
use crate::oracles::mock::{Guard, PatternRewriter, PolicyRule, RewritePattern, ScriptedOperator, TaskFamily};
use crate::text::{self, TextPattern};
use crate::ui_model::{Action, ActionKind, Rect, Selector, UIElement, PARAM_TEXT};

/// App ids of the eight action-reuse categories, in category order.
pub const ACTION_APPS: [&str; 8] = ["mail", "rail", "food", "hotel", "store", "browser", "media", "maps"];
pub const SHOP_APPS: [&str; 3] = ["shop_a", "shop_b", "shop_c"];
pub const CHAT_APPS: [&str; 2] = ["chat_a", "chat_b"];
pub const SEARCH_APPS: [&str; 2] = ["notes_a", "qa_a"];
pub const VIDEO_APPS: [&str; 2] = ["video_a", "video_b"];

const SCREEN: Rect = Rect::new(0, 0, 1080, 1920);

fn el(rid: &str, class: &str, text: &str) -> UIElement {
    UIElement::new(rid, class, text, Rect::default())
}

fn button(rid: &str, text: &str) -> UIElement {
    el(rid, "Button", text)
}

fn field(rid: &str) -> UIElement {
    el(rid, "EditText", "")
}

fn label(rid: &str, text: &str) -> UIElement {
    el(rid, "TextView", text)
}

fn group(rid: &str, children: Vec<UIElement>) -> UIElement {
    el(rid, "LinearLayout", "").with_children(children)
}

/// A clickable list row; the dynamic text lives on a child label.
fn row(rid: &str, label_rid: &str, text: &str) -> UIElement {
    group(rid, vec![label(label_rid, text)])
}

/// Splits each parent's box evenly among its children, top to bottom.
fn layout(mut e: UIElement, r: Rect) -> UIElement {
    e.bounds = r;
    let n = e.children.len() as i32;
    if n > 0 {
        let h = (r.bottom - r.top) / n;
        e.children = core::mem::take(&mut e.children)
            .into_iter()
            .enumerate()
            .map(|(i, c)| {
                let top = r.top + i as i32 * h;
                layout(c, Rect::new(r.left, top, r.right, top + h))
            })
            .collect();
    }
    e
}

struct AppDraft {
    spec: AppSpec,
}

impl AppDraft {
    fn new(app_id: &str, home: &str) -> Self {
        Self {
            spec: AppSpec {
                app_id: app_id.into(),
                home: home.into(),
                screens: Vec::new(),
                transitions: Vec::new(),
                durations: Durations::default(),
            },
        }
    }

    fn screen(mut self, id: &str, children: Vec<UIElement>) -> Self {
        let root = layout(el(id, "FrameLayout", "").with_children(children), SCREEN);
        self.spec.screens.push(ScreenSpec { id: id.into(), root });
        self
    }

    fn go(mut self, from: &str, kind: ActionKind, target: Option<&str>, to: &str) -> Self {
        self.spec.transitions.push(TransitionSpec {
            from: from.into(),
            kind,
            target: target.map(String::from),
            to: to.into(),
            duration_ms: None,
        });
        self
    }

    fn tap(self, from: &str, target: &str, to: &str) -> Self {
        self.go(from, ActionKind::Click, Some(target), to)
    }

    fn back(self, from: &str, to: &str) -> Self {
        self.go(from, ActionKind::Back, None, to)
    }

    fn build(self) -> AppSpec {
        self.spec
    }
}

/// One screen-level step of a golden path. Values may hold `{slot}`s.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowStep {
    pub screen: String,
    pub action: Action,
}

/// A task family: the text pattern that names it and its golden path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FamilyFlow {
    pub name: String,
    pub app_id: String,
    pub pattern: String,
    pub steps: Vec<FlowStep>,
    /// Extra operator rules tried after the path's own, e.g. a keyboard
    /// enter key next to a search button, or a way back from a side screen.
    #[serde(default)]
    pub alternates: Vec<FlowStep>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateStyle {
    /// Invariant and variable actions kept in separate steps.
    HumanCrafted,
    /// Steps next to a variable step are also keyed by its slots.
    LlmStyle,
}

impl TemplateStyle {
    pub fn template_id(self, family: &str) -> String {
        match self {
            TemplateStyle::HumanCrafted => family.to_string(),
            TemplateStyle::LlmStyle => format!("{family}~llm"),
        }
    }
}

impl FamilyFlow {
    pub fn slots(&self) -> Vec<String> {
        TextPattern::new(&self.pattern).slot_names()
    }

    pub fn outputs(&self) -> Vec<String> {
        self.steps
            .iter()
            .filter_map(|s| s.action.output_slot.clone())
            .collect()
    }

    pub fn task_text(&self, values: &BTreeMap<String, String>) -> String {
        text::fill_placeholders(&self.pattern, values)
    }

    pub fn family(&self) -> TaskFamily {
        TaskFamily {
            name: self.name.clone(),
            app_id: self.app_id.clone(),
            pattern: self.pattern.clone(),
        }
    }

    pub fn golden_path(&self, values: &BTreeMap<String, String>) -> Vec<Action> {
        self.steps
            .iter()
            .map(|s| ActionHint::from_action(&s.action).fill(values).to_action())
            .collect()
    }

    /// Path steps in order, each guarded so it is skipped once its effect
    /// is visible; then the alternates.
    pub fn rules(&self) -> Vec<PolicyRule> {
        let path = self.steps.iter().map(|s| {
            let unless = match s.action.kind {
                ActionKind::TypeText => vec![Guard::FieldIs {
                    resource_id: s.action.target.as_ref().map(|t| t.resource_id.clone()).unwrap_or_default(),
                    value: s.action.param(PARAM_TEXT).unwrap_or_default().to_string(),
                }],
                ActionKind::EmitOutput => vec![Guard::Emitted {
                    slot: s.action.output_slot.clone().unwrap_or_default(),
                }],
                _ => Vec::new(),
            };
            PolicyRule {
                family: self.name.clone(),
                screen: s.screen.clone(),
                action: s.action.clone(),
                unless,
            }
        });
        let extra = self.alternates.iter().map(|s| PolicyRule {
            family: self.name.clone(),
            screen: s.screen.clone(),
            action: s.action.clone(),
            unless: Vec::new(),
        });
        path.chain(extra).collect()
    }

    pub fn key_description(&self) -> String {
        let blank: BTreeMap<String, String> = self.slots().into_iter().map(|s| (s, String::new())).collect();
        text::normalize(&text::fill_placeholders(&self.pattern, &blank))
    }

    pub fn template(&self, style: TemplateStyle) -> ExperienceTemplate {
        let mut steps: Vec<TemplateStep> = self
            .steps
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let hint = ActionHint::from_action(&s.action);
                let refs = hint.placeholders();
                TemplateStep {
                    index: i,
                    kind: if refs.is_empty() {
                        StepKind::Invariant
                    } else {
                        StepKind::Variable
                    },
                    instruction: s.action.describe(),
                    slot_refs: refs,
                    action_hint: Some(hint),
                }
            })
            .collect();
        if style == TemplateStyle::LlmStyle {
            let original: Vec<Vec<String>> = steps.iter().map(|s| s.slot_refs.clone()).collect();
            for (i, step) in steps.iter_mut().enumerate() {
                if !original[i].is_empty() {
                    continue;
                }
                let mut refs = Vec::new();
                for j in [i.wrapping_sub(1), i + 1] {
                    for r in original.get(j).into_iter().flatten() {
                        if !refs.contains(r) {
                            refs.push(r.clone());
                        }
                    }
                }
                if !refs.is_empty() {
                    step.kind = StepKind::Variable;
                    step.slot_refs = refs;
                }
            }
        }
        ExperienceTemplate {
            id: style.template_id(&self.name),
            key_description: self.key_description(),
            level: TemplateLevel::Low,
            app_id: Some(self.app_id.clone()),
            steps,
            slots: self.slots().iter().map(|s| SlotSpec::required(s)).collect(),
            subtasks: None,
        }
    }

    pub fn rewrite_patterns(&self) -> Vec<RewritePattern> {
        [TemplateStyle::HumanCrafted, TemplateStyle::LlmStyle]
            .into_iter()
            .map(|s| RewritePattern {
                template: Some(s.template_id(&self.name)),
                pattern: self.pattern.clone(),
            })
            .collect()
    }
}

struct FlowDraft<'a> {
    spec: &'a AppSpec,
    flow: FamilyFlow,
}

impl<'a> FlowDraft<'a> {
    fn new(spec: &'a AppSpec, verb: &str, pattern: &str) -> Self {
        let mut d = Self {
            spec,
            flow: FamilyFlow {
                name: format!("{}.{verb}", spec.app_id),
                app_id: spec.app_id.clone(),
                pattern: pattern.into(),
                steps: Vec::new(),
                alternates: Vec::new(),
            },
        };
        d.push(LAUNCHER, Action::launch(&spec.app_id));
        d
    }

    fn sel(&self, screen: &str, rid: &str) -> Selector {
        let s = self
            .spec
            .screen(screen)
            .unwrap_or_else(|| panic!("{}: no screen {screen}", self.spec.app_id));
        let (path, e) = s
            .root
            .find_resource(rid)
            .unwrap_or_else(|| panic!("{}/{screen}: no element {rid}", self.spec.app_id));
        Selector::of(e, path)
    }

    fn push(&mut self, screen: &str, action: Action) {
        self.flow.steps.push(FlowStep {
            screen: screen.into(),
            action,
        });
    }

    fn tap(mut self, screen: &str, rid: &str) -> Self {
        let a = Action::click(self.sel(screen, rid));
        self.push(screen, a);
        self
    }

    fn typ(mut self, screen: &str, rid: &str, value: &str) -> Self {
        let a = Action::type_text(self.sel(screen, rid), value);
        self.push(screen, a);
        self
    }

    fn emit(mut self, screen: &str, slot: &str, rid: &str) -> Self {
        self.sel(screen, rid);
        self.push(screen, Action::emit_output(slot, rid));
        self
    }

    fn alt_tap(mut self, screen: &str, rid: &str) -> Self {
        let a = Action::click(self.sel(screen, rid));
        self.flow.alternates.push(FlowStep {
            screen: screen.into(),
            action: a,
        });
        self
    }

    fn alt_back(mut self, screen: &str) -> Self {
        self.flow.alternates.push(FlowStep {
            screen: screen.into(),
            action: Action::back(),
        });
        self
    }

    fn done(mut self, screen: &str) -> FamilyFlow {
        self.push(screen, Action::done());
        self.flow
    }
}

fn mail() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("mail", "inbox")
        .screen(
            "inbox",
            vec![
                group("toolbar", vec![button("btn_menu", "Menu"), label("lbl_title", "Inbox")]),
                field("search_box"),
                button("btn_search", "Search"),
                button("btn_compose", "Compose"),
                group("list_mail", vec![row("mail_0", "lbl_mail_0", "Weekly report")]),
            ],
        )
        .screen(
            "compose",
            vec![
                field("to_field"),
                field("subject_field"),
                field("body_field"),
                button("btn_send", "Send"),
                button("btn_discard", "Discard"),
            ],
        )
        .screen(
            "confirm",
            vec![
                label("lbl_confirm", "Send this message?"),
                button("btn_confirm", "Send now"),
                button("btn_cancel", "Cancel"),
            ],
        )
        .screen("sent", vec![label("lbl_status", "Message sent"), button("btn_inbox", "Back to inbox")])
        .screen(
            "results",
            vec![
                label("lbl_query", "Results for {field:search_box}"),
                group("list_results", vec![row("result_0", "lbl_result_0", "{field:search_box}: latest thread")]),
            ],
        )
        .screen(
            "message",
            vec![
                label("lbl_subject", "Re: {field:search_box} #{hash:search_box}"),
                button("btn_reply", "Reply"),
                button("btn_star", "Star"),
            ],
        )
        .tap("inbox", "btn_compose", "compose")
        .tap("compose", "btn_send", "confirm")
        .tap("compose", "btn_discard", "inbox")
        .tap("confirm", "btn_confirm", "sent")
        .tap("confirm", "btn_cancel", "compose")
        .tap("sent", "btn_inbox", "inbox")
        .tap("inbox", "btn_search", "results")
        .tap("results", "result_0", "message")
        .back("message", "results")
        .back("results", "inbox")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "send", "send an email to {to} about {subject}")
            .tap("inbox", "btn_compose")
            .typ("compose", "to_field", "{to}")
            .typ("compose", "subject_field", "{subject}")
            .tap("compose", "btn_send")
            .tap("confirm", "btn_confirm")
            .done("sent"),
        FlowDraft::new(&spec, "find", "find the latest email about {topic}")
            .typ("inbox", "search_box", "{topic}")
            .tap("inbox", "btn_search")
            .tap("results", "result_0")
            .emit("message", "subject", "lbl_subject")
            .done("message"),
    ];
    (spec, flows)
}

fn rail() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("rail", "home")
        .screen(
            "home",
            vec![
                label("lbl_title", "Rail tickets"),
                field("from_box"),
                field("to_box"),
                field("date_box"),
                button("btn_query", "Search trains"),
                button("btn_orders", "My orders"),
            ],
        )
        .screen(
            "results",
            vec![
                label("lbl_route", "{field:from_box} to {field:to_box}"),
                group(
                    "list_trains",
                    vec![
                        row("train_0", "lbl_train_0", "G{hash:to_box} departs 08:00"),
                        row("train_1", "lbl_train_1", "D{hash:from_box} departs 09:30"),
                    ],
                ),
            ],
        )
        .screen(
            "train",
            vec![
                label("lbl_train", "Train G{hash:to_box}"),
                button("btn_second", "Second class"),
                button("btn_first", "First class"),
            ],
        )
        .screen("passengers", vec![label("lbl_passenger", "Passenger"), button("btn_submit", "Submit order")])
        .screen("paid", vec![label("lbl_order", "Order confirmed"), button("btn_home", "Home")])
        .screen(
            "orders",
            vec![group("list_orders", vec![row("order_0", "lbl_order_0", "Upcoming trip")])],
        )
        .tap("home", "btn_query", "results")
        .tap("home", "btn_orders", "orders")
        .back("orders", "home")
        .tap("results", "train_0", "train")
        .tap("results", "train_1", "train")
        .back("results", "home")
        .tap("train", "btn_second", "passengers")
        .tap("train", "btn_first", "passengers")
        .tap("passengers", "btn_submit", "paid")
        .tap("paid", "btn_home", "home")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "book", "book a train ticket from {origin} to {destination} on {date}")
            .typ("home", "from_box", "{origin}")
            .typ("home", "to_box", "{destination}")
            .typ("home", "date_box", "{date}")
            .tap("home", "btn_query")
            .tap("results", "train_0")
            .tap("train", "btn_second")
            .tap("passengers", "btn_submit")
            .done("paid"),
        FlowDraft::new(&spec, "check", "check trains from {origin} to {destination}")
            .typ("home", "from_box", "{origin}")
            .typ("home", "to_box", "{destination}")
            .tap("home", "btn_query")
            .emit("results", "train", "lbl_train_0")
            .done("results"),
    ];
    (spec, flows)
}

fn food() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("food", "home")
        .screen(
            "home",
            vec![
                field("search_box"),
                button("btn_search", "Search"),
                group("list_nearby", vec![row("shop_0", "lbl_shop_0", "Noodle House")]),
            ],
        )
        .screen(
            "results",
            vec![
                label("lbl_query", "{field:search_box}"),
                group("list_dishes", vec![row("result_0", "lbl_dish_0", "{field:search_box} set meal")]),
            ],
        )
        .screen(
            "dish",
            vec![
                label("lbl_dish", "{field:search_box}"),
                label("lbl_price", "¥{hash:search_box}"),
                button("btn_delivery", "Delivery"),
                button("btn_pickup", "Pickup"),
                button("lnk_reviews", "Reviews"),
            ],
        )
        .screen("reviews", vec![label("lbl_rating", "Rating {hash:search_box}"), button("btn_back", "Back")])
        .screen("checkout", vec![label("lbl_total", "Total"), button("btn_place", "Place order")])
        .screen("placed", vec![label("lbl_status", "Order placed")])
        .tap("home", "btn_search", "results")
        .back("results", "home")
        .tap("results", "result_0", "dish")
        .tap("dish", "btn_delivery", "checkout")
        .tap("dish", "btn_pickup", "checkout")
        .tap("dish", "lnk_reviews", "reviews")
        .tap("reviews", "btn_back", "dish")
        .back("reviews", "dish")
        .tap("checkout", "btn_place", "placed")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "order", "place an order for {dish}")
            .typ("home", "search_box", "{dish}")
            .tap("home", "btn_search")
            .tap("results", "result_0")
            .tap("dish", "btn_delivery")
            .tap("checkout", "btn_place")
            .alt_tap("reviews", "btn_back")
            .done("placed"),
        FlowDraft::new(&spec, "rating", "show the rating of {dish}")
            .typ("home", "search_box", "{dish}")
            .tap("home", "btn_search")
            .tap("results", "result_0")
            .tap("dish", "lnk_reviews")
            .emit("reviews", "rating", "lbl_rating")
            .done("reviews"),
    ];
    (spec, flows)
}

fn hotel() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("hotel", "home")
        .screen(
            "home",
            vec![
                field("city_box"),
                field("nights_box"),
                button("btn_search", "Find hotels"),
                button("btn_deals", "Deals"),
            ],
        )
        .screen(
            "results",
            vec![
                label("lbl_city", "{field:city_box}"),
                group("list_hotels", vec![row("hotel_0", "lbl_hotel_0", "{field:city_box} Grand Hotel")]),
                label("lbl_price_0", "¥{hash:city_box} per night"),
            ],
        )
        .screen(
            "hotel",
            vec![
                label("lbl_name", "{field:city_box} Grand Hotel"),
                button("btn_rooms", "Choose room"),
                button("btn_photos", "Photos"),
            ],
        )
        .screen(
            "rooms",
            vec![group(
                "list_rooms",
                vec![row("room_0", "lbl_room_0", "Queen room"), row("room_1", "lbl_room_1", "Twin room")],
            )],
        )
        .screen(
            "booking",
            vec![
                label("lbl_summary", "{field:nights_box} nights in {field:city_box}"),
                button("btn_pay", "Pay now"),
            ],
        )
        .screen("booked", vec![label("lbl_status", "Booking confirmed")])
        .tap("home", "btn_search", "results")
        .back("results", "home")
        .tap("results", "hotel_0", "hotel")
        .tap("hotel", "btn_rooms", "rooms")
        .back("hotel", "results")
        .tap("rooms", "room_0", "booking")
        .tap("rooms", "room_1", "booking")
        .tap("booking", "btn_pay", "booked")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "book", "book a hotel in {city} for {nights} nights")
            .typ("home", "city_box", "{city}")
            .typ("home", "nights_box", "{nights}")
            .tap("home", "btn_search")
            .tap("results", "hotel_0")
            .tap("hotel", "btn_rooms")
            .tap("rooms", "room_0")
            .tap("booking", "btn_pay")
            .done("booked"),
        FlowDraft::new(&spec, "price", "check hotel prices in {city}")
            .typ("home", "city_box", "{city}")
            .tap("home", "btn_search")
            .emit("results", "price", "lbl_price_0")
            .done("results"),
    ];
    (spec, flows)
}

fn store() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("store", "home")
        .screen(
            "home",
            vec![
                group("toolbar", vec![label("lbl_logo", "Store")]),
                field("search_box"),
                button("btn_search", "Search"),
                group("list_deals", vec![row("deal_0", "lbl_deal_0", "Daily deal")]),
            ],
        )
        .screen(
            "results",
            vec![
                label("lbl_query", "{field:search_box}"),
                group("list_items", vec![row("item_0", "lbl_item_0", "{field:search_box}")]),
                label("lbl_price_0", "¥{hash:search_box}"),
            ],
        )
        .screen(
            "detail",
            vec![
                label("lbl_title", "{field:search_box}"),
                label("lbl_price", "¥{hash:search_box}"),
                field("qty_box"),
                button("btn_add_cart", "Add to cart"),
            ],
        )
        .screen(
            "cart",
            vec![
                group("list_cart", vec![row("cart_0", "lbl_cart_0", "{field:qty_box} x {field:search_box}")]),
                button("btn_checkout", "Checkout"),
            ],
        )
        .screen("checkout", vec![label("lbl_total", "Total"), button("btn_pay", "Pay")])
        .screen("ordered", vec![label("lbl_status", "Order placed")])
        .tap("home", "btn_search", "results")
        .back("results", "home")
        .tap("results", "item_0", "detail")
        .back("detail", "results")
        .tap("detail", "btn_add_cart", "cart")
        .tap("cart", "btn_checkout", "checkout")
        .tap("checkout", "btn_pay", "ordered")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "buy", "buy {qty} {item} and check out")
            .typ("home", "search_box", "{item}")
            .tap("home", "btn_search")
            .tap("results", "item_0")
            .typ("detail", "qty_box", "{qty}")
            .tap("detail", "btn_add_cart")
            .tap("cart", "btn_checkout")
            .tap("checkout", "btn_pay")
            .done("ordered"),
        FlowDraft::new(&spec, "price", "check the price of {item}")
            .typ("home", "search_box", "{item}")
            .tap("home", "btn_search")
            .tap("results", "item_0")
            .emit("detail", "price", "lbl_price")
            .done("detail"),
    ];
    (spec, flows)
}

fn browser() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("browser", "home")
        .screen(
            "home",
            vec![
                field("url_bar"),
                button("btn_go", "Go"),
                group("list_shortcuts", vec![row("shortcut_0", "lbl_shortcut_0", "News")]),
            ],
        )
        .screen(
            "results",
            vec![
                label("lbl_query", "{field:url_bar}"),
                group("list_results", vec![row("result_0", "lbl_result_0", "{field:url_bar} - Wiki")]),
            ],
        )
        .screen(
            "page",
            vec![
                label("lbl_page_title", "{field:url_bar} - Wiki"),
                button("btn_menu", "Menu"),
                button("btn_share", "Share"),
            ],
        )
        .screen(
            "menu",
            vec![
                button("btn_bookmark", "Add bookmark"),
                button("btn_find", "Find in page"),
                button("btn_close", "Close"),
            ],
        )
        .screen("saved", vec![label("lbl_toast", "Bookmark saved")])
        .tap("home", "btn_go", "results")
        .back("results", "home")
        .tap("results", "result_0", "page")
        .back("page", "results")
        .tap("page", "btn_menu", "menu")
        .tap("menu", "btn_close", "page")
        .tap("menu", "btn_bookmark", "saved")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "search", "search the web for {query}")
            .typ("home", "url_bar", "{query}")
            .tap("home", "btn_go")
            .tap("results", "result_0")
            .emit("page", "title", "lbl_page_title")
            .done("page"),
        FlowDraft::new(&spec, "bookmark", "bookmark a page about {query}")
            .typ("home", "url_bar", "{query}")
            .tap("home", "btn_go")
            .tap("results", "result_0")
            .tap("page", "btn_menu")
            .tap("menu", "btn_bookmark")
            .done("saved"),
    ];
    (spec, flows)
}

fn media() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("media", "home")
        .screen(
            "home",
            vec![
                label("lbl_now", "Recommended"),
                button("tab_search", "Search"),
                button("tab_library", "Library"),
            ],
        )
        .screen("search", vec![field("search_box"), button("btn_search", "Search")])
        .screen(
            "results",
            vec![group("list_tracks", vec![row("track_0", "lbl_track_0", "{field:search_box}")])],
        )
        .screen(
            "player",
            vec![
                label("lbl_track", "{field:search_box}"),
                button("btn_play", "Play"),
                button("btn_queue", "Add to queue"),
            ],
        )
        .screen("playing", vec![label("lbl_status", "Now playing {field:search_box}")])
        .screen("queued", vec![label("lbl_queue", "Added to queue")])
        .tap("home", "tab_search", "search")
        .back("search", "home")
        .tap("search", "btn_search", "results")
        .back("results", "search")
        .tap("results", "track_0", "player")
        .tap("player", "btn_play", "playing")
        .tap("player", "btn_queue", "queued")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "play", "play the song {song}")
            .tap("home", "tab_search")
            .typ("search", "search_box", "{song}")
            .tap("search", "btn_search")
            .tap("results", "track_0")
            .tap("player", "btn_play")
            .done("playing"),
        FlowDraft::new(&spec, "queue", "add {song} to my queue")
            .tap("home", "tab_search")
            .typ("search", "search_box", "{song}")
            .tap("search", "btn_search")
            .tap("results", "track_0")
            .tap("player", "btn_queue")
            .done("queued"),
    ];
    (spec, flows)
}

fn maps() -> (AppSpec, Vec<FamilyFlow>) {
    let spec = AppDraft::new("maps", "home")
        .screen(
            "home",
            vec![field("search_box"), button("btn_search", "Search"), button("btn_layers", "Layers")],
        )
        .screen(
            "place",
            vec![
                label("lbl_place", "{field:search_box}"),
                label("lbl_distance", "{hash:search_box} m"),
                button("btn_route", "Directions"),
            ],
        )
        .screen("route", vec![field("mode_box"), button("btn_start", "Start")])
        .screen("preview", vec![label("lbl_eta", "ETA {hash:mode_box} min"), button("btn_go", "Go")])
        .screen("navigation", vec![label("lbl_status", "Navigating")])
        .tap("home", "btn_search", "place")
        .back("place", "home")
        .tap("place", "btn_route", "route")
        .back("route", "place")
        .tap("route", "btn_start", "preview")
        .tap("preview", "btn_go", "navigation")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "navigate", "navigate to {place} by {mode}")
            .typ("home", "search_box", "{place}")
            .tap("home", "btn_search")
            .tap("place", "btn_route")
            .typ("route", "mode_box", "{mode}")
            .tap("route", "btn_start")
            .tap("preview", "btn_go")
            .done("navigation"),
        FlowDraft::new(&spec, "distance", "how far is {place}")
            .typ("home", "search_box", "{place}")
            .tap("home", "btn_search")
            .emit("place", "distance", "lbl_distance")
            .done("place"),
    ];
    (spec, flows)
}

/// Resource ids that differ between the three shop apps.
struct ShopIds {
    logo: &'static str,
    search: &'static str,
    submit: &'static str,
    item: &'static str,
    price: &'static str,
    buy: &'static str,
    pay: &'static str,
}

fn shop_ids(app_id: &str) -> ShopIds {
    match app_id {
        "shop_b" => ShopIds {
            logo: "Shop B",
            search: "query_input",
            submit: "btn_go",
            item: "goods_0",
            price: "lbl_cost",
            buy: "btn_order",
            pay: "btn_confirm_pay",
        },
        "shop_c" => ShopIds {
            logo: "Shop C",
            search: "search_field",
            submit: "search_submit",
            item: "product_0",
            price: "price_tag",
            buy: "btn_purchase",
            pay: "btn_checkout",
        },
        _ => ShopIds {
            logo: "Shop A",
            search: "search_box",
            submit: "btn_search",
            item: "item_0",
            price: "lbl_price",
            buy: "btn_buy",
            pay: "btn_pay",
        },
    }
}

fn shop(app_id: &str) -> (AppSpec, Vec<FamilyFlow>) {
    let ids = shop_ids(app_id);
    let value = |kind: &str| format!("{{{kind}:{}}}", ids.search);
    let mut home = vec![
        group("toolbar", vec![label("lbl_logo", ids.logo), button("btn_menu", "Menu")]),
        field(ids.search),
        button(ids.submit, "Search"),
        group("list_banner", vec![row("banner_0", "lbl_banner_0", "Sale")]),
        el("ime_enter", "KeyboardKey", "Enter"),
    ];
    if app_id == "shop_b" {
        // Search row nested one level deeper than in the other shops.
        let submit = home.remove(2);
        let search = home.remove(1);
        home.insert(1, group("search_bar", vec![search, submit]));
    }
    let spec = AppDraft::new(app_id, "home")
        .screen("home", home)
        .screen(
            "results",
            vec![
                label("lbl_query", &value("field")),
                group("list_items", vec![row(ids.item, "lbl_item_0", &value("field"))]),
            ],
        )
        .screen(
            "detail",
            vec![
                label("lbl_title", &value("field")),
                label(ids.price, &format!("¥{}", value("hash"))),
                button(ids.buy, "Buy now"),
                button("btn_cart", "Add to cart"),
            ],
        )
        .screen("confirm", vec![label("lbl_total", &format!("¥{}", value("hash"))), button(ids.pay, "Pay")])
        .screen("ordered", vec![label("lbl_status", "Order placed")])
        .tap("home", ids.submit, "results")
        .tap("home", "ime_enter", "results")
        .back("results", "home")
        .tap("results", ids.item, "detail")
        .back("detail", "results")
        .tap("detail", ids.buy, "confirm")
        .tap("confirm", ids.pay, "ordered")
        .build();
    let flows = vec![
        FlowDraft::new(&spec, "price", "query the price of {item}")
            .typ("home", ids.search, "{item}")
            .tap("home", ids.submit)
            .tap("results", ids.item)
            .emit("detail", "price", ids.price)
            .alt_tap("home", "ime_enter")
            .done("detail"),
        FlowDraft::new(&spec, "order", "place an order for {item}")
            .typ("home", ids.search, "{item}")
            .tap("home", ids.submit)
            .tap("results", ids.item)
            .tap("detail", ids.buy)
            .tap("confirm", ids.pay)
            .alt_tap("home", "ime_enter")
            .done("ordered"),
    ];
    (spec, flows)
}

pub fn shop_app(app_id: &str) -> AppSpec {
    shop(app_id).0
}

struct ChatIds {
    search: &'static str,
    find: &'static str,
    contact: &'static str,
    input: &'static str,
    send: &'static str,
}

fn chat(app_id: &str) -> (AppSpec, Vec<FamilyFlow>) {
    let ids = match app_id {
        "chat_b" => ChatIds {
            search: "people_search",
            find: "btn_lookup",
            contact: "person_0",
            input: "input_box",
            send: "btn_submit",
        },
        _ => ChatIds {
            search: "contact_search",
            find: "btn_find",
            contact: "contact_0",
            input: "msg_box",
            send: "btn_send",
        },
    };
    let spec = AppDraft::new(app_id, "home")
        .screen(
            "home",
            vec![
                label("lbl_title", "Chats"),
                field(ids.search),
                button(ids.find, "Find"),
                group("list_recent", vec![row("recent_0", "lbl_recent_0", "Family group")]),
            ],
        )
        .screen(
            "results",
            vec![group(
                "list_contacts",
                vec![row(ids.contact, "lbl_contact_0", &format!("{{field:{}}}", ids.search))],
            )],
        )
        .screen(
            "chat",
            vec![
                label("lbl_peer", &format!("{{field:{}}}", ids.search)),
                field(ids.input),
                button(ids.send, "Send"),
            ],
        )
        .screen(
            "sent",
            vec![
                label("lbl_last", &format!("{{field:{}}}", ids.input)),
                label("lbl_status", "Delivered"),
            ],
        )
        .tap("home", ids.find, "results")
        .back("results", "home")
        .tap("results", ids.contact, "chat")
        .go("chat", ActionKind::TypeText, Some(ids.input), "chat")
        .back("chat", "results")
        .tap("chat", ids.send, "sent")
        .build();
    let send = |verb: &str, pattern: &str, message: &str| {
        FlowDraft::new(&spec, verb, pattern)
            .typ("home", ids.search, "{contact}")
            .tap("home", ids.find)
            .tap("results", ids.contact)
            .typ("chat", ids.input, message)
            .tap("chat", ids.send)
            .done("sent")
    };
    // The two-value family first: its pattern is the more specific one.
    let flows = vec![
        send("send2", "send {pa} and {pb} to {contact}", "{pa} vs {pb}"),
        send("send1", "send {pa} to {contact}", "{pa}"),
    ];
    (spec, flows)
}

fn search_app(app_id: &str) -> (AppSpec, Vec<FamilyFlow>) {
    let (input, submit, hit, title, pattern) = match app_id {
        "qa_a" => ("ask_box", "btn_ask", "answer_0", "lbl_product", "find the best rated {topic}"),
        _ => ("search_box", "btn_search", "post_0", "lbl_title", "find recommended {topic}"),
    };
    let spec = AppDraft::new(app_id, "home")
        .screen(
            "home",
            vec![
                field(input),
                button(submit, "Search"),
                group("feed", vec![row("feed_0", "lbl_feed_0", "Trending")]),
            ],
        )
        .screen(
            "results",
            vec![group("list_hits", vec![row(hit, "lbl_hit_0", &format!("{{field:{input}}}"))])],
        )
        .screen(
            "detail",
            vec![
                label(title, &format!("{{field:{input}}} model {{hash:{input}}}")),
                button("btn_like", "Like"),
                button("btn_author", "Author"),
            ],
        )
        .screen("author", vec![label("lbl_author", "Author"), button("btn_follow", "Follow")])
        .tap("home", submit, "results")
        .back("results", "home")
        .tap("results", hit, "detail")
        .back("detail", "results")
        .tap("detail", "btn_author", "author")
        .back("author", "detail")
        .build();
    let flows = vec![FlowDraft::new(&spec, "find", pattern)
        .typ("home", input, "{topic}")
        .tap("home", submit)
        .tap("results", hit)
        .emit("detail", "rec", title)
        .alt_back("author")
        .done("detail")];
    (spec, flows)
}

fn video(app_id: &str) -> (AppSpec, Vec<FamilyFlow>) {
    let (input, submit, hit, latest) = match app_id {
        "video_b" => ("query_box", "btn_query", "series_0", "lbl_newest"),
        _ => ("search_box", "btn_search", "show_0", "lbl_latest"),
    };
    let spec = AppDraft::new(app_id, "home")
        .screen(
            "home",
            vec![
                field(input),
                button(submit, "Search"),
                group("rail", vec![row("rec_0", "lbl_rec_0", "Popular now")]),
            ],
        )
        .screen(
            "results",
            vec![group("list_shows", vec![row(hit, "lbl_show_0", &format!("{{field:{input}}}"))])],
        )
        .screen(
            "show",
            vec![
                label(latest, &format!("Episode {{hash:{input}}}")),
                button("btn_play", "Play"),
            ],
        )
        .screen("player", vec![label("lbl_playing", "Playing")])
        .tap("home", submit, "results")
        .back("results", "home")
        .tap("results", hit, "show")
        .tap("show", "btn_play", "player")
        .back("player", "show")
        .build();
    let flows = vec![FlowDraft::new(&spec, "check", "check {show} updates")
        .typ("home", input, "{show}")
        .tap("home", submit)
        .tap("results", hit)
        .emit("show", "ep", latest)
        .done("show")];
    (spec, flows)
}

/// All bundled apps and their families.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    pub apps: Vec<AppSpec>,
    pub flows: Vec<FamilyFlow>,
}

impl Default for Catalog {
    fn default() -> Self {
        Self::standard()
    }
}

impl Catalog {
    pub fn standard() -> Self {
        let mut parts = vec![mail(), rail(), food(), hotel(), store(), browser(), media(), maps()];
        parts.extend(SHOP_APPS.iter().map(|a| shop(a)));
        parts.extend(CHAT_APPS.iter().map(|a| chat(a)));
        parts.extend(SEARCH_APPS.iter().map(|a| search_app(a)));
        parts.extend(VIDEO_APPS.iter().map(|a| video(a)));
        let mut apps = Vec::new();
        let mut flows = Vec::new();
        for (a, f) in parts {
            apps.push(a);
            flows.extend(f);
        }
        Self { apps, flows }
    }

    pub fn app(&self, app_id: &str) -> Option<&AppSpec> {
        self.apps.iter().find(|a| a.app_id == app_id)
    }

    pub fn app_mut(&mut self, app_id: &str) -> Option<&mut AppSpec> {
        self.apps.iter_mut().find(|a| a.app_id == app_id)
    }

    pub fn flow(&self, name: &str) -> Option<&FamilyFlow> {
        self.flows.iter().find(|f| f.name == name)
    }

    pub fn flows_of<'a>(&'a self, app_id: &'a str) -> impl Iterator<Item = &'a FamilyFlow> + 'a {
        self.flows.iter().filter(move |f| f.app_id == app_id)
    }

    /// Golden-path operator over every family.
    pub fn operator(&self) -> ScriptedOperator {
        ScriptedOperator {
            families: self.flows.iter().map(FamilyFlow::family).collect(),
            rules: self.flows.iter().flat_map(FamilyFlow::rules).collect(),
            max_unaided_depth: None,
        }
    }

    /// Slot extraction for every family template, both styles.
    pub fn rewriter(&self) -> PatternRewriter {
        PatternRewriter::new(self.flows.iter().flat_map(FamilyFlow::rewrite_patterns).collect())
    }

    pub fn templates(&self, style: TemplateStyle) -> Vec<ExperienceTemplate> {
        self.flows.iter().map(|f| f.template(style)).collect()
    }

    /// One fresh instance per app.
    pub fn environments(&self) -> BTreeMap<String, SimApp> {
        self.apps
            .iter()
            .map(|a| (a.app_id.clone(), SimApp::new(a.clone())))
            .collect()
    }

    /// Sets per-app durations and per-transition overrides.
    pub fn set_durations(&mut self, app_id: &str, d: Durations) {
        if let Some(a) = self.app_mut(app_id) {
            a.durations = d;
        }
    }

    pub fn set_transition_ms(&mut self, app_id: &str, from: &str, kind: ActionKind, target: &str, ms: u64) {
        if let Some(a) = self.app_mut(app_id) {
            for t in &mut a.transitions {
                if t.from == from && t.kind == kind && t.target.as_deref() == Some(target) {
                    t.duration_ms = Some(ms);
                }
            }
        }
    }
}

pub fn all_apps() -> Vec<AppSpec> {
    Catalog::standard().apps
}

fn flat(ms: u64) -> Durations {
    Durations {
        launch_ms: ms,
        click_ms: ms,
        type_ms: ms,
        swipe_ms: ms,
        back_ms: ms,
        emit_ms: ms,
        done_ms: 0,
    }
}

/// Durations for the two-producer/one-consumer timing check: a price query
/// takes 10 s on shop_a and 12 s on shop_b; on chat_a, reaching the chat
/// takes 3 s and sending takes 2 s.
pub fn timing_catalog() -> Catalog {
    let mut c = Catalog::standard();
    c.set_durations("shop_a", flat(2000));
    c.set_durations("shop_b", flat(2400));
    c.set_durations("chat_a", flat(750));
    c.set_transition_ms("chat_a", "chat", ActionKind::TypeText, "msg_box", 1000);
    c.set_transition_ms("chat_a", "chat", ActionKind::Click, "btn_send", 1000);
    c
}

/// Removes shop_a's search button; the keyboard enter key still works.
pub fn remove_search_button() -> Mutation {
    Mutation {
        screen: "home".into(),
        target: "btn_search".into(),
        op: MutationOp::RemoveElement,
    }
}

/// Relabels shop_a's search button beyond fuzzy recognition while keeping
/// the screen's fingerprint.
pub fn relabel_search_button() -> Mutation {
    Mutation {
        screen: "home".into(),
        target: "btn_search".into(),
        op: MutationOp::RenameText {
            text: "Go".into(),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracles::{Operator, OperatorRequest};
    use crate::sim_env::GuiEnvironment;
    use crate::ui_model::Outcome;

    fn values(flow: &FamilyFlow) -> BTreeMap<String, String> {
        flow.slots()
            .into_iter()
            .map(|s| {
                let v = format!("{s}value");
                (s, v)
            })
            .collect()
    }

    #[test]
    fn every_golden_path_runs() {
        let c = Catalog::standard();
        for flow in &c.flows {
            let spec = c.app(&flow.app_id).unwrap();
            let mut app = SimApp::new(spec.clone());
            let v = values(flow);
            let path = flow.golden_path(&v);
            for (step, action) in flow.steps.iter().zip(&path) {
                assert_eq!(app.observe().screen_id, step.screen, "{}", flow.name);
                app.step(action).unwrap_or_else(|e| panic!("{}: {e}", flow.name));
            }
            assert_eq!(path.last().unwrap().kind, ActionKind::Done);
            assert_eq!(app.outputs().keys().cloned().collect::<Vec<_>>(), flow.outputs());
        }
    }

    #[test]
    fn operator_reproduces_golden_paths() {
        let c = Catalog::standard();
        let op = c.operator();
        for flow in &c.flows {
            let mut app = SimApp::new(c.app(&flow.app_id).unwrap().clone());
            let v = values(flow);
            let task = flow.task_text(&v);
            let mut history = Vec::new();
            loop {
                let a = op
                    .next_action(&OperatorRequest {
                        task: task.clone(),
                        state: app.observe(),
                        history: history.clone(),
                        hint: None,
                    })
                    .unwrap_or_else(|e| panic!("{}: {e}", flow.name));
                app.step(&a).unwrap();
                let stop = a.kind == ActionKind::Done;
                history.push(a);
                if stop {
                    break;
                }
                assert!(history.len() < 20);
            }
            let golden = flow.golden_path(&v);
            assert_eq!(history.len(), golden.len(), "{}", flow.name);
            assert!(history.iter().zip(&golden).all(|(a, b)| a.same_as(b)), "{}", flow.name);
        }
        let _ = Outcome::Success;
    }

    #[test]
    fn targets_have_static_text() {
        for flow in &Catalog::standard().flows {
            for s in &flow.steps {
                if let Some(t) = &s.action.target {
                    assert!(!t.text.contains('{'), "{}: {}", flow.name, t.resource_id);
                }
            }
        }
    }

    #[test]
    fn template_styles() {
        let c = Catalog::standard();
        for style in [TemplateStyle::HumanCrafted, TemplateStyle::LlmStyle] {
            for t in c.templates(style) {
                t.validate().unwrap();
            }
        }
        let send = c.flow("mail.send").unwrap();
        let kinds = |s| -> Vec<StepKind> { send.template(s).steps.iter().map(|s| s.kind).collect() };
        use StepKind::{Invariant as I, Variable as V};
        assert_eq!(kinds(TemplateStyle::HumanCrafted), [I, I, V, V, I, I, I]);
        assert_eq!(kinds(TemplateStyle::LlmStyle), [I, V, V, V, V, I, I]);
        let llm = send.template(TemplateStyle::LlmStyle);
        assert_eq!(llm.steps[1].slot_refs, ["to"]);
        assert_eq!(llm.steps[4].slot_refs, ["subject"]);
    }

    #[test]
    fn shops_differ_in_layout() {
        let fp = |id: &str| {
            let s = shop_app(id);
            crate::ui_model::fingerprint("x", &s.screen("home").unwrap().root)
        };
        assert_ne!(fp("shop_a"), fp("shop_b"));
        assert_ne!(fp("shop_a"), fp("shop_c"));
    }

    #[test]
    fn timing_durations() {
        let c = timing_catalog();
        let total = |flow: &str, upto: Option<usize>| -> u64 {
            let f = c.flow(flow).unwrap();
            let mut app = SimApp::new(c.app(&f.app_id).unwrap().clone());
            let v = values(f);
            let path = f.golden_path(&v);
            let n = upto.unwrap_or(path.len());
            path[..n].iter().map(|a| app.step(a).unwrap().duration_ms).sum()
        };
        assert_eq!(total("shop_a.price", None), 10_000);
        assert_eq!(total("shop_b.price", None), 12_000);
        assert_eq!(total("chat_a.send2", Some(4)), 3_000);
        assert_eq!(total("chat_a.send2", None), 5_000);
    }
}
