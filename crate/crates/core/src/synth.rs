//! Templated synthetic MWP corpus with gold parses.
//!
//! Each template is a head-marked bracketed tree per sentence (`*` marks the
//! head child) with `{slot}` placeholders. Dependencies come from the heads,
//! POS tags from the preterminals.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{tokenize_equation, MwpInstance};
use crate::error::{DiskError, Result};
use crate::syntax::{head_dependencies, strip_head, Tree};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_examples: usize,
    pub n_templates: usize,
    pub seed: u64,
}

type Slots = Vec<(&'static str, String)>;

pub struct Template {
    pub name: &'static str,
    pub equation: &'static str,
    pub sentences: &'static [&'static str],
    sample: fn(&mut ChaCha8Rng) -> Slots,
}

fn pick<'a>(rng: &mut ChaCha8Rng, xs: &[&'a str]) -> &'a str {
    xs[rng.random_range(0..xs.len())]
}

fn int(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> i64 {
    rng.random_range(lo..=hi)
}

const NAMES: [&str; 8] = ["john", "mary", "lisa", "tom", "anna", "mike", "emma", "sam"];
const HER_NAMES: [&str; 4] = ["mary", "lisa", "anna", "emma"];

macro_rules! slots {
    ($($k:literal => $v:expr),* $(,)?) => { vec![$(($k, $v.to_string())),*] };
}

pub static TEMPLATES: &[Template] = &[
    Template {
        name: "sum_difference",
        equation: "equ : x + y = {a} equ : x - y = {b}",
        sentences: &[
            "(S (NP (DET the) (N* sum) (PP (P* of) (NP (ADJ two) (N* numbers)))) (VP* (V* is) (NUM {a})) (PUNCT .))",
            "(S (NP (PRON their) (N* difference)) (VP* (V* is) (NUM {b})) (PUNCT .))",
            "(S (VP* (V* find) (NP (DET the) (N* numbers))) (PUNCT .))",
        ],
        sample: |r| {
            let a = int(r, 20, 99);
            slots!["a" => a, "b" => int(r, 2, a - 2)]
        },
    },
    Template {
        name: "ratio_total",
        equation: "equ : x + y = {a} equ : x / y = {b} / {c}",
        sentences: &[
            "(S (NP (DET the) (N* ratio) (PP (P* of) (NP (N* {g1}) (PP (P* to) (NP (N* {g2})))))) (VP* (V* is) (QP (NUM* {b}) (SYM :) (NUM {c}))) (PUNCT .))",
            "(S (NP (DET the) (N* {place})) (VP* (V* has) (NP (NUM {a}) (N* members))) (PUNCT .))",
            "(S (WHNP (WH how) (ADJ* many)) (VP* (V* are) (NP (N* {g1}))) (PUNCT ?))",
        ],
        sample: |r| {
            let (g1, g2, place) = [("boys", "girls", "school"), ("cats", "dogs", "shelter"), ("men", "women", "club")]
                [r.random_range(0..3)];
            let b = int(r, 1, 9);
            let mut c = int(r, 1, 9);
            if c == b {
                c = b % 9 + 1;
            }
            slots!["g1" => g1, "g2" => g2, "place" => place, "a" => int(r, 10, 99), "b" => b, "c" => c]
        },
    },
    Template {
        name: "opposite_directions",
        equation: "equ : {a} * x + {b} * x = {c}",
        sentences: &[
            "(S (NP (ADJ two) (N* {vs})) (VP* (V* leave) (NP (DET the) (ADJ same) (N* {spot})) (PP (P* in) (NP (ADJ opposite) (N* directions)))) (PUNCT .))",
            "(S (NP (ADJ one) (N* {v})) (VP* (V* travels) (NP (NUM {a}) (N* mph))) (PUNCT .))",
            "(S (NP (DET the) (ADJ* other)) (VP* (V* travels) (NP (NUM {b}) (N* mph))) (PUNCT .))",
            "(S (PP (P* in) (NP (WH how) (ADJ many) (N* hours))) (AUX will) (PRON they) (VP* (V* be) (NP (NUM {c}) (N* miles)) (ADV apart)) (PUNCT ?))",
        ],
        sample: |r| {
            let (vs, v, spot) =
                [("cars", "car", "city"), ("trains", "train", "station"), ("planes", "plane", "airport")][r.random_range(0..3)];
            slots!["vs" => vs, "v" => v, "spot" => spot, "a" => int(r, 30, 70), "b" => int(r, 30, 70), "c" => int(r, 100, 900)]
        },
    },
    Template {
        name: "ticket_sales",
        equation: "equ : x + y = {a} equ : {b} * x + {c} * y = {d}",
        sentences: &[
            "(S (NP (N* {name})) (VP* (V* sold) (NP (NUM {a}) (N* tickets))) (PUNCT .))",
            "(S (NP (ADJ adult) (N* tickets)) (VP* (V* cost) (NP (NUM {b}) (N* dollars))) (PUNCT .))",
            "(S (NP (N child) (N* tickets)) (VP* (V* cost) (NP (NUM {c}) (N* dollars))) (PUNCT .))",
            "(S (NP (DET the) (N* sales)) (VP* (V* totaled) (NP (NUM {d}) (N* dollars))) (PUNCT .))",
            "(S (NP (WH how) (ADJ many) (ADJ adult) (N* tickets)) (VP* (AUX were) (V* sold)) (PUNCT ?))",
        ],
        sample: |r| {
            let b = int(r, 5, 15);
            slots!["name" => pick(r, &NAMES), "a" => int(r, 20, 90), "b" => b, "c" => int(r, 2, b - 1), "d" => int(r, 100, 999)]
        },
    },
    Template {
        name: "coin_jar",
        equation: "equ : x + y = {a} equ : {b} * x + {c} * y = {d}",
        sentences: &[
            "(S (NP (DET a) (N* jar)) (VP* (V* holds) (NP (NUM {a}) (N* coins))) (PUNCT .))",
            "(S (NP (DET each) (ADJ small) (N* coin)) (VP* (V* is) (ADJ worth) (NP (NUM {b}) (N* cents))) (PUNCT .))",
            "(S (NP (DET each) (ADJ large) (N* coin)) (VP* (V* is) (ADJ worth) (NP (NUM {c}) (N* cents))) (PUNCT .))",
            "(S (NP (DET the) (N* coins)) (VP* (V* are) (ADJ worth) (NP (NUM {d}) (N* cents))) (PUNCT .))",
            "(S (NP (WH how) (ADJ many) (ADJ small) (N* coins)) (VP* (V* are) (PP (P* in) (NP (DET the) (N* jar)))) (PUNCT ?))",
        ],
        sample: |r| {
            let b = int(r, 1, 10);
            slots!["a" => int(r, 10, 60), "b" => b, "c" => int(r, b + 5, 50), "d" => int(r, 100, 999)]
        },
    },
    Template {
        name: "number_increase",
        equation: "equ : x + {a} = {b} * x",
        sentences: &[
            "(S (NP (DET a) (N* number) (VP (V* increased) (PP (P* by) (NUM {a})))) (VP* (V* is) (NP (NUM {b}) (N* times) (NP (DET the) (N* number)))) (PUNCT .))",
            "(S (VP* (V* find) (NP (DET the) (N* number))) (PUNCT .))",
        ],
        sample: |r| slots!["a" => int(r, 2, 60), "b" => int(r, 2, 9)],
    },
    Template {
        name: "age_ratio",
        equation: "equ : x = y + {c} equ : x + {a} = {b} * ( y + {a} )",
        sentences: &[
            "(S (NP (N* {name})) (VP* (V* is) (NP (NUM {c}) (N* years)) (ADJ older) (PP (P* than) (NP (PRON her) (N* {rel})))) (PUNCT .))",
            "(S (PP (P* in) (NP (NUM {a}) (N* years))) (NP (PRON* she)) (VP* (AUX will) (V* be) (NP (NUM {b}) (N* times)) (ADJ as) (ADJ old)) (PUNCT .))",
            "(S (WHADJP (WH how) (ADJ* old)) (VP* (V* is) (NP (N* {name}))) (ADV now) (PUNCT ?))",
        ],
        sample: |r| {
            slots!["name" => pick(r, &HER_NAMES), "rel" => pick(r, &["brother", "cousin", "sister"]),
                "a" => int(r, 2, 15), "b" => int(r, 2, 4), "c" => int(r, 5, 30)]
        },
    },
    Template {
        name: "rectangle_area",
        equation: "equ : x * y = {a} equ : x = {b} * y",
        sentences: &[
            "(S (NP (DET the) (N* area) (PP (P* of) (NP (DET a) (N* {shape})))) (VP* (V* is) (NP (NUM {a}) (ADJ square) (N* feet))) (PUNCT .))",
            "(S (NP (PRON its) (N* length)) (VP* (V* is) (NP (NUM {b}) (N* times)) (NP (PRON its) (N* width))) (PUNCT .))",
            "(S (VP* (V* find) (NP (PRON its) (N* dimensions))) (PUNCT .))",
        ],
        sample: |r| {
            slots!["shape" => pick(r, &["rectangle", "garden", "room", "field"]), "a" => int(r, 20, 400), "b" => int(r, 2, 5)]
        },
    },
    Template {
        name: "tank_fraction",
        equation: "equ : {a} / {b} * x + {c} = {d} / {e} * x",
        sentences: &[
            "(S (NP (DET a) (N {veh}) (N gas) (N* tank)) (VP* (V* is) (QP (NUM* {a}) (SYM /) (NUM {b})) (ADJ full)) (PUNCT .))",
            "(S (PP (P* after) (S (NP (NUM {c}) (N* gallons)) (VP* (V* are) (V added)))) (PUNCT ,) (NP (DET the) (N* tank)) (VP* (V* is) (QP (NUM* {d}) (SYM /) (NUM {e})) (ADJ full)) (PUNCT .))",
            "(S (WHNP (WH what)) (VP* (V* is) (NP (DET the) (N* capacity) (PP (P* of) (NP (DET the) (N* tank))))) (PUNCT ?))",
        ],
        sample: |r| {
            let b = int(r, 3, 9);
            let e = int(r, 3, 9);
            slots!["veh" => pick(r, &["truck", "car", "boat", "van"]), "a" => int(r, 1, b - 2), "b" => b,
                "c" => int(r, 2, 30), "d" => int(r, 2, e - 1), "e" => e]
        },
    },
    Template {
        name: "rope_cut",
        equation: "equ : x + y = {a} equ : {b} * x = {c} * y",
        sentences: &[
            "(S (NP (DET a) (N* {mat}) (NP (NUM {a}) (N* feet)) (ADJ long)) (VP* (V* is) (V cut) (PP (P* into) (NP (ADJ two) (N* pieces)))) (PUNCT .))",
            "(S (NP (NUM {b}) (N* times) (NP (DET the) (ADJ first) (N* piece))) (VP* (V* equals) (NP (NUM {c}) (N* times) (NP (DET the) (ADJ second) (N* piece)))) (PUNCT .))",
            "(S (WHADJP (WH how) (ADJ* long)) (VP* (V* is) (NP (DET each) (N* piece))) (PUNCT ?))",
        ],
        sample: |r| {
            let b = int(r, 2, 9);
            let mut c = int(r, 2, 9);
            if c == b {
                c = if b == 9 { 2 } else { b + 1 };
            }
            slots!["mat" => pick(r, &["rope", "board", "ribbon", "wire"]), "a" => int(r, 10, 99), "b" => b, "c" => c]
        },
    },
    Template {
        name: "unit_price",
        equation: "equ : {a} * x = {b}",
        sentences: &[
            "(S (NP (N* {name})) (VP* (V* bought) (NP (NUM {a}) (N* {items})) (PP (P* for) (NP (NUM {b}) (N* dollars)))) (PUNCT .))",
            "(S (WHNP (WH how) (ADJ* much)) (AUX did) (NP (DET each) (N* {item})) (VP* (V* cost)) (PUNCT ?))",
        ],
        sample: |r| {
            let (items, item) = [("apples", "apple"), ("books", "book"), ("pens", "pen"), ("shirts", "shirt")][r.random_range(0..4)];
            slots!["name" => pick(r, &NAMES), "items" => items, "item" => item, "a" => int(r, 2, 12), "b" => int(r, 10, 99)]
        },
    },
    Template {
        name: "average_speed",
        equation: "equ : {a} * x = {b}",
        sentences: &[
            "(S (NP (N* {name})) (VP* (V* {moved}) (NP (NUM {b}) (N* miles)) (PP (P* in) (NP (NUM {a}) (N* hours)))) (PUNCT .))",
            "(S (WHNP (WH what)) (VP* (V* was) (NP (DET the) (ADJ average) (N* speed))) (PUNCT ?))",
        ],
        sample: |r| {
            slots!["name" => pick(r, &NAMES), "moved" => pick(r, &["drove", "biked", "walked", "ran"]),
                "a" => int(r, 2, 9), "b" => int(r, 10, 500)]
        },
    },
    Template {
        name: "boat_current",
        equation: "equ : {a} * ( x + y ) = {b} equ : {c} * ( x - y ) = {b}",
        sentences: &[
            "(S (NP (DET a) (N* boat)) (VP* (V* travels) (NP (NUM {b}) (N* miles)) (ADV downstream) (PP (P* in) (NP (NUM {a}) (N* hours)))) (PUNCT .))",
            "(S (NP (DET the) (N* return)) (VP* (V* takes) (NP (NUM {c}) (N* hours))) (PUNCT .))",
            "(S (VP* (V* find) (NP (DET the) (N* speed) (PP (P* of) (NP (DET the) (N* current))))) (PUNCT .))",
        ],
        sample: |r| {
            let a = int(r, 2, 8);
            slots!["a" => a, "b" => int(r, 20, 200), "c" => int(r, a + 1, 9)]
        },
    },
    Template {
        name: "heavier_lighter",
        equation: "equ : x + ( x + {a} ) = {b}",
        sentences: &[
            "(S (NP (ADJ two) (N* {things})) (VP* (V* weigh) (NP (NUM {b}) (N* pounds)) (ADV together)) (PUNCT .))",
            "(S (NP (DET the) (ADJ heavier) (N* one)) (VP* (V* weighs) (NP (NUM {a}) (N* pounds)) (ADV more)) (PUNCT .))",
            "(S (WHADJP (WH how) (ADJ* much)) (AUX does) (NP (DET the) (ADJ lighter) (N* one)) (VP* (V* weigh)) (PUNCT ?))",
        ],
        sample: |r| {
            let a = int(r, 2, 30);
            slots!["things" => pick(r, &["boxes", "bags", "dogs", "packages"]), "a" => a, "b" => int(r, a + 10, 200)]
        },
    },
    Template {
        name: "sale_fraction",
        equation: "equ : {a} / {c} * x = {b}",
        sentences: &[
            "(S (NP (DET a) (N* {thing})) (VP* (V* sells) (PP (P* for) (NP (QP (NUM* {a}) (SYM /) (NUM {c})) (PP (P* of) (NP (PRON its) (ADJ original) (N* price)))))) (PUNCT .))",
            "(S (NP (DET the) (N sale) (N* price)) (VP* (V* is) (NP (NUM {b}) (N* dollars))) (PUNCT .))",
            "(S (WHNP (WH what)) (VP* (V* was) (NP (DET the) (ADJ original) (N* price))) (PUNCT ?))",
        ],
        sample: |r| {
            let c = int(r, 3, 9);
            slots!["thing" => pick(r, &["shirt", "jacket", "lamp", "chair"]), "a" => int(r, 1, c - 1), "c" => c, "b" => int(r, 10, 99)]
        },
    },
    Template {
        name: "catch_up",
        equation: "equ : {a} * x = {b} * ( x - {c} )",
        sentences: &[
            "(S (NP (DET a) (N* {v})) (VP* (V* leaves) (NP (DET the) (N* {spot})) (PP (P* at) (NP (NUM {a}) (N* mph)))) (PUNCT .))",
            "(S (NP (NUM {c}) (N* hours) (ADV later)) (PUNCT ,) (NP (DET a) (ADJ second) (N* {v})) (VP* (V* follows) (PP (P* at) (NP (NUM {b}) (N* mph)))) (PUNCT .))",
            "(S (WHNP (WH how) (ADJ many) (N* hours)) (AUX will) (PRON it) (VP* (V* take)) (PUNCT ?))",
        ],
        sample: |r| {
            let (v, spot) = [("car", "city"), ("train", "station"), ("bus", "depot")][r.random_range(0..3)];
            let a = int(r, 30, 80);
            slots!["v" => v, "spot" => spot, "a" => a, "b" => int(r, a + 5, 95), "c" => int(r, 1, 5)]
        },
    },
];

fn fill(s: &str, slots: &Slots) -> String {
    let mut out = s.to_string();
    for (k, v) in slots {
        out = out.replace(&format!("{{{k}}}"), v);
    }
    out
}

impl Template {
    pub fn instantiate(&self, id: String, rng: &mut ChaCha8Rng) -> Result<MwpInstance> {
        let slots = (self.sample)(rng);
        let equation = tokenize_equation(&fill(self.equation, &slots))?;
        let sentences = self.sentences.iter().map(|s| fill(s, &slots)).collect::<Vec<_>>().join(" ");
        let marked = Tree::parse(&format!("(ROOT {sentences})"))?;
        let dep_edges = head_dependencies(&marked);
        let tree = marked.map_labels(&|l| strip_head(l).to_string()).map_words(&|w| w.to_lowercase());
        let inst = MwpInstance {
            id,
            equation,
            text: tree.leaves().into_iter().map(String::from).collect(),
            dep_edges,
            pos: tree.preterminal_labels().into_iter().map(String::from).collect(),
            constituency: tree.to_string(),
        };
        inst.validate()?;
        Ok(inst)
    }
}

/// Template name encoded in a synthetic instance id (`syn00012.rope_cut`).
pub fn template_of(id: &str) -> Option<&str> {
    id.strip_prefix("syn").and_then(|r| r.split_once('.')).map(|(_, t)| t)
}

/// Generates `n_examples` instances, spreading them evenly over the first
/// `n_templates` templates in a seeded order.
pub fn generate_synthetic_corpus(cfg: &SynthConfig) -> Result<Vec<MwpInstance>> {
    if cfg.n_examples == 0 {
        return Err(DiskError::Config("n_examples must be positive".into()));
    }
    if cfg.n_templates < 2 || cfg.n_templates > TEMPLATES.len() {
        return Err(DiskError::Config(format!("n_templates must be in 2..={}, got {}", TEMPLATES.len(), cfg.n_templates)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..cfg.n_examples).map(|i| i % cfg.n_templates).collect();
    order.shuffle(&mut rng);
    order
        .into_iter()
        .enumerate()
        .map(|(i, t)| {
            let tpl = &TEMPLATES[t];
            tpl.instantiate(format!("syn{i:05}.{}", tpl.name), &mut rng)
        })
        .collect()
}
