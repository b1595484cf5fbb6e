//! Templated generator of small documents with consistent annotations for
//! all four tasks.
//!
//! Every document introduces a handful of entities by name and then refers
//! back to them with surnames, pronouns or nominals, so coreference chains,
//! mention heads, named entities and relations are all derived from the
//! same underlying entity table.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, RelationInstance, Span, TaggedSpan};

pub const NER_LABELS: [&str; 3] = ["PER", "ORG", "GPE"];
pub const EMD_LABELS: [&str; 4] = ["PER", "ORG", "GPE", "VEH"];
pub const RELATION_TYPES: [&str; 6] = ["PHYS", "PART-WHOLE", "PER-SOC", "ORG-AFF", "ART", "GEN-AFF"];

const MALE: [&str; 8] = ["John", "Peter", "David", "Michael", "James", "Robert", "Thomas", "Daniel"];
const FEMALE: [&str; 8] = ["Mary", "Anna", "Laura", "Sarah", "Emma", "Julia", "Linda", "Helen"];
const SURNAMES: [&str; 10] = [
    "Smith", "Miller", "Brown", "Taylor", "Wilson", "Clark", "Walker", "Young", "Hall", "King",
];
const ORGS: [&[&str]; 6] = [
    &["Acme", "Corp"],
    &["Globex", "Inc"],
    &["Initech", "Group"],
    &["Umbrella", "Ltd"],
    &["Stark", "Industries"],
    &["Wayne", "Enterprises"],
];
const CITIES: [&[&str]; 8] = [
    &["Paris"],
    &["Berlin"],
    &["New", "York"],
    &["Madrid"],
    &["Rome"],
    &["Vienna"],
    &["Boston"],
    &["San", "Diego"],
];
const REGIONS: [&str; 6] = ["Europe", "France", "Germany", "California", "Texas", "Italy"];
const VEHICLES: [&str; 4] = ["car", "truck", "boat", "bike"];
const FILLERS: [&[&str]; 3] = [
    &["the", "weather", "was", "nice", "."],
    &["nothing", "else", "happened", "that", "day", "."],
    &["everyone", "went", "home", "early", "."],
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Probability that a document has a second person.
    pub second_person_prob: f64,
    /// Probability that a sentence is an entity-free filler.
    pub filler_prob: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            min_sentences: 8,
            max_sentences: 12,
            second_person_prob: 0.5,
            filler_prob: 0.15,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Person,
    Other,
    Org,
    City,
    Region,
    Vehicle,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Subject,
    Object,
}

enum Piece {
    Word(&'static str),
    Mention(Slot, Role),
}

struct Template {
    pieces: &'static [Piece],
    /// (type, arg1 slot, arg2 slot)
    relations: &'static [(&'static str, Slot, Slot)],
}

use Piece::{Mention as M, Word as W};
use Role::{Object as Obj, Subject as Subj};

const TEMPLATES: [Template; 9] = [
    Template {
        pieces: &[M(Slot::Person, Subj), W("works"), W("for"), M(Slot::Org, Obj), W(".")],
        relations: &[("ORG-AFF", Slot::Person, Slot::Org)],
    },
    Template {
        pieces: &[M(Slot::Org, Subj), W("is"), W("based"), W("in"), M(Slot::City, Obj), W(".")],
        relations: &[("GEN-AFF", Slot::Org, Slot::City)],
    },
    Template {
        pieces: &[M(Slot::Person, Subj), W("lives"), W("in"), M(Slot::City, Obj), W(".")],
        relations: &[("PHYS", Slot::Person, Slot::City)],
    },
    Template {
        pieces: &[
            M(Slot::Person, Subj),
            W("met"),
            M(Slot::Other, Obj),
            W("in"),
            M(Slot::City, Obj),
            W("."),
        ],
        relations: &[
            ("PER-SOC", Slot::Person, Slot::Other),
            ("PHYS", Slot::Person, Slot::City),
        ],
    },
    Template {
        pieces: &[
            M(Slot::Person, Subj),
            W("is"),
            W("a"),
            W("friend"),
            W("of"),
            M(Slot::Other, Obj),
            W("."),
        ],
        relations: &[("PER-SOC", Slot::Person, Slot::Other)],
    },
    Template {
        pieces: &[
            M(Slot::Org, Subj),
            W("hired"),
            M(Slot::Person, Obj),
            W("last"),
            W("year"),
            W("."),
        ],
        relations: &[("ORG-AFF", Slot::Person, Slot::Org)],
    },
    Template {
        pieces: &[M(Slot::Person, Subj), W("drives"), M(Slot::Vehicle, Obj), W(".")],
        relations: &[("ART", Slot::Person, Slot::Vehicle)],
    },
    Template {
        pieces: &[M(Slot::City, Subj), W("is"), W("part"), W("of"), M(Slot::Region, Obj), W(".")],
        relations: &[("PART-WHOLE", Slot::City, Slot::Region)],
    },
    Template {
        pieces: &[M(Slot::Vehicle, Subj), W("belongs"), W("to"), M(Slot::Person, Obj), W(".")],
        relations: &[("ART", Slot::Person, Slot::Vehicle)],
    },
];

struct Person {
    first: &'static str,
    last: &'static str,
    male: bool,
}

/// One realised mention: full span, head span, labels.
struct Realised {
    tokens: Vec<String>,
    head: (usize, usize),
    ner: Option<&'static str>,
    emd: &'static str,
}

struct EntityState {
    mentions: Vec<Span>,
}

struct DocBuilder {
    tokens: Vec<Vec<String>>,
    ner: Vec<TaggedSpan>,
    mentions: Vec<TaggedSpan>,
    relations: Vec<RelationInstance>,
    entities: Vec<EntityState>,
}

fn capitalise(word: &str) -> String {
    let mut c = word.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// Deterministic in `(seed, n_docs, config)`.
pub fn generate_synthetic_corpus(seed: u64, n_docs: usize, config: &SyntheticConfig) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|i| generate_document(format!("synth-{seed}-{i}"), config, &mut rng))
        .collect()
}

fn generate_document(doc_id: String, config: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Document {
    let male = rng.gen_bool(0.5);
    let pick_person = |rng: &mut ChaCha8Rng, male: bool, avoid: Option<&str>| loop {
        let first = if male {
            *MALE.choose(rng).unwrap()
        } else {
            *FEMALE.choose(rng).unwrap()
        };
        let last = *SURNAMES.choose(rng).unwrap();
        if Some(last) != avoid {
            break Person { first, last, male };
        }
    };
    let p1 = pick_person(rng, male, None);
    let p2 = if rng.gen_bool(config.second_person_prob) {
        Some(pick_person(rng, !male, Some(p1.last)))
    } else {
        None
    };
    let org = *ORGS.choose(rng).unwrap();
    let city = *CITIES.choose(rng).unwrap();
    let region = *REGIONS.choose(rng).unwrap();
    let vehicle = *VEHICLES.choose(rng).unwrap();

    // Entity indices: 0 = p1, 1 = p2, 2 = org, 3 = city, 4 = region, 5 = vehicle.
    let mut b = DocBuilder {
        tokens: Vec::new(),
        ner: Vec::new(),
        mentions: Vec::new(),
        relations: Vec::new(),
        entities: (0..6).map(|_| EntityState { mentions: Vec::new() }).collect(),
    };

    let lo = config.min_sentences.max(1);
    let hi = config.max_sentences.max(lo);
    let n_sent = rng.gen_range(lo..=hi);
    let usable: Vec<&Template> = TEMPLATES
        .iter()
        .filter(|t| {
            p2.is_some()
                || !t
                    .pieces
                    .iter()
                    .any(|p| matches!(p, Piece::Mention(Slot::Other, _)))
        })
        .collect();

    for s in 0..n_sent {
        if s > 0 && rng.gen_bool(config.filler_prob) {
            let filler = FILLERS.choose(rng).unwrap();
            let mut words: Vec<String> = filler.iter().map(|w| w.to_string()).collect();
            words[0] = capitalise(&words[0]);
            b.tokens.push(words);
            continue;
        }
        let template = *usable.choose(rng).unwrap();
        // Which person fills the Person slot; Other is the remaining one.
        let swap = p2.is_some() && rng.gen_bool(0.5);
        let entity_of = |slot: Slot| -> usize {
            match (slot, swap) {
                (Slot::Person, false) | (Slot::Other, true) => 0,
                (Slot::Person, true) | (Slot::Other, false) => 1,
                (Slot::Org, _) => 2,
                (Slot::City, _) => 3,
                (Slot::Region, _) => 4,
                (Slot::Vehicle, _) => 5,
            }
        };
        let offset: usize = b.tokens.iter().map(Vec::len).sum();
        let mut sent: Vec<String> = Vec::new();
        let mut heads: Vec<(Slot, Span)> = Vec::new();
        for (pos, piece) in template.pieces.iter().enumerate() {
            match piece {
                Piece::Word(w) => sent.push(w.to_string()),
                Piece::Mention(slot, role) => {
                    let ent = entity_of(*slot);
                    let first = b.entities[ent].mentions.is_empty();
                    let person = match ent {
                        0 => Some(&p1),
                        1 => p2.as_ref(),
                        _ => None,
                    };
                    let r = realise(ent, first, *role, person, org, city, region, vehicle, rng);
                    let start = offset + sent.len();
                    let mut words = r.tokens;
                    if pos == 0 {
                        words[0] = capitalise(&words[0]);
                    }
                    let end = start + words.len() - 1;
                    sent.extend(words);
                    let head = Span::new(start + r.head.0, start + r.head.1);
                    if let Some(label) = r.ner {
                        b.ner.push(TaggedSpan::new(start, end, label));
                    }
                    b.mentions.push(TaggedSpan::new(head.start, head.end, r.emd));
                    b.entities[ent].mentions.push(Span::new(start, end));
                    heads.push((*slot, head));
                }
            }
        }
        for (rel_type, a1, a2) in template.relations {
            let find = |slot: Slot| heads.iter().find(|(s, _)| *s == slot).map(|(_, h)| *h);
            if let (Some(arg1), Some(arg2)) = (find(*a1), find(*a2)) {
                b.relations.push(RelationInstance {
                    rel_type: rel_type.to_string(),
                    arg1,
                    arg2,
                });
            }
        }
        b.tokens.push(sent);
    }

    let clusters = b
        .entities
        .iter()
        .filter(|e| e.mentions.len() >= 2)
        .map(|e| e.mentions.clone())
        .collect();
    Document {
        doc_id,
        sentences: b.tokens,
        ner: b.ner,
        mentions: b.mentions,
        relations: b.relations,
        clusters,
    }
}

#[allow(clippy::too_many_arguments)]
fn realise(
    ent: usize,
    first: bool,
    role: Role,
    person: Option<&Person>,
    org: &[&str],
    city: &[&str],
    region: &str,
    vehicle: &'static str,
    rng: &mut ChaCha8Rng,
) -> Realised {
    let words = |ws: &[&str]| ws.iter().map(|w| w.to_string()).collect::<Vec<_>>();
    match ent {
        0 | 1 => {
            let p = person.expect("person slot without a person");
            let choice = if first { 0 } else { rng.gen_range(0..4) };
            match choice {
                0 => Realised {
                    tokens: words(&[p.first, p.last]),
                    head: (0, 1),
                    ner: Some("PER"),
                    emd: "PER",
                },
                1 => Realised {
                    tokens: words(&[p.last]),
                    head: (0, 0),
                    ner: Some("PER"),
                    emd: "PER",
                },
                2 => {
                    let pron = match (p.male, role) {
                        (true, Role::Subject) => "he",
                        (true, Role::Object) => "him",
                        (false, Role::Subject) => "she",
                        (false, Role::Object) => "her",
                    };
                    Realised {
                        tokens: words(&[pron]),
                        head: (0, 0),
                        ner: None,
                        emd: "PER",
                    }
                }
                _ => Realised {
                    tokens: words(&["the", if p.male { "man" } else { "woman" }]),
                    head: (1, 1),
                    ner: None,
                    emd: "PER",
                },
            }
        }
        2 => match if first { 0 } else { rng.gen_range(0..3) } {
            0 => Realised {
                tokens: words(org),
                head: (0, org.len() - 1),
                ner: Some("ORG"),
                emd: "ORG",
            },
            1 => Realised {
                tokens: words(&["the", "company"]),
                head: (1, 1),
                ner: None,
                emd: "ORG",
            },
            _ => Realised {
                tokens: words(&["it"]),
                head: (0, 0),
                ner: None,
                emd: "ORG",
            },
        },
        3 => {
            if first || rng.gen_bool(0.5) {
                Realised {
                    tokens: words(city),
                    head: (0, city.len() - 1),
                    ner: Some("GPE"),
                    emd: "GPE",
                }
            } else {
                Realised {
                    tokens: words(&["the", "city"]),
                    head: (1, 1),
                    ner: None,
                    emd: "GPE",
                }
            }
        }
        4 => Realised {
            tokens: words(&[region]),
            head: (0, 0),
            ner: Some("GPE"),
            emd: "GPE",
        },
        _ => Realised {
            tokens: words(&[if first { "a" } else { "the" }, vehicle]),
            head: (1, 1),
            ner: None,
            emd: "VEH",
        },
    }
}
