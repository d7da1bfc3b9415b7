//! Deterministic synthetic KB + question corpus.
//!
//! The generated world mimics the structure the model exploits:
//!
//! * entities belong to classes; each carries a broad frequent type (the
//!   class word) and a refined notable type, a few of which are rare;
//! * every predicate links two subject classes to one object class and is
//!   verbalized with a verb that depends on the subject's class, so the
//!   subject's class must be recovered from its KB embedding or context;
//! * half the predicates ask for the object with a type slot
//!   (`what city was <subj> born in ?`) that holds the object's notable type
//!   in some questions and a generic word in others; the other half never
//!   mention an answer type, and their objects' types never occur in any
//!   question;
//! * valid/test subjects are disjoint from training subjects.
//!
//! The KB also holds one class node per class and an `instance_of`
//! predicate tying every entity to its class (KB-only triples for TransE).

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kb::{EntityRecord, PredicateRecord, RawFact};

struct ClassSpec {
    key: &'static str,
    frequent: &'static str,
    notables: &'static [&'static str],
    generic: &'static str,
}

/// Classes whose notable types appear in typed questions.
const QUESTION_CLASSES: &[ClassSpec] = &[
    ClassSpec {
        key: "person",
        frequent: "person",
        notables: &["actor", "singer", "politician", "writer", "athlete", "painter"],
        generic: "individual",
    },
    ClassSpec {
        key: "location",
        frequent: "location",
        notables: &["city", "country", "state", "river", "island", "mountain"],
        generic: "place",
    },
    ClassSpec {
        key: "organization",
        frequent: "organization",
        notables: &["company", "university", "band", "team", "agency", "school"],
        generic: "entity",
    },
    ClassSpec {
        key: "film",
        frequent: "film",
        notables: &["drama", "comedy", "documentary", "thriller", "western", "musical"],
        generic: "picture",
    },
    ClassSpec {
        key: "book",
        frequent: "book",
        notables: &["novel", "biography", "textbook", "anthology", "memoir", "poem"],
        generic: "publication",
    },
    ClassSpec {
        key: "music",
        frequent: "recording",
        notables: &["album", "single", "soundtrack", "compilation", "symphony", "opera"],
        generic: "release",
    },
];

/// Object classes of the predicates that never carry an answer-type word.
const PLAIN_CLASSES: &[ClassSpec] = &[
    ClassSpec {
        key: "attribute",
        frequent: "attribute",
        notables: &["gender", "colour", "status"],
        generic: "",
    },
    ClassSpec {
        key: "time",
        frequent: "value",
        notables: &["date", "year", "period"],
        generic: "",
    },
];

const VERBS: &[&str] = &[
    "born", "located", "founded", "directed", "written", "released", "buried", "educated", "headquartered", "produced",
    "published", "recorded", "raised", "filmed", "set", "named", "owned", "composed", "created", "based", "honored",
    "started", "managed", "designed",
];
const PREPS: &[&str] = &["in", "by", "at", "from", "with", "for", "on", "after"];
const TOPICS: &[&str] = &[
    "origin", "membership", "founder", "director", "author", "release", "burial", "education", "headquarters", "producer",
    "publisher", "label", "residence", "setting", "namesake", "owner", "composer", "creator", "base", "award", "debut",
    "manager", "designer", "sponsor",
];
const PLAIN_WH: &[&str] = &["when", "how", "who", "where"];
const AUX: &[&str] = &["was", "is", "did"];
const SYLLABLES: &[&str] = &[
    "ka", "to", "mi", "ra", "zu", "ne", "lo", "vi", "sa", "de", "qu", "po", "fe", "gi", "ha", "ju", "xe", "bo", "ny", "wa",
    "tri", "mor", "pel", "dan", "sor", "kel",
];
/// Typed-slot probabilities, cycled over the typed predicates.
const TYPED_SLOT_RATES: &[f64] = &[0.7, 0.4, 0.8, 0.45];
const RARE_NOTABLE_RATE: f64 = 0.1;
const MEMBERSHIP_PREDICATE: &str = "type/instance_of";

#[derive(Clone, Debug)]
pub struct SynthCorpus {
    pub entities: Vec<EntityRecord>,
    pub predicates: Vec<PredicateRecord>,
    /// KB triples without questions (class membership plus every fact).
    pub kb_triples: Vec<RawFact>,
    pub train: Vec<RawFact>,
    pub valid: Vec<RawFact>,
    pub test: Vec<RawFact>,
}

struct PredicatePlan {
    record: PredicateRecord,
    subject_classes: [usize; 2],
    verbs: [&'static str; 2],
    object_class: usize,
    prep: &'static str,
    aux: &'static str,
    /// `None`: never typed; `Some(q)`: typed slot with probability `q`.
    typed: Option<f64>,
    wh: &'static str,
}

fn class(c: usize) -> &'static ClassSpec {
    if c < QUESTION_CLASSES.len() {
        &QUESTION_CLASSES[c]
    } else {
        &PLAIN_CLASSES[c - QUESTION_CLASSES.len()]
    }
}

fn pseudo_word(rng: &mut ChaCha8Rng) -> String {
    let n = rng.gen_range(2..=3);
    (0..n).map(|_| *SYLLABLES.choose(rng).unwrap()).collect()
}

/// Generates the corpus. Every class receives at least one entity, so the
/// entity count is `max(n_entities, 8)` plus the 8 class nodes.
pub fn synth_corpus(seed: u64, n_entities: usize, n_predicates: usize, n_facts: usize) -> SynthCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_classes = QUESTION_CLASSES.len() + PLAIN_CLASSES.len();
    let n_entities = n_entities.max(n_classes);

    // Entities: one in five belongs to a plain class.
    let mut entities = Vec::with_capacity(n_entities + n_classes);
    let mut entity_class = Vec::with_capacity(n_entities);
    let mut used_names = std::collections::HashSet::new();
    let rare_pool: Vec<String> = (0..24).map(|_| pseudo_word(&mut rng)).collect();
    for i in 0..n_entities {
        let c = if i < n_classes {
            i
        } else if i % 5 == 4 {
            QUESTION_CLASSES.len() + (i / 5) % PLAIN_CLASSES.len()
        } else {
            i % QUESTION_CLASSES.len()
        };
        let spec = class(c);
        let name = loop {
            let words = if rng.gen_bool(0.3) { 2 } else { 1 };
            let name: Vec<String> = (0..words).map(|_| pseudo_word(&mut rng)).collect();
            if used_names.insert(name.clone()) {
                break name;
            }
        };
        let notable = if c < QUESTION_CLASSES.len() && rng.gen_bool(RARE_NOTABLE_RATE) {
            rare_pool.choose(&mut rng).unwrap().clone()
        } else {
            spec.notables.choose(&mut rng).unwrap().to_string()
        };
        entities.push(EntityRecord {
            id: format!("m.{i:05}"),
            name,
            frequent_type: spec.frequent.split(' ').map(String::from).collect(),
            notable_type: vec![notable],
        });
        entity_class.push(c);
    }
    for c in 0..n_classes {
        entities.push(EntityRecord {
            id: format!("class.{}", class(c).key),
            name: vec![class(c).key.to_string(), "class".to_string()],
            frequent_type: vec!["type".to_string()],
            notable_type: vec!["type".to_string()],
        });
    }

    // Predicates alternate typed / plain.
    let mut plans = Vec::with_capacity(n_predicates);
    for i in 0..n_predicates {
        let mut subj: Vec<usize> = (0..QUESTION_CLASSES.len()).collect();
        subj.shuffle(&mut rng);
        let subject_classes = [subj[0], subj[1]];
        let typed = i % 2 == 0;
        let object_class = if typed {
            rng.gen_range(0..QUESTION_CLASSES.len())
        } else {
            QUESTION_CLASSES.len() + (i / 2) % PLAIN_CLASSES.len()
        };
        let mut verbs: Vec<&str> = VERBS.to_vec();
        verbs.shuffle(&mut rng);
        let topic = TOPICS[i % TOPICS.len()];
        let id = format!("{}/{}_{}", class(subject_classes[0]).key, topic, i);
        let ds_patterns = if rng.gen_bool(0.44) {
            vec![vec![verbs[0].to_string(), PREPS[i % PREPS.len()].to_string()]]
        } else {
            Vec::new()
        };
        let record = PredicateRecord {
            id,
            domain: vec![class(subject_classes[0]).frequent.to_string()],
            range: vec![class(object_class).frequent.to_string()],
            topic: vec![topic.to_string()],
            ds_patterns,
        };
        plans.push(PredicatePlan {
            record,
            subject_classes,
            verbs: [verbs[0], verbs[1]],
            object_class,
            prep: PREPS[i % PREPS.len()],
            aux: AUX[rng.gen_range(0..AUX.len())],
            typed: typed.then(|| TYPED_SLOT_RATES[(i / 2) % TYPED_SLOT_RATES.len()]),
            wh: PLAIN_WH[(i / 2) % PLAIN_WH.len()],
        });
    }

    // Subject pools: 70 / 15 / 15 per class by entity position.
    let split_of = |i: usize| match i % 20 {
        0..=13 => 0,
        14..=16 => 1,
        _ => 2,
    };
    let mut pools = vec![vec![Vec::new(); n_classes]; 3];
    let mut by_class = vec![Vec::new(); n_classes];
    for (i, &c) in entity_class.iter().enumerate() {
        pools[split_of(i)][c].push(i);
        by_class[c].push(i);
    }

    let n_train = (n_facts * 8).div_ceil(10);
    let n_valid = (n_facts - n_train) / 2;
    let mut splits = [Vec::new(), Vec::new(), Vec::new()];
    for k in 0..n_facts {
        let split = if k < n_train {
            0
        } else if k < n_train + n_valid {
            1
        } else {
            2
        };
        let plan = &plans[rng.gen_range(0..plans.len())];
        let which = rng.gen_range(0..2);
        let sc = plan.subject_classes[which];
        let pool = if pools[split][sc].is_empty() { &by_class[sc] } else { &pools[split][sc] };
        let s = *pool.choose(&mut rng).unwrap();
        let o = *by_class[plan.object_class].choose(&mut rng).unwrap();
        let subject = &entities[s];
        let object = &entities[o];

        let mut q: Vec<String> = Vec::new();
        match plan.typed {
            Some(rate) => {
                q.push("what".into());
                if rng.gen_bool(rate) {
                    q.extend(object.notable_type.iter().cloned());
                } else {
                    q.push(class(plan.object_class).generic.into());
                }
            }
            None => q.push(plan.wh.into()),
        }
        q.push(plan.aux.into());
        q.extend(subject.name.iter().cloned());
        q.push(plan.verbs[which].into());
        q.push(plan.prep.into());
        q.push("?".into());

        splits[split].push(RawFact {
            subject: subject.id.clone(),
            predicate: plan.record.id.clone(),
            object: object.id.clone(),
            question: q.join(" "),
        });
    }

    let mut kb_triples: Vec<RawFact> = entity_class
        .iter()
        .enumerate()
        .map(|(i, &c)| RawFact {
            subject: entities[i].id.clone(),
            predicate: MEMBERSHIP_PREDICATE.into(),
            object: format!("class.{}", class(c).key),
            question: String::new(),
        })
        .collect();
    for f in splits.iter().flatten() {
        kb_triples.push(RawFact {
            question: String::new(),
            ..f.clone()
        });
    }

    let mut predicates: Vec<PredicateRecord> = plans.into_iter().map(|p| p.record).collect();
    predicates.push(PredicateRecord {
        id: MEMBERSHIP_PREDICATE.into(),
        domain: vec![],
        range: vec!["type".into()],
        topic: vec!["instance".into()],
        ds_patterns: vec![],
    });

    let [train, valid, test] = splits;
    SynthCorpus {
        entities,
        predicates,
        kb_triples,
        train,
        valid,
        test,
    }
}
