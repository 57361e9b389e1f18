use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{fact_sentence, GoldLink, World, WorldSpec};
use crate::seed;

pub(super) const MAX_ENTITIES: usize = 400;

const SYLLABLES: &[&str] = &[
    "ka", "lo", "mir", "ven", "tas", "rud", "ol", "bri", "zan", "fe", "gor", "ith", "pel", "sur", "dax", "qua", "ny",
    "mo", "tre", "vash",
];

const RELATIONS: &[&str] = &[
    "founder",
    "capital",
    "mentor",
    "rival",
    "birthplace",
    "author",
    "successor",
    "designer",
    "patron",
    "neighbor",
    "publisher",
    "director",
    "owner",
    "inventor",
    "coach",
    "sponsor",
];

const ADJECTIVES: &[&str] =
    &["faded", "annotated", "partial", "restored", "bound", "illustrated", "damaged", "copied", "sealed", "indexed"];

const NOUNS: &[&str] = &[
    "ledger",
    "map",
    "chronicle",
    "survey",
    "register",
    "almanac",
    "census",
    "manuscript",
    "catalogue",
    "letter",
    "deed",
    "diary",
];

const FILLERS: &[&str] = &[
    "The archive lists a {adj} {noun} from {year}.",
    "A {adj} {noun} was catalogued in {year}.",
    "Records from {year} mention a {adj} {noun}.",
    "One {noun} in the collection is described as {adj}.",
    "A {noun} dated {year} survives only as a {adj} copy.",
];

// Stream tags keep the generator's random streams independent of each other.
const STREAM_NAME: u64 = 1;
const STREAM_CHAIN: u64 = 2;
const STREAM_PAGE: u64 = 3;
const STREAM_SHUFFLE: u64 = 4;

fn stream(spec: &WorldSpec, salt: u64, tag: u64, idx: u64) -> ChaCha8Rng {
    seed::rng(seed::combine(&[spec.seed, salt, tag, idx]))
}

fn vocabulary() -> Vec<&'static str> {
    let mut v: Vec<&str> = Vec::new();
    v.extend(RELATIONS);
    v.extend(ADJECTIVES);
    v.extend(NOUNS);
    v.extend(FILLERS);
    v
}

fn gen_names(spec: &WorldSpec, salt: u64) -> Vec<String> {
    let vocab: Vec<String> = vocabulary().iter().map(|w| w.to_lowercase()).collect();
    let mut names: Vec<String> = Vec::with_capacity(spec.num_entities);
    for idx in 0..spec.num_entities {
        let mut rng = stream(spec, salt, STREAM_NAME, idx as u64);
        loop {
            let parts = rng.gen_range(2..=3);
            let raw: String = (0..parts).map(|_| *SYLLABLES.choose(&mut rng).expect("non-empty")).collect();
            let lower = raw.clone();
            let clashes = names.iter().any(|n| {
                let n = n.to_lowercase();
                n.contains(&lower) || lower.contains(&n)
            }) || vocab.iter().any(|w| w.contains(&lower));
            if !clashes {
                let mut c = raw.chars();
                let first = c.next().expect("non-empty").to_ascii_uppercase();
                names.push(std::iter::once(first).chain(c).collect());
                break;
            }
        }
    }
    names
}

fn page_text(rng: &mut ChaCha8Rng, fact: &str) -> String {
    let count = rng.gen_range(12..=16);
    let mut sentences: Vec<String> = (0..count)
        .map(|_| {
            FILLERS
                .choose(rng)
                .expect("non-empty")
                .replace("{adj}", ADJECTIVES.choose(rng).expect("non-empty"))
                .replace("{noun}", NOUNS.choose(rng).expect("non-empty"))
                .replace("{year}", &rng.gen_range(1700..2000).to_string())
        })
        .collect();
    let at = rng.gen_range(0..=sentences.len().min(3));
    sentences.insert(at, fact.to_string());
    sentences.join(" ")
}

struct DraftPage {
    keyword: String,
    text: String,
    gold_hop: Option<usize>,
}

fn draft(spec: &WorldSpec, salt: u64) -> World {
    let hops = spec.hop_depth;
    let names = gen_names(spec, salt);
    let chain: Vec<String> = names[..=hops].to_vec();
    let answer = chain[hops].clone();
    let non_answer: Vec<&String> = names.iter().filter(|n| **n != answer).collect();
    let off_chain: Vec<&String> = names[hops + 1..].iter().collect();

    let mut crng = stream(spec, salt, STREAM_CHAIN, 0);
    let relations: Vec<String> =
        (0..hops).map(|_| RELATIONS.choose(&mut crng).expect("non-empty").to_string()).collect();

    let mut drafts: Vec<DraftPage> = Vec::new();
    let mut page_no = 0u64;
    let mut next_rng = || {
        page_no += 1;
        stream(spec, salt, STREAM_PAGE, page_no)
    };

    for hop in 0..hops {
        let subject = &chain[hop];
        let mut rng = next_rng();
        let fact = fact_sentence(&relations[hop], subject, &chain[hop + 1]);
        drafts.push(DraftPage {
            keyword: subject.to_lowercase(),
            text: page_text(&mut rng, &fact),
            gold_hop: Some(hop),
        });
        let mut pool: Vec<&str> = RELATIONS.iter().copied().filter(|r| *r != relations[hop]).collect();
        pool.shuffle(&mut crng);
        for d in 0..spec.branching - 1 {
            let mut rng = next_rng();
            let rel = pool[d % pool.len()];
            let object = non_answer.choose(&mut rng).expect("at least one non-answer entity");
            let fact = fact_sentence(rel, subject, object);
            drafts.push(DraftPage {
                keyword: subject.to_lowercase(),
                text: page_text(&mut rng, &fact),
                gold_hop: None,
            });
        }
    }

    for _ in 0..spec.noise_pages {
        let mut rng = next_rng();
        let subject: String = match off_chain.choose(&mut rng) {
            Some(e) => (*e).clone(),
            None => NOUNS.choose(&mut rng).expect("non-empty").to_string(),
        };
        let rel = RELATIONS.choose(&mut rng).expect("non-empty");
        let object = non_answer.choose(&mut rng).expect("non-empty");
        let fact = fact_sentence(rel, &subject, object);
        drafts.push(DraftPage { keyword: subject.to_lowercase(), text: page_text(&mut rng, &fact), gold_hop: None });
    }

    let mut order: Vec<usize> = (0..drafts.len()).collect();
    order.shuffle(&mut stream(spec, salt, STREAM_SHUFFLE, 0));

    let mut pages = BTreeMap::new();
    let mut index: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut gold: Vec<Option<GoldLink>> = vec![None; hops];
    for (slot, &di) in order.iter().enumerate() {
        let id = format!("p{:03}", slot + 1);
        let d = &drafts[di];
        pages.insert(id.clone(), d.text.clone());
        index.entry(d.keyword.clone()).or_default().push(id.clone());
        if let Some(hop) = d.gold_hop {
            gold[hop] =
                Some(GoldLink { page_id: id, fact: fact_sentence(&relations[hop], &chain[hop], &chain[hop + 1]) });
        }
    }
    for ids in index.values_mut() {
        ids.sort();
    }

    let mut query = String::from("What is");
    for rel in relations.iter().rev() {
        query.push_str(&format!(" the {rel} of"));
    }
    query.push_str(&format!(" {}?", chain[0]));

    World {
        spec: *spec,
        query,
        gold_answer: answer,
        chain_entities: chain,
        relations,
        pages,
        index,
        gold_chain: gold.into_iter().map(|g| g.expect("every hop has a gold page")).collect(),
    }
}

fn well_formed(w: &World) -> bool {
    let answer = w.gold_answer.to_lowercase();
    let last_gold = &w.gold_chain.last().expect("hop_depth >= 1").page_id;
    let distractors_clean =
        w.pages.iter().filter(|(id, _)| *id != last_gold).all(|(_, t)| !t.to_lowercase().contains(&answer));
    let distinct: BTreeSet<&String> = w.chain_entities.iter().collect();
    distractors_clean && !w.query.to_lowercase().contains(&answer) && distinct.len() == w.chain_entities.len()
}

pub(super) fn build(spec: &WorldSpec) -> World {
    (0..1000u64).map(|salt| draft(spec, salt)).find(well_formed).expect("world generator converges")
}
