//! Synthetic fixtures: people, whole worlds, raw source tables, homonym and
//! face retrieval sets. Everything is a pure function of its seed.

use std::collections::BTreeMap;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::domain::{country_language, nationality_names, normalize_nationality, BirthDate, PersonRecord};
use crate::embed::{EmbedError, EmbeddingTable, FaceEmbedder, StubFaceEmbedder, TextEmbedder};
use crate::ingest::{Column, IngestInputs, SourceTable};

pub const WORLD_COUNTRIES: [&str; 20] = [
    "FR", "DE", "IT", "ES", "PL", "JP", "CN", "BR", "IN", "NG", "EG", "MX", "RU", "US", "GB", "SE", "TR", "KR", "AR", "KE",
];

const FIRST: [&str; 40] = [
    "Anna", "Bruno", "Clara", "Dmitri", "Elena", "Farid", "Greta", "Hiro", "Ines", "Jonas", "Kemal", "Lena", "Marco",
    "Nadia", "Oskar", "Paula", "Quentin", "Rosa", "Sven", "Tariq", "Ulla", "Viktor", "Wanda", "Xavier", "Yara", "Zeno",
    "Amara", "Boris", "Chen", "Dalia", "Emil", "Fatima", "Gustav", "Hana", "Igor", "Julia", "Kofi", "Leila", "Mateo",
    "Noor",
];

const SYLLABLES: [&str; 20] = [
    "Bar", "Cel", "Dor", "Fen", "Gal", "Hol", "Ist", "Jor", "Kal", "Lun", "Mer", "Nov", "Ost", "Pel", "Quin", "Ros",
    "Sar", "Tal", "Ver", "Wen",
];

const OCCUPATIONS: [&str; 16] = [
    "painter", "physicist", "poet", "composer", "architect", "chemist", "novelist", "sculptor", "philosopher",
    "mathematician", "engineer", "actor", "footballer", "astronomer", "diplomat", "botanist",
];

const TOPICS: [&str; 16] = [
    "river landscapes", "crystal lattices", "sonnets", "symphonies", "bridges", "dyes", "family sagas", "marble",
    "ethics", "prime numbers", "steam engines", "comedy", "tactics", "comets", "treaties", "orchids",
];

/// Distinct two-token name for every `i < 320_000`.
pub fn person_name(i: usize) -> String {
    let j = i / FIRST.len();
    let surname = format!(
        "{}{}{}",
        SYLLABLES[j % 20],
        SYLLABLES[(j / 20) % 20].to_lowercase(),
        SYLLABLES[(j / 400) % 20].to_lowercase()
    );
    format!("{} {}", FIRST[i % FIRST.len()], surname)
}

pub fn qid_for(i: usize) -> String {
    format!("Q{}", 100_000 + i)
}

/// Primary English name of a country code in the shipped table.
pub fn country_name(code: &str) -> String {
    static FIRST_NAME: OnceLock<BTreeMap<&'static str, &'static str>> = OnceLock::new();
    let table = FIRST_NAME.get_or_init(|| {
        let mut m = BTreeMap::new();
        for n in nationality_names() {
            if let Some(c) = normalize_nationality(n) {
                m.entry(c).or_insert(n);
            }
        }
        m
    });
    table.get(code).map_or_else(|| code.to_string(), |n| n.to_string())
}

/// One plausible person of `country`; identical for identical `(i, rng state)`.
pub fn synthetic_person(i: usize, country: &str, rng: &mut ChaCha8Rng) -> PersonRecord {
    let qid = qid_for(i);
    let name = person_name(i);
    let year = rng.random_range(1500..=2000);
    let birth_date = BirthDate { year, month: Some(rng.random_range(1..=12)), day: Some(rng.random_range(1..=28)) };
    let birthplace = format!("{}port", SYLLABLES[rng.random_range(0..SYLLABLES.len())]);
    let occupation = OCCUPATIONS[rng.random_range(0..OCCUPATIONS.len())];
    let topic = TOPICS[rng.random_range(0..TOPICS.len())];
    let age = rng.random_range(20..60);
    let biography = format!(
        "{name} was a {} {occupation} born in {year} in {birthplace}. Their work on {topic} became famous when they were aged {age}.",
        country_name(country)
    );
    let popularity = 10f64.powf(rng.random_range(0.0..6.0)) as u64 + 1;
    let image_urls = if rng.random_bool(0.5) { vec![format!("https://images.example.org/{qid}.jpg")] } else { vec![] };
    let mut names = BTreeMap::from([("en".to_string(), name.clone())]);
    if let Some(lang) = country_language(country).filter(|l| *l != "en") {
        names.insert(lang.to_string(), name);
    }
    PersonRecord {
        qid,
        names,
        biography,
        birth_date,
        birthplace,
        nationality: country.to_string(),
        popularity,
        image_urls,
    }
}

/// People with a population table whose shares sum to 1.
#[derive(Debug, Clone)]
pub struct World {
    pub records: Vec<PersonRecord>,
    pub population: BTreeMap<String, f64>,
}

/// `people` spread over the first `countries` of [`WORLD_COUNTRIES`] roughly by
/// population share. The last country is kept at 6 people, below the
/// per-country minimum, whenever there is more than one country.
pub fn synthetic_world(countries: usize, people: usize, seed: u64) -> World {
    assert!((1..=WORLD_COUNTRIES.len()).contains(&countries), "between 1 and 20 countries");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let codes = &WORLD_COUNTRIES[..countries];
    let weights: Vec<f64> =
        (0..countries).map(|c| if c == 0 { 20.0 } else { rng.random_range(0.5..4.0) }).collect();
    let total: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / total).collect();

    let mut counts: Vec<usize> = shares.iter().map(|s| (s * people as f64).floor() as usize).collect();
    let mut c = 0;
    while counts.iter().sum::<usize>() < people {
        counts[c % countries] += 1;
        c += 1;
    }
    if countries > 1 && people > 6 {
        let last = countries - 1;
        let surplus = counts[last].saturating_sub(6);
        counts[last] -= surplus;
        counts[0] += surplus;
    }

    let mut records = Vec::with_capacity(people);
    let mut i = 0;
    for (code, n) in codes.iter().zip(&counts) {
        for _ in 0..*n {
            records.push(synthetic_person(i, code, &mut rng));
            i += 1;
        }
    }
    let population = codes.iter().map(|c| c.to_string()).zip(shares).collect();
    World { records, population }
}

struct Schema {
    person: &'static str,
    birth_date: &'static str,
    birthplace: &'static str,
    nationality: &'static str,
    biography: &'static str,
    image: &'static str,
    extra: &'static str,
}

const SCHEMAS: [Schema; 3] = [
    Schema {
        person: "author",
        birth_date: "author_birth_date",
        birthplace: "author_birthplace",
        nationality: "author_nationality",
        biography: "author_biography",
        image: "author_image",
        extra: "title",
    },
    Schema {
        person: "full_name",
        birth_date: "date_of_birth",
        birthplace: "place_of_birth",
        nationality: "citizenship",
        biography: "description",
        image: "photo",
        extra: "rank",
    },
    // no header pattern: found by the PERSON share of its cells
    Schema {
        person: "name",
        birth_date: "born",
        birthplace: "hometown",
        nationality: "country",
        biography: "summary",
        image: "picture",
        extra: "score",
    },
];

struct Mention {
    name: String,
    birth_date: String,
    birthplace: String,
    nationality: String,
    biography: String,
    image: String,
}

impl Mention {
    fn of(r: &PersonRecord, use_code: bool) -> Self {
        Self {
            name: r.names["en"].clone(),
            birth_date: r.birth_date.to_string(),
            birthplace: r.birthplace.clone(),
            nationality: if use_code { r.nationality.clone() } else { country_name(&r.nationality) },
            biography: r.biography.clone(),
            image: r.image_urls.first().cloned().unwrap_or_default(),
        }
    }
}

/// Raw inputs whose ingestion reproduces `people` exactly.
///
/// Each person is mentioned two or three times across `n_tables` tables; a
/// third mention carries a conflicting birthplace that the modal vote must
/// outvote. `people.len() / 100` extra names have no Q-ID and as many extra
/// Q-IDs have zero page views, so both rejection paths are exercised.
pub fn synthetic_tables(people: &[PersonRecord], n_tables: usize, seed: u64) -> IngestInputs {
    assert!(n_tables >= 1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mentions = Vec::new();
    let mut inputs = IngestInputs::default();
    for (i, r) in people.iter().enumerate() {
        let copies = 2 + i % 2;
        for c in 0..copies {
            let mut m = Mention::of(r, rng.random_bool(0.3));
            if c == 2 {
                m.birthplace = format!("{} District", r.birthplace);
            }
            mentions.push(m);
        }
        inputs.qid_map.insert(r.names["en"].clone(), r.qid.clone());
        inputs.pageviews.insert(r.qid.clone(), r.popularity);
        let translated: BTreeMap<String, String> =
            r.names.iter().filter(|(l, _)| l.as_str() != "en").map(|(l, n)| (l.clone(), n.clone())).collect();
        if !translated.is_empty() {
            inputs.translations.insert(r.qid.clone(), translated);
        }
    }
    let extras = people.len() / 100;
    for e in 0..extras {
        let mut ghost = synthetic_person(900_000 + e, "FR", &mut rng);
        mentions.push(Mention::of(&ghost, false));
        ghost = synthetic_person(910_000 + e, "FR", &mut rng);
        mentions.push(Mention::of(&ghost, false));
        inputs.qid_map.insert(ghost.names["en"].clone(), ghost.qid.clone());
        inputs.pageviews.insert(ghost.qid.clone(), 0);
    }
    mentions.shuffle(&mut rng);

    let mut buckets: Vec<Vec<Mention>> = (0..n_tables).map(|_| Vec::new()).collect();
    for (i, m) in mentions.into_iter().enumerate() {
        buckets[i % n_tables].push(m);
    }
    inputs.tables = buckets
        .into_iter()
        .enumerate()
        .map(|(t, rows)| {
            let s = &SCHEMAS[t % SCHEMAS.len()];
            let col = |header: &str, f: &dyn Fn(&Mention) -> String| Column {
                header: header.to_string(),
                cells: rows.iter().map(f).collect(),
                fk: false,
            };
            SourceTable {
                name: format!("table_{t:03}"),
                columns: vec![
                    col(s.extra, &|_| (t * 7 % 100).to_string()),
                    col(s.person, &|m| m.name.clone()),
                    col(s.birth_date, &|m| m.birth_date.clone()),
                    col(s.birthplace, &|m| m.birthplace.clone()),
                    col(s.nationality, &|m| m.nationality.clone()),
                    col(s.biography, &|m| m.biography.clone()),
                    col(s.image, &|m| m.image.clone()),
                ],
            }
        })
        .collect();
    inputs
}

/// A retrieval query with its expected answer.
#[derive(Debug, Clone, PartialEq)]
pub struct HomonymCase {
    pub name: String,
    pub nationality: String,
    pub birth_year: i32,
    pub expected: String,
}

#[derive(Debug, Clone)]
pub struct HomonymFixture {
    pub records: Vec<PersonRecord>,
    pub cases: Vec<HomonymCase>,
}

pub const HOMONYM_GROUPS: usize = 20;
pub const HOMONYM_GROUP_SIZE: usize = 3;

/// 200 people: 20 names shared by three people each (distinct nationality,
/// birth years 150 years apart) and 140 unique names. One case per shared-name
/// person, queried a few years off the true birth year.
pub fn homonym_fixture(seed: u64) -> HomonymFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(200);
    let mut cases = Vec::new();
    for g in 0..HOMONYM_GROUPS {
        for m in 0..HOMONYM_GROUP_SIZE {
            let country = WORLD_COUNTRIES[(g + 7 * m) % WORLD_COUNTRIES.len()];
            let mut r = synthetic_person(g * HOMONYM_GROUP_SIZE + m, country, &mut rng);
            let shared = person_name(50_000 + g);
            let year = 1600 + 150 * m as i32 + rng.random_range(0..40);
            r.biography = r
                .biography
                .replace(&r.names["en"], &shared)
                .replace(&format!("born in {}", r.birth_date.year), &format!("born in {year}"));
            r.birth_date = BirthDate::year(year);
            for n in r.names.values_mut() {
                *n = shared.clone();
            }
            cases.push(HomonymCase {
                name: shared,
                nationality: country.to_string(),
                birth_year: year + rng.random_range(-10..=10),
                expected: r.qid.clone(),
            });
            records.push(r);
        }
    }
    let start = records.len();
    for i in start..200 {
        let country = WORLD_COUNTRIES[i % WORLD_COUNTRIES.len()];
        records.push(synthetic_person(i, country, &mut rng));
    }
    HomonymFixture { records, cases }
}

/// Records with biography and face embeddings.
#[derive(Debug, Clone)]
pub struct FaceFixture {
    pub records: Vec<PersonRecord>,
    pub biography: EmbeddingTable,
    pub face: EmbeddingTable,
}

/// `n` people over five countries, each with a stub face vector derived from
/// the bytes `face:<qid>`.
pub fn face_fixture(n: usize, dim: usize, text: &dyn TextEmbedder, seed: u64) -> Result<FaceFixture, EmbedError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records: Vec<PersonRecord> =
        (0..n).map(|i| synthetic_person(i, WORLD_COUNTRIES[i % 5], &mut rng)).collect();
    let faces = StubFaceEmbedder { dim, seed };
    let mut face = EmbeddingTable::new(dim);
    for r in &records {
        face.insert(r.qid.clone(), faces.embed(format!("face:{}", r.qid).as_bytes())?)?;
    }
    let biography = crate::embed::embed_biographies(&records, text)?;
    Ok(FaceFixture { records, biography, face })
}
