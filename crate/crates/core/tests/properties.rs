use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;

use persona::benchgen::{parse_items, to_wire_json, BenchmarkItem};
use persona::domain::{BirthDate, BloomLevel, EmbeddingVector, LanguageVariant, PersonRecord, PopularityTier};
use persona::embed::EmbeddingTable;
use persona::eval::{grade, parse_choice, EvalCondition};
use persona::index::{Channel, StoreIndex};
use persona::ingest::modal;
use persona::sampler::{cluster_count, kmeans, quantize_year, tier_split};

fn person(i: usize, pop: u64) -> PersonRecord {
    PersonRecord {
        qid: format!("Q{i}"),
        names: [("en".to_string(), format!("Person {i}"))].into(),
        biography: format!("Biography {i}."),
        birth_date: BirthDate::year(1900),
        birthplace: "Town".into(),
        nationality: "FR".into(),
        popularity: pop,
        image_urls: vec![],
    }
}

fn phrase() -> impl Strategy<Value = String> {
    "[a-z]{1,8}( [a-z]{1,8}){0,3}"
}

fn item_set() -> impl Strategy<Value = Vec<BenchmarkItem>> {
    let one = (phrase(), prop::collection::btree_set(phrase(), 4), 0..4usize);
    prop::collection::vec(one, 12).prop_map(|parts| {
        let keys = BloomLevel::ALL.into_iter().flat_map(|l| LanguageVariant::ALL.into_iter().map(move |v| (l, v)));
        keys.zip(parts)
            .map(|((bloom, variant), (question, options, answer_index))| BenchmarkItem {
                subject: "Q1".into(),
                bloom,
                variant,
                question,
                options: options.into_iter().collect(),
                answer_index,
                uses_image: false,
                image_url: None,
            })
            .collect()
    })
}

proptest! {
    #[test]
    fn quantized_years_are_nearby_multiples_of_fifty(y in -100_000i32..100_000) {
        let q = quantize_year(y);
        prop_assert_eq!(q.rem_euclid(50), 0);
        prop_assert!((q - y).abs() <= 25);
        prop_assert_eq!(quantize_year(q), q);
    }

    #[test]
    fn cluster_count_is_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (kl, kh) = (cluster_count(lo).unwrap(), cluster_count(hi).unwrap());
        prop_assert!(kl >= 1 && kl <= kh && kh <= 6);
        prop_assert_eq!(kl, (5.0 * lo + 0.01).ceil() as usize);
    }

    #[test]
    fn tiers_partition_every_country(pops in prop::collection::vec(0u64..50, 1..200), k in 1usize..7) {
        let records: Vec<PersonRecord> = pops.iter().enumerate().map(|(i, &p)| person(i, p)).collect();
        let refs: Vec<&PersonRecord> = records.iter().collect();
        let split = tier_split(&refs, k);
        let mut seen = BTreeSet::new();
        for t in PopularityTier::ALL {
            for q in split.tier(t) {
                prop_assert!(seen.insert(q.clone()));
            }
        }
        prop_assert_eq!(seen.len(), records.len());
        let n = records.len();
        prop_assert_eq!(split.high.len(), (5 * k).min(n));
        prop_assert_eq!(split.high.len() + split.medium.len(), (3 * n).div_ceil(4).max((5 * k).min(n)));
        // nobody in a lower tier is more popular than anyone above
        let pop = |q: &String| records.iter().find(|r| &r.qid == q).unwrap().popularity;
        let min_high = split.high.iter().map(pop).min();
        let max_low = split.low.iter().chain(&split.medium).map(pop).max();
        if let (Some(h), Some(l)) = (min_high, max_low) {
            prop_assert!(h >= l);
        }
    }

    #[test]
    fn kmeans_inertia_never_rises(
        points in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 2..60),
        k in 1usize..6,
        seed in any::<u64>(),
    ) {
        let k = k.min(points.len());
        let fit = kmeans(&points, k, seed, 50, 0.0).unwrap();
        prop_assert_eq!(fit.assignments.len(), points.len());
        prop_assert!(fit.assignments.iter().all(|&a| a < k));
        for w in fit.inertia_history.windows(2) {
            prop_assert!(w[1] <= w[0]);
        }
        prop_assert_eq!(kmeans(&points, k, seed, 50, 0.0).unwrap(), fit);
    }

    #[test]
    fn modal_picks_the_smallest_most_frequent(mut values in prop::collection::vec(0u8..6, 1..30), seed in any::<u64>()) {
        let mut counts: BTreeMap<u8, usize> = BTreeMap::new();
        for v in &values {
            *counts.entry(*v).or_default() += 1;
        }
        let max = *counts.values().max().unwrap();
        let want = counts.iter().filter(|(_, &n)| n == max).map(|(v, _)| *v).min();
        prop_assert_eq!(modal(values.iter().copied()), want);
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(values.as_mut_slice(), &mut rng);
        prop_assert_eq!(modal(values), want);
    }

    #[test]
    fn wire_json_round_trips(items in item_set()) {
        let wire = to_wire_json(&items);
        let parsed = parse_items(&format!("Here you go:\n{wire}\nDone."), "Q1").unwrap();
        prop_assert_eq!(&parsed, &items);
        prop_assert_eq!(to_wire_json(&parsed), wire);
    }

    #[test]
    fn grading_is_pure(reply in ".{0,40}", answer in 0usize..4) {
        let item = BenchmarkItem {
            subject: "Q1".into(),
            bloom: BloomLevel::Applying,
            variant: LanguageVariant::English,
            question: "q".into(),
            options: vec!["a".into(), "b".into(), "c".into(), "d".into()],
            answer_index: answer,
            uses_image: false,
            image_url: None,
        };
        let cond = EvalCondition { rag: false, image: false, variant: LanguageVariant::English, model: "m".into() };
        let first = grade(&reply, &item, &cond);
        prop_assert_eq!(&grade(&reply, &item, &cond), &first);
        prop_assert_eq!(first.correct, parse_choice(&reply) == Some(answer));
        prop_assert!(first.choice.is_none_or(|c| c < 4));
    }

    #[test]
    fn normalized_vectors_have_unit_norm(values in prop::collection::vec(-1e3f64..1e3, 1..64)) {
        if let Ok(v) = EmbeddingVector::normalized(values) {
            prop_assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn knn_is_sorted_and_bounded(
        vecs in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 4), 1..40),
        query in prop::collection::vec(-1.0f64..1.0, 4),
        k in 1usize..50,
    ) {
        let Ok(q) = EmbeddingVector::normalized(query) else { return Ok(()) };
        let mut table = EmbeddingTable::new(4);
        let mut records = Vec::new();
        for (i, v) in vecs.into_iter().enumerate() {
            let Ok(v) = EmbeddingVector::normalized(v) else { continue };
            table.insert(format!("Q{i}"), v).unwrap();
            records.push(person(i, 1));
        }
        let n = records.len();
        let index = StoreIndex::build(records, &table, None).unwrap();
        prop_assert!(index.knn(Channel::Biography, &q, 0).is_err());
        let hits = index.knn(Channel::Biography, &q, k).unwrap();
        prop_assert_eq!(hits.len(), k.min(n));
        for w in hits.windows(2) {
            prop_assert!(w[0].score > w[1].score || (w[0].score == w[1].score && w[0].qid < w[1].qid));
        }
    }
}
