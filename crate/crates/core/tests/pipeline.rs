use std::collections::BTreeMap;

use persona::benchgen::{generate_benchmark, GenConfig, StubLlm};
use persona::embed::{embed_biographies, HashingEmbedder};
use persona::eval::{aggregate, evaluate, render_report, ConstantModel, EvalCondition, EvalConfig, FewShot, RagContext};
use persona::domain::LanguageVariant;
use persona::index::StoreIndex;
use persona::ingest::{
    read_pageviews, read_tables, read_translations, run_pipeline, write_inputs, HeuristicTagger, IngestConfig,
    RejectionEntry, PAGEVIEWS_FILE, QID_MAP_FILE, TABLES_FILE, TRANSLATIONS_FILE,
};
use persona::domain::RecordRejection;
use persona::io::read_tsv_map;
use persona::retrieval::{PromptTemplate, RagConfig};
use persona::sampler::{sample_benchmark, SamplerConfig};
use persona::synth::{synthetic_tables, synthetic_world};

#[test]
fn tables_ingest_back_to_the_people_they_came_from() {
    let world = synthetic_world(5, 400, 9);
    let inputs = synthetic_tables(&world.records, 12, 9);
    let out = run_pipeline(&inputs, &IngestConfig::default(), &HeuristicTagger).unwrap();
    let mut expected = world.records.clone();
    expected.sort_by(|a, b| a.qid.cmp(&b.qid));
    assert_eq!(out.records, expected);
    assert_eq!(out.stats.tables, 12);

    let no_qid = out.rejections.iter().filter(|r| matches!(r.reason, RecordRejection::NoQid(_))).count();
    let zero = out.rejections.iter().filter(|r| r.reason == RecordRejection::ZeroPopularity).count();
    assert_eq!((no_qid, zero), (4, 4));
    assert!(out.rejections.iter().all(|r: &RejectionEntry| !r.name.is_empty()));
}

#[test]
fn inputs_survive_a_disk_round_trip() {
    let world = synthetic_world(3, 60, 2);
    let inputs = synthetic_tables(&world.records, 4, 2);
    let dir = tempfile::tempdir().unwrap();
    write_inputs(&inputs, dir.path()).unwrap();
    assert_eq!(read_tables(&dir.path().join(TABLES_FILE)).unwrap(), inputs.tables);
    assert_eq!(read_tsv_map(&dir.path().join(QID_MAP_FILE)).unwrap(), inputs.qid_map);
    assert_eq!(read_pageviews(&dir.path().join(PAGEVIEWS_FILE)).unwrap(), inputs.pageviews);
    assert_eq!(read_translations(&dir.path().join(TRANSLATIONS_FILE)).unwrap(), inputs.translations);
}

#[test]
fn library_pipeline_end_to_end() {
    let world = synthetic_world(6, 300, 4);
    let inputs = synthetic_tables(&world.records, 10, 4);
    let db = run_pipeline(&inputs, &IngestConfig::default(), &HeuristicTagger).unwrap();
    let embedder = HashingEmbedder::new(64, 0);
    let table = embed_biographies(&db.records, &embedder).unwrap();
    let index = StoreIndex::build(db.records.clone(), &table, None).unwrap();
    let manifest = sample_benchmark(&db.records, &world.population, &db.coverage, &embedder, &SamplerConfig::default())
        .unwrap();
    assert!(!manifest.is_empty());
    let records: BTreeMap<String, _> = db.records.iter().map(|r| (r.qid.clone(), r.clone())).collect();
    let bench = generate_benchmark(&manifest, &records, &StubLlm, &GenConfig::default()).unwrap();
    assert!(bench.failures.is_empty());
    assert_eq!(bench.items.len(), 12 * manifest.len());

    let by_qid = manifest.iter().map(|m| (m.qid.clone(), m.clone())).collect();
    let ctx = RagContext {
        index: &index,
        embedder: &embedder,
        config: RagConfig::default(),
        template: PromptTemplate::default(),
        max_context: 3,
        manifest: &by_qid,
    };
    let cond = EvalCondition { rag: true, image: false, variant: LanguageVariant::English, model: "a".into() };
    let outs = evaluate(&bench.items, &cond, &ConstantModel("A".into()), Some(&ctx), &FewShot::default(), &EvalConfig::default())
        .unwrap();
    assert_eq!(outs.len(), 6 * manifest.len());
    assert!(outs.iter().all(|o| !o.rag_fallback));
    let cells = aggregate(&outs, &by_qid).unwrap();
    let (csv, _) = render_report(&cells);
    assert!(csv.starts_with("bloom,variant,tier,rag,image,n,accuracy\n"));
}
