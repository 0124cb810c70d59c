use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use replykit_core::corpus::normalize_text;
use replykit_core::encoder::{DualEncoder, Hyperparams, Side, Vocabulary};
use replykit_core::templates::*;

/// `n` points in `dim` dimensions around `centers` random means.
pub fn mixture(n: usize, dim: usize, centers: usize, seed: u64) -> Points {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..centers)
        .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let noise = Normal::new(0.0, 0.25).unwrap();
    let mut data = Vec::with_capacity(n * dim);
    for _ in 0..n {
        let m = &means[rng.random_range(0..centers)];
        data.extend(m.iter().map(|&v| v + noise.sample(&mut rng)));
    }
    Points::new(dim, data)
}

#[test]
fn minibatch_inertia_close_to_lloyd() {
    let (mut mb, mut full) = (0.0, 0.0);
    for seed in 0..5 {
        let points = mixture(10_000, 64, 60, 40 + seed);
        let cfg = KMeansConfig {
            seed,
            ..KMeansConfig::desk(seed)
        };
        mb += minibatch_kmeans(&points, &cfg).unwrap().inertia;
        full += lloyd(&points, &cfg).unwrap().inertia;
    }
    assert!(mb <= 1.25 * full, "mini-batch {mb} vs Lloyd {full}");
}

#[test]
fn clustering_is_deterministic() {
    let points = mixture(2_000, 8, 10, 1);
    let cfg = KMeansConfig {
        k: 10,
        ..KMeansConfig::desk(3)
    };
    assert_eq!(
        minibatch_kmeans(&points, &cfg).unwrap(),
        minibatch_kmeans(&points, &cfg).unwrap()
    );
}

fn small_model() -> DualEncoder {
    let text = "it will be delivered DATE . yes i 'm here . sorry for the delay";
    let vocab = Vocabulary::from_tokens(normalize_text(text));
    let hyper = Hyperparams {
        embedding_dim: 8,
        lstm_dim: 8,
        mlp_hidden: 8,
        ..Hyperparams::desk()
    };
    DualEncoder::new(vocab, hyper, 5).unwrap()
}

fn answers(texts: &[&str]) -> Vec<Vec<String>> {
    texts.iter().map(|t| normalize_text(t)).collect()
}

#[test]
fn embedding_rows_follow_input_order() {
    let model = small_model();
    let a = answers(&[
        "yes i 'm here .",
        "",
        "it will be delivered DATE .",
        "yes i 'm here .",
    ]);
    let e = embed_answers(&a, &model).unwrap();
    assert_eq!(e.kept, vec![0, 2, 3]);
    assert_eq!(e.dropped, vec![1]);
    assert_eq!(e.points.len(), 3);
    assert_eq!(e.points.row(0), e.points.row(2));
    assert_ne!(e.points.row(0), e.points.row(1));
    let one = embed_answers(&a[..1], &model).unwrap();
    assert_eq!(one.points.len(), 1);
    assert_eq!(one.points.dim, model.hidden_dim());
    assert!(matches!(
        embed_answers(&a[1..2], &model),
        Err(TemplateError::EmptyAnswers)
    ));
}

/// A pool of `n` single-token templates embedded by `model`.
fn pool_of(model: &DualEncoder, n: usize) -> TemplatePool {
    let words = [
        "it",
        "will",
        "be",
        "delivered",
        "yes",
        "here",
        "sorry",
        "delay",
    ];
    let templates = (0..n)
        .map(|i| {
            let text = vec![
                words[i % words.len()].to_string(),
                words[(i / 8) % words.len()].to_string(),
            ];
            Template {
                id: i as u32,
                embedding: model.encode(Side::Answer, &text).unwrap(),
                text,
                cluster_size: 1,
                active: true,
            }
        })
        .collect();
    TemplatePool {
        model_hash: "m1".into(),
        k: n,
        templates,
        created: None,
    }
}

#[test]
fn curation_keeps_drops_and_edits() {
    let model = small_model();
    let pool = pool_of(&model, 500);
    assert_eq!(curate(&pool, &[], &model, "m1").unwrap(), pool);

    let file: String = (200..500).map(|i| format!("drop {i}\n")).collect();
    let curated = curate(&pool, &parse_curation(&file).unwrap(), &model, "m1").unwrap();
    assert_eq!(curated.active_count(), 200);
    assert_eq!(curated.templates.len(), 500);

    let edited = curate(
        &pool,
        &parse_curation("edit 3\tSorry for the delay.").unwrap(),
        &model,
        "m1",
    )
    .unwrap();
    let t = edited.get(3).unwrap();
    assert_eq!(t.text, normalize_text("sorry for the delay ."));
    assert_ne!(t.embedding, pool.get(3).unwrap().embedding);
    assert_eq!(t.embedding, model.encode(Side::Answer, &t.text).unwrap());

    let same = pool.get(4).unwrap().text_string();
    let unchanged = curate(&pool, &[CurationDecision::Edit(4, same)], &model, "m1").unwrap();
    assert_eq!(
        unchanged.get(4).unwrap().embedding,
        pool.get(4).unwrap().embedding
    );

    let revived = curate(&curated, &[CurationDecision::Keep(300)], &model, "m1").unwrap();
    assert_eq!(revived.active_count(), 201);

    assert!(matches!(
        curate(&pool, &[CurationDecision::Drop(900)], &model, "m1"),
        Err(TemplateError::UnknownTemplateId(900))
    ));
    assert!(matches!(
        curate(
            &pool,
            &[CurationDecision::Edit(1, " ".into())],
            &model,
            "m1"
        ),
        Err(TemplateError::EmptyTemplate(1))
    ));
    assert!(matches!(
        curate(&pool, &[], &model, "other"),
        Err(TemplateError::ModelMismatch { .. })
    ));
}

#[test]
fn pool_verification() {
    let model = small_model();
    let mut pool = pool_of(&model, 20);
    assert!(verify_pool(&pool, &model, "m1").unwrap() <= EMBEDDING_TOLERANCE);
    pool.templates[7].embedding[0] += 1e-3;
    assert!(matches!(
        verify_pool(&pool, &model, "m1"),
        Err(TemplateError::EmbeddingDrift { id: 7, .. })
    ));
    // Inactive templates are not checked.
    pool.templates[7].active = false;
    assert!(verify_pool(&pool, &model, "m1").is_ok());
    assert!(matches!(
        verify_pool(&pool, &model, "m2"),
        Err(TemplateError::ModelMismatch { .. })
    ));
}

#[test]
fn pool_file_round_trip_is_bitwise() {
    let model = small_model();
    let pool = pool_of(&model, 30);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pool.json");
    pool.save(&path).unwrap();
    let back = TemplatePool::load(&path).unwrap();
    assert_eq!(back, pool);
    for (a, b) in back.templates.iter().zip(&pool.templates) {
        let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a.embedding), bits(&b.embedding));
    }
    assert_eq!(std::fs::read(&path).unwrap(), pool.to_json().unwrap());
}

#[test]
fn extraction_pipeline_on_untrained_model() {
    let model = small_model();
    let texts = answers(&[
        "yes i 'm here .",
        "it will be delivered DATE .",
        "sorry for the delay .",
        "yes i 'm here .",
        "it will be delivered .",
        "sorry .",
    ]);
    let cfg = KMeansConfig {
        k: 3,
        batch_size: 4,
        max_iters: 50,
        seed: 2,
        tolerance: 1e-6,
    };
    let pool = extract_templates(&texts, &model, "m1", &cfg).unwrap();
    assert_eq!(pool.k, 3);
    assert!(!pool.templates.is_empty() && pool.templates.len() <= 3);
    assert_eq!(
        pool.templates.iter().map(|t| t.cluster_size).sum::<usize>(),
        texts.len()
    );
    verify_pool(&pool, &model, "m1").unwrap();
    assert_eq!(pool, extract_templates(&texts, &model, "m1", &cfg).unwrap());
}
