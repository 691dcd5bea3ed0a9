use medseq::embeddings::{cosine, init_uniform, train_skipgram, uniform_bound, NegativeSampler, SkipGramConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn sampler_frequencies_follow_smoothed_unigram() {
    let counts: Vec<u64> = vec![0, 0, 500, 200, 120, 80, 40, 30, 15, 8, 4, 3];
    let sampler = NegativeSampler::new(&counts);
    let weights: Vec<f64> = counts.iter().map(|&c| (c as f64).powf(0.75)).collect();
    let total: f64 = weights.iter().sum();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let draws = 1_000_000;
    let mut seen = vec![0u64; counts.len()];
    for _ in 0..draws {
        seen[sampler.sample(&mut rng)] += 1;
    }
    for (i, w) in weights.iter().enumerate() {
        let expected = w / total;
        let observed = seen[i] as f64 / draws as f64;
        assert!((observed - expected).abs() < 0.02, "word {i}: {observed} vs {expected}");
        assert!((sampler.probabilities()[i] - expected).abs() < 1e-12);
    }
}

#[test]
fn uniform_init_moments() {
    let dim = 100;
    let m = init_uniform(10_000, dim, 17);
    let values = m.values.as_slice();
    assert_eq!(values.len(), 1_000_000);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let b = uniform_bound(dim);
    assert!((b - (3.0f64 / dim as f64).sqrt()).abs() < 1e-15);
    assert!(mean.abs() < 0.05 * b, "mean {mean}");
    let expected = b * b / 3.0;
    assert!((var - expected).abs() < 0.05 * expected, "variance {var} vs {expected}");
    assert!(values.iter().all(|v| v.abs() <= b));
}

#[test]
fn shared_contexts_give_similar_vectors() {
    // "tablet" and "capsule" share every context; "daily" never does.
    let mut streams: Vec<Vec<&str>> = Vec::new();
    for i in 0..400 {
        let form = if i % 2 == 0 { "tablet" } else { "capsule" };
        streams.push(vec!["take", "one", form, "by", "mouth"]);
        streams.push(vec!["repeat", "dose", "daily", "until", "review"]);
    }
    let config = SkipGramConfig {
        dim: 20,
        min_count: 1,
        epochs: 5,
        subsample: 0.0,
        seed: 3,
        ..SkipGramConfig::default()
    };
    let (vocab, emb) = train_skipgram(&streams, &config).unwrap();
    let v = |w: &str| emb.values.row(vocab.index_of(w)).to_vec();
    let same = cosine(&v("tablet"), &v("capsule"));
    let other = cosine(&v("tablet"), &v("daily"));
    assert!(same > 0.8, "tablet/capsule {same}");
    assert!(same > other + 0.3, "tablet/capsule {same} vs tablet/daily {other}");
}
