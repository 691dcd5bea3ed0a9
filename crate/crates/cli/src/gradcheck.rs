use medseq::corpus::Token;
use medseq::crf::{brute_force_best, brute_force_log_partition, log_partition, viterbi, CrfParams};
use medseq::embeddings::Vocabulary;
use medseq::features::{ClampTag, CtakesTag, TokenFeatures};
use medseq::linalg::Matrix;
use medseq::network::{gradient_check, Fault, Gate, ModelConfig, Tagger};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::settings::{CliError, CliResult, Settings};
use crate::GradcheckArgs;

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-1.0..=1.0)).collect()
}

fn random_crf(rng: &mut ChaCha8Rng) -> (Matrix, CrfParams) {
    let l = rng.gen_range(1..=5);
    let k = rng.gen_range(1..=6);
    let emissions = Matrix::from_vec(l, k, uniform(rng, l * k));
    let mut crf = CrfParams::zeros(k);
    crf.transitions = Matrix::from_vec(k, k, uniform(rng, k * k));
    crf.start = uniform(rng, k);
    crf.end = uniform(rng, k);
    (emissions, crf)
}

const WORDS: [&str; 6] = ["a", "b", "c", "d", "e", "zz"];

fn toy_tagger(rng: &mut ChaCha8Rng, seed: u64) -> CliResult<Tagger> {
    let config = ModelConfig {
        word_dim: 6,
        clamp_dim: 3,
        ctakes_dim: 3,
        augment: true,
        seed,
        ..ModelConfig::default()
    };
    let vocab = Vocabulary::from_words(WORDS[..5].iter().copied());
    let emb = Matrix::zeros(vocab.len(), config.word_dim);
    let mut t = Tagger::new(config, vocab, emb)?;
    for tensor in t.params.tensors_mut() {
        tensor.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..=1.0));
    }
    Ok(t)
}

pub fn run(a: &GradcheckArgs, s: &Settings) -> CliResult<()> {
    let seed = s.seed(a.common.seed)?;
    let instances = s.get(a.instances, "instances", 20usize)?;
    let eps = s.get(a.epsilon, "epsilon", 1e-5)?;
    s.finish()?;
    if instances == 0 {
        return Err(CliError::config("--instances must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut worst_z: f64 = 0.0;
    for _ in 0..200 {
        let (e, crf) = random_crf(&mut rng);
        worst_z = worst_z.max((log_partition(&e, &crf)? - brute_force_log_partition(&e, &crf)?).abs());
    }
    println!("crf log-partition vs enumeration (200 instances): max abs error {worst_z:.3e}");

    let mut worst_v: f64 = 0.0;
    for _ in 0..500 {
        let (e, crf) = random_crf(&mut rng);
        worst_v = worst_v.max((viterbi(&e, &crf)?.score - brute_force_best(&e, &crf)?.score).abs());
    }
    println!("viterbi vs enumeration (500 instances): max abs score error {worst_v:.3e}");

    let mut cases = Vec::with_capacity(instances);
    for i in 0..instances {
        let tagger = toy_tagger(&mut rng, seed.wrapping_add(i as u64))?;
        let l = rng.gen_range(1..=4);
        let tokens: Vec<Token> = (0..l)
            .map(|t| Token::new(WORDS[rng.gen_range(0..WORDS.len())], 2 * t, 2 * t + 1))
            .collect();
        let feats: Vec<TokenFeatures> = (0..l)
            .map(|_| TokenFeatures {
                clamp: ClampTag::from_unit_index(rng.gen_range(0..19)).unwrap_or_default(),
                ctakes: CtakesTag::ALL[rng.gen_range(0..CtakesTag::ALL.len())],
            })
            .collect();
        let seq = tagger.encode(&tokens, Some(&feats));
        let gold: Vec<usize> = (0..l).map(|_| rng.gen_range(0..tagger.config.num_labels)).collect();
        cases.push((tagger, seq, gold));
    }

    let check = |fault: Fault| -> CliResult<(f64, Vec<(&'static str, f64)>)> {
        let mut overall: f64 = 0.0;
        let mut per: Vec<(&'static str, f64)> = Vec::new();
        for (tagger, seq, gold) in &cases {
            let r = gradient_check(tagger, seq, gold, eps, None, seed, fault)?;
            overall = overall.max(r.overall);
            for (i, (name, err, _)) in r.per_tensor.iter().enumerate() {
                match per.get_mut(i) {
                    Some(slot) => slot.1 = slot.1.max(*err),
                    None => per.push((name, *err)),
                }
            }
        }
        Ok((overall, per))
    };

    let (overall, per) = check(Fault::None)?;
    println!("network gradients vs central differences ({instances} instances, eps {eps:e}):");
    for (name, err) in &per {
        println!("  {name:<18} {err:.3e}");
    }
    println!("  {:<18} {overall:.3e}", "overall");
    for gate in Gate::ALL {
        let (faulty, _) = check(Fault::NegateGate(gate))?;
        println!("sign fault in {gate:?} gate: max relative error {faulty:.3e}");
    }
    Ok(())
}
