//! Scratch harness: train (or load cached) toy LM, dump block-3
//! activations, and calibrate SAE defaults on the real distribution.
//! Removed before release.

use esteer_core::corpus::{build_corpus, CorpusSpec};
use esteer_core::lm::{train_toy_lm, ToyLm, ToyLmConfig};
use esteer_core::sae::{explained_variance, mean_l0, train_sae, ActivationSet, SaeTrainConfig};
use esteer_core::vad::builtin_label_table;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1500);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let l1: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let factor: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);

    let labels = builtin_label_table();
    let corpus = build_corpus(&CorpusSpec::default(), &labels).unwrap();
    let cache = std::path::Path::new("/tmp/esteer-cache");
    std::fs::create_dir_all(cache).unwrap();
    let lm_path = cache.join("lm3000.estr");
    let model = if lm_path.exists() {
        ToyLm::load(&lm_path).unwrap()
    } else {
        let t0 = std::time::Instant::now();
        let m = train_toy_lm(&corpus.train_sequences(), ToyLmConfig::default(), 3000).unwrap();
        println!("lm trained in {:.0}s", t0.elapsed().as_secs_f64());
        m.save(&lm_path).unwrap();
        m
    };

    let acts_path = cache.join("acts_b3.estr");
    let acts = if acts_path.exists() {
        ActivationSet::load(&acts_path).unwrap()
    } else {
        let mut acts = ActivationSet::new(model.config.d_model, 3);
        for line in &corpus.train {
            let toks = line.tokens();
            let (_, h) = model.forward_with_tap(&toks, 3).unwrap();
            acts.push_hidden(&h).unwrap();
        }
        acts.save(&acts_path).unwrap();
        acts
    };
    println!("activations: {} rows × {}", acts.rows, acts.d);
    let mean_norm: f64 = (0..acts.rows.min(2000))
        .map(|i| esteer_core::tensor::norm2_f64(acts.row(i)))
        .sum::<f64>()
        / acts.rows.min(2000) as f64;
    println!("mean row norm: {mean_norm:.2}");

    let cfg = SaeTrainConfig {
        latent_factor: factor,
        steps,
        learning_rate: lr,
        l1_coefficient: l1,
        ..SaeTrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let sae = train_sae(&acts, &cfg).unwrap();
    let wall = t0.elapsed().as_secs_f64();
    let ev = explained_variance(&sae, &acts).unwrap();
    let l0 = mean_l0(&sae, &acts).unwrap();
    println!(
        "steps={steps} lr={lr} l1={l1} factor={factor}  wall={wall:.1}s  ev={ev:.4}  l0={l0:.1}  (budget {:.1})",
        0.1 * sae.latent_dim as f64
    );
}
