//! Scratch harness for SAE hyperparameter calibration. Not part of the
//! shipped surface; removed before release.

use esteer_core::sae::{explained_variance, mean_l0, train_sae, ActivationSet, SaeTrainConfig};
use esteer_core::tensor::{self, seeded_rng};
use rand::Rng;

fn planted(
    seed: u64,
    d: usize,
    n_atoms: usize,
    n_samples: usize,
    max_active: usize,
) -> (Vec<Vec<f32>>, ActivationSet) {
    let mut rng = seeded_rng(seed);
    let atoms: Vec<Vec<f32>> = (0..n_atoms)
        .map(|_| {
            let mut a = tensor::normal_vec(&mut rng, d, 1.0);
            let n = tensor::norm2(&a);
            a.iter_mut().for_each(|v| *v /= n);
            a
        })
        .collect();
    let mut acts = ActivationSet::new(d, 3);
    for _ in 0..n_samples {
        let k = rng.gen_range(1..=max_active);
        let mut row = vec![0.0f32; d];
        for _ in 0..k {
            let a = rng.gen_range(0..n_atoms);
            let c = rng.gen_range(0.5f32..1.5);
            tensor::axpy(c, &atoms[a], &mut row);
        }
        acts.push_row(&row).unwrap();
    }
    (atoms, acts)
}

fn main() {
    if std::env::args().nth(1).as_deref() == Some("dead") { probe_dead(); return; }
    let args: Vec<String> = std::env::args().collect();
    let steps: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(1200);
    let lr: f64 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(2e-3);
    let l1: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let factor: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(2);

    let d = 64;
    let (atoms, acts) = planted(21, d, 32, 4000, 5);
    let cfg = SaeTrainConfig {
        latent_factor: factor,
        steps,
        batch_size: 64,
        learning_rate: lr,
        l1_coefficient: l1,
        dead_neuron_patience: 512,
        ..SaeTrainConfig::default()
    };
    let t0 = std::time::Instant::now();
    let m = train_sae(&acts, &cfg).unwrap();
    let wall = t0.elapsed().as_secs_f64();

    let ev = explained_variance(&m, &acts).unwrap();
    let l0 = mean_l0(&m, &acts).unwrap();

    let mut cosines: Vec<f64> = Vec::new();
    let mut hits = 0usize;
    let mut total = 0usize;
    for atom in &atoms {
        let mut best = (0usize, -1.0f64);
        for j in 0..m.latent_dim {
            let col = m.decoder_column(j);
            let cos = tensor::dot_f64(atom, &col)
                / (tensor::norm2_f64(atom) * tensor::norm2_f64(&col)).max(1e-30);
            if cos > best.1 {
                best = (j, cos);
            }
        }
        cosines.push(best.1);
        if best.1 >= 0.9 {
            total += 1;
            let z = m.encode(atom).unwrap();
            let top = tensor::argmax(&z);
            let col = m.decoder_column(top);
            let cos_top = tensor::dot_f64(atom, &col)
                / (tensor::norm2_f64(atom) * tensor::norm2_f64(&col)).max(1e-30);
            if cos_top >= 0.9 {
                hits += 1;
            } else {
                println!(
                    "  miss: argmax col cos {cos_top:.3}, best col cos {:.3}, z[top]={:.3} z[best]={:.3}",
                    best.1,
                    z[top],
                    z[best.0]
                );
            }
        }
    }
    cosines.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let recovered = cosines.iter().filter(|&&c| c >= 0.9).count();
    println!(
        "steps={steps} lr={lr} l1={l1} factor={factor}  wall={wall:.1}s  ev={ev:.4}  l0={l0:.1}"
    );
    println!("recovered {recovered}/32   top1 {hits}/{total}");
    println!(
        "cosines: max={:.3} p25={:.3} median={:.3} p75={:.3} min={:.3}",
        cosines[0],
        cosines[8],
        cosines[16],
        cosines[24],
        cosines[31]
    );
}

#[allow(dead_code)]
fn probe_dead() {
    use esteer_core::sae::train_sae_with_stats;
    let (_, acts) = {
        let mut rng = seeded_rng(14);
        let atoms: Vec<Vec<f32>> = (0..2)
            .map(|_| {
                let mut a = tensor::normal_vec(&mut rng, 16, 1.0);
                let n = tensor::norm2(&a);
                a.iter_mut().for_each(|v| *v /= n);
                a
            })
            .collect();
        let mut acts = ActivationSet::new(16, 3);
        for _ in 0..800 {
            let a = rng.gen_range(0..2);
            let c = rng.gen_range(0.5f32..1.5);
            let mut row = vec![0.0f32; 16];
            tensor::axpy(c, &atoms[a], &mut row);
            acts.push_row(&row).unwrap();
        }
        (atoms, acts)
    };
    for steps in [200usize, 800, 3000] {
        let cfg = SaeTrainConfig {
            latent_factor: 4,
            steps,
            batch_size: 32,
            l1_coefficient: 0.5,
            dead_neuron_patience: 32,
            ..SaeTrainConfig::default()
        };
        let (m, stats) = train_sae_with_stats(&acts, &cfg).unwrap();
        let l0 = mean_l0(&m, &acts).unwrap();
        println!(
            "steps={steps} resampled={} first={:.4} final={:.4} l0={l0:.1}",
            stats.resampled, stats.first_loss, stats.final_loss
        );
    }
}
