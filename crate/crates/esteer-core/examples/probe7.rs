//! Scratch diagnostics for the steering chain, in three stages:
//!   A. does the trained LM condition its continuation on explicit labels?
//!   B. does injecting the raw diff-of-means hidden direction move words?
//!   C. how aligned is the SAE feature direction with that raw direction?

use std::sync::Arc;

use esteer_core::corpus::{decode_text, emotion_prompt, plain_prompt, prompt_tokens, subjective_stem};
use esteer_core::features::LatentFeatureSet;
use esteer_core::lm::{DecodeParams, HiddenState, Patch, ToyLm};
use esteer_core::pipeline::{build_pipeline, default_cache_dir, PipelineConfig};
use esteer_core::sae::SaeModel;
use esteer_core::steering::compute_direction;
use esteer_core::vad::{builtin_label_table, VadAxis};

fn gen(lm: &ToyLm, prompt: &str, patch: Option<&Patch>) -> String {
    let toks = prompt_tokens(prompt);
    let decode = DecodeParams::default();
    match lm.generate(&toks, &decode, patch) {
        Ok(cont) => decode_text(&cont),
        Err(e) => format!("<error: {e}>"),
    }
}

/// Mean block-3 hidden state at the final prompt position over `prompts`.
fn mean_last_row(lm: &ToyLm, prompts: &[String], block: usize) -> Vec<f64> {
    let d = lm.config.d_model;
    let mut acc = vec![0.0f64; d];
    for p in prompts {
        let toks = prompt_tokens(p);
        let (_, h) = lm.forward_with_tap(&toks, block).unwrap();
        for (a, &v) in acc.iter_mut().zip(h.row(h.rows - 1)) {
            *a += v as f64;
        }
    }
    for a in &mut acc {
        *a /= prompts.len() as f64;
    }
    acc
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

fn add_direction_patch(block: usize, w: Vec<f64>, frac: f64, start: usize) -> Patch {
    Patch::new(
        block,
        Arc::new(move |h: &HiddenState| {
            let wn = norm(&w);
            let mut out = h.clone();
            for t in start..h.rows {
                let row_norm = h
                    .row(t)
                    .iter()
                    .map(|&x| (x as f64) * (x as f64))
                    .sum::<f64>()
                    .sqrt();
                let scale = frac * row_norm / wn;
                for j in 0..h.d {
                    out.data[t * h.d + j] = (h.data[t * h.d + j] as f64 + scale * w[j]) as f32;
                }
            }
            Ok(out)
        }),
    )
}

fn sae_axis_direction(sae: &SaeModel, features: &LatentFeatureSet, axis: VadAxis) -> Vec<f64> {
    let u = features.unit_direction(axis).unwrap();
    let z = vec![0.0f32; sae.latent_dim];
    compute_direction(sae, &z, &u, 1.0).unwrap()
}

fn main() {
    let cfg = PipelineConfig::default();
    let arts = build_pipeline(&cfg, &builtin_label_table(), Some(&default_cache_dir()))
        .expect("pipeline");
    let lm = &arts.lm;
    let block = cfg.block;

    println!("== A: label conditioning of the trained LM ==");
    for stem_i in [0usize, 5, 30] {
        let stem = subjective_stem(stem_i);
        for label in ["happy", "sad", "excited", "calm", "confident", "helpless"] {
            let out = gen(lm, &emotion_prompt(&stem, label), None);
            println!("  {stem:<8} {label:<10} -> {out:?}");
        }
        let out = gen(lm, &plain_prompt(&stem), None);
        println!("  {stem:<8} {:<10} -> {out:?}", "(none)");
    }

    println!("== B: diff-of-means injection on plain prompts ==");
    let stems: Vec<String> = (0..16).map(subjective_stem).collect();
    let happy: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "happy")).collect();
    let sad: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "sad")).collect();
    let m_happy = mean_last_row(lm, &happy, block);
    let m_sad = mean_last_row(lm, &sad, block);
    let w: Vec<f64> = m_happy.iter().zip(&m_sad).map(|(a, b)| a - b).collect();
    println!("  |m_happy|={:.3} |m_sad|={:.3} |w|={:.3}", norm(&m_happy), norm(&m_sad), norm(&w));
    for frac in [0.25, 0.5, 1.0, 2.0] {
        for sign in [1.0, -1.0] {
            let patch = add_direction_patch(block, w.clone(), sign * frac, 0);
            let o0 = gen(lm, &plain_prompt(&subjective_stem(0)), Some(&patch));
            let o1 = gen(lm, &plain_prompt(&subjective_stem(40)), Some(&patch));
            println!("  frac={:+.2}: {o0:?} | {o1:?}", sign * frac);
        }
    }

    println!("== C: alignment of SAE valence direction with diff-of-means ==");
    let d_v = sae_axis_direction(&arts.sae, &arts.features, VadAxis::Valence);
    println!("  cos(d_v, w) = {:+.4}", cosine(&d_v, &w));
    let d_a = sae_axis_direction(&arts.sae, &arts.features, VadAxis::Arousal);
    let d_d = sae_axis_direction(&arts.sae, &arts.features, VadAxis::Dominance);
    println!("  cos(d_a, w) = {:+.4}  cos(d_d, w) = {:+.4}", cosine(&d_a, &w), cosine(&d_d, &w));

    // Same diff-of-means but for arousal poles, to see axis separation.
    let exc: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "excited")).collect();
    let calm: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "calm")).collect();
    let m_exc = mean_last_row(lm, &exc, block);
    let m_calm = mean_last_row(lm, &calm, block);
    let w_a: Vec<f64> = m_exc.iter().zip(&m_calm).map(|(a, b)| a - b).collect();
    println!("  cos(d_a, w_arousal) = {:+.4}  cos(w, w_arousal) = {:+.4}", cosine(&d_a, &w_a), cosine(&w, &w_a));

    println!("== B2: SAE direction injected the same way ==");
    for frac in [0.25, 0.5, 1.0, 2.0] {
        for sign in [1.0, -1.0] {
            let patch = add_direction_patch(block, d_v.clone(), sign * frac, 0);
            let o0 = gen(lm, &plain_prompt(&subjective_stem(0)), Some(&patch));
            println!("  frac={:+.2}: {o0:?}", sign * frac);
        }
    }
}
