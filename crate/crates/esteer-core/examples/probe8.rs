//! Scratch probe: does the ambiguity-trained LM become steerable?
//! Trains on the real corpus (balanced plain subjective copies), injects
//! the diff-of-means valence direction, and tallies first words by bank.

use std::sync::Arc;

use esteer_core::corpus::{
    build_corpus, decode_text, emotion_prompt, plain_prompt, prompt_tokens, subjective_stem,
    CorpusSpec, BANK_VALENCE_NEG, BANK_VALENCE_POS,
};
use esteer_core::lm::{train_toy_lm, DecodeParams, HiddenState, Patch, ToyLm, ToyLmConfig};
use esteer_core::vad::builtin_label_table;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

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

fn add_direction_patch(block: usize, w: Vec<f64>, frac: f64) -> Patch {
    Patch::new(
        block,
        Arc::new(move |h: &HiddenState| {
            let wn = norm(&w);
            let mut out = h.clone();
            for t in 0..h.rows {
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

fn bank_of(text: &str) -> &'static str {
    let first = text.split_whitespace().next().unwrap_or("");
    if BANK_VALENCE_POS.contains(&first) {
        "pos"
    } else if BANK_VALENCE_NEG.contains(&first) {
        "neg"
    } else {
        "other"
    }
}

fn main() {
    let table = builtin_label_table();
    let corpus = build_corpus(&CorpusSpec::default(), &table).unwrap();
    let seqs = corpus.train_sequences();

    eprintln!("training ambiguity LM on {} sequences ...", seqs.len());
    let t0 = std::time::Instant::now();
    let lm = train_toy_lm(&seqs, ToyLmConfig::default(), 5000).unwrap();
    eprintln!("trained in {:.0}s", t0.elapsed().as_secs_f64());

    let decode = DecodeParams::default();
    for label in ["happy", "sad", "excited", "calm"] {
        let out = lm
            .generate(&prompt_tokens(&emotion_prompt("mood 3", label)), &decode, None)
            .map(|c| decode_text(&c))
            .unwrap();
        println!("label {label:<8} -> {out:?}");
    }

    let stems: Vec<String> = (0..16).map(subjective_stem).collect();
    let happy: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "happy")).collect();
    let sad: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "sad")).collect();
    let m_h = mean_last_row(&lm, &happy, 3);
    let m_s = mean_last_row(&lm, &sad, 3);
    let w: Vec<f64> = m_h.iter().zip(&m_s).map(|(a, b)| a - b).collect();
    println!("|w| = {:.3}", norm(&w));

    let eval_stems: Vec<usize> = (0..10).chain(40..50).collect();
    for frac in [-0.6, -0.4, -0.2, -0.1, -0.05, 0.0, 0.05, 0.1, 0.2, 0.4, 0.6] {
        let mut pos = 0;
        let mut neg = 0;
        let mut other = 0;
        let mut sample = String::new();
        for (k, &i) in eval_stems.iter().enumerate() {
            let patch = add_direction_patch(3, w.clone(), frac);
            let p = if frac == 0.0 { None } else { Some(&patch) };
            let out = lm
                .generate(&prompt_tokens(&plain_prompt(&subjective_stem(i))), &decode, p)
                .map(|c| decode_text(&c))
                .unwrap();
            match bank_of(out.trim()) {
                "pos" => pos += 1,
                "neg" => neg += 1,
                _ => other += 1,
            }
            if k == 1 {
                sample = out;
            }
        }
        println!("frac={frac:+.2}: pos={pos:>2} neg={neg:>2} other={other:>2}  e.g. {sample:?}");
    }
}
