//! Scratch probe: is the answer-region diff-of-means direction
//! sign-faithful when injected on plain prompts? Compares against the
//! prompt-last-token direction from the previous probe.

use std::sync::Arc;

use esteer_core::corpus::{
    decode_text, emotion_prompt, plain_prompt, prompt_tokens, subjective_answer, subjective_stem,
    BANK_VALENCE_NEG, BANK_VALENCE_POS,
};
use esteer_core::lm::{DecodeParams, HiddenState, Patch, ToyLm};
use esteer_core::pipeline::{default_cache_dir, train_lm_stage, PipelineConfig};
use esteer_core::vad::builtin_label_table;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

/// Mean block-3 hidden state over rows after the final "answer:" marker
/// of each full line (BOS shifts byte i to row i+1).
fn mean_answer_region(lm: &ToyLm, lines: &[String], block: usize) -> Vec<f64> {
    let d = lm.config.d_model;
    let mut acc = vec![0.0f64; d];
    let mut count = 0usize;
    for line in lines {
        let marker = line.rfind("answer:").expect("answer tag") + "answer:".len();
        let toks = prompt_tokens(line);
        let (_, h) = lm.forward_with_tap(&toks, block).unwrap();
        for r in (marker + 1)..h.rows {
            for (a, &v) in acc.iter_mut().zip(h.row(r)) {
                *a += v as f64;
            }
            count += 1;
        }
    }
    for a in &mut acc {
        *a /= count as f64;
    }
    acc
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
    let cfg = PipelineConfig::default();
    let table = builtin_label_table();
    let t0 = std::time::Instant::now();
    let (_, lm, _) = train_lm_stage(&cfg, &table, Some(&default_cache_dir())).unwrap();
    eprintln!("lm ready in {:.0}s", t0.elapsed().as_secs_f64());

    let stems: Vec<String> = (0..16).map(subjective_stem).collect();
    let line = |stem: &str, label: &str| {
        format!(
            "{} {}",
            emotion_prompt(stem, label),
            subjective_answer(Some(label))
        )
    };
    let happy_lines: Vec<String> = stems.iter().map(|s| line(s, "happy")).collect();
    let sad_lines: Vec<String> = stems.iter().map(|s| line(s, "sad")).collect();
    let w_ans: Vec<f64> = {
        let h = mean_answer_region(&lm, &happy_lines, 3);
        let s = mean_answer_region(&lm, &sad_lines, 3);
        h.iter().zip(&s).map(|(a, b)| a - b).collect()
    };
    let w_last: Vec<f64> = {
        let hp: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "happy")).collect();
        let sp: Vec<String> = stems.iter().map(|s| emotion_prompt(s, "sad")).collect();
        let h = mean_last_row(&lm, &hp, 3);
        let s = mean_last_row(&lm, &sp, 3);
        h.iter().zip(&s).map(|(a, b)| a - b).collect()
    };
    println!(
        "|w_ans|={:.3} |w_last|={:.3} cos(w_ans, w_last)={:+.3}",
        norm(&w_ans),
        norm(&w_last),
        cosine(&w_ans, &w_last)
    );

    let decode = DecodeParams::default();
    let eval_stems: Vec<usize> = (0..10).chain(40..50).collect();
    for (name, w) in [("w_ans", &w_ans), ("w_last", &w_last)] {
        println!("-- {name} --");
        for frac in [-0.4, -0.2, -0.1, 0.0, 0.1, 0.2, 0.4] {
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
            println!("  frac={frac:+.2}: pos={pos:>2} neg={neg:>2} other={other:>2}  e.g. {sample:?}");
        }
    }
}
