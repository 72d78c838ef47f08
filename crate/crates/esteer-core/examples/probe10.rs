//! Scratch probe: which contrast direction steers plain prompts best?
//!   w_plain — answer-region contrast of the plain ambiguity lines
//!   w_ans   — answer-region contrast of labelled subjective lines
//! crossed with injection coverage (all rows vs generated rows only),
//! scored by bank counts and mean lexicon valence over 50 stems.

use std::sync::Arc;

use esteer_core::corpus::{
    ambiguous_subjective_answers, decode_text, emotion_prompt, plain_prompt, prompt_tokens,
    subjective_answer, subjective_stem, BANK_VALENCE_NEG, BANK_VALENCE_POS,
};
use esteer_core::eval::lexicon::{lexicon_vad_score, VadLexicon, BUILTIN_LEXICON_TSV};
use esteer_core::lm::{DecodeParams, HiddenState, Patch, ToyLm};
use esteer_core::pipeline::{default_cache_dir, train_lm_stage, PipelineConfig};
use esteer_core::vad::{builtin_label_table, VadAxis};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    dot / (norm(a) * norm(b))
}

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

fn add_direction_patch(block: usize, w: Vec<f64>, frac: f64, start: usize) -> Patch {
    Patch::new(
        block,
        Arc::new(move |h: &HiddenState| {
            let wn = norm(&w);
            let mut out = h.clone();
            for t in start.min(h.rows)..h.rows {
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

fn bank_of(text: &str) -> i32 {
    let first = text.split_whitespace().next().unwrap_or("");
    if BANK_VALENCE_POS.contains(&first) {
        1
    } else if BANK_VALENCE_NEG.contains(&first) {
        -1
    } else {
        0
    }
}

fn main() {
    let cfg = PipelineConfig::default();
    let table = builtin_label_table();
    let (_, lm, _) = train_lm_stage(&cfg, &table, Some(&default_cache_dir())).unwrap();
    let lexicon = VadLexicon::from_tsv(BUILTIN_LEXICON_TSV).unwrap();

    let stems: Vec<String> = (0..16).map(subjective_stem).collect();

    // Plain-manifold contrast: the exact ambiguity lines from training.
    let mut pos_lines = Vec::new();
    let mut neg_lines = Vec::new();
    for s in &stems {
        let answers = ambiguous_subjective_answers(s);
        let prompt = plain_prompt(s);
        pos_lines.push(format!("{prompt} {}", answers[0]));
        pos_lines.push(format!("{prompt} {}", answers[1]));
        neg_lines.push(format!("{prompt} {}", answers[2]));
        neg_lines.push(format!("{prompt} {}", answers[3]));
    }
    let w_plain: Vec<f64> = {
        let p = mean_answer_region(&lm, &pos_lines, 3);
        let n = mean_answer_region(&lm, &neg_lines, 3);
        p.iter().zip(&n).map(|(a, b)| a - b).collect()
    };

    // Labelled contrast over the same stems.
    let line = |stem: &str, label: &str| {
        format!(
            "{} {}",
            emotion_prompt(stem, label),
            subjective_answer(Some(label))
        )
    };
    let w_ans: Vec<f64> = {
        let hl: Vec<String> = stems.iter().map(|s| line(s, "happy")).collect();
        let sl: Vec<String> = stems.iter().map(|s| line(s, "sad")).collect();
        let h = mean_answer_region(&lm, &hl, 3);
        let s = mean_answer_region(&lm, &sl, 3);
        h.iter().zip(&s).map(|(a, b)| a - b).collect()
    };
    println!(
        "|w_plain|={:.3} |w_ans|={:.3} cos={:+.3}",
        norm(&w_plain),
        norm(&w_ans),
        cosine(&w_plain, &w_ans)
    );

    let decode = DecodeParams::default();
    let eval_stems: Vec<usize> = (0..50).collect();
    for (name, w) in [("w_plain", &w_plain), ("w_ans", &w_ans)] {
        for (mode, decode_only) in [("both", false), ("deco", true)] {
            println!("-- {name} / {mode} --");
            for frac in [-0.5, -0.3, -0.15, 0.0, 0.15, 0.3, 0.5] {
                let mut pos = 0;
                let mut neg = 0;
                let mut other = 0;
                let mut lex_sum = 0.0;
                for &i in &eval_stems {
                    let prompt = plain_prompt(&subjective_stem(i));
                    let toks = prompt_tokens(&prompt);
                    let start = if decode_only { toks.len() } else { 0 };
                    let patch = add_direction_patch(3, w.clone(), frac, start);
                    let p = if frac == 0.0 { None } else { Some(&patch) };
                    let out = lm
                        .generate(&toks, &decode, p)
                        .map(|c| decode_text(&c))
                        .unwrap();
                    match bank_of(out.trim()) {
                        1 => pos += 1,
                        -1 => neg += 1,
                        _ => other += 1,
                    }
                    lex_sum += lexicon_vad_score(&out, &lexicon).vad.get(VadAxis::Valence);
                }
                println!(
                    "  frac={frac:+.2}: pos={pos:>2} neg={neg:>2} other={other:>2}  lex_v={:+.2}",
                    lex_sum / eval_stems.len() as f64
                );
            }
        }
    }
}
