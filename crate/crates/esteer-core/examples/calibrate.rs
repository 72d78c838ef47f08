// Scratch calibration for training cost / accuracy (not part of the build contract).
use esteer_core::corpus::{build_corpus, plain_prompt, emotion_prompt, prompt_tokens, decode_text, CorpusSpec};
use esteer_core::lm::{train_toy_lm, answer_token_accuracy, cross_entropy, DecodeParams, ToyLmConfig};
use esteer_core::vad::builtin_label_table;
use std::time::Instant;

fn main() {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1000);
    let table = builtin_label_table();
    let corpus = build_corpus(&CorpusSpec::default(), &table).unwrap();
    println!("train lines: {}  held out: {}  max len: {}", corpus.train.len(), corpus.held_out.len(), corpus.max_line_bytes());
    let seqs = corpus.train_sequences();
    let cfg = ToyLmConfig::default();
    let t0 = Instant::now();
    let model = train_toy_lm(&seqs, cfg, steps).unwrap();
    let dt = t0.elapsed();
    println!("steps={steps}  wall={:.1}s  ({:.1} ms/step)", dt.as_secs_f64(), dt.as_millis() as f64 / steps as f64);
    let held: Vec<Vec<u32>> = corpus.held_out.iter().map(|l| l.tokens()).collect();
    println!("held-out CE: {:.4}", cross_entropy(&model, &held).unwrap());
    println!("held-out answer acc: {:.4}", answer_token_accuracy(&model, &corpus.held_out).unwrap());
    println!("train answer acc (first 100): {:.4}", answer_token_accuracy(&model, &corpus.train[..100.min(corpus.train.len())]).unwrap());
    let params = DecodeParams { max_new_tokens: 20, ..Default::default() };
    for p in [plain_prompt("mood 3"), emotion_prompt("mood 3", "happy"), emotion_prompt("mood 3", "miserable"), emotion_prompt("mood 3", "sleepy"), plain_prompt("sum 4 3"), emotion_prompt("sum 4 3", "excited"), plain_prompt("risk 1")] {
        let out = model.generate(&prompt_tokens(&p), &params, None).unwrap();
        println!("{p:?} -> {:?}", decode_text(&out));
    }
}
