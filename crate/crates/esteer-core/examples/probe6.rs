//! Scratch probe: directional control strength of the full-size default
//! pipeline. Sweeps valence over subjective prompts at several alpha
//! values and prints the grid-level Pearson correlations.

use esteer_core::eval::lexicon::{VadLexicon, BUILTIN_LEXICON_TSV};
use esteer_core::eval::{default_grid, pearson, run_sweep, standard_tasks, SweepSpec};
use esteer_core::lm::DecodeParams;
use esteer_core::pipeline::{build_pipeline, default_cache_dir, PipelineConfig};
use esteer_core::steering::SteeringConfig;
use esteer_core::vad::{builtin_label_table, VadAxis};

fn main() {
    let cfg = PipelineConfig::default();
    let t0 = std::time::Instant::now();
    let arts = build_pipeline(&cfg, &builtin_label_table(), Some(&default_cache_dir()))
        .expect("pipeline");
    eprintln!(
        "pipeline ready in {:.1}s  features v/a/d = {}/{}/{}  delta_max = {:?}",
        t0.elapsed().as_secs_f64(),
        arts.features.valence.neuron_indices.len(),
        arts.features.arousal.neuron_indices.len(),
        arts.features.dominance.neuron_indices.len(),
        arts.features.calib.delta_max,
    );

    let tasks = standard_tasks(0, 50, 0);
    let grid = default_grid(VadAxis::Valence);
    let lexicon = VadLexicon::from_tsv(BUILTIN_LEXICON_TSV).expect("lexicon");

    for alpha in [1.0f64, 2.0, 4.0, 8.0] {
        let spec = SweepSpec {
            grid: grid.clone(),
            tasks: tasks.clone(),
            decode: DecodeParams::default(),
            repeats: 1,
        };
        let template = SteeringConfig {
            alpha,
            calib: arts.features.calib.clone(),
            ..SteeringConfig::default()
        };
        let t = std::time::Instant::now();
        let records = run_sweep(&arts.lm, &arts.sae, &arts.features, &spec, &template, &lexicon)
            .expect("sweep");
        let xs: Vec<f64> = records.iter().map(|r| r.vad.get(VadAxis::Valence)).collect();
        let lex: Vec<f64> = records
            .iter()
            .map(|r| r.lexicon_vad.get(VadAxis::Valence))
            .collect();
        let avr: Vec<f64> = records.iter().map(|r| r.avr).collect();
        let matched: Vec<usize> = records.iter().map(|r| r.lexicon_matched_outputs).collect();
        let r = pearson(&xs, &lex).expect("pearson");
        println!(
            "alpha={alpha:>4}: pearson={r:+.4}  lex_v={:?}  avr={:?}  matched={:?}  ({:.1}s)",
            lex.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            avr.iter().map(|v| (v * 100.0).round() / 100.0).collect::<Vec<_>>(),
            matched,
            t.elapsed().as_secs_f64(),
        );
    }
}
