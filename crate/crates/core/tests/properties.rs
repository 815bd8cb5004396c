mod common;

use common::oracle;
use common::{bits, small_family, synth_family, ALL_METHODS};
use promptsel::calibration::{calibrate_cbm, CalibrationMethod, CalibrationScenario};
use promptsel::evaluation::{average_summaries, evaluate, macro_f1, pearson_corr};
use promptsel::selection::{select, NamedMethod, Selection, SelectionResult};
use promptsel::tensor::{argmax, ScoreTensor};
use proptest::prelude::*;

fn run(t: &ScoreTensor, name: &str, cal: CalibrationMethod, scen: CalibrationScenario) -> SelectionResult {
    select(t, &name.parse::<NamedMethod>().unwrap().spec(), cal, scen, None).unwrap()
}

/// Reorders instances by `perm` (new instance `i` is old instance `perm[i]`).
fn permute_instances(t: &ScoreTensor, perm: &[usize]) -> ScoreTensor {
    let (nt, nx, ny) = (t.num_prompts, t.num_instances, t.num_choices);
    let mut out = t.clone();
    out.gold_labels = perm.iter().map(|&x| t.gold_labels[x]).collect();
    for tt in 0..nt {
        for (i, &x) in perm.iter().enumerate() {
            for y in 0..ny {
                out.choice_token_logprobs[(tt * nx + i) * ny + y] = t.choice_token_logprobs[(tt * nx + x) * ny + y].clone();
            }
            if let (Some(dst), Some(src)) = (out.sequence_stats.as_mut(), t.sequence_stats.as_ref()) {
                dst[tt * nx + i] = src[tt * nx + x];
            }
        }
    }
    out
}

fn calibrations() -> impl Strategy<Value = (CalibrationMethod, CalibrationScenario)> {
    (0..4usize, 0..4usize).prop_map(|(c, s)| (CalibrationMethod::ALL[c], CalibrationScenario::ALL[s]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn global_scores_ignore_instance_order(i in 0u64..10_000, seed in any::<u64>(), (cal, scen) in calibrations()) {
        let t = small_family(i);
        let mut perm: Vec<usize> = (0..t.num_instances).collect();
        // deterministic shuffle from `seed`
        for k in (1..perm.len()).rev() {
            perm.swap(k, (seed as usize ^ k.wrapping_mul(0x9E37)) % (k + 1));
        }
        let p = permute_instances(&t, &perm);
        for name in ALL_METHODS {
            let a = run(&t, name, cal, scen).outcome;
            let b = run(&p, name, cal, scen).outcome;
            for (x, y) in a.prompt_scores.iter().zip(&b.prompt_scores) {
                prop_assert!((x - y).abs() < 1e-9, "{name}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn scores_stay_in_range(i in 0u64..10_000, (cal, scen) in calibrations()) {
        let t = small_family(i);
        let ln_y = (t.num_choices as f64).ln() + 1e-12;
        let x = t.num_instances as f64;
        let score = |name: &str| run(&t, name, cal, scen).outcome.prompt_scores;
        for v in score("GE").into_iter().chain(score("GE_M")).chain(score("LE")) {
            prop_assert!((0.0..=ln_y).contains(&v));
        }
        for v in score("MDL_M") {
            prop_assert!((-ln_y..=0.0).contains(&v));
        }
        for v in score("MI_A") {
            prop_assert!(v >= -1e-12 && v <= ln_y);
        }
        for name in ["ZLP", "ZPM", "ZMV"] {
            for v in score(name) {
                prop_assert!(v >= 0.0 && v <= x && v.fract() == 0.0);
            }
        }
    }

    #[test]
    fn mdl_picks_lowest_entropy_prompt_per_instance(i in 0u64..10_000, (cal, scen) in calibrations()) {
        let t = small_family(i);
        let r = run(&t, "MDL", cal, scen);
        let c = match cal {
            CalibrationMethod::None => oracle::Cal::None,
            CalibrationMethod::Cc => oracle::Cal::Cc,
            CalibrationMethod::PmiDc => oracle::Cal::Pmi,
            CalibrationMethod::Cbm => oracle::Cal::Cbm,
        };
        let sc = match scen {
            CalibrationScenario::None => oracle::Scen::None,
            CalibrationScenario::AnswerOnly => oracle::Scen::A,
            CalibrationScenario::PssOnly => oracle::Scen::P,
            CalibrationScenario::Both => oracle::Scen::PA,
        };
        let (_, dists) = oracle::scenario(&t, c, sc, oracle::method_agg("MDL", &t));
        for x in 0..t.num_instances {
            let chosen = r.outcome.prompt_for(x);
            let h = oracle::entropy(&dists[chosen][x]);
            for row in &dists {
                prop_assert!(h <= oracle::entropy(&row[x]) + 1e-9);
            }
        }
    }

    #[test]
    fn le_and_mdl_m_are_opposite_rankings(i in 0u64..10_000) {
        let t = small_family(i);
        let le = run(&t, "LE", CalibrationMethod::None, CalibrationScenario::None).outcome.prompt_scores;
        let mdl = run(&t, "MDL_M", CalibrationMethod::None, CalibrationScenario::None).outcome.prompt_scores;
        for (a, b) in le.iter().zip(&mdl) {
            prop_assert_eq!(a.to_bits(), (-b).to_bits());
        }
    }

    #[test]
    fn runs_are_deterministic(i in 0u64..200, (cal, scen) in calibrations()) {
        let t = synth_family(i);
        for name in ALL_METHODS {
            let a = run(&t, name, cal, scen);
            let b = run(&t, name, cal, scen);
            prop_assert_eq!(bits(&a.outcome.prompt_scores), bits(&b.outcome.prompt_scores));
            prop_assert_eq!(&a.answers, &b.answers);
        }
    }

    #[test]
    fn cbm_raw_and_normalized_agree_on_argmax(i in 0u64..10_000) {
        let t = small_family(i);
        let c = calibrate_cbm(&t, t.category.default_aggregation()).unwrap();
        for (raw, norm) in c.raw.iter().flatten().zip(c.normalized.iter().flatten()) {
            prop_assert_eq!(argmax(raw), norm.argmax());
        }
    }

    #[test]
    fn pearson_is_symmetric_and_bounded(xs in prop::collection::vec(-100.0f64..100.0, 3..20), shift in -5.0f64..5.0) {
        let ys: Vec<f64> = xs.iter().enumerate().map(|(i, v)| v * 0.5 + shift * i as f64).collect();
        if let (Ok(a), Ok(b)) = (pearson_corr(&xs, &ys), pearson_corr(&ys, &xs)) {
            prop_assert!((a.r - b.r).abs() < 1e-12);
            prop_assert!(a.r.abs() <= 1.0 + 1e-12);
        }
    }

    #[test]
    fn macro_f1_of_perfect_predictions_is_one_when_all_classes_present(gold in prop::collection::vec(0usize..3, 3..30)) {
        let mut gold = gold;
        gold[0] = 0;
        gold[1] = 1;
        gold[2] = 2;
        prop_assert!((macro_f1(&gold, &gold, 3).unwrap() - 1.0).abs() < 1e-12);
    }
}

#[test]
fn planted_prompt_wins_under_cbm_both() {
    use promptsel::synth::{synth_tensor, PromptProfile, SynthSpec};
    use promptsel::tensor::Category;
    for seed in 0..20 {
        let t = synth_tensor(&SynthSpec {
            num_instances: 30,
            num_choices: 2 + (seed as usize % 3),
            seed,
            profiles: vec![PromptProfile::UniformNoise, PromptProfile::PlantedBest, PromptProfile::UniformNoise],
            noise: 1.0,
            category: Category::ALL[seed as usize % 3],
            max_tokens: 3,
        })
        .unwrap();
        let r = run(&t, "MI_A", CalibrationMethod::Cbm, CalibrationScenario::Both);
        assert_eq!(r.outcome.selection, Selection::Global { prompt: 1 }, "seed {seed}");
    }
}

#[test]
fn averaging_over_tensors_is_fieldwise() {
    let tensors: Vec<ScoreTensor> = (0..4).map(synth_family).collect();
    let summaries: Vec<_> = tensors
        .iter()
        .map(|t| evaluate(t, &run(t, "MI_A", CalibrationMethod::None, CalibrationScenario::None)).unwrap().summary)
        .collect();
    let avg = average_summaries(&summaries).unwrap();
    let mean_acc = summaries.iter().map(|s| s.selected_accuracy).sum::<f64>() / 4.0;
    let mean_best = summaries.iter().map(|s| s.accuracy.best).sum::<f64>() / 4.0;
    assert!((avg.selected_accuracy - mean_acc).abs() < 1e-15);
    assert!((avg.accuracy.best - mean_best).abs() < 1e-15);
    assert!(avg.accuracy.worst <= avg.accuracy.average && avg.accuracy.average <= avg.accuracy.best);
}
