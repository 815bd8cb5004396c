#![allow(dead_code)]

pub mod oracle;

use promptsel::synth::{synth_tensor, PromptProfile, SynthSpec};
use promptsel::tensor::{Category, ScoreTensor, SequenceStat};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ALL_METHODS: [&str; 14] = [
    "MI", "MI_A", "MI_AG", "MI_AL", "MI_AGL", "GE", "GE_M", "LE", "MDL", "MDL_M", "ZLP", "ZPM", "ZMV", "PPL",
];

pub fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|f| f.to_bits()).collect()
}

/// Synthetic tensor `i` of a seeded family spanning every category, up to 20×50×5.
pub fn synth_family(i: u64) -> ScoreTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0FFEE ^ i);
    let nt = rng.random_range(1..=20);
    let planted_at = rng.random_range(0..nt + 1);
    let profiles = (0..nt)
        .map(|t| {
            if t == planted_at {
                PromptProfile::PlantedBest
            } else {
                [PromptProfile::CollapsedOverconfident, PromptProfile::UniformNoise, PromptProfile::LabelBiased]
                    [rng.random_range(0..3)]
            }
        })
        .collect();
    let spec = SynthSpec {
        num_instances: rng.random_range(1..=50),
        num_choices: rng.random_range(2..=5),
        seed: i,
        profiles,
        noise: rng.random_range(0.0..3.0),
        category: Category::ALL[(i % 3) as usize],
        max_tokens: rng.random_range(1..=4),
    };
    synth_tensor(&spec).expect("valid synth spec")
}

/// Small random tensor `i` (|T| ≤ 3, |X| ≤ 4, |Y| ≤ 3) with every section
/// present. Some draws duplicate prompts, instances or choices to exercise ties.
pub fn small_family(i: u64) -> ScoreTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5EED_0000 + i);
    let nt = rng.random_range(1..=3);
    let nx = rng.random_range(1..=4);
    let ny = rng.random_range(2..=3);
    let mut choice: Vec<Vec<f64>> = (0..nt * nx * ny)
        .map(|_| {
            let n = rng.random_range(1..=3);
            (0..n).map(|_| rng.random_range(-8.0..-0.01)).collect()
        })
        .collect();
    let idx = |t: usize, x: usize, y: usize| (t * nx + x) * ny + y;
    if rng.random_bool(0.15) {
        // prompt constant in x
        for x in 1..nx {
            for y in 0..ny {
                choice[idx(0, x, y)] = choice[idx(0, 0, y)].clone();
            }
        }
    }
    if nt > 1 && rng.random_bool(0.15) {
        // duplicate prompt
        for x in 0..nx {
            for y in 0..ny {
                choice[idx(nt - 1, x, y)] = choice[idx(0, x, y)].clone();
            }
        }
    }
    if rng.random_bool(0.1) {
        // tied choices
        for t in 0..nt {
            for x in 0..nx {
                choice[idx(t, x, 1)] = choice[idx(t, x, 0)].clone();
            }
        }
    }
    let sequence_stats = (0..nt * nx)
        .map(|_| {
            let token_count = rng.random_range(2..=30u32);
            let nll: f64 = rng.random_range(0.1..4.0);
            SequenceStat { sum_logprob: -nll * f64::from(token_count - 1), token_count }
        })
        .collect();
    let content_free = (0..nt * ny)
        .map(|_| [0; 3].map(|_| rng.random_range(-6.0..0.0)))
        .collect();
    let domain = (0..nt * ny).map(|_| rng.random_range(-6.0..0.0)).collect();
    let tensor = ScoreTensor {
        dataset_id: format!("small-{i}"),
        category: Category::ALL[rng.random_range(0..3)],
        num_prompts: nt,
        num_instances: nx,
        num_choices: ny,
        prompt_ids: (0..nt).map(|t| format!("t{t}")).collect(),
        gold_labels: (0..nx).map(|_| rng.random_range(0..ny)).collect(),
        choice_token_logprobs: choice,
        sequence_stats: Some(sequence_stats),
        content_free_logits: Some(content_free),
        domain_logits: Some(domain),
    };
    tensor.validate().expect("valid small tensor");
    tensor
}

/// Collapsed prompt (index 0) next to a noisy prompt, two choices.
pub fn collapsed_fixture() -> ScoreTensor {
    synth_tensor(&SynthSpec {
        num_instances: 40,
        num_choices: 2,
        seed: 11,
        profiles: vec![PromptProfile::CollapsedOverconfident, PromptProfile::UniformNoise],
        noise: 1.0,
        category: Category::Balanced,
        max_tokens: 3,
    })
    .expect("valid fixture")
}

/// Dynamic 2×4×2 tensor with single-token verbalizers.
///
/// Gold is (1, 0, 1, 1). Prompt 0 answers (1, 0, 0, 1), prompt 1 always answers 0.
pub fn label_bias_fixture() -> ScoreTensor {
    let lp = |a: f64| [a.ln(), (1.0 - a).ln()];
    let p0 = [0.3, 0.8, 0.6, 0.1];
    let p1 = [0.7, 0.9, 0.55, 0.8];
    let mut choice = Vec::new();
    for row in [p0, p1] {
        for a in row {
            choice.extend(lp(a).map(|v| vec![v]));
        }
    }
    ScoreTensor {
        dataset_id: "label-bias".into(),
        category: Category::Dynamic,
        num_prompts: 2,
        num_instances: 4,
        num_choices: 2,
        prompt_ids: vec!["a".into(), "b".into()],
        gold_labels: vec![1, 0, 1, 1],
        choice_token_logprobs: choice,
        sequence_stats: Some(
            [(-6.0, 4), (-9.5, 6), (-3.0, 3), (-12.0, 9), (-5.0, 5), (-2.0, 2), (-7.5, 4), (-10.0, 8)]
                .map(|(s, n)| SequenceStat { sum_logprob: s, token_count: n })
                .to_vec(),
        ),
        content_free_logits: Some(vec![[-0.5, -0.9, -0.7], [-1.0, -0.6, -0.8], [-0.2, -0.4, -0.3], [-1.8, -1.2, -1.5]]),
        domain_logits: Some(vec![-0.6, -0.8, -0.3, -1.4]),
    }
}
