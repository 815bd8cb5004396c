//! Direct evaluation of the selection-score and calibration formulas.
//!
//! Deliberately naive: plain loops, softmax without max-subtraction, entropy
//! straight from the definition. Only the raw fields of `ScoreTensor` are
//! read; none of the crate's scoring code is called.

use promptsel::tensor::ScoreTensor;

/// `[t][x][y]`.
pub type Grid = Vec<Vec<Vec<f64>>>;

pub const TIE: f64 = 1e-12;
pub const FLOOR: f64 = 1e-300;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Agg {
    First,
    Mean,
    Sum,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Cal {
    None,
    Cc,
    Pmi,
    Cbm,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Scen {
    None,
    A,
    P,
    PA,
}

/// Lowest index within `TIE` (relative, floored at 1) of the maximum.
pub fn pick_max(v: &[f64]) -> usize {
    let mut best = f64::NEG_INFINITY;
    for &a in v {
        if a > best {
            best = a;
        }
    }
    if best.is_infinite() {
        for (i, &a) in v.iter().enumerate() {
            if a == best {
                return i;
            }
        }
        return 0;
    }
    let scale = if best.abs() > 1.0 { best.abs() } else { 1.0 };
    for (i, &a) in v.iter().enumerate() {
        if a >= best - TIE * scale {
            return i;
        }
    }
    0
}

pub fn agg(tokens: &[f64], mode: Agg) -> f64 {
    match mode {
        Agg::First => tokens[0],
        Agg::Sum => {
            let mut s = 0.0;
            for t in tokens {
                s += t;
            }
            s
        }
        Agg::Mean => agg(tokens, Agg::Sum) / tokens.len() as f64,
    }
}

pub fn softmax(v: &[f64]) -> Vec<f64> {
    let mut z = 0.0;
    for a in v {
        z += a.exp();
    }
    v.iter().map(|a| a.exp() / z).collect()
}

pub fn entropy(p: &[f64]) -> f64 {
    let mut h = 0.0;
    for &q in p {
        if q >= FLOOR {
            h -= q * q.ln();
        }
    }
    if h < 0.0 {
        0.0
    } else {
        h
    }
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let mut m = vec![0.0; rows[0].len()];
    for r in rows {
        for (i, v) in r.iter().enumerate() {
            m[i] += v;
        }
    }
    for v in m.iter_mut() {
        *v /= rows.len() as f64;
    }
    m
}

fn hot(p: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; p.len()];
    h[pick_max(p)] = 1.0;
    h
}

/// Raw aggregated logits `[t][x][y]`.
pub fn logits(tn: &ScoreTensor, mode: Agg) -> Grid {
    let (nx, ny) = (tn.num_instances, tn.num_choices);
    (0..tn.num_prompts)
        .map(|t| {
            (0..nx)
                .map(|x| (0..ny).map(|y| agg(&tn.choice_token_logprobs[(t * nx + x) * ny + y], mode)).collect())
                .collect()
        })
        .collect()
}

pub fn probs(tn: &ScoreTensor, mode: Agg) -> Grid {
    logits(tn, mode)
        .into_iter()
        .map(|row| row.into_iter().map(|l| softmax(&l)).collect())
        .collect()
}

/// Calibrated raw scores `q̃`, indexed `[t][x][y]`.
pub fn calibrated(tn: &ScoreTensor, cal: Cal, mode: Agg) -> Grid {
    let ny = tn.num_choices;
    let p = probs(tn, mode);
    match cal {
        Cal::None => p,
        Cal::Cc => {
            let cf = tn.content_free_logits.as_ref().unwrap();
            (0..tn.num_prompts)
                .map(|t| {
                    let raw: Vec<f64> = (0..ny)
                        .map(|y| cf[t * ny + y].iter().map(|l| l.exp()).sum::<f64>() / 3.0)
                        .collect();
                    let m = raw.iter().sum::<f64>() / ny as f64;
                    let d: Vec<f64> = raw.iter().map(|r| (r / m).max(1e-12)).collect();
                    p[t].iter().map(|px| (0..ny).map(|y| px[y] / d[y]).collect()).collect()
                })
                .collect()
        }
        Cal::Pmi => {
            let dom = tn.domain_logits.as_ref().unwrap();
            logits(tn, mode)
                .into_iter()
                .enumerate()
                .map(|(t, row)| row.into_iter().map(|l| (0..ny).map(|y| l[y] - dom[t * ny + y]).collect()).collect())
                .collect()
        }
        Cal::Cbm => p
            .iter()
            .map(|row| {
                let m: Vec<f64> = mean_rows(row).into_iter().map(|v| v.max(1e-12)).collect();
                row.iter().map(|px| (0..ny).map(|y| px[y] / m[y]).collect()).collect()
            })
            .collect(),
    }
}

/// (answer scores, pss distributions), both `[t][x][y]`.
pub fn scenario(tn: &ScoreTensor, cal: Cal, scen: Scen, mode: Agg) -> (Grid, Grid) {
    let p = probs(tn, mode);
    if cal == Cal::None || scen == Scen::None {
        return (p.clone(), p);
    }
    let q_raw = calibrated(tn, cal, mode);
    let q: Grid = q_raw
        .iter()
        .map(|row| row.iter().map(|v| softmax(v)).collect())
        .collect();
    match scen {
        Scen::A => (q_raw, p),
        Scen::P => (p, q),
        Scen::PA => (q_raw, q),
        Scen::None => unreachable!(),
    }
}

/// Oracle view of one method run.
#[derive(Debug, Clone)]
pub struct Pss {
    pub per_prompt: Vec<f64>,
    /// `[x][t]` for instance-wise methods.
    pub per_instance: Option<Vec<Vec<f64>>>,
    /// Selected prompt per instance (constant for global methods).
    pub chosen: Vec<usize>,
}

fn global(per_prompt: Vec<f64>, nx: usize) -> Pss {
    let t = pick_max(&per_prompt);
    Pss { per_prompt, per_instance: None, chosen: vec![t; nx] }
}

fn instance_wise(per_instance: Vec<Vec<f64>>, nt: usize) -> Pss {
    let nx = per_instance.len();
    let per_prompt = (0..nt).map(|t| per_instance.iter().map(|r| r[t]).sum::<f64>() / nx as f64).collect();
    let chosen = per_instance.iter().map(|r| pick_max(r)).collect();
    Pss { per_prompt, per_instance: Some(per_instance), chosen }
}

/// Evaluates a named method on distributions `d[t][x][y]`.
pub fn pss(name: &str, d: &[Vec<Vec<f64>>], tn: &ScoreTensor) -> Pss {
    let nt = d.len();
    let nx = d[0].len();
    let ge = |one_hot: bool| -> Vec<f64> {
        d.iter()
            .map(|row| {
                let rows: Vec<Vec<f64>> = row.iter().map(|p| if one_hot { hot(p) } else { p.clone() }).collect();
                entropy(&mean_rows(&rows))
            })
            .collect()
    };
    let h: Vec<Vec<f64>> = d.iter().map(|row| row.iter().map(|p| entropy(p)).collect()).collect();
    let mean_h: Vec<f64> = h.iter().map(|r| r.iter().sum::<f64>() / nx as f64).collect();
    let per_x = |first: Vec<f64>| -> Vec<Vec<f64>> {
        (0..nx).map(|x| (0..nt).map(|t| first[t] - h[t][x]).collect()).collect()
    };
    match name {
        "MI" | "MI_A" => global(ge(false).iter().zip(&mean_h).map(|(a, b)| a - b).collect(), nx),
        "MI_AG" => global(ge(true).iter().zip(&mean_h).map(|(a, b)| a - b).collect(), nx),
        "MI_AL" => instance_wise(per_x(ge(false)), nt),
        "MI_AGL" => instance_wise(per_x(ge(true)), nt),
        "GE" => global(ge(true), nx),
        "GE_M" => global(ge(false), nx),
        "LE" => global(mean_h.clone(), nx),
        "MDL" => instance_wise(per_x(vec![0.0; nt]), nt),
        "MDL_M" => global(mean_h.iter().map(|v| -v).collect(), nx),
        "ZLP" | "ZPM" | "ZMV" => {
            let ny = d[0][0].len();
            let mut scores = vec![0.0; nt];
            for x in 0..nx {
                let mut s = vec![0.0; ny];
                for t in 0..nt {
                    match name {
                        "ZLP" => (0..ny).for_each(|y| s[y] += d[t][x][y].max(FLOOR).ln() / nt as f64),
                        "ZPM" => (0..ny).for_each(|y| s[y] += d[t][x][y] / nt as f64),
                        _ => s[pick_max(&d[t][x])] += 1.0,
                    }
                }
                let label = pick_max(&s);
                for t in 0..nt {
                    if pick_max(&d[t][x]) == label {
                        scores[t] += 1.0;
                    }
                }
            }
            global(scores, nx)
        }
        "PPL" => {
            let stats = tn.sequence_stats.as_ref().unwrap();
            let scores = (0..nt)
                .map(|t| {
                    let mut acc = 0.0;
                    for x in 0..nx {
                        let s = stats[t * nx + x];
                        let p = (s.sum_logprob / (s.token_count as f64 - 1.0)).exp();
                        acc += 1.0 / p;
                    }
                    -acc / nx as f64
                })
                .collect();
            global(scores, nx)
        }
        other => panic!("oracle has no method {other}"),
    }
}

/// Aggregation a named method uses on a tensor of this category.
pub fn method_agg(name: &str, tn: &ScoreTensor) -> Agg {
    if name == "MI" {
        return Agg::First;
    }
    match tn.category {
        promptsel::tensor::Category::Dynamic => Agg::Sum,
        _ => Agg::Mean,
    }
}
