//! Generators, oracles and invariant checks shared by the property suite and
//! the acceptance target.
#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::TestCaseError;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dialeval::corpus::{
    aggregate_score, read_corpus, write_corpus, Corpus, Dialogue, Pos, SegmentTag, Speaker, Task, Token, TokenTag,
    UtteranceSegment,
};
use dialeval::eval::loocv;
use dialeval::features::{extract_dialogue, ExtractOptions, Feature};
use dialeval::gbt::{fit, GbtConfig, GbtModel};
use dialeval::ipu::{floor_transitions, merge_segments, segment_ipus};
use dialeval::shapley::{FnModel, TreeValueFunction, ValueFunction};

pub type Check = Result<(), TestCaseError>;

const VOCAB: [&str; 6] = ["a", "b", "c", "d", "e", "f"];
const POS: [Pos; 4] = [Pos::Noun, Pos::Verb, Pos::Particle, Pos::Auxiliary];

#[derive(Debug, Clone)]
pub struct SegSpec {
    gap: i64,
    dur: i64,
    tokens: Vec<(usize, usize, u8)>,
    tag: u8,
}

fn seg_spec() -> impl Strategy<Value = SegSpec> {
    (
        0i64..700,
        1i64..3000,
        prop::collection::vec((0usize..VOCAB.len(), 0usize..POS.len(), 0u8..6), 0..4),
        0u8..10,
    )
        .prop_map(|(gap, dur, tokens, tag)| SegSpec { gap, dur, tokens, tag })
}

fn lay_out(speaker: Speaker, specs: &[SegSpec], origin: i64) -> Vec<UtteranceSegment> {
    let mut t = origin;
    specs
        .iter()
        .map(|s| {
            let start = t + s.gap;
            t = start + s.dur;
            let mut tokens: Vec<Token> = s
                .tokens
                .iter()
                .map(|&(v, p, tag)| {
                    let tok = Token::new(VOCAB[v], POS[p]);
                    match tag {
                        0 => tok.tagged(TokenTag::Filler),
                        1 => tok.tagged(TokenTag::Disfluency),
                        _ => tok,
                    }
                })
                .collect();
            let mut seg = UtteranceSegment::new(speaker, start, t, Vec::new());
            match s.tag {
                0 => seg = seg.tagged(SegmentTag::Backchannel),
                1 => seg = seg.tagged(SegmentTag::Laugh),
                2 => {
                    seg = seg.tagged(SegmentTag::Laugh);
                    tokens.clear();
                }
                _ => {}
            }
            if speaker == Speaker::User && tokens.is_empty() && !seg.is_laugh() {
                tokens.push(Token::new("x", Pos::Noun));
            }
            seg.tokens = tokens;
            seg
        })
        .collect()
}

/// Random valid dialogue: independent system and user tracks, optional
/// declared duration that covers the last segment.
pub fn arb_dialogue() -> impl Strategy<Value = Dialogue> {
    (
        prop::collection::vec(seg_spec(), 0..10),
        prop::collection::vec(seg_spec(), 1..12),
        0i64..3000,
        prop::option::of(200i64..5000),
        prop::collection::vec(1.0f64..=7.0, 1..6),
    )
        .prop_map(|(sys, usr, origin, extra, items)| {
            let mut d = Dialogue::new("p", Task::Other);
            d.segments = lay_out(Speaker::System, &sys, origin);
            d.segments.extend(lay_out(Speaker::User, &usr, origin));
            d.sort_segments();
            let max_end = d.segments.iter().map(|s| s.end_ms).max().unwrap_or(0);
            d.session_duration_ms = extra.map(|e| max_end + e);
            d.item_scores = Some(items);
            d.validate().expect("generator emits valid dialogues");
            d
        })
}

fn feature_values(d: &Dialogue) -> Result<Vec<f64>, TestCaseError> {
    extract_dialogue(d, &ExtractOptions::default())
        .map(|e| e.features.0.to_vec())
        .map_err(|e| TestCaseError::fail(e.to_string()))
}

fn ok<T>(r: dialeval::Result<T>) -> Result<T, TestCaseError> {
    r.map_err(|e| TestCaseError::fail(e.to_string()))
}

// IPU segmentation

pub fn ipu_idempotence(d: &Dialogue, threshold: i64) -> Check {
    let t = ok(segment_ipus(d, threshold))?;
    let segs: Vec<UtteranceSegment> = t.ipus.iter().map(|i| i.to_segment()).collect();
    let again = ok(merge_segments(&segs, threshold))?;
    prop_assert_eq!(again, t);
    Ok(())
}

pub fn ipu_monotonicity(d: &Dialogue, lo: i64, hi: i64) -> Check {
    let (lo, hi) = (lo.min(hi), lo.max(hi));
    let a = ok(segment_ipus(d, lo))?.ipus.len();
    let b = ok(segment_ipus(d, hi))?.ipus.len();
    prop_assert!(b <= a, "threshold {hi} gives {b} IPUs, {lo} gives {a}");
    Ok(())
}

pub fn ipu_token_conservation(d: &Dialogue, threshold: i64) -> Check {
    let before: usize = d.segments.iter().map(|s| s.tokens.len()).sum();
    let after = ok(segment_ipus(d, threshold))?.token_count();
    prop_assert_eq!(before, after);
    Ok(())
}

/// Splits one user segment at an interior point, opening a gap of
/// `threshold - 1` ms (later user segments move with it).
pub fn ipu_subthreshold_split(d: &Dialogue, threshold: i64, pick: usize, at: i64) -> Check {
    let users: Vec<usize> = (0..d.segments.len())
        .filter(|&i| d.segments[i].speaker == Speaker::User && d.segments[i].end_ms - d.segments[i].start_ms >= 2)
        .collect();
    if users.is_empty() {
        return Ok(());
    }
    let idx = users[pick % users.len()];
    let target = d.segments[idx].clone();
    let p = target.start_ms + 1 + at.rem_euclid(target.end_ms - target.start_ms - 1);
    let shift = threshold - 1;
    let mut segs = Vec::new();
    for (i, s) in d.segments.iter().enumerate() {
        if i == idx {
            let k = s.tokens.len() / 2;
            let mut first = s.clone();
            first.end_ms = p;
            first.tokens.truncate(k);
            let mut second = s.clone();
            second.start_ms = p + shift;
            second.end_ms = s.end_ms + shift;
            second.tokens = s.tokens[k..].to_vec();
            segs.push(first);
            segs.push(second);
        } else if s.speaker == Speaker::User && s.start_ms > target.start_ms {
            let mut moved = s.clone();
            moved.start_ms += shift;
            moved.end_ms += shift;
            segs.push(moved);
        } else {
            segs.push(s.clone());
        }
    }
    let before = ok(merge_segments(&d.segments, threshold))?.ipus.len();
    let after = ok(merge_segments(&segs, threshold))?.ipus.len();
    prop_assert_eq!(before, after);
    Ok(())
}

// Features

fn shifted(d: &Dialogue, offset: i64, speaker: Option<Speaker>) -> Dialogue {
    let mut out = d.clone();
    for s in &mut out.segments {
        if speaker.is_none_or(|sp| sp == s.speaker) {
            s.start_ms += offset;
            s.end_ms += offset;
        }
    }
    out.sort_segments();
    out
}

pub fn feature_time_shift(d: &Dialogue, offset: i64) -> Check {
    let mut d = d.clone();
    d.session_duration_ms = None;
    let a = feature_values(&d)?;
    let b = feature_values(&shifted(&d, offset, None))?;
    for (j, (x, y)) in a.iter().zip(&b).enumerate() {
        prop_assert!((x - y).abs() <= 1e-9, "f{} changed: {x} vs {y}", j + 1);
    }
    Ok(())
}

pub fn feature_self_concatenation(d: &Dialogue) -> Check {
    let mut d = d.clone();
    let max_end = d.segments.iter().map(|s| s.end_ms).max().unwrap_or(0);
    let duration = d.session_duration_ms.unwrap_or(max_end + 200).max(max_end + 200);
    d.session_duration_ms = Some(duration);
    let copy = shifted(&d, duration, None);
    let mut twice = d.clone();
    twice.segments.extend(copy.segments);
    twice.sort_segments();
    twice.session_duration_ms = Some(2 * duration);
    ok(twice.validate())?;
    let a = feature_values(&d)?;
    let b = feature_values(&twice)?;
    for f in [
        Feature::UtteranceTime,
        Feature::IpuCount,
        Feature::WordCount,
        Feature::ContentWordCount,
        Feature::BackchannelCount,
        Feature::FillerCount,
        Feature::LaughCount,
        Feature::DisfluencyCount,
    ] {
        let (x, y) = (a[f.index()], b[f.index()]);
        prop_assert!((x - y).abs() <= 1e-9, "{} changed: {x} vs {y}", f.key());
    }
    Ok(())
}

pub fn feature_switch_pause_delay(d: &Dialogue, delay: i64) -> Check {
    let mut d = d.clone();
    d.session_duration_ms = None;
    let late = shifted(&d, delay, Some(Speaker::User));
    let pairs = |x: &Dialogue, back: i64| -> Result<Vec<(i64, i64)>, TestCaseError> {
        let t = ok(segment_ipus(x, 200))?;
        Ok(floor_transitions(&t)
            .iter()
            .map(|tr| (tr.from.start_ms, tr.to.start_ms - back))
            .collect())
    };
    let before = pairs(&d, 0)?;
    if before.is_empty() || before != pairs(&late, delay)? {
        return Ok(());
    }
    let a = feature_values(&d)?[Feature::AvgSwitchPause.index()];
    let b = feature_values(&late)?[Feature::AvgSwitchPause.index()];
    prop_assert!((b - a - delay as f64 / 1000.0).abs() <= 1e-9, "{a} -> {b} for delay {delay}");
    Ok(())
}

// Boosted trees

#[derive(Debug, Clone)]
pub struct GbtCase {
    pub matrix: Vec<Vec<f64>>,
    pub targets: Vec<f64>,
    pub config: GbtConfig,
}

/// Random regression problem with a nonlinear target and a random config.
pub fn arb_gbt_case(max_features: usize, rows: std::ops::Range<usize>, full_sample: bool) -> impl Strategy<Value = GbtCase> {
    (
        1..=max_features,
        rows,
        any::<u64>(),
        1usize..25,
        1usize..5,
        0.05f64..1.0,
        1usize..4,
        prop::bool::ANY,
    )
        .prop_map(move |(nf, n, seed, n_trees, max_depth, learning_rate, min_samples_leaf, sub)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let matrix: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..nf).map(|_| rng.gen_range(-5.0..5.0)).collect())
                .collect();
            let targets = matrix
                .iter()
                .map(|r| {
                    let a = r[0];
                    let b = r.get(1).copied().unwrap_or(0.0);
                    a.sin() * 2.0 + (a * b > 0.0) as u8 as f64 + rng.gen_range(-0.3..0.3)
                })
                .collect();
            GbtCase {
                matrix,
                targets,
                config: GbtConfig {
                    n_trees,
                    learning_rate,
                    max_depth,
                    min_samples_leaf,
                    subsample: if sub && !full_sample { 0.7 } else { 1.0 },
                    seed,
                },
            }
        })
}

pub fn gbt_translation_equivariance(case: &GbtCase, c: f64) -> Check {
    let m1 = ok(fit(&case.matrix, &case.targets, &case.config))?;
    let shifted: Vec<f64> = case.targets.iter().map(|y| y + c).collect();
    let m2 = ok(fit(&case.matrix, &shifted, &case.config))?;
    for row in &case.matrix {
        let (a, b) = (m1.predict_raw(row), m2.predict_raw(row));
        prop_assert!((b - a - c).abs() <= 1e-9, "shift {c}: {a} -> {b}");
    }
    Ok(())
}

fn mse(model: &GbtModel, case: &GbtCase) -> f64 {
    case.matrix
        .iter()
        .zip(&case.targets)
        .map(|(r, y)| (model.predict_raw(r) - y).powi(2))
        .sum::<f64>()
        / case.targets.len() as f64
}

/// Training MSE never rises as trees are added (full-sample rounds).
pub fn gbt_mse_monotonicity(case: &GbtCase) -> Check {
    let model = ok(fit(&case.matrix, &case.targets, &case.config))?;
    let mut prev = f64::INFINITY;
    for k in 0..=model.trees.len() {
        let e = mse(&model.truncated(k), case);
        prop_assert!(e <= prev + 1e-12 * (1.0 + prev.min(1e300)), "round {k}: {e} > {prev}");
        prev = e;
    }
    Ok(())
}

/// The held-out row's own target never reaches the model that predicts it.
pub fn loocv_leakage(case: &GbtCase, planted: usize) -> Check {
    let n = case.targets.len();
    let i = planted % n;
    let ids: Vec<String> = (0..n).map(|k| format!("r{k}")).collect();
    let mut high = case.targets.clone();
    high[i] = 1e6;
    let mut low = case.targets.clone();
    low[i] = -1e6;
    let a = ok(loocv(&case.matrix, &high, &ids, &case.config, None))?;
    let b = ok(loocv(&case.matrix, &low, &ids, &case.config, None))?;
    let (pa, pb) = (a.per_dialogue[i].prediction, b.per_dialogue[i].prediction);
    prop_assert_eq!(pa.to_bits(), pb.to_bits(), "planted row {} moved: {} vs {}", i, pa, pb);
    Ok(())
}

// Corpus

pub fn corpus_round_trip(dialogues: Vec<Dialogue>) -> Check {
    let dialogues: Vec<Dialogue> = dialogues
        .into_iter()
        .enumerate()
        .map(|(k, mut d)| {
            d.id = format!("d{k}");
            d
        })
        .collect();
    let corpus = ok(Corpus::new(dialogues, Default::default()))?;
    let mut buf = Vec::new();
    write_corpus(&corpus, &mut buf).unwrap();
    let back = ok(read_corpus(&buf[..]))?;
    prop_assert_eq!(back, corpus);
    Ok(())
}

pub fn aggregate_permutation(items: &[f64], seed: u64) -> Check {
    use rand::seq::SliceRandom;
    let mut perm = items.to_vec();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let (a, b) = (ok(aggregate_score(items))?, ok(aggregate_score(&perm))?);
    prop_assert!((a - b).abs() <= 1e-12);
    Ok(())
}

// Shapley

/// Direct evaluation of the Shapley formula with explicit subsets and
/// floating factorials; shares no code with the library.
pub fn naive_shapley(predict: &dyn Fn(&[f64]) -> f64, background: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let fact = |k: usize| (1..=k).map(|v| v as f64).product::<f64>();
    let value = |present: &[bool]| {
        background
            .iter()
            .map(|b| {
                let row: Vec<f64> = (0..n).map(|i| if present[i] { x[i] } else { b[i] }).collect();
                predict(&row)
            })
            .sum::<f64>()
            / background.len() as f64
    };
    let mut phi = vec![0.0; n];
    for (f, phi_f) in phi.iter_mut().enumerate() {
        let others: Vec<usize> = (0..n).filter(|&i| i != f).collect();
        for pick in 0..(1usize << others.len()) {
            let mut present = vec![false; n];
            let mut size = 0;
            for (bit, &i) in others.iter().enumerate() {
                if pick >> bit & 1 == 1 {
                    present[i] = true;
                    size += 1;
                }
            }
            let without = value(&present);
            present[f] = true;
            let with = value(&present);
            *phi_f += fact(size) * fact(n - size - 1) / fact(n) * (with - without);
        }
    }
    phi
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Both library routes agree with the naive oracle and satisfy efficiency.
pub fn shapley_oracle(case: &GbtCase, instance: usize) -> Check {
    let model = ok(fit(&case.matrix, &case.targets, &case.config))?;
    let background = &case.matrix[..case.matrix.len().min(12)];
    let x = &case.matrix[instance % case.matrix.len()];
    let oracle = naive_shapley(&|r| model.predict_raw(r), background, x);
    let tree = ok(ok(TreeValueFunction::new(&model, background))?.shap_values(x))?;
    let generic = ok(ok(ValueFunction::new(&model, background))?.shap_values(x))?;
    prop_assert!(max_abs_diff(&tree.phi, &oracle) <= 1e-9, "tree {:?} vs {:?}", tree.phi, oracle);
    prop_assert!(max_abs_diff(&generic.phi, &oracle) <= 1e-9, "generic {:?} vs {:?}", generic.phi, oracle);
    prop_assert!(tree.efficiency_gap().abs() <= 1e-9);
    Ok(())
}

/// A model symmetric in features 0 and 1, with matching background columns
/// and instance values, gives both features the same attribution.
pub fn shapley_symmetry(case: &GbtCase, instance: usize) -> Check {
    if case.matrix[0].len() < 2 {
        return Ok(());
    }
    let model = ok(fit(&case.matrix, &case.targets, &case.config))?;
    let sym = FnModel {
        features: model.feature_count,
        f: |r: &[f64]| {
            let mut swapped = r.to_vec();
            swapped.swap(0, 1);
            model.predict_raw(r) + model.predict_raw(&swapped)
        },
    };
    let dup = |r: &Vec<f64>| {
        let mut r = r.clone();
        r[1] = r[0];
        r
    };
    let background: Vec<Vec<f64>> = case.matrix.iter().take(10).map(dup).collect();
    let x = dup(&case.matrix[instance % case.matrix.len()]);
    let a = ok(ok(ValueFunction::new(&sym, &background))?.shap_values(&x))?;
    prop_assert!((a.phi[0] - a.phi[1]).abs() <= 1e-9, "{} vs {}", a.phi[0], a.phi[1]);
    Ok(())
}

/// Attributions of a sum of two models are the sums of their attributions.
pub fn shapley_linearity(case: &GbtCase, instance: usize) -> Check {
    let m1 = ok(fit(&case.matrix, &case.targets, &case.config))?;
    let cfg2 = GbtConfig {
        max_depth: case.config.max_depth % 3 + 1,
        seed: case.config.seed.wrapping_add(1),
        ..case.config
    };
    let squared: Vec<f64> = case.targets.iter().map(|y| y * y).collect();
    let m2 = ok(fit(&case.matrix, &squared, &cfg2))?;
    let sum = FnModel {
        features: m1.feature_count,
        f: |r: &[f64]| m1.predict_raw(r) + m2.predict_raw(r),
    };
    let background = &case.matrix[..case.matrix.len().min(10)];
    let x = &case.matrix[instance % case.matrix.len()];
    let joint = ok(ok(ValueFunction::new(&sum, background))?.shap_values(x))?;
    let a = ok(ok(TreeValueFunction::new(&m1, background))?.shap_values(x))?;
    let b = ok(ok(TreeValueFunction::new(&m2, background))?.shap_values(x))?;
    let parts: Vec<f64> = a.phi.iter().zip(&b.phi).map(|(p, q)| p + q).collect();
    prop_assert!(max_abs_diff(&joint.phi, &parts) <= 1e-9);
    Ok(())
}

/// A constant column is never split on and gets exactly zero attribution.
pub fn shapley_dummy(case: &GbtCase, column: usize, instance: usize) -> Check {
    let mut case = case.clone();
    let c = column % case.matrix[0].len();
    for r in &mut case.matrix {
        r[c] = 3.25;
    }
    let model = ok(fit(&case.matrix, &case.targets, &case.config))?;
    prop_assert!(!model.split_features().contains(&c));
    let background = &case.matrix[..case.matrix.len().min(10)];
    let mut x = case.matrix[instance % case.matrix.len()].clone();
    x[c] = -7.0;
    let tree = ok(ok(TreeValueFunction::new(&model, background))?.shap_values(&x))?;
    let generic = ok(ok(ValueFunction::new(&model, background))?.shap_values(&x))?;
    prop_assert_eq!(tree.phi[c], 0.0);
    prop_assert_eq!(generic.phi[c], 0.0);
    Ok(())
}
