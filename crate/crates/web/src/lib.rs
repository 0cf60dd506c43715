//! Browser bindings for the demo page. Each export takes plain values and
//! returns a JSON string; the pure functions behind them are tested natively.

use serde::Serialize;
use stopforge::chain::{stationary_sample, step, ChainState};
use stopforge::coding::{last_reset_index, BitString, CodingFunction};
use stopforge::forge::{forge, ForgeConfig};
use stopforge::oracle::cond_prob_trace;
use stopforge::predictors::{PredictorId, RuleId};
use stopforge::rng;
use wasm_bindgen::prelude::*;

/// Longest trajectory the page may request.
pub const MAX_LENGTH: usize = 5000;

#[derive(Serialize)]
struct Trajectory {
    states: Vec<u64>,
    bits: Vec<u8>,
    truth: Vec<f64>,
}

#[derive(Serialize)]
struct Trace {
    truth: Vec<f64>,
    predicted: Vec<f64>,
    last_reset: Option<usize>,
}

fn parse_coding(json: &str) -> Result<CodingFunction, String> {
    if json.trim().is_empty() {
        return Ok(CodingFunction::default());
    }
    serde_json::from_str(json).map_err(|e| format!("coding: {e}"))
}

/// Stationary trajectory, its coded bits and the exact conditional
/// probability of a 1 after every prefix.
pub fn simulate_json(seed: u64, length: usize, coding: &str) -> Result<String, String> {
    if length == 0 || length > MAX_LENGTH {
        return Err(format!("length must be in 1..={MAX_LENGTH}"));
    }
    let f = parse_coding(coding)?;
    let mut g = rng::from_seed(seed);
    let mut s = stationary_sample(&mut g);
    let mut states = Vec::with_capacity(length);
    for t in 0..length {
        if t > 0 {
            s = step(s, &mut g);
        }
        states.push(s.0);
    }
    let bits: Vec<u8> = states.iter().map(|&v| f.apply(ChainState(v))).collect();
    let truth = cond_prob_trace(&f, &bits).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&Trajectory { states, bits, truth }).expect("serializable"))
}

/// Exact conditional probabilities next to a predictor's guesses on a
/// user-supplied bit string.
pub fn trace_json(bits: &str, coding: &str, predictor: &str) -> Result<String, String> {
    let bits: BitString = bits.parse().map_err(|e| format!("bits: {e}"))?;
    if bits.len() > MAX_LENGTH {
        return Err(format!("at most {MAX_LENGTH} bits"));
    }
    let f = parse_coding(coding)?;
    let mut e = predictor.parse::<PredictorId>().map_err(|e| e.to_string())?.build();
    let truth = cond_prob_trace(&f, &bits).map_err(|e| e.to_string())?;
    let predicted = bits
        .iter()
        .map(|&b| {
            e.observe(b);
            e.predict()
        })
        .collect();
    let last_reset = last_reset_index(&bits);
    Ok(serde_json::to_string(&Trace { truth, predicted, last_reset }).expect("serializable"))
}

/// Forge `levels` levels against a predictor and stopping rule.
pub fn forge_json(
    predictor: &str,
    rule: &str,
    levels: u64,
    samples: u64,
    seed: u64,
) -> Result<String, String> {
    let e = predictor.parse::<PredictorId>().map_err(|e| e.to_string())?.build();
    let r = rule.parse::<RuleId>().map_err(|e| e.to_string())?.build();
    let cfg = ForgeConfig {
        seed,
        samples,
        // Exact enumeration walks a million paths; too slow for a page.
        exact_threshold: 0,
        ..ForgeConfig::default()
    };
    let result = forge(levels, e.as_ref(), r.as_ref(), &cfg).map_err(|e| e.to_string())?;
    Ok(serde_json::to_string(&result).expect("serializable"))
}

#[wasm_bindgen]
pub fn simulate_process(seed: u64, length: usize, coding: &str) -> Result<String, JsError> {
    simulate_json(seed, length, coding).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn conditional_trace(bits: &str, coding: &str, predictor: &str) -> Result<String, JsError> {
    trace_json(bits, coding, predictor).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn forge_levels(predictor: &str, rule: &str, levels: u64, samples: u64, seed: u64) -> Result<String, JsError> {
    forge_json(predictor, rule, levels, samples, seed).map_err(|e| JsError::new(&e))
}
