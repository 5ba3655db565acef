//! wasm-bindgen bindings behind `www/index.html`. Every entry point returns a
//! JSON string; the `*_json` functions are the same calls without the
//! JavaScript error wrapper, so they can be tested natively.

use etr_pcp::approx::{approx2, approx8, Approx8Mode};
use etr_pcp::cli::parse_group;
use etr_pcp::constraint_core::parse_instance;
use etr_pcp::midpoint_code::{self as mc, CodeParams, ProofString};
use etr_pcp::numerics::{Group, GroupElement, Rational};
use etr_pcp::seeds;
use rand::Rng;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

const MAX_TRIALS: u32 = 2_000_000;
const TABLE_LIMIT: i32 = 512;

fn params(k1: i32, k2: i32) -> Result<CodeParams, String> {
    CodeParams::new(1, k1 as i128, k2 as i128).map_err(|e| e.to_string())
}

fn check_trials(trials: u32) -> Result<u64, String> {
    if trials == 0 || trials > MAX_TRIALS {
        return Err(format!("trials must be in 1..={MAX_TRIALS}"));
    }
    Ok(trials as u64)
}

/// Pass rate of an honest one-dimensional codeword after overlaying random
/// values on a growing fraction of the grid.
pub fn pass_rate_curve_json(group: &str, k1: i32, k2: i32, max_rate: f64, steps: u32, trials: u32, seed: u32) -> Result<Value, String> {
    let group = parse_group(group).map_err(|e| e.to_string())?;
    let p = params(k1, k2)?;
    let trials = check_trials(trials)?;
    if !(0.0..=1.0).contains(&max_rate) || steps == 0 || steps > 200 {
        return Err("max_rate must lie in [0, 1] and steps in 1..=200".into());
    }
    let seed = seed as u64;
    let elem = |v: i64| group.element_from_int(v).expect("positive integer embeds");
    let honest = mc::encode(&[elem(3)], elem(2), &p, &group).map_err(|e| e.to_string())?;
    let grid = (k1 + 1) as f64;
    let mut points = vec![];
    for i in 0..=steps {
        let rate = max_rate * i as f64 / steps as f64;
        let mut a: ProofString<Group> = honest.clone();
        let mut rng = seeds::stream(seed, i as u64);
        for _ in 0..(rate * grid).round() as u64 {
            let x = mc::sample_point(&mut rng, &p);
            let v = elem(rng.gen_range(4..=12));
            a.corrupt(x, v).map_err(|e| e.to_string())?;
        }
        let est = mc::estimate_pass_rate(&a, trials, seeds::child(seed, i as u64));
        points.push(json!({
            "rate": rate,
            "overlay": a.overlay_len(),
            "pass": est.rate,
            "lo": est.lower(),
            "hi": est.upper(),
        }));
    }
    Ok(json!({ "group": group.to_string(), "k1": k1, "k2": k2, "trials": trials, "points": points }))
}

/// The step string `A(x) = [x > k1/2]` over the additive rationals: its
/// pass rate, what the shift-1 decoder reads at each position, and its
/// distance from the nearest affine codeword.
pub fn halfspace_json(k1: i32, k2: i32, trials: u32, seed: u32) -> Result<Value, String> {
    if k1 > TABLE_LIMIT {
        return Err(format!("k1 must be at most {TABLE_LIMIT}"));
    }
    let p = params(k1, k2)?;
    let trials = check_trials(trials)?;
    let a = mc::adversarial_halfspace(&p);
    let est = mc::estimate_pass_rate(&a, trials, seed as u64);
    let values: Vec<Rational> = mc::table_of(&a)
        .ok_or("grid too large to tabulate")?
        .into_iter()
        .map(|e| e.as_rational().expect("additive rationals").clone())
        .collect();
    let decoded: Vec<String> = (0..k1).map(|x| mc::decode_at(&a, &[x as i128], &[1]).to_string()).collect();
    let zero = GroupElement::AddQ(Rational::from_integer(0.into())).to_string();
    let agree = decoded.iter().filter(|d| **d == zero).count();
    Ok(json!({
        "k1": k1,
        "k2": k2,
        "values": values.iter().map(|v| v.to_string()).collect::<Vec<_>>(),
        "decoded_shift1": decoded,
        "decoder_reads_zero": agree as f64 / k1.max(1) as f64,
        "distance_to_affine": mc::min_distance_to_affine_1d(&values),
        "length": values.len(),
        "pass": est.rate,
        "lo": est.lower(),
        "hi": est.upper(),
        "trials": trials,
    }))
}

/// Runs approx8 (derandomized, or randomized when `seed` is given) or approx2
/// on an ETR-INV instance in the text format.
pub fn approx_json(instance: &str, method: u8, seed: Option<u32>, trials: u32) -> Result<Value, String> {
    let inst = parse_instance(instance).map_err(|e| e.to_string())?;
    let res = match method {
        8 => {
            let mode = match seed {
                Some(s) => Approx8Mode::Randomized { seed: s as u64, trials: check_trials(trials)? },
                None => Approx8Mode::Derandomized,
            };
            approx8(&inst, mode)
        }
        2 => approx2(&inst, 1 << 22),
        _ => return Err("method must be 8 or 2".into()),
    }
    .map_err(|e| e.to_string())?;
    serde_json::to_value(res).map_err(|e| e.to_string())
}

fn js(r: Result<Value, String>) -> Result<String, JsError> {
    r.map(|v| v.to_string()).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn pass_rate_curve(group: &str, k1: i32, k2: i32, max_rate: f64, steps: u32, trials: u32, seed: u32) -> Result<String, JsError> {
    js(pass_rate_curve_json(group, k1, k2, max_rate, steps, trials, seed))
}

#[wasm_bindgen]
pub fn halfspace(k1: i32, k2: i32, trials: u32, seed: u32) -> Result<String, JsError> {
    js(halfspace_json(k1, k2, trials, seed))
}

#[wasm_bindgen]
pub fn approx(instance: &str, method: u8, seed: Option<u32>, trials: u32) -> Result<String, JsError> {
    js(approx_json(instance, method, seed, trials))
}
