//! External-evaluator conformance checks against the `mock_evaluator`
//! test double. Each check returns `Err(description)` on a mismatch.
#![allow(dead_code)]

use std::time::Duration;

use subnas_core::evalmgr::protocol::{Request, Response};
use subnas_core::evalmgr::{EvalError, Evaluator, ExternalEvaluator, SyntheticSurface};
use subnas_core::objectives::default_objectives;
use subnas_core::space::{presets, Genotype, SearchSpace};

pub const MOCK: &str = env!("CARGO_BIN_EXE_mock_evaluator");

fn space() -> SearchSpace {
    presets::mobilenetv3_like()
}

fn spawn(mode: &[&str], timeout: Duration) -> Result<ExternalEvaluator, EvalError> {
    let mut args = vec!["--mode".to_string()];
    args.extend(mode.iter().map(|s| s.to_string()));
    ExternalEvaluator::spawn(MOCK, &args, default_objectives(), space().name(), timeout)
}

fn batch(n: usize) -> Vec<Genotype> {
    space().sample_uniform(n, 17)
}

fn expected(g: &Genotype) -> (f64, f64) {
    let s = SyntheticSurface::preset(&space(), "clx-like").unwrap();
    (s.accuracy(g), s.latency(g))
}

fn check_ok(g: &Genotype, r: &Result<subnas_core::objectives::ObjectiveVector, EvalError>) -> Result<(), String> {
    match r {
        Ok(v) => {
            let (a, l) = expected(g);
            if v.values() == [a, l] {
                Ok(())
            } else {
                Err(format!("values {:?} differ from surface ({a}, {l})", v.values()))
            }
        }
        Err(e) => Err(format!("unexpected error {e}")),
    }
}

const SECOND: Duration = Duration::from_secs(10);

pub fn handshake_and_in_order() -> Result<(), String> {
    let mut ev = spawn(&["echo"], SECOND).map_err(|e| e.to_string())?;
    let b = batch(8);
    let out = ev.evaluate_many(&b);
    for (g, r) in b.iter().zip(&out) {
        check_ok(g, r)?;
    }
    // second batch on the same stream keeps working
    let out = ev.evaluate_many(&b[..2]);
    b[..2].iter().zip(&out).try_for_each(|(g, r)| check_ok(g, r))
}

pub fn out_of_order_ids() -> Result<(), String> {
    let mut ev = spawn(&["shuffle"], SECOND).map_err(|e| e.to_string())?;
    let b = batch(10);
    let out = ev.evaluate_many(&b);
    b.iter().zip(&out).try_for_each(|(g, r)| check_ok(g, r))
}

pub fn per_item_errors() -> Result<(), String> {
    let mut ev = spawn(&["fault"], SECOND).map_err(|e| e.to_string())?;
    let b = batch(7);
    let out = ev.evaluate_many(&b);
    for (id, (g, r)) in b.iter().zip(&out).enumerate() {
        if id % 3 == 0 {
            match r {
                Err(EvalError::EvaluationFailed(m)) if m == &format!("injected fault for {id}") => {}
                other => return Err(format!("id {id}: expected EvaluationFailed, got {other:?}")),
            }
        } else {
            check_ok(g, r)?;
        }
    }
    Ok(())
}

pub fn malformed_payloads() -> Result<(), String> {
    let mut ev = spawn(&["malformed"], SECOND).map_err(|e| e.to_string())?;
    let b = batch(6);
    let out = ev.evaluate_many(&b);
    for (id, (g, r)) in b.iter().zip(&out).enumerate() {
        if id % 4 == 1 {
            match r {
                Err(EvalError::ProtocolError { raw, .. }) if raw.contains("garbled") => {}
                other => return Err(format!("id {id}: expected ProtocolError, got {other:?}")),
            }
        } else {
            check_ok(g, r)?;
        }
    }
    Ok(())
}

pub fn crash_mid_batch() -> Result<(), String> {
    let mut ev = spawn(&["crash-after", "3"], SECOND).map_err(|e| e.to_string())?;
    let b = batch(6);
    let out = ev.evaluate_many(&b);
    for (id, (g, r)) in b.iter().zip(&out).enumerate() {
        if id < 3 {
            check_ok(g, r)?;
        } else if !matches!(r, Err(EvalError::EvaluationFailed(_))) {
            return Err(format!("id {id}: expected EvaluationFailed after crash, got {r:?}"));
        }
    }
    let again = ev.evaluate_many(&b[..2]);
    if again.iter().all(|r| matches!(r, Err(EvalError::EvaluationFailed(_)))) {
        Ok(())
    } else {
        Err(format!("requests after the crash should fail, got {again:?}"))
    }
}

pub fn timeout() -> Result<(), String> {
    let mut ev = spawn(&["slow", "400"], Duration::from_millis(200)).map_err(|e| e.to_string())?;
    let out = ev.evaluate_many(&batch(2));
    if out.iter().all(|r| matches!(r, Err(EvalError::EvaluationTimeout(_)))) {
        Ok(())
    } else {
        Err(format!("expected timeouts, got {out:?}"))
    }
}

pub fn bad_handshake() -> Result<(), String> {
    match spawn(&["bad-handshake"], SECOND) {
        Err(EvalError::HandshakeFailed(m)) if m.contains("welcome") => Ok(()),
        other => Err(format!("expected HandshakeFailed, got {other:?}")),
    }
}

pub fn missing_program() -> Result<(), String> {
    match ExternalEvaluator::spawn("/nonexistent/evaluator", &[], default_objectives(), "x", SECOND) {
        Err(EvalError::HandshakeFailed(_)) => Ok(()),
        other => Err(format!("expected HandshakeFailed, got {other:?}")),
    }
}

pub fn objective_mismatch() -> Result<(), String> {
    let mut ev = spawn(&["missing-objective"], SECOND).map_err(|e| e.to_string())?;
    let out = ev.evaluate_many(&batch(2));
    if out.iter().all(|r| matches!(r, Err(EvalError::ObjectiveMismatch(_)))) {
        Ok(())
    } else {
        Err(format!("expected ObjectiveMismatch, got {out:?}"))
    }
}

pub fn request_fixtures() -> Result<(), String> {
    let fixture = include_str!("../fixtures/requests.jsonl");
    let built = [
        Request::Hello { objectives: vec!["top1".into(), "latency_ms".into()], space: "mobilenetv3-like".into() },
        Request::Eval { id: 0, genes: vec![2, 3, 5] },
        Request::Eval { id: 41, genes: vec![] },
        Request::Bye,
    ];
    let mut bytes = String::new();
    for r in &built {
        bytes.push_str(&r.to_line());
        bytes.push('\n');
    }
    if bytes.as_bytes() == fixture.as_bytes() {
        Ok(())
    } else {
        Err(format!("request bytes differ:\n{bytes}vs\n{fixture}"))
    }
}

pub fn response_fixtures() -> Result<(), String> {
    let fixture = include_str!("../fixtures/responses.jsonl");
    let mut objectives = serde_json::Map::new();
    objectives.insert("top1".into(), serde_json::json!(76.25));
    objectives.insert("latency_ms".into(), serde_json::json!(11.5));
    let want = [
        Response::Ready,
        Response::Result { id: 0, objectives },
        Response::Error { id: 41, message: "out of memory".into() },
    ];
    for (line, w) in fixture.lines().zip(&want) {
        let parsed = Response::parse(line)?;
        if &parsed != w {
            return Err(format!("parsed {parsed:?}, want {w:?}"));
        }
        if parsed.to_line() != line {
            return Err(format!("re-encoded `{}` differs from `{line}`", parsed.to_line()));
        }
    }
    Ok(())
}

pub const CHECKS: &[(&str, fn() -> Result<(), String>)] = &[
    ("handshake and in-order results", handshake_and_in_order),
    ("out-of-order ids", out_of_order_ids),
    ("per-item errors", per_item_errors),
    ("malformed payloads", malformed_payloads),
    ("crash mid-batch", crash_mid_batch),
    ("response timeout", timeout),
    ("bad handshake", bad_handshake),
    ("missing program", missing_program),
    ("objective mismatch", objective_mismatch),
    ("request byte fixtures", request_fixtures),
    ("response byte fixtures", response_fixtures),
];
