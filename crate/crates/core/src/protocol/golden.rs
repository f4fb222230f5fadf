//! Golden request/response conformance suite for adapters.
//!
//! Runs raw protocol lines through a [`Transport`] and checks handshake, the
//! four operations, id echo and error paths. Any adapter, whether the
//! built-in simulator or an external process, should pass all cases.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde_json::{json, Value};

use super::{Op, Transport};

#[derive(Debug, Clone)]
pub struct CaseOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

/// Payload written as the suite's input image. Adapters treat it as an
/// opaque file; the simulator reads it as ground truth.
pub const FIXTURE_PAYLOAD: &str = r#"{"artifacts":["apple pie"],"lineage":[]}"#;

pub fn write_fixture(dir: &Path) -> std::io::Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join("golden_fixture.sim.json");
    std::fs::write(&path, FIXTURE_PAYLOAD)?;
    Ok(path)
}

struct Runner<'a> {
    transport: &'a dyn Transport,
    timeout: Duration,
    outcomes: Vec<CaseOutcome>,
}

impl Runner<'_> {
    fn send(&self, line: &str) -> Result<Value, String> {
        let raw = self.transport.exchange(line, self.timeout).map_err(|e| e.to_string())?;
        serde_json::from_str(&raw).map_err(|e| format!("response is not JSON ({e}): {raw}"))
    }

    fn case(&mut self, name: &'static str, check: impl FnOnce(&Self) -> Result<(), String>) {
        let result = check(self);
        self.outcomes.push(CaseOutcome {
            name,
            passed: result.is_ok(),
            detail: result.err().unwrap_or_default(),
        });
    }
}

fn expect_id(resp: &Value, id: Option<u64>) -> Result<(), String> {
    let got = resp.get("id").ok_or_else(|| format!("missing id: {resp}"))?;
    let ok = match id {
        Some(id) => got.as_u64() == Some(id),
        None => got.is_null(),
    };
    if ok {
        Ok(())
    } else {
        Err(format!("expected id {id:?}, got {got}"))
    }
}

fn expect_error(resp: &Value, id: Option<u64>) -> Result<(), String> {
    expect_id(resp, id)?;
    match resp.get("error").and_then(Value::as_str) {
        Some(msg) if !msg.is_empty() => Ok(()),
        _ => Err(format!("expected an error response, got {resp}")),
    }
}

fn expect_image(resp: &Value, id: u64, input: &Path) -> Result<PathBuf, String> {
    expect_id(resp, Some(id))?;
    let path = resp
        .get("image_path")
        .and_then(Value::as_str)
        .ok_or_else(|| format!("missing image_path: {resp}"))?;
    let path = PathBuf::from(path);
    if !path.is_file() {
        return Err(format!("image_path {} does not exist", path.display()));
    }
    if path == input {
        return Err("output image overwrote the input".into());
    }
    Ok(path)
}

fn request(id: u64, op: &str, image: Option<&Path>, prompt: Option<&str>, strength: Option<f64>, steps: Option<u32>) -> String {
    json!({
        "id": id,
        "op": op,
        "image_path": image.map(|p| p.display().to_string()),
        "prompt": prompt,
        "strength": strength,
        "steps": steps,
        "rng_seed": 7,
    })
    .to_string()
}

/// Runs every golden case; `fixture_dir` receives the input image.
pub fn run_golden_suite(transport: &dyn Transport, fixture_dir: &Path, timeout: Duration) -> Vec<CaseOutcome> {
    let mut runner = Runner {
        transport,
        timeout,
        outcomes: Vec::new(),
    };
    let fixture = match write_fixture(fixture_dir) {
        Ok(p) => p,
        Err(e) => {
            return vec![CaseOutcome {
                name: "fixture",
                passed: false,
                detail: e.to_string(),
            }]
        }
    };
    let fx = fixture.as_path();

    runner.case("handshake", |r| {
        let resp = r.send(r#"{"op":"hello"}"#)?;
        let caps = resp
            .get("capabilities")
            .and_then(Value::as_array)
            .ok_or_else(|| format!("missing capabilities: {resp}"))?;
        for op in Op::ALL {
            if !caps.iter().any(|c| c.as_str() == Some(op.as_str())) {
                return Err(format!("capability {op} not declared"));
            }
        }
        match resp.get("single_flight") {
            Some(Value::Bool(_)) => Ok(()),
            _ => Err(format!("single_flight must be a boolean: {resp}")),
        }
    });

    runner.case("img2img without prompt", |r| {
        let resp = r.send(&request(1, "img2img", Some(fx), None, Some(0.6), None))?;
        expect_image(&resp, 1, fx).map(|_| ())
    });

    runner.case("img2img with prompt", |r| {
        let resp = r.send(&request(2, "img2img", Some(fx), Some("an image of apple pie"), Some(0.3), None))?;
        expect_image(&resp, 2, fx).map(|_| ())
    });

    runner.case("text2img", |r| {
        let resp = r.send(&request(3, "text2img", None, Some("an image of apple pie"), None, Some(30)))?;
        expect_image(&resp, 3, fx).map(|_| ())
    });

    runner.case("caption", |r| {
        let resp = r.send(&request(4, "caption", Some(fx), None, None, None))?;
        expect_id(&resp, Some(4))?;
        match resp.get("caption").and_then(Value::as_str) {
            Some(c) if !c.trim().is_empty() => Ok(()),
            _ => Err(format!("expected a non-empty caption: {resp}")),
        }
    });

    runner.case("detect", |r| {
        let resp = r.send(&request(5, "detect", Some(fx), None, None, None))?;
        expect_id(&resp, Some(5))?;
        let labels = resp
            .get("labels")
            .and_then(Value::as_array)
            .ok_or_else(|| format!("missing labels: {resp}"))?;
        for l in labels {
            let ok = l.get("label").and_then(Value::as_str).is_some()
                && l.get("confidence").and_then(Value::as_f64).is_some_and(|c| (0.0..=1.0).contains(&c));
            if !ok {
                return Err(format!("bad label entry {l}"));
            }
        }
        Ok(())
    });

    runner.case("unknown op", |r| {
        let resp = r.send(r#"{"id":6,"op":"upscale","image_path":null,"prompt":null,"strength":null,"steps":null,"rng_seed":0}"#)?;
        expect_error(&resp, Some(6))
    });

    runner.case("malformed line", |r| {
        let resp = r.send("{this is not json")?;
        expect_error(&resp, None)
    });

    runner.case("session survives errors", |r| {
        let resp = r.send(&request(8, "caption", Some(fx), None, None, None))?;
        expect_id(&resp, Some(8))?;
        resp.get("caption").map(|_| ()).ok_or_else(|| format!("expected a caption: {resp}"))
    });

    runner.case("text2img without prompt", |r| {
        let resp = r.send(&request(9, "text2img", None, None, None, Some(15)))?;
        expect_error(&resp, Some(9))
    });

    runner.case("img2img strength out of range", |r| {
        let resp = r.send(&request(10, "img2img", Some(fx), None, Some(1.5), None))?;
        expect_error(&resp, Some(10))
    });

    runner.case("large id echo", |r| {
        let id = (1u64 << 40) + 17;
        let resp = r.send(&request(id, "caption", Some(fx), None, None, None))?;
        expect_id(&resp, Some(id))
    });

    runner.case("fixed seed is deterministic", |r| {
        let first = expect_image(&r.send(&request(11, "img2img", Some(fx), None, Some(0.9), None))?, 11, fx)?;
        let first_bytes = std::fs::read(&first).map_err(|e| e.to_string())?;
        let second = expect_image(&r.send(&request(12, "img2img", Some(fx), None, Some(0.9), None))?, 12, fx)?;
        let second_bytes = std::fs::read(&second).map_err(|e| e.to_string())?;
        if first_bytes == second_bytes {
            Ok(())
        } else {
            Err("same rng_seed produced different images".into())
        }
    });

    runner.case("input image untouched", |_| {
        let now = std::fs::read_to_string(fx).map_err(|e| e.to_string())?;
        if now == FIXTURE_PAYLOAD {
            Ok(())
        } else {
            Err("adapter modified the input image".into())
        }
    });

    runner.outcomes
}
