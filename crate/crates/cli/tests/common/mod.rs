#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use fairquota::data_model::write_score_file;
use fairquota::{generate_population, Cohort, ScoredExample, SynthSpec};
use fairquota_cli::DatasetSnapshot;
use http_body_util::BodyExt;
use tower::ServiceExt;

pub const BIN: &str = env!("CARGO_BIN_EXE_fairquota");

pub fn write_cohort(cohort: &Cohort, path: &Path) {
    let mut f = std::fs::File::create(path).unwrap();
    write_score_file(cohort, &mut f).unwrap();
}

/// The desk-scale synthetic cohort for `seed`, written to `dir`.
pub fn desk_file(dir: &Path, seed: u64) -> (PathBuf, Cohort) {
    let cohort = generate_population(&SynthSpec::desk_scale(seed)).unwrap();
    let path = dir.join(format!("desk_{seed}.csv"));
    write_cohort(&cohort, &path);
    (path, cohort)
}

/// Three groups; `z` has no positives.
pub fn zero_prevalence_file(dir: &Path) -> PathBuf {
    let mut xs = Vec::new();
    for i in 0..30u32 {
        let g = ["a", "b", "z"][i as usize % 3];
        let label = g != "z" && i % 4 == 0;
        xs.push(ScoredExample::new(format!("p{i:02}"), f64::from(i % 7) / 7.0, label).with_group("race", g));
    }
    let cohort = Cohort::new(xs, vec!["race".into()], "zero").unwrap();
    let path = dir.join("zero.csv");
    write_cohort(&cohort, &path);
    path
}

pub fn cli(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

/// Loads `path` the way `fairquota serve --input` does.
pub fn app(path: &Path) -> Router {
    let cohort = fairquota_cli::cli::load_cohort(path, None).unwrap();
    fairquota_cli::server::router(Arc::new(DatasetSnapshot::new(cohort).unwrap()), None)
}

pub async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, String) {
    let res = app.clone().oneshot(req).await.unwrap();
    let status = res.status();
    let headers = res.headers().clone();
    let bytes = res.into_body().collect().await.unwrap().to_bytes();
    (status, headers, String::from_utf8(bytes.to_vec()).unwrap())
}

pub async fn get(app: &Router, uri: &str) -> (StatusCode, String) {
    let (s, _, b) = send(app, Request::get(uri).body(Body::empty()).unwrap()).await;
    (s, b)
}

pub async fn post(app: &Router, uri: &str, json: &str) -> (StatusCode, String) {
    let req = Request::post(uri).header("content-type", "application/json").body(Body::from(json.to_string())).unwrap();
    let (s, _, b) = send(app, req).await;
    (s, b)
}

/// One CLI invocation and the API request that should answer identically.
pub struct ParityCase {
    pub name: &'static str,
    pub args: Vec<String>,
    pub method: &'static str,
    pub uri: String,
    pub body: Option<String>,
}

pub fn parity_cases(input: &Path) -> Vec<ParityCase> {
    let input = input.display().to_string();
    let args = |xs: &[&str]| -> Vec<String> {
        let mut v: Vec<String> = xs.iter().map(|s| s.to_string()).collect();
        v.insert(1, "--input".into());
        v.insert(2, input.clone());
        v
    };
    vec![
        ParityCase {
            name: "audit",
            args: args(&["audit", "--attribute", "race", "--k", "150"]),
            method: "GET",
            uri: "/api/audit?attribute=race&k=150".into(),
            body: None,
        },
        ParityCase {
            name: "audit seeded",
            args: args(&["audit", "--k", "500", "--reference-group", "g3", "--seed", "7"]),
            method: "GET",
            uri: "/api/audit?k=500&reference=g3&seed=7".into(),
            body: None,
        },
        ParityCase {
            name: "balance equalized",
            args: args(&["balance", "--mode", "equalized", "--k", "150", "--attribute", "race"]),
            method: "POST",
            uri: "/api/balance".into(),
            body: Some(r#"{"mode": "equalized", "k": 150}"#.into()),
        },
        ParityCase {
            name: "balance proportional",
            args: args(&["balance", "--mode", "proportional", "--k", "150", "--reference-group", "g2", "--search", "exact", "--trim"]),
            method: "POST",
            uri: "/api/balance".into(),
            body: Some(
                r#"{"mode": "proportional", "constraint": {"list_size": 150}, "reference_group": "g2", "options": {"search_strategy": "exact_breakpoint", "trim": true}}"#.into(),
            ),
        },
        ParityCase {
            name: "balance recall seeded",
            args: args(&["balance", "--mode", "equalized", "--recall", "0.1", "--tie-break", "seeded"]),
            method: "POST",
            uri: "/api/balance".into(),
            body: Some(r#"{"mode": "equalized", "recall": 0.1, "options": {"tie_break": "seeded"}}"#.into()),
        },
        ParityCase {
            name: "tradeoff",
            args: args(&["tradeoff", "--k", "150", "--reference-group", "g1"]),
            method: "GET",
            uri: "/api/tradeoff?k=150&reference=g1".into(),
            body: None,
        },
    ]
}

/// Runs a parity case both ways. `Err` describes the first difference.
pub async fn check_parity(app: &Router, case: &ParityCase) -> Result<(), String> {
    let out = Command::new(BIN).args(&case.args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("{}: cli failed: {}", case.name, stderr(&out)));
    }
    let cli_body = stdout(&out);
    let (status, api_body) = match (case.method, &case.body) {
        ("GET", _) => get(app, &case.uri).await,
        (_, Some(b)) => post(app, &case.uri, b).await,
        _ => unreachable!(),
    };
    if status != StatusCode::OK {
        return Err(format!("{}: api status {status}: {api_body}", case.name));
    }
    if cli_body != api_body {
        let at = cli_body
            .bytes()
            .zip(api_body.bytes())
            .position(|(a, b)| a != b)
            .unwrap_or(cli_body.len().min(api_body.len()));
        return Err(format!(
            "{}: outputs differ at byte {at} (cli {} bytes, api {} bytes)",
            case.name,
            cli_body.len(),
            api_body.len()
        ));
    }
    Ok(())
}
