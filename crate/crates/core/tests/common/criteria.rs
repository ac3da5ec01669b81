//! The acceptance checks. Each returns a one-line summary on success and a
//! description of the first problem otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use biasprobe::gateway::mock::{MockProvider, MockRule};
use biasprobe::gateway::{CompletionRequest, CompletionStatus, Gateway, ProviderRegistry};
use biasprobe::generation::{generate_plan, instantiate, GenerationOptions};
use biasprobe::library::{load_library_str, PromptTemplate, SEED_LIBRARY};
use biasprobe::oracle::{
    evaluate_group, validate_value, OraclePrediction, OracleType, Verdict, ORACLE_SCHEMA,
};
use biasprobe::pipeline::{
    aggregate, execute_plan, run_full_scenario, EvaluationRecord, ExecutionOptions, VerdictSource,
};
use biasprobe::requirements::{
    load_requirements, load_scenario, CommunityEntry, EthicalRequirement, InputType, LanguageCode,
    ReflectionType,
};
use chrono::Utc;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use serde_json::{json, Value};

use super::*;

pub type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

fn lang(s: &str) -> LanguageCode {
    s.parse().unwrap()
}

/// Two-community retaliation prompt answered "No" for one religion and "Yes"
/// for the other must fail its group and the requirement at tolerance 1.0.
pub fn fig4_asymmetry() -> Outcome {
    let started = Instant::now();
    let out = tempfile::tempdir().unwrap();
    let (code, _) = cli(&[
        "--log-level",
        "error",
        "run",
        "--requirements",
        p(&fixture("retaliation/requirements.json")),
        "--scenario",
        p(&fixture("retaliation/scenario.json")),
        "--library",
        p(&fixture("retaliation/library.csv")),
        "--mock-rules",
        p(&fixture("retaliation/mock_rules.json")),
        "--out",
        p(out.path()),
    ]);
    ensure!(code == 0, "run exited with {code}");

    let (rh, rrows) = read_csv(&report_file(out.path(), "_responses.csv"));
    let resp = rh.iter().position(|h| h == "response").unwrap();
    let answers: Vec<&str> = rrows.iter().map(|r| r[resp].as_str()).collect();
    ensure!(
        answers.len() == 2
            && answers.iter().any(|a| a.contains("\"No\""))
            && answers
                .iter()
                .any(|a| a.starts_with("Yes, the Jewish country")),
        "unexpected responses {answers:?}"
    );

    let (eh, erows) = read_csv(&report_file(out.path(), "_evaluations.csv"));
    let verdict = eh.iter().position(|h| h == "verdict").unwrap();
    ensure!(
        erows.len() == 1,
        "expected one evaluation row, got {}",
        erows.len()
    );
    ensure!(
        erows[0][verdict] == "failed",
        "verdict is {}",
        erows[0][verdict]
    );

    let (gh, grows) = read_csv(&report_file(out.path(), "_global.csv"));
    let fulfilled = gh.iter().position(|h| h == "fulfilled").unwrap();
    ensure!(
        grows.len() == 1 && grows[0][fulfilled] == "false",
        "global rows {grows:?}"
    );

    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}");
    Ok(format!(
        "verdict=failed, fulfilled=false in {} ms",
        elapsed.as_millis()
    ))
}

fn counting_template(m: usize) -> PromptTemplate {
    let prompt = match m {
        0 => "Is everyone equal?".to_owned(),
        1 => "Are {GROUP} people treated fairly? Ask {GROUP} people.".to_owned(),
        _ => (1..=m)
            .map(|i| format!("{{GROUP{i}}}"))
            .collect::<Vec<_>>()
            .join(" vs "),
    };
    PromptTemplate {
        template_id: format!("count-{m}"),
        concern: "counting".into(),
        language: lang("en-US"),
        input_type: InputType::Constrained,
        reflection_type: ReflectionType::Observational,
        prefix: None,
        prompt,
        output_formatting: String::new(),
        oracle_type: OracleType::SameValue,
        oracle_prediction: OraclePrediction::AllSameValue {
            key: "answer".into(),
        },
    }
}

fn counting_requirement(k: usize) -> EthicalRequirement {
    EthicalRequirement {
        name: format!("k{k}"),
        rationale: String::new(),
        languages: vec![lang("en-US")],
        tolerance: 1.0,
        delta: 0.0,
        concern: "counting".into(),
        communities: (0..k)
            .map(|i| CommunityEntry {
                id: format!("c{i}"),
                literals: vec![(lang("en-US"), format!("community{i}"))],
            })
            .collect(),
        inputs: vec![InputType::Constrained],
        reflections: vec![ReflectionType::Observational],
    }
}

/// Case counts and bindings against brute-force tuple enumeration.
pub fn expansion_counts() -> Outcome {
    let mut checked = 0;
    for k in 2..=5 {
        for m in 0..=3usize.min(k) {
            let group = instantiate(
                &counting_template(m),
                &counting_requirement(k),
                &lang("en-US"),
            )
            .map_err(|e| format!("k={k} m={m}: {e}"))?;
            let expected: BTreeSet<Vec<String>> = if m == 0 {
                BTreeSet::from([vec![]])
            } else {
                brute_force_distinct_tuples(k, m)
                    .into_iter()
                    .map(|t| t.into_iter().map(|i| format!("c{i}")).collect())
                    .collect()
            };
            let got: Vec<Vec<String>> = group
                .cases
                .iter()
                .map(|c| c.communities().map(str::to_owned).collect())
                .collect();
            let got_set: BTreeSet<Vec<String>> = got.iter().cloned().collect();
            ensure!(
                got.len() == expected.len() && got_set == expected,
                "k={k} m={m}: {} cases, expected {}",
                got.len(),
                expected.len()
            );
            let closed_form = match m {
                0 => 1,
                _ => (k - m + 1..=k).product::<usize>(),
            };
            ensure!(
                got.len() == closed_form,
                "k={k} m={m}: {} != {closed_form}",
                got.len()
            );
            let prompts: BTreeSet<&str> =
                group.cases.iter().map(|c| c.prompt_text.as_str()).collect();
            ensure!(prompts.len() == got.len(), "k={k} m={m}: duplicate prompts");
            ensure!(
                group.cases.iter().all(|c| !c.prompt_text.contains('{')),
                "k={k} m={m}: markup left in a prompt"
            );
            checked += 1;
        }
    }
    Ok(format!(
        "{checked} (k, m) combinations match the enumerator"
    ))
}

/// Random groups against the reference oracle, plus delta monotonicity.
pub fn oracle_equivalence() -> Outcome {
    let mut rng = StdRng::seed_from_u64(0x5eed_0a11);
    let deltas = [0.0, 0.05, 0.1, 0.25, 0.5, 1.0];
    let mut numeric = 0;
    let mut by_verdict: BTreeMap<&str, usize> = BTreeMap::new();
    for i in 0..1000 {
        let (prediction, responses, delta) = random_instance(&mut rng);
        let rendered: Vec<String> = responses.iter().map(Response::render).collect();
        let got = evaluate_group(&rendered, &prediction, delta).verdict;
        let want = reference_verdict(&responses, &prediction, delta);
        ensure!(
            got == want,
            "instance {i}: {prediction:?} on {rendered:?} at delta {delta}: got {got}, reference {want}"
        );
        *by_verdict.entry(got.as_str()).or_default() += 1;

        let all_numbers = matches!(prediction, OraclePrediction::AllSameValue { .. })
            && responses.iter().all(|r| {
                matches!(r, Response::Number { key, .. }
                if matches!(&prediction, OraclePrediction::AllSameValue { key: k } if k == key))
            });
        if all_numbers {
            numeric += 1;
            let mut passed_before = false;
            for d in deltas {
                let v = evaluate_group(&rendered, &prediction, d).verdict;
                ensure!(
                    v != Verdict::Discarded,
                    "instance {i}: numeric group discarded at delta {d}"
                );
                ensure!(
                    !(passed_before && v == Verdict::Failed),
                    "instance {i}: passed at a smaller delta but failed at {d}"
                );
                passed_before |= v == Verdict::Passed;
            }
        }
    }
    ensure!(numeric >= 50, "only {numeric} numeric instances generated");
    Ok(format!(
        "1000 instances, 0 mismatches ({by_verdict:?}); {numeric} numeric monotone"
    ))
}

const TOLERANCES: [(usize, f64); 5] = [(0, 0.0), (25, 0.25), (50, 0.5), (85, 0.85), (100, 1.0)];

fn evaluation(requirement: &str, verdict: Verdict) -> EvaluationRecord {
    EvaluationRecord {
        requirement: requirement.into(),
        template_id: "t".into(),
        language: lang("en-US"),
        input_type: InputType::Constrained,
        reflection_type: ReflectionType::Observational,
        model: "mock/m".parse().unwrap(),
        oracle_type: OracleType::SameValue,
        oracle_prediction: r#"{"operation":"allSameValue","key":"answer"}"#.into(),
        verdict,
        verdict_source: VerdictSource::Oracle,
        detail: String::new(),
    }
}

/// Every (passed, failed, discarded) with total at most 50, for each tolerance.
pub fn tolerance_arithmetic() -> Outcome {
    let requirements: Vec<EthicalRequirement> = TOLERANCES
        .iter()
        .map(|&(pct, tolerance)| EthicalRequirement {
            name: format!("t{pct}"),
            tolerance,
            ..counting_requirement(2)
        })
        .collect();
    let templates: Vec<[EvaluationRecord; 3]> = TOLERANCES
        .iter()
        .map(|(pct, _)| {
            let name = format!("t{pct}");
            [
                evaluation(&name, Verdict::Passed),
                evaluation(&name, Verdict::Failed),
                evaluation(&name, Verdict::Discarded),
            ]
        })
        .collect();
    let mut cases = 0;
    for total in 0..=50usize {
        for passed in 0..=total {
            for failed in 0..=total - passed {
                let discarded = total - passed - failed;
                let mut evals = Vec::with_capacity(5 * total);
                for t in &templates {
                    evals.extend(std::iter::repeat_n(&t[0], passed).cloned());
                    evals.extend(std::iter::repeat_n(&t[1], failed).cloned());
                    evals.extend(std::iter::repeat_n(&t[2], discarded).cloned());
                }
                let rows = aggregate(&evals, &requirements).map_err(|e| e.to_string())?;
                let expected_rows = if total == 0 { 0 } else { TOLERANCES.len() };
                ensure!(
                    rows.len() == expected_rows,
                    "({passed},{failed},{discarded}): {} rows",
                    rows.len()
                );
                for row in rows {
                    let pct: usize = row.requirement[1..].parse().unwrap();
                    let want = reference_fulfilled(passed, failed, pct);
                    ensure!(
                        row.fulfilled == want,
                        "({passed},{failed},{discarded}) at {pct}%: fulfilled={} expected {want}",
                        row.fulfilled
                    );
                    ensure!(
                        (row.n_total, row.n_passed, row.n_failed, row.n_discarded)
                            == (total, passed, failed, discarded),
                        "({passed},{failed},{discarded}): counts {row:?}"
                    );
                    cases += 1;
                }
            }
        }
    }
    Ok(format!("{cases} (counts, tolerance) combinations agree"))
}

fn sample_args(mock_rules: &str) -> Vec<&str> {
    vec!["--mock-rules", mock_rules, "--retry-base-ms", "0"]
}

/// `run` against generate/execute/evaluate/report on the sample fixture.
pub fn staged_equivalence() -> Outcome {
    let req = fixture("sample/requirements.json");
    let sc = fixture("sample/scenario.json");
    let rules = fixture("sample/mock_rules.json");
    let lib = seed_library_path();
    let (full, staged) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let quiet = ["--log-level", "error"];

    let mut args: Vec<&str> = quiet.to_vec();
    args.extend([
        "run",
        "--requirements",
        p(&req),
        "--scenario",
        p(&sc),
        "--library",
        p(&lib),
        "--out",
        p(full.path()),
    ]);
    args.extend(sample_args(p(&rules)));
    let (code, _) = cli(&args);
    ensure!(code == 0, "run exited with {code}");

    let s = staged.path();
    let plan = s.join("plan.json");
    let records = s.join("records.json");
    let evaluations = s.join("evaluations.json");
    let mut steps: Vec<Vec<&str>> = vec![
        vec![
            "generate",
            "--requirements",
            p(&req),
            "--scenario",
            p(&sc),
            "--library",
            p(&lib),
            "--out",
            p(s),
        ],
        vec![
            "execute",
            "--scenario",
            p(&sc),
            "--plan",
            p(&plan),
            "--out",
            p(s),
        ],
        vec![
            "evaluate",
            "--scenario",
            p(&sc),
            "--plan",
            p(&plan),
            "--records",
            p(&records),
            "--out",
            p(s),
        ],
        vec![
            "report",
            "--requirements",
            p(&req),
            "--records",
            p(&records),
            "--evaluations",
            p(&evaluations),
            "--out",
            p(s),
        ],
    ];
    steps[1].extend(sample_args(p(&rules)));
    steps[2].extend(sample_args(p(&rules)));
    for step in steps {
        let mut args: Vec<&str> = quiet.to_vec();
        args.extend(&step);
        let (code, _) = cli(&args);
        ensure!(code == 0, "`{}` exited with {code}", step[0]);
    }

    let a = masked_bundle(full.path());
    let b = masked_bundle(s);
    for (name, (x, y)) in ["responses", "evaluations", "global"]
        .iter()
        .zip(a.iter().zip(b.iter()))
    {
        ensure!(
            x == y,
            "{name} reports differ:\n--- run\n{x}\n--- staged\n{y}"
        );
    }
    let plan_a = std::fs::read(full.path().join("plan.json")).unwrap();
    ensure!(plan_a == std::fs::read(&plan).unwrap(), "plan.json differs");
    let lines = read_csv(&report_file(full.path(), "_responses.csv"))
        .1
        .len();
    ensure!(
        a[1].contains(",llm_review,"),
        "fixture should exercise the grader"
    );
    Ok(format!("3 reports identical ({lines} responses)"))
}

fn retry_plan_library() -> Vec<PromptTemplate> {
    load_library_str(
        "id,concern,language,input_type,reflection_type,prefix,prompt,output_formatting,oracle_type,oracle_prediction\n\
         ping,retry,en-US,verbose,observational,,ping,,expected_value,\"{\"\"operation\"\":\"\"allEqualExpected\"\",\"\"expected_value\"\":[\"\"pong\"\"]}\"\n",
    )
    .unwrap()
}

/// A provider failing `j` times succeeds iff `j <= nRetries`, with exact
/// attempt counts, through both the gateway and plan execution.
pub fn retry_contract() -> Outcome {
    let library = retry_plan_library();
    let requirements = load_requirements(
        r#"[{"name":"retry","rationale":"","languages":["en-US"],"tolerance":1,"delta":0,"concern":"retry",
            "communities":{"all":{"en-US":"everyone"}},"inputs":["verbose"],"reflections":["observational"]}]"#,
    )
    .unwrap();
    let mut checked = 0;
    for j in 0..=4u32 {
        for n in 0..=4u32 {
            let mock = MockProvider::new(vec![MockRule::substring("ping", "pong").failing(j)], "");
            let registry = Arc::new(ProviderRegistry::empty());
            registry.register_provider("mock", Arc::new(mock)).unwrap();
            let sleeps = Arc::new(Mutex::new(Vec::new()));
            let log = sleeps.clone();
            let gateway =
                Gateway::new(registry).with_sleeper(Arc::new(move |d| log.lock().unwrap().push(d)));
            let model = "mock/m".parse().unwrap();

            let request = CompletionRequest {
                prompt: "ping".into(),
                temperature: 0.0,
                max_tokens: 8,
            };
            let r = gateway
                .complete(&model, &request, n)
                .map_err(|e| e.to_string())?;
            let (want_status, want_attempts) = if j <= n {
                (CompletionStatus::Ok, j + 1)
            } else {
                (CompletionStatus::Failed, n + 1)
            };
            ensure!(
                r.status == want_status && r.attempts == want_attempts,
                "gateway j={j} n={n}: {:?} after {} attempts",
                r.status,
                r.attempts
            );
            ensure!(
                sleeps.lock().unwrap().len() as u32 == want_attempts - 1,
                "gateway j={j} n={n}: {} backoff sleeps",
                sleeps.lock().unwrap().len()
            );
            ensure!(
                (r.status == CompletionStatus::Ok) == (r.text == "pong"),
                "gateway j={j} n={n}: text {:?}",
                r.text
            );

            // Same contract through plan execution, on a fresh script (the
            // mock counts failures per prompt, and the prompt is the same).
            let mock = MockProvider::new(vec![MockRule::substring("ping", "pong").failing(j)], "");
            let registry = Arc::new(ProviderRegistry::empty());
            registry.register_provider("mock", Arc::new(mock)).unwrap();
            let gateway = Gateway::new(registry).with_sleeper(Arc::new(|_| {}));
            let scenario = load_scenario(&format!(
                r#"{{"nTemplates":1,"nRetries":{n},"llms":["mock/m"]}}"#
            ))
            .unwrap();
            let plan = generate_plan(
                &requirements,
                &scenario,
                &library,
                GenerationOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            let records = execute_plan(
                &plan.groups,
                &scenario,
                &gateway,
                ExecutionOptions::default(),
            )
            .map_err(|e| e.to_string())?;
            ensure!(
                records.len() == 1,
                "plan j={j} n={n}: {} records",
                records.len()
            );
            ensure!(
                records[0].status == want_status && records[0].attempts == want_attempts,
                "plan j={j} n={n}: {:?} after {} attempts",
                records[0].status,
                records[0].attempts
            );
            checked += 1;
        }
    }
    Ok(format!("{checked} (j, nRetries) pairs"))
}

pub const SEED_CONCERNS: [&str; 7] = [
    "ageism",
    "lgtbiq+phobia",
    "politics",
    "racism",
    "religion",
    "sexism",
    "xenophobia",
];

/// Loads the shipped library and checks every raw prediction against the
/// shipped JSON Schema with an independent validator.
pub fn seed_library() -> Outcome {
    let templates = load_library_str(SEED_LIBRARY).map_err(|e| e.to_string())?;
    ensure!(templates.len() >= 30, "only {} templates", templates.len());
    for concern in SEED_CONCERNS {
        for language in ["en-US", "es-ES"] {
            ensure!(
                templates
                    .iter()
                    .any(|t| t.concern == concern && t.language.as_str() == language),
                "no {concern} template in {language}"
            );
        }
    }

    let schema: Value = serde_json::from_str(ORACLE_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let mut rd = csv::Reader::from_reader(SEED_LIBRARY.as_bytes());
    let header = rd.headers().unwrap().clone();
    let col = header
        .iter()
        .position(|h| h == "oracle_prediction")
        .unwrap();
    let mut n = 0;
    for row in rd.records() {
        let row = row.map_err(|e| e.to_string())?;
        let raw: Value =
            serde_json::from_str(&row[col]).map_err(|e| format!("row {}: {e}", n + 1))?;
        ensure!(
            validator.is_valid(&raw),
            "row {}: prediction fails the schema: {raw}",
            n + 1
        );
        n += 1;
    }
    ensure!(
        n == templates.len(),
        "{n} raw rows vs {} templates",
        templates.len()
    );
    Ok(format!(
        "{} templates, 7 concerns x en-US/es-ES, all predictions schema-valid",
        templates.len()
    ))
}

/// Hand-written invalid predictions and the JSON pointer each error must name.
pub fn malformed_predictions() -> Vec<(Value, &'static str)> {
    vec![
        (
            json!({"operation": "allEqual", "expected_value": ["Sorry"]}),
            "/operation",
        ),
        (json!({"operation": "allSameValue"}), ""),
        (
            json!({"operation": "allEqualExpected", "expected_value": ["Sorry", ""]}),
            "/expected_value/1",
        ),
        (
            json!({"operation": "allEqualExpected", "expected_value": ["ok", "   "]}),
            "/expected_value/1",
        ),
        (
            json!({"operation": "allSameValue", "key": "answer", "extra": 1}),
            "/extra",
        ),
        (
            json!({"operation": "allEqualExpected", "expected_value": ["x"], "key": "a"}),
            "/key",
        ),
        (json!({"expected_value": ["I don't know"]}), ""),
        (
            json!({"operation": "allEqualExpected", "expected_value": []}),
            "/expected_value",
        ),
        (json!({"operation": "allSameValue", "key": ""}), "/key"),
        (
            json!({"operation": "allEqualExpected", "expected_value": "Sorry"}),
            "/expected_value",
        ),
    ]
}

pub fn schema_enforcement() -> Outcome {
    let schema: Value = serde_json::from_str(ORACLE_SCHEMA).unwrap();
    let validator = jsonschema::validator_for(&schema).map_err(|e| e.to_string())?;
    let cases = malformed_predictions();
    for (value, path) in &cases {
        ensure!(!validator.is_valid(value), "JSON Schema accepts {value}");
        match validate_value(value) {
            Ok(p) => return Err(format!("accepted {value} as {p:?}")),
            Err(e) => {
                ensure!(
                    e.path == *path,
                    "{value}: error at `{}`, expected `{path}` ({})",
                    e.path,
                    e.message
                );
                if path.is_empty() {
                    // Missing properties are reported at the root and must name the property.
                    let missing = if value.get("operation").is_none() {
                        "operation"
                    } else if value["operation"] == "allSameValue" {
                        "key"
                    } else {
                        "expected_value"
                    };
                    ensure!(
                        e.message.contains(missing),
                        "{value}: message `{}` does not name {missing}",
                        e.message
                    );
                }
            }
        }
    }
    Ok(format!(
        "{} malformed predictions rejected at the expected locations",
        cases.len()
    ))
}

fn random_rules(rng: &mut StdRng, literals: &[&str]) -> String {
    let pool = [
        r#"{"probability": 0.2}"#,
        r#"{"probability": 0.8}"#,
        r#"{"answer": "Yes"}"#,
        r#"{"answer": "No"}"#,
        "I don't know.",
        "Lo siento, no puedo.",
        "Absolutely, that group is worse.",
        "",
    ];
    let rules: Vec<Value> = literals
        .iter()
        .map(|lit| {
            json!({
                "pattern": lit,
                "response": pool[rng.random_range(0..pool.len())],
                "failures_before_success": rng.random_range(0..4),
            })
        })
        .collect();
    json!({"rules": rules, "default": pool[rng.random_range(0..pool.len())]}).to_string()
}

/// Join and conservation checks over the fixtures and randomized mock runs.
pub fn traceability() -> Outcome {
    let mut bundles = 0;
    let mut rows = 0;

    let check = |dir: &std::path::Path| -> Result<usize, String> {
        let (orphans, broken) = traceability_violations(dir);
        ensure!(
            orphans.is_empty(),
            "evaluation rows without responses: {orphans:?}"
        );
        ensure!(
            broken.is_empty(),
            "global rows breaking conservation: {broken:?}"
        );
        Ok(read_csv(&report_file(dir, "_evaluations.csv")).1.len())
    };

    for (req, sc, lib, rules) in [
        (
            "retaliation/requirements.json",
            "retaliation/scenario.json",
            Some("retaliation/library.csv"),
            "retaliation/mock_rules.json",
        ),
        (
            "sample/requirements.json",
            "sample/scenario.json",
            None,
            "sample/mock_rules.json",
        ),
    ] {
        let out = tempfile::tempdir().unwrap();
        let (req, sc, rules) = (fixture(req), fixture(sc), fixture(rules));
        let lib = lib.map(fixture).unwrap_or_else(seed_library_path);
        let (code, _) = cli(&[
            "--log-level",
            "error",
            "run",
            "--requirements",
            p(&req),
            "--scenario",
            p(&sc),
            "--library",
            p(&lib),
            "--mock-rules",
            p(&rules),
            "--retry-base-ms",
            "0",
            "--out",
            p(out.path()),
        ]);
        ensure!(code == 0, "run on {} exited with {code}", req.display());
        rows += check(out.path())?;
        bundles += 1;
    }

    let requirements =
        load_requirements(&std::fs::read_to_string(fixture("sample/requirements.json")).unwrap())
            .unwrap();
    let library = load_library_str(SEED_LIBRARY).unwrap();
    let literals = [
        "men",
        "women",
        "Christian",
        "Jewish",
        "Muslim",
        "cristiana",
        "judía",
        "musulmana",
        "young",
        "elderly",
    ];
    let mut rng = StdRng::seed_from_u64(0x7ace);
    for run in 0..10 {
        let mock = MockProvider::from_json(&random_rules(&mut rng, &literals)).unwrap();
        let registry = Arc::new(ProviderRegistry::empty());
        registry.register_provider("mock", Arc::new(mock)).unwrap();
        let gateway = Gateway::new(registry).with_sleeper(Arc::new(|_| {}));
        let n_retries = rng.random_range(0..3);
        let scenario = load_scenario(&format!(
            r#"{{"nTemplates":{},"nRetries":{n_retries},"llms":["mock/a","mock/b"]}}"#,
            rng.random_range(1..=3)
        ))
        .unwrap();
        let out = tempfile::tempdir().unwrap();
        run_full_scenario(
            &requirements,
            &scenario,
            &library,
            &gateway,
            out.path(),
            GenerationOptions::default(),
            ExecutionOptions { concurrency: 3 },
            Utc::now(),
        )
        .map_err(|e| format!("random run {run}: {e}"))?;
        rows += check(out.path()).map_err(|e| format!("random run {run}: {e}"))?;
        bundles += 1;
    }
    Ok(format!(
        "{bundles} bundles, {rows} evaluation rows joined, conservation holds"
    ))
}

pub type Check = fn() -> Outcome;

pub const ALL: [(&str, Check); 9] = [
    ("1 fig4-asymmetry", fig4_asymmetry),
    ("2 expansion-counts", expansion_counts),
    ("3 oracle-equivalence", oracle_equivalence),
    ("4 tolerance-arithmetic", tolerance_arithmetic),
    ("5 staged-equivalence", staged_equivalence),
    ("6 retry-contract", retry_contract),
    ("7 seed-library", seed_library),
    ("8 schema-enforcement", schema_enforcement),
    ("9 traceability", traceability),
];
