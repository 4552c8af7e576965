use super::*;
use crate::envelope::MsgType;
use crate::model::Version;
use crate::registry::Outcome;
use crate::scenario::{run_scenario, RunOptions, Scenario};
use serde_json::Value;

const TRANSLATION: &str = include_str!("../../../../scenarios/translation.scenario");
const FLOOD: &str = include_str!("../../../../scenarios/flood.scenario");

fn translation() -> Scenario {
    let mut sc = Scenario::parse(TRANSLATION).unwrap();
    sc.expect = None;
    sc
}

fn legalbot() -> AgentId {
    fixture::agent_id("LegalBot_Prime", "legal")
}

fn gov() -> AgentId {
    fixture::agent_id("TranslatorC_Gov", "translation")
}

fn run_sc(sc: &Scenario) -> SimOutput {
    run_scenario(sc, &RunOptions::default()).unwrap().output
}

fn trace_lines(out: &SimOutput) -> Vec<Value> {
    std::str::from_utf8(&out.trace).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn requester_outcome(out: &SimOutput) -> Option<Outcome> {
    out.report.requester.as_ref().and_then(|r| r.outcome)
}

#[test]
fn same_seed_gives_identical_bytes() {
    let sc = translation();
    let a = run_sc(&sc);
    let b = run_sc(&sc);
    assert_eq!(a.trace, b.trace);
    assert_eq!(canonical_encode(&a.report).unwrap(), canonical_encode(&b.report).unwrap());
    assert_eq!(a.report.audit_heads, b.report.audit_heads);
}

#[test]
fn trace_is_indexed_and_time_ordered() {
    let lines = trace_lines(&run_sc(&translation()));
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["index"].as_u64(), Some(i as u64));
    }
    assert!(lines.windows(2).all(|w| w[0]["time_ms"].as_u64() <= w[1]["time_ms"].as_u64()));
}

#[test]
fn every_delivery_follows_its_send() {
    let mut sc = translation();
    sc.sim.duplicate_prob = 0.3;
    let lines = trace_lines(&run_sc(&sc));
    let mut sent: BTreeMap<String, u64> = BTreeMap::new();
    for l in &lines {
        let t = l["time_ms"].as_u64().unwrap();
        match l["kind"].as_str().unwrap() {
            "send" => {
                sent.entry(l["detail"]["hash"].as_str().unwrap().to_owned()).or_insert(t);
            }
            "deliver" if l["detail"]["origin"] != "injected" => {
                let h = l["detail"]["envelope"]["hash"].as_str().unwrap();
                let at = sent.get(h).unwrap_or_else(|| panic!("delivered before sent: {l}"));
                assert!(*at + sc.sim.latency_ms.0 <= t);
            }
            _ => {}
        }
    }
}

#[test]
fn fixed_latency_keeps_each_link_in_order() {
    let mut sc = translation();
    sc.sim.latency_ms = (20, 20);
    let lines = trace_lines(&run_sc(&sc));
    let mut sends: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let mut delivers: BTreeMap<(String, String), Vec<String>> = BTreeMap::new();
    let link = |e: &Value| (e["from"].to_string(), e["to"].to_string());
    for l in &lines {
        match l["kind"].as_str().unwrap() {
            "send" => sends.entry(link(&l["detail"])).or_default().push(l["detail"]["hash"].to_string()),
            "deliver" => {
                let e = &l["detail"]["envelope"];
                delivers.entry(link(e)).or_default().push(e["hash"].to_string());
            }
            _ => {}
        }
    }
    assert!(sends.len() >= 4);
    assert_eq!(sends, delivers);
}

#[test]
fn reseeding_moves_the_trace_only() {
    let sc = translation();
    let a = run_sc(&sc);
    let b = run_scenario(&sc, &RunOptions { seed: Some(99), weights: None }).unwrap().output;
    assert_ne!(a.trace, b.trace);
    assert_eq!(requester_outcome(&a), requester_outcome(&b));
}

#[test]
fn late_replay_is_stale() {
    let mut sc = translation();
    sc.sim.adversaries.push(AdversarySpec::Replayer {
        target: Link { from: legalbot(), to: gov() },
        msg_types: vec![MsgType::Ssr],
        delay_ms: 400_000,
    });
    let out = run_sc(&sc);
    let inj = &out.report.injections;
    assert_eq!(inj.len(), 1);
    assert_eq!(inj[0].result, "StaleTimestamp");
    assert!(inj[0].replay_rejected && !inj[0].state_changed);
    assert_eq!(requester_outcome(&out), Some(Outcome::Commit));
}

#[test]
fn noop_downgrader_leaves_offers_alone() {
    let mut sc = translation();
    sc.sim.adversaries.push(AdversarySpec::Downgrader {
        target: Link { from: gov(), to: legalbot() },
        mode: DowngradeMode::Noop,
        resign: true,
    });
    let plain = run_sc(&translation());
    let out = run_sc(&sc);
    assert!(out.report.tampering.is_empty());
    assert_eq!(out.trace, plain.trace);
}

#[test]
fn injected_extension_is_detected() {
    let mut sc = translation();
    sc.sim.adversaries.push(AdversarySpec::Downgrader {
        target: Link { from: gov(), to: legalbot() },
        mode: DowngradeMode::Inject { extension: "rogue-ext".into() },
        resign: true,
    });
    let out = run_sc(&sc);
    assert_eq!(tampered_sessions(&out.report).len(), 1);
    let req = out.report.requester.as_ref().unwrap();
    assert!(req.session_failures.iter().any(|f| f.agent == gov() && f.reason == "DowngradeDetected"), "{req:?}");
    assert_ne!(req.selected, Some(gov()));
}

#[test]
fn unsigned_rewrite_fails_the_signature_check() {
    let mut sc = translation();
    sc.sim.adversaries.push(AdversarySpec::Downgrader {
        target: Link { from: gov(), to: legalbot() },
        mode: DowngradeMode::Strip { to: Version::new(1, 0, 0) },
        resign: false,
    });
    let out = run_sc(&sc);
    let bad: Vec<_> = out.report.rejections.iter().filter(|r| r.error == "SignatureInvalid").collect();
    assert_eq!(bad.len(), 1);
    assert_eq!((bad[0].from.clone(), bad[0].msg_type), (gov(), MsgType::Sso));
    assert!(out.report.nonterminal.is_empty());
}

#[test]
fn flood_is_counted_and_throttled() {
    let mut sc = Scenario::parse(FLOOD).unwrap();
    let out = run_sc(&sc);
    let f = &out.report.flood[&0];
    assert_eq!(f.registrations.values().sum::<u32>(), 100);
    assert_eq!(f.queries.values().sum::<u32>(), 30);
    assert_eq!(f.registrations.get("ok"), Some(&1));
    assert!(f.queries.get("RateLimited").copied().unwrap_or(0) > 0, "{f:?}");

    let AdversarySpec::Flooder { valid_pow, .. } = &mut sc.sim.adversaries[0] else { panic!("flood scenario") };
    *valid_pow = false;
    let out = run_sc(&sc);
    let f = &out.report.flood[&0];
    assert_eq!(f.registrations.get("PowRejected").copied().unwrap_or(0) + f.registrations.get("RateLimited").copied().unwrap_or(0), 100);
    assert_eq!(f.registrations.get("ok"), None);
}

#[test]
fn horizon_truncates_the_run() {
    let mut sc = translation();
    sc.sim.horizon_ms = 100;
    let out = run_sc(&sc);
    assert!(out.report.truncated);
    assert!(out.report.end_ms <= sc.start_ms + 100);
}

#[test]
fn bad_configuration_is_refused() {
    let sc = translation();
    let mut cfg = sc.sim.clone();
    cfg.latency_ms = (50, 10);
    cfg.adversaries.push(AdversarySpec::Impostor {
        target: fixture::agent_id("Nobody", "nowhere"),
        impersonate: legalbot(),
    });
    let Err(SimError::ScenarioInvalid(errs)) = run(&cfg, sc.build(0, None)) else { panic!("accepted") };
    assert_eq!(errs.len(), 2, "{errs:?}");
}

#[test]
fn link_seeds_differ_by_direction_and_index() {
    let (a, b) = (legalbot(), gov());
    assert_ne!(link_seed(1, &a, &b, 0), link_seed(1, &b, &a, 0));
    assert_ne!(link_seed(1, &a, &b, 0), link_seed(1, &a, &b, 1));
    assert_ne!(link_seed(1, &a, &b, 0), link_seed(2, &a, &b, 0));
}
