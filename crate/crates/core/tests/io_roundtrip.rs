use marfe_core::error::Error;
use marfe_core::io::*;
use marfe_core::keydyn::make_key_dynamics;
use marfe_core::marfe::{run_marfe, MarfeConfig};
use marfe_core::mdp::{random_mdp, validate_mdp, Policy, RewardFunction, TabularMdp};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn mdp_roundtrip_is_exact() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mdp.json");
    let mdp = random_mdp(3, 2, 4, 7, 1.0).unwrap();
    write_mdp(&mdp, &path).unwrap();
    let back = read_mdp(&path).unwrap();
    assert_eq!(back, mdp);
    assert_eq!(back.kernel().as_slice(), mdp.kernel().as_slice());
}

#[test]
fn reward_and_policy_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let r = RewardFunction::random(3, 2, 4, &mut rng);
    write_reward(&r, dir.path().join("r.json")).unwrap();
    assert_eq!(read_reward(dir.path().join("r.json")).unwrap(), r);

    let det = Policy::random_deterministic(3, 2, 4, &mut rng);
    write_policy(&det, dir.path().join("p.json")).unwrap();
    assert_eq!(read_policy(dir.path().join("p.json")).unwrap(), det);

    let sto = Policy::stochastic(2, 3, 1, vec![0.2, 0.3, 0.5, 1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0]).unwrap();
    let text = policy_to_string(&sto);
    assert_eq!(policy_from_str(&text, "mem").unwrap(), sto);
}

#[test]
fn estimate_and_phase_logs_roundtrip() {
    let mdp = random_mdp(3, 2, 3, 1, 1.0).unwrap();
    let run = run_marfe(&mdp, &MarfeConfig::for_accuracy(600, 0.3, 0.1, 3, 3, 2)).unwrap();
    let text = estimate_to_string(&run.estimate);
    let back = estimate_from_str(&text, "mem").unwrap();
    assert_eq!(back.kernel().as_slice(), run.estimate.kernel().as_slice());
    assert_eq!(back.active_sets(), run.estimate.active_sets());
    assert_eq!(back.all_counts(), run.estimate.all_counts());
    assert_eq!(back.beta(), run.estimate.beta());
    assert_eq!(estimate_to_string(&back), text);

    let logs = phase_logs_from_str(&phase_logs_to_string(&run.logs), "mem").unwrap();
    assert_eq!(logs, run.logs);
}

#[test]
fn negative_probability_is_an_invariant_error() {
    let mdp = TabularMdp::from_fn(2, 1, 1, 0, |_, _, _, n| if n == 0 { 1.0 } else { 0.0 }).unwrap();
    let text = mdp_to_string(&mdp);
    let bad = text.replacen("1.0,\n", "1.5,\n", 1).replacen("0.0\n", "-0.5\n", 1);
    assert_ne!(bad, text);
    match mdp_from_str(&bad, "mem") {
        Err(Error::Invariant(v)) => assert!(v.iter().any(|x| x.location == Some((0, 0, 0)))),
        other => panic!("expected invariant error, got {other:?}"),
    }
}

#[test]
fn zero_horizon_is_a_size_error() {
    let text = r#"{"format": "marfe.mdp/v1", "states": 2, "actions": 1, "horizon": 0, "initial_state": 0, "transitions": []}"#;
    assert!(matches!(mdp_from_str(text, "mem"), Err(Error::InvalidSize(_))));
}

#[test]
fn malformed_documents_report_line_and_field() {
    let text = "{\n  \"format\": \"marfe.mdp/v1\",\n  \"states\": \"two\"\n}";
    match mdp_from_str(text, "f.json") {
        Err(Error::Parse { line, field, path, .. }) => {
            assert_eq!(line, 3);
            assert_eq!(field, "states");
            assert_eq!(path, "f.json");
        }
        other => panic!("expected parse error, got {other:?}"),
    }
    let short = r#"{"format": "marfe.mdp/v1", "states": 2, "actions": 1, "horizon": 1, "initial_state": 0, "transitions": [[[[1.0]]]]}"#;
    match mdp_from_str(short, "mem") {
        Err(Error::Parse { field, .. }) => assert_eq!(field, "transitions[0]"),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn row_sum_point_eight_is_located() {
    let text = r#"{"format": "marfe.mdp/v1", "states": 2, "actions": 2, "horizon": 1, "initial_state": 0,
        "transitions": [[[[1.0, 0.0], [0.5, 0.3]], [[0.0, 1.0], [0.0, 1.0]]]]}"#;
    match mdp_from_str(text, "mem") {
        Err(Error::Invariant(v)) => {
            assert_eq!(v.len(), 1);
            assert_eq!(v[0].location, Some((0, 0, 1)));
        }
        other => panic!("expected invariant error, got {other:?}"),
    }
}

#[test]
fn validators_accept_generated_instances() {
    let identity = TabularMdp::from_fn(3, 2, 2, 0, |_, s, _, n| if s == n { 1.0 } else { 0.0 }).unwrap();
    assert!(validate_mdp(&identity).is_empty());
    assert!(validate_mdp(&make_key_dynamics(5, 3, &[0, 1, 2, 0, 1]).unwrap().mdp).is_empty());
    let single = random_mdp(1, 1, 1, 0, 1.0).unwrap();
    assert_eq!(single.kernel().as_slice(), &[1.0]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn random_mdps_roundtrip(s in 1usize..5, a in 1usize..4, h in 1usize..5, seed in any::<u64>(), c in 0.05f64..5.0) {
        let mdp = random_mdp(s, a, h, seed, c).unwrap();
        prop_assert!(validate_mdp(&mdp).is_empty());
        let again = random_mdp(s, a, h, seed, c).unwrap();
        prop_assert_eq!(&again, &mdp);
        prop_assert_eq!(mdp_from_str(&mdp_to_string(&mdp), "mem").unwrap(), mdp);
    }

    #[test]
    fn rewards_roundtrip(s in 1usize..5, a in 1usize..4, h in 1usize..5, seed in any::<u64>()) {
        let r = RewardFunction::random(s, a, h, &mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(reward_from_str(&reward_to_string(&r), "mem").unwrap(), r);
    }
}
