//! The external scorer line protocol, driven by a shell stand-in.

use std::time::Duration;

use modflow::chem::{parse_smiles, qm9, score, ExternalScorer, Scorer};
use modflow::rl::{PropertyTransform, RewardSpec};
use modflow::Error;

/// Answers SCORE with the SMILES length, SS with 0.5 and FILTER with 1;
/// anything else gets an ERR line. Every request is logged to `$LOG`.
const FAKE: &str = r#"while read verb smiles; do
  echo "$verb $smiles" >> "$LOG"
  case "$verb" in
    SCORE) echo "${#smiles}" ;;
    SS) echo 0.5 ;;
    FILTER) echo 1 ;;
    QUIT) exit 0 ;;
    *) echo "ERR unknown verb $verb" ;;
  esac
done"#;

fn spawn(log: &std::path::Path) -> Scorer {
    let command = format!("LOG='{}'; {FAKE}", log.display());
    Scorer::External(ExternalScorer::spawn(&command, "SCORE", Duration::from_secs(5)).unwrap())
}

#[test]
fn penalties_come_from_ss_and_filter_verbs() {
    let dir = std::env::temp_dir().join(format!("modflow-scorer-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let log = dir.join("requests.log");
    let a = qm9();
    let g = parse_smiles("CCO", &a).unwrap();
    {
        let mut scorer = spawn(&log);
        assert_eq!(score(&g, &a, &mut scorer).unwrap(), 3.0);
        let with = RewardSpec { use_penalties: true, ..RewardSpec::default() };
        assert_eq!(with.final_reward(&g, &a, &mut scorer, None).unwrap(), 3.0 - 0.5 - 1.0);
        assert_eq!(with.final_reward(&g, &a, &mut scorer, Some(2.0)).unwrap(), 3.0 - 2.0 - 0.5 - 1.0);
        let scaled = RewardSpec { transform: PropertyTransform::Scaled(2.0), ..RewardSpec::default() };
        assert_eq!(scaled.final_reward(&g, &a, &mut scorer, None).unwrap(), 6.0);
    }
    // dropping the scorer sends QUIT; give the child a moment to log it
    std::thread::sleep(Duration::from_millis(200));
    let requests: Vec<String> = std::fs::read_to_string(&log).unwrap().lines().map(str::to_string).collect();
    let verbs: Vec<&str> = requests.iter().map(|l| l.split(' ').next().unwrap()).collect();
    assert_eq!(verbs, ["SCORE", "SCORE", "SS", "FILTER", "SCORE", "SS", "FILTER", "SCORE", "QUIT"]);
    assert!(requests[0].ends_with(" CCO") || requests[0].ends_with(" OCC"), "{}", requests[0]);
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn error_replies_surface_with_the_raw_line() {
    let a = qm9();
    let g = parse_smiles("C", &a).unwrap();
    let mut scorer =
        Scorer::External(ExternalScorer::spawn("while read l; do echo 'ERR no such molecule'; done", "QED", Duration::from_secs(5)).unwrap());
    match score(&g, &a, &mut scorer) {
        Err(Error::Scorer { reason, raw }) => {
            assert_eq!(reason, "no such molecule");
            assert_eq!(raw, "ERR no such molecule");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn builtin_scorers_skip_penalty_requests() {
    let a = qm9();
    let g = parse_smiles("CCCC1CC1", &a).unwrap();
    let mut atoms = Scorer::builtin("atoms").unwrap();
    assert_eq!(score(&g, &a, &mut atoms).unwrap(), 6.0);
    assert_eq!(atoms.steric_strain(&g, &a).unwrap(), 0.0);
    assert_eq!(atoms.filter_penalty(&g, &a).unwrap(), 0.0);
    // longest chain through the ring is 6 carbons, one ring
    let mut proxy = Scorer::builtin("plogp-proxy").unwrap();
    assert_eq!(score(&g, &a, &mut proxy).unwrap(), 5.0);
    assert!(Scorer::builtin("qed").is_err());
}
