use proptest::prelude::*;
use serde_json::json;
use superdiff::campaign::{template, CampaignConfig, KINDS};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn digest_ignores_workers_and_output(k in 0..KINDS.len(), seed in any::<u64>(), workers in 1usize..16, name in "[a-z]{1,8}") {
        let mut v = template(KINDS[k]).unwrap();
        v["seed"] = json!(seed);
        let base = CampaignConfig::from_value(v.clone()).unwrap().digest();
        v["workers"] = json!(workers);
        v["output"] = json!(name);
        prop_assert_eq!(CampaignConfig::from_value(v).unwrap().digest(), base);
    }

    #[test]
    fn digest_tracks_seed(k in 0..KINDS.len(), a in any::<u64>(), b in any::<u64>()) {
        prop_assume!(a != b);
        let mut v = template(KINDS[k]).unwrap();
        v["seed"] = json!(a);
        let da = CampaignConfig::from_value(v.clone()).unwrap().digest();
        v["seed"] = json!(b);
        prop_assert_ne!(CampaignConfig::from_value(v).unwrap().digest(), da);
    }

    #[test]
    fn canonical_json_round_trips(k in 0..KINDS.len(), seed in any::<u64>()) {
        let mut v = template(KINDS[k]).unwrap();
        v["seed"] = json!(seed);
        let cfg = CampaignConfig::from_value(v).unwrap();
        let again = CampaignConfig::parse(&cfg.to_value().to_string()).unwrap();
        prop_assert_eq!(again.to_value(), cfg.to_value());
        prop_assert_eq!(again.digest(), cfg.digest());
    }

    #[test]
    fn any_unknown_top_level_key_is_rejected_by_name(k in 0..KINDS.len(), key in "zz[a-z_]{1,10}") {
        let mut v = template(KINDS[k]).unwrap();
        v[key.as_str()] = json!(1);
        let err = CampaignConfig::from_value(v).unwrap_err().to_string();
        prop_assert!(err.contains(&key), "{}", err);
    }
}

#[test]
fn results_do_not_depend_on_worker_count() {
    for kind in ["fk", "bbm", "sbm"] {
        let mut v = template(kind).unwrap();
        if let Some(r) = v.get_mut("reps") {
            *r = json!(40);
        }
        let run = |w: usize| {
            let mut v = v.clone();
            v["workers"] = json!(w);
            let cfg = CampaignConfig::from_value(v).unwrap();
            let out = superdiff::campaign::execute_with_workers(&cfg).unwrap();
            out.tables.iter().map(|t| t.to_csv("d")).collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(3), "{kind}");
    }
}
