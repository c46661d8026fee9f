use chrono::{Days, NaiveDate};
use proptest::prelude::*;
use std::collections::BTreeMap;
use survey_hazard::design::Coefficients;
use survey_hazard::survival::{
    collapse_period_level, expand_person_period, negative_log_likelihood, period_design, person_period_design,
    ExpandOptions, SurveyCase, DAYS, REMINDER1, REMINDER2,
};
use survey_hazard::synthetic::{generate_cases, ScenarioSpec};

fn arb_case(id: usize) -> impl Strategy<Value = SurveyCase> {
    (0u64..3, 1u64..10, 1u64..10, 1u64..15, 0u8..3, proptest::option::of(0u64..40)).prop_map(
        move |(cohort, l0, l1, l2, phases, response)| {
            let start = NaiveDate::from_ymd_opt(2016, 1, 4).unwrap() + Days::new(cohort * 40);
            let r1 = (phases >= 1).then(|| start + Days::new(l0));
            let r2 = (phases >= 2).then(|| start + Days::new(l0 + l1));
            let end = start + Days::new(l0 + l1 + l2);
            let response = response.map(|r| start + Days::new(r)).filter(|r| *r <= end);
            SurveyCase {
                case_id: format!("p{id}"),
                cohort_id: format!("c{cohort}"),
                invitation_date: start,
                reminder1_date: r1,
                reminder2_date: r2,
                end_date: end,
                response_date: response,
            }
        },
    )
}

fn arb_cases() -> impl Strategy<Value = Vec<SurveyCase>> {
    (1usize..40).prop_flat_map(|n| (0..n).map(arb_case).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn collapse_preserves_likelihood(
        cases in arb_cases(),
        b0 in -4.0f64..0.0,
        b1 in -0.5f64..0.5,
        b2 in -1.0f64..1.0,
        b3 in -1.0f64..1.0,
    ) {
        let pp = expand_person_period(&cases, ExpandOptions::default()).unwrap();
        let pl = collapse_period_level(&pp);
        let coefs = Coefficients::new(b0, [(DAYS.to_string(), b1), (REMINDER1.to_string(), b2), (REMINDER2.to_string(), b3)]);
        let a = negative_log_likelihood(&coefs, &person_period_design(&pp)).unwrap();
        let b = negative_log_likelihood(&coefs, &period_design(&pl)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()), "{} vs {}", a, b);
    }

    #[test]
    fn risk_sets_are_conserved(cases in arb_cases()) {
        let pp = expand_person_period(&cases, ExpandOptions::default()).unwrap();
        let pl = collapse_period_level(&pp);
        let mut responders: BTreeMap<&str, u64> = BTreeMap::new();
        let mut rows: BTreeMap<&str, u64> = BTreeMap::new();
        for c in &cases {
            *responders.entry(&c.cohort_id).or_default() += u64::from(c.response_date.is_some());
            let last = c.response_date.unwrap_or(c.end_date);
            *rows.entry(&c.cohort_id).or_default() += (last - c.invitation_date).num_days() as u64 + 1;
        }
        for (cohort, expected) in &responders {
            let events: u64 = pl.rows.iter().filter(|r| r.cohort_id == *cohort).map(|r| r.events).sum();
            let at_risk: u64 = pl.rows.iter().filter(|r| r.cohort_id == *cohort).map(|r| r.at_risk).sum();
            prop_assert_eq!(events, *expected);
            prop_assert_eq!(at_risk, rows[cohort]);
        }
        for r in &pl.rows {
            prop_assert!(r.events <= r.at_risk && r.at_risk >= 1 && r.days >= 1);
        }
    }

    #[test]
    fn person_rows_are_consecutive_with_one_final_event(cases in arb_cases()) {
        let pp = expand_person_period(&cases, ExpandOptions::default()).unwrap();
        let mut by_case: BTreeMap<&str, Vec<_>> = BTreeMap::new();
        for r in &pp.rows {
            by_case.entry(&r.case_id).or_default().push(r);
        }
        for c in &cases {
            let rows = &by_case[c.case_id.as_str()];
            prop_assert_eq!(rows[0].date, c.invitation_date);
            prop_assert_eq!(rows[0].s, 1);
            for w in rows.windows(2) {
                prop_assert_eq!(w[0].date.succ_opt().unwrap(), w[1].date);
                prop_assert!(w[1].s == w[0].s + 1 || w[1].s == 1);
                prop_assert!(!w[0].event);
            }
            prop_assert_eq!(rows.last().unwrap().event, c.response_date.is_some());
        }
    }
}

#[test]
fn thousand_case_synthetic_collapse_matches_to_1e10() {
    let spec = ScenarioSpec {
        cohorts: 4,
        cohort_size: 250,
        ..ScenarioSpec::default()
    };
    let data = generate_cases(&spec).unwrap();
    let pp = expand_person_period(&data.cases, ExpandOptions::default()).unwrap();
    let pl = collapse_period_level(&pp);
    assert!(pl.len() < pp.len() / 10);
    for (b0, b1) in [(-3.0, -0.05), (-1.0, 0.2), (-5.0, 0.0)] {
        let coefs = Coefficients::new(b0, [(DAYS.to_string(), b1), (REMINDER1.to_string(), 0.4)]);
        let a = negative_log_likelihood(&coefs, &person_period_design(&pp)).unwrap();
        let b = negative_log_likelihood(&coefs, &period_design(&pl)).unwrap();
        assert!((a - b).abs() < 1e-10 * a.abs(), "{a} vs {b}");
    }
}

#[test]
fn clamp_mode_moves_early_responses_to_day_one() {
    let start = NaiveDate::from_ymd_opt(2016, 1, 1).unwrap();
    let case = SurveyCase {
        case_id: "a".into(),
        cohort_id: "c".into(),
        invitation_date: start,
        reminder1_date: None,
        reminder2_date: None,
        end_date: start + Days::new(9),
        response_date: Some(start - Days::new(2)),
    };
    assert!(expand_person_period(std::slice::from_ref(&case), ExpandOptions::default()).is_err());
    let pp = expand_person_period(&[case], ExpandOptions { clamp_early_responses: true }).unwrap();
    assert_eq!(pp.len(), 1);
    assert!(pp.rows[0].event);
}
