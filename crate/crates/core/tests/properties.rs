mod common;

use std::collections::BTreeSet;

use proptest::prelude::*;

use keyra_core::check::{seeded_instance, GenConfig};
use keyra_core::logic::Valuation;
use keyra_core::oracle::{
    embeddings, enumerate_forall_embeddings, glb_by_mcs, range_by_enumeration, repair_instances,
    DEFAULT_CAP,
};
use keyra_core::rewrite::{rewrite, Target};
use keyra_core::sql::{emit_sql, execute};
use keyra_core::{DatabaseInstance, NumericDomain, RangeAnswer};

use common::*;

fn instance(body: &str, seed: u64, max_facts: usize) -> DatabaseInstance {
    let cfg = GenConfig {
        seed,
        max_facts,
        ..GenConfig::default()
    };
    let q = shape_query("COUNT", body);
    seeded_instance(&q, &shapes_schema(), NumericDomain::NonNegative, &cfg, 0).unwrap()
}

fn body_strategy() -> impl Strategy<Value = &'static str> {
    prop::sample::select(SHAPES.iter().map(|(_, b)| *b).collect::<Vec<_>>())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn glb_never_exceeds_lub(seed in any::<u64>(), body in body_strategy(), op in prop::sample::select(vec!["SUM", "COUNT", "MIN", "MAX", "AVG", "PRODUCT"])) {
        let db = instance(body, seed, 12);
        let q = shape_query(op, body);
        let r = range_by_enumeration(&db, &q, DEFAULT_CAP).unwrap();
        match (&r.glb, &r.lub) {
            (RangeAnswer::Value(g), RangeAnswer::Value(l)) => prop_assert!(g <= l),
            (RangeAnswer::Bottom, RangeAnswer::Bottom) => {}
            other => prop_assert!(false, "mixed range {:?}", other),
        }
    }

    #[test]
    fn repairs_are_consistent_and_counted(seed in any::<u64>(), body in body_strategy()) {
        let db = instance(body, seed, 12);
        let repairs = repair_instances(&db, DEFAULT_CAP).unwrap();
        prop_assert_eq!(num_bigint::BigUint::from(repairs.len()), db.repair_count());
        for r in &repairs {
            prop_assert!(r.is_consistent());
            prop_assert_eq!(r.all_blocks().len(), db.all_blocks().len());
        }
    }

    #[test]
    fn forall_embeddings_are_embeddings(seed in any::<u64>(), body in body_strategy()) {
        let db = instance(body, seed, 12);
        let q = shape_query("COUNT", body);
        let all: BTreeSet<Valuation> = embeddings(&db, &q.body).into_iter().collect();
        let rw = rewrite(&q, Target::Glb, NumericDomain::NonNegative).unwrap();
        let psi = rw.forall_embeddings(&db, &[]).unwrap();
        for theta in &psi {
            prop_assert!(all.contains(theta));
        }
        let by_def = enumerate_forall_embeddings(&db, &q.body, DEFAULT_CAP).unwrap();
        prop_assert_eq!(psi, by_def);
    }

    #[test]
    fn mcs_glb_matches_enumeration(seed in any::<u64>(), body in body_strategy(), op in prop::sample::select(vec!["SUM", "COUNT", "MAX"])) {
        let db = instance(body, seed, 10);
        let q = shape_query(op, body);
        let by_mcs = glb_by_mcs(&db, &q, DEFAULT_CAP).unwrap();
        let by_repairs = range_by_enumeration(&db, &q, DEFAULT_CAP).unwrap().glb;
        prop_assert_eq!(by_mcs, by_repairs);
    }

    #[test]
    fn sql_matches_evaluator(seed in any::<u64>(), body in body_strategy(), pick in 0usize..6) {
        let (op, target) = [
            ("SUM", Target::Glb),
            ("COUNT", Target::Glb),
            ("MAX", Target::Glb),
            ("MIN", Target::Glb),
            ("MIN", Target::Lub),
            ("MAX", Target::Lub),
        ][pick];
        let db = instance(body, seed, 12);
        let q = shape_query(op, body);
        let rw = rewrite(&q, target, NumericDomain::NonNegative).unwrap();
        let script = emit_sql(&rw, &shapes_schema()).unwrap();
        let rows = execute("sqlite::memory:", &db, &script).unwrap();
        prop_assert_eq!(rows.len(), 1);
        prop_assert_eq!(&rows[0].1, &rw.evaluate(&db).unwrap());
    }
}
