mod common;

use std::sync::LazyLock;

use common::oracle::{self, check_doubling, check_order, key, q, random_lines, shuffled_lines, Table};
use proptest::prelude::*;
use thali_core::resolver::Resolver;
use thali_core::store::KnowledgeStore;

static TABLE: LazyLock<Table> = LazyLock::new(oracle::oracle_table);
static STORE: LazyLock<KnowledgeStore> = LazyLock::new(oracle::table_store);

#[test]
fn ten_fixture_recipes_match_brute_force_sums() {
    let resolver = Resolver::rules_only();
    oracle::check_fixture_recipes(&common::fixture_store(&resolver), &resolver, &TABLE);
}

#[test]
fn oracle_table_covers_the_built_table() {
    let fct = common::fixture_fct();
    assert_eq!(TABLE.len(), fct.len());
    for rec in fct.records() {
        let k = key(&rec.key.name, rec.key.form.as_deref().unwrap_or(""));
        let row = &TABLE[&k];
        assert_eq!(rec.nutrients.len(), row.len(), "{k}");
        for (id, v) in row {
            assert_eq!(q(rec.nutrients.get_str(id).unwrap()), *v, "{k} {id}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 200, ..ProptestConfig::default() })]

    #[test]
    fn doubling_quantities_doubles_totals(lines in random_lines(), servings in 1i64..8) {
        check_doubling(&STORE, &Resolver::rules_only(), &TABLE, &lines, servings)?;
    }

    #[test]
    fn line_order_does_not_change_totals((lines, shuffled) in shuffled_lines()) {
        check_order(&STORE, &Resolver::rules_only(), &lines, &shuffled)?;
    }
}
