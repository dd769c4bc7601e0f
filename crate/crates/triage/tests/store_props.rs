use std::io::Write;

use migtriage::default_experiment_config;
use migtriage::store::Store;
use migtriage_core::sample_population;
use proptest::prelude::*;

#[derive(Debug, Clone)]
enum Op {
    Submit(u64),
    Reopen,
    /// Simulates a crash mid-write: garbage without a newline at the end.
    TornWrite(Vec<u8>),
    Snapshot,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        6 => any::<u64>().prop_map(Op::Submit),
        1 => Just(Op::Reopen),
        1 => proptest::collection::vec(any::<u8>().prop_filter("no newline", |b| *b != b'\n'), 1..40).prop_map(Op::TornWrite),
        1 => Just(Op::Snapshot),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn append_only_ids_and_counts(ops in proptest::collection::vec(op(), 1..60)) {
        let dir = tempfile::tempdir().unwrap();
        let population = default_experiment_config().generation.population;
        let mut store = Store::open(dir.path()).unwrap();
        let mut acknowledged: Vec<u64> = Vec::new();
        let mut last_count = 0;
        for op in ops {
            match op {
                Op::Submit(seed) => {
                    let p = sample_population(&population, 1, seed).remove(0);
                    let r = store.submit(p, "1").unwrap();
                    prop_assert!(!acknowledged.contains(&r.id));
                    prop_assert!(acknowledged.last().is_none_or(|&l| r.id > l));
                    acknowledged.push(r.id);
                }
                Op::Reopen => {
                    drop(store);
                    store = Store::open(dir.path()).unwrap();
                }
                Op::TornWrite(bytes) => {
                    drop(store);
                    let mut f = std::fs::OpenOptions::new().append(true).open(dir.path().join("store.log")).unwrap();
                    f.write_all(&bytes).unwrap();
                    drop(f);
                    store = Store::open(dir.path()).unwrap();
                }
                Op::Snapshot => store.snapshot().unwrap(),
            }
            let st = store.read();
            prop_assert!(st.records.len() >= last_count);
            last_count = st.records.len();
            let ids: Vec<u64> = st.records.iter().map(|r| r.id).collect();
            prop_assert_eq!(&ids, &acknowledged);
        }
    }
}
