mod common;

use common::{random_schema, random_table, random_type};
use ixframe::csv_io::{read_with_sidecar, write_with_sidecar};
use ixframe::datagen::{generate, GenSpec, KeyDist, PayloadCol};
use ixframe::rowstore::ColumnType;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn large_random_table_round_trips_bit_exactly() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("big.csv");
    let key = random_type(&mut rng);
    let schema = random_schema(&mut rng, "x", key);
    let t = random_table(&mut rng, &schema, 100_000, 5000, true);
    write_with_sidecar(&t, &path).unwrap();
    let back = read_with_sidecar(&path).unwrap();
    assert!(back.same_multiset(&t));
    assert_eq!(back, t);
}

#[test]
fn generated_tables_survive_csv() {
    let dir = tempfile::tempdir().unwrap();
    for (i, ty) in [ColumnType::Int32, ColumnType::Int64, ColumnType::Float64, ColumnType::Utf8].into_iter().enumerate()
    {
        let mut spec = GenSpec::key_value(5000, KeyDist::Zipf { s: 1.2, n: 300 }, i as u64);
        spec.key_type = ty;
        spec.payload.push(PayloadCol { null_rate: 0.1, ..PayloadCol::new("f", ColumnType::Float64) });
        spec.payload.push(PayloadCol { null_rate: 0.1, str_len: 3, ..PayloadCol::new("s", ColumnType::Utf8) });
        let t = generate(&spec).unwrap();
        let path = dir.path().join(format!("g{i}.csv"));
        write_with_sidecar(&t, &path).unwrap();
        assert_eq!(read_with_sidecar(&path).unwrap(), t);
    }
}
