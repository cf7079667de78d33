use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use pate_fairness::data::{
    load_csv, read_csv, split, standardize, synth_two_group, CsvSchema, Sample, SplitSpec,
    SynthSpec,
};
use pate_fairness::{Dataset, Error};
use proptest::prelude::*;

const ADULT_LIKE: &str = "\
age,workclass,hours,sex,income
39,State-gov,40,Male,<=50K
50,Self-emp,13,Male,<=50K
38,Private,40,Female,>50K
53,Private,40,Male,>50K
28,Private,40,Female,<=50K
37,State-gov,80,Female,>50K
";

/// Independent first-appearance encoder for one column.
fn oracle_codes(rows: &[Vec<&str>], col: usize) -> (Vec<usize>, Vec<String>) {
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut levels = Vec::new();
    let codes = rows
        .iter()
        .map(|r| {
            let v = r[col].to_string();
            if let Some(&i) = index.get(&v) {
                i
            } else {
                levels.push(v.clone());
                index.insert(v, levels.len() - 1);
                levels.len() - 1
            }
        })
        .collect();
    (codes, levels)
}

#[test]
fn string_columns_are_encoded_by_first_appearance() {
    let schema = CsvSchema::new("income", "sex").with_categorical(&["workclass"]);
    let (d, meta) = read_csv(ADULT_LIKE.as_bytes(), &schema).unwrap();

    let rows: Vec<Vec<&str>> = ADULT_LIKE
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect())
        .collect();
    let (labels, classes) = oracle_codes(&rows, 4);
    let (groups, group_values) = oracle_codes(&rows, 3);
    let (work, work_levels) = oracle_codes(&rows, 1);

    assert_eq!(d.labels(), labels);
    assert_eq!(d.groups(), groups);
    assert_eq!(meta.class_values, classes);
    assert_eq!(meta.group_values, group_values);
    assert_eq!(
        meta.feature_names,
        [
            "age",
            "workclass=State-gov",
            "workclass=Self-emp",
            "workclass=Private",
            "hours"
        ]
    );
    for (s, (row, w)) in d.samples().iter().zip(rows.iter().zip(&work)) {
        let mut expected = vec![row[0].parse::<f64>().unwrap()];
        expected.extend((0..work_levels.len()).map(|l| if l == *w { 1.0 } else { 0.0 }));
        expected.push(row[2].parse().unwrap());
        assert_eq!(s.features, expected);
    }
}

#[test]
fn integer_labels_keep_their_values() {
    let text = "x,y,g\n0.5,1,0\n1.5,0,1\n2.5,1,1\n";
    let (d, meta) = read_csv(text.as_bytes(), &CsvSchema::new("y", "g")).unwrap();
    assert_eq!(d.labels(), [1, 0, 1]);
    assert_eq!(meta.class_values, ["0", "1"]);
}

#[test]
fn load_csv_reads_from_disk() {
    let mut f = tempfile::NamedTempFile::new().unwrap();
    f.write_all(ADULT_LIKE.as_bytes()).unwrap();
    let schema = CsvSchema::new("income", "sex").with_categorical(&["workclass"]);
    let d = load_csv(f.path(), &schema).unwrap();
    assert_eq!(d.len(), 6);
    assert_eq!(d.feature_dim(), 5);
    assert_eq!(d.num_classes(), 2);
    assert_eq!(d.num_groups(), 2);
}

#[test]
fn schema_and_parse_errors() {
    let missing = read_csv(ADULT_LIKE.as_bytes(), &CsvSchema::new("label", "sex"));
    assert!(matches!(missing, Err(Error::Schema(_))));

    let bad = "x,y,g\n1,0,0\nabc,1,1\n";
    match read_csv(bad.as_bytes(), &CsvSchema::new("y", "g")) {
        Err(Error::Parse { row, column, .. }) => {
            assert_eq!(row, 1);
            assert_eq!(column, "x");
        }
        other => panic!("expected a parse error, got {other:?}"),
    }

    let same = read_csv(bad.as_bytes(), &CsvSchema::new("y", "y"));
    assert!(matches!(same, Err(Error::Schema(_))));
}

#[test]
fn csv_round_trip_preserves_samples() {
    let d = synth_two_group(&SynthSpec {
        n: 50,
        dim: 3,
        margins: [1.0, 0.5],
        scales: [1.0, 2.0],
        seed: 4,
    })
    .unwrap();
    let mut buf = Vec::new();
    d.write_csv(&mut buf).unwrap();
    let (back, _) = read_csv(buf.as_slice(), &CsvSchema::new("label", "group")).unwrap();
    assert_eq!(back, d);
}

#[test]
fn standardization_gives_zero_mean_unit_variance() {
    let d = synth_two_group(&SynthSpec {
        n: 500,
        dim: 4,
        margins: [1.0, 1.0],
        scales: [1.0, 5.0],
        seed: 1,
    })
    .unwrap();
    let (z, stats) = standardize(&d);
    let n = z.len() as f64;
    for j in 0..z.feature_dim() {
        let col: Vec<f64> = z.samples().iter().map(|s| s.features[j]).collect();
        let mean = col.iter().sum::<f64>() / n;
        let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        assert!(mean.abs() < 1e-12);
        assert!((var - 1.0).abs() < 1e-12);
        assert!(stats.std[j] > 0.0);
    }
    assert_eq!(z.labels(), d.labels());
    assert_eq!(z.groups(), d.groups());
}

#[test]
fn constant_columns_standardize_to_zero() {
    let samples = (0..4)
        .map(|i| Sample {
            features: vec![3.0, i as f64],
            label: i % 2,
            group: 0,
        })
        .collect();
    let d = Dataset::new(samples, 2, 1, 2).unwrap();
    let (z, stats) = standardize(&d);
    assert_eq!(stats.std[0], 0.0);
    assert!(z.samples().iter().all(|s| s.features[0] == 0.0));
}

#[test]
fn split_rejects_impossible_sizes() {
    let d = synth_two_group(&SynthSpec {
        n: 100,
        dim: 2,
        margins: [1.0, 1.0],
        scales: [1.0, 1.0],
        seed: 0,
    })
    .unwrap();
    let too_many_teachers = SplitSpec {
        num_teachers: 76,
        public_size: 10,
        ..SplitSpec::default()
    };
    assert!(matches!(
        split(&d, &too_many_teachers),
        Err(Error::Sizing(_))
    ));
    let too_big_public = SplitSpec {
        num_teachers: 5,
        public_size: 26,
        ..SplitSpec::default()
    };
    assert!(matches!(split(&d, &too_big_public), Err(Error::Sizing(_))));
}

#[test]
fn synthetic_groups_follow_their_scales() {
    let spec = SynthSpec {
        n: 20000,
        dim: 10,
        margins: [1.0, 1.0],
        scales: [1.0, 3.0],
        seed: 9,
    };
    let d = synth_two_group(&spec).unwrap();
    let mut sq = [0.0f64; 2];
    let mut count = [0usize; 2];
    let mut positives = 0usize;
    for s in d.samples() {
        sq[s.group] += s.features.iter().map(|v| v * v).sum::<f64>();
        count[s.group] += 1;
        positives += s.label;
    }
    // E‖x‖² = scale² (dim + margin²).
    for g in 0..2 {
        let expected = spec.scales[g].powi(2) * (10.0 + 1.0);
        let measured = sq[g] / count[g] as f64;
        assert!(
            (measured / expected - 1.0).abs() < 0.03,
            "group {g}: {measured} vs {expected}"
        );
    }
    let frac = count[1] as f64 / d.len() as f64;
    assert!((frac - 0.5).abs() < 0.02);
    assert!((positives as f64 / d.len() as f64 - 0.5).abs() < 0.02);
}

#[test]
fn labels_follow_the_diagonal_boundary() {
    let d = synth_two_group(&SynthSpec {
        n: 300,
        dim: 5,
        margins: [0.5, 2.0],
        scales: [2.0, 0.5],
        seed: 3,
    })
    .unwrap();
    for s in d.samples() {
        let side = s.features.iter().sum::<f64>() > 0.0;
        assert_eq!(s.label, usize::from(side));
    }
}

#[test]
fn synth_is_deterministic_per_seed() {
    let spec = SynthSpec {
        n: 100,
        dim: 3,
        margins: [1.0, 0.2],
        scales: [1.0, 2.0],
        seed: 11,
    };
    assert_eq!(
        synth_two_group(&spec).unwrap(),
        synth_two_group(&spec).unwrap()
    );
    let other = SynthSpec {
        seed: 12,
        ..spec.clone()
    };
    assert_ne!(
        synth_two_group(&spec).unwrap(),
        synth_two_group(&other).unwrap()
    );
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn split_is_a_disjoint_cover(
        n in 40usize..400,
        k in 1usize..20,
        public in 1usize..10,
        frac in 0.5f64..0.9,
        seed in any::<u64>(),
        stratify in any::<bool>(),
    ) {
        let d = synth_two_group(&SynthSpec {
            n,
            dim: 2,
            margins: [1.0, 1.0],
            scales: [1.0, 1.0],
            seed,
        })
        .unwrap();
        let spec = SplitSpec {
            private_fraction: frac,
            num_teachers: k,
            public_size: public,
            seed,
            stratify,
        };
        let s = split(&d, &spec).unwrap();
        let mut seen = BTreeSet::new();
        let mut total = 0;
        for shard in &s.teacher_indices {
            prop_assert!(!shard.is_empty());
            total += shard.len();
            seen.extend(shard.iter().copied());
        }
        let sizes: Vec<usize> = s.teacher_indices.iter().map(Vec::len).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
        total += s.public_indices.len() + s.test_indices.len();
        seen.extend(s.public_indices.iter().copied());
        seen.extend(s.test_indices.iter().copied());
        prop_assert_eq!(total, n);
        prop_assert_eq!(seen.len(), n);
        prop_assert_eq!(s.public.len(), public);
        for (shard, idx) in s.teachers.iter().zip(&s.teacher_indices) {
            for (sample, &i) in shard.samples().iter().zip(idx) {
                prop_assert_eq!(sample, &d.samples()[i]);
            }
        }
    }
}
