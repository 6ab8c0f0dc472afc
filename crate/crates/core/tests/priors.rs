use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tensorinfo::{Error, Prior, PriorDescriptor, PriorKind};

fn atom_set(p: &Prior) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = p.atoms().iter().map(|a| (a.location, a.weight)).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

#[test]
fn builtin_families() {
    let r = Prior::rademacher();
    assert_eq!(atom_set(&r), vec![(-1.0, 0.5), (1.0, 0.5)]);
    assert_eq!(r.second_moment(), 1.0);

    let g = Prior::gaussian(1.0).unwrap();
    assert_eq!(g.kind(), PriorKind::Gaussian);
    assert_eq!(g.second_moment(), 1.0);
    assert_eq!(Prior::gaussian(2.5).unwrap().second_moment(), 2.5);

    let s = Prior::sparse_rademacher(0.5).unwrap();
    let a = atom_set(&s);
    let r2 = 2f64.sqrt();
    assert_eq!(a.len(), 3);
    assert!((a[0].0 + r2).abs() < 1e-15 && (a[0].1 - 0.25).abs() < 1e-15);
    assert!(a[1].0 == 0.0 && (a[1].1 - 0.5).abs() < 1e-15);
    assert!((a[2].0 - r2).abs() < 1e-15 && (a[2].1 - 0.25).abs() < 1e-15);
    assert!((s.second_moment() - 1.0).abs() < 1e-12);

    assert_eq!(Prior::discrete(&[(0.0, 1.0)]).unwrap().second_moment(), 0.0);
}

#[test]
fn point_masses_and_support() {
    let three = Prior::discrete(&[(3.0, 1.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..100 {
        assert_eq!(three.sample(&mut rng), 3.0);
        let x = Prior::rademacher().sample(&mut rng);
        assert!(x == 1.0 || x == -1.0);
    }
}

#[test]
fn gaussian_sampling_is_reproducible() {
    let g = Prior::gaussian(1.0).unwrap();
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..16).map(|_| g.sample(&mut rng)).collect::<Vec<_>>()
    };
    assert_eq!(draw(11), draw(11));
    assert_ne!(draw(11), draw(12));
}

#[test]
fn shorthand_forms() {
    assert_eq!(Prior::parse("rademacher").unwrap(), Prior::rademacher());
    assert_eq!(Prior::parse("gaussian:2").unwrap(), Prior::gaussian(2.0).unwrap());
    assert_eq!(
        Prior::parse("sparse_rademacher:0.25").unwrap(),
        Prior::sparse_rademacher(0.25).unwrap()
    );
    let inline = Prior::parse(r#"{"kind":"discrete","atoms":[[-1,0.5],[1,0.5]]}"#).unwrap();
    assert_eq!(inline, Prior::rademacher());

    let dir = std::env::temp_dir().join(format!("tensorinfo-prior-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("p.json");
    std::fs::write(&path, r#"{"kind":"sparse_rademacher","s":0.5}"#).unwrap();
    let from_file = Prior::parse(&format!("file:{}", path.display())).unwrap();
    assert_eq!(from_file, Prior::sparse_rademacher(0.5).unwrap());
    std::fs::remove_dir_all(&dir).ok();
}

#[test]
fn parse_errors() {
    match Prior::parse("file:does/not/exist.json") {
        Err(Error::Io { path, .. }) => assert!(path.ends_with("exist.json")),
        other => panic!("expected an I/O error, got {other:?}"),
    }
    assert!(matches!(Prior::parse("laplace"), Err(Error::InvalidPrior { .. })));
    assert!(matches!(Prior::parse("gaussian:abc"), Err(Error::InvalidPrior { .. })));
    assert!(matches!(Prior::parse("gaussian:-1"), Err(Error::InvalidPrior { .. })));
    assert!(matches!(Prior::parse("sparse_rademacher:1.5"), Err(Error::InvalidPrior { .. })));
    assert!(matches!(Prior::parse("{\"kind\":"), Err(Error::Json { .. })));
    assert!(Prior::discrete(&[(1.0, 0.5), (2.0, 0.4)]).is_err());
    assert!(Prior::discrete(&[(1.0, -0.5), (2.0, 1.5)]).is_err());
    assert!(Prior::discrete(&[(2e3, 1.0)]).is_err());
}

#[test]
fn descriptor_round_trip() {
    for p in [
        Prior::rademacher(),
        Prior::gaussian(0.7).unwrap(),
        Prior::sparse_rademacher(0.3).unwrap(),
        Prior::discrete(&[(-2.0, 0.25), (0.5, 0.75)]).unwrap(),
    ] {
        let text = serde_json::to_string(&p.descriptor()).unwrap();
        let back: PriorDescriptor = serde_json::from_str(&text).unwrap();
        let q = Prior::from_descriptor(&back).unwrap();
        assert_eq!(q.kind(), p.kind());
        assert!((q.second_moment() - p.second_moment()).abs() < 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig { failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn sparse_rademacher_has_unit_second_moment(s in 0.01f64..=1.0) {
        let p = Prior::sparse_rademacher(s).unwrap();
        prop_assert!((p.second_moment() - 1.0).abs() <= 1e-12);
        prop_assert!(p.mean().abs() <= 1e-15);
        prop_assert!(p.is_symmetric());
    }

    #[test]
    fn discrete_moments_match_atoms(
        xs in prop::collection::vec(-50.0f64..50.0, 1..8),
        ws in prop::collection::vec(0.01f64..1.0, 8),
    ) {
        let tot: f64 = ws[..xs.len()].iter().sum();
        let pairs: Vec<(f64, f64)> = xs.iter().zip(&ws).map(|(&x, &w)| (x, w / tot)).collect();
        let p = Prior::discrete(&pairs).unwrap();
        let m2: f64 = pairs.iter().map(|(x, w)| w * x * x).sum();
        prop_assert!((p.second_moment() - m2).abs() <= 1e-12 * m2.max(1.0));
        prop_assert!(p.atoms().iter().all(|a| a.location.abs() <= p.support_bound()));
        prop_assert!(p.support_bound() <= 1e3);
    }

    #[test]
    fn equal_seeds_give_equal_streams(seed in any::<u64>(), s in 0.05f64..1.0) {
        let p = Prior::sparse_rademacher(s).unwrap();
        let mut a = ChaCha8Rng::seed_from_u64(seed);
        let mut b = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..32 {
            prop_assert_eq!(p.sample(&mut a), p.sample(&mut b));
        }
    }
}
