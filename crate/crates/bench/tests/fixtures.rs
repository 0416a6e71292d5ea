use vfmax_bench::{cascade, kakeya};

#[test]
fn fixtures_are_nonempty() {
    for n in 3..=5 {
        let fx = kakeya(n).unwrap();
        assert!(!fx.fam.is_empty());
        assert!(!fx.f.is_zero());
    }
    let fx = cascade(6, 4).unwrap();
    assert!(!fx.fam.is_empty());
    fx.choice().unwrap();
}
