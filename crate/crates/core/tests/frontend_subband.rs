mod common;

use proptest::prelude::*;
use subband_spoof::frontend::{Frontend, Spectrogram, Trimmer, Waveform};
use subband_spoof::subband::{crop, split, SubbandPlan};

const PLANS: [usize; 4] = [1, 2, 4, 8];

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn any_length_yields_fixed_shape(len in 1usize..70_000, seed in any::<u64>(), zeros in 0usize..2_000) {
        use rand::RngExt;
        let mut r = common::rng(seed);
        let mut samples = vec![0.0; zeros];
        samples.extend((0..len).map(|_| r.random_range(-0.5..0.5)));
        samples.extend(vec![0.0; zeros]);
        for trim in [Trimmer::None, Trimmer::Zeros] {
            let s = Frontend::new(trim).features(Waveform::new("u", samples.clone())).unwrap();
            prop_assert_eq!(s.shape(), (300, 257));
            prop_assert!(s.as_slice().iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn split_concat_is_bit_exact(seed in any::<u64>(), frames in 1usize..40) {
        let s = common::random_spectrogram(&mut common::rng(seed), frames, 257);
        for n in PLANS {
            let plan = SubbandPlan::new(n).unwrap();
            let parts = split(&s, &plan).unwrap();
            prop_assert_eq!(parts.len(), n);
            let refs: Vec<&Spectrogram> = parts.iter().map(|p| &p.values).collect();
            let back = Spectrogram::hconcat(&refs).unwrap();
            prop_assert_eq!(back.as_slice(), s.as_slice());
        }
    }

    #[test]
    fn editing_one_bin_changes_only_its_band(seed in any::<u64>(), bin in 0usize..257, frame in 0usize..8) {
        let s = common::random_spectrogram(&mut common::rng(seed), 8, 257);
        let mut edited = s.clone();
        edited.set(frame, bin, s.get(frame, bin) + 1.0);
        for n in PLANS {
            let plan = SubbandPlan::new(n).unwrap();
            let owner = plan.band_of_bin(bin).unwrap();
            for b in 0..n {
                let same = crop(&s, &plan, b).unwrap().values == crop(&edited, &plan, b).unwrap().values;
                prop_assert_eq!(same, b != owner, "band {} of {}", b, n);
            }
        }
    }

    #[test]
    fn band_bins_partition_the_spectrum(n_idx in 0usize..4) {
        let plan = SubbandPlan::new(PLANS[n_idx]).unwrap();
        let mut covered = vec![0u32; 257];
        for b in 0..plan.n() {
            let (o, w) = (plan.offset(b).unwrap(), plan.width(b).unwrap());
            for c in &mut covered[o..o + w] {
                *c += 1;
            }
        }
        prop_assert!(covered.iter().all(|&c| c == 1));
    }
}

#[test]
fn split_widths_are_fixed() {
    let widths = |n| SubbandPlan::new(n).unwrap().widths().to_vec();
    assert_eq!(widths(1), vec![257]);
    assert_eq!(widths(2), vec![128, 129]);
    assert_eq!(widths(4), vec![64, 64, 64, 65]);
    assert_eq!(widths(8), vec![32, 32, 32, 32, 32, 32, 32, 33]);
    for n in [0, 3, 5, 16] {
        assert!(SubbandPlan::new(n).is_err());
    }
}
