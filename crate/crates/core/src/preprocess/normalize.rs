use super::{Image, NormalizedImage, CHANNELS};

/// Which extremes Eq.-style min-max scaling uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormalizeMode {
    /// One min/max pooled over all channels.
    #[default]
    Global,
    PerChannel,
}

/// Global min-max rescaling of every sample into `[new_min, new_max]`.
pub fn minmax_normalize(img: &Image, new_min: f64, new_max: f64) -> NormalizedImage {
    minmax_normalize_with(img, new_min, new_max, NormalizeMode::Global)
}

/// A constant source (max = min) maps every sample to `new_min`.
pub fn minmax_normalize_with(
    img: &Image,
    new_min: f64,
    new_max: f64,
    mode: NormalizeMode,
) -> NormalizedImage {
    assert!(new_max > new_min, "normalization range must be increasing");
    let px = img.pixels();
    let extremes: [(u8, u8); CHANNELS] = match mode {
        NormalizeMode::Global => {
            let lo = *px.iter().min().expect("non-empty image");
            let hi = *px.iter().max().expect("non-empty image");
            [(lo, hi); CHANNELS]
        }
        NormalizeMode::PerChannel => {
            let mut e = [(u8::MAX, u8::MIN); CHANNELS];
            for (i, &v) in px.iter().enumerate() {
                let (lo, hi) = &mut e[i % CHANNELS];
                *lo = (*lo).min(v);
                *hi = (*hi).max(v);
            }
            e
        }
    };
    let span = new_max - new_min;
    let samples = px
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = extremes[i % CHANNELS];
            if hi == lo {
                new_min
            } else if v == hi {
                new_max
            } else {
                let t = f64::from(v - lo) / f64::from(hi - lo);
                (new_min + t * span).clamp(new_min, new_max)
            }
        })
        .collect();
    NormalizedImage::new(img.width(), img.height(), samples).expect("same shape as source")
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn extremes_and_midpoint() {
        let img = Image::new(1, 3, vec![0, 128, 255, 10, 20, 30, 40, 50, 60]).unwrap();
        let n = minmax_normalize(&img, 0.0, 1.0);
        assert_eq!(n.samples()[0], 0.0);
        assert_eq!(n.samples()[2], 1.0);
        assert_abs_diff_eq!(n.samples()[1], 0.501961, epsilon = 1e-6);
        assert_eq!(n.samples()[1], 128.0 / 255.0);
    }

    #[test]
    fn odd_range_extremes_exact() {
        let img = Image::new(1, 1, vec![3, 9, 200]).unwrap();
        let n = minmax_normalize(&img, -0.3, 0.7);
        assert_eq!(n.samples()[0], -0.3);
        assert_eq!(n.samples()[2], 0.7);
    }

    #[test]
    fn constant_image_maps_to_new_min() {
        let img = Image::filled(4, 4, [9, 9, 9]).unwrap();
        let n = minmax_normalize(&img, -1.0, 1.0);
        assert!(n.samples().iter().all(|&s| s == -1.0));
    }

    #[test]
    fn per_channel_mode() {
        let img = Image::new(2, 1, vec![10, 0, 5, 20, 100, 5]).unwrap();
        let n = minmax_normalize_with(&img, 0.0, 1.0, NormalizeMode::PerChannel);
        assert_eq!(n.samples(), &[0.0, 0.0, 0.0, 1.0, 1.0, 0.0]);
        let g = minmax_normalize(&img, 0.0, 1.0);
        assert_eq!(g.samples()[0], 0.1);
    }

    proptest! {
        #[test]
        fn monotone_and_bounded(px in prop::collection::vec(any::<u8>(), 3..60), lo in -5.0f64..5.0, span in 0.01f64..10.0) {
            let n = px.len() / 3 * 3;
            let img = Image::new(n / 3, 1, px[..n].to_vec()).unwrap();
            let out = minmax_normalize(&img, lo, lo + span);
            let s = out.samples();
            for i in 0..n {
                prop_assert!(s[i] >= lo && s[i] <= lo + span);
                for j in 0..n {
                    if img.pixels()[i] <= img.pixels()[j] {
                        prop_assert!(s[i] <= s[j]);
                    }
                }
            }
        }
    }
}
