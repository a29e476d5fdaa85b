//! Centered binary frequency masks.
//!
//! `beta` is the fraction of each axis the mask covers: a bin at centered
//! offset `(du, dv)` is selected when `|du| <= beta*H/2` and
//! `|dv| <= beta*W/2`, so `beta = 1` covers the whole spectrum and the DC
//! bin is selected for every positive `beta`. Because the selection rule
//! depends only on the absolute centered offsets, the mask is symmetric
//! under frequency negation and never breaks Hermitian symmetry; for even
//! extents the self-conjugate Nyquist row/column enters only at `beta = 1`.

use super::fft::centered_index;
use super::SpectralError;

/// Binary low-frequency selector in the DC-centered layout.
#[derive(Debug, Clone, PartialEq)]
pub struct FreqMask {
    beta: f64,
    h: usize,
    w: usize,
    ones: Vec<bool>,
}

/// Builds the centered rectangle mask for `beta` in `(0, 1]`.
pub fn make_mask(beta: f64, h: usize, w: usize) -> Result<FreqMask, SpectralError> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(SpectralError::BetaOutOfRange(beta));
    }
    if h == 0 || w == 0 {
        return Err(SpectralError::EmptyExtent { what: "mask" });
    }
    let r_h = (beta * h as f64 / 2.0).floor() as isize;
    let r_w = (beta * w as f64 / 2.0).floor() as isize;
    let (ch, cw) = (h as isize / 2, w as isize / 2);
    let mut ones = vec![false; h * w];
    for u in 0..h as isize {
        for v in 0..w as isize {
            if (u - ch).abs() <= r_h && (v - cw).abs() <= r_w {
                ones[(u * w as isize + v) as usize] = true;
            }
        }
    }
    Ok(FreqMask { beta, h, w, ones })
}

impl FreqMask {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// Centered-layout plane, row-major.
    pub fn ones(&self) -> &[bool] {
        &self.ones
    }

    /// Mask value at raw (unshifted) frequency coordinates.
    pub fn at_raw(&self, u: usize, v: usize) -> bool {
        self.ones[centered_index(u, v, self.h, self.w)]
    }

    pub fn count_ones(&self) -> usize {
        self.ones.iter().filter(|&&b| b).count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn beta_one_covers_everything() {
        for (h, w) in [(4, 4), (5, 5), (6, 9), (1, 1)] {
            let m = make_mask(1.0, h, w).unwrap();
            assert_eq!(m.count_ones(), h * w, "{h}x{w}");
        }
    }

    #[test]
    fn tiny_beta_keeps_only_dc() {
        // floor(0.01 * 64 / 2) = 0, so the rectangle is the single center bin.
        let m = make_mask(0.01, 64, 64).unwrap();
        assert_eq!(m.count_ones(), 1);
        assert!(m.at_raw(0, 0), "DC bin is the survivor");
    }

    #[test]
    fn dc_always_selected() {
        for beta in [0.01, 0.2, 0.5, 0.77, 1.0] {
            for (h, w) in [(4, 4), (5, 7), (64, 64), (3, 8)] {
                assert!(make_mask(beta, h, w).unwrap().at_raw(0, 0));
            }
        }
    }

    #[test]
    fn count_matches_closed_form() {
        for beta in [0.05, 0.1, 0.33, 0.5, 0.74, 0.99, 1.0] {
            for (h, w) in [(8, 8), (7, 5), (16, 9), (64, 64)] {
                let m = make_mask(beta, h, w).unwrap();
                let per = |n: usize| {
                    let r = (beta * n as f64 / 2.0).floor() as usize;
                    (2 * r + 1).min(n)
                };
                assert_eq!(m.count_ones(), per(h) * per(w), "beta={beta} {h}x{w}");
            }
        }
    }

    #[test]
    fn symmetric_under_frequency_negation() {
        for beta in [0.13, 0.5, 0.9, 1.0] {
            for (h, w) in [(8, 8), (5, 6), (7, 7), (4, 9)] {
                let m = make_mask(beta, h, w).unwrap();
                for u in 0..h {
                    for v in 0..w {
                        assert_eq!(
                            m.at_raw(u, v),
                            m.at_raw((h - u) % h, (w - v) % w),
                            "beta={beta} {h}x{w} at ({u},{v})"
                        );
                    }
                }
            }
        }
    }

    #[test]
    fn nyquist_bins_enter_only_at_full_coverage() {
        // For even H the raw row u = H/2 is self-conjugate; it must be
        // excluded for every beta < 1.
        let h = 8;
        for beta in [0.5, 0.9, 0.99] {
            let m = make_mask(beta, h, h).unwrap();
            assert!(!m.at_raw(h / 2, 0), "beta={beta}");
            assert!(!m.at_raw(0, h / 2), "beta={beta}");
        }
        assert!(make_mask(1.0, h, h).unwrap().at_raw(h / 2, 0));
    }

    #[test]
    fn rejects_beta_outside_domain() {
        for beta in [0.0, -0.3, 1.0001, f64::NAN] {
            assert!(matches!(
                make_mask(beta, 8, 8),
                Err(SpectralError::BetaOutOfRange(_))
            ));
        }
    }

    #[test]
    fn masks_nest_as_beta_grows() {
        let mut prev = make_mask(0.01, 16, 16).unwrap();
        for i in 2..=100 {
            let beta = i as f64 / 100.0;
            let cur = make_mask(beta, 16, 16).unwrap();
            for (p, c) in prev.ones().iter().zip(cur.ones()) {
                assert!(!p | c, "mask at beta={beta} must contain its predecessors");
            }
            prev = cur;
        }
    }
}
