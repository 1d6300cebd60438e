use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::ImageTensor;

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

fn union(parent: &mut [usize], a: usize, b: usize) {
    let (ra, rb) = (find(parent, a), find(parent, b));
    if ra != rb {
        // Smaller index wins so roots are stable across runs.
        let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
        parent[hi] = lo;
    }
}

/// Flips every 8-connected region of `target` smaller than `a_min` pixels.
fn flip_small(plane: &mut [bool], h: usize, w: usize, target: bool, a_min: usize) {
    let mut parent: Vec<usize> = (0..plane.len()).collect();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if plane[p] != target {
                continue;
            }
            // Already-visited neighbours: W, NW, N, NE.
            if x > 0 && plane[p - 1] == target {
                union(&mut parent, p, p - 1);
            }
            if y > 0 {
                let up = p - w;
                if plane[up] == target {
                    union(&mut parent, p, up);
                }
                if x > 0 && plane[up - 1] == target {
                    union(&mut parent, p, up - 1);
                }
                if x + 1 < w && plane[up + 1] == target {
                    union(&mut parent, p, up + 1);
                }
            }
        }
    }
    let mut area = vec![0usize; plane.len()];
    let roots: Vec<usize> = (0..plane.len()).map(|p| find(&mut parent, p)).collect();
    for (p, &r) in roots.iter().enumerate() {
        if plane[p] == target {
            area[r] += 1;
        }
    }
    for (p, &r) in roots.iter().enumerate() {
        if plane[p] == target && area[r] < a_min {
            plane[p] = !target;
        }
    }
}

/// Removes small regions from a binary image, per channel: first every
/// 1-valued 8-connected component with fewer than `a_min` pixels becomes 0,
/// then every 0-valued component of that result with fewer than `a_min`
/// pixels becomes 1.
pub fn morph_filter<T: Scalar>(binary: &ImageTensor<T>, a_min: usize) -> Result<ImageTensor<T>> {
    if let Some((index, &value)) = binary
        .data()
        .iter()
        .enumerate()
        .find(|(_, &v)| v != T::zero() && v != T::one())
    {
        return Err(Error::NonBinary {
            index,
            value: value.as_f64(),
        });
    }
    let (h, w) = (binary.height(), binary.width());
    let mut out = binary.clone();
    for c in 0..binary.channels() {
        let mut plane: Vec<bool> = binary.channel(c).iter().map(|&v| v == T::one()).collect();
        flip_small(&mut plane, h, w, true, a_min);
        flip_small(&mut plane, h, w, false, a_min);
        for (dst, on) in out.channel_mut(c).iter_mut().zip(plane) {
            *dst = if on { T::one() } else { T::zero() };
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::VecDeque;

    /// Breadth-first flood fill: returns components of `value` as pixel lists.
    fn components(plane: &[u8], h: usize, w: usize, value: u8) -> Vec<Vec<usize>> {
        let mut seen = vec![false; plane.len()];
        let mut comps = Vec::new();
        for start in 0..plane.len() {
            if seen[start] || plane[start] != value {
                continue;
            }
            let mut comp = Vec::new();
            let mut queue = VecDeque::from([start]);
            seen[start] = true;
            while let Some(p) = queue.pop_front() {
                comp.push(p);
                let (y, x) = ((p / w) as i64, (p % w) as i64);
                for dy in -1..=1 {
                    for dx in -1..=1 {
                        let (ny, nx) = (y + dy, x + dx);
                        if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                            continue;
                        }
                        let q = (ny as usize) * w + nx as usize;
                        if !seen[q] && plane[q] == value {
                            seen[q] = true;
                            queue.push_back(q);
                        }
                    }
                }
            }
            comps.push(comp);
        }
        comps
    }

    fn oracle(plane: &[u8], h: usize, w: usize, a_min: usize) -> Vec<u8> {
        let mut out = plane.to_vec();
        for value in [1u8, 0] {
            for comp in components(&out.clone(), h, w, value) {
                if comp.len() < a_min {
                    for p in comp {
                        out[p] = 1 - value;
                    }
                }
            }
        }
        out
    }

    fn from_bits(h: usize, w: usize, bits: &[u8]) -> ImageTensor<f32> {
        ImageTensor::new(h, w, 1, bits.iter().map(|&b| b as f32).collect()).unwrap()
    }

    #[test]
    fn isolated_pixel_removed() {
        let mut bits = vec![0u8; 25];
        bits[12] = 1;
        let out = morph_filter(&from_bits(5, 5, &bits), 10).unwrap();
        assert!(out.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn component_of_exactly_a_min_is_kept() {
        // 2x5 block of ones = 10 pixels.
        let (h, w) = (6, 8);
        let mut bits = vec![0u8; h * w];
        for y in 2..4 {
            for x in 1..6 {
                bits[y * w + x] = 1;
            }
        }
        let img = from_bits(h, w, &bits);
        assert_eq!(morph_filter(&img, 10).unwrap(), img);
        // One more pixel required: now it goes.
        assert!(morph_filter(&img, 11)
            .unwrap()
            .data()
            .iter()
            .all(|&v| v == 0.0));
    }

    #[test]
    fn diagonal_neighbours_connect() {
        let (h, w) = (4, 4);
        let bits = [1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1, 0, 0, 0, 0, 1];
        let img = from_bits(h, w, &bits);
        assert_eq!(morph_filter(&img, 4).unwrap(), img);
    }

    #[test]
    fn small_holes_are_filled() {
        let (h, w) = (6, 6);
        let mut bits = vec![1u8; h * w];
        bits[14] = 0;
        let out = morph_filter(&from_bits(h, w, &bits), 3).unwrap();
        assert!(out.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn rejects_non_binary() {
        let img = ImageTensor::<f32>::new(1, 2, 1, vec![0.0, 0.5]).unwrap();
        assert!(matches!(
            morph_filter(&img, 2),
            Err(Error::NonBinary { index: 1, .. })
        ));
    }

    #[test]
    fn matches_flood_fill_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..100 {
            let (h, w) = (32, 32);
            let density = rng.random_range(0.1..0.9);
            let bits: Vec<u8> = (0..h * w).map(|_| rng.random_bool(density) as u8).collect();
            let a_min = [1, 3, 10, 25][trial % 4];
            let got = morph_filter(&from_bits(h, w, &bits), a_min).unwrap();
            let want = oracle(&bits, h, w, a_min);
            let got: Vec<u8> = got.data().iter().map(|&v| v as u8).collect();
            assert_eq!(got, want, "trial {trial}");
        }
    }
}
