//! Per-cell seed derivation.

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// The splitmix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `h_0 = splitmix64(master)`, `h_{k+1} = splitmix64(h_k ^ splitmix64(c_k))`.
pub fn cell_seed(master: u64, coords: &[u64]) -> u64 {
    coords
        .iter()
        .fold(splitmix64(master), |h, &c| splitmix64(h ^ splitmix64(c)))
}

/// Stream tags so one cell can draw independent streams.
pub mod stream {
    pub const TRAIN: u64 = 0;
    pub const TEST: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const PAIRS: u64 = 3;
    pub const WEIGHTS: u64 = 4;
    pub const DIRECTION: u64 = 5;
    pub const SMALL_BALL: u64 = 6;
    pub const MOMENT: u64 = 7;
}
