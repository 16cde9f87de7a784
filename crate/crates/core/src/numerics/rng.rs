use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Named random streams split from one run seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Stream {
    Data,
    NoiseZ,
    CaEpsilon,
    Init,
    Dropout,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Self::Data => 1,
            Self::NoiseZ => 2,
            Self::CaEpsilon => 3,
            Self::Init => 4,
            Self::Dropout => 5,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RngStreams {
    seed: u64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self, s: Stream) -> ChaCha8Rng {
        self.substream(s, 0)
    }

    /// Independent generator for `(stream, index)`, e.g. one per epoch.
    pub fn substream(&self, s: Stream, index: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(splitmix(self.seed ^ splitmix(index)));
        rng.set_stream(s.id());
        rng
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let r = RngStreams::new(17);
        let a: u64 = r.stream(Stream::Data).random();
        let b: u64 = r.stream(Stream::Data).random();
        let c: u64 = r.stream(Stream::Init).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(r.substream(Stream::Data, 1).random::<u64>(), a);
    }
}
