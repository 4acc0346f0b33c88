use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Element type for tensors.
///
/// Gradient checks run at `f64` (central finite differences are unreliable
/// at single precision); training runs at `f32`. Everything downstream is
/// generic over this trait so both precisions share one code path.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// One standard-normal draw. Generic callers must route all sampling
    /// through this so a given rng stream yields the same draw count
    /// regardless of precision.
    fn std_normal(rng: &mut ChaCha8Rng) -> Self;

    /// One uniform draw in [0, 1).
    fn unit_uniform(rng: &mut ChaCha8Rng) -> Self;
}

impl Real for f32 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }

    #[inline]
    fn std_normal(rng: &mut ChaCha8Rng) -> Self {
        // Drawn at f64 and narrowed so f32/f64 runs consume the stream
        // identically and see the same sequence of values.
        let v: f64 = StandardNormal.sample(rng);
        v as f32
    }

    #[inline]
    fn unit_uniform(rng: &mut ChaCha8Rng) -> Self {
        rand::Rng::random::<f64>(rng) as f32
    }
}

impl Real for f64 {
    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }

    #[inline]
    fn std_normal(rng: &mut ChaCha8Rng) -> Self {
        StandardNormal.sample(rng)
    }

    #[inline]
    fn unit_uniform(rng: &mut ChaCha8Rng) -> Self {
        rand::Rng::random::<f64>(rng)
    }
}
