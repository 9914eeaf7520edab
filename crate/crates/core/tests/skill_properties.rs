//! Randomized skill suites: resolution equivariance and blend containment.

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use selfvla_core::testing::{check_blend_containment, check_resolve_equivariance, random_pose, random_skill};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn random_skills_are_valid(seed in any::<u64>()) {
        let skill = random_skill(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert!(skill.validate().is_ok(), "{:?}", skill.validate());
    }

    #[test]
    fn resolve_is_equivariant(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skill = random_skill(&mut rng);
        let trigger = random_pose(&mut rng, 0.3);
        let g = random_pose(&mut rng, 0.3);
        let r = check_resolve_equivariance(&skill, &trigger, &g);
        prop_assert!(r.is_ok(), "{:?}", r);
    }

    #[test]
    fn blend_stays_inside_radius(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let skill = random_skill(&mut rng);
        let trigger = random_pose(&mut rng, 0.3);
        let r = check_blend_containment(&skill, &trigger);
        prop_assert!(r.is_ok(), "{:?}", r);
    }
}
